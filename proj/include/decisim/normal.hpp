#pragma once

namespace decisim::normal {

double pdf(double x);
double cdf(double x);
/// Upper tail 1 - cdf(x), accurate for large x.
double sf(double x);
/// Inverse of cdf for p in (0, 1).
double quantile(double p);

}  // namespace decisim::normal
