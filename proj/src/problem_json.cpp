#include "decisim/problem_json.hpp"

#include <fstream>
#include <limits>

namespace decisim {

namespace json_util {

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

void reject_unknown_keys(const Json& obj, std::initializer_list<const char*> allowed, const std::string& path) {
    if (!obj.is_object()) throw FormatError(path, "expected an object");
    for (const auto& [key, value] : obj.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || key == a;
        if (!ok) throw FormatError(join(path, key), "unknown key");
    }
}

const Json& require(const Json& obj, const char* key, const std::string& path) {
    auto it = obj.find(key);
    if (it == obj.end()) throw FormatError(join(path, key), "missing required key");
    return *it;
}

double require_number(const Json& obj, const char* key, const std::string& path) {
    const Json& v = require(obj, key, path);
    if (!v.is_number()) throw FormatError(join(path, key), "expected a number");
    return v.get<double>();
}

std::string require_string(const Json& obj, const char* key, const std::string& path) {
    const Json& v = require(obj, key, path);
    if (!v.is_string()) throw FormatError(join(path, key), "expected a string");
    return v.get<std::string>();
}

std::int64_t require_integer(const Json& obj, const char* key, const std::string& path) {
    const Json& v = require(obj, key, path);
    if (v.is_number_unsigned()) {
        if (v.get<std::uint64_t>() > static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max()))
            throw FormatError(join(path, key), "integer out of range");
        return static_cast<std::int64_t>(v.get<std::uint64_t>());
    }
    if (!v.is_number_integer()) throw FormatError(join(path, key), "expected an integer");
    return v.get<std::int64_t>();
}

std::uint64_t require_unsigned(const Json& obj, const char* key, const std::string& path) {
    const Json& v = require(obj, key, path);
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(v.get<std::int64_t>());
    throw FormatError(join(path, key), "expected a non-negative integer");
}

}  // namespace json_util

using namespace json_util;

std::string to_string(Direction d) { return d == Direction::Minimize ? "minimize" : "maximize"; }

Json distribution_to_json(const Distribution& dist) {
    return std::visit(
        [](const auto& d) -> Json {
            using T = std::decay_t<decltype(d)>;
            if constexpr (std::is_same_v<T, Fixed>) return {{"type", "fixed"}, {"value", d.value}};
            else if constexpr (std::is_same_v<T, Uniform>) return {{"type", "uniform"}, {"lo", d.lo}, {"hi", d.hi}};
            else if constexpr (std::is_same_v<T, Normal>)
                return {{"type", "normal"}, {"mean", d.mean}, {"stddev", d.stddev}, {"lo", d.lo}, {"hi", d.hi}};
            else return {{"type", "triangular"}, {"lo", d.lo}, {"mode", d.mode}, {"hi", d.hi}};
        },
        dist);
}

Distribution distribution_from_json(const Json& j, const std::string& path) {
    if (!j.is_object()) throw FormatError(path, "expected a distribution object");
    const std::string type = require_string(j, "type", path);
    if (type == "fixed") {
        reject_unknown_keys(j, {"type", "value"}, path);
        return Fixed{require_number(j, "value", path)};
    }
    if (type == "uniform") {
        reject_unknown_keys(j, {"type", "lo", "hi"}, path);
        return Uniform{require_number(j, "lo", path), require_number(j, "hi", path)};
    }
    if (type == "normal") {
        reject_unknown_keys(j, {"type", "mean", "stddev", "lo", "hi"}, path);
        return Normal{require_number(j, "mean", path), require_number(j, "stddev", path),
                      require_number(j, "lo", path), require_number(j, "hi", path)};
    }
    if (type == "triangular") {
        reject_unknown_keys(j, {"type", "lo", "mode", "hi"}, path);
        return Triangular{require_number(j, "lo", path), require_number(j, "mode", path),
                          require_number(j, "hi", path)};
    }
    if (type == "plus_minus") {
        reject_unknown_keys(j, {"type", "value", "spread"}, path);
        return plus_minus(require_number(j, "value", path), require_number(j, "spread", path));
    }
    throw FormatError(join(path, "type"), "unknown distribution type '" + type + "'");
}

namespace {

Json provenance_to_json(const Provenance& p) {
    if (const auto* w = std::get_if<WarehousePrior>(&p)) return {{"prior", w->record_id}};
    return "user";
}

Provenance provenance_from_json(const Json& j, const std::string& path) {
    if (j.is_string() && j.get<std::string>() == "user") return UserSupplied{};
    if (j.is_object()) {
        reject_unknown_keys(j, {"prior"}, path);
        return WarehousePrior{require_string(j, "prior", path)};
    }
    throw FormatError(path, "expected \"user\" or {\"prior\": id}");
}

int require_int32(const Json& obj, const char* key, const std::string& path) {
    const std::int64_t v = require_integer(obj, key, path);
    if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max())
        throw FormatError(join(path, key), "integer out of range");
    return static_cast<int>(v);
}

}  // namespace

Json problem_to_json(const DecisionProblem& problem) {
    Json alts = Json::array();
    for (const Alternative& alt : problem.alternatives) {
        Json bindings = Json::object();
        for (const auto& [key, spec] : alt.bindings) {
            bindings[key] = {{"unit", spec.unit},
                             {"dist", distribution_to_json(spec.distribution)},
                             {"provenance", provenance_to_json(spec.provenance)}};
        }
        alts.push_back({{"name", alt.name}, {"term_months", alt.term_months}, {"bindings", std::move(bindings)}});
    }
    return {{"title", problem.title},
            {"direction", to_string(problem.direction)},
            {"comparison_horizon_months", problem.comparison_horizon_months},
            {"sample_count", problem.sample_count},
            {"seed", problem.seed},
            {"objective", problem.objective.to_source()},
            {"alternatives", std::move(alts)}};
}

DecisionProblem problem_from_json(const Json& j) {
    reject_unknown_keys(j,
                        {"title", "direction", "comparison_horizon_months", "sample_count", "seed", "objective",
                         "alternatives"},
                        "");
    DecisionProblem p;
    p.title = require_string(j, "title", "");
    const std::string dir = require_string(j, "direction", "");
    if (dir == "minimize") p.direction = Direction::Minimize;
    else if (dir == "maximize") p.direction = Direction::Maximize;
    else throw FormatError("direction", "expected \"minimize\" or \"maximize\"");
    p.comparison_horizon_months = require_int32(j, "comparison_horizon_months", "");
    p.sample_count = require_integer(j, "sample_count", "");
    p.seed = require_unsigned(j, "seed", "");

    const std::string source = require_string(j, "objective", "");
    try {
        p.objective = expr::parse(source);
    } catch (const expr::ParseError& e) {
        throw FormatError("objective", e.what());
    }

    const Json& alts = require(j, "alternatives", "");
    if (!alts.is_array()) throw FormatError("alternatives", "expected an array");
    for (std::size_t i = 0; i < alts.size(); ++i) {
        const std::string path = "alternatives[" + std::to_string(i) + "]";
        const Json& a = alts[i];
        reject_unknown_keys(a, {"name", "term_months", "bindings"}, path);
        Alternative alt;
        alt.name = require_string(a, "name", path);
        alt.term_months = require_int32(a, "term_months", path);
        const Json& bindings = require(a, "bindings", path);
        if (!bindings.is_object()) throw FormatError(join(path, "bindings"), "expected an object");
        for (const auto& [key, b] : bindings.items()) {
            const std::string bpath = join(path, "bindings." + key);
            reject_unknown_keys(b, {"unit", "dist", "provenance"}, bpath);
            ParameterSpec spec;
            spec.name = key;
            spec.unit = b.contains("unit") ? require_string(b, "unit", bpath) : std::string{};
            spec.distribution = distribution_from_json(require(b, "dist", bpath), join(bpath, "dist"));
            if (b.contains("provenance")) spec.provenance = provenance_from_json(b["provenance"], join(bpath, "provenance"));
            alt.bindings.emplace(key, std::move(spec));
        }
        p.alternatives.push_back(std::move(alt));
    }
    return p;
}

DecisionProblem load_problem(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw std::runtime_error("cannot open " + file.string());
    Json j;
    try {
        j = Json::parse(in);
    } catch (const Json::parse_error& e) {
        throw FormatError("", file.string() + ": " + e.what());
    }
    return problem_from_json(j);
}

}  // namespace decisim
