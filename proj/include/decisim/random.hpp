#pragma once

// Counter-based random streams.
//
// Every draw is a pure function of (master seed, parameter name, scenario index, draw index):
//
//   mix64(z):  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//              z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//              return z ^ (z >> 31)
//   fnv1a64(s): h = 0xCBF29CE484222325; for byte c in s: h = (h ^ c) * 0x100000001B3
//
//   key      = mix64(mix64(mix64(seed) ^ fnv1a64(name)) ^ scenario)
//   word(k)  = mix64(key + (k + 1) * 0x9E3779B97F4A7C15)        (k = 0, 1, 2, ...)
//   open(k)  = ((word(k) >> 11) + 0.5) * 2^-53                    in (0, 1)
//
// All arithmetic is modulo 2^64. Nothing depends on thread count or byte order.

#include <cstdint>
#include <string_view>

namespace decisim {

constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view s) noexcept {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ULL;
    }
    return h;
}

class RandomStream {
public:
    static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

    constexpr explicit RandomStream(std::uint64_t key) noexcept : key_(key) {}

    constexpr std::uint64_t next_u64() noexcept { return mix64(key_ + (++counter_) * kGolden); }

    /// Uniform on the open interval (0, 1).
    constexpr double next_open01() noexcept {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    constexpr std::uint64_t key() const noexcept { return key_; }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

constexpr std::uint64_t substream_key(std::uint64_t seed, std::string_view name, std::uint64_t scenario) noexcept {
    return mix64(mix64(mix64(seed) ^ fnv1a64(name)) ^ scenario);
}

constexpr RandomStream substream(std::uint64_t seed, std::string_view name, std::uint64_t scenario) noexcept {
    return RandomStream(substream_key(seed, name, scenario));
}

}  // namespace decisim
