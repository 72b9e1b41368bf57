#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

// Counter-based random streams. Every draw in the project is addressed by a
// 64-bit key derived from (seed, stream tag, indices...), so results never
// depend on call order, thread schedule, or shared mutable state.
namespace vmoe::rng {

// SplitMix64 finalizer (Steele/Lea/Flood).
constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Order-sensitive key combiner: combine(a, b) != combine(b, a).
constexpr std::uint64_t combine(std::uint64_t h, std::uint64_t v) {
    return splitmix64(h ^ (v + 0x9e3779b97f4a7c15ull + (h << 12) + (h >> 4)));
}

constexpr std::uint64_t derive(std::uint64_t key) { return splitmix64(key); }

template <typename... Rest>
constexpr std::uint64_t derive(std::uint64_t key, std::uint64_t v, Rest... rest) {
    return derive(combine(key, v), rest...);
}

constexpr std::uint64_t fnv1a64(std::string_view text) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (char c : text) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ull;
    }
    return h;
}

// Uniform double in [0, 1) from the top 53 bits.
constexpr double unit_double(std::uint64_t r) {
    return static_cast<double>(r >> 11) * 0x1.0p-53;
}

// Uniform double in (0, 1]; safe as a log() argument.
constexpr double unit_double_positive(std::uint64_t r) {
    return (static_cast<double>(r >> 11) + 1.0) * 0x1.0p-53;
}

// Lemire multiply-shift reduction; integer-only bounded draw on [0, n).
constexpr std::uint32_t bounded(std::uint64_t r, std::uint32_t n) {
    return static_cast<std::uint32_t>(
        (static_cast<unsigned __int128>(r) * n) >> 64);
}

// One standard-normal draw addressed purely by key (Box-Muller).
inline double standard_normal(std::uint64_t key) {
    const double u1 = unit_double_positive(splitmix64(key ^ 0x9f4b3c1d5e6a7081ull));
    const double u2 = unit_double(splitmix64(key ^ 0x60d5c8e3a197f24bull));
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
}

inline std::uint64_t double_bits(double v) {
    return std::bit_cast<std::uint64_t>(v);
}

} // namespace vmoe::rng
