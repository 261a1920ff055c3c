#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace hjblab {

/// Engine used for every Brownian increment and every sampled probe.
using Rng = std::mt19937_64;

std::uint64_t splitmix64(std::uint64_t z);
std::uint64_t fnv1a64(std::string_view text);

/// Stable stream seed for (master, label, index).
///
/// Frozen definition, so published runs replay:
///   s = splitmix64(master)
///   s = splitmix64(s ^ fnv1a64(label))
///   s = splitmix64(s ^ index)
/// splitmix64 is a bijection, so distinct indices under one (master, label)
/// never collide.
std::uint64_t derive_seed(std::uint64_t master, std::string_view label, std::uint64_t index);

/// Stream labels shared across modules. Evaluations that must share noise
/// (common random numbers) use the same label and master seed.
namespace streams {
inline constexpr std::string_view paths = "paths";
inline constexpr std::string_view family = "family";
inline constexpr std::string_view challenger = "challenger";
inline constexpr std::string_view probes = "probes";
inline constexpr std::string_view fd = "fd";
inline constexpr std::string_view inner = "inner";
}  // namespace streams

}  // namespace hjblab
