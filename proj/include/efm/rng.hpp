#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace efm {

/// Engine used everywhere. mt19937_64 output is fixed by the C++ standard, and
/// all distributions are taken from Boost.Random so that draws are identical
/// across standard libraries.
using Rng = std::mt19937_64;

/// One round of the splitmix64 finalizer.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derives a child seed by folding each path element into the parent with
/// splitmix64: h0 = splitmix64(seed), h_{k+1} = splitmix64(h_k ^ path_k).
constexpr std::uint64_t child_seed(std::uint64_t seed,
                                   std::initializer_list<std::uint64_t> path) noexcept {
  std::uint64_t h = splitmix64(seed);
  for (auto v : path) h = splitmix64(h ^ v);
  return h;
}

/// stable_hash(seed, scenario, rep): splitmix64 fold of the seed, then every
/// byte of the scenario name, then a 0xff separator, then the rep index.
/// Used to derive per-replication seeds in experiments.
constexpr std::uint64_t stable_hash(std::uint64_t seed, std::string_view scenario,
                                    std::uint64_t rep) noexcept {
  std::uint64_t h = splitmix64(seed);
  for (unsigned char c : scenario) h = splitmix64(h ^ c);
  h = splitmix64(h ^ 0xffULL);
  return splitmix64(h ^ rep);
}

// Substream tags for generate_panel.
inline constexpr std::uint64_t kRadiusStream = 0x5241444955530001ULL;
inline constexpr std::uint64_t kDirectionStream = 0x4449524543540002ULL;

} // namespace efm
