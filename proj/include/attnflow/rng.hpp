#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace attnflow {

using Rng = std::mt19937_64;

/// Derives an independent stream seed from a root seed and a purpose tag:
/// splitmix64(root XOR fnv1a64(tag)). Every random draw in the project is
/// keyed this way so a run is reproducible from its root seed.
std::uint64_t derive_seed(std::uint64_t root, std::string_view tag);

inline Rng make_rng(std::uint64_t root, std::string_view tag) {
  return Rng(derive_seed(root, tag));
}

}  // namespace attnflow
