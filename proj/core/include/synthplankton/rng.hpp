#pragma once

#include <cstdint>
#include <initializer_list>
#include <optional>
#include <random>
#include <string_view>

namespace synthplankton {

using Rng = std::mt19937_64;

/// splitmix64 finalizer. Used to decorrelate derived seeds.
std::uint64_t mix64(std::uint64_t x);

/// Derives an independent stream seed from a base seed and a list of tags,
/// e.g. derive_seed(seed, {epoch}) or derive_seed(seed, {iteration, 1}).
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags);

/// Stable 64-bit FNV-1a hash, used for fingerprints and checksums.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL);

/// Value of SYNTHPLANKTON_SEED when set and parseable.
std::optional<std::uint64_t> seed_override_from_env();

}  // namespace synthplankton
