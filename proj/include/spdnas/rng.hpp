#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace spdnas {

using Rng = std::mt19937_64;

// Independent generator for a named purpose ("data", "init", "shuffle", ...)
// derived from a run seed. All randomness in the library flows through these.
Rng substream(std::uint64_t seed, std::string_view name);

// splitmix64 finalizer, used to derive substream seeds.
std::uint64_t mix64(std::uint64_t x);

}  // namespace spdnas
