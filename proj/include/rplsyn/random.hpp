#pragma once

#include <cstdint>
#include <random>

namespace rplsyn {

using Rng = std::mt19937_64;

// Module tags for substream derivation. Streams are addressed by
// (seed, tag, index) so results never depend on scheduling.
enum class Stream : std::uint64_t {
  Fit = 1,
  Synthesis = 2,
  Target = 3,
  Utility = 4,
  Risk = 5,
  Simulation = 6,
  TargetSynthesis = 7,
};

std::uint64_t splitmix64(std::uint64_t x) noexcept;
std::uint64_t derive_seed(std::uint64_t seed, Stream tag, std::uint64_t index = 0,
                          std::uint64_t sub = 0) noexcept;
Rng make_rng(std::uint64_t seed, Stream tag, std::uint64_t index = 0, std::uint64_t sub = 0);

// Uniform on the open interval (0, 1).
double uniform01(Rng& rng);
double std_normal(Rng& rng);
// Gamma with shape/rate parameterization.
double gamma_rate(Rng& rng, double shape, double rate);
double exponential(Rng& rng, double rate);

// Standard normal restricted to (lower, upper); either bound may be infinite.
// Inverse-CDF inside the body, exponential/uniform rejection once the whole
// interval lies more than kTailCutoff standard deviations out.
inline constexpr double kTailCutoff = 6.0;
double truncated_std_normal(Rng& rng, double lower, double upper);
double truncated_normal(Rng& rng, double mean, double sd, double lower, double upper);

}  // namespace rplsyn
