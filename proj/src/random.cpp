#include "rplsyn/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "rplsyn/normal.hpp"

namespace rplsyn {

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, Stream tag, std::uint64_t index,
                          std::uint64_t sub) noexcept {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ static_cast<std::uint64_t>(tag));
  h = splitmix64(h ^ index);
  return splitmix64(h ^ (sub * 0xD1B54A32D192ED03ULL));
}

Rng make_rng(std::uint64_t seed, Stream tag, std::uint64_t index, std::uint64_t sub) {
  return Rng(derive_seed(seed, tag, index, sub));
}

double uniform01(Rng& rng) {
  // 53 random bits, shifted off zero.
  constexpr double scale = 1.0 / 9007199254740992.0;
  return (static_cast<double>(rng() >> 11) + 0.5) * scale;
}

double std_normal(Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  return dist(rng);
}

double gamma_rate(Rng& rng, double shape, double rate) {
  std::gamma_distribution<double> dist(shape, 1.0 / rate);
  return dist(rng);
}

double exponential(Rng& rng, double rate) { return -std::log(uniform01(rng)) / rate; }

namespace {

// Draw from N(0,1) restricted to (a, b) with a >= kTailCutoff.
double upper_tail(Rng& rng, double a, double b) {
  if (b - a < 1.0 / a) {
    // Narrow interval: uniform proposal, density ratio exp((a^2 - x^2)/2) <= 1.
    for (;;) {
      const double x = a + (b - a) * uniform01(rng);
      if (std::log(uniform01(rng)) <= 0.5 * (a * a - x * x)) return x;
    }
  }
  // Robert (1995) translated-exponential proposal.
  const double lambda = 0.5 * (a + std::sqrt(a * a + 4.0));
  for (;;) {
    const double x = a + exponential(rng, lambda);
    if (x >= b) continue;
    const double d = x - lambda;
    if (std::log(uniform01(rng)) <= -0.5 * d * d) return x;
  }
}

double clamp_open(double x, double a, double b) {
  if (x > a && x < b) return x;
  if (std::isfinite(a) && std::isfinite(b)) {
    const double mid = 0.5 * (a + b);
    if (mid > a && mid < b) return mid;
    return x < a ? std::nextafter(a, b) : std::nextafter(b, a);
  }
  if (std::isfinite(a)) return std::nextafter(a, INFINITY);
  return std::nextafter(b, -INFINITY);
}

}  // namespace

double truncated_std_normal(Rng& rng, double a, double b) {
  if (!(a < b)) {
    // Degenerate (numerically collapsed) interval.
    return a;
  }
  if (a >= kTailCutoff) return upper_tail(rng, a, b);
  if (b <= -kTailCutoff) return -upper_tail(rng, -b, -a);
  if (a == -INFINITY && b == INFINITY) return std_normal(rng);

  double x;
  if (a > 0.0) {
    const double sa = norm_ccdf(a);
    const double sb = norm_ccdf(b);
    const double u = sb + (sa - sb) * uniform01(rng);
    x = -norm_quantile(u);
  } else if (b < 0.0) {
    const double sa = norm_ccdf(-b);
    const double sb = norm_ccdf(-a);
    const double u = sa + (sb - sa) * uniform01(rng);
    x = norm_quantile(u);
  } else {
    const double pa = norm_cdf(a);
    const double pb = norm_cdf(b);
    const double u = pa + (pb - pa) * uniform01(rng);
    x = norm_quantile(u);
  }
  return clamp_open(x, a, b);
}

double truncated_normal(Rng& rng, double mean, double sd, double lower, double upper) {
  const double a = (lower - mean) / sd;
  const double b = (upper - mean) / sd;
  const double x = mean + sd * truncated_std_normal(rng, a, b);
  return clamp_open(x, lower, upper);
}

}  // namespace rplsyn
