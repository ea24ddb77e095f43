#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "rplsyn/marginals.hpp"
#include "rplsyn/random.hpp"
#include "rplsyn/schema.hpp"

namespace rplsyn {

struct HyperParams {
  double a_sigma = 1.0;
  double b_sigma = 1.0;
  double nu = 3.0;
  double a1 = 2.0;
  double a2 = 3.0;
};

void to_json(nlohmann::json& j, const HyperParams& h);
void from_json(const nlohmann::json& j, HyperParams& h);

// ceil(p_star / 2), capped at 15.
std::size_t default_factor_count(std::size_t p_star) noexcept;

// Latent factor model z_i = alpha + Lambda eta_i + eps_i with the
// multiplicative gamma process prior on Lambda.
struct FactorModelState {
  Eigen::MatrixXd Z;           // n x p*
  Eigen::VectorXd alpha;       // p*, zero outside categorical blocks
  Eigen::MatrixXd Lambda;      // p* x k
  Eigen::MatrixXd eta;         // n x k
  Eigen::VectorXd sigma2_inv;  // p*
  Eigen::MatrixXd phi;         // p* x k
  Eigen::VectorXd delta;       // k
  Eigen::VectorXd tau;         // k, tau_h = prod_{l<=h} delta_l

  std::size_t n() const noexcept { return static_cast<std::size_t>(Z.rows()); }
  std::size_t p_star() const noexcept { return static_cast<std::size_t>(Lambda.rows()); }
  std::size_t k() const noexcept { return static_cast<std::size_t>(Lambda.cols()); }
};

struct TruncationBounds {
  std::vector<double> lower;
  std::vector<double> upper;
};

// Strict ordering constraints of one observed column: cells are grouped into
// buckets of equal observed value, buckets sorted ascending. Equal values
// impose no mutual constraint.
class RankOrder {
 public:
  RankOrder() = default;
  explicit RankOrder(std::span<const double> values);

  std::size_t size() const noexcept { return bucket_.size(); }
  std::size_t num_buckets() const noexcept { return members_.size(); }
  std::uint32_t bucket(std::size_t i) const noexcept { return bucket_[i]; }
  const std::vector<std::uint32_t>& members(std::size_t g) const noexcept { return members_[g]; }

  // Phi^{-1} of mid-ranks rescaled by 1/(n+1); ties share a value.
  std::vector<double> initial_latent() const;
  // Bounds recomputed from scratch: max over strictly smaller observed
  // values, min over strictly larger ones.
  TruncationBounds bounds(std::span<const double> z) const;
  bool preserves(std::span<const double> z) const;

  // Visits cells in ascending index order; draw(i, lower, upper) returns the
  // new value of z[i]. Neighbor-bucket extremes are maintained incrementally.
  template <class Draw>
  void sweep(std::span<double> z, Draw&& draw) const;

 private:
  std::vector<std::uint32_t> bucket_;
  std::vector<std::vector<std::uint32_t>> members_;
};

// Constraint set E = D u D' in expanded coordinates.
class LatentConstraints {
 public:
  LatentConstraints(const MixedDataset& ds, const ExpandedLayout& layout);

  std::size_t n() const noexcept { return n_; }
  std::size_t p_star() const noexcept { return layout_.p_star; }
  const ExpandedLayout& layout() const noexcept { return layout_; }
  bool is_indicator(std::size_t j) const noexcept { return layout_.is_categorical(j); }
  // Indicator columns: observed level flag per row.
  bool positive(std::size_t i, std::size_t j) const noexcept { return indicator_[j][i] != 0; }
  const RankOrder& rank(std::size_t j) const noexcept { return rank_[j]; }

  TruncationBounds bounds(const Eigen::MatrixXd& Z, std::size_t j) const;
  bool feasible(const Eigen::MatrixXd& Z) const;

 private:
  std::size_t n_ = 0;
  ExpandedLayout layout_;
  std::vector<std::vector<std::uint8_t>> indicator_;  // by expanded column
  std::vector<RankOrder> rank_;                       // by expanded column
};

TruncationBounds compute_bounds(const MixedDataset& ds, const ExpandedLayout& layout,
                                const Eigen::MatrixXd& Z, std::size_t j);

FactorModelState init_state(const MixedDataset& ds, const ExpandedLayout& layout, std::size_t k,
                            const HyperParams& prior, std::uint64_t seed);
FactorModelState init_state(const LatentConstraints& constraints, std::size_t k,
                            const HyperParams& prior, Rng& rng);

struct SweepOptions {
  bool update_loadings = true;  // false keeps Lambda fixed
  bool update_latent = true;
};

// One pass of the three blocks: factor parameters, categorical intercepts,
// then every latent cell column by column.
void gibbs_sweep(FactorModelState& state, const LatentConstraints& constraints,
                 const HyperParams& prior, Rng& rng, const SweepOptions& options = {});

// Full conditionals, exposed for unit testing against brute-force oracles.
namespace conditional {

Eigen::VectorXd loading_row(const Eigen::MatrixXd& eta, const Eigen::MatrixXd& eta_gram,
                            const Eigen::Ref<const Eigen::VectorXd>& centered_z,
                            double sigma2_inv, const Eigen::Ref<const Eigen::VectorXd>& prior_prec,
                            Rng& rng);
double residual_precision(double a_sigma, double b_sigma, std::size_t n, double rss, Rng& rng);
// Draws every row of eta given the centered latent matrix (Z - 1 alpha').
Eigen::MatrixXd factor_scores(const Eigen::MatrixXd& Lambda, const Eigen::VectorXd& sigma2_inv,
                              const Eigen::MatrixXd& centered_z, Rng& rng);
double local_scale(double nu, double tau_h, double lambda_jh, Rng& rng);
// Updates delta in place (h = 1..k sequentially) and refreshes tau.
void global_multipliers(Eigen::VectorXd& delta, Eigen::VectorXd& tau, const Eigen::MatrixXd& phi,
                        const Eigen::MatrixXd& Lambda, double a1, double a2, Rng& rng);
double intercept(std::size_t n, double sigma2_inv, double residual_sum, Rng& rng);

}  // namespace conditional

// One retained draw on the correlation scale.
struct PosteriorDraw {
  Eigen::MatrixXd C;
  Eigen::VectorXd alpha_tilde;
};

PosteriorDraw correlation_scale(const FactorModelState& state);

struct PosteriorDraws {
  Schema schema;  // columns modeled by the copula
  ExpandedLayout layout;
  std::vector<PosteriorDraw> draws;
  // Per schema column; empty for categorical columns.
  std::vector<std::optional<MarginalEstimator>> marginals;
  CategoricalProbTable probs;
  std::size_t n_fit = 0;
};

PosteriorDraw posterior_mean(const PosteriorDraws& draws);

struct ChainConfig {
  std::size_t iters = 15000;
  std::size_t burn_in = 9000;
  std::size_t thin = 10;
  std::size_t k = 0;  // 0 selects default_factor_count
  HyperParams prior;
  std::uint64_t seed = 0;
  std::size_t progress_every = 0;  // 0 disables progress lines
  std::function<void(std::string_view)> progress;
  std::function<void(std::size_t, const FactorModelState&)> on_iteration;
};

PosteriorDraws run_chain(const MixedDataset& ds, const ChainConfig& config);

// Level probabilities of a categorical block under N(alpha, C) restricted to
// the union of diagonal orthants, by Monte Carlo.
std::vector<double> orthant_level_probabilities(const Eigen::MatrixXd& C_block,
                                                const Eigen::VectorXd& alpha_block,
                                                std::size_t draws, Rng& rng);

// ---------------------------------------------------------------- template

template <class Draw>
void RankOrder::sweep(std::span<double> z, Draw&& draw) const {
  const std::size_t G = members_.size();
  std::vector<double> lo(G), hi(G);
  for (std::size_t g = 0; g < G; ++g) {
    double mn = std::numeric_limits<double>::infinity();
    double mx = -std::numeric_limits<double>::infinity();
    for (auto i : members_[g]) {
      mn = std::min(mn, z[i]);
      mx = std::max(mx, z[i]);
    }
    lo[g] = mn;
    hi[g] = mx;
  }
  constexpr double inf = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < bucket_.size(); ++i) {
    const std::size_t g = bucket_[i];
    const double lower = g > 0 ? hi[g - 1] : -inf;
    const double upper = g + 1 < G ? lo[g + 1] : inf;
    const double old = z[i];
    const double fresh = draw(i, lower, upper);
    z[i] = fresh;
    if (fresh > hi[g]) {
      hi[g] = fresh;
    } else if (old == hi[g] && fresh < old) {
      double mx = -inf;
      for (auto m : members_[g]) mx = std::max(mx, z[m]);
      hi[g] = mx;
    }
    if (fresh < lo[g]) {
      lo[g] = fresh;
    } else if (old == lo[g] && fresh > old) {
      double mn = inf;
      for (auto m : members_[g]) mn = std::min(mn, z[m]);
      lo[g] = mn;
    }
  }
}

}  // namespace rplsyn
