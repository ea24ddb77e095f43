#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "rplsyn/factor_model.hpp"

namespace rplsyn {

enum class DrawSelection { RoundRobin, Random };

std::string_view to_string(DrawSelection s) noexcept;
DrawSelection parse_draw_selection(std::string_view text);

struct SynthesisPlan {
  std::size_t n_out = 0;  // 0 means the fitted sample size
  std::size_t m = 1;
  std::uint64_t seed = 0;
  DrawSelection selection = DrawSelection::RoundRobin;
  std::size_t workers = 1;
  std::size_t first_index = 0;  // dataset index of the first output, for substreams
};

// One level index per categorical variable, drawn independently from p-hat.
std::vector<std::size_t> draw_categoricals(const CategoricalProbTable& probs, Rng& rng);

// Coordinate-wise Gibbs sampler for N(alpha, C) restricted to a sign
// pattern. Precomputes the precision so repeated draws under one (C, alpha)
// cost O(d^2) per sweep.
class TruncatedBlockSampler {
 public:
  static constexpr std::size_t kWarmup = 50;
  static constexpr std::size_t kSweeps = 50;

  TruncatedBlockSampler() = default;
  TruncatedBlockSampler(const Eigen::MatrixXd& C, const Eigen::VectorXd& alpha);

  std::size_t dim() const noexcept { return static_cast<std::size_t>(alpha_.size()); }
  // positive[j] selects (0, inf) for coordinate j, (-inf, 0) otherwise.
  Eigen::VectorXd sample(const std::vector<bool>& positive, Rng& rng,
                         std::size_t warmup = kWarmup, std::size_t sweeps = kSweeps) const;

 private:
  Eigen::VectorXd alpha_;
  Eigen::MatrixXd precision_;
  Eigen::VectorXd cond_sd_;
};

// Sign pattern of a categorical assignment: positive on each block's chosen
// level, negative elsewhere in the block.
std::vector<bool> assignment_signs(std::span<const std::size_t> widths,
                                   std::span<const std::size_t> assignment);

// z-tilde for the categorical block given an assignment. C and alpha are the
// categorical sub-block; widths are the per-variable level counts.
Eigen::VectorXd sample_truncated_block(const Eigen::MatrixXd& C, const Eigen::VectorXd& alpha,
                                       std::span<const std::size_t> widths,
                                       std::span<const std::size_t> assignment, Rng& rng);

struct ConditionalGaussian {
  Eigen::VectorXd alpha_star;
  Eigen::MatrixXd C_star;
};

// Moments of the coordinates outside `given` conditional on z[given] = z_given:
// alpha_rest + C_rg C_gg^{-1} (z_given - alpha_given) and the Schur complement.
ConditionalGaussian conditional_moments(const Eigen::MatrixXd& C, const Eigen::VectorXd& alpha,
                                        std::span<const std::size_t> given,
                                        const Eigen::VectorXd& z_given);

struct SyntheticRecord {
  std::vector<double> values;  // per copula column; categoricals hold level indices
  Eigen::VectorXd latent;      // expanded latent vector
};

struct SynthesisStats {
  std::size_t records = 0;
  std::size_t orthant_resamples = 0;
  std::size_t multi_classified = 0;  // decoded latent disagreeing with one-hot validity
};

// Per-draw cached factorizations for posterior-predictive synthesis.
class CopulaSynthesizer {
 public:
  explicit CopulaSynthesizer(const PosteriorDraws& draws);

  const PosteriorDraws& draws() const noexcept { return *draws_; }
  std::size_t num_draws() const noexcept { return cache_.size(); }

  // Stats are accumulated into `stats` when non-null.
  SyntheticRecord record(std::size_t draw, Rng& rng, SynthesisStats* stats = nullptr) const;

  // Dataset `index` (substream) of n_out records.
  MixedDataset dataset(std::size_t n_out, std::uint64_t seed, std::size_t index,
                       DrawSelection selection, std::size_t workers,
                       SynthesisStats* stats = nullptr) const;

 private:
  struct DrawCache {
    TruncatedBlockSampler block;
    Eigen::VectorXd alpha_cat;
    Eigen::VectorXd alpha_rest;
    Eigen::MatrixXd gain;      // C_rc C_cc^{-1}
    Eigen::MatrixXd chol_rest; // lower Cholesky factor of C*
  };

  const PosteriorDraws* draws_;
  std::vector<std::size_t> cat_cols_;   // expanded indices
  std::vector<std::size_t> rest_cols_;  // expanded indices
  std::vector<std::size_t> widths_;
  std::vector<DrawCache> cache_;
};

std::vector<MixedDataset> synthesize_datasets(const PosteriorDraws& draws, const SynthesisPlan& plan,
                                              SynthesisStats* stats = nullptr);

}  // namespace rplsyn
