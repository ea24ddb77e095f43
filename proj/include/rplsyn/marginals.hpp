#pragma once

#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rplsyn/schema.hpp"

namespace rplsyn {

// Plug-in marginal CDF for a non-categorical column, rescaled by n/(n+1) so
// that Phi^{-1}(F(v)) stays finite.
//
// Discrete kinds (binary/ordinal/count) use the empirical CDF over the sorted
// unique support. Continuous columns use a Gaussian-kernel smoothed CDF with
// Silverman's bandwidth; its inverse is clamped to the observed range.
class MarginalEstimator {
 public:
  MarginalEstimator() = default;

  static MarginalEstimator fit(std::span<const double> values, Kind kind);

  Kind kind() const noexcept { return kind_; }
  bool discrete() const noexcept { return kind_ != Kind::Continuous || degenerate_; }
  std::size_t sample_size() const noexcept { return n_; }
  double bandwidth() const noexcept { return bandwidth_; }
  double min() const noexcept { return lo_; }
  double max() const noexcept { return hi_; }
  // Discrete support (unique values) and matching rescaled CDF values.
  const std::vector<double>& support() const noexcept { return support_; }
  const std::vector<double>& cumulative() const noexcept { return cumulative_; }

  double cdf(double v) const;
  // Generalized inverse: smallest support value v with F(v) >= u.
  double inverse(double u) const;

  friend void to_json(nlohmann::json& j, const MarginalEstimator& m);
  friend void from_json(const nlohmann::json& j, MarginalEstimator& m);

 private:
  double kernel_cdf(double x) const;  // un-rescaled
  double kernel_pdf(double x) const;

  Kind kind_ = Kind::Count;
  std::size_t n_ = 0;
  bool degenerate_ = false;
  double lo_ = 0.0;
  double hi_ = 0.0;
  std::vector<double> support_;
  std::vector<double> cumulative_;
  // Continuous only.
  std::vector<double> sample_;  // sorted
  double bandwidth_ = 0.0;
  std::vector<double> grid_x_;
  std::vector<double> grid_f_;
};

MarginalEstimator fit_marginal(std::span<const double> column, const VariableKind& kind);
inline double inverse_cdf(const MarginalEstimator& est, double u) { return est.inverse(u); }

// Empirical level frequencies for every categorical column, concatenated in
// layout order.
struct CategoricalProbTable {
  std::vector<std::string> names;
  std::vector<std::vector<double>> probs;

  bool empty() const noexcept { return probs.empty(); }
  std::vector<double> flat() const;
  friend bool operator==(const CategoricalProbTable&, const CategoricalProbTable&) = default;
};

void to_json(nlohmann::json& j, const CategoricalProbTable& t);
void from_json(const nlohmann::json& j, CategoricalProbTable& t);

CategoricalProbTable fit_categorical_probs(const MixedDataset& ds);

}  // namespace rplsyn
