#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "rplsyn/schema.hpp"

namespace rplsyn {

struct RegressionSpec {
  std::string response;
  std::vector<std::string> predictors;
  std::vector<std::pair<std::string, std::string>> interactions;
  bool standardize = true;
};

void to_json(nlohmann::json& j, const RegressionSpec& s);
void from_json(const nlohmann::json& j, RegressionSpec& s);
RegressionSpec load_regression_spec(const std::filesystem::path& path);

// Builds the design matrix of a spec. Numeric predictors other than binary
// are centered and scaled with statistics from the reference dataset, so
// every dataset shares one coefficient scale. Categorical predictors expand
// to indicators with the first level dropped. Column 0 is the intercept.
class DesignBuilder {
 public:
  DesignBuilder(const RegressionSpec& spec, const MixedDataset& reference);

  const std::vector<std::string>& names() const noexcept { return names_; }
  Eigen::MatrixXd design(const MixedDataset& ds) const;
  Eigen::VectorXd response(const MixedDataset& ds) const;

 private:
  struct Term {
    std::string column;
    bool categorical = false;
    std::size_t levels = 0;
    double center = 0.0;
    double scale = 1.0;
  };
  std::vector<Eigen::VectorXd> expand(const Term& t, const MixedDataset& ds) const;

  RegressionSpec spec_;
  std::vector<Term> terms_;
  std::vector<std::pair<std::size_t, std::size_t>> interactions_;  // term indices
  std::vector<std::string> names_;
};

struct Coefficient {
  std::string name;
  double estimate = 0.0;  // posterior mean or pooled point
  double sd = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

using CoefficientSummary = std::vector<Coefficient>;

void to_json(nlohmann::json& j, const Coefficient& c);

struct HorseshoeConfig {
  std::size_t iters = 10000;
  std::size_t burn_in = 5000;
  std::uint64_t seed = 0;
  std::optional<double> fixed_tau;  // global scale held fixed when set
};

// Gaussian linear model, flat intercept, horseshoe prior on the remaining
// coefficients through inverse-gamma auxiliaries; Jeffreys prior on sigma2.
// Summaries: posterior mean, sd and equal-tailed 95% interval.
CoefficientSummary fit_horseshoe(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                 const std::vector<std::string>& names, const HorseshoeConfig& config,
                                 std::uint64_t stream = 0);
CoefficientSummary fit_bayes_lm(const MixedDataset& ds, const RegressionSpec& spec,
                                const HorseshoeConfig& config, std::uint64_t stream = 0);

// Combining rules for m >= 2 synthetic fits: q-bar, b = between variance,
// T = u-bar + b/m, interval q-bar +- 1.96 sqrt(T).
struct PooledCoefficient {
  std::string name;
  double q_bar = 0.0;
  double u_bar = 0.0;
  double b = 0.0;
  double T = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

std::vector<PooledCoefficient> pool_synthetic(const std::vector<CoefficientSummary>& fits);

double cio(double l_obs, double u_obs, double l_syn, double u_syn);
double coef_mse(double beta_obs, double sd_obs, double beta_syn);
double aggregated_utility(double cio_bar, double mse_bar, double pmse) noexcept;

// (1/N) sum (p_i - c)^2.
double pmse_from_scores(std::span<const double> scores, double c);
// Main-effects logistic discriminator between the two datasets (synthetic
// labelled 1), fitted by IRLS. Separation triggers a 1e-4 ridge refit.
double pmse(const MixedDataset& confidential, const MixedDataset& synthetic);

struct UtilityReport {
  std::vector<std::string> coefficients;  // excludes the intercept
  std::vector<double> cio;
  std::vector<double> mse;
  double cio_bar = 0.0;
  double mse_bar = 0.0;
  double pmse_mean = 0.0;
  double U = 0.0;                  // pooled CIO/MSE with the mean pMSE
  std::vector<double> pmse_each;   // per synthetic dataset
  std::vector<double> U_each;      // per synthetic dataset, single-fit intervals
  double U_bar = 0.0;
  CoefficientSummary observed;
  std::vector<PooledCoefficient> pooled;
};

void to_json(nlohmann::json& j, const UtilityReport& r);

UtilityReport evaluate_utility(const MixedDataset& confidential, const std::vector<MixedDataset>& synthetic,
                               const RegressionSpec& spec, const HorseshoeConfig& config,
                               std::size_t workers = 1);

}  // namespace rplsyn
