#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rplsyn/marginals.hpp"
#include "rplsyn/schema.hpp"
#include "rplsyn/tree_ensemble.hpp"

namespace rplsyn {

struct TargetConfig {
  std::size_t iters = 1100;
  std::size_t burn_in = 100;
  std::size_t thin = 10;
  std::size_t trees = 200;
  std::size_t max_cuts = 100;
  BartPrior prior;
  std::uint64_t seed = 0;
  bool verify_each_tree = false;
  // Called after every iteration with the current latent response.
  std::function<void(std::size_t, std::span<const double>, const BartSampler&)> on_iteration;
};

// Posterior summary of a rank-likelihood sum-of-trees fit. Each retained
// ensemble is standardized by the latent mean and sd of its iteration, so
// predictions live on the standard normal scale used by the marginal map.
struct TargetModel {
  std::string response;
  Kind response_kind = Kind::Count;
  std::vector<CovariateInfo> covariates;
  std::vector<std::vector<Tree>> ensembles;
  std::vector<double> shift;
  std::vector<double> scale;
  double sigma_hat = 1.0;
  MarginalEstimator marginal;
  std::size_t n_fit = 0;

  // Posterior mean regression function at one covariate row.
  double predict(const double* x) const;
  std::vector<double> predict(const MixedDataset& ds) const;
};

void to_json(nlohmann::json& j, const TargetModel& m);
void from_json(const nlohmann::json& j, TargetModel& m);

// Covariate descriptors for the given columns (cutpoints from the data).
std::vector<CovariateInfo> describe_covariates(const MixedDataset& ds,
                                               std::span<const std::size_t> columns,
                                               std::size_t max_cuts = 100);
// Row-major matrix of the named covariates; categorical cells hold level
// indices. Throws SchemaMismatch if a covariate is missing or changed kind.
std::vector<double> covariate_matrix(const MixedDataset& ds, const std::vector<CovariateInfo>& covariates);

// Covariates are every column other than the response and other columns
// with the response role.
TargetModel fit_target_model(const MixedDataset& ds, std::string_view response,
                             const TargetConfig& config);

// One synthetic response per record of `covariates`; record i uses substream
// (seed, stream, i).
std::vector<double> synthesize_response(const TargetModel& model, const MixedDataset& covariates,
                                        std::uint64_t seed, std::uint64_t stream,
                                        std::size_t workers = 1);

}  // namespace rplsyn
