#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "rplsyn/factor_model.hpp"
#include "rplsyn/random.hpp"
#include "rplsyn/schema.hpp"

namespace rplsyn {

// x1 ~ Multinomial(p_levels), x2 | x1 = l ~ Poisson(rates[l]).
struct SimDesign {
  std::size_t n = 5000;
  std::vector<double> p_levels{0.10, 0.40, 0.15, 0.20, 0.15};
  std::vector<double> rates{342, 344, 346, 348, 352};
  std::size_t n_reps = 500;
  std::uint64_t seed = 0;

  std::size_t levels() const noexcept { return p_levels.size(); }
  void validate() const;
};

void to_json(nlohmann::json& j, const SimDesign& d);
void from_json(const nlohmann::json& j, SimDesign& d);

struct SimMcmc {
  std::size_t iters = 15000;
  std::size_t burn_in = 9000;
  std::size_t thin = 10;
  std::size_t k = 0;  // 0 means full-rank loadings (k = p*)
};

void to_json(nlohmann::json& j, const SimMcmc& c);
void from_json(const nlohmann::json& j, SimMcmc& c);

struct SimPreset {
  std::string name;
  SimDesign design;
  SimMcmc mcmc;
};

// "paper": n=5000, 15000/9000, 500 reps. "desk": n=1000, 3000/1800, 50 reps.
SimPreset sim_preset(std::string_view name);

// Columns x1 (categorical, levels "1".."L") and x2 (count).
MixedDataset generate_sim_data(const SimDesign& design, Rng& rng);
MixedDataset generate_sim_data(const SimDesign& design);

// Central 95% band of one level's synthetic group means.
struct GroupBand {
  double lower = 0.0;
  double median = 0.0;
  double upper = 0.0;
  bool covers = false;
};

struct SimResult {
  std::string method;
  std::vector<double> truth;                    // confidential group means
  std::vector<std::vector<double>> group_means; // rep x level; NaN if the level is absent
  std::vector<double> mse;                      // per rep
  double avg_mse = 0.0;
  std::optional<double> se_mse;                 // sd of mse across reps
  std::size_t records = 0;
  std::size_t multi_classified = 0;
  double multi_rate = 0.0;
  std::vector<GroupBand> bands;
  std::vector<MixedDataset> datasets;           // decoded (x1, x2) per rep when kept
  std::optional<PosteriorDraw> posterior_mean;  // rpl study only
};

void to_json(nlohmann::json& j, const SimResult& r);

struct SimOptions {
  std::size_t workers = 1;
  bool keep_datasets = false;
  std::size_t progress_every = 0;
};

// Group means, per-rep MSE over levels present, bands and summary moments.
void summarize_group_means(SimResult& result, const MixedDataset& confidential,
                           const std::vector<MixedDataset>& decoded);

SimResult run_rpl_study(const SimDesign& design, const SimMcmc& mcmc, const SimOptions& options = {});
// x1 as k-1 binary indicators (level 1 dropped) under the rank likelihood.
// Zero active indicators decode to level 1; two or more are multiply
// classified and excluded from the group means.
SimResult run_rl_workaround_study(const SimDesign& design, const SimMcmc& mcmc,
                                  const SimOptions& options = {});
// x1 as the ordered integers 1..L under the rank likelihood.
SimResult run_rl_ordinal_study(const SimDesign& design, const SimMcmc& mcmc, const SimOptions& options = {});

struct SimReport {
  SimDesign design;
  SimMcmc mcmc;
  SimResult rpl;
  SimResult rl_onehot;
  SimResult rl_ordinal;
};

void to_json(nlohmann::json& j, const SimReport& r);

SimReport run_simulation(const SimDesign& design, const SimMcmc& mcmc, const SimOptions& options = {});

}  // namespace rplsyn
