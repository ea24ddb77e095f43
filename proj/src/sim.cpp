#include "rplsyn/sim.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <numeric>

#include "rplsyn/error.hpp"
#include "rplsyn/factor_model.hpp"
#include "rplsyn/synthesizer.hpp"

namespace rplsyn {

void SimDesign::validate() const {
  if (n == 0) throw Error(Errc::InvalidArgument, "simulation n must be >= 1");
  if (p_levels.size() < 2) throw Error(Errc::InvalidArgument, "simulation needs at least two levels");
  if (p_levels.size() != rates.size())
    throw Error(Errc::InvalidArgument, "p_levels and rates must have equal length");
  double total = 0.0;
  for (double p : p_levels) {
    if (!(p > 0.0)) throw Error(Errc::InvalidArgument, "level probabilities must be positive");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) throw Error(Errc::InvalidArgument, "level probabilities must sum to 1");
  for (double r : rates)
    if (!(r > 0.0)) throw Error(Errc::InvalidArgument, "Poisson rates must be positive");
  if (n_reps == 0) throw Error(Errc::InvalidArgument, "n_reps must be >= 1");
}

void to_json(nlohmann::json& j, const SimDesign& d) {
  j = nlohmann::json{{"n", d.n}, {"p_levels", d.p_levels}, {"rates", d.rates}, {"n_reps", d.n_reps}, {"seed", d.seed}};
}

void from_json(const nlohmann::json& j, SimDesign& d) {
  SimDesign def;
  d.n = j.value("n", def.n);
  d.p_levels = j.value("p_levels", def.p_levels);
  d.rates = j.value("rates", def.rates);
  d.n_reps = j.value("n_reps", def.n_reps);
  d.seed = j.value("seed", def.seed);
}

void to_json(nlohmann::json& j, const SimMcmc& c) {
  j = nlohmann::json{{"iters", c.iters}, {"burn_in", c.burn_in}, {"thin", c.thin}, {"k", c.k}};
}

void from_json(const nlohmann::json& j, SimMcmc& c) {
  SimMcmc def;
  c.iters = j.value("iters", def.iters);
  c.burn_in = j.value("burn_in", def.burn_in);
  c.thin = j.value("thin", def.thin);
  c.k = j.value("k", def.k);
}

SimPreset sim_preset(std::string_view name) {
  SimPreset p;
  p.name = std::string(name);
  if (name == "paper") return p;
  if (name == "desk") {
    p.design.n = 1000;
    p.design.n_reps = 50;
    p.mcmc.iters = 3000;
    p.mcmc.burn_in = 1800;
    p.mcmc.thin = 5;
    return p;
  }
  throw Error(Errc::InvalidArgument, "unknown simulation preset '" + std::string(name) + "' (paper|desk)");
}

namespace {

std::vector<std::string> level_labels(std::size_t L) {
  std::vector<std::string> out;
  for (std::size_t l = 1; l <= L; ++l) out.push_back(std::to_string(l));
  return out;
}

Column int_column(std::string name, VariableKind kind, std::size_t n) {
  Column c;
  c.schema.name = std::move(name);
  c.schema.type = std::move(kind);
  c.ints.resize(n);
  return c;
}

}  // namespace

MixedDataset generate_sim_data(const SimDesign& design, Rng& rng) {
  design.validate();
  const std::size_t L = design.levels();
  std::vector<double> cum(L);
  std::partial_sum(design.p_levels.begin(), design.p_levels.end(), cum.begin());
  cum.back() = 1.0;

  MixedDataset ds;
  ds.n = design.n;
  ds.columns.push_back(int_column("x1", VariableKind::categorical(level_labels(L)), design.n));
  ds.columns.push_back(int_column("x2", VariableKind::count(), design.n));
  for (std::size_t i = 0; i < design.n; ++i) {
    const double u = uniform01(rng);
    const auto l = static_cast<std::size_t>(std::upper_bound(cum.begin(), cum.end(), u) - cum.begin());
    const std::size_t level = std::min(l, L - 1);
    std::poisson_distribution<std::int64_t> pois(design.rates[level]);
    ds.columns[0].ints[i] = static_cast<std::int64_t>(level);
    ds.columns[1].ints[i] = pois(rng);
  }
  return ds;
}

MixedDataset generate_sim_data(const SimDesign& design) {
  Rng rng = make_rng(design.seed, Stream::Simulation, 0);
  return generate_sim_data(design, rng);
}

void to_json(nlohmann::json& j, const SimResult& r) {
  nlohmann::json means = nlohmann::json::array();
  for (const auto& row : r.group_means) {
    nlohmann::json jr = nlohmann::json::array();
    for (double v : row) jr.push_back(std::isnan(v) ? nlohmann::json() : nlohmann::json(v));
    means.push_back(jr);
  }
  nlohmann::json bands = nlohmann::json::array();
  for (const auto& b : r.bands)
    bands.push_back({{"lower", b.lower}, {"median", b.median}, {"upper", b.upper}, {"covers", b.covers}});
  j = nlohmann::json{{"method", r.method},
                     {"truth", r.truth},
                     {"avg_mse", r.avg_mse},
                     {"se_mse", r.se_mse ? nlohmann::json(*r.se_mse) : nlohmann::json()},
                     {"records", r.records},
                     {"multi_classified", r.multi_classified},
                     {"multi_rate", r.multi_rate},
                     {"bands", bands},
                     {"mse", r.mse},
                     {"group_means", means}};
}

namespace {

double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

std::vector<double> group_means_of(const MixedDataset& ds, std::size_t L) {
  std::vector<double> sum(L, 0.0), cnt(L, 0.0);
  const auto& x1 = ds.column("x1").ints;
  const auto& x2 = ds.column("x2").ints;
  for (std::size_t i = 0; i < ds.n; ++i) {
    const auto l = static_cast<std::size_t>(x1[i]);
    sum[l] += static_cast<double>(x2[i]);
    cnt[l] += 1.0;
  }
  std::vector<double> out(L);
  for (std::size_t l = 0; l < L; ++l) out[l] = cnt[l] > 0 ? sum[l] / cnt[l] : std::numeric_limits<double>::quiet_NaN();
  return out;
}

ChainConfig chain_config(const SimDesign& design, const SimMcmc& mcmc, const SimOptions& options,
                         std::uint64_t study, const MixedDataset& fit_data) {
  const std::size_t p_star = expand_layout(fit_data).p_star;
  ChainConfig c;
  c.iters = mcmc.iters;
  c.burn_in = mcmc.burn_in;
  c.thin = mcmc.thin;
  c.k = mcmc.k ? std::min(mcmc.k, p_star) : p_star;
  c.seed = derive_seed(design.seed, Stream::Simulation, study);
  c.progress_every = options.progress_every;
  if (options.progress_every) c.progress = [](std::string_view line) { std::cerr << line << '\n'; };
  return c;
}

SynthesisPlan plan_for(const SimDesign& design, const SimOptions& options, std::uint64_t study) {
  SynthesisPlan plan;
  plan.n_out = design.n;
  plan.m = design.n_reps;
  plan.seed = derive_seed(design.seed, Stream::Simulation, study);
  plan.workers = options.workers;
  return plan;
}

}  // namespace

void summarize_group_means(SimResult& r, const MixedDataset& confidential, const std::vector<MixedDataset>& decoded) {
  const std::size_t L = confidential.column("x1").schema.type.num_levels();
  r.truth = group_means_of(confidential, L);
  r.group_means.clear();
  r.mse.clear();
  for (const auto& ds : decoded) {
    auto means = group_means_of(ds, L);
    double acc = 0.0;
    std::size_t used = 0;
    for (std::size_t l = 0; l < L; ++l) {
      if (std::isnan(means[l])) continue;
      const double d = means[l] - r.truth[l];
      acc += d * d;
      ++used;
    }
    r.mse.push_back(used ? acc / static_cast<double>(used) : std::numeric_limits<double>::quiet_NaN());
    r.group_means.push_back(std::move(means));
  }
  const double reps = static_cast<double>(r.mse.size());
  r.avg_mse = std::accumulate(r.mse.begin(), r.mse.end(), 0.0) / reps;
  r.se_mse.reset();
  if (r.mse.size() > 1) {
    double ss = 0.0;
    for (double v : r.mse) ss += (v - r.avg_mse) * (v - r.avg_mse);
    r.se_mse = std::sqrt(ss / (reps - 1.0));
  }
  r.bands.assign(L, {});
  for (std::size_t l = 0; l < L; ++l) {
    std::vector<double> col;
    for (const auto& row : r.group_means)
      if (!std::isnan(row[l])) col.push_back(row[l]);
    if (col.empty()) continue;
    auto& b = r.bands[l];
    b.lower = quantile(col, 0.025);
    b.median = quantile(col, 0.5);
    b.upper = quantile(col, 0.975);
    b.covers = b.lower <= r.truth[l] && r.truth[l] <= b.upper;
  }
  r.multi_rate = r.records ? static_cast<double>(r.multi_classified) / static_cast<double>(r.records) : 0.0;
}

SimResult run_rpl_study(const SimDesign& design, const SimMcmc& mcmc, const SimOptions& options) {
  const auto conf = generate_sim_data(design);
  const auto draws = run_chain(conf, chain_config(design, mcmc, options, 1, conf));
  SynthesisStats stats;
  auto syn = synthesize_datasets(draws, plan_for(design, options, 1), &stats);

  SimResult r;
  r.method = "rpl";
  r.records = stats.records;
  r.multi_classified = stats.multi_classified;
  summarize_group_means(r, conf, syn);
  r.posterior_mean = posterior_mean(draws);
  if (options.keep_datasets) r.datasets = std::move(syn);
  return r;
}

SimResult run_rl_workaround_study(const SimDesign& design, const SimMcmc& mcmc, const SimOptions& options) {
  const auto conf = generate_sim_data(design);
  const std::size_t L = design.levels();
  const auto& x1 = conf.columns[0].ints;

  MixedDataset enc;
  enc.n = conf.n;
  for (std::size_t l = 1; l < L; ++l) {
    auto c = int_column("x1_" + std::to_string(l + 1), VariableKind::binary(), conf.n);
    for (std::size_t i = 0; i < conf.n; ++i) c.ints[i] = x1[i] == static_cast<std::int64_t>(l) ? 1 : 0;
    enc.columns.push_back(std::move(c));
  }
  enc.columns.push_back(conf.columns[1]);

  const auto draws = run_chain(enc, chain_config(design, mcmc, options, 2, enc));
  auto syn = synthesize_datasets(draws, plan_for(design, options, 2));

  SimResult r;
  r.method = "rl_onehot";
  std::vector<MixedDataset> decoded;
  decoded.reserve(syn.size());
  for (const auto& s : syn) {
    MixedDataset d;
    d.columns.push_back(int_column("x1", conf.columns[0].schema.type, 0));
    d.columns.push_back(int_column("x2", VariableKind::count(), 0));
    for (std::size_t i = 0; i < s.n; ++i) {
      std::size_t active = 0, level = 0;
      for (std::size_t l = 1; l < L; ++l)
        if (s.columns[l - 1].ints[i] == 1) {
          ++active;
          level = l;
        }
      ++r.records;
      if (active > 1) {
        ++r.multi_classified;
        continue;
      }
      d.columns[0].ints.push_back(static_cast<std::int64_t>(level));
      d.columns[1].ints.push_back(s.columns[L - 1].ints[i]);
    }
    d.n = d.columns[0].ints.size();
    decoded.push_back(std::move(d));
  }
  summarize_group_means(r, conf, decoded);
  if (options.keep_datasets) r.datasets = std::move(decoded);
  return r;
}

SimResult run_rl_ordinal_study(const SimDesign& design, const SimMcmc& mcmc, const SimOptions& options) {
  const auto conf = generate_sim_data(design);
  MixedDataset enc = conf;
  enc.columns[0].schema.type = VariableKind::ordinal();
  for (auto& v : enc.columns[0].ints) v += 1;

  const auto draws = run_chain(enc, chain_config(design, mcmc, options, 3, enc));
  auto syn = synthesize_datasets(draws, plan_for(design, options, 3));

  SimResult r;
  r.method = "rl_ordinal";
  for (auto& s : syn) {
    s.columns[0].schema.type = conf.columns[0].schema.type;
    for (auto& v : s.columns[0].ints) v -= 1;
    r.records += s.n;
  }
  summarize_group_means(r, conf, syn);
  if (options.keep_datasets) r.datasets = std::move(syn);
  return r;
}

void to_json(nlohmann::json& j, const SimReport& r) {
  j = nlohmann::json{{"design", r.design},
                     {"mcmc", r.mcmc},
                     {"rpl", r.rpl},
                     {"rl_onehot", r.rl_onehot},
                     {"rl_ordinal", r.rl_ordinal}};
}

SimReport run_simulation(const SimDesign& design, const SimMcmc& mcmc, const SimOptions& options) {
  SimReport rep;
  rep.design = design;
  rep.mcmc = mcmc;
  rep.rpl = run_rpl_study(design, mcmc, options);
  rep.rl_onehot = run_rl_workaround_study(design, mcmc, options);
  rep.rl_ordinal = run_rl_ordinal_study(design, mcmc, options);
  return rep;
}

}  // namespace rplsyn
