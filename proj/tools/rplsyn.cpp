#include <algorithm>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rplsyn/error.hpp"
#include "rplsyn/pipeline.hpp"
#include "rplsyn/sim.hpp"

namespace fs = std::filesystem;
using namespace rplsyn;

namespace {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Directories expand to the files listed in their manifest.json, else to
// their *.csv files in name order.
std::vector<fs::path> expand_inputs(const std::vector<std::string>& inputs) {
  std::vector<fs::path> out;
  for (const auto& in : inputs) {
    const fs::path p(in);
    if (!fs::is_directory(p)) {
      out.push_back(p);
      continue;
    }
    if (fs::exists(p / "manifest.json")) {
      for (const auto& f : read_json(p / "manifest.json").at("files")) out.push_back(p / f.get<std::string>());
      continue;
    }
    std::vector<fs::path> csv;
    for (const auto& e : fs::directory_iterator(p))
      if (e.path().extension() == ".csv") csv.push_back(e.path());
    std::sort(csv.begin(), csv.end());
    out.insert(out.end(), csv.begin(), csv.end());
  }
  if (out.empty()) throw ConfigError("no synthetic datasets found");
  return out;
}

std::vector<MixedDataset> load_all(const std::vector<fs::path>& paths, const Schema& schema) {
  std::vector<MixedDataset> out;
  for (const auto& p : paths) out.push_back(load_dataset(p, schema));
  return out;
}

// Explicit --schema, else the schema.json written next to a synthetic release.
Schema resolve_schema(const std::string& explicit_path, const std::vector<std::string>& inputs) {
  if (!explicit_path.empty()) return load_schema(explicit_path);
  for (const auto& in : inputs) {
    const fs::path dir = fs::is_directory(in) ? fs::path(in) : fs::path(in).parent_path();
    if (fs::exists(dir / "schema.json")) return load_schema(dir / "schema.json");
  }
  throw ConfigError("--schema is required when no schema.json accompanies the synthetic datasets");
}

void require_preset(const std::string& name) {
  if (name != "paper" && name != "desk") throw ConfigError("unknown preset '" + name + "' (paper|desk)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rank-probit Gaussian copula synthesizer"};
  app.set_config("--config", "", "TOML/INI file with option defaults");
  app.require_subcommand(1);
  std::size_t workers = 1;
  app.add_option("--workers", workers, "Worker threads (0 = all cores)");

  // fit
  auto* fit = app.add_subcommand("fit", "Fit the copula and target models; write a model archive");
  std::string fit_data, fit_schema, fit_out, fit_preset_name = "paper";
  FitSettings fs_;
  std::vector<std::string> fit_targets;
  fit->add_option("--data", fit_data, "Confidential CSV")->required();
  fit->add_option("--schema", fit_schema, "Schema JSON")->required();
  fit->add_option("--out", fit_out, "Archive path")->required();
  fit->add_option("--seed", fs_.seed, "Master seed")->required();
  fit->add_option("--preset", fit_preset_name, "paper|desk run lengths");
  auto* o_iters = fit->add_option("--iters", fs_.iters, "Copula iterations");
  auto* o_burn = fit->add_option("--burn-in", fs_.burn_in, "Copula burn-in");
  auto* o_thin = fit->add_option("--thin", fs_.thin, "Copula thinning");
  fit->add_option("--factors", fs_.factors, "Latent factors (0 = default)");
  auto* o_titers = fit->add_option("--target-iters", fs_.target_iters, "Target iterations");
  auto* o_tburn = fit->add_option("--target-burn-in", fs_.target_burn_in, "Target burn-in");
  auto* o_tthin = fit->add_option("--target-thin", fs_.target_thin, "Target thinning");
  fit->add_option("--trees", fs_.trees, "Trees per ensemble");
  fit->add_option("--targets", fit_targets, "Response columns for targeted synthesis")->delimiter(',');
  fit->add_option("--progress", fs_.progress_every, "Progress line every N iterations (0 = off)");

  // synth
  auto* syn = app.add_subcommand("synth", "Draw synthetic datasets from a model archive");
  std::string syn_model, syn_out, syn_stem = "data", syn_sel = "round_robin";
  SynthesisPlan plan;
  syn->add_option("--model", syn_model, "Model archive")->required();
  syn->add_option("--out-dir", syn_out, "Output directory")->required();
  syn->add_option("--stem", syn_stem, "File name stem");
  syn->add_option("--seed", plan.seed, "Master seed")->required();
  syn->add_option("-m,--m", plan.m, "Number of synthetic datasets");
  syn->add_option("-n,--n", plan.n_out, "Records per dataset (0 = fitted n)");
  syn->add_option("--selection", syn_sel, "round_robin|random");

  // utility
  auto* uti = app.add_subcommand("utility", "Regression and pMSE utility of a synthetic release");
  std::string u_conf, u_schema, u_spec, u_out;
  std::vector<std::string> u_syn;
  HorseshoeConfig hs;
  uti->add_option("--confidential,--conf", u_conf, "Confidential CSV")->required();
  uti->add_option("--schema", u_schema, "Schema JSON");
  uti->add_option("--synthetic,--syn", u_syn, "Synthetic CSVs or release directories")->required();
  uti->add_option("--spec", u_spec, "Regression spec JSON")->required();
  uti->add_option("--out", u_out, "Report JSON")->required();
  uti->add_option("--seed", hs.seed, "Master seed");
  uti->add_option("--iters", hs.iters, "Horseshoe iterations");
  uti->add_option("--burn-in", hs.burn_in, "Horseshoe burn-in");

  // risk
  auto* rsk = app.add_subcommand("risk", "CMAP attribute-disclosure risk of a synthetic pool");
  std::string r_conf, r_schema, r_out;
  std::vector<std::string> r_pool;
  RiskSettings rs;
  std::uint64_t r_seed = 0;
  rsk->add_option("--confidential,--conf", r_conf, "Confidential CSV")->required();
  rsk->add_option("--schema", r_schema, "Schema JSON");
  rsk->add_option("--pool", r_pool, "Synthetic CSVs or directories to draw releases from")->required();
  rsk->add_option("--known", rs.known, "Adversary's known columns, in prefix order")->delimiter(',')->required();
  rsk->add_option("--target", rs.target, "Attribute to disclose")->required();
  rsk->add_option("--m", rs.grid.m, "Release sizes")->delimiter(',');
  rsk->add_option("--known-counts", rs.grid.known_counts, "Known-column prefix lengths")->delimiter(',');
  rsk->add_option("--epsilon,--eps", rs.grid.epsilon, "Integer slack values")->delimiter(',');
  rsk->add_option("--reps", rs.reps, "Bootstrap releases per m");
  rsk->add_option("--seed", r_seed, "Master seed");
  rsk->add_option("--out", r_out, "Report JSON")->required();

  // simulate
  auto* sim = app.add_subcommand("simulate", "Multinomial/Poisson simulation study");
  std::string s_preset = "desk", s_out, s_keep;
  std::uint64_t s_seed = 0;
  std::size_t s_reps = 0, s_n = 0, s_iters = 0, s_burn = 0, s_progress = 0;
  sim->add_option("--preset", s_preset, "paper|desk");
  sim->add_option("--seed", s_seed, "Master seed")->required();
  sim->add_option("--out", s_out, "Result JSON")->required();
  sim->add_option("--keep-datasets", s_keep, "Directory for decoded synthetic datasets");
  sim->add_option("--reps", s_reps, "Override synthetic reps");
  sim->add_option("--n", s_n, "Override sample size");
  sim->add_option("--iters", s_iters, "Override MCMC iterations");
  sim->add_option("--burn-in", s_burn, "Override burn-in");
  sim->add_option("--progress", s_progress, "Progress line every N iterations (0 = off)");

  // run
  auto* run = app.add_subcommand("run", "Fit, synthesize and evaluate from one JSON bundle");
  std::string bundle_path;
  run->add_option("--bundle", bundle_path, "Run bundle JSON")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*fit) {
      require_preset(fit_preset_name);
      const auto base = fit_preset(fit_preset_name);
      if (!*o_iters) fs_.iters = base.iters;
      if (!*o_burn) fs_.burn_in = base.burn_in;
      if (!*o_thin) fs_.thin = base.thin;
      if (!*o_titers) fs_.target_iters = base.target_iters;
      if (!*o_tburn) fs_.target_burn_in = base.target_burn_in;
      if (!*o_tthin) fs_.target_thin = base.target_thin;
      if (fs_.burn_in >= fs_.iters) throw ConfigError("--burn-in must be below --iters");
      fs_.targets = fit_targets;
      const auto data = load_dataset(fit_data, fit_schema);
      const auto archive = fit_model(data, fs_);
      save_archive(fit_out, archive);
      std::cerr << "wrote " << fit_out << " (" << archive.copula.draws.size() << " draws, "
                << archive.targets.size() << " targets)\n";
    } else if (*syn) {
      try {
        plan.selection = parse_draw_selection(syn_sel);
      } catch (const Error& e) {
        throw ConfigError(e.what());
      }
      plan.workers = workers;
      const auto archive = load_archive(syn_model);
      const auto release = synthesize_release(archive, plan);
      nlohmann::json config{{"model_config_hash", archive.config_hash},
                            {"m", plan.m},
                            {"n_out", plan.n_out},
                            {"selection", syn_sel}};
      write_release(syn_out, syn_stem, release,
                    stamp({{"schema_hash", archive.schema_hash()}, {"config", config}}, plan.seed, config));
      std::cerr << "wrote " << release.size() << " datasets to " << syn_out << '\n';
    } else if (*uti) {
      const auto schema = resolve_schema(u_schema, u_syn);
      const auto conf = load_dataset(u_conf, schema);
      const auto spec = load_regression_spec(u_spec);
      const auto synthetic = load_all(expand_inputs(u_syn), schema);
      const auto report = evaluate_utility(conf, synthetic, spec, hs, workers);
      const nlohmann::json config{{"spec", spec}, {"iters", hs.iters}, {"burn_in", hs.burn_in}, {"m", synthetic.size()}};
      write_json(u_out, stamp(report, hs.seed, config));
    } else if (*rsk) {
      const auto schema = resolve_schema(r_schema, r_pool);
      const auto conf = load_dataset(r_conf, schema);
      const auto pool = load_all(expand_inputs(r_pool), schema);
      const auto rows = risk_study(conf, pool, rs.known, rs.target, rs.grid, rs.reps, r_seed, workers);
      const nlohmann::json config = rs;
      write_json(r_out, stamp({{"rows", rows}, {"settings", config}}, r_seed, config));
    } else if (*sim) {
      require_preset(s_preset);
      auto preset = sim_preset(s_preset);
      preset.design.seed = s_seed;
      if (s_reps) preset.design.n_reps = s_reps;
      if (s_n) preset.design.n = s_n;
      if (s_iters) preset.mcmc.iters = s_iters;
      if (s_burn) preset.mcmc.burn_in = s_burn;
      if (preset.mcmc.burn_in >= preset.mcmc.iters) throw ConfigError("--burn-in must be below --iters");
      SimOptions opt;
      opt.workers = workers;
      opt.keep_datasets = !s_keep.empty();
      opt.progress_every = s_progress;
      auto report = run_simulation(preset.design, preset.mcmc, opt);
      const nlohmann::json config{{"preset", s_preset}, {"design", preset.design}, {"mcmc", preset.mcmc}};
      write_json(s_out, stamp(report, s_seed, config));
      if (opt.keep_datasets) {
        for (const auto* r : {&report.rpl, &report.rl_onehot, &report.rl_ordinal})
          write_release(fs::path(s_keep) / r->method, r->method, r->datasets,
                        stamp({{"method", r->method}}, s_seed, config));
      }
      std::cerr << "rpl avg MSE " << report.rpl.avg_mse << ", rl_onehot avg MSE " << report.rl_onehot.avg_mse
                << " (multi-classified " << report.rl_onehot.multi_rate * 100 << "%)\n";
    } else if (*run) {
      RunBundle bundle;
      nlohmann::json config;
      try {
        config = read_json(bundle_path);
        bundle = load_bundle(bundle_path);
      } catch (const Error& e) {
        throw ConfigError(e.what());
      }
      if (workers != 1) bundle.workers = workers;
      const auto out = end_to_end(bundle, config);
      std::cerr << "wrote " << out.archive << " and " << out.synthetic.size() << " datasets\n";
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
