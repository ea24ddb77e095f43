#include "rplsyn/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include "rplsyn/error.hpp"

namespace rplsyn {

void to_json(nlohmann::json& j, const FitSettings& s) {
  j = nlohmann::json{{"iters", s.iters},
                     {"burn_in", s.burn_in},
                     {"thin", s.thin},
                     {"factors", s.factors},
                     {"prior", s.prior},
                     {"target_iters", s.target_iters},
                     {"target_burn_in", s.target_burn_in},
                     {"target_thin", s.target_thin},
                     {"trees", s.trees},
                     {"targets", s.targets},
                     {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, FitSettings& s) {
  FitSettings d;
  if (j.contains("preset")) d = fit_preset(j.at("preset").get<std::string>());
  s.iters = j.value("iters", d.iters);
  s.burn_in = j.value("burn_in", d.burn_in);
  s.thin = j.value("thin", d.thin);
  s.factors = j.value("factors", d.factors);
  s.prior = j.contains("prior") ? j.at("prior").get<HyperParams>() : d.prior;
  s.target_iters = j.value("target_iters", d.target_iters);
  s.target_burn_in = j.value("target_burn_in", d.target_burn_in);
  s.target_thin = j.value("target_thin", d.target_thin);
  s.trees = j.value("trees", d.trees);
  s.targets = j.value("targets", d.targets);
  s.seed = j.value("seed", d.seed);
  s.progress_every = j.value("progress_every", d.progress_every);
}

FitSettings fit_preset(std::string_view name) {
  FitSettings s;
  if (name == "paper") return s;
  if (name == "desk") {
    s.iters = 3000;
    s.burn_in = 1800;
    s.thin = 5;
    s.target_iters = 300;
    s.target_burn_in = 100;
    s.target_thin = 5;
    return s;
  }
  throw Error(Errc::InvalidArgument, "unknown fit preset '" + std::string(name) + "' (paper|desk)");
}

std::uint64_t config_hash(const nlohmann::json& config) { return fnv1a(config.dump()); }

namespace {

bool numeric_response_kind(Kind k) { return k == Kind::Ordinal || k == Kind::Count || k == Kind::Continuous; }

}  // namespace

ModelArchive fit_model(const MixedDataset& data, const FitSettings& settings) {
  MixedDataset ds = data;
  for (const auto& name : settings.targets) {
    auto& col = ds.columns[ds.index_of(name)];
    if (!numeric_response_kind(col.schema.type.kind))
      throw Error(Errc::NonNumericResponse, "target '" + name + "' is " +
                                                std::string(to_string(col.schema.type.kind)) +
                                                "; responses must be ordinal, count or continuous");
    col.schema.role = Role::Response;
  }
  ds.validate();
  ModelArchive a;
  a.schema = ds.schema();
  a.schema.validate();
  a.seed = settings.seed;
  a.config = settings;
  a.config_hash = config_hash(a.config);

  std::vector<std::size_t> copula_cols, response_cols;
  for (std::size_t c = 0; c < ds.columns.size(); ++c)
    (ds.columns[c].schema.role == Role::Response ? response_cols : copula_cols).push_back(c);
  if (copula_cols.empty()) throw Error(Errc::InvalidArgument, "no copula-role columns to model");

  ChainConfig chain;
  chain.iters = settings.iters;
  chain.burn_in = settings.burn_in;
  chain.thin = settings.thin;
  chain.k = settings.factors;
  chain.prior = settings.prior;
  chain.seed = settings.seed;
  chain.progress_every = settings.progress_every;
  if (settings.progress_every) chain.progress = [](std::string_view line) { std::cerr << line << '\n'; };
  a.copula = run_chain(ds.select(copula_cols), chain);

  for (auto r : response_cols) {
    std::vector<std::size_t> cols = copula_cols;
    cols.push_back(r);
    TargetConfig tc;
    tc.iters = settings.target_iters;
    tc.burn_in = settings.target_burn_in;
    tc.thin = settings.target_thin;
    tc.trees = settings.trees;
    tc.seed = settings.seed;
    if (settings.progress_every) std::cerr << "fitting target '" << ds.columns[r].schema.name << "'\n";
    a.targets.push_back(fit_target_model(ds.select(cols), ds.columns[r].schema.name, tc));
  }
  return a;
}

std::vector<MixedDataset> synthesize_release(const ModelArchive& archive, const SynthesisPlan& plan,
                                             SynthesisStats* stats) {
  auto copula = synthesize_datasets(archive.copula, plan, stats);
  const std::size_t T = archive.targets.size();
  std::vector<MixedDataset> out;
  out.reserve(copula.size());
  for (std::size_t d = 0; d < copula.size(); ++d) {
    const auto& base = copula[d];
    MixedDataset full;
    full.n = base.n;
    for (const auto& cs : archive.schema.columns) {
      if (cs.role == Role::Copula) {
        full.columns.push_back(base.column(cs.name));
        continue;
      }
      const auto t = static_cast<std::size_t>(
          std::find_if(archive.targets.begin(), archive.targets.end(),
                       [&](const TargetModel& m) { return m.response == cs.name; }) -
          archive.targets.begin());
      if (t == T) throw Error(Errc::SchemaMismatch, "archive has no target model for '" + cs.name + "'");
      const auto values = synthesize_response(archive.targets[t], base, plan.seed,
                                              (plan.first_index + d) * T + t, plan.workers);
      Column col;
      col.schema = cs;
      if (cs.type.is_integer()) {
        col.ints.reserve(values.size());
        for (double v : values) col.ints.push_back(std::llround(v));
      } else {
        col.reals = values;
      }
      full.columns.push_back(std::move(col));
    }
    out.push_back(std::move(full));
  }
  return out;
}

std::string synthetic_file_name(const std::string& stem, std::size_t index) {
  return stem + "_syn_" + std::to_string(index) + ".csv";
}

void write_json(const std::filesystem::path& path, const nlohmann::json& value) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::Io, "cannot write '" + path.string() + "'");
  out << value.dump(2) << '\n';
  if (!out) throw Error(Errc::Io, "failed writing '" + path.string() + "'");
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, "cannot read '" + path.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidArgument, "bad JSON in '" + path.string() + "': " + e.what());
  }
}

std::vector<std::filesystem::path> write_release(const std::filesystem::path& dir, const std::string& stem,
                                                 const std::vector<MixedDataset>& release,
                                                 const nlohmann::json& manifest) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> paths;
  nlohmann::json files = nlohmann::json::array();
  for (std::size_t i = 0; i < release.size(); ++i) {
    const auto name = synthetic_file_name(stem, i + 1);
    write_csv(dir / name, release[i]);
    paths.push_back(dir / name);
    files.push_back(name);
  }
  if (!release.empty()) save_schema(dir / "schema.json", release.front().schema());
  auto m = manifest;
  m["files"] = files;
  write_json(dir / "manifest.json", m);
  return paths;
}

nlohmann::json stamp(nlohmann::json report, std::uint64_t seed, const nlohmann::json& config) {
  report["seed"] = seed;
  report["config_hash"] = config_hash(config);
  return report;
}

void to_json(nlohmann::json& j, const RiskSettings& s) {
  j = nlohmann::json{{"known", s.known},
                     {"target", s.target},
                     {"m", s.grid.m},
                     {"known_counts", s.grid.known_counts},
                     {"epsilon", s.grid.epsilon},
                     {"reps", s.reps}};
}

void from_json(const nlohmann::json& j, RiskSettings& s) {
  RiskSettings d;
  s.known = j.at("known").get<std::vector<std::string>>();
  s.target = j.at("target").get<std::string>();
  s.grid.m = j.value("m", d.grid.m);
  s.grid.known_counts = j.value("known_counts", d.grid.known_counts);
  s.grid.epsilon = j.value("epsilon", d.grid.epsilon);
  s.reps = j.value("reps", d.reps);
}

void from_json(const nlohmann::json& j, RunBundle& b) {
  b.data = j.at("data").get<std::string>();
  b.schema = j.at("schema").get<std::string>();
  b.out_dir = j.at("out_dir").get<std::string>();
  b.stem = j.value("stem", std::string("data"));
  b.seed = j.at("seed").get<std::uint64_t>();
  b.fit = j.contains("fit") ? j.at("fit").get<FitSettings>() : FitSettings{};
  b.fit.seed = b.seed;
  b.m = j.value("m", std::size_t{5});
  b.n_out = j.value("n_out", std::size_t{0});
  b.selection = parse_draw_selection(j.value("selection", std::string("round_robin")));
  b.workers = j.value("workers", std::size_t{1});
  if (j.contains("utility")) {
    const auto& u = j.at("utility");
    b.utility = u.contains("spec") && u.at("spec").is_object() ? u.at("spec").get<RegressionSpec>()
                                                                 : u.get<RegressionSpec>();
    b.horseshoe.iters = u.value("iters", b.horseshoe.iters);
    b.horseshoe.burn_in = u.value("burn_in", b.horseshoe.burn_in);
    if (u.contains("fixed_tau")) b.horseshoe.fixed_tau = u.at("fixed_tau").get<double>();
  }
  b.horseshoe.seed = b.seed;
  if (j.contains("risk")) b.risk = j.at("risk").get<RiskSettings>();
}

RunBundle load_bundle(const std::filesystem::path& path) {
  RunBundle b;
  try {
    b = read_json(path).get<RunBundle>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidArgument, "bad run bundle '" + path.string() + "': " + e.what());
  }
  const auto base = path.parent_path();
  for (auto* p : {&b.data, &b.schema, &b.out_dir})
    if (p->is_relative()) *p = base / *p;
  return b;
}

namespace {

template <class Fn>
auto stage(const char* name, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    throw Error(e.code(), std::string("stage '") + name + "': " + e.what());
  }
}

}  // namespace

RunOutputs end_to_end(const RunBundle& b, const nlohmann::json& bundle_config) {
  RunOutputs out;
  // Output location and parallelism do not change results.
  auto config = bundle_config;
  if (config.is_object()) {
    config.erase("out_dir");
    config.erase("workers");
  }
  const auto data = stage("load", [&] { return load_dataset(b.data, b.schema); });
  std::filesystem::create_directories(b.out_dir);

  const auto archive = stage("fit", [&] { return fit_model(data, b.fit); });
  out.archive = b.out_dir / (b.stem + ".rplsyn");
  stage("fit", [&] {
    save_archive(out.archive, archive);
    return 0;
  });

  SynthesisPlan plan;
  plan.n_out = b.n_out;
  plan.m = b.m;
  plan.seed = b.seed;
  plan.selection = b.selection;
  plan.workers = b.workers;
  const auto release = stage("synth", [&] { return synthesize_release(archive, plan); });
  out.synthetic = stage("synth", [&] {
    return write_release(b.out_dir, b.stem, release,
                         stamp({{"schema_hash", archive.schema_hash()}, {"m", b.m}}, b.seed, config));
  });

  if (b.utility) {
    const auto report = stage("utility", [&] { return evaluate_utility(data, release, *b.utility, b.horseshoe, b.workers); });
    out.utility = b.out_dir / "utility.json";
    write_json(*out.utility, stamp(report, b.seed, config));
  }
  if (b.risk) {
    const auto rows = stage("risk", [&] {
      return risk_study(data, release, b.risk->known, b.risk->target, b.risk->grid, b.risk->reps, b.seed, b.workers);
    });
    out.risk = b.out_dir / "risk.json";
    write_json(*out.risk, stamp({{"rows", rows}, {"settings", *b.risk}}, b.seed, config));
  }
  return out;
}

}  // namespace rplsyn
