#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "rplsyn/archive.hpp"
#include "rplsyn/error.hpp"
#include "rplsyn/pipeline.hpp"
#include "rplsyn/sim.hpp"

using namespace rplsyn;
namespace fs = std::filesystem;

namespace {

MixedDataset school_data(std::size_t n, std::uint64_t seed) {
  Schema s;
  s.columns.push_back({"race", VariableKind::categorical({"w", "b", "h"}), Role::Copula});
  s.columns.push_back({"sex", VariableKind::binary(), Role::Copula});
  s.columns.push_back({"age", VariableKind::continuous(), Role::Copula});
  s.columns.push_back({"read", VariableKind::count(), Role::Copula});
  auto ds = empty_dataset(s);
  ds.n = n;
  auto rng = make_rng(seed, Stream::Simulation);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<std::int64_t>(3.0 * uniform01(rng));
    const std::int64_t sex = uniform01(rng) < 0.5;
    const double age = 10 + std_normal(rng);
    std::poisson_distribution<int> P(340 + 3.0 * static_cast<double>(r) + 2.0 * (age > 10));
    ds.columns[0].ints.push_back(r);
    ds.columns[1].ints.push_back(sex);
    ds.columns[2].reals.push_back(age);
    ds.columns[3].ints.push_back(P(rng));
  }
  return ds;
}

FitSettings quick_fit(std::uint64_t seed) {
  FitSettings f;
  f.iters = 200;
  f.burn_in = 100;
  f.thin = 10;
  f.target_iters = 40;
  f.target_burn_in = 20;
  f.target_thin = 5;
  f.trees = 10;
  f.targets = {"read"};
  f.seed = seed;
  return f;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Errc code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error";
  return Errc::Io;
}

}  // namespace

TEST(Archive, RoundTripIsExact) {
  const auto ds = school_data(150, 1);
  const auto archive = fit_model(ds, quick_fit(1));
  ASSERT_EQ(archive.targets.size(), 1u);
  EXPECT_EQ(archive.schema.columns[3].role, Role::Response);
  const auto bytes = serialize_archive(archive);
  const auto back = parse_archive(bytes);
  EXPECT_EQ(serialize_archive(back), bytes);
  EXPECT_EQ(back.schema_hash(), archive.schema_hash());

  SynthesisPlan plan;
  plan.m = 2;
  plan.seed = 3;
  const auto a = synthesize_release(archive, plan);
  const auto b = synthesize_release(back, plan);
  ASSERT_EQ(a.size(), 2u);
  for (std::size_t d = 0; d < a.size(); ++d) EXPECT_EQ(format_csv(a[d]), format_csv(b[d]));
  EXPECT_EQ(a[0].schema(), archive.schema);
}

TEST(Archive, CorruptionDetected) {
  const auto ds = school_data(80, 2);
  auto f = quick_fit(2);
  f.targets.clear();
  const auto bytes = serialize_archive(fit_model(ds, f));
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_EQ(code_of([&] { parse_archive(bad_magic); }), Errc::ArchiveFormat);
  EXPECT_EQ(code_of([&] { parse_archive(bytes.substr(0, bytes.size() - 9)); }), Errc::ArchiveFormat);
  EXPECT_EQ(code_of([&] { parse_archive(bytes.substr(0, 10)); }), Errc::ArchiveFormat);
  auto bad_version = bytes;
  bad_version[8] = 99;
  EXPECT_EQ(code_of([&] { parse_archive(bad_version); }), Errc::ArchiveFormat);
}

TEST(Pipeline, CategoricalTargetRejected) {
  const auto ds = school_data(50, 3);
  auto f = quick_fit(3);
  f.targets = {"race"};
  EXPECT_EQ(code_of([&] { fit_model(ds, f); }), Errc::NonNumericResponse);
}

TEST(Pipeline, PresetsAndConfigHash) {
  const auto paper = fit_preset("paper");
  EXPECT_EQ(paper.iters, 50000u);
  EXPECT_EQ(paper.target_iters, 1100u);
  const auto desk = fit_preset("desk");
  EXPECT_EQ(desk.iters, 3000u);
  EXPECT_ANY_THROW(fit_preset("huge"));
  nlohmann::json a = desk, b = desk;
  EXPECT_EQ(config_hash(a), config_hash(b));
  b["seed"] = 5;
  EXPECT_NE(config_hash(a), config_hash(b));
  EXPECT_EQ(synthetic_file_name("nc", 3), "nc_syn_3.csv");
}

TEST(Pipeline, EndToEndByteIdenticalAcrossWorkers) {
  const auto root = fs::temp_directory_path() / "rplsyn_e2e_unit";
  fs::remove_all(root);
  fs::create_directories(root);
  const auto ds = school_data(120, 4);
  write_csv(root / "data.csv", ds);
  save_schema(root / "schema.json", ds.schema());

  nlohmann::json bundle = {{"data", "data.csv"},
                           {"schema", "schema.json"},
                           {"out_dir", "out1"},
                           {"stem", "school"},
                           {"seed", 21},
                           {"m", 3},
                           {"fit", quick_fit(21)},
                           {"utility", {{"response", "read"}, {"predictors", {"race", "sex", "age"}}, {"iters", 300}, {"burn_in", 100}}},
                           {"risk", {{"known", {"race", "sex"}}, {"target", "read"}, {"m", {1, 2}}, {"epsilon", {0, 5}}, {"reps", 3}}}};
  std::vector<fs::path> dirs;
  for (std::size_t w : {1u, 3u, 1u}) {
    bundle["workers"] = w;
    bundle["out_dir"] = "out_w" + std::to_string(w) + "_" + std::to_string(dirs.size());
    write_json(root / "bundle.json", bundle);
    const auto out = end_to_end(load_bundle(root / "bundle.json"), bundle);
    ASSERT_EQ(out.synthetic.size(), 3u);
    ASSERT_TRUE(out.utility && out.risk);
    dirs.push_back(root / bundle["out_dir"].get<std::string>());
  }
  for (const char* f : {"school.rplsyn", "school_syn_1.csv", "school_syn_2.csv", "school_syn_3.csv", "schema.json",
                        "manifest.json", "utility.json", "risk.json"})
    for (std::size_t d = 1; d < dirs.size(); ++d) EXPECT_EQ(slurp(dirs[0] / f), slurp(dirs[d] / f)) << f;
  const auto syn = load_dataset(dirs[0] / "school_syn_1.csv", dirs[0] / "schema.json");
  EXPECT_EQ(syn.n, 120u);
  fs::remove_all(root);
}

TEST(Pipeline, StageNamedOnFailure) {
  RunBundle b;
  b.data = "/nonexistent/data.csv";
  b.schema = "/nonexistent/schema.json";
  b.out_dir = fs::temp_directory_path() / "rplsyn_never";
  try {
    end_to_end(b, nlohmann::json::object());
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("stage 'load'"), std::string::npos) << e.what();
  }
}

TEST(Sim, DataAndPresets) {
  SimDesign d;
  d.n = 2000;
  d.seed = 3;
  const auto a = generate_sim_data(d);
  EXPECT_EQ(a, generate_sim_data(d));
  EXPECT_EQ(a.n, 2000u);
  EXPECT_EQ(a.columns[0].schema.type.num_levels(), 5u);
  std::vector<double> freq(5, 0.0);
  for (auto v : a.columns[0].ints) freq[static_cast<std::size_t>(v)] += 1.0 / 2000;
  for (std::size_t l = 0; l < 5; ++l) EXPECT_NEAR(freq[l], d.p_levels[l], 0.04);
  const auto paper = sim_preset("paper");
  EXPECT_EQ(paper.design.n, 5000u);
  EXPECT_EQ(paper.mcmc.iters, 15000u);
  EXPECT_EQ(paper.mcmc.burn_in, 9000u);
  EXPECT_EQ(paper.design.n_reps, 500u);
  const auto desk = sim_preset("desk");
  EXPECT_EQ(desk.design.n, 1000u);
  EXPECT_EQ(desk.design.n_reps, 50u);
  EXPECT_ANY_THROW(sim_preset("other"));
}

TEST(Sim, SmallStudyStructure) {
  SimDesign d;
  d.n = 300;
  d.n_reps = 4;
  d.seed = 8;
  SimMcmc m;
  m.iters = 300;
  m.burn_in = 150;
  m.thin = 5;
  const auto rep = run_simulation(d, m);
  for (const auto* r : {&rep.rpl, &rep.rl_onehot, &rep.rl_ordinal}) {
    EXPECT_EQ(r->mse.size(), 4u);
    EXPECT_EQ(r->bands.size(), 5u);
    EXPECT_EQ(r->truth.size(), 5u);
    EXPECT_TRUE(r->se_mse.has_value());
  }
  EXPECT_EQ(rep.rpl.multi_classified, 0u);
  EXPECT_EQ(rep.rpl.records, 1200u);
  ASSERT_TRUE(rep.rpl.posterior_mean.has_value());
  EXPECT_EQ(rep.rpl.posterior_mean->C.rows(), 6);
  SimOptions opt;
  opt.workers = 3;
  const auto again = run_rpl_study(d, m, opt);
  EXPECT_EQ(nlohmann::json(again).dump(), nlohmann::json(rep.rpl).dump());
}
