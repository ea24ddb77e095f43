#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "oracles.hpp"
#include "rplsyn/error.hpp"
#include "rplsyn/risk.hpp"
#include "rplsyn/utility.hpp"

using namespace rplsyn;

namespace {

Errc code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error";
  return Errc::Io;
}

MixedDataset regression_data(std::size_t n, std::uint64_t seed, double shift = 0.0) {
  Schema s;
  s.columns.push_back({"y", VariableKind::continuous(), Role::Copula});
  for (int j = 0; j < 4; ++j) s.columns.push_back({"x" + std::to_string(j), VariableKind::continuous(), Role::Copula});
  s.columns.push_back({"b", VariableKind::binary(), Role::Copula});
  auto ds = empty_dataset(s);
  ds.n = n;
  auto rng = make_rng(seed, Stream::Simulation);
  for (std::size_t i = 0; i < n; ++i) {
    double x[4];
    for (auto& v : x) v = std_normal(rng);
    ds.columns[0].reals.push_back(5.0 * x[0] + std_normal(rng));
    for (int j = 0; j < 4; ++j) ds.columns[1 + j].reals.push_back(x[j] + (j == 1 ? shift : 0.0));
    ds.columns[5].ints.push_back(uniform01(rng) < 0.4);
  }
  return ds;
}

Schema risk_schema() {
  Schema s;
  s.columns.push_back({"race", VariableKind::categorical({"a", "b", "c"}), Role::Copula});
  s.columns.push_back({"sex", VariableKind::binary(), Role::Copula});
  s.columns.push_back({"grade", VariableKind::ordinal(), Role::Copula});
  s.columns.push_back({"score", VariableKind::count(), Role::Copula});
  return s;
}

MixedDataset risk_data(std::size_t n, std::mt19937_64& rng) {
  auto ds = empty_dataset(risk_schema());
  ds.n = n;
  for (std::size_t i = 0; i < n; ++i) {
    ds.columns[0].ints.push_back(static_cast<std::int64_t>(rng() % 3));
    ds.columns[1].ints.push_back(static_cast<std::int64_t>(rng() % 2));
    ds.columns[2].ints.push_back(static_cast<std::int64_t>(3 + rng() % 3));
    ds.columns[3].ints.push_back(static_cast<std::int64_t>(340 + rng() % 6));
  }
  return ds;
}

}  // namespace

TEST(Utility, CioExamples) {
  EXPECT_NEAR(cio(0, 1, 0, 1), 1.0, 1e-12);
  EXPECT_NEAR(cio(0, 1, 0.5, 1.5), 0.5, 1e-12);
  // Direct evaluation of the overlap formula on disjoint intervals.
  const double overlap = std::min(1.0, 3.0) - std::max(0.0, 2.0);
  EXPECT_NEAR(cio(0, 1, 2, 3), 0.5 * (overlap / 1.0 + overlap / 1.0), 1e-12);
  EXPECT_LT(cio(0, 1, 2, 3), 0.0);
  EXPECT_EQ(code_of([] { cio(1, 1, 0, 2); }), Errc::ZeroWidthInterval);
}

TEST(Utility, CoefMseExamples) {
  EXPECT_NEAR(coef_mse(1.3, 0.4, 1.3), 0.0, 1e-12);
  EXPECT_NEAR(coef_mse(1.0, 0.5, 2.0), 4.0, 1e-12);
  EXPECT_EQ(code_of([] { coef_mse(1.0, 0.0, 2.0); }), Errc::ZeroPosteriorSD);
}

TEST(Utility, PoolingExamples) {
  std::vector<CoefficientSummary> fits;
  for (int k = 1; k <= 5; ++k) fits.push_back({Coefficient{"b", static_cast<double>(k), 1.0, 0, 0}});
  const auto pooled = pool_synthetic(fits);
  ASSERT_EQ(pooled.size(), 1u);
  EXPECT_NEAR(pooled[0].q_bar, 3.0, 1e-12);
  EXPECT_NEAR(pooled[0].b, 2.5, 1e-12);
  EXPECT_NEAR(pooled[0].T, 1.5, 1e-12);
  EXPECT_NEAR(pooled[0].lower, 3.0 - 1.96 * std::sqrt(1.5), 1e-12);

  std::vector<CoefficientSummary> same(4, {Coefficient{"b", 2.0, 0.5, 0, 0}});
  const auto p2 = pool_synthetic(same);
  EXPECT_NEAR(p2[0].b, 0.0, 1e-12);
  EXPECT_NEAR(p2[0].T, 0.25, 1e-12);

  EXPECT_EQ(code_of([&] { pool_synthetic({fits[0]}); }), Errc::InvalidArgument);
  auto bad = fits;
  bad[2][0].name = "c";
  EXPECT_EQ(code_of([&] { pool_synthetic(bad); }), Errc::MismatchedCoefficientSets);
}

TEST(Utility, AggregatedUtilityExamples) {
  EXPECT_NEAR(aggregated_utility(1, 0, 0), 1.0, 1e-12);
  EXPECT_NEAR(aggregated_utility(0, 1, 0.25), 0.0, 1e-12);
  const double base = aggregated_utility(0.4, 0.3, 0.05);
  EXPECT_NEAR(aggregated_utility(0.5, 0.3, 0.05) - base, 0.1 / 3, 1e-12);
  EXPECT_NEAR(aggregated_utility(0.4, 0.4, 0.05) - base, -0.1 / 3, 1e-12);
  EXPECT_NEAR(aggregated_utility(0.4, 0.3, 0.15) - base, -0.4 / 3, 1e-12);
}

TEST(Utility, PmseLimits) {
  const std::vector<double> constant(100, 0.5);
  EXPECT_EQ(pmse_from_scores(constant, 0.5), 0.0);

  const auto conf = regression_data(5000, 1);
  std::vector<std::size_t> perm(conf.n);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(2);
  std::shuffle(perm.begin(), perm.end(), rng);
  EXPECT_LT(pmse(conf, conf.rows(perm)), 0.002);

  auto shifted = conf;
  double mean = 0, sd = 0;
  for (double v : conf.columns[2].reals) mean += v / conf.n;
  for (double v : conf.columns[2].reals) sd += (v - mean) * (v - mean) / conf.n;
  sd = std::sqrt(sd);
  for (auto& v : shifted.columns[2].reals) v += 10 * sd;
  const double p = pmse(conf, shifted);
  EXPECT_GT(p, 0.2);
  EXPECT_LE(p, 0.25 + 1e-12);
}

TEST(Utility, HorseshoeRecoversSignal) {
  const auto ds = regression_data(2000, 3);
  RegressionSpec spec{"y", {"x0", "x1", "x2", "x3"}, {}, false};
  HorseshoeConfig cfg;
  cfg.iters = 3000;
  cfg.burn_in = 1000;
  cfg.seed = 3;
  const auto fit = fit_bayes_lm(ds, spec, cfg);
  ASSERT_EQ(fit.size(), 5u);
  EXPECT_GT(fit[1].lower, 0.0);
  EXPECT_NEAR(fit[1].estimate, 5.0, 0.1);
  for (int j = 2; j < 5; ++j) EXPECT_LT(std::abs(fit[j].estimate), 0.1) << fit[j].name;
}

TEST(Utility, HorseshoeFlatLimitIsOls) {
  // Orthogonal design (X'X = 64 I).
  const int n = 64, p = 3;
  Eigen::MatrixXd X(n, p + 1);
  X.col(0).setOnes();
  for (int i = 0; i < n; ++i) {
    X(i, 1) = (i % 2 ? 1.0 : -1.0);
    X(i, 2) = ((i / 2) % 2 ? 1.0 : -1.0);
    X(i, 3) = ((i / 4) % 2 ? 1.0 : -1.0);
  }
  std::mt19937_64 rng(4);
  std::normal_distribution<double> N;
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) y(i) = 1.0 + 0.5 * X(i, 1) - 0.3 * X(i, 2) + 0.05 * X(i, 3) + N(rng);
  const Eigen::VectorXd ols = (X.transpose() * X).ldlt().solve(X.transpose() * y);
  HorseshoeConfig cfg;
  cfg.iters = 20000;
  cfg.burn_in = 2000;
  cfg.seed = 4;
  // Shrinkage toward 0 at fixed tau fades only like 1/log(tau).
  cfg.fixed_tau = 1e100;
  const auto fit = fit_horseshoe(X, y, {"(Intercept)", "a", "b", "c"}, cfg);
  for (int j = 0; j <= p; ++j) {
    const double mc_se = fit[j].sd / std::sqrt(static_cast<double>(cfg.iters - cfg.burn_in));
    // Draws are nearly independent at this limit; allow a little autocorrelation.
    EXPECT_NEAR(fit[j].estimate, ols(j), 2 * 1.5 * mc_se) << j;
  }
}

TEST(Utility, DesignAndErrors) {
  auto ds = regression_data(200, 5);
  RegressionSpec spec{"y", {"x0", "b"}, {{"x0", "b"}}, true};
  DesignBuilder builder(spec, ds);
  EXPECT_EQ(builder.names().size(), 4u);
  const auto X = builder.design(ds);
  EXPECT_NEAR(X.col(1).mean(), 0.0, 1e-12);
  EXPECT_EQ(X.col(2), builder.design(ds).col(2));
  for (auto& v : ds.columns[0].reals) v = 2.0;
  HorseshoeConfig cfg;
  cfg.iters = 50;
  cfg.burn_in = 10;
  EXPECT_EQ(code_of([&] { fit_bayes_lm(ds, spec, cfg); }), Errc::DegenerateResponse);
}

TEST(Utility, EvaluateIdenticalReleaseIsNearPerfect) {
  const auto conf = regression_data(500, 6);
  RegressionSpec spec{"y", {"x0", "x1"}, {}, true};
  HorseshoeConfig cfg;
  cfg.iters = 1500;
  cfg.burn_in = 500;
  cfg.seed = 6;
  const std::vector<MixedDataset> syn{conf, conf};
  const auto a = evaluate_utility(conf, syn, spec, cfg, 1);
  const auto b = evaluate_utility(conf, syn, spec, cfg, 2);
  EXPECT_EQ(nlohmann::json(a).dump(), nlohmann::json(b).dump());
  EXPECT_EQ(a.coefficients.size(), 2u);
  EXPECT_GT(a.cio_bar, 0.9);
  EXPECT_LT(a.pmse_mean, 0.002);
  EXPECT_GT(a.U, 0.9);
}

TEST(Risk, CmapRecordExamples) {
  EXPECT_EQ(cmap_record({}, 342, 2), 0);
  const std::vector<std::int64_t> m1{340, 342, 350};
  EXPECT_EQ(cmap_record(m1, 342, 0), 1);
  const std::vector<std::int64_t> m2{340, 344};
  EXPECT_EQ(lower_median(m2), 340);
  EXPECT_EQ(cmap_record(m2, 342, 1), 0);
  EXPECT_EQ(cmap_record(m2, 342, 2), 1);
  EXPECT_DOUBLE_EQ(cap_record(m1, 342), 1.0 / 3.0);
  EXPECT_EQ(cap_record({}, 342), 0.0);
}

TEST(Risk, MatchSetSelfAndToy) {
  std::mt19937_64 rng(7);
  const auto conf = risk_data(6, rng);
  const std::vector<const MixedDataset*> self{&conf};
  const std::vector<std::string> all{"race", "sex", "grade"};
  for (std::size_t j = 0; j < conf.n; ++j) {
    auto ms = match_set(conf, j, self, all, "score");
    std::vector<std::int64_t> brute;
    for (std::size_t i = 0; i < conf.n; ++i) {
      bool same = true;
      for (const auto& k : all) same = same && conf.column(k).ints[i] == conf.column(k).ints[j];
      if (same) brute.push_back(conf.column("score").ints[i]);
    }
    std::sort(ms.begin(), ms.end());
    std::sort(brute.begin(), brute.end());
    EXPECT_EQ(ms, brute);
  }
  auto other = conf;
  for (auto& v : other.columns[2].ints) v += 100;
  const std::vector<const MixedDataset*> none{&other};
  EXPECT_TRUE(match_set(conf, 0, none, all, "score").empty());
}

TEST(Risk, PipelineEqualsBruteForce) {
  std::mt19937_64 rng(8);
  const std::vector<std::vector<std::string>> knowns{{"race"}, {"race", "sex"}, {"race", "sex", "grade"}};
  for (int inst = 0; inst < 40; ++inst) {
    const std::size_t n = 5 + rng() % 46;
    const auto conf = risk_data(n, rng);
    std::vector<MixedDataset> rel;
    const std::size_t m = 1 + rng() % 4;
    for (std::size_t d = 0; d < m; ++d) rel.push_back(risk_data(n, rng));
    std::vector<const MixedDataset*> ptrs;
    for (const auto& d : rel) ptrs.push_back(&d);
    const std::vector<const MixedDataset*> self{&conf};
    for (const auto& known : knowns) {
      double prev = -1;
      for (std::int64_t eps : {0, 1, 2, 3}) {
        AdversaryScenario sc{known, "score", eps};
        const auto det = cmap_detail(conf, ptrs, sc);
        for (std::size_t j = 0; j < n; ++j) {
          ASSERT_EQ(det.syn[j], oracle::brute_cmap(conf, j, ptrs, known, "score", eps));
          ASSERT_EQ(det.base[j], oracle::brute_cmap(conf, j, self, known, "score", eps));
          ASSERT_EQ(det.unique[j], oracle::brute_unique(conf, j, known));
        }
        const auto rep = cmap_mean(conf, ptrs, sc);
        EXPECT_GE(rep.cmap_syn, prev);
        prev = rep.cmap_syn;
        EXPECT_NEAR(rep.risk_reduction, rep.cmap_base - rep.cmap_syn, 1e-15);
      }
    }
  }
}

TEST(Risk, UniqueKeysGiveFullBaseline) {
  auto ds = empty_dataset(risk_schema());
  ds.n = 5;
  for (std::int64_t i = 0; i < 5; ++i) {
    ds.columns[0].ints.push_back(i % 3);
    ds.columns[1].ints.push_back(i % 2);
    ds.columns[2].ints.push_back(i);
    ds.columns[3].ints.push_back(340 + i);
  }
  const std::vector<const MixedDataset*> rel{&ds};
  const auto rep = cmap_mean(ds, rel, {{"race", "sex", "grade"}, "score", 0});
  EXPECT_EQ(rep.cmap_base, 1.0);
  EXPECT_EQ(rep.cmap_syn, 1.0);
  EXPECT_EQ(rep.uniques, 5u);
}

TEST(Risk, StudyBaseIndependentOfMAndDeterministic) {
  std::mt19937_64 rng(9);
  const auto conf = risk_data(60, rng);
  std::vector<MixedDataset> pool;
  for (int d = 0; d < 20; ++d) pool.push_back(risk_data(60, rng));
  RiskGrid grid;
  grid.m = {1, 5, 10};
  grid.known_counts = {1, 2, 3};
  grid.epsilon = {0, 1, 2};
  const std::vector<std::string> known{"race", "sex", "grade"};
  const auto a = risk_study(conf, pool, known, "score", grid, 7, 11, 1);
  const auto b = risk_study(conf, pool, known, "score", grid, 7, 11, 3);
  ASSERT_EQ(a.size(), 27u);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(nlohmann::json(a[i]).dump(), nlohmann::json(b[i]).dump());
  for (const auto& r : a)
    for (const auto& s : a)
      if (r.known_count == s.known_count && r.epsilon == s.epsilon) {
        EXPECT_EQ(r.cmap_base, s.cmap_base);
        EXPECT_EQ(r.cmap_base_uniques, s.cmap_base_uniques);
      }

  grid.m = {20};
  const auto once = risk_study(conf, pool, known, "score", grid, 1, 1, 1);
  std::vector<const MixedDataset*> all;
  for (const auto& d : pool) all.push_back(&d);
  const auto direct = cmap_mean(conf, all, {known, "score", 0});
  EXPECT_EQ(once[6].cmap_syn, direct.cmap_syn);

  grid.m = {21};
  EXPECT_EQ(code_of([&] { risk_study(conf, pool, known, "score", grid, 1, 1, 1); }), Errc::InsufficientPool);
}

TEST(Risk, ContinuousKeyRejected) {
  Schema s = risk_schema();
  s.columns.push_back({"w", VariableKind::continuous(), Role::Copula});
  auto ds = empty_dataset(s);
  ds.n = 1;
  for (int c = 0; c < 4; ++c) ds.columns[c].ints.push_back(c == 2 ? 3 : 0);
  ds.columns[4].reals.push_back(0.5);
  const std::vector<const MixedDataset*> rel{&ds};
  EXPECT_EQ(code_of([&] { cmap_mean(ds, rel, {{"w"}, "score", 0}); }), Errc::InvalidArgument);
}
