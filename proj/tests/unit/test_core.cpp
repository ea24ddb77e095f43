#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "oracles.hpp"
#include "rplsyn/error.hpp"
#include "rplsyn/marginals.hpp"
#include "rplsyn/normal.hpp"
#include "rplsyn/random.hpp"
#include "rplsyn/schema.hpp"

using namespace rplsyn;

namespace {

Schema race_schema() {
  Schema s;
  s.columns.push_back({"race", VariableKind::categorical({"a", "b", "c", "d", "e"}), Role::Copula});
  s.columns.push_back({"score", VariableKind::count(), Role::Copula});
  return s;
}

template <class F>
Errc error_code(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return Errc::Io;
}

}  // namespace

TEST(Schema, MinimalCsvLoads) {
  Schema s;
  s.columns.push_back({"g", VariableKind::categorical({"x", "y"}), Role::Copula});
  s.columns.push_back({"c", VariableKind::count(), Role::Copula});
  const auto ds = parse_csv("g,c\nx,1\ny,4\nx,2\n", s);
  EXPECT_EQ(ds.n, 3u);
  ASSERT_EQ(ds.columns.size(), 2u);
  EXPECT_EQ(ds.columns[0].ints, (std::vector<std::int64_t>{0, 1, 0}));
  EXPECT_EQ(ds.columns[1].ints, (std::vector<std::int64_t>{1, 4, 2}));
}

TEST(Schema, UnknownLevelRejected) {
  EXPECT_EQ(error_code([] { parse_csv("race,score\nPurple,340\n", race_schema()); }), Errc::LevelNotInSchema);
}

TEST(Schema, ScoreRangeLoadsUnchanged) {
  Schema s;
  s.columns.push_back({"read", VariableKind::count(), Role::Copula});
  const auto ds = parse_csv("read\n316\n370\n342\n", s);
  EXPECT_EQ(ds.columns[0].ints, (std::vector<std::int64_t>{316, 370, 342}));
}

TEST(Schema, ErrorsOnBadCells) {
  const auto s = race_schema();
  EXPECT_EQ(error_code([&] { parse_csv("race,score\na,\n", s); }), Errc::MissingValue);
  EXPECT_EQ(error_code([&] { parse_csv("race,score\na,3.5\n", s); }), Errc::NonIntegerCount);
  EXPECT_EQ(error_code([&] { parse_csv("race,other\na,3\n", s); }), Errc::UnknownColumn);
}

TEST(Schema, InvalidSchemas) {
  Schema one_level;
  one_level.columns.push_back({"g", VariableKind::categorical({"x"}), Role::Copula});
  EXPECT_EQ(error_code([&] { one_level.validate(); }), Errc::InvalidSchema);

  Schema dup;
  dup.columns.push_back({"g", VariableKind::categorical({"x", "x"}), Role::Copula});
  EXPECT_EQ(error_code([&] { dup.validate(); }), Errc::InvalidSchema);

  Schema cat_response;
  cat_response.columns.push_back({"g", VariableKind::categorical({"x", "y"}), Role::Response});
  EXPECT_ANY_THROW(cat_response.validate());
}

TEST(Schema, JsonAndCsvRoundTrip) {
  Schema s = race_schema();
  s.columns.push_back({"w", VariableKind::continuous(), Role::Copula});
  s.columns.push_back({"b", VariableKind::binary(), Role::Copula});
  s.columns.push_back({"o", VariableKind::ordinal(), Role::Response});
  nlohmann::json j = s;
  EXPECT_EQ(j.get<Schema>(), s);
  EXPECT_EQ(j.get<Schema>().hash(), s.hash());

  const auto ds = parse_csv("race,score,w,b,o\nc,340,0.25,1,3\na,351,-1.5,0,1\ne,342,1e-3,1,2\n", s);
  const auto again = parse_csv(format_csv(ds), s);
  EXPECT_EQ(again, ds);

  const auto dir = std::filesystem::temp_directory_path() / "rplsyn_core_rt";
  std::filesystem::create_directories(dir);
  save_schema(dir / "schema.json", s);
  write_csv(dir / "d.csv", ds);
  EXPECT_EQ(load_schema(dir / "schema.json"), s);
  EXPECT_EQ(load_dataset(dir / "d.csv", dir / "schema.json"), ds);
  std::filesystem::remove_all(dir);
}

TEST(Schema, BinaryDomainChecked) {
  Schema s;
  s.columns.push_back({"b", VariableKind::binary(), Role::Copula});
  EXPECT_ANY_THROW(parse_csv("b\n0\n2\n", s));
}

TEST(Layout, TableLayoutWidth) {
  Schema s;
  s.columns.push_back({"race", VariableKind::categorical({"1", "2", "3", "4", "5"}), Role::Copula});
  s.columns.push_back({"pared", VariableKind::categorical({"1", "2", "3", "4"}), Role::Copula});
  for (int i = 0; i < 21; ++i) s.columns.push_back({"v" + std::to_string(i), VariableKind::count(), Role::Copula});
  const auto layout = expand_layout(s);
  EXPECT_EQ(layout.p_star, 30u);
  std::size_t total = 0;
  for (std::size_t b = 0; b < layout.blocks.size(); ++b) {
    EXPECT_EQ(layout.blocks[b].offset, total);
    total += layout.blocks[b].width;
  }
  EXPECT_EQ(total, layout.p_star);
  EXPECT_EQ(layout.categorical_columns().size() + layout.rank_columns().size(), layout.p_star);
}

TEST(Layout, NoCategoricalsIsIdentity) {
  Schema s;
  for (int i = 0; i < 4; ++i) s.columns.push_back({"v" + std::to_string(i), VariableKind::count(), Role::Copula});
  const auto layout = expand_layout(s);
  EXPECT_EQ(layout.p_star, 4u);
  for (std::size_t b = 0; b < 4; ++b) EXPECT_EQ(layout.blocks[b].offset, b);
}

TEST(Layout, SingleCategoricalAndDecode) {
  Schema s;
  s.columns.push_back({"x1", VariableKind::categorical({"1", "2", "3", "4", "5"}), Role::Copula});
  const auto layout = expand_layout(s);
  EXPECT_EQ(layout.p_star, 5u);
  const std::vector<double> ok{-1, -0.2, 0.7, -3, -0.1};
  EXPECT_EQ(decode_categoricals(layout, ok)[0], std::optional<std::size_t>(2));
  const std::vector<double> two{-1, 0.2, 0.7, -3, -0.1};
  EXPECT_FALSE(decode_categoricals(layout, two)[0].has_value());
  const std::vector<double> none{-1, -0.2, -0.7, -3, -0.1};
  EXPECT_FALSE(decode_categoricals(layout, none)[0].has_value());
}

TEST(Random, SubstreamsAreStable) {
  auto a = make_rng(7, Stream::Fit, 3, 1);
  auto b = make_rng(7, Stream::Fit, 3, 1);
  auto c = make_rng(7, Stream::Fit, 3, 2);
  const auto xa = a(), xb = b(), xc = c();
  EXPECT_EQ(xa, xb);
  EXPECT_NE(xa, xc);
  EXPECT_NE(derive_seed(7, Stream::Fit), derive_seed(7, Stream::Synthesis));
}

TEST(Random, TruncatedNormalMatchesOracle) {
  auto rng = make_rng(11, Stream::Fit);
  const std::pair<double, double> cases[] = {{-INFINITY, -1.0}, {0.5, 2.0}, {7.0, INFINITY}, {-9.0, -8.5}, {-0.1, 0.1}};
  for (auto [lo, hi] : cases) {
    std::vector<double> xs(4000);
    for (auto& x : xs) {
      x = truncated_std_normal(rng, lo, hi);
      ASSERT_GE(x, lo);
      ASSERT_LE(x, hi);
    }
    // Tail-stable CDF of the truncated law via log-survival ratios.
    const double glo = std::isfinite(lo) ? lo : -40.0, ghi = std::isfinite(hi) ? hi : 40.0;
    oracle::GridCdf cdf([](double x) { return -0.5 * x * x; }, glo, std::min(ghi, glo + 40.0));
    EXPECT_GT(oracle::ks_pvalue(oracle::ks_statistic(xs, cdf), xs.size()), 0.01) << lo << " " << hi;
  }
}

TEST(Random, GammaMoments) {
  auto rng = make_rng(3, Stream::Fit);
  const double shape = 2.5, rate = 4.0;
  const int N = 200000;
  double s = 0, s2 = 0;
  for (int i = 0; i < N; ++i) {
    const double g = gamma_rate(rng, shape, rate);
    s += g;
    s2 += g * g;
  }
  const double mean = s / N, var = s2 / N - mean * mean;
  EXPECT_NEAR(mean, shape / rate, 3 * std::sqrt(shape / (rate * rate) / N));
  EXPECT_NEAR(var, shape / (rate * rate), 0.01);
}

TEST(Marginals, HandEvaluatedCount) {
  const std::vector<double> v{1, 1, 2, 3};
  const auto m = fit_marginal(v, VariableKind::count());
  EXPECT_NEAR(m.cdf(1), 0.4, 1e-15);
  EXPECT_NEAR(m.cdf(2), 0.6, 1e-15);
  EXPECT_NEAR(m.cdf(3), 0.8, 1e-15);
  EXPECT_EQ(m.inverse(0.4), 1.0);
  EXPECT_EQ(m.inverse(0.41), 2.0);
  for (double s : m.support()) EXPECT_EQ(m.inverse(m.cdf(s)), s);
}

TEST(Marginals, SingleValueAndBoundaries) {
  const std::vector<double> v{5, 5, 5};
  const auto m = fit_marginal(v, VariableKind::count());
  for (double u : {1e-9, 0.3, 0.999999}) EXPECT_EQ(m.inverse(u), 5.0);

  const std::vector<double> w{10, 20, 30};
  const auto e = fit_marginal(w, VariableKind::count());
  EXPECT_EQ(e.inverse(0.5), 20.0);
  EXPECT_EQ(e.inverse(1e-12), 10.0);
}

TEST(Marginals, ContinuousCloseToNormal) {
  auto rng = make_rng(1, Stream::Fit);
  std::vector<double> v(5000);
  for (auto& x : v) x = std_normal(rng);
  const auto m = fit_marginal(v, VariableKind::continuous());
  double sup = 0;
  for (double x = -4; x <= 4; x += 0.01) sup = std::max(sup, std::abs(m.cdf(x) - norm_cdf(x)));
  EXPECT_LT(sup, 0.03);
  double lo = *std::min_element(v.begin(), v.end()), hi = *std::max_element(v.begin(), v.end());
  EXPECT_GE(m.inverse(1e-12), lo);
  EXPECT_LE(m.inverse(1 - 1e-12), hi);
  for (double u = 0.05; u < 1; u += 0.1) EXPECT_NEAR(m.cdf(m.inverse(u)), u, 1e-6);
}

TEST(Marginals, MonotoneAndClosedSupport) {
  auto rng = make_rng(2, Stream::Fit);
  std::poisson_distribution<int> P(30);
  std::vector<double> v(500);
  for (auto& x : v) x = P(rng);
  const auto m = fit_marginal(v, VariableKind::count());
  double prev = -1e300;
  for (int i = 1; i < 1000; ++i) {
    const double u = i / 1000.0;
    const double x = m.inverse(u);
    EXPECT_GE(x, prev);
    prev = x;
    EXPECT_TRUE(std::binary_search(m.support().begin(), m.support().end(), x));
    EXPECT_GT(m.cdf(x), 0.0);
    EXPECT_LT(m.cdf(x), 1.0);
  }
}

TEST(Marginals, JsonRoundTrip) {
  const std::vector<double> v{0.5, 1.25, -2.0, 3.0, 0.75};
  const auto m = fit_marginal(v, VariableKind::continuous());
  nlohmann::json j = m;
  const auto back = j.get<MarginalEstimator>();
  for (double u : {0.1, 0.5, 0.9}) EXPECT_EQ(back.inverse(u), m.inverse(u));
}

TEST(Marginals, CategoricalProbabilities) {
  Schema s;
  s.columns.push_back({"x1", VariableKind::categorical({"1", "2", "3", "4", "5"}), Role::Copula});
  s.columns.push_back({"g", VariableKind::categorical({"a", "b"}), Role::Copula});
  const auto ds = parse_csv("x1,g\n2,a\n2,a\n2,a\n", s);
  const auto t = fit_categorical_probs(ds);
  ASSERT_EQ(t.probs.size(), 2u);
  EXPECT_EQ(t.probs[0], (std::vector<double>{0, 1, 0, 0, 0}));
  EXPECT_EQ(t.probs[1], (std::vector<double>{1, 0}));
  for (const auto& p : t.probs) EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-12);
}

TEST(Marginals, SimulatedProportionsRecovered) {
  const std::vector<double> p{0.10, 0.40, 0.15, 0.20, 0.15};
  Schema s;
  s.columns.push_back({"x1", VariableKind::categorical({"1", "2", "3", "4", "5"}), Role::Copula});
  int good = 0;
  for (int run = 0; run < 40; ++run) {
    auto rng = make_rng(run, Stream::Simulation);
    std::discrete_distribution<int> D(p.begin(), p.end());
    MixedDataset ds = empty_dataset(s);
    ds.n = 5000;
    for (std::size_t i = 0; i < ds.n; ++i) ds.columns[0].ints.push_back(D(rng));
    const auto t = fit_categorical_probs(ds);
    bool ok = true;
    for (std::size_t l = 0; l < p.size(); ++l) ok = ok && std::abs(t.probs[0][l] - p[l]) <= 0.02;
    good += ok;
  }
  EXPECT_GE(good, 38);
}
