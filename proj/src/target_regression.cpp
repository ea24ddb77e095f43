#include "rplsyn/target_regression.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Dense>
#include <boost/math/distributions/chi_squared.hpp>

#include "rplsyn/error.hpp"
#include "rplsyn/factor_model.hpp"
#include "rplsyn/normal.hpp"
#include "rplsyn/parallel.hpp"

namespace rplsyn {

namespace {

double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

// Residual sd of a least-squares fit of z on an intercept plus main effects.
double linear_residual_sd(const std::vector<double>& z, const std::vector<double>& X, std::size_t n,
                          const std::vector<CovariateInfo>& cov) {
  std::size_t width = 1;
  for (const auto& c : cov) width += c.categorical ? c.levels - 1 : 1;
  Eigen::MatrixXd D = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(width));
  const std::size_t q = cov.size();
  for (std::size_t i = 0; i < n; ++i) {
    const auto I = static_cast<Eigen::Index>(i);
    D(I, 0) = 1.0;
    Eigen::Index col = 1;
    for (std::size_t v = 0; v < q; ++v) {
      const double x = X[i * q + v];
      if (cov[v].categorical) {
        const auto level = static_cast<std::size_t>(x);
        if (level > 0) D(I, col + static_cast<Eigen::Index>(level) - 1) = 1.0;
        col += static_cast<Eigen::Index>(cov[v].levels) - 1;
      } else {
        D(I, col++) = x;
      }
    }
  }
  const Eigen::Map<const Eigen::VectorXd> y(z.data(), static_cast<Eigen::Index>(n));
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(D);
  const Eigen::VectorXd beta = qr.solve(y);
  const double ssr = (y - D * beta).squaredNorm();
  const auto dof = static_cast<double>(n) - static_cast<double>(qr.rank());
  if (dof >= 1.0 && ssr > 0.0) return std::sqrt(ssr / dof);
  const double mean = y.mean();
  return std::sqrt((y.array() - mean).square().sum() / std::max(1.0, static_cast<double>(n) - 1.0));
}

}  // namespace

double TargetModel::predict(const double* x) const {
  double acc = 0.0;
  for (std::size_t d = 0; d < ensembles.size(); ++d) {
    double f = 0.0;
    for (const auto& t : ensembles[d]) f += t.predict(x);
    acc += (f - shift[d]) / scale[d];
  }
  return ensembles.empty() ? 0.0 : acc / static_cast<double>(ensembles.size());
}

std::vector<double> TargetModel::predict(const MixedDataset& ds) const {
  const auto X = covariate_matrix(ds, covariates);
  const std::size_t q = covariates.size();
  std::vector<double> out(ds.n);
  for (std::size_t i = 0; i < ds.n; ++i) out[i] = predict(X.data() + i * q);
  return out;
}

void to_json(nlohmann::json& j, const TargetModel& m) {
  j = nlohmann::json{{"response", m.response},
                     {"response_kind", std::string(to_string(m.response_kind))},
                     {"covariates", m.covariates},
                     {"ensembles", m.ensembles},
                     {"shift", m.shift},
                     {"scale", m.scale},
                     {"sigma_hat", m.sigma_hat},
                     {"marginal", m.marginal},
                     {"n_fit", m.n_fit}};
}

void from_json(const nlohmann::json& j, TargetModel& m) {
  m.response = j.at("response").get<std::string>();
  const auto kind = j.at("response_kind").get<std::string>();
  if (kind == "ordinal") m.response_kind = Kind::Ordinal;
  else if (kind == "count") m.response_kind = Kind::Count;
  else if (kind == "continuous") m.response_kind = Kind::Continuous;
  else throw Error(Errc::ArchiveFormat, "bad response kind '" + kind + "'");
  m.covariates = j.at("covariates").get<std::vector<CovariateInfo>>();
  m.ensembles = j.at("ensembles").get<std::vector<std::vector<Tree>>>();
  m.shift = j.at("shift").get<std::vector<double>>();
  m.scale = j.at("scale").get<std::vector<double>>();
  m.sigma_hat = j.at("sigma_hat").get<double>();
  m.marginal = j.at("marginal").get<MarginalEstimator>();
  m.n_fit = j.at("n_fit").get<std::size_t>();
  if (m.shift.size() != m.ensembles.size() || m.scale.size() != m.ensembles.size())
    throw Error(Errc::ArchiveFormat, "target model standardization does not match its ensembles");
}

std::vector<CovariateInfo> describe_covariates(const MixedDataset& ds,
                                               std::span<const std::size_t> columns,
                                               std::size_t max_cuts) {
  std::vector<CovariateInfo> out;
  for (auto c : columns) {
    const auto& col = ds.columns.at(c);
    CovariateInfo info;
    info.name = col.schema.name;
    info.categorical = col.schema.type.is_categorical();
    if (info.categorical) {
      info.levels = col.schema.type.num_levels();
    } else {
      const auto values = col.numeric_values();
      info.cutpoints = make_cutpoints(values, max_cuts);
    }
    out.push_back(std::move(info));
  }
  return out;
}

std::vector<double> covariate_matrix(const MixedDataset& ds, const std::vector<CovariateInfo>& covariates) {
  const std::size_t q = covariates.size();
  std::vector<double> X(ds.n * q);
  for (std::size_t v = 0; v < q; ++v) {
    const auto found = ds.schema().find(covariates[v].name);
    if (!found) throw Error(Errc::SchemaMismatch, "covariate '" + covariates[v].name + "' is missing");
    const auto& col = ds.columns[*found];
    if (col.schema.type.is_categorical() != covariates[v].categorical ||
        (covariates[v].categorical && col.schema.type.num_levels() != covariates[v].levels))
      throw Error(Errc::SchemaMismatch, "covariate '" + covariates[v].name + "' changed kind");
    for (std::size_t i = 0; i < ds.n; ++i) X[i * q + v] = col.numeric(i);
  }
  return X;
}

TargetModel fit_target_model(const MixedDataset& ds, std::string_view response, const TargetConfig& config) {
  if (config.iters <= config.burn_in) throw Error(Errc::InvalidArgument, "iters must exceed burn_in");
  if (config.thin == 0) throw Error(Errc::InvalidArgument, "thin must be >= 1");
  const std::size_t r = ds.index_of(response);
  const auto& rcol = ds.columns[r];
  const Kind kind = rcol.schema.type.kind;
  if (kind != Kind::Ordinal && kind != Kind::Count && kind != Kind::Continuous)
    throw Error(Errc::NonNumericResponse,
                "response '" + std::string(response) + "' must be ordinal, count or continuous");
  const auto y = rcol.numeric_values();
  if (y.empty() || std::all_of(y.begin(), y.end(), [&](double v) { return v == y.front(); }))
    throw Error(Errc::DegenerateResponse, "response '" + std::string(response) + "' is constant");

  std::vector<std::size_t> cov_cols;
  for (std::size_t c = 0; c < ds.columns.size(); ++c)
    if (c != r && ds.columns[c].schema.role != Role::Response) cov_cols.push_back(c);

  TargetModel model;
  model.response = std::string(response);
  model.response_kind = kind;
  model.n_fit = ds.n;
  model.covariates = describe_covariates(ds, cov_cols, config.max_cuts);
  model.marginal = MarginalEstimator::fit(y, kind);

  const std::size_t n = ds.n;
  const RankOrder order(y);
  std::vector<double> z = order.initial_latent();
  auto X = covariate_matrix(ds, model.covariates);

  BartOptions opt;
  opt.trees = config.trees;
  const double range = quantile(z, 0.975) - quantile(z, 0.025);
  opt.leaf_sd = (range > 0.0 ? range : 1.0) / (6.0 * std::sqrt(static_cast<double>(config.trees)));
  const double s0 = linear_residual_sd(z, X, n, model.covariates);
  const boost::math::chi_squared chi(config.prior.nu);
  opt.sigma2 = s0 * s0;
  opt.lambda = s0 * s0 * boost::math::quantile(chi, 1.0 - config.prior.q) / config.prior.nu;
  opt.verify_each_tree = config.verify_each_tree;

  BartSampler bart(std::move(X), n, model.covariates, config.prior, opt);
  Rng rng = make_rng(config.seed, Stream::Target, fnv1a(response));

  double sigma_acc = 0.0;
  for (std::size_t t = 1; t <= config.iters; ++t) {
    const double sd = std::sqrt(bart.sigma2());
    const auto& f = bart.fit();
    order.sweep(std::span<double>(z), [&](std::size_t i, double lo, double hi) {
      return truncated_normal(rng, f[i], sd, lo, hi);
    });
    bart.step(z, rng);
    if (config.on_iteration) config.on_iteration(t, z, bart);
    if (t > config.burn_in && (t - config.burn_in) % config.thin == 0) {
      const double mean = std::accumulate(z.begin(), z.end(), 0.0) / static_cast<double>(n);
      double ss = 0.0;
      for (double v : z) ss += (v - mean) * (v - mean);
      const double scale = std::sqrt(ss / static_cast<double>(n));
      model.ensembles.push_back(bart.snapshot());
      model.shift.push_back(mean);
      model.scale.push_back(scale);
      sigma_acc += std::sqrt(bart.sigma2()) / scale;
    }
  }
  model.sigma_hat = sigma_acc / static_cast<double>(model.ensembles.size());
  return model;
}

std::vector<double> synthesize_response(const TargetModel& model, const MixedDataset& covariates,
                                        std::uint64_t seed, std::uint64_t stream, std::size_t workers) {
  const auto X = covariate_matrix(covariates, model.covariates);
  const std::size_t q = model.covariates.size();
  std::vector<double> out(covariates.n);
  parallel_for(covariates.n, workers, [&](std::size_t i) {
    Rng rng = make_rng(seed, Stream::TargetSynthesis, stream, i);
    const double z = model.predict(X.data() + i * q) + model.sigma_hat * std_normal(rng);
    out[i] = model.marginal.inverse(norm_cdf(z));
  }, 16);
  return out;
}

}  // namespace rplsyn
