#include "rplsyn/utility.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "rplsyn/error.hpp"
#include "rplsyn/parallel.hpp"
#include "rplsyn/random.hpp"

namespace rplsyn {

namespace {

double inv_gamma(Rng& rng, double shape, double rate) { return 1.0 / gamma_rate(rng, shape, rate); }

double quantile_sorted(const std::vector<double>& s, double q) {
  const double pos = q * static_cast<double>(s.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, s.size() - 1);
  return s[lo] + (pos - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

std::pair<double, double> mean_sd(const std::vector<double>& v) {
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, v.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0};
}

}  // namespace

// ---------------------------------------------------------------- spec

void to_json(nlohmann::json& j, const RegressionSpec& s) {
  nlohmann::json inter = nlohmann::json::array();
  for (const auto& [a, b] : s.interactions) inter.push_back({a, b});
  j = nlohmann::json{{"response", s.response},
                     {"predictors", s.predictors},
                     {"interactions", inter},
                     {"standardize", s.standardize}};
}

void from_json(const nlohmann::json& j, RegressionSpec& s) {
  s.response = j.at("response").get<std::string>();
  s.predictors = j.at("predictors").get<std::vector<std::string>>();
  s.interactions.clear();
  if (j.contains("interactions"))
    for (const auto& p : j.at("interactions")) {
      if (!p.is_array() || p.size() != 2)
        throw Error(Errc::InvalidArgument, "interactions must be pairs of predictor names");
      s.interactions.emplace_back(p.at(0).get<std::string>(), p.at(1).get<std::string>());
    }
  s.standardize = j.value("standardize", true);
}

RegressionSpec load_regression_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, "cannot read regression spec '" + path.string() + "'");
  try {
    return nlohmann::json::parse(in).get<RegressionSpec>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidArgument, "bad regression spec '" + path.string() + "': " + e.what());
  }
}

// ---------------------------------------------------------------- design

DesignBuilder::DesignBuilder(const RegressionSpec& spec, const MixedDataset& reference) : spec_(spec) {
  const auto& resp = reference.column(spec.response);
  if (resp.schema.type.is_categorical())
    throw Error(Errc::NonNumericResponse, "response '" + spec.response + "' is categorical");
  names_.push_back("(Intercept)");
  for (const auto& name : spec.predictors) {
    const auto& col = reference.column(name);
    Term t;
    t.column = name;
    t.categorical = col.schema.type.is_categorical();
    t.levels = col.schema.type.num_levels();
    if (!t.categorical && spec.standardize && col.schema.type.kind != Kind::Binary) {
      const auto [m, sd] = mean_sd(col.numeric_values());
      t.center = m;
      t.scale = sd > 0.0 ? sd : 1.0;
    }
    terms_.push_back(t);
    if (t.categorical) {
      for (std::size_t l = 1; l < t.levels; ++l) names_.push_back(name + "=" + col.schema.type.levels[l]);
    } else {
      names_.push_back(name);
    }
  }
  auto term_index = [&](const std::string& name) {
    for (std::size_t k = 0; k < terms_.size(); ++k)
      if (terms_[k].column == name) return k;
    throw Error(Errc::InvalidArgument, "interaction references undeclared predictor '" + name + "'");
  };
  for (const auto& [a, b] : spec.interactions) {
    const auto ia = term_index(a);
    const auto ib = term_index(b);
    interactions_.emplace_back(ia, ib);
    const auto& ca = reference.column(a);
    const auto& cb = reference.column(b);
    std::vector<std::string> na, nb;
    if (terms_[ia].categorical)
      for (std::size_t l = 1; l < terms_[ia].levels; ++l) na.push_back(a + "=" + ca.schema.type.levels[l]);
    else
      na.push_back(a);
    if (terms_[ib].categorical)
      for (std::size_t l = 1; l < terms_[ib].levels; ++l) nb.push_back(b + "=" + cb.schema.type.levels[l]);
    else
      nb.push_back(b);
    for (const auto& x : na)
      for (const auto& y : nb) names_.push_back(x + ":" + y);
  }
}

std::vector<Eigen::VectorXd> DesignBuilder::expand(const Term& t, const MixedDataset& ds) const {
  const auto& col = ds.column(t.column);
  const auto n = static_cast<Eigen::Index>(ds.n);
  std::vector<Eigen::VectorXd> out;
  if (t.categorical) {
    if (col.schema.type.num_levels() != t.levels)
      throw Error(Errc::SchemaMismatch, "predictor '" + t.column + "' changed its level set");
    for (std::size_t l = 1; l < t.levels; ++l) {
      Eigen::VectorXd v(n);
      for (Eigen::Index i = 0; i < n; ++i)
        v(i) = col.ints[static_cast<std::size_t>(i)] == static_cast<std::int64_t>(l) ? 1.0 : 0.0;
      out.push_back(std::move(v));
    }
  } else {
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = (col.numeric(static_cast<std::size_t>(i)) - t.center) / t.scale;
    out.push_back(std::move(v));
  }
  return out;
}

Eigen::MatrixXd DesignBuilder::design(const MixedDataset& ds) const {
  const auto n = static_cast<Eigen::Index>(ds.n);
  Eigen::MatrixXd X(n, static_cast<Eigen::Index>(names_.size()));
  X.col(0).setOnes();
  Eigen::Index c = 1;
  std::vector<std::vector<Eigen::VectorXd>> cols;
  for (const auto& t : terms_) {
    cols.push_back(expand(t, ds));
    for (const auto& v : cols.back()) X.col(c++) = v;
  }
  for (const auto& [a, b] : interactions_)
    for (const auto& va : cols[a])
      for (const auto& vb : cols[b]) X.col(c++) = va.cwiseProduct(vb);
  return X;
}

Eigen::VectorXd DesignBuilder::response(const MixedDataset& ds) const {
  const auto& col = ds.column(spec_.response);
  if (col.schema.type.is_categorical())
    throw Error(Errc::NonNumericResponse, "response '" + spec_.response + "' is categorical");
  Eigen::VectorXd y(static_cast<Eigen::Index>(ds.n));
  for (std::size_t i = 0; i < ds.n; ++i) y(static_cast<Eigen::Index>(i)) = col.numeric(i);
  return y;
}

void to_json(nlohmann::json& j, const Coefficient& c) {
  j = nlohmann::json{{"name", c.name}, {"estimate", c.estimate}, {"sd", c.sd}, {"lower", c.lower}, {"upper", c.upper}};
}

// ---------------------------------------------------------------- horseshoe

CoefficientSummary fit_horseshoe(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                 const std::vector<std::string>& names, const HorseshoeConfig& config,
                                 std::uint64_t stream) {
  const Eigen::Index n = X.rows();
  const Eigen::Index p = X.cols();
  if (y.size() != n || static_cast<Eigen::Index>(names.size()) != p)
    throw Error(Errc::InvalidArgument, "design, response and names disagree in size");
  if (config.iters <= config.burn_in) throw Error(Errc::InvalidArgument, "iters must exceed burn_in");
  if (n < 2 || (y.array() - y.mean()).abs().maxCoeff() == 0.0)
    throw Error(Errc::DegenerateResponse, "response has zero variance");
  const Eigen::Index k = p - 1;

  Rng rng = make_rng(config.seed, Stream::Utility, stream);
  const Eigen::MatrixXd XtX = X.transpose() * X;
  const Eigen::VectorXd Xty = X.transpose() * y;

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  beta(0) = y.mean();
  double sigma2 = (y.array() - y.mean()).square().sum() / static_cast<double>(n - 1);
  Eigen::VectorXd lambda2 = Eigen::VectorXd::Ones(k), nu = Eigen::VectorXd::Ones(k);
  double tau2 = config.fixed_tau ? *config.fixed_tau * *config.fixed_tau : 1.0;
  double xi = 1.0;

  const std::size_t kept = config.iters - config.burn_in;
  Eigen::MatrixXd draws(static_cast<Eigen::Index>(kept), p);
  Eigen::VectorXd eps(p);
  for (std::size_t t = 1; t <= config.iters; ++t) {
    Eigen::MatrixXd A = XtX;
    for (Eigen::Index j = 0; j < k; ++j) A(j + 1, j + 1) += 1.0 / (lambda2(j) * tau2);
    Eigen::LLT<Eigen::MatrixXd> llt(A);
    if (llt.info() != Eigen::Success) {
      A.diagonal().array() += 1e-8;
      llt.compute(A);
      if (llt.info() != Eigen::Success) throw Error(Errc::RankDeficient, "design matrix is rank deficient");
    }
    for (Eigen::Index j = 0; j < p; ++j) eps(j) = std_normal(rng);
    beta = llt.solve(Xty) + std::sqrt(sigma2) * llt.matrixU().solve(eps);

    const double ssr = (y - X * beta).squaredNorm();
    double pen = 0.0;
    for (Eigen::Index j = 0; j < k; ++j) pen += beta(j + 1) * beta(j + 1) / (lambda2(j) * tau2);
    sigma2 = inv_gamma(rng, 0.5 * static_cast<double>(n + k), 0.5 * (ssr + pen));

    double acc = 0.0;
    for (Eigen::Index j = 0; j < k; ++j) {
      const double b2 = beta(j + 1) * beta(j + 1);
      lambda2(j) = inv_gamma(rng, 1.0, 1.0 / nu(j) + b2 / (2.0 * tau2 * sigma2));
      nu(j) = inv_gamma(rng, 1.0, 1.0 + 1.0 / lambda2(j));
      acc += b2 / lambda2(j);
    }
    if (!config.fixed_tau && k > 0) {
      tau2 = inv_gamma(rng, 0.5 * static_cast<double>(k + 1), 1.0 / xi + acc / (2.0 * sigma2));
      xi = inv_gamma(rng, 1.0, 1.0 + 1.0 / tau2);
    }
    if (t > config.burn_in) draws.row(static_cast<Eigen::Index>(t - config.burn_in - 1)) = beta.transpose();
  }

  CoefficientSummary out;
  for (Eigen::Index j = 0; j < p; ++j) {
    std::vector<double> v(draws.col(j).data(), draws.col(j).data() + draws.rows());
    const auto [m, sd] = mean_sd(v);
    std::sort(v.begin(), v.end());
    out.push_back({names[static_cast<std::size_t>(j)], m, sd, quantile_sorted(v, 0.025), quantile_sorted(v, 0.975)});
  }
  return out;
}

CoefficientSummary fit_bayes_lm(const MixedDataset& ds, const RegressionSpec& spec,
                                const HorseshoeConfig& config, std::uint64_t stream) {
  const DesignBuilder builder(spec, ds);
  return fit_horseshoe(builder.design(ds), builder.response(ds), builder.names(), config, stream);
}

// ---------------------------------------------------------------- combining

std::vector<PooledCoefficient> pool_synthetic(const std::vector<CoefficientSummary>& fits) {
  const std::size_t m = fits.size();
  if (m < 2) throw Error(Errc::InvalidArgument, "combining rules need m >= 2 synthetic fits");
  const std::size_t p = fits[0].size();
  for (const auto& f : fits) {
    if (f.size() != p) throw Error(Errc::MismatchedCoefficientSets, "fits have different coefficient counts");
    for (std::size_t j = 0; j < p; ++j)
      if (f[j].name != fits[0][j].name)
        throw Error(Errc::MismatchedCoefficientSets, "coefficient '" + f[j].name + "' does not line up");
  }
  std::vector<PooledCoefficient> out(p);
  const double md = static_cast<double>(m);
  for (std::size_t j = 0; j < p; ++j) {
    auto& o = out[j];
    o.name = fits[0][j].name;
    for (const auto& f : fits) {
      o.q_bar += f[j].estimate;
      o.u_bar += f[j].sd * f[j].sd;
    }
    o.q_bar /= md;
    o.u_bar /= md;
    for (const auto& f : fits) o.b += (f[j].estimate - o.q_bar) * (f[j].estimate - o.q_bar);
    o.b /= md - 1.0;
    o.T = o.u_bar + o.b / md;
    o.lower = o.q_bar - 1.96 * std::sqrt(o.T);
    o.upper = o.q_bar + 1.96 * std::sqrt(o.T);
  }
  return out;
}

double cio(double l_obs, double u_obs, double l_syn, double u_syn) {
  if (!(u_obs > l_obs) || !(u_syn > l_syn)) throw Error(Errc::ZeroWidthInterval, "interval has zero width");
  const double overlap = std::min(u_obs, u_syn) - std::max(l_obs, l_syn);
  return 0.5 * (overlap / (u_obs - l_obs) + overlap / (u_syn - l_syn));
}

double coef_mse(double beta_obs, double sd_obs, double beta_syn) {
  if (!(sd_obs > 0.0)) throw Error(Errc::ZeroPosteriorSD, "confidential posterior sd is zero");
  const double d = beta_obs - beta_syn;
  return d * d / (sd_obs * sd_obs);
}

double aggregated_utility(double cio_bar, double mse_bar, double pmse) noexcept {
  return (cio_bar + (1.0 - mse_bar) + (1.0 - 4.0 * pmse)) / 3.0;
}

// ---------------------------------------------------------------- pMSE

double pmse_from_scores(std::span<const double> scores, double c) {
  if (scores.empty()) return 0.0;
  double acc = 0.0;
  for (double p : scores) acc += (p - c) * (p - c);
  return acc / static_cast<double>(scores.size());
}

namespace {

struct LogitFit {
  Eigen::VectorXd p;
  bool converged = false;
  double max_abs_eta = 0.0;
};

LogitFit fit_logit(const Eigen::MatrixXd& X, const Eigen::VectorXd& s, double ridge) {
  const Eigen::Index n = X.rows();
  const Eigen::Index k = X.cols();
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(k);
  auto objective = [&](const Eigen::VectorXd& b, Eigen::VectorXd& eta) {
    eta = X * b;
    double ll = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double e = eta(i);
      ll += s(i) * e - (e > 0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e)));
    }
    return ll - 0.5 * ridge * b.tail(k - 1).squaredNorm();
  };
  Eigen::VectorXd eta;
  double ll = objective(beta, eta);
  LogitFit fit;
  for (int iter = 0; iter < 200; ++iter) {
    Eigen::VectorXd p(n), w(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      p(i) = 1.0 / (1.0 + std::exp(-eta(i)));
      w(i) = std::max(p(i) * (1.0 - p(i)), 1e-300);
    }
    Eigen::VectorXd grad = X.transpose() * (s - p);
    Eigen::MatrixXd H = X.transpose() * w.asDiagonal() * X;
    for (Eigen::Index j = 1; j < k; ++j) {
      grad(j) -= ridge * beta(j);
      H(j, j) += ridge;
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
    Eigen::VectorXd step = ldlt.solve(grad);
    if (!step.allFinite()) break;
    const double decrement = grad.dot(step);
    if (decrement < 1e-20 * static_cast<double>(n)) {
      fit.converged = true;
      break;
    }
    double t = 1.0;
    Eigen::VectorXd eta_new;
    double ll_new = objective(beta + step, eta_new);
    while (ll_new < ll && t > 1e-10) {
      t *= 0.5;
      ll_new = objective(beta + t * step, eta_new);
    }
    if (ll_new < ll) {
      fit.converged = true;
      break;
    }
    beta += t * step;
    eta = std::move(eta_new);
    const bool tiny = ll_new - ll <= 1e-15 * (1.0 + std::abs(ll));
    ll = ll_new;
    if (tiny && decrement < 1e-12 * static_cast<double>(n)) {
      fit.converged = true;
      break;
    }
  }
  fit.p.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) fit.p(i) = 1.0 / (1.0 + std::exp(-eta(i)));
  fit.max_abs_eta = eta.cwiseAbs().maxCoeff();
  return fit;
}

}  // namespace

double pmse(const MixedDataset& confidential, const MixedDataset& synthetic) {
  const Schema sa = confidential.schema();
  const Schema sb = synthetic.schema();
  if (sa.columns.size() != sb.columns.size())
    throw Error(Errc::SchemaMismatch, "datasets have different column counts");
  for (std::size_t c = 0; c < sa.columns.size(); ++c)
    if (sa.columns[c].name != sb.columns[c].name || !(sa.columns[c].type == sb.columns[c].type))
      throw Error(Errc::SchemaMismatch, "column '" + sa.columns[c].name + "' differs between datasets");

  const std::size_t n0 = confidential.n, n1 = synthetic.n;
  const auto N = static_cast<Eigen::Index>(n0 + n1);
  std::vector<Eigen::VectorXd> cols;
  cols.push_back(Eigen::VectorXd::Ones(N));
  for (std::size_t c = 0; c < sa.columns.size(); ++c) {
    const auto& a = confidential.columns[c];
    const auto& b = synthetic.columns[c];
    if (a.schema.type.is_categorical()) {
      for (std::size_t l = 1; l < a.schema.type.num_levels(); ++l) {
        Eigen::VectorXd v(N);
        for (std::size_t i = 0; i < n0; ++i) v(static_cast<Eigen::Index>(i)) = a.ints[i] == static_cast<std::int64_t>(l);
        for (std::size_t i = 0; i < n1; ++i)
          v(static_cast<Eigen::Index>(n0 + i)) = b.ints[i] == static_cast<std::int64_t>(l);
        if (v.sum() > 0.0 && v.sum() < static_cast<double>(N)) cols.push_back(std::move(v));
      }
    } else {
      Eigen::VectorXd v(N);
      for (std::size_t i = 0; i < n0; ++i) v(static_cast<Eigen::Index>(i)) = a.numeric(i);
      for (std::size_t i = 0; i < n1; ++i) v(static_cast<Eigen::Index>(n0 + i)) = b.numeric(i);
      const double mean = v.mean();
      const double sd = std::sqrt((v.array() - mean).square().sum() / static_cast<double>(N));
      if (sd > 0.0) cols.push_back((v.array() - mean) / sd);
    }
  }
  Eigen::MatrixXd X(N, static_cast<Eigen::Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c) X.col(static_cast<Eigen::Index>(c)) = cols[c];
  Eigen::VectorXd s(N);
  s.head(static_cast<Eigen::Index>(n0)).setZero();
  s.tail(static_cast<Eigen::Index>(n1)).setOnes();

  LogitFit fit = fit_logit(X, s, 0.0);
  if (!fit.converged || fit.max_abs_eta > 35.0) {
    warn("pMSE discriminator separates the datasets; refitting with a 1e-4 ridge penalty");
    fit = fit_logit(X, s, 1e-4);
  }
  const double c = static_cast<double>(n1) / static_cast<double>(n0 + n1);
  return pmse_from_scores(std::span<const double>(fit.p.data(), static_cast<std::size_t>(N)), c);
}

// ---------------------------------------------------------------- report

void to_json(nlohmann::json& j, const UtilityReport& r) {
  nlohmann::json coefs = nlohmann::json::array();
  for (std::size_t c = 0; c < r.coefficients.size(); ++c) {
    const auto& o = r.observed[c + 1];
    const auto& s = r.pooled[c + 1];
    coefs.push_back({{"name", r.coefficients[c]},
                     {"obs_estimate", o.estimate},
                     {"obs_sd", o.sd},
                     {"obs_interval", {o.lower, o.upper}},
                     {"syn_estimate", s.q_bar},
                     {"syn_variance", s.T},
                     {"syn_interval", {s.lower, s.upper}},
                     {"cio", r.cio[c]},
                     {"mse", r.mse[c]}});
  }
  j = nlohmann::json{{"coefficients", coefs},   {"cio_bar", r.cio_bar}, {"mse_bar", r.mse_bar},
                     {"pmse", r.pmse_mean},     {"U", r.U},             {"pmse_each", r.pmse_each},
                     {"U_each", r.U_each},      {"U_bar", r.U_bar}};
}

UtilityReport evaluate_utility(const MixedDataset& confidential, const std::vector<MixedDataset>& synthetic,
                               const RegressionSpec& spec, const HorseshoeConfig& config, std::size_t workers) {
  if (synthetic.size() < 2) throw Error(Errc::InvalidArgument, "utility needs m >= 2 synthetic datasets");
  const DesignBuilder builder(spec, confidential);
  UtilityReport r;
  r.observed = fit_horseshoe(builder.design(confidential), builder.response(confidential), builder.names(),
                             config, 0);
  const std::size_t m = synthetic.size();
  std::vector<CoefficientSummary> fits(m);
  r.pmse_each.assign(m, 0.0);
  parallel_for(m, workers, [&](std::size_t i) {
    fits[i] = fit_horseshoe(builder.design(synthetic[i]), builder.response(synthetic[i]), builder.names(),
                            config, i + 1);
    r.pmse_each[i] = pmse(confidential, synthetic[i]);
  }, 1);
  r.pooled = pool_synthetic(fits);

  const std::size_t p = r.observed.size();
  for (std::size_t j = 1; j < p; ++j) {
    const auto& o = r.observed[j];
    const auto& s = r.pooled[j];
    r.coefficients.push_back(o.name);
    r.cio.push_back(cio(o.lower, o.upper, s.lower, s.upper));
    r.mse.push_back(coef_mse(o.estimate, o.sd, s.q_bar));
  }
  const double k = static_cast<double>(r.cio.size());
  r.cio_bar = k > 0 ? std::accumulate(r.cio.begin(), r.cio.end(), 0.0) / k : 1.0;
  r.mse_bar = k > 0 ? std::accumulate(r.mse.begin(), r.mse.end(), 0.0) / k : 0.0;
  r.pmse_mean = std::accumulate(r.pmse_each.begin(), r.pmse_each.end(), 0.0) / static_cast<double>(m);
  r.U = aggregated_utility(r.cio_bar, r.mse_bar, r.pmse_mean);

  for (std::size_t i = 0; i < m; ++i) {
    double cs = 0.0, ms = 0.0;
    for (std::size_t j = 1; j < p; ++j) {
      const auto& o = r.observed[j];
      const auto& s = fits[i][j];
      cs += cio(o.lower, o.upper, s.lower, s.upper);
      ms += coef_mse(o.estimate, o.sd, s.estimate);
    }
    r.U_each.push_back(aggregated_utility(k > 0 ? cs / k : 1.0, k > 0 ? ms / k : 0.0, r.pmse_each[i]));
  }
  r.U_bar = std::accumulate(r.U_each.begin(), r.U_each.end(), 0.0) / static_cast<double>(m);
  return r;
}

}  // namespace rplsyn
