#include "rplsyn/factor_model.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "rplsyn/error.hpp"
#include "rplsyn/normal.hpp"

namespace rplsyn {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();

Eigen::VectorXd std_normal_vector(Rng& rng, Eigen::Index k) {
  Eigen::VectorXd v(k);
  for (Eigen::Index h = 0; h < k; ++h) v(h) = std_normal(rng);
  return v;
}
}  // namespace

void to_json(nlohmann::json& j, const HyperParams& h) {
  j = nlohmann::json{{"a_sigma", h.a_sigma}, {"b_sigma", h.b_sigma}, {"nu", h.nu},
                     {"a1", h.a1},           {"a2", h.a2}};
}

void from_json(const nlohmann::json& j, HyperParams& h) {
  h.a_sigma = j.at("a_sigma").get<double>();
  h.b_sigma = j.at("b_sigma").get<double>();
  h.nu = j.at("nu").get<double>();
  h.a1 = j.at("a1").get<double>();
  h.a2 = j.at("a2").get<double>();
}

std::size_t default_factor_count(std::size_t p_star) noexcept {
  return std::clamp<std::size_t>((p_star + 1) / 2, 1, 15);
}

// ---------------------------------------------------------------- RankOrder

RankOrder::RankOrder(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0u);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::uint32_t a, std::uint32_t b) { return values[a] < values[b]; });
  bucket_.assign(n, 0);
  for (std::size_t s = 0; s < n;) {
    std::size_t e = s;
    std::vector<std::uint32_t> group;
    while (e < n && values[order[e]] == values[order[s]]) group.push_back(order[e++]);
    std::sort(group.begin(), group.end());
    for (auto i : group) bucket_[i] = static_cast<std::uint32_t>(members_.size());
    members_.push_back(std::move(group));
    s = e;
  }
}

std::vector<double> RankOrder::initial_latent() const {
  const double n = static_cast<double>(bucket_.size());
  std::vector<double> z(bucket_.size());
  double below = 0.0;
  for (const auto& group : members_) {
    const double m = static_cast<double>(group.size());
    const double mid_rank = below + (m + 1.0) / 2.0;
    const double latent = norm_quantile(mid_rank / (n + 1.0));
    for (auto i : group) z[i] = latent;
    below += m;
  }
  return z;
}

TruncationBounds RankOrder::bounds(std::span<const double> z) const {
  const std::size_t G = members_.size();
  std::vector<double> prefix_max(G + 1, -kInf), suffix_min(G + 1, kInf);
  for (std::size_t g = 0; g < G; ++g) {
    double mx = -kInf;
    for (auto i : members_[g]) mx = std::max(mx, z[i]);
    prefix_max[g + 1] = std::max(prefix_max[g], mx);
  }
  for (std::size_t g = G; g-- > 0;) {
    double mn = kInf;
    for (auto i : members_[g]) mn = std::min(mn, z[i]);
    suffix_min[g] = std::min(suffix_min[g + 1], mn);
  }
  TruncationBounds b;
  b.lower.resize(bucket_.size());
  b.upper.resize(bucket_.size());
  for (std::size_t i = 0; i < bucket_.size(); ++i) {
    const auto g = bucket_[i];
    b.lower[i] = prefix_max[g];
    b.upper[i] = suffix_min[g + 1];
  }
  return b;
}

bool RankOrder::preserves(std::span<const double> z) const {
  double prev_max = -kInf;
  for (const auto& group : members_) {
    double mn = kInf, mx = -kInf;
    for (auto i : group) {
      mn = std::min(mn, z[i]);
      mx = std::max(mx, z[i]);
    }
    if (!(mn > prev_max)) return false;
    prev_max = mx;
  }
  return true;
}

// ---------------------------------------------------------------- constraints

LatentConstraints::LatentConstraints(const MixedDataset& ds, const ExpandedLayout& layout)
    : n_(ds.n), layout_(layout), indicator_(layout.p_star), rank_(layout.p_star) {
  for (const auto& b : layout_.blocks) {
    const auto& col = ds.columns.at(b.column);
    if (b.categorical) {
      for (std::size_t w = 0; w < b.width; ++w) {
        auto& flags = indicator_[b.offset + w];
        flags.resize(n_);
        for (std::size_t i = 0; i < n_; ++i)
          flags[i] = col.ints[i] == static_cast<std::int64_t>(w) ? 1 : 0;
      }
    } else {
      const auto values = col.numeric_values();
      rank_[b.offset] = RankOrder(values);
    }
  }
}

TruncationBounds LatentConstraints::bounds(const Eigen::MatrixXd& Z, std::size_t j) const {
  if (is_indicator(j)) {
    TruncationBounds b;
    b.lower.resize(n_);
    b.upper.resize(n_);
    for (std::size_t i = 0; i < n_; ++i) {
      const bool pos = indicator_[j][i] != 0;
      b.lower[i] = pos ? 0.0 : -kInf;
      b.upper[i] = pos ? kInf : 0.0;
    }
    return b;
  }
  const auto col = Z.col(static_cast<Eigen::Index>(j));
  return rank_[j].bounds(std::span<const double>(col.data(), n_));
}

bool LatentConstraints::feasible(const Eigen::MatrixXd& Z) const {
  for (std::size_t j = 0; j < layout_.p_star; ++j) {
    const double* z = Z.col(static_cast<Eigen::Index>(j)).data();
    if (is_indicator(j)) {
      for (std::size_t i = 0; i < n_; ++i) {
        const bool pos = indicator_[j][i] != 0;
        if (pos ? !(z[i] > 0.0) : !(z[i] < 0.0)) return false;
      }
    } else if (!rank_[j].preserves(std::span<const double>(z, n_))) {
      return false;
    }
  }
  return true;
}

TruncationBounds compute_bounds(const MixedDataset& ds, const ExpandedLayout& layout,
                                const Eigen::MatrixXd& Z, std::size_t j) {
  if (j >= layout.p_star) throw Error(Errc::InvalidArgument, "expanded column out of range");
  const auto& b = layout.blocks[layout.origin[j]];
  const auto& col = ds.columns.at(b.column);
  TruncationBounds out;
  if (b.categorical) {
    const auto level = static_cast<std::int64_t>(j - b.offset);
    for (std::size_t i = 0; i < ds.n; ++i) {
      const bool pos = col.ints[i] == level;
      out.lower.push_back(pos ? 0.0 : -kInf);
      out.upper.push_back(pos ? kInf : 0.0);
    }
    return out;
  }
  const auto values = col.numeric_values();
  const auto zc = Z.col(static_cast<Eigen::Index>(j));
  return RankOrder(values).bounds(std::span<const double>(zc.data(), ds.n));
}

// ---------------------------------------------------------------- init

FactorModelState init_state(const LatentConstraints& con, std::size_t k, const HyperParams& prior,
                            Rng& rng) {
  const std::size_t p = con.p_star();
  const std::size_t n = con.n();
  if (k < 1 || k > p)
    throw Error(Errc::InvalidArgument, "factor count k=" + std::to_string(k) +
                                           " must satisfy 1 <= k <= p*=" + std::to_string(p));
  const auto P = static_cast<Eigen::Index>(p);
  const auto N = static_cast<Eigen::Index>(n);
  const auto K = static_cast<Eigen::Index>(k);

  FactorModelState s;
  s.Z.resize(N, P);
  for (std::size_t j = 0; j < p; ++j) {
    const auto J = static_cast<Eigen::Index>(j);
    if (con.is_indicator(j)) {
      for (std::size_t i = 0; i < n; ++i)
        s.Z(static_cast<Eigen::Index>(i), J) = con.positive(i, j) ? 0.5 : -0.5;
    } else {
      const auto z0 = con.rank(j).initial_latent();
      for (std::size_t i = 0; i < n; ++i) s.Z(static_cast<Eigen::Index>(i), J) = z0[i];
    }
  }

  s.delta.resize(K);
  s.tau.resize(K);
  for (Eigen::Index h = 0; h < K; ++h) {
    s.delta(h) = gamma_rate(rng, h == 0 ? prior.a1 : prior.a2, 1.0);
    s.tau(h) = (h == 0 ? 1.0 : s.tau(h - 1)) * s.delta(h);
  }
  s.phi.resize(P, K);
  s.Lambda.resize(P, K);
  for (Eigen::Index j = 0; j < P; ++j)
    for (Eigen::Index h = 0; h < K; ++h) {
      s.phi(j, h) = gamma_rate(rng, prior.nu / 2.0, prior.nu / 2.0);
      s.Lambda(j, h) = std_normal(rng) / std::sqrt(s.phi(j, h) * s.tau(h));
    }
  s.sigma2_inv.resize(P);
  for (Eigen::Index j = 0; j < P; ++j) s.sigma2_inv(j) = gamma_rate(rng, prior.a_sigma, prior.b_sigma);
  s.eta.resize(N, K);
  for (Eigen::Index i = 0; i < N; ++i)
    for (Eigen::Index h = 0; h < K; ++h) s.eta(i, h) = std_normal(rng);
  s.alpha = Eigen::VectorXd::Zero(P);
  for (std::size_t j = 0; j < p; ++j)
    if (con.is_indicator(j)) s.alpha(static_cast<Eigen::Index>(j)) = std_normal(rng);
  return s;
}

FactorModelState init_state(const MixedDataset& ds, const ExpandedLayout& layout, std::size_t k,
                            const HyperParams& prior, std::uint64_t seed) {
  LatentConstraints con(ds, layout);
  Rng rng = make_rng(seed, Stream::Fit);
  return init_state(con, k, prior, rng);
}

// ---------------------------------------------------------------- conditionals

namespace conditional {

Eigen::VectorXd loading_row(const Eigen::MatrixXd& eta, const Eigen::MatrixXd& eta_gram,
                            const Eigen::Ref<const Eigen::VectorXd>& centered_z, double sigma2_inv,
                            const Eigen::Ref<const Eigen::VectorXd>& prior_prec, Rng& rng) {
  Eigen::MatrixXd prec = sigma2_inv * eta_gram;
  prec.diagonal() += prior_prec;
  Eigen::VectorXd rhs = sigma2_inv * (eta.transpose() * centered_z);
  Eigen::LLT<Eigen::MatrixXd> llt(prec);
  Eigen::VectorXd mean = llt.solve(rhs);
  Eigen::VectorXd noise = std_normal_vector(rng, prec.rows());
  return mean + llt.matrixU().solve(noise);
}

double residual_precision(double a_sigma, double b_sigma, std::size_t n, double rss, Rng& rng) {
  return gamma_rate(rng, a_sigma + 0.5 * static_cast<double>(n), b_sigma + 0.5 * rss);
}

Eigen::MatrixXd factor_scores(const Eigen::MatrixXd& Lambda, const Eigen::VectorXd& sigma2_inv,
                              const Eigen::MatrixXd& centered_z, Rng& rng) {
  const Eigen::Index K = Lambda.cols();
  const Eigen::Index N = centered_z.rows();
  const Eigen::MatrixXd weighted = sigma2_inv.asDiagonal() * Lambda;  // S^-1 Lambda
  Eigen::MatrixXd prec = Lambda.transpose() * weighted;
  prec.diagonal().array() += 1.0;
  Eigen::LLT<Eigen::MatrixXd> llt(prec);
  Eigen::MatrixXd mean = llt.solve((centered_z * weighted).transpose());  // K x N
  Eigen::MatrixXd noise(K, N);
  for (Eigen::Index i = 0; i < N; ++i)
    for (Eigen::Index h = 0; h < K; ++h) noise(h, i) = std_normal(rng);
  return (mean + llt.matrixU().solve(noise)).transpose();
}

double local_scale(double nu, double tau_h, double lambda_jh, Rng& rng) {
  return gamma_rate(rng, 0.5 * (nu + 1.0), 0.5 * (nu + tau_h * lambda_jh * lambda_jh));
}

void global_multipliers(Eigen::VectorXd& delta, Eigen::VectorXd& tau, const Eigen::MatrixXd& phi,
                        const Eigen::MatrixXd& Lambda, double a1, double a2, Rng& rng) {
  const Eigen::Index K = delta.size();
  const double p = static_cast<double>(Lambda.rows());
  // Column sums of phi_jl * lambda_jl^2.
  const Eigen::VectorXd weighted =
      (phi.array() * Lambda.array().square()).colwise().sum().transpose();
  for (Eigen::Index h = 0; h < K; ++h) {
    double acc = 0.0;
    for (Eigen::Index l = h; l < K; ++l) acc += tau(l) / delta(h) * weighted(l);
    const double shape = (h == 0 ? a1 : a2) + 0.5 * p * static_cast<double>(K - h);
    delta(h) = gamma_rate(rng, shape, 1.0 + 0.5 * acc);
    for (Eigen::Index l = 0; l < K; ++l) tau(l) = (l == 0 ? 1.0 : tau(l - 1)) * delta(l);
  }
}

double intercept(std::size_t n, double sigma2_inv, double residual_sum, Rng& rng) {
  const double prec = static_cast<double>(n) * sigma2_inv + 1.0;
  return sigma2_inv * residual_sum / prec + std_normal(rng) / std::sqrt(prec);
}

}  // namespace conditional

// ---------------------------------------------------------------- sweep

void gibbs_sweep(FactorModelState& s, const LatentConstraints& con, const HyperParams& prior,
                 Rng& rng, const SweepOptions& options) {
  const Eigen::Index P = static_cast<Eigen::Index>(s.p_star());
  const Eigen::Index K = static_cast<Eigen::Index>(s.k());
  const std::size_t n = s.n();

  Eigen::MatrixXd centered = s.Z.rowwise() - s.alpha.transpose();

  // Block 1: factor model parameters.
  if (options.update_loadings) {
    const Eigen::MatrixXd gram = s.eta.transpose() * s.eta;
    for (Eigen::Index j = 0; j < P; ++j) {
      const Eigen::VectorXd prior_prec = (s.phi.row(j).transpose().array() * s.tau.array()).matrix();
      s.Lambda.row(j) = conditional::loading_row(s.eta, gram, centered.col(j), s.sigma2_inv(j),
                                                 prior_prec, rng)
                            .transpose();
    }
  }
  {
    const Eigen::MatrixXd resid = centered - s.eta * s.Lambda.transpose();
    for (Eigen::Index j = 0; j < P; ++j)
      s.sigma2_inv(j) = conditional::residual_precision(prior.a_sigma, prior.b_sigma, n,
                                                        resid.col(j).squaredNorm(), rng);
  }
  s.eta = conditional::factor_scores(s.Lambda, s.sigma2_inv, centered, rng);
  for (Eigen::Index j = 0; j < P; ++j)
    for (Eigen::Index h = 0; h < K; ++h)
      s.phi(j, h) = conditional::local_scale(prior.nu, s.tau(h), s.Lambda(j, h), rng);
  conditional::global_multipliers(s.delta, s.tau, s.phi, s.Lambda, prior.a1, prior.a2, rng);

  // Block 2: categorical intercepts.
  Eigen::MatrixXd fitted = s.eta * s.Lambda.transpose();  // n x p*
  for (Eigen::Index j = 0; j < P; ++j) {
    if (!con.is_indicator(static_cast<std::size_t>(j))) continue;
    const double resid_sum = (s.Z.col(j) - fitted.col(j)).sum();
    s.alpha(j) = conditional::intercept(n, s.sigma2_inv(j), resid_sum, rng);
  }

  // Block 3: latent data, column-major, ascending row within column.
  if (!options.update_latent) return;
  for (Eigen::Index j = 0; j < P; ++j) {
    const auto ju = static_cast<std::size_t>(j);
    const double sd = 1.0 / std::sqrt(s.sigma2_inv(j));
    const double a = s.alpha(j);
    double* z = s.Z.col(j).data();
    const double* f = fitted.col(j).data();
    if (con.is_indicator(ju)) {
      for (std::size_t i = 0; i < n; ++i) {
        const bool pos = con.positive(i, ju);
        z[i] = truncated_normal(rng, a + f[i], sd, pos ? 0.0 : -kInf, pos ? kInf : 0.0);
      }
    } else {
      con.rank(ju).sweep(std::span<double>(z, n), [&](std::size_t i, double lo, double hi) {
        return truncated_normal(rng, a + f[i], sd, lo, hi);
      });
    }
  }
}

// ---------------------------------------------------------------- posterior

PosteriorDraw correlation_scale(const FactorModelState& s) {
  Eigen::MatrixXd omega = s.Lambda * s.Lambda.transpose();
  omega.diagonal() += s.sigma2_inv.cwiseInverse();
  const Eigen::VectorXd d = omega.diagonal().cwiseSqrt();
  const Eigen::VectorXd dinv = d.cwiseInverse();
  PosteriorDraw draw;
  draw.C = dinv.asDiagonal() * omega * dinv.asDiagonal();
  draw.C = 0.5 * (draw.C + draw.C.transpose());
  draw.C.diagonal().setOnes();
  draw.C = draw.C.cwiseMax(-1.0).cwiseMin(1.0);
  draw.alpha_tilde = s.alpha.cwiseProduct(dinv);
  return draw;
}

PosteriorDraw posterior_mean(const PosteriorDraws& draws) {
  if (draws.draws.empty()) throw Error(Errc::InvalidArgument, "no posterior draws");
  PosteriorDraw mean{Eigen::MatrixXd::Zero(draws.draws[0].C.rows(), draws.draws[0].C.cols()),
                     Eigen::VectorXd::Zero(draws.draws[0].alpha_tilde.size())};
  for (const auto& d : draws.draws) {
    mean.C += d.C;
    mean.alpha_tilde += d.alpha_tilde;
  }
  const double m = static_cast<double>(draws.draws.size());
  mean.C /= m;
  mean.alpha_tilde /= m;
  return mean;
}

PosteriorDraws run_chain(const MixedDataset& ds, const ChainConfig& config) {
  if (config.iters <= config.burn_in)
    throw Error(Errc::InvalidArgument, "iters must exceed burn_in");
  if (config.thin == 0) throw Error(Errc::InvalidArgument, "thin must be >= 1");
  ds.validate();

  PosteriorDraws out;
  out.schema = ds.schema();
  out.layout = expand_layout(out.schema);
  out.n_fit = ds.n;
  const LatentConstraints con(ds, out.layout);
  const std::size_t k = config.k ? config.k : default_factor_count(out.layout.p_star);

  Rng rng = make_rng(config.seed, Stream::Fit);
  FactorModelState state = init_state(con, k, config.prior, rng);

  out.draws.reserve((config.iters - config.burn_in) / config.thin);
  for (std::size_t t = 1; t <= config.iters; ++t) {
    gibbs_sweep(state, con, config.prior, rng);
    if (!state.Lambda.allFinite() || !state.sigma2_inv.allFinite() || !state.Z.allFinite() ||
        !state.alpha.allFinite() || !state.delta.allFinite())
      throw Error(Errc::NumericalOverflow, "non-finite sampler state at iteration " + std::to_string(t));
    if (config.on_iteration) config.on_iteration(t, state);
    const bool keep = t > config.burn_in && (t - config.burn_in) % config.thin == 0;
    if (keep) out.draws.push_back(correlation_scale(state));
    if (config.progress && config.progress_every && t % config.progress_every == 0) {
      const auto cur = keep ? out.draws.back() : correlation_scale(state);
      const Eigen::Index P = cur.C.rows();
      double off = 0.0;
      for (Eigen::Index a = 0; a < P; ++a)
        for (Eigen::Index b = a + 1; b < P; ++b) off += std::abs(cur.C(a, b));
      const double pairs = static_cast<double>(P * (P - 1) / 2);
      std::ostringstream msg;
      msg << "iter " << t << "/" << config.iters
          << "  mean|C_off|=" << (pairs > 0 ? off / pairs : 0.0)
          << "  log10 max tau=" << std::log10(state.tau.maxCoeff());
      config.progress(msg.str());
    }
  }

  out.marginals.resize(ds.columns.size());
  for (std::size_t c = 0; c < ds.columns.size(); ++c) {
    const auto& col = ds.columns[c];
    if (col.schema.type.is_categorical()) continue;
    const auto values = col.numeric_values();
    out.marginals[c] = MarginalEstimator::fit(values, col.schema.type.kind);
  }
  if (!out.layout.cat_block_index.empty()) out.probs = fit_categorical_probs(ds);
  return out;
}

std::vector<double> orthant_level_probabilities(const Eigen::MatrixXd& C_block,
                                                const Eigen::VectorXd& alpha_block,
                                                std::size_t draws, Rng& rng) {
  const Eigen::Index k = C_block.rows();
  Eigen::LLT<Eigen::MatrixXd> llt(C_block);
  Eigen::MatrixXd L;
  if (llt.info() == Eigen::Success) {
    L = llt.matrixL();
  } else {
    Eigen::MatrixXd jittered = C_block;
    jittered.diagonal().array() += 1e-8;
    L = Eigen::LLT<Eigen::MatrixXd>(jittered).matrixL();
  }
  std::vector<double> counts(static_cast<std::size_t>(k), 0.0);
  double total = 0.0;
  for (std::size_t d = 0; d < draws; ++d) {
    const Eigen::VectorXd z = alpha_block + L * std_normal_vector(rng, k);
    int positives = 0;
    Eigen::Index level = 0;
    for (Eigen::Index h = 0; h < k; ++h)
      if (z(h) > 0.0) {
        ++positives;
        level = h;
      }
    if (positives == 1) {
      counts[static_cast<std::size_t>(level)] += 1.0;
      total += 1.0;
    }
  }
  for (auto& c : counts) c = total > 0 ? c / total : 0.0;
  return counts;
}

}  // namespace rplsyn
