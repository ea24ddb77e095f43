#include "rplsyn/synthesizer.hpp"

#include <cmath>

#include "rplsyn/error.hpp"
#include "rplsyn/normal.hpp"
#include "rplsyn/parallel.hpp"

namespace rplsyn {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kRegularization = 1e-8;
const double kLogUnderflow = std::log(1e-300);
constexpr std::size_t kMaxAssignmentRetries = 10000;

// Cholesky of an SPD block, regularized once before giving up.
Eigen::LLT<Eigen::MatrixXd> factor_block(const Eigen::MatrixXd& A, const char* what) {
  Eigen::LLT<Eigen::MatrixXd> llt(A);
  if (llt.info() == Eigen::Success) return llt;
  Eigen::MatrixXd reg = A;
  reg.diagonal().array() += kRegularization;
  llt.compute(reg);
  if (llt.info() != Eigen::Success)
    throw Error(Errc::SingularBlock, std::string(what) + " is not positive definite");
  return llt;
}

// Lower factor L with L L' = A for a PSD A; tiny negative pivots from
// rounding are absorbed by the regularization.
Eigen::MatrixXd psd_factor(const Eigen::MatrixXd& A) {
  if (A.rows() == 0) return A;
  Eigen::LLT<Eigen::MatrixXd> llt(A);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(A);
  const Eigen::VectorXd vals = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  Eigen::MatrixXd B = eig.eigenvectors() * vals.asDiagonal();
  // B B' = A; return a lower-triangular equivalent via QR of B'.
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(B.transpose());
  Eigen::MatrixXd R = qr.matrixQR().triangularView<Eigen::Upper>();
  return R.transpose();
}

Eigen::MatrixXd submatrix(const Eigen::MatrixXd& C, std::span<const std::size_t> rows,
                          std::span<const std::size_t> cols) {
  Eigen::MatrixXd out(rows.size(), cols.size());
  for (std::size_t a = 0; a < rows.size(); ++a)
    for (std::size_t b = 0; b < cols.size(); ++b)
      out(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) =
          C(static_cast<Eigen::Index>(rows[a]), static_cast<Eigen::Index>(cols[b]));
  return out;
}

Eigen::VectorXd subvector(const Eigen::VectorXd& v, std::span<const std::size_t> idx) {
  Eigen::VectorXd out(idx.size());
  for (std::size_t a = 0; a < idx.size(); ++a)
    out(static_cast<Eigen::Index>(a)) = v(static_cast<Eigen::Index>(idx[a]));
  return out;
}

std::vector<std::size_t> complement(std::size_t p, std::span<const std::size_t> idx) {
  std::vector<bool> taken(p, false);
  for (auto i : idx) {
    if (i >= p) throw Error(Errc::InvalidArgument, "conditioning index out of range");
    taken[i] = true;
  }
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < p; ++i)
    if (!taken[i]) out.push_back(i);
  return out;
}

}  // namespace

std::string_view to_string(DrawSelection s) noexcept {
  return s == DrawSelection::RoundRobin ? "round_robin" : "random";
}

DrawSelection parse_draw_selection(std::string_view text) {
  if (text == "round_robin") return DrawSelection::RoundRobin;
  if (text == "random") return DrawSelection::Random;
  throw Error(Errc::InvalidArgument, "unknown draw selection '" + std::string(text) + "'");
}

std::vector<std::size_t> draw_categoricals(const CategoricalProbTable& probs, Rng& rng) {
  std::vector<std::size_t> out;
  out.reserve(probs.probs.size());
  for (const auto& p : probs.probs) {
    const double u = uniform01(rng);
    double acc = 0.0;
    std::size_t level = p.size() - 1;
    for (std::size_t h = 0; h < p.size(); ++h) {
      acc += p[h];
      if (u < acc) {
        level = h;
        break;
      }
    }
    // Never land on a zero-probability level through rounding at the top.
    while (p[level] <= 0.0 && level > 0) --level;
    out.push_back(level);
  }
  return out;
}

// ---------------------------------------------------------------- TMVN

TruncatedBlockSampler::TruncatedBlockSampler(const Eigen::MatrixXd& C, const Eigen::VectorXd& alpha)
    : alpha_(alpha) {
  if (C.rows() != alpha.size() || C.cols() != alpha.size())
    throw Error(Errc::InvalidArgument, "block dimensions disagree");
  const auto llt = factor_block(C, "categorical correlation block");
  precision_ = llt.solve(Eigen::MatrixXd::Identity(C.rows(), C.cols()));
  precision_ = 0.5 * (precision_ + precision_.transpose());
  cond_sd_ = precision_.diagonal().cwiseInverse().cwiseSqrt();
}

Eigen::VectorXd TruncatedBlockSampler::sample(const std::vector<bool>& positive, Rng& rng,
                                              std::size_t warmup, std::size_t sweeps) const {
  const Eigen::Index d = alpha_.size();
  if (static_cast<Eigen::Index>(positive.size()) != d)
    throw Error(Errc::InvalidArgument, "sign pattern length disagrees with block");
  // Start from independent univariate truncations of the marginals.
  Eigen::VectorXd r(d);  // z - alpha
  for (Eigen::Index j = 0; j < d; ++j) {
    const bool pos = positive[static_cast<std::size_t>(j)];
    const double z = truncated_normal(rng, alpha_(j), 1.0, pos ? 0.0 : -kInf, pos ? kInf : 0.0);
    r(j) = z - alpha_(j);
  }
  for (std::size_t s = 0; s < warmup + sweeps; ++s) {
    for (Eigen::Index j = 0; j < d; ++j) {
      const double qjj = precision_(j, j);
      const double off = precision_.row(j).dot(r) - qjj * r(j);
      const double mean = alpha_(j) - off / qjj;
      const bool pos = positive[static_cast<std::size_t>(j)];
      const double z = truncated_normal(rng, mean, cond_sd_(j), pos ? 0.0 : -kInf, pos ? kInf : 0.0);
      r(j) = z - alpha_(j);
    }
  }
  return r + alpha_;
}

std::vector<bool> assignment_signs(std::span<const std::size_t> widths,
                                   std::span<const std::size_t> assignment) {
  if (widths.size() != assignment.size())
    throw Error(Errc::InvalidArgument, "assignment length disagrees with block count");
  std::vector<bool> pos;
  for (std::size_t b = 0; b < widths.size(); ++b) {
    if (assignment[b] >= widths[b]) throw Error(Errc::InvalidArgument, "level index out of range");
    for (std::size_t h = 0; h < widths[b]; ++h) pos.push_back(h == assignment[b]);
  }
  return pos;
}

Eigen::VectorXd sample_truncated_block(const Eigen::MatrixXd& C, const Eigen::VectorXd& alpha,
                                       std::span<const std::size_t> widths,
                                       std::span<const std::size_t> assignment, Rng& rng) {
  return TruncatedBlockSampler(C, alpha).sample(assignment_signs(widths, assignment), rng);
}

ConditionalGaussian conditional_moments(const Eigen::MatrixXd& C, const Eigen::VectorXd& alpha,
                                        std::span<const std::size_t> given,
                                        const Eigen::VectorXd& z_given) {
  const std::size_t p = static_cast<std::size_t>(C.rows());
  if (static_cast<std::size_t>(z_given.size()) != given.size())
    throw Error(Errc::InvalidArgument, "conditioning value length disagrees with index set");
  const auto rest = complement(p, given);
  const Eigen::MatrixXd Cgg = submatrix(C, given, given);
  const Eigen::MatrixXd Crg = submatrix(C, rest, given);
  const Eigen::MatrixXd Crr = submatrix(C, rest, rest);
  ConditionalGaussian out;
  if (given.empty()) {
    out.alpha_star = subvector(alpha, rest);
    out.C_star = Crr;
    return out;
  }
  const auto llt = factor_block(Cgg, "conditioning block");
  const Eigen::MatrixXd gain = llt.solve(Crg.transpose()).transpose();
  out.alpha_star = subvector(alpha, rest) + gain * (z_given - subvector(alpha, given));
  out.C_star = Crr - gain * Crg.transpose();
  out.C_star = 0.5 * (out.C_star + out.C_star.transpose());
  return out;
}

// ---------------------------------------------------------------- records

CopulaSynthesizer::CopulaSynthesizer(const PosteriorDraws& draws) : draws_(&draws) {
  if (draws.draws.empty()) throw Error(Errc::InvalidArgument, "no posterior draws to synthesize from");
  const auto& layout = draws.layout;
  cat_cols_ = layout.categorical_columns();
  rest_cols_ = layout.rank_columns();
  for (auto b : layout.cat_block_index) widths_.push_back(layout.blocks[b].width);
  if (!cat_cols_.empty() && draws.probs.probs.size() != widths_.size())
    throw Error(Errc::SchemaMismatch, "categorical probability table does not match the layout");
  for (std::size_t c = 0; c < layout.blocks.size(); ++c)
    if (!layout.blocks[c].categorical && (c >= draws.marginals.size() || !draws.marginals[c]))
      throw Error(Errc::SchemaMismatch,
                  "missing marginal estimator for column '" + draws.schema.columns[c].name + "'");

  cache_.resize(draws.draws.size());
  for (std::size_t d = 0; d < draws.draws.size(); ++d) {
    const auto& C = draws.draws[d].C;
    const auto& alpha = draws.draws[d].alpha_tilde;
    auto& dc = cache_[d];
    dc.alpha_cat = subvector(alpha, cat_cols_);
    dc.alpha_rest = subvector(alpha, rest_cols_);
    const Eigen::MatrixXd Crr = submatrix(C, rest_cols_, rest_cols_);
    if (cat_cols_.empty()) {
      dc.chol_rest = psd_factor(Crr);
      continue;
    }
    const Eigen::MatrixXd Ccc = submatrix(C, cat_cols_, cat_cols_);
    dc.block = TruncatedBlockSampler(Ccc, dc.alpha_cat);
    if (rest_cols_.empty()) continue;
    const Eigen::MatrixXd Crc = submatrix(C, rest_cols_, cat_cols_);
    const auto llt = factor_block(Ccc, "categorical correlation block");
    dc.gain = llt.solve(Crc.transpose()).transpose();
    Eigen::MatrixXd Cstar = Crr - dc.gain * Crc.transpose();
    Cstar = 0.5 * (Cstar + Cstar.transpose());
    dc.chol_rest = psd_factor(Cstar);
  }
}

SyntheticRecord CopulaSynthesizer::record(std::size_t draw, Rng& rng, SynthesisStats* stats) const {
  const auto& dc = cache_.at(draw);
  const auto& layout = draws_->layout;
  SyntheticRecord rec;
  rec.values.assign(layout.blocks.size(), 0.0);
  rec.latent.resize(static_cast<Eigen::Index>(layout.p_star));

  if (!cat_cols_.empty()) {
    std::vector<std::size_t> assignment;
    std::vector<bool> signs;
    for (std::size_t attempt = 0;; ++attempt) {
      assignment = draw_categoricals(draws_->probs, rng);
      signs = assignment_signs(widths_, assignment);
      double log_mass = 0.0;
      for (std::size_t j = 0; j < signs.size(); ++j) {
        const double a = dc.alpha_cat(static_cast<Eigen::Index>(j));
        log_mass += std::log(signs[j] ? norm_cdf(a) : norm_ccdf(a));
      }
      if (log_mass >= kLogUnderflow) break;
      if (stats) ++stats->orthant_resamples;
      if (attempt + 1 >= kMaxAssignmentRetries)
        throw Error(Errc::OrthantProbabilityUnderflow,
                    "every drawn categorical assignment has orthant probability below 1e-300");
    }
    const Eigen::VectorXd zc = dc.block.sample(signs, rng);
    for (std::size_t j = 0; j < cat_cols_.size(); ++j)
      rec.latent(static_cast<Eigen::Index>(cat_cols_[j])) = zc(static_cast<Eigen::Index>(j));
    for (std::size_t b = 0; b < layout.cat_block_index.size(); ++b)
      rec.values[layout.blocks[layout.cat_block_index[b]].column] = static_cast<double>(assignment[b]);

    if (stats) {
      const auto decoded =
          decode_categoricals(layout, std::span<const double>(rec.latent.data(), layout.p_star));
      for (std::size_t b = 0; b < decoded.size(); ++b)
        if (!decoded[b] || *decoded[b] != assignment[b]) {
          ++stats->multi_classified;
          break;
        }
    }
  }

  if (!rest_cols_.empty()) {
    const Eigen::Index r = static_cast<Eigen::Index>(rest_cols_.size());
    Eigen::VectorXd mean = dc.alpha_rest;
    if (!cat_cols_.empty()) {
      Eigen::VectorXd zc(static_cast<Eigen::Index>(cat_cols_.size()));
      for (std::size_t j = 0; j < cat_cols_.size(); ++j)
        zc(static_cast<Eigen::Index>(j)) = rec.latent(static_cast<Eigen::Index>(cat_cols_[j]));
      mean += dc.gain * (zc - dc.alpha_cat);
    }
    Eigen::VectorXd eps(r);
    for (Eigen::Index j = 0; j < r; ++j) eps(j) = std_normal(rng);
    const Eigen::VectorXd z = mean + dc.chol_rest.triangularView<Eigen::Lower>() * eps;
    for (std::size_t j = 0; j < rest_cols_.size(); ++j) {
      const std::size_t e = rest_cols_[j];
      const double zj = z(static_cast<Eigen::Index>(j));
      rec.latent(static_cast<Eigen::Index>(e)) = zj;
      const std::size_t col = layout.blocks[layout.origin[e]].column;
      rec.values[col] = draws_->marginals[col]->inverse(norm_cdf(zj));
    }
  }
  if (stats) ++stats->records;
  return rec;
}

MixedDataset CopulaSynthesizer::dataset(std::size_t n_out, std::uint64_t seed, std::size_t index,
                                        DrawSelection selection, std::size_t workers,
                                        SynthesisStats* stats) const {
  const auto& schema = draws_->schema;
  const std::size_t p = schema.columns.size();
  const std::size_t D = cache_.size();
  std::vector<double> cells(n_out * p);
  std::vector<SynthesisStats> per_record(stats ? n_out : 0);

  parallel_for(n_out, workers, [&](std::size_t i) {
    Rng rng = make_rng(seed, Stream::Synthesis, index, i);
    std::size_t draw;
    if (selection == DrawSelection::RoundRobin) {
      draw = (index * n_out + i) % D;
    } else {
      draw = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(D));
      draw = std::min(draw, D - 1);
    }
    const auto rec = record(draw, rng, stats ? &per_record[i] : nullptr);
    std::copy(rec.values.begin(), rec.values.end(), cells.begin() + static_cast<std::ptrdiff_t>(i * p));
  });

  MixedDataset ds = empty_dataset(schema);
  ds.n = n_out;
  for (std::size_t c = 0; c < p; ++c) {
    auto& col = ds.columns[c];
    if (col.schema.type.is_integer()) {
      col.ints.resize(n_out);
      for (std::size_t i = 0; i < n_out; ++i) col.ints[i] = std::llround(cells[i * p + c]);
    } else {
      col.reals.resize(n_out);
      for (std::size_t i = 0; i < n_out; ++i) col.reals[i] = cells[i * p + c];
    }
  }
  if (stats)
    for (const auto& s : per_record) {
      stats->records += s.records;
      stats->orthant_resamples += s.orthant_resamples;
      stats->multi_classified += s.multi_classified;
    }
  return ds;
}

std::vector<MixedDataset> synthesize_datasets(const PosteriorDraws& draws, const SynthesisPlan& plan,
                                              SynthesisStats* stats) {
  if (plan.m < 1) throw Error(Errc::InvalidArgument, "m must be >= 1");
  const std::size_t n_out = plan.n_out ? plan.n_out : draws.n_fit;
  if (n_out < 1) throw Error(Errc::InvalidArgument, "n_out must be >= 1");
  const CopulaSynthesizer synth(draws);
  std::vector<MixedDataset> out;
  out.reserve(plan.m);
  for (std::size_t i = 0; i < plan.m; ++i)
    out.push_back(synth.dataset(n_out, plan.seed, plan.first_index + i, plan.selection, plan.workers,
                                stats));
  return out;
}

}  // namespace rplsyn
