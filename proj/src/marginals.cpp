#include "rplsyn/marginals.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rplsyn/error.hpp"
#include "rplsyn/normal.hpp"

namespace rplsyn {

namespace {

// Beyond this many bandwidths a kernel term is exactly 0 or 1 in double.
constexpr double kKernelReach = 8.5;
constexpr std::size_t kGridSize = 1024;

double quantile_sorted(const std::vector<double>& s, double q) {
  const double pos = q * static_cast<double>(s.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, s.size() - 1);
  return s[lo] + (pos - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

}  // namespace

MarginalEstimator MarginalEstimator::fit(std::span<const double> values, Kind kind) {
  if (values.empty()) throw Error(Errc::EmptyColumn, "cannot fit a marginal to an empty column");
  if (kind == Kind::Categorical)
    throw Error(Errc::InvalidArgument, "categorical columns use CategoricalProbTable");

  MarginalEstimator m;
  m.kind_ = kind;
  m.n_ = values.size();
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  m.lo_ = sorted.front();
  m.hi_ = sorted.back();
  const double n = static_cast<double>(m.n_);
  const double rescale = n / (n + 1.0);

  auto fit_discrete = [&] {
    for (std::size_t i = 0; i < sorted.size();) {
      std::size_t j = i;
      while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
      m.support_.push_back(sorted[i]);
      m.cumulative_.push_back(rescale * static_cast<double>(j) / n);
      i = j;
    }
  };

  if (kind != Kind::Continuous) {
    fit_discrete();
    return m;
  }

  const double mean = std::accumulate(sorted.begin(), sorted.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : sorted) ss += (v - mean) * (v - mean);
  const double sd = m.n_ > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  if (!(sd > 0.0)) {
    warn("continuous column is constant; using a point-mass marginal");
    m.degenerate_ = true;
    fit_discrete();
    return m;
  }
  const double iqr = quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);
  const double spread = iqr > 0.0 ? std::min(sd, iqr / 1.34) : sd;
  m.bandwidth_ = 0.9 * spread * std::pow(n, -0.2);
  m.sample_ = std::move(sorted);

  m.grid_x_.resize(kGridSize);
  m.grid_f_.resize(kGridSize);
  for (std::size_t g = 0; g < kGridSize; ++g) {
    const double x = m.lo_ + (m.hi_ - m.lo_) * static_cast<double>(g) / (kGridSize - 1);
    m.grid_x_[g] = x;
    m.grid_f_[g] = rescale * m.kernel_cdf(x);
  }
  return m;
}

double MarginalEstimator::kernel_cdf(double x) const {
  const double h = bandwidth_;
  const auto first = std::lower_bound(sample_.begin(), sample_.end(), x - kKernelReach * h);
  const auto last = std::upper_bound(first, sample_.end(), x + kKernelReach * h);
  double acc = static_cast<double>(first - sample_.begin());
  for (auto it = first; it != last; ++it) acc += norm_cdf((x - *it) / h);
  return acc / static_cast<double>(n_);
}

double MarginalEstimator::kernel_pdf(double x) const {
  const double h = bandwidth_;
  const auto first = std::lower_bound(sample_.begin(), sample_.end(), x - kKernelReach * h);
  const auto last = std::upper_bound(first, sample_.end(), x + kKernelReach * h);
  double acc = 0.0;
  for (auto it = first; it != last; ++it) acc += norm_pdf((x - *it) / h);
  return acc / (static_cast<double>(n_) * h);
}

double MarginalEstimator::cdf(double v) const {
  if (discrete()) {
    auto it = std::upper_bound(support_.begin(), support_.end(), v);
    if (it == support_.begin()) return 0.0;
    return cumulative_[static_cast<std::size_t>(it - support_.begin()) - 1];
  }
  const double n = static_cast<double>(n_);
  return n / (n + 1.0) * kernel_cdf(v);
}

double MarginalEstimator::inverse(double u) const {
  if (discrete()) {
    auto it = std::lower_bound(cumulative_.begin(), cumulative_.end(), u);
    if (it == cumulative_.end()) return support_.back();
    return support_[static_cast<std::size_t>(it - cumulative_.begin())];
  }
  if (u <= grid_f_.front()) return lo_;
  if (u >= grid_f_.back()) return hi_;
  // Bracket on the tabulated CDF, then safeguarded Newton on the exact one.
  const auto it = std::upper_bound(grid_f_.begin(), grid_f_.end(), u);
  const auto g = static_cast<std::size_t>(it - grid_f_.begin());
  double a = grid_x_[g - 1];
  double b = grid_x_[g];
  const double fa = grid_f_[g - 1];
  const double fb = grid_f_[g];
  double x = fb > fa ? a + (b - a) * (u - fa) / (fb - fa) : 0.5 * (a + b);
  const double scale = static_cast<double>(n_) / (static_cast<double>(n_) + 1.0);
  for (int iter = 0; iter < 60; ++iter) {
    const double f = scale * kernel_cdf(x) - u;
    if (f == 0.0) break;
    if (f < 0.0) a = x;
    else b = x;
    const double d = scale * kernel_pdf(x);
    double next = d > 0.0 ? x - f / d : 0.5 * (a + b);
    if (!(next > a && next < b)) next = 0.5 * (a + b);
    if (std::abs(next - x) <= 1e-13 * std::max(1.0, std::abs(x))) {
      x = next;
      break;
    }
    x = next;
  }
  return std::clamp(x, lo_, hi_);
}

void to_json(nlohmann::json& j, const MarginalEstimator& m) {
  j = nlohmann::json{{"kind", std::string(to_string(m.kind_))},
                     {"n", m.n_},
                     {"degenerate", m.degenerate_}};
  if (m.discrete()) {
    j["support"] = m.support_;
    j["cumulative"] = m.cumulative_;
  } else {
    j["sample"] = m.sample_;
    j["bandwidth"] = m.bandwidth_;
  }
}

void from_json(const nlohmann::json& j, MarginalEstimator& m) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "binary") m.kind_ = Kind::Binary;
  else if (kind == "ordinal") m.kind_ = Kind::Ordinal;
  else if (kind == "count") m.kind_ = Kind::Count;
  else if (kind == "continuous") m.kind_ = Kind::Continuous;
  else throw Error(Errc::ArchiveFormat, "bad marginal kind '" + kind + "'");
  m.n_ = j.at("n").get<std::size_t>();
  m.degenerate_ = j.at("degenerate").get<bool>();
  if (m.discrete()) {
    m.support_ = j.at("support").get<std::vector<double>>();
    m.cumulative_ = j.at("cumulative").get<std::vector<double>>();
    m.lo_ = m.support_.front();
    m.hi_ = m.support_.back();
    return;
  }
  m.sample_ = j.at("sample").get<std::vector<double>>();
  m.bandwidth_ = j.at("bandwidth").get<double>();
  m.lo_ = m.sample_.front();
  m.hi_ = m.sample_.back();
  const double rescale = static_cast<double>(m.n_) / (static_cast<double>(m.n_) + 1.0);
  m.grid_x_.resize(kGridSize);
  m.grid_f_.resize(kGridSize);
  for (std::size_t g = 0; g < kGridSize; ++g) {
    const double x = m.lo_ + (m.hi_ - m.lo_) * static_cast<double>(g) / (kGridSize - 1);
    m.grid_x_[g] = x;
    m.grid_f_[g] = rescale * m.kernel_cdf(x);
  }
}

MarginalEstimator fit_marginal(std::span<const double> column, const VariableKind& kind) {
  return MarginalEstimator::fit(column, kind.kind);
}

// ---------------------------------------------------------------- categorical

std::vector<double> CategoricalProbTable::flat() const {
  std::vector<double> out;
  for (const auto& p : probs) out.insert(out.end(), p.begin(), p.end());
  return out;
}

void to_json(nlohmann::json& j, const CategoricalProbTable& t) {
  j = nlohmann::json{{"names", t.names}, {"probs", t.probs}};
}

void from_json(const nlohmann::json& j, CategoricalProbTable& t) {
  t.names = j.at("names").get<std::vector<std::string>>();
  t.probs = j.at("probs").get<std::vector<std::vector<double>>>();
}

CategoricalProbTable fit_categorical_probs(const MixedDataset& ds) {
  CategoricalProbTable t;
  for (const auto& c : ds.columns) {
    if (!c.schema.type.is_categorical()) continue;
    if (ds.n == 0) throw Error(Errc::EmptyColumn, "column '" + c.schema.name + "' is empty");
    std::vector<double> counts(c.schema.type.levels.size(), 0.0);
    for (auto v : c.ints) counts[static_cast<std::size_t>(v)] += 1.0;
    for (auto& p : counts) p /= static_cast<double>(ds.n);
    t.names.push_back(c.schema.name);
    t.probs.push_back(std::move(counts));
  }
  if (t.probs.empty()) throw Error(Errc::NoCategoricalColumns, "dataset has no categorical columns");
  return t;
}

}  // namespace rplsyn
