#include "rplsyn/risk.hpp"

#include <algorithm>
#include <numeric>

#include "rplsyn/error.hpp"
#include "rplsyn/parallel.hpp"
#include "rplsyn/random.hpp"

namespace rplsyn {

void to_json(nlohmann::json& j, const RiskReport& r) {
  j = nlohmann::json{{"m", r.m},
                     {"known_count", r.known_count},
                     {"epsilon", r.epsilon},
                     {"cmap_syn", r.cmap_syn},
                     {"cmap_base", r.cmap_base},
                     {"cmap_uniques", r.cmap_uniques},
                     {"cmap_base_uniques", r.cmap_base_uniques},
                     {"risk_reduction", r.risk_reduction},
                     {"risk_reduction_uniques", r.risk_reduction_uniques},
                     {"matched", r.matched},
                     {"unmatched", r.unmatched},
                     {"uniques", r.uniques}};
}

std::size_t KeyTupleHash::operator()(const KeyTuple& k) const noexcept {
  std::uint64_t h = 0x9e3779b97f4a7c15ULL;
  for (auto v : k) h = splitmix64(h ^ static_cast<std::uint64_t>(v));
  return static_cast<std::size_t>(h);
}

std::int64_t lower_median(std::vector<std::int64_t> values) {
  if (values.empty()) throw Error(Errc::InvalidArgument, "median of an empty match set");
  const auto mid = values.begin() + static_cast<std::ptrdiff_t>((values.size() - 1) / 2);
  std::nth_element(values.begin(), mid, values.end());
  return *mid;
}

int cmap_record(std::span<const std::int64_t> matches, std::int64_t truth, std::int64_t epsilon) {
  if (epsilon < 0) throw Error(Errc::InvalidArgument, "epsilon must be >= 0");
  if (matches.empty()) return 0;
  const auto med = lower_median(std::vector<std::int64_t>(matches.begin(), matches.end()));
  const std::int64_t gap = med > truth ? med - truth : truth - med;
  return gap <= epsilon ? 1 : 0;
}

double cap_record(std::span<const std::int64_t> matches, std::int64_t truth) {
  if (matches.empty()) return 0.0;
  const auto hits = std::count(matches.begin(), matches.end(), truth);
  return static_cast<double>(hits) / static_cast<double>(matches.size());
}

namespace {

std::vector<std::size_t> key_columns(const MixedDataset& ds, std::span<const std::string> known) {
  std::vector<std::size_t> cols;
  for (const auto& name : known) {
    const auto c = ds.index_of(name);
    if (ds.columns[c].schema.type.kind == Kind::Continuous)
      throw Error(Errc::InvalidArgument, "known column '" + name + "' is continuous; exact matching is undefined");
    cols.push_back(c);
  }
  return cols;
}

std::size_t target_column(const MixedDataset& ds, const std::string& target) {
  const auto c = ds.index_of(target);
  if (ds.columns[c].schema.type.kind == Kind::Continuous)
    throw Error(Errc::InvalidArgument, "target column '" + target + "' must be integer-valued");
  return c;
}

void check_scenario(const AdversaryScenario& s) {
  if (s.epsilon < 0) throw Error(Errc::InvalidArgument, "epsilon must be >= 0");
  if (std::find(s.known.begin(), s.known.end(), s.target) != s.known.end())
    throw Error(Errc::InvalidArgument, "target '" + s.target + "' is also a known column");
}

}  // namespace

KeyTuple record_key(const MixedDataset& ds, std::span<const std::size_t> columns, std::size_t row) {
  KeyTuple k;
  k.reserve(columns.size());
  for (auto c : columns) k.push_back(ds.columns[c].ints[row]);
  return k;
}

MatchIndex::MatchIndex(std::span<const MixedDataset* const> release, std::span<const std::string> known,
                       const std::string& target) {
  for (const auto* ds : release) {
    const auto cols = key_columns(*ds, known);
    const auto t = target_column(*ds, target);
    const auto& tv = ds->columns[t].ints;
    for (std::size_t i = 0; i < ds->n; ++i) map_[record_key(*ds, cols, i)].targets.push_back(tv[i]);
  }
  for (auto& [key, e] : map_) e.median = lower_median(e.targets);
}

const std::vector<std::int64_t>* MatchIndex::find(const KeyTuple& key) const {
  const auto it = map_.find(key);
  return it == map_.end() ? nullptr : &it->second.targets;
}

std::optional<std::int64_t> MatchIndex::median(const KeyTuple& key) const {
  const auto it = map_.find(key);
  if (it == map_.end()) return std::nullopt;
  return it->second.median;
}

std::vector<std::int64_t> match_set(const MixedDataset& confidential, std::size_t j,
                                    std::span<const MixedDataset* const> release,
                                    std::span<const std::string> known, const std::string& target) {
  const auto cols = key_columns(confidential, known);
  const MatchIndex index(release, known, target);
  const auto* found = index.find(record_key(confidential, cols, j));
  return found ? *found : std::vector<std::int64_t>{};
}

CmapDetail cmap_detail(const MixedDataset& confidential, std::span<const MixedDataset* const> release,
                       const AdversaryScenario& scenario) {
  check_scenario(scenario);
  const auto cols = key_columns(confidential, scenario.known);
  const auto& truth = confidential.columns[target_column(confidential, scenario.target)].ints;
  const MatchIndex syn(release, scenario.known, scenario.target);
  const MixedDataset* self[] = {&confidential};
  const MatchIndex base(self, scenario.known, scenario.target);

  CmapDetail d;
  const std::size_t n = confidential.n;
  d.syn.resize(n);
  d.base.resize(n);
  d.unique.resize(n);
  d.matched.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    const auto key = record_key(confidential, cols, j);
    const auto within = [&](std::optional<std::int64_t> med) {
      if (!med) return 0;
      const std::int64_t gap = *med > truth[j] ? *med - truth[j] : truth[j] - *med;
      return gap <= scenario.epsilon ? 1 : 0;
    };
    const auto ms = syn.median(key);
    d.syn[j] = within(ms);
    d.matched[j] = ms.has_value();
    d.base[j] = within(base.median(key));
    d.unique[j] = base.find(key)->size() == 1;
  }
  return d;
}

namespace {

RiskReport summarize(const CmapDetail& d, std::size_t m, std::size_t known_count, std::int64_t eps) {
  RiskReport r;
  r.m = m;
  r.known_count = known_count;
  r.epsilon = eps;
  const std::size_t n = d.syn.size();
  double syn = 0, base = 0, su = 0, bu = 0, matched = 0;
  for (std::size_t j = 0; j < n; ++j) {
    syn += d.syn[j];
    base += d.base[j];
    matched += d.matched[j] ? 1 : 0;
    if (d.unique[j]) {
      ++r.uniques;
      su += d.syn[j];
      bu += d.base[j];
    }
  }
  const double nd = n ? static_cast<double>(n) : 1.0;
  r.cmap_syn = syn / nd;
  r.cmap_base = base / nd;
  r.matched = matched;
  r.unmatched = static_cast<double>(n) - matched;
  if (r.uniques) {
    r.cmap_uniques = su / static_cast<double>(r.uniques);
    r.cmap_base_uniques = bu / static_cast<double>(r.uniques);
  }
  r.risk_reduction = r.cmap_base - r.cmap_syn;
  r.risk_reduction_uniques = r.cmap_base_uniques - r.cmap_uniques;
  return r;
}

}  // namespace

RiskReport cmap_mean(const MixedDataset& confidential, std::span<const MixedDataset* const> release,
                     const AdversaryScenario& scenario) {
  return summarize(cmap_detail(confidential, release, scenario), release.size(), scenario.known.size(),
                   scenario.epsilon);
}

double cap_mean(const MixedDataset& confidential, std::span<const MixedDataset* const> release,
                std::span<const std::string> known, const std::string& target) {
  const auto cols = key_columns(confidential, known);
  const auto& truth = confidential.columns[confidential.index_of(target)].ints;
  const MatchIndex index(release, known, target);
  double acc = 0.0;
  for (std::size_t j = 0; j < confidential.n; ++j) {
    const auto* found = index.find(record_key(confidential, cols, j));
    if (found) acc += cap_record(*found, truth[j]);
  }
  return confidential.n ? acc / static_cast<double>(confidential.n) : 0.0;
}

std::vector<RiskReport> risk_study(const MixedDataset& confidential, const std::vector<MixedDataset>& pool,
                                   const std::vector<std::string>& known, const std::string& target,
                                   const RiskGrid& grid, std::size_t reps, std::uint64_t seed,
                                   std::size_t workers) {
  if (reps == 0) throw Error(Errc::InvalidArgument, "reps must be >= 1");
  std::vector<std::size_t> prefixes = grid.known_counts;
  if (prefixes.empty()) prefixes.push_back(known.size());
  for (auto L : prefixes)
    if (L == 0 || L > known.size()) throw Error(Errc::InvalidArgument, "known-column prefix length out of range");
  for (auto m : grid.m) {
    if (m == 0) throw Error(Errc::InvalidArgument, "m must be >= 1");
    if (m > pool.size())
      throw Error(Errc::InsufficientPool, "pool of " + std::to_string(pool.size()) +
                                              " datasets cannot supply m=" + std::to_string(m));
  }

  std::vector<RiskReport> out;
  for (std::size_t mi = 0; mi < grid.m.size(); ++mi) {
    const std::size_t m = grid.m[mi];
    // Per rep: one report per (prefix, epsilon).
    std::vector<std::vector<RiskReport>> per_rep(reps);
    parallel_for(reps, workers, [&](std::size_t r) {
      Rng rng = make_rng(seed, Stream::Risk, m, r);
      std::vector<std::size_t> order(pool.size());
      std::iota(order.begin(), order.end(), 0);
      for (std::size_t i = 0; i < m; ++i) {
        const std::size_t k = i + std::min(order.size() - i - 1,
                                           static_cast<std::size_t>(uniform01(rng) * static_cast<double>(order.size() - i)));
        std::swap(order[i], order[k]);
      }
      std::vector<const MixedDataset*> release;
      for (std::size_t i = 0; i < m; ++i) release.push_back(&pool[order[i]]);
      for (auto L : prefixes)
        for (auto eps : grid.epsilon) {
          AdversaryScenario s{std::vector<std::string>(known.begin(), known.begin() + static_cast<std::ptrdiff_t>(L)),
                              target, eps};
          per_rep[r].push_back(cmap_mean(confidential, release, s));
        }
    }, 1);
    const std::size_t cells = per_rep[0].size();
    for (std::size_t c = 0; c < cells; ++c) {
      RiskReport avg = per_rep[0][c];
      avg.cmap_syn = avg.cmap_uniques = avg.matched = avg.unmatched = 0.0;
      for (const auto& rep : per_rep) {
        avg.cmap_syn += rep[c].cmap_syn;
        avg.cmap_uniques += rep[c].cmap_uniques;
        avg.matched += rep[c].matched;
        avg.unmatched += rep[c].unmatched;
      }
      const double rd = static_cast<double>(reps);
      avg.cmap_syn /= rd;
      avg.cmap_uniques /= rd;
      avg.matched /= rd;
      avg.unmatched /= rd;
      avg.risk_reduction = avg.cmap_base - avg.cmap_syn;
      avg.risk_reduction_uniques = avg.cmap_base_uniques - avg.cmap_uniques;
      out.push_back(avg);
    }
  }
  return out;
}

}  // namespace rplsyn
