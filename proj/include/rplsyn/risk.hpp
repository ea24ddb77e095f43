#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "rplsyn/schema.hpp"

namespace rplsyn {

struct AdversaryScenario {
  std::vector<std::string> known;
  std::string target;
  std::int64_t epsilon = 0;
};

struct RiskReport {
  std::size_t m = 0;
  std::size_t known_count = 0;
  std::int64_t epsilon = 0;
  double cmap_syn = 0.0;
  double cmap_base = 0.0;
  double cmap_uniques = 0.0;       // synthetic release, unique records only
  double cmap_base_uniques = 0.0;
  double risk_reduction = 0.0;     // cmap_base - cmap_syn
  double risk_reduction_uniques = 0.0;
  double matched = 0.0;            // records with a non-empty match set
  double unmatched = 0.0;
  std::size_t uniques = 0;
};

void to_json(nlohmann::json& j, const RiskReport& r);

using KeyTuple = std::vector<std::int64_t>;

struct KeyTupleHash {
  std::size_t operator()(const KeyTuple& k) const noexcept;
};

// Lower-middle order statistic of a non-empty multiset.
std::int64_t lower_median(std::vector<std::int64_t> values);

// 1 iff the match set is non-empty and |median - truth| <= epsilon.
int cmap_record(std::span<const std::int64_t> matches, std::int64_t truth, std::int64_t epsilon);
// Share of matches carrying the true target; 0 for an empty match set.
double cap_record(std::span<const std::int64_t> matches, std::int64_t truth);

// Read-only index from known-column tuples to the pooled target values of a
// release. Known columns must be non-continuous.
class MatchIndex {
 public:
  MatchIndex(std::span<const MixedDataset* const> release, std::span<const std::string> known,
             const std::string& target);

  const std::vector<std::int64_t>* find(const KeyTuple& key) const;
  // Lower-middle median of the match set, cached per key.
  std::optional<std::int64_t> median(const KeyTuple& key) const;

 private:
  struct Entry {
    std::vector<std::int64_t> targets;
    std::int64_t median = 0;
  };
  std::unordered_map<KeyTuple, Entry, KeyTupleHash> map_;
};

KeyTuple record_key(const MixedDataset& ds, std::span<const std::size_t> columns, std::size_t row);

// All target values in the release whose known tuple equals record j's.
std::vector<std::int64_t> match_set(const MixedDataset& confidential, std::size_t j,
                                    std::span<const MixedDataset* const> release,
                                    std::span<const std::string> known, const std::string& target);

// Per-record CMAP indicators against a release; `uniques` marks records
// whose known tuple occurs once in the confidential data.
struct CmapDetail {
  std::vector<int> syn;
  std::vector<int> base;
  std::vector<bool> unique;
  std::vector<bool> matched;
};

CmapDetail cmap_detail(const MixedDataset& confidential, std::span<const MixedDataset* const> release,
                       const AdversaryScenario& scenario);
RiskReport cmap_mean(const MixedDataset& confidential, std::span<const MixedDataset* const> release,
                     const AdversaryScenario& scenario);

// Mean CAP over confidential records for a categorical (or integer) target.
double cap_mean(const MixedDataset& confidential, std::span<const MixedDataset* const> release,
                std::span<const std::string> known, const std::string& target);

struct RiskGrid {
  std::vector<std::size_t> m{5, 10, 20};
  std::vector<std::size_t> known_counts;  // prefixes of `known`; empty means the full list
  std::vector<std::int64_t> epsilon{0, 1, 2};
};

// For every (m, prefix, epsilon), averages CMAP over `reps` draws of m
// datasets chosen without replacement from the pool.
std::vector<RiskReport> risk_study(const MixedDataset& confidential, const std::vector<MixedDataset>& pool,
                                   const std::vector<std::string>& known, const std::string& target,
                                   const RiskGrid& grid, std::size_t reps, std::uint64_t seed,
                                   std::size_t workers = 1);

}  // namespace rplsyn
