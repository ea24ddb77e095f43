#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rplsyn/random.hpp"

namespace rplsyn {

struct CovariateInfo {
  std::string name;
  bool categorical = false;
  std::size_t levels = 0;          // categorical only
  std::vector<double> cutpoints;   // numeric only, ascending
};

void to_json(nlohmann::json& j, const CovariateInfo& c);
void from_json(const nlohmann::json& j, CovariateInfo& c);

// Midpoints between consecutive unique values; thinned to at most max_cuts
// evenly spaced midpoints.
std::vector<double> make_cutpoints(std::span<const double> x, std::size_t max_cuts = 100);

// Numeric: x <= cut goes left. Categorical: levels whose bit is set go left.
struct SplitRule {
  std::uint32_t var = 0;
  bool categorical = false;
  double cut = 0.0;
  std::uint64_t left_levels = 0;

  bool goes_left(const double* x) const noexcept {
    if (categorical) return (left_levels >> static_cast<std::uint64_t>(x[var])) & 1u;
    return x[var] <= cut;
  }
};

// Immutable tree for prediction. Node 0 is the root.
class Tree {
 public:
  struct Node {
    std::int32_t left = -1;
    std::int32_t right = -1;
    SplitRule rule;
    double mu = 0.0;
    bool leaf() const noexcept { return left < 0; }
  };

  Tree() : nodes_(1) {}
  explicit Tree(std::vector<Node> nodes) : nodes_(std::move(nodes)) {}

  double predict(const double* x) const noexcept {
    std::int32_t k = 0;
    while (!nodes_[static_cast<std::size_t>(k)].leaf()) {
      const auto& nd = nodes_[static_cast<std::size_t>(k)];
      k = nd.rule.goes_left(x) ? nd.left : nd.right;
    }
    return nodes_[static_cast<std::size_t>(k)].mu;
  }
  const std::vector<Node>& nodes() const noexcept { return nodes_; }
  std::size_t num_leaves() const noexcept;
  std::size_t depth() const noexcept;
  // Structure only (rules, no leaf values), e.g. "[0<=1.5 . [0<=2.5 . .]]".
  std::string signature() const;

  friend void to_json(nlohmann::json& j, const Tree& t);
  friend void from_json(const nlohmann::json& j, Tree& t);

 private:
  std::vector<Node> nodes_;
};

struct BartPrior {
  double a_split = 0.95;
  double b_split = 2.0;
  double nu = 3.0;
  double q = 0.9;
  std::size_t max_depth = 64;
  double p_grow = 0.4;
  double p_prune = 0.4;
  double p_change = 0.2;
};

void to_json(nlohmann::json& j, const BartPrior& p);
void from_json(const nlohmann::json& j, BartPrior& p);

struct BartOptions {
  std::size_t trees = 200;
  double leaf_sd = 0.1;        // prior sd of each leaf value
  double sigma2 = 1.0;         // initial residual variance
  double lambda = 1.0;         // scaled-inverse-chi-square scale for sigma2
  bool update_sigma = true;
  bool verify_each_tree = false;  // recompute the fit after every tree update
};

// Sum-of-trees Gibbs/Metropolis sampler over a fixed covariate matrix
// (row-major, n x q). The response vector is supplied at every step, so the
// caller can update it between steps.
class BartSampler {
 public:
  BartSampler(std::vector<double> X, std::size_t n, std::vector<CovariateInfo> covariates,
              const BartPrior& prior, const BartOptions& options);

  std::size_t n() const noexcept { return n_; }
  std::size_t num_covariates() const noexcept { return q_; }
  std::size_t num_trees() const noexcept { return trees_.size(); }
  const std::vector<double>& fit() const noexcept { return fit_; }
  double sigma2() const noexcept { return sigma2_; }
  void set_sigma2(double s2) noexcept { sigma2_ = s2; }
  const double* row(std::size_t i) const noexcept { return X_.data() + i * q_; }

  // One backfitting pass over every tree, then sigma2 if enabled.
  void step(std::span<const double> y, Rng& rng);

  std::vector<Tree> snapshot() const;
  // Sum of tree predictions recomputed by traversal.
  std::vector<double> recompute_fit() const;

  struct MoveCounts {
    std::size_t proposed[3] = {0, 0, 0};  // grow, prune, change
    std::size_t accepted[3] = {0, 0, 0};
  };
  const MoveCounts& moves() const noexcept { return moves_; }

 private:
  struct Node {
    std::int32_t parent = -1;
    std::int32_t left = -1;
    std::int32_t right = -1;
    std::uint32_t depth = 0;
    SplitRule rule;
    double mu = 0.0;
    std::vector<std::uint32_t> idx;
    std::uint32_t valid_vars = 0;  // variables with at least one valid rule
    bool leaf() const noexcept { return left < 0; }
  };
  struct WorkTree {
    std::vector<Node> nodes;
    std::vector<std::int32_t> free;
    std::vector<double> fit;  // per observation
  };

  struct RuleChoice {
    std::size_t vars = 0;
    double rules = 0;  // for the chosen variable
    SplitRule rule;
  };

  void update_tree(WorkTree& tree, std::span<const double> resid, Rng& rng);
  bool grow(WorkTree& tree, std::span<const double> resid, Rng& rng);
  bool prune(WorkTree& tree, std::span<const double> resid, Rng& rng);
  bool change(WorkTree& tree, std::span<const double> resid, Rng& rng);
  void draw_leaves(WorkTree& tree, std::span<const double> resid, Rng& rng);

  std::uint32_t count_valid_vars(const std::vector<std::uint32_t>& idx) const;
  double valid_rule_count(const std::vector<std::uint32_t>& idx, std::size_t var,
                          std::vector<std::uint32_t>* present_levels, std::size_t* first_cut) const;
  RuleChoice choose_rule(const std::vector<std::uint32_t>& idx, Rng& rng) const;
  void split(const std::vector<std::uint32_t>& idx, const SplitRule& rule,
             std::vector<std::uint32_t>& left, std::vector<std::uint32_t>& right) const;

  bool growable(const Node& nd) const noexcept {
    return nd.valid_vars > 0 && nd.depth < prior_.max_depth;
  }
  double p_split(const Node& nd) const noexcept;
  double log_ml(std::size_t count, double sum) const noexcept;
  double sum_over(const std::vector<std::uint32_t>& idx, std::span<const double> resid) const;
  double move_prob(int move, std::size_t growable_leaves, std::size_t nogs) const noexcept;
  std::int32_t new_node(WorkTree& tree);

  std::vector<double> X_;
  std::size_t n_;
  std::size_t q_;
  std::vector<CovariateInfo> cov_;
  BartPrior prior_;
  BartOptions opt_;
  std::vector<WorkTree> trees_;
  std::vector<double> fit_;
  double sigma2_;
  MoveCounts moves_;
};

}  // namespace rplsyn
