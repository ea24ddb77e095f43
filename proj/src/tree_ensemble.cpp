#include "rplsyn/tree_ensemble.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <functional>

#include "rplsyn/error.hpp"

namespace rplsyn {

namespace {

constexpr std::int32_t kDead = -2;

std::size_t pick(Rng& rng, std::size_t k) {
  return std::min(k - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(k)));
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

void to_json(nlohmann::json& j, const CovariateInfo& c) {
  j = nlohmann::json{{"name", c.name}, {"categorical", c.categorical}, {"levels", c.levels},
                     {"cutpoints", c.cutpoints}};
}

void from_json(const nlohmann::json& j, CovariateInfo& c) {
  c.name = j.at("name").get<std::string>();
  c.categorical = j.at("categorical").get<bool>();
  c.levels = j.at("levels").get<std::size_t>();
  c.cutpoints = j.at("cutpoints").get<std::vector<double>>();
}

std::vector<double> make_cutpoints(std::span<const double> x, std::size_t max_cuts) {
  std::vector<double> u(x.begin(), x.end());
  std::sort(u.begin(), u.end());
  u.erase(std::unique(u.begin(), u.end()), u.end());
  std::vector<double> mids;
  for (std::size_t i = 1; i < u.size(); ++i) mids.push_back(0.5 * (u[i - 1] + u[i]));
  if (max_cuts == 0 || mids.size() <= max_cuts) return mids;
  std::vector<double> out;
  out.reserve(max_cuts);
  for (std::size_t k = 0; k < max_cuts; ++k) {
    const double pos = (static_cast<double>(k) + 0.5) * static_cast<double>(mids.size()) /
                       static_cast<double>(max_cuts);
    out.push_back(mids[std::min(mids.size() - 1, static_cast<std::size_t>(pos))]);
  }
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

// ---------------------------------------------------------------- Tree

std::size_t Tree::num_leaves() const noexcept {
  return static_cast<std::size_t>(
      std::count_if(nodes_.begin(), nodes_.end(), [](const Node& n) { return n.leaf(); }));
}

std::size_t Tree::depth() const noexcept {
  std::function<std::size_t(std::int32_t)> rec = [&](std::int32_t k) -> std::size_t {
    const auto& nd = nodes_[static_cast<std::size_t>(k)];
    if (nd.leaf()) return 0;
    return 1 + std::max(rec(nd.left), rec(nd.right));
  };
  return rec(0);
}

std::string Tree::signature() const {
  std::function<std::string(std::int32_t)> rec = [&](std::int32_t k) -> std::string {
    const auto& nd = nodes_[static_cast<std::size_t>(k)];
    if (nd.leaf()) return ".";
    std::string s = "[" + std::to_string(nd.rule.var);
    if (nd.rule.categorical) s += "in" + std::to_string(nd.rule.left_levels);
    else s += "<=" + format_double(nd.rule.cut);
    return s + " " + rec(nd.left) + " " + rec(nd.right) + "]";
  };
  return rec(0);
}

void to_json(nlohmann::json& j, const Tree& t) {
  j = nlohmann::json::array();
  for (const auto& n : t.nodes_)
    j.push_back({n.left, n.right, n.rule.var, n.rule.categorical, n.rule.cut, n.rule.left_levels, n.mu});
}

void from_json(const nlohmann::json& j, Tree& t) {
  t.nodes_.clear();
  for (const auto& e : j) {
    Tree::Node n;
    n.left = e.at(0).get<std::int32_t>();
    n.right = e.at(1).get<std::int32_t>();
    n.rule.var = e.at(2).get<std::uint32_t>();
    n.rule.categorical = e.at(3).get<bool>();
    n.rule.cut = e.at(4).get<double>();
    n.rule.left_levels = e.at(5).get<std::uint64_t>();
    n.mu = e.at(6).get<double>();
    t.nodes_.push_back(n);
  }
  if (t.nodes_.empty()) throw Error(Errc::ArchiveFormat, "tree without nodes");
}

void to_json(nlohmann::json& j, const BartPrior& p) {
  j = nlohmann::json{{"a_split", p.a_split}, {"b_split", p.b_split}, {"nu", p.nu},
                     {"q", p.q},             {"max_depth", p.max_depth}, {"p_grow", p.p_grow},
                     {"p_prune", p.p_prune}, {"p_change", p.p_change}};
}

void from_json(const nlohmann::json& j, BartPrior& p) {
  p.a_split = j.at("a_split").get<double>();
  p.b_split = j.at("b_split").get<double>();
  p.nu = j.at("nu").get<double>();
  p.q = j.at("q").get<double>();
  p.max_depth = j.at("max_depth").get<std::size_t>();
  p.p_grow = j.at("p_grow").get<double>();
  p.p_prune = j.at("p_prune").get<double>();
  p.p_change = j.at("p_change").get<double>();
}

// ---------------------------------------------------------------- sampler

BartSampler::BartSampler(std::vector<double> X, std::size_t n, std::vector<CovariateInfo> covariates,
                         const BartPrior& prior, const BartOptions& options)
    : X_(std::move(X)),
      n_(n),
      q_(covariates.size()),
      cov_(std::move(covariates)),
      prior_(prior),
      opt_(options),
      fit_(n, 0.0),
      sigma2_(options.sigma2) {
  if (X_.size() != n_ * q_) throw Error(Errc::InvalidArgument, "covariate matrix has wrong size");
  if (opt_.trees == 0) throw Error(Errc::InvalidArgument, "tree count must be >= 1");
  if (!(opt_.leaf_sd > 0.0) || !(sigma2_ > 0.0))
    throw Error(Errc::InvalidArgument, "leaf sd and sigma2 must be positive");
  for (const auto& c : cov_)
    if (c.categorical && (c.levels < 2 || c.levels > 63))
      throw Error(Errc::InvalidArgument, "categorical covariate '" + c.name + "' needs 2..63 levels");

  Node root;
  root.idx.resize(n_);
  for (std::size_t i = 0; i < n_; ++i) root.idx[i] = static_cast<std::uint32_t>(i);
  root.valid_vars = count_valid_vars(root.idx);
  trees_.resize(opt_.trees);
  for (auto& t : trees_) {
    t.nodes.push_back(root);
    t.fit.assign(n_, 0.0);
  }
}

double BartSampler::valid_rule_count(const std::vector<std::uint32_t>& idx, std::size_t var,
                                     std::vector<std::uint32_t>* present_levels,
                                     std::size_t* first_cut) const {
  if (idx.empty()) return 0.0;
  const auto& c = cov_[var];
  if (c.categorical) {
    std::uint64_t seen = 0;
    for (auto i : idx) seen |= std::uint64_t{1} << static_cast<std::uint64_t>(X_[i * q_ + var]);
    const int L = std::popcount(seen);
    if (present_levels) {
      present_levels->clear();
      for (std::uint32_t l = 0; l < 64; ++l)
        if ((seen >> l) & 1u) present_levels->push_back(l);
    }
    return L < 2 ? 0.0 : std::ldexp(1.0, L) - 2.0;
  }
  double lo = X_[idx[0] * q_ + var];
  double hi = lo;
  for (auto i : idx) {
    const double v = X_[i * q_ + var];
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const auto first = std::lower_bound(c.cutpoints.begin(), c.cutpoints.end(), lo);
  const auto last = std::lower_bound(first, c.cutpoints.end(), hi);
  if (first_cut) *first_cut = static_cast<std::size_t>(first - c.cutpoints.begin());
  return static_cast<double>(last - first);
}

std::uint32_t BartSampler::count_valid_vars(const std::vector<std::uint32_t>& idx) const {
  std::uint32_t count = 0;
  for (std::size_t v = 0; v < q_; ++v)
    if (valid_rule_count(idx, v, nullptr, nullptr) > 0.0) ++count;
  return count;
}

BartSampler::RuleChoice BartSampler::choose_rule(const std::vector<std::uint32_t>& idx, Rng& rng) const {
  std::vector<std::size_t> vars;
  for (std::size_t v = 0; v < q_; ++v)
    if (valid_rule_count(idx, v, nullptr, nullptr) > 0.0) vars.push_back(v);
  RuleChoice rc;
  rc.vars = vars.size();
  const std::size_t v = vars[pick(rng, vars.size())];
  std::vector<std::uint32_t> present;
  std::size_t first = 0;
  rc.rules = valid_rule_count(idx, v, &present, &first);
  rc.rule.var = static_cast<std::uint32_t>(v);
  if (cov_[v].categorical) {
    rc.rule.categorical = true;
    const std::size_t L = present.size();
    const std::uint64_t full = (std::uint64_t{1} << L) - 1;
    std::uint64_t bits = 0;
    while (bits == 0 || bits == full) bits = rng() & full;
    for (std::size_t b = 0; b < L; ++b)
      if ((bits >> b) & 1u) rc.rule.left_levels |= std::uint64_t{1} << present[b];
  } else {
    rc.rule.cut = cov_[v].cutpoints[first + pick(rng, static_cast<std::size_t>(rc.rules))];
  }
  return rc;
}

void BartSampler::split(const std::vector<std::uint32_t>& idx, const SplitRule& rule,
                        std::vector<std::uint32_t>& left, std::vector<std::uint32_t>& right) const {
  left.clear();
  right.clear();
  for (auto i : idx) (rule.goes_left(row(i)) ? left : right).push_back(i);
}

double BartSampler::p_split(const Node& nd) const noexcept {
  if (!growable(nd)) return 0.0;
  return prior_.a_split * std::pow(1.0 + static_cast<double>(nd.depth), -prior_.b_split);
}

double BartSampler::log_ml(std::size_t count, double sum) const noexcept {
  const double t2 = opt_.leaf_sd * opt_.leaf_sd;
  const double s2 = sigma2_;
  const double c = static_cast<double>(count);
  return -0.5 * std::log1p(c * t2 / s2) + t2 * sum * sum / (2.0 * s2 * (s2 + c * t2));
}

double BartSampler::sum_over(const std::vector<std::uint32_t>& idx, std::span<const double> resid) const {
  double s = 0.0;
  for (auto i : idx) s += resid[i];
  return s;
}

double BartSampler::move_prob(int move, std::size_t growable_leaves, std::size_t nogs) const noexcept {
  const double w[3] = {growable_leaves > 0 ? prior_.p_grow : 0.0, nogs > 0 ? prior_.p_prune : 0.0,
                       nogs > 0 ? prior_.p_change : 0.0};
  const double total = w[0] + w[1] + w[2];
  return total > 0.0 ? w[move] / total : 0.0;
}

std::int32_t BartSampler::new_node(WorkTree& tree) {
  if (!tree.free.empty()) {
    const auto k = tree.free.back();
    tree.free.pop_back();
    tree.nodes[static_cast<std::size_t>(k)] = Node{};
    return k;
  }
  tree.nodes.emplace_back();
  return static_cast<std::int32_t>(tree.nodes.size() - 1);
}

namespace {

template <class Nodes>
bool is_nog(const Nodes& nodes, std::size_t k) {
  const auto& nd = nodes[k];
  return nd.parent != kDead && !nd.leaf() && nodes[static_cast<std::size_t>(nd.left)].leaf() &&
         nodes[static_cast<std::size_t>(nd.right)].leaf();
}

template <class Nodes>
bool sibling_is_leaf(const Nodes& nodes, std::size_t k) {
  const auto parent = nodes[k].parent;
  if (parent < 0) return false;
  const auto& p = nodes[static_cast<std::size_t>(parent)];
  const auto sib = p.left == static_cast<std::int32_t>(k) ? p.right : p.left;
  return nodes[static_cast<std::size_t>(sib)].leaf();
}

}  // namespace

bool BartSampler::grow(WorkTree& tree, std::span<const double> resid, Rng& rng) {
  auto& nodes = tree.nodes;
  std::vector<std::size_t> leaves;
  std::size_t nogs = 0;
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    if (nodes[k].parent == kDead) continue;
    if (nodes[k].leaf() && growable(nodes[k])) leaves.push_back(k);
    if (is_nog(nodes, k)) ++nogs;
  }
  const std::size_t G = leaves.size();
  const std::size_t ell = leaves[pick(rng, G)];
  const RuleChoice rc = choose_rule(nodes[ell].idx, rng);

  Node L, R;
  split(nodes[ell].idx, rc.rule, L.idx, R.idx);
  L.depth = R.depth = nodes[ell].depth + 1;
  L.valid_vars = count_valid_vars(L.idx);
  R.valid_vars = count_valid_vars(R.idx);

  const double ps = p_split(nodes[ell]);
  const double pl = p_split(L);
  const double pr = p_split(R);
  const double sl = sum_over(L.idx, resid);
  const double sr = sum_over(R.idx, resid);
  const std::size_t nogs_new = nogs + 1 - (sibling_is_leaf(nodes, ell) ? 1 : 0);
  const std::size_t G_new = G - 1 + (growable(L) ? 1 : 0) + (growable(R) ? 1 : 0);

  const double log_r = std::log(ps) + std::log1p(-pl) + std::log1p(-pr) - std::log1p(-ps) +
                       log_ml(L.idx.size(), sl) + log_ml(R.idx.size(), sr) -
                       log_ml(nodes[ell].idx.size(), sl + sr) +
                       std::log(move_prob(1, G_new, nogs_new)) - std::log(static_cast<double>(nogs_new)) -
                       std::log(move_prob(0, G, nogs)) + std::log(static_cast<double>(G));
  if (!(std::log(uniform01(rng)) < log_r)) return false;

  const auto li = new_node(tree);
  const auto ri = new_node(tree);
  L.parent = R.parent = static_cast<std::int32_t>(ell);
  nodes[static_cast<std::size_t>(li)] = std::move(L);
  nodes[static_cast<std::size_t>(ri)] = std::move(R);
  nodes[ell].left = li;
  nodes[ell].right = ri;
  nodes[ell].rule = rc.rule;
  return true;
}

bool BartSampler::prune(WorkTree& tree, std::span<const double> resid, Rng& rng) {
  auto& nodes = tree.nodes;
  std::vector<std::size_t> nog_list;
  std::size_t G = 0;
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    if (nodes[k].parent == kDead) continue;
    if (nodes[k].leaf() && growable(nodes[k])) ++G;
    if (is_nog(nodes, k)) nog_list.push_back(k);
  }
  const std::size_t N = nog_list.size();
  const std::size_t eta = nog_list[pick(rng, N)];
  const auto& L = nodes[static_cast<std::size_t>(nodes[eta].left)];
  const auto& R = nodes[static_cast<std::size_t>(nodes[eta].right)];

  const double pe = p_split(nodes[eta]);
  const double pl = p_split(L);
  const double pr = p_split(R);
  const double sl = sum_over(L.idx, resid);
  const double sr = sum_over(R.idx, resid);
  const std::size_t G_new = G - (growable(L) ? 1 : 0) - (growable(R) ? 1 : 0) + (growable(nodes[eta]) ? 1 : 0);
  const std::size_t N_new = N - 1 + (sibling_is_leaf(nodes, eta) ? 1 : 0);

  const double log_r = std::log1p(-pe) - std::log(pe) - std::log1p(-pl) - std::log1p(-pr) +
                       log_ml(nodes[eta].idx.size(), sl + sr) - log_ml(L.idx.size(), sl) -
                       log_ml(R.idx.size(), sr) + std::log(move_prob(0, G_new, N_new)) -
                       std::log(static_cast<double>(G_new)) - std::log(move_prob(1, G, N)) +
                       std::log(static_cast<double>(N));
  if (!(std::log(uniform01(rng)) < log_r)) return false;

  for (auto child : {nodes[eta].left, nodes[eta].right}) {
    auto& c = nodes[static_cast<std::size_t>(child)];
    c.parent = kDead;
    c.idx.clear();
    c.idx.shrink_to_fit();
    tree.free.push_back(child);
  }
  nodes[eta].left = nodes[eta].right = -1;
  nodes[eta].rule = SplitRule{};
  return true;
}

bool BartSampler::change(WorkTree& tree, std::span<const double> resid, Rng& rng) {
  auto& nodes = tree.nodes;
  std::vector<std::size_t> nog_list;
  std::size_t G = 0;
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    if (nodes[k].parent == kDead) continue;
    if (nodes[k].leaf() && growable(nodes[k])) ++G;
    if (is_nog(nodes, k)) nog_list.push_back(k);
  }
  const std::size_t N = nog_list.size();
  const std::size_t eta = nog_list[pick(rng, N)];
  auto& L = nodes[static_cast<std::size_t>(nodes[eta].left)];
  auto& R = nodes[static_cast<std::size_t>(nodes[eta].right)];
  const RuleChoice rc = choose_rule(nodes[eta].idx, rng);

  Node L2, R2;
  split(nodes[eta].idx, rc.rule, L2.idx, R2.idx);
  L2.depth = R2.depth = nodes[eta].depth + 1;
  L2.valid_vars = count_valid_vars(L2.idx);
  R2.valid_vars = count_valid_vars(R2.idx);

  const std::size_t G_new = G - (growable(L) ? 1 : 0) - (growable(R) ? 1 : 0) +
                            (growable(L2) ? 1 : 0) + (growable(R2) ? 1 : 0);
  const double log_r = std::log1p(-p_split(L2)) + std::log1p(-p_split(R2)) - std::log1p(-p_split(L)) -
                       std::log1p(-p_split(R)) + log_ml(L2.idx.size(), sum_over(L2.idx, resid)) +
                       log_ml(R2.idx.size(), sum_over(R2.idx, resid)) -
                       log_ml(L.idx.size(), sum_over(L.idx, resid)) -
                       log_ml(R.idx.size(), sum_over(R.idx, resid)) +
                       std::log(move_prob(2, G_new, N)) - std::log(move_prob(2, G, N));
  if (!(std::log(uniform01(rng)) < log_r)) return false;

  nodes[eta].rule = rc.rule;
  L.idx = std::move(L2.idx);
  L.valid_vars = L2.valid_vars;
  R.idx = std::move(R2.idx);
  R.valid_vars = R2.valid_vars;
  return true;
}

void BartSampler::draw_leaves(WorkTree& tree, std::span<const double> resid, Rng& rng) {
  const double t2 = opt_.leaf_sd * opt_.leaf_sd;
  for (auto& nd : tree.nodes) {
    if (nd.parent == kDead || !nd.leaf()) continue;
    const double c = static_cast<double>(nd.idx.size());
    const double prec = c / sigma2_ + 1.0 / t2;
    const double mean = sum_over(nd.idx, resid) / sigma2_ / prec;
    nd.mu = mean + std_normal(rng) / std::sqrt(prec);
    for (auto i : nd.idx) tree.fit[i] = nd.mu;
  }
}

void BartSampler::update_tree(WorkTree& tree, std::span<const double> resid, Rng& rng) {
  std::size_t G = 0, N = 0;
  for (std::size_t k = 0; k < tree.nodes.size(); ++k) {
    if (tree.nodes[k].parent == kDead) continue;
    if (tree.nodes[k].leaf() && growable(tree.nodes[k])) ++G;
    if (is_nog(tree.nodes, k)) ++N;
  }
  const double pg = move_prob(0, G, N);
  const double pp = move_prob(1, G, N);
  if (pg + pp + move_prob(2, G, N) > 0.0) {
    const double u = uniform01(rng);
    const int move = u < pg ? 0 : (u < pg + pp ? 1 : 2);
    ++moves_.proposed[move];
    bool ok = false;
    if (move == 0) ok = grow(tree, resid, rng);
    else if (move == 1) ok = prune(tree, resid, rng);
    else ok = change(tree, resid, rng);
    if (ok) ++moves_.accepted[move];
  }
  draw_leaves(tree, resid, rng);
}

void BartSampler::step(std::span<const double> y, Rng& rng) {
  if (y.size() != n_) throw Error(Errc::InvalidArgument, "response length disagrees with covariates");
  std::vector<double> partial(n_), resid(n_);
  for (auto& tree : trees_) {
    for (std::size_t i = 0; i < n_; ++i) {
      partial[i] = fit_[i] - tree.fit[i];
      resid[i] = y[i] - partial[i];
    }
    update_tree(tree, resid, rng);
    for (std::size_t i = 0; i < n_; ++i) fit_[i] = partial[i] + tree.fit[i];
    if (opt_.verify_each_tree) {
      const auto fresh = recompute_fit();
      for (std::size_t i = 0; i < n_; ++i)
        if (std::abs(fresh[i] - fit_[i]) > 1e-9)
          throw Error(Errc::NumericalOverflow, "sum-of-trees fit drifted from its trees");
    }
  }
  // Resynchronize so the fit is exactly the ordered sum of the trees.
  std::fill(fit_.begin(), fit_.end(), 0.0);
  for (const auto& tree : trees_)
    for (std::size_t i = 0; i < n_; ++i) fit_[i] += tree.fit[i];

  if (opt_.update_sigma) {
    double ssr = 0.0;
    for (std::size_t i = 0; i < n_; ++i) ssr += (y[i] - fit_[i]) * (y[i] - fit_[i]);
    const double shape = 0.5 * (prior_.nu + static_cast<double>(n_));
    const double rate = 0.5 * (prior_.nu * opt_.lambda + ssr);
    sigma2_ = 1.0 / gamma_rate(rng, shape, rate);
  }
}

std::vector<Tree> BartSampler::snapshot() const {
  std::vector<Tree> out;
  out.reserve(trees_.size());
  for (const auto& wt : trees_) {
    std::vector<Tree::Node> nodes;
    std::function<std::int32_t(std::int32_t)> copy = [&](std::int32_t k) -> std::int32_t {
      const auto& src = wt.nodes[static_cast<std::size_t>(k)];
      const auto me = static_cast<std::int32_t>(nodes.size());
      nodes.emplace_back();
      nodes.back().mu = src.mu;
      if (!src.leaf()) {
        nodes[static_cast<std::size_t>(me)].rule = src.rule;
        const auto l = copy(src.left);
        const auto r = copy(src.right);
        nodes[static_cast<std::size_t>(me)].left = l;
        nodes[static_cast<std::size_t>(me)].right = r;
      }
      return me;
    };
    copy(0);
    out.emplace_back(std::move(nodes));
  }
  return out;
}

std::vector<double> BartSampler::recompute_fit() const {
  const auto trees = snapshot();
  std::vector<double> f(n_, 0.0);
  for (const auto& t : trees)
    for (std::size_t i = 0; i < n_; ++i) f[i] += t.predict(row(i));
  return f;
}

}  // namespace rplsyn
