#include "ufad/fusion.hpp"

#include "ufad/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace ufad {

FusionRule fusion_rule_from_string(const std::string& name) {
  for (auto r : kAllRules)
    if (name == to_string(r)) return r;
  throw ConfigError("unknown fusion rule " + name);
}

const char* to_string(FusionRule r) {
  switch (r) {
    case FusionRule::min: return "min";
    case FusionRule::median: return "median";
    case FusionRule::mean: return "mean";
    case FusionRule::max: return "max";
    case FusionRule::sum: return "sum";
  }
  return "?";
}

double raw_sum(std::span<const double> scores) { return std::accumulate(scores.begin(), scores.end(), 0.0); }

double fuse_rule(FusionRule rule, std::span<const double> scores) {
  if (scores.size() < 2) throw DataError("fusion needs at least two detector scores");
  for (double s : scores)
    if (!std::isfinite(s)) throw DataError("non-finite detector score");
  switch (rule) {
    case FusionRule::min: return *std::min_element(scores.begin(), scores.end());
    case FusionRule::max: return *std::max_element(scores.begin(), scores.end());
    case FusionRule::mean:
    case FusionRule::sum: return raw_sum(scores) / double(scores.size());
    case FusionRule::median: {
      std::vector<double> v(scores.begin(), scores.end());
      std::sort(v.begin(), v.end());
      const std::size_t n = v.size();
      return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    }
  }
  throw ConfigError("unknown fusion rule");
}

CascadeDecision cascade(std::span<const std::function<double()>> stages, std::span<const double> thresholds) {
  if (stages.size() != thresholds.size()) throw DataError("cascade needs one threshold per stage");
  for (std::size_t k = 0; k < stages.size(); ++k)
    if (stages[k]() > thresholds[k]) return {true, int(k)};
  return {false, -1};
}

std::vector<double> calibrate_cascade(const std::vector<std::vector<double>>& stage_scores,
                                      std::span<const double> budgets) {
  if (stage_scores.size() != budgets.size()) throw DataError("cascade needs one budget per stage");
  if (stage_scores.empty()) return {};
  const std::size_t n = stage_scores.front().size();
  std::vector<bool> alive(n, true);
  std::vector<double> thresholds;
  for (std::size_t k = 0; k < stage_scores.size(); ++k) {
    if (stage_scores[k].size() != n) throw DataError("cascade stages disagree on sample count");
    std::vector<double> remaining;
    for (std::size_t i = 0; i < n; ++i)
      if (alive[i]) remaining.push_back(stage_scores[k][i]);
    std::sort(remaining.begin(), remaining.end(), std::greater<>());
    const auto allowed = std::size_t(std::floor(budgets[k] * double(n) + 1e-9));
    double t;
    if (remaining.empty() || allowed >= remaining.size()) {
      t = -std::numeric_limits<double>::infinity();
    } else {
      // at most `allowed` remaining scores are strictly above t
      t = remaining[allowed];
    }
    thresholds.push_back(t);
    for (std::size_t i = 0; i < n; ++i)
      if (alive[i] && stage_scores[k][i] > t) alive[i] = false;
  }
  return thresholds;
}

double RegressionTree::predict(std::span<const double> x) const {
  int i = 0;
  while (nodes[std::size_t(i)].feature >= 0) {
    const auto& n = nodes[std::size_t(i)];
    i = x[std::size_t(n.feature)] <= n.threshold ? n.left : n.right;
  }
  return nodes[std::size_t(i)].value;
}

double StumpEnsemble::logit(std::span<const double> x) const {
  double f = init_logit;
  for (const auto& t : trees) f += shrinkage * t.predict(x);
  return f;
}

double StumpEnsemble::predict(std::span<const double> x) const { return 1.0 / (1.0 + std::exp(-logit(x))); }

nlohmann::json StumpEnsemble::to_json() const {
  nlohmann::json j;
  j["init_logit"] = init_logit;
  j["shrinkage"] = shrinkage;
  j["trees"] = nlohmann::json::array();
  for (const auto& t : trees) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& n : t.nodes)
      nodes.push_back({{"feature", n.feature}, {"threshold", n.threshold}, {"left", n.left},
                       {"right", n.right}, {"value", n.value}});
    j["trees"].push_back(nodes);
  }
  return j;
}

StumpEnsemble StumpEnsemble::from_json(const nlohmann::json& j) {
  StumpEnsemble e;
  e.init_logit = j.at("init_logit").get<double>();
  e.shrinkage = j.at("shrinkage").get<double>();
  for (const auto& tj : j.at("trees")) {
    RegressionTree t;
    for (const auto& nj : tj)
      t.nodes.push_back({nj.at("feature").get<int>(), nj.at("threshold").get<double>(), nj.at("left").get<int>(),
                         nj.at("right").get<int>(), nj.at("value").get<double>()});
    e.trees.push_back(std::move(t));
  }
  return e;
}

namespace {

struct Builder {
  const Eigen::MatrixXd& x;
  const std::vector<double>& residual;
  const std::vector<double>& hessian;
  int max_depth;
  RegressionTree tree;

  int leaf(const std::vector<Index>& rows) {
    double g = 0, h = 0;
    for (Index r : rows) {
      g += residual[std::size_t(r)];
      h += hessian[std::size_t(r)];
    }
    TreeNode n;
    n.value = h > 0 ? g / h : 0.0;
    tree.nodes.push_back(n);
    return int(tree.nodes.size()) - 1;
  }

  int build(const std::vector<Index>& rows, int depth) {
    if (depth >= max_depth || rows.size() < 2) return leaf(rows);
    double total = 0;
    for (Index r : rows) total += residual[std::size_t(r)];
    const double n = double(rows.size());
    const double base = total * total / n;
    double best_gain = 1e-12 * std::max(1.0, std::abs(base));
    int best_feature = -1;
    double best_threshold = 0;
    for (Index f = 0; f < x.cols(); ++f) {
      std::vector<Index> order = rows;
      std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return x(a, f) < x(b, f); });
      double left = 0;
      for (std::size_t i = 0; i + 1 < order.size(); ++i) {
        left += residual[std::size_t(order[i])];
        const double xa = x(order[i], f), xb = x(order[i + 1], f);
        if (!(xa < xb)) continue;
        const double nl = double(i + 1), nr = n - nl;
        const double right = total - left;
        const double gain = left * left / nl + right * right / nr - base;
        if (gain > best_gain) {
          best_gain = gain;
          best_feature = int(f);
          best_threshold = 0.5 * (xa + xb);
        }
      }
    }
    if (best_feature < 0) return leaf(rows);
    std::vector<Index> lrows, rrows;
    for (Index r : rows) (x(r, best_feature) <= best_threshold ? lrows : rrows).push_back(r);
    const int id = int(tree.nodes.size());
    tree.nodes.push_back({best_feature, best_threshold, -1, -1, 0});
    const int l = build(lrows, depth + 1);
    const int r = build(rrows, depth + 1);
    tree.nodes[std::size_t(id)].left = l;
    tree.nodes[std::size_t(id)].right = r;
    return id;
  }
};

}  // namespace

StumpEnsemble fit_gbdt(const Eigen::MatrixXd& x, std::span<const int> labels, GbdtParams params) {
  const Index n = x.rows();
  if (Index(labels.size()) != n) throw DataError("gbdt: one label per row required");
  double pos = 0;
  for (int y : labels) pos += y;
  if (pos == 0 || pos == double(n)) throw DataError("gbdt needs both classes");
  StumpEnsemble e;
  e.shrinkage = params.shrinkage;
  e.init_logit = std::log(pos / (double(n) - pos));
  std::vector<double> f(std::size_t(n), e.init_logit), residual(static_cast<std::size_t>(n)), hessian(static_cast<std::size_t>(n));
  std::vector<Index> all(static_cast<std::size_t>(n));
  std::iota(all.begin(), all.end(), Index(0));
  for (int m = 0; m < params.num_trees; ++m) {
    for (Index i = 0; i < n; ++i) {
      const double p = 1.0 / (1.0 + std::exp(-f[std::size_t(i)]));
      residual[std::size_t(i)] = labels[std::size_t(i)] - p;
      hessian[std::size_t(i)] = p * (1 - p);
    }
    Builder b{x, residual, hessian, params.max_depth, {}};
    b.build(all, 0);
    for (Index i = 0; i < n; ++i) {
      Eigen::VectorXd xi = x.row(i).transpose();
      f[std::size_t(i)] += e.shrinkage * b.tree.predict(std::span<const double>(xi.data(), std::size_t(xi.size())));
    }
    e.trees.push_back(std::move(b.tree));
  }
  return e;
}

}  // namespace ufad
