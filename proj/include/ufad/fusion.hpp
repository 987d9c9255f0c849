#pragma once

// Score-level fusion of several detectors: fixed parallel rules, a sequential
// cascade and a small gradient-boosted tree ensemble.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace ufad {

enum class FusionRule { min, median, mean, max, sum };

FusionRule fusion_rule_from_string(const std::string& name);
const char* to_string(FusionRule r);
inline constexpr FusionRule kAllRules[] = {FusionRule::min, FusionRule::median, FusionRule::mean,
                                           FusionRule::max, FusionRule::sum};

/// Sum is divided by k so every rule maps [0,1]^k into [0,1].
double fuse_rule(FusionRule rule, std::span<const double> scores);
double raw_sum(std::span<const double> scores);

struct CascadeDecision {
  bool attack = false;
  int stage = -1;  // stage that flagged the attack, -1 for bona fide
};

/// Evaluates stages lazily in order; stops at the first score above its threshold.
CascadeDecision cascade(std::span<const std::function<double()>> stages, std::span<const double> thresholds);

/// Per-stage thresholds such that each stage flags at most budget[k] of all
/// validation bona fides among those that passed the earlier stages.
/// `stage_scores` is stages x samples, bona fide validation scores only.
std::vector<double> calibrate_cascade(const std::vector<std::vector<double>>& stage_scores,
                                      std::span<const double> budgets);

struct TreeNode {
  int feature = -1;  // -1 for a leaf
  double threshold = 0;
  int left = -1, right = -1;  // x[feature] <= threshold goes left
  double value = 0;
};

struct RegressionTree {
  std::vector<TreeNode> nodes;
  double predict(std::span<const double> x) const;
};

struct StumpEnsemble {
  double init_logit = 0;
  double shrinkage = 0.1;
  std::vector<RegressionTree> trees;

  double logit(std::span<const double> x) const;
  double predict(std::span<const double> x) const;  // sigmoid of logit
  nlohmann::json to_json() const;
  static StumpEnsemble from_json(const nlohmann::json& j);
};

struct GbdtParams {
  int num_trees = 100;
  int max_depth = 3;
  double shrinkage = 0.1;
};

/// Logistic-loss gradient boosting: least-squares trees on the residual
/// y - p, Newton leaf values sum(r) / sum(p(1-p)). `x` is samples x k.
StumpEnsemble fit_gbdt(const Eigen::MatrixXd& x, std::span<const int> labels, GbdtParams params = {});

}  // namespace ufad
