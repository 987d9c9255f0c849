#pragma once

// Biometric evaluation. Orientation: higher score = more likely attack;
// a sample is flagged as attack when score >= threshold.

#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace ufad {

struct RocPoint {
  double threshold;
  double fdr;
  double tdr;
};

struct RocCurve {
  std::vector<RocPoint> points;  // ascending threshold, first point below min, last above max
  std::size_t num_bona_fide = 0;
  std::size_t num_attack = 0;

  /// `comment` becomes a leading "# ..." line when non-empty.
  void write_csv(const std::string& path, const std::string& comment = "") const;
};

struct OperatingPoint {
  double threshold = 0;
  double tdr = 0;
  double fdr = 0;
};

RocCurve roc_curve(std::span<const double> scores, std::span<const int> labels);

/// Smallest score value whose bona fide flag rate is <= fdr_target; when no
/// observed score qualifies the threshold sits just above the maximum.
OperatingPoint tdr_at_fdr(std::span<const double> scores, std::span<const int> labels, double fdr_target);

struct AccuracyResult {
  double threshold = 0;
  double balanced_accuracy = 0;
  double accuracy = 0;
  std::string policy = "max_balanced_accuracy_on_validation";
};

/// Balanced accuracy at a given threshold.
double balanced_accuracy(std::span<const double> scores, std::span<const int> labels, double threshold);

/// Picks the threshold maximising balanced accuracy on the validation scores
/// (lowest such threshold) and applies it to the test scores.
AccuracyResult accuracy(std::span<const double> val_scores, std::span<const int> val_labels,
                        std::span<const double> test_scores, std::span<const int> test_labels);

struct GroupRate {
  std::size_t count = 0;
  std::size_t detected = 0;
  double tdr = 0;
};

struct Breakdown {
  OperatingPoint overall;
  std::map<int, GroupRate> per_type;
  std::map<std::string, GroupRate> per_category;
};

/// Per-type and per-category TDR at the single global operating threshold.
/// `attack_types` is -1 for bona fides.
Breakdown breakdown(std::span<const double> scores, std::span<const int> labels,
                    std::span<const int> attack_types, const std::map<int, std::string>& category_of_type,
                    double fdr_target);

nlohmann::json to_json(const Breakdown& b, const std::map<int, std::string>& type_names);

}  // namespace ufad
