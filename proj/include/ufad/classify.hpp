#pragma once

// Attack type / category identification by nearest prototype under cosine
// similarity in the concatenated branch-feature space.

#include <Eigen/Dense>

#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace ufad {

struct TypePrototypes {
  std::vector<int> type_ids;  // ascending
  Eigen::MatrixXd rows;       // one mean feature per type
  std::map<int, int> category_of_type;

  nlohmann::json to_json() const;
};

/// Mean feature per attack type. `required_types` must all be present.
TypePrototypes build_prototypes(const Eigen::MatrixXd& features, std::span<const int> attack_types,
                                const std::map<int, int>& category_of_type,
                                std::span<const int> required_types = {});

struct TypePrediction {
  int type_id = -1;
  int category = -1;
  double similarity = 0;
};

/// Highest cosine similarity wins; ties go to the lower type id.
TypePrediction predict_type(const TypePrototypes& protos, const Eigen::VectorXd& feature);

struct ConfusionResult {
  std::vector<int> type_ids;
  Eigen::MatrixXd type_matrix;      // rows truth, cols prediction, row-normalised
  Eigen::MatrixXd category_matrix;  // 3 x 3
  Eigen::MatrixXi type_counts;
  Eigen::MatrixXi category_counts;
  double type_accuracy = 0;
  double category_accuracy = 0;
  std::size_t num_samples = 0;
};

/// Confusion matrices from ground-truth and predicted type ids.
ConfusionResult confusion(std::span<const int> truth, std::span<const int> predicted,
                          const std::map<int, int>& category_of_type, int num_categories = 3);

}  // namespace ufad
