#pragma once

// Auxiliary-task construction: per-type mean embeddings, their cosine
// similarity matrix, and partitions of the mean vectors that minimise the
// within-cluster sum of squares.

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace ufad {

struct MeanFeatureTable {
  std::vector<int> type_ids;  // ascending
  Eigen::MatrixXd rows;       // one row per type
};

struct SimilarityMatrix {
  std::vector<int> type_ids;
  Eigen::MatrixXd values;
};

struct Partition {
  int num_clusters = 0;
  std::vector<int> type_ids;
  std::vector<int> assignment;  // cluster of type_ids[i]
  Eigen::MatrixXd centroids;    // may be empty for non-geometric partitions
  double wcss = 0.0;

  int cluster_of(int type_id) const;
  bool contains(int type_id) const;
  std::vector<std::vector<int>> clusters() const;
  std::vector<int> members(int cluster) const;
};

/// Arithmetic mean per attack type. Every id in `required_types` must have at
/// least one row, otherwise DataError names the missing type.
MeanFeatureTable mean_features(const Eigen::MatrixXd& embeddings, std::span<const int> attack_types,
                               std::span<const int> required_types = {});

SimilarityMatrix similarity_matrix(const MeanFeatureTable& table);

/// Sum of squared distances of each row to the mean of its cluster.
double wcss(const Eigen::MatrixXd& rows, std::span<const int> assignment, int num_clusters);

/// Best-of-restarts Lloyd iterations with distance-weighted seeding.
Partition kmeans_partition(const MeanFeatureTable& table, int num_clusters, int restarts,
                           std::uint64_t seed);

/// Exhaustive search over set partitions into exactly `num_clusters`
/// non-empty blocks. Throws when the enumeration exceeds `max_partitions`.
Partition brute_force_partition(const MeanFeatureTable& table, int num_clusters,
                                std::uint64_t max_partitions = 5'000'000);

/// Partition from explicit clusters of type ids; wcss filled in when a table is given.
Partition manual_partition(const std::vector<std::vector<int>>& clusters,
                           const MeanFeatureTable* table = nullptr);

/// Shuffled round-robin assignment into `num_clusters` non-empty clusters.
Partition random_partition(const std::vector<int>& type_ids, int num_clusters, std::uint64_t seed);

nlohmann::json partition_json(const Partition& p, const std::vector<std::string>& type_names);

}  // namespace ufad
