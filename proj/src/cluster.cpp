#include "ufad/cluster.hpp"

#include "ufad/tensor.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <random>

namespace ufad {

int Partition::cluster_of(int type_id) const {
  for (std::size_t i = 0; i < type_ids.size(); ++i)
    if (type_ids[i] == type_id) return assignment[i];
  throw DataError("attack type " + std::to_string(type_id) + " is not in the partition");
}

bool Partition::contains(int type_id) const {
  return std::find(type_ids.begin(), type_ids.end(), type_id) != type_ids.end();
}

std::vector<std::vector<int>> Partition::clusters() const {
  std::vector<std::vector<int>> out(static_cast<std::size_t>(num_clusters));
  for (std::size_t i = 0; i < type_ids.size(); ++i) out[std::size_t(assignment[i])].push_back(type_ids[i]);
  return out;
}

std::vector<int> Partition::members(int cluster) const { return clusters().at(std::size_t(cluster)); }

MeanFeatureTable mean_features(const Eigen::MatrixXd& embeddings, std::span<const int> attack_types,
                               std::span<const int> required_types) {
  if (Index(attack_types.size()) != embeddings.rows())
    throw ShapeError("mean_features: one attack type per embedding row is required");
  std::map<int, std::pair<Eigen::VectorXd, int>> acc;
  for (Index i = 0; i < embeddings.rows(); ++i) {
    auto [it, inserted] = acc.try_emplace(attack_types[std::size_t(i)],
                                          Eigen::VectorXd::Zero(embeddings.cols()), 0);
    it->second.first += embeddings.row(i).transpose();
    it->second.second += 1;
  }
  for (int t : required_types)
    if (!acc.count(t)) throw DataError("attack type " + std::to_string(t) + " has no samples");
  MeanFeatureTable t;
  t.rows.resize(Index(acc.size()), embeddings.cols());
  Index r = 0;
  for (const auto& [type, sum_count] : acc) {
    if (sum_count.second == 0) throw DataError("attack type " + std::to_string(type) + " has no samples");
    t.type_ids.push_back(type);
    t.rows.row(r++) = (sum_count.first / double(sum_count.second)).transpose();
  }
  return t;
}

SimilarityMatrix similarity_matrix(const MeanFeatureTable& table) {
  const Index n = table.rows.rows();
  Eigen::VectorXd norms = table.rows.rowwise().norm();
  for (Index i = 0; i < n; ++i)
    if (!(norms(i) > 0))
      throw DataError("degenerate mean feature for attack type " +
                      std::to_string(table.type_ids[std::size_t(i)]));
  SimilarityMatrix s;
  s.type_ids = table.type_ids;
  s.values = (table.rows * table.rows.transpose()).array() / (norms * norms.transpose()).array();
  for (Index i = 0; i < n; ++i) {
    s.values(i, i) = 1.0;
    for (Index j = 0; j < n; ++j) s.values(i, j) = std::clamp(s.values(i, j), -1.0, 1.0);
  }
  // exact symmetry regardless of rounding in the product
  s.values = (0.5 * (s.values + s.values.transpose())).eval();
  return s;
}

double wcss(const Eigen::MatrixXd& rows, std::span<const int> assignment, int num_clusters) {
  Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(num_clusters, rows.cols());
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(num_clusters);
  for (Index i = 0; i < rows.rows(); ++i) {
    sums.row(assignment[std::size_t(i)]) += rows.row(i);
    counts(assignment[std::size_t(i)]) += 1;
  }
  double total = 0;
  for (Index i = 0; i < rows.rows(); ++i) {
    const int c = assignment[std::size_t(i)];
    total += (rows.row(i) - sums.row(c) / counts(c)).squaredNorm();
  }
  return total;
}

namespace {

// Relabel clusters in order of their smallest member so equal partitions
// compare equal.
void canonicalize(Partition& p) {
  std::vector<int> remap(std::size_t(p.num_clusters), -1);
  int next = 0;
  std::vector<std::size_t> order(p.type_ids.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return p.type_ids[a] < p.type_ids[b]; });
  for (auto i : order) {
    int& r = remap[std::size_t(p.assignment[i])];
    if (r < 0) r = next++;
  }
  Eigen::MatrixXd centroids = p.centroids;
  for (auto& a : p.assignment) a = remap[std::size_t(a)];
  if (centroids.size() > 0)
    for (int c = 0; c < p.num_clusters; ++c) p.centroids.row(remap[std::size_t(c)]) = centroids.row(c);
}

Eigen::MatrixXd centroids_of(const Eigen::MatrixXd& rows, const std::vector<int>& assignment, int k) {
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(k, rows.cols());
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(k);
  for (Index i = 0; i < rows.rows(); ++i) {
    c.row(assignment[std::size_t(i)]) += rows.row(i);
    counts(assignment[std::size_t(i)]) += 1;
  }
  for (int j = 0; j < k; ++j)
    if (counts(j) > 0) c.row(j) /= counts(j);
  return c;
}

std::vector<int> lloyd(const Eigen::MatrixXd& x, Eigen::MatrixXd centroids) {
  const Index n = x.rows();
  const int k = int(centroids.rows());
  std::vector<int> assign(std::size_t(n), -1);
  for (int iter = 0; iter < 200; ++iter) {
    bool changed = false;
    for (Index i = 0; i < n; ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int j = 0; j < k; ++j) {
        const double d = (x.row(i) - centroids.row(j)).squaredNorm();
        if (d < best_d) {  // strict: ties go to the lower index
          best_d = d;
          best = j;
        }
      }
      if (assign[std::size_t(i)] != best) {
        assign[std::size_t(i)] = best;
        changed = true;
      }
    }
    // repair empty clusters from the point farthest from its centroid
    for (int j = 0; j < k; ++j) {
      if (std::count(assign.begin(), assign.end(), j) > 0) continue;
      Index far = -1;
      double far_d = -1;
      for (Index i = 0; i < n; ++i) {
        const int a = assign[std::size_t(i)];
        if (std::count(assign.begin(), assign.end(), a) < 2) continue;
        const double d = (x.row(i) - centroids.row(a)).squaredNorm();
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      assign[std::size_t(far)] = j;
      changed = true;
    }
    centroids = centroids_of(x, assign, k);
    if (!changed) break;
  }
  return assign;
}

}  // namespace

Partition kmeans_partition(const MeanFeatureTable& table, int num_clusters, int restarts,
                           std::uint64_t seed) {
  const Index n = table.rows.rows();
  if (num_clusters < 1) throw DataError("k-means needs at least one cluster");
  if (num_clusters > n)
    throw DataError("k-means: T=" + std::to_string(num_clusters) + " exceeds L=" + std::to_string(n));
  if (restarts < 1) throw DataError("k-means needs at least one restart");
  const Eigen::MatrixXd& x = table.rows;

  Partition best;
  best.wcss = std::numeric_limits<double>::infinity();
  std::mt19937_64 rng(seed);
  for (int r = 0; r < restarts; ++r) {
    // distance-weighted seeding
    Eigen::MatrixXd centroids(num_clusters, x.cols());
    std::uniform_int_distribution<Index> first(0, n - 1);
    centroids.row(0) = x.row(first(rng));
    Eigen::VectorXd d2(n);
    for (int j = 1; j < num_clusters; ++j) {
      for (Index i = 0; i < n; ++i) {
        double m = std::numeric_limits<double>::infinity();
        for (int c = 0; c < j; ++c) m = std::min(m, (x.row(i) - centroids.row(c)).squaredNorm());
        d2(i) = m;
      }
      Index pick = 0;
      if (d2.sum() > 0) {
        std::discrete_distribution<Index> dist(d2.data(), d2.data() + n);
        pick = dist(rng);
      } else {
        pick = first(rng);
      }
      centroids.row(j) = x.row(pick);
    }
    std::vector<int> assign = lloyd(x, centroids);
    const double w = wcss(x, assign, num_clusters);
    if (w < best.wcss) {
      best.wcss = w;
      best.assignment = assign;
    }
  }
  best.num_clusters = num_clusters;
  best.type_ids = table.type_ids;
  best.centroids = centroids_of(x, best.assignment, num_clusters);
  canonicalize(best);
  return best;
}

Partition brute_force_partition(const MeanFeatureTable& table, int num_clusters,
                                std::uint64_t max_partitions) {
  const int n = int(table.rows.rows());
  if (num_clusters < 1 || num_clusters > n) throw DataError("brute force: need 1 <= T <= L");
  // Stirling number of the second kind bounds the enumeration size
  std::vector<std::vector<double>> stirling(std::size_t(n) + 1, std::vector<double>(std::size_t(num_clusters) + 1, 0.0));
  stirling[0][0] = 1;
  for (int i = 1; i <= n; ++i)
    for (int k = 1; k <= num_clusters; ++k)
      stirling[std::size_t(i)][std::size_t(k)] = k * stirling[std::size_t(i - 1)][std::size_t(k)] + stirling[std::size_t(i - 1)][std::size_t(k - 1)];
  if (stirling[std::size_t(n)][std::size_t(num_clusters)] > double(max_partitions))
    throw DataError("brute force partition budget exceeded");

  Partition best;
  best.wcss = std::numeric_limits<double>::infinity();
  // restricted growth strings: a[0]=0, a[i] <= max(a[0..i-1]) + 1
  std::vector<int> a(std::size_t(n), 0);
  std::vector<int> prefix_max(std::size_t(n), 0);
  auto visit = [&] {
    const double w = wcss(table.rows, a, num_clusters);
    if (w < best.wcss) {
      best.wcss = w;
      best.assignment = a;
    }
  };
  auto recurse = [&](auto&& self, int i) -> void {
    if (i == n) {
      if (prefix_max[std::size_t(n - 1)] + 1 == num_clusters) visit();
      return;
    }
    const int m = prefix_max[std::size_t(i - 1)];
    // prune: remaining positions must still be able to open the missing clusters
    for (int v = 0; v <= std::min(m + 1, num_clusters - 1); ++v) {
      const int new_max = std::max(m, v);
      if (num_clusters - 1 - new_max > n - 1 - i) continue;
      a[std::size_t(i)] = v;
      prefix_max[std::size_t(i)] = new_max;
      self(self, i + 1);
    }
  };
  if (n == 1) {
    visit();
  } else {
    recurse(recurse, 1);
  }
  best.num_clusters = num_clusters;
  best.type_ids = table.type_ids;
  best.centroids = centroids_of(table.rows, best.assignment, num_clusters);
  canonicalize(best);
  return best;
}

Partition manual_partition(const std::vector<std::vector<int>>& clusters, const MeanFeatureTable* table) {
  Partition p;
  p.num_clusters = int(clusters.size());
  std::vector<std::pair<int, int>> pairs;
  for (std::size_t c = 0; c < clusters.size(); ++c) {
    if (clusters[c].empty()) throw DataError("partition cluster " + std::to_string(c) + " is empty");
    for (int t : clusters[c]) pairs.emplace_back(t, int(c));
  }
  std::sort(pairs.begin(), pairs.end());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (i > 0 && pairs[i].first == pairs[i - 1].first)
      throw DataError("attack type " + std::to_string(pairs[i].first) + " assigned twice");
    p.type_ids.push_back(pairs[i].first);
    p.assignment.push_back(pairs[i].second);
  }
  if (table) {
    Eigen::MatrixXd rows(Index(p.type_ids.size()), table->rows.cols());
    for (std::size_t i = 0; i < p.type_ids.size(); ++i) {
      auto it = std::find(table->type_ids.begin(), table->type_ids.end(), p.type_ids[i]);
      if (it == table->type_ids.end())
        throw DataError("attack type " + std::to_string(p.type_ids[i]) + " has no mean feature");
      rows.row(Index(i)) = table->rows.row(it - table->type_ids.begin());
    }
    p.wcss = wcss(rows, p.assignment, p.num_clusters);
    p.centroids = centroids_of(rows, p.assignment, p.num_clusters);
  }
  return p;
}

Partition random_partition(const std::vector<int>& type_ids, int num_clusters, std::uint64_t seed) {
  if (num_clusters < 1 || num_clusters > int(type_ids.size()))
    throw DataError("random partition: need 1 <= T <= L");
  std::mt19937_64 rng(seed);
  std::vector<int> order = type_ids;
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<int>> clusters(static_cast<std::size_t>(num_clusters));
  // round-robin after shuffling keeps every cluster non-empty
  for (std::size_t i = 0; i < order.size(); ++i) clusters[i % std::size_t(num_clusters)].push_back(order[i]);
  return manual_partition(clusters);
}

nlohmann::json partition_json(const Partition& p, const std::vector<std::string>& type_names) {
  nlohmann::json j;
  j["T"] = p.num_clusters;
  j["wcss"] = p.wcss;
  nlohmann::json clusters = nlohmann::json::array();
  nlohmann::json ids = nlohmann::json::array();
  for (const auto& c : p.clusters()) {
    nlohmann::json names = nlohmann::json::array();
    for (int t : c) names.push_back(std::size_t(t) < type_names.size() ? type_names[std::size_t(t)] : std::to_string(t));
    clusters.push_back(names);
    ids.push_back(c);
  }
  j["clusters"] = clusters;
  j["cluster_type_ids"] = ids;
  return j;
}

}  // namespace ufad
