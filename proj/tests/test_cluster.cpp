#include "ufad/cluster.hpp"
#include "ufad/tensor.hpp"

#include <random>
#include <set>

#include <doctest.h>

using namespace ufad;

namespace {

MeanFeatureTable table_of(const Eigen::MatrixXd& rows) {
  MeanFeatureTable t;
  t.rows = rows;
  for (Index i = 0; i < rows.rows(); ++i) t.type_ids.push_back(int(i));
  return t;
}

Eigen::MatrixXd gaussian(Index n, Index d, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0, 1);
  Eigen::MatrixXd m(n, d);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

// Independent oracle: WCSS of an assignment from explicit centroids.
double wcss_direct(const Eigen::MatrixXd& rows, const std::vector<int>& a, int k) {
  double total = 0;
  for (int c = 0; c < k; ++c) {
    Eigen::RowVectorXd mu = Eigen::RowVectorXd::Zero(rows.cols());
    int n = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (a[i] == c) {
        mu += rows.row(Index(i));
        ++n;
      }
    if (n == 0) return std::numeric_limits<double>::infinity();
    mu /= n;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (a[i] == c) total += (rows.row(Index(i)) - mu).squaredNorm();
  }
  return total;
}

// Same-partition check up to relabelling.
bool same_partition(const Partition& a, const Partition& b) {
  auto blocks = [](const Partition& p) {
    std::set<std::set<int>> out;
    for (const auto& c : p.clusters()) out.insert({c.begin(), c.end()});
    return out;
  };
  return blocks(a) == blocks(b);
}

}  // namespace

TEST_CASE("mean features: singletons, cancellation and naive accumulation") {
  std::mt19937_64 rng(1);
  const Eigen::MatrixXd x = gaussian(4, 6, rng);
  const std::vector<int> ids{3, 0, 2, 1};
  const auto t = mean_features(x, ids);
  CHECK(t.type_ids == std::vector<int>{0, 1, 2, 3});
  for (std::size_t i = 0; i < 4; ++i) CHECK(t.rows.row(ids[i]) == x.row(Index(i)));

  Eigen::MatrixXd pm(2, 3);
  pm.row(0) << 1.5, -2, 0.25;
  pm.row(1) = -pm.row(0);
  const std::vector<int> same{4, 4};
  CHECK(mean_features(pm, same).rows.cwiseAbs().maxCoeff() == 0.0);

  const Eigen::MatrixXd big = gaussian(50, 7, rng);
  std::vector<int> types(50);
  std::uniform_int_distribution<int> pick(0, 4);
  for (int& v : types) v = pick(rng);
  for (int k = 0; k < 5; ++k) types[std::size_t(k)] = k;
  const auto m = mean_features(big, types);
  for (int k = 0; k < 5; ++k) {
    Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(7);
    int n = 0;
    for (int i = 0; i < 50; ++i)
      if (types[std::size_t(i)] == k) {
        sum += big.row(i);
        ++n;
      }
    CHECK((m.rows.row(k) - sum / n).cwiseAbs().maxCoeff() < 1e-12);
  }

  const std::vector<int> required{0, 1, 2, 3, 4, 5};
  try {
    mean_features(big, types, required);
    FAIL("expected a data error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("5") != std::string::npos);
  }
}

TEST_CASE("cosine similarity matrix examples") {
  Eigen::MatrixXd same(3, 4);
  same.rowwise() = Eigen::RowVector4d(0.3, -1, 2, 0.5);
  CHECK((similarity_matrix(table_of(same)).values.array() - 1.0).abs().maxCoeff() < 1e-15);

  CHECK(similarity_matrix(table_of(Eigen::MatrixXd::Identity(4, 4))).values == Eigen::MatrixXd::Identity(4, 4));

  Eigen::MatrixXd two(2, 2);
  two << 1, 0, 1 / std::sqrt(2.0), 1 / std::sqrt(2.0);
  CHECK(similarity_matrix(table_of(two)).values(0, 1) == doctest::Approx(std::sqrt(2.0) / 2).epsilon(1e-12));

  Eigen::MatrixXd zero = Eigen::MatrixXd::Ones(3, 2);
  zero.row(1).setZero();
  CHECK_THROWS_AS(similarity_matrix(table_of(zero)), DataError);

  std::mt19937_64 rng(2);
  const auto s = similarity_matrix(table_of(gaussian(9, 16, rng))).values;
  CHECK(s == s.transpose());
  for (Index i = 0; i < 9; ++i) CHECK(s(i, i) == 1.0);
  CHECK(s.maxCoeff() <= 1.0);
  CHECK(s.minCoeff() >= -1.0);
}

TEST_CASE("k-means degenerate cluster counts") {
  std::mt19937_64 rng(3);
  const auto t = table_of(gaussian(6, 5, rng));
  const auto all = kmeans_partition(t, 6, 10, 1);
  CHECK(all.wcss == doctest::Approx(0.0));
  CHECK(all.clusters().size() == 6);
  for (const auto& c : all.clusters()) CHECK(c.size() == 1);

  const auto one = kmeans_partition(t, 1, 10, 1);
  const Eigen::RowVectorXd mean = t.rows.colwise().mean();
  const double scatter = (t.rows.rowwise() - mean).rowwise().squaredNorm().sum();
  CHECK(one.wcss == doctest::Approx(scatter).epsilon(1e-12));

  CHECK_THROWS_AS(kmeans_partition(t, 7, 10, 1), DataError);
  CHECK(brute_force_partition(t, 6).wcss == doctest::Approx(0.0));
}

TEST_CASE("two tight triads are recovered and match the brute-force optimum") {
  Eigen::MatrixXd x(6, 2);
  x << 0, 0, 0.1, 0, 0, 0.1, 5, 5, 5.1, 5, 5, 5.1;
  const auto t = table_of(x);
  const auto km = kmeans_partition(t, 2, 50, 9);
  CHECK(km.members(km.cluster_of(0)) == std::vector<int>{0, 1, 2});
  CHECK(km.members(km.cluster_of(3)) == std::vector<int>{3, 4, 5});
  CHECK(km.wcss == doctest::Approx(brute_force_partition(t, 2).wcss).epsilon(1e-12));
}

TEST_CASE("brute force equals an independent scan over all 2^6 assignments") {
  std::mt19937_64 rng(4);
  for (int inst = 0; inst < 5; ++inst) {
    const auto x = gaussian(6, 3, rng);
    double best = std::numeric_limits<double>::infinity();
    for (int mask = 0; mask < 64; ++mask) {
      std::vector<int> a(6);
      for (int i = 0; i < 6; ++i) a[std::size_t(i)] = (mask >> i) & 1;
      best = std::min(best, wcss_direct(x, a, 2));
    }
    const auto bf = brute_force_partition(table_of(x), 2);
    CHECK(bf.wcss == doctest::Approx(best).epsilon(1e-12));
    CHECK(bf.wcss <= kmeans_partition(table_of(x), 2, 5, 1).wcss + 1e-12);
  }
}

TEST_CASE("partition wcss is self-consistent with its assignment") {
  std::mt19937_64 rng(5);
  for (int inst = 0; inst < 10; ++inst) {
    const auto x = gaussian(8, 4, rng);
    for (int T : {2, 3, 4}) {
      for (const auto& p : {kmeans_partition(table_of(x), T, 5, std::uint64_t(inst)), brute_force_partition(table_of(x), T)}) {
        CHECK(p.wcss == doctest::Approx(wcss_direct(x, p.assignment, T)).epsilon(1e-10));
        CHECK(p.wcss == doctest::Approx(wcss(x, p.assignment, T)).epsilon(1e-12));
        for (const auto& c : p.clusters()) CHECK_FALSE(c.empty());
      }
    }
  }
}

TEST_CASE("k-means is deterministic and invariant to row order") {
  std::mt19937_64 rng(6);
  int agree = 0;
  for (int inst = 0; inst < 10; ++inst) {
    const auto x = gaussian(8, 3, rng);
    const auto t = table_of(x);
    const auto a = kmeans_partition(t, 3, 50, 11), b = kmeans_partition(t, 3, 50, 11);
    CHECK(a.assignment == b.assignment);

    std::vector<int> perm{5, 2, 7, 0, 3, 6, 1, 4};
    MeanFeatureTable shuffled;
    shuffled.rows.resize(8, 3);
    for (int i = 0; i < 8; ++i) {
      shuffled.rows.row(i) = x.row(perm[std::size_t(i)]);
      shuffled.type_ids.push_back(perm[std::size_t(i)]);
    }
    const auto c = kmeans_partition(shuffled, 3, 50, 11);
    agree += same_partition(a, c);
    CHECK(c.wcss == doctest::Approx(a.wcss).epsilon(1e-9));
  }
  CHECK(agree == 10);
}

TEST_CASE("brute force refuses enumerations beyond its budget") {
  std::mt19937_64 rng(7);
  CHECK_THROWS_AS(brute_force_partition(table_of(gaussian(12, 2, rng)), 4, 1000), DataError);
}

TEST_CASE("random and manual partitions") {
  const std::vector<int> ids{0, 1, 2, 3, 4, 5, 6, 7, 8};
  const auto r = random_partition(ids, 4, 3);
  CHECK(r.num_clusters == 4);
  std::size_t total = 0;
  for (const auto& c : r.clusters()) {
    CHECK_FALSE(c.empty());
    total += c.size();
  }
  CHECK(total == 9);
  CHECK(random_partition(ids, 4, 3).assignment == r.assignment);

  const auto m = manual_partition({{0, 3}, {1, 2}});
  CHECK(m.cluster_of(3) == 0);
  CHECK(m.cluster_of(2) == 1);
  CHECK_FALSE(m.contains(4));
  CHECK_THROWS_AS(manual_partition({{0}, {}}), DataError);
}
