#include "ufad/classify.hpp"
#include "ufad/tensor.hpp"

#include <random>

#include <doctest.h>

using namespace ufad;

namespace {

Eigen::MatrixXd gaussian(Index n, Index d, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0, 1);
  Eigen::MatrixXd m(n, d);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

const std::map<int, int> kCats{{0, 0}, {1, 0}, {2, 1}, {3, 1}, {4, 2}};

}  // namespace

TEST_CASE("prototypes: singletons, dimension, naive means") {
  std::mt19937_64 rng(1);
  const auto f = gaussian(5, 3 * 128, rng);
  const std::vector<int> ids{0, 1, 2, 3, 4};
  const auto p = build_prototypes(f, ids, kCats);
  CHECK(p.rows == f);
  CHECK(p.rows.cols() == 3 * 128);

  const auto many = gaussian(40, 6, rng);
  std::vector<int> types;
  for (int i = 0; i < 40; ++i) types.push_back(i % 5);
  const auto q = build_prototypes(many, types, kCats);
  for (int t = 0; t < 5; ++t) {
    Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(6);
    for (int i = t; i < 40; i += 5) sum += many.row(i);
    CHECK((q.rows.row(t) - sum / 8).cwiseAbs().maxCoeff() < 1e-12);
  }
  const std::vector<int> need{0, 1, 2, 3, 4, 5};
  CHECK_THROWS_AS(build_prototypes(many, types, kCats, need), DataError);
}

TEST_CASE("prediction: exact prototype, scale invariance, brute-force scan") {
  std::mt19937_64 rng(2);
  const auto f = gaussian(5, 12, rng);
  const std::vector<int> ids{0, 1, 2, 3, 4};
  const auto p = build_prototypes(f, ids, kCats);
  for (int j = 0; j < 5; ++j) {
    const auto r = predict_type(p, f.row(j).transpose());
    CHECK(r.type_id == j);
    CHECK(r.category == kCats.at(j));
    CHECK(r.similarity == doctest::Approx(1.0).epsilon(1e-12));
  }
  auto scaled = p;
  scaled.rows *= 3.7;
  for (int k = 0; k < 200; ++k) {
    const Eigen::VectorXd x = gaussian(12, 1, rng);
    int best = -1;
    double best_sim = -2;
    for (int j = 0; j < 5; ++j) {
      const double s = f.row(j).dot(x) / (f.row(j).norm() * x.norm());
      if (s > best_sim) {
        best_sim = s;
        best = j;
      }
    }
    CHECK(predict_type(p, x).type_id == best);
    CHECK(predict_type(p, 0.01 * x).type_id == best);
    CHECK(predict_type(scaled, x).type_id == best);
  }
  CHECK_THROWS_AS(predict_type(p, Eigen::VectorXd::Zero(12)), DataError);
}

TEST_CASE("ties go to the lower type id") {
  Eigen::MatrixXd f(2, 2);
  f << 1, 0, 1, 0;
  const std::vector<int> ids{3, 1};
  const auto p = build_prototypes(f, ids, kCats);
  CHECK(predict_type(p, Eigen::Vector2d(2, 0)).type_id == 1);
}

TEST_CASE("confusion matrices") {
  const std::vector<int> truth{0, 1, 2, 3, 4, 0, 2, 4};
  const auto perfect = confusion(truth, truth, kCats);
  CHECK(perfect.type_matrix == Eigen::MatrixXd::Identity(5, 5));
  CHECK(perfect.category_matrix == Eigen::MatrixXd::Identity(3, 3));
  CHECK(perfect.type_accuracy == 1.0);
  CHECK(perfect.category_accuracy == 1.0);

  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> pick(0, 4);
  std::vector<int> t, p;
  for (int i = 0; i < 300; ++i) {
    t.push_back(pick(rng));
    p.push_back(rng() % 3 ? t.back() : pick(rng));
  }
  const auto c = confusion(t, p, kCats);
  for (Index i = 0; i < 5; ++i)
    if (c.type_counts.row(i).sum() > 0) CHECK(std::abs(c.type_matrix.row(i).sum() - 1.0) <= 1e-9);
  for (Index i = 0; i < 3; ++i)
    if (c.category_counts.row(i).sum() > 0) CHECK(std::abs(c.category_matrix.row(i).sum() - 1.0) <= 1e-9);
  CHECK(c.category_accuracy >= c.type_accuracy);
  CHECK(c.type_counts.sum() == 300);
  const std::vector<int> bad{9};
  CHECK_THROWS_AS(confusion(bad, bad, kCats), DataError);
}
