#include "gradcheck.hpp"
#include "ufad/network.hpp"

#include <doctest.h>

using namespace ufad;
using namespace ufad::test;

namespace {

constexpr int kInstances = 10;
constexpr double kKinkMargin = 1e-3;

ParamStore<double> random_params(const StackSpec& s, std::uint64_t seed) {
  ParamStore<double> p;
  init_stack(s, seed, p);
  // non-zero biases so their gradients are exercised
  std::mt19937_64 rng(seed ^ 0xb1a5);
  std::normal_distribution<double> d(0, 0.3);
  for (auto& [name, t] : p.values)
    if (name.ends_with("/b"))
      for (Index i = 0; i < t.size(); ++i) t.data()[i] = d(rng);
  return p;
}

Mat<double> random_like(Index rows, Index cols, std::mt19937_64& rng) {
  Mat<double> r(rows, cols);
  std::normal_distribution<double> d(0, 1);
  for (Index i = 0; i < r.size(); ++i) r.data()[i] = d(rng);
  return r;
}

double linear_loss(const StackSpec& s, const ParamStore<double>& p, const Activation<double>& x,
                   const Mat<double>& r) {
  return (forward(s, p, x).output.data.array() * r.array()).sum();
}

/// Checks parameter and input gradients of sum(R * stack(x)) on one instance.
double check_linear(const StackSpec& s, ParamStore<double>& p, Activation<double>& x, std::mt19937_64& rng) {
  const auto tr = forward(s, p, x);
  const Mat<double> r = random_like(tr.output.data.rows(), tr.output.data.cols(), rng);
  Gradients<double> g;
  const Activation<double> dx = backward(s, p, tr, r, g);
  auto loss = [&] { return linear_loss(s, p, x, r); };
  double worst = check_tensor(x.data, dx.data, loss);
  for (auto& [name, t] : p.values) worst = std::max(worst, check_tensor(t, g.at(name), loss));
  return worst;
}

StackSpec single(LayerKind kind, Index units, Index h, Index w, Index c) {
  return StackSpec{"s", h, w, c, {{kind, "layer", units}}};
}

}  // namespace

TEST_CASE("conv layer gradients match central differences") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < kInstances; ++i) {
    auto s = single(LayerKind::conv4x4_s2, 3, 8, 6, 2);
    auto p = random_params(s, std::uint64_t(i));
    auto x = random_input(2, 8, 6, 2, rng);
    CHECK(check_linear(s, p, x, rng) < kMaxRelErr);
  }
}

TEST_CASE("fully connected layer gradients match central differences") {
  std::mt19937_64 rng(12);
  for (int i = 0; i < kInstances; ++i) {
    auto s = single(LayerKind::fully_connected, 5, 2, 3, 2);
    auto p = random_params(s, std::uint64_t(i));
    auto x = random_input(3, 2, 3, 2, rng);
    CHECK(check_linear(s, p, x, rng) < kMaxRelErr);
  }
}

TEST_CASE("leaky rectifier gradients match central differences") {
  std::mt19937_64 rng(13);
  int checked = 0;
  while (checked < kInstances) {
    auto s = single(LayerKind::activation, 0, 3, 3, 4);
    ParamStore<double> p;
    auto x = random_input(2, 3, 3, 4, rng);
    if (!clear_of_kinks(s, p, x, kKinkMargin)) continue;
    CHECK(check_linear(s, p, x, rng) < kMaxRelErr);
    ++checked;
  }
}

TEST_CASE("sigmoid gradients match central differences") {
  std::mt19937_64 rng(14);
  for (int i = 0; i < kInstances; ++i) {
    auto s = single(LayerKind::sigmoid, 0, 1, 1, 3);
    ParamStore<double> p;
    auto x = random_input(4, 1, 1, 3, rng);
    x.data *= 3.0;
    CHECK(check_linear(s, p, x, rng) < kMaxRelErr);
  }
}

TEST_CASE("micro network with cross-entropy on logits matches central differences") {
  std::mt19937_64 rng(15);
  int checked = 0;
  std::uint64_t seed = 0;
  while (checked < kInstances) {
    auto s = make_stack("micro", 8, 8, 1, {2, 3}, 1, 4, true);
    auto p = random_params(s, seed++);
    auto x = random_input(4, 8, 8, 1, rng);
    if (!clear_of_kinks(s, p, x, kKinkMargin)) continue;
    const std::vector<int> labels{0, 1, 1, 0};
    const auto tr = forward(s, p, x);
    Mat<double> dz;
    bce_with_logits<double>(tr.logits, labels, 1.0, &dz);
    Gradients<double> g;
    const auto dx = backward(s, p, tr, dz, g, {true, true});
    auto loss = [&] { return bce_with_logits<double>(forward(s, p, x).logits, labels, 1.0, nullptr); };
    double worst = check_tensor(x.data, dx.data, loss);
    for (auto& [name, t] : p.values) worst = std::max(worst, check_tensor(t, g.at(name), loss));
    CHECK(worst < kMaxRelErr);
    ++checked;
  }
}

TEST_CASE("micro network with a loss on the sigmoid output matches central differences") {
  std::mt19937_64 rng(16);
  int checked = 0;
  std::uint64_t seed = 100;
  while (checked < kInstances) {
    auto s = make_stack("micro", 8, 8, 1, {2, 3}, 1, 4, true);
    auto p = random_params(s, seed++);
    auto x = random_input(3, 8, 8, 1, rng);
    if (!clear_of_kinks(s, p, x, kKinkMargin)) continue;
    CHECK(check_linear(s, p, x, rng) < kMaxRelErr);
    ++checked;
  }
}

TEST_CASE("spatial sizes halve through the stride-2 stack") {
  for (auto [size, expect] : {std::pair<Index, std::vector<Index>>{64, {32, 16, 8, 4}},
                              std::pair<Index, std::vector<Index>>{160, {80, 40, 20, 10}}}) {
    auto s = make_stack("joint", size, size, 3, {32, 64, 128, 256}, 1, 128, true);
    const auto shapes = stack_shapes(s);
    CHECK(shapes.out_c == 1);
    ParamStore<float> p;
    init_stack(s, 1, p);
    const auto tr = forward(s, p, Activation<float>(1, size, size, 3));
    std::vector<Index> seen;
    for (std::size_t i = 0; i < s.layers.size(); ++i)
      if (s.layers[i].kind == LayerKind::activation && s.layers[i].name.starts_with("conv"))
        seen.push_back(tr.caches[i].in_h);
    CHECK(seen == expect);
    CHECK(p.at("joint/fc_hidden/w").rows() == expect.back() * expect.back() * 256);
    CHECK(p.at("joint/fc_hidden/w").cols() == 128);
  }
}

TEST_CASE("all-zero parameters give a score of exactly one half") {
  auto s = make_stack("joint", 16, 16, 3, {4, 4, 4, 4}, 1, 8, true);
  ParamStore<float> p;
  init_stack(s, 3, p);
  for (auto& [_, t] : p.values) t.setZero();
  std::mt19937_64 rng(1);
  auto x = random_input(5, 16, 16, 3, rng).cast<float>();
  const auto tr = forward(s, p, x);
  for (Index i = 0; i < 5; ++i) CHECK(tr.output.data(i, 0) == 0.5f);
}

TEST_CASE("shape errors name the offending layer") {
  auto s = make_stack("joint", 64, 64, 3, {32, 64, 128, 256}, 1, 128, true);
  ParamStore<float> p;
  init_stack(s, 1, p);
  CHECK_THROWS_AS(forward(s, p, Activation<float>(1, 32, 32, 3)), ShapeError);
  auto odd = make_stack("odd", 6, 6, 1, {2, 2}, 1, 0, false);
  try {
    stack_shapes(odd);
    FAIL("expected a shape error");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("conv2") != std::string::npos);
  }
}

TEST_CASE("backward rejects a trace from another stack") {
  auto a = make_stack("a", 8, 8, 1, {2}, 1, 0, false);
  auto b = make_stack("b", 8, 8, 1, {2}, 1, 0, false);
  ParamStore<double> p;
  init_stack(a, 1, p);
  init_stack(b, 2, p);
  std::mt19937_64 rng(2);
  const auto tr = forward(a, p, random_input(1, 8, 8, 1, rng));
  Gradients<double> g;
  CHECK_THROWS_AS(backward(b, p, tr, tr.output.data, g), ShapeError);
}

TEST_CASE("zero upstream gives zero gradients and doubling the loss doubles them exactly") {
  auto s = make_stack("micro", 8, 8, 2, {3, 4}, 1, 5, true);
  auto p = random_params(s, 9);
  std::mt19937_64 rng(3);
  const auto x = random_input(3, 8, 8, 2, rng);
  const auto tr = forward(s, p, x);
  Gradients<double> zero;
  backward(s, p, tr, Mat<double>(Mat<double>::Zero(3, 1)), zero);
  for (const auto& [_, g] : zero) CHECK(g.cwiseAbs().maxCoeff() == 0.0);

  const Mat<double> r = random_like(3, 1, rng);
  Gradients<double> once, twice;
  const auto dx1 = backward(s, p, tr, r, once);
  const auto dx2 = backward(s, p, tr, Mat<double>(2.0 * r), twice);
  for (const auto& [name, g] : once) CHECK(twice.at(name) == (2.0 * g).eval());
  CHECK(dx2.data == (2.0 * dx1.data).eval());
}

TEST_CASE("forward is a pure function and sigmoid stays inside the open interval") {
  auto s = make_stack("joint", 16, 16, 3, {4, 8, 8, 8}, 1, 8, true);
  ParamStore<float> p;
  init_stack(s, 4, p);
  std::mt19937_64 rng(4);
  const auto x = random_input(6, 16, 16, 3, rng).cast<float>();
  const auto a = forward(s, p, x), b = forward(s, p, x);
  CHECK(a.output.data == b.output.data);
  for (double z = -30; z <= 30; z += 0.25) {
    const double v = detail::sigmoid(z);
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  for (float z = -15; z <= 15; z += 0.25f) {
    const float v = detail::sigmoid(z);
    CHECK(v > 0.0f);
    CHECK(v < 1.0f);
  }
}

TEST_CASE("adam first step on a scalar matches the hand computation") {
  ParamStore<double> p;
  p.values["w"] = Mat<double>::Constant(1, 1, 0.5);
  const double lr = 1e-3;
  adam_step(p, {{"w", Mat<double>::Constant(1, 1, 1.0)}}, lr, 1);
  // m = 0.1, v = 0.001, both bias corrections give exactly 1
  CHECK(p.values["w"](0, 0) == doctest::Approx(0.5 - lr / (1.0 + 1e-8)).epsilon(1e-15));
  CHECK(p.first_moment["w"](0, 0) == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(p.second_moment["w"](0, 0) == doctest::Approx(0.001).epsilon(1e-15));

  adam_step(p, {{"w", Mat<double>::Constant(1, 1, -2.0)}}, lr, 2);
  const double m = 0.9 * 0.1 + 0.1 * -2.0, v = 0.999 * 0.001 + 0.001 * 4.0;
  const double mhat = m / (1 - 0.81), vhat = v / (1 - 0.999 * 0.999);
  const double expect = 0.5 - lr / (1.0 + 1e-8) - lr * mhat / (std::sqrt(vhat) + 1e-8);
  CHECK(p.values["w"](0, 0) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("adam with a zero gradient leaves parameters and moments untouched") {
  auto s = make_stack("m", 8, 8, 1, {2}, 1, 3, true);
  ParamStore<float> p;
  init_stack(s, 5, p);
  const auto before = p;
  Gradients<float> g;
  for (const auto& [name, t] : p.values) g[name] = Mat<float>::Zero(t.rows(), t.cols());
  adam_step(p, g, 1e-3, 1);
  CHECK(p == before);
}

TEST_CASE("adam is deterministic and rejects non-finite gradients by name") {
  auto s = make_stack("m", 8, 8, 1, {2}, 1, 3, true);
  ParamStore<float> a;
  init_stack(s, 6, a);
  auto b = a;
  Gradients<float> g;
  std::mt19937_64 rng(6);
  for (const auto& [name, t] : a.values) g[name] = random_like(t.rows(), t.cols(), rng).cast<float>();
  adam_step(a, g, 1e-3, 1);
  adam_step(b, g, 1e-3, 1);
  CHECK(a == b);

  g["m/conv1/b"](0, 1) = std::numeric_limits<float>::quiet_NaN();
  try {
    adam_step(a, g, 1e-3, 2);
    FAIL("expected a training error");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).find("m/conv1/b") != std::string::npos);
  }
}

TEST_CASE("initialisation is seeded, fan-in scaled and has zero biases") {
  auto s = make_stack("joint", 64, 64, 3, {32, 64, 128, 256}, 1, 128, true);
  ParamStore<float> a, b, c;
  init_stack(s, 7, a);
  init_stack(s, 7, b);
  init_stack(s, 8, c);
  CHECK(a == b);
  CHECK_FALSE(a == c);
  for (const auto& [name, t] : a.values)
    if (name.ends_with("/b")) CHECK(t.cwiseAbs().maxCoeff() == 0.0f);

  const auto& w = a.at("joint/conv2/w");  // 512 x 64 = 32768 draws
  REQUIRE(w.size() >= 10000);
  const double mean = w.cast<double>().mean();
  const double sd = std::sqrt((w.cast<double>().array() - mean).square().mean());
  const double target = std::sqrt(2.0 / (1.0 + 0.2 * 0.2)) / std::sqrt(512.0);
  CHECK(std::abs(sd - target) < 0.1 * target);
}
