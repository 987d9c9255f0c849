#pragma once

// Minimal differentiable core: 4x4/stride-2 convolutions, fully connected
// layers, leaky rectifiers and sigmoid heads with exact reverse-mode gradients.
// Everything is templated on the scalar so the gradient checks run the same
// code paths in double that training runs in float.

#include "ufad/tensor.hpp"

#include <cmath>
#include <cstring>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace ufad {

enum class LayerKind { conv4x4_s2, fully_connected, activation, sigmoid };

inline constexpr double kLeakySlope = 0.2;

struct LayerSpec {
  LayerKind kind;
  std::string name;
  Index units = 0;  // filters for conv, outputs for fully connected
};

/// A sequential stack of layers. Parameter names are "<stack>/<layer>/w|b".
struct StackSpec {
  std::string name;
  Index in_h = 0, in_w = 0, in_c = 0;
  std::vector<LayerSpec> layers;

  std::string param_name(const LayerSpec& layer, const char* suffix) const {
    return name + "/" + layer.name + "/" + suffix;
  }
};

/// Builds conv(+leaky) layers numbered from `first_conv_index`, then optionally
/// a hidden fully connected layer (+leaky) and a single sigmoid output.
inline StackSpec make_stack(std::string name, Index in_h, Index in_w, Index in_c,
                            const std::vector<Index>& conv_filters, int first_conv_index,
                            Index hidden_units, bool scalar_head) {
  StackSpec s{std::move(name), in_h, in_w, in_c, {}};
  int idx = first_conv_index;
  for (Index f : conv_filters) {
    std::string lname = "conv" + std::to_string(idx++);
    s.layers.push_back({LayerKind::conv4x4_s2, lname, f});
    s.layers.push_back({LayerKind::activation, lname + "_act", 0});
  }
  if (hidden_units > 0) {
    s.layers.push_back({LayerKind::fully_connected, "fc_hidden", hidden_units});
    s.layers.push_back({LayerKind::activation, "fc_hidden_act", 0});
  }
  if (scalar_head) {
    s.layers.push_back({LayerKind::fully_connected, "fc_out", 1});
    s.layers.push_back({LayerKind::sigmoid, "sigmoid", 0});
  }
  return s;
}

struct ParamShape {
  std::string name;
  Index rows = 0, cols = 0;
  Index fan_in = 0;
  bool is_bias = false;
};

struct StackShapes {
  std::vector<ParamShape> params;
  Index out_h = 0, out_w = 0, out_c = 0;
};

/// Walks the stack and derives every parameter shape; throws ShapeError naming
/// the layer when spatial sizes cannot be halved.
inline StackShapes stack_shapes(const StackSpec& s) {
  StackShapes out;
  Index h = s.in_h, w = s.in_w, c = s.in_c;
  for (const auto& layer : s.layers) {
    switch (layer.kind) {
      case LayerKind::conv4x4_s2:
        if (h % 2 != 0 || w % 2 != 0 || h < 2 || w < 2)
          throw ShapeError("layer " + s.name + "/" + layer.name + ": spatial size " +
                           std::to_string(h) + "x" + std::to_string(w) + " is not even");
        out.params.push_back({s.param_name(layer, "w"), 16 * c, layer.units, 16 * c, false});
        out.params.push_back({s.param_name(layer, "b"), 1, layer.units, 16 * c, true});
        h /= 2;
        w /= 2;
        c = layer.units;
        break;
      case LayerKind::fully_connected: {
        const Index fan_in = h * w * c;
        out.params.push_back({s.param_name(layer, "w"), fan_in, layer.units, fan_in, false});
        out.params.push_back({s.param_name(layer, "b"), 1, layer.units, fan_in, true});
        h = 1;
        w = 1;
        c = layer.units;
        break;
      }
      case LayerKind::activation:
      case LayerKind::sigmoid:
        break;
    }
  }
  out.out_h = h;
  out.out_w = w;
  out.out_c = c;
  return out;
}

template <typename Scalar>
struct ParamStore {
  TensorMap<Scalar> values;
  TensorMap<Scalar> first_moment;
  TensorMap<Scalar> second_moment;

  const Mat<Scalar>& at(const std::string& name) const {
    auto it = values.find(name);
    if (it == values.end()) throw ShapeError("missing parameter " + name);
    return it->second;
  }

  Index count() const {
    Index n = 0;
    for (const auto& [_, v] : values) n += v.size();
    return n;
  }

  template <typename Other>
  ParamStore<Other> cast() const {
    ParamStore<Other> out;
    for (const auto& [k, v] : values) out.values[k] = v.template cast<Other>();
    for (const auto& [k, v] : first_moment) out.first_moment[k] = v.template cast<Other>();
    for (const auto& [k, v] : second_moment) out.second_moment[k] = v.template cast<Other>();
    return out;
  }

  bool operator==(const ParamStore& o) const {
    return values == o.values && first_moment == o.first_moment &&
           second_moment == o.second_moment;
  }
};

template <typename Scalar>
using Gradients = TensorMap<Scalar>;

/// Adds fan-in-scaled normal weights and zero biases for `stack` to `store`.
/// The gain matches the leaky rectifier so the variance of activations is
/// preserved through the stack.
template <typename Scalar>
void init_stack(const StackSpec& stack, std::uint64_t seed, ParamStore<Scalar>& store) {
  std::mt19937_64 rng(seed);
  const double gain = std::sqrt(2.0 / (1.0 + kLeakySlope * kLeakySlope));
  for (const auto& p : stack_shapes(stack).params) {
    Mat<Scalar> t = Mat<Scalar>::Zero(p.rows, p.cols);
    if (!p.is_bias) {
      std::normal_distribution<double> dist(0.0, gain / std::sqrt(double(p.fan_in)));
      for (Index i = 0; i < t.size(); ++i) t.data()[i] = Scalar(dist(rng));
    }
    store.values[p.name] = t;
    store.first_moment[p.name] = Mat<Scalar>::Zero(p.rows, p.cols);
    store.second_moment[p.name] = Mat<Scalar>::Zero(p.rows, p.cols);
  }
}

template <typename Scalar>
struct LayerCache {
  // conv: patches + input dims; fully connected: flattened input;
  // activation / sigmoid: output.
  Mat<Scalar> saved;
  Index in_n = 0, in_h = 0, in_w = 0, in_c = 0;
};

template <typename Scalar>
struct ForwardTrace {
  std::string stack_name;
  std::size_t layer_count = 0;
  std::vector<LayerCache<Scalar>> caches;
  Activation<Scalar> output;
  // Pre-sigmoid output when the stack ends in a sigmoid.
  Mat<Scalar> logits;

  /// Input of the last fully connected layer, i.e. the hidden embedding.
  Mat<Scalar> embedding() const {
    for (std::size_t i = caches.size(); i-- > 0;) {
      if (kinds[i] == LayerKind::fully_connected) return caches[i].saved;
    }
    throw ShapeError("stack " + stack_name + " has no fully connected layer");
  }

  std::vector<LayerKind> kinds;
};

namespace detail {

template <typename Scalar>
Mat<Scalar> im2col(const Activation<Scalar>& x) {
  const Index ho = x.h / 2, wo = x.w / 2, c = x.c;
  Mat<Scalar> p = Mat<Scalar>::Zero(x.n * ho * wo, 16 * c);
  const Scalar* src = x.data.data();
  for (Index n = 0; n < x.n; ++n)
    for (Index oy = 0; oy < ho; ++oy)
      for (Index ox = 0; ox < wo; ++ox) {
        Scalar* row = p.data() + ((n * ho + oy) * wo + ox) * 16 * c;
        for (Index ky = 0; ky < 4; ++ky) {
          const Index iy = 2 * oy - 1 + ky;
          if (iy < 0 || iy >= x.h) continue;
          for (Index kx = 0; kx < 4; ++kx) {
            const Index ix = 2 * ox - 1 + kx;
            if (ix < 0 || ix >= x.w) continue;
            std::memcpy(row + (ky * 4 + kx) * c, src + ((n * x.h + iy) * x.w + ix) * c,
                        sizeof(Scalar) * c);
          }
        }
      }
  return p;
}

template <typename Scalar>
Activation<Scalar> col2im(const Mat<Scalar>& dp, Index n_, Index h, Index w, Index c) {
  Activation<Scalar> dx(n_, h, w, c);
  const Index ho = h / 2, wo = w / 2;
  Scalar* dst = dx.data.data();
  for (Index n = 0; n < n_; ++n)
    for (Index oy = 0; oy < ho; ++oy)
      for (Index ox = 0; ox < wo; ++ox) {
        const Scalar* row = dp.data() + ((n * ho + oy) * wo + ox) * 16 * c;
        for (Index ky = 0; ky < 4; ++ky) {
          const Index iy = 2 * oy - 1 + ky;
          if (iy < 0 || iy >= h) continue;
          for (Index kx = 0; kx < 4; ++kx) {
            const Index ix = 2 * ox - 1 + kx;
            if (ix < 0 || ix >= w) continue;
            Scalar* out = dst + ((n * h + iy) * w + ix) * c;
            const Scalar* in = row + (ky * 4 + kx) * c;
            for (Index k = 0; k < c; ++k) out[k] += in[k];
          }
        }
      }
  return dx;
}

template <typename Scalar>
Scalar sigmoid(Scalar z) {
  return z >= 0 ? Scalar(1) / (Scalar(1) + std::exp(-z)) : std::exp(z) / (Scalar(1) + std::exp(z));
}

}  // namespace detail

/// Runs the stack on `input`. Pure function of (params, input).
template <typename Scalar>
ForwardTrace<Scalar> forward(const StackSpec& stack, const ParamStore<Scalar>& params,
                             Activation<Scalar> input) {
  if (input.h != stack.in_h || input.w != stack.in_w || input.c != stack.in_c)
    throw ShapeError("stack " + stack.name + ": expected input " + std::to_string(stack.in_h) +
                     "x" + std::to_string(stack.in_w) + "x" + std::to_string(stack.in_c) +
                     ", got " + std::to_string(input.h) + "x" + std::to_string(input.w) + "x" +
                     std::to_string(input.c));
  ForwardTrace<Scalar> trace;
  trace.stack_name = stack.name;
  trace.layer_count = stack.layers.size();
  trace.caches.resize(stack.layers.size());
  trace.kinds.reserve(stack.layers.size());

  Activation<Scalar> x = std::move(input);
  for (std::size_t li = 0; li < stack.layers.size(); ++li) {
    const LayerSpec& layer = stack.layers[li];
    LayerCache<Scalar>& cache = trace.caches[li];
    trace.kinds.push_back(layer.kind);
    cache.in_n = x.n;
    cache.in_h = x.h;
    cache.in_w = x.w;
    cache.in_c = x.c;
    switch (layer.kind) {
      case LayerKind::conv4x4_s2: {
        if (x.h % 2 != 0 || x.w % 2 != 0 || x.h < 2)
          throw ShapeError("layer " + stack.name + "/" + layer.name + ": odd spatial size " +
                           std::to_string(x.h) + "x" + std::to_string(x.w));
        const Mat<Scalar>& wgt = params.at(stack.param_name(layer, "w"));
        const Mat<Scalar>& b = params.at(stack.param_name(layer, "b"));
        if (wgt.rows() != 16 * x.c)
          throw ShapeError("layer " + stack.name + "/" + layer.name + ": expected " +
                           std::to_string(wgt.rows() / 16) + " input channels, got " +
                           std::to_string(x.c));
        cache.saved = detail::im2col(x);
        Activation<Scalar> y;
        y.n = x.n;
        y.h = x.h / 2;
        y.w = x.w / 2;
        y.c = wgt.cols();
        y.data.noalias() = cache.saved * wgt;
        y.data.rowwise() += b.row(0);
        x = std::move(y);
        break;
      }
      case LayerKind::fully_connected: {
        const Mat<Scalar>& wgt = params.at(stack.param_name(layer, "w"));
        const Mat<Scalar>& b = params.at(stack.param_name(layer, "b"));
        if (wgt.rows() != x.features())
          throw ShapeError("layer " + stack.name + "/" + layer.name + ": expected " +
                           std::to_string(wgt.rows()) + " inputs, got " +
                           std::to_string(x.features()));
        cache.saved = x.as_rows();
        Mat<Scalar> y = cache.saved * wgt;
        y.rowwise() += b.row(0);
        x = Activation<Scalar>::flat(std::move(y));
        break;
      }
      case LayerKind::activation: {
        // max(v, slope * v) equals the leaky rectifier for slope < 1 and vectorizes
        x.data = x.data.cwiseMax(Scalar(kLeakySlope) * x.data);
        cache.saved = x.data;
        break;
      }
      case LayerKind::sigmoid: {
        trace.logits = x.data;
        x.data = x.data.unaryExpr([](Scalar v) { return detail::sigmoid(v); });
        cache.saved = x.data;
        break;
      }
    }
  }
  trace.output = std::move(x);
  return trace;
}

struct BackwardOptions {
  // Upstream gradient is with respect to the pre-sigmoid logits rather than
  // the sigmoid output.
  bool upstream_is_logit = false;
  bool need_input_grad = true;
};

/// Accumulates d(loss)/d(param) into `grads` and returns d(loss)/d(input)
/// (empty when not requested).
template <typename Scalar>
Activation<Scalar> backward(const StackSpec& stack, const ParamStore<Scalar>& params,
                            const ForwardTrace<Scalar>& trace, const Mat<Scalar>& upstream,
                            Gradients<Scalar>& grads, BackwardOptions opts = {}) {
  if (trace.stack_name != stack.name || trace.layer_count != stack.layers.size())
    throw ShapeError("trace from stack " + trace.stack_name + " used with stack " + stack.name);
  if (upstream.rows() != trace.output.data.rows() || upstream.cols() != trace.output.data.cols())
    throw ShapeError("stack " + stack.name + ": upstream gradient shape mismatch");

  auto accumulate = [&grads](const std::string& name, const auto& g) {
    auto it = grads.find(name);
    if (it == grads.end())
      grads.emplace(name, g);
    else
      it->second += g;
  };

  Mat<Scalar> g = upstream;
  for (std::size_t li = stack.layers.size(); li-- > 0;) {
    const LayerSpec& layer = stack.layers[li];
    const LayerCache<Scalar>& cache = trace.caches[li];
    const bool first = li == 0;
    switch (layer.kind) {
      case LayerKind::sigmoid:
        if (!(opts.upstream_is_logit && li + 1 == stack.layers.size()))
          g.array() *= cache.saved.array() * (Scalar(1) - cache.saved.array());
        break;
      case LayerKind::activation: {
        const Scalar slope = Scalar(kLeakySlope);
        g.array() *= cache.saved.unaryExpr([slope](Scalar v) {
                        return v > Scalar(0) ? Scalar(1) : slope;
                      }).array();
        break;
      }
      case LayerKind::fully_connected: {
        const Mat<Scalar>& wgt = params.at(stack.param_name(layer, "w"));
        Mat<Scalar> gw = cache.saved.transpose() * g;
        accumulate(stack.param_name(layer, "w"), gw);
        accumulate(stack.param_name(layer, "b"), Mat<Scalar>(g.colwise().sum()));
        if (first && !opts.need_input_grad) return {};
        Mat<Scalar> gx = g * wgt.transpose();
        // back to the (n*h*w) x c layout of the layer input
        g = Eigen::Map<Mat<Scalar>>(gx.data(), cache.in_n * cache.in_h * cache.in_w, cache.in_c);
        break;
      }
      case LayerKind::conv4x4_s2: {
        const Mat<Scalar>& wgt = params.at(stack.param_name(layer, "w"));
        Mat<Scalar> gw = cache.saved.transpose() * g;
        accumulate(stack.param_name(layer, "w"), gw);
        accumulate(stack.param_name(layer, "b"), Mat<Scalar>(g.colwise().sum()));
        if (first && !opts.need_input_grad) return {};
        Mat<Scalar> gp = g * wgt.transpose();
        g = detail::col2im(gp, cache.in_n, cache.in_h, cache.in_w, cache.in_c).data;
        break;
      }
    }
  }
  if (!opts.need_input_grad) return {};
  const auto& c0 = trace.caches.front();
  Activation<Scalar> dx;
  dx.n = c0.in_n;
  dx.h = c0.in_h;
  dx.w = c0.in_w;
  dx.c = c0.in_c;
  dx.data = std::move(g);
  return dx;
}

/// Mean binary cross-entropy on logits and its gradient w.r.t. the logits.
/// Labels are 0 (bona fide) or 1 (attack); `weight` scales both.
template <typename Scalar>
Scalar bce_with_logits(const Mat<Scalar>& logits, const std::vector<int>& labels, Scalar weight,
                       Mat<Scalar>* grad) {
  const Index n = logits.rows();
  if (Index(labels.size()) != n) throw ShapeError("bce: label count mismatch");
  Scalar loss = 0;
  if (grad) grad->resize(n, 1);
  for (Index i = 0; i < n; ++i) {
    const Scalar z = logits(i, 0);
    const Scalar y = Scalar(labels[std::size_t(i)]);
    // softplus(z) - y z, stable for large |z|
    const Scalar sp = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
    loss += sp - y * z;
    if (grad) (*grad)(i, 0) = weight * (detail::sigmoid(z) - y) / Scalar(n);
  }
  return weight * loss / Scalar(n);
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// One bias-corrected Adam update. `step_index` starts at 1. Tensors absent
/// from `grads` are left untouched.
template <typename Scalar>
void adam_step(ParamStore<Scalar>& params, const Gradients<Scalar>& grads, double lr,
               long step_index, AdamConfig cfg = {}) {
  if (step_index < 1) throw TrainingError("adam step index must start at 1");
  for (const auto& [name, g] : grads) {
    if (!g.allFinite()) throw TrainingError("non-finite gradient in tensor " + name);
    auto it = params.values.find(name);
    if (it == params.values.end()) throw TrainingError("gradient for unknown tensor " + name);
    if (it->second.rows() != g.rows() || it->second.cols() != g.cols())
      throw TrainingError("gradient shape mismatch for tensor " + name);
  }
  const double c1 = 1.0 - std::pow(cfg.beta1, double(step_index));
  const double c2 = 1.0 - std::pow(cfg.beta2, double(step_index));
  const Scalar b1 = Scalar(cfg.beta1), b2 = Scalar(cfg.beta2);
  for (const auto& [name, g] : grads) {
    Mat<Scalar>& m = params.first_moment[name];
    Mat<Scalar>& v = params.second_moment[name];
    if (m.size() == 0) m = Mat<Scalar>::Zero(g.rows(), g.cols());
    if (v.size() == 0) v = Mat<Scalar>::Zero(g.rows(), g.cols());
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.cwiseProduct(g);
    const Scalar step = Scalar(lr / c1);
    const Scalar inv_c2 = Scalar(1.0 / c2);
    const Scalar eps = Scalar(cfg.epsilon);
    params.values[name].array() -=
        step * m.array() / ((v.array() * inv_c2).sqrt() + eps);
  }
}

}  // namespace ufad
