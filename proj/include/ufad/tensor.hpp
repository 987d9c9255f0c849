#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>

namespace ufad {

using Index = Eigen::Index;

/// Row-major dense matrix. Activations are stored as (n*h*w) x c so that each
/// row holds the channels of one pixel (NHWC order), which makes flattening a
/// zero-copy reinterpretation.
template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A batch of feature maps in NHWC order.
template <typename Scalar>
struct Activation {
  Index n = 0, h = 0, w = 0, c = 0;
  Mat<Scalar> data;  // (n*h*w) x c

  Activation() = default;
  Activation(Index n_, Index h_, Index w_, Index c_)
      : n(n_), h(h_), w(w_), c(c_), data(Mat<Scalar>::Zero(n_ * h_ * w_, c_)) {}

  static Activation flat(Mat<Scalar> m) {
    Activation a;
    a.n = m.rows();
    a.h = 1;
    a.w = 1;
    a.c = m.cols();
    a.data = std::move(m);
    return a;
  }

  Index features() const { return h * w * c; }

  /// View as n x (h*w*c); valid because storage is row-major NHWC.
  Eigen::Map<const Mat<Scalar>> as_rows() const { return {data.data(), n, features()}; }
  Eigen::Map<Mat<Scalar>> as_rows() { return {data.data(), n, features()}; }

  template <typename Other>
  Activation<Other> cast() const {
    Activation<Other> out;
    out.n = n;
    out.h = h;
    out.w = w;
    out.c = c;
    out.data = data.template cast<Other>();
    return out;
  }
};

template <typename Scalar>
using TensorMap = std::map<std::string, Mat<Scalar>>;

}  // namespace ufad
