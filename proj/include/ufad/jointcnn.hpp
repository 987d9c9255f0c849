#pragma once

// Single-network binary detector: d32,d64,d128,d256,fc128,fc1 by default.

#include "ufad/data_synth.hpp"
#include "ufad/network.hpp"

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace ufad {

struct Architecture {
  Index image_size = 64;
  Index channels = 3;
  std::vector<Index> conv_filters{32, 64, 128, 256};
  Index hidden_units = 128;

  void validate() const;
  nlohmann::json to_json() const;
};

struct TrainHyper {
  double lr = 1e-3;
  int batch = 180;
  int iters = 2000;
  std::uint64_t seed = 1;
  double flip_prob = 0.5;
  int score_chunk = 64;  // inference batch
};

/// Loss history, one row per step.
struct LossLog {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  void write_csv(const std::string& path, const std::string& comment = "") const;
  /// Trailing mean over `window` rows ending at `step` (1-based).
  double smoothed(std::size_t column, std::size_t step, std::size_t window) const;
};

/// Stack index used to derive per-stack init seeds.
inline std::uint64_t stack_seed(std::uint64_t seed, std::uint64_t stack_index) {
  return mix_seed(seed, stack_index);
}

template <typename Scalar>
struct JointModel {
  Architecture arch;
  StackSpec stack;
  ParamStore<Scalar> params;
  std::uint64_t seed = 0;
  long steps = 0;
};

template <typename Scalar>
JointModel<Scalar> build_joint(const Architecture& arch, std::uint64_t seed) {
  arch.validate();
  JointModel<Scalar> m;
  m.arch = arch;
  m.seed = seed;
  m.stack = make_stack("joint", arch.image_size, arch.image_size, arch.channels, arch.conv_filters, 1,
                       arch.hidden_units, true);
  init_stack(m.stack, stack_seed(seed, 0), m.params);
  return m;
}

struct JointTrainResult {
  JointModel<float> model;
  LossLog log;
};

/// Balanced binary training (half bona fide, half attacks drawn uniformly
/// over `attack_types`, all types in the split when empty).
JointTrainResult train_joint(const std::vector<ImageSample>& train, const Architecture& arch,
                             const TrainHyper& hyper, std::vector<int> attack_types = {});

/// Embedding (input of the final fully connected layer) per sample.
Eigen::MatrixXd embed(const JointModel<float>& model, const std::vector<ImageSample>& samples,
                      int chunk = 64);

/// Attack scores in (0,1); 0 means bona fide.
std::vector<double> score_joint(const JointModel<float>& model, const std::vector<ImageSample>& samples,
                                int chunk = 64);

}  // namespace ufad
