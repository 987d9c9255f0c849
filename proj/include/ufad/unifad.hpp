#pragma once

// Multi-branch detector: a shared convolutional trunk, one branch per attack
// cluster, and an affine decision layer over the concatenated branch scores.
//
// Composite loss = L_shared + sum_t L_aux_t. L_shared (final score, all
// attacks) reaches every parameter; L_aux_t (branch t score, bona fides vs
// attacks of cluster t) reaches only branch t.

#include "ufad/cluster.hpp"
#include "ufad/jointcnn.hpp"

#include <optional>

namespace ufad {

enum class FinalMode { decision_layer, max_branch };

template <typename Scalar>
struct UniFADModel {
  Architecture arch;
  int shared_depth = 2;
  Partition partition;
  FinalMode final_mode = FinalMode::decision_layer;
  StackSpec trunk;  // may have no layers (shared_depth == 0)
  std::vector<StackSpec> branches;
  ParamStore<Scalar> params;
  std::uint64_t seed = 0;
  long steps = 0;

  int num_branches() const { return int(branches.size()); }
  static constexpr const char* kHeadW = "head/fc/w";
  static constexpr const char* kHeadB = "head/fc/b";
};

inline constexpr std::uint64_t kTrunkStack = 1000;
inline constexpr std::uint64_t kHeadStack = 2000;

template <typename Scalar>
UniFADModel<Scalar> build_unifad(const Architecture& arch, const Partition& partition,
                                 int shared_depth, std::uint64_t seed) {
  arch.validate();
  const int depth = int(arch.conv_filters.size());
  if (shared_depth < 0 || shared_depth > depth)
    throw ConfigError("shared_depth must be in [0, " + std::to_string(depth) + "]");
  if (partition.num_clusters < 1) throw ConfigError("partition has no clusters");
  UniFADModel<Scalar> m;
  m.arch = arch;
  m.shared_depth = shared_depth;
  m.partition = partition;
  m.seed = seed;
  const std::vector<Index> shared(arch.conv_filters.begin(), arch.conv_filters.begin() + shared_depth);
  const std::vector<Index> own(arch.conv_filters.begin() + shared_depth, arch.conv_filters.end());
  m.trunk = make_stack("trunk", arch.image_size, arch.image_size, arch.channels, shared, 1, 0, false);
  const auto trunk_out = stack_shapes(m.trunk);
  init_stack(m.trunk, stack_seed(seed, kTrunkStack), m.params);
  for (int t = 0; t < partition.num_clusters; ++t) {
    m.branches.push_back(make_stack("branch" + std::to_string(t), trunk_out.out_h, trunk_out.out_w,
                                    trunk_out.out_c, own, shared_depth + 1, arch.hidden_units, true));
    init_stack(m.branches.back(), stack_seed(seed, std::uint64_t(t)), m.params);
  }
  // decision layer T -> 1
  StackSpec head{"head", 1, 1, partition.num_clusters, {{LayerKind::fully_connected, "fc", 1}}};
  init_stack(head, stack_seed(seed, kHeadStack), m.params);
  // Every branch score starts as positive evidence for "attack"; a random sign
  // would let L_shared pull a branch against its own auxiliary task. The bias
  // centres the logit when all branches are undecided.
  m.params.values[UniFADModel<Scalar>::kHeadW].setOnes();
  m.params.values[UniFADModel<Scalar>::kHeadB].setConstant(Scalar(-0.5 * partition.num_clusters));
  return m;
}

template <typename Scalar>
struct UniFADTrace {
  std::optional<ForwardTrace<Scalar>> trunk;
  Activation<Scalar> shared_features;  // h = F(x)
  std::vector<ForwardTrace<Scalar>> branches;
  Mat<Scalar> branch_scores;  // n x T
  Mat<Scalar> head_logit;     // n x 1
  Mat<Scalar> final_score;    // n x 1

  /// Concatenated per-branch hidden features, n x (T * hidden).
  Mat<Scalar> features() const {
    std::vector<Mat<Scalar>> parts;
    Index cols = 0;
    for (const auto& b : branches) {
      parts.push_back(b.embedding());
      cols += parts.back().cols();
    }
    Mat<Scalar> out(parts.empty() ? 0 : parts.front().rows(), cols);
    Index c = 0;
    for (const auto& p : parts) {
      out.middleCols(c, p.cols()) = p;
      c += p.cols();
    }
    return out;
  }
};

template <typename Scalar>
Activation<Scalar> run_trunk(const UniFADModel<Scalar>& m, Activation<Scalar> x,
                             std::optional<ForwardTrace<Scalar>>* trace) {
  if (m.trunk.layers.empty()) {
    if (x.h != m.trunk.in_h || x.w != m.trunk.in_w || x.c != m.trunk.in_c)
      throw ShapeError("unifad: input does not match architecture");
    return x;
  }
  auto tr = forward(m.trunk, m.params, std::move(x));
  Activation<Scalar> h = tr.output;
  if (trace) *trace = std::move(tr);
  return h;
}

template <typename Scalar>
UniFADTrace<Scalar> unifad_forward(const UniFADModel<Scalar>& m, Activation<Scalar> x) {
  UniFADTrace<Scalar> tr;
  tr.shared_features = run_trunk(m, std::move(x), &tr.trunk);
  const Index n = tr.shared_features.n;
  const int T = m.num_branches();
  tr.branch_scores.resize(n, T);
  for (int t = 0; t < T; ++t) {
    tr.branches.push_back(forward(m.branches[std::size_t(t)], m.params, tr.shared_features));
    tr.branch_scores.col(t) = tr.branches.back().output.data.col(0);
  }
  const Mat<Scalar>& v = m.params.at(UniFADModel<Scalar>::kHeadW);
  const Mat<Scalar>& b = m.params.at(UniFADModel<Scalar>::kHeadB);
  tr.head_logit = tr.branch_scores * v;
  tr.head_logit.array() += b(0, 0);
  if (m.final_mode == FinalMode::decision_layer) {
    tr.final_score = tr.head_logit.unaryExpr([](Scalar z) { return detail::sigmoid(z); });
  } else {
    tr.final_score = tr.branch_scores.rowwise().maxCoeff();
  }
  return tr;
}

template <typename Scalar>
struct LabeledBatch {
  Activation<Scalar> x;
  std::vector<int> labels;
  std::vector<int> attack_types;  // -1 for bona fide
};

struct LossWeights {
  double shared = 1.0;
  double aux = 1.0;
};

struct CompositeLoss {
  double shared = 0;
  std::vector<double> aux;
};

/// Routed gradients of the composite loss. `branch_batches[t]` may only hold
/// bona fides and attacks from cluster t.
template <typename Scalar>
CompositeLoss composite_gradients(const UniFADModel<Scalar>& m, const LabeledBatch<Scalar>& shared_batch,
                                  const std::vector<LabeledBatch<Scalar>>& branch_batches,
                                  LossWeights weights, Gradients<Scalar>& grads) {
  const int T = m.num_branches();
  if (!branch_batches.empty() && int(branch_batches.size()) != T)
    throw ShapeError("expected " + std::to_string(T) + " branch batches");
  CompositeLoss out;
  const bool has_trunk = !m.trunk.layers.empty();

  // L_shared through the decision layer, every branch and the trunk.
  {
    auto tr = unifad_forward(m, shared_batch.x);
    Mat<Scalar> dz;
    out.shared = double(bce_with_logits<Scalar>(tr.head_logit, shared_batch.labels,
                                                Scalar(weights.shared), &dz));
    const Mat<Scalar>& v = m.params.at(UniFADModel<Scalar>::kHeadW);
    auto add = [&grads](const std::string& k, const Mat<Scalar>& g) {
      auto it = grads.find(k);
      if (it == grads.end()) grads.emplace(k, g); else it->second += g;
    };
    add(UniFADModel<Scalar>::kHeadW, tr.branch_scores.transpose() * dz);
    add(UniFADModel<Scalar>::kHeadB, Mat<Scalar>::Constant(1, 1, dz.sum()));
    const Mat<Scalar> ds = dz * v.transpose();  // n x T
    Activation<Scalar> dh;
    for (int t = 0; t < T; ++t) {
      Activation<Scalar> g = backward(m.branches[std::size_t(t)], m.params, tr.branches[std::size_t(t)],
                                      Mat<Scalar>(ds.col(t)), grads, {false, has_trunk});
      if (!has_trunk) continue;
      if (dh.data.size() == 0) dh = std::move(g); else dh.data += g.data;
    }
    if (has_trunk) backward(m.trunk, m.params, *tr.trunk, dh.data, grads, {false, false});
  }

  // L_aux_t: trunk output is treated as a constant.
  for (int t = 0; t < int(branch_batches.size()); ++t) {
    const auto& bb = branch_batches[std::size_t(t)];
    for (int type : bb.attack_types) {
      if (type < 0) continue;
      if (!m.partition.contains(type) || m.partition.cluster_of(type) != t)
        throw DataError("routing: attack type " + std::to_string(type) +
                        " is outside the partition of branch " + std::to_string(t));
    }
    const Activation<Scalar> h = run_trunk<Scalar>(m, bb.x, nullptr);
    const auto& branch = m.branches[std::size_t(t)];
    const auto tr = forward(branch, m.params, h);
    Mat<Scalar> dz;
    out.aux.push_back(double(bce_with_logits<Scalar>(tr.logits, bb.labels, Scalar(weights.aux), &dz)));
    if (weights.aux != 0.0) backward(branch, m.params, tr, dz, grads, {true, false});
  }
  return out;
}

template <typename Scalar>
CompositeLoss composite_step(UniFADModel<Scalar>& m, const LabeledBatch<Scalar>& shared_batch,
                             const std::vector<LabeledBatch<Scalar>>& branch_batches, double lr,
                             LossWeights weights = {}) {
  Gradients<Scalar> grads;
  CompositeLoss loss = composite_gradients(m, shared_batch, branch_batches, weights, grads);
  adam_step(m.params, grads, lr, ++m.steps);
  return loss;
}

struct UniFADTrainResult {
  UniFADModel<float> model;
  LossLog log;
};

UniFADTrainResult train_unifad(const std::vector<ImageSample>& train, const Partition& partition,
                               const Architecture& arch, const TrainHyper& hyper, int shared_depth = 2,
                               LossWeights weights = {});

/// MixNet-style variant: no shared trunk, no shared loss; branch t treats
/// attacks outside cluster t as label 0; final score is the max branch score.
UniFADTrainResult train_mixnet(const std::vector<ImageSample>& train, const Partition& partition,
                               const Architecture& arch, const TrainHyper& hyper);

struct BranchScores {
  Eigen::MatrixXd branch;  // n x T
  Eigen::VectorXd final;   // n
  Eigen::MatrixXd features;  // n x (T * hidden), filled when requested
};

BranchScores score_unifad(const UniFADModel<float>& m, const std::vector<ImageSample>& samples,
                          bool with_features = false, int chunk = 64);

}  // namespace ufad
