#include "ufad/unifad.hpp"

#include "ufad/sampler.hpp"

namespace ufad {

namespace {

LabeledBatch<float> labeled(const Batch& b) {
  LabeledBatch<float> out{b.tensor(), b.labels, {}};
  for (const auto* s : b.samples) out.attack_types.push_back(s->attack_type ? *s->attack_type : -1);
  return out;
}

std::vector<int> cluster_train_types(const Partition& p, int cluster, const SplitIndex& index) {
  std::vector<int> out;
  for (int t : p.members(cluster))
    if (index.has_type(t)) out.push_back(t);
  if (out.empty())
    throw DataError("cluster " + std::to_string(cluster) + " has no attack types in the training data");
  return out;
}

void check_train(const SplitIndex& index) {
  if (index.bona_fides().empty()) throw DataError("train split has no bona fide samples");
  if (index.types().empty()) throw DataError("train split has no attack samples");
}

}  // namespace

UniFADTrainResult train_unifad(const std::vector<ImageSample>& train, const Partition& partition,
                               const Architecture& arch, const TrainHyper& hyper, int shared_depth,
                               LossWeights weights) {
  SplitIndex index(train);
  check_train(index);
  for (int t : index.types())
    if (!partition.contains(t))
      throw DataError("attack type " + std::to_string(t) + " is not covered by the partition");

  UniFADTrainResult r{build_unifad<float>(arch, partition, shared_depth, hyper.seed), {}};
  const int T = partition.num_clusters;
  BalancedSampler shared(index.bona_fides(), index.types(), index, hyper.flip_prob);
  std::vector<BalancedSampler> branch;
  for (int t = 0; t < T; ++t)
    branch.emplace_back(index.bona_fides(), cluster_train_types(partition, t, index), index, hyper.flip_prob);

  r.log.columns.push_back("L_shared");
  for (int t = 0; t < T; ++t) r.log.columns.push_back("L_aux_" + std::to_string(t + 1));

  std::mt19937_64 rng(mix_seed(hyper.seed, 0x5a3));
  for (int step = 1; step <= hyper.iters; ++step) {
    const LabeledBatch<float> sb = labeled(shared.draw(std::size_t(hyper.batch), rng));
    std::vector<LabeledBatch<float>> bbs;
    for (int t = 0; t < T; ++t) bbs.push_back(labeled(branch[std::size_t(t)].draw(std::size_t(hyper.batch), rng)));
    const CompositeLoss loss = composite_step(r.model, sb, bbs, hyper.lr, weights);
    std::vector<double> row{loss.shared};
    row.insert(row.end(), loss.aux.begin(), loss.aux.end());
    r.log.rows.push_back(std::move(row));
  }
  return r;
}

UniFADTrainResult train_mixnet(const std::vector<ImageSample>& train, const Partition& partition,
                               const Architecture& arch, const TrainHyper& hyper) {
  SplitIndex index(train);
  check_train(index);
  UniFADTrainResult r{build_unifad<float>(arch, partition, 0, hyper.seed), {}};
  r.model.final_mode = FinalMode::max_branch;
  const int T = partition.num_clusters;

  std::vector<BalancedSampler> samplers;
  for (int t = 0; t < T; ++t) {
    // label 0: bona fides plus every attack outside the branch's cluster
    std::vector<const ImageSample*> negatives = index.bona_fides();
    for (int type : index.types())
      if (!partition.contains(type) || partition.cluster_of(type) != t)
        negatives.insert(negatives.end(), index.of_type(type).begin(), index.of_type(type).end());
    samplers.emplace_back(std::move(negatives), cluster_train_types(partition, t, index), index,
                          hyper.flip_prob);
  }
  for (int t = 0; t < T; ++t) r.log.columns.push_back("L_branch_" + std::to_string(t + 1));

  std::mt19937_64 rng(mix_seed(hyper.seed, 0x5a3));
  for (int step = 1; step <= hyper.iters; ++step) {
    Gradients<float> grads;
    std::vector<double> row;
    for (int t = 0; t < T; ++t) {
      const Batch b = samplers[std::size_t(t)].draw(std::size_t(hyper.batch), rng);
      const auto& stack = r.model.branches[std::size_t(t)];
      const auto trace = forward(stack, r.model.params, b.tensor());
      Mat<float> g;
      row.push_back(double(bce_with_logits<float>(trace.logits, b.labels, 1.0f, &g)));
      backward(stack, r.model.params, trace, g, grads, {true, false});
    }
    adam_step(r.model.params, grads, hyper.lr, ++r.model.steps);
    r.log.rows.push_back(std::move(row));
  }
  return r;
}

BranchScores score_unifad(const UniFADModel<float>& m, const std::vector<ImageSample>& samples,
                          bool with_features, int chunk) {
  BranchScores out;
  const Index n = Index(samples.size());
  out.branch.resize(n, m.num_branches());
  out.final.resize(n);
  if (with_features) out.features.resize(n, m.num_branches() * m.arch.hidden_units);
  const Eigen::VectorXd v = m.params.at(UniFADModel<float>::kHeadW).col(0).cast<double>();
  const double b = double(m.params.at(UniFADModel<float>::kHeadB)(0, 0));
  for (std::size_t i = 0; i < samples.size(); i += std::size_t(chunk)) {
    const std::size_t end = std::min(samples.size(), i + std::size_t(chunk));
    const auto tr = unifad_forward(m, make_batch(samples, i, end));
    // scores from the logits in double so saturated float sigmoids do not tie
    for (int t = 0; t < m.num_branches(); ++t) {
      const auto& z = tr.branches[std::size_t(t)].logits;
      for (Index r = 0; r < z.rows(); ++r) out.branch(Index(i) + r, t) = detail::sigmoid(double(z(r, 0)));
    }
    for (Index r = Index(i); r < Index(end); ++r) {
      if (m.final_mode == FinalMode::max_branch) {
        out.final(r) = out.branch.row(r).maxCoeff();
      } else {
        out.final(r) = detail::sigmoid(out.branch.row(r).dot(v) + b);
      }
    }
    if (with_features) out.features.middleRows(Index(i), Index(end - i)) = tr.features().cast<double>();
  }
  return out;
}

}  // namespace ufad
