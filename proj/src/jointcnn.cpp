#include "ufad/jointcnn.hpp"

#include "ufad/sampler.hpp"

#include <fstream>
#include <iomanip>

namespace ufad {

void Architecture::validate() const {
  const Index div = Index(1) << conv_filters.size();
  if (image_size < div || image_size % div != 0)
    throw ConfigError("image_size " + std::to_string(image_size) + " is not divisible by " +
                      std::to_string(div) + " for " + std::to_string(conv_filters.size()) +
                      " stride-2 layers");
  if (channels < 1) throw ConfigError("channels must be >= 1");
  if (hidden_units < 1) throw ConfigError("hidden_units must be >= 1");
}

nlohmann::json Architecture::to_json() const {
  return {{"image_size", image_size},
          {"channels", channels},
          {"conv_filters", conv_filters},
          {"hidden_units", hidden_units}};
}

void LossLog::write_csv(const std::string& path, const std::string& comment) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  if (!comment.empty()) out << "# " << comment << '\n';
  out << "step";
  for (const auto& c : columns) out << ',' << c;
  out << '\n' << std::setprecision(9);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out << i + 1;
    for (double v : rows[i]) out << ',' << v;
    out << '\n';
  }
}

double LossLog::smoothed(std::size_t column, std::size_t step, std::size_t window) const {
  if (step == 0 || step > rows.size()) throw DataError("loss log step out of range");
  const std::size_t begin = step > window ? step - window : 0;
  double s = 0;
  for (std::size_t i = begin; i < step; ++i) s += rows[i].at(column);
  return s / double(step - begin);
}

JointTrainResult train_joint(const std::vector<ImageSample>& train, const Architecture& arch,
                             const TrainHyper& hyper, std::vector<int> attack_types) {
  SplitIndex index(train);
  if (index.bona_fides().empty()) throw DataError("train split has no bona fide samples");
  if (attack_types.empty()) attack_types = index.types();
  if (attack_types.empty()) throw DataError("train split has no attack samples");
  for (int t : attack_types)
    if (!index.has_type(t)) throw DataError("train split has no samples of attack type " + std::to_string(t));

  JointTrainResult r{build_joint<float>(arch, hyper.seed), {{"loss"}, {}}};
  BalancedSampler sampler(index.bona_fides(), attack_types, index, hyper.flip_prob);
  std::mt19937_64 rng(mix_seed(hyper.seed, 0x5a3));
  for (int step = 1; step <= hyper.iters; ++step) {
    const Batch b = sampler.draw(std::size_t(hyper.batch), rng);
    const auto trace = forward(r.model.stack, r.model.params, b.tensor());
    Mat<float> g;
    const float loss = bce_with_logits<float>(trace.logits, b.labels, 1.0f, &g);
    Gradients<float> grads;
    backward(r.model.stack, r.model.params, trace, g, grads, {true, false});
    adam_step(r.model.params, grads, hyper.lr, step);
    r.log.rows.push_back({double(loss)});
  }
  r.model.steps = hyper.iters;
  return r;
}

Eigen::MatrixXd embed(const JointModel<float>& model, const std::vector<ImageSample>& samples, int chunk) {
  Eigen::MatrixXd out(Index(samples.size()), model.arch.hidden_units);
  for (std::size_t i = 0; i < samples.size(); i += std::size_t(chunk)) {
    const std::size_t end = std::min(samples.size(), i + std::size_t(chunk));
    const auto trace = forward(model.stack, model.params, make_batch(samples, i, end));
    out.middleRows(Index(i), Index(end - i)) = trace.embedding().cast<double>();
  }
  return out;
}

std::vector<double> score_joint(const JointModel<float>& model, const std::vector<ImageSample>& samples,
                                int chunk) {
  std::vector<double> out;
  out.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); i += std::size_t(chunk)) {
    const std::size_t end = std::min(samples.size(), i + std::size_t(chunk));
    const auto trace = forward(model.stack, model.params, make_batch(samples, i, end));
    for (Index r = 0; r < trace.logits.rows(); ++r) out.push_back(detail::sigmoid(double(trace.logits(r, 0))));
  }
  return out;
}

}  // namespace ufad
