#include "ufad/sampler.hpp"

#include <algorithm>
#include <cstring>

namespace ufad {

Activation<float> make_batch(std::span<const ImageSample* const> samples,
                             const std::vector<bool>& flip) {
  if (samples.empty()) throw DataError("empty batch");
  const ImageSample& first = *samples.front();
  Activation<float> x(Index(samples.size()), first.h, first.w, first.c);
  const Index plane = first.h * first.w * first.c;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const ImageSample& s = *samples[i];
    if (s.h != first.h || s.w != first.w || s.c != first.c)
      throw ShapeError("batch mixes image shapes");
    float* dst = x.data.data() + Index(i) * plane;
    if (i < flip.size() && flip[i]) {
      for (Index y = 0; y < s.h; ++y)
        for (Index xx = 0; xx < s.w; ++xx)
          std::memcpy(dst + (y * s.w + xx) * s.c, s.pixels.data() + (y * s.w + (s.w - 1 - xx)) * s.c,
                      sizeof(float) * std::size_t(s.c));
    } else {
      std::memcpy(dst, s.pixels.data(), sizeof(float) * std::size_t(plane));
    }
  }
  return x;
}

Activation<float> make_batch(const std::vector<ImageSample>& samples, std::size_t begin,
                             std::size_t end) {
  std::vector<const ImageSample*> ptrs;
  for (std::size_t i = begin; i < end; ++i) ptrs.push_back(&samples[i]);
  return make_batch(ptrs);
}

SplitIndex::SplitIndex(const std::vector<ImageSample>& samples) {
  for (const auto& s : samples) {
    if (s.attack_type)
      by_type_[*s.attack_type].push_back(&s);
    else
      bona_fides_.push_back(&s);
  }
}

const std::vector<const ImageSample*>& SplitIndex::of_type(int type) const {
  auto it = by_type_.find(type);
  if (it == by_type_.end()) throw DataError("no samples of attack type " + std::to_string(type));
  return it->second;
}

std::vector<int> SplitIndex::types() const {
  std::vector<int> out;
  for (const auto& [t, _] : by_type_) out.push_back(t);
  return out;
}

BalancedSampler::BalancedSampler(std::vector<const ImageSample*> negatives,
                                 std::vector<int> positive_types, const SplitIndex& index,
                                 double flip_prob)
    : negatives_(std::move(negatives)),
      positive_types_(std::move(positive_types)),
      index_(&index),
      flip_prob_(flip_prob) {
  if (negatives_.empty()) throw DataError("sampler has no label-0 samples");
  if (positive_types_.empty()) throw DataError("sampler has no attack types");
  for (int t : positive_types_) index_->of_type(t);
}

Batch BalancedSampler::draw(std::size_t batch_size, std::mt19937_64& rng) const {
  Batch b;
  const std::size_t half = batch_size / 2;
  for (std::size_t i = 0; i < half; ++i) {
    std::uniform_int_distribution<std::size_t> pick(0, negatives_.size() - 1);
    b.samples.push_back(negatives_[pick(rng)]);
    b.labels.push_back(0);
  }
  for (std::size_t i = half; i < batch_size; ++i) {
    std::uniform_int_distribution<std::size_t> pick_type(0, positive_types_.size() - 1);
    const auto& pool = index_->of_type(positive_types_[pick_type(rng)]);
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    b.samples.push_back(pool[pick(rng)]);
    b.labels.push_back(1);
  }
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i = 0; i < batch_size; ++i) b.flip.push_back(u(rng) < flip_prob_);
  return b;
}

}  // namespace ufad
