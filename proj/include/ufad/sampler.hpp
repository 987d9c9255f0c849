#pragma once

#include "ufad/data_synth.hpp"

#include <random>
#include <span>
#include <vector>

namespace ufad {

/// Copies samples into an NHWC batch, mirroring the ones flagged in `flip`.
Activation<float> make_batch(std::span<const ImageSample* const> samples,
                             const std::vector<bool>& flip = {});
Activation<float> make_batch(const std::vector<ImageSample>& samples, std::size_t begin,
                             std::size_t end);

struct Batch {
  std::vector<const ImageSample*> samples;
  std::vector<int> labels;
  std::vector<bool> flip;

  Activation<float> tensor() const { return make_batch(samples, flip); }
  std::size_t size() const { return samples.size(); }
};

/// Index of the train split by class and attack type.
class SplitIndex {
 public:
  explicit SplitIndex(const std::vector<ImageSample>& samples);

  const std::vector<const ImageSample*>& bona_fides() const { return bona_fides_; }
  const std::vector<const ImageSample*>& of_type(int type) const;
  std::vector<int> types() const;
  bool has_type(int type) const { return by_type_.count(type) > 0; }

 private:
  std::vector<const ImageSample*> bona_fides_;
  std::map<int, std::vector<const ImageSample*>> by_type_;
};

/// Balanced two-pool sampler: the first half of a batch is drawn uniformly
/// from `negatives` with label 0, the second half picks an attack type
/// uniformly from `positive_types` and then a sample of that type, label 1.
/// Each sample is mirrored horizontally with probability `flip_prob`.
class BalancedSampler {
 public:
  BalancedSampler(std::vector<const ImageSample*> negatives, std::vector<int> positive_types,
                  const SplitIndex& index, double flip_prob = 0.5);

  Batch draw(std::size_t batch_size, std::mt19937_64& rng) const;

  const std::vector<int>& positive_types() const { return positive_types_; }

 private:
  std::vector<const ImageSample*> negatives_;
  std::vector<int> positive_types_;
  const SplitIndex* index_;
  double flip_prob_;
};

}  // namespace ufad
