#pragma once

// Procedural multi-attack benchmark: face-like bona fide composites plus
// parameterized perturbation families grouped into three categories.

#include "ufad/tensor.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace ufad {

enum class Split { train = 0, val = 1, test = 2 };
enum class Category { adversarial_like = 0, manipulation_like = 1, spoof_like = 2 };
enum class Family {
  sign_noise,
  pixel_flip,
  hf_sinusoid,
  local_warp,
  color_remap,
  patch_blend,
  print_blur,
  replay_moire,
  mask_matte,
};

const char* to_string(Split s);
const char* to_string(Category c);
const char* to_string(Family f);
Category category_of(Family f);
Split split_from_string(const std::string& s);

struct AttackTypeSpec {
  int type_id = 0;
  std::string name;
  Category category = Category::adversarial_like;
  Family family = Family::sign_noise;
  std::map<std::string, double> params;
};

struct ImageSample {
  Index h = 0, w = 0, c = 0;
  std::vector<float> pixels;  // HWC, values in [-1, 1]
  int label = 0;              // 0 bona fide, 1 attack
  std::optional<int> attack_type;
  Split split = Split::train;
  std::uint64_t sample_seed = 0;
  std::uint64_t base_seed = 0;  // identity of the underlying bona fide
};

struct DatasetConfig {
  int image_size = 64;
  int channels = 3;
  int num_types = 9;
  std::map<Split, int> bona_fide_count{{Split::train, 1800}, {Split::val, 450}, {Split::test, 900}};
  std::map<Split, int> attacks_per_type{{Split::train, 200}, {Split::val, 50}, {Split::test, 100}};
  std::uint64_t master_seed = 1;
  // Types excluded from train and val (unseen-attack protocol).
  std::vector<int> holdout_types;

  void validate() const;
};

/// Catalog of L attack types. The first nine cover every family once (three
/// per category); larger L cycles the families with scaled parameters.
std::vector<AttackTypeSpec> attack_catalog(int num_types);

/// Strongest documented setting of each family.
AttackTypeSpec max_strength_spec(Family f);

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

/// Seed of the i-th base identity of a split; splits use disjoint ranges.
std::uint64_t base_seed_for(std::uint64_t master_seed, Split split, std::uint64_t index);
Split split_of_base_seed(std::uint64_t base_seed);

ImageSample render_bona_fide(std::uint64_t base_seed, int image_size, int channels, Split split);

std::vector<ImageSample> gen_bona_fide(const DatasetConfig& config, Split split, int n);

/// Perturbation before clipping, same layout as `sample.pixels`.
std::vector<double> attack_pixels(const ImageSample& sample, const AttackTypeSpec& spec,
                                  std::uint64_t seed);

/// Returns a clipped attacked copy; throws DataError if `sample` is already an attack.
ImageSample apply_attack(const ImageSample& sample, const AttackTypeSpec& spec, std::uint64_t seed);

struct Dataset {
  DatasetConfig config;
  std::vector<AttackTypeSpec> types;
  std::map<Split, std::vector<ImageSample>> splits;

  const std::vector<ImageSample>& split(Split s) const { return splits.at(s); }
  std::vector<std::string> manifest_lines() const;
  std::string manifest_hash() const;
};

Dataset make_dataset(const DatasetConfig& config);

void write_manifest(const Dataset& ds, const std::string& path);

/// Flat tensor cache: per sample a 16-byte header ("UFAD", u32 H, W, C)
/// followed by little-endian float32 pixels in row-major HWC order.
void write_tensor_cache(const std::vector<ImageSample>& samples, const std::string& path);
std::vector<std::vector<float>> read_tensor_cache(const std::string& path, Index* h, Index* w,
                                                  Index* c);

nlohmann::json to_json(const DatasetConfig& config);

}  // namespace ufad
