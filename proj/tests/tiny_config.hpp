#pragma once

// Seconds-scale experiment config: 16x16 images, narrow convs, a few steps.

#include "ufad/experiment.hpp"

#include <filesystem>
#include <fstream>

namespace ufad::test {

inline ExperimentConfig tiny_config(const std::string& out_dir, std::uint64_t seed = 7) {
  ExperimentConfig c;
  c.dataset.image_size = 16;
  c.dataset.bona_fide_count = {{Split::train, 60}, {Split::val, 40}, {Split::test, 40}};
  c.dataset.attacks_per_type = {{Split::train, 8}, {Split::val, 6}, {Split::test, 6}};
  c.arch.image_size = 16;
  c.arch.conv_filters = {4, 4, 8, 8};
  c.arch.hidden_units = 8;
  c.hyper.iters = 30;
  c.hyper.batch = 4;
  c.hyper.score_chunk = 32;
  c.partition.restarts = 5;
  c.sweep.shared_depths = {0, 4};
  c.sweep.branch_counts = {2};
  c.fusion.gbdt.num_trees = 10;
  c.out_dir = out_dir;
  c.set_seed(seed);
  return c;
}

inline std::string scratch_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("ufad_" + name);
  std::filesystem::remove_all(p);
  return p.string();
}

inline std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace ufad::test
