#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace fvlfp::data {

// Row-major samples: either square grayscale images (height x width pixels)
// or ingested feature vectors (height = width = 0).
struct Dataset {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t feature_dim = 0;  // values per sample
  std::vector<double> values;
  std::vector<int> labels;
  std::vector<int> groups;

  std::size_t size() const noexcept { return labels.size(); }
  bool is_embedding() const noexcept { return height == 0; }
  std::span<const double> sample(std::size_t i) const {
    return {values.data() + i * feature_dim, feature_dim};
  }
  Dataset subset(std::span<const std::size_t> ids) const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct SyntheticSpec {
  std::size_t n = 4000;
  std::size_t image_size = 32;
  std::size_t patch_size = 8;
  double label_signal = 0.15;
  double group_signal = 0.3;
  // Probability that the group is copied from the label; otherwise it is a
  // fair coin.
  double spurious_strength = 0.8;
  double noise_sigma = 0.3;
  // Fixes the label and group textures. Datasets meant to be compared must
  // share it.
  std::uint64_t pattern_seed = 7;
  std::uint64_t seed = 1;

  void validate() const;
};

// Patch indices (row-major over the patch grid) carrying each pattern.
std::vector<std::size_t> label_patches(const SyntheticSpec& spec);
std::vector<std::size_t> group_patches(const SyntheticSpec& spec);
// Unit-amplitude +-1 texture over the full image, zero outside its patches.
std::vector<double> pattern_image(const SyntheticSpec& spec, bool group_pattern);

Dataset generate_synthetic(const SyntheticSpec& spec);

struct Partition {
  std::vector<std::vector<std::size_t>> shards;  // sorted sample ids
  double alpha = 0.0;
};

// Dirichlet(alpha) proportions per (label, group) cell, largest-remainder
// rounding, then empty shards take one sample from the largest shard.
Partition dirichlet_partition(std::span<const int> labels, std::span<const int> groups, std::size_t clients,
                              double alpha, std::uint64_t seed);

// Equal counts per (label, group) cell, drawn without replacement from the
// ids not listed in `exclude`. Returned ids are sorted.
std::vector<std::size_t> balanced_test_sample(std::span<const int> labels, std::span<const int> groups,
                                              std::size_t size, std::uint64_t seed,
                                              std::span<const std::size_t> exclude = {});

Dataset load_embeddings(const std::string& path);
void write_embeddings(const std::string& path, const Dataset& ds);

}  // namespace fvlfp::data
