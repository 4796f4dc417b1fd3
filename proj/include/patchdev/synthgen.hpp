#pragma once

#include <cstdint>

#include <json.hpp>

#include "patchdev/embedstore.hpp"

namespace patchdev {

struct SynthConfig {
  std::uint32_t dim = 64;
  PatchGrid grid{16, 16};
  std::uint32_t test_images = 20;
  double anomaly_fraction = 0.05;  // of the patches in an anomalous image, as one block
  double noise = 0.1;              // RMS angular spread of normal patches around u_n, radians
  double alpha = 0.5;              // mixing weight toward u_a for anomalous patches
  double hard_fraction = 0.05;     // normal-image patches drawn with doubled noise
  std::uint64_t seed = 0;
  std::string class_name = "synthetic";

  void check() const;
};

void to_json(nlohmann::json& j, const SynthConfig& c);
void from_json(const nlohmann::json& j, SynthConfig& c);

// One train image (normal) and test_images test images; odd-indexed test
// images carry one contiguous anomalous block. Pure function of the config.
DatasetManifest generate(const SynthConfig& config);

// Patch labels: a patch is positive iff any of its pixels is masked.
std::vector<int> patch_labels_from_mask(const TensorU8& mask, PatchGrid grid);

// Pixel row/column range [begin, end) covered by patch index i of n along a 256-pixel side.
std::pair<std::uint32_t, std::uint32_t> patch_pixel_range(std::uint32_t i, std::uint32_t n);

}  // namespace patchdev
