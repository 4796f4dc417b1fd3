#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "patchdev/devcore.hpp"
#include "patchdev/embedstore.hpp"
#include "patchdev/prompts.hpp"

namespace patchdev {

inline constexpr std::uint32_t kMapSide = 256;

// deviation: deviation of s_a under the frozen prior (the scorer's output).
// raw_similarity: plain s_a, used as the untrained reference point.
enum class ScoreSource { deviation, raw_similarity };

std::string to_string(ScoreSource s);
ScoreSource score_source_from_string(const std::string& s);

struct AnomalyMap {
  std::string id;
  PatchGrid grid;
  std::vector<double> patch_scores;  // h * w, row-major
  std::uint32_t height = kMapSide;
  std::uint32_t width = kMapSide;
  std::vector<double> pixels;        // height * width
  double image_score = 0.0;
  double min = 0.0;
  double max = 0.0;
  ScoreSource source = ScoreSource::deviation;
};

std::vector<double> patch_anomaly_map(const ImageRecord& record, const PromptPair& prompts,
                                      const GaussianPrior& prior, const HyperParams& hp);

// Align-corners-false bilinear resize: output pixel j samples source
// coordinate (j + 0.5) * in / out - 0.5, clamped to the grid.
std::vector<double> upsample_bilinear(std::span<const double> scores, PatchGrid grid, std::uint32_t out_h,
                                      std::uint32_t out_w);

// Normalised 1-D kernel of radius ceil(3 sigma). sigma = 0 gives {1}.
std::vector<double> gaussian_kernel(double sigma);

// Separable Gaussian blur with half-sample symmetric padding (d c b a | a b c d).
std::vector<double> smooth_gaussian(std::span<const double> map, std::uint32_t h, std::uint32_t w, double sigma);

double image_score(std::span<const double> patch_scores, const HyperParams& hp);

AnomalyMap score_image(const ImageRecord& record, const PromptPair& prompts, const GaussianPrior& prior,
                       const HyperParams& hp, ScoreSource source = ScoreSource::deviation);

// Binary PGM (P5), min-max normalised over this map; a flat map renders as 0.
std::vector<std::uint8_t> encode_pgm(std::span<const double> pixels, std::uint32_t h, std::uint32_t w);
nlohmann::json map_sidecar(const AnomalyMap& map, const HyperParams& hp);

// Writes <id>.pgm, <id>.json and <id>.map.devt (raw f32 pixel map).
void write_anomaly_map(const std::filesystem::path& dir, const AnomalyMap& map, const HyperParams& hp);

}  // namespace patchdev
