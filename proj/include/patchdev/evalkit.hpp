#pragma once

#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "patchdev/embedstore.hpp"
#include "patchdev/prompts.hpp"
#include "patchdev/scoremap.hpp"
#include "patchdev/trainer.hpp"

namespace patchdev {

class UndefinedMetricError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Mann-Whitney U / (n_pos * n_neg), ties counted as one half.
double auroc(std::span<const double> scores, std::span<const int> labels);

enum class PixelPooling { pooled, per_image };

// Mask value 255 is the positive class. Pooled: one AUROC over every pixel of
// every map. Per-image: mean AUROC over maps whose mask holds both classes.
double pixel_auroc(std::span<const std::vector<double>> maps, std::span<const TensorU8> masks,
                   PixelPooling pooling = PixelPooling::pooled);

struct EvalRecord {
  std::string class_name;
  std::string level;      // image | pixel | pixel_per_image
  std::string parameter;  // swept parameter, "none" for plain evaluation
  double value = 0.0;
  double auroc = 0.0;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
  HyperParams hp;
};

struct EvalOptions {
  ScoreSource source = ScoreSource::deviation;
  PixelPooling pooling = PixelPooling::pooled;
  bool image_level = true;
};

std::vector<AnomalyMap> score_split(const DatasetManifest& dataset, const FitResult& fit, const HyperParams& hp,
                                    Split split = Split::test, ScoreSource source = ScoreSource::deviation);

// Image- and pixel-level AUROC over the test split. Levels whose metric is
// undefined (single class) are omitted.
std::vector<EvalRecord> evaluate(const DatasetManifest& dataset, const FitResult& fit, const HyperParams& hp,
                                 const EvalOptions& options = {});

enum class SweepParam { lambda, topk_percent, margin };

std::string to_string(SweepParam p);
SweepParam sweep_param_from_string(const std::string& s);
HyperParams with_param(HyperParams hp, SweepParam p, double value);

struct SweepTable {
  SweepParam parameter;
  std::vector<double> values;
  std::vector<EvalRecord> records;  // one pixel-level record per (class, value)
};

SweepTable sweep(const DatasetManifest& dataset, const HyperParams& base, SweepParam parameter,
                 std::span<const double> values, const EvalOptions& options = {});

// header: class,parameter,value,level,auroc,n_pos,n_neg
std::string to_csv(std::span<const EvalRecord> records);
void write_csv(const std::filesystem::path& path, std::span<const EvalRecord> records);

}  // namespace patchdev
