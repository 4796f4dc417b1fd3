#pragma once

#include <filesystem>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "patchdev/devcore.hpp"
#include "patchdev/devloss.hpp"
#include "patchdev/embedstore.hpp"
#include "patchdev/prompts.hpp"

namespace patchdev {

struct EpochRecord {
  int epoch = 0;
  double total = 0.0;
  double align = 0.0;
  double deviation = 0.0;
  double prior_mu = 0.0;
  double prior_sigma = 0.0;
  std::vector<double> image_deviation;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  GaussianPrior final_prior;
  std::vector<double> delta_normal;
  std::vector<double> delta_abnormal;
  std::vector<double> delta_shared;
  std::uint64_t seed = 0;
  double wall_clock_seconds = 0.0;
  bool sigma_clamped = false;  // any epoch hit the sigma floor

  // Deterministic fields only unless include_timing is set.
  nlohmann::json to_json(bool include_timing = true) const;
};

struct FitResult {
  PromptPair prompts;
  GaussianPrior prior;  // frozen for inference
  TrainReport report;
};

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, int last_finite_epoch)
      : std::runtime_error(what), last_finite_epoch_(last_finite_epoch) {}
  int last_finite_epoch() const { return last_finite_epoch_; }

 private:
  int last_finite_epoch_;
};

// Prior over the configured channel of the given bags' similarities, or the
// standard-normal reference prior.
GaussianPrior fit_prior(std::span<const TrainingBag> bags, const PromptPair& prompts, const HyperParams& hp);

// z' = normalize((1 - alpha) z + alpha e_a) on k randomly chosen patches.
TrainingBag make_pseudo_anomaly(const TrainingBag& bag, std::span<const double> e_abnormal, double topk_percent,
                                std::uint64_t seed, double alpha = 0.5);

// Full-batch gradient descent on the prompt deltas over the train split.
FitResult fit(const DatasetManifest& dataset, const HyperParams& hp);

// learned/ layout: delta_{normal,abnormal,shared}.devt, prompt_{normal,abnormal}.devt
// and prior.devt (f32, for external readers), plus learned.json holding the
// exact double values that load_fit uses, and train_report.json.
void save_fit(const std::filesystem::path& dir, const FitResult& fit, const HyperParams& hp);
FitResult load_fit(const std::filesystem::path& dir, const DatasetManifest& dataset, HyperParams* hp_out = nullptr);

}  // namespace patchdev
