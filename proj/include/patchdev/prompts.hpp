#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "patchdev/devcore.hpp"

namespace patchdev {

// Which similarity channel the empirical prior is fitted on.
enum class PriorChannel { abnormal, normal };

std::string to_string(PriorChannel c);
PriorChannel prior_channel_from_string(const std::string& s);

struct HyperParams {
  double lambda = 1.0;          // deviation weight
  double margin = 5.0;          // a, in prior standard deviations
  double topk_percent = 10.0;   // K%
  double learning_rate = 1e-2;
  int epochs = 200;
  std::uint64_t seed = 0;
  PriorMode prior_mode = PriorMode::empirical;
  PriorChannel prior_channel = PriorChannel::abnormal;
  SignMode sign_mode = SignMode::signed_;
  double temperature = 0.07;    // alignment softmax temperature
  bool pseudo_anomaly = false;
  bool shared_context = false;
  std::size_t reference_count = 100000;
  double blur_sigma = 4.0;      // pixel-map smoothing, 0 disables

  // Throws std::invalid_argument naming the first bad field.
  void check() const;
};

void to_json(nlohmann::json& j, const HyperParams& hp);
void from_json(const nlohmann::json& j, HyperParams& hp);

std::vector<double> normalized(std::span<const double> v);

// Base prompt embeddings (fixed at load) plus learned deltas. The effective
// prompt is normalize(base + shared + own).
class PromptPair {
 public:
  PromptPair(std::vector<double> base_normal, std::vector<double> base_abnormal);

  static PromptPair from_manifest(const DatasetManifest& m);

  std::size_t dim() const { return base_normal_.size(); }
  const std::vector<double>& base_normal() const { return base_normal_; }
  const std::vector<double>& base_abnormal() const { return base_abnormal_; }

  std::vector<double> delta_normal;
  std::vector<double> delta_abnormal;
  std::vector<double> delta_shared;  // zeros unless shared-context training is on

  std::vector<double> raw_normal() const;    // base + shared + own
  std::vector<double> raw_abnormal() const;
  std::vector<double> effective_normal() const { return normalized(raw_normal()); }
  std::vector<double> effective_abnormal() const { return normalized(raw_abnormal()); }

 private:
  std::vector<double> base_normal_;
  std::vector<double> base_abnormal_;
};

struct DeltaPair {
  std::vector<double> normal;
  std::vector<double> abnormal;
};

// Zero deltas; the seed is reserved for noise initialisation.
DeltaPair init_deltas(std::size_t dim, std::uint64_t seed);

}  // namespace patchdev
