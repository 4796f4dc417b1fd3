#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "patchdev/devcore.hpp"
#include "patchdev/prompts.hpp"

namespace patchdev {

// One image's patches as unit-norm double rows, with its bag label.
struct TrainingBag {
  std::string id;
  std::size_t dim = 0;
  std::vector<double> patches;  // P * dim
  int label = 0;

  std::size_t patch_count() const { return dim == 0 ? 0 : patches.size() / dim; }
  std::span<const double> row(std::size_t p) const {
    return std::span<const double>(patches).subspan(p * dim, dim);
  }
};

TrainingBag make_bag(const ImageRecord& record, int label);

struct LossBreakdown {
  double total = 0.0;
  double align = 0.0;
  double deviation = 0.0;              // unweighted; total = align + lambda * deviation
  std::vector<double> image_deviation; // D(x) per bag, abnormal channel
  std::vector<double> grad_normal;     // dL/d delta_n
  std::vector<double> grad_abnormal;   // dL/d delta_a
};

// lambda * [(1 - y)|D| + y max(0, a - D)].
double deviation_loss(double aggregate, int label, double margin, double lambda);

// Mean over patches of -log softmax_n([s_n, s_a] / tau).
double alignment_loss(const SimilarityMap& sim, double temperature);

// Mean over bags of alignment + lambda * deviation on the abnormal channel.
// Top-K sets are re-selected from the current prompts and held fixed for the
// derivative; no gradient flows through the prior.
LossBreakdown total_loss_and_grads(std::span<const TrainingBag> bags, const PromptPair& prompts,
                                   const GaussianPrior& prior, const HyperParams& hp);

double total_loss(std::span<const TrainingBag> bags, const PromptPair& prompts, const GaussianPrior& prior,
                  const HyperParams& hp);

// max_i |analytic_i - central_diff_i| / max(1e-8, |analytic_i|)
double finite_difference_check(const std::function<double(std::span<const double>)>& fn,
                               std::span<const double> point, std::span<const double> analytic, double h);

// Packs (delta_n, delta_a) into one vector and checks total_loss_and_grads
// against central differences of total_loss.
double check_prompt_gradients(std::span<const TrainingBag> bags, const PromptPair& prompts,
                              const GaussianPrior& prior, const HyperParams& hp, double h);

}  // namespace patchdev
