#pragma once

#include <algorithm>
#include <random>
#include <vector>

#include "oracles.hpp"
#include "patchdev/devloss.hpp"
#include "patchdev/trainer.hpp"

namespace fixtures {

struct GradInstance {
  std::vector<patchdev::TrainingBag> bags;
  patchdev::PromptPair prompts;
  patchdev::GaussianPrior prior;
  patchdev::HyperParams hp;
};

// Distance from the point to the nearest non-differentiable configuration,
// in deviation units: Top-K boundary, |.| kinks, and the hinge at D = a.
inline double kink_distance(const GradInstance& g) {
  using namespace patchdev;
  const auto e_a = g.prompts.effective_abnormal();
  double dist = 1e300;
  for (const auto& bag : g.bags) {
    std::vector<double> s(bag.patch_count());
    for (std::size_t p = 0; p < s.size(); ++p) s[p] = detail::dot(bag.row(p), std::span<const double>(e_a));
    const auto r = evaluate_deviation(s, g.prior, g.hp.sign_mode, g.hp.topk_percent);
    if (r.selected.size() < s.size()) {
      std::vector<double> sorted = r.d;
      std::sort(sorted.begin(), sorted.end(), std::greater<>());
      dist = std::min(dist, sorted[r.selected.size() - 1] - sorted[r.selected.size()]);
    }
    if (g.hp.sign_mode == SignMode::absolute) {
      for (double x : s) dist = std::min(dist, std::abs(x - g.prior.mu) / g.prior.sigma);
    }
    dist = std::min(dist, bag.label == 0 ? std::abs(r.aggregate) : std::abs(r.aggregate - g.hp.margin));
  }
  return dist;
}

// Random instance with d <= max_dim and P <= max_patches, resampled until it
// sits at least `clearance` away from every kink.
inline GradInstance random_instance(std::mt19937_64& rng, patchdev::PriorMode prior_mode,
                                    patchdev::SignMode sign_mode, double lambda, std::size_t max_dim = 16,
                                    std::size_t max_patches = 16, double clearance = 1e-2) {
  using namespace patchdev;
  std::uniform_int_distribution<std::size_t> dim_d(2, max_dim), patch_d(2, max_patches), bag_d(1, 3);
  std::uniform_int_distribution<int> label_d(0, 1);
  std::uniform_real_distribution<double> pct_d(5.0, 100.0), margin_d(0.5, 5.0);
  std::normal_distribution<double> n(0.0, 0.3);
  for (;;) {
    const std::size_t d = dim_d(rng), P = patch_d(rng), B = bag_d(rng);
    PromptPair prompts(oracle::random_unit(rng, d), oracle::random_unit(rng, d));
    for (auto& x : prompts.delta_normal) x = n(rng);
    for (auto& x : prompts.delta_abnormal) x = n(rng);
    GradInstance g{{}, prompts, {}, {}};
    g.hp.lambda = lambda;
    g.hp.prior_mode = prior_mode;
    g.hp.sign_mode = sign_mode;
    g.hp.topk_percent = pct_d(rng);
    g.hp.margin = margin_d(rng);
    g.hp.reference_count = 1000;
    g.hp.seed = rng();
    for (std::size_t b = 0; b < B; ++b) {
      TrainingBag bag;
      bag.id = "bag" + std::to_string(b);
      bag.dim = d;
      bag.label = label_d(rng);
      for (std::size_t p = 0; p < P; ++p) {
        const auto z = oracle::random_unit(rng, d);
        bag.patches.insert(bag.patches.end(), z.begin(), z.end());
      }
      g.bags.push_back(std::move(bag));
    }
    g.prior = fit_prior(g.bags, g.prompts, g.hp);
    if (g.prior.sigma_clamped) continue;
    if (kink_distance(g) >= clearance) return g;
  }
}

}  // namespace fixtures
