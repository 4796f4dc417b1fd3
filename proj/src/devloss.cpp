#include "patchdev/devloss.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace patchdev {
namespace {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double sign(double x) { return (x > 0.0) - (x < 0.0); }

// Pulls a gradient w.r.t. the unit vector e_hat = u / |u| back to u.
std::vector<double> through_normalization(const std::vector<double>& g, const std::vector<double>& e_hat,
                                          double raw_norm) {
  double proj = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) proj += e_hat[i] * g[i];
  std::vector<double> out(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) out[i] = (g[i] - e_hat[i] * proj) / raw_norm;
  return out;
}

double norm(const std::vector<double>& v) {
  double n2 = 0.0;
  for (double x : v) n2 += x * x;
  return std::sqrt(n2);
}

LossBreakdown evaluate(std::span<const TrainingBag> bags, const PromptPair& prompts, const GaussianPrior& prior,
                       const HyperParams& hp, bool want_grad) {
  if (bags.empty()) throw DomainError("loss: no training bags");
  const std::size_t d = prompts.dim();
  const auto raw_n = prompts.raw_normal();
  const auto raw_a = prompts.raw_abnormal();
  const auto e_n = normalized(raw_n);
  const auto e_a = normalized(raw_a);
  const double tau = hp.temperature;
  const double inv_bags = 1.0 / static_cast<double>(bags.size());

  LossBreakdown out;
  std::vector<double> g_en(d, 0.0), g_ea(d, 0.0);
  std::vector<double> s_n, s_a, coef_n, coef_a;

  for (const auto& bag : bags) {
    if (bag.dim != d) {
      throw DomainError("loss: bag " + bag.id + " has d=" + std::to_string(bag.dim) + ", prompts d=" +
                        std::to_string(d));
    }
    const std::size_t P = bag.patch_count();
    if (P == 0) throw DomainError("loss: bag " + bag.id + " has no patches");
    s_n.assign(P, 0.0);
    s_a.assign(P, 0.0);
    coef_n.assign(P, 0.0);
    coef_a.assign(P, 0.0);
    for (std::size_t p = 0; p < P; ++p) {
      const auto z = bag.row(p);
      s_n[p] = detail::dot(z, std::span<const double>(e_n));
      s_a[p] = detail::dot(z, std::span<const double>(e_a));
      if (!std::isfinite(s_n[p]) || !std::isfinite(s_a[p])) {
        throw std::runtime_error("loss: non-finite similarity for image " + bag.id);
      }
    }

    double align = 0.0;
    for (std::size_t p = 0; p < P; ++p) {
      const double x = (s_a[p] - s_n[p]) / tau;
      align += softplus(x);
      const double g = logistic(x) / (tau * static_cast<double>(P)) * inv_bags;
      coef_a[p] += g;
      coef_n[p] -= g;
    }
    align /= static_cast<double>(P);

    const auto dev = evaluate_deviation(s_a, prior, hp.sign_mode, hp.topk_percent);
    const double D = dev.aggregate;
    const double bag_dev = deviation_loss(D, bag.label, hp.margin, 1.0);
    if (!std::isfinite(align) || !std::isfinite(D) || !std::isfinite(bag_dev)) {
      throw std::runtime_error("loss: non-finite intermediate for image " + bag.id);
    }
    out.align += align * inv_bags;
    out.deviation += bag_dev * inv_bags;
    out.image_deviation.push_back(D);

    if (want_grad) {
      const double dL_dD = hp.lambda * inv_bags *
                           (bag.label == 0 ? sign(D) : (D < hp.margin ? -1.0 : 0.0));
      const double k = static_cast<double>(dev.selected.size());
      for (auto p : dev.selected) {
        const double dd_ds = hp.sign_mode == SignMode::signed_ ? 1.0 / prior.sigma
                                                                : sign(s_a[p] - prior.mu) / prior.sigma;
        coef_a[p] += dL_dD * dd_ds / k;
      }
      for (std::size_t p = 0; p < P; ++p) {
        const auto z = bag.row(p);
        for (std::size_t i = 0; i < d; ++i) {
          g_en[i] += coef_n[p] * z[i];
          g_ea[i] += coef_a[p] * z[i];
        }
      }
    }
  }

  out.total = out.align + hp.lambda * out.deviation;
  if (want_grad) {
    out.grad_normal = through_normalization(g_en, e_n, norm(raw_n));
    out.grad_abnormal = through_normalization(g_ea, e_a, norm(raw_a));
    for (std::size_t i = 0; i < d; ++i) {
      if (!std::isfinite(out.grad_normal[i]) || !std::isfinite(out.grad_abnormal[i])) {
        throw std::runtime_error("loss: non-finite gradient");
      }
    }
  }
  return out;
}

}  // namespace

TrainingBag make_bag(const ImageRecord& record, int label) {
  TrainingBag bag;
  bag.id = record.id;
  bag.dim = record.dim();
  bag.label = label;
  bag.patches.reserve(record.embeddings.values.size());
  for (std::size_t p = 0; p < record.patch_count(); ++p) {
    const auto row = record.row(p);
    std::vector<double> r(row.begin(), row.end());
    const auto unit = normalized(r);
    bag.patches.insert(bag.patches.end(), unit.begin(), unit.end());
  }
  return bag;
}

double deviation_loss(double aggregate, int label, double margin, double lambda) {
  return lambda * ((1 - label) * std::abs(aggregate) + label * std::max(0.0, margin - aggregate));
}

double alignment_loss(const SimilarityMap& sim, double temperature) {
  if (sim.normal.empty() || sim.normal.size() != sim.abnormal.size()) {
    throw DomainError("alignment_loss: malformed similarity map");
  }
  double acc = 0.0;
  for (std::size_t p = 0; p < sim.normal.size(); ++p) acc += softplus((sim.abnormal[p] - sim.normal[p]) / temperature);
  return acc / static_cast<double>(sim.normal.size());
}

LossBreakdown total_loss_and_grads(std::span<const TrainingBag> bags, const PromptPair& prompts,
                                   const GaussianPrior& prior, const HyperParams& hp) {
  return evaluate(bags, prompts, prior, hp, true);
}

double total_loss(std::span<const TrainingBag> bags, const PromptPair& prompts, const GaussianPrior& prior,
                  const HyperParams& hp) {
  return evaluate(bags, prompts, prior, hp, false).total;
}

double finite_difference_check(const std::function<double(std::span<const double>)>& fn,
                               std::span<const double> point, std::span<const double> analytic, double h) {
  if (point.size() != analytic.size()) throw DomainError("finite_difference_check: size mismatch");
  std::vector<double> x(point.begin(), point.end());
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double up = fn(x);
    x[i] = orig - h;
    const double down = fn(x);
    x[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw std::runtime_error("finite_difference_check: non-finite evaluation at coordinate " + std::to_string(i));
    }
    const double numeric = (up - down) / (2.0 * h);
    worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1e-8, std::abs(analytic[i])));
  }
  return worst;
}

double check_prompt_gradients(std::span<const TrainingBag> bags, const PromptPair& prompts,
                              const GaussianPrior& prior, const HyperParams& hp, double h) {
  const std::size_t d = prompts.dim();
  const auto lb = total_loss_and_grads(bags, prompts, prior, hp);
  std::vector<double> point(prompts.delta_normal);
  point.insert(point.end(), prompts.delta_abnormal.begin(), prompts.delta_abnormal.end());
  std::vector<double> analytic(lb.grad_normal);
  analytic.insert(analytic.end(), lb.grad_abnormal.begin(), lb.grad_abnormal.end());

  PromptPair probe = prompts;
  auto fn = [&](std::span<const double> x) {
    std::copy(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(d), probe.delta_normal.begin());
    std::copy(x.begin() + static_cast<std::ptrdiff_t>(d), x.end(), probe.delta_abnormal.begin());
    return total_loss(bags, probe, prior, hp);
  };
  return finite_difference_check(fn, point, analytic, h);
}

}  // namespace patchdev
