#include "patchdev/devcore.hpp"

#include <algorithm>
#include <numeric>
#include <random>

namespace patchdev {

std::string to_string(PriorMode m) { return m == PriorMode::empirical ? "empirical" : "reference"; }
std::string to_string(SignMode m) { return m == SignMode::signed_ ? "signed" : "absolute"; }

PriorMode prior_mode_from_string(const std::string& s) {
  if (s == "empirical") return PriorMode::empirical;
  if (s == "reference") return PriorMode::reference;
  throw std::invalid_argument("unknown prior mode '" + s + "'");
}

SignMode sign_mode_from_string(const std::string& s) {
  if (s == "signed") return SignMode::signed_;
  if (s == "absolute") return SignMode::absolute;
  throw std::invalid_argument("unknown sign mode '" + s + "'");
}

SimilarityMap similarity_maps(const ImageRecord& record, std::span<const double> prompt_normal,
                              std::span<const double> prompt_abnormal) {
  const std::size_t d = record.dim();
  if (prompt_normal.size() != d || prompt_abnormal.size() != d) {
    throw DomainError("similarity_maps: record " + record.id + " has d=" + std::to_string(d) +
                      " but prompts have d=" + std::to_string(prompt_normal.size()));
  }
  SimilarityMap out;
  out.grid = record.grid;
  const std::size_t P = record.patch_count();
  out.normal.resize(P);
  out.abnormal.resize(P);
  for (std::size_t p = 0; p < P; ++p) {
    out.normal[p] = cosine_similarity(record.row(p), prompt_normal);
    out.abnormal[p] = cosine_similarity(record.row(p), prompt_abnormal);
  }
  return out;
}

namespace {

GaussianPrior moments(std::span<const double> xs) {
  const double n = static_cast<double>(xs.size());
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  GaussianPrior p;
  p.mu = mean;
  p.sigma = std::sqrt(ss / (n - 1.0));
  p.sample_count = xs.size();
  if (!(p.sigma > kSigmaFloor)) {
    p.sigma = kSigmaFloor;
    p.sigma_clamped = true;
  }
  return p;
}

}  // namespace

GaussianPrior estimate_prior_empirical(std::span<const double> scores) {
  if (scores.size() < 2) throw DomainError("empirical prior needs at least 2 scores");
  for (double s : scores)
    if (!std::isfinite(s)) throw DomainError("empirical prior: non-finite score");
  auto p = moments(scores);
  p.mode = PriorMode::empirical;
  return p;
}

GaussianPrior estimate_prior_reference(std::size_t count, std::uint64_t seed) {
  if (count < kMinReferenceCount) {
    throw DomainError("reference prior needs at least " + std::to_string(kMinReferenceCount) + " draws");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> draws(count);
  for (auto& x : draws) x = normal(rng);
  auto p = moments(draws);
  p.mode = PriorMode::reference;
  p.seed = seed;
  return p;
}

std::vector<double> deviation_map(std::span<const double> scores, const GaussianPrior& prior, SignMode mode) {
  if (!(prior.sigma > 0.0)) throw DomainError("deviation_map: sigma must be positive");
  std::vector<double> d(scores.size());
  for (std::size_t p = 0; p < scores.size(); ++p) {
    const double z = (scores[p] - prior.mu) / prior.sigma;
    d[p] = mode == SignMode::absolute ? std::abs(z) : z;
  }
  return d;
}

std::size_t topk_count(std::size_t patches, double percent) {
  if (!(percent > 0.0 && percent <= 100.0)) {
    throw DomainError("top-k percent must be in (0, 100], got " + std::to_string(percent));
  }
  const double raw = percent * static_cast<double>(patches) / 100.0;
  const auto k = static_cast<std::size_t>(std::llround(raw));
  return std::clamp<std::size_t>(k, 1, std::max<std::size_t>(patches, 1));
}

std::vector<std::size_t> topk_select(std::span<const double> d, double percent) {
  if (d.empty()) throw DomainError("topk_select: empty score vector");
  const std::size_t k = topk_count(d.size(), percent);
  std::vector<std::size_t> idx(d.size());
  std::iota(idx.begin(), idx.end(), 0);
  auto before = [&](std::size_t a, std::size_t b) { return d[a] > d[b] || (d[a] == d[b] && a < b); };
  std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k - 1), idx.end(), before);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

double aggregate_topk(std::span<const double> d, std::span<const std::size_t> selected) {
  if (selected.empty()) throw DomainError("aggregate_topk: empty selection");
  double acc = 0.0;
  for (auto i : selected) {
    if (i >= d.size()) throw DomainError("aggregate_topk: index out of range");
    acc += d[i];
  }
  return acc / static_cast<double>(selected.size());
}

DeviationResult evaluate_deviation(std::span<const double> scores, const GaussianPrior& prior, SignMode sign,
                                   double topk_percent) {
  DeviationResult r;
  r.sign = sign;
  r.d = deviation_map(scores, prior, sign);
  r.selected = topk_select(r.d, topk_percent);
  r.aggregate = aggregate_topk(r.d, r.selected);
  return r;
}

}  // namespace patchdev
