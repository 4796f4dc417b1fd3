#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "patchdev/embedstore.hpp"

namespace patchdev {

inline constexpr double kSigmaFloor = 1e-8;

enum class PriorMode { empirical, reference };
enum class SignMode { signed_, absolute };

std::string to_string(PriorMode m);
std::string to_string(SignMode m);
PriorMode prior_mode_from_string(const std::string& s);
SignMode sign_mode_from_string(const std::string& s);

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

namespace detail {
template <typename A, typename B>
double dot(std::span<const A> a, std::span<const B> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return acc;
}
}  // namespace detail

// z.e / (|z| |e|), clamped to [-1, 1].
template <typename A, typename B>
double cosine_similarity(std::span<const A> z, std::span<const B> e) {
  if (z.size() != e.size()) throw DomainError("cosine_similarity: dimension mismatch");
  const double nz = std::sqrt(detail::dot(z, z));
  const double ne = std::sqrt(detail::dot(e, e));
  if (!(nz > 0.0) || !(ne > 0.0)) throw DomainError("cosine_similarity: zero-norm input");
  const double c = detail::dot(z, e) / (nz * ne);
  return c < -1.0 ? -1.0 : (c > 1.0 ? 1.0 : c);
}

inline double cosine_similarity(std::span<const double> z, std::span<const double> e) {
  return cosine_similarity<double, double>(z, e);
}

struct SimilarityMap {
  std::vector<double> normal;    // s_n(p)
  std::vector<double> abnormal;  // s_a(p)
  PatchGrid grid;
};

// Row-major over the stored patch grid. Prompts are the effective (refined)
// embeddings; they need not be unit-norm.
SimilarityMap similarity_maps(const ImageRecord& record, std::span<const double> prompt_normal,
                              std::span<const double> prompt_abnormal);

struct GaussianPrior {
  double mu = 0.0;
  double sigma = 1.0;
  PriorMode mode = PriorMode::empirical;
  std::size_t sample_count = 0;
  std::uint64_t seed = 0;
  bool sigma_clamped = false;
};

// Sample mean and (n-1) standard deviation of the supplied scores.
GaussianPrior estimate_prior_empirical(std::span<const double> scores);

// Mean and (n-1) standard deviation of `count` standard-normal draws.
GaussianPrior estimate_prior_reference(std::size_t count, std::uint64_t seed);

inline constexpr std::size_t kMinReferenceCount = 1000;

std::vector<double> deviation_map(std::span<const double> scores, const GaussianPrior& prior, SignMode mode);

// k = max(1, round(percent / 100 * P)), half away from zero, capped at P.
std::size_t topk_count(std::size_t patches, double percent);

// Indices of the k largest entries, ascending. Ties go to the lower index.
std::vector<std::size_t> topk_select(std::span<const double> d, double percent);

double aggregate_topk(std::span<const double> d, std::span<const std::size_t> selected);

struct DeviationResult {
  std::vector<double> d;
  std::vector<std::size_t> selected;
  double aggregate = 0.0;
  SignMode sign = SignMode::signed_;
};

DeviationResult evaluate_deviation(std::span<const double> scores, const GaussianPrior& prior, SignMode sign,
                                   double topk_percent);

}  // namespace patchdev
