#include "patchdev/scoremap.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace patchdev {

std::string to_string(ScoreSource s) { return s == ScoreSource::deviation ? "deviation" : "raw_similarity"; }

ScoreSource score_source_from_string(const std::string& s) {
  if (s == "deviation") return ScoreSource::deviation;
  if (s == "raw" || s == "raw_similarity") return ScoreSource::raw_similarity;
  throw std::invalid_argument("unknown score source '" + s + "'");
}

std::vector<double> patch_anomaly_map(const ImageRecord& record, const PromptPair& prompts,
                                      const GaussianPrior& prior, const HyperParams& hp) {
  const auto sim = similarity_maps(record, prompts.effective_normal(), prompts.effective_abnormal());
  return deviation_map(sim.abnormal, prior, hp.sign_mode);
}

std::vector<double> upsample_bilinear(std::span<const double> scores, PatchGrid grid, std::uint32_t out_h,
                                      std::uint32_t out_w) {
  if (grid.h == 0 || grid.w == 0) throw DomainError("upsample_bilinear: empty grid");
  if (scores.size() != grid.patches()) throw DomainError("upsample_bilinear: score count does not match grid");

  struct Tap {
    std::size_t lo, hi;
    double frac;
  };
  auto taps = [](std::uint32_t in, std::uint32_t out) {
    std::vector<Tap> t(out);
    const double scale = static_cast<double>(in) / out;
    for (std::uint32_t j = 0; j < out; ++j) {
      double x = (j + 0.5) * scale - 0.5;
      x = std::clamp(x, 0.0, static_cast<double>(in - 1));
      const auto lo = static_cast<std::size_t>(std::floor(x));
      const auto hi = std::min<std::size_t>(lo + 1, in - 1);
      t[j] = {lo, hi, x - static_cast<double>(lo)};
    }
    return t;
  };
  const auto ty = taps(grid.h, out_h);
  const auto tx = taps(grid.w, out_w);

  std::vector<double> out(static_cast<std::size_t>(out_h) * out_w);
  for (std::uint32_t i = 0; i < out_h; ++i) {
    const auto& a = ty[i];
    for (std::uint32_t j = 0; j < out_w; ++j) {
      const auto& b = tx[j];
      const double top = scores[a.lo * grid.w + b.lo] * (1.0 - b.frac) + scores[a.lo * grid.w + b.hi] * b.frac;
      const double bot = scores[a.hi * grid.w + b.lo] * (1.0 - b.frac) + scores[a.hi * grid.w + b.hi] * b.frac;
      out[static_cast<std::size_t>(i) * out_w + j] = top * (1.0 - a.frac) + bot * a.frac;
    }
  }
  return out;
}

std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma >= 0.0)) throw DomainError("gaussian_kernel: sigma must be >= 0");
  if (sigma == 0.0) return {1.0};
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += k[i + radius];
  }
  for (auto& v : k) v /= sum;
  return k;
}

namespace {

// Half-sample symmetric reflection into [0, n).
std::size_t reflect(long i, long n) {
  const long period = 2 * n;
  long m = i % period;
  if (m < 0) m += period;
  return static_cast<std::size_t>(m < n ? m : period - 1 - m);
}

}  // namespace

std::vector<double> smooth_gaussian(std::span<const double> map, std::uint32_t h, std::uint32_t w, double sigma) {
  if (map.size() != static_cast<std::size_t>(h) * w) throw DomainError("smooth_gaussian: size mismatch");
  if (sigma == 0.0) return std::vector<double>(map.begin(), map.end());
  const auto k = gaussian_kernel(sigma);
  const long r = static_cast<long>(k.size() / 2);

  std::vector<double> tmp(map.size()), out(map.size());
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      double acc = 0.0;
      for (long t = -r; t <= r; ++t) acc += k[t + r] * map[y * w + reflect(x + t, w)];
      tmp[y * w + x] = acc;
    }
  }
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      double acc = 0.0;
      for (long t = -r; t <= r; ++t) acc += k[t + r] * tmp[reflect(y + t, h) * w + x];
      out[y * w + x] = acc;
    }
  }
  return out;
}

double image_score(std::span<const double> patch_scores, const HyperParams& hp) {
  return aggregate_topk(patch_scores, topk_select(patch_scores, hp.topk_percent));
}

AnomalyMap score_image(const ImageRecord& record, const PromptPair& prompts, const GaussianPrior& prior,
                       const HyperParams& hp, ScoreSource source) {
  AnomalyMap m;
  m.id = record.id;
  m.grid = record.grid;
  m.source = source;
  if (source == ScoreSource::deviation) {
    m.patch_scores = patch_anomaly_map(record, prompts, prior, hp);
  } else {
    m.patch_scores = similarity_maps(record, prompts.effective_normal(), prompts.effective_abnormal()).abnormal;
  }
  m.image_score = image_score(m.patch_scores, hp);
  m.pixels = smooth_gaussian(upsample_bilinear(m.patch_scores, record.grid, m.height, m.width), m.height, m.width,
                             hp.blur_sigma);
  const auto [lo, hi] = std::minmax_element(m.pixels.begin(), m.pixels.end());
  m.min = *lo;
  m.max = *hi;
  return m;
}

std::vector<std::uint8_t> encode_pgm(std::span<const double> pixels, std::uint32_t h, std::uint32_t w) {
  if (pixels.size() != static_cast<std::size_t>(h) * w) throw DomainError("encode_pgm: size mismatch");
  const std::string header = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  const auto [lo, hi] = std::minmax_element(pixels.begin(), pixels.end());
  const double range = pixels.empty() ? 0.0 : *hi - *lo;
  for (double v : pixels) {
    const double t = range > 0.0 ? (v - *lo) / range : 0.0;
    out.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(t, 0.0, 1.0) * 255.0)));
  }
  return out;
}

nlohmann::json map_sidecar(const AnomalyMap& map, const HyperParams& hp) {
  return nlohmann::json{{"id", map.id},
                        {"min", map.min},
                        {"max", map.max},
                        {"image_score", map.image_score},
                        {"score_source", to_string(map.source)},
                        {"sign_mode", to_string(hp.sign_mode)},
                        {"topk_percent", hp.topk_percent},
                        {"blur_sigma", hp.blur_sigma},
                        {"grid", {map.grid.h, map.grid.w}},
                        {"size", {map.height, map.width}}};
}

void write_anomaly_map(const std::filesystem::path& dir, const AnomalyMap& map, const HyperParams& hp) {
  std::filesystem::create_directories(dir);
  write_file_bytes(dir / (map.id + ".pgm"), encode_pgm(map.pixels, map.height, map.width));
  const auto text = map_sidecar(map, hp).dump(2) + "\n";
  write_file_bytes(dir / (map.id + ".json"), std::vector<std::uint8_t>(text.begin(), text.end()));
  TensorF32 raw{{map.height, map.width}, {}};
  raw.values.reserve(map.pixels.size());
  for (double v : map.pixels) raw.values.push_back(static_cast<float>(v));
  write_tensor(dir / (map.id + ".map.devt"), raw);
}

}  // namespace patchdev
