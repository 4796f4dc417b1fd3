#include "patchdev/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "patchdev/prompts.hpp"

namespace patchdev {

void SynthConfig::check() const {
  if (dim < 2) throw std::invalid_argument("synth: dim must be >= 2");
  if (grid.h == 0 || grid.w == 0 || grid.h > kMaskSide || grid.w > kMaskSide) {
    throw std::invalid_argument("synth: grid must be within 1..256 per side");
  }
  if (!(anomaly_fraction > 0.0 && anomaly_fraction < 1.0)) throw std::invalid_argument("synth: anomaly fraction must be in (0, 1)");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("synth: alpha must be in [0, 1]");
  if (!(noise >= 0.0)) throw std::invalid_argument("synth: noise must be >= 0");
  if (!(hard_fraction >= 0.0 && hard_fraction < 1.0)) throw std::invalid_argument("synth: hard fraction must be in [0, 1)");
  if (test_images < 1) throw std::invalid_argument("synth: need at least one test image");
}

void to_json(nlohmann::json& j, const SynthConfig& c) {
  j = nlohmann::json{{"dim", c.dim},
                     {"grid", {c.grid.h, c.grid.w}},
                     {"test_images", c.test_images},
                     {"anomaly_fraction", c.anomaly_fraction},
                     {"noise", c.noise},
                     {"alpha", c.alpha},
                     {"hard_fraction", c.hard_fraction},
                     {"seed", c.seed},
                     {"class_name", c.class_name}};
}

void from_json(const nlohmann::json& j, SynthConfig& c) {
  c.dim = j.at("dim").get<std::uint32_t>();
  c.grid = {j.at("grid")[0].get<std::uint32_t>(), j.at("grid")[1].get<std::uint32_t>()};
  c.test_images = j.at("test_images").get<std::uint32_t>();
  c.anomaly_fraction = j.at("anomaly_fraction").get<double>();
  c.noise = j.at("noise").get<double>();
  c.alpha = j.at("alpha").get<double>();
  c.hard_fraction = j.at("hard_fraction").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.class_name = j.at("class_name").get<std::string>();
}

std::pair<std::uint32_t, std::uint32_t> patch_pixel_range(std::uint32_t i, std::uint32_t n) {
  return {i * kMaskSide / n, (i + 1) * kMaskSide / n};
}

std::vector<int> patch_labels_from_mask(const TensorU8& mask, PatchGrid grid) {
  std::vector<int> labels(grid.patches(), 0);
  for (std::uint32_t r = 0; r < grid.h; ++r) {
    const auto [y0, y1] = patch_pixel_range(r, grid.h);
    for (std::uint32_t c = 0; c < grid.w; ++c) {
      const auto [x0, x1] = patch_pixel_range(c, grid.w);
      for (auto y = y0; y < y1 && !labels[r * grid.w + c]; ++y)
        for (auto x = x0; x < x1; ++x)
          if (mask.values[y * kMaskSide + x] != 0) {
            labels[r * grid.w + c] = 1;
            break;
          }
    }
  }
  return labels;
}

namespace {

class Generator {
 public:
  explicit Generator(const SynthConfig& c) : cfg_(c), rng_(c.seed) {
    std::vector<double> a = gaussian(cfg_.dim, 1.0);
    std::vector<double> b = gaussian(cfg_.dim, 1.0);
    u_n_ = normalized(a);
    const double proj = std::inner_product(b.begin(), b.end(), u_n_.begin(), 0.0);
    for (std::size_t i = 0; i < b.size(); ++i) b[i] -= proj * u_n_[i];
    u_a_ = normalized(b);
  }

  const std::vector<double>& u_n() const { return u_n_; }
  const std::vector<double>& u_a() const { return u_a_; }

  // normalize(u_n + g), g tangent to u_n with RMS norm `spread`.
  std::vector<double> normal_patch(double spread) {
    auto g = gaussian(cfg_.dim, spread / std::sqrt(static_cast<double>(cfg_.dim - 1)));
    const double proj = std::inner_product(g.begin(), g.end(), u_n_.begin(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = u_n_[i] + g[i] - proj * u_n_[i];
    return normalized(g);
  }

  std::vector<double> anomalous_patch(const std::vector<double>& z) const {
    std::vector<double> m(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) m[i] = (1.0 - cfg_.alpha) * z[i] + cfg_.alpha * u_a_[i];
    return normalized(m);
  }

  std::uint32_t uniform(std::uint32_t lo, std::uint32_t hi) {
    return std::uniform_int_distribution<std::uint32_t>(lo, hi)(rng_);
  }

  std::vector<std::size_t> choose(std::size_t n, std::size_t k) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng_);
    idx.resize(k);
    return idx;
  }

 private:
  std::vector<double> gaussian(std::size_t n, double stddev) {
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<double> v(n);
    for (auto& x : v) x = stddev * dist(rng_);
    return v;
  }

  const SynthConfig& cfg_;
  std::mt19937_64 rng_;
  std::vector<double> u_n_, u_a_;
};

TensorF32 to_tensor(const std::vector<std::vector<double>>& rows) {
  TensorF32 t{{static_cast<std::uint32_t>(rows.size()), static_cast<std::uint32_t>(rows.front().size())}, {}};
  for (const auto& r : rows)
    for (double x : r) t.values.push_back(static_cast<float>(x));
  return t;
}

TensorF32 to_tensor(const std::vector<double>& v) {
  TensorF32 t{{static_cast<std::uint32_t>(v.size())}, {}};
  for (double x : v) t.values.push_back(static_cast<float>(x));
  return t;
}

}  // namespace

DatasetManifest generate(const SynthConfig& cfg) {
  cfg.check();
  Generator gen(cfg);
  const std::size_t P = cfg.grid.patches();
  const std::size_t n_hard = static_cast<std::size_t>(std::llround(cfg.hard_fraction * static_cast<double>(P)));
  const std::size_t n_anom = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(cfg.anomaly_fraction * P)));
  const std::uint32_t bh = std::clamp<std::uint32_t>(
      static_cast<std::uint32_t>(std::llround(std::sqrt(static_cast<double>(n_anom)))), 1, cfg.grid.h);
  const std::uint32_t bw = std::clamp<std::uint32_t>(
      static_cast<std::uint32_t>(std::llround(static_cast<double>(n_anom) / bh)), 1, cfg.grid.w);

  DatasetManifest m;
  m.embed_dim = cfg.dim;
  m.class_name = cfg.class_name;
  m.grid = cfg.grid;
  m.prompt_normal = to_tensor(gen.u_n());
  m.prompt_abnormal = to_tensor(gen.u_a());
  m.metadata = {{"backbone", "synthetic"}, {"resize", kMaskSide}, {"generator", cfg}};

  auto normal_image = [&] {
    std::vector<std::vector<double>> rows(P);
    std::vector<bool> hard(P, false);
    for (auto i : gen.choose(P, n_hard)) hard[i] = true;
    for (std::size_t p = 0; p < P; ++p) rows[p] = gen.normal_patch(hard[p] ? 2.0 * cfg.noise : cfg.noise);
    return rows;
  };

  ImageRecord train;
  train.id = "train_000";
  train.split = Split::train;
  train.grid = cfg.grid;
  train.embeddings = to_tensor(normal_image());
  m.records.push_back(std::move(train));

  for (std::uint32_t t = 0; t < cfg.test_images; ++t) {
    ImageRecord r;
    char id[32];
    std::snprintf(id, sizeof id, "test_%03u", t);
    r.id = id;
    r.split = Split::test;
    r.label = t % 2;
    r.grid = cfg.grid;
    TensorU8 mask{{kMaskSide, kMaskSide}, std::vector<std::uint8_t>(kMaskSide * kMaskSide, 0)};
    std::vector<std::vector<double>> rows;
    if (r.label == 0) {
      rows = normal_image();
    } else {
      rows.resize(P);
      for (std::size_t p = 0; p < P; ++p) rows[p] = gen.normal_patch(cfg.noise);
      const auto r0 = gen.uniform(0, cfg.grid.h - bh);
      const auto c0 = gen.uniform(0, cfg.grid.w - bw);
      for (auto pr = r0; pr < r0 + bh; ++pr) {
        const auto [y0, y1] = patch_pixel_range(pr, cfg.grid.h);
        for (auto pc = c0; pc < c0 + bw; ++pc) {
          auto& z = rows[pr * cfg.grid.w + pc];
          z = gen.anomalous_patch(z);
          const auto [x0, x1] = patch_pixel_range(pc, cfg.grid.w);
          for (auto y = y0; y < y1; ++y)
            for (auto x = x0; x < x1; ++x) mask.values[y * kMaskSide + x] = 255;
        }
      }
    }
    r.embeddings = to_tensor(rows);
    r.mask = std::move(mask);
    m.records.push_back(std::move(r));
  }
  return m;
}

}  // namespace patchdev
