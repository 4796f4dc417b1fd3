#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "oracles.hpp"
#include "patchdev/scoremap.hpp"
#include "patchdev/synthgen.hpp"

using namespace patchdev;
using doctest::Approx;

namespace {

ImageRecord record_from_rows(const std::vector<std::vector<double>>& rows, PatchGrid grid) {
  ImageRecord r;
  r.id = "img";
  r.split = Split::test;
  r.grid = grid;
  r.embeddings.dims = {static_cast<std::uint32_t>(rows.size()), static_cast<std::uint32_t>(rows.front().size())};
  for (const auto& row : rows) {
    for (double x : row) r.embeddings.values.push_back(static_cast<float>(x));
  }
  return r;
}

std::vector<double> unit_axis(std::size_t d, std::size_t i) {
  std::vector<double> v(d, 0.0);
  v[i] = 1.0;
  return v;
}

std::vector<double> random_grid(std::mt19937_64& rng, std::size_t n) {
  std::normal_distribution<double> g;
  std::vector<double> v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

}  // namespace

TEST_CASE("patch_anomaly_map: self-calibration and planted maximum") {
  const std::size_t d = 8;
  const auto e_n = unit_axis(d, 0), e_a = unit_axis(d, 1);
  const PromptPair prompts(e_n, e_a);
  const PatchGrid grid{4, 4};
  std::vector<std::vector<double>> rows(grid.patches(), e_n);
  auto rec = record_from_rows(rows, grid);
  const auto s_a = similarity_maps(rec, e_n, e_a).abnormal;
  const auto prior = estimate_prior_empirical(s_a);
  HyperParams hp;

  for (double v : patch_anomaly_map(rec, prompts, prior, hp)) CHECK(std::abs(v) <= 1e-6);

  rows[5] = e_a;
  rec = record_from_rows(rows, grid);
  const auto scores = patch_anomaly_map(rec, prompts, prior, hp);
  for (std::size_t p = 0; p < scores.size(); ++p) {
    if (p != 5) CHECK(scores[5] > scores[p]);
  }
}

TEST_CASE("patch_anomaly_map: composition oracle") {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 20; ++t) {
    const std::size_t d = 12;
    const PatchGrid grid{3, 5};
    std::vector<std::vector<double>> rows;
    for (std::size_t p = 0; p < grid.patches(); ++p) rows.push_back(oracle::random_unit(rng, d));
    const auto rec = record_from_rows(rows, grid);
    const PromptPair prompts(oracle::random_unit(rng, d), oracle::random_unit(rng, d));
    const GaussianPrior prior{0.1 * t, 0.5 + t, PriorMode::empirical, 10, 0, false};
    HyperParams hp;
    hp.sign_mode = t % 2 ? SignMode::absolute : SignMode::signed_;
    const auto sim = similarity_maps(rec, prompts.effective_normal(), prompts.effective_abnormal());
    const auto expect = deviation_map(sim.abnormal, prior, hp.sign_mode);
    CHECK(patch_anomaly_map(rec, prompts, prior, hp) == expect);
  }
}

TEST_CASE("upsample_bilinear fixtures") {
  for (double v : upsample_bilinear(std::vector<double>{2.5}, {1, 1}, 256, 256)) CHECK(v == 2.5);

  const auto ramp = upsample_bilinear(std::vector<double>{0, 1, 0, 1}, {2, 2}, 256, 256);
  for (std::size_t i = 1; i < 256; ++i) {
    CHECK(std::equal(ramp.begin(), ramp.begin() + 256, ramp.begin() + static_cast<std::ptrdiff_t>(i * 256)));
  }
  CHECK(ramp[0] < ramp[255]);
  for (std::size_t j = 1; j < 256; ++j) CHECK(ramp[j] >= ramp[j - 1]);

  std::mt19937_64 rng(9);
  const auto g = random_grid(rng, 9);
  const auto up = upsample_bilinear(g, {3, 3}, 256, 256);
  std::uniform_int_distribution<int> px(0, 255);
  for (int s = 0; s < 20; ++s) {
    const int i = px(rng), j = px(rng);
    CHECK(up[static_cast<std::size_t>(i) * 256 + static_cast<std::size_t>(j)] ==
          Approx(oracle::bilinear_at(g, 3, 3, 256, 256, i, j)).epsilon(1e-6));
  }
}

TEST_CASE("property: bilinear stays within the patch range and hits centers at odd scales") {
  std::mt19937_64 rng(10);
  for (int t = 0; t < 50; ++t) {
    const std::uint32_t h = 1 + static_cast<std::uint32_t>(rng() % 7), w = 1 + static_cast<std::uint32_t>(rng() % 7);
    const std::uint32_t scale = 2 * static_cast<std::uint32_t>(rng() % 3) + 1;
    const auto g = random_grid(rng, static_cast<std::size_t>(h) * w);
    const auto [lo, hi] = std::minmax_element(g.begin(), g.end());

    const auto full = upsample_bilinear(g, {h, w}, 256, 256);
    for (double v : full) {
      CHECK(v >= *lo - 1e-6);
      CHECK(v <= *hi + 1e-6);
    }
    const auto up = upsample_bilinear(g, {h, w}, h * scale, w * scale);
    for (std::uint32_t i = 0; i < h; ++i) {
      for (std::uint32_t j = 0; j < w; ++j) {
        const std::size_t ci = i * scale + scale / 2, cj = j * scale + scale / 2;
        CHECK(up[ci * w * scale + cj] == Approx(g[i * w + j]).epsilon(1e-6));
      }
    }
  }
}

TEST_CASE("smooth_gaussian") {
  std::mt19937_64 rng(11);
  const auto m = random_grid(rng, 40 * 30);
  CHECK(smooth_gaussian(m, 40, 30, 0.0) == m);

  for (double sigma : {0.5, 1.0, 4.0, 9.0}) {
    for (double v : smooth_gaussian(std::vector<double>(50 * 50, -3.25), 50, 50, sigma)) {
      CHECK(v == Approx(-3.25).epsilon(1e-9));
    }
  }

  const int r = 12;
  std::vector<double> k;
  double sum = 0.0;
  for (int x = -r; x <= r; ++x) {
    k.push_back(std::exp(-x * x / 32.0));
    sum += k.back();
  }
  for (auto& x : k) x /= sum;
  const auto lib = gaussian_kernel(4.0);
  REQUIRE(lib.size() == k.size());
  double lib_sum = 0.0;
  for (std::size_t i = 0; i < k.size(); ++i) {
    CHECK(lib[i] == Approx(k[i]).epsilon(1e-12));
    lib_sum += lib[i];
  }
  CHECK(std::abs(lib_sum - 1.0) <= 1e-9);

  std::vector<double> impulse(64 * 64, 0.0);
  impulse[32 * 64 + 32] = 1.0;
  const auto blurred = smooth_gaussian(impulse, 64, 64, 4.0);
  CHECK(blurred[32 * 64 + 32] == Approx(k[r] * k[r]).epsilon(1e-12));
  // Truncation at three sigma keeps the peak within 1% of the continuous value.
  CHECK(blurred[32 * 64 + 32] == Approx(1.0 / (2.0 * std::numbers::pi * 16.0)).epsilon(0.01));
  double mass = 0.0;
  for (double v : blurred) mass += v;
  CHECK(mass == Approx(1.0).epsilon(1e-12));

  // Half-sample reflection at the border conserves mass as well.
  std::vector<double> corner(20 * 20, 0.0);
  corner[0] = 1.0;
  mass = 0.0;
  for (double v : smooth_gaussian(corner, 20, 20, 2.0)) mass += v;
  CHECK(mass == Approx(1.0).epsilon(1e-12));
}

TEST_CASE("image_score") {
  std::mt19937_64 rng(12);
  HyperParams hp;
  for (int t = 0; t < 100; ++t) {
    auto s = random_grid(rng, 1 + rng() % 300);
    if (t % 3 == 0) {
      for (auto& x : s) x = std::round(x);
    }
    hp.topk_percent = 100.0;
    double mean = 0.0;
    for (double x : s) mean += x;
    CHECK(image_score(s, hp) == Approx(mean / static_cast<double>(s.size())).epsilon(1e-12));

    hp.topk_percent = 100.0 / (2.0 * static_cast<double>(s.size()));
    CHECK(image_score(s, hp) == *std::max_element(s.begin(), s.end()));

    hp.topk_percent = 10.0;
    const auto sel = oracle::topk_by_full_sort(s, topk_count(s.size(), 10.0));
    double expect = 0.0;
    for (auto i : sel) expect += s[i];
    CHECK(image_score(s, hp) == Approx(expect / static_cast<double>(sel.size())).epsilon(1e-12));
  }
}

TEST_CASE("score_image pipeline") {
  SynthConfig c;
  c.dim = 16;
  c.grid = {8, 8};
  c.test_images = 2;
  const auto m = generate(c);
  const auto prompts = PromptPair::from_manifest(m);
  const GaussianPrior prior{0.01, 0.02, PriorMode::empirical, 64, 0, false};
  HyperParams hp;
  for (const auto* rec : m.split(Split::test)) {
    const auto map = score_image(*rec, prompts, prior, hp);
    const auto patches = patch_anomaly_map(*rec, prompts, prior, hp);
    CHECK(map.patch_scores == patches);
    CHECK(map.pixels == smooth_gaussian(upsample_bilinear(patches, rec->grid, 256, 256), 256, 256, 4.0));
    CHECK(map.image_score == image_score(patches, hp));
    CHECK(map.image_score == aggregate_topk(patches, topk_select(patches, hp.topk_percent)));
    const auto [lo, hi] = std::minmax_element(patches.begin(), patches.end());
    CHECK(map.min >= *lo - 1e-6);
    CHECK(map.max <= *hi + 1e-6);

    const auto raw = score_image(*rec, prompts, prior, hp, ScoreSource::raw_similarity);
    CHECK(raw.patch_scores ==
          similarity_maps(*rec, prompts.effective_normal(), prompts.effective_abnormal()).abnormal);
    CHECK(raw.source == ScoreSource::raw_similarity);
  }
}

TEST_CASE("property: raising one patch's s_a never lowers the image score") {
  std::mt19937_64 rng(13);
  const std::size_t d = 10;
  const PatchGrid grid{4, 4};
  for (int t = 0; t < 100; ++t) {
    std::vector<std::vector<double>> rows;
    for (std::size_t p = 0; p < grid.patches(); ++p) rows.push_back(oracle::random_unit(rng, d));
    const PromptPair prompts(oracle::random_unit(rng, d), oracle::random_unit(rng, d));
    const auto e_a = prompts.effective_abnormal();
    const GaussianPrior prior{0.0, 0.3, PriorMode::empirical, 16, 0, false};
    HyperParams hp;
    hp.topk_percent = 5.0 + static_cast<double>(rng() % 95);
    const double before = image_score(patch_anomaly_map(record_from_rows(rows, grid), prompts, prior, hp), hp);
    auto& z = rows[rng() % rows.size()];
    for (std::size_t j = 0; j < d; ++j) z[j] += 0.5 * e_a[j];
    z = normalized(z);
    const double after = image_score(patch_anomaly_map(record_from_rows(rows, grid), prompts, prior, hp), hp);
    CHECK(after >= before - 1e-6);
  }
}

TEST_CASE("PGM and sidecar export") {
  const auto pgm = encode_pgm(std::vector<double>{-1.0, 0.0, 1.0, 3.0}, 2, 2);
  const std::string header = "P5\n2 2\n255\n";
  REQUIRE(pgm.size() == header.size() + 4);
  CHECK(std::string(pgm.begin(), pgm.begin() + static_cast<std::ptrdiff_t>(header.size())) == header);
  CHECK(pgm[header.size() + 0] == 0);
  CHECK(pgm[header.size() + 1] == 64);
  CHECK(pgm[header.size() + 2] == 128);
  CHECK(pgm[header.size() + 3] == 255);
  const auto flat = encode_pgm(std::vector<double>(6, 7.0), 2, 3);
  for (std::size_t i = header.size(); i < flat.size(); ++i) CHECK(flat[i] == 0);
  CHECK_THROWS(encode_pgm(std::vector<double>(5, 0.0), 2, 3));

  AnomalyMap m;
  m.id = "test_001";
  m.grid = {2, 2};
  m.patch_scores = {0, 1, 2, 3};
  m.pixels = upsample_bilinear(m.patch_scores, m.grid, 256, 256);
  m.image_score = 3.0;
  m.min = 0.0;
  m.max = 3.0;
  HyperParams hp;
  const auto dir = oracle::temp_dir("maps");
  write_anomaly_map(dir, m, hp);
  CHECK(read_file_bytes(dir / "test_001.pgm") == encode_pgm(m.pixels, 256, 256));
  const auto side = read_file_bytes(dir / "test_001.json");
  const auto j = nlohmann::json::parse(side.begin(), side.end());
  CHECK(j.at("image_score").get<double>() == 3.0);
  CHECK(j.at("min").get<double>() == 0.0);
  CHECK(j.at("max").get<double>() == 3.0);
  CHECK(j.at("score_source") == "deviation");
  const auto raw = read_tensor_f32(dir / "test_001.map.devt");
  CHECK(raw.dims == std::vector<std::uint32_t>{256, 256});
  CHECK(raw.values[0] == static_cast<float>(m.pixels[0]));
  std::filesystem::remove_all(dir);
}

TEST_CASE("score source names") {
  CHECK(to_string(ScoreSource::deviation) == "deviation");
  CHECK(to_string(ScoreSource::raw_similarity) == "raw_similarity");
  CHECK(score_source_from_string("raw") == ScoreSource::raw_similarity);
  CHECK(score_source_from_string("deviation") == ScoreSource::deviation);
  CHECK_THROWS(score_source_from_string("blend"));
}
