#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <bit>
#include <random>

#include "oracles.hpp"
#include "patchdev/devcore.hpp"

using namespace patchdev;
using doctest::Approx;

namespace {

ImageRecord record_from_rows(const std::vector<std::vector<double>>& rows, PatchGrid grid) {
  ImageRecord r;
  r.id = "r";
  r.grid = grid;
  r.embeddings.dims = {static_cast<std::uint32_t>(rows.size()), static_cast<std::uint32_t>(rows[0].size())};
  for (const auto& row : rows)
    for (double x : row) r.embeddings.values.push_back(static_cast<float>(x));
  return r;
}

}  // namespace

TEST_CASE("cosine_similarity") {
  const std::vector<double> x{1, 0, 0}, y{0, 1, 0}, a{3, 4, 0}, b{4, 3, 0}, zero{0, 0, 0};
  CHECK(cosine_similarity(x, x) == 1.0);
  CHECK(cosine_similarity(x, y) == 0.0);
  CHECK(cosine_similarity(a, b) == Approx(0.96).epsilon(1e-15));
  CHECK_THROWS_AS(cosine_similarity(x, zero), DomainError);
  // Clamped even when rounding would overshoot.
  const std::vector<double> c{0.1, 0.7, 0.3};
  CHECK(cosine_similarity(c, c) <= 1.0);
}

TEST_CASE("similarity_maps") {
  std::mt19937_64 rng(1);
  const auto e_n = oracle::random_unit(rng, 6);
  const auto e_a = oracle::random_unit(rng, 6);

  SUBCASE("single patch equal to the normal prompt") {
    const auto rec = record_from_rows({e_n}, {1, 1});
    const auto sim = similarity_maps(rec, e_n, e_a);
    CHECK(sim.normal[0] == Approx(1.0).epsilon(1e-6));
    CHECK(sim.abnormal[0] == Approx(cosine_similarity(e_n, e_a)).epsilon(1e-6));
  }
  SUBCASE("matches per-patch cosine calls and is permutation equivariant") {
    std::vector<std::vector<double>> rows;
    for (int i = 0; i < 4; ++i) rows.push_back(oracle::random_unit(rng, 6));
    const auto rec = record_from_rows(rows, {2, 2});
    const auto sim = similarity_maps(rec, e_n, e_a);
    for (std::size_t p = 0; p < 4; ++p) {
      CHECK(sim.normal[p] == cosine_similarity(rec.row(p), std::span<const double>(e_n)));
      CHECK(sim.abnormal[p] == cosine_similarity(rec.row(p), std::span<const double>(e_a)));
    }
    const auto perm = record_from_rows({rows[2], rows[0], rows[3], rows[1]}, {2, 2});
    const auto sp = similarity_maps(perm, e_n, e_a);
    CHECK(sp.abnormal[0] == sim.abnormal[2]);
    CHECK(sp.abnormal[1] == sim.abnormal[0]);
    CHECK(sp.normal[2] == sim.normal[3]);
    CHECK(sp.normal[3] == sim.normal[1]);
  }
  SUBCASE("dimension mismatch") {
    const auto rec = record_from_rows({e_n}, {1, 1});
    const std::vector<double> short_prompt{1, 0};
    CHECK_THROWS_AS(similarity_maps(rec, short_prompt, short_prompt), DomainError);
  }
}

TEST_CASE("estimate_prior") {
  SUBCASE("degenerate spread clamps sigma") {
    const std::vector<double> s{0.8, 0.8, 0.8, 0.8};
    const auto p = estimate_prior_empirical(s);
    CHECK(p.mu == Approx(0.8));
    CHECK(p.sigma == kSigmaFloor);
    CHECK(p.sigma_clamped);
  }
  SUBCASE("two points") {
    const std::vector<double> s{0.0, 1.0};
    const auto p = estimate_prior_empirical(s);
    CHECK(p.mu == 0.5);
    CHECK(p.sigma == Approx(std::sqrt(0.5)).epsilon(1e-15));
    CHECK_FALSE(p.sigma_clamped);
  }
  SUBCASE("too few scores") {
    const std::vector<double> s{0.3};
    CHECK_THROWS_AS(estimate_prior_empirical(s), DomainError);
  }
  SUBCASE("reference prior approaches the standard normal and is reproducible") {
    const auto p = estimate_prior_reference(1000000, 42);
    CHECK(std::abs(p.mu) <= 0.01);
    CHECK(std::abs(p.sigma - 1.0) <= 0.01);
    CHECK(p.mode == PriorMode::reference);
    const auto q = estimate_prior_reference(1000000, 42);
    CHECK(std::bit_cast<std::uint64_t>(p.mu) == std::bit_cast<std::uint64_t>(q.mu));
    CHECK(std::bit_cast<std::uint64_t>(p.sigma) == std::bit_cast<std::uint64_t>(q.sigma));
    CHECK_THROWS_AS(estimate_prior_reference(999, 1), DomainError);
  }
}

TEST_CASE("deviation_map") {
  GaussianPrior p;
  p.mu = 0.5;
  p.sigma = 0.1;
  const std::vector<double> s{0.5, 0.3};
  const auto abs_d = deviation_map(s, p, SignMode::absolute);
  const auto sgn_d = deviation_map(s, p, SignMode::signed_);
  CHECK(abs_d[0] == 0.0);
  CHECK(sgn_d[0] == 0.0);
  CHECK(abs_d[1] == Approx(2.0).epsilon(1e-12));
  CHECK(sgn_d[1] == Approx(-2.0).epsilon(1e-12));

  GaussianPrior unit;
  const std::vector<double> five{5.0};
  CHECK(deviation_map(five, unit, SignMode::absolute)[0] == 5.0);
}

TEST_CASE("property: signed deviation is shift/scale covariant") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1, 1), pos(0.1, 3.0);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> s(10), s2(10);
    const double a = pos(rng), b = u(rng);
    for (std::size_t i = 0; i < s.size(); ++i) {
      s[i] = u(rng);
      s2[i] = a * s[i] + b;
    }
    GaussianPrior p;
    p.mu = u(rng);
    p.sigma = pos(rng);
    GaussianPrior p2 = p;
    p2.mu = a * p.mu + b;
    p2.sigma = a * p.sigma;
    const auto d1 = deviation_map(s, p, SignMode::signed_);
    const auto d2 = deviation_map(s2, p2, SignMode::signed_);
    for (std::size_t i = 0; i < s.size(); ++i) CHECK(std::abs(d1[i] - d2[i]) <= 1e-9);
  }
}

TEST_CASE("topk_select") {
  const std::vector<double> d{0.1, 0.9, 0.5, 0.7};
  CHECK(topk_select(d, 50) == std::vector<std::size_t>{1, 3});
  const std::vector<double> ties{0.4, 0.4, 0.4};
  CHECK(topk_count(3, 34) == 1);
  CHECK(topk_select(ties, 34) == std::vector<std::size_t>{0});
  CHECK_THROWS_AS(topk_select(std::vector<double>{}, 10), DomainError);
  CHECK_THROWS_AS(topk_select(d, 0), DomainError);
  CHECK_THROWS_AS(topk_select(d, 100.5), DomainError);

  SUBCASE("k = max(1, round half away from zero)") {
    CHECK(topk_count(1, 1) == 1);
    CHECK(topk_count(4, 10) == 1);    // 0.4 -> 0 -> floor of 1
    CHECK(topk_count(5, 10) == 1);    // 0.5 -> 1
    CHECK(topk_count(25, 10) == 3);   // 2.5 -> 3
    CHECK(topk_count(15, 10) == 2);   // 1.5 -> 2
    CHECK(topk_count(256, 10) == 26); // 25.6
    CHECK(topk_count(7, 100) == 7);
  }
}

TEST_CASE("property: topk_select agrees with a full sort") {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> len(1, 60), small(0, 5);
  std::uniform_real_distribution<double> u(0.0, 1.0), pct(0.5, 100.0);
  for (int t = 0; t < 1000; ++t) {
    std::vector<double> d(len(rng));
    const bool dup = t % 2 == 0;
    for (auto& x : d) x = dup ? small(rng) * 0.25 : u(rng);
    const double percent = pct(rng);
    const auto k = topk_count(d.size(), percent);
    REQUIRE(topk_select(d, percent) == oracle::topk_by_full_sort(d, k));
  }
}

TEST_CASE("aggregate_topk") {
  const std::vector<double> d{1, 2, 3, 4};
  const std::vector<std::size_t> one{2}, two{2, 3};
  CHECK(aggregate_topk(d, one) == 3.0);
  CHECK(aggregate_topk(d, two) == 3.5);
  CHECK(aggregate_topk(d, topk_select(d, 100)) == 2.5);
  CHECK(aggregate_topk(d, topk_select(d, 1)) == 4.0);
  CHECK_THROWS_AS(aggregate_topk(d, std::vector<std::size_t>{}), DomainError);
  CHECK_THROWS_AS(aggregate_topk(d, std::vector<std::size_t>{4}), DomainError);
}

TEST_CASE("property: raising a deviation never lowers the aggregate") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  for (int t = 0; t < 500; ++t) {
    std::vector<double> d(20);
    for (auto& x : d) x = u(rng);
    const double percent = 5.0 + 5.0 * (t % 10);
    const double before = aggregate_topk(d, topk_select(d, percent));
    d[t % d.size()] += u(rng);
    CHECK(aggregate_topk(d, topk_select(d, percent)) >= before);
  }
}

TEST_CASE("evaluate_deviation bundles the pieces") {
  GaussianPrior p;
  p.mu = 0.0;
  p.sigma = 0.5;
  const std::vector<double> s{0.1, -0.4, 0.3, 0.2};
  const auto r = evaluate_deviation(s, p, SignMode::absolute, 50);
  CHECK(r.selected == std::vector<std::size_t>{1, 2});
  CHECK(r.aggregate == Approx(0.7));
  for (double x : r.d) CHECK(x >= 0.0);
}
