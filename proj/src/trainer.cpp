#include "patchdev/trainer.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

namespace patchdev {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json prior_json(const GaussianPrior& p) {
  return json{{"mu", p.mu},
              {"sigma", p.sigma},
              {"mode", to_string(p.mode)},
              {"sample_count", p.sample_count},
              {"seed", p.seed},
              {"sigma_clamped", p.sigma_clamped}};
}

GaussianPrior prior_from_json(const json& j) {
  GaussianPrior p;
  p.mu = j.at("mu").get<double>();
  p.sigma = j.at("sigma").get<double>();
  p.mode = prior_mode_from_string(j.at("mode").get<std::string>());
  p.sample_count = j.at("sample_count").get<std::size_t>();
  p.seed = j.at("seed").get<std::uint64_t>();
  p.sigma_clamped = j.at("sigma_clamped").get<bool>();
  return p;
}

TensorF32 to_f32(const std::vector<double>& v) {
  TensorF32 t{{static_cast<std::uint32_t>(v.size())}, {}};
  for (double x : v) t.values.push_back(static_cast<float>(x));
  return t;
}

void apply_step(std::vector<double>& delta, const std::vector<double>& grad, double lr) {
  for (std::size_t i = 0; i < delta.size(); ++i) delta[i] -= lr * grad[i];
}

}  // namespace

json TrainReport::to_json(bool include_timing) const {
  json j;
  j["seed"] = seed;
  j["final_prior"] = prior_json(final_prior);
  j["sigma_clamped"] = sigma_clamped;
  j["delta_normal"] = delta_normal;
  j["delta_abnormal"] = delta_abnormal;
  j["delta_shared"] = delta_shared;
  j["epochs"] = json::array();
  for (const auto& e : epochs) {
    j["epochs"].push_back({{"epoch", e.epoch},
                           {"total", e.total},
                           {"align", e.align},
                           {"deviation", e.deviation},
                           {"prior_mu", e.prior_mu},
                           {"prior_sigma", e.prior_sigma},
                           {"image_deviation", e.image_deviation}});
  }
  if (include_timing) j["wall_clock_seconds"] = wall_clock_seconds;
  return j;
}

GaussianPrior fit_prior(std::span<const TrainingBag> bags, const PromptPair& prompts, const HyperParams& hp) {
  if (hp.prior_mode == PriorMode::reference) return estimate_prior_reference(hp.reference_count, hp.seed);
  const auto e = hp.prior_channel == PriorChannel::abnormal ? prompts.effective_abnormal()
                                                            : prompts.effective_normal();
  std::vector<double> scores;
  for (const auto& bag : bags) {
    for (std::size_t p = 0; p < bag.patch_count(); ++p) {
      scores.push_back(detail::dot(bag.row(p), std::span<const double>(e)));
    }
  }
  return estimate_prior_empirical(scores);
}

TrainingBag make_pseudo_anomaly(const TrainingBag& bag, std::span<const double> e_abnormal, double topk_percent,
                                std::uint64_t seed, double alpha) {
  TrainingBag out = bag;
  out.id = bag.id + "#pseudo";
  out.label = 1;
  const std::size_t P = bag.patch_count();
  const std::size_t k = topk_count(P, topk_percent);
  std::vector<std::size_t> order(P);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<double> mixed(bag.dim);
  for (std::size_t i = 0; i < k; ++i) {
    const auto z = bag.row(order[i]);
    for (std::size_t j = 0; j < bag.dim; ++j) mixed[j] = (1.0 - alpha) * z[j] + alpha * e_abnormal[j];
    const auto unit = normalized(mixed);
    std::copy(unit.begin(), unit.end(), out.patches.begin() + static_cast<std::ptrdiff_t>(order[i] * bag.dim));
  }
  return out;
}

FitResult fit(const DatasetManifest& dataset, const HyperParams& hp) {
  hp.check();
  const auto train = dataset.split(Split::train);
  if (train.empty()) throw std::invalid_argument("fit: train split is empty");
  std::vector<TrainingBag> real;
  for (const auto* r : train) {
    if (r->label != 0) throw std::invalid_argument("fit: train record " + r->id + " is labelled anomalous");
    real.push_back(make_bag(*r, 0));
  }

  const auto start = std::chrono::steady_clock::now();
  FitResult result{PromptPair::from_manifest(dataset), {}, {}};
  auto& prompts = result.prompts;
  auto& report = result.report;
  report.seed = hp.seed;
  const auto init = init_deltas(prompts.dim(), hp.seed);
  prompts.delta_normal = init.normal;
  prompts.delta_abnormal = init.abnormal;

  std::vector<TrainingBag> bags;
  for (int epoch = 1; epoch <= hp.epochs; ++epoch) {
    auto diverged = [epoch](const std::exception& e) {
      return DivergenceError(std::string("fit diverged at epoch ") + std::to_string(epoch) + ": " + e.what(),
                             epoch - 1);
    };
    GaussianPrior prior;
    LossBreakdown lb;
    try {
      prior = fit_prior(real, prompts, hp);
      bags = real;
      if (hp.pseudo_anomaly) {
        const auto e_a = prompts.effective_abnormal();
        for (std::size_t i = 0; i < real.size(); ++i) {
          const std::uint64_t s =
              hp.seed ^ (0x9E3779B97F4A7C15ull * static_cast<std::uint64_t>(epoch * 1000003 + i));
          bags.push_back(make_pseudo_anomaly(real[i], e_a, hp.topk_percent, s));
        }
      }
      lb = total_loss_and_grads(bags, prompts, prior, hp);
    } catch (const DomainError& e) {
      throw diverged(e);
    } catch (const std::runtime_error& e) {
      throw diverged(e);
    }
    report.sigma_clamped = report.sigma_clamped || prior.sigma_clamped;
    report.epochs.push_back({epoch, lb.total, lb.align, lb.deviation, prior.mu, prior.sigma, lb.image_deviation});

    apply_step(prompts.delta_normal, lb.grad_normal, hp.learning_rate);
    apply_step(prompts.delta_abnormal, lb.grad_abnormal, hp.learning_rate);
    if (hp.shared_context) {
      std::vector<double> g(prompts.dim());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = lb.grad_normal[i] + lb.grad_abnormal[i];
      apply_step(prompts.delta_shared, g, hp.learning_rate);
    }
    for (std::size_t i = 0; i < prompts.dim(); ++i) {
      if (!std::isfinite(prompts.delta_normal[i]) || !std::isfinite(prompts.delta_abnormal[i]) ||
          !std::isfinite(prompts.delta_shared[i])) {
        throw DivergenceError("fit diverged: non-finite delta after epoch " + std::to_string(epoch), epoch);
      }
    }
  }

  // The prior that scoring uses must describe the final prompts.
  try {
    result.prior = fit_prior(real, prompts, hp);
  } catch (const DomainError& e) {
    throw DivergenceError(std::string("fit diverged after the last epoch: ") + e.what(), hp.epochs);
  }
  report.sigma_clamped = report.sigma_clamped || result.prior.sigma_clamped;
  report.final_prior = result.prior;
  report.delta_normal = prompts.delta_normal;
  report.delta_abnormal = prompts.delta_abnormal;
  report.delta_shared = prompts.delta_shared;
  report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

void save_fit(const fs::path& dir, const FitResult& fit, const HyperParams& hp) {
  fs::create_directories(dir);
  write_tensor(dir / "delta_normal.devt", to_f32(fit.prompts.delta_normal));
  write_tensor(dir / "delta_abnormal.devt", to_f32(fit.prompts.delta_abnormal));
  write_tensor(dir / "delta_shared.devt", to_f32(fit.prompts.delta_shared));
  write_tensor(dir / "prompt_normal.devt", to_f32(fit.prompts.effective_normal()));
  write_tensor(dir / "prompt_abnormal.devt", to_f32(fit.prompts.effective_abnormal()));
  write_tensor(dir / "prior.devt", to_f32({fit.prior.mu, fit.prior.sigma}));

  json learned{{"hyperparams", hp},
               {"prior", prior_json(fit.prior)},
               {"delta_normal", fit.prompts.delta_normal},
               {"delta_abnormal", fit.prompts.delta_abnormal},
               {"delta_shared", fit.prompts.delta_shared}};
  const auto text = learned.dump(2) + "\n";
  write_file_bytes(dir / "learned.json", std::vector<std::uint8_t>(text.begin(), text.end()));
  const auto report = fit.report.to_json().dump(2) + "\n";
  write_file_bytes(dir / "train_report.json", std::vector<std::uint8_t>(report.begin(), report.end()));
}

FitResult load_fit(const fs::path& dir, const DatasetManifest& dataset, HyperParams* hp_out) {
  const auto bytes = read_file_bytes(dir / "learned.json");
  json j;
  try {
    j = json::parse(bytes.begin(), bytes.end());
  } catch (const json::parse_error& e) {
    throw FormatError((dir / "learned.json").string() + ": invalid JSON: " + e.what());
  }
  FitResult r{PromptPair::from_manifest(dataset), prior_from_json(j.at("prior")), {}};
  auto load = [&](const char* key, std::vector<double>& dst) {
    auto v = j.at(key).get<std::vector<double>>();
    if (v.size() != dst.size()) {
      throw std::runtime_error((dir / "learned.json").string() + ": " + key + " has d=" + std::to_string(v.size()) +
                               ", dataset d=" + std::to_string(dst.size()));
    }
    dst = std::move(v);
  };
  load("delta_normal", r.prompts.delta_normal);
  load("delta_abnormal", r.prompts.delta_abnormal);
  load("delta_shared", r.prompts.delta_shared);
  r.report.final_prior = r.prior;
  if (hp_out) *hp_out = j.at("hyperparams").get<HyperParams>();
  return r;
}

}  // namespace patchdev
