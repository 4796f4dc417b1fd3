#include "patchdev/prompts.hpp"

#include <cmath>
#include <stdexcept>

namespace patchdev {

std::string to_string(PriorChannel c) { return c == PriorChannel::abnormal ? "abnormal" : "normal"; }

PriorChannel prior_channel_from_string(const std::string& s) {
  if (s == "abnormal") return PriorChannel::abnormal;
  if (s == "normal") return PriorChannel::normal;
  throw std::invalid_argument("unknown prior channel '" + s + "'");
}

void HyperParams::check() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("invalid hyperparameter: " + what); };
  if (!(lambda > 0.0)) fail("lambda must be > 0");
  if (!(margin > 0.0)) fail("margin a must be > 0");
  if (!(topk_percent > 0.0 && topk_percent <= 100.0)) fail("topk_percent must be in (0, 100]");
  if (!(learning_rate >= 0.0)) fail("learning_rate must be >= 0");
  if (epochs < 1) fail("epochs must be >= 1");
  if (!(temperature > 0.0)) fail("temperature must be > 0");
  if (!(blur_sigma >= 0.0)) fail("blur_sigma must be >= 0");
  if (prior_mode == PriorMode::reference && reference_count < kMinReferenceCount) {
    fail("reference_count must be >= " + std::to_string(kMinReferenceCount));
  }
}

void to_json(nlohmann::json& j, const HyperParams& hp) {
  j = nlohmann::json{{"lambda", hp.lambda},
                     {"margin", hp.margin},
                     {"topk_percent", hp.topk_percent},
                     {"learning_rate", hp.learning_rate},
                     {"epochs", hp.epochs},
                     {"seed", hp.seed},
                     {"prior_mode", to_string(hp.prior_mode)},
                     {"prior_channel", to_string(hp.prior_channel)},
                     {"sign_mode", to_string(hp.sign_mode)},
                     {"temperature", hp.temperature},
                     {"pseudo_anomaly", hp.pseudo_anomaly},
                     {"shared_context", hp.shared_context},
                     {"reference_count", hp.reference_count},
                     {"blur_sigma", hp.blur_sigma}};
}

void from_json(const nlohmann::json& j, HyperParams& hp) {
  HyperParams d;
  hp.lambda = j.value("lambda", d.lambda);
  hp.margin = j.value("margin", d.margin);
  hp.topk_percent = j.value("topk_percent", d.topk_percent);
  hp.learning_rate = j.value("learning_rate", d.learning_rate);
  hp.epochs = j.value("epochs", d.epochs);
  hp.seed = j.value("seed", d.seed);
  hp.prior_mode = prior_mode_from_string(j.value("prior_mode", to_string(d.prior_mode)));
  hp.prior_channel = prior_channel_from_string(j.value("prior_channel", to_string(d.prior_channel)));
  hp.sign_mode = sign_mode_from_string(j.value("sign_mode", to_string(d.sign_mode)));
  hp.temperature = j.value("temperature", d.temperature);
  hp.pseudo_anomaly = j.value("pseudo_anomaly", d.pseudo_anomaly);
  hp.shared_context = j.value("shared_context", d.shared_context);
  hp.reference_count = j.value("reference_count", d.reference_count);
  hp.blur_sigma = j.value("blur_sigma", d.blur_sigma);
}

std::vector<double> normalized(std::span<const double> v) {
  double n2 = 0.0;
  for (double x : v) n2 += x * x;
  const double n = std::sqrt(n2);
  if (!(n > 0.0) || !std::isfinite(n)) throw DomainError("cannot normalize a zero or non-finite vector");
  std::vector<double> out(v.begin(), v.end());
  for (auto& x : out) x /= n;
  return out;
}

PromptPair::PromptPair(std::vector<double> base_normal, std::vector<double> base_abnormal)
    : delta_normal(base_normal.size(), 0.0),
      delta_abnormal(base_normal.size(), 0.0),
      delta_shared(base_normal.size(), 0.0),
      base_normal_(std::move(base_normal)),
      base_abnormal_(std::move(base_abnormal)) {
  if (base_normal_.size() != base_abnormal_.size() || base_normal_.empty()) {
    throw DomainError("prompt pair: normal/abnormal dimension mismatch");
  }
}

PromptPair PromptPair::from_manifest(const DatasetManifest& m) {
  return PromptPair(std::vector<double>(m.prompt_normal.values.begin(), m.prompt_normal.values.end()),
                    std::vector<double>(m.prompt_abnormal.values.begin(), m.prompt_abnormal.values.end()));
}

std::vector<double> PromptPair::raw_normal() const {
  std::vector<double> out(base_normal_);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += delta_shared[i] + delta_normal[i];
  return out;
}

std::vector<double> PromptPair::raw_abnormal() const {
  std::vector<double> out(base_abnormal_);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += delta_shared[i] + delta_abnormal[i];
  return out;
}

DeltaPair init_deltas(std::size_t dim, std::uint64_t /*seed*/) {
  if (dim == 0) throw DomainError("init_deltas: dimension must be >= 1");
  return DeltaPair{std::vector<double>(dim, 0.0), std::vector<double>(dim, 0.0)};
}

}  // namespace patchdev
