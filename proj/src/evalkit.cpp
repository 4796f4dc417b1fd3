#include "patchdev/evalkit.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

namespace patchdev {
namespace {

struct Counted {
  double auroc;
  std::size_t n_pos, n_neg;
};

// Rank-sum over (score, is_positive) pairs; sorts in place.
Counted rank_auroc(std::vector<std::pair<double, bool>>& items) {
  std::size_t n_pos = 0;
  for (const auto& it : items) n_pos += it.second;
  const std::size_t n_neg = items.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw UndefinedMetricError("AUROC undefined: need both classes (positives=" + std::to_string(n_pos) +
                               ", negatives=" + std::to_string(n_neg) + ")");
  }
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  // Twice the positive rank sum keeps tied (half-integer) ranks exact.
  double twice_rank_sum = 0.0;
  for (std::size_t i = 0; i < items.size();) {
    std::size_t j = i;
    std::size_t pos_in_group = 0;
    while (j < items.size() && items[j].first == items[i].first) pos_in_group += items[j++].second;
    // 1-based ranks i+1 .. j share the average (i + 1 + j) / 2.
    twice_rank_sum += static_cast<double>(pos_in_group) * static_cast<double>(i + 1 + j);
    i = j;
  }
  const double np = static_cast<double>(n_pos);
  const double twice_u = twice_rank_sum - np * (np + 1.0);
  return {twice_u / (2.0 * np * static_cast<double>(n_neg)), n_pos, n_neg};
}

std::string format_value(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

}  // namespace

double auroc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("auroc: scores/labels length mismatch");
  std::vector<std::pair<double, bool>> items(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw std::invalid_argument("auroc: labels must be 0/1");
    if (std::isnan(scores[i])) throw std::invalid_argument("auroc: NaN score");
    items[i] = {scores[i], labels[i] == 1};
  }
  return rank_auroc(items).auroc;
}

namespace {

Counted pixel_auroc_counted(std::span<const std::vector<double>> maps, std::span<const TensorU8> masks,
                            PixelPooling pooling) {
  if (maps.size() != masks.size() || maps.empty()) throw std::invalid_argument("pixel_auroc: maps/masks mismatch");
  for (std::size_t i = 0; i < maps.size(); ++i) {
    if (maps[i].size() != masks[i].values.size()) {
      throw std::invalid_argument("pixel_auroc: shape mismatch for map " + std::to_string(i));
    }
  }
  auto collect = [&](std::size_t i, std::vector<std::pair<double, bool>>& items) {
    for (std::size_t p = 0; p < maps[i].size(); ++p) items.emplace_back(maps[i][p], masks[i].values[p] == 255);
  };
  if (pooling == PixelPooling::pooled) {
    std::vector<std::pair<double, bool>> items;
    items.reserve(maps.size() * maps[0].size());
    for (std::size_t i = 0; i < maps.size(); ++i) collect(i, items);
    return rank_auroc(items);
  }
  double sum = 0.0;
  std::size_t used = 0, n_pos = 0, n_neg = 0;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    std::vector<std::pair<double, bool>> items;
    collect(i, items);
    const auto pos = static_cast<std::size_t>(std::count_if(items.begin(), items.end(), [](auto& x) { return x.second; }));
    if (pos == 0 || pos == items.size()) continue;
    const auto c = rank_auroc(items);
    sum += c.auroc;
    n_pos += c.n_pos;
    n_neg += c.n_neg;
    ++used;
  }
  if (used == 0) throw UndefinedMetricError("per-image pixel AUROC undefined: no mask holds both classes");
  return {sum / static_cast<double>(used), n_pos, n_neg};
}

}  // namespace

double pixel_auroc(std::span<const std::vector<double>> maps, std::span<const TensorU8> masks, PixelPooling pooling) {
  return pixel_auroc_counted(maps, masks, pooling).auroc;
}

std::vector<AnomalyMap> score_split(const DatasetManifest& dataset, const FitResult& fit, const HyperParams& hp,
                                    Split split, ScoreSource source) {
  std::vector<AnomalyMap> out;
  for (const auto* r : dataset.split(split)) out.push_back(score_image(*r, fit.prompts, fit.prior, hp, source));
  return out;
}

std::vector<EvalRecord> evaluate(const DatasetManifest& dataset, const FitResult& fit, const HyperParams& hp,
                                 const EvalOptions& options) {
  const auto test = dataset.split(Split::test);
  if (test.empty()) throw std::invalid_argument("evaluate: test split is empty");
  const auto maps = score_split(dataset, fit, hp, Split::test, options.source);

  std::vector<EvalRecord> records;
  auto push = [&](const std::string& level, const Counted& c) {
    records.push_back({dataset.class_name, level, "none", 0.0, c.auroc, c.n_pos, c.n_neg, hp});
  };

  if (options.image_level) {
    std::vector<std::pair<double, bool>> items;
    for (std::size_t i = 0; i < test.size(); ++i) items.emplace_back(maps[i].image_score, test[i]->label == 1);
    try {
      push("image", rank_auroc(items));
    } catch (const UndefinedMetricError&) {
    }
  }

  const bool have_masks = std::all_of(test.begin(), test.end(), [](const auto* r) { return r->mask.has_value(); });
  if (have_masks) {
    std::vector<std::vector<double>> pixels;
    std::vector<TensorU8> masks;
    for (std::size_t i = 0; i < test.size(); ++i) {
      pixels.push_back(maps[i].pixels);
      masks.push_back(*test[i]->mask);
    }
    try {
      push(options.pooling == PixelPooling::pooled ? "pixel" : "pixel_per_image",
           pixel_auroc_counted(pixels, masks, options.pooling));
    } catch (const UndefinedMetricError&) {
    }
  }
  return records;
}

std::string to_string(SweepParam p) {
  switch (p) {
    case SweepParam::lambda: return "lambda";
    case SweepParam::topk_percent: return "k_percent";
    case SweepParam::margin: return "a";
  }
  return "?";
}

SweepParam sweep_param_from_string(const std::string& s) {
  if (s == "lambda") return SweepParam::lambda;
  if (s == "k" || s == "k_percent" || s == "topk" || s == "topk_percent") return SweepParam::topk_percent;
  if (s == "a" || s == "margin") return SweepParam::margin;
  throw std::invalid_argument("unknown sweep parameter '" + s + "' (expected lambda, k or a)");
}

HyperParams with_param(HyperParams hp, SweepParam p, double value) {
  switch (p) {
    case SweepParam::lambda: hp.lambda = value; break;
    case SweepParam::topk_percent: hp.topk_percent = value; break;
    case SweepParam::margin: hp.margin = value; break;
  }
  return hp;
}

SweepTable sweep(const DatasetManifest& dataset, const HyperParams& base, SweepParam parameter,
                 std::span<const double> values, const EvalOptions& options) {
  if (values.empty()) throw std::invalid_argument("sweep: no values");
  SweepTable table{parameter, std::vector<double>(values.begin(), values.end()), {}};
  EvalOptions opts = options;
  opts.image_level = false;
  for (double v : values) {
    const auto hp = with_param(base, parameter, v);
    const auto fitted = fit(dataset, hp);
    auto recs = evaluate(dataset, fitted, hp, opts);
    if (recs.empty()) throw UndefinedMetricError("sweep: pixel AUROC undefined for " + dataset.class_name);
    auto r = recs.front();
    r.parameter = to_string(parameter);
    r.value = v;
    table.records.push_back(std::move(r));
  }
  return table;
}

std::string to_csv(std::span<const EvalRecord> records) {
  std::string out = "class,parameter,value,level,auroc,n_pos,n_neg\n";
  char buf[64];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof buf, "%.6f", r.auroc);
    out += r.class_name + "," + r.parameter + "," + (r.parameter == "none" ? "" : format_value(r.value)) + "," +
           r.level + "," + buf + "," + std::to_string(r.n_pos) + "," + std::to_string(r.n_neg) + "\n";
  }
  return out;
}

void write_csv(const std::filesystem::path& path, std::span<const EvalRecord> records) {
  const auto text = to_csv(records);
  write_file_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

}  // namespace patchdev
