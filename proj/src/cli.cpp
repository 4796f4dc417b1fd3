#include "patchdev/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "patchdev/embedstore.hpp"
#include "patchdev/evalkit.hpp"
#include "patchdev/scoremap.hpp"
#include "patchdev/synthgen.hpp"
#include "patchdev/trainer.hpp"

namespace patchdev::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  write_file_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

// Hyperparameter flags bound one-to-one to HyperParams fields.
class HpFlags {
 public:
  void add(CLI::App* app, bool training) {
    auto opt = [&](const std::string& flags, auto& target, const std::string& desc) {
      auto* o = app->add_option(flags, target, desc);
      opts_[o->get_name()] = o;
      return o;
    };
    opt("--topk-percent,-k", hp_.topk_percent, "Top-K bag size as a percentage of patches");
    opt("--sign-mode", sign_mode_, "signed | absolute")->check(CLI::IsMember({"signed", "absolute"}));
    opt("--blur-sigma", hp_.blur_sigma, "Gaussian smoothing of pixel maps, 0 disables");
    if (!training) return;
    opt("--lambda", hp_.lambda, "Deviation loss weight");
    opt("--margin,-a", hp_.margin, "Deviation margin a");
    opt("--learning-rate", hp_.learning_rate, "Gradient descent step size");
    opt("--epochs", hp_.epochs, "Number of full-batch epochs");
    opt("--prior-mode", prior_mode_, "empirical | reference")->check(CLI::IsMember({"empirical", "reference"}));
    opt("--prior-channel", prior_channel_, "abnormal | normal")->check(CLI::IsMember({"abnormal", "normal"}));
    opt("--temperature", hp_.temperature, "Alignment softmax temperature");
    opt("--reference-count", hp_.reference_count, "Draws for the reference prior");
    auto flag = [&](const std::string& name, bool& target, const std::string& desc) {
      auto* o = app->add_flag(name, target, desc);
      opts_[o->get_name()] = o;
    };
    flag("--pseudo-anomaly", hp_.pseudo_anomaly, "Synthesize margin-branch bags from the train image");
    flag("--shared-context", hp_.shared_context, "Learn a delta shared by both prompts");
  }

  HyperParams resolve(HyperParams base) const {
    auto set = [&](const char* name) { return opts_.count(name) && opts_.at(name)->count() > 0; };
    if (set("--topk-percent")) base.topk_percent = hp_.topk_percent;
    if (set("--sign-mode")) base.sign_mode = sign_mode_from_string(sign_mode_);
    if (set("--blur-sigma")) base.blur_sigma = hp_.blur_sigma;
    if (set("--lambda")) base.lambda = hp_.lambda;
    if (set("--margin")) base.margin = hp_.margin;
    if (set("--learning-rate")) base.learning_rate = hp_.learning_rate;
    if (set("--epochs")) base.epochs = hp_.epochs;
    if (set("--prior-mode")) base.prior_mode = prior_mode_from_string(prior_mode_);
    if (set("--prior-channel")) base.prior_channel = prior_channel_from_string(prior_channel_);
    if (set("--temperature")) base.temperature = hp_.temperature;
    if (set("--reference-count")) base.reference_count = hp_.reference_count;
    if (set("--pseudo-anomaly")) base.pseudo_anomaly = hp_.pseudo_anomaly;
    if (set("--shared-context")) base.shared_context = hp_.shared_context;
    return base;
  }

 private:
  HyperParams hp_;
  std::string sign_mode_ = "signed";
  std::string prior_mode_ = "empirical";
  std::string prior_channel_ = "abnormal";
  std::map<std::string, CLI::Option*> opts_;
};

std::vector<std::string> hp_args(const HyperParams& hp, bool training) {
  std::vector<std::string> a{"--topk-percent", num(hp.topk_percent), "--sign-mode", to_string(hp.sign_mode),
                             "--blur-sigma", num(hp.blur_sigma)};
  if (!training) return a;
  const std::vector<std::string> t{"--lambda", num(hp.lambda), "--margin", num(hp.margin), "--learning-rate",
                                   num(hp.learning_rate), "--epochs", std::to_string(hp.epochs), "--seed",
                                   std::to_string(hp.seed), "--prior-mode", to_string(hp.prior_mode),
                                   "--prior-channel", to_string(hp.prior_channel), "--temperature",
                                   num(hp.temperature), "--reference-count", std::to_string(hp.reference_count)};
  a.insert(a.end(), t.begin(), t.end());
  if (hp.pseudo_anomaly) a.push_back("--pseudo-anomaly");
  if (hp.shared_context) a.push_back("--shared-context");
  return a;
}

void write_resolved(const fs::path& path, const std::string& subcommand, std::vector<std::string> replay,
                    json extra) {
  replay.insert(replay.begin(), subcommand);
  extra["subcommand"] = subcommand;
  extra["replay"] = replay;
  write_text(path, extra.dump(2) + "\n");
}

void check_hp(const HyperParams& hp) {
  try {
    hp.check();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

class Cli {
 public:
  Cli(std::ostream& out, std::ostream& err) : out_(out), err_(err) {}

  int run(const std::vector<std::string>& args) {
    CLI::App app{"Deviation-scored patch anomaly detection on precomputed embeddings", "patchdev"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all");

    auto* validate = app.add_subcommand("validate", "Check a dataset directory against every invariant");
    validate->add_option("--data", data_, "Dataset directory")->required();
    validate->add_flag("--require-masks", require_masks_, "Require masks on every test record");

    auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset with planted anomalies");
    synth->add_option("--seed", synth_.seed, "Generator seed")->required();
    synth->add_option("--out", out_dir_, "Output dataset directory")->required();
    synth->add_option("--dim", synth_.dim, "Embedding dimension");
    synth->add_option("--grid-h", synth_.grid.h, "Patch grid rows");
    synth->add_option("--grid-w", synth_.grid.w, "Patch grid columns");
    synth->add_option("--test-images", synth_.test_images, "Number of test images");
    synth->add_option("--anomaly-fraction", synth_.anomaly_fraction, "Anomalous block size as a patch fraction");
    synth->add_option("--noise", synth_.noise, "Angular spread of normal patches (radians)");
    synth->add_option("--alpha", synth_.alpha, "Mixing toward the abnormal anchor");
    synth->add_option("--hard-fraction", synth_.hard_fraction, "Fraction of normal-image patches with doubled noise");
    synth->add_option("--class-name", synth_.class_name, "Class name stored in the manifest");

    auto* fitc = app.add_subcommand("fit", "Refine prompt deltas on the train split");
    fitc->add_option("--data", data_, "Dataset directory")->required();
    fitc->add_option("--seed", seed_, "Run seed")->required();
    fitc->add_option("--out", out_dir_, "Output directory (default <data>/learned)");
    fit_flags_.add(fitc, true);

    auto* score = app.add_subcommand("score", "Write anomaly maps for the test split");
    score->add_option("--data", data_, "Dataset directory")->required();
    score->add_option("--learned", learned_, "Fit output directory (default <data>/learned)");
    score->add_option("--out", out_dir_, "Output directory (default <data>/scores)");
    score->add_option("--source", source_, "deviation | raw")->check(CLI::IsMember({"deviation", "raw"}));
    score_flags_.add(score, false);

    auto* evalc = app.add_subcommand("eval", "Image- and pixel-level AUROC over the test split");
    evalc->add_option("--data", data_, "Dataset directory")->required();
    evalc->add_option("--learned", learned_, "Fit output directory (default <data>/learned)");
    evalc->add_option("--out", out_file_, "CSV path (default <data>/eval.csv)");
    evalc->add_option("--source", source_, "deviation | raw")->check(CLI::IsMember({"deviation", "raw"}));
    evalc->add_option("--pooling", pooling_, "pooled | per-image")->check(CLI::IsMember({"pooled", "per-image"}));
    eval_flags_.add(evalc, false);

    auto* sweepc = app.add_subcommand("sweep", "Fit and evaluate across values of one hyperparameter");
    sweepc->add_option("--data", data_, "Dataset directory")->required();
    sweepc->add_option("--seed", seed_, "Run seed shared by every sweep point")->required();
    sweepc->add_option("--param", param_, "lambda | k | a")->required()->check(CLI::IsMember({"lambda", "k", "a"}));
    sweepc->add_option("--values", values_, "Comma-separated values")->required()->delimiter(',');
    sweepc->add_option("--out", out_file_, "CSV path (default <data>/sweep_<param>.csv)");
    sweepc->add_option("--pooling", pooling_, "pooled | per-image")->check(CLI::IsMember({"pooled", "per-image"}));
    sweep_flags_.add(sweepc, true);

    auto* heat = app.add_subcommand("heatmap", "Render PGM heatmaps from stored raw maps");
    heat->add_option("--maps", maps_dir_, "Directory of <id>.map.devt files")->required();
    heat->add_option("--out", out_dir_, "Output directory (default: same as --maps)");

    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
      app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
      out_ << app.help();
      return kExitOk;
    } catch (const CLI::CallForAllHelp& e) {
      out_ << app.help("", CLI::AppFormatMode::All);
      return kExitOk;
    } catch (const CLI::ParseError& e) {
      err_ << "usage error: " << e.what() << "\n";
      return kExitUsage;
    }

    try {
      if (validate->parsed()) return do_validate();
      if (synth->parsed()) return do_synth();
      if (fitc->parsed()) return do_fit();
      if (score->parsed()) return do_score();
      if (evalc->parsed()) return do_eval();
      if (sweepc->parsed()) return do_sweep();
      if (heat->parsed()) return do_heatmap();
    } catch (const UsageError& e) {
      err_ << "usage error: " << e.what() << "\n";
      return kExitUsage;
    } catch (const ValidationError& e) {
      print_violations(e.violations());
      return kExitFailure;
    } catch (const std::exception& e) {
      err_ << "error: " << e.what() << "\n";
      return kExitFailure;
    }
    return kExitUsage;
  }

 private:
  void print_violations(const std::vector<Violation>& vs) {
    err_ << data_ << ": " << vs.size() << " violation(s)\n";
    for (const auto& v : vs) err_ << "  " << v.describe() << "\n";
  }

  DatasetManifest load(bool require_masks) {
    auto m = load_dataset_unchecked(data_);
    if (auto vs = validate(m, {require_masks}); !vs.empty()) throw ValidationError(std::move(vs));
    return m;
  }

  int do_validate() {
    const auto m = load_dataset_unchecked(data_);
    const auto vs = validate(m, {require_masks_});
    if (vs.empty()) {
      out_ << data_ << ": ok (" << m.records.size() << " images, d=" << m.embed_dim << ", grid " << m.grid.h << "x"
           << m.grid.w << ")\n";
      return kExitOk;
    }
    for (const auto& v : vs) out_ << v.describe() << "\n";
    return kExitFailure;
  }

  int do_synth() {
    try {
      synth_.check();
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    write_dataset(generate(synth_), out_dir_);
    write_resolved(fs::path(out_dir_) / "resolved_config.json", "synth",
                   {"--seed", std::to_string(synth_.seed), "--out", out_dir_, "--dim", std::to_string(synth_.dim),
                    "--grid-h", std::to_string(synth_.grid.h), "--grid-w", std::to_string(synth_.grid.w),
                    "--test-images", std::to_string(synth_.test_images), "--anomaly-fraction",
                    num(synth_.anomaly_fraction), "--noise", num(synth_.noise), "--alpha", num(synth_.alpha),
                    "--hard-fraction", num(synth_.hard_fraction), "--class-name", synth_.class_name},
                   {{"config", synth_}});
    out_ << "wrote synthetic dataset to " << out_dir_ << "\n";
    return kExitOk;
  }

  int do_fit() {
    HyperParams hp = fit_flags_.resolve(HyperParams{});
    hp.seed = seed_;
    check_hp(hp);
    const auto m = load(false);
    const fs::path out = out_dir_.empty() ? fs::path(data_) / "learned" : fs::path(out_dir_);
    const auto result = fit(m, hp);
    if (result.report.sigma_clamped) err_ << "warning: prior sigma clamped to " << kSigmaFloor << "\n";
    save_fit(out, result, hp);
    auto replay = std::vector<std::string>{"--data", data_, "--out", out.string()};
    const auto h = hp_args(hp, true);
    replay.insert(replay.end(), h.begin(), h.end());
    write_resolved(out / "resolved_config.json", "fit", replay, {{"data", data_}, {"hyperparams", hp}});
    const auto& last = result.report.epochs.back();
    out_ << "fit " << m.class_name << ": " << hp.epochs << " epochs, final loss " << last.total << ", prior mu="
         << result.prior.mu << " sigma=" << result.prior.sigma << "\n";
    return kExitOk;
  }

  std::pair<FitResult, HyperParams> load_learned(const DatasetManifest& m, const HpFlags& flags) {
    const fs::path dir = learned_.empty() ? fs::path(data_) / "learned" : fs::path(learned_);
    HyperParams stored;
    auto r = load_fit(dir, m, &stored);
    learned_ = dir.string();
    const auto hp = flags.resolve(stored);
    check_hp(hp);
    return {std::move(r), hp};
  }

  std::vector<std::string> scoring_replay(const HyperParams& hp, const std::string& out) {
    std::vector<std::string> r{"--data", data_, "--learned", learned_, "--out", out, "--source", source_};
    const auto h = hp_args(hp, false);
    r.insert(r.end(), h.begin(), h.end());
    return r;
  }

  int do_score() {
    const auto m = load(false);
    const auto [fitted, hp] = load_learned(m, score_flags_);
    const fs::path out = out_dir_.empty() ? fs::path(data_) / "scores" : fs::path(out_dir_);
    const auto source = score_source_from_string(source_);
    const auto maps = score_split(m, fitted, hp, Split::test, source);
    for (const auto& map : maps) write_anomaly_map(out, map, hp);
    write_resolved(out / "resolved_config.json", "score", scoring_replay(hp, out.string()),
                   {{"data", data_}, {"hyperparams", hp}, {"score_source", to_string(source)}});
    out_ << "scored " << maps.size() << " test images into " << out.string() << "\n";
    return kExitOk;
  }

  int do_eval() {
    const auto m = load(true);
    const auto [fitted, hp] = load_learned(m, eval_flags_);
    const fs::path out = out_file_.empty() ? fs::path(data_) / "eval.csv" : fs::path(out_file_);
    EvalOptions opts;
    opts.source = score_source_from_string(source_);
    opts.pooling = pooling_ == "pooled" ? PixelPooling::pooled : PixelPooling::per_image;
    const auto records = evaluate(m, fitted, hp, opts);
    write_csv(out, records);
    auto replay = scoring_replay(hp, out.string());
    replay.push_back("--pooling");
    replay.push_back(pooling_);
    write_resolved(fs::path(out.string() + ".config.json"), "eval", replay,
                   {{"data", data_}, {"hyperparams", hp}, {"score_source", source_}, {"pooling", pooling_}});
    out_ << to_csv(records);
    return kExitOk;
  }

  int do_sweep() {
    HyperParams hp = sweep_flags_.resolve(HyperParams{});
    hp.seed = seed_;
    check_hp(hp);
    const auto param = sweep_param_from_string(param_);
    for (double v : values_) check_hp(with_param(hp, param, v));
    const auto m = load(true);
    const fs::path out = out_file_.empty() ? fs::path(data_) / ("sweep_" + param_ + ".csv") : fs::path(out_file_);
    EvalOptions opts;
    opts.pooling = pooling_ == "pooled" ? PixelPooling::pooled : PixelPooling::per_image;
    const auto table = sweep(m, hp, param, values_, opts);
    write_csv(out, table.records);
    std::string joined;
    for (double v : values_) joined += (joined.empty() ? "" : ",") + num(v);
    std::vector<std::string> replay{"--data", data_, "--param", param_, "--values", joined, "--out", out.string(),
                                    "--pooling", pooling_};
    const auto h = hp_args(hp, true);
    replay.insert(replay.end(), h.begin(), h.end());
    write_resolved(fs::path(out.string() + ".config.json"), "sweep", replay,
                   {{"data", data_}, {"hyperparams", hp}, {"parameter", to_string(param)}, {"values", values_}});
    out_ << to_csv(table.records);
    return kExitOk;
  }

  int do_heatmap() {
    const fs::path in(maps_dir_);
    const fs::path out = out_dir_.empty() ? in : fs::path(out_dir_);
    if (!fs::is_directory(in)) throw std::runtime_error("not a directory: " + in.string());
    std::vector<fs::path> files;
    const std::string suffix = ".map.devt";
    for (const auto& e : fs::directory_iterator(in)) {
      const auto name = e.path().filename().string();
      if (name.size() > suffix.size() && name.ends_with(suffix)) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      const auto t = read_tensor_f32(f);
      if (t.dims.size() != 2) throw FormatError(f.string() + ": expected a rank-2 map");
      const std::vector<double> pixels(t.values.begin(), t.values.end());
      const auto name = f.filename().string();
      write_file_bytes(out / (name.substr(0, name.size() - suffix.size()) + ".pgm"),
                       encode_pgm(pixels, t.dims[0], t.dims[1]));
    }
    write_resolved(out / "resolved_config.heatmap.json", "heatmap", {"--maps", maps_dir_, "--out", out.string()},
                   {{"maps", maps_dir_}, {"rendered", files.size()}});
    out_ << "rendered " << files.size() << " heatmaps into " << out.string() << "\n";
    return kExitOk;
  }

  std::ostream& out_;
  std::ostream& err_;
  std::string data_, out_dir_, out_file_, learned_, maps_dir_;
  std::string source_ = "deviation", pooling_ = "pooled", param_;
  std::vector<double> values_;
  std::uint64_t seed_ = 0;
  bool require_masks_ = false;
  SynthConfig synth_;
  HpFlags fit_flags_, score_flags_, eval_flags_, sweep_flags_;
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  return Cli(out, err).run(args);
}

int run(const std::vector<std::string>& args) { return run(args, std::cout, std::cerr); }

}  // namespace patchdev::cli
