#include <algorithm>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <type_traits>

#include "CLI11.hpp"

#include "akmnet/graph.hpp"
#include "akmnet/model_check.hpp"
#include "akmnet/primitive_checks.hpp"
#include "akmnet/report.hpp"

namespace fs = std::filesystem;
using namespace akmnet;
using report::json;
using report::RunConfig;

namespace {

enum ExitCode : int { kOk = 0, kCheckFailed = 1, kUsage = 2, kMismatch = 3, kDivergence = 4 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct CheckFailed : std::runtime_error {
  using std::runtime_error::runtime_error;
};

const std::vector<std::string> kAllVariants{"s123",      "s12",       "s13",       "s23",      "va-all",
                                            "va-norm16", "va-norm32", "va-random", "va-last10"};

struct Options {
  std::string config, manifest, out, variant, preset, precision, model_dir, weights;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> folds_parallel, epochs, random_count;
  std::optional<double> learning_rate;
  bool random_mean = false;
  std::vector<std::string> variants;

  // gradcheck
  std::size_t instances = 20;
  std::string inject_fault;
  bool primitives_only = false;

  // synth
  data::SynthSpec synth;
  bool pgm = false;
};

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config, "JSON run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--manifest", o.manifest, "Clip manifest CSV");
  cmd->add_option("--out", o.out, "Output directory");
  cmd->add_option("--seed", o.seed, "Master seed");
  cmd->add_option("--variant", o.variant, "s123, s12, s13, s23, va-all, va-norm<L>, va-random or va-last10");
  cmd->add_option("--preset", o.preset, "paper or desk")->check(CLI::IsMember({"paper", "desk"}));
  cmd->add_option("--precision", o.precision, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));
  cmd->add_option("--folds-parallel", o.folds_parallel, "LOSO folds run concurrently")->check(CLI::PositiveNumber);
  cmd->add_option("--epochs", o.epochs, "Training epochs")->check(CLI::PositiveNumber);
  cmd->add_option("--lr", o.learning_rate, "Initial learning rate");
  cmd->add_option("--random-count", o.random_count, "va-random subset size when no per-clip count is known");
}

void add_model_source(CLI::App* cmd, Options& o) {
  cmd->add_option("--model", o.model_dir, "Directory written by train")->required()->check(CLI::ExistingDirectory);
  cmd->add_option("--weights", o.weights, "Weight file (default: <model>/weights.akmw)")->check(CLI::ExistingFile);
}

RunConfig resolve_config(const Options& o) {
  RunConfig rc;
  if (!o.model_dir.empty()) {
    rc = report::load_run_config(fs::path(o.model_dir) / "resolved_config.json", RunConfig::for_preset("desk"));
  } else {
    rc = RunConfig::for_preset(o.preset.empty() ? "desk" : o.preset);
  }
  if (!o.config.empty()) {
    rc = report::load_run_config(o.config, rc);
    if (!o.preset.empty() && rc.preset != o.preset) {
      throw UsageError("--preset " + o.preset + " conflicts with preset '" + rc.preset + "' in " + o.config);
    }
  }
  if (o.seed) rc.train.seed = *o.seed;
  if (!o.precision.empty()) rc.precision = o.precision;
  if (!o.variant.empty()) rc.model.variant = model::parse_variant(o.variant);
  if (o.folds_parallel) rc.folds_parallel = *o.folds_parallel;
  if (o.epochs) rc.train.epochs = *o.epochs;
  if (o.learning_rate) rc.train.learning_rate = *o.learning_rate;
  if (o.random_count) rc.model.variant.count = *o.random_count;
  return rc;
}

fs::path require_out(const Options& o) {
  if (o.out.empty()) throw UsageError("--out is required");
  fs::create_directories(o.out);
  return o.out;
}

data::Manifest require_manifest(const Options& o) {
  if (o.manifest.empty()) throw UsageError("--manifest is required");
  if (!fs::is_regular_file(o.manifest)) throw UsageError("manifest '" + o.manifest + "' not found");
  return data::load_manifest(o.manifest);
}

void write_labels(const fs::path& path, const data::LabelMap& labels) {
  std::ofstream os(path);
  for (const auto& n : labels.names) os << n << '\n';
}

std::vector<std::string> read_labels(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw nn::WeightMismatch("model: missing '" + path.string() + "'");
  std::vector<std::string> names;
  for (std::string line; std::getline(is, line);) {
    if (!line.empty()) names.push_back(line);
  }
  return names;
}

void write_snapshot(const fs::path& out, const RunConfig& rc, const data::LabelMap& labels) {
  report::write_json(out / "resolved_config.json", report::to_json(rc));
  write_labels(out / "labels.txt", labels);
}

double mean_key_ratio(const std::vector<training::ClipPrediction>& predictions) {
  double sum = 0.0;
  for (const auto& p : predictions) {
    sum += static_cast<double>(p.selection.key_count()) / static_cast<double>(p.selection.frame_count());
  }
  return predictions.empty() ? 0.0 : sum / static_cast<double>(predictions.size());
}

template <typename F>
auto with_precision(const RunConfig& rc, F&& f) {
  if (rc.precision == "f64") return f(std::type_identity<double>{});
  return f(std::type_identity<float>{});
}

int cmd_train(const Options& o) {
  auto rc = resolve_config(o);
  const auto manifest = require_manifest(o);
  const auto out = require_out(o);
  rc.model.classes = manifest.labels.size();
  const auto clips = data::read_clips(manifest);
  write_snapshot(out, rc, manifest.labels);

  return with_precision(rc, [&]<typename T>(std::type_identity<T>) {
    nn::RngStream init(nn::RngStream(rc.train.seed).derive(1));
    nn::RngStream balance(nn::RngStream(rc.train.seed).derive(2));
    std::vector<std::size_t> missing;
    const auto balanced = training::balanced_training_set(clips, rc.model.classes, balance, &missing);
    for (auto c : missing) std::cerr << "warning: class '" << manifest.labels.names[c] << "' has no clip\n";

    model::AkmNet<T> net(rc.model, init);
    std::ofstream history(out / "history.jsonl", std::ios::binary);
    std::vector<training::EpochStats> stats;
    const auto on_epoch = [&](const training::EpochStats& s) {
      history << report::history_row(s).dump() << '\n' << std::flush;
      std::cout << "epoch " << s.epoch << "/" << rc.train.epochs << " loss " << s.loss << " key_ratio " << s.key_ratio
                << '\n';
      stats.push_back(s);
    };
    training::train(net, balanced, rc.train, on_epoch);
    net.save(out / "weights.akmw");

    const auto eval = training::evaluate(net, clips, rc.train);
    auto metrics = report::eval_metrics(eval, manifest.labels);
    metrics["split"] = "train";
    metrics["variant"] = rc.model.variant.name();
    metrics["epochs"] = stats.size();
    metrics["final_loss"] = stats.empty() ? 0.0 : stats.back().loss;
    metrics["key_ratio"] = mean_key_ratio(eval.predictions);
    report::write_json(out / "metrics.json", metrics);
    std::cout << "train accuracy " << eval.accuracy() << '\n';
    return kOk;
  });
}

template <typename T>
model::AkmNet<T> load_model(const Options& o, const RunConfig& rc, const data::Manifest& manifest) {
  const auto names = read_labels(fs::path(o.model_dir) / "labels.txt");
  if (names != manifest.labels.names) throw nn::WeightMismatch("model: manifest class list differs from the model's");
  nn::RngStream init(0);
  model::AkmNet<T> net(rc.model, init);
  net.load(o.weights.empty() ? fs::path(o.model_dir) / "weights.akmw" : fs::path(o.weights));
  return net;
}

// eval, mine and apex share the loading and evaluation pass.
template <typename F>
int with_evaluation(const Options& o, F&& emit) {
  const auto rc = resolve_config(o);
  const auto manifest = require_manifest(o);
  const auto out = require_out(o);
  const auto clips = data::read_clips(manifest);
  return with_precision(rc, [&]<typename T>(std::type_identity<T>) {
    const auto net = load_model<T>(o, rc, manifest);
    emit(training::evaluate(net, clips, rc.train), manifest, out);
    return kOk;
  });
}

int cmd_eval(const Options& o) {
  return with_evaluation(o, [](const training::EvalReport& ev, const data::Manifest& m, const fs::path& out) {
    auto metrics = report::eval_metrics(ev, m.labels);
    metrics["split"] = "eval";
    metrics["key_ratio"] = mean_key_ratio(ev.predictions);
    report::write_json(out / "metrics.json", metrics);
    report::write_confusion_csv(out / "confusion.csv", ev.confusion, m.labels);
    report::write_selection_csv(out / "selection.csv", ev.predictions);
    std::cout << "accuracy " << ev.accuracy() << " (" << ev.correct << "/" << ev.total << ")\n";
  });
}

int cmd_mine(const Options& o) {
  return with_evaluation(o, [](const training::EvalReport& ev, const data::Manifest&, const fs::path& out) {
    report::write_selection_csv(out / "selection.csv", ev.predictions);
    std::cout << "mined " << ev.predictions.size() << " clips, mean N/T " << mean_key_ratio(ev.predictions) << '\n';
  });
}

void write_apex(const fs::path& out, const std::vector<training::ClipPrediction>& predictions) {
  const auto overlap = training::apex_overlap(predictions);
  report::write_json(out / "apex.json", report::apex_json(overlap));
  report::write_distance_csv(out / "distances.csv", training::apex_distance(predictions));
  std::cout << "apex ratio " << overlap.ratio << " ratio_h " << overlap.ratio_h << " over " << overlap.evaluated
            << " clips (" << overlap.excluded << " excluded)\n";
}

int cmd_apex(const Options& o) {
  return with_evaluation(o, [](const training::EvalReport& ev, const data::Manifest&, const fs::path& out) {
    write_apex(out, ev.predictions);
  });
}

training::LosoResult run_loso(const fs::path& out, const RunConfig& rc, const data::Manifest& manifest,
                              const std::vector<data::Clip>& clips) {
  write_snapshot(out, rc, manifest.labels);
  return with_precision(rc, [&]<typename T>(std::type_identity<T>) {
    training::LosoOptions<T> opts;
    opts.parallel_folds = rc.folds_parallel;
    opts.on_fold = [&](std::size_t f, const training::FoldReport& r, const model::AkmNet<T>& net) {
      const auto dir = out / "folds" / r.subject;
      fs::create_directories(dir);
      net.save(dir / "weights.akmw");
      report::write_history(dir / "history.jsonl", r.history);
      for (const auto& w : r.warnings) std::cerr << "warning: " << w << '\n';
      std::cout << "fold " << f + 1 << " (" << r.subject << ") accuracy " << r.eval.accuracy() << '\n';
    };
    const auto result = training::loso_run<T>(clips, rc.model, rc.train, opts);

    std::vector<json> rows;
    std::vector<training::ClipPrediction> predictions;
    std::vector<std::vector<std::size_t>> pooled(rc.model.classes, std::vector<std::size_t>(rc.model.classes, 0));
    for (std::size_t f = 0; f < result.folds.size(); ++f) {
      const auto& fold = result.folds[f];
      rows.push_back(report::fold_row(f, fold));
      predictions.insert(predictions.end(), fold.eval.predictions.begin(), fold.eval.predictions.end());
      for (std::size_t r = 0; r < pooled.size(); ++r) {
        for (std::size_t c = 0; c < pooled.size(); ++c) pooled[r][c] += fold.eval.confusion[r][c];
      }
    }
    report::write_jsonl(out / "folds.jsonl", rows);
    report::write_confusion_csv(out / "confusion.csv", pooled, manifest.labels);
    report::write_selection_csv(out / "selection.csv", predictions);
    report::write_json(out / "loso.json", {{"variant", rc.model.variant.name()},
                                           {"folds", result.folds.size()},
                                           {"clips", predictions.size()},
                                           {"pooled_accuracy", result.pooled_accuracy},
                                           {"macro_accuracy", result.macro_accuracy},
                                           {"key_ratio", mean_key_ratio(predictions)}});
    write_apex(out, predictions);
    std::cout << "pooled accuracy " << result.pooled_accuracy << " macro " << result.macro_accuracy << '\n';
    return result;
  });
}

void check_random_count(const RunConfig& rc) {
  const auto& v = rc.model.variant;
  if (v.kind == model::VariantKind::va_random && v.count == 0 && v.clip_counts.empty()) {
    throw UsageError("va-random needs --random-count or per-clip counts in the config");
  }
}

int cmd_loso(const Options& o) {
  auto rc = resolve_config(o);
  const auto manifest = require_manifest(o);
  const auto out = require_out(o);
  rc.model.classes = manifest.labels.size();
  check_random_count(rc);
  run_loso(out, rc, manifest, data::read_clips(manifest));
  return kOk;
}

int cmd_ablate(const Options& o) {
  auto rc = resolve_config(o);
  const auto manifest = require_manifest(o);
  const auto out = require_out(o);
  rc.model.classes = manifest.labels.size();
  const auto clips = data::read_clips(manifest);
  auto names = o.variants.empty() ? kAllVariants : o.variants;
  // va-random borrows the key-frame counts of the default network.
  std::stable_partition(names.begin(), names.end(), [](const std::string& n) { return n == "s123"; });

  std::map<std::string, std::size_t> counts;
  json summary = json::array();
  for (const auto& name : names) {
    RunConfig v = rc;
    v.model.variant = model::parse_variant(name);
    if (v.model.variant.kind == model::VariantKind::va_random && !o.random_count) {
      if (counts.empty()) throw UsageError("va-random needs --random-count or s123 in the variant list");
      if (o.random_mean) {
        std::size_t total = 0;
        for (const auto& [id, n] : counts) total += n;
        v.model.variant.count = std::max<std::size_t>(1, (total + counts.size() / 2) / counts.size());
      } else {
        v.model.variant.clip_counts = counts;
      }
    }
    check_random_count(v);
    std::cout << "variant " << name << '\n';
    const auto result = run_loso(out / name, v, manifest, clips);
    double ratio = 0.0;
    std::size_t n = 0;
    for (const auto& f : result.folds) {
      for (const auto& p : f.eval.predictions) {
        if (name == "s123") counts[p.clip_id] = p.selection.key_count();
        ratio += static_cast<double>(p.selection.key_count()) / static_cast<double>(p.selection.frame_count());
        ++n;
      }
    }
    summary.push_back({{"variant", name},
                       {"pooled_accuracy", result.pooled_accuracy},
                       {"macro_accuracy", result.macro_accuracy},
                       {"key_ratio", n ? ratio / static_cast<double>(n) : 0.0}});
  }
  report::write_json(out / "ablation.json", summary);
  return kOk;
}

int cmd_synth(const Options& o) {
  const auto out = require_out(o);
  data::SynthSpec spec = o.synth;
  if (o.seed) spec.seed = *o.seed;
  spec.validate();
  data::write_synth(data::synth_generate(spec), out, o.pgm);
  std::cout << "wrote " << spec.clips << " clips to " << out.string() << '\n';
  return kOk;
}

int cmd_gradcheck(const Options& o) {
  const auto rc = resolve_config(o);
  const auto names = nn::primitive_names();
  if (!o.inject_fault.empty()) {
    if (std::find(names.begin(), names.end(), o.inject_fault) == names.end()) {
      throw UsageError("--inject-fault: unknown primitive '" + o.inject_fault + "'");
    }
    nn::inject_backward_fault(o.inject_fault);
  }
  constexpr double kPrimitiveTolerance = 1e-5;
  json doc;
  std::vector<std::string> failed;
  nn::RngStream rng(rc.train.seed);
  for (const auto& c : nn::check_primitives(rng)) {
    const bool ok = c.report.passed(kPrimitiveTolerance);
    std::cout << (ok ? "PASS" : "FAIL") << " primitive " << c.primitive << " worst " << c.report.worst()
              << " checked " << c.report.checked() << " skipped " << c.report.skipped() << '\n';
    doc["primitives"][c.primitive] = {{"worst", c.report.worst()},
                                      {"checked", c.report.checked()},
                                      {"skipped", c.report.skipped()},
                                      {"passed", ok}};
    if (!ok) failed.push_back(c.primitive);
  }
  if (!o.primitives_only) {
    model::ModelCheckConfig mc;
    mc.instances = o.instances;
    mc.seed = rc.train.seed;
    const auto result = model::check_model_gradients(mc);
    for (const auto& g : result.groups) {
      const bool ok = !g.nan && g.max_rel_error < mc.tolerance;
      std::cout << (ok ? "PASS" : "FAIL") << " group " << g.group << " worst " << g.max_rel_error << " ("
                << g.worst_parameter << ") checked " << g.checked << " skipped " << g.skipped << '\n';
      doc["groups"][g.group] = {{"worst", g.max_rel_error},
                                {"worst_parameter", g.worst_parameter},
                                {"checked", g.checked},
                                {"skipped", g.skipped},
                                {"passed", ok}};
      if (!ok) failed.push_back("group:" + g.group);
    }
    doc["skip_fraction"] = result.skip_fraction();
    std::cout << "skipped " << result.skipped << " of " << result.checked + result.skipped << " coordinates\n";
    if (result.skip_fraction() > mc.max_skip_fraction) failed.push_back("skip_fraction");
  }
  nn::clear_backward_fault();
  doc["failed"] = failed;
  if (!o.out.empty()) report::write_json(require_out(o) / "gradcheck.json", doc);
  if (!failed.empty()) {
    std::string list;
    for (const auto& f : failed) list += (list.empty() ? "" : " ") + f;
    throw CheckFailed("gradient check failed: " + list);
  }
  return kOk;
}

void print_error(const std::string& stage, int code, const std::string& message) {
  std::cerr << json{{"error", message}, {"stage", stage}, {"exit", code}}.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive key-frame mining network: training, evaluation and analysis"};
  app.require_subcommand(1);
  Options o;

  auto* train = app.add_subcommand("train", "Train one model on a manifest");
  auto* eval = app.add_subcommand("eval", "Evaluate a trained model");
  auto* loso = app.add_subcommand("loso", "Leave-one-subject-out cross validation");
  auto* mine = app.add_subcommand("mine", "Export the key frames mined per clip");
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  auto* synth = app.add_subcommand("synth", "Generate a synthetic planted-key-frame dataset");
  auto* apex = app.add_subcommand("apex", "Apex overlap and apex/max-key distances");
  auto* ablate = app.add_subcommand("ablate", "LOSO for each selection variant");
  for (auto* cmd : {train, eval, loso, mine, gradcheck, synth, apex, ablate}) add_common(cmd, o);
  for (auto* cmd : {eval, mine, apex}) add_model_source(cmd, o);

  ablate->add_option("--variants", o.variants, "Variants to run (default: all)")->delimiter(',');
  ablate->add_flag("--random-mean", o.random_mean, "va-random uses the mean s123 count instead of per-clip counts");

  gradcheck->add_option("--instances", o.instances, "Random micro-instances")->check(CLI::PositiveNumber);
  gradcheck->add_option("--inject-fault", o.inject_fault, "Distort the backward rule of one primitive");
  gradcheck->add_flag("--primitives-only", o.primitives_only, "Skip the full-model check");

  auto& s = o.synth;
  synth->add_option("--clips", s.clips)->capture_default_str();
  synth->add_option("--subjects", s.subjects)->capture_default_str();
  synth->add_option("--classes", s.classes)->capture_default_str();
  synth->add_option("--t-min", s.t_min)->capture_default_str();
  synth->add_option("--t-max", s.t_max)->capture_default_str();
  synth->add_option("--signal", s.signal_frames, "Planted signal frames per clip")->capture_default_str();
  synth->add_option("--noise", s.noise)->capture_default_str();
  synth->add_option("--amplitude", s.amplitude)->capture_default_str();
  synth->add_option("--background", s.background)->capture_default_str();
  synth->add_option("--side", s.side)->capture_default_str();
  synth->add_option("--framerate", s.framerate)->capture_default_str();
  synth->add_flag("--pgm", o.pgm, "Write PGM frame directories instead of packed tensors");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  const std::string stage = app.get_subcommands().front()->get_name();
  try {
    if (stage == "train") return cmd_train(o);
    if (stage == "eval") return cmd_eval(o);
    if (stage == "loso") return cmd_loso(o);
    if (stage == "mine") return cmd_mine(o);
    if (stage == "gradcheck") return cmd_gradcheck(o);
    if (stage == "synth") return cmd_synth(o);
    if (stage == "apex") return cmd_apex(o);
    return cmd_ablate(o);
  } catch (const CheckFailed& e) {
    print_error(stage, kCheckFailed, e.what());
    return kCheckFailed;
  } catch (const nn::WeightMismatch& e) {
    print_error(stage, kMismatch, e.what());
    return kMismatch;
  } catch (const training::Divergence& e) {
    print_error(stage, kDivergence, e.what());
    return kDivergence;
  } catch (const UsageError& e) {
    print_error(stage, kUsage, e.what());
    return kUsage;
  } catch (const data::DataError& e) {
    print_error(stage, kUsage, e.what());
    return kUsage;
  } catch (const std::invalid_argument& e) {
    print_error(stage, kUsage, e.what());
    return kUsage;
  } catch (const std::exception& e) {
    print_error(stage, kCheckFailed, e.what());
    return kCheckFailed;
  }
}
