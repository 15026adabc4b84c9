#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "akmnet/model_check.hpp"
#include "akmnet/ops.hpp"
#include "akmnet/report.hpp"
#include "akmnet/training.hpp"
#include "mining_oracle.hpp"

using namespace akmnet;
namespace fs = std::filesystem;
using report::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os.precision(digits);
  os << v;
  return os.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::vector<std::string> lines_of(const fs::path& p) {
  std::ifstream is(p);
  std::vector<std::string> out;
  for (std::string line; std::getline(is, line);) out.push_back(line);
  return out;
}

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string cell; std::getline(ss, cell, sep);) out.push_back(cell);
  if (!text.empty() && text.back() == sep) out.emplace_back();
  return out;
}

std::vector<std::size_t> numbers(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  for (std::size_t v; ss >> v;) out.push_back(v);
  return out;
}

nn::Tensor<double> random_features(std::size_t frames, std::size_t channels, std::size_t side, nn::RngStream& rng) {
  nn::Tensor<double> f({frames, channels, side, side});
  for (auto& v : f.values()) v = rng.normal();
  return f;
}

mining::AkmParams<double> akm_params(const std::vector<double>& w) {
  nn::ParameterSet<double> registry;
  nn::RngStream rng(1);
  auto p = mining::AkmParams<double>::create(w.size(), rng, registry);
  std::copy(w.begin(), w.end(), p.attention.mutable_value().values().begin());
  return p;
}

// Gradient check of the whole network.
Outcome criterion_1() {
  const auto start = Clock::now();
  model::ModelCheckConfig config;
  const auto result = model::check_model_gradients(config);
  const double elapsed = seconds_since(start);
  std::ostringstream d;
  for (const auto& g : result.groups) d << g.group << " " << fmt(g.max_rel_error, 3) << "; ";
  d << "skipped " << fmt(100.0 * result.skip_fraction(), 3) << "%, " << fmt(elapsed, 3) << " s";
  return {result.passed(config) && elapsed < 120.0, d.str()};
}

// Straight-through routing audit: dedicated passes with the gate path on,
// plus every backward pass made by the other criteria of this run.
Outcome criterion_2() {
  nn::RngStream rng(31);
  for (int i = 0; i < 500; ++i) {
    const std::size_t frames = 1 + rng.index(16);
    const std::size_t channels = 2 + rng.index(6);
    auto features = nn::parameter(random_features(frames, channels, 2, rng));
    std::vector<double> w(channels);
    for (auto& v : w) v = rng.normal();
    const auto params = akm_params(w);
    auto out = mining::mine(features, params);
    nn::Tensor<double> weights(out.sparse.key_frames.shape());
    for (auto& v : weights.values()) v = rng.normal();
    nn::backpropagate(nn::add(nn::sum(nn::mul(out.sparse.key_frames, nn::constant(weights))), out.sparse.loss));
  }
  const auto& audit = mining::routing_audit();
  const auto passes = audit.passes.load();
  const auto frame = audit.frame_violations.load();
  const auto gate = audit.gate_violations.load();
  return {passes >= 500 && frame == 0 && gate == 0,
          std::to_string(passes) + " backward passes, " + std::to_string(frame) + " frame and " +
              std::to_string(gate) + " gate violations"};
}

// Forward values against the independent straight-line oracle.
Outcome criterion_3() {
  const auto start = Clock::now();
  nn::RngStream rng(303);
  double worst = 0.0;
  std::size_t near_threshold = 0, mask_mismatch = 0;
  for (int instance = 0; instance < 1000; ++instance) {
    const std::size_t frames = 1 + rng.index(24);
    const std::size_t channels = 2 + rng.index(15);
    const std::size_t side = 1 + rng.index(3);
    const auto f = random_features(frames, channels, side, rng);
    std::vector<double> w(channels);
    for (auto& v : w) v = rng.normal();
    const auto out = mining::mine(nn::constant(f), akm_params(w));
    const auto o = oracle::oracle(f.vector(), frames, channels, side * side, w);
    const auto& r = out.result;
    const auto track = [&](double a, double b) { worst = std::max(worst, std::abs(a - b)); };
    for (std::size_t t = 0; t < frames; ++t) {
      track(r.alpha[t], o.alpha[t]);
      track(r.beta[t], o.beta[t]);
    }
    for (std::size_t c = 0; c < channels; ++c) track(r.global[c], o.global[c]);
    // The hard selection may legitimately differ only within rounding of the mean.
    if (r.boundary_margin() <= 1e-9) {
      ++near_threshold;
      continue;
    }
    if (!std::equal(r.mask.begin(), r.mask.end(), o.mask.begin()) || r.fallback != o.fallback) ++mask_mismatch;
    track(out.sparse.sparsity.value().item(), o.sparsity);
    track(out.sparse.margin.value().item(), o.margin);
    track(out.sparse.loss.value().item(), o.loss);
  }
  const double elapsed = seconds_since(start);
  return {worst <= 1e-6 && mask_mismatch == 0 && elapsed < 60.0,
          "max abs diff " + fmt(worst, 3) + ", mask mismatches " + std::to_string(mask_mismatch) + ", " +
              std::to_string(near_threshold) + " at threshold, " + fmt(elapsed, 3) + " s"};
}

// Selection invariants on random inputs, including permutation equivariance.
Outcome criterion_4() {
  nn::RngStream rng(404);
  std::size_t violations = 0, fallbacks = 0;
  std::string first;
  const auto fail = [&](int instance, const std::string& what) {
    if (violations++ == 0) first = "instance " + std::to_string(instance) + ": " + what;
  };
  for (int instance = 0; instance < 1000; ++instance) {
    const std::size_t frames = 1 + rng.index(20);
    const std::size_t channels = 2 + rng.index(10);
    auto f = random_features(frames, channels, 2, rng);
    const std::size_t per = f.size() / frames;
    if (instance % 10 == 0) {
      for (std::size_t t = 1; t < frames; ++t) std::copy_n(f.data(), per, f.data() + t * per);
    }
    std::vector<double> w(channels);
    for (auto& v : w) v = rng.normal();
    const auto params = akm_params(w);
    const auto out = mining::mine(nn::constant(f), params);
    const auto& r = out.result;

    const double gs = out.sparse.sparsity.value().item();
    const double mmm = out.sparse.margin.value().item();
    if (!(gs >= 0.0)) fail(instance, "negative sparsity loss");
    if (!(mmm >= 0.0 && mmm <= 2.0)) fail(instance, "margin loss outside [0, 2]");
    if (mmm == 2.0 && !r.fallback) fail(instance, "margin loss of 2 without fallback");
    const auto keys = r.key_indices();
    if (keys.empty()) fail(instance, "no key frame");
    if (!keys.empty() && (keys.front() < 1 || keys.back() > frames)) fail(instance, "index out of range");
    if (std::adjacent_find(keys.begin(), keys.end(), std::greater_equal<>()) != keys.end()) {
      fail(instance, "indices not strictly increasing");
    }
    auto sorted = r.beta;
    std::sort(sorted.begin(), sorted.end());
    const double mean = std::accumulate(sorted.begin(), sorted.end(), 0.0) / static_cast<double>(frames);
    if (r.threshold != std::clamp(mean, sorted.front(), sorted.back())) fail(instance, "threshold is not the mean");
    for (std::size_t t = 0; t < frames; ++t) {
      if (!(r.alpha[t] > 0.0 && r.alpha[t] < 1.0)) fail(instance, "alpha outside (0, 1)");
      if (!(r.beta[t] >= -1.0 && r.beta[t] <= 1.0)) fail(instance, "beta outside [-1, 1]");
    }
    if (r.fallback) {
      ++fallbacks;
      const auto top = std::max_element(r.beta.begin(), r.beta.end()) - r.beta.begin();
      if (r.selected != std::vector<std::size_t>{static_cast<std::size_t>(top)}) fail(instance, "bad fallback");
      if (std::any_of(r.beta.begin(), r.beta.end(), [&](double b) { return b > r.threshold; })) {
        fail(instance, "fallback with a score above the mean");
      }
    } else {
      for (std::size_t t = 0; t < frames; ++t) {
        if ((r.mask[t] == 1) != (r.beta[t] > r.threshold)) fail(instance, "mask disagrees with threshold");
      }
    }
    if (instance % 10 == 0 && frames > 1 && !(r.fallback && keys == std::vector<std::size_t>{1})) {
      fail(instance, "constant clip did not fall back to frame 1");
    }

    // Exact equivariance; only tied scores (constant clips) are exempt, since
    // the fallback then picks the earliest frame.
    if (instance % 10 == 0) continue;
    std::vector<std::size_t> perm(frames);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    for (std::size_t i = frames - 1; i > 0; --i) std::swap(perm[i], perm[rng.index(i + 1)]);
    nn::Tensor<double> g(f.shape());
    for (std::size_t t = 0; t < frames; ++t) std::copy_n(f.data() + perm[t] * per, per, g.data() + t * per);
    const auto p = mining::mine(nn::constant(g), params).result;
    for (std::size_t t = 0; t < frames; ++t) {
      if (p.alpha[t] != r.alpha[perm[t]] || p.beta[t] != r.beta[perm[t]] || p.mask[t] != r.mask[perm[t]]) {
        fail(instance, "not permutation equivariant");
        break;
      }
    }
  }
  return {violations == 0 && fallbacks >= 100,
          std::to_string(violations) + " violations, " + std::to_string(fallbacks) + " fallbacks" +
              (first.empty() ? "" : ", first " + first)};
}

// Variable clip length on one desk model.
Outcome criterion_5() {
  auto rc = report::RunConfig::for_preset("desk");
  nn::RngStream init(5);
  model::AkmNet<float> net(rc.model, init);
  const std::size_t side = rc.model.backbone.input_side;
  std::ostringstream d;
  bool ok = true;
  for (std::size_t frames : {1, 9, 141}) {
    nn::RngStream rng(frames);
    data::Clip clip;
    clip.id = "len" + std::to_string(frames);
    for (std::size_t t = 0; t < frames; ++t) {
      nn::Tensor<float> frame({1, side, side});
      for (auto& v : frame.values()) v = static_cast<float>(rng.uniform());
      clip.frames.push_back(std::move(frame));
    }
    try {
      net.parameters().zero_grad();
      const auto out = net.forward(clip, 1, temporal::Mode::train, rng);
      nn::backpropagate(out.loss);
      bool finite = std::isfinite(out.loss.value().item());
      for (const auto& e : net.parameters().entries()) {
        for (auto g : e.var.grad().values()) finite = finite && std::isfinite(g);
      }
      const auto probs = net.predict(clip, rng);
      const double total = std::accumulate(probs.begin(), probs.end(), 0.0);
      const auto n = out.selection.key_count();
      const bool good = finite && out.selection.frame_count() == frames && n >= 1 && n <= frames &&
                        probs.size() == rc.model.classes && std::abs(total - 1.0) < 1e-5;
      ok = ok && good;
      d << "T=" << frames << " N=" << n << (good ? " ok" : " bad") << "; ";
    } catch (const std::exception& e) {
      ok = false;
      d << "T=" << frames << " threw " << e.what() << "; ";
    }
  }
  net.parameters().zero_grad();
  return {ok, d.str()};
}

// Trains the desk model on 8 synthetic clips and records the epoch at which
// training accuracy first reaches 100% (checked every 10 epochs).
Outcome criterion_6(const fs::path& dir) {
  const auto start = Clock::now();
  data::SynthSpec spec;
  spec.clips = 8;
  spec.classes = 4;
  spec.signal_frames = 3;
  spec.noise = 0.2;
  spec.amplitude = 1.0;
  const auto ds = data::synth_generate(spec);

  auto rc = report::RunConfig::for_preset("desk");
  rc.model.classes = spec.classes;
  rc.train.epochs = 200;
  rc.train.learning_rate = 0.01;
  nn::RngStream init(nn::RngStream(rc.train.seed).derive(1));
  nn::RngStream balance(nn::RngStream(rc.train.seed).derive(2));
  const auto balanced = training::balanced_training_set(ds.clips, rc.model.classes, balance);
  model::AkmNet<float> net(rc.model, init);

  std::optional<std::size_t> first_perfect;
  const auto history = training::train(net, balanced, rc.train, [&](const training::EpochStats& s) {
    if (!first_perfect && s.epoch % 10 == 0 && training::evaluate(net, ds.clips, rc.train).accuracy() == 1.0) {
      first_perfect = s.epoch;
    }
  });
  const auto eval = training::evaluate(net, ds.clips, rc.train);
  fs::create_directories(dir);
  net.save(dir / "weights.akmw");
  report::write_history(dir / "history.jsonl", history);
  report::write_json(dir / "metrics.json", report::eval_metrics(eval, ds.labels));
  report::write_selection_csv(dir / "selection.csv", eval.predictions);

  const double elapsed = seconds_since(start);
  return {eval.accuracy() == 1.0 && elapsed < 600.0,
          "final training accuracy " + fmt(eval.accuracy()) + ", first 100% at epoch " +
              (first_perfect ? std::to_string(*first_perfect) : std::string("never")) + ", " +
              fmt(elapsed, 3) + " s"};
}

// LOSO on the default synthetic set: recall of the planted frames against
// the N/T recall of a uniformly random subset of the same size.
constexpr std::size_t kLosoEpochs = 20;

Outcome criterion_7(const fs::path& dir) {
  const auto start = Clock::now();
  data::SynthSpec spec;  // 60 clips, 6 subjects, 4 classes, 3 signal frames, noise 0.2, amplitude 1
  const auto ds = data::synth_generate(spec);
  std::map<std::string, data::PlantedSignal> truth;
  for (const auto& t : ds.truth) truth[t.clip_id] = t;

  auto rc = report::RunConfig::for_preset("desk");
  rc.model.classes = spec.classes;
  rc.train.epochs = kLosoEpochs;
  training::LosoOptions<float> opts;
  opts.on_fold = [&](std::size_t, const training::FoldReport& r, const model::AkmNet<float>& net) {
    fs::create_directories(dir / "folds" / r.subject);
    net.save(dir / "folds" / r.subject / "weights.akmw");
    report::write_history(dir / "folds" / r.subject / "history.jsonl", r.history);
  };
  const auto result = training::loso_run<float>(ds.clips, rc.model, rc.train, opts);

  std::vector<training::ClipPrediction> predictions;
  std::vector<json> rows;
  for (std::size_t f = 0; f < result.folds.size(); ++f) {
    rows.push_back(report::fold_row(f, result.folds[f]));
    const auto& p = result.folds[f].eval.predictions;
    predictions.insert(predictions.end(), p.begin(), p.end());
  }
  report::write_jsonl(dir / "folds.jsonl", rows);
  report::write_selection_csv(dir / "selection.csv", predictions);

  double recall = 0.0, baseline = 0.0;
  for (const auto& p : predictions) {
    const auto& t = truth.at(p.clip_id);
    std::size_t hits = 0;
    for (auto k : p.selection.key_indices()) hits += k >= t.start && k < t.start + t.length;
    recall += static_cast<double>(hits) / static_cast<double>(t.length);
    baseline += static_cast<double>(p.selection.key_count()) / static_cast<double>(p.selection.frame_count());
  }
  const double n = static_cast<double>(predictions.size());
  const double ratio = baseline > 0.0 ? recall / baseline : 0.0;
  return {ratio >= 2.0, "recall " + fmt(recall / n) + " vs baseline " + fmt(baseline / n) + " (ratio " + fmt(ratio) +
                            ", need 2), pooled accuracy " + fmt(result.pooled_accuracy) + ", " +
                            fmt(seconds_since(start), 3) + " s"};
}

int run_cli(const std::string& cli, const std::string& args, const fs::path& log) {
  const std::string cmd = cli + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

const std::vector<std::string> kVariants{"s123",      "s12",       "s13",       "s23",      "va-all",
                                         "va-norm16", "va-norm32", "va-random", "va-last10"};

// Every ablation variant through the command-line ablation on the default
// synthetic set (two epochs per fold), with the reports checked against their
// schema.
Outcome criterion_8(const fs::path& dir, const std::string& cli) {
  const auto start = Clock::now();
  fs::create_directories(dir);
  if (run_cli(cli, "synth --out " + (dir / "data").string() + " --seed 1", dir / "synth.log")) {
    return {false, "synth failed"};
  }
  const auto manifest_path = dir / "data" / "manifest.csv";
  const int code = run_cli(cli, "ablate --preset desk --epochs 2 --manifest " + manifest_path.string() + " --out " +
                                    (dir / "ablate").string(),
                           dir / "ablate.log");
  if (code != 0) return {false, "ablate exited with " + std::to_string(code)};

  const auto manifest = data::load_manifest(manifest_path);
  std::map<std::string, std::size_t> lengths;
  for (const auto& c : data::read_clips(manifest)) lengths[c.id] = c.length();
  const std::size_t classes = manifest.labels.size();
  const std::size_t clips = lengths.size();

  std::vector<std::string> problems;
  const auto expect = [&](bool cond, const std::string& what) {
    if (!cond) problems.push_back(what);
  };
  const auto has = [&](const json& j, const std::vector<std::pair<std::string, json::value_t>>& keys,
                       const std::string& where) {
    for (const auto& [key, type] : keys) {
      const bool number = type == json::value_t::number_float;
      expect(j.contains(key) && (number ? j.at(key).is_number() : j.at(key).type() == type),
             where + ": field '" + key + "'");
    }
  };
  using V = json::value_t;
  const auto confusion_ok = [&](const json& m) {
    if (!m.is_array() || m.size() != classes) return false;
    return std::all_of(m.begin(), m.end(), [&](const json& row) { return row.is_array() && row.size() == classes; });
  };

  try {
    const auto summary = json::parse(slurp(dir / "ablate" / "ablation.json"));
    expect(summary.is_array() && summary.size() == kVariants.size(), "ablation.json entries");
    for (const auto& name : kVariants) {
      const auto vdir = dir / "ablate" / name;
      const auto where = name + "/";
      const auto config = report::load_run_config(vdir / "resolved_config.json", report::RunConfig{});
      expect(config.model.variant.name() == name || name.starts_with("va-norm"), where + "resolved_config variant");

      const auto loso = json::parse(slurp(vdir / "loso.json"));
      has(loso, {{"variant", V::string}, {"folds", V::number_unsigned}, {"clips", V::number_unsigned},
                 {"pooled_accuracy", V::number_float}, {"macro_accuracy", V::number_float},
                 {"key_ratio", V::number_float}},
          where + "loso.json");
      expect(loso.value("clips", 0u) == clips, where + "loso.json clips");

      std::size_t total = 0;
      for (const auto& line : lines_of(vdir / "folds.jsonl")) {
        const auto row = json::parse(line);
        has(row, {{"fold", V::number_unsigned}, {"subject", V::string}, {"accuracy", V::number_float},
                  {"correct", V::number_unsigned}, {"total", V::number_unsigned}, {"key_ratio", V::number_float},
                  {"confusion", V::array}, {"warnings", V::array}},
            where + "folds.jsonl");
        expect(confusion_ok(row.at("confusion")), where + "fold confusion shape");
        total += row.value("total", 0u);
        const auto history = lines_of(vdir / "folds" / row.value("subject", "") / "history.jsonl");
        expect(history.size() == 2, where + "history length");
        for (const auto& h : history) {
          has(json::parse(h), {{"epoch", V::number_unsigned}, {"lr", V::number_float}, {"loss", V::number_float},
                               {"classification", V::number_float}, {"sparsity", V::number_float},
                               {"margin", V::number_float}, {"key_ratio", V::number_float},
                               {"steps", V::number_unsigned}},
              where + "history.jsonl");
        }
        expect(fs::file_size(vdir / "folds" / row.value("subject", "") / "weights.akmw") > 0, where + "weights");
      }
      expect(total == clips, where + "folds cover every clip");

      const auto apex = json::parse(slurp(vdir / "apex.json"));
      has(apex, {{"ratio", V::number_float}, {"ratio_h", V::number_float}, {"evaluated", V::number_unsigned},
                 {"excluded", V::number_unsigned}},
          where + "apex.json");

      const auto confusion = lines_of(vdir / "confusion.csv");
      expect(confusion.size() == classes + 1 && confusion[0].starts_with("label,"), where + "confusion.csv");
      // Fixed-subset variants have no scores, so the apex analysis skips every clip.
      const bool scored = config.model.variant.uses_mining();
      expect(lines_of(vdir / "distances.csv").size() == (scored ? clips + 1 : 1), where + "distances.csv rows");
      expect(apex.value("evaluated", 0u) == (scored ? clips : 0), where + "apex.json evaluated");

      const auto selection = lines_of(vdir / "selection.csv");
      expect(selection.size() == clips + 1 && selection[0] == "clip_id,T,N,indices,beta,fallback",
             where + "selection.csv header");
      for (std::size_t r = 1; r < selection.size(); ++r) {
        const auto cells = split(selection[r], ',');
        if (cells.size() != 6) {
          expect(false, where + "selection.csv columns");
          continue;
        }
        const std::size_t t = std::stoul(cells[1]);
        const auto idx = numbers(cells[3]);
        expect(std::stoul(cells[2]) == idx.size() && !idx.empty() && idx.front() >= 1 && idx.back() <= t &&
                   std::adjacent_find(idx.begin(), idx.end(), std::greater_equal<>()) == idx.end(),
               where + "selection indices");
        expect(cells[5] == "0" || cells[5] == "1", where + "fallback flag");
        const std::size_t length = lengths.at(cells[0]);
        if (name == "va-all") {
          std::vector<std::size_t> all(length);
          std::iota(all.begin(), all.end(), std::size_t{1});
          expect(t == length && idx == all, where + "va-all is not the identity for " + cells[0]);
        } else if (name == "va-last10") {
          const std::size_t n = std::min<std::size_t>(10, length);
          std::vector<std::size_t> last(n);
          std::iota(last.begin(), last.end(), length - n + 1);
          expect(t == length && idx == last, where + "va-last10 is not the final frames for " + cells[0]);
        } else if (name.starts_with("va-norm")) {
          expect(t == std::stoul(name.substr(7)) && idx.size() == t, where + "va-norm length");
        } else {
          expect(t == length, where + "frame count");
        }
      }
    }
  } catch (const std::exception& e) {
    problems.push_back(std::string("exception: ") + e.what());
  }
  return {problems.empty(), std::to_string(kVariants.size()) + " variants, " + std::to_string(problems.size()) +
                                " schema problems" + (problems.empty() ? "" : " (first: " + problems[0] + ")") +
                                ", " + fmt(seconds_since(start), 3) + " s"};
}

training::ClipPrediction apex_clip(std::string id, std::vector<double> beta, std::vector<std::size_t> selected,
                                   std::optional<std::size_t> apex, double framerate) {
  training::ClipPrediction p;
  p.clip_id = std::move(id);
  p.selection.mask.assign(beta.size(), 0);
  for (auto k : selected) p.selection.mask[k] = 1;
  p.selection.beta = std::move(beta);
  p.selection.selected = std::move(selected);
  p.apex = apex;
  p.framerate = framerate;
  return p;
}

// Hand-counted apex fixture.
Outcome criterion_9() {
  std::vector<training::ClipPrediction> clips;
  // apex 3 is a key frame and the top-scoring one; distance 0
  clips.push_back(apex_clip("a", {0.1, 0.5, 0.9, 0.6, 0.0}, {1, 2, 3}, 3, 60.0));
  // apex 5 is not selected; max key is frame 4; distance 1
  clips.push_back(apex_clip("b", {0.0, 0.7, 0.1, 0.8, 0.3, 0.2}, {1, 3}, 5, 60.0));
  // 200 fps: apex 10 is selected but frame 12 scores higher; distance 2/3.33
  std::vector<double> beta(12, 0.0);
  beta[3] = 0.5;
  beta[9] = 0.6;
  beta[11] = 0.9;
  clips.push_back(apex_clip("c", beta, {3, 9, 11}, 10, 200.0));
  // no apex annotation
  clips.push_back(apex_clip("d", {0.2, 0.9}, {1}, std::nullopt, 60.0));

  const auto overlap = training::apex_overlap(clips);
  const auto distance = training::apex_distance(clips);
  const bool overlap_ok =
      overlap.ratio == 2.0 / 3.0 && overlap.ratio_h == 1.0 / 3.0 && overlap.evaluated == 3 && overlap.excluded == 1;
  const bool distance_ok = distance.size() == 3 && distance[0].distance == 0.0 && distance[0].max_key == 3 &&
                           distance[1].distance == 1.0 && distance[1].max_key == 4 &&
                           distance[2].distance == 2.0 / 3.33 && distance[2].max_key == 12;
  return {overlap_ok && distance_ok, "ratio " + fmt(overlap.ratio) + ", ratio_h " + fmt(overlap.ratio_h) +
                                         ", evaluated " + std::to_string(overlap.evaluated) + ", excluded " +
                                         std::to_string(overlap.excluded) + ", distances " +
                                         (distance_ok ? "exact" : "wrong")};
}

// Byte comparison of two output trees.
Outcome compare_trees(const fs::path& a, const fs::path& b) {
  std::size_t files = 0;
  std::vector<std::string> differing;
  std::set<fs::path> seen;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file() || e.path().extension() == ".log") continue;
    const auto rel = fs::relative(e.path(), a);
    seen.insert(rel);
    ++files;
    if (!fs::exists(b / rel) || slurp(e.path()) != slurp(b / rel)) differing.push_back(rel.string());
  }
  for (const auto& e : fs::recursive_directory_iterator(b)) {
    if (e.is_regular_file() && e.path().extension() != ".log" && !seen.contains(fs::relative(e.path(), b))) {
      differing.push_back(fs::relative(e.path(), b).string());
    }
  }
  return {files > 0 && differing.empty(),
          std::to_string(files) + " files, " + std::to_string(differing.size()) + " differ" +
              (differing.empty() ? "" : " (first " + differing[0] + ")")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria, one PASS/FAIL line each"};
  std::vector<int> only;
  fs::path out = "acceptance_out";
  std::string cli = AKMNET_CLI;
  app.add_option("--only", only, "criteria to run (default: all)")->delimiter(',');
  app.add_option("--out", out, "scratch directory for run artifacts");
  app.add_option("--cli", cli, "path to the akmnet binary");
  CLI11_PARSE(app, argc, argv);
  const auto wanted = [&](int c) { return only.empty() || std::find(only.begin(), only.end(), c) != only.end(); };

  fs::remove_all(out);
  mining::routing_audit().reset();
  std::map<int, Outcome> results;
  const auto run = [&](int c, const std::function<Outcome()>& f) {
    if (!wanted(c)) return;
    std::cout << "running criterion " << c << std::endl;
    try {
      results[c] = f();
    } catch (const std::exception& e) {
      results[c] = {false, std::string("threw: ") + e.what()};
    }
    std::cout << "  " << (results[c].pass ? "PASS" : "FAIL") << " " << results[c].detail << std::endl;
  };

  const bool rerun = wanted(10);
  run(1, criterion_1);
  run(3, criterion_3);
  run(4, criterion_4);
  run(5, criterion_5);
  if (wanted(6) || rerun) run(6, [&] { return criterion_6(out / "run1" / "c6"); });
  if (wanted(7) || rerun) run(7, [&] { return criterion_7(out / "run1" / "c7"); });
  if (wanted(8) || rerun) run(8, [&] { return criterion_8(out / "run1" / "c8", cli); });
  run(9, criterion_9);
  run(10, [&] {
    std::ostringstream d;
    bool ok = true;
    for (const auto& [c, f] : std::vector<std::pair<int, std::function<Outcome(const fs::path&)>>>{
             {6, criterion_6}, {7, criterion_7}, {8, [&](const fs::path& p) { return criterion_8(p, cli); }}}) {
      const auto name = "c" + std::to_string(c);
      const auto again = f(out / "run2" / name);
      const auto cmp = compare_trees(out / "run1" / name, out / "run2" / name);
      const bool same_outcome = again.pass == results[c].pass;
      ok = ok && cmp.pass && same_outcome;
      d << "criterion " << c << ": " << cmp.detail << (same_outcome ? "" : ", outcome changed") << "; ";
    }
    return Outcome{ok, d.str()};
  });
  run(2, criterion_2);

  const std::map<int, std::string> titles{
      {1, "finite-difference gradient check of the full network"},
      {2, "straight-through routing audit"},
      {3, "mining forward matches the straight-line oracle"},
      {4, "selection invariants and permutation equivariance"},
      {5, "variable clip lengths T = 1, 9, 141"},
      {6, "synthetic training reaches 100% accuracy"},
      {7, "key-frame recall at least twice the random baseline"},
      {8, "all variants train and emit schema-valid reports"},
      {9, "apex overlap and distance on a hand-counted fixture"},
      {10, "reruns are byte-identical"},
  };
  std::cout << "\n";
  bool all = true;
  for (const auto& [c, r] : results) {
    all = all && r.pass;
    std::cout << (r.pass ? "PASS" : "FAIL") << " criterion " << c << ": " << titles.at(c) << " | " << r.detail
              << "\n";
  }
  return all ? 0 : 1;
}
