#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "akmnet/ops.hpp"
#include "akmnet/training.hpp"
#include "doctest.h"

using namespace akmnet;
using nn::Tensor;
using training::TrainConfig;

namespace {

model::ModelConfig tiny_model(std::size_t classes = 2) {
  model::ModelConfig m;
  m.backbone.input_side = 8;
  m.backbone.widths = {3, 4};
  m.backbone.blocks_per_stage = 1;
  m.backbone.output_grid = 2;
  m.backbone.stem_kernel = 3;
  m.classes = classes;
  m.gru_hidden = 3;
  return m;
}

TrainConfig tiny_train(std::size_t epochs = 2) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 3;
  c.learning_rate = 0.01;
  c.crop = {10, 8};
  return c;
}

std::vector<data::Clip> tiny_clips(std::size_t count, std::size_t classes, std::size_t subjects) {
  data::SynthSpec s;
  s.side = 8;
  s.clips = count;
  s.classes = classes;
  s.subjects = subjects;
  s.t_min = 5;
  s.t_max = 8;
  s.signal_frames = 2;
  return data::synth_generate(s).clips;
}

mining::SelectionResult selection(std::vector<double> beta, std::vector<std::size_t> selected) {
  mining::SelectionResult r;
  r.mask.assign(beta.size(), 0);
  for (auto i : selected) r.mask[i] = 1;
  r.beta = std::move(beta);
  r.selected = std::move(selected);
  return r;
}

training::ClipPrediction prediction(std::string id, std::optional<std::size_t> apex, mining::SelectionResult sel,
                                    double framerate = 60.0) {
  training::ClipPrediction p;
  p.clip_id = std::move(id);
  p.apex = apex;
  p.selection = std::move(sel);
  p.framerate = framerate;
  return p;
}

}  // namespace

TEST_CASE("defaults match the published training recipe") {
  const TrainConfig c;
  CHECK(c.batch_size == 8);
  CHECK(c.learning_rate == 1e-3);
  CHECK(c.lr_floor == 1e-8);
  CHECK(c.epochs == 40);
  CHECK(c.momentum == 0.9);
  CHECK(c.weight_decay == 5e-4);
}

TEST_CASE("sgd_momentum_step: fixed point and one scalar step") {
  nn::ParameterSet<double> params;
  auto theta = params.add("theta", Tensor<double>::scalar(0.0));
  TrainConfig cfg;
  cfg.weight_decay = 0.0;
  training::SgdState<double> state;
  training::sgd_momentum_step(params, state, 0.1, cfg);
  CHECK(theta.value().item() == 0.0);

  nn::backpropagate(nn::sum(nn::mul(theta, nn::constant(Tensor<double>::scalar(1.0)))));
  training::sgd_momentum_step(params, state, 0.1, cfg);
  CHECK(state.velocity[0].item() == 1.0);
  CHECK(theta.value().item() == -0.1);

  // Decay is an additive gradient: v = 0.9 * 1 + 1 + 0.5 * (-0.1).
  cfg.weight_decay = 0.5;
  training::sgd_momentum_step(params, state, 0.1, cfg);
  CHECK(state.velocity[0].item() == doctest::Approx(1.85).epsilon(1e-15));
}

TEST_CASE("sgd_momentum_step: non-finite gradient names the parameter and changes nothing") {
  nn::ParameterSet<double> params;
  auto a = params.add("layer.a", Tensor<double>({2}, 1.0));
  auto b = params.add("layer.b", Tensor<double>({2}, 1.0));
  nn::backpropagate(nn::sum(nn::mul(a, nn::constant(Tensor<double>({2}, 1.0)))));
  nn::backpropagate(nn::sum(nn::mul(b, nn::constant(Tensor<double>({2}, {std::nan(""), 0.0})))));
  training::SgdState<double> state;
  try {
    training::sgd_momentum_step(params, state, 0.1, TrainConfig{});
    FAIL("expected divergence");
  } catch (const training::Divergence& e) {
    CHECK(std::string(e.what()).find("layer.b") != std::string::npos);
  }
  CHECK(a.value().vector() == std::vector<double>{1.0, 1.0});
}

TEST_CASE("accumulated-averaged step equals the step on the mean gradient") {
  nn::RngStream rng(1);
  std::vector<Tensor<double>> xs;
  for (int i = 0; i < 8; ++i) {
    Tensor<double> x({5});
    for (auto& v : x.values()) v = rng.normal();
    xs.push_back(x);
  }
  Tensor<double> init({5});
  for (auto& v : init.values()) v = rng.normal();
  const TrainConfig cfg;

  nn::ParameterSet<double> pa;
  auto ta = pa.add("theta", init);
  for (const auto& x : xs) nn::backpropagate(nn::sum(nn::mul(ta, nn::constant(x))));
  training::SgdState<double> sa;
  training::sgd_momentum_step(pa, sa, 0.01, cfg, xs.size());

  Tensor<double> mean({5}, 0.0);
  for (const auto& x : xs) {
    for (std::size_t k = 0; k < 5; ++k) mean[k] += x[k];
  }
  for (auto& v : mean.values()) v /= 8.0;
  nn::ParameterSet<double> pb;
  auto tb = pb.add("theta", init);
  nn::backpropagate(nn::sum(nn::mul(tb, nn::constant(mean))));
  training::SgdState<double> sb;
  training::sgd_momentum_step(pb, sb, 0.01, cfg, 1);
  CHECK(ta.value() == tb.value());
}

TEST_CASE("cosine_lr: start, middle and floor") {
  TrainConfig c;
  CHECK(training::cosine_lr(0, c) == 1e-3);
  CHECK(training::cosine_lr(40, c) == doctest::Approx(1e-8).epsilon(1e-12));
  CHECK(training::cosine_lr(20, c) == doctest::Approx((1e-3 + 1e-8) / 2).epsilon(1e-12));
  CHECK(training::cosine_lr(20, c) == doctest::Approx(5.000e-4).epsilon(1e-4));
  for (std::size_t e = 1; e <= 40; ++e) CHECK(training::cosine_lr(e, c) < training::cosine_lr(e - 1, c));
  CHECK_THROWS_AS(training::cosine_lr(41, c), std::out_of_range);
}

TEST_CASE("train: zero step size leaves parameters unchanged; history has one row per epoch") {
  nn::RngStream rng(2);
  model::AkmNet<float> net(tiny_model(), rng);
  std::vector<Tensor<float>> before;
  for (const auto& e : net.parameters().entries()) before.push_back(e.var.value());
  auto cfg = tiny_train(1);
  cfg.learning_rate = 0.0;
  cfg.lr_floor = 0.0;
  const auto clips = tiny_clips(1, 2, 1);
  const auto history = training::train(net, clips, cfg);
  CHECK(history.size() == 1);
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(net.parameters().entries()[i].var.value() == before[i]);

  nn::RngStream again(2);
  model::AkmNet<float> other(tiny_model(), again);
  auto three = tiny_train(3);
  const auto h3 = training::train(other, tiny_clips(4, 2, 2), three);
  CHECK(h3.size() == 3);
  for (const auto& s : h3) {
    CHECK(s.key_ratio > 0.0);
    CHECK(s.key_ratio <= 1.0);
    CHECK(s.steps == 2);
  }
}

TEST_CASE("train: identical seeds give bit-identical parameters") {
  const auto clips = tiny_clips(6, 2, 2);
  auto run = [&]() {
    nn::RngStream rng(3);
    model::AkmNet<float> net(tiny_model(), rng);
    training::train(net, clips, tiny_train(2));
    std::vector<Tensor<float>> out;
    for (const auto& e : net.parameters().entries()) out.push_back(e.var.value());
    return out;
  };
  CHECK(run() == run());
}

TEST_CASE("train: a non-finite loss aborts with the epoch and step") {
  nn::RngStream rng(4);
  model::AkmNet<float> net(tiny_model(), rng);
  for (auto& v : net.parameters().entries().back().var.mutable_value().values()) {
    v = std::numeric_limits<float>::quiet_NaN();
  }
  try {
    training::train(net, tiny_clips(2, 2, 1), tiny_train(1));
    FAIL("expected divergence");
  } catch (const training::Divergence& e) {
    const std::string what = e.what();
    CHECK(what.find("epoch 1") != std::string::npos);
    CHECK(what.find("step 1") != std::string::npos);
  }
}

TEST_CASE("evaluate: confusion rows count the classes; accuracy is trace over total") {
  nn::RngStream rng(5);
  model::AkmNet<float> net(tiny_model(3), rng);
  const auto clips = tiny_clips(9, 3, 3);
  const auto report = training::evaluate(net, clips, tiny_train());
  std::size_t trace = 0, total = 0;
  for (std::size_t c = 0; c < 3; ++c) {
    const auto row = std::accumulate(report.confusion[c].begin(), report.confusion[c].end(), std::size_t{0});
    CHECK(row == 3);
    trace += report.confusion[c][c];
    total += row;
  }
  CHECK(report.correct == trace);
  CHECK(report.accuracy() == static_cast<double>(trace) / static_cast<double>(total));
  for (const auto& p : report.predictions) {
    CHECK(p.selection.key_count() >= 1);
    CHECK(p.selection.key_count() < p.selection.frame_count());
  }

  nn::RngStream one_rng(6);
  model::AkmNet<float> constant(tiny_model(1), one_rng);
  auto single_class = tiny_clips(4, 1, 1);
  CHECK(training::evaluate(constant, single_class, tiny_train()).accuracy() == 1.0);
}

TEST_CASE("loso_run: partition, pooled accuracy and independence from fold parallelism") {
  const auto clips = tiny_clips(6, 2, 3);
  auto run = [&](std::size_t parallel) {
    training::LosoOptions<float> opts;
    opts.parallel_folds = parallel;
    return training::loso_run<float>(clips, tiny_model(), tiny_train(1), opts);
  };
  const auto a = run(1);
  REQUIRE(a.folds.size() == 3);
  std::vector<int> tested(clips.size(), 0);
  std::size_t correct = 0, total = 0;
  for (const auto& f : a.folds) {
    for (const auto& p : f.eval.predictions) {
      const auto it = std::find_if(clips.begin(), clips.end(), [&](const auto& c) { return c.id == p.clip_id; });
      REQUIRE(it != clips.end());
      ++tested[static_cast<std::size_t>(it - clips.begin())];
      CHECK(p.subject == f.subject);
    }
    correct += f.eval.correct;
    total += f.eval.total;
  }
  CHECK(std::all_of(tested.begin(), tested.end(), [](int n) { return n == 1; }));
  CHECK(a.pooled_accuracy == static_cast<double>(correct) / static_cast<double>(total));
  CHECK(a.pooled_accuracy >= 0.0);
  CHECK(a.pooled_accuracy <= 1.0);

  const auto b = run(3);
  for (std::size_t f = 0; f < 3; ++f) {
    CHECK(a.folds[f].eval.confusion == b.folds[f].eval.confusion);
    for (std::size_t i = 0; i < a.folds[f].eval.predictions.size(); ++i) {
      CHECK(a.folds[f].eval.predictions[i].probabilities == b.folds[f].eval.predictions[i].probabilities);
    }
  }
  CHECK(training::fold_seed(1, 0) != training::fold_seed(1, 1));
  CHECK(training::fold_seed(1, 0) != training::fold_seed(2, 0));
}

TEST_CASE("loso_run: a fold missing a class warns and still runs") {
  // After relabelling, every class-0 clip belongs to s1.
  auto clips = tiny_clips(4, 2, 2);
  clips[2].label = 1;
  const auto r = training::loso_run<float>(clips, tiny_model(), tiny_train(1));
  REQUIRE(r.folds.size() == 2);
  CHECK(r.folds[0].warnings.size() == 1);
  CHECK(r.folds[0].eval.total == 2);
  CHECK(r.folds[1].warnings.empty());
}

TEST_CASE("apex_overlap: hand-counted fixtures") {
  std::vector<training::ClipPrediction> p;
  p.push_back(prediction("a", 2, selection({0.1, 0.9, 0.5, 0.1}, {1, 2})));
  p.push_back(prediction("b", 3, selection({0.1, 0.9, 0.5, 0.1}, {1, 2})));
  p.push_back(prediction("c", 1, selection({0.1, 0.9, 0.5, 0.1}, {1, 2})));
  p.push_back(prediction("d", 4, selection({0.1, 0.9, 0.5, 0.1}, {1, 2})));
  const auto o = training::apex_overlap(p);
  CHECK(o.ratio == 0.5);
  CHECK(o.ratio_h == 0.25);
  CHECK(o.evaluated == 4);

  std::vector<training::ClipPrediction> always{p[0], p[0]};
  CHECK(training::apex_overlap(always).ratio == 1.0);
  CHECK(training::apex_overlap(always).ratio_h == 1.0);
  std::vector<training::ClipPrediction> never{p[2], p[3]};
  CHECK(training::apex_overlap(never).ratio == 0.0);
  CHECK(training::apex_overlap(never).ratio_h == 0.0);

  // Ties go to the earliest selected frame.
  std::vector<training::ClipPrediction> tie{prediction("t", 3, selection({0.7, 0.2, 0.7}, {0, 2}))};
  CHECK(training::apex_overlap(tie).ratio == 1.0);
  CHECK(training::apex_overlap(tie).ratio_h == 0.0);

  p.push_back(prediction("e", std::nullopt, selection({0.1, 0.9}, {1})));
  const auto with_missing = training::apex_overlap(p);
  CHECK(with_missing.excluded == 1);
  CHECK(with_missing.ratio == 0.5);
}

TEST_CASE("apex_distance: raw frames at 60 fps and the 3.33 divisor at 200 fps") {
  std::vector<training::ClipPrediction> p;
  p.push_back(prediction("same", 2, selection({0.1, 0.9, 0.5}, {1, 2})));
  p.push_back(prediction("slow", 12, selection(std::vector<double>(12, 0.0), {1})));
  p.back().selection.beta[1] = 1.0;
  p.push_back(prediction("fast", 12, selection(std::vector<double>(12, 0.0), {1}), 200.0));
  p.back().selection.beta[1] = 1.0;
  p.push_back(prediction("none", std::nullopt, selection({0.1, 0.9}, {1})));
  const auto d = training::apex_distance(p);
  REQUIRE(d.size() == 3);
  CHECK(d[0].distance == 0.0);
  CHECK(d[1].distance == 10.0);
  CHECK(d[2].distance == 10.0 / 3.33);
  CHECK(d[2].distance == doctest::Approx(3.003).epsilon(1e-4));
  CHECK(d[2].max_key == 2);
}

TEST_CASE("variants: names, fixed selections and clamping") {
  for (const std::string name : {"s123", "s12", "s13", "s23", "va-all", "va-norm16", "va-norm32", "va-random",
                                 "va-last10"}) {
    CHECK(model::parse_variant(name).name() == name);
  }
  CHECK(model::parse_variant("va-norm64").length == 64);
  CHECK_THROWS_AS(model::parse_variant("va-norm"), std::invalid_argument);
  CHECK_THROWS_AS(model::parse_variant("s321"), std::invalid_argument);
  CHECK(model::parse_variant("s12").uses_mining());
  CHECK_FALSE(model::parse_variant("va-all").uses_mining());

  nn::RngStream rng(7);
  const auto all = model::fixed_selection(model::parse_variant("va-all"), 7, "c", rng);
  CHECK(all == std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6});
  const auto last = model::fixed_selection(model::parse_variant("va-last10"), 30, "c", rng);
  REQUIRE(last.size() == 10);
  CHECK(last.front() == 20);
  CHECK(last.back() == 29);
  CHECK(model::fixed_selection(model::parse_variant("va-last10"), 4, "c", rng).size() == 4);

  auto random = model::parse_variant("va-random");
  random.count = 3;
  random.clip_counts["big"] = 50;
  for (int i = 0; i < 50; ++i) {
    const auto s = model::fixed_selection(random, 9, "c", rng);
    CHECK(s.size() == 3);
    CHECK(std::is_sorted(s.begin(), s.end()));
    CHECK(std::adjacent_find(s.begin(), s.end()) == s.end());
    CHECK(s.back() < 9);
  }
  bool clamped = false;
  CHECK(model::fixed_selection(random, 7, "big", rng, &clamped).size() == 7);
  CHECK(clamped);
}

TEST_CASE("variants: s23 on constant frames falls back to one key frame") {
  auto cfg = tiny_model();
  cfg.variant = model::parse_variant("s23");
  nn::RngStream rng(8);
  model::AkmNet<double> net(cfg, rng);
  data::Clip c;
  c.id = "flat";
  for (int t = 0; t < 6; ++t) c.frames.emplace_back(nn::Shape{1, 8, 8}, 0.4f);
  const auto out = net.forward(c, 0, temporal::Mode::eval, rng);
  CHECK(out.selection.fallback);
  CHECK(out.selection.key_count() == 1);

  cfg.variant = model::parse_variant("va-norm16");
  model::AkmNet<double> norm(cfg, rng);
  CHECK(norm.forward(c, 0, temporal::Mode::eval, rng).frames == 16);
}
