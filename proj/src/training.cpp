#include "akmnet/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <numbers>
#include <numeric>
#include <thread>

#include "akmnet/graph.hpp"

namespace akmnet::training {

template <typename T>
void sgd_momentum_step(nn::ParameterSet<T>& params, SgdState<T>& state, double lr, const TrainConfig& config,
                       std::size_t batch) {
  if (batch == 0) throw std::invalid_argument("sgd_momentum_step: batch must be positive");
  auto& entries = params.entries();
  if (state.velocity.empty()) {
    for (const auto& e : entries) state.velocity.emplace_back(e.var.shape(), T(0));
  }
  if (state.velocity.size() != entries.size()) throw std::invalid_argument("sgd_momentum_step: momentum state size");
  std::vector<nn::Tensor<T>> grads;
  grads.reserve(entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (state.velocity[i].shape() != entries[i].var.shape()) {
      throw nn::ShapeError("sgd_momentum_step", state.velocity[i].shape(), entries[i].var.shape());
    }
    grads.push_back(entries[i].var.grad());
    for (T g : grads.back().values()) {
      if (!std::isfinite(g)) throw Divergence("non-finite gradient in parameter '" + entries[i].name + "'");
    }
  }
  const T momentum = static_cast<T>(config.momentum);
  const T decay = static_cast<T>(config.weight_decay);
  const T rate = static_cast<T>(lr);
  const T count = static_cast<T>(batch);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& theta = entries[i].var.mutable_value();
    auto& v = state.velocity[i];
    const auto& g = grads[i];
    for (std::size_t k = 0; k < theta.size(); ++k) {
      v[k] = momentum * v[k] + g[k] / count + decay * theta[k];
      theta[k] -= rate * v[k];
    }
  }
}

double cosine_lr(std::size_t epoch, const TrainConfig& config) {
  if (config.epochs == 0) throw std::invalid_argument("cosine_lr: epoch count must be positive");
  if (epoch > config.epochs) throw std::out_of_range("cosine_lr: epoch past the schedule");
  const double phase = std::numbers::pi * static_cast<double>(epoch) / static_cast<double>(config.epochs);
  return config.lr_floor + (config.learning_rate - config.lr_floor) * (1.0 + std::cos(phase)) / 2.0;
}

namespace {

constexpr std::uint64_t kShuffleStream = 0x5348;
constexpr std::uint64_t kClipStream = 0x434c;
constexpr std::uint64_t kEvalStream = 0x4556;

void shuffle(std::vector<std::size_t>& order, nn::RngStream& rng) {
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
}

template <typename T>
double scalar_value(const nn::Var<T>& v) {
  return static_cast<double>(v.value().item());
}

}  // namespace

template <typename T>
std::vector<EpochStats> train(model::AkmNet<T>& net, const std::vector<data::Clip>& clips, const TrainConfig& config,
                              const EpochCallback& on_epoch) {
  if (clips.empty()) throw std::invalid_argument("train: empty training set");
  if (config.batch_size == 0) throw std::invalid_argument("train: batch size must be positive");
  const nn::RngStream root(config.seed);
  auto& params = net.parameters();
  SgdState<T> state;
  std::vector<EpochStats> history;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    EpochStats stats;
    stats.epoch = epoch + 1;
    stats.lr = cosine_lr(epoch, config);
    std::vector<std::size_t> order(clips.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto shuffle_rng = root.derive(kShuffleStream).derive(epoch);
    shuffle(order, shuffle_rng);
    const auto epoch_rng = root.derive(kClipStream).derive(epoch);

    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      params.zero_grad();
      for (std::size_t pos = start; pos < end; ++pos) {
        const auto& source = clips[order[pos]];
        auto rng = epoch_rng.derive(pos);
        const auto clip = data::random_crop(source, rng, config.crop, config.augment);
        const auto out = net.forward(clip, source.label, temporal::Mode::train, rng);
        const double loss = scalar_value(out.loss);
        if (!std::isfinite(loss)) {
          throw Divergence("loss is not finite at epoch " + std::to_string(epoch + 1) + ", step " +
                           std::to_string(stats.steps + 1) + " (clip '" + source.id + "')");
        }
        nn::backpropagate(out.loss);
        stats.loss += loss;
        stats.classification += scalar_value(out.classification);
        stats.sparsity += scalar_value(out.sparsity);
        stats.margin += scalar_value(out.margin);
        stats.key_ratio += static_cast<double>(out.selection.key_count()) / static_cast<double>(out.frames);
      }
      try {
        sgd_momentum_step(params, state, stats.lr, config, end - start);
      } catch (const Divergence& e) {
        throw Divergence(std::string(e.what()) + " at epoch " + std::to_string(epoch + 1) + ", step " +
                         std::to_string(stats.steps + 1));
      }
      ++stats.steps;
    }
    params.zero_grad();
    const double n = static_cast<double>(clips.size());
    stats.loss /= n;
    stats.classification /= n;
    stats.sparsity /= n;
    stats.margin /= n;
    stats.key_ratio /= n;
    history.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  return history;
}

template <typename T>
EvalReport evaluate(const model::AkmNet<T>& net, const std::vector<data::Clip>& clips, const TrainConfig& config) {
  const std::size_t classes = net.config().classes;
  EvalReport report;
  report.confusion.assign(classes, std::vector<std::size_t>(classes, 0));
  const nn::RngStream root = nn::RngStream(config.seed).derive(kEvalStream);
  const auto& variant = net.config().variant;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const auto& source = clips[i];
    if (source.label >= classes) throw std::out_of_range("evaluate: label outside the class range");
    auto rng = root.derive(i);
    const auto clip = data::random_crop(source, rng, config.crop, false);
    auto out = net.forward(clip, std::nullopt, temporal::Mode::eval, rng);

    ClipPrediction p;
    p.clip_id = source.id;
    p.subject = source.subject;
    p.label = source.label;
    p.probabilities = variant.kind == model::VariantKind::va_random ? net.predict(clip, rng) : out.probabilities;
    p.predicted = static_cast<std::size_t>(std::max_element(p.probabilities.begin(), p.probabilities.end()) -
                                           p.probabilities.begin());
    p.selection = std::move(out.selection);
    p.framerate = source.framerate;
    if (source.apex) {
      p.apex = variant.kind == model::VariantKind::va_norm ? data::remap_index(*source.apex, source.length(), out.frames)
                                                          : *source.apex;
    }
    ++report.confusion[p.label][p.predicted];
    report.correct += p.label == p.predicted;
    ++report.total;
    report.predictions.push_back(std::move(p));
  }
  return report;
}

std::vector<data::Clip> balanced_training_set(const std::vector<data::Clip>& clips, std::size_t classes,
                                              nn::RngStream& rng, std::vector<std::size_t>* missing) {
  std::vector<std::size_t> labels, present;
  std::vector<bool> seen(classes, false);
  for (const auto& c : clips) {
    if (c.label >= classes) throw std::out_of_range("balanced_training_set: label outside the class range");
    labels.push_back(c.label);
    seen[c.label] = true;
  }
  if (missing) missing->clear();
  for (std::size_t c = 0; c < classes; ++c) {
    if (seen[c]) {
      present.push_back(c);
    } else if (missing) {
      missing->push_back(c);
    }
  }
  std::vector<data::Clip> out;
  for (auto i : data::balance_resample(labels, present, rng, data::SplitRole::train)) out.push_back(clips[i]);
  return out;
}

std::uint64_t fold_seed(std::uint64_t seed, std::size_t fold) {
  return nn::RngStream(seed).derive(0x464f4c44).derive(fold).next_u64();
}

template <typename T>
LosoResult loso_run(const std::vector<data::Clip>& clips, const model::ModelConfig& model_config,
                    const TrainConfig& config, const LosoOptions<T>& options) {
  std::vector<std::string> subjects;
  for (const auto& c : clips) subjects.push_back(c.subject);
  const auto folds = data::loso_split(subjects);

  LosoResult result;
  result.folds.resize(folds.size());
  std::atomic<std::size_t> next{0};
  std::mutex callback_mutex;
  std::exception_ptr failure;

  auto run_fold = [&](std::size_t f) {
    const auto& fold = folds[f];
    FoldReport& report = result.folds[f];
    report.subject = fold.subject;
    const std::uint64_t seed = fold_seed(config.seed, f);
    nn::RngStream init_rng = nn::RngStream(seed).derive(1);
    nn::RngStream balance_rng = nn::RngStream(seed).derive(2);

    std::vector<data::Clip> train_clips, test_clips;
    for (auto i : fold.train) train_clips.push_back(clips[i]);
    for (auto i : fold.test) test_clips.push_back(clips[i]);
    std::vector<std::size_t> missing;
    const auto balanced = balanced_training_set(train_clips, model_config.classes, balance_rng, &missing);
    for (auto c : missing) {
      report.warnings.push_back("fold '" + fold.subject + "': class " + std::to_string(c) +
                                " has no training clip");
    }
    TrainConfig fold_config = config;
    fold_config.seed = seed;
    model::AkmNet<T> net(model_config, init_rng);
    report.history = train(net, balanced, fold_config);
    report.eval = evaluate(net, test_clips, fold_config);
    if (options.on_fold) {
      std::lock_guard lock(callback_mutex);
      options.on_fold(f, report, net);
    }
  };

  auto worker = [&]() {
    for (std::size_t f = next++; f < folds.size(); f = next++) {
      try {
        run_fold(f);
      } catch (...) {
        std::lock_guard lock(callback_mutex);
        if (!failure) failure = std::current_exception();
        next = folds.size();
      }
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(options.parallel_folds, 1, folds.size());
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < threads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  std::size_t correct = 0, total = 0;
  double macro = 0.0;
  for (const auto& f : result.folds) {
    correct += f.eval.correct;
    total += f.eval.total;
    macro += f.eval.accuracy();
  }
  result.pooled_accuracy = total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
  result.macro_accuracy = macro / static_cast<double>(result.folds.size());
  return result;
}

namespace {
bool has_scores(const ClipPrediction& p) {
  return !p.selection.selected.empty() && p.selection.beta.size() == p.selection.mask.size();
}
}  // namespace

ApexOverlap apex_overlap(const std::vector<ClipPrediction>& predictions) {
  ApexOverlap out;
  std::size_t hits = 0, top_hits = 0;
  for (const auto& p : predictions) {
    if (!p.apex || !has_scores(p)) {
      ++out.excluded;
      continue;
    }
    ++out.evaluated;
    const std::size_t apex = *p.apex - 1;
    const auto& sel = p.selection.selected;
    if (std::find(sel.begin(), sel.end(), apex) == sel.end()) continue;
    ++hits;
    if (p.selection.max_key() == apex) ++top_hits;
  }
  if (out.evaluated) {
    out.ratio = static_cast<double>(hits) / static_cast<double>(out.evaluated);
    out.ratio_h = static_cast<double>(top_hits) / static_cast<double>(out.evaluated);
  }
  return out;
}

std::vector<ApexDistance> apex_distance(const std::vector<ClipPrediction>& predictions) {
  std::vector<ApexDistance> out;
  for (const auto& p : predictions) {
    if (!p.apex || !has_scores(p)) continue;
    ApexDistance d;
    d.clip_id = p.clip_id;
    d.apex = *p.apex;
    d.max_key = p.selection.max_key() + 1;
    d.framerate = p.framerate;
    d.distance = std::abs(static_cast<double>(d.apex) - static_cast<double>(d.max_key));
    if (std::abs(p.framerate - 200.0) < 0.5) d.distance /= kHighSpeedDivisor;
    out.push_back(std::move(d));
  }
  return out;
}

#define AKMNET_TRAINING(T)                                                                                          \
  template void sgd_momentum_step<T>(nn::ParameterSet<T>&, SgdState<T>&, double, const TrainConfig&, std::size_t); \
  template std::vector<EpochStats> train<T>(model::AkmNet<T>&, const std::vector<data::Clip>&, const TrainConfig&, \
                                            const EpochCallback&);                                                  \
  template EvalReport evaluate<T>(const model::AkmNet<T>&, const std::vector<data::Clip>&, const TrainConfig&);     \
  template LosoResult loso_run<T>(const std::vector<data::Clip>&, const model::ModelConfig&, const TrainConfig&,    \
                                  const LosoOptions<T>&);

AKMNET_TRAINING(float)
AKMNET_TRAINING(double)

}  // namespace akmnet::training
