#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "akmnet/data.hpp"
#include "akmnet/model.hpp"

// End-to-end training, evaluation, the LOSO harness and the apex analysis.
namespace akmnet::training {

/// Non-finite loss or gradient; carries where it happened.
class Divergence : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  std::size_t batch_size = 8;
  double learning_rate = 1e-3;
  double lr_floor = 1e-8;
  std::size_t epochs = 40;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::uint64_t seed = 1;
  bool augment = true;  // random crop in training
  data::CropConfig crop = data::CropConfig::desk();

  bool operator==(const TrainConfig&) const = default;
};

/// Momentum buffers, one per parameter, created on first use.
template <typename T>
struct SgdState {
  std::vector<nn::Tensor<T>> velocity;
};

/// With g the accumulated gradient divided by `batch`:
/// v <- momentum * v + g + decay * theta; theta <- theta - lr * v, for every
/// parameter. Throws Divergence naming the first parameter with a
/// non-finite gradient, before anything is modified.
template <typename T>
void sgd_momentum_step(nn::ParameterSet<T>& params, SgdState<T>& state, double lr, const TrainConfig& config,
                       std::size_t batch = 1);

/// floor + (initial - floor) * (1 + cos(pi * epoch / epochs)) / 2 for
/// 0 <= epoch <= epochs.
double cosine_lr(std::size_t epoch, const TrainConfig& config);

struct EpochStats {
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;            // mean Omega
  double classification = 0.0;  // mean L_c
  double sparsity = 0.0;        // mean L_GS
  double margin = 0.0;          // mean L_MMM
  double key_ratio = 0.0;       // mean N/T
  std::size_t steps = 0;
};

using EpochCallback = std::function<void(const EpochStats&)>;

/// Trains on `clips` (already class-balanced): per epoch the order is
/// shuffled, each clip of a mini-batch is forwarded and backpropagated on its
/// own, the accumulated gradients are averaged over the batch and one SGD
/// step follows. The learning rate of epoch e is cosine_lr(e). All
/// randomness derives from config.seed.
template <typename T>
std::vector<EpochStats> train(model::AkmNet<T>& net, const std::vector<data::Clip>& clips, const TrainConfig& config,
                              const EpochCallback& on_epoch = {});

struct ClipPrediction {
  std::string clip_id;
  std::string subject;
  std::size_t label = 0;
  std::size_t predicted = 0;
  std::vector<double> probabilities;
  mining::SelectionResult selection;
  std::optional<std::size_t> apex;  // in the selection's frame numbering
  double framerate = 0.0;
};

struct EvalReport {
  std::vector<ClipPrediction> predictions;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  std::size_t correct = 0;
  std::size_t total = 0;

  double accuracy() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
};

/// Evaluation-mode predictions (deterministic resize, no dropout).
template <typename T>
EvalReport evaluate(const model::AkmNet<T>& net, const std::vector<data::Clip>& clips, const TrainConfig& config);

struct FoldReport {
  std::string subject;
  EvalReport eval;
  std::vector<EpochStats> history;
  std::vector<std::string> warnings;
};

struct LosoResult {
  std::vector<FoldReport> folds;
  double pooled_accuracy = 0.0;  // sum of correct / sum of clips
  double macro_accuracy = 0.0;   // mean of per-fold accuracies
};

template <typename T>
struct LosoOptions {
  std::size_t parallel_folds = 1;
  /// Called after each fold finishes (serialized across threads).
  std::function<void(std::size_t fold, const FoldReport&, const model::AkmNet<T>&)> on_fold;
};

/// Trains one independently initialized model per held-out subject on the
/// balanced remainder and evaluates it on the held-out clips. Fold i uses
/// seeds derived from config.seed and i, so results do not depend on
/// `parallel_folds`.
template <typename T>
LosoResult loso_run(const std::vector<data::Clip>& clips, const model::ModelConfig& model_config,
                    const TrainConfig& config, const LosoOptions<T>& options = {});

/// Seed of fold `fold` derived from the run seed.
std::uint64_t fold_seed(std::uint64_t seed, std::size_t fold);

/// Balances `clips` over the classes they contain; `missing` receives the
/// declared classes that have no clip.
std::vector<data::Clip> balanced_training_set(const std::vector<data::Clip>& clips, std::size_t classes,
                                              nn::RngStream& rng, std::vector<std::size_t>* missing = nullptr);

struct ApexOverlap {
  double ratio = 0.0;
  double ratio_h = 0.0;
  std::size_t evaluated = 0;
  std::size_t excluded = 0;  // clips without an apex annotation
};

/// Ratio: apex among the key frames. Ratio^H: apex is also the max-beta key
/// frame (earliest on ties).
ApexOverlap apex_overlap(const std::vector<ClipPrediction>& predictions);

struct ApexDistance {
  std::string clip_id;
  std::size_t apex = 0;     // 1-based
  std::size_t max_key = 0;  // 1-based
  double framerate = 0.0;
  double distance = 0.0;
};

/// Frame-rate normalization divisor for 200 fps recordings.
constexpr double kHighSpeedDivisor = 3.33;

/// |apex - max-key| per annotated clip, divided by 3.33 for 200 fps clips.
std::vector<ApexDistance> apex_distance(const std::vector<ClipPrediction>& predictions);

}  // namespace akmnet::training
