#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "akmnet/training.hpp"

// Run configuration snapshots and the machine-readable reports (JSON,
// JSON-lines and CSV) written by the command-line tool.
namespace akmnet::report {

using nlohmann::json;

/// Everything that determines a run, given the dataset bytes.
struct RunConfig {
  std::string preset = "desk";
  std::string precision = "f32";
  model::ModelConfig model;
  training::TrainConfig train;
  std::size_t folds_parallel = 1;

  /// desk: small backbone on 32x32 crops, learning rate 0.01; paper: the
  /// published network on 128x128 crops with the published recipe.
  static RunConfig for_preset(const std::string& preset);
};

json to_json(const RunConfig& config);
/// Applies the keys present in `j` over `base`. Unknown keys and malformed
/// values throw std::invalid_argument.
RunConfig apply_json(const json& j, RunConfig base);
RunConfig load_run_config(const std::filesystem::path& path, const RunConfig& base);

json history_row(const training::EpochStats& stats);
json eval_metrics(const training::EvalReport& report, const data::LabelMap& labels);
json fold_row(std::size_t fold, const training::FoldReport& report);
json apex_json(const training::ApexOverlap& overlap);

/// Pretty-printed JSON followed by a newline.
void write_json(const std::filesystem::path& path, const json& j);
void write_jsonl(const std::filesystem::path& path, const std::vector<json>& rows);
void write_history(const std::filesystem::path& path, const std::vector<training::EpochStats>& history);

/// Header "label,<class names>", one row per true class.
void write_confusion_csv(const std::filesystem::path& path, const std::vector<std::vector<std::size_t>>& confusion,
                         const data::LabelMap& labels);
/// clip_id,T,N,indices,beta,fallback with 1-based space-separated indices
/// and one beta per frame.
void write_selection_csv(const std::filesystem::path& path,
                         const std::vector<training::ClipPrediction>& predictions);
/// clip_id,apex,max_key,framerate,distance
void write_distance_csv(const std::filesystem::path& path, const std::vector<training::ApexDistance>& distances);

/// Shortest decimal text that reads back to the same double.
std::string format_double(double value);

}  // namespace akmnet::report
