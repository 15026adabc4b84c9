#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "akmnet/rng.hpp"
#include "akmnet/tensor.hpp"

namespace akmnet::data {

/// Malformed or inconsistent input data (manifests, frame directories,
/// packed tensors). Carries a 1-based line number when one applies.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(line ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// An ordered frame sequence with its label. Annotation indices are 1-based.
struct Clip {
  std::string id;
  std::string subject;
  std::size_t label = 0;
  std::vector<nn::Tensor<float>> frames;  // each [channels, side, side]
  std::optional<std::size_t> onset, apex, offset;
  double framerate = 0.0;

  std::size_t length() const { return frames.size(); }
  std::size_t channels() const { return frames.at(0).dim(0); }
  std::size_t side() const { return frames.at(0).dim(1); }

  /// Throws DataError when T == 0, frames disagree in size (naming the frame
  /// index), or annotations are out of order or range.
  void validate() const;
  /// [T, channels, side, side]
  nn::Tensor<float> stacked() const;
};

/// Class names plus aliases folded onto them.
struct LabelMap {
  std::vector<std::string> names;
  std::map<std::string, std::string> aliases;

  /// positive / negative / surprise / others, with the usual source emotions
  /// folded in (happiness -> positive; disgust, sadness, contempt, anger,
  /// fear -> negative; tense, repression -> others).
  static LabelMap merged_four_way();
  static LabelMap from_names(std::vector<std::string> names);

  std::optional<std::size_t> find(const std::string& label) const;
  std::size_t size() const { return names.size(); }
};

struct ManifestRow {
  std::string clip_id;
  std::string subject_id;
  std::string label;
  std::string frames_path;
  std::optional<std::size_t> onset, apex, offset;
  double framerate = 0.0;
};

struct Manifest {
  std::vector<ManifestRow> rows;
  LabelMap labels;
  std::filesystem::path base_dir;  // frames_path is resolved against this
};

constexpr const char* kManifestHeader = "clip_id,subject_id,label,frames_path,onset,apex,offset,framerate";

/// Parses a manifest CSV. Rejects a wrong header, malformed rows (with line
/// number), duplicate clip ids (at the second occurrence), unknown labels and
/// misordered onset/apex/offset.
Manifest load_manifest(const std::filesystem::path& path, const LabelMap& labels);
/// Like load_manifest, taking the label map from a sibling labels.txt when
/// present and the four-way merge otherwise.
Manifest load_manifest(const std::filesystem::path& path);
void write_manifest(const Manifest& manifest, const std::filesystem::path& path);

/// Frames from a directory of frame_%04d.pgm (contiguous from 0001) or from
/// a packed tensor file ending in .akmt; pixel values scaled to [0, 1].
Clip read_clip(const ManifestRow& row, const Manifest& manifest);
std::vector<Clip> read_clips(const Manifest& manifest);

// Binary PGM (P5, maxval 255).
nn::Tensor<float> read_pgm(const std::filesystem::path& path);
/// Values are clamped to [0, 1] and rounded to 8 bits.
void write_pgm(const nn::Tensor<float>& frame, const std::filesystem::path& path);
void write_frame_directory(const Clip& clip, const std::filesystem::path& dir);

// Packed tensor: "AKMT", version, ndim, extents, float32 values, all LE.
constexpr std::uint32_t kPackedVersion = 1;
void write_packed(const nn::Tensor<float>& tensor, const std::filesystem::path& path);
nn::Tensor<float> read_packed(const std::filesystem::path& path);

/// Spatial augmentation geometry. Training resizes to `resize_side` and cuts
/// one `crop_side` window per clip at a random offset; evaluation resizes
/// straight to `crop_side`.
struct CropConfig {
  std::size_t resize_side = 36;
  std::size_t crop_side = 32;
  static CropConfig paper() { return {144, 128}; }
  static CropConfig desk() { return {36, 32}; }
  bool operator==(const CropConfig&) const = default;
};

/// Bilinear resize of one [C, S, S] frame (half-pixel centres).
nn::Tensor<float> resize_frame(const nn::Tensor<float>& frame, std::size_t side);

struct CropWindow {
  std::size_t top = 0, left = 0;
};

/// Applies one window to every frame. Evaluation mode is a deterministic
/// resize. The chosen window is returned through `window` when given.
Clip random_crop(const Clip& clip, nn::RngStream& rng, const CropConfig& config, bool training,
                 CropWindow* window = nullptr);

enum class SplitRole { train, test };

/// Indices of a class-balanced training set: every original index once, then
/// random duplicates (with replacement) until each class matches the largest.
/// Throws for a test split or when a class in `classes` has no clip.
std::vector<std::size_t> balance_resample(std::span<const std::size_t> labels, std::span<const std::size_t> classes,
                                          nn::RngStream& rng, SplitRole role = SplitRole::train);
/// Manifest-level convenience over every declared class.
Manifest balance_resample(const Manifest& manifest, nn::RngStream& rng, SplitRole role = SplitRole::train);

/// Linear interpolation to `target_len` frames at uniformly spaced positions
/// spanning the first and last frame. A stand-in for graph-embedding TIM.
/// T == 1 replicates the frame. Throws for target_len < 2.
Clip temporal_resample(const Clip& clip, std::size_t target_len);
/// The 1-based index nearest to `index` after resampling `from` frames to `to`.
std::size_t remap_index(std::size_t index, std::size_t from, std::size_t to);

struct Fold {
  std::string subject;
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// One fold per distinct subject, in order of first appearance.
std::vector<Fold> loso_split(std::span<const std::string> subjects);
std::vector<Fold> loso_split(const Manifest& manifest);

struct SynthSpec {
  std::size_t classes = 4;
  std::size_t t_min = 12;
  std::size_t t_max = 24;
  std::size_t signal_frames = 3;
  double noise = 0.2;
  double amplitude = 1.0;
  double background = 0.0;  // offset under the noise; PGM output clamps to [0, 1]
  std::size_t side = 32;
  std::size_t clips = 60;
  std::size_t subjects = 6;
  std::uint64_t seed = 1;
  double framerate = 60.0;

  void validate() const;
};

struct PlantedSignal {
  std::string clip_id;
  std::size_t start = 1;  // 1-based
  std::size_t length = 0;
};

struct SynthDataset {
  std::vector<Clip> clips;
  std::vector<PlantedSignal> truth;
  LabelMap labels;
  /// Per-class spatial patterns, each [side, side] with max |value| = 1.
  std::vector<nn::Tensor<float>> patterns;
};

/// Noise clips with `signal_frames` consecutive frames carrying a
/// class-specific smooth pattern over `background`. Labels are
/// balanced (clip i has class i mod M) and subjects assigned round-robin.
/// The apex annotation is set to the centre of the planted run.
SynthDataset synth_generate(const SynthSpec& spec);

/// Writes clips as packed tensors (or PGM directories), a manifest,
/// labels.txt and truth.csv (clip_id,signal_start,signal_len).
void write_synth(const SynthDataset& dataset, const std::filesystem::path& dir, bool pgm = false);

}  // namespace akmnet::data
