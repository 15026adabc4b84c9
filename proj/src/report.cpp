#include "akmnet/report.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace akmnet::report {

RunConfig RunConfig::for_preset(const std::string& preset) {
  RunConfig c;
  c.preset = preset;
  if (preset == "desk") {
    c.model.backbone = backbone::BackboneConfig::desk();
    c.train.crop = data::CropConfig::desk();
    c.train.learning_rate = 0.01;
  } else if (preset == "paper") {
    c.model.backbone = backbone::BackboneConfig::paper();
    c.train.crop = data::CropConfig::paper();
  } else {
    throw std::invalid_argument("unknown preset '" + preset + "' (expected paper or desk)");
  }
  return c;
}

json to_json(const RunConfig& c) {
  const auto& b = c.model.backbone;
  const auto& v = c.model.variant;
  const auto& t = c.train;
  json counts = json::object();
  for (const auto& [id, n] : v.clip_counts) counts[id] = n;
  return {
      {"preset", c.preset},
      {"precision", c.precision},
      {"seed", t.seed},
      {"folds_parallel", c.folds_parallel},
      {"backbone",
       {{"input_side", b.input_side},
        {"input_channels", b.input_channels},
        {"widths", b.widths},
        {"blocks_per_stage", b.blocks_per_stage},
        {"output_grid", b.output_grid},
        {"stem_kernel", b.stem_kernel}}},
      {"model",
       {{"classes", c.model.classes},
        {"gru_hidden", c.model.gru_hidden},
        {"dropout", c.model.dropout},
        {"margin", c.model.akm.margin},
        {"lambda_gs", c.model.akm.lambda_gs},
        {"lambda_mmm", c.model.akm.lambda_mmm},
        {"variant", v.name()},
        {"random_count", v.count},
        {"random_samples", v.eval_samples},
        {"clip_counts", counts}}},
      {"train",
       {{"batch_size", t.batch_size},
        {"learning_rate", t.learning_rate},
        {"lr_floor", t.lr_floor},
        {"epochs", t.epochs},
        {"momentum", t.momentum},
        {"weight_decay", t.weight_decay},
        {"augment", t.augment},
        {"resize_side", t.crop.resize_side},
        {"crop_side", t.crop.crop_side}}},
  };
}

namespace {

template <typename F>
void for_keys(const json& j, const std::string& where, F&& apply) {
  if (!j.is_object()) throw std::invalid_argument("config: '" + where + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!apply(key, value)) throw std::invalid_argument("config: unknown key '" + where + key + "'");
  }
}

}  // namespace

RunConfig apply_json(const json& j, RunConfig base) {
  try {
    if (!j.is_object()) throw std::invalid_argument("config: top level must be an object");
    if (j.contains("preset")) {
      const auto seed = base.train.seed;
      const auto precision = base.precision;
      base = RunConfig::for_preset(j.at("preset").get<std::string>());
      base.train.seed = seed;
      base.precision = precision;
    }
    auto& b = base.model.backbone;
    auto& m = base.model;
    auto& t = base.train;
    for_keys(j, "", [&](const std::string& key, const json& value) {
      if (key == "preset") return true;
      if (key == "precision") {
        base.precision = value.get<std::string>();
        if (base.precision != "f32" && base.precision != "f64") {
          throw std::invalid_argument("config: precision must be f32 or f64");
        }
      } else if (key == "seed") {
        t.seed = value.get<std::uint64_t>();
      } else if (key == "folds_parallel") {
        base.folds_parallel = value.get<std::size_t>();
      } else if (key == "backbone") {
        for_keys(value, "backbone.", [&](const std::string& k, const json& x) {
          if (k == "input_side") b.input_side = x.get<std::size_t>();
          else if (k == "input_channels") b.input_channels = x.get<std::size_t>();
          else if (k == "widths") b.widths = x.get<std::vector<std::size_t>>();
          else if (k == "blocks_per_stage") b.blocks_per_stage = x.get<std::size_t>();
          else if (k == "output_grid") b.output_grid = x.get<std::size_t>();
          else if (k == "stem_kernel") b.stem_kernel = x.get<std::size_t>();
          else return false;
          return true;
        });
      } else if (key == "model") {
        // The variant name resets the other variant fields, so it goes first.
        if (value.is_object() && value.contains("variant")) {
          m.variant = model::parse_variant(value.at("variant").get<std::string>());
        }
        for_keys(value, "model.", [&](const std::string& k, const json& x) {
          if (k == "variant") return true;
          if (k == "classes") m.classes = x.get<std::size_t>();
          else if (k == "gru_hidden") m.gru_hidden = x.get<std::size_t>();
          else if (k == "dropout") m.dropout = x.get<double>();
          else if (k == "margin") m.akm.margin = x.get<double>();
          else if (k == "lambda_gs") m.akm.lambda_gs = x.get<double>();
          else if (k == "lambda_mmm") m.akm.lambda_mmm = x.get<double>();
          else if (k == "random_count") m.variant.count = x.get<std::size_t>();
          else if (k == "random_samples") m.variant.eval_samples = x.get<std::size_t>();
          else if (k == "clip_counts") m.variant.clip_counts = x.get<std::map<std::string, std::size_t>>();
          else return false;
          return true;
        });
      } else if (key == "train") {
        for_keys(value, "train.", [&](const std::string& k, const json& x) {
          if (k == "batch_size") t.batch_size = x.get<std::size_t>();
          else if (k == "learning_rate") t.learning_rate = x.get<double>();
          else if (k == "lr_floor") t.lr_floor = x.get<double>();
          else if (k == "epochs") t.epochs = x.get<std::size_t>();
          else if (k == "momentum") t.momentum = x.get<double>();
          else if (k == "weight_decay") t.weight_decay = x.get<double>();
          else if (k == "augment") t.augment = x.get<bool>();
          else if (k == "resize_side") t.crop.resize_side = x.get<std::size_t>();
          else if (k == "crop_side") t.crop.crop_side = x.get<std::size_t>();
          else return false;
          return true;
        });
      } else {
        return false;
      }
      return true;
    });
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  return base;
}

RunConfig load_run_config(const std::filesystem::path& path, const RunConfig& base) {
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("config: cannot open '" + path.string() + "'");
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw std::invalid_argument("config: '" + path.string() + "': " + e.what());
  }
  return apply_json(j, base);
}

json history_row(const training::EpochStats& s) {
  return {{"epoch", s.epoch},
          {"lr", s.lr},
          {"loss", s.loss},
          {"classification", s.classification},
          {"sparsity", s.sparsity},
          {"margin", s.margin},
          {"key_ratio", s.key_ratio},
          {"steps", s.steps}};
}

json eval_metrics(const training::EvalReport& report, const data::LabelMap& labels) {
  return {{"accuracy", report.accuracy()},
          {"correct", report.correct},
          {"total", report.total},
          {"classes", labels.names},
          {"confusion", report.confusion}};
}

json fold_row(std::size_t fold, const training::FoldReport& report) {
  double key_ratio = 0.0;
  for (const auto& p : report.eval.predictions) {
    key_ratio += static_cast<double>(p.selection.key_count()) / static_cast<double>(p.selection.frame_count());
  }
  if (!report.eval.predictions.empty()) key_ratio /= static_cast<double>(report.eval.predictions.size());
  return {{"fold", fold},
          {"subject", report.subject},
          {"accuracy", report.eval.accuracy()},
          {"correct", report.eval.correct},
          {"total", report.eval.total},
          {"key_ratio", key_ratio},
          {"confusion", report.eval.confusion},
          {"warnings", report.warnings}};
}

json apex_json(const training::ApexOverlap& o) {
  return {{"ratio", o.ratio}, {"ratio_h", o.ratio_h}, {"evaluated", o.evaluated}, {"excluded", o.excluded}};
}

namespace {

std::ofstream open_output(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write '" + path.string() + "'");
  return os;
}

}  // namespace

void write_json(const std::filesystem::path& path, const json& j) { open_output(path) << j.dump(2) << '\n'; }

void write_jsonl(const std::filesystem::path& path, const std::vector<json>& rows) {
  auto os = open_output(path);
  for (const auto& r : rows) os << r.dump() << '\n';
}

void write_history(const std::filesystem::path& path, const std::vector<training::EpochStats>& history) {
  std::vector<json> rows;
  for (const auto& s : history) rows.push_back(history_row(s));
  write_jsonl(path, rows);
}

void write_confusion_csv(const std::filesystem::path& path, const std::vector<std::vector<std::size_t>>& confusion,
                         const data::LabelMap& labels) {
  if (confusion.size() != labels.size()) throw std::invalid_argument("confusion matrix does not match the labels");
  auto os = open_output(path);
  os << "label";
  for (const auto& n : labels.names) os << ',' << n;
  os << '\n';
  for (std::size_t r = 0; r < confusion.size(); ++r) {
    os << labels.names[r];
    for (auto v : confusion[r]) os << ',' << v;
    os << '\n';
  }
}

std::string format_double(double value) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

void write_selection_csv(const std::filesystem::path& path,
                         const std::vector<training::ClipPrediction>& predictions) {
  auto os = open_output(path);
  os << "clip_id,T,N,indices,beta,fallback\n";
  for (const auto& p : predictions) {
    const auto& s = p.selection;
    os << p.clip_id << ',' << s.frame_count() << ',' << s.key_count() << ',';
    const auto keys = s.key_indices();
    for (std::size_t i = 0; i < keys.size(); ++i) os << (i ? " " : "") << keys[i];
    os << ',';
    for (std::size_t i = 0; i < s.beta.size(); ++i) os << (i ? " " : "") << format_double(s.beta[i]);
    os << ',' << (s.fallback ? 1 : 0) << '\n';
  }
}

void write_distance_csv(const std::filesystem::path& path, const std::vector<training::ApexDistance>& distances) {
  auto os = open_output(path);
  os << "clip_id,apex,max_key,framerate,distance\n";
  for (const auto& d : distances) {
    os << d.clip_id << ',' << d.apex << ',' << d.max_key << ',' << format_double(d.framerate) << ','
       << format_double(d.distance) << '\n';
  }
}

}  // namespace akmnet::report
