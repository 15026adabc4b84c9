#include "akmnet/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace akmnet::data {

namespace fs = std::filesystem;

void Clip::validate() const {
  if (frames.empty()) throw DataError("clip '" + id + "': no frames");
  const auto& ref = frames.front().shape();
  if (ref.size() != 3 || ref[1] != ref[2]) throw DataError("clip '" + id + "': frame 1 is not [C,S,S]");
  for (std::size_t t = 1; t < frames.size(); ++t) {
    if (frames[t].shape() != ref) {
      throw DataError("clip '" + id + "': frame " + std::to_string(t + 1) + " has shape " +
                      nn::shape_str(frames[t].shape()) + ", expected " + nn::shape_str(ref));
    }
  }
  const std::size_t n = frames.size();
  for (const auto& idx : {onset, apex, offset}) {
    if (idx && (*idx < 1 || *idx > n)) throw DataError("clip '" + id + "': annotation index outside [1, T]");
  }
  if ((onset && apex && *onset > *apex) || (apex && offset && *apex > *offset) ||
      (onset && offset && *onset > *offset)) {
    throw DataError("clip '" + id + "': onset <= apex <= offset violated");
  }
}

nn::Tensor<float> Clip::stacked() const {
  validate();
  const auto& s = frames.front().shape();
  std::vector<float> values;
  values.reserve(frames.size() * frames.front().size());
  for (const auto& f : frames) values.insert(values.end(), f.values().begin(), f.values().end());
  return nn::Tensor<float>({frames.size(), s[0], s[1], s[2]}, std::move(values));
}

LabelMap LabelMap::merged_four_way() {
  LabelMap m;
  m.names = {"positive", "negative", "surprise", "others"};
  m.aliases = {{"happiness", "positive"}, {"disgust", "negative"}, {"sadness", "negative"},
               {"contempt", "negative"},  {"anger", "negative"},   {"fear", "negative"},
               {"tense", "others"},       {"repression", "others"}};
  return m;
}

LabelMap LabelMap::from_names(std::vector<std::string> names) {
  LabelMap m;
  m.names = std::move(names);
  return m;
}

std::optional<std::size_t> LabelMap::find(const std::string& label) const {
  std::string key = label;
  std::transform(key.begin(), key.end(), key.begin(), [](unsigned char c) { return std::tolower(c); });
  if (auto it = aliases.find(key); it != aliases.end()) key = it->second;
  for (std::size_t i = 0; i < names.size(); ++i) {
    std::string name = names[i];
    std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return std::tolower(c); });
    if (name == key) return i;
  }
  return std::nullopt;
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::optional<std::size_t> parse_index(const std::string& field, const char* name, std::size_t line) {
  if (field.empty()) return std::nullopt;
  std::size_t pos = 0;
  long v = 0;
  try {
    v = std::stol(field, &pos);
  } catch (const std::exception&) {
    throw DataError(std::string("manifest: malformed ") + name + " '" + field + "'", line);
  }
  if (pos != field.size() || v < 1) throw DataError(std::string("manifest: malformed ") + name + " '" + field + "'", line);
  return static_cast<std::size_t>(v);
}

}  // namespace

Manifest load_manifest(const fs::path& path, const LabelMap& labels) {
  std::ifstream is(path);
  if (!is) throw DataError("manifest: cannot open '" + path.string() + "'");
  Manifest m;
  m.labels = labels;
  m.base_dir = path.parent_path();
  std::string line;
  if (!std::getline(is, line) || trim(line) != kManifestHeader) {
    throw DataError("manifest: header must be '" + std::string(kManifestHeader) + "'", 1);
  }
  std::set<std::string> ids;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto fields = split_csv(trim(line));
    if (fields.size() != 8) {
      throw DataError("manifest: expected 8 fields, got " + std::to_string(fields.size()), lineno);
    }
    for (auto& f : fields) f = trim(f);
    ManifestRow row;
    row.clip_id = fields[0];
    row.subject_id = fields[1];
    row.label = fields[2];
    row.frames_path = fields[3];
    if (row.clip_id.empty() || row.subject_id.empty() || row.frames_path.empty()) {
      throw DataError("manifest: empty clip_id, subject_id or frames_path", lineno);
    }
    if (!ids.insert(row.clip_id).second) throw DataError("manifest: duplicate clip id '" + row.clip_id + "'", lineno);
    if (!labels.find(row.label)) throw DataError("manifest: unknown label '" + row.label + "'", lineno);
    row.onset = parse_index(fields[4], "onset", lineno);
    row.apex = parse_index(fields[5], "apex", lineno);
    row.offset = parse_index(fields[6], "offset", lineno);
    if ((row.onset && row.apex && *row.onset > *row.apex) || (row.apex && row.offset && *row.apex > *row.offset) ||
        (row.onset && row.offset && *row.onset > *row.offset)) {
      throw DataError("manifest: onset <= apex <= offset violated for '" + row.clip_id + "'", lineno);
    }
    if (!fields[7].empty()) {
      try {
        std::size_t pos = 0;
        row.framerate = std::stod(fields[7], &pos);
        if (pos != fields[7].size() || row.framerate <= 0) throw std::invalid_argument("framerate");
      } catch (const std::exception&) {
        throw DataError("manifest: malformed framerate '" + fields[7] + "'", lineno);
      }
    }
    m.rows.push_back(std::move(row));
  }
  return m;
}

Manifest load_manifest(const fs::path& path) {
  const fs::path labels_file = path.parent_path() / "labels.txt";
  if (!fs::exists(labels_file)) return load_manifest(path, LabelMap::merged_four_way());
  std::ifstream is(labels_file);
  std::vector<std::string> names;
  for (std::string line; std::getline(is, line);) {
    line = trim(line);
    if (!line.empty()) names.push_back(line);
  }
  if (names.empty()) throw DataError("labels: '" + labels_file.string() + "' is empty");
  return load_manifest(path, LabelMap::from_names(std::move(names)));
}

void write_manifest(const Manifest& manifest, const fs::path& path) {
  std::ofstream os(path);
  if (!os) throw DataError("manifest: cannot write '" + path.string() + "'");
  auto opt = [](const std::optional<std::size_t>& v) { return v ? std::to_string(*v) : std::string(); };
  os << kManifestHeader << '\n';
  for (const auto& r : manifest.rows) {
    std::ostringstream rate;
    if (r.framerate > 0) rate << r.framerate;
    os << r.clip_id << ',' << r.subject_id << ',' << r.label << ',' << r.frames_path << ',' << opt(r.onset) << ','
       << opt(r.apex) << ',' << opt(r.offset) << ',' << rate.str() << '\n';
  }
}

nn::Tensor<float> read_pgm(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("pgm: cannot open '" + path.string() + "'");
  auto token = [&]() {
    std::string t;
    while (is) {
      int c = is.peek();
      if (c == '#') {
        std::string skip;
        std::getline(is, skip);
      } else if (std::isspace(c)) {
        is.get();
      } else {
        break;
      }
    }
    is >> t;
    return t;
  };
  if (token() != "P5") throw DataError("pgm: '" + path.string() + "' is not binary P5");
  std::size_t width = 0, height = 0, maxval = 0;
  try {
    width = std::stoul(token());
    height = std::stoul(token());
    maxval = std::stoul(token());
  } catch (const std::exception&) {
    throw DataError("pgm: malformed header in '" + path.string() + "'");
  }
  if (maxval != 255 || width == 0 || height == 0) {
    throw DataError("pgm: '" + path.string() + "' must be 8-bit (maxval 255)");
  }
  if (width != height) throw DataError("pgm: '" + path.string() + "' is not square");
  is.get();  // single whitespace before raster
  std::vector<unsigned char> raw(width * height);
  if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
    throw DataError("pgm: truncated raster in '" + path.string() + "'");
  }
  nn::Tensor<float> out({1, height, width});
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = static_cast<float>(raw[i]) / 255.0f;
  return out;
}

void write_pgm(const nn::Tensor<float>& frame, const fs::path& path) {
  if (frame.rank() != 3 || frame.dim(0) != 1) throw DataError("pgm: only single-channel frames can be written");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("pgm: cannot write '" + path.string() + "'");
  os << "P5\n" << frame.dim(2) << ' ' << frame.dim(1) << "\n255\n";
  for (float v : frame.values()) {
    const float clamped = std::clamp(v, 0.0f, 1.0f);
    os.put(static_cast<char>(static_cast<unsigned char>(std::lround(clamped * 255.0f))));
  }
}

void write_frame_directory(const Clip& clip, const fs::path& dir) {
  fs::create_directories(dir);
  char name[32];
  for (std::size_t t = 0; t < clip.frames.size(); ++t) {
    std::snprintf(name, sizeof(name), "frame_%04zu.pgm", t + 1);
    write_pgm(clip.frames[t], dir / name);
  }
}

namespace {
static_assert(std::endian::native == std::endian::little, "packed tensor IO assumes a little-endian host");
}

void write_packed(const nn::Tensor<float>& tensor, const fs::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("packed: cannot write '" + path.string() + "'");
  os.write("AKMT", 4);
  auto u32 = [&](std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); };
  u32(kPackedVersion);
  u32(static_cast<std::uint32_t>(tensor.rank()));
  for (auto e : tensor.shape()) u32(static_cast<std::uint32_t>(e));
  os.write(reinterpret_cast<const char*>(tensor.data()), static_cast<std::streamsize>(tensor.size() * 4));
}

nn::Tensor<float> read_packed(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("packed: cannot open '" + path.string() + "'");
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "AKMT", 4) != 0) throw DataError("packed: bad magic in '" + path.string() + "'");
  auto u32 = [&]() {
    std::uint32_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), 4)) throw DataError("packed: truncated header in '" + path.string() + "'");
    return v;
  };
  if (u32() != kPackedVersion) throw DataError("packed: unsupported version in '" + path.string() + "'");
  const auto ndim = u32();
  if (ndim == 0 || ndim > 8) throw DataError("packed: bad rank in '" + path.string() + "'");
  nn::Shape shape(ndim);
  for (auto& e : shape) {
    e = u32();
    if (e == 0) throw DataError("packed: zero extent in '" + path.string() + "'");
  }
  nn::Tensor<float> out(shape);
  if (!is.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(out.size() * 4))) {
    throw DataError("packed: truncated values in '" + path.string() + "'");
  }
  return out;
}

Clip read_clip(const ManifestRow& row, const Manifest& manifest) {
  Clip clip;
  clip.id = row.clip_id;
  clip.subject = row.subject_id;
  clip.label = manifest.labels.find(row.label).value();
  clip.onset = row.onset;
  clip.apex = row.apex;
  clip.offset = row.offset;
  clip.framerate = row.framerate;

  fs::path source = row.frames_path;
  if (source.is_relative()) source = manifest.base_dir / source;
  if (source.extension() == ".akmt") {
    auto packed = read_packed(source);
    if (packed.rank() != 4) throw DataError("clip '" + row.clip_id + "': packed tensor must be [T,C,S,S]");
    for (std::size_t t = 0; t < packed.dim(0); ++t) {
      auto f = packed.slice_leading(t, 1);
      clip.frames.push_back(f.reshaped({packed.dim(1), packed.dim(2), packed.dim(3)}));
    }
  } else {
    if (!fs::is_directory(source)) throw DataError("clip '" + row.clip_id + "': no frame directory '" + source.string() + "'");
    std::set<std::size_t> present;
    for (const auto& entry : fs::directory_iterator(source)) {
      const std::string name = entry.path().filename().string();
      unsigned idx = 0;
      char tail[8] = {};
      if (std::sscanf(name.c_str(), "frame_%u.%4s", &idx, tail) == 2 && std::string(tail) == "pgm") present.insert(idx);
    }
    if (present.empty()) throw DataError("clip '" + row.clip_id + "': no frames in '" + source.string() + "'");
    const std::size_t last = *present.rbegin();
    char name[32];
    for (std::size_t t = 1; t <= last; ++t) {
      if (!present.count(t)) {
        throw DataError("clip '" + row.clip_id + "': missing frame index " + std::to_string(t));
      }
      std::snprintf(name, sizeof(name), "frame_%04zu.pgm", t);
      clip.frames.push_back(read_pgm(source / name));
    }
  }
  clip.validate();
  return clip;
}

std::vector<Clip> read_clips(const Manifest& manifest) {
  std::vector<Clip> clips;
  clips.reserve(manifest.rows.size());
  for (const auto& row : manifest.rows) clips.push_back(read_clip(row, manifest));
  return clips;
}

nn::Tensor<float> resize_frame(const nn::Tensor<float>& frame, std::size_t side) {
  const std::size_t ch = frame.dim(0), in = frame.dim(1);
  if (in == side) return frame;
  nn::Tensor<float> out({ch, side, side});
  const double ratio = static_cast<double>(in) / static_cast<double>(side);
  auto coord = [&](std::size_t o, std::size_t& lo, std::size_t& hi, double& w) {
    double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    lo = static_cast<std::size_t>(std::floor(src));
    hi = std::min(lo + 1, in - 1);
    w = src - static_cast<double>(lo);
  };
  for (std::size_t c = 0; c < ch; ++c) {
    const float* src = frame.data() + c * in * in;
    for (std::size_t y = 0; y < side; ++y) {
      std::size_t y0, y1;
      double wy;
      coord(y, y0, y1, wy);
      for (std::size_t x = 0; x < side; ++x) {
        std::size_t x0, x1;
        double wx;
        coord(x, x0, x1, wx);
        const double top = (1 - wx) * src[y0 * in + x0] + wx * src[y0 * in + x1];
        const double bottom = (1 - wx) * src[y1 * in + x0] + wx * src[y1 * in + x1];
        out[(c * side + y) * side + x] = static_cast<float>((1 - wy) * top + wy * bottom);
      }
    }
  }
  return out;
}

Clip random_crop(const Clip& clip, nn::RngStream& rng, const CropConfig& config, bool training, CropWindow* window) {
  clip.validate();
  Clip out = clip;
  if (!training) {
    for (auto& f : out.frames) f = resize_frame(f, config.crop_side);
    if (window) *window = {};
    return out;
  }
  if (config.resize_side < config.crop_side) throw std::invalid_argument("random_crop: crop larger than resized frame");
  const std::size_t span = config.resize_side - config.crop_side;
  CropWindow w{rng.index(span + 1), rng.index(span + 1)};
  for (auto& f : out.frames) {
    auto big = resize_frame(f, config.resize_side);
    const std::size_t ch = big.dim(0), rs = config.resize_side, cs = config.crop_side;
    nn::Tensor<float> cut({ch, cs, cs});
    for (std::size_t c = 0; c < ch; ++c)
      for (std::size_t y = 0; y < cs; ++y)
        for (std::size_t x = 0; x < cs; ++x) cut[(c * cs + y) * cs + x] = big[(c * rs + y + w.top) * rs + x + w.left];
    f = std::move(cut);
  }
  if (window) *window = w;
  return out;
}

std::vector<std::size_t> balance_resample(std::span<const std::size_t> labels, std::span<const std::size_t> classes,
                                          nn::RngStream& rng, SplitRole role) {
  if (role != SplitRole::train) throw std::invalid_argument("balance_resample: only training splits are resampled");
  std::map<std::size_t, std::vector<std::size_t>> members;
  for (auto c : classes) members[c];
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (members.count(labels[i])) members[labels[i]].push_back(i);
  }
  std::size_t largest = 0;
  for (const auto& [cls, idx] : members) {
    if (idx.empty()) throw DataError("balance_resample: class " + std::to_string(cls) + " has no clips");
    largest = std::max(largest, idx.size());
  }
  std::vector<std::size_t> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) out[i] = i;
  for (const auto& [cls, idx] : members) {
    for (std::size_t k = idx.size(); k < largest; ++k) out.push_back(idx[rng.index(idx.size())]);
  }
  return out;
}

Manifest balance_resample(const Manifest& manifest, nn::RngStream& rng, SplitRole role) {
  std::vector<std::size_t> labels, classes;
  for (const auto& r : manifest.rows) labels.push_back(manifest.labels.find(r.label).value());
  for (std::size_t c = 0; c < manifest.labels.size(); ++c) classes.push_back(c);
  const auto picks = balance_resample(labels, classes, rng, role);
  Manifest out = manifest;
  out.rows.clear();
  for (auto i : picks) out.rows.push_back(manifest.rows[i]);
  return out;
}

Clip temporal_resample(const Clip& clip, std::size_t target_len) {
  if (target_len < 2) throw std::invalid_argument("temporal_resample: target length must be >= 2");
  clip.validate();
  Clip out = clip;
  out.frames.clear();
  const std::size_t n = clip.frames.size();
  if (n == 1) {
    out.frames.assign(target_len, clip.frames.front());
  } else {
    // Output j samples source position j * (T-1) / (L-1), kept as an exact
    // rational so integer positions copy frames bit-for-bit.
    const std::size_t den = target_len - 1;
    for (std::size_t j = 0; j < target_len; ++j) {
      const std::size_t num = j * (n - 1);
      const std::size_t lo = num / den;
      const std::size_t rem = num % den;
      if (rem == 0) {
        out.frames.push_back(clip.frames[lo]);
        continue;
      }
      const double w = static_cast<double>(rem) / static_cast<double>(den);
      const auto& a = clip.frames[lo];
      const auto& b = clip.frames[lo + 1];
      nn::Tensor<float> f(a.shape());
      for (std::size_t i = 0; i < f.size(); ++i) {
        f[i] = static_cast<float>((1.0 - w) * a[i] + w * b[i]);
      }
      out.frames.push_back(std::move(f));
    }
  }
  auto remap = [&](const std::optional<std::size_t>& idx) -> std::optional<std::size_t> {
    if (!idx) return std::nullopt;
    return remap_index(*idx, n, target_len);
  };
  out.onset = remap(clip.onset);
  out.apex = remap(clip.apex);
  out.offset = remap(clip.offset);
  return out;
}

std::size_t remap_index(std::size_t index, std::size_t from, std::size_t to) {
  if (from <= 1) return 1;
  const double pos = static_cast<double>(index - 1) * static_cast<double>(to - 1) / static_cast<double>(from - 1);
  return static_cast<std::size_t>(std::lround(pos)) + 1;
}

std::vector<Fold> loso_split(std::span<const std::string> subjects) {
  std::vector<std::string> order;
  for (const auto& s : subjects) {
    if (std::find(order.begin(), order.end(), s) == order.end()) order.push_back(s);
  }
  if (order.size() < 2) throw DataError("loso_split: at least two subjects are required");
  std::vector<Fold> folds;
  for (const auto& subject : order) {
    Fold f;
    f.subject = subject;
    for (std::size_t i = 0; i < subjects.size(); ++i) (subjects[i] == subject ? f.test : f.train).push_back(i);
    folds.push_back(std::move(f));
  }
  return folds;
}

std::vector<Fold> loso_split(const Manifest& manifest) {
  std::vector<std::string> subjects;
  for (const auto& r : manifest.rows) subjects.push_back(r.subject_id);
  return loso_split(subjects);
}

void SynthSpec::validate() const {
  if (classes < 1) throw std::invalid_argument("synth: classes must be positive");
  if (t_min < 1 || t_max < t_min) throw std::invalid_argument("synth: need 1 <= t_min <= t_max");
  if (signal_frames >= t_min) throw std::invalid_argument("synth: signal_frames must be < t_min");
  if (side < 4) throw std::invalid_argument("synth: side must be >= 4");
  if (clips < 1 || subjects < 1) throw std::invalid_argument("synth: clips and subjects must be positive");
  if (noise < 0 || amplitude < 0) throw std::invalid_argument("synth: noise and amplitude must be >= 0");
}

namespace {

// One raised and one sunken Gaussian bump at class-specific random
// positions, normalized to max |value| = 1.
nn::Tensor<float> class_pattern(std::size_t side, nn::RngStream& rng) {
  const double s = static_cast<double>(side);
  const double width = s / 6.0;
  double cy[2], cx[2];
  do {
    for (int k = 0; k < 2; ++k) {
      cy[k] = s * (0.2 + 0.6 * rng.uniform());
      cx[k] = s * (0.2 + 0.6 * rng.uniform());
    }
  } while (std::hypot(cy[0] - cy[1], cx[0] - cx[1]) < 2.0 * width);
  nn::Tensor<float> p({side, side});
  double peak = 0;
  std::vector<double> raw(side * side);
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = 0; x < side; ++x) {
      double v = 0;
      for (int k = 0; k < 2; ++k) {
        const double d2 = (static_cast<double>(y) - cy[k]) * (static_cast<double>(y) - cy[k]) +
                          (static_cast<double>(x) - cx[k]) * (static_cast<double>(x) - cx[k]);
        v += (k == 0 ? 1.0 : -1.0) * std::exp(-d2 / (2 * width * width));
      }
      raw[y * side + x] = v;
      peak = std::max(peak, std::abs(v));
    }
  }
  for (std::size_t i = 0; i < raw.size(); ++i) p[i] = static_cast<float>(raw[i] / peak);
  return p;
}

}  // namespace

SynthDataset synth_generate(const SynthSpec& spec) {
  spec.validate();
  nn::RngStream root(spec.seed);
  nn::RngStream pattern_rng = root.derive(1);
  nn::RngStream clip_rng = root.derive(2);

  SynthDataset ds;
  for (std::size_t c = 0; c < spec.classes; ++c) {
    ds.labels.names.push_back("class" + std::to_string(c));
    ds.patterns.push_back(class_pattern(spec.side, pattern_rng));
  }
  const std::size_t plane = spec.side * spec.side;
  for (std::size_t i = 0; i < spec.clips; ++i) {
    Clip clip;
    char id[32];
    std::snprintf(id, sizeof(id), "synth_%04zu", i + 1);
    clip.id = id;
    clip.subject = "s" + std::to_string(i % spec.subjects + 1);
    clip.label = i % spec.classes;
    clip.framerate = spec.framerate;
    const auto length = static_cast<std::size_t>(clip_rng.uniform_int(static_cast<long>(spec.t_min), static_cast<long>(spec.t_max)));
    const auto start = static_cast<std::size_t>(clip_rng.uniform_int(0, static_cast<long>(length - spec.signal_frames)));
    const auto& pattern = ds.patterns[clip.label];
    for (std::size_t t = 0; t < length; ++t) {
      nn::Tensor<float> f({1, spec.side, spec.side});
      const bool signal = t >= start && t < start + spec.signal_frames;
      for (std::size_t k = 0; k < plane; ++k) {
        double v = spec.background + spec.noise * clip_rng.normal();
        if (signal) v += spec.amplitude * pattern[k];
        f[k] = static_cast<float>(v);
      }
      clip.frames.push_back(std::move(f));
    }
    if (spec.signal_frames > 0) clip.apex = start + spec.signal_frames / 2 + 1;
    ds.truth.push_back({clip.id, start + 1, spec.signal_frames});
    ds.clips.push_back(std::move(clip));
  }
  return ds;
}

void write_synth(const SynthDataset& dataset, const fs::path& dir, bool pgm) {
  fs::create_directories(dir / "clips");
  Manifest m;
  m.labels = dataset.labels;
  for (const auto& clip : dataset.clips) {
    ManifestRow row;
    row.clip_id = clip.id;
    row.subject_id = clip.subject;
    row.label = dataset.labels.names.at(clip.label);
    row.apex = clip.apex;
    row.framerate = clip.framerate;
    if (pgm) {
      row.frames_path = "clips/" + clip.id;
      write_frame_directory(clip, dir / row.frames_path);
    } else {
      row.frames_path = "clips/" + clip.id + ".akmt";
      write_packed(clip.stacked(), dir / row.frames_path);
    }
    m.rows.push_back(std::move(row));
  }
  write_manifest(m, dir / "manifest.csv");
  std::ofstream labels(dir / "labels.txt");
  for (const auto& n : dataset.labels.names) labels << n << '\n';
  std::ofstream truth(dir / "truth.csv");
  truth << "clip_id,signal_start,signal_len\n";
  for (const auto& t : dataset.truth) truth << t.clip_id << ',' << t.start << ',' << t.length << '\n';
}

}  // namespace akmnet::data
