// Synthetic multi-label images with size-controlled shapes.
//
// Each class is drawn at most once per image with its own prevalence. Image
// level labels feed training; the shapes' tight boxes are kept for
// localization scoring and are only exposed on the test split.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "msloc/bbox.hpp"
#include "msloc/image_io.hpp"
#include "msloc/rng.hpp"

namespace msloc {

enum class ShapeKind { disk, ellipse, rectangle };

inline const char* to_string(ShapeKind k) {
  switch (k) {
    case ShapeKind::disk: return "disk";
    case ShapeKind::ellipse: return "ellipse";
    case ShapeKind::rectangle: return "rectangle";
  }
  return "?";
}

inline ShapeKind shape_from_string(const std::string& s) {
  if (s == "disk") return ShapeKind::disk;
  if (s == "ellipse") return ShapeKind::ellipse;
  if (s == "rectangle") return ShapeKind::rectangle;
  throw std::invalid_argument("unknown shape '" + s + "' (expected disk, ellipse or rectangle)");
}

struct ClassSpec {
  std::string name;
  ShapeKind shape = ShapeKind::disk;
  int size_min = 4;  // bounding extent in pixels
  int size_max = 8;
  double intensity_lo = 0.5;
  double intensity_hi = 1.0;
  double prevalence = 0.5;

  bool operator==(const ClassSpec&) const = default;
};

/// Small disks and large ellipses, one class each.
inline std::vector<ClassSpec> default_class_specs() {
  return {
      {"small", ShapeKind::disk, 4, 8, 0.6, 1.0, 0.5},
      {"large", ShapeKind::ellipse, 24, 48, 0.3, 0.6, 0.5},
  };
}

enum class Split { none, train, val, test };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    case Split::none: break;
  }
  return "none";
}

inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  if (s == "none") return Split::none;
  throw std::invalid_argument("unknown split tag '" + s + "'");
}

struct Sample {
  std::size_t index = 0;
  std::vector<double> image;  // row-major H*W, values k/255
  std::vector<int> labels;    // multi-hot, length C
  /// Ground-truth boxes; std::nullopt where weak supervision hides them.
  std::optional<std::vector<LabeledBox>> gt_boxes;
  Split split = Split::none;
};

struct Dataset {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::string> class_names;
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
  std::size_t num_classes() const { return class_names.size(); }
};

inline void validate_specs(const std::vector<ClassSpec>& specs, std::size_t height, std::size_t width) {
  if (specs.empty()) throw std::invalid_argument("at least one class spec is required");
  const int frame = static_cast<int>(std::min(height, width));
  for (const auto& s : specs) {
    const std::string who = "class '" + s.name + "': ";
    if (s.size_min < 1 || s.size_min > s.size_max)
      throw std::invalid_argument(who + "size range must satisfy 1 <= min <= max");
    if (s.size_max >= frame)
      throw std::invalid_argument(who + "size max " + std::to_string(s.size_max) + " does not fit a " +
                                  std::to_string(height) + "x" + std::to_string(width) + " frame");
    if (!(s.prevalence > 0.0 && s.prevalence <= 1.0)) throw std::invalid_argument(who + "prevalence must lie in (0,1]");
    if (!(s.intensity_lo >= 0.0 && s.intensity_lo < s.intensity_hi && s.intensity_hi <= 1.0))
      throw std::invalid_argument(who + "intensity range must satisfy 0 <= lo < hi <= 1");
  }
}

namespace detail {

// Pixel-centre membership test for a shape occupying a sw x sh frame.
inline bool shape_covers(ShapeKind kind, int sw, int sh, int px, int py) {
  if (kind == ShapeKind::rectangle) return true;
  const double rx = 0.5 * sw, ry = 0.5 * sh;
  const double dx = (px + 0.5 - rx) / rx, dy = (py + 0.5 - ry) / ry;
  return dx * dx + dy * dy <= 1.0;
}

}  // namespace detail

/// Renders one sample from its own (seed, index) random stream.
inline Sample generate_sample(const std::vector<ClassSpec>& specs, std::size_t index, std::size_t height,
                              std::size_t width, double noise_sigma, std::uint64_t seed) {
  Rng rng(derive_seed(seed, index));
  Sample s;
  s.index = index;
  s.labels.assign(specs.size(), 0);
  s.gt_boxes.emplace();
  std::vector<double> canvas(height * width, 0.0);
  for (std::size_t c = 0; c < specs.size(); ++c) {
    const auto& spec = specs[c];
    if (!rng.bernoulli(spec.prevalence)) continue;
    const int sw = rng.uniform_int(spec.size_min, spec.size_max);
    const int sh = spec.shape == ShapeKind::disk ? sw : rng.uniform_int(spec.size_min, spec.size_max);
    const int x0 = rng.uniform_int(0, static_cast<int>(width) - sw);
    const int y0 = rng.uniform_int(0, static_cast<int>(height) - sh);
    const double value = rng.uniform(spec.intensity_lo, spec.intensity_hi);
    int minx = sw, miny = sh, maxx = -1, maxy = -1;
    for (int py = 0; py < sh; ++py)
      for (int px = 0; px < sw; ++px) {
        if (!detail::shape_covers(spec.shape, sw, sh, px, py)) continue;
        double& pix = canvas[static_cast<std::size_t>(y0 + py) * width + static_cast<std::size_t>(x0 + px)];
        pix = std::max(pix, value);
        minx = std::min(minx, px);
        maxx = std::max(maxx, px);
        miny = std::min(miny, py);
        maxy = std::max(maxy, py);
      }
    s.labels[c] = 1;
    s.gt_boxes->push_back({static_cast<int>(c), BBox{x0 + minx, y0 + miny, maxx - minx + 1, maxy - miny + 1}});
  }
  s.image.resize(canvas.size());
  for (std::size_t i = 0; i < canvas.size(); ++i) {
    const double v = std::clamp(canvas[i] + noise_sigma * rng.normal(), 0.0, 1.0);
    s.image[i] = static_cast<double>(std::lround(v * 255.0)) / 255.0;
  }
  return s;
}

inline Dataset generate(const std::vector<ClassSpec>& specs, std::size_t n, std::size_t height, std::size_t width,
                        double noise_sigma, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("generate: n must be at least 1");
  if (height == 0 || width == 0) throw std::invalid_argument("generate: image extents must be positive");
  if (!(noise_sigma >= 0.0)) throw std::invalid_argument("generate: noise sigma must be non-negative");
  validate_specs(specs, height, width);
  Dataset ds;
  ds.height = height;
  ds.width = width;
  for (const auto& s : specs) ds.class_names.push_back(s.name);
  ds.samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) ds.samples.push_back(generate_sample(specs, i, height, width, noise_sigma, seed));
  return ds;
}

struct SplitFractions {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;
};

/// Split tag per sample index; deterministic per seed.
inline std::vector<Split> assign_splits(std::size_t n, const SplitFractions& f, std::uint64_t seed) {
  if (f.train < 0 || f.val < 0 || f.test < 0 || std::abs(f.train + f.val + f.test - 1.0) > 1e-9)
    throw std::invalid_argument("split fractions must be non-negative and sum to 1");
  const auto n_train = static_cast<std::size_t>(std::llround(f.train * static_cast<double>(n)));
  const auto n_val = static_cast<std::size_t>(std::llround(f.val * static_cast<double>(n)));
  if (n_train == 0 || n_val == 0 || n_train + n_val >= n)
    throw std::invalid_argument("split of " + std::to_string(n) + " samples leaves an empty partition");
  Rng rng(derive_seed(seed, 0x5B117ULL));
  const auto perm = rng.permutation(n);
  std::vector<Split> tags(n);
  for (std::size_t i = 0; i < n; ++i)
    tags[perm[i]] = i < n_train ? Split::train : (i < n_train + n_val ? Split::val : Split::test);
  return tags;
}

struct SplitDatasets {
  Dataset train, val, test;
};

/// Partitions a dataset; boxes are stripped from the training and validation parts.
inline SplitDatasets split(const Dataset& ds, const SplitFractions& f, std::uint64_t seed) {
  const auto tags = assign_splits(ds.size(), f, seed);
  SplitDatasets out;
  for (Dataset* d : {&out.train, &out.val, &out.test}) {
    d->height = ds.height;
    d->width = ds.width;
    d->class_names = ds.class_names;
  }
  for (std::size_t i = 0; i < ds.size(); ++i) {
    Sample s = ds.samples[i];
    s.split = tags[i];
    if (s.split != Split::test) s.gt_boxes.reset();
    (s.split == Split::train ? out.train : s.split == Split::val ? out.val : out.test).samples.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// On-disk layout: <dir>/dataset.json, <dir>/manifest.jsonl, <dir>/img_NNNNNN.pgm

inline std::string sample_file_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "img_%06zu.pgm", index);
  return buf;
}

inline GrayImage to_gray(const std::vector<double>& image, std::size_t height, std::size_t width) {
  GrayImage g{height, width, std::vector<std::uint8_t>(image.size())};
  for (std::size_t i = 0; i < image.size(); ++i)
    g.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(image[i], 0.0, 1.0) * 255.0));
  return g;
}

inline std::vector<double> from_gray(const GrayImage& g) {
  std::vector<double> v(g.pixels.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(g.pixels[i]) / 255.0;
  return v;
}

inline nlohmann::ordered_json manifest_record(const Sample& s, const std::vector<LabeledBox>& boxes, Split tag) {
  nlohmann::ordered_json rec;
  rec["file"] = sample_file_name(s.index);
  rec["labels"] = s.labels;
  auto arr = nlohmann::ordered_json::array();
  for (const auto& b : boxes)
    arr.push_back({{"class", b.class_id}, {"x", b.box.x}, {"y", b.box.y}, {"w", b.box.w}, {"h", b.box.h}});
  rec["gt_boxes"] = std::move(arr);
  rec["split"] = to_string(tag);
  return rec;
}

/// Writes every sample of a freshly generated dataset with its split tag.
inline void write_dataset(const Dataset& ds, const std::vector<Split>& tags, const std::vector<ClassSpec>& specs,
                          const std::filesystem::path& dir) {
  if (tags.size() != ds.size()) throw std::invalid_argument("write_dataset: one split tag per sample is required");
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json meta;
  meta["height"] = ds.height;
  meta["width"] = ds.width;
  meta["num_samples"] = ds.size();
  auto classes = nlohmann::ordered_json::array();
  for (const auto& s : specs)
    classes.push_back({{"name", s.name},
                       {"shape", to_string(s.shape)},
                       {"size_range", {s.size_min, s.size_max}},
                       {"intensity_range", {s.intensity_lo, s.intensity_hi}},
                       {"prevalence", s.prevalence}});
  meta["classes"] = std::move(classes);
  std::ofstream(dir / "dataset.json") << meta.dump(2) << '\n';

  std::ofstream manifest(dir / "manifest.jsonl", std::ios::binary | std::ios::trunc);
  if (!manifest) throw std::runtime_error("cannot write manifest in '" + dir.string() + "'");
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Sample& s = ds.samples[i];
    if (!s.gt_boxes) throw std::invalid_argument("write_dataset: sample " + std::to_string(s.index) + " has no boxes");
    write_pgm((dir / sample_file_name(s.index)).string(), to_gray(s.image, ds.height, ds.width));
    manifest << manifest_record(s, *s.gt_boxes, tags[i]).dump() << '\n';
  }
  if (!manifest) throw std::runtime_error("failed writing manifest in '" + dir.string() + "'");
}

/// Loads the samples tagged `which`. Boxes are only materialised for the test split.
inline Dataset load_split(const std::filesystem::path& dir, Split which) {
  std::ifstream meta_in(dir / "dataset.json");
  if (!meta_in) throw std::runtime_error("missing dataset.json in '" + dir.string() + "'");
  Dataset ds;
  std::ifstream manifest(dir / "manifest.jsonl");
  if (!manifest) throw std::runtime_error("missing manifest.jsonl in '" + dir.string() + "'");
  try {
    const auto meta = nlohmann::json::parse(meta_in);
    ds.height = meta.at("height").get<std::size_t>();
    ds.width = meta.at("width").get<std::size_t>();
    for (const auto& c : meta.at("classes")) ds.class_names.push_back(c.at("name").get<std::string>());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(manifest, line)) {
      ++lineno;
      if (line.empty()) continue;
      const auto rec = nlohmann::json::parse(line);
      const Split tag = split_from_string(rec.at("split").get<std::string>());
      if (tag != which) continue;
      Sample s;
      const auto file = rec.at("file").get<std::string>();
      std::sscanf(file.c_str(), "img_%zu.pgm", &s.index);
      s.labels = rec.at("labels").get<std::vector<int>>();
      if (s.labels.size() != ds.class_names.size())
        throw std::runtime_error("manifest line " + std::to_string(lineno) + ": label count mismatch");
      s.split = tag;
      if (tag == Split::test) {
        s.gt_boxes.emplace();
        for (const auto& b : rec.at("gt_boxes"))
          s.gt_boxes->push_back({b.at("class").get<int>(),
                                 BBox{b.at("x").get<int>(), b.at("y").get<int>(), b.at("w").get<int>(), b.at("h").get<int>()}});
      }
      const GrayImage g = read_pgm((dir / file).string());
      if (g.height != ds.height || g.width != ds.width)
        throw std::runtime_error("image '" + file + "' does not match the dataset extents");
      s.image = from_gray(g);
      ds.samples.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("unreadable dataset in '" + dir.string() + "': " + e.what());
  }
  return ds;
}

}  // namespace msloc
