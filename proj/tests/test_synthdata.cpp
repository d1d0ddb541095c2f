#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "msloc/image_io.hpp"
#include "msloc/synthdata.hpp"

using namespace msloc;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / "msloc_test_synth" / name;
  fs::remove_all(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

}  // namespace

TEST(Generate, DeterministicPerSeed) {
  const auto a = generate(default_class_specs(), 50, 64, 64, 0.1, 7);
  const auto b = generate(default_class_specs(), 50, 64, 64, 0.1, 7);
  const auto c = generate(default_class_specs(), 50, 64, 64, 0.1, 8);
  for (std::size_t i = 0; i < 50; ++i) {
    EXPECT_EQ(a.samples[i].image, b.samples[i].image);
    EXPECT_EQ(a.samples[i].labels, b.samples[i].labels);
    EXPECT_EQ(*a.samples[i].gt_boxes, *b.samples[i].gt_boxes);
  }
  EXPECT_NE(a.samples[0].image, c.samples[0].image);
}

TEST(Generate, SampleDependsOnlyOnSeedAndIndex) {
  const auto a = generate(default_class_specs(), 10, 64, 64, 0.1, 3);
  const Sample s = generate_sample(default_class_specs(), 7, 64, 64, 0.1, 3);
  EXPECT_EQ(s.image, a.samples[7].image);
}

TEST(Generate, FullPrevalence) {
  auto specs = default_class_specs();
  specs[1].prevalence = 1.0;
  const auto ds = generate(specs, 200, 64, 64, 0.1, 1);
  for (const auto& s : ds.samples) EXPECT_EQ(s.labels[1], 1);
}

TEST(Generate, PrevalenceWithinThreeSigma) {
  auto specs = default_class_specs();
  specs[0].prevalence = 0.3;
  const std::size_t n = 2000;
  const auto ds = generate(specs, n, 64, 64, 0.1, 11);
  for (std::size_t c = 0; c < 2; ++c) {
    const double p = specs[c].prevalence;
    std::size_t k = 0;
    for (const auto& s : ds.samples) k += static_cast<std::size_t>(s.labels[c]);
    const double sigma = std::sqrt(static_cast<double>(n) * p * (1 - p));
    EXPECT_LE(std::abs(static_cast<double>(k) - static_cast<double>(n) * p), 3 * sigma) << c;
  }
}

TEST(Generate, PixelsQuantizedAndClipped) {
  const auto ds = generate(default_class_specs(), 20, 64, 64, 0.3, 2);
  for (const auto& s : ds.samples)
    for (double v : s.image) {
      ASSERT_GE(v, 0.0);
      ASSERT_LE(v, 1.0);
      ASSERT_EQ(v, std::round(v * 255.0) / 255.0);
    }
}

TEST(Generate, LabelsMatchBoxesAndBoxesInFrame) {
  const auto ds = generate(default_class_specs(), 300, 64, 64, 0.1, 5);
  for (const auto& s : ds.samples) {
    std::vector<int> derived(2, 0);
    for (const auto& b : *s.gt_boxes) {
      derived[static_cast<std::size_t>(b.class_id)] = 1;
      EXPECT_GE(b.box.x, 0);
      EXPECT_GE(b.box.y, 0);
      EXPECT_LE(b.box.right(), 64);
      EXPECT_LE(b.box.bottom(), 64);
      EXPECT_GE(b.box.w, 1);
    }
    EXPECT_EQ(derived, s.labels);
  }
}

TEST(Generate, BoxesAreTight) {
  for (ShapeKind kind : {ShapeKind::disk, ShapeKind::ellipse, ShapeKind::rectangle}) {
    const std::vector<ClassSpec> specs{{"only", kind, 3, 20, 0.5, 1.0, 1.0}};
    const auto ds = generate(specs, 100, 32, 32, 0.0, 9);
    for (const auto& s : ds.samples) {
      ASSERT_EQ(s.gt_boxes->size(), 1u);
      const BBox b = s.gt_boxes->front().box;
      auto on = [&](int x, int y) { return s.image[static_cast<std::size_t>(y) * 32 + static_cast<std::size_t>(x)] > 0; };
      bool top = false, bottom = false, left = false, right = false;
      for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
          if (!on(x, y)) continue;
          ASSERT_TRUE(b.contains(x, y)) << to_string(kind);
          top |= y == b.y;
          bottom |= y == b.bottom() - 1;
          left |= x == b.x;
          right |= x == b.right() - 1;
        }
      EXPECT_TRUE(top && bottom && left && right) << to_string(kind);
    }
  }
}

TEST(Generate, RejectsBadSpecs) {
  auto specs = default_class_specs();
  EXPECT_THROW(generate(specs, 10, 32, 32, 0.1, 0), std::invalid_argument);
  specs[0].prevalence = 0.0;
  EXPECT_THROW(validate_specs(specs, 64, 64), std::invalid_argument);
  specs = default_class_specs();
  specs[0].intensity_lo = 0.9;
  specs[0].intensity_hi = 0.8;
  EXPECT_THROW(validate_specs(specs, 64, 64), std::invalid_argument);
  EXPECT_THROW(generate({}, 10, 64, 64, 0.1, 0), std::invalid_argument);
  EXPECT_THROW(generate(default_class_specs(), 0, 64, 64, 0.1, 0), std::invalid_argument);
}

TEST(Split, SizesForOneHundred) {
  const auto parts = split(generate(default_class_specs(), 100, 64, 64, 0.1, 1), {}, 1);
  EXPECT_EQ(parts.train.size(), 70u);
  EXPECT_EQ(parts.val.size(), 10u);
  EXPECT_EQ(parts.test.size(), 20u);
  const auto big = assign_splits(2400, {}, 0);
  EXPECT_EQ(std::count(big.begin(), big.end(), Split::train), 1680);
  EXPECT_EQ(std::count(big.begin(), big.end(), Split::val), 240);
  EXPECT_EQ(std::count(big.begin(), big.end(), Split::test), 480);
}

TEST(Split, DisjointExhaustiveDeterministic) {
  const auto ds = generate(default_class_specs(), 120, 64, 64, 0.1, 2);
  const auto parts = split(ds, {}, 4);
  std::set<std::size_t> seen;
  for (const Dataset* d : {&parts.train, &parts.val, &parts.test})
    for (const auto& s : d->samples) EXPECT_TRUE(seen.insert(s.index).second);
  EXPECT_EQ(seen.size(), 120u);
  EXPECT_EQ(assign_splits(120, {}, 4), assign_splits(120, {}, 4));
  EXPECT_NE(assign_splits(120, {}, 4), assign_splits(120, {}, 5));
}

TEST(Split, OnlyTestKeepsBoxes) {
  const auto parts = split(generate(default_class_specs(), 60, 64, 64, 0.1, 3), {}, 3);
  for (const auto& s : parts.train.samples) EXPECT_FALSE(s.gt_boxes.has_value());
  for (const auto& s : parts.val.samples) EXPECT_FALSE(s.gt_boxes.has_value());
  for (const auto& s : parts.test.samples) EXPECT_TRUE(s.gt_boxes.has_value());
}

TEST(Split, Errors) {
  EXPECT_THROW(assign_splits(100, {0.7, 0.2, 0.2}, 0), std::invalid_argument);
  EXPECT_THROW(assign_splits(3, {}, 0), std::invalid_argument);
}

TEST(OnDisk, ByteIdenticalAndLoadable) {
  const auto specs = default_class_specs();
  const auto ds = generate(specs, 40, 64, 64, 0.1, 6);
  const auto tags = assign_splits(40, {}, 6);
  const fs::path a = fresh_dir("a"), b = fresh_dir("b");
  write_dataset(ds, tags, specs, a);
  write_dataset(ds, tags, specs, b);
  for (const auto& e : fs::directory_iterator(a)) EXPECT_EQ(slurp(e.path()), slurp(b / e.path().filename())) << e.path();

  const Dataset train = load_split(a, Split::train), test = load_split(a, Split::test);
  const auto parts = split(ds, {}, 6);
  ASSERT_EQ(train.size(), parts.train.size());
  ASSERT_EQ(test.size(), parts.test.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    EXPECT_EQ(train.samples[i].image, parts.train.samples[i].image);
    EXPECT_EQ(train.samples[i].labels, parts.train.samples[i].labels);
    EXPECT_FALSE(train.samples[i].gt_boxes.has_value());
  }
  for (std::size_t i = 0; i < test.size(); ++i) EXPECT_EQ(*test.samples[i].gt_boxes, *parts.test.samples[i].gt_boxes);
  EXPECT_EQ(train.class_names, ds.class_names);
}

TEST(OnDisk, ManifestRecordLayout) {
  Sample s;
  s.index = 3;
  s.labels = {1, 0};
  const auto rec = manifest_record(s, {{0, {1, 2, 3, 4}}}, Split::val);
  EXPECT_EQ(rec.dump(), R"({"file":"img_000003.pgm","labels":[1,0],"gt_boxes":[{"class":0,"x":1,"y":2,"w":3,"h":4}],"split":"val"})");
}

TEST(Pgm, RoundTripWithComment) {
  const fs::path d = fresh_dir("pgm");
  fs::create_directories(d);
  GrayImage g{2, 3, {0, 10, 20, 30, 40, 255}};
  write_pgm((d / "x.pgm").string(), g);
  EXPECT_EQ(read_pgm((d / "x.pgm").string()), g);
  std::ofstream(d / "c.pgm", std::ios::binary) << "P5\n# note\n3 2\n255\n" << std::string(reinterpret_cast<char*>(g.pixels.data()), 6);
  EXPECT_EQ(read_pgm((d / "c.pgm").string()), g);
  std::ofstream(d / "t.pgm", std::ios::binary) << "P5\n3 2\n255\nab";
  EXPECT_THROW(read_pgm((d / "t.pgm").string()), std::runtime_error);
  std::ofstream(d / "p2.pgm", std::ios::binary) << "P2\n3 2\n255\n";
  EXPECT_THROW(read_pgm((d / "p2.pgm").string()), std::runtime_error);
}

TEST(Pgm, GridScaling) {
  const GrayImage g = grid_to_gray(Grid(1, 3, {-1.0, 0.0, 1.0}));
  EXPECT_EQ(g.pixels, (std::vector<std::uint8_t>{0, 128, 255}));
  EXPECT_EQ(grid_to_gray(Grid(2, 2, 3.0)).pixels, std::vector<std::uint8_t>(4, 0));
}

TEST(Png, OverlayWritesFile) {
  const fs::path d = fresh_dir("png");
  fs::create_directories(d);
  Grid img(16, 16, 0.5), att(16, 16, 0.0);
  att(4, 4) = 1.0;
  const RgbImage o = render_overlay(img, att, {{2, 2, 5, 5}});
  ASSERT_EQ(o.pixels.size(), 16u * 16 * 3);
  EXPECT_EQ(o.pixels[(2 * 16 + 2) * 3], 255);
  write_png((d / "o.png").string(), o);
  const std::string bytes = slurp(d / "o.png");
  ASSERT_GT(bytes.size(), 8u);
  EXPECT_EQ(bytes.substr(1, 3), "PNG");
}
