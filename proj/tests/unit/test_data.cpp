#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "fixtures.hpp"
#include "skinet/data.hpp"
#include "skinet/errors.hpp"
#include "skinet/io_util.hpp"

using namespace skinet;
using namespace skinet::data;
namespace fs = std::filesystem;
using skinet::testing::TempDir;

namespace {

RawImage gradient_raw(int h, int w) {
  RawImage raw{h, w, 3, {}};
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      raw.pixels.push_back(static_cast<std::uint8_t>((r * 255) / (h - 1)));
      raw.pixels.push_back(static_cast<std::uint8_t>((c * 255) / (w - 1)));
      raw.pixels.push_back(static_cast<std::uint8_t>(((r + c) * 7) % 256));
    }
  }
  return raw;
}

DatasetManifest synthetic_manifest(int n, DatasetKind kind, int classes = 1) {
  DatasetManifest m;
  m.kind = kind;
  if (kind == DatasetKind::classification) m.class_counts.assign(lesion_labels().size(), 0);
  for (int i = 0; i < n; ++i) {
    DatasetEntry e;
    e.id = "e" + std::to_string(i);
    e.image = "images/" + e.id + ".png";
    if (kind == DatasetKind::classification) {
      e.label_index = i % classes;
      e.label = lesion_labels()[static_cast<std::size_t>(e.label_index)];
      ++m.class_counts[static_cast<std::size_t>(e.label_index)];
    }
    m.entries.push_back(e);
  }
  return m;
}

std::set<std::string> ids(const DatasetManifest& m) {
  std::set<std::string> out;
  for (const auto& e : m.entries) out.insert(e.id);
  return out;
}

}  // namespace

TEST(LoadDataset, ClassificationCountsAndOrder) {
  TempDir dir("cls");
  const auto samples = skinet::testing::patch_samples(5, 2, 32, 1);
  skinet::testing::write_classification_dataset(dir.path(), samples);
  const auto m = load_dataset(dir.path(), DatasetKind::classification);
  ASSERT_EQ(m.size(), 10U);
  EXPECT_TRUE(std::is_sorted(m.entries.begin(), m.entries.end(),
                             [](const auto& a, const auto& b) { return a.image.filename() < b.image.filename(); }));
  for (int k = 0; k < 5; ++k) EXPECT_EQ(m.class_counts[static_cast<std::size_t>(k)], 2);
  EXPECT_EQ(m.class_counts[5], 0);
}

TEST(LoadDataset, UnknownLabelIsAnIngestionError) {
  TempDir dir("badlabel");
  const auto samples = skinet::testing::patch_samples(1, 1, 32, 1);
  skinet::testing::write_classification_dataset(dir.path(), samples);
  io::write_file_atomic(dir / "labels.csv", "image,label\n" + samples[0].id + ".png,XYZ\n");
  try {
    load_dataset(dir.path(), DatasetKind::classification);
    FAIL() << "expected an ingestion error";
  } catch (const IngestionError& e) {
    EXPECT_NE(std::string(e.what()).find("XYZ"), std::string::npos);
  }
}

TEST(LoadDataset, UnpairedSegmentationImageIsNamed) {
  TempDir dir("unpaired");
  const auto samples = skinet::testing::ellipse_samples(5, 32, 3);
  skinet::testing::write_segmentation_dataset(dir.path(), samples);
  fs::remove(dir / ("masks/" + samples[2].id + ".png"));
  try {
    load_dataset(dir.path(), DatasetKind::segmentation);
    FAIL() << "expected an ingestion error";
  } catch (const IngestionError& e) {
    EXPECT_NE(std::string(e.what()).find(samples[2].id), std::string::npos) << e.what();
  }
}

TEST(LoadDataset, MissingRootThrows) {
  EXPECT_THROW(load_dataset("/nonexistent/skinet/root", DatasetKind::classification), IngestionError);
}

TEST(LoadDataset, SegmentationSamplesPairImageWithMask) {
  TempDir dir("segload");
  const auto samples = skinet::testing::ellipse_samples(3, 32, 4);
  skinet::testing::write_segmentation_dataset(dir.path(), samples);
  const auto loaded = load_segmentation_samples(load_dataset(dir.path(), DatasetKind::segmentation), 32);
  ASSERT_EQ(loaded.size(), 3U);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(loaded[i].image, samples[i].image);
    EXPECT_EQ(loaded[i].mask, samples[i].mask);
  }
}

TEST(LoadDataset, BoundingBoxGroundTruth) {
  TempDir dir("boxes");
  const auto samples = skinet::testing::ellipse_samples(2, 32, 4);
  skinet::testing::write_segmentation_dataset(dir.path(), samples);
  fs::remove(dir / ("masks/" + samples[1].id + ".png"));
  io::write_file_atomic(dir / "boxes.csv", "image,row0,col0,row1,col1\n" + samples[1].id + ".png,2,3,12,10\n");
  const auto m = load_dataset(dir.path(), DatasetKind::segmentation);
  ASSERT_EQ(m.size(), 2U);
  ASSERT_TRUE(m.entries[1].box.has_value());
  const auto loaded = load_segmentation_samples(m, 32);
  EXPECT_EQ(loaded[1].mask.positive_count(), 70U);
}

TEST(Preprocess, ConstantRasterKeepsItsValue) {
  RawImage raw{448, 448, 3, std::vector<std::uint8_t>(448 * 448 * 3, 200)};
  const auto img = preprocess(raw, 224);
  ASSERT_EQ(img.height, 224);
  ASSERT_EQ(img.width, 224);
  for (float v : img.pixels) ASSERT_NEAR(v, 200.0 / 255.0, 1e-6);
}

TEST(Preprocess, SameSizeOnlyRescales) {
  SplitMix64 rng(1);
  RawImage raw{224, 224, 3, {}};
  for (int i = 0; i < 224 * 224 * 3; ++i) raw.pixels.push_back(static_cast<std::uint8_t>(rng.below(256)));
  const auto img = preprocess(raw, 224);
  for (std::size_t i = 0; i < raw.pixels.size(); ++i) ASSERT_EQ(img.pixels[i], raw.pixels[i] / 255.0F);
}

TEST(Preprocess, GradientMatchesIndependentBicubic) {
  const auto raw = gradient_raw(300, 200);
  const auto img = preprocess(raw, 224);
  ASSERT_EQ(img.height, 224);
  for (float v : img.pixels) ASSERT_TRUE(v >= 0.0F && v <= 1.0F);
  const int probes[5][2] = {{0, 0}, {17, 200}, {111, 57}, {223, 223}, {150, 3}};
  for (const auto& p : probes) {
    for (int ch = 0; ch < 3; ++ch) {
      EXPECT_NEAR(img.at(p[0], p[1], ch), skinet::testing::bicubic_reference(raw, 224, 224, p[0], p[1], ch), 1e-3)
          << "probe " << p[0] << "," << p[1] << " channel " << ch;
    }
  }
}

TEST(Preprocess, IdempotentOnNormalizedInput) {
  SplitMix64 rng(2);
  const auto img = skinet::testing::random_image(rng, 224, 224, 3);
  const auto again = resize_image(img, 224, 224);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) ASSERT_NEAR(again.pixels[i], img.pixels[i], 1e-6);
}

TEST(Preprocess, RejectsEmptyAndBadChannels) {
  EXPECT_THROW(preprocess(RawImage{0, 0, 3, {}}, 8), ValidationError);
  EXPECT_THROW(preprocess(RawImage{1, 1, 2, {0, 0}}, 8), ValidationError);
}

TEST(Decode, UndecodableFileThrows) {
  TempDir dir("decode");
  io::write_file_atomic(dir / "junk.png", "not an image");
  EXPECT_THROW(decode_image(dir / "junk.png"), DecodeError);
}

TEST(Augment, DisabledSpecIsIdentity) {
  SplitMix64 rng(3);
  const auto img = skinet::testing::random_image(rng, 20, 24, 3);
  SplitMix64 draw(9);
  for (int i = 0; i < 10; ++i) ASSERT_EQ(augment(img, AugmentationSpec::disabled(), draw), img);
}

TEST(Augment, HorizontalFlipIsAnInvolution) {
  SplitMix64 rng(4);
  const auto img = skinet::testing::random_image(rng, 9, 13, 3);
  AugmentDraw d;
  d.hflip = true;
  const auto once = apply_augmentation(img, d);
  EXPECT_NE(once, img);
  EXPECT_EQ(apply_augmentation(once, d), img);
  EXPECT_EQ(once.at(2, 0, 1), img.at(2, 12, 1));
}

TEST(Augment, SeededAndInRange) {
  SplitMix64 rng(5);
  const auto img = skinet::testing::random_image(rng, 32, 32, 3);
  AugmentationSpec spec;
  SplitMix64 a(42);
  SplitMix64 b(42);
  for (int i = 0; i < 5; ++i) {
    const auto x = augment(img, spec, a);
    ASSERT_EQ(x, augment(img, spec, b));
    ASSERT_TRUE(x.same_shape(img));
    ASSERT_NO_THROW(x.validate_unit_range());
  }
}

TEST(Augment, DrawsRespectTheRotationRange) {
  AugmentationSpec spec;
  SplitMix64 rng(6);
  for (int i = 0; i < 1000; ++i) {
    const auto d = sample_augmentation(spec, rng);
    ASSERT_GE(d.angle_deg, -65.0);
    ASSERT_LE(d.angle_deg, 65.0);
  }
  spec.rotation_max = 200.0;
  EXPECT_THROW(spec.validate(), ValidationError);
}

TEST(TtaFamily, FirstIsOriginalAndFamilyIsReproducible) {
  SplitMix64 rng(7);
  const auto img = skinet::testing::random_image(rng, 24, 24, 3);
  EXPECT_EQ(tta_family(img, 1, 3), std::vector<Image>{img});
  const auto f1 = tta_family(img, 8, 11);
  const auto f2 = tta_family(img, 8, 11);
  ASSERT_EQ(f1.size(), 8U);
  EXPECT_EQ(f1, f2);
  EXPECT_EQ(f1[0], img);
  for (std::size_t i = 0; i < f1.size(); ++i) {
    for (std::size_t j = i + 1; j < f1.size(); ++j) EXPECT_NE(f1[i], f1[j]) << i << " vs " << j;
  }
  EXPECT_THROW(tta_family(img, 0, 1), ValidationError);
}

TEST(TtaFamily, InverseMapsFlipsBack) {
  ProbMap m(6, 6);
  for (std::size_t i = 0; i < m.values.size(); ++i) m.values[i] = static_cast<float>(i) / 36.0F;
  AugmentDraw d;
  d.hflip = true;
  d.vflip = true;
  Image as_img(6, 6, 1);
  as_img.pixels = m.values;
  ProbMap forward(6, 6);
  forward.values = apply_augmentation(as_img, d).pixels;
  EXPECT_EQ(invert_augmentation(forward, d), m);
}

TEST(BoxMask, Examples) {
  EXPECT_EQ(bbox_to_mask({0, 0, 8, 6}, 8, 6).positive_count(), 48U);
  const auto one = bbox_to_mask({0, 0, 1, 1}, 8, 6);
  EXPECT_EQ(one.positive_count(), 1U);
  EXPECT_TRUE(one.at(0, 0));
  SplitMix64 rng(8);
  for (int i = 0; i < 200; ++i) {
    const int r0 = static_cast<int>(rng.below(10));
    const int c0 = static_cast<int>(rng.below(10));
    const int r1 = r0 + 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(10 - r0)));
    const int c1 = c0 + 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(10 - c0)));
    ASSERT_EQ(bbox_to_mask({r0, c0, r1, c1}, 10, 10).positive_count(), static_cast<std::size_t>((r1 - r0) * (c1 - c0)));
  }
  EXPECT_THROW(bbox_to_mask({2, 2, 2, 4}, 8, 8), ValidationError);
  EXPECT_THROW(bbox_to_mask({0, 0, 9, 4}, 8, 8), ValidationError);
}

TEST(Split, AllTrain) {
  const auto m = synthetic_manifest(10, DatasetKind::segmentation);
  const auto s = split(m, {1.0, 0.0, 0.0}, 1);
  EXPECT_EQ(s.train.size(), 10U);
  EXPECT_EQ(s.val.size() + s.test.size(), 0U);
}

TEST(Split, EightyTenTen) {
  const auto s = split(synthetic_manifest(100, DatasetKind::segmentation), {0.8, 0.1, 0.1}, 5);
  EXPECT_EQ(s.train.size(), 80U);
  EXPECT_EQ(s.val.size(), 10U);
  EXPECT_EQ(s.test.size(), 10U);
}

TEST(Split, DeterministicDisjointExhaustive) {
  SplitMix64 rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(80));
    const int classes = 1 + static_cast<int>(rng.below(7));
    const auto m = synthetic_manifest(n, DatasetKind::classification, classes);
    const double tr = rng.uniform(0.3, 0.9);
    const double va = rng.uniform(0.0, 1.0 - tr);
    const SplitFractions f{tr, va, 1.0 - tr - va};
    const auto seed = rng.next();
    const auto a = split(m, f, seed);
    const auto b = split(m, f, seed);
    ASSERT_EQ(a.train.entries, b.train.entries);
    ASSERT_EQ(a.test.entries, b.test.entries);
    auto all = ids(a.train);
    for (const auto& id : ids(a.val)) ASSERT_TRUE(all.insert(id).second);
    for (const auto& id : ids(a.test)) ASSERT_TRUE(all.insert(id).second);
    ASSERT_EQ(all, ids(m));
    // Stratification: each class keeps its share in train within one sample.
    for (int k = 0; k < classes; ++k) {
      const double expected = tr * static_cast<double>(m.class_counts[static_cast<std::size_t>(k)]);
      ASSERT_LE(std::abs(static_cast<double>(a.train.class_counts[static_cast<std::size_t>(k)]) - expected), 1.0);
    }
  }
}

TEST(Split, InvalidFractionsThrow) {
  EXPECT_THROW(split(synthetic_manifest(4, DatasetKind::segmentation), {0.5, 0.2, 0.2}, 1), ValidationError);
}

TEST(Cache, PreprocessedRastersRoundTrip) {
  TempDir dir("cache");
  const auto samples = skinet::testing::patch_samples(2, 2, 32, 2);
  skinet::testing::write_classification_dataset(dir / "data", samples);
  const auto m = load_dataset(dir / "data", DatasetKind::classification);
  const auto plain = load_classification_samples(m, 24);
  ::setenv("SKINET_CACHE", (dir / "cache").c_str(), 1);
  const auto first = load_classification_samples(m, 24);
  const auto second = load_classification_samples(m, 24);
  ::unsetenv("SKINET_CACHE");
  ASSERT_EQ(first.size(), plain.size());
  for (std::size_t i = 0; i < plain.size(); ++i) {
    EXPECT_EQ(first[i].image, plain[i].image);
    EXPECT_EQ(second[i].image, plain[i].image);
  }
  EXPECT_FALSE(fs::is_empty(dir / "cache"));
}
