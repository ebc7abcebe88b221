#include <gtest/gtest.h>

#include <json.hpp>

#include "fixtures.hpp"
#include "skinet/classifier.hpp"
#include "skinet/errors.hpp"
#include "skinet/io_util.hpp"
#include "skinet/pipeline.hpp"

using namespace skinet;
using namespace skinet::pipeline;
namespace st = skinet::testing;

namespace {

Image noise_image(int size, std::uint64_t seed) {
  SplitMix64 rng(seed);
  return st::random_image(rng, size, size, 3);
}

ProbMap disk_map(int size, double radius) {
  ProbMap m(size, size);
  const double c = (size - 1) / 2.0;
  for (int r = 0; r < size; ++r) {
    for (int col = 0; col < size; ++col) {
      m.at(r, col) = (r - c) * (r - c) + (col - c) * (col - c) <= radius * radius ? 1.0F : 0.0F;
    }
  }
  return m;
}

ProbMap constant_map(int size, float v) {
  ProbMap m(size, size);
  for (auto& x : m.values) x = v;
  return m;
}

PipelineConfig quiet_config() {
  PipelineConfig cfg;
  cfg.samples = 4;
  cfg.augmentation = data::AugmentationSpec::disabled();
  cfg.explain = false;
  return cfg;
}

}  // namespace

TEST(ApplyMask, FullFrameCropIsTheIdentity) {
  const auto img = noise_image(20, 1);
  const auto out = apply_mask(img, BinaryMask(20, 20, true), MaskMode::crop_bbox_margin, 0.1);
  ASSERT_TRUE(out.window.has_value());
  EXPECT_EQ(*out.window, (data::Box{0, 0, 20, 20}));
  for (std::size_t i = 0; i < img.pixels.size(); ++i) EXPECT_NEAR(out.image.pixels[i], img.pixels[i], 1e-6F);
  EXPECT_TRUE(out.warning.empty());
}

TEST(ApplyMask, EmptyMaskFallbacks) {
  const auto img = noise_image(12, 2);
  const BinaryMask none(12, 12, false);
  const auto multiplied = apply_mask(img, none, MaskMode::multiply, 0.1);
  for (float v : multiplied.image.pixels) EXPECT_EQ(v, 0.0F);
  EXPECT_FALSE(multiplied.warning.empty());
  EXPECT_FALSE(multiplied.box.has_value());
  for (auto mode : {MaskMode::crop_bbox_margin, MaskMode::multiply_then_crop}) {
    const auto out = apply_mask(img, none, mode, 0.1);
    EXPECT_EQ(out.image, img);
    EXPECT_FALSE(out.warning.empty());
  }
}

TEST(ApplyMask, CentredBoxWithMarginGivesTheExpectedWindow) {
  const auto img = noise_image(100, 3);
  BinaryMask mask(100, 100);
  for (int r = 25; r < 75; ++r) {
    for (int c = 25; c < 75; ++c) mask.set(r, c, true);
  }
  const auto out = apply_mask(img, mask, MaskMode::multiply_then_crop, 0.1);
  EXPECT_EQ(*out.box, (data::Box{25, 25, 75, 75}));
  EXPECT_EQ(*out.window, (data::Box{20, 20, 80, 80}));
  EXPECT_EQ(out.image.height, 100);
  EXPECT_EQ(out.image.width, 100);
}

TEST(ApplyMask, MultiplyZeroesExactlyTheBackground) {
  const auto img = noise_image(16, 4);
  SplitMix64 rng(9);
  const auto mask = st::random_mask(rng, 16, 16, 0.4);
  const auto out = apply_mask(img, mask, MaskMode::multiply, 0.0);
  for (int r = 0; r < 16; ++r) {
    for (int c = 0; c < 16; ++c) {
      for (int ch = 0; ch < 3; ++ch) EXPECT_EQ(out.image.at(r, c, ch), mask.at(r, c) ? img.at(r, c, ch) : 0.0F);
    }
  }
  EXPECT_THROW(apply_mask(img, BinaryMask(8, 8, true), MaskMode::multiply, 0.0), ValidationError);
  EXPECT_THROW(apply_mask(img, mask, MaskMode::multiply, -0.5), ValidationError);
}

TEST(Routing, UncertainSegmentationPassesTheOriginalThrough) {
  const st::FixedSegmenter seg(constant_map(32, 0.5F));
  const st::RecordingClassifier clf(32);
  const auto img = noise_image(32, 5);
  const auto report = skinet_infer(seg, clf, img, quiet_config(), 1);
  EXPECT_NEAR(report.seg.uncertainty.scalar_phi_norm, 1.0, 1e-12);
  EXPECT_FALSE(report.seg.used);
  EXPECT_EQ(report.classifier_input, img);
  ASSERT_EQ(clf.seen.size(), 4U);
  for (const auto& s : clf.seen) EXPECT_EQ(s, img);
}

TEST(Routing, CertainSegmentationFeedsTheMaskedImage) {
  const st::FixedSegmenter seg(disk_map(32, 9.0));
  const st::RecordingClassifier clf(32);
  const auto img = noise_image(32, 6);
  const auto cfg = quiet_config();
  const auto report = skinet_infer(seg, clf, img, cfg, 2);
  EXPECT_EQ(report.seg.uncertainty.scalar_phi_norm, 0.0);
  EXPECT_TRUE(report.seg.used);
  const auto expected = apply_mask(img, binarize(disk_map(32, 9.0), 0.5), cfg.mask_mode, cfg.margin).image;
  EXPECT_EQ(report.classifier_input, expected);
  EXPECT_NE(report.classifier_input, img);
  for (const auto& s : clf.seen) EXPECT_EQ(s, expected);
}

TEST(Routing, EmptyCertainMaskFallsBackWithAWarning) {
  const st::FixedSegmenter seg(constant_map(32, 0.0F));
  const st::RecordingClassifier clf(32);
  const auto img = noise_image(32, 7);
  const auto report = skinet_infer(seg, clf, img, quiet_config(), 3);
  EXPECT_TRUE(report.seg.used);
  EXPECT_EQ(report.classifier_input, img);
  ASSERT_EQ(report.warnings.size(), 1U);
}

TEST(Routing, ResizesBetweenStageResolutions) {
  const st::FixedSegmenter seg(disk_map(16, 5.0));
  const st::RecordingClassifier clf(24);
  const auto report = skinet_infer(seg, clf, noise_image(32, 8), quiet_config(), 4);
  EXPECT_EQ(report.seg.mask.height, 32);
  EXPECT_EQ(report.classifier_input.height, 24);
  for (const auto& s : clf.seen) EXPECT_EQ(s.height, 24);
}

TEST(Routing, GateOpensMonotonicallyWithTheThreshold) {
  const st::DarknessSegmenter seg(16);
  auto cfg = quiet_config();
  cfg.augmentation = data::AugmentationSpec{};
  for (std::uint64_t i = 0; i < 5; ++i) {
    const auto img = noise_image(16, 20 + i);
    bool was_used = false;
    for (double t : {0.0, 0.1, 0.25, 0.5, 0.75, 1.0}) {
      cfg.seg_threshold = t;
      const auto r = route_input(seg, img, cfg, i);
      if (was_used) EXPECT_TRUE(r.seg.used);
      was_used = r.seg.used;
    }
  }
}

TEST(Infer, VerdictAndSaliencyFollowTheGate) {
  const st::DarknessSegmenter seg(32);
  const auto clf = classifier::build_classifier(st::desk_classifier_config(4, 32), 3);
  PipelineConfig cfg;
  cfg.samples = 3;
  cfg.explainer = saliency::Method::grad_cam;
  for (double threshold : {0.0, 1.0}) {
    cfg.clf_threshold = threshold;
    const auto report = skinet_infer(seg, clf, noise_image(32, 9), cfg, 5, "x");
    const bool certain = report.clf.uncertainty.phi_norm < threshold;
    EXPECT_EQ(report.verdict == uncertainty::Verdict::certain, certain);
    EXPECT_EQ(report.saliency.has_value(), certain);
    EXPECT_EQ(report.clf.predicted_class, report.clf.mean.argmax());
    EXPECT_NO_THROW(validate_report_json(report_json(report)));
  }
}

TEST(Infer, SameSeedSameReport) {
  const st::DarknessSegmenter seg(32);
  const auto clf = classifier::build_classifier(st::desk_classifier_config(4, 32), 4);
  PipelineConfig cfg;
  cfg.samples = 3;
  cfg.clf_threshold = 1.0;
  cfg.explainer = saliency::Method::guided_grad_cam;
  const auto img = noise_image(32, 10);
  const auto a = skinet_infer(seg, clf, img, cfg, 6, "a");
  const auto b = skinet_infer(seg, clf, img, cfg, 6, "a");
  EXPECT_EQ(report_json(a), report_json(b));
  EXPECT_EQ(a.saliency->values, b.saliency->values);
}

TEST(Infer, RejectsInvalidInputs) {
  const st::DarknessSegmenter seg(16);
  const st::RecordingClassifier clf(16);
  auto bad = noise_image(16, 1);
  bad.pixels[0] = 1.5F;
  EXPECT_THROW(skinet_infer(seg, clf, bad, quiet_config(), 0), ValidationError);
  auto cfg = quiet_config();
  cfg.seg_threshold = 1.5;
  EXPECT_THROW(skinet_infer(seg, clf, noise_image(16, 1), cfg, 0), ValidationError);
  cfg = quiet_config();
  cfg.samples = 1;
  EXPECT_THROW(skinet_infer(seg, clf, noise_image(16, 1), cfg, 0), ValidationError);
}

TEST(Report, ValidatorNamesTheMissingField) {
  const st::FixedSegmenter seg(disk_map(16, 4.0));
  const st::RecordingClassifier clf(16);
  const auto report = skinet_infer(seg, clf, noise_image(16, 2), quiet_config(), 1, "img");
  const auto text = report_json(report);
  EXPECT_NO_THROW(validate_report_json(text));
  auto j = nlohmann::json::parse(text);
  j["clf"].erase("uncertainty");
  try {
    validate_report_json(j.dump());
    FAIL() << "missing field accepted";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("clf.uncertainty"), std::string::npos);
  }
  EXPECT_THROW(validate_report_json("{not json"), ValidationError);
}

TEST(Report, BundleWritesEveryArtefact) {
  const st::DarknessSegmenter seg(32);
  const auto clf = classifier::build_classifier(st::desk_classifier_config(4, 32), 5);
  PipelineConfig cfg;
  cfg.samples = 2;
  cfg.clf_threshold = 1.0;
  cfg.explainer = saliency::Method::grad_cam;
  const auto img = noise_image(32, 3);
  const auto report = skinet_infer(seg, clf, img, cfg, 7, "lesion");
  st::TempDir dir("bundle");
  write_report_bundle(dir / "out", report, img);
  for (const char* f : {"report.json", "mask_overlay.png", "uncertainty.png", "posterior.png", "classifier_input.png",
                        "saliency_overlay.png", "saliency_heatmap.png", "saliency.npy", "timings.json"}) {
    EXPECT_TRUE(std::filesystem::exists(dir.path() / "out" / f)) << f;
  }
  EXPECT_NO_THROW(validate_report_json(io::read_file(dir.path() / "out" / "report.json")));
}

TEST(Evaluate, AllCertainAndCorrectGivesFullDiagnosticAccuracy) {
  const st::FixedSegmenter seg(constant_map(32, 0.5F));
  const st::RecordingClassifier clf(32);
  auto samples = st::patch_samples(1, 5, 32, 1);  // every label is 0
  const auto r = evaluate_pipeline(seg, clf, samples, quiet_config(), 3);
  EXPECT_EQ(r.counts, (TriageCounts{5, 0, 0, 0}));
  EXPECT_EQ(r.diagnostic_accuracy, 1.0);
  samples[0].label = 2;
  const auto wrong = evaluate_pipeline(seg, clf, samples, quiet_config(), 3);
  EXPECT_EQ(wrong.counts, (TriageCounts{4, 0, 1, 0}));
  EXPECT_THROW(evaluate_pipeline(seg, clf, std::vector<data::ClfSample>{}, quiet_config(), 0), ValidationError);
}

TEST(Evaluate, CountsAreConservedAndConsistentWithRecords) {
  const st::DarknessSegmenter seg(32);
  const auto clf = classifier::build_classifier(st::desk_classifier_config(3, 32), 6);
  const auto samples = st::patch_samples(3, 3, 32, 2);
  auto cfg = quiet_config();
  cfg.samples = 3;
  cfg.clf_threshold = 0.02;
  const auto r = evaluate_pipeline(seg, clf, samples, cfg, 4);
  EXPECT_EQ(r.counts.total(), static_cast<std::int64_t>(samples.size()));
  ASSERT_EQ(r.records.size(), samples.size());
  TriageCounts recount;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& rec = r.records[i];
    EXPECT_EQ(rec.id, samples[i].id);
    EXPECT_EQ(rec.label, samples[i].label);
    const bool correct = rec.predicted == rec.label;
    const bool certain = rec.clf_phi_norm < cfg.clf_threshold;
    const auto expected = correct ? (certain ? uncertainty::TriageCategory::cc : uncertainty::TriageCategory::cu)
                                  : (certain ? uncertainty::TriageCategory::ic : uncertainty::TriageCategory::iu);
    EXPECT_EQ(rec.category, expected);
    uncertainty::accumulate(recount, rec.category);
  }
  EXPECT_EQ(recount, r.counts);
  EXPECT_NEAR(r.diagnostic_accuracy, uncertainty::diagnostic_accuracy(r.counts), 1e-15);
  const auto json = nlohmann::json::parse(evaluation_json(r));
  EXPECT_TRUE(json.contains("counts"));
  const auto csv = evaluation_csv(r);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), static_cast<long>(samples.size() + 1));
}

TEST(Config, RoundTripAndValidation) {
  PipelineConfig cfg;
  cfg.seg_threshold = 0.2;
  cfg.mask_mode = MaskMode::crop_bbox_margin;
  cfg.explainer = saliency::Method::guided_backprop;
  cfg.bounds = uncertainty::Bounds::empirical;
  KeyValues kv;
  cfg.write(kv, "pipeline.");
  const auto back = PipelineConfig::read(kv, "pipeline.");
  EXPECT_EQ(back.seg_threshold, 0.2);
  EXPECT_EQ(back.mask_mode, MaskMode::crop_bbox_margin);
  EXPECT_EQ(back.explainer, saliency::Method::guided_backprop);
  EXPECT_EQ(back.bounds, uncertainty::Bounds::empirical);
  KeyValues again;
  back.write(again, "pipeline.");
  EXPECT_EQ(again, kv);
  PipelineConfig defaults;
  EXPECT_EQ(defaults.seg_threshold, 0.25);
  EXPECT_EQ(defaults.clf_threshold, 0.35);
  EXPECT_THROW(parse_mask_mode("blur"), ValidationError);
}
