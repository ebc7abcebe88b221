#pragma once

// Two-stage diagnosis: segment with uncertainty, classify the masked image
// when the segmentation is certain (the original otherwise), gate the
// diagnosis on its own uncertainty and explain certain predictions.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "skinet/data.hpp"
#include "skinet/differentiable.hpp"
#include "skinet/keyvalue.hpp"
#include "skinet/model.hpp"
#include "skinet/saliency.hpp"
#include "skinet/uncertainty.hpp"

namespace skinet::pipeline {

enum class MaskMode { crop_bbox_margin, multiply, multiply_then_crop };

std::string to_string(MaskMode m);
MaskMode parse_mask_mode(const std::string& text);

struct PipelineConfig {
  double seg_threshold = 0.25;
  double clf_threshold = 0.35;
  MaskMode mask_mode = MaskMode::multiply_then_crop;
  double margin = 0.10;  // of the bounding-box size, added on each side
  int samples = 30;      // M for both stages
  double mask_threshold = 0.5;
  saliency::Method explainer = saliency::Method::xrai;
  /// Attach an attribution map to certain diagnoses.
  bool explain = true;
  uncertainty::SegAggregation seg_aggregation = uncertainty::SegAggregation::whole_frame;
  /// Scaling of the classifier phi_norm in evaluate_pipeline.
  uncertainty::Bounds bounds = uncertainty::Bounds::analytic;
  data::AugmentationSpec augmentation;
  saliency::XraiParams xrai;

  void validate() const;
  void write(KeyValues& kv, const std::string& prefix) const;
  static PipelineConfig read(const KeyValues& kv, const std::string& prefix);
};

struct MaskResult {
  Image image;
  /// Bounding box of the mask before the margin, if the mask was non-empty.
  std::optional<data::Box> box;
  /// Crop window actually cut out, in input pixels.
  std::optional<data::Box> window;
  /// Set when an empty mask forced a fallback.
  std::string warning;
};

/// Mask application. crop_bbox_margin crops to the bounding box grown by
/// margin * box size on each side (clamped to the frame) and resizes back to
/// the input size; multiply zeroes the background; multiply_then_crop does
/// both. An empty mask returns the original image for the crop modes and an
/// all-zero image for multiply, with a warning either way.
MaskResult apply_mask(const Image& img, const BinaryMask& mask, MaskMode mode, double margin);

struct SegStage {
  uncertainty::SegUncertainty uncertainty;  // holds the mean map
  BinaryMask mask;
  bool used = false;
};

struct DiagnosisReport {
  std::string input_id;
  SegStage seg;
  /// The exact raster handed to the classifier.
  Image classifier_input;
  uncertainty::Prediction clf;
  uncertainty::Verdict verdict = uncertainty::Verdict::refer_to_expert;
  std::optional<saliency::AttributionMap> saliency;
  std::vector<std::string> warnings;
  /// Wall-clock per stage; kept out of the JSON so reports stay reproducible.
  std::map<std::string, double> timings_ms;
};

struct Routing {
  SegStage seg;
  /// What the classifier sees, at the input resolution: the masked image when
  /// the segmentation is certain and non-empty, the original otherwise.
  Image image;
  std::vector<std::string> warnings;
};

/// The segmentation half of skinet_infer, seeded with derive_seed(seed, "seg").
Routing route_input(const SegmenterModel& seg, const Image& img, const PipelineConfig& cfg, std::uint64_t seed);

/// Sub-streams: derive_seed(seed, "seg"), derive_seed(seed, "clf"),
/// derive_seed(seed, "saliency").
DiagnosisReport skinet_infer(const SegmenterModel& seg, const DifferentiableClassifier& clf, const Image& img,
                             const PipelineConfig& cfg, std::uint64_t seed, const std::string& input_id = "");

struct ImageRecord {
  std::string id;
  int label = -1;
  int predicted = -1;
  double seg_phi_norm = 0.0;
  bool seg_used = false;
  double clf_phi_norm = 0.0;
  uncertainty::TriageCategory category = uncertainty::TriageCategory::iu;
};

struct EvaluationResult {
  TriageCounts counts;
  double diagnostic_accuracy = 0.0;
  double prediction_accuracy = 0.0;
  std::vector<ImageRecord> records;
};

/// Runs skinet_infer on every sample (image i with derive_seed(seed, i)),
/// without explanations, and accumulates the triage counts.
EvaluationResult evaluate_pipeline(const SegmenterModel& seg, const DifferentiableClassifier& clf,
                                   std::span<const data::ClfSample> samples, const PipelineConfig& cfg,
                                   std::uint64_t seed);
EvaluationResult evaluate_pipeline(const SegmenterModel& seg, const DifferentiableClassifier& clf,
                                   const data::DatasetManifest& manifest, const PipelineConfig& cfg,
                                   std::uint64_t seed);

/// JSON report, schema_version 1.
std::string report_json(const DiagnosisReport& report);
/// Throws ValidationError naming the first missing or mistyped field.
void validate_report_json(const std::string& text);

/// report.json plus mask_overlay.png, uncertainty.png, saliency_overlay.png
/// (when present), posterior.png, saliency.npy and timings.json.
void write_report_bundle(const std::filesystem::path& dir, const DiagnosisReport& report, const Image& original);

/// Light greenish-blue rendering of a per-pixel entropy map (0..ln 2).
data::RawImage uncertainty_image(const ProbMap& pixel_entropy);
/// Lesion mask outline blended over the image.
data::RawImage mask_overlay(const Image& img, const BinaryMask& mask);
/// Bar chart of the posterior, one bar per class.
data::RawImage posterior_chart(const ProbabilityVector& p, double threshold_phi_norm, double phi_norm);

std::string evaluation_json(const EvaluationResult& result);
std::string evaluation_csv(const EvaluationResult& result);

}  // namespace skinet::pipeline
