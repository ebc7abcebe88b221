#pragma once

// Sampling estimators of predictive uncertainty.
//
// Three modes share one engine. Epistemic sampling repeats stochastic
// forwards (dropout on) over the unaugmented input; aleatoric sampling runs
// deterministic forwards over a test-time augmentation family; combined
// sampling pairs augmentation draw m with dropout seed m. All randomness is
// derived from the caller's seed through named sub-streams:
//
//   dropout seed of sample m   = derive_seed(derive_seed(seed, "dropout"), m)
//   augmentation draws         = data::tta_draws(count, derive_seed(seed, "tta"), spec)
//
// so the combined mode reproduces the other two exactly when either source of
// randomness is switched off.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "skinet/core.hpp"
#include "skinet/data.hpp"
#include "skinet/model.hpp"

namespace skinet::uncertainty {

enum class SamplingMode { epistemic, aleatoric, combined };

std::string to_string(SamplingMode mode);
SamplingMode parse_sampling_mode(const std::string& text);

/// How phi_norm is scaled.
enum class Bounds {
  analytic,   // [0, ln N] for N classes
  empirical,  // [min phi, max phi] over an evaluated batch
};

std::string to_string(Bounds b);
Bounds parse_bounds(const std::string& text);

struct SamplingOptions {
  /// Transform family used by the aleatoric and combined modes.
  data::AugmentationSpec augmentation;
  /// Certain iff phi_norm < threshold.
  double threshold = 0.35;
};

struct SampleSet {
  SamplingMode mode = SamplingMode::combined;
  std::vector<ProbabilityVector> samples;
  /// Per-sample dropout seed; empty for the aleatoric mode.
  std::vector<std::uint64_t> dropout_seeds;
  /// Per-sample augmentation; all identity for the epistemic mode.
  std::vector<data::AugmentDraw> draws;

  std::size_t count() const { return samples.size(); }
};

struct Prediction {
  ProbabilityVector mean;
  int predicted_class = -1;  // argmax of mean, smallest index on ties
  std::string predicted_label;
  UncertaintyRecord uncertainty;
};

struct Estimate {
  Prediction prediction;
  SampleSet samples;
};

/// Element-wise average. All samples must have the same length.
ProbabilityVector mean_of(std::span<const ProbabilityVector> samples);

/// Mean, argmax and entropy of a sample set with analytic bounds [0, ln N].
Prediction summarize(std::span<const ProbabilityVector> samples, double threshold);

/// Re-scales phi_norm over the batch's own [min phi, max phi]. A batch whose
/// entropies are all equal maps every phi_norm to 0.
void renormalize_empirical(std::span<Prediction> batch);

/// Dropout seed of sample m.
std::uint64_t dropout_seed(std::uint64_t seed, std::size_t m);

/// Average of `count` stochastic forwards on the unaugmented input.
Estimate mc_dropout_predict(const ClassifierModel& model, const Image& img, int count, std::uint64_t seed,
                            const SamplingOptions& opts = {});
/// Average of deterministic forwards over tta_family(img, count).
Estimate tta_predict(const ClassifierModel& model, const Image& img, int count, std::uint64_t seed,
                     const SamplingOptions& opts = {});
/// Fresh augmentation and fresh dropout masks for each of `count` iterations.
Estimate combined_predict(const ClassifierModel& model, const Image& img, int count, std::uint64_t seed,
                          const SamplingOptions& opts = {});
Estimate predict(SamplingMode mode, const ClassifierModel& model, const Image& img, int count, std::uint64_t seed,
                 const SamplingOptions& opts = {});

/// Per-pixel uncertainty of a segmentation.
struct SegUncertainty {
  ProbMap mean_map;
  ProbMap pixel_entropy_map;  // binary entropy of mean_map, nats
  double scalar_phi_norm = 0.0;
  SamplingMode mode = SamplingMode::combined;
};

enum class SegAggregation {
  whole_frame,    // mean normalized entropy over every pixel
  lesion_region,  // over pixels with mean >= 0.5; whole frame if there are none
};

std::string to_string(SegAggregation a);
SegAggregation parse_seg_aggregation(const std::string& text);

/// Summarizes same-shaped probability maps.
SegUncertainty summarize_maps(std::span<const ProbMap> maps, SegAggregation aggregation = SegAggregation::whole_frame);

/// Sampled segmentation uncertainty. Maps predicted on augmented inputs are
/// mapped back to the original frame before averaging.
SegUncertainty seg_uncertainty(const SegmenterModel& model, const Image& img, int count, std::uint64_t seed,
                               SamplingMode mode = SamplingMode::combined, const data::AugmentationSpec& spec = {},
                               SegAggregation aggregation = SegAggregation::whole_frame);

enum class TriageCategory { cc, cu, ic, iu };
enum class Verdict { certain, refer_to_expert };

std::string to_string(TriageCategory c);
std::string to_string(Verdict v);

/// Certain iff phi_norm < threshold. threshold must lie in [0,1].
Verdict triage(const Prediction& pred, double threshold);
TriageCategory triage(const Prediction& pred, int truth, double threshold);

void accumulate(TriageCounts& counts, TriageCategory c);

/// (cc + iu) / total. Throws ValidationError when total is 0.
double diagnostic_accuracy(const TriageCounts& counts);
/// (cc + cu) / total, the plain prediction accuracy.
double prediction_accuracy(const TriageCounts& counts);

}  // namespace skinet::uncertainty
