#include "skinet/uncertainty.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "skinet/errors.hpp"

namespace skinet::uncertainty {

namespace {

void require_count(int count, const char* what) {
  if (count < 2) {
    throw ValidationError(std::string(what) + " needs at least 2 samples, got " + std::to_string(count));
  }
}

void require_threshold(double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    throw ValidationError("uncertainty threshold must lie in [0,1], got " + std::to_string(threshold));
  }
}

}  // namespace

std::string to_string(SamplingMode mode) {
  switch (mode) {
    case SamplingMode::epistemic:
      return "epistemic";
    case SamplingMode::aleatoric:
      return "aleatoric";
    case SamplingMode::combined:
      return "combined";
  }
  return "combined";
}

SamplingMode parse_sampling_mode(const std::string& text) {
  if (text == "epistemic" || text == "mc_dropout") return SamplingMode::epistemic;
  if (text == "aleatoric" || text == "tta") return SamplingMode::aleatoric;
  if (text == "combined") return SamplingMode::combined;
  throw ValidationError("unknown sampling mode '" + text + "'");
}

std::string to_string(Bounds b) { return b == Bounds::empirical ? "empirical" : "analytic"; }

Bounds parse_bounds(const std::string& text) {
  if (text == "analytic") return Bounds::analytic;
  if (text == "empirical") return Bounds::empirical;
  throw ValidationError("unknown normalization bounds '" + text + "'");
}

ProbabilityVector mean_of(std::span<const ProbabilityVector> samples) {
  if (samples.empty()) throw ValidationError("cannot average an empty sample set");
  ProbabilityVector mean;
  mean.class_labels = samples.front().class_labels;
  mean.probs.assign(samples.front().size(), 0.0);
  for (const auto& s : samples) {
    if (s.size() != mean.size()) throw ValidationError("samples disagree on the number of classes");
    for (std::size_t k = 0; k < s.size(); ++k) mean.probs[k] += s.probs[k];
  }
  const auto n = static_cast<double>(samples.size());
  for (double& p : mean.probs) p /= n;
  return mean;
}

Prediction summarize(std::span<const ProbabilityVector> samples, double threshold) {
  require_threshold(threshold);
  Prediction pred;
  pred.mean = mean_of(samples);
  pred.mean.validate();
  pred.predicted_class = pred.mean.argmax();
  if (static_cast<std::size_t>(pred.predicted_class) < pred.mean.class_labels.size()) {
    pred.predicted_label = pred.mean.class_labels[static_cast<std::size_t>(pred.predicted_class)];
  }
  const double phi_max = std::log(static_cast<double>(pred.mean.size()));
  pred.uncertainty = make_uncertainty_record(entropy(pred.mean), 0.0, phi_max, threshold);
  return pred;
}

void renormalize_empirical(std::span<Prediction> batch) {
  if (batch.empty()) return;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (const auto& p : batch) {
    lo = std::min(lo, p.uncertainty.phi);
    hi = std::max(hi, p.uncertainty.phi);
  }
  for (auto& p : batch) {
    auto& u = p.uncertainty;
    if (hi > lo) {
      u = make_uncertainty_record(u.phi, lo, hi, u.threshold);
    } else {
      u.phi_min = lo;
      u.phi_max = hi;
      u.phi_norm = 0.0;
      u.is_certain = u.phi_norm < u.threshold;
    }
  }
}

std::uint64_t dropout_seed(std::uint64_t seed, std::size_t m) {
  return derive_seed(derive_seed(seed, "dropout"), static_cast<std::uint64_t>(m));
}

namespace {

Estimate run(SamplingMode mode, const ClassifierModel& model, const Image& img, int count, std::uint64_t seed,
             const SamplingOptions& opts) {
  const bool dropout = mode != SamplingMode::aleatoric;
  const auto n = static_cast<std::size_t>(count);
  Estimate est;
  est.samples.mode = mode;
  if (mode == SamplingMode::epistemic) {
    est.samples.draws.assign(n, data::AugmentDraw{});
  } else {
    est.samples.draws = data::tta_draws(count, derive_seed(seed, "tta"), opts.augmentation);
  }
  est.samples.samples.reserve(n);
  for (std::size_t m = 0; m < n; ++m) {
    const auto& draw = est.samples.draws[m];
    const Image input = draw.is_identity() ? img : data::apply_augmentation(img, draw);
    const std::uint64_t s = dropout ? dropout_seed(seed, m) : 0;
    if (dropout) est.samples.dropout_seeds.push_back(s);
    est.samples.samples.push_back(model.predict(input, dropout, s));
  }
  est.prediction = summarize(est.samples.samples, opts.threshold);
  return est;
}

}  // namespace

Estimate mc_dropout_predict(const ClassifierModel& model, const Image& img, int count, std::uint64_t seed,
                            const SamplingOptions& opts) {
  require_count(count, "Monte-Carlo dropout");
  return run(SamplingMode::epistemic, model, img, count, seed, opts);
}

Estimate tta_predict(const ClassifierModel& model, const Image& img, int count, std::uint64_t seed,
                     const SamplingOptions& opts) {
  require_count(count, "test-time augmentation");
  return run(SamplingMode::aleatoric, model, img, count, seed, opts);
}

Estimate combined_predict(const ClassifierModel& model, const Image& img, int count, std::uint64_t seed,
                          const SamplingOptions& opts) {
  require_count(count, "combined sampling");
  return run(SamplingMode::combined, model, img, count, seed, opts);
}

Estimate predict(SamplingMode mode, const ClassifierModel& model, const Image& img, int count, std::uint64_t seed,
                 const SamplingOptions& opts) {
  require_count(count, "uncertainty sampling");
  return run(mode, model, img, count, seed, opts);
}

std::string to_string(SegAggregation a) { return a == SegAggregation::lesion_region ? "lesion_region" : "whole_frame"; }

SegAggregation parse_seg_aggregation(const std::string& text) {
  if (text == "whole_frame") return SegAggregation::whole_frame;
  if (text == "lesion_region") return SegAggregation::lesion_region;
  throw ValidationError("unknown segmentation aggregation '" + text + "'");
}

SegUncertainty summarize_maps(std::span<const ProbMap> maps, SegAggregation aggregation) {
  if (maps.empty()) throw ValidationError("cannot summarize an empty set of maps");
  const int h = maps.front().height;
  const int w = maps.front().width;
  const std::size_t n = static_cast<std::size_t>(h) * w;
  std::vector<double> sum(n, 0.0);
  for (const auto& m : maps) {
    if (m.height != h || m.width != w) throw ValidationError("probability maps disagree in shape");
    for (std::size_t i = 0; i < n; ++i) {
      const double v = m.values[i];
      if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("probability map value outside [0,1]");
      sum[i] += v;
    }
  }
  SegUncertainty out;
  out.mean_map = ProbMap(h, w);
  out.pixel_entropy_map = ProbMap(h, w);
  const double count = static_cast<double>(maps.size());
  double total = 0.0;
  double lesion_total = 0.0;
  std::size_t lesion_pixels = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double mean = sum[i] / count;
    const double hbits = binary_entropy(mean) / std::numbers::ln2;
    out.mean_map.values[i] = static_cast<float>(mean);
    out.pixel_entropy_map.values[i] = static_cast<float>(binary_entropy(mean));
    total += hbits;
    if (mean >= 0.5) {
      lesion_total += hbits;
      ++lesion_pixels;
    }
  }
  double scalar = n ? total / static_cast<double>(n) : 0.0;
  if (aggregation == SegAggregation::lesion_region && lesion_pixels > 0) {
    scalar = lesion_total / static_cast<double>(lesion_pixels);
  }
  out.scalar_phi_norm = std::clamp(scalar, 0.0, 1.0);
  return out;
}

SegUncertainty seg_uncertainty(const SegmenterModel& model, const Image& img, int count, std::uint64_t seed,
                               SamplingMode mode, const data::AugmentationSpec& spec, SegAggregation aggregation) {
  require_count(count, "segmentation uncertainty");
  const bool dropout = mode != SamplingMode::aleatoric;
  const auto n = static_cast<std::size_t>(count);
  std::vector<data::AugmentDraw> draws =
      mode == SamplingMode::epistemic ? std::vector<data::AugmentDraw>(n) : data::tta_draws(count, derive_seed(seed, "tta"), spec);
  std::vector<ProbMap> maps;
  maps.reserve(n);
  for (std::size_t m = 0; m < n; ++m) {
    const auto& draw = draws[m];
    const std::uint64_t s = dropout ? dropout_seed(seed, m) : 0;
    if (draw.is_identity()) {
      maps.push_back(model.predict(img, dropout, s));
    } else {
      maps.push_back(data::invert_augmentation(model.predict(data::apply_augmentation(img, draw), dropout, s), draw));
    }
  }
  auto out = summarize_maps(maps, aggregation);
  out.mode = mode;
  return out;
}

std::string to_string(TriageCategory c) {
  switch (c) {
    case TriageCategory::cc:
      return "cc";
    case TriageCategory::cu:
      return "cu";
    case TriageCategory::ic:
      return "ic";
    case TriageCategory::iu:
      return "iu";
  }
  return "iu";
}

std::string to_string(Verdict v) { return v == Verdict::certain ? "certain" : "refer_to_expert"; }

Verdict triage(const Prediction& pred, double threshold) {
  require_threshold(threshold);
  return pred.uncertainty.phi_norm < threshold ? Verdict::certain : Verdict::refer_to_expert;
}

TriageCategory triage(const Prediction& pred, int truth, double threshold) {
  const bool certain = triage(pred, threshold) == Verdict::certain;
  const bool correct = pred.predicted_class == truth;
  if (correct) return certain ? TriageCategory::cc : TriageCategory::cu;
  return certain ? TriageCategory::ic : TriageCategory::iu;
}

void accumulate(TriageCounts& counts, TriageCategory c) {
  switch (c) {
    case TriageCategory::cc:
      ++counts.cc;
      break;
    case TriageCategory::cu:
      ++counts.cu;
      break;
    case TriageCategory::ic:
      ++counts.ic;
      break;
    case TriageCategory::iu:
      ++counts.iu;
      break;
  }
}

double diagnostic_accuracy(const TriageCounts& counts) {
  if (counts.cc < 0 || counts.cu < 0 || counts.ic < 0 || counts.iu < 0) {
    throw ValidationError("triage counts must be non-negative");
  }
  if (counts.total() == 0) throw ValidationError("diagnostic accuracy of an empty evaluation is undefined");
  return static_cast<double>(counts.cc + counts.iu) / static_cast<double>(counts.total());
}

double prediction_accuracy(const TriageCounts& counts) {
  if (counts.total() <= 0) throw ValidationError("prediction accuracy of an empty evaluation is undefined");
  return static_cast<double>(counts.cc + counts.cu) / static_cast<double>(counts.total());
}

}  // namespace skinet::uncertainty
