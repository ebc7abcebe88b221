#include "skinet/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "skinet/errors.hpp"

namespace skinet::pipeline {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

BinaryMask resize_nearest(const BinaryMask& mask, int height, int width) {
  if (mask.height == height && mask.width == width) return mask;
  BinaryMask out(height, width);
  for (int r = 0; r < height; ++r) {
    const int sr = std::min(mask.height - 1, static_cast<int>((r + 0.5) * mask.height / height));
    for (int c = 0; c < width; ++c) {
      const int sc = std::min(mask.width - 1, static_cast<int>((c + 0.5) * mask.width / width));
      out.set(r, c, mask.at(sr, sc));
    }
  }
  return out;
}

Image fit(const Image& img, int size) {
  if (img.height == size && img.width == size) return img;
  return data::resize_image(img, size, size);
}

std::optional<data::Box> bounding_box(const BinaryMask& mask) {
  data::Box box{mask.height, mask.width, 0, 0};
  bool any = false;
  for (int r = 0; r < mask.height; ++r) {
    for (int c = 0; c < mask.width; ++c) {
      if (!mask.at(r, c)) continue;
      any = true;
      box.row0 = std::min(box.row0, r);
      box.col0 = std::min(box.col0, c);
      box.row1 = std::max(box.row1, r + 1);
      box.col1 = std::max(box.col1, c + 1);
    }
  }
  if (!any) return std::nullopt;
  return box;
}

Image crop(const Image& img, const data::Box& w) {
  Image out(w.row1 - w.row0, w.col1 - w.col0, img.channels);
  for (int r = w.row0; r < w.row1; ++r) {
    for (int c = w.col0; c < w.col1; ++c) {
      for (int ch = 0; ch < img.channels; ++ch) out.at(r - w.row0, c - w.col0, ch) = img.at(r, c, ch);
    }
  }
  return out;
}

}  // namespace

std::string to_string(MaskMode m) {
  switch (m) {
    case MaskMode::crop_bbox_margin:
      return "crop_bbox_margin";
    case MaskMode::multiply:
      return "multiply";
    case MaskMode::multiply_then_crop:
      return "multiply_then_crop";
  }
  return "multiply_then_crop";
}

MaskMode parse_mask_mode(const std::string& text) {
  if (text == "crop_bbox_margin" || text == "crop") return MaskMode::crop_bbox_margin;
  if (text == "multiply") return MaskMode::multiply;
  if (text == "multiply_then_crop") return MaskMode::multiply_then_crop;
  throw ValidationError("unknown mask mode '" + text + "'");
}

void PipelineConfig::validate() const {
  if (!(seg_threshold >= 0.0 && seg_threshold <= 1.0)) throw ValidationError("pipeline.seg_threshold must lie in [0,1]");
  if (!(clf_threshold >= 0.0 && clf_threshold <= 1.0)) throw ValidationError("pipeline.clf_threshold must lie in [0,1]");
  if (!(margin >= 0.0)) throw ValidationError("pipeline.margin must be non-negative");
  if (samples < 2) throw ValidationError("pipeline.samples must be >= 2");
  if (!(mask_threshold > 0.0 && mask_threshold < 1.0)) throw ValidationError("pipeline.mask_threshold must lie in (0,1)");
  augmentation.validate();
  xrai.validate();
}

void PipelineConfig::write(KeyValues& kv, const std::string& prefix) const {
  kv.set(prefix + "seg_threshold", seg_threshold);
  kv.set(prefix + "clf_threshold", clf_threshold);
  kv.set(prefix + "mask_mode", to_string(mask_mode));
  kv.set(prefix + "margin", margin);
  kv.set(prefix + "samples", samples);
  kv.set(prefix + "mask_threshold", mask_threshold);
  kv.set(prefix + "explainer", saliency::to_string(explainer));
  kv.set(prefix + "explain", explain);
  kv.set(prefix + "seg_aggregation", uncertainty::to_string(seg_aggregation));
  kv.set(prefix + "bounds", uncertainty::to_string(bounds));
  kv.set(prefix + "augment.hflip", augmentation.allow_hflip);
  kv.set(prefix + "augment.vflip", augmentation.allow_vflip);
  kv.set(prefix + "augment.flip_probability", augmentation.flip_probability);
  kv.set(prefix + "augment.rotation_min", augmentation.rotation_min);
  kv.set(prefix + "augment.rotation_max", augmentation.rotation_max);
  kv.set("xrai.ig_steps", xrai.ig_steps);
  std::string scales;
  for (std::size_t i = 0; i < xrai.scales.size(); ++i) scales += (i ? "," : "") + format_double(xrai.scales[i]);
  kv.set("xrai.scales", scales);
  kv.set("xrai.sigma", xrai.sigma);
  kv.set("xrai.min_size", xrai.min_size);
  kv.set("xrai.dilation_radius", xrai.dilation_radius);
  kv.set("xrai.min_pixel_diff", xrai.min_pixel_diff);
}

PipelineConfig PipelineConfig::read(const KeyValues& kv, const std::string& prefix) {
  PipelineConfig c;
  c.seg_threshold = kv.get_double(prefix + "seg_threshold", c.seg_threshold);
  c.clf_threshold = kv.get_double(prefix + "clf_threshold", c.clf_threshold);
  c.mask_mode = parse_mask_mode(kv.get_string(prefix + "mask_mode", to_string(c.mask_mode)));
  c.margin = kv.get_double(prefix + "margin", c.margin);
  c.samples = static_cast<int>(kv.get_int(prefix + "samples", c.samples));
  c.mask_threshold = kv.get_double(prefix + "mask_threshold", c.mask_threshold);
  c.explainer = saliency::parse_method(kv.get_string(prefix + "explainer", saliency::to_string(c.explainer)));
  c.explain = kv.get_bool(prefix + "explain", c.explain);
  c.seg_aggregation =
      uncertainty::parse_seg_aggregation(kv.get_string(prefix + "seg_aggregation", uncertainty::to_string(c.seg_aggregation)));
  c.bounds = uncertainty::parse_bounds(kv.get_string(prefix + "bounds", uncertainty::to_string(c.bounds)));
  auto& a = c.augmentation;
  a.allow_hflip = kv.get_bool(prefix + "augment.hflip", a.allow_hflip);
  a.allow_vflip = kv.get_bool(prefix + "augment.vflip", a.allow_vflip);
  a.flip_probability = kv.get_double(prefix + "augment.flip_probability", a.flip_probability);
  a.rotation_min = kv.get_double(prefix + "augment.rotation_min", a.rotation_min);
  a.rotation_max = kv.get_double(prefix + "augment.rotation_max", a.rotation_max);
  auto& x = c.xrai;
  x.ig_steps = static_cast<int>(kv.get_int("xrai.ig_steps", x.ig_steps));
  x.scales = kv.get_doubles("xrai.scales", x.scales);
  x.sigma = kv.get_double("xrai.sigma", x.sigma);
  x.min_size = static_cast<int>(kv.get_int("xrai.min_size", x.min_size));
  x.dilation_radius = static_cast<int>(kv.get_int("xrai.dilation_radius", x.dilation_radius));
  x.min_pixel_diff = static_cast<int>(kv.get_int("xrai.min_pixel_diff", x.min_pixel_diff));
  return c;
}

MaskResult apply_mask(const Image& img, const BinaryMask& mask, MaskMode mode, double margin) {
  if (mask.height != img.height || mask.width != img.width) {
    throw ValidationError("mask does not match the image it is applied to");
  }
  if (!(margin >= 0.0)) throw ValidationError("crop margin must be non-negative");
  MaskResult out;
  out.box = bounding_box(mask);
  if (!out.box) {
    if (mode == MaskMode::multiply) {
      out.image = Image(img.height, img.width, img.channels, 0.0F);
      out.warning = "empty lesion mask: multiply produced an all-zero image";
    } else {
      out.image = img;
      out.warning = "empty lesion mask: passing the original image through";
    }
    return out;
  }

  Image work = img;
  if (mode != MaskMode::crop_bbox_margin) {
    for (int r = 0; r < img.height; ++r) {
      for (int c = 0; c < img.width; ++c) {
        if (mask.at(r, c)) continue;
        for (int ch = 0; ch < img.channels; ++ch) work.at(r, c, ch) = 0.0F;
      }
    }
  }
  if (mode == MaskMode::multiply) {
    out.image = std::move(work);
    return out;
  }

  const auto& b = *out.box;
  const int dr = static_cast<int>(std::lround(margin * (b.row1 - b.row0)));
  const int dc = static_cast<int>(std::lround(margin * (b.col1 - b.col0)));
  data::Box w{std::max(0, b.row0 - dr), std::max(0, b.col0 - dc), std::min(img.height, b.row1 + dr),
              std::min(img.width, b.col1 + dc)};
  out.window = w;
  out.image = data::resize_image(crop(work, w), img.height, img.width);
  return out;
}

Routing route_input(const SegmenterModel& seg, const Image& img, const PipelineConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  img.validate_unit_range();
  Routing r;
  try {
    r.seg.uncertainty = uncertainty::seg_uncertainty(seg, fit(img, seg.input_size()), cfg.samples,
                                                     derive_seed(seed, "seg"), uncertainty::SamplingMode::combined,
                                                     cfg.augmentation, cfg.seg_aggregation);
  } catch (const Error& e) {
    throw Error(std::string("segmentation stage: ") + e.what());
  }
  r.seg.mask = resize_nearest(binarize(r.seg.uncertainty.mean_map, cfg.mask_threshold), img.height, img.width);
  r.seg.used = r.seg.uncertainty.scalar_phi_norm < cfg.seg_threshold;
  r.image = img;
  if (r.seg.used) {
    auto masked = apply_mask(img, r.seg.mask, cfg.mask_mode, cfg.margin);
    if (!masked.warning.empty()) r.warnings.push_back(masked.warning);
    // An empty mask that would blank the input falls back to the original.
    if (masked.box) r.image = std::move(masked.image);
  }
  return r;
}

DiagnosisReport skinet_infer(const SegmenterModel& seg, const DifferentiableClassifier& clf, const Image& img,
                             const PipelineConfig& cfg, std::uint64_t seed, const std::string& input_id) {
  DiagnosisReport report;
  report.input_id = input_id;

  auto start = Clock::now();
  auto routing = route_input(seg, img, cfg, seed);
  report.seg = std::move(routing.seg);
  report.warnings = std::move(routing.warnings);
  report.classifier_input = fit(routing.image, clf.input_size());
  report.timings_ms["segmentation"] = elapsed_ms(start);

  start = Clock::now();
  try {
    uncertainty::SamplingOptions opts;
    opts.augmentation = cfg.augmentation;
    opts.threshold = cfg.clf_threshold;
    report.clf =
        uncertainty::combined_predict(clf, report.classifier_input, cfg.samples, derive_seed(seed, "clf"), opts).prediction;
  } catch (const Error& e) {
    throw Error(std::string("classification stage: ") + e.what());
  }
  report.verdict = uncertainty::triage(report.clf, cfg.clf_threshold);
  report.timings_ms["classification"] = elapsed_ms(start);

  if (cfg.explain && report.verdict == uncertainty::Verdict::certain) {
    start = Clock::now();
    report.saliency = saliency::explain(cfg.explainer, clf, report.classifier_input, report.clf.predicted_class, cfg.xrai,
                                        derive_seed(seed, "saliency"));
    report.timings_ms["saliency"] = elapsed_ms(start);
  }
  return report;
}

EvaluationResult evaluate_pipeline(const SegmenterModel& seg, const DifferentiableClassifier& clf,
                                   std::span<const data::ClfSample> samples, const PipelineConfig& cfg,
                                   std::uint64_t seed) {
  if (samples.empty()) throw ValidationError("pipeline evaluation needs at least one labelled image");
  PipelineConfig run = cfg;
  run.explain = false;
  std::vector<uncertainty::Prediction> preds;
  EvaluationResult result;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    const auto report = skinet_infer(seg, clf, s.image, run, derive_seed(seed, static_cast<std::uint64_t>(i)), s.id);
    preds.push_back(report.clf);
    ImageRecord rec;
    rec.id = s.id;
    rec.label = s.label;
    rec.predicted = report.clf.predicted_class;
    rec.seg_phi_norm = report.seg.uncertainty.scalar_phi_norm;
    rec.seg_used = report.seg.used;
    result.records.push_back(rec);
  }
  if (cfg.bounds == uncertainty::Bounds::empirical) uncertainty::renormalize_empirical(preds);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    auto& rec = result.records[i];
    rec.clf_phi_norm = preds[i].uncertainty.phi_norm;
    rec.category = uncertainty::triage(preds[i], rec.label, cfg.clf_threshold);
    uncertainty::accumulate(result.counts, rec.category);
  }
  result.diagnostic_accuracy = uncertainty::diagnostic_accuracy(result.counts);
  result.prediction_accuracy = uncertainty::prediction_accuracy(result.counts);
  return result;
}

EvaluationResult evaluate_pipeline(const SegmenterModel& seg, const DifferentiableClassifier& clf,
                                   const data::DatasetManifest& manifest, const PipelineConfig& cfg,
                                   std::uint64_t seed) {
  if (manifest.entries.empty()) throw ValidationError("pipeline evaluation manifest is empty");
  const auto samples = data::load_classification_samples(manifest, clf.input_size());
  return evaluate_pipeline(seg, clf, samples, cfg, seed);
}

}  // namespace skinet::pipeline
