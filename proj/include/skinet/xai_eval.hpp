#pragma once

// Bokeh benchmark for explainers: blur the image, paste back the pixels an
// explainer ranks highest, and see whether the classifier still agrees with
// the ground truth.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "skinet/data.hpp"
#include "skinet/differentiable.hpp"
#include "skinet/keyvalue.hpp"
#include "skinet/saliency.hpp"

namespace skinet::xai_eval {

struct BokehParams {
  double sigma = 8.0;           // Gaussian blur, pixels
  double keep_fraction = 0.10;  // share of pixels kept sharp

  void validate() const;
  void write(KeyValues& kv, const std::string& prefix) const;
  static BokehParams read(const KeyValues& kv, const std::string& prefix);
};

/// Gaussian blur of img with the masked pixels copied back verbatim.
Image bokeh_reconstruct(const Image& img, const BinaryMask& keep, const BokehParams& params);

struct ExplainerRecord {
  std::string image;
  std::string explainer;
  double fraction = 0.0;
  int label = -1;
  int predicted_before = -1;
  int predicted_after = -1;
  bool correct_after = false;
};

struct ExplainerResult {
  saliency::Method method = saliency::Method::xrai;
  double fraction = 0.0;
  double baseline_accuracy = 0.0;  // deterministic accuracy on the untouched images
  double retained_accuracy = 0.0;  // accuracy on the reconstructions
  std::vector<ExplainerRecord> records;
};

/// Attribution target is the model's own deterministic prediction. The
/// random explainer draws image i from derive_seed(seed, i).
ExplainerResult evaluate_explainer(const DifferentiableClassifier& model, std::span<const data::ClfSample> samples,
                                   saliency::Method method, const BokehParams& params,
                                   const saliency::XraiParams& xrai = {}, std::uint64_t seed = 0);
ExplainerResult evaluate_explainer(const DifferentiableClassifier& model, const data::DatasetManifest& manifest,
                                   saliency::Method method, const BokehParams& params,
                                   const saliency::XraiParams& xrai = {}, std::uint64_t seed = 0);

/// CSV with header image,explainer,fraction,label,predicted_before,predicted_after,correct_after.
std::string records_csv(std::span<const ExplainerResult> results);
/// Per-explainer retained accuracies, JSON.
std::string summary_json(std::span<const ExplainerResult> results);

}  // namespace skinet::xai_eval
