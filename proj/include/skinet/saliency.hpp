#pragma once

// Post-hoc attribution for DifferentiableClassifier models.
//
// Class scores are pre-softmax logits. Every explainer builds its own
// ForwardContext, so the guided ReLU rule and activation capture never leak
// into other passes over the same model.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "skinet/core.hpp"
#include "skinet/data.hpp"
#include "skinet/differentiable.hpp"

namespace skinet::saliency {

enum class Method { guided_backprop, grad_cam, guided_grad_cam, integrated_gradients, xrai, random };

/// Short names: gb, gradcam, ggc, ig, xrai, random.
std::string to_string(Method m);
Method parse_method(const std::string& text);

struct AttributionMap {
  int height = 0;
  int width = 0;
  int channels = 1;
  std::vector<double> values;  // H x W x C, channels interleaved
  /// Secondary per-pixel score (H x W) that orders pixels with equal values.
  /// XRAI stores the pixel attribution here, beneath its region ranks.
  std::vector<double> tiebreak;
  Method method = Method::grad_cam;
  int target_class = -1;

  double at(int row, int col, int ch = 0) const {
    return values[(static_cast<std::size_t>(row) * width + col) * channels + ch];
  }
  /// One score per pixel: the value itself, or the sum of absolute values
  /// over channels for multichannel maps.
  std::vector<double> pixel_scores() const;
  bool all_finite() const;
};

AttributionMap guided_backprop(const DifferentiableClassifier& model, const Image& img, int target_class);

/// Grad-CAM at `layer` (default: model.default_feature_layer()), upsampled
/// bilinearly to the input resolution. Unknown layers throw ValidationError.
AttributionMap grad_cam(const DifferentiableClassifier& model, const Image& img, int target_class,
                        const std::string& layer = "");

/// Upsampled Grad-CAM times the guided-backprop map, per channel.
AttributionMap guided_grad_cam(const DifferentiableClassifier& model, const Image& img, int target_class,
                               const std::string& layer = "");
/// The product above for maps that were already computed.
AttributionMap combine_guided_grad_cam(const AttributionMap& cam, const AttributionMap& guided);

/// (img - baseline) times the path-averaged gradient, midpoint rule.
AttributionMap integrated_gradients(const DifferentiableClassifier& model, const Image& img, int target_class,
                                    const Image& baseline, int steps = 50);

/// Region labels, contiguous from 0 in raster order of first appearance.
struct SegmentMap {
  int height = 0;
  int width = 0;
  std::vector<int> labels;
  int region_count = 0;

  int at(int row, int col) const { return labels[static_cast<std::size_t>(row) * width + col]; }
};

/// Graph-based segmentation on the 8-connected pixel grid. Colour distances
/// are measured in 8-bit units (values x 255), so `scale` keeps its usual
/// meaning for images in [0,1]. Merge threshold of a component C is
/// scale / |C|; components smaller than min_size are merged afterwards.
SegmentMap felzenszwalb_segments(const Image& img, double scale, double sigma, int min_size);

struct XraiParams {
  int ig_steps = 50;
  std::vector<double> scales = {50, 100, 150, 250, 500, 1200};
  double sigma = 0.8;
  int min_size = 150;
  int dilation_radius = 5;
  /// A candidate region must add at least this many new pixels.
  int min_pixel_diff = 50;

  void validate() const;
};

/// Region-ranked attribution. Each pixel holds the rank score of the step at
/// which its region was admitted (higher = earlier); pixels never covered
/// share score 0. `tiebreak` carries the dual-baseline IG attribution.
AttributionMap xrai(const DifferentiableClassifier& model, const Image& img, int target_class,
                    const XraiParams& params = {});

/// Region ranking given pixel attributions and an image to oversegment.
/// Exposed so the ranking can be tested against analytic attributions.
AttributionMap xrai_rank(const Image& img, const std::vector<double>& pixel_attribution, const XraiParams& params);

/// Uniform random scores, the reference explainer for the bokeh benchmark.
AttributionMap random_attribution(int height, int width, std::uint64_t seed);

/// Mask of the ceil(fraction * H * W) best pixels. Ties on the score fall
/// back to the tiebreak (descending), then raster order.
BinaryMask top_fraction_mask(const AttributionMap& attr, double fraction);

/// Explainer dispatch used by the pipeline and the CLI. `seed` only feeds
/// the random baseline.
AttributionMap explain(Method method, const DifferentiableClassifier& model, const Image& img, int target_class,
                       const XraiParams& params = {}, std::uint64_t seed = 0);

/// Min-max scaled single-channel 8-bit heatmap of pixel_scores().
data::RawImage heatmap(const AttributionMap& attr);
/// Colour-mapped heatmap composited over the image at the given alpha.
data::RawImage overlay(const Image& img, const AttributionMap& attr, double alpha = 0.45);
/// Raw values as a float64 .npy array of shape (H, W) or (H, W, C).
void write_npy(const std::filesystem::path& path, const AttributionMap& attr);

}  // namespace skinet::saliency
