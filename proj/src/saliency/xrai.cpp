#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <limits>

#include "skinet/errors.hpp"
#include "skinet/saliency.hpp"

namespace skinet::saliency {

namespace {

using PixelList = std::vector<std::uint32_t>;

/// Every segment at every scale, dilated, as a list of pixel indices.
std::vector<PixelList> candidate_regions(const Image& img, const XraiParams& params) {
  Image signed_img = img;
  for (float& v : signed_img.pixels) v = 2.0F * v - 1.0F;

  const int r = params.dilation_radius;
  const cv::Mat kernel = r > 0 ? cv::getStructuringElement(cv::MORPH_ELLIPSE, cv::Size(2 * r + 1, 2 * r + 1)) : cv::Mat();
  std::vector<PixelList> regions;
  for (double scale : params.scales) {
    const auto seg = felzenszwalb_segments(signed_img, scale, params.sigma, params.min_size);
    for (int label = 0; label < seg.region_count; ++label) {
      cv::Mat mask(seg.height, seg.width, CV_8UC1, cv::Scalar(0));
      for (int i = 0; i < seg.height * seg.width; ++i) {
        if (seg.labels[static_cast<std::size_t>(i)] == label) mask.data[i] = 1;
      }
      if (r > 0) cv::dilate(mask, mask, kernel);
      PixelList pixels;
      for (int i = 0; i < seg.height * seg.width; ++i) {
        if (mask.data[i]) pixels.push_back(static_cast<std::uint32_t>(i));
      }
      regions.push_back(std::move(pixels));
    }
  }
  return regions;
}

}  // namespace

void XraiParams::validate() const {
  if (ig_steps < 8) throw ValidationError("xrai.ig_steps must be >= 8");
  if (scales.empty()) throw ValidationError("xrai.scales must name at least one scale");
  if (!(sigma >= 0.0)) throw ValidationError("xrai.sigma must be non-negative");
  if (min_size < 1) throw ValidationError("xrai.min_size must be >= 1");
  if (dilation_radius < 0) throw ValidationError("xrai.dilation_radius must be >= 0");
  if (min_pixel_diff < 0) throw ValidationError("xrai.min_pixel_diff must be >= 0");
}

AttributionMap xrai_rank(const Image& img, const std::vector<double>& pixel_attribution, const XraiParams& params) {
  params.validate();
  const std::size_t n = static_cast<std::size_t>(img.height) * img.width;
  if (pixel_attribution.size() != n) throw ValidationError("pixel attribution does not match the image");

  auto regions = candidate_regions(img, params);
  std::vector<int> step_of(n, -1);
  std::size_t covered = 0;
  int steps = 0;
  while (covered < n && !regions.empty()) {
    double best_gain = -std::numeric_limits<double>::infinity();
    std::size_t best = regions.size();
    std::vector<std::size_t> keep;
    keep.reserve(regions.size());
    for (std::size_t i = 0; i < regions.size(); ++i) {
      double sum = 0.0;
      std::size_t added = 0;
      for (auto p : regions[i]) {
        if (step_of[p] < 0) {
          sum += pixel_attribution[p];
          ++added;
        }
      }
      if (added == 0 || added < static_cast<std::size_t>(params.min_pixel_diff)) continue;
      keep.push_back(i);
      const double gain = sum / static_cast<double>(added);
      if (gain > best_gain) {
        best_gain = gain;
        best = i;
      }
    }
    if (best == regions.size()) break;
    for (auto p : regions[best]) {
      if (step_of[p] < 0) {
        step_of[p] = steps;
        ++covered;
      }
    }
    ++steps;
    std::vector<PixelList> next;
    next.reserve(keep.size());
    for (auto i : keep) {
      if (i != best) next.push_back(std::move(regions[i]));
    }
    regions = std::move(next);
  }

  AttributionMap out;
  out.height = img.height;
  out.width = img.width;
  out.channels = 1;
  out.method = Method::xrai;
  out.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.values[i] = step_of[i] < 0 ? 0.0 : static_cast<double>(steps - step_of[i]);
  out.tiebreak = pixel_attribution;
  return out;
}

AttributionMap xrai(const DifferentiableClassifier& model, const Image& img, int target_class, const XraiParams& params) {
  params.validate();
  const Image black(img.height, img.width, img.channels, 0.0F);
  const Image white(img.height, img.width, img.channels, 1.0F);
  const auto a = integrated_gradients(model, img, target_class, black, params.ig_steps);
  const auto b = integrated_gradients(model, img, target_class, white, params.ig_steps);
  const std::size_t n = static_cast<std::size_t>(img.height) * img.width;
  std::vector<double> pixel(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (int c = 0; c < a.channels; ++c) {
      const std::size_t k = i * a.channels + c;
      pixel[i] += 0.5 * (a.values[k] + b.values[k]);
    }
  }
  auto out = xrai_rank(img, pixel, params);
  out.target_class = target_class;
  return out;
}

}  // namespace skinet::saliency
