#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "skinet/errors.hpp"
#include "skinet/io_util.hpp"
#include "skinet/rng.hpp"
#include "skinet/saliency.hpp"

namespace skinet::saliency {

namespace {

void check_target(const DifferentiableClassifier& model, int target_class) {
  const int n = static_cast<int>(model.labels().size());
  if (target_class < 0 || target_class >= n) {
    throw ValidationError("target class " + std::to_string(target_class) + " outside [0," + std::to_string(n) + ")");
  }
}

void check_input(const DifferentiableClassifier& model, const Image& img) {
  if (img.height != model.input_size() || img.width != model.input_size() || img.channels != model.input_channels()) {
    throw ValidationError("explainer input is " + std::to_string(img.height) + "x" + std::to_string(img.width) + "x" +
                          std::to_string(img.channels) + ", model expects " + std::to_string(model.input_size()) +
                          "x" + std::to_string(model.input_size()) + "x" + std::to_string(model.input_channels()));
  }
}

/// 1 x C x H x W tensor -> H x W x C map.
AttributionMap from_chw(const torch::Tensor& t, Method method, int target_class) {
  auto hwc = t.detach().to(torch::kDouble)[0].permute({1, 2, 0}).contiguous();
  AttributionMap out;
  out.height = static_cast<int>(hwc.size(0));
  out.width = static_cast<int>(hwc.size(1));
  out.channels = static_cast<int>(hwc.size(2));
  out.values.assign(hwc.data_ptr<double>(), hwc.data_ptr<double>() + hwc.numel());
  out.method = method;
  out.target_class = target_class;
  return out;
}

torch::Tensor input_tensor(const DifferentiableClassifier& model, const Image& img) {
  return nn::to_tensor(img).to(model.input_dtype()).requires_grad_(true);
}

}  // namespace

std::string to_string(Method m) {
  switch (m) {
    case Method::guided_backprop:
      return "gb";
    case Method::grad_cam:
      return "gradcam";
    case Method::guided_grad_cam:
      return "ggc";
    case Method::integrated_gradients:
      return "ig";
    case Method::xrai:
      return "xrai";
    case Method::random:
      return "random";
  }
  return "random";
}

Method parse_method(const std::string& text) {
  for (Method m : {Method::guided_backprop, Method::grad_cam, Method::guided_grad_cam, Method::integrated_gradients,
                   Method::xrai, Method::random}) {
    if (text == to_string(m)) return m;
  }
  throw ValidationError("unknown explainer '" + text + "' (expected gb, gradcam, ggc, ig, xrai or random)");
}

std::vector<double> AttributionMap::pixel_scores() const {
  const std::size_t n = static_cast<std::size_t>(height) * width;
  if (channels == 1) return values;
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (int c = 0; c < channels; ++c) out[i] += std::abs(values[i * channels + c]);
  }
  return out;
}

bool AttributionMap::all_finite() const {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); }) &&
         std::all_of(tiebreak.begin(), tiebreak.end(), [](double v) { return std::isfinite(v); });
}

AttributionMap guided_backprop(const DifferentiableClassifier& model, const Image& img, int target_class) {
  if (!model.has_relu()) throw UnsupportedModelError("guided backpropagation needs a model built on rectified units");
  check_input(model, img);
  check_target(model, target_class);
  auto ctx = nn::ForwardContext::deterministic();
  ctx.relu_mode = nn::ReluMode::guided;
  auto x = input_tensor(model, img);
  auto score = model.logits(x, ctx)[0][target_class];
  auto grad = torch::autograd::grad({score}, {x})[0];
  return from_chw(grad, Method::guided_backprop, target_class);
}

AttributionMap grad_cam(const DifferentiableClassifier& model, const Image& img, int target_class,
                        const std::string& layer) {
  check_input(model, img);
  check_target(model, target_class);
  const std::string name = layer.empty() ? model.default_feature_layer() : layer;
  const auto layers = model.feature_layers();
  if (std::find(layers.begin(), layers.end(), name) == layers.end()) {
    throw ValidationError("unknown feature layer '" + name + "'");
  }
  auto ctx = nn::ForwardContext::deterministic();
  ctx.capture_layer = name;
  auto x = input_tensor(model, img);
  auto score = model.logits(x, ctx)[0][target_class];
  if (!ctx.capture_hit) throw ValidationError("feature layer '" + name + "' was not reached in the forward pass");
  auto grad = torch::autograd::grad({score}, {ctx.captured}, {}, false, false, true)[0];
  auto features = ctx.captured.detach().to(torch::kDouble);
  if (!grad.defined()) grad = torch::zeros_like(features);
  auto weights = grad.to(torch::kDouble).mean({2, 3}, true);
  auto cam = torch::relu((weights * features).sum(1, true));
  if (cam.size(2) != img.height || cam.size(3) != img.width) {
    cam = torch::nn::functional::interpolate(cam, torch::nn::functional::InterpolateFuncOptions()
                                                      .size(std::vector<std::int64_t>{img.height, img.width})
                                                      .mode(torch::kBilinear)
                                                      .align_corners(false));
    cam = torch::relu(cam);
  }
  return from_chw(cam, Method::grad_cam, target_class);
}

AttributionMap combine_guided_grad_cam(const AttributionMap& cam, const AttributionMap& guided) {
  if (cam.height != guided.height || cam.width != guided.width || cam.channels != 1) {
    throw ValidationError("Grad-CAM and guided backpropagation maps disagree in shape");
  }
  AttributionMap out = guided;
  out.method = Method::guided_grad_cam;
  const std::size_t n = static_cast<std::size_t>(guided.height) * guided.width;
  for (std::size_t i = 0; i < n; ++i) {
    for (int c = 0; c < guided.channels; ++c) out.values[i * guided.channels + c] = cam.values[i] * guided.values[i * guided.channels + c];
  }
  return out;
}

AttributionMap guided_grad_cam(const DifferentiableClassifier& model, const Image& img, int target_class,
                               const std::string& layer) {
  return combine_guided_grad_cam(grad_cam(model, img, target_class, layer), guided_backprop(model, img, target_class));
}

AttributionMap integrated_gradients(const DifferentiableClassifier& model, const Image& img, int target_class,
                                    const Image& baseline, int steps) {
  check_input(model, img);
  check_target(model, target_class);
  if (!baseline.same_shape(img)) throw ValidationError("integrated-gradients baseline does not match the image shape");
  if (steps < 8) throw ValidationError("integrated gradients needs at least 8 steps");
  constexpr int kChunk = 16;
  auto ctx = nn::ForwardContext::deterministic();
  const auto x = nn::to_tensor(img).to(torch::kDouble);
  const auto b = nn::to_tensor(baseline).to(torch::kDouble);
  const auto diff = x - b;
  auto grad_sum = torch::zeros_like(x);
  for (int start = 0; start < steps; start += kChunk) {
    const int n = std::min(kChunk, steps - start);
    auto alphas = (torch::arange(start, start + n, torch::kDouble) + 0.5) / static_cast<double>(steps);
    auto path = (b + alphas.view({n, 1, 1, 1}) * diff).to(model.input_dtype()).requires_grad_(true);
    auto score = model.logits(path, ctx).select(1, target_class).sum();
    auto grad = torch::autograd::grad({score}, {path})[0];
    grad_sum += grad.to(torch::kDouble).sum(0, true);
  }
  return from_chw(diff * grad_sum / static_cast<double>(steps), Method::integrated_gradients, target_class);
}

AttributionMap random_attribution(int height, int width, std::uint64_t seed) {
  AttributionMap out;
  out.height = height;
  out.width = width;
  out.channels = 1;
  out.method = Method::random;
  out.values.resize(static_cast<std::size_t>(height) * width);
  SplitMix64 rng(derive_seed(seed, "random-attribution"));
  for (double& v : out.values) v = rng.uniform();
  return out;
}

BinaryMask top_fraction_mask(const AttributionMap& attr, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ValidationError("keep fraction must lie in (0,1]");
  const std::size_t n = static_cast<std::size_t>(attr.height) * attr.width;
  const auto k = std::min<std::size_t>(n, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9)));
  const auto scores = attr.pixel_scores();
  const bool has_tiebreak = attr.tiebreak.size() == n;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    if (has_tiebreak && attr.tiebreak[a] != attr.tiebreak[b]) return attr.tiebreak[a] > attr.tiebreak[b];
    return a < b;
  });
  BinaryMask mask(attr.height, attr.width);
  for (std::size_t i = 0; i < k; ++i) mask.pixels[order[i]] = 1;
  return mask;
}

AttributionMap explain(Method method, const DifferentiableClassifier& model, const Image& img, int target_class,
                       const XraiParams& params, std::uint64_t seed) {
  switch (method) {
    case Method::guided_backprop:
      return guided_backprop(model, img, target_class);
    case Method::grad_cam:
      return grad_cam(model, img, target_class);
    case Method::guided_grad_cam:
      return guided_grad_cam(model, img, target_class);
    case Method::integrated_gradients:
      return integrated_gradients(model, img, target_class, Image(img.height, img.width, img.channels, 0.0F),
                                  params.ig_steps);
    case Method::xrai:
      return xrai(model, img, target_class, params);
    case Method::random:
      break;
  }
  auto out = random_attribution(img.height, img.width, seed);
  out.target_class = target_class;
  return out;
}

data::RawImage heatmap(const AttributionMap& attr) {
  const auto scores = attr.pixel_scores();
  data::RawImage out;
  out.height = attr.height;
  out.width = attr.width;
  out.channels = 1;
  out.pixels.assign(scores.size(), 0);
  if (scores.empty()) return out;
  const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
  const double range = *hi - *lo;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double v = range > 0.0 ? (scores[i] - *lo) / range : 0.0;
    out.pixels[i] = static_cast<std::uint8_t>(std::lround(255.0 * v));
  }
  return out;
}

data::RawImage overlay(const Image& img, const AttributionMap& attr, double alpha) {
  if (img.height != attr.height || img.width != attr.width) {
    throw ValidationError("overlay image and attribution map disagree in shape");
  }
  const auto heat = heatmap(attr);
  cv::Mat gray(heat.height, heat.width, CV_8UC1, const_cast<std::uint8_t*>(heat.pixels.data()));
  cv::Mat colour;
  cv::applyColorMap(gray, colour, cv::COLORMAP_JET);  // BGR
  data::RawImage base = data::to_raw(img);
  data::RawImage out;
  out.height = img.height;
  out.width = img.width;
  out.channels = 3;
  out.pixels.resize(static_cast<std::size_t>(img.height) * img.width * 3);
  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c) {
      const auto& bgr = colour.at<cv::Vec3b>(r, c);
      for (int ch = 0; ch < 3; ++ch) {
        const std::size_t i = (static_cast<std::size_t>(r) * img.width + c) * 3 + ch;
        const double under = base.channels == 3 ? base.pixels[i] : base.pixels[static_cast<std::size_t>(r) * img.width + c];
        const double heat_v = bgr[2 - ch];
        out.pixels[i] = static_cast<std::uint8_t>(std::lround((1.0 - alpha) * under + alpha * heat_v));
      }
    }
  }
  return out;
}

void write_npy(const std::filesystem::path& path, const AttributionMap& attr) {
  std::string shape = "(" + std::to_string(attr.height) + ", " + std::to_string(attr.width) +
                      (attr.channels > 1 ? ", " + std::to_string(attr.channels) + ")" : ")");
  std::string header = "{'descr': '<f8', 'fortran_order': False, 'shape': " + shape + ", }";
  // Pad so that magic + version + length + header is a multiple of 64 bytes.
  const std::size_t prefix = 10;
  const std::size_t total = ((prefix + header.size() + 1 + 63) / 64) * 64;
  header.append(total - prefix - header.size() - 1, ' ');
  header.push_back('\n');
  std::string blob("\x93NUMPY\x01\x00", 8);
  blob.push_back(static_cast<char>(header.size() & 0xFF));
  blob.push_back(static_cast<char>((header.size() >> 8) & 0xFF));
  blob += header;
  const std::size_t bytes = attr.values.size() * sizeof(double);
  const std::size_t offset = blob.size();
  blob.resize(offset + bytes);
  std::memcpy(blob.data() + offset, attr.values.data(), bytes);
  io::write_file_atomic(path, blob);
}

}  // namespace skinet::saliency
