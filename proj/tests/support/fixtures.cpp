#include "fixtures.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "skinet/errors.hpp"
#include "skinet/io_util.hpp"

namespace skinet::testing {

namespace fs = std::filesystem;

namespace {

float quantize(double v) { return static_cast<float>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0); }

std::vector<std::string> numbered_labels(int n) {
  if (n <= static_cast<int>(lesion_labels().size())) return first_labels(n);
  std::vector<std::string> out;
  for (int i = 0; i < n; ++i) out.push_back("c" + std::to_string(i));
  return out;
}

/// Texture value (0..1) of class k at patch position (r, c), 16x16 patch.
double texture(int k, int r, int c) {
  switch (k % 7) {
    case 0: return (r % 4) < 2 ? 1.0 : 0.0;             // horizontal stripes
    case 1: return (c % 4) < 2 ? 1.0 : 0.0;             // vertical stripes
    case 2: return ((r / 2 + c / 2) % 2) ? 1.0 : 0.0;   // checkerboard
    case 3: return ((r + c) % 4) < 2 ? 1.0 : 0.0;       // diagonal stripes
    case 4: return ((r - c + 64) % 4) < 2 ? 1.0 : 0.0;  // anti-diagonal stripes
    case 5: return (r % 8) < 4 ? 1.0 : 0.0;             // wide stripes
    default: return ((r % 4) < 2) != ((c % 4) < 2) ? 1.0 : 0.0;
  }
}

}  // namespace

ProbabilityVector random_simplex(SplitMix64& rng, int n) {
  ProbabilityVector p;
  p.probs.resize(static_cast<std::size_t>(n));
  double sum = 0.0;
  for (auto& v : p.probs) {
    v = -std::log1p(-rng.uniform());
    sum += v;
  }
  for (auto& v : p.probs) v /= sum;
  p.class_labels = numbered_labels(n);
  return p;
}

BinaryMask random_mask(SplitMix64& rng, int height, int width, double density) {
  BinaryMask m(height, width);
  for (auto& px : m.pixels) px = rng.bernoulli(density) ? 1 : 0;
  return m;
}

Image random_image(SplitMix64& rng, int height, int width, int channels) {
  Image img(height, width, channels);
  for (auto& v : img.pixels) v = static_cast<float>(rng.below(256)) / 255.0F;
  return img;
}

std::vector<data::SegSample> ellipse_samples(int count, int size, std::uint64_t seed) {
  std::vector<data::SegSample> out;
  for (int i = 0; i < count; ++i) {
    SplitMix64 rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    const double cy = size * rng.uniform(0.38, 0.62);
    const double cx = size * rng.uniform(0.38, 0.62);
    const double ry = size * rng.uniform(0.16, 0.28);
    const double rx = size * rng.uniform(0.16, 0.28);
    const double theta = rng.uniform(0.0, std::numbers::pi);
    const double skin[3] = {rng.uniform(0.78, 0.9), rng.uniform(0.62, 0.72), rng.uniform(0.52, 0.62)};
    const double lesion[3] = {rng.uniform(0.3, 0.42), rng.uniform(0.18, 0.26), rng.uniform(0.12, 0.2)};
    data::SegSample s;
    s.id = "seg_" + std::to_string(1000 + i).substr(1);
    s.image = Image(size, size, 3);
    s.mask = BinaryMask(size, size);
    for (int r = 0; r < size; ++r) {
      for (int c = 0; c < size; ++c) {
        const double dy = r + 0.5 - cy;
        const double dx = c + 0.5 - cx;
        const double u = (dx * std::cos(theta) + dy * std::sin(theta)) / rx;
        const double v = (-dx * std::sin(theta) + dy * std::cos(theta)) / ry;
        const bool inside = u * u + v * v <= 1.0;
        s.mask.set(r, c, inside);
        for (int ch = 0; ch < 3; ++ch) {
          const double base = inside ? lesion[ch] : skin[ch];
          s.image.at(r, c, ch) = quantize(base + rng.uniform(-0.04, 0.04));
        }
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<data::ClfSample> patch_samples(int classes, int per_class, int size, std::uint64_t seed) {
  constexpr int kPatch = 16;
  if (size < kPatch) throw ValidationError("patch fixture needs images of at least 16 pixels");
  std::vector<data::ClfSample> out;
  int index = 0;
  for (int i = 0; i < per_class; ++i) {
    for (int k = 0; k < classes; ++k) {
      SplitMix64 rng(derive_seed(seed, static_cast<std::uint64_t>(index)));
      data::ClfSample s;
      s.id = "clf_" + std::to_string(1000 + index).substr(1);
      s.label = k;
      s.image = Image(size, size, 3);
      for (auto& v : s.image.pixels) v = quantize(0.5 + rng.uniform(-0.08, 0.08));
      const int r0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(size - kPatch + 1)));
      const int c0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(size - kPatch + 1)));
      for (int r = 0; r < kPatch; ++r) {
        for (int c = 0; c < kPatch; ++c) {
          const double v = 0.15 + 0.7 * texture(k, r, c) + rng.uniform(-0.03, 0.03);
          for (int ch = 0; ch < 3; ++ch) s.image.at(r0 + r, c0 + c, ch) = quantize(v);
        }
      }
      out.push_back(std::move(s));
      ++index;
    }
  }
  return out;
}

std::vector<std::string> first_labels(int classes) {
  const auto& all = lesion_labels();
  return {all.begin(), all.begin() + std::min<std::size_t>(static_cast<std::size_t>(classes), all.size())};
}

void write_classification_dataset(const fs::path& root, const std::vector<data::ClfSample>& samples) {
  std::ostringstream csv;
  csv << "image,label\n";
  for (const auto& s : samples) {
    data::write_png(root / "images" / (s.id + ".png"), data::to_raw(s.image));
    csv << s.id << ".png," << lesion_labels().at(static_cast<std::size_t>(s.label)) << "\n";
  }
  io::write_file_atomic(root / "labels.csv", csv.str());
}

void write_segmentation_dataset(const fs::path& root, const std::vector<data::SegSample>& samples) {
  for (const auto& s : samples) {
    data::write_png(root / "images" / (s.id + ".png"), data::to_raw(s.image));
    data::write_png(root / "masks" / (s.id + ".png"), s.mask);
  }
}

TempDir::TempDir(const std::string& tag) {
  static int counter = 0;
  const auto base = fs::temp_directory_path();
  SplitMix64 rng(static_cast<std::uint64_t>(std::chrono::steady_clock::now().time_since_epoch().count()));
  for (;;) {
    path_ = base / ("skinet_" + tag + "_" + std::to_string(counter++) + "_" + std::to_string(rng.next() % 1000000));
    if (fs::create_directories(path_)) break;
  }
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

segnet::SegNetConfig desk_segnet_config(int size) {
  segnet::SegNetConfig cfg;
  cfg.input_size = size;
  cfg.base_w = 12;
  cfg.res_filters = 4;
  cfg.depth = 4;
  cfg.dropout_rate = 0.1;
  return cfg;
}

classifier::ClassifierConfig desk_classifier_config(int classes, int size) {
  auto cfg = classifier::ClassifierConfig::for_backbone(classifier::Backbone::desk_cnn);
  cfg.input_size = size;
  cfg.labels = first_labels(classes);
  cfg.dropout_rate = 0.2;
  return cfg;
}

// ------------------------------------------------------------ LinearProbe

LinearProbe::LinearProbe(int size, int channels, torch::Tensor weights, torch::Tensor bias)
    : size_(size), channels_(channels), weights_(weights.to(torch::kDouble)), bias_(bias.to(torch::kDouble)) {
  if (weights_.dim() != 2 || weights_.size(1) != static_cast<std::int64_t>(size) * size * channels ||
      bias_.numel() != weights_.size(0)) {
    throw ValidationError("linear probe weights do not match the input shape");
  }
}

LinearProbe LinearProbe::random(int size, int channels, int classes, std::uint64_t seed) {
  torch::manual_seed(seed);
  const auto n = static_cast<std::int64_t>(size) * size * channels;
  return LinearProbe(size, channels, torch::randn({classes, n}, torch::kDouble), torch::randn({classes}, torch::kDouble));
}

torch::Tensor LinearProbe::logits(const torch::Tensor& batch, nn::ForwardContext&) const {
  return torch::addmm(bias_, batch.flatten(1), weights_.t());
}

std::vector<std::string> LinearProbe::labels() const { return numbered_labels(static_cast<int>(weights_.size(0))); }

// ------------------------------------------------------------ ReluMlp

ReluMlp::ReluMlp(int size, int channels, std::vector<torch::Tensor> weights)
    : size_(size), channels_(channels), weights_(std::move(weights)) {
  for (auto& w : weights_) w = w.to(torch::kDouble);
}

torch::Tensor ReluMlp::logits(const torch::Tensor& batch, nn::ForwardContext& ctx) const {
  auto h = batch.flatten(1);
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    h = h.matmul(weights_[i].t());
    if (i + 1 < weights_.size()) h = nn::relu(h, ctx);
  }
  return h;
}

std::vector<std::string> ReluMlp::labels() const { return numbered_labels(static_cast<int>(weights_.back().size(0))); }

// ------------------------------------------------------------ GapNet

GapNet::GapNet(int size, torch::Tensor mix, torch::Tensor head)
    : size_(size), mix_(mix.to(torch::kDouble)), head_(head.to(torch::kDouble)) {}

torch::Tensor GapNet::logits(const torch::Tensor& batch, nn::ForwardContext& ctx) const {
  auto features = torch::einsum("kc,nchw->nkhw", {mix_, batch});
  ctx.tap("features", features);
  return features.mean({2, 3}).matmul(head_.t());
}

std::vector<std::string> GapNet::labels() const { return numbered_labels(static_cast<int>(head_.size(0))); }

// ------------------------------------------------------------ stubs

ProbMap FixedSegmenter::predict(const Image& img, bool, std::uint64_t) const {
  if (img.height != map_.height || img.width != map_.width) throw ValidationError("stub segmenter size mismatch");
  return map_;
}

ProbMap DarknessSegmenter::predict(const Image& img, bool, std::uint64_t) const {
  ProbMap out(img.height, img.width);
  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c) {
      double sum = 0.0;
      for (int ch = 0; ch < img.channels; ++ch) sum += img.at(r, c, ch);
      out.at(r, c) = static_cast<float>(std::clamp(1.0 - sum / img.channels, 0.0, 1.0));
    }
  }
  return out;
}

ProbabilityVector NoisyClassifier::predict(const Image& img, bool stochastic, std::uint64_t seed) const {
  double halves[4] = {0, 0, 0, 0};  // top, bottom, left, right
  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c) {
      double v = 0.0;
      for (int ch = 0; ch < img.channels; ++ch) v += img.at(r, c, ch);
      halves[r < img.height / 2 ? 0 : 1] += v;
      halves[c < img.width / 2 ? 2 : 3] += v;
    }
  }
  const double norm = 2.0 / (static_cast<double>(img.height) * img.width * img.channels);
  SplitMix64 rng(seed);
  ProbabilityVector p;
  p.class_labels = labels();
  double sum = 0.0;
  for (int k = 0; k < 4; ++k) {
    double z = 3.0 * halves[k] * norm;
    if (stochastic) z += noise_ * (rng.uniform() - 0.5);
    p.probs.push_back(std::exp(z));
    sum += p.probs.back();
  }
  for (auto& v : p.probs) v /= sum;
  return p;
}

ProbabilityVector FixedClassifier::predict(const Image&, bool, std::uint64_t) const {
  ProbabilityVector p;
  p.probs = probs_;
  p.class_labels = labels();
  return p;
}

torch::Tensor RecordingClassifier::logits(const torch::Tensor& batch, nn::ForwardContext&) const {
  auto out = torch::zeros({batch.size(0), 3}, batch.options());
  return out + batch.sum() * 0.0;
}

ProbabilityVector RecordingClassifier::predict(const Image& img, bool, std::uint64_t) const {
  seen.push_back(img);
  ProbabilityVector p;
  p.probs = {1.0, 0.0, 0.0};
  p.class_labels = labels();
  return p;
}

// ------------------------------------------------------------ gradient check

GradCheck finite_difference_check(torch::nn::Module& module, const std::function<torch::Tensor()>& loss, int count,
                                  std::uint64_t seed, double eps, double tolerance) {
  auto params = module.parameters();
  std::vector<std::int64_t> offsets;
  std::int64_t total = 0;
  for (const auto& p : params) {
    offsets.push_back(total);
    total += p.numel();
  }
  for (auto& p : params) {
    if (p.grad().defined()) p.mutable_grad().zero_();
  }
  loss().backward();

  GradCheck result;
  SplitMix64 rng(seed);
  std::ostringstream detail;
  for (int i = 0; i < count; ++i) {
    const auto flat = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(total)));
    const auto it = std::upper_bound(offsets.begin(), offsets.end(), flat) - 1;
    const auto which = static_cast<std::size_t>(it - offsets.begin());
    const auto entry = flat - *it;
    auto& p = params[which];
    const double analytic = p.grad().defined() ? p.grad().reshape(-1)[entry].item<double>() : 0.0;
    double numeric = 0.0;
    {
      torch::NoGradGuard guard;
      auto view = p.data().reshape(-1);
      const double original = view[entry].item<double>();
      view[entry] = original + eps;
      const double up = loss().item<double>();
      view[entry] = original - eps;
      const double down = loss().item<double>();
      view[entry] = original;
      numeric = (up - down) / (2.0 * eps);
    }
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-7});
    const double rel = std::abs(analytic - numeric) / denom;
    result.worst_relative_error = std::max(result.worst_relative_error, rel);
    ++result.checked;
    if (rel > tolerance) {
      ++result.failures;
      detail << "param " << which << "[" << entry << "]: analytic " << analytic << " numeric " << numeric << "; ";
    }
  }
  result.detail = detail.str();
  return result;
}

double bicubic_reference(const data::RawImage& src, int out_h, int out_w, int r, int c, int ch) {
  auto keys = [](double x) {
    constexpr double a = -0.75;
    x = std::abs(x);
    if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
    if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
    return 0.0;
  };
  const double fy = (r + 0.5) * src.height / out_h - 0.5;
  const double fx = (c + 0.5) * src.width / out_w - 0.5;
  const int iy = static_cast<int>(std::floor(fy));
  const int ix = static_cast<int>(std::floor(fx));
  double sum = 0.0;
  for (int dy = -1; dy <= 2; ++dy) {
    const int yy = std::clamp(iy + dy, 0, src.height - 1);
    const double wy = keys(fy - (iy + dy));
    for (int dx = -1; dx <= 2; ++dx) {
      const int xx = std::clamp(ix + dx, 0, src.width - 1);
      const double wx = keys(fx - (ix + dx));
      const double v = src.pixels[(static_cast<std::size_t>(yy) * src.width + xx) * src.channels + ch] / 255.0;
      sum += wy * wx * v;
    }
  }
  return std::clamp(sum, 0.0, 1.0);
}

}  // namespace skinet::testing
