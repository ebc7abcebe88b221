#pragma once

// Synthetic datasets, toy models and stubs shared by the unit tests and the
// acceptance runner.

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "skinet/classifier.hpp"
#include "skinet/core.hpp"
#include "skinet/data.hpp"
#include "skinet/differentiable.hpp"
#include "skinet/model.hpp"
#include "skinet/rng.hpp"
#include "skinet/segnet.hpp"

namespace skinet::testing {

// ------------------------------------------------------------ generators

/// Uniform point on the probability simplex (normalized exponentials).
ProbabilityVector random_simplex(SplitMix64& rng, int n);
BinaryMask random_mask(SplitMix64& rng, int height, int width, double density);
/// Values are multiples of 1/255 so that a PNG round trip is exact.
Image random_image(SplitMix64& rng, int height, int width, int channels);

// ------------------------------------------------------------ datasets

/// Dark ellipses on a noisy skin-coloured background; the mask is the ellipse.
std::vector<data::SegSample> ellipse_samples(int count, int size, std::uint64_t seed);

/// `classes` classes, `per_class` images each. Every image carries one 16x16
/// patch of a class-specific texture at a random position on mid-grey noise,
/// so the class evidence is local and is destroyed by blurring.
std::vector<data::ClfSample> patch_samples(int classes, int per_class, int size, std::uint64_t seed);

/// First `classes` canonical lesion labels.
std::vector<std::string> first_labels(int classes);

/// Writes root/images/<id>.png and root/labels.csv.
void write_classification_dataset(const std::filesystem::path& root, const std::vector<data::ClfSample>& samples);
/// Writes root/images/<id>.png and root/masks/<id>.png.
void write_segmentation_dataset(const std::filesystem::path& root, const std::vector<data::SegSample>& samples);

/// Removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// ------------------------------------------------------------ small networks

/// Small configurations that train in seconds to minutes on one core.
segnet::SegNetConfig desk_segnet_config(int size = 32);
classifier::ClassifierConfig desk_classifier_config(int classes = 5, int size = 64);

/// logits = W x + b on the flattened C x H x W input, in double precision.
class LinearProbe : public DifferentiableClassifier {
 public:
  LinearProbe(int size, int channels, torch::Tensor weights, torch::Tensor bias);
  static LinearProbe random(int size, int channels, int classes, std::uint64_t seed);

  torch::Tensor logits(const torch::Tensor& batch, nn::ForwardContext& ctx) const override;
  bool has_relu() const override { return false; }
  int input_channels() const override { return channels_; }
  torch::ScalarType input_dtype() const override { return torch::kDouble; }
  std::vector<std::string> labels() const override;
  int input_size() const override { return size_; }
  const torch::Tensor& weights() const { return weights_; }

 private:
  int size_;
  int channels_;
  torch::Tensor weights_;  // classes x (C*H*W)
  torch::Tensor bias_;
};

/// Fully connected ReLU network, double precision: h = relu(W_i h) for every
/// layer but the last, which yields the logits.
class ReluMlp : public DifferentiableClassifier {
 public:
  ReluMlp(int size, int channels, std::vector<torch::Tensor> weights);

  torch::Tensor logits(const torch::Tensor& batch, nn::ForwardContext& ctx) const override;
  bool has_relu() const override { return true; }
  int input_channels() const override { return channels_; }
  torch::ScalarType input_dtype() const override { return torch::kDouble; }
  std::vector<std::string> labels() const override;
  int input_size() const override { return size_; }

 private:
  int size_;
  int channels_;
  std::vector<torch::Tensor> weights_;
};

/// Feature maps F = A x (a 1x1 channel mix, tapped as "features"), then
/// global average pooling and a linear head W. For class e the Grad-CAM
/// weights are beta_a = W[e][a] / (H*W).
class GapNet : public DifferentiableClassifier {
 public:
  GapNet(int size, torch::Tensor mix, torch::Tensor head);

  torch::Tensor logits(const torch::Tensor& batch, nn::ForwardContext& ctx) const override;
  std::vector<std::string> feature_layers() const override { return {"features"}; }
  bool has_relu() const override { return false; }
  int input_channels() const override { return static_cast<int>(mix_.size(1)); }
  torch::ScalarType input_dtype() const override { return torch::kDouble; }
  std::vector<std::string> labels() const override;
  int input_size() const override { return size_; }

 private:
  int size_;
  torch::Tensor mix_;   // K x C
  torch::Tensor head_;  // classes x K
};

// ------------------------------------------------------------ stubs

/// Returns the same probability map for every input and seed.
class FixedSegmenter : public SegmenterModel {
 public:
  explicit FixedSegmenter(ProbMap map) : map_(std::move(map)) {}
  ProbMap predict(const Image& img, bool stochastic, std::uint64_t seed) const override;
  int input_size() const override { return map_.height; }

 private:
  ProbMap map_;
};

/// Probability = 1 - mean channel brightness, so dark lesions score high.
/// Equivariant under the augmentation family up to interpolation.
class DarknessSegmenter : public SegmenterModel {
 public:
  explicit DarknessSegmenter(int size) : size_(size) {}
  ProbMap predict(const Image& img, bool stochastic, std::uint64_t seed) const override;
  int input_size() const override { return size_; }

 private:
  int size_;
};

/// Posterior = softmax(f(img) + noise) where f reads four image-half means
/// and the noise (stochastic passes only) is a seeded uniform perturbation of
/// width `noise`. Cheap enough for thousands of samples.
class NoisyClassifier : public ClassifierModel {
 public:
  NoisyClassifier(int size, double noise) : size_(size), noise_(noise) {}
  ProbabilityVector predict(const Image& img, bool stochastic, std::uint64_t seed) const override;
  std::vector<std::string> labels() const override { return first_labels(4); }
  int input_size() const override { return size_; }

 private:
  int size_;
  double noise_;
};

/// Always returns `probs`, whatever the input or seed.
class FixedClassifier : public ClassifierModel {
 public:
  FixedClassifier(int size, std::vector<double> probs) : size_(size), probs_(std::move(probs)) {}
  ProbabilityVector predict(const Image& img, bool stochastic, std::uint64_t seed) const override;
  std::vector<std::string> labels() const override { return first_labels(static_cast<int>(probs_.size())); }
  int input_size() const override { return size_; }

 private:
  int size_;
  std::vector<double> probs_;
};

/// Records every image it is asked to classify and returns a one-hot
/// posterior on class 0.
class RecordingClassifier : public DifferentiableClassifier {
 public:
  explicit RecordingClassifier(int size) : size_(size) {}
  torch::Tensor logits(const torch::Tensor& batch, nn::ForwardContext& ctx) const override;
  bool has_relu() const override { return false; }
  std::vector<std::string> labels() const override { return first_labels(3); }
  int input_size() const override { return size_; }
  ProbabilityVector predict(const Image& img, bool stochastic, std::uint64_t seed) const override;

  mutable std::vector<Image> seen;

 private:
  int size_;
};

// ------------------------------------------------------------ gradient check

struct GradCheck {
  int checked = 0;
  int failures = 0;
  double worst_relative_error = 0.0;
  std::string detail;
};

/// Compares analytic gradients of `loss()` with central finite differences on
/// `count` parameter entries sampled with `seed`. Parameters must be double.
GradCheck finite_difference_check(torch::nn::Module& module, const std::function<torch::Tensor()>& loss, int count,
                                  std::uint64_t seed, double eps = 1e-6, double tolerance = 1e-3);

/// Independent Keys (a = -0.75) bicubic sample of channel ch at output pixel
/// (r, c) when resizing src to out_h x out_w, half-pixel centres and replicated
/// borders. Works on 8-bit data scaled to [0,1].
double bicubic_reference(const data::RawImage& src, int out_h, int out_w, int r, int c, int ch);

}  // namespace skinet::testing
