#pragma once

// Building blocks shared by the segmentation and classification networks.
//
// Every layer takes a ForwardContext so that the mode of a pass (training,
// Monte-Carlo sampling, guided backward rule, activation capture) is scoped
// to that call rather than stored on the module. A trained module can
// therefore serve concurrent passes in different modes.

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>

#include "skinet/core.hpp"

namespace skinet::nn {

enum class ReluMode {
  standard,
  guided,  // backward passes only positive gradients through units with positive input
};

struct ForwardContext {
  /// Batch-norm uses batch statistics and updates running estimates.
  bool train = false;
  /// Dropout stays active outside training (Monte-Carlo sampling).
  bool stochastic = false;
  /// Source of dropout masks; required whenever dropout is active.
  std::optional<at::Generator> generator;
  ReluMode relu_mode = ReluMode::standard;
  /// Name of the layer whose output should be kept in `captured`.
  std::string capture_layer;
  torch::Tensor captured;
  bool capture_hit = false;

  bool dropout_active() const { return train || stochastic; }

  void tap(const std::string& name, const torch::Tensor& t) {
    if (!capture_layer.empty() && name == capture_layer) {
      captured = t;
      capture_hit = true;
    }
  }

  static ForwardContext deterministic();
  static ForwardContext monte_carlo(std::uint64_t seed);
  static ForwardContext training(std::uint64_t seed);
};

at::Generator make_generator(std::uint64_t seed);

torch::Tensor relu(const torch::Tensor& x, const ForwardContext& ctx);

/// Inverted dropout with masks drawn from ctx.generator. Identity when
/// dropout is inactive or rate == 0.
torch::Tensor dropout(const torch::Tensor& x, double rate, ForwardContext& ctx);

/// Batch norm honouring ctx.train.
torch::Tensor batch_norm(const torch::nn::BatchNorm2d& bn, const torch::Tensor& x, const ForwardContext& ctx);

/// conv -> batch norm -> optional ReLU, "same" padding, stride 1.
class ConvBnImpl : public torch::nn::Module {
 public:
  ConvBnImpl(int in_channels, int out_channels, int kernel, bool activation);
  torch::Tensor forward(const torch::Tensor& x, ForwardContext& ctx);

  torch::nn::Conv2d conv{nullptr};
  torch::nn::BatchNorm2d bn{nullptr};
  bool activation;
};
TORCH_MODULE(ConvBn);

/// 1 x C x H x W float tensor.
torch::Tensor to_tensor(const Image& img);
/// N x C x H x W; all images must share a shape.
torch::Tensor to_tensor(std::span<const Image> images);
torch::Tensor to_tensor(std::span<const BinaryMask> masks);

/// Reads an H x W tensor (any leading singleton dims) into a ProbMap.
ProbMap to_prob_map(const torch::Tensor& t);

std::int64_t parameter_count(const torch::nn::Module& module);

/// Flattened copy of all parameters, in registration order.
std::vector<torch::Tensor> snapshot_parameters(const torch::nn::Module& module);

/// Copies parameters and buffers of `src` into `dst` (same architecture).
void copy_state(const torch::nn::Module& src, torch::nn::Module& dst);

void save_weights(const torch::nn::Module& module, const std::filesystem::path& path);
void load_weights(torch::nn::Module& module, const std::filesystem::path& path);

}  // namespace skinet::nn
