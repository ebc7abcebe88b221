#pragma once

// Bayesian MultiResUNet segmenter and the plain U-Net baseline.
//
// Encoder stage i (i = 0..depth-1): MultiRes block with budget base_w * 2^i,
// 2x2 max pooling, dropout. The bridge is one more MultiRes block without
// dropout. Decoder stage i mirrors it: 2x2 stride-2 transposed convolution to
// res_filters * 2^i channels, dropout, concatenation with the Res path of
// encoder stage i, MultiRes block. A 1x1 convolution and a sigmoid give the
// lesion probability.

#include <torch/torch.h>

#include <array>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "skinet/data.hpp"
#include "skinet/keyvalue.hpp"
#include "skinet/model.hpp"
#include "skinet/nn.hpp"
#include "skinet/training.hpp"

namespace skinet::segnet {

struct MultiResBlockSpec {
  int in_channels = 0;
  /// Filters of the three chained 3x3 convolutions (3x3, 5x5 and 7x7
  /// receptive fields).
  std::array<int, 3> branch_filters{};
  /// Filters of the 1x1 shortcut; equals the sum of branch_filters.
  int shortcut_filters = 0;

  /// floor(W/6), floor(W/3) and the remainder.
  static MultiResBlockSpec from_budget(int in_channels, int budget);
  int out_channels() const { return shortcut_filters; }
  void validate() const;
};

struct ResPathSpec {
  int in_channels = 0;
  int filters = 0;
  int length = 0;
};

/// Res paths of a depth-stage encoder: stage i gets res_filters * 2^i filters
/// and depth - i residual blocks, i.e. (32,4), (64,3), (128,2), (256,1) by default.
std::vector<ResPathSpec> default_res_path_specs(int res_filters = 32, int depth = 4);

class MultiResBlockImpl : public torch::nn::Module {
 public:
  explicit MultiResBlockImpl(const MultiResBlockSpec& spec);
  torch::Tensor forward(const torch::Tensor& x, nn::ForwardContext& ctx);
  const MultiResBlockSpec& spec() const { return spec_; }

  nn::ConvBn conv3{nullptr};
  nn::ConvBn conv5{nullptr};
  nn::ConvBn conv7{nullptr};
  nn::ConvBn shortcut{nullptr};
  torch::nn::BatchNorm2d concat_bn{nullptr};
  torch::nn::BatchNorm2d out_bn{nullptr};

 private:
  MultiResBlockSpec spec_;
};
TORCH_MODULE(MultiResBlock);

class ResPathImpl : public torch::nn::Module {
 public:
  explicit ResPathImpl(const ResPathSpec& spec);
  torch::Tensor forward(const torch::Tensor& x, nn::ForwardContext& ctx);
  int length() const { return static_cast<int>(convs.size()); }

  std::vector<nn::ConvBn> convs;      // 3x3, ReLU
  std::vector<nn::ConvBn> shortcuts;  // 1x1, linear
  std::vector<torch::nn::BatchNorm2d> norms;
};
TORCH_MODULE(ResPath);

enum class SegArchitecture { multiresunet, unet };

std::string to_string(SegArchitecture arch);
SegArchitecture parse_seg_architecture(const std::string& text);

struct SegNetConfig {
  SegArchitecture architecture = SegArchitecture::multiresunet;
  int input_size = kDefaultImageSize;
  int channels = 3;
  /// MultiRes filter budget of the first stage; doubles per stage.
  /// For the U-Net baseline, the first-stage filter count.
  int base_w = 51;
  int res_filters = 32;
  int depth = 4;
  double dropout_rate = 0.5;
  bool decoder_dropout = true;

  void validate() const;
  void write(KeyValues& kv, const std::string& prefix) const;
  static SegNetConfig read(const KeyValues& kv, const std::string& prefix);
  static SegNetConfig read(const KeyValues& kv, const std::string& prefix, const SegNetConfig& defaults);

  friend bool operator==(const SegNetConfig&, const SegNetConfig&) = default;
};


/// Network returning per-pixel logits, N x 1 x H x W.
class SegNetwork : public torch::nn::Module {
 public:
  virtual torch::Tensor forward(const torch::Tensor& x, nn::ForwardContext& ctx) = 0;
};

class MultiResUNet : public SegNetwork {
 public:
  explicit MultiResUNet(const SegNetConfig& cfg);
  torch::Tensor forward(const torch::Tensor& x, nn::ForwardContext& ctx) override;

  std::vector<MultiResBlock> encoder;
  MultiResBlock bridge{nullptr};
  std::vector<ResPath> res_paths;
  std::vector<torch::nn::ConvTranspose2d> upsamplers;
  std::vector<MultiResBlock> decoder;
  torch::nn::Conv2d head{nullptr};

 private:
  SegNetConfig cfg_;
};

class UNet : public SegNetwork {
 public:
  explicit UNet(const SegNetConfig& cfg);
  torch::Tensor forward(const torch::Tensor& x, nn::ForwardContext& ctx) override;

 private:
  struct DoubleConv {
    nn::ConvBn a{nullptr};
    nn::ConvBn b{nullptr};
  };
  SegNetConfig cfg_;
  std::vector<DoubleConv> encoder_;
  DoubleConv bridge_;
  std::vector<torch::nn::ConvTranspose2d> upsamplers_;
  std::vector<DoubleConv> decoder_;
  torch::nn::Conv2d head_{nullptr};
};

/// A segmentation network plus its configuration.
class SegModel : public SegmenterModel {
 public:
  SegModel(SegNetConfig cfg, std::shared_ptr<SegNetwork> net);

  ProbMap predict(const Image& img, bool stochastic, std::uint64_t seed) const override;
  int input_size() const override { return cfg_.input_size; }

  /// Logits for a batch with the given context (gradients flow unless the
  /// caller disables them).
  torch::Tensor logits(const torch::Tensor& batch, nn::ForwardContext& ctx) const;

  const SegNetConfig& config() const { return cfg_; }
  SegNetwork& network() const { return *net_; }
  std::int64_t parameter_count() const { return nn::parameter_count(*net_); }
  /// Deep copy (parameters and buffers).
  SegModel clone() const;

 private:
  SegNetConfig cfg_;
  std::shared_ptr<SegNetwork> net_;
};

/// Throws ConstructionError if the input side is not divisible by 2^depth.
SegModel build_segnet(const SegNetConfig& cfg, std::uint64_t init_seed = 0);

/// Probability map for one preprocessed image. Batch-norm always runs on its
/// running statistics; `stochastic` only switches dropout on.
ProbMap seg_forward(const SegModel& model, const Image& img, bool stochastic, std::uint64_t seed);

struct SegEpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double train_dice = 0.0;
  double train_jaccard = 0.0;
  double val_dice = 0.0;
  double val_jaccard = 0.0;
};

struct SegTrainResult {
  SegModel model;  // best-validation-Dice weights
  std::vector<SegEpochRecord> history;
  int best_epoch = 0;
};

/// Mean Dice and Jaccard of deterministic predictions binarized at 0.5.
std::pair<double, double> evaluate_overlap(const SegModel& model, std::span<const data::SegSample> samples);

/// Adam + per-pixel binary cross-entropy. With an empty validation set the
/// best checkpoint is chosen on training Dice.
SegTrainResult train_segnet(const SegModel& model, std::span<const data::SegSample> train,
                            std::span<const data::SegSample> val, const TrainConfig& cfg, std::uint64_t seed);
SegTrainResult train_segnet(const SegModel& model, const data::DatasetManifest& train, const data::DatasetManifest& val,
                            const TrainConfig& cfg, std::uint64_t seed);

/// Mean per-pixel BCE of a batch (the training objective).
torch::Tensor segmentation_loss(const torch::Tensor& logits, const torch::Tensor& targets);

/// Checkpoint directory: manifest.txt (architecture) + weights.pt.
void save_checkpoint(const SegModel& model, const std::filesystem::path& dir);
/// Throws CheckpointError when `expected` is given and differs from the
/// stored architecture, or when the weights do not fit.
SegModel load_checkpoint(const std::filesystem::path& dir, const std::optional<SegNetConfig>& expected = std::nullopt);

}  // namespace skinet::segnet
