#pragma once

#include <memory>
#include <string>
#include <vector>

#include "skinet/classifier.hpp"

namespace skinet::classifier {

/// conv3x3-BN-ReLU-maxpool x 4, global average pooling, linear head.
class DeskCnn : public BackboneNet {
 public:
  DeskCnn(const ClassifierConfig& cfg, std::vector<std::string> sites);
  torch::Tensor forward(const torch::Tensor& x, nn::ForwardContext& ctx) override;
  std::vector<std::string> feature_layers() const override;

 private:
  double rate_;
  std::vector<std::string> sites_;
  std::vector<nn::ConvBn> blocks_;
  torch::nn::Linear fc_{nullptr};
};

/// Bottleneck ResNet with the [3,4,6,3] stage layout.
class ResNetStyle : public BackboneNet {
 public:
  ResNetStyle(const ClassifierConfig& cfg, std::vector<std::string> sites);
  torch::Tensor forward(const torch::Tensor& x, nn::ForwardContext& ctx) override;
  std::vector<std::string> feature_layers() const override;

 private:
  struct Bottleneck : torch::nn::Module {
    Bottleneck(int in, int planes, int stride);
    torch::Tensor forward(const torch::Tensor& x, nn::ForwardContext& ctx);
    torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, conv3{nullptr}, down{nullptr};
    torch::nn::BatchNorm2d bn1{nullptr}, bn2{nullptr}, bn3{nullptr}, down_bn{nullptr};
  };

  double rate_;
  std::vector<std::string> sites_;
  torch::nn::Conv2d stem_{nullptr};
  torch::nn::BatchNorm2d stem_bn_{nullptr};
  std::vector<std::vector<std::shared_ptr<Bottleneck>>> stages_;
  torch::nn::Linear fc_{nullptr};
};

/// DenseNet with (6,12,32,32) bottleneck layers, compression 0.5.
class DenseNetStyle : public BackboneNet {
 public:
  DenseNetStyle(const ClassifierConfig& cfg, std::vector<std::string> sites);
  torch::Tensor forward(const torch::Tensor& x, nn::ForwardContext& ctx) override;
  std::vector<std::string> feature_layers() const override;

 private:
  struct DenseLayer : torch::nn::Module {
    DenseLayer(int in, int growth);
    torch::Tensor forward(const torch::Tensor& x, nn::ForwardContext& ctx);
    torch::nn::BatchNorm2d bn1{nullptr}, bn2{nullptr};
    torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
  };
  struct Transition : torch::nn::Module {
    Transition(int in, int out);
    torch::Tensor forward(const torch::Tensor& x, nn::ForwardContext& ctx);
    torch::nn::BatchNorm2d bn{nullptr};
    torch::nn::Conv2d conv_{nullptr};
  };

  double rate_;
  std::vector<std::string> sites_;
  torch::nn::Conv2d stem_{nullptr};
  torch::nn::BatchNorm2d stem_bn_{nullptr};
  std::vector<std::vector<std::shared_ptr<DenseLayer>>> blocks_;
  std::vector<std::shared_ptr<Transition>> transitions_;
  torch::nn::BatchNorm2d final_bn_{nullptr};
  torch::nn::Linear fc_{nullptr};
};

}  // namespace skinet::classifier
