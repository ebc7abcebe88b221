#include "backbones.hpp"

#include <algorithm>

#include "skinet/errors.hpp"

namespace skinet::classifier {

namespace {

torch::nn::Conv2d conv(int in, int out, int kernel, int stride = 1, int padding = -1) {
  if (padding < 0) padding = kernel / 2;
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, kernel).stride(stride).padding(padding).bias(false));
}

bool contains(const std::vector<std::string>& v, const std::string& s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

}  // namespace

// ---------------------------------------------------------------- desk CNN

DeskCnn::DeskCnn(const ClassifierConfig& cfg, std::vector<std::string> sites)
    : rate_(cfg.dropout_rate), sites_(std::move(sites)) {
  const int width = cfg.width > 0 ? cfg.width : 16;
  int in = cfg.channels;
  for (int i = 0; i < 4; ++i) {
    blocks_.push_back(register_module("block" + std::to_string(i + 1), nn::ConvBn(in, width << i, 3, true)));
    in = width << i;
  }
  fc_ = register_module("fc", torch::nn::Linear(in, cfg.num_classes()));
}

torch::Tensor DeskCnn::forward(const torch::Tensor& x, nn::ForwardContext& ctx) {
  auto h = x;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const auto n = std::to_string(i + 1);
    h = blocks_[i]->forward(h, ctx);
    ctx.tap("conv" + n, h);
    h = torch::max_pool2d(h, 2);
    if (contains(sites_, "stage" + n)) h = nn::dropout(h, rate_, ctx);
  }
  h = h.mean({2, 3});
  if (contains(sites_, "head")) h = nn::dropout(h, rate_, ctx);
  return fc_->forward(h);
}

std::vector<std::string> DeskCnn::feature_layers() const { return {"conv1", "conv2", "conv3", "conv4"}; }

// ---------------------------------------------------------------- ResNet-50

ResNetStyle::Bottleneck::Bottleneck(int in, int planes, int stride) {
  conv1 = register_module("conv1", conv(in, planes, 1));
  bn1 = register_module("bn1", torch::nn::BatchNorm2d(planes));
  conv2 = register_module("conv2", conv(planes, planes, 3, stride));
  bn2 = register_module("bn2", torch::nn::BatchNorm2d(planes));
  conv3 = register_module("conv3", conv(planes, planes * 4, 1));
  bn3 = register_module("bn3", torch::nn::BatchNorm2d(planes * 4));
  if (stride != 1 || in != planes * 4) {
    down = register_module("down", conv(in, planes * 4, 1, stride, 0));
    down_bn = register_module("down_bn", torch::nn::BatchNorm2d(planes * 4));
  }
}

torch::Tensor ResNetStyle::Bottleneck::forward(const torch::Tensor& x, nn::ForwardContext& ctx) {
  auto h = nn::relu(nn::batch_norm(bn1, conv1->forward(x), ctx), ctx);
  h = nn::relu(nn::batch_norm(bn2, conv2->forward(h), ctx), ctx);
  h = nn::batch_norm(bn3, conv3->forward(h), ctx);
  auto identity = down ? nn::batch_norm(down_bn, down->forward(x), ctx) : x;
  return nn::relu(h + identity, ctx);
}

ResNetStyle::ResNetStyle(const ClassifierConfig& cfg, std::vector<std::string> sites)
    : rate_(cfg.dropout_rate), sites_(std::move(sites)) {
  const int base = cfg.width > 0 ? cfg.width : 64;
  stem_ = register_module("stem", conv(cfg.channels, base, 7, 2, 3));
  stem_bn_ = register_module("stem_bn", torch::nn::BatchNorm2d(base));
  const int counts[4] = {3, 4, 6, 3};
  int in = base;
  for (int s = 0; s < 4; ++s) {
    std::vector<std::shared_ptr<Bottleneck>> stage;
    const int planes = base << s;
    for (int b = 0; b < counts[s]; ++b) {
      const int stride = (b == 0 && s > 0) ? 2 : 1;
      stage.push_back(register_module("stage" + std::to_string(s + 1) + "_" + std::to_string(b),
                                      std::make_shared<Bottleneck>(in, planes, stride)));
      in = planes * 4;
    }
    stages_.push_back(std::move(stage));
  }
  fc_ = register_module("fc", torch::nn::Linear(in, cfg.num_classes()));
}

torch::Tensor ResNetStyle::forward(const torch::Tensor& x, nn::ForwardContext& ctx) {
  auto h = nn::relu(nn::batch_norm(stem_bn_, stem_->forward(x), ctx), ctx);
  h = torch::max_pool2d(h, 3, 2, 1);
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    for (auto& block : stages_[s]) h = block->forward(h, ctx);
    const auto name = "stage" + std::to_string(s + 1);
    ctx.tap(name, h);
    if (contains(sites_, name)) h = nn::dropout(h, rate_, ctx);
  }
  h = h.mean({2, 3});
  if (contains(sites_, "head")) h = nn::dropout(h, rate_, ctx);
  return fc_->forward(h);
}

std::vector<std::string> ResNetStyle::feature_layers() const { return {"stage1", "stage2", "stage3", "stage4"}; }

// ---------------------------------------------------------------- DenseNet-169

DenseNetStyle::DenseLayer::DenseLayer(int in, int growth) {
  bn1 = register_module("bn1", torch::nn::BatchNorm2d(in));
  conv1 = register_module("conv1", conv(in, 4 * growth, 1));
  bn2 = register_module("bn2", torch::nn::BatchNorm2d(4 * growth));
  conv2 = register_module("conv2", conv(4 * growth, growth, 3));
}

torch::Tensor DenseNetStyle::DenseLayer::forward(const torch::Tensor& x, nn::ForwardContext& ctx) {
  auto h = conv1->forward(nn::relu(nn::batch_norm(bn1, x, ctx), ctx));
  return conv2->forward(nn::relu(nn::batch_norm(bn2, h, ctx), ctx));
}

DenseNetStyle::Transition::Transition(int in, int out) {
  bn = register_module("bn", torch::nn::BatchNorm2d(in));
  conv_ = register_module("conv", conv(in, out, 1));
}

torch::Tensor DenseNetStyle::Transition::forward(const torch::Tensor& x, nn::ForwardContext& ctx) {
  return torch::avg_pool2d(conv_->forward(nn::relu(nn::batch_norm(bn, x, ctx), ctx)), 2);
}

DenseNetStyle::DenseNetStyle(const ClassifierConfig& cfg, std::vector<std::string> sites)
    : rate_(cfg.dropout_rate), sites_(std::move(sites)) {
  const int growth = cfg.width > 0 ? cfg.width : 32;
  int in = 2 * growth;
  stem_ = register_module("stem", conv(cfg.channels, in, 7, 2, 3));
  stem_bn_ = register_module("stem_bn", torch::nn::BatchNorm2d(in));
  const int layers[4] = {6, 12, 32, 32};
  for (int b = 0; b < 4; ++b) {
    std::vector<std::shared_ptr<DenseLayer>> block;
    for (int l = 0; l < layers[b]; ++l) {
      block.push_back(register_module("block" + std::to_string(b + 1) + "_" + std::to_string(l),
                                      std::make_shared<DenseLayer>(in, growth)));
      in += growth;
    }
    blocks_.push_back(std::move(block));
    if (b < 3) {
      transitions_.push_back(register_module("transition" + std::to_string(b + 1), std::make_shared<Transition>(in, in / 2)));
      in /= 2;
    }
  }
  final_bn_ = register_module("final_bn", torch::nn::BatchNorm2d(in));
  fc_ = register_module("fc", torch::nn::Linear(in, cfg.num_classes()));
}

torch::Tensor DenseNetStyle::forward(const torch::Tensor& x, nn::ForwardContext& ctx) {
  auto h = nn::relu(nn::batch_norm(stem_bn_, stem_->forward(x), ctx), ctx);
  h = torch::max_pool2d(h, 3, 2, 1);
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    for (auto& layer : blocks_[b]) h = torch::cat({h, layer->forward(h, ctx)}, 1);
    const auto name = "block" + std::to_string(b + 1);
    ctx.tap(name, h);
    if (contains(sites_, name)) h = nn::dropout(h, rate_, ctx);
    if (b < transitions_.size()) h = transitions_[b]->forward(h, ctx);
  }
  h = nn::relu(nn::batch_norm(final_bn_, h, ctx), ctx);
  ctx.tap("features", h);
  h = h.mean({2, 3});
  if (contains(sites_, "head")) h = nn::dropout(h, rate_, ctx);
  return fc_->forward(h);
}

std::vector<std::string> DenseNetStyle::feature_layers() const {
  return {"block1", "block2", "block3", "block4", "features"};
}

}  // namespace skinet::classifier
