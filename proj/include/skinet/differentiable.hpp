#pragma once

#include <torch/torch.h>

#include <string>
#include <vector>

#include "skinet/model.hpp"
#include "skinet/nn.hpp"

namespace skinet {

/// A classifier whose class scores can be differentiated with respect to the
/// input and to named intermediate feature maps. Saliency methods operate on
/// this interface.
class DifferentiableClassifier : public ClassifierModel {
 public:
  /// Pre-softmax class scores, N x num_classes.
  virtual torch::Tensor logits(const torch::Tensor& batch, nn::ForwardContext& ctx) const = 0;

  /// Convolutional feature layers that ctx.capture_layer may name, ordered
  /// from input to output.
  virtual std::vector<std::string> feature_layers() const { return {}; }
  /// Grad-CAM target when none is given: the last convolutional layer.
  virtual std::string default_feature_layer() const;
  /// Whether the network routes its nonlinearities through nn::relu, which
  /// guided backpropagation requires.
  virtual bool has_relu() const = 0;
  virtual int input_channels() const { return 3; }
  /// Element type logits() expects for its input batch.
  virtual torch::ScalarType input_dtype() const { return torch::kFloat; }

  /// Softmax of the logits, computed in double precision.
  ProbabilityVector predict(const Image& img, bool stochastic, std::uint64_t seed) const override;
};

}  // namespace skinet
