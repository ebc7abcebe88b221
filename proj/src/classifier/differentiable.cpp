#include "skinet/differentiable.hpp"

#include "skinet/errors.hpp"

namespace skinet {

std::string DifferentiableClassifier::default_feature_layer() const {
  const auto layers = feature_layers();
  if (layers.empty()) throw UnsupportedModelError("classifier exposes no convolutional feature layer");
  return layers.back();
}

ProbabilityVector DifferentiableClassifier::predict(const Image& img, bool stochastic, std::uint64_t seed) const {
  if (img.height != input_size() || img.width != input_size() || img.channels != input_channels()) {
    throw ValidationError("classifier expects a " + std::to_string(input_size()) + "x" + std::to_string(input_size()) +
                          "x" + std::to_string(input_channels()) + " image, got " + std::to_string(img.height) + "x" +
                          std::to_string(img.width) + "x" + std::to_string(img.channels));
  }
  torch::NoGradGuard no_grad;
  auto ctx = stochastic ? nn::ForwardContext::monte_carlo(seed) : nn::ForwardContext::deterministic();
  auto probs = torch::softmax(logits(nn::to_tensor(img).to(input_dtype()), ctx).to(torch::kDouble), 1)[0].contiguous();
  ProbabilityVector out;
  out.class_labels = labels();
  out.probs.assign(probs.data_ptr<double>(), probs.data_ptr<double>() + probs.numel());
  return out;
}

}  // namespace skinet
