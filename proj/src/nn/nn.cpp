#include "skinet/nn.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include "skinet/errors.hpp"

namespace skinet::nn {

namespace {

struct GuidedRelu : public torch::autograd::Function<GuidedRelu> {
  static torch::Tensor forward(torch::autograd::AutogradContext* ctx, const torch::Tensor& x) {
    ctx->save_for_backward({x});
    return x.clamp_min(0);
  }

  static torch::autograd::tensor_list backward(torch::autograd::AutogradContext* ctx,
                                               torch::autograd::tensor_list grads) {
    const auto x = ctx->get_saved_variables()[0];
    const auto& g = grads[0];
    // Zero where the forward input was negative and where the incoming
    // gradient is negative.
    return {g * (x > 0).to(g.scalar_type()) * (g > 0).to(g.scalar_type())};
  }
};

}  // namespace

ForwardContext ForwardContext::deterministic() { return {}; }

ForwardContext ForwardContext::monte_carlo(std::uint64_t seed) {
  ForwardContext ctx;
  ctx.stochastic = true;
  ctx.generator = make_generator(seed);
  return ctx;
}

ForwardContext ForwardContext::training(std::uint64_t seed) {
  ForwardContext ctx;
  ctx.train = true;
  ctx.generator = make_generator(seed);
  return ctx;
}

at::Generator make_generator(std::uint64_t seed) { return at::make_generator<at::CPUGeneratorImpl>(seed); }

torch::Tensor relu(const torch::Tensor& x, const ForwardContext& ctx) {
  if (ctx.relu_mode == ReluMode::guided) return GuidedRelu::apply(x);
  return torch::relu(x);
}

torch::Tensor dropout(const torch::Tensor& x, double rate, ForwardContext& ctx) {
  if (!ctx.dropout_active() || rate <= 0.0) return x;
  if (rate >= 1.0) return torch::zeros_like(x);
  if (!ctx.generator) throw ValidationError("active dropout requires a seeded generator");
  auto keep = torch::empty_like(x, torch::TensorOptions().requires_grad(false));
  keep.bernoulli_(1.0 - rate, *ctx.generator);
  return x * keep / (1.0 - rate);
}

torch::Tensor batch_norm(const torch::nn::BatchNorm2d& bn, const torch::Tensor& x, const ForwardContext& ctx) {
  const auto& opt = bn->options;
  // A single value per channel has no batch variance and would poison the
  // running estimate; such batches (a trailing batch of one at a 1x1 bridge)
  // fall back to the running statistics.
  const bool batch_stats = ctx.train && x.numel() / x.size(1) > 1;
  return torch::batch_norm(x, bn->weight, bn->bias, bn->running_mean, bn->running_var, batch_stats,
                           opt.momentum().value_or(0.1), opt.eps(), /*cudnn_enabled=*/false);
}

ConvBnImpl::ConvBnImpl(int in_channels, int out_channels, int kernel, bool act) : activation(act) {
  if (in_channels < 1 || out_channels < 1) throw ConstructionError("convolution channel counts must be positive");
  conv = register_module(
      "conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels, out_channels, kernel).padding(kernel / 2)));
  bn = register_module("bn", torch::nn::BatchNorm2d(out_channels));
}

torch::Tensor ConvBnImpl::forward(const torch::Tensor& x, ForwardContext& ctx) {
  auto y = batch_norm(bn, conv->forward(x), ctx);
  return activation ? relu(y, ctx) : y;
}

torch::Tensor to_tensor(const Image& img) {
  if (img.pixels.size() != static_cast<std::size_t>(img.height) * img.width * img.channels) {
    throw ValidationError("image buffer does not match its shape");
  }
  auto hwc = torch::from_blob(const_cast<float*>(img.pixels.data()), {img.height, img.width, img.channels},
                              torch::kFloat32);
  return hwc.permute({2, 0, 1}).unsqueeze(0).contiguous();
}

torch::Tensor to_tensor(std::span<const Image> images) {
  if (images.empty()) throw ValidationError("empty image batch");
  std::vector<torch::Tensor> parts;
  parts.reserve(images.size());
  for (const auto& img : images) {
    if (!img.same_shape(images.front())) throw ValidationError("images in a batch must share a shape");
    parts.push_back(to_tensor(img));
  }
  return torch::cat(parts, 0);
}

torch::Tensor to_tensor(std::span<const BinaryMask> masks) {
  if (masks.empty()) throw ValidationError("empty mask batch");
  std::vector<torch::Tensor> parts;
  for (const auto& m : masks) {
    if (!m.same_shape(masks.front())) throw ValidationError("masks in a batch must share a shape");
    parts.push_back(torch::from_blob(const_cast<std::uint8_t*>(m.pixels.data()), {1, 1, m.height, m.width}, torch::kUInt8)
                        .to(torch::kFloat32));
  }
  return torch::cat(parts, 0);
}

ProbMap to_prob_map(const torch::Tensor& t) {
  auto s = t.detach().to(torch::kFloat32).contiguous();
  while (s.dim() > 2) {
    if (s.size(0) != 1) throw ValidationError("expected a single-channel map");
    s = s.squeeze(0);
  }
  if (s.dim() != 2) throw ValidationError("expected a 2-d map");
  ProbMap m(static_cast<int>(s.size(0)), static_cast<int>(s.size(1)));
  std::copy_n(s.data_ptr<float>(), m.values.size(), m.values.begin());
  return m;
}

std::int64_t parameter_count(const torch::nn::Module& module) {
  std::int64_t n = 0;
  for (const auto& p : module.parameters()) n += p.numel();
  return n;
}

std::vector<torch::Tensor> snapshot_parameters(const torch::nn::Module& module) {
  std::vector<torch::Tensor> out;
  for (const auto& p : module.parameters()) out.push_back(p.detach().clone());
  return out;
}

void copy_state(const torch::nn::Module& src, torch::nn::Module& dst) {
  torch::NoGradGuard guard;
  const auto sp = src.named_parameters();
  auto dp = dst.named_parameters();
  for (const auto& item : sp) dp[item.key()].copy_(item.value());
  const auto sb = src.named_buffers();
  auto db = dst.named_buffers();
  for (const auto& item : sb) db[item.key()].copy_(item.value());
}

void save_weights(const torch::nn::Module& module, const std::filesystem::path& path) {
  torch::serialize::OutputArchive archive;
  module.save(archive);
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  archive.save_to(tmp.string());
  std::filesystem::rename(tmp, path);
}

void load_weights(torch::nn::Module& module, const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw CheckpointError("missing weights file " + path.string());
  torch::serialize::InputArchive archive;
  try {
    archive.load_from(path.string());
    module.load(archive);
  } catch (const c10::Error& e) {
    throw CheckpointError("weights in " + path.string() + " do not match the architecture: " + e.what_without_backtrace());
  }
}

}  // namespace skinet::nn
