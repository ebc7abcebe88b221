#include "skinet/segnet.hpp"

#include <cmath>

#include "skinet/errors.hpp"
#include "skinet/io_util.hpp"

namespace skinet::segnet {

namespace {

constexpr float kProbFloor = 1e-7F;
constexpr float kProbCeil = 1.0F - 1e-7F;

}  // namespace

MultiResBlockSpec MultiResBlockSpec::from_budget(int in_channels, int budget) {
  MultiResBlockSpec s;
  s.in_channels = in_channels;
  const int a = budget / 6;
  const int b = budget / 3;
  s.branch_filters = {a, b, budget - a - b};
  s.shortcut_filters = budget;
  return s;
}

void MultiResBlockSpec::validate() const {
  if (in_channels < 1) throw ConstructionError("MultiRes block needs at least one input channel");
  for (int f : branch_filters) {
    if (f < 1) throw ConstructionError("MultiRes branch filter counts must be >= 1");
  }
  const int sum = branch_filters[0] + branch_filters[1] + branch_filters[2];
  if (sum != shortcut_filters) {
    throw ConstructionError("MultiRes concat width " + std::to_string(sum) + " does not match shortcut width " +
                            std::to_string(shortcut_filters));
  }
}

std::vector<ResPathSpec> default_res_path_specs(int res_filters, int depth) {
  std::vector<ResPathSpec> out;
  for (int i = 0; i < depth; ++i) out.push_back({0, res_filters << i, depth - i});
  return out;
}

MultiResBlockImpl::MultiResBlockImpl(const MultiResBlockSpec& spec) : spec_(spec) {
  spec.validate();
  const auto& f = spec.branch_filters;
  conv3 = register_module("conv3", nn::ConvBn(spec.in_channels, f[0], 3, true));
  conv5 = register_module("conv5", nn::ConvBn(f[0], f[1], 3, true));
  conv7 = register_module("conv7", nn::ConvBn(f[1], f[2], 3, true));
  shortcut = register_module("shortcut", nn::ConvBn(spec.in_channels, spec.shortcut_filters, 1, false));
  concat_bn = register_module("concat_bn", torch::nn::BatchNorm2d(spec.shortcut_filters));
  out_bn = register_module("out_bn", torch::nn::BatchNorm2d(spec.shortcut_filters));
}

torch::Tensor MultiResBlockImpl::forward(const torch::Tensor& x, nn::ForwardContext& ctx) {
  auto a = conv3->forward(x, ctx);
  auto b = conv5->forward(a, ctx);
  auto c = conv7->forward(b, ctx);
  auto merged = nn::batch_norm(concat_bn, torch::cat({a, b, c}, 1), ctx);
  auto out = nn::relu(merged + shortcut->forward(x, ctx), ctx);
  return nn::batch_norm(out_bn, out, ctx);
}

ResPathImpl::ResPathImpl(const ResPathSpec& spec) {
  if (spec.length < 1) throw ConstructionError("Res path length must be >= 1");
  if (spec.filters < 1 || spec.in_channels < 1) throw ConstructionError("Res path channel counts must be positive");
  int in = spec.in_channels;
  for (int i = 0; i < spec.length; ++i) {
    const auto idx = std::to_string(i);
    convs.push_back(register_module("conv" + idx, nn::ConvBn(in, spec.filters, 3, true)));
    shortcuts.push_back(register_module("shortcut" + idx, nn::ConvBn(in, spec.filters, 1, false)));
    norms.push_back(register_module("norm" + idx, torch::nn::BatchNorm2d(spec.filters)));
    in = spec.filters;
  }
}

torch::Tensor ResPathImpl::forward(const torch::Tensor& x, nn::ForwardContext& ctx) {
  auto h = x;
  for (std::size_t i = 0; i < convs.size(); ++i) {
    auto sum = shortcuts[i]->forward(h, ctx) + convs[i]->forward(h, ctx);
    h = nn::batch_norm(norms[i], nn::relu(sum, ctx), ctx);
  }
  return h;
}

std::string to_string(SegArchitecture arch) { return arch == SegArchitecture::unet ? "unet" : "multiresunet"; }

SegArchitecture parse_seg_architecture(const std::string& text) {
  if (text == "multiresunet") return SegArchitecture::multiresunet;
  if (text == "unet") return SegArchitecture::unet;
  throw ValidationError("unknown segmentation architecture '" + text + "'");
}

void SegNetConfig::validate() const {
  if (depth < 1) throw ConstructionError("segnet.depth must be >= 1");
  if (input_size < 1 || input_size % (1 << depth) != 0) {
    throw ConstructionError("segnet.input_size " + std::to_string(input_size) + " is not divisible by 2^" +
                            std::to_string(depth));
  }
  if (channels < 1) throw ConstructionError("segnet.channels must be positive");
  if (architecture == SegArchitecture::multiresunet && base_w < 6) {
    throw ConstructionError("segnet.base_w must be >= 6 so every MultiRes branch gets a filter");
  }
  if (base_w < 1) throw ConstructionError("segnet.base_w must be positive");
  if (res_filters < 1) throw ConstructionError("segnet.res_filters must be positive");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConstructionError("segnet.dropout_rate must lie in [0,1)");
}

void SegNetConfig::write(KeyValues& kv, const std::string& prefix) const {
  kv.set(prefix + "architecture", to_string(architecture));
  kv.set(prefix + "input_size", input_size);
  kv.set(prefix + "channels", channels);
  kv.set(prefix + "base_w", base_w);
  kv.set(prefix + "res_filters", res_filters);
  kv.set(prefix + "depth", depth);
  kv.set(prefix + "dropout_rate", dropout_rate);
  kv.set(prefix + "decoder_dropout", decoder_dropout);
}

SegNetConfig SegNetConfig::read(const KeyValues& kv, const std::string& prefix) { return read(kv, prefix, SegNetConfig()); }

SegNetConfig SegNetConfig::read(const KeyValues& kv, const std::string& prefix, const SegNetConfig& defaults) {
  SegNetConfig c = defaults;
  c.architecture = parse_seg_architecture(kv.get_string(prefix + "architecture", to_string(c.architecture)));
  c.input_size = static_cast<int>(kv.get_int(prefix + "input_size", c.input_size));
  c.channels = static_cast<int>(kv.get_int(prefix + "channels", c.channels));
  c.base_w = static_cast<int>(kv.get_int(prefix + "base_w", c.base_w));
  c.res_filters = static_cast<int>(kv.get_int(prefix + "res_filters", c.res_filters));
  c.depth = static_cast<int>(kv.get_int(prefix + "depth", c.depth));
  c.dropout_rate = kv.get_double(prefix + "dropout_rate", c.dropout_rate);
  c.decoder_dropout = kv.get_bool(prefix + "decoder_dropout", c.decoder_dropout);
  return c;
}

MultiResUNet::MultiResUNet(const SegNetConfig& cfg) : cfg_(cfg) {
  cfg.validate();
  int in = cfg.channels;
  const auto paths = default_res_path_specs(cfg.res_filters, cfg.depth);
  for (int i = 0; i < cfg.depth; ++i) {
    const auto idx = std::to_string(i);
    auto block = register_module("encoder" + idx, MultiResBlock(MultiResBlockSpec::from_budget(in, cfg.base_w << i)));
    in = block->spec().out_channels();
    encoder.push_back(block);
    ResPathSpec rp = paths[static_cast<std::size_t>(i)];
    rp.in_channels = in;
    res_paths.push_back(register_module("respath" + idx, ResPath(rp)));
  }
  bridge = register_module("bridge", MultiResBlock(MultiResBlockSpec::from_budget(in, cfg.base_w << cfg.depth)));
  in = bridge->spec().out_channels();
  upsamplers.resize(static_cast<std::size_t>(cfg.depth), nullptr);
  decoder.resize(static_cast<std::size_t>(cfg.depth), nullptr);
  for (int i = cfg.depth - 1; i >= 0; --i) {
    const auto idx = std::to_string(i);
    const int up = cfg.res_filters << i;
    upsamplers[static_cast<std::size_t>(i)] = register_module(
        "up" + idx, torch::nn::ConvTranspose2d(torch::nn::ConvTranspose2dOptions(in, up, 2).stride(2)));
    auto block = register_module("decoder" + idx, MultiResBlock(MultiResBlockSpec::from_budget(2 * up, cfg.base_w << i)));
    in = block->spec().out_channels();
    decoder[static_cast<std::size_t>(i)] = block;
  }
  head = register_module("head", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, 1, 1)));
}

torch::Tensor MultiResUNet::forward(const torch::Tensor& x, nn::ForwardContext& ctx) {
  std::vector<torch::Tensor> skips;
  auto h = x;
  for (int i = 0; i < cfg_.depth; ++i) {
    auto e = encoder[static_cast<std::size_t>(i)]->forward(h, ctx);
    ctx.tap("encoder" + std::to_string(i), e);
    skips.push_back(res_paths[static_cast<std::size_t>(i)]->forward(e, ctx));
    h = nn::dropout(torch::max_pool2d(e, 2), cfg_.dropout_rate, ctx);
  }
  h = bridge->forward(h, ctx);
  ctx.tap("bridge", h);
  for (int i = cfg_.depth - 1; i >= 0; --i) {
    auto u = upsamplers[static_cast<std::size_t>(i)]->forward(h);
    if (cfg_.decoder_dropout) u = nn::dropout(u, cfg_.dropout_rate, ctx);
    h = decoder[static_cast<std::size_t>(i)]->forward(torch::cat({u, skips[static_cast<std::size_t>(i)]}, 1), ctx);
    ctx.tap("decoder" + std::to_string(i), h);
  }
  return head->forward(h);
}

UNet::UNet(const SegNetConfig& cfg) : cfg_(cfg) {
  cfg.validate();
  auto make = [this](const std::string& name, int in, int out) {
    DoubleConv d;
    d.a = register_module(name + "a", nn::ConvBn(in, out, 3, true));
    d.b = register_module(name + "b", nn::ConvBn(out, out, 3, true));
    return d;
  };
  int in = cfg.channels;
  for (int i = 0; i < cfg.depth; ++i) {
    encoder_.push_back(make("encoder" + std::to_string(i), in, cfg.base_w << i));
    in = cfg.base_w << i;
  }
  bridge_ = make("bridge", in, cfg.base_w << cfg.depth);
  in = cfg.base_w << cfg.depth;
  upsamplers_.resize(static_cast<std::size_t>(cfg.depth), nullptr);
  decoder_.resize(static_cast<std::size_t>(cfg.depth));
  for (int i = cfg.depth - 1; i >= 0; --i) {
    const auto idx = std::to_string(i);
    const int out = cfg.base_w << i;
    upsamplers_[static_cast<std::size_t>(i)] =
        register_module("up" + idx, torch::nn::ConvTranspose2d(torch::nn::ConvTranspose2dOptions(in, out, 2).stride(2)));
    decoder_[static_cast<std::size_t>(i)] = make("decoder" + idx, 2 * out, out);
    in = out;
  }
  head_ = register_module("head", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, 1, 1)));
}

torch::Tensor UNet::forward(const torch::Tensor& x, nn::ForwardContext& ctx) {
  std::vector<torch::Tensor> skips;
  auto h = x;
  for (auto& d : encoder_) {
    h = d.b->forward(d.a->forward(h, ctx), ctx);
    skips.push_back(h);
    h = torch::max_pool2d(h, 2);
  }
  h = bridge_.b->forward(bridge_.a->forward(h, ctx), ctx);
  for (int i = cfg_.depth - 1; i >= 0; --i) {
    auto u = upsamplers_[static_cast<std::size_t>(i)]->forward(h);
    auto& d = decoder_[static_cast<std::size_t>(i)];
    h = d.b->forward(d.a->forward(torch::cat({u, skips[static_cast<std::size_t>(i)]}, 1), ctx), ctx);
  }
  return head_->forward(h);
}

SegModel::SegModel(SegNetConfig cfg, std::shared_ptr<SegNetwork> net) : cfg_(cfg), net_(std::move(net)) {}

torch::Tensor SegModel::logits(const torch::Tensor& batch, nn::ForwardContext& ctx) const {
  if (batch.dim() != 4 || batch.size(1) != cfg_.channels || batch.size(2) != cfg_.input_size ||
      batch.size(3) != cfg_.input_size) {
    throw ValidationError("segmenter expects N x " + std::to_string(cfg_.channels) + " x " +
                          std::to_string(cfg_.input_size) + " x " + std::to_string(cfg_.input_size) + " input");
  }
  return net_->forward(batch, ctx);
}

ProbMap SegModel::predict(const Image& img, bool stochastic, std::uint64_t seed) const {
  if (img.height != cfg_.input_size || img.width != cfg_.input_size || img.channels != cfg_.channels) {
    throw ValidationError("segmenter expects a " + std::to_string(cfg_.input_size) + "x" +
                          std::to_string(cfg_.input_size) + "x" + std::to_string(cfg_.channels) + " image, got " +
                          std::to_string(img.height) + "x" + std::to_string(img.width) + "x" +
                          std::to_string(img.channels));
  }
  torch::NoGradGuard no_grad;
  auto ctx = stochastic ? nn::ForwardContext::monte_carlo(seed) : nn::ForwardContext::deterministic();
  auto probs = torch::sigmoid(logits(nn::to_tensor(img), ctx)).clamp(kProbFloor, kProbCeil);
  return nn::to_prob_map(probs[0][0]);
}

namespace {

std::shared_ptr<SegNetwork> make_network(const SegNetConfig& cfg) {
  if (cfg.architecture == SegArchitecture::unet) return std::make_shared<UNet>(cfg);
  return std::make_shared<MultiResUNet>(cfg);
}

}  // namespace

SegModel SegModel::clone() const {
  auto net = make_network(cfg_);
  nn::copy_state(*net_, *net);
  return SegModel(cfg_, std::move(net));
}

SegModel build_segnet(const SegNetConfig& cfg, std::uint64_t init_seed) {
  cfg.validate();
  torch::manual_seed(init_seed);
  return SegModel(cfg, make_network(cfg));
}

ProbMap seg_forward(const SegModel& model, const Image& img, bool stochastic, std::uint64_t seed) {
  return model.predict(img, stochastic, seed);
}

torch::Tensor segmentation_loss(const torch::Tensor& logits, const torch::Tensor& targets) {
  return torch::binary_cross_entropy_with_logits(logits, targets);
}

std::pair<double, double> evaluate_overlap(const SegModel& model, std::span<const data::SegSample> samples) {
  if (samples.empty()) return {0.0, 0.0};
  double di = 0.0;
  double ji = 0.0;
  for (const auto& s : samples) {
    const BinaryMask pred = binarize(model.predict(s.image, false, 0), 0.5);
    di += dice(pred, s.mask);
    ji += jaccard(pred, s.mask);
  }
  const auto n = static_cast<double>(samples.size());
  return {di / n, ji / n};
}

SegTrainResult train_segnet(const SegModel& model, std::span<const data::SegSample> train,
                            std::span<const data::SegSample> val, const TrainConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (train.empty()) throw ValidationError("segmentation training set is empty");
  for (const auto& s : train) {
    if (!s.mask.same_shape(BinaryMask(s.image.height, s.image.width))) {
      throw ValidationError("mask of '" + s.id + "' does not match its image");
    }
  }

  SegModel work = model.clone();
  torch::optim::Adam optimizer(work.network().parameters(), torch::optim::AdamOptions(cfg.learning_rate));
  auto ctx = nn::ForwardContext::training(derive_seed(seed, "dropout"));
  const data::AugmentationSpec aug;

  SegTrainResult result{model.clone(), {}, 0};
  double best_score = -1.0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    SplitMix64 rng(derive_seed(derive_seed(seed, "data"), static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<Image> images;
      std::vector<BinaryMask> masks;
      for (std::size_t k = start; k < end; ++k) {
        const auto& s = train[order[k]];
        if (cfg.augment) {
          const auto draw = data::sample_augmentation(aug, rng);
          images.push_back(data::apply_augmentation(s.image, draw));
          masks.push_back(data::apply_augmentation(s.mask, draw));
        } else {
          images.push_back(s.image);
          masks.push_back(s.mask);
        }
      }
      optimizer.zero_grad();
      auto loss = segmentation_loss(work.logits(nn::to_tensor(images), ctx), nn::to_tensor(masks));
      const double value = loss.item<double>();
      if (!std::isfinite(value)) throw TrainingDivergedError(epoch, "non-finite segmentation loss");
      loss.backward();
      optimizer.step();
      loss_sum += value * static_cast<double>(end - start);
      seen += end - start;
    }

    SegEpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(seen);
    std::tie(rec.train_dice, rec.train_jaccard) = evaluate_overlap(work, train);
    if (!val.empty()) std::tie(rec.val_dice, rec.val_jaccard) = evaluate_overlap(work, val);
    result.history.push_back(rec);
    const double score = val.empty() ? rec.train_dice : rec.val_dice;
    if (score > best_score) {
      best_score = score;
      result.best_epoch = epoch;
      result.model = work.clone();
    }
  }
  return result;
}

SegTrainResult train_segnet(const SegModel& model, const data::DatasetManifest& train, const data::DatasetManifest& val,
                            const TrainConfig& cfg, std::uint64_t seed) {
  if (train.entries.empty()) throw ValidationError("segmentation training manifest is empty");
  const auto tr = data::load_segmentation_samples(train, model.input_size());
  const auto va = data::load_segmentation_samples(val, model.input_size());
  return train_segnet(model, tr, va, cfg, seed);
}

void save_checkpoint(const SegModel& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  KeyValues kv;
  kv.set("checkpoint.kind", "segmenter");
  kv.set("checkpoint.format_version", 1);
  model.config().write(kv, "segnet.");
  nn::save_weights(model.network(), dir / "weights.pt");
  io::write_file_atomic(dir / "manifest.txt", kv.to_string());
}

SegModel load_checkpoint(const std::filesystem::path& dir, const std::optional<SegNetConfig>& expected) {
  if (!std::filesystem::is_directory(dir)) throw CheckpointError("missing checkpoint directory " + dir.string());
  const auto manifest = dir / "manifest.txt";
  if (!std::filesystem::exists(manifest)) throw CheckpointError("missing checkpoint manifest " + manifest.string());
  const KeyValues kv = KeyValues::load(manifest);
  if (kv.get_string("checkpoint.kind", "") != "segmenter") {
    throw CheckpointError(dir.string() + " is not a segmenter checkpoint");
  }
  const SegNetConfig cfg = SegNetConfig::read(kv, "segnet.");
  if (expected && !(*expected == cfg)) {
    throw CheckpointError("checkpoint " + dir.string() + " architecture does not match the requested configuration");
  }
  SegModel model = build_segnet(cfg);
  nn::load_weights(model.network(), dir / "weights.pt");
  return model;
}

}  // namespace skinet::segnet
