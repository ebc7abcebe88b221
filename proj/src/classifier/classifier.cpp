#include "skinet/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "backbones.hpp"
#include "skinet/errors.hpp"
#include "skinet/io_util.hpp"

namespace skinet::classifier {

namespace {

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ",";
    out += items[i];
  }
  return out;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  if (io::trim(text).empty()) return out;
  for (auto& item : io::split_csv_line(text)) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::shared_ptr<BackboneNet> make_network(const ClassifierConfig& cfg) {
  auto sites = resolve_dropout_sites(cfg);
  switch (cfg.backbone) {
    case Backbone::desk_cnn:
      return std::make_shared<DeskCnn>(cfg, std::move(sites));
    case Backbone::resnet50_style:
      return std::make_shared<ResNetStyle>(cfg, std::move(sites));
    case Backbone::densenet169_style:
      break;
  }
  return std::make_shared<DenseNetStyle>(cfg, std::move(sites));
}

}  // namespace

std::string to_string(Backbone b) {
  switch (b) {
    case Backbone::densenet169_style:
      return "densenet169";
    case Backbone::resnet50_style:
      return "resnet50";
    case Backbone::desk_cnn:
      return "desk_cnn";
  }
  return "densenet169";
}

Backbone parse_backbone(const std::string& text) {
  if (text == "densenet169" || text == "densenet169_style") return Backbone::densenet169_style;
  if (text == "resnet50" || text == "resnet50_style") return Backbone::resnet50_style;
  if (text == "desk_cnn") return Backbone::desk_cnn;
  throw ValidationError("unknown classifier backbone '" + text + "'");
}

std::string to_string(DropoutPositions p) {
  switch (p) {
    case DropoutPositions::after_dense_blocks:
      return "after_dense_blocks";
    case DropoutPositions::after_stages:
      return "after_stages";
    case DropoutPositions::before_head:
      return "before_head";
    case DropoutPositions::custom:
      return "custom";
  }
  return "custom";
}

DropoutPositions parse_dropout_positions(const std::string& text) {
  if (text == "after_dense_blocks") return DropoutPositions::after_dense_blocks;
  if (text == "after_stages") return DropoutPositions::after_stages;
  if (text == "before_head") return DropoutPositions::before_head;
  if (text == "custom") return DropoutPositions::custom;
  throw ValidationError("unknown dropout placement '" + text + "'");
}

ClassifierConfig ClassifierConfig::for_backbone(Backbone b) {
  ClassifierConfig c;
  c.backbone = b;
  c.dropout_positions =
      b == Backbone::densenet169_style ? DropoutPositions::after_dense_blocks : DropoutPositions::after_stages;
  return c;
}

void ClassifierConfig::validate() const {
  if (input_size < 16) throw ConstructionError("classifier.input_size must be >= 16");
  if (channels < 1) throw ConstructionError("classifier.channels must be positive");
  if (labels.size() < 2) throw ConstructionError("classifier needs at least two class labels");
  std::vector<std::string> sorted = labels;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw ConstructionError("classifier labels must be unique");
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConstructionError("classifier.dropout_rate must lie in [0,1)");
  if (width < 0) throw ConstructionError("classifier.width must be >= 0");
  resolve_dropout_sites(*this);
}

void ClassifierConfig::write(KeyValues& kv, const std::string& prefix) const {
  kv.set(prefix + "backbone", to_string(backbone));
  kv.set(prefix + "input_size", input_size);
  kv.set(prefix + "channels", channels);
  kv.set(prefix + "labels", join(labels));
  kv.set(prefix + "dropout_rate", dropout_rate);
  kv.set(prefix + "dropout_positions", to_string(dropout_positions));
  kv.set(prefix + "custom_positions", join(custom_positions));
  kv.set(prefix + "width", width);
}

ClassifierConfig ClassifierConfig::read(const KeyValues& kv, const std::string& prefix) {
  ClassifierConfig c;
  if (auto b = kv.find(prefix + "backbone")) c = for_backbone(parse_backbone(*b));
  c.input_size = static_cast<int>(kv.get_int(prefix + "input_size", c.input_size));
  c.channels = static_cast<int>(kv.get_int(prefix + "channels", c.channels));
  if (auto l = kv.find(prefix + "labels")) c.labels = split_list(*l);
  c.dropout_rate = kv.get_double(prefix + "dropout_rate", c.dropout_rate);
  if (auto p = kv.find(prefix + "dropout_positions")) c.dropout_positions = parse_dropout_positions(*p);
  if (auto p = kv.find(prefix + "custom_positions")) c.custom_positions = split_list(*p);
  c.width = static_cast<int>(kv.get_int(prefix + "width", c.width));
  return c;
}

std::vector<std::string> dropout_sites(Backbone b) {
  if (b == Backbone::densenet169_style) return {"block1", "block2", "block3", "block4", "head"};
  return {"stage1", "stage2", "stage3", "stage4", "head"};
}

std::vector<std::string> resolve_dropout_sites(const ClassifierConfig& cfg) {
  switch (cfg.dropout_positions) {
    case DropoutPositions::after_dense_blocks:
      if (cfg.backbone != Backbone::densenet169_style) {
        throw ConstructionError("after_dense_blocks dropout requires the densenet169 backbone, not " +
                                to_string(cfg.backbone));
      }
      return {"block1", "block2", "block3", "block4"};
    case DropoutPositions::after_stages:
      if (cfg.backbone == Backbone::densenet169_style) {
        throw ConstructionError("after_stages dropout is not defined for the densenet169 backbone");
      }
      return {"stage1", "stage2", "stage3", "stage4"};
    case DropoutPositions::before_head:
      return {"head"};
    case DropoutPositions::custom:
      break;
  }
  const auto allowed = dropout_sites(cfg.backbone);
  for (const auto& site : cfg.custom_positions) {
    if (std::find(allowed.begin(), allowed.end(), site) == allowed.end()) {
      throw ConstructionError("dropout site '" + site + "' does not exist in the " + to_string(cfg.backbone) +
                              " backbone");
    }
  }
  return cfg.custom_positions;
}

ClfModel::ClfModel(ClassifierConfig cfg, std::shared_ptr<BackboneNet> net) : cfg_(std::move(cfg)), net_(std::move(net)) {}

torch::Tensor ClfModel::logits(const torch::Tensor& batch, nn::ForwardContext& ctx) const {
  if (batch.dim() != 4 || batch.size(1) != cfg_.channels || batch.size(2) != cfg_.input_size ||
      batch.size(3) != cfg_.input_size) {
    throw ValidationError("classifier expects N x " + std::to_string(cfg_.channels) + " x " +
                          std::to_string(cfg_.input_size) + " x " + std::to_string(cfg_.input_size) + " input");
  }
  return net_->forward(batch, ctx);
}

ClfModel ClfModel::clone() const {
  auto net = make_network(cfg_);
  nn::copy_state(*net_, *net);
  return ClfModel(cfg_, std::move(net));
}

ClfModel build_classifier(const ClassifierConfig& cfg, std::uint64_t init_seed) {
  cfg.validate();
  torch::manual_seed(init_seed);
  return ClfModel(cfg, make_network(cfg));
}

ProbabilityVector clf_forward(const ClfModel& model, const Image& img, bool stochastic, std::uint64_t seed) {
  return model.predict(img, stochastic, seed);
}

torch::Tensor classification_loss(const torch::Tensor& logits, const torch::Tensor& targets, LossKind kind) {
  if (kind == LossKind::categorical) return torch::nll_loss(torch::log_softmax(logits, 1), targets);
  auto probs = torch::softmax(logits, 1).clamp(1e-7, 1.0 - 1e-7);
  auto onehot = torch::one_hot(targets, logits.size(1)).to(probs.dtype());
  return torch::binary_cross_entropy(probs, onehot);
}

double accuracy(const ClassifierModel& model, std::span<const data::ClfSample> samples) {
  if (samples.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& s : samples) {
    if (model.predict(s.image, false, 0).argmax() == s.label) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(samples.size());
}

std::vector<data::ClfSample> balance_by_augmentation(std::span<const data::ClfSample> samples,
                                                     const data::AugmentationSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < samples.size(); ++i) by_class[samples[i].label].push_back(i);
  std::size_t target = 0;
  for (const auto& [label, idx] : by_class) target = std::max(target, idx.size());

  std::vector<data::ClfSample> copies;
  for (const auto& [label, idx] : by_class) {
    SplitMix64 rng(derive_seed(seed, static_cast<std::uint64_t>(label)));
    for (std::size_t k = 0; idx.size() + k < target; ++k) {
      const auto& src = samples[idx[k % idx.size()]];
      copies.push_back({src.id + "#aug" + std::to_string(k), data::augment(src.image, spec, rng), src.label});
    }
  }
  return copies;
}

ClfTrainResult train_classifier(const ClfModel& model, std::span<const data::ClfSample> train,
                                std::span<const data::ClfSample> val, const ClfTrainOptions& opts, std::uint64_t seed) {
  const TrainConfig& cfg = opts.train;
  cfg.validate();
  if (train.empty()) throw ValidationError("classification training set is empty");
  const int classes = model.config().num_classes();
  for (const auto& s : train) {
    if (s.label < 0 || s.label >= classes) {
      throw ValidationError("sample '" + s.id + "' has label index " + std::to_string(s.label) + " outside [0," +
                            std::to_string(classes) + ")");
    }
  }

  std::vector<data::ClfSample> pool(train.begin(), train.end());
  if (opts.balance_classes) {
    auto extra = balance_by_augmentation(train, opts.augmentation, derive_seed(seed, "balance"));
    pool.insert(pool.end(), std::make_move_iterator(extra.begin()), std::make_move_iterator(extra.end()));
  }

  ClfModel work = model.clone();
  torch::optim::Adam optimizer(work.network().parameters(), torch::optim::AdamOptions(cfg.learning_rate));
  auto ctx = nn::ForwardContext::training(derive_seed(seed, "dropout"));

  ClfTrainResult result{model.clone(), {}, 0};
  double best_score = -1.0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(pool.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    SplitMix64 rng(derive_seed(derive_seed(seed, "data"), static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<Image> images;
      std::vector<std::int64_t> labels;
      for (std::size_t k = start; k < end; ++k) {
        const auto& s = pool[order[k]];
        images.push_back(cfg.augment ? data::augment(s.image, opts.augmentation, rng) : s.image);
        labels.push_back(s.label);
      }
      optimizer.zero_grad();
      auto targets = torch::tensor(labels, torch::kLong);
      auto loss = classification_loss(work.logits(nn::to_tensor(images), ctx), targets, cfg.loss);
      const double value = loss.item<double>();
      if (!std::isfinite(value)) throw TrainingDivergedError(epoch, "non-finite classification loss");
      loss.backward();
      optimizer.step();
      loss_sum += value * static_cast<double>(end - start);
      seen += end - start;
    }

    ClfEpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(seen);
    rec.train_accuracy = accuracy(work, train);
    if (!val.empty()) rec.val_accuracy = accuracy(work, val);
    result.history.push_back(rec);
    const double score = val.empty() ? rec.train_accuracy : rec.val_accuracy;
    if (score > best_score) {
      best_score = score;
      result.best_epoch = epoch;
      result.model = work.clone();
    }
  }
  return result;
}

ClfTrainResult train_classifier(const ClfModel& model, const data::DatasetManifest& train,
                                const data::DatasetManifest& val, const ClfTrainOptions& opts, std::uint64_t seed) {
  if (train.entries.empty()) throw ValidationError("classification training manifest is empty");
  const auto tr = data::load_classification_samples(train, model.input_size());
  const auto va = data::load_classification_samples(val, model.input_size());
  return train_classifier(model, tr, va, opts, seed);
}

void save_checkpoint(const ClfModel& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  KeyValues kv;
  kv.set("checkpoint.kind", "classifier");
  kv.set("checkpoint.format_version", 1);
  model.config().write(kv, "classifier.");
  std::string labels;
  for (const auto& l : model.config().labels) labels += l + "\n";
  nn::save_weights(model.network(), dir / "weights.pt");
  io::write_file_atomic(dir / "labels.txt", labels);
  io::write_file_atomic(dir / "manifest.txt", kv.to_string());
}

ClfModel load_checkpoint(const std::filesystem::path& dir, const std::optional<ClassifierConfig>& expected) {
  if (!std::filesystem::is_directory(dir)) throw CheckpointError("missing checkpoint directory " + dir.string());
  const auto manifest = dir / "manifest.txt";
  if (!std::filesystem::exists(manifest)) throw CheckpointError("missing checkpoint manifest " + manifest.string());
  const KeyValues kv = KeyValues::load(manifest);
  if (kv.get_string("checkpoint.kind", "") != "classifier") {
    throw CheckpointError(dir.string() + " is not a classifier checkpoint");
  }
  ClassifierConfig cfg = ClassifierConfig::read(kv, "classifier.");
  const auto labels_path = dir / "labels.txt";
  if (std::filesystem::exists(labels_path)) {
    std::istringstream in(io::read_file(labels_path));
    std::vector<std::string> labels;
    for (std::string line; std::getline(in, line);) {
      line = io::trim(line);
      if (!line.empty()) labels.push_back(line);
    }
    if (labels != cfg.labels) throw CheckpointError("labels.txt disagrees with the manifest in " + dir.string());
  }
  if (expected && !(*expected == cfg)) {
    throw CheckpointError("checkpoint " + dir.string() + " architecture does not match the requested configuration");
  }
  ClfModel model = build_classifier(cfg);
  nn::load_weights(model.network(), dir / "weights.pt");
  return model;
}

}  // namespace skinet::classifier
