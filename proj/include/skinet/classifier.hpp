#pragma once

// Dropout-augmented lesion classifiers.
//
// Three backbones share one interface: DenseNet-169 and ResNet-50 built from
// their standard layer recipes, and a four-block CNN small enough to train
// in minutes on a CPU. Dropout sites are named taps ("block1".."block4" for
// DenseNet, "stage1".."stage4" for the others, "head" before the final linear
// layer) selected by ClassifierConfig.

#include <torch/torch.h>

#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "skinet/data.hpp"
#include "skinet/differentiable.hpp"
#include "skinet/keyvalue.hpp"
#include "skinet/nn.hpp"
#include "skinet/training.hpp"

namespace skinet::classifier {

enum class Backbone { densenet169_style, resnet50_style, desk_cnn };

std::string to_string(Backbone b);
Backbone parse_backbone(const std::string& text);

enum class DropoutPositions { after_dense_blocks, after_stages, before_head, custom };

std::string to_string(DropoutPositions p);
DropoutPositions parse_dropout_positions(const std::string& text);

struct ClassifierConfig {
  Backbone backbone = Backbone::densenet169_style;
  int input_size = kDefaultImageSize;
  int channels = 3;
  std::vector<std::string> labels = lesion_labels();
  double dropout_rate = 0.5;
  DropoutPositions dropout_positions = DropoutPositions::after_dense_blocks;
  std::vector<std::string> custom_positions;  // used with DropoutPositions::custom
  /// Width knob; 0 selects the standard default (desk: 16 base filters,
  /// ResNet: 64 base planes, DenseNet: growth rate 32).
  int width = 0;

  int num_classes() const { return static_cast<int>(labels.size()); }

  /// Config with the default dropout placement for the backbone.
  static ClassifierConfig for_backbone(Backbone b);

  void validate() const;
  void write(KeyValues& kv, const std::string& prefix) const;
  static ClassifierConfig read(const KeyValues& kv, const std::string& prefix);
  friend bool operator==(const ClassifierConfig&, const ClassifierConfig&) = default;
};

/// Dropout tap names a backbone offers.
std::vector<std::string> dropout_sites(Backbone b);

/// Resolves the configured placement to tap names. Throws ConstructionError
/// on a specifier the backbone does not support.
std::vector<std::string> resolve_dropout_sites(const ClassifierConfig& cfg);

/// Backbone network returning logits.
class BackboneNet : public torch::nn::Module {
 public:
  virtual torch::Tensor forward(const torch::Tensor& x, nn::ForwardContext& ctx) = 0;
  virtual std::vector<std::string> feature_layers() const = 0;
};

class ClfModel : public DifferentiableClassifier {
 public:
  ClfModel(ClassifierConfig cfg, std::shared_ptr<BackboneNet> net);

  torch::Tensor logits(const torch::Tensor& batch, nn::ForwardContext& ctx) const override;
  std::vector<std::string> feature_layers() const override { return net_->feature_layers(); }
  bool has_relu() const override { return true; }
  int input_channels() const override { return cfg_.channels; }
  std::vector<std::string> labels() const override { return cfg_.labels; }
  int input_size() const override { return cfg_.input_size; }

  const ClassifierConfig& config() const { return cfg_; }
  BackboneNet& network() const { return *net_; }
  std::int64_t parameter_count() const { return nn::parameter_count(*net_); }
  ClfModel clone() const;

 private:
  ClassifierConfig cfg_;
  std::shared_ptr<BackboneNet> net_;
};

ClfModel build_classifier(const ClassifierConfig& cfg, std::uint64_t init_seed = 0);

/// Posterior for one preprocessed image; batch-norm uses running statistics
/// and `stochastic` only switches dropout on.
ProbabilityVector clf_forward(const ClfModel& model, const Image& img, bool stochastic, std::uint64_t seed);

/// Objective used by train_classifier.
torch::Tensor classification_loss(const torch::Tensor& logits, const torch::Tensor& targets, LossKind kind);

struct ClfEpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;
};

struct ClfTrainResult {
  ClfModel model;  // best-validation-accuracy weights
  std::vector<ClfEpochRecord> history;
  int best_epoch = 0;
};

struct ClfTrainOptions {
  TrainConfig train;
  data::AugmentationSpec augmentation;
  /// Oversample minority classes with augmented copies up to the majority count.
  bool balance_classes = true;
};

/// Fraction of samples whose deterministic argmax equals the label.
double accuracy(const ClassifierModel& model, std::span<const data::ClfSample> samples);

/// Minority-class augmented copies that equalize class counts. Deterministic per seed.
std::vector<data::ClfSample> balance_by_augmentation(std::span<const data::ClfSample> samples,
                                                     const data::AugmentationSpec& spec, std::uint64_t seed);

ClfTrainResult train_classifier(const ClfModel& model, std::span<const data::ClfSample> train,
                                std::span<const data::ClfSample> val, const ClfTrainOptions& opts, std::uint64_t seed);
ClfTrainResult train_classifier(const ClfModel& model, const data::DatasetManifest& train,
                                const data::DatasetManifest& val, const ClfTrainOptions& opts, std::uint64_t seed);

/// Checkpoint directory: manifest.txt, labels.txt (one label per line, index
/// order), weights.pt.
void save_checkpoint(const ClfModel& model, const std::filesystem::path& dir);
ClfModel load_checkpoint(const std::filesystem::path& dir, const std::optional<ClassifierConfig>& expected = std::nullopt);

}  // namespace skinet::classifier
