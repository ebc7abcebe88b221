#pragma once

#include <cstdint>
#include <string>

#include "skinet/keyvalue.hpp"

namespace skinet {

enum class LossKind {
  binary_cross_entropy,  // mean over outputs of -[y ln p + (1-y) ln(1-p)]
  categorical,           // classification only: -ln p_true
};

std::string to_string(LossKind kind);
LossKind parse_loss_kind(const std::string& text);

/// Optimizer settings shared by both training loops (Adam on every parameter).
struct TrainConfig {
  double learning_rate = 1e-3;
  int batch_size = 16;
  int epochs = 30;
  LossKind loss = LossKind::binary_cross_entropy;
  /// Apply the training augmentation family to every drawn sample.
  bool augment = false;

  void validate() const;
  void write(KeyValues& kv, const std::string& prefix) const;
  static TrainConfig read(const KeyValues& kv, const std::string& prefix);
  static TrainConfig read(const KeyValues& kv, const std::string& prefix, const TrainConfig& defaults);

};


}  // namespace skinet
