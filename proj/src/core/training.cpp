#include "skinet/training.hpp"

#include <cmath>

#include "skinet/errors.hpp"

namespace skinet {

std::string to_string(LossKind kind) {
  return kind == LossKind::categorical ? "categorical" : "bce";
}

LossKind parse_loss_kind(const std::string& text) {
  if (text == "bce" || text == "binary_cross_entropy") return LossKind::binary_cross_entropy;
  if (text == "categorical") return LossKind::categorical;
  throw ValidationError("unknown loss '" + text + "'");
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ValidationError("train.learning_rate must be >= 0");
  if (batch_size < 1) throw ValidationError("train.batch_size must be positive");
  if (epochs < 1) throw ValidationError("train.epochs must be positive");
}

void TrainConfig::write(KeyValues& kv, const std::string& prefix) const {
  kv.set(prefix + "learning_rate", learning_rate);
  kv.set(prefix + "batch_size", batch_size);
  kv.set(prefix + "epochs", epochs);
  kv.set(prefix + "loss", to_string(loss));
  kv.set(prefix + "augment", augment);
}

TrainConfig TrainConfig::read(const KeyValues& kv, const std::string& prefix) { return read(kv, prefix, TrainConfig()); }

TrainConfig TrainConfig::read(const KeyValues& kv, const std::string& prefix, const TrainConfig& defaults) {
  TrainConfig c = defaults;
  c.learning_rate = kv.get_double(prefix + "learning_rate", c.learning_rate);
  c.batch_size = static_cast<int>(kv.get_int(prefix + "batch_size", c.batch_size));
  c.epochs = static_cast<int>(kv.get_int(prefix + "epochs", c.epochs));
  c.loss = parse_loss_kind(kv.get_string(prefix + "loss", to_string(c.loss)));
  c.augment = kv.get_bool(prefix + "augment", c.augment);
  return c;
}

}  // namespace skinet
