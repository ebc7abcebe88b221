#pragma once

// Command-line front end. `run` is the whole program minus process setup,
// so tests can drive it in-process.
//
// Configuration precedence, lowest to highest: built-in defaults, --config
// file, --set key=value entries (in order), dedicated flags such as --seed
// or --threshold-clf.

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "skinet/classifier.hpp"
#include "skinet/keyvalue.hpp"
#include "skinet/pipeline.hpp"
#include "skinet/segnet.hpp"
#include "skinet/training.hpp"
#include "skinet/xai_eval.hpp"

namespace skinet::cli {

enum ExitCode : int { kOk = 0, kRuntimeFailure = 1, kUsageError = 2 };

struct RunConfig {
  std::uint64_t seed = 0;
  segnet::SegNetConfig segnet;
  TrainConfig seg_train;
  classifier::ClassifierConfig classifier;
  TrainConfig clf_train;
  bool balance_classes = true;
  data::AugmentationSpec augmentation;
  pipeline::PipelineConfig pipeline;
  xai_eval::BokehParams bokeh;
  data::SplitFractions split;
  /// The effective flat configuration, including free-form run.* keys.
  KeyValues values;

  /// Every recognised key with its default value.
  static KeyValues defaults();
  /// Parses and validates. Unknown keys and invalid values throw
  /// ValidationError naming the key.
  static RunConfig from(const KeyValues& kv);
};

/// SHA-256 over the sorted file names and contents of a checkpoint directory.
std::string checkpoint_hash(const std::filesystem::path& dir);

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace skinet::cli
