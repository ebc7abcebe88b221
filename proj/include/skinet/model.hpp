#pragma once

// Inference-side model interfaces. The uncertainty engine and the pipeline
// only see these, which keeps them independent of the tensor backend and
// lets tests substitute stub models.

#include <cstdint>
#include <string>
#include <vector>

#include "skinet/core.hpp"

namespace skinet {

/// A segmenter producing a per-pixel lesion probability map.
///
/// predict() must be deterministic when stochastic is false and reproducible
/// per seed when it is true. Implementations are shared across threads and
/// must not mutate observable state.
class SegmenterModel {
 public:
  virtual ~SegmenterModel() = default;
  virtual ProbMap predict(const Image& img, bool stochastic, std::uint64_t seed) const = 0;
  /// Square input side the model expects.
  virtual int input_size() const = 0;
};

/// A classifier producing a posterior over its label set.
class ClassifierModel {
 public:
  virtual ~ClassifierModel() = default;
  virtual ProbabilityVector predict(const Image& img, bool stochastic, std::uint64_t seed) const = 0;
  virtual std::vector<std::string> labels() const = 0;
  virtual int input_size() const = 0;
};

}  // namespace skinet
