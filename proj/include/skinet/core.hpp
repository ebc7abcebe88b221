#pragma once

// Shared domain types and closed-form metrics. Nothing in here depends on
// the learning stack.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace skinet {

inline constexpr int kDefaultImageSize = 224;

/// Lesion classes in the canonical index order used by every classifier.
inline const std::vector<std::string>& lesion_labels() {
  static const std::vector<std::string> labels = {"MEL", "NV", "BCC", "AKIEC", "BKL", "DF", "VASC"};
  return labels;
}

/// Index of `label` in lesion_labels(), or nullopt.
std::optional<int> lesion_label_index(std::string_view label);

/// H x W x C raster, row-major, channels interleaved. Values live in [0,1]
/// once preprocessed.
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int h, int w, int c, float fill = 0.0F);

  std::size_t size() const { return pixels.size(); }
  float& at(int row, int col, int ch) { return pixels[index(row, col, ch)]; }
  float at(int row, int col, int ch) const { return pixels[index(row, col, ch)]; }
  std::size_t index(int row, int col, int ch) const {
    return (static_cast<std::size_t>(row) * width + col) * channels + ch;
  }
  bool same_shape(const Image& other) const {
    return height == other.height && width == other.width && channels == other.channels;
  }

  /// Throws ValidationError unless every value is finite and in [0,1].
  void validate_unit_range() const;

  friend bool operator==(const Image&, const Image&) = default;
};

/// Single-channel real raster (probability maps, entropy maps).
struct ProbMap {
  int height = 0;
  int width = 0;
  std::vector<float> values;

  ProbMap() = default;
  ProbMap(int h, int w, float fill = 0.0F);

  float& at(int row, int col) { return values[static_cast<std::size_t>(row) * width + col]; }
  float at(int row, int col) const { return values[static_cast<std::size_t>(row) * width + col]; }

  friend bool operator==(const ProbMap&, const ProbMap&) = default;
};

struct BinaryMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;  // 0 or 1

  BinaryMask() = default;
  BinaryMask(int h, int w, bool fill = false);

  bool at(int row, int col) const { return pixels[static_cast<std::size_t>(row) * width + col] != 0; }
  void set(int row, int col, bool v) { pixels[static_cast<std::size_t>(row) * width + col] = v ? 1 : 0; }
  std::size_t positive_count() const;
  bool empty() const { return positive_count() == 0; }
  bool same_shape(const BinaryMask& other) const { return height == other.height && width == other.width; }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

/// Posterior over N classes.
struct ProbabilityVector {
  std::vector<double> probs;
  std::vector<std::string> class_labels;

  static constexpr double kSumTolerance = 1e-6;

  std::size_t size() const { return probs.size(); }
  /// Throws ValidationError on a negative entry, a non-finite entry, or a sum
  /// that is off by more than kSumTolerance.
  void validate() const;
  /// Index of the largest entry; ties resolve to the smallest index.
  int argmax() const;
};

/// Entropy bookkeeping for one prediction.
struct UncertaintyRecord {
  double phi = 0.0;       // nats
  double phi_norm = 0.0;  // [0,1]
  double phi_min = 0.0;
  double phi_max = 1.0;
  double threshold = 0.0;
  bool is_certain = false;
};

/// Correct/incorrect x certain/uncertain counts.
struct TriageCounts {
  std::int64_t cc = 0;
  std::int64_t cu = 0;
  std::int64_t ic = 0;
  std::int64_t iu = 0;

  std::int64_t total() const { return cc + cu + ic + iu; }
  friend bool operator==(const TriageCounts&, const TriageCounts&) = default;
};

/// -sum p ln p with 0 ln 0 = 0. Result lies in [0, ln N].
double entropy(const ProbabilityVector& p);

/// Binary entropy of a single Bernoulli probability, in nats.
double binary_entropy(double p);

/// (phi - phi_min) / (phi_max - phi_min), clamped to [0,1].
/// Throws DegenerateRangeError when phi_max <= phi_min.
double normalize_uncertainty(double phi, double phi_min, double phi_max);

/// Builds a record with the given bounds; is_certain <=> phi_norm < threshold.
UncertaintyRecord make_uncertainty_record(double phi, double phi_min, double phi_max, double threshold);

/// 2|a n b| / (|a| + |b|); 1 when both masks are empty.
double dice(const BinaryMask& a, const BinaryMask& b);

/// |a n b| / |a u b|; 1 when both masks are empty.
double jaccard(const BinaryMask& a, const BinaryMask& b);

/// Pixel is set iff probability >= threshold. threshold must lie in (0,1).
BinaryMask binarize(const ProbMap& prob_map, double threshold = 0.5);

}  // namespace skinet
