#include "skinet/core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "skinet/errors.hpp"

namespace skinet {

std::optional<int> lesion_label_index(std::string_view label) {
  const auto& labels = lesion_labels();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == label) return static_cast<int>(i);
  }
  return std::nullopt;
}

Image::Image(int h, int w, int c, float fill)
    : height(h), width(w), channels(c), pixels(static_cast<std::size_t>(h) * w * c, fill) {
  if (h < 0 || w < 0 || c < 0) throw ValidationError("image dimensions must be non-negative");
}

void Image::validate_unit_range() const {
  if (pixels.size() != static_cast<std::size_t>(height) * width * channels) {
    throw ValidationError("image buffer does not match its declared shape");
  }
  for (float v : pixels) {
    if (!std::isfinite(v) || v < 0.0F || v > 1.0F) {
      throw ValidationError("image value outside [0,1]: " + std::to_string(v));
    }
  }
}

ProbMap::ProbMap(int h, int w, float fill) : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {}

BinaryMask::BinaryMask(int h, int w, bool fill)
    : height(h), width(w), pixels(static_cast<std::size_t>(h) * w, fill ? 1 : 0) {}

std::size_t BinaryMask::positive_count() const {
  return static_cast<std::size_t>(std::count(pixels.begin(), pixels.end(), std::uint8_t{1}));
}

void ProbabilityVector::validate() const {
  if (probs.empty()) throw ValidationError("probability vector is empty");
  if (!class_labels.empty() && class_labels.size() != probs.size()) {
    throw ValidationError("probability vector has " + std::to_string(probs.size()) + " entries but " +
                          std::to_string(class_labels.size()) + " labels");
  }
  double sum = 0.0;
  for (double p : probs) {
    if (!std::isfinite(p) || p < 0.0) {
      std::ostringstream msg;
      msg << "probability vector has invalid entry " << p;
      throw ValidationError(msg.str());
    }
    sum += p;
  }
  if (std::abs(sum - 1.0) > kSumTolerance) {
    std::ostringstream msg;
    msg.precision(12);
    msg << "probability vector sums to " << sum;
    throw ValidationError(msg.str());
  }
}

int ProbabilityVector::argmax() const {
  if (probs.empty()) throw ValidationError("argmax of an empty probability vector");
  // max_element returns the first maximum, which is the smallest-index tie-break.
  return static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

double entropy(const ProbabilityVector& p) {
  p.validate();
  double h = 0.0;
  for (double q : p.probs) {
    if (q > 0.0) h -= q * std::log(q);
  }
  // Rounding can push a near-one-hot vector a hair below zero or a
  // near-uniform one a hair above ln N.
  return std::clamp(h, 0.0, std::log(static_cast<double>(p.size())));
}

double binary_entropy(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("binary entropy needs p in [0,1]");
  double h = 0.0;
  if (p > 0.0) h -= p * std::log(p);
  if (p < 1.0) h -= (1.0 - p) * std::log(1.0 - p);
  return std::clamp(h, 0.0, std::log(2.0));
}

double normalize_uncertainty(double phi, double phi_min, double phi_max) {
  if (!(phi_max > phi_min)) {
    throw DegenerateRangeError("normalization range is degenerate: phi_min=" + std::to_string(phi_min) +
                               " phi_max=" + std::to_string(phi_max));
  }
  if (!std::isfinite(phi)) throw ValidationError("uncertainty is not finite");
  return std::clamp((phi - phi_min) / (phi_max - phi_min), 0.0, 1.0);
}

UncertaintyRecord make_uncertainty_record(double phi, double phi_min, double phi_max, double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw ValidationError("threshold must lie in [0,1]");
  UncertaintyRecord r;
  r.phi = phi;
  r.phi_min = phi_min;
  r.phi_max = phi_max;
  r.phi_norm = normalize_uncertainty(phi, phi_min, phi_max);
  r.threshold = threshold;
  r.is_certain = r.phi_norm < threshold;
  return r;
}

namespace {

struct OverlapCounts {
  std::size_t a = 0;
  std::size_t b = 0;
  std::size_t both = 0;
};

OverlapCounts overlap(const BinaryMask& a, const BinaryMask& b) {
  if (!a.same_shape(b) || a.pixels.size() != b.pixels.size()) {
    throw ValidationError("mask shapes differ: " + std::to_string(a.height) + "x" + std::to_string(a.width) +
                          " vs " + std::to_string(b.height) + "x" + std::to_string(b.width));
  }
  OverlapCounts c;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const bool pa = a.pixels[i] != 0;
    const bool pb = b.pixels[i] != 0;
    c.a += pa;
    c.b += pb;
    c.both += pa && pb;
  }
  return c;
}

}  // namespace

double dice(const BinaryMask& a, const BinaryMask& b) {
  const auto c = overlap(a, b);
  if (c.a + c.b == 0) return 1.0;
  return 2.0 * static_cast<double>(c.both) / static_cast<double>(c.a + c.b);
}

double jaccard(const BinaryMask& a, const BinaryMask& b) {
  const auto c = overlap(a, b);
  const std::size_t uni = c.a + c.b - c.both;
  if (uni == 0) return 1.0;
  return static_cast<double>(c.both) / static_cast<double>(uni);
}

BinaryMask binarize(const ProbMap& prob_map, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ValidationError("binarize threshold must lie in (0,1)");
  BinaryMask mask(prob_map.height, prob_map.width);
  for (std::size_t i = 0; i < prob_map.values.size(); ++i) {
    const float v = prob_map.values[i];
    if (!(v >= 0.0F && v <= 1.0F)) {
      throw ValidationError("probability map value outside [0,1]: " + std::to_string(v));
    }
    mask.pixels[i] = v >= threshold ? 1 : 0;
  }
  return mask;
}

}  // namespace skinet
