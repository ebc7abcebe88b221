#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "skinet/errors.hpp"
#include "skinet/saliency.hpp"

namespace skinet::saliency {

namespace {

struct Edge {
  std::uint32_t a;
  std::uint32_t b;
  double w;
};

class DisjointSet {
 public:
  explicit DisjointSet(std::size_t n) : parent_(n), size_(n, 1), internal_(n, 0.0) {
    std::iota(parent_.begin(), parent_.end(), std::uint32_t{0});
  }

  std::uint32_t find(std::uint32_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }

  std::uint32_t join(std::uint32_t a, std::uint32_t b, double w) {
    if (size_[a] < size_[b]) std::swap(a, b);
    parent_[b] = a;
    size_[a] += size_[b];
    internal_[a] = w;
    return a;
  }

  std::size_t size(std::uint32_t root) const { return size_[root]; }
  double internal(std::uint32_t root) const { return internal_[root]; }

 private:
  std::vector<std::uint32_t> parent_;
  std::vector<std::size_t> size_;
  std::vector<double> internal_;
};

std::vector<cv::Mat> smoothed_planes(const Image& img, double sigma) {
  std::vector<cv::Mat> planes;
  for (int c = 0; c < img.channels; ++c) {
    cv::Mat plane(img.height, img.width, CV_64FC1);
    for (int r = 0; r < img.height; ++r) {
      for (int col = 0; col < img.width; ++col) plane.at<double>(r, col) = img.at(r, col, c);
    }
    if (sigma > 0.0) cv::GaussianBlur(plane, plane, cv::Size(0, 0), sigma, sigma, cv::BORDER_REFLECT);
    planes.push_back(plane);
  }
  return planes;
}

}  // namespace

SegmentMap felzenszwalb_segments(const Image& img, double scale, double sigma, int min_size) {
  if (min_size < 1) throw ValidationError("felzenszwalb min_size must be >= 1");
  if (!(scale >= 0.0) || !(sigma >= 0.0)) throw ValidationError("felzenszwalb scale and sigma must be non-negative");
  if (img.height < 1 || img.width < 1 || img.channels < 1) throw ValidationError("felzenszwalb needs a non-empty image");

  const int h = img.height;
  const int w = img.width;
  const auto planes = smoothed_planes(img, sigma);
  auto distance = [&](int r0, int c0, int r1, int c1) {
    double s = 0.0;
    for (const auto& p : planes) {
      const double d = 255.0 * (p.at<double>(r0, c0) - p.at<double>(r1, c1));
      s += d * d;
    }
    return std::sqrt(s);
  };

  std::vector<Edge> edges;
  edges.reserve(static_cast<std::size_t>(h) * w * 4);
  auto id = [w](int r, int c) { return static_cast<std::uint32_t>(r * w + c); };
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (c + 1 < w) edges.push_back({id(r, c), id(r, c + 1), distance(r, c, r, c + 1)});
      if (r + 1 < h) edges.push_back({id(r, c), id(r + 1, c), distance(r, c, r + 1, c)});
      if (r + 1 < h && c + 1 < w) edges.push_back({id(r, c), id(r + 1, c + 1), distance(r, c, r + 1, c + 1)});
      if (r + 1 < h && c > 0) edges.push_back({id(r, c), id(r + 1, c - 1), distance(r, c, r + 1, c - 1)});
    }
  }
  std::stable_sort(edges.begin(), edges.end(), [](const Edge& x, const Edge& y) { return x.w < y.w; });

  DisjointSet sets(static_cast<std::size_t>(h) * w);
  for (const auto& e : edges) {
    const auto a = sets.find(e.a);
    const auto b = sets.find(e.b);
    if (a == b) continue;
    const double ta = sets.internal(a) + scale / static_cast<double>(sets.size(a));
    const double tb = sets.internal(b) + scale / static_cast<double>(sets.size(b));
    if (e.w < std::min(ta, tb)) sets.join(a, b, e.w);
  }
  for (const auto& e : edges) {
    const auto a = sets.find(e.a);
    const auto b = sets.find(e.b);
    if (a == b) continue;
    if (sets.size(a) < static_cast<std::size_t>(min_size) || sets.size(b) < static_cast<std::size_t>(min_size)) {
      sets.join(a, b, std::max(sets.internal(a), sets.internal(b)));
    }
  }

  SegmentMap out;
  out.height = h;
  out.width = w;
  out.labels.assign(static_cast<std::size_t>(h) * w, -1);
  std::vector<int> relabel(static_cast<std::size_t>(h) * w, -1);
  for (std::uint32_t i = 0; i < out.labels.size(); ++i) {
    const auto root = sets.find(i);
    if (relabel[root] < 0) relabel[root] = out.region_count++;
    out.labels[i] = relabel[root];
  }
  return out;
}

}  // namespace skinet::saliency
