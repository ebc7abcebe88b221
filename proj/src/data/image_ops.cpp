#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>

#include "skinet/data.hpp"
#include "skinet/errors.hpp"

namespace skinet::data {

namespace {

cv::Mat as_mat(Image& img) { return {img.height, img.width, CV_32FC(img.channels), img.pixels.data()}; }

cv::Mat as_mat(const Image& img) {
  return {img.height, img.width, CV_32FC(img.channels), const_cast<float*>(img.pixels.data())};
}

Image from_mat(const cv::Mat& m) {
  cv::Mat src = m.isContinuous() ? m : m.clone();
  Image out(src.rows, src.cols, src.channels());
  std::copy_n(src.ptr<float>(), out.pixels.size(), out.pixels.begin());
  return out;
}

void clamp_unit(Image& img) {
  for (float& v : img.pixels) v = std::clamp(v, 0.0F, 1.0F);
}

template <typename Raster, typename Get, typename Set>
void flip_inplace(Raster& r, bool horizontal, bool vertical, int channels, Get get, Set set) {
  const int h = r.height;
  const int w = r.width;
  if (horizontal) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w / 2; ++x) {
        for (int c = 0; c < channels; ++c) {
          auto a = get(r, y, x, c);
          auto b = get(r, y, w - 1 - x, c);
          set(r, y, x, c, b);
          set(r, y, w - 1 - x, c, a);
        }
      }
    }
  }
  if (vertical) {
    for (int y = 0; y < h / 2; ++y) {
      for (int x = 0; x < w; ++x) {
        for (int c = 0; c < channels; ++c) {
          auto a = get(r, y, x, c);
          auto b = get(r, h - 1 - y, x, c);
          set(r, y, x, c, b);
          set(r, h - 1 - y, x, c, a);
        }
      }
    }
  }
}

void flip(Image& img, bool horizontal, bool vertical) {
  flip_inplace(
      img, horizontal, vertical, img.channels, [](const Image& i, int y, int x, int c) { return i.at(y, x, c); },
      [](Image& i, int y, int x, int c, float v) { i.at(y, x, c) = v; });
}

void flip(ProbMap& map, bool horizontal, bool vertical) {
  flip_inplace(
      map, horizontal, vertical, 1, [](const ProbMap& m, int y, int x, int) { return m.at(y, x); },
      [](ProbMap& m, int y, int x, int, float v) { m.at(y, x) = v; });
}

void flip(BinaryMask& mask, bool horizontal, bool vertical) {
  flip_inplace(
      mask, horizontal, vertical, 1, [](const BinaryMask& m, int y, int x, int) { return m.at(y, x); },
      [](BinaryMask& m, int y, int x, int, bool v) { m.set(y, x, v); });
}

cv::Mat rotation_matrix(int height, int width, double angle_deg) {
  const cv::Point2f center(static_cast<float>(width - 1) / 2.0F, static_cast<float>(height - 1) / 2.0F);
  return cv::getRotationMatrix2D(center, angle_deg, 1.0);
}

}  // namespace

RawImage decode_image(const std::filesystem::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (m.empty()) throw DecodeError("cannot decode image " + path.string());
  if (m.depth() == CV_16U) m.convertTo(m, CV_8U, 1.0 / 257.0);
  if (m.depth() != CV_8U) throw DecodeError("unsupported pixel depth in " + path.string());
  switch (m.channels()) {
    case 1:
      break;
    case 3:
      cv::cvtColor(m, m, cv::COLOR_BGR2RGB);
      break;
    case 4:
      cv::cvtColor(m, m, cv::COLOR_BGRA2RGB);
      break;
    default:
      throw DecodeError("unsupported channel count in " + path.string());
  }
  if (!m.isContinuous()) m = m.clone();
  RawImage raw;
  raw.height = m.rows;
  raw.width = m.cols;
  raw.channels = m.channels();
  raw.pixels.assign(m.data, m.data + m.total() * m.elemSize());
  return raw;
}

Image preprocess(const RawImage& raw, int size) {
  if (raw.height < 1 || raw.width < 1) throw ValidationError("raw image has no pixels");
  if (raw.channels != 1 && raw.channels != 3) throw ValidationError("raw image must have 1 or 3 channels");
  if (raw.pixels.size() != static_cast<std::size_t>(raw.height) * raw.width * raw.channels) {
    throw ValidationError("raw image buffer does not match its shape");
  }
  if (size < 1) throw ValidationError("preprocess size must be positive");
  Image img(raw.height, raw.width, raw.channels);
  for (std::size_t i = 0; i < raw.pixels.size(); ++i) img.pixels[i] = static_cast<float>(raw.pixels[i]) / 255.0F;
  return resize_image(img, size, size);
}

Image resize_image(const Image& img, int height, int width) {
  if (height < 1 || width < 1) throw ValidationError("resize target must be positive");
  if (img.height == height && img.width == width) return img;
  cv::Mat dst;
  cv::resize(as_mat(img), dst, cv::Size(width, height), 0, 0, cv::INTER_CUBIC);
  Image out = from_mat(dst.reshape(img.channels));
  clamp_unit(out);
  return out;
}

BinaryMask load_mask(const std::filesystem::path& path, int size) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (m.empty()) throw DecodeError("cannot decode mask " + path.string());
  cv::Mat bin;
  cv::threshold(m, bin, 127, 1.0, cv::THRESH_BINARY);
  cv::Mat f;
  bin.convertTo(f, CV_32F);
  if (f.rows != size || f.cols != size) cv::resize(f, f, cv::Size(size, size), 0, 0, cv::INTER_LINEAR);
  BinaryMask mask(size, size);
  for (int y = 0; y < size; ++y) {
    const float* row = f.ptr<float>(y);
    for (int x = 0; x < size; ++x) mask.set(y, x, row[x] >= 0.5F);
  }
  return mask;
}

BinaryMask bbox_to_mask(const Box& box, int height, int width) {
  if (height < 1 || width < 1) throw ValidationError("mask shape must be positive");
  if (!(0 <= box.row0 && box.row0 < box.row1 && box.row1 <= height && 0 <= box.col0 && box.col0 < box.col1 &&
        box.col1 <= width)) {
    throw ValidationError("bounding box (" + std::to_string(box.row0) + "," + std::to_string(box.col0) + "," +
                          std::to_string(box.row1) + "," + std::to_string(box.col1) + ") is degenerate or outside " +
                          std::to_string(height) + "x" + std::to_string(width));
  }
  BinaryMask mask(height, width);
  for (int y = box.row0; y < box.row1; ++y) {
    for (int x = box.col0; x < box.col1; ++x) mask.set(y, x, true);
  }
  return mask;
}

AugmentationSpec AugmentationSpec::disabled() {
  AugmentationSpec spec;
  spec.allow_hflip = false;
  spec.allow_vflip = false;
  spec.rotation_min = 0.0;
  spec.rotation_max = 0.0;
  return spec;
}

void AugmentationSpec::validate() const {
  if (!(rotation_min >= -180.0 && rotation_max <= 180.0 && rotation_min <= rotation_max)) {
    throw ValidationError("rotation range must be a sub-interval of [-180,180]");
  }
  if (!(flip_probability >= 0.0 && flip_probability <= 1.0)) {
    throw ValidationError("flip probability must lie in [0,1]");
  }
}

AugmentDraw sample_augmentation(const AugmentationSpec& spec, SplitMix64& rng) {
  spec.validate();
  AugmentDraw d;
  // Every coordinate is drawn unconditionally so that disabling one transform
  // does not shift the random stream seen by the others.
  const bool h = rng.bernoulli(spec.flip_probability);
  const bool v = rng.bernoulli(spec.flip_probability);
  const double angle = rng.uniform(spec.rotation_min, spec.rotation_max);
  d.hflip = spec.allow_hflip && h;
  d.vflip = spec.allow_vflip && v;
  d.angle_deg = spec.rotation_min == spec.rotation_max ? spec.rotation_min : angle;
  return d;
}

Image apply_augmentation(const Image& img, const AugmentDraw& draw) {
  Image out = img;
  flip(out, draw.hflip, draw.vflip);
  if (draw.angle_deg == 0.0 || out.size() == 0) return out;

  cv::Scalar fill;
  const std::size_t n = static_cast<std::size_t>(out.height) * out.width;
  for (int c = 0; c < out.channels && c < 4; ++c) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += out.pixels[i * out.channels + c];
    fill[c] = sum / static_cast<double>(n);
  }
  cv::Mat dst;
  cv::warpAffine(as_mat(out), dst, rotation_matrix(out.height, out.width, draw.angle_deg),
                 cv::Size(out.width, out.height), cv::INTER_LINEAR, cv::BORDER_CONSTANT, fill);
  Image rotated = from_mat(dst.reshape(out.channels));
  clamp_unit(rotated);
  return rotated;
}

ProbMap invert_augmentation(const ProbMap& map, const AugmentDraw& draw) {
  ProbMap out = map;
  if (draw.angle_deg != 0.0 && !out.values.empty()) {
    cv::Mat src(out.height, out.width, CV_32FC1, out.values.data());
    cv::Mat dst;
    cv::warpAffine(src, dst, rotation_matrix(out.height, out.width, draw.angle_deg), cv::Size(out.width, out.height),
                   cv::INTER_LINEAR | cv::WARP_INVERSE_MAP, cv::BORDER_REPLICATE);
    for (int y = 0; y < out.height; ++y) {
      const float* row = dst.ptr<float>(y);
      for (int x = 0; x < out.width; ++x) out.at(y, x) = std::clamp(row[x], 0.0F, 1.0F);
    }
  }
  // Flips are involutions, undone after the rotation.
  flip(out, draw.hflip, draw.vflip);
  return out;
}

BinaryMask apply_augmentation(const BinaryMask& mask, const AugmentDraw& draw) {
  BinaryMask out = mask;
  flip(out, draw.hflip, draw.vflip);
  if (draw.angle_deg == 0.0 || out.pixels.empty()) return out;
  cv::Mat src(out.height, out.width, CV_8UC1, out.pixels.data());
  cv::Mat dst;
  cv::warpAffine(src, dst, rotation_matrix(out.height, out.width, draw.angle_deg), cv::Size(out.width, out.height),
                 cv::INTER_NEAREST, cv::BORDER_CONSTANT, cv::Scalar(0));
  for (int y = 0; y < out.height; ++y) {
    const auto* row = dst.ptr<std::uint8_t>(y);
    for (int x = 0; x < out.width; ++x) out.set(y, x, row[x] != 0);
  }
  return out;
}

Image augment(const Image& img, const AugmentationSpec& spec, SplitMix64& rng) {
  return apply_augmentation(img, sample_augmentation(spec, rng));
}

std::vector<AugmentDraw> tta_draws(int count, std::uint64_t seed, const AugmentationSpec& spec) {
  if (count < 1) throw ValidationError("test-time family size must be at least 1");
  spec.validate();
  std::vector<AugmentDraw> draws(static_cast<std::size_t>(count));
  for (int v = 1; v < count; ++v) {
    SplitMix64 rng(derive_seed(seed, static_cast<std::uint64_t>(v)));
    draws[static_cast<std::size_t>(v)] = sample_augmentation(spec, rng);
  }
  return draws;
}

std::vector<Image> tta_family(const Image& img, int count, std::uint64_t seed, const AugmentationSpec& spec) {
  const auto draws = tta_draws(count, seed, spec);
  std::vector<Image> family;
  family.reserve(draws.size());
  family.push_back(img);
  for (std::size_t v = 1; v < draws.size(); ++v) family.push_back(apply_augmentation(img, draws[v]));
  return family;
}

RawImage to_raw(const Image& img) {
  RawImage raw;
  raw.height = img.height;
  raw.width = img.width;
  raw.channels = img.channels;
  raw.pixels.resize(img.pixels.size());
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    raw.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(img.pixels[i], 0.0F, 1.0F) * 255.0F));
  }
  return raw;
}

void write_png(const std::filesystem::path& path, const RawImage& raw) {
  if (raw.channels != 1 && raw.channels != 3) throw ValidationError("PNG export needs 1 or 3 channels");
  cv::Mat m(raw.height, raw.width, CV_8UC(raw.channels), const_cast<std::uint8_t*>(raw.pixels.data()));
  cv::Mat bgr;
  if (raw.channels == 3) {
    cv::cvtColor(m, bgr, cv::COLOR_RGB2BGR);
  } else {
    bgr = m;
  }
  std::vector<unsigned char> buf;
  if (!cv::imencode(".png", bgr, buf)) throw Error("PNG encoding failed for " + path.string());
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    FILE* f = std::fopen(tmp.c_str(), "wb");
    if (f == nullptr) throw Error("cannot open " + tmp.string());
    const auto written = std::fwrite(buf.data(), 1, buf.size(), f);
    std::fclose(f);
    if (written != buf.size()) throw Error("short write on " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_png(const std::filesystem::path& path, const BinaryMask& mask) {
  RawImage raw;
  raw.height = mask.height;
  raw.width = mask.width;
  raw.channels = 1;
  raw.pixels.resize(mask.pixels.size());
  for (std::size_t i = 0; i < mask.pixels.size(); ++i) raw.pixels[i] = mask.pixels[i] != 0 ? 255 : 0;
  write_png(path, raw);
}

}  // namespace skinet::data
