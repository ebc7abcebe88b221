#pragma once

// Dataset ingestion, preprocessing, augmentation and ground-truth masks.
//
// On-disk layouts:
//   classification:  root/images/<stem>.png|jpg, root/labels.csv  (header "image,label")
//   segmentation:    root/images/<stem>.*, root/masks/<stem>.*     (mask value > 127 = lesion)
//                    optionally root/boxes.csv (header "image,row0,col0,row1,col1") which
//                    supplies bounding-box ground truths for images without a mask file.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "skinet/core.hpp"
#include "skinet/rng.hpp"

namespace skinet::data {

enum class DatasetKind { segmentation, classification };

std::string to_string(DatasetKind kind);
DatasetKind parse_dataset_kind(const std::string& text);

/// Half-open pixel box [row0,row1) x [col0,col1).
struct Box {
  int row0 = 0;
  int col0 = 0;
  int row1 = 0;
  int col1 = 0;

  std::int64_t area() const { return static_cast<std::int64_t>(row1 - row0) * (col1 - col0); }
  friend bool operator==(const Box&, const Box&) = default;
};

struct DatasetEntry {
  std::string id;  // file stem
  std::filesystem::path image;
  std::filesystem::path mask;  // segmentation only; empty when a box supplies the ground truth
  std::optional<Box> box;      // segmentation only
  std::string label;           // classification only
  int label_index = -1;

  friend bool operator==(const DatasetEntry&, const DatasetEntry&) = default;
};

struct DatasetManifest {
  std::filesystem::path root;
  DatasetKind kind = DatasetKind::classification;
  std::vector<DatasetEntry> entries;
  std::vector<std::int64_t> class_counts;  // indexed like lesion_labels(); classification only

  std::size_t size() const { return entries.size(); }
};

/// Enumerates a dataset root. Entries come back sorted by image file name.
/// Throws IngestionError naming the offending path on any layout problem.
DatasetManifest load_dataset(const std::filesystem::path& root, DatasetKind kind);

/// Decoded 8-bit raster, interleaved RGB or grayscale.
struct RawImage {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;
};

/// Throws DecodeError if the file cannot be decoded.
RawImage decode_image(const std::filesystem::path& path);

/// Resize to size x size with bicubic interpolation, scale to [0,1].
Image preprocess(const RawImage& raw, int size = kDefaultImageSize);

/// Bicubic resize of an already-normalized image, clamped to [0,1]. Returns
/// the input unchanged when the geometry already matches.
Image resize_image(const Image& img, int height, int width);

/// Reads a mask raster (value > 127 = lesion) and resamples it to size x size.
BinaryMask load_mask(const std::filesystem::path& path, int size = kDefaultImageSize);

/// Mask true exactly inside the half-open box. Throws ValidationError on a
/// degenerate or out-of-range box.
BinaryMask bbox_to_mask(const Box& box, int height, int width);

struct AugmentationSpec {
  bool allow_hflip = true;
  bool allow_vflip = true;
  double flip_probability = 0.5;  // per enabled flip
  double rotation_min = -65.0;    // degrees
  double rotation_max = 65.0;
  std::uint64_t seed = 0;

  static AugmentationSpec disabled();
  void validate() const;
};

/// One sampled transform: flips are applied first, then the rotation.
struct AugmentDraw {
  bool hflip = false;
  bool vflip = false;
  double angle_deg = 0.0;

  bool is_identity() const { return !hflip && !vflip && angle_deg == 0.0; }
};

AugmentDraw sample_augmentation(const AugmentationSpec& spec, SplitMix64& rng);

/// Applies a draw. Pixels rotated in from outside the frame take the
/// per-channel image mean.
Image apply_augmentation(const Image& img, const AugmentDraw& draw);

/// Maps a per-pixel output computed on an augmented image back to the frame
/// of the original image. Out-of-frame pixels replicate the nearest border.
ProbMap invert_augmentation(const ProbMap& map, const AugmentDraw& draw);
BinaryMask apply_augmentation(const BinaryMask& mask, const AugmentDraw& draw);

/// sample_augmentation followed by apply_augmentation.
Image augment(const Image& img, const AugmentationSpec& spec, SplitMix64& rng);

/// Transform draws backing tta_family; element 0 is always the identity.
std::vector<AugmentDraw> tta_draws(int count, std::uint64_t seed, const AugmentationSpec& spec = {});

/// V test-time variants of img: [img, augment(img, seed_1), ...].
std::vector<Image> tta_family(const Image& img, int count, std::uint64_t seed, const AugmentationSpec& spec = {});

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct DatasetSplit {
  DatasetManifest train;
  DatasetManifest val;
  DatasetManifest test;
};

/// Seeded partition. Classification manifests are stratified per class.
/// Per stratum of n entries: train = round(f_train*n), val = min(round(f_val*n), n - train),
/// test = the remainder. Within each part entries keep manifest order.
DatasetSplit split(const DatasetManifest& manifest, const SplitFractions& fractions, std::uint64_t seed);

struct SegSample {
  std::string id;
  Image image;
  BinaryMask mask;
};

struct ClfSample {
  std::string id;
  Image image;
  int label = -1;
};

/// Loads and preprocesses every entry. When SKINET_CACHE names a directory,
/// preprocessed rasters are cached there keyed by path, size and mtime.
std::vector<SegSample> load_segmentation_samples(const DatasetManifest& manifest, int size = kDefaultImageSize);
std::vector<ClfSample> load_classification_samples(const DatasetManifest& manifest, int size = kDefaultImageSize);

/// Converts back to 8-bit for export (values are rounded, clamped to [0,255]).
RawImage to_raw(const Image& img);
void write_png(const std::filesystem::path& path, const RawImage& raw);
void write_png(const std::filesystem::path& path, const BinaryMask& mask);

}  // namespace skinet::data
