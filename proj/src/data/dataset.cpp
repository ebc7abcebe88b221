#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "skinet/data.hpp"
#include "skinet/errors.hpp"
#include "skinet/io_util.hpp"

namespace skinet::data {

namespace fs = std::filesystem;

std::string to_string(DatasetKind kind) {
  return kind == DatasetKind::segmentation ? "segmentation" : "classification";
}

DatasetKind parse_dataset_kind(const std::string& text) {
  if (text == "segmentation") return DatasetKind::segmentation;
  if (text == "classification") return DatasetKind::classification;
  throw ValidationError("unknown dataset kind '" + text + "'");
}

namespace {

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  static const std::set<std::string> kExt = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"};
  return kExt.count(ext) != 0;
}

/// Image files of a directory keyed by stem, sorted by file name.
std::vector<fs::path> list_images(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IngestionError("missing directory " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && is_image_file(e.path())) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end(), [](const fs::path& a, const fs::path& b) {
    return a.filename().string() < b.filename().string();
  });
  return files;
}

std::map<std::string, fs::path> by_stem(const std::vector<fs::path>& files) {
  std::map<std::string, fs::path> out;
  for (const auto& f : files) {
    const auto [it, inserted] = out.emplace(f.stem().string(), f);
    if (!inserted) throw IngestionError("duplicate image stem " + f.string() + " (also " + it->second.string() + ")");
  }
  return out;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path, const std::vector<std::string>& header) {
  std::ifstream in(path);
  if (!in) throw IngestionError("missing file " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw IngestionError("empty CSV " + path.string());
  if (!line.empty() && static_cast<unsigned char>(line[0]) == 0xEF && line.size() >= 3) line = line.substr(3);  // BOM
  if (io::split_csv_line(line) != header) {
    std::string expected;
    for (const auto& h : header) expected += (expected.empty() ? "" : ",") + h;
    throw IngestionError("unexpected header in " + path.string() + " (expected '" + expected + "')");
  }
  std::vector<std::vector<std::string>> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (io::trim(line).empty()) continue;
    auto fields = io::split_csv_line(line);
    if (fields.size() != header.size()) {
      throw IngestionError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                           std::to_string(header.size()) + " fields");
    }
    rows.push_back(std::move(fields));
  }
  return rows;
}

int parse_int(const std::string& s, const fs::path& file) {
  try {
    std::size_t pos = 0;
    const int v = std::stoi(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw IngestionError(file.string() + ": not an integer '" + s + "'");
  }
}

std::string strip_extension_if_image(const std::string& name) {
  const fs::path p(name);
  return is_image_file(p) ? p.stem().string() : name;
}

DatasetManifest load_classification(const fs::path& root) {
  DatasetManifest m;
  m.root = root;
  m.kind = DatasetKind::classification;
  m.class_counts.assign(lesion_labels().size(), 0);
  const auto images = by_stem(list_images(root / "images"));
  const fs::path labels_path = root / "labels.csv";
  std::set<std::string> seen;
  for (const auto& row : read_csv(labels_path, {"image", "label"})) {
    const std::string stem = strip_extension_if_image(row[0]);
    const auto it = images.find(stem);
    if (it == images.end()) throw IngestionError("labels.csv references missing image " + (root / "images" / row[0]).string());
    if (!seen.insert(stem).second) throw IngestionError("duplicate label row for " + it->second.string());
    const auto idx = lesion_label_index(row[1]);
    if (!idx) throw IngestionError("unknown label '" + row[1] + "' for " + it->second.string() + " in " + labels_path.string());
    DatasetEntry e;
    e.id = stem;
    e.image = it->second;
    e.label = row[1];
    e.label_index = *idx;
    m.entries.push_back(std::move(e));
    ++m.class_counts[static_cast<std::size_t>(*idx)];
  }
  std::sort(m.entries.begin(), m.entries.end(), [](const DatasetEntry& a, const DatasetEntry& b) {
    return a.image.filename().string() < b.image.filename().string();
  });
  return m;
}

DatasetManifest load_segmentation(const fs::path& root) {
  DatasetManifest m;
  m.root = root;
  m.kind = DatasetKind::segmentation;
  const auto images = list_images(root / "images");
  std::map<std::string, fs::path> masks;
  if (fs::exists(root / "masks")) masks = by_stem(list_images(root / "masks"));
  std::map<std::string, Box> boxes;
  const fs::path boxes_path = root / "boxes.csv";
  if (fs::exists(boxes_path)) {
    for (const auto& row : read_csv(boxes_path, {"image", "row0", "col0", "row1", "col1"})) {
      Box b{parse_int(row[1], boxes_path), parse_int(row[2], boxes_path), parse_int(row[3], boxes_path),
            parse_int(row[4], boxes_path)};
      boxes[strip_extension_if_image(row[0])] = b;
    }
  }
  if (masks.empty() && boxes.empty() && !fs::exists(root / "masks")) {
    throw IngestionError("missing directory " + (root / "masks").string());
  }
  std::set<std::string> used_masks;
  std::set<std::string> used_boxes;
  for (const auto& img : images) {
    DatasetEntry e;
    e.id = img.stem().string();
    e.image = img;
    if (const auto it = masks.find(e.id); it != masks.end()) {
      e.mask = it->second;
      used_masks.insert(e.id);
    } else if (const auto bt = boxes.find(e.id); bt != boxes.end()) {
      e.box = bt->second;
      used_boxes.insert(e.id);
    } else {
      throw IngestionError("image without mask or bounding box: " + img.string());
    }
    m.entries.push_back(std::move(e));
  }
  for (const auto& [stem, path] : masks) {
    if (!used_masks.count(stem)) throw IngestionError("mask without image: " + path.string());
  }
  for (const auto& [stem, box] : boxes) {
    if (!used_boxes.count(stem) && !used_masks.count(stem)) {
      throw IngestionError("boxes.csv references missing image '" + stem + "' in " + boxes_path.string());
    }
  }
  return m;
}

}  // namespace

DatasetManifest load_dataset(const fs::path& root, DatasetKind kind) {
  if (!fs::is_directory(root)) throw IngestionError("missing directory " + root.string());
  return kind == DatasetKind::classification ? load_classification(root) : load_segmentation(root);
}

DatasetSplit split(const DatasetManifest& manifest, const SplitFractions& f, std::uint64_t seed) {
  if (f.train < 0 || f.val < 0 || f.test < 0 || std::abs(f.train + f.val + f.test - 1.0) > 1e-9) {
    throw ValidationError("split fractions must be non-negative and sum to 1");
  }
  std::map<int, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    const int key = manifest.kind == DatasetKind::classification ? manifest.entries[i].label_index : 0;
    strata[key].push_back(i);
  }
  std::vector<int> part(manifest.entries.size(), 2);
  for (auto& [key, idx] : strata) {
    SplitMix64 rng(derive_seed(seed, static_cast<std::uint64_t>(key + 1)));
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
    const auto n = static_cast<long long>(idx.size());
    const long long n_train = std::min(n, std::llround(f.train * static_cast<double>(n)));
    const long long n_val = std::min(n - n_train, std::llround(f.val * static_cast<double>(n)));
    for (long long k = 0; k < n; ++k) {
      part[idx[static_cast<std::size_t>(k)]] = k < n_train ? 0 : (k < n_train + n_val ? 1 : 2);
    }
  }
  DatasetSplit out;
  for (DatasetManifest* m : {&out.train, &out.val, &out.test}) {
    m->root = manifest.root;
    m->kind = manifest.kind;
    if (manifest.kind == DatasetKind::classification) m->class_counts.assign(lesion_labels().size(), 0);
  }
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    DatasetManifest& m = part[i] == 0 ? out.train : (part[i] == 1 ? out.val : out.test);
    m.entries.push_back(manifest.entries[i]);
    if (manifest.kind == DatasetKind::classification) ++m.class_counts[static_cast<std::size_t>(manifest.entries[i].label_index)];
  }
  return out;
}

namespace {

std::optional<fs::path> cache_dir() {
  const char* env = std::getenv("SKINET_CACHE");
  if (env == nullptr || *env == '\0') return std::nullopt;
  return fs::path(env);
}

std::string cache_key(const fs::path& file, int size, const char* tag) {
  std::ostringstream key;
  key << fs::absolute(file).string() << '|' << fs::file_size(file) << '|'
      << fs::last_write_time(file).time_since_epoch().count() << '|' << size << '|' << tag;
  return io::sha256_hex(key.str()).substr(0, 32);
}

Image to_rgb(Image img) {
  if (img.channels == 3) return img;
  Image rgb(img.height, img.width, 3);
  for (std::size_t i = 0; i < static_cast<std::size_t>(img.height) * img.width; ++i) {
    for (int c = 0; c < 3; ++c) rgb.pixels[i * 3 + c] = img.pixels[i];
  }
  return rgb;
}

Image load_image_cached(const fs::path& path, int size) {
  const auto dir = cache_dir();
  fs::path cached;
  if (dir) {
    cached = *dir / (cache_key(path, size, "img") + ".bin");
    std::ifstream in(cached, std::ios::binary);
    if (in) {
      int hdr[3] = {0, 0, 0};
      in.read(reinterpret_cast<char*>(hdr), sizeof(hdr));
      Image img(hdr[0], hdr[1], hdr[2]);
      in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size() * sizeof(float)));
      if (in && hdr[0] == size && hdr[1] == size && hdr[2] == 3) return img;
    }
  }
  Image img = to_rgb(preprocess(decode_image(path), size));
  if (dir) {
    std::string blob(sizeof(int) * 3 + img.pixels.size() * sizeof(float), '\0');
    const int hdr[3] = {img.height, img.width, img.channels};
    std::memcpy(blob.data(), hdr, sizeof(hdr));
    std::memcpy(blob.data() + sizeof(hdr), img.pixels.data(), img.pixels.size() * sizeof(float));
    io::write_file_atomic(cached, blob);
  }
  return img;
}

}  // namespace

std::vector<SegSample> load_segmentation_samples(const DatasetManifest& manifest, int size) {
  if (manifest.kind != DatasetKind::segmentation) throw ValidationError("manifest is not a segmentation dataset");
  std::vector<SegSample> out;
  out.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) {
    SegSample s;
    s.id = e.id;
    s.image = load_image_cached(e.image, size);
    if (!e.mask.empty()) {
      s.mask = load_mask(e.mask, size);
    } else {
      const RawImage raw = decode_image(e.image);
      const BinaryMask full = bbox_to_mask(*e.box, raw.height, raw.width);
      ProbMap soft(full.height, full.width);
      for (std::size_t i = 0; i < full.pixels.size(); ++i) soft.values[i] = full.pixels[i];
      Image as_img(full.height, full.width, 1);
      as_img.pixels = soft.values;
      const Image resized = resize_image(as_img, size, size);
      s.mask = BinaryMask(size, size);
      for (std::size_t i = 0; i < resized.pixels.size(); ++i) s.mask.pixels[i] = resized.pixels[i] >= 0.5F ? 1 : 0;
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<ClfSample> load_classification_samples(const DatasetManifest& manifest, int size) {
  if (manifest.kind != DatasetKind::classification) throw ValidationError("manifest is not a classification dataset");
  std::vector<ClfSample> out;
  out.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) {
    out.push_back({e.id, load_image_cached(e.image, size), e.label_index});
  }
  return out;
}

}  // namespace skinet::data
