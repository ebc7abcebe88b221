#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <numbers>
#include <sstream>

#include "skinet/errors.hpp"
#include "skinet/io_util.hpp"
#include "skinet/pipeline.hpp"

namespace skinet::pipeline {

namespace {

using Json = nlohmann::ordered_json;

Json uncertainty_json(const UncertaintyRecord& u) {
  return {{"phi", u.phi},
          {"phi_norm", u.phi_norm},
          {"phi_min", u.phi_min},
          {"phi_max", u.phi_max},
          {"threshold", u.threshold},
          {"is_certain", u.is_certain}};
}

data::RawImage from_mat(const cv::Mat& bgr) {
  data::RawImage out;
  out.height = bgr.rows;
  out.width = bgr.cols;
  out.channels = 3;
  out.pixels.resize(static_cast<std::size_t>(bgr.rows) * bgr.cols * 3);
  for (int r = 0; r < bgr.rows; ++r) {
    for (int c = 0; c < bgr.cols; ++c) {
      const auto& px = bgr.at<cv::Vec3b>(r, c);
      for (int ch = 0; ch < 3; ++ch) out.pixels[(static_cast<std::size_t>(r) * bgr.cols + c) * 3 + ch] = px[2 - ch];
    }
  }
  return out;
}

void require(const Json& j, const std::string& path, bool ok) {
  if (!ok) throw ValidationError("report field '" + path + "' is missing or has the wrong type");
  (void)j;
}

}  // namespace

std::string report_json(const DiagnosisReport& report) {
  Json j;
  j["schema_version"] = 1;
  j["input_id"] = report.input_id;
  const auto& su = report.seg.uncertainty;
  double mean_entropy = 0.0;
  for (float v : su.pixel_entropy_map.values) mean_entropy += v;
  if (!su.pixel_entropy_map.values.empty()) mean_entropy /= static_cast<double>(su.pixel_entropy_map.values.size());
  j["seg"] = {{"used", report.seg.used},
              {"scalar_phi_norm", su.scalar_phi_norm},
              {"mode", uncertainty::to_string(su.mode)},
              {"mean_pixel_entropy", mean_entropy},
              {"mask_positive_count", report.seg.mask.positive_count()},
              {"height", report.seg.mask.height},
              {"width", report.seg.mask.width}};
  j["clf"] = {{"class_labels", report.clf.mean.class_labels},
              {"mean", report.clf.mean.probs},
              {"predicted_class", report.clf.predicted_class},
              {"predicted_label", report.clf.predicted_label},
              {"uncertainty", uncertainty_json(report.clf.uncertainty)}};
  j["verdict"] = uncertainty::to_string(report.verdict);
  if (report.saliency) {
    j["saliency"] = {{"method", saliency::to_string(report.saliency->method)},
                     {"target_class", report.saliency->target_class},
                     {"height", report.saliency->height},
                     {"width", report.saliency->width},
                     {"channels", report.saliency->channels},
                     {"file", "saliency.npy"}};
  } else {
    j["saliency"] = nullptr;
  }
  j["warnings"] = report.warnings;
  return j.dump(2) + "\n";
}

void validate_report_json(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const std::exception& e) {
    throw ValidationError(std::string("report is not valid JSON: ") + e.what());
  }
  require(j, "schema_version", j.contains("schema_version") && j["schema_version"] == 1);
  require(j, "input_id", j.contains("input_id") && j["input_id"].is_string());
  require(j, "seg", j.contains("seg") && j["seg"].is_object());
  const auto& seg = j["seg"];
  require(j, "seg.used", seg.contains("used") && seg["used"].is_boolean());
  require(j, "seg.scalar_phi_norm", seg.contains("scalar_phi_norm") && seg["scalar_phi_norm"].is_number());
  require(j, "clf", j.contains("clf") && j["clf"].is_object());
  const auto& clf = j["clf"];
  require(j, "clf.mean", clf.contains("mean") && clf["mean"].is_array());
  require(j, "clf.class_labels", clf.contains("class_labels") && clf["class_labels"].is_array() &&
                                     clf["class_labels"].size() == clf["mean"].size());
  require(j, "clf.predicted_class", clf.contains("predicted_class") && clf["predicted_class"].is_number_integer());
  require(j, "clf.uncertainty", clf.contains("uncertainty") && clf["uncertainty"].is_object());
  for (const char* key : {"phi", "phi_norm", "phi_min", "phi_max", "threshold"}) {
    require(j, std::string("clf.uncertainty.") + key,
            clf["uncertainty"].contains(key) && clf["uncertainty"][key].is_number());
  }
  require(j, "clf.uncertainty.is_certain",
          clf["uncertainty"].contains("is_certain") && clf["uncertainty"]["is_certain"].is_boolean());
  require(j, "verdict",
          j.contains("verdict") && (j["verdict"] == "certain" || j["verdict"] == "refer_to_expert"));
  require(j, "saliency", j.contains("saliency") && (j["saliency"].is_null() || j["saliency"].is_object()));
  require(j, "warnings", j.contains("warnings") && j["warnings"].is_array());
  const bool certain = clf["uncertainty"]["is_certain"].get<bool>();
  if (certain != (j["verdict"] == "certain")) throw ValidationError("report verdict disagrees with is_certain");
}

data::RawImage uncertainty_image(const ProbMap& pixel_entropy) {
  // White where certain, light greenish blue where the pixel entropy peaks.
  const double tint[3] = {120.0, 220.0, 210.0};
  data::RawImage out;
  out.height = pixel_entropy.height;
  out.width = pixel_entropy.width;
  out.channels = 3;
  out.pixels.resize(pixel_entropy.values.size() * 3);
  for (std::size_t i = 0; i < pixel_entropy.values.size(); ++i) {
    const double e = std::clamp(pixel_entropy.values[i] / std::numbers::ln2, 0.0, 1.0);
    for (int ch = 0; ch < 3; ++ch) {
      out.pixels[i * 3 + ch] = static_cast<std::uint8_t>(std::lround((1.0 - e) * 255.0 + e * tint[ch]));
    }
  }
  return out;
}

data::RawImage mask_overlay(const Image& img, const BinaryMask& mask) {
  if (mask.height != img.height || mask.width != img.width) throw ValidationError("mask does not match the image");
  auto out = data::to_raw(img);
  if (out.channels != 3) {
    data::RawImage rgb{out.height, out.width, 3, {}};
    rgb.pixels.reserve(out.pixels.size() * 3);
    for (auto v : out.pixels) rgb.pixels.insert(rgb.pixels.end(), {v, v, v});
    out = std::move(rgb);
  }
  auto boundary = [&](int r, int c) {
    if (!mask.at(r, c)) return false;
    for (int dr = -1; dr <= 1; ++dr) {
      for (int dc = -1; dc <= 1; ++dc) {
        const int rr = r + dr;
        const int cc = c + dc;
        if (rr < 0 || cc < 0 || rr >= mask.height || cc >= mask.width || !mask.at(rr, cc)) return true;
      }
    }
    return false;
  };
  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c) {
      auto* px = &out.pixels[(static_cast<std::size_t>(r) * img.width + c) * 3];
      if (boundary(r, c)) {
        px[0] = 0;
        px[1] = 255;
        px[2] = 0;
      } else if (mask.at(r, c)) {
        px[1] = static_cast<std::uint8_t>(std::lround(0.7 * px[1] + 0.3 * 255.0));
      }
    }
  }
  return out;
}

data::RawImage posterior_chart(const ProbabilityVector& p, double threshold_phi_norm, double phi_norm) {
  const int bar = 48;
  const int gap = 12;
  const int plot_h = 200;
  const int width = gap + static_cast<int>(p.size()) * (bar + gap);
  const int height = plot_h + 70;
  cv::Mat img(height, width, CV_8UC3, cv::Scalar(255, 255, 255));
  const int best = p.size() ? p.argmax() : -1;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const int x = gap + static_cast<int>(k) * (bar + gap);
    const int h = static_cast<int>(std::lround(p.probs[k] * plot_h));
    const cv::Scalar colour = static_cast<int>(k) == best ? cv::Scalar(60, 60, 200) : cv::Scalar(180, 130, 70);
    cv::rectangle(img, cv::Point(x, 10 + plot_h - h), cv::Point(x + bar, 10 + plot_h), colour, cv::FILLED);
    const std::string label = k < p.class_labels.size() ? p.class_labels[k] : std::to_string(k);
    cv::putText(img, label, cv::Point(x, 10 + plot_h + 20), cv::FONT_HERSHEY_SIMPLEX, 0.4, cv::Scalar(0, 0, 0), 1);
    std::ostringstream v;
    v.precision(2);
    v << std::fixed << p.probs[k];
    cv::putText(img, v.str(), cv::Point(x, 10 + plot_h - h - 3), cv::FONT_HERSHEY_SIMPLEX, 0.35, cv::Scalar(0, 0, 0), 1);
  }
  std::ostringstream caption;
  caption.precision(3);
  caption << std::fixed << "phi_norm " << phi_norm << " / threshold " << threshold_phi_norm;
  cv::putText(img, caption.str(), cv::Point(gap, height - 12), cv::FONT_HERSHEY_SIMPLEX, 0.4, cv::Scalar(0, 0, 0), 1);
  return from_mat(img);
}

void write_report_bundle(const std::filesystem::path& dir, const DiagnosisReport& report, const Image& original) {
  std::filesystem::create_directories(dir);
  io::write_file_atomic(dir / "report.json", report_json(report));
  const Image shown = original.height == report.seg.mask.height && original.width == report.seg.mask.width
                          ? original
                          : data::resize_image(original, report.seg.mask.height, report.seg.mask.width);
  data::write_png(dir / "mask_overlay.png", mask_overlay(shown, report.seg.mask));
  data::write_png(dir / "uncertainty.png", uncertainty_image(report.seg.uncertainty.pixel_entropy_map));
  data::write_png(dir / "posterior.png",
                  posterior_chart(report.clf.mean, report.clf.uncertainty.threshold, report.clf.uncertainty.phi_norm));
  data::write_png(dir / "classifier_input.png", data::to_raw(report.classifier_input));
  if (report.saliency) {
    data::write_png(dir / "saliency_overlay.png", saliency::overlay(report.classifier_input, *report.saliency, 0.45));
    data::write_png(dir / "saliency_heatmap.png", saliency::heatmap(*report.saliency));
    saliency::write_npy(dir / "saliency.npy", *report.saliency);
  }
  Json t;
  for (const auto& [stage, ms] : report.timings_ms) t[stage] = ms;
  io::write_file_atomic(dir / "timings.json", t.dump(2) + "\n");
}

std::string evaluation_json(const EvaluationResult& result) {
  Json j;
  j["schema_version"] = 1;
  j["counts"] = {{"cc", result.counts.cc}, {"cu", result.counts.cu}, {"ic", result.counts.ic}, {"iu", result.counts.iu}};
  j["total"] = result.counts.total();
  j["diagnostic_accuracy"] = result.diagnostic_accuracy;
  j["prediction_accuracy"] = result.prediction_accuracy;
  return j.dump(2) + "\n";
}

std::string evaluation_csv(const EvaluationResult& result) {
  std::ostringstream out;
  out << "image,label,predicted,seg_phi_norm,seg_used,clf_phi_norm,category\n";
  for (const auto& r : result.records) {
    out << r.id << ',' << r.label << ',' << r.predicted << ',' << format_double(r.seg_phi_norm) << ','
        << (r.seg_used ? 1 : 0) << ',' << format_double(r.clf_phi_norm) << ',' << uncertainty::to_string(r.category)
        << '\n';
  }
  return out.str();
}

}  // namespace skinet::pipeline
