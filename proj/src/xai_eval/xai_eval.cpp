#include "skinet/xai_eval.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <json.hpp>
#include <sstream>

#include "skinet/errors.hpp"

namespace skinet::xai_eval {

void BokehParams::validate() const {
  if (!(sigma > 0.0)) throw ValidationError("bokeh.sigma must be positive");
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) throw ValidationError("bokeh.keep_fraction must lie in (0,1]");
}

void BokehParams::write(KeyValues& kv, const std::string& prefix) const {
  kv.set(prefix + "sigma", sigma);
  kv.set(prefix + "keep_fraction", keep_fraction);
}

BokehParams BokehParams::read(const KeyValues& kv, const std::string& prefix) {
  BokehParams p;
  p.sigma = kv.get_double(prefix + "sigma", p.sigma);
  p.keep_fraction = kv.get_double(prefix + "keep_fraction", p.keep_fraction);
  return p;
}

Image bokeh_reconstruct(const Image& img, const BinaryMask& keep, const BokehParams& params) {
  if (!(params.sigma > 0.0)) throw ValidationError("bokeh.sigma must be positive");
  if (keep.height != img.height || keep.width != img.width) {
    throw ValidationError("bokeh mask does not match the image shape");
  }
  Image out = img;
  const std::size_t n = static_cast<std::size_t>(img.height) * img.width;
  for (int c = 0; c < img.channels; ++c) {
    cv::Mat plane(img.height, img.width, CV_32FC1);
    auto* dst = plane.ptr<float>();
    for (std::size_t i = 0; i < n; ++i) dst[i] = img.pixels[i * img.channels + c];
    cv::GaussianBlur(plane, plane, cv::Size(0, 0), params.sigma, params.sigma, cv::BORDER_REFLECT);
    dst = plane.ptr<float>();
    for (std::size_t i = 0; i < n; ++i) {
      if (!keep.pixels[i]) out.pixels[i * img.channels + c] = std::clamp(dst[i], 0.0F, 1.0F);
    }
  }
  return out;
}

ExplainerResult evaluate_explainer(const DifferentiableClassifier& model, std::span<const data::ClfSample> samples,
                                   saliency::Method method, const BokehParams& params,
                                   const saliency::XraiParams& xrai, std::uint64_t seed) {
  params.validate();
  if (samples.empty()) throw ValidationError("explainer benchmark needs at least one labelled image");
  ExplainerResult result;
  result.method = method;
  result.fraction = params.keep_fraction;
  std::size_t before_hits = 0;
  std::size_t after_hits = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    const int before = model.predict(s.image, false, 0).argmax();
    const auto attr =
        saliency::explain(method, model, s.image, before, xrai, derive_seed(seed, static_cast<std::uint64_t>(i)));
    const auto keep = saliency::top_fraction_mask(attr, params.keep_fraction);
    const int after = model.predict(bokeh_reconstruct(s.image, keep, params), false, 0).argmax();
    ExplainerRecord rec{s.id, saliency::to_string(method), params.keep_fraction, s.label, before, after, after == s.label};
    before_hits += before == s.label ? 1 : 0;
    after_hits += rec.correct_after ? 1 : 0;
    result.records.push_back(std::move(rec));
  }
  const auto n = static_cast<double>(samples.size());
  result.baseline_accuracy = static_cast<double>(before_hits) / n;
  result.retained_accuracy = static_cast<double>(after_hits) / n;
  return result;
}

ExplainerResult evaluate_explainer(const DifferentiableClassifier& model, const data::DatasetManifest& manifest,
                                   saliency::Method method, const BokehParams& params,
                                   const saliency::XraiParams& xrai, std::uint64_t seed) {
  if (manifest.entries.empty()) throw ValidationError("explainer benchmark manifest is empty");
  const auto samples = data::load_classification_samples(manifest, model.input_size());
  return evaluate_explainer(model, samples, method, params, xrai, seed);
}

std::string records_csv(std::span<const ExplainerResult> results) {
  std::ostringstream out;
  out << "image,explainer,fraction,label,predicted_before,predicted_after,correct_after\n";
  for (const auto& r : results) {
    for (const auto& rec : r.records) {
      out << rec.image << ',' << rec.explainer << ',' << format_double(rec.fraction) << ',' << rec.label << ','
          << rec.predicted_before << ',' << rec.predicted_after << ',' << (rec.correct_after ? 1 : 0) << '\n';
    }
  }
  return out.str();
}

std::string summary_json(std::span<const ExplainerResult> results) {
  nlohmann::ordered_json j;
  j["schema_version"] = 1;
  j["explainers"] = nlohmann::ordered_json::array();
  for (const auto& r : results) {
    j["explainers"].push_back({{"explainer", saliency::to_string(r.method)},
                               {"fraction", r.fraction},
                               {"images", r.records.size()},
                               {"baseline_accuracy", r.baseline_accuracy},
                               {"retained_accuracy", r.retained_accuracy}});
  }
  return j.dump(2) + "\n";
}

}  // namespace skinet::xai_eval
