#include "skinet/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <json.hpp>
#include <sstream>

#include "skinet/errors.hpp"
#include "skinet/io_util.hpp"
#include "skinet/saliency.hpp"
#include "skinet/uncertainty.hpp"

namespace skinet::cli {

namespace fs = std::filesystem;

namespace {

/// Bad flags or configuration; maps to exit code 2.
class UsageError : public Error {
 public:
  using Error::Error;
};

void write_augmentation(const data::AugmentationSpec& a, KeyValues& kv, const std::string& prefix) {
  kv.set(prefix + "hflip", a.allow_hflip);
  kv.set(prefix + "vflip", a.allow_vflip);
  kv.set(prefix + "flip_probability", a.flip_probability);
  kv.set(prefix + "rotation_min", a.rotation_min);
  kv.set(prefix + "rotation_max", a.rotation_max);
}

data::AugmentationSpec read_augmentation(const KeyValues& kv, const std::string& prefix) {
  data::AugmentationSpec a;
  a.allow_hflip = kv.get_bool(prefix + "hflip", a.allow_hflip);
  a.allow_vflip = kv.get_bool(prefix + "vflip", a.allow_vflip);
  a.flip_probability = kv.get_double(prefix + "flip_probability", a.flip_probability);
  a.rotation_min = kv.get_double(prefix + "rotation_min", a.rotation_min);
  a.rotation_max = kv.get_double(prefix + "rotation_max", a.rotation_max);
  return a;
}

// Truncated, not rounded, to two decimals: 1960/2661 = 73.6565% reads 73.65%.
std::string percent(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << std::floor(v * 10000.0 + 1e-9) / 100.0 << "%";
  return s.str();
}

std::vector<fs::path> list_images(const fs::path& input) {
  if (fs::is_regular_file(input)) return {input};
  if (!fs::is_directory(input)) throw IngestionError("input " + input.string() + " does not exist");
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(input)) {
    if (!e.is_regular_file()) continue;
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw IngestionError("no images under " + input.string());
  return out;
}

struct Options {
  std::string command;
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string data;
  std::string input;
  std::string seg_checkpoint;
  std::string clf_checkpoint;
  std::optional<double> threshold_seg;
  std::optional<double> threshold_clf;
  std::optional<int> samples;
  std::string explainer;
  std::optional<double> fraction;
  std::string split_part;
  std::vector<std::string> replay;
  std::string explainers;
  std::string target_class;
};

/// Resolves the run configuration and the path-like settings. Paths given as
/// flags win over run.* keys recorded in a loaded manifest.
struct Session {
  RunConfig cfg;
  Options opt;
  fs::path out;

  std::string setting(const std::string& flag_value, const std::string& key) const {
    if (!flag_value.empty()) return flag_value;
    return cfg.values.get_string(key, "");
  }
  fs::path required_path(const std::string& flag_value, const std::string& key, const std::string& flag) const {
    const auto v = setting(flag_value, key);
    if (v.empty()) throw UsageError(flag + " is required");
    return v;
  }
};

Session make_session(const Options& opt) {
  Session s;
  s.opt = opt;
  KeyValues kv = RunConfig::defaults();
  try {
    if (!opt.config.empty()) {
      if (!fs::exists(opt.config)) throw ValidationError("config file " + opt.config + " does not exist");
      kv.merge(KeyValues::load(opt.config));
    }
    for (const auto& entry : opt.sets) {
      const auto eq = entry.find('=');
      if (eq == std::string::npos) throw ValidationError("--set expects key=value, got '" + entry + "'");
      kv.set(io::trim(entry.substr(0, eq)), io::trim(entry.substr(eq + 1)));
    }
    if (opt.seed) kv.set("seed", *opt.seed);
    if (opt.threshold_seg) kv.set("pipeline.seg_threshold", *opt.threshold_seg);
    if (opt.threshold_clf) kv.set("pipeline.clf_threshold", *opt.threshold_clf);
    if (opt.samples) kv.set("pipeline.samples", *opt.samples);
    if (!opt.explainer.empty()) kv.set("pipeline.explainer", opt.explainer);
    if (opt.fraction) kv.set("bokeh.keep_fraction", *opt.fraction);
    s.cfg = RunConfig::from(kv);
  } catch (const UsageError&) {
    throw;
  } catch (const Error& e) {
    throw UsageError(std::string("invalid configuration: ") + e.what());
  }
  if (opt.out.empty()) throw UsageError("--out is required");
  s.out = opt.out;
  return s;
}

/// Records the run so that `--config run_manifest.txt` repeats it.
void write_manifest(const Session& s, const std::map<std::string, std::string>& run_keys) {
  KeyValues fresh;
  for (const auto& [k, v] : s.cfg.values.entries()) {
    if (k.rfind("run.", 0) != 0) fresh.set(k, v);
  }
  fresh.set("run.command", s.opt.command);
  for (const auto& [k, v] : run_keys) fresh.set(k, v);
  io::write_file_atomic(s.out / "run_manifest.txt",
                        "# Re-run with: skinet " + s.opt.command + " --config run_manifest.txt --out DIR\n" +
                            fresh.to_string());
}

void verify_hash(const Session& s, const fs::path& ckpt, const std::string& key) {
  if (auto expected = s.cfg.values.find(key)) {
    const auto actual = checkpoint_hash(ckpt);
    if (actual != *expected) {
      throw CheckpointError("checkpoint " + ckpt.string() + " hash " + actual + " differs from the recorded " + *expected);
    }
  }
}

std::string abs_string(const fs::path& p) { return fs::absolute(p).lexically_normal().string(); }

// ------------------------------------------------------------------ commands

fs::path checkpoint_path(const Session& s, const std::string& flag_value, const std::string& key, const std::string& flag) {
  const fs::path p = s.required_path(flag_value, key, flag);
  if (!fs::exists(p)) throw CheckpointError("checkpoint " + p.string() + " does not exist");
  return p;
}


int cmd_train_seg(const Session& s, std::ostream& out) {
  const fs::path data_root = s.required_path(s.opt.data, "run.data", "--data");
  const auto& c = s.cfg;
  const auto manifest = data::load_dataset(data_root, data::DatasetKind::segmentation);
  const auto parts = data::split(manifest, c.split, derive_seed(c.seed, "split"));
  const int size = c.segnet.input_size;
  const auto train = data::load_segmentation_samples(parts.train, size);
  const auto val = data::load_segmentation_samples(parts.val, size);
  const auto test = data::load_segmentation_samples(parts.test, size);
  out << "train-seg: " << train.size() << " train, " << val.size() << " val, " << test.size() << " test images\n";

  const auto model = segnet::build_segnet(c.segnet, derive_seed(c.seed, "init"));
  const auto result = segnet::train_segnet(model, train, val, c.seg_train, derive_seed(c.seed, "train"));
  fs::create_directories(s.out);
  const auto ckpt = s.out / "checkpoint";
  segnet::save_checkpoint(result.model, ckpt);

  std::ostringstream hist;
  hist << "epoch,train_loss,train_dice,train_jaccard,val_dice,val_jaccard\n";
  for (const auto& r : result.history) {
    hist << r.epoch << ',' << format_double(r.train_loss) << ',' << format_double(r.train_dice) << ','
         << format_double(r.train_jaccard) << ',' << format_double(r.val_dice) << ',' << format_double(r.val_jaccard)
         << '\n';
    out << "epoch " << r.epoch << " loss " << r.train_loss << " train DI " << r.train_dice << " val DI " << r.val_dice
        << "\n";
  }
  io::write_file_atomic(s.out / "history.csv", hist.str());

  nlohmann::ordered_json m;
  m["architecture"] = segnet::to_string(c.segnet.architecture);
  m["parameters"] = result.model.parameter_count();
  m["best_epoch"] = result.best_epoch;
  const auto [tr_di, tr_ji] = segnet::evaluate_overlap(result.model, train);
  m["train"] = {{"dice", tr_di}, {"jaccard", tr_ji}};
  if (!val.empty()) {
    const auto [di, ji] = segnet::evaluate_overlap(result.model, val);
    m["val"] = {{"dice", di}, {"jaccard", ji}};
  }
  if (!test.empty()) {
    const auto [di, ji] = segnet::evaluate_overlap(result.model, test);
    m["test"] = {{"dice", di}, {"jaccard", ji}};
  }
  io::write_file_atomic(s.out / "metrics.json", m.dump(2) + "\n");
  write_manifest(s, {{"run.data", abs_string(data_root)}, {"run.checkpoint_sha256", checkpoint_hash(ckpt)}});
  out << "checkpoint written to " << ckpt.string() << "\n";
  return kOk;
}

int cmd_train_clf(const Session& s, std::ostream& out) {
  const fs::path data_root = s.required_path(s.opt.data, "run.data", "--data");
  const auto& c = s.cfg;
  const auto manifest = data::load_dataset(data_root, data::DatasetKind::classification);
  const auto parts = data::split(manifest, c.split, derive_seed(c.seed, "split"));
  const int size = c.classifier.input_size;
  auto train = data::load_classification_samples(parts.train, size);
  auto val = data::load_classification_samples(parts.val, size);
  auto test = data::load_classification_samples(parts.test, size);
  std::map<std::string, std::string> extra;
  if (s.cfg.values.get_bool("clf_train.masked_inputs", false)) {
    // Train on what the pipeline would hand the classifier.
    const auto seg_path = checkpoint_path(s, s.opt.seg_checkpoint, "run.seg_checkpoint", "--seg-checkpoint");
    verify_hash(s, seg_path, "run.seg_checkpoint_sha256");
    const auto seg = segnet::load_checkpoint(seg_path);
    const auto mask_seed = derive_seed(c.seed, "mask");
    std::uint64_t index = 0;
    std::size_t routed = 0;
    for (auto* set : {&train, &val, &test}) {
      for (auto& sample : *set) {
        auto r = pipeline::route_input(seg, sample.image, c.pipeline, derive_seed(mask_seed, index++));
        routed += r.seg.used ? 1 : 0;
        sample.image = std::move(r.image);
      }
    }
    out << "masked inputs: " << routed << " of " << index << " images segmented\n";
    extra["run.seg_checkpoint"] = abs_string(seg_path);
    extra["run.seg_checkpoint_sha256"] = checkpoint_hash(seg_path);
  }
  out << "train-clf: " << train.size() << " train, " << val.size() << " val, " << test.size() << " test images\n";

  const auto model = classifier::build_classifier(c.classifier, derive_seed(c.seed, "init"));
  classifier::ClfTrainOptions opts;
  opts.train = c.clf_train;
  opts.augmentation = c.augmentation;
  opts.balance_classes = c.balance_classes;
  const auto result = classifier::train_classifier(model, train, val, opts, derive_seed(c.seed, "train"));
  fs::create_directories(s.out);
  const auto ckpt = s.out / "checkpoint";
  classifier::save_checkpoint(result.model, ckpt);

  std::ostringstream hist;
  hist << "epoch,train_loss,train_accuracy,val_accuracy\n";
  for (const auto& r : result.history) {
    hist << r.epoch << ',' << format_double(r.train_loss) << ',' << format_double(r.train_accuracy) << ','
         << format_double(r.val_accuracy) << '\n';
    out << "epoch " << r.epoch << " loss " << r.train_loss << " train acc " << r.train_accuracy << " val acc "
        << r.val_accuracy << "\n";
  }
  io::write_file_atomic(s.out / "history.csv", hist.str());

  nlohmann::ordered_json m;
  m["backbone"] = classifier::to_string(c.classifier.backbone);
  m["parameters"] = result.model.parameter_count();
  m["best_epoch"] = result.best_epoch;
  m["train_accuracy"] = classifier::accuracy(result.model, train);
  if (!val.empty()) m["val_accuracy"] = classifier::accuracy(result.model, val);
  if (!test.empty()) m["test_accuracy"] = classifier::accuracy(result.model, test);
  io::write_file_atomic(s.out / "metrics.json", m.dump(2) + "\n");
  extra["run.data"] = abs_string(data_root);
  extra["run.checkpoint_sha256"] = checkpoint_hash(ckpt);
  write_manifest(s, extra);
  out << "checkpoint written to " << ckpt.string() << "\n";
  return kOk;
}

struct Models {
  segnet::SegModel seg;
  classifier::ClfModel clf;
  fs::path seg_path;
  fs::path clf_path;
};

Models load_models(const Session& s) {
  const auto seg_path = checkpoint_path(s, s.opt.seg_checkpoint, "run.seg_checkpoint", "--seg-checkpoint");
  const auto clf_path = checkpoint_path(s, s.opt.clf_checkpoint, "run.clf_checkpoint", "--clf-checkpoint");
  verify_hash(s, seg_path, "run.seg_checkpoint_sha256");
  verify_hash(s, clf_path, "run.clf_checkpoint_sha256");
  return {segnet::load_checkpoint(seg_path), classifier::load_checkpoint(clf_path), seg_path, clf_path};
}

std::map<std::string, std::string> model_keys(const Models& m) {
  return {{"run.seg_checkpoint", abs_string(m.seg_path)},
          {"run.clf_checkpoint", abs_string(m.clf_path)},
          {"run.seg_checkpoint_sha256", checkpoint_hash(m.seg_path)},
          {"run.clf_checkpoint_sha256", checkpoint_hash(m.clf_path)}};
}

int cmd_infer(const Session& s, std::ostream& out) {
  const fs::path input = s.required_path(s.opt.input, "run.input", "--input");
  const auto models = load_models(s);
  const auto images = list_images(input);
  fs::create_directories(s.out);
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& path = images[i];
    const Image img = data::preprocess(data::decode_image(path), models.clf.input_size());
    const auto report = pipeline::skinet_infer(models.seg, models.clf, img, s.cfg.pipeline,
                                               derive_seed(s.cfg.seed, static_cast<std::uint64_t>(i)),
                                               path.stem().string());
    pipeline::write_report_bundle(s.out / path.stem(), report, img);
    out << path.filename().string() << ": " << report.clf.predicted_label << " phi_norm "
        << report.clf.uncertainty.phi_norm << " -> " << uncertainty::to_string(report.verdict)
        << (report.seg.used ? " (segmented)" : " (original image)") << "\n";
  }
  auto keys = model_keys(models);
  keys["run.input"] = abs_string(input);
  write_manifest(s, keys);
  return kOk;
}

std::string triage_summary(const std::string& name, const TriageCounts& c) {
  std::ostringstream o;
  o << name << ": cc " << c.cc << ", cu " << c.cu << ", ic " << c.ic << ", iu " << c.iu << ", total " << c.total()
    << "; diagnostic accuracy " << percent(uncertainty::diagnostic_accuracy(c)) << ", prediction accuracy "
    << percent(uncertainty::prediction_accuracy(c)) << "\n";
  return o.str();
}

TriageCounts parse_counts(const std::string& text) {
  const auto fields = io::split_csv_line(text);
  if (fields.size() != 4) throw UsageError("--replay-counts expects cc,cu,ic,iu, got '" + text + "'");
  TriageCounts c;
  std::int64_t* slots[4] = {&c.cc, &c.cu, &c.ic, &c.iu};
  for (std::size_t i = 0; i < 4; ++i) {
    try {
      std::size_t used = 0;
      *slots[i] = std::stoll(fields[i], &used);
      if (used != fields[i].size() || *slots[i] < 0) throw std::invalid_argument("count");
    } catch (const std::exception&) {
      throw UsageError("--replay-counts: '" + fields[i] + "' is not a non-negative integer");
    }
  }
  return c;
}

int cmd_evaluate(const Session& s, std::ostream& out) {
  fs::create_directories(s.out);
  if (!s.opt.replay.empty()) {
    std::string summary;
    nlohmann::ordered_json j;
    j["schema_version"] = 1;
    j["replayed"] = nlohmann::ordered_json::array();
    for (const auto& entry : s.opt.replay) {
      const auto eq = entry.find('=');
      const std::string name = eq == std::string::npos ? "replay" : entry.substr(0, eq);
      const auto counts = parse_counts(eq == std::string::npos ? entry : entry.substr(eq + 1));
      if (counts.total() == 0) throw UsageError("--replay-counts: counts sum to zero");
      summary += triage_summary(name, counts);
      j["replayed"].push_back({{"name", name},
                               {"counts", {{"cc", counts.cc}, {"cu", counts.cu}, {"ic", counts.ic}, {"iu", counts.iu}}},
                               {"diagnostic_accuracy", uncertainty::diagnostic_accuracy(counts)},
                               {"prediction_accuracy", uncertainty::prediction_accuracy(counts)}});
    }
    io::write_file_atomic(s.out / "summary.txt", summary);
    io::write_file_atomic(s.out / "evaluation.json", j.dump(2) + "\n");
    out << summary;
    write_manifest(s, {});
    return kOk;
  }

  const fs::path data_root = s.required_path(s.opt.data, "run.data", "--data");
  const std::string part = s.setting(s.opt.split_part, "run.split").empty() ? "all" : s.setting(s.opt.split_part, "run.split");
  const auto models = load_models(s);
  auto manifest = data::load_dataset(data_root, data::DatasetKind::classification);
  if (part != "all") {
    const auto parts = data::split(manifest, s.cfg.split, derive_seed(s.cfg.seed, "split"));
    if (part == "train") {
      manifest = parts.train;
    } else if (part == "val") {
      manifest = parts.val;
    } else if (part == "test") {
      manifest = parts.test;
    } else {
      throw UsageError("--split must be all, train, val or test");
    }
  }
  const auto result = pipeline::evaluate_pipeline(models.seg, models.clf, manifest, s.cfg.pipeline, s.cfg.seed);
  const auto summary = triage_summary("pipeline", result.counts);
  io::write_file_atomic(s.out / "evaluation.json", pipeline::evaluation_json(result));
  io::write_file_atomic(s.out / "evaluation.csv", pipeline::evaluation_csv(result));
  io::write_file_atomic(s.out / "summary.txt", summary);
  out << summary;
  auto keys = model_keys(models);
  keys["run.data"] = abs_string(data_root);
  keys["run.split"] = part;
  write_manifest(s, keys);
  return kOk;
}

int cmd_explain(const Session& s, std::ostream& out) {
  const fs::path input = s.required_path(s.opt.input, "run.input", "--input");
  const auto clf_path = checkpoint_path(s, s.opt.clf_checkpoint, "run.clf_checkpoint", "--clf-checkpoint");
  verify_hash(s, clf_path, "run.clf_checkpoint_sha256");
  const auto model = classifier::load_checkpoint(clf_path);
  const auto method = s.cfg.pipeline.explainer;
  fs::create_directories(s.out);
  const auto images = list_images(input);
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& path = images[i];
    const Image img = data::preprocess(data::decode_image(path), model.input_size());
    int target = model.predict(img, false, 0).argmax();
    const std::string wanted = s.setting(s.opt.target_class, "run.class");
    if (!wanted.empty()) {
      const auto labels = model.labels();
      const auto it = std::find(labels.begin(), labels.end(), wanted);
      if (it == labels.end()) throw UsageError("--class '" + wanted + "' is not one of the checkpoint labels");
      target = static_cast<int>(it - labels.begin());
    }
    const auto attr = saliency::explain(method, model, img, target, s.cfg.pipeline.xrai,
                                        derive_seed(s.cfg.seed, static_cast<std::uint64_t>(i)));
    const std::string stem = path.stem().string() + "_" + saliency::to_string(method);
    data::write_png(s.out / (stem + "_overlay.png"), saliency::overlay(img, attr, 0.45));
    data::write_png(s.out / (stem + "_heatmap.png"), saliency::heatmap(attr));
    saliency::write_npy(s.out / (stem + ".npy"), attr);
    out << path.filename().string() << ": " << saliency::to_string(method) << " map for class "
        << model.labels()[static_cast<std::size_t>(target)] << "\n";
  }
  write_manifest(s, {{"run.input", abs_string(input)},
                     {"run.clf_checkpoint", abs_string(clf_path)},
                     {"run.clf_checkpoint_sha256", checkpoint_hash(clf_path)}});
  return kOk;
}

int cmd_xai_bench(const Session& s, std::ostream& out) {
  const fs::path data_root = s.required_path(s.opt.data, "run.data", "--data");
  const auto clf_path = checkpoint_path(s, s.opt.clf_checkpoint, "run.clf_checkpoint", "--clf-checkpoint");
  verify_hash(s, clf_path, "run.clf_checkpoint_sha256");
  const auto model = classifier::load_checkpoint(clf_path);
  std::string list = s.setting(s.opt.explainers, "run.explainers");
  if (list.empty()) list = "gb,gradcam,ggc,xrai,random";
  std::vector<saliency::Method> methods;
  try {
    for (const auto& name : io::split_csv_line(list)) methods.push_back(saliency::parse_method(name));
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  const auto manifest = data::load_dataset(data_root, data::DatasetKind::classification);
  const auto samples = data::load_classification_samples(manifest, model.input_size());
  std::vector<xai_eval::ExplainerResult> results;
  for (auto m : methods) {
    results.push_back(xai_eval::evaluate_explainer(model, samples, m, s.cfg.bokeh, s.cfg.pipeline.xrai, s.cfg.seed));
    out << saliency::to_string(m) << ": retained accuracy " << percent(results.back().retained_accuracy)
        << " (baseline " << percent(results.back().baseline_accuracy) << ")\n";
  }
  fs::create_directories(s.out);
  io::write_file_atomic(s.out / "xai_bench.csv", xai_eval::records_csv(results));
  io::write_file_atomic(s.out / "xai_bench.json", xai_eval::summary_json(results));
  write_manifest(s, {{"run.data", abs_string(data_root)},
                     {"run.explainers", list},
                     {"run.clf_checkpoint", abs_string(clf_path)},
                     {"run.clf_checkpoint_sha256", checkpoint_hash(clf_path)}});
  return kOk;
}

}  // namespace

KeyValues RunConfig::defaults() {
  KeyValues kv;
  kv.set("seed", std::uint64_t{0});
  segnet::SegNetConfig().write(kv, "segnet.");
  TrainConfig().write(kv, "seg_train.");
  classifier::ClassifierConfig().write(kv, "classifier.");
  TrainConfig().write(kv, "clf_train.");
  kv.set("clf_train.balance_classes", true);
  kv.set("clf_train.masked_inputs", false);
  write_augmentation(data::AugmentationSpec(), kv, "augment.");
  pipeline::PipelineConfig().write(kv, "pipeline.");
  xai_eval::BokehParams().write(kv, "bokeh.");
  const data::SplitFractions f;
  kv.set("split.train", f.train);
  kv.set("split.val", f.val);
  kv.set("split.test", f.test);
  return kv;
}

RunConfig RunConfig::from(const KeyValues& kv) {
  const KeyValues known = defaults();
  for (const auto& [key, value] : kv.entries()) {
    if (key.rfind("run.", 0) == 0) continue;
    if (!known.contains(key)) throw ValidationError("unknown config key '" + key + "'");
  }
  RunConfig c;
  c.values = kv;
  c.seed = kv.get_uint("seed", 0);
  c.segnet = segnet::SegNetConfig::read(kv, "segnet.");
  c.seg_train = TrainConfig::read(kv, "seg_train.");
  c.classifier = classifier::ClassifierConfig::read(kv, "classifier.");
  c.clf_train = TrainConfig::read(kv, "clf_train.");
  c.balance_classes = kv.get_bool("clf_train.balance_classes", true);
  c.augmentation = read_augmentation(kv, "augment.");
  c.pipeline = pipeline::PipelineConfig::read(kv, "pipeline.");
  c.bokeh = xai_eval::BokehParams::read(kv, "bokeh.");
  c.split.train = kv.get_double("split.train", c.split.train);
  c.split.val = kv.get_double("split.val", c.split.val);
  c.split.test = kv.get_double("split.test", c.split.test);

  auto check = [](const std::string& section, auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      throw ValidationError(section + ": " + e.what());
    }
  };
  check("segnet", [&] { c.segnet.validate(); });
  check("seg_train", [&] { c.seg_train.validate(); });
  check("classifier", [&] { c.classifier.validate(); });
  check("clf_train", [&] { c.clf_train.validate(); });
  check("augment", [&] { c.augmentation.validate(); });
  check("pipeline", [&] { c.pipeline.validate(); });
  check("bokeh", [&] { c.bokeh.validate(); });
  const double sum = c.split.train + c.split.val + c.split.test;
  if (c.split.train < 0 || c.split.val < 0 || c.split.test < 0 || std::abs(sum - 1.0) > 1e-9) {
    throw ValidationError("split.train/val/test must be non-negative and sum to 1");
  }
  return c;
}

std::string checkpoint_hash(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw CheckpointError("missing checkpoint directory " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::string digest;
  for (const auto& f : files) digest += f.filename().string() + ":" + io::sha256_file(f) + "\n";
  return io::sha256_hex(digest);
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"SkiNet: uncertainty-gated skin lesion segmentation, classification and explanation", "skinet"};
  app.require_subcommand(1, 1);
  Options opt;

  auto common = [&opt](CLI::App* sub) {
    sub->add_option("--config", opt.config, "Key-value config file (a run_manifest.txt works too)");
    sub->add_option("--set", opt.sets, "Override one config key: key=value (repeatable)");
    sub->add_option("--seed", opt.seed, "Root seed");
    sub->add_option("--out", opt.out, "Output directory")->required();
  };
  auto* train_seg = app.add_subcommand("train-seg", "Train the segmentation network");
  common(train_seg);
  train_seg->add_option("--data", opt.data, "Segmentation dataset root");
  auto* train_clf = app.add_subcommand("train-clf", "Train the lesion classifier");
  common(train_clf);
  train_clf->add_option("--data", opt.data, "Classification dataset root");
  train_clf->add_option("--seg-checkpoint", opt.seg_checkpoint, "Segmenter used when clf_train.masked_inputs is set");

  auto pipeline_flags = [&opt](CLI::App* sub) {
    sub->add_option("--seg-checkpoint", opt.seg_checkpoint, "Segmentation checkpoint directory");
    sub->add_option("--clf-checkpoint", opt.clf_checkpoint, "Classifier checkpoint directory");
    sub->add_option("--threshold-seg", opt.threshold_seg, "Segmentation uncertainty threshold");
    sub->add_option("--threshold-clf", opt.threshold_clf, "Classification uncertainty threshold");
    sub->add_option("--samples", opt.samples, "Stochastic samples per stage");
    sub->add_option("--explainer", opt.explainer, "gb, gradcam, ggc, ig, xrai or random")
        ->check(CLI::IsMember({"gb", "gradcam", "ggc", "xrai", "ig", "random"}));
  };
  auto* infer = app.add_subcommand("infer", "Run the full pipeline on images");
  common(infer);
  pipeline_flags(infer);
  infer->add_option("--input", opt.input, "Image file or directory");
  auto* evaluate = app.add_subcommand("evaluate", "Triage counts and diagnostic accuracy over a labelled set");
  common(evaluate);
  pipeline_flags(evaluate);
  evaluate->add_option("--data", opt.data, "Classification dataset root");
  evaluate->add_option("--split", opt.split_part, "all, train, val or test (default all)");
  evaluate->add_option("--replay-counts", opt.replay, "Summarize given counts instead: [name=]cc,cu,ic,iu");
  auto* explain = app.add_subcommand("explain", "Attribution maps for images");
  common(explain);
  explain->add_option("--clf-checkpoint", opt.clf_checkpoint, "Classifier checkpoint directory");
  explain->add_option("--input", opt.input, "Image file or directory");
  explain->add_option("--explainer", opt.explainer, "gb, gradcam, ggc, ig, xrai or random")
      ->check(CLI::IsMember({"gb", "gradcam", "ggc", "xrai", "ig", "random"}));
  explain->add_option("--class", opt.target_class, "Target label (default: predicted class)");
  auto* bench = app.add_subcommand("xai-bench", "Bokeh benchmark of the explainers");
  common(bench);
  bench->add_option("--clf-checkpoint", opt.clf_checkpoint, "Classifier checkpoint directory");
  bench->add_option("--data", opt.data, "Classification dataset root");
  bench->add_option("--fraction", opt.fraction, "Share of pixels kept sharp");
  bench->add_option("--explainers", opt.explainers, "Comma list (default gb,gradcam,ggc,xrai,random)");

  std::vector<const char*> argv{"skinet"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kUsageError;
  }
  opt.command = app.get_subcommands().front()->get_name();

  try {
    const Session session = make_session(opt);
    if (opt.command == "train-seg") return cmd_train_seg(session, out);
    if (opt.command == "train-clf") return cmd_train_clf(session, out);
    if (opt.command == "infer") return cmd_infer(session, out);
    if (opt.command == "evaluate") return cmd_evaluate(session, out);
    if (opt.command == "explain") return cmd_explain(session, out);
    return cmd_xai_bench(session, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntimeFailure;
  }
}

}  // namespace skinet::cli
