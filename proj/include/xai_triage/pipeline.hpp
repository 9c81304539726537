#pragma once

// End-to-end run over a manifest: insulator crop, shell crop, sharpness gate,
// classification, heatmaps for damage predictions, tki against masks, and the
// report.
//
// Masks are drawn in the full-image frame and cropped along with the image.

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "xai_triage/accuracy.hpp"
#include "xai_triage/error.hpp"
#include "xai_triage/heatmap.hpp"
#include "xai_triage/image.hpp"
#include "xai_triage/localization.hpp"
#include "xai_triage/lrp.hpp"
#include "xai_triage/manifest.hpp"
#include "xai_triage/model_io.hpp"
#include "xai_triage/network.hpp"
#include "xai_triage/rebalance.hpp"
#include "xai_triage/sharpness.hpp"

namespace xai_triage {

struct PipelineConfig {
  std::filesystem::path model;
  RuleConfig rules = RuleConfig::composite();
  RebalanceConfig rebalance;
  ScoreVariant variant = ScoreVariant::normalized;
  double threshold = 0.0;
  std::optional<std::size_t> k;  // per-heatmap default_k when unset
  std::filesystem::path out_dir;
  std::optional<std::vector<double>> sweep_thresholds;
  bool explain = true;         // false: classify and gate only
  bool explain_all = false;    // heatmaps for every kept shell
  bool explain_masked = false;  // heatmaps for every kept shell with a mask
  std::size_t workers = 0;     // 0: hardware concurrency

  void validate() const {
    rules.validate();
    if (!(threshold >= 0.0)) {
      throw Error(ErrorKind::validation, "sharpness threshold must be >= 0");
    }
    if (k && *k == 0) throw Error(ErrorKind::validation, "k must be >= 1");
    if (rebalance.num_partitions == 0) {
      throw Error(ErrorKind::validation, "partition count must be >= 1");
    }
    for (const auto& [name, factor] : rebalance.emphasis) {
      if (!(factor > 0.0)) {
        throw Error(ErrorKind::validation, "emphasis for '" + name + "' must be > 0");
      }
    }
    if (sweep_thresholds) {
      for (double t : *sweep_thresholds) {
        if (!(t >= 0.0)) throw Error(ErrorKind::validation, "sweep thresholds must be >= 0");
      }
      check_ascending(*sweep_thresholds);
    }
  }
};

namespace detail {

inline void check_keys(const nlohmann::json& j, std::initializer_list<const char*> keys,
                       const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    if (std::none_of(keys.begin(), keys.end(), [&](const char* k) { return key == k; })) {
      throw Error(ErrorKind::validation, "unknown key '" + key + "' in " + where);
    }
  }
}

template <typename T>
T get_as(const nlohmann::json& j, const std::string& what) {
  try {
    return j.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorKind::validation, "bad value for '" + what + "'");
  }
}

}  // namespace detail

// Config file, all keys optional:
//   {"model": "base.model", "out": "out",
//    "lrp": {"preset": "composite" | "basic", "low": 0, "high": 1},
//    "partitions": 10, "seed": 0, "emphasis": {"broken": 2.0},
//    "class_weights": {"broken": 1, "flash": 1, "healthy": 1},
//    "solver": {"learning_rate": 0.1, "max_iterations": 5000, "tolerance": 1e-6},
//    "sharpness": {"variant": "normalized", "threshold": 0.0},
//    "sweep": [t0, t1, ...] | {"first": a, "last": b, "step": s},
//    "k": 28, "explain_all": false, "workers": 0}
// Relative paths are taken against the config file's directory. Class-weight
// names are resolved against the model once it is loaded.
struct ConfigFile {
  PipelineConfig config;
  std::map<std::string, double> class_weights;
};

inline ConfigFile parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  using detail::get_as;
  if (!j.is_object()) throw Error(ErrorKind::validation, "config must be a JSON object");
  detail::check_keys(j,
                     {"model", "out", "lrp", "partitions", "seed", "emphasis", "class_weights",
                      "solver", "sharpness", "sweep", "k", "explain_all", "workers"},
                     "config");
  ConfigFile out;
  PipelineConfig& c = out.config;
  if (j.contains("model")) c.model = base_dir / get_as<std::string>(j["model"], "model");
  if (j.contains("out")) c.out_dir = base_dir / get_as<std::string>(j["out"], "out");
  if (j.contains("lrp")) {
    const auto& l = j["lrp"];
    detail::check_keys(l, {"preset", "low", "high"}, "lrp");
    const std::string preset = l.contains("preset") ? get_as<std::string>(l["preset"], "preset")
                                                    : "composite";
    if (preset == "composite") {
      c.rules = RuleConfig::composite(l.contains("low") ? get_as<double>(l["low"], "low") : 0.0,
                                      l.contains("high") ? get_as<double>(l["high"], "high") : 1.0);
    } else if (preset == "basic") {
      c.rules = RuleConfig::basic();
    } else {
      throw Error(ErrorKind::validation, "unknown lrp preset '" + preset + "'");
    }
  }
  if (j.contains("partitions")) {
    c.rebalance.num_partitions = get_as<std::size_t>(j["partitions"], "partitions");
  }
  if (j.contains("seed")) c.rebalance.seed = get_as<std::uint64_t>(j["seed"], "seed");
  if (j.contains("emphasis")) {
    c.rebalance.emphasis = get_as<std::map<std::string, double>>(j["emphasis"], "emphasis");
  }
  if (j.contains("class_weights")) {
    out.class_weights =
        get_as<std::map<std::string, double>>(j["class_weights"], "class_weights");
  }
  if (j.contains("solver")) {
    const auto& s = j["solver"];
    detail::check_keys(s, {"learning_rate", "max_iterations", "tolerance"}, "solver");
    if (s.contains("learning_rate")) {
      c.rebalance.solver.learning_rate = get_as<double>(s["learning_rate"], "learning_rate");
    }
    if (s.contains("max_iterations")) {
      c.rebalance.solver.max_iterations = get_as<std::size_t>(s["max_iterations"], "max_iterations");
    }
    if (s.contains("tolerance")) {
      c.rebalance.solver.gradient_tolerance = get_as<double>(s["tolerance"], "tolerance");
    }
  }
  if (j.contains("sharpness")) {
    const auto& s = j["sharpness"];
    detail::check_keys(s, {"variant", "threshold"}, "sharpness");
    if (s.contains("variant")) {
      c.variant = score_variant_from_string(get_as<std::string>(s["variant"], "variant"));
    }
    if (s.contains("threshold")) c.threshold = get_as<double>(s["threshold"], "threshold");
  }
  if (j.contains("sweep")) {
    const auto& s = j["sweep"];
    if (s.is_array()) {
      c.sweep_thresholds = get_as<std::vector<double>>(s, "sweep");
    } else {
      detail::check_keys(s, {"first", "last", "step"}, "sweep");
      if (!s.contains("first") || !s.contains("last") || !s.contains("step")) {
        throw Error(ErrorKind::validation, "sweep range needs first, last and step");
      }
      c.sweep_thresholds = threshold_range(get_as<double>(s["first"], "first"),
                                           get_as<double>(s["last"], "last"),
                                           get_as<double>(s["step"], "step"));
    }
  }
  if (j.contains("k")) c.k = get_as<std::size_t>(j["k"], "k");
  if (j.contains("explain_all")) c.explain_all = get_as<bool>(j["explain_all"], "explain_all");
  if (j.contains("workers")) c.workers = get_as<std::size_t>(j["workers"], "workers");
  return out;
}

inline ConfigFile load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::parse, detail::concat("config ", path.string(), ": malformed JSON at byte ",
                                                 e.byte));
  }
  return parse_config(j, path.parent_path());
}

inline ClassWeights resolve_class_weights(const Network& net,
                                          const std::map<std::string, double>& named) {
  ClassWeights cw = uniform_class_weights(net.num_classes());
  for (const auto& [name, w] : named) {
    const auto idx = net.class_index(name);
    if (!idx) throw Error(ErrorKind::validation, "class weight for unknown class '" + name + "'");
    cw.w[*idx] = w;
  }
  cw.validate(net.num_classes());
  return cw;
}

// ---------------------------------------------------------------------------
// Shell extraction

struct ShellCrop {
  std::size_t insulator = 0;
  std::size_t shell = 0;  // running index within the record
  Box insulator_box;
  Box shell_box;                   // insulator-crop frame
  RgbImage crop;                   // native resolution
  std::optional<BinaryMask> mask;  // same frame as `crop`
};

struct ShellInput {
  ShellCrop shell;
  Tensor input;                    // classifier input
  std::optional<BinaryMask> mask;  // at classifier resolution
};

inline Tensor classifier_input(const Network& net, const RgbImage& crop) {
  const Shape& s = net.input_shape();
  if (s.size() != 3 || (s[0] != 1 && s[0] != 3)) {
    throw Error(ErrorKind::shape_mismatch,
                "model input " + shape_string(s) + " is not a 1- or 3-channel image");
  }
  const RgbImage sized =
      crop.width() == s[2] && crop.height() == s[1] ? crop : resize_bilinear(crop, s[2], s[1]);
  return image_to_tensor(sized, s[0]);
}

inline BinaryMask crop_mask(const BinaryMask& m, const Box& b) {
  if (!box_within(b, m.width, m.height)) {
    throw Error(ErrorKind::out_of_bounds, detail::concat("box ", to_string(b), " outside mask ",
                                                         m.width, "x", m.height));
  }
  BinaryMask out(static_cast<std::size_t>(b.height), static_cast<std::size_t>(b.width));
  for (std::size_t r = 0; r < out.height; ++r)
    for (std::size_t c = 0; c < out.width; ++c)
      out.set(r, c, m.at(static_cast<std::size_t>(b.y) + r, static_cast<std::size_t>(b.x) + c));
  return out;
}

// Insulator crop by b, then shell crop by b^s, in manifest order.
inline std::vector<ShellCrop> crop_shells(const SampleRecord& r) {
  const RgbImage image = read_image(r.image_path.string());
  std::optional<BinaryMask> mask;
  if (r.mask_path) {
    mask = read_mask(r.mask_path->string());
    if (mask->width != image.width() || mask->height != image.height()) {
      throw Error(ErrorKind::shape_mismatch,
                  detail::concat("mask ", mask->width, "x", mask->height, " vs image ",
                                 image.width(), "x", image.height()));
    }
  }
  const Box whole{0, 0, static_cast<long>(image.width()), static_cast<long>(image.height())};
  const std::vector<Box> insulators = r.boxes.empty() ? std::vector<Box>{whole} : r.boxes;

  std::vector<ShellCrop> out;
  for (std::size_t i = 0; i < insulators.size(); ++i) {
    const Box& ib = insulators[i];
    const RgbImage icrop = crop(image, ib);
    const Box iwhole{0, 0, ib.width, ib.height};
    const std::vector<Box> shells = r.shell_boxes.empty() ? std::vector<Box>{iwhole}
                                                          : r.shell_boxes[i];
    for (const Box& sb : shells) {
      ShellCrop s{i, out.size(), ib, sb, crop(icrop, sb), std::nullopt};
      if (mask) s.mask = crop_mask(*mask, {ib.x + sb.x, ib.y + sb.y, sb.width, sb.height});
      out.push_back(std::move(s));
    }
  }
  return out;
}

inline ShellInput prepare_input(const Network& net, ShellCrop s) {
  ShellInput in{std::move(s), {}, std::nullopt};
  in.input = classifier_input(net, in.shell.crop);
  if (in.shell.mask) in.mask = resize_nearest(*in.shell.mask, in.input.dim(1), in.input.dim(2));
  return in;
}

inline std::vector<ShellInput> load_shells(const Network& net, const SampleRecord& r) {
  std::vector<ShellInput> out;
  for (auto& s : crop_shells(r)) out.push_back(prepare_input(net, std::move(s)));
  return out;
}

// ---------------------------------------------------------------------------
// Report

struct ShellRow {
  std::string sample_id;
  std::size_t line = 0;
  std::optional<std::size_t> shell;  // unset when the record failed before cropping
  std::optional<std::size_t> insulator;
  std::optional<std::size_t> label;
  std::string error;  // empty when ok
  std::optional<std::size_t> prediction;
  std::vector<double> logits;
  std::optional<SharpnessScore> sharpness;
  bool kept = false;
  std::optional<std::string> heatmap;  // relative to the output directory
  std::optional<double> tki;
  std::optional<std::size_t> k;

  bool ok() const { return error.empty(); }
};

struct RunAggregates {
  std::size_t rows = 0;
  std::size_t failed = 0;
  std::size_t kept = 0;
  std::size_t discarded = 0;
  std::size_t heatmaps = 0;
  PerClassAccuracy accuracy;  // kept, labelled shells
  std::size_t tki_count = 0;
  std::optional<double> mean_tki;
  std::vector<double> thresholds;
  std::vector<SweepPoint> sweep;  // over every labelled shell, gate ignored
};

struct RunReport {
  std::vector<std::string> class_names;
  ScoreVariant variant = ScoreVariant::normalized;
  double threshold = 0.0;
  std::vector<ManifestError> manifest_errors;
  std::vector<ShellRow> rows;
  RunAggregates aggregates;
};

// 11 evenly spaced thresholds from 0 to the largest observed score.
inline std::vector<double> default_sweep(const std::vector<ShellRow>& rows, ScoreVariant v) {
  double top = 0.0;
  for (const auto& r : rows) {
    if (r.sharpness) top = std::max(top, select(*r.sharpness, v));
  }
  if (top == 0.0) return {0.0};
  std::vector<double> out;
  for (int i = 0; i <= 10; ++i) out.push_back(top * i / 10.0);
  return out;
}

inline RunAggregates aggregate_rows(const std::vector<ShellRow>& rows, std::size_t num_classes,
                                    ScoreVariant variant,
                                    const std::optional<std::vector<double>>& thresholds) {
  RunAggregates a;
  a.rows = rows.size();
  std::vector<std::size_t> kept_pred, kept_labels, all_pred, all_labels;
  std::vector<double> scores;
  double tki_sum = 0.0;
  for (const auto& r : rows) {
    if (!r.ok()) {
      ++a.failed;
      continue;
    }
    (r.kept ? a.kept : a.discarded) += 1;
    if (r.heatmap) ++a.heatmaps;
    if (r.tki) {
      ++a.tki_count;
      tki_sum += *r.tki;
    }
    if (r.label && r.prediction) {
      if (r.kept) {
        kept_pred.push_back(*r.prediction);
        kept_labels.push_back(*r.label);
      }
      all_pred.push_back(*r.prediction);
      all_labels.push_back(*r.label);
      scores.push_back(select(*r.sharpness, variant));
    }
  }
  a.accuracy = tally_accuracy(kept_pred, kept_labels, num_classes);
  if (a.tki_count > 0) a.mean_tki = tki_sum / static_cast<double>(a.tki_count);
  a.thresholds = thresholds ? *thresholds : default_sweep(rows, variant);
  a.sweep = sweep_from_predictions(scores, all_pred, all_labels, num_classes, a.thresholds);
  return a;
}

namespace detail {

inline std::string heatmap_name(const ShellRow& r) {
  return "heatmaps/" + r.sample_id + "_" + std::to_string(*r.shell) + ".ppm";
}

inline std::vector<ShellRow> process_record(const Network& net, const SampleRecord& rec,
                                            const PipelineConfig& cfg,
                                            std::optional<std::size_t> healthy) {
  std::vector<ShellRow> rows;
  ShellRow base;
  base.sample_id = rec.id;
  base.line = rec.line;
  if (rec.label) base.label = net.class_index(*rec.label);

  std::vector<ShellCrop> shells;
  try {
    shells = crop_shells(rec);
  } catch (const Error& e) {
    base.error = e.what();
    return {base};
  }
  for (ShellCrop& c : shells) {
    ShellRow row = base;
    row.shell = c.shell;
    row.insulator = c.insulator;
    try {
      row.sharpness = sharpness_score(to_luminance(c.crop));
      const ShellInput s = prepare_input(net, std::move(c));
      row.kept = select(*row.sharpness, cfg.variant) >= cfg.threshold;
      ForwardResult fwd = forward(net, s.input, true);
      row.logits = fwd.logits.data();
      row.prediction = argmax(fwd.logits.values());
      const bool damage = !healthy || *row.prediction != *healthy;
      const bool wanted = damage || cfg.explain_all || (cfg.explain_masked && s.mask);
      if (cfg.explain && row.kept && wanted) {
        const Heatmap h = relevance(net, *fwd.trace, *row.prediction, cfg.rules);
        if (!cfg.out_dir.empty()) {
          row.heatmap = heatmap_name(row);
          write_file_bytes((cfg.out_dir / *row.heatmap).string(),
                           encode_ppm(render_heatmap(h, s.input)));
        }
        if (s.mask) {
          row.k = cfg.k.value_or(default_k(h.height, h.width));
          row.tki = tki(h, *s.mask, *row.k);
        }
      }
    } catch (const Error& e) {
      const std::size_t shell = *row.shell, insulator = *row.insulator;
      row = base;
      row.shell = shell;
      row.insulator = insulator;
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace detail

inline RunReport run_pipeline(const Network& net, const Manifest& manifest,
                              const PipelineConfig& cfg) {
  cfg.validate();
  if (!cfg.out_dir.empty()) std::filesystem::create_directories(cfg.out_dir / "heatmaps");
  const std::optional<std::size_t> healthy = net.class_index("healthy");

  const std::size_t n = manifest.records.size();
  std::vector<std::vector<ShellRow>> per_record(n);
  std::size_t workers = cfg.workers ? cfg.workers : std::thread::hardware_concurrency();
  workers = std::max<std::size_t>(1, std::min(workers, n));
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      per_record[i] = detail::process_record(net, manifest.records[i], cfg, healthy);
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  }

  RunReport report;
  report.class_names = net.class_names();
  report.variant = cfg.variant;
  report.threshold = cfg.threshold;
  report.manifest_errors = manifest.errors;
  for (auto& rows : per_record)
    for (auto& r : rows) report.rows.push_back(std::move(r));
  report.aggregates =
      aggregate_rows(report.rows, net.num_classes(), cfg.variant, cfg.sweep_thresholds);
  return report;
}

inline RunReport run_pipeline(const PipelineConfig& cfg, const Manifest& manifest) {
  return run_pipeline(load_model(cfg.model.string()), manifest, cfg);
}

inline nlohmann::ordered_json accuracy_json(const PerClassAccuracy& a,
                                            const std::vector<std::string>& names) {
  nlohmann::ordered_json j;
  nlohmann::ordered_json per = nlohmann::ordered_json::object();
  for (std::size_t c = 0; c < names.size(); ++c) {
    nlohmann::ordered_json e;
    e["correct"] = a.correct[c];
    e["total"] = a.total[c];
    e["accuracy"] = a.accuracy[c] ? nlohmann::ordered_json(*a.accuracy[c]) : nullptr;
    per[names[c]] = e;
  }
  j["per_class"] = per;
  j["macro_mean"] = a.macro_mean ? nlohmann::ordered_json(*a.macro_mean) : nullptr;
  const auto overall = a.overall();
  j["overall"] = overall ? nlohmann::ordered_json(*overall) : nullptr;
  const auto worst = a.worst();
  j["worst"] = worst ? nlohmann::ordered_json(*worst) : nullptr;
  return j;
}

inline nlohmann::ordered_json report_json(const RunReport& r) {
  using oj = nlohmann::ordered_json;
  auto opt = [](const auto& v) { return v ? oj(*v) : oj(nullptr); };
  const auto& names = r.class_names;
  oj j;
  j["format"] = "xai-triage-report 1";
  j["classes"] = names;
  j["sharpness_variant"] = to_string(r.variant);
  j["threshold"] = r.threshold;
  oj errors = oj::array();
  for (const auto& e : r.manifest_errors) errors.push_back({{"line", e.line}, {"error", e.message}});
  j["manifest_errors"] = errors;

  oj samples = oj::array();
  for (const auto& row : r.rows) {
    oj s;
    s["id"] = row.sample_id;
    s["line"] = row.line;
    s["insulator"] = opt(row.insulator);
    s["shell"] = opt(row.shell);
    s["label"] = row.label ? oj(names[*row.label]) : oj(nullptr);
    s["status"] = row.ok() ? "ok" : "error";
    if (!row.ok()) s["error"] = row.error;
    s["prediction"] = row.prediction ? oj(names[*row.prediction]) : oj(nullptr);
    s["logits"] = row.logits;
    s["sharpness"] = row.sharpness ? oj{{"raw", row.sharpness->raw},
                                        {"normalized", row.sharpness->normalized}}
                                   : oj(nullptr);
    s["kept"] = row.kept;
    s["heatmap"] = opt(row.heatmap);
    s["tki"] = opt(row.tki);
    s["k"] = opt(row.k);
    samples.push_back(s);
  }
  j["samples"] = samples;

  const RunAggregates& a = r.aggregates;
  oj agg;
  agg["rows"] = a.rows;
  agg["failed"] = a.failed;
  agg["kept"] = a.kept;
  agg["discarded"] = a.discarded;
  agg["heatmaps"] = a.heatmaps;
  agg["accuracy"] = accuracy_json(a.accuracy, names);
  agg["tki_count"] = a.tki_count;
  agg["mean_tki"] = opt(a.mean_tki);
  oj sweep = oj::array();
  for (const auto& p : a.sweep) {
    oj e;
    e["threshold"] = p.threshold;
    e["kept_count"] = p.kept_count;
    e["accuracy"] = accuracy_json(p.accuracy, names);
    sweep.push_back(e);
  }
  agg["sweep"] = sweep;
  j["aggregates"] = agg;
  return j;
}

inline void write_report(const RunReport& r, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  detail::write_file_bytes((out_dir / "report.json").string(), report_json(r).dump(2) + "\n");
  detail::write_file_bytes((out_dir / "sweep.csv").string(),
                           sweep_csv(r.aggregates.sweep, r.class_names));
}

// ---------------------------------------------------------------------------
// Head retraining from a manifest

struct LabeledShells {
  std::vector<LabeledSample> samples;
  std::vector<ManifestError> errors;
};

// Labelled shells of the selected records (all when `split` is unset).
inline LabeledShells labeled_shells(const Network& net, const Manifest& m,
                                    std::optional<Split> split) {
  LabeledShells out;
  for (const auto& r : m.records) {
    if (!r.label || (split && r.split != split)) continue;
    try {
      const std::size_t y = *net.class_index(*r.label);
      for (auto& s : load_shells(net, r)) out.samples.push_back({std::move(s.input), y});
    } catch (const Error& e) {
      out.errors.push_back({r.line, e.what()});
    }
  }
  return out;
}

// Records tagged "train" when any are; otherwise every labelled record.
inline std::optional<Split> training_split(const Manifest& m) {
  for (const auto& r : m.records) {
    if (r.split == Split::train) return Split::train;
  }
  return std::nullopt;
}

struct ManifestRetrain {
  RebalanceResult result;
  std::size_t train_shells = 0;
  std::vector<ManifestError> errors;  // records skipped during extraction
};

inline ManifestRetrain retrain_on_manifest(const Network& net, const Manifest& m,
                                           const RebalanceConfig& cfg) {
  LabeledShells shells = labeled_shells(net, m, training_split(m));
  FeatureExtraction fx = extract_features(net, shells.samples);
  if (fx.features.rows == 0) {
    throw Error(ErrorKind::validation, "no labelled training shells in the manifest");
  }
  for (const auto& e : fx.errors) {
    shells.errors.push_back({0, detail::concat("shell ", e.index, ": ", e.message)});
  }
  return {retrain_head(net, fx.features, cfg), fx.features.rows, std::move(shells.errors)};
}

}  // namespace xai_triage
