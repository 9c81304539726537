// xai-triage: command-line front end over the pipeline library.
//
// Errors go to stderr as one JSON object; exit status 2 for usage errors and
// 1 for everything else.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "xai_triage/xai_triage.hpp"

namespace fs = std::filesystem;
using namespace xai_triage;
using ojson = nlohmann::ordered_json;

namespace {

struct Options {
  std::string config;
  std::string manifest;
  std::string out;
  std::string model;
  std::string image;
  std::string box;
  std::string thresholds;
  std::string variant;
  std::string target;
  std::optional<std::uint64_t> seed;
  std::optional<double> threshold;
  std::optional<std::size_t> k;
  std::optional<std::size_t> partitions;
  std::optional<std::size_t> workers;
  std::vector<std::string> emphasis;
  bool retrain = false;
  bool explain_all = false;
};

void init_logging() {
  auto logger = spdlog::stderr_logger_st("xai-triage");
  logger->set_pattern("[%l] %v");
  spdlog::level::level_enum level = spdlog::level::warn;
  if (const char* env = std::getenv("XAI_TRIAGE_LOG")) {
    const std::string s(env);
    level = spdlog::level::from_str(s);
    if (level == spdlog::level::off && s != "off") level = spdlog::level::warn;
  }
  logger->set_level(level);
  spdlog::set_default_logger(logger);
}

void print_error(const std::string& kind, const std::string& message) {
  ojson j;
  j["error"] = {{"kind", kind}, {"message", message}};
  std::cerr << j.dump() << "\n";
}

Box parse_box(const std::string& text) {
  std::vector<long> v;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) {
    std::size_t used = 0;
    long value = 0;
    try {
      value = std::stol(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) {
      throw Error(ErrorKind::invalid_argument, "--box expects x,y,width,height");
    }
    v.push_back(value);
  }
  if (v.size() != 4) throw Error(ErrorKind::invalid_argument, "--box expects x,y,width,height");
  return {v[0], v[1], v[2], v[3]};
}

std::vector<double> parse_thresholds(const std::string& text) {
  std::vector<double> parts;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ':')) {
    try {
      std::size_t used = 0;
      parts.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw Error(ErrorKind::invalid_argument, "--thresholds expects first:last:step");
    }
  }
  if (parts.size() != 3) {
    throw Error(ErrorKind::invalid_argument, "--thresholds expects first:last:step");
  }
  return threshold_range(parts[0], parts[1], parts[2]);
}

std::map<std::string, double> parse_emphasis(const std::vector<std::string>& items) {
  std::map<std::string, double> out;
  for (const auto& item : items) {
    const auto eq = item.find('=');
    double factor = 0.0;
    bool ok = eq != std::string::npos && eq > 0;
    if (ok) {
      try {
        std::size_t used = 0;
        factor = std::stod(item.substr(eq + 1), &used);
        ok = used == item.size() - eq - 1;
      } catch (const std::exception&) {
        ok = false;
      }
    }
    if (!ok) throw Error(ErrorKind::invalid_argument, "--emphasis expects class=factor");
    out[item.substr(0, eq)] = factor;
  }
  return out;
}

// Config file first, then flags on top.
struct Resolved {
  PipelineConfig config;
  std::map<std::string, double> class_weights;
};

Resolved resolve(const Options& o) {
  Resolved r;
  if (!o.config.empty()) {
    ConfigFile f = load_config(o.config);
    r.config = std::move(f.config);
    r.class_weights = std::move(f.class_weights);
  }
  PipelineConfig& c = r.config;
  if (!o.model.empty()) c.model = o.model;
  if (!o.out.empty()) c.out_dir = o.out;
  if (o.seed) c.rebalance.seed = *o.seed;
  if (o.threshold) c.threshold = *o.threshold;
  if (o.k) c.k = *o.k;
  if (o.partitions) c.rebalance.num_partitions = *o.partitions;
  if (o.workers) c.workers = *o.workers;
  if (!o.variant.empty()) c.variant = score_variant_from_string(o.variant);
  if (!o.thresholds.empty()) c.sweep_thresholds = parse_thresholds(o.thresholds);
  if (!o.emphasis.empty()) c.rebalance.emphasis = parse_emphasis(o.emphasis);
  if (o.explain_all) c.explain_all = true;
  c.validate();
  return r;
}

Network load_network(const Resolved& r) {
  if (r.config.model.empty()) {
    throw Error(ErrorKind::invalid_argument, "no model given (--model or \"model\" in --config)");
  }
  Network net = load_model(r.config.model.string());
  for (const auto& [name, factor] : r.config.rebalance.emphasis) {
    if (!net.class_index(name)) {
      throw Error(ErrorKind::validation, "emphasis for unknown class '" + name + "'");
    }
  }
  return net;
}

RebalanceConfig rebalance_config(const Resolved& r, const Network& net) {
  RebalanceConfig cfg = r.config.rebalance;
  if (!r.class_weights.empty()) cfg.class_weights = resolve_class_weights(net, r.class_weights);
  return cfg;
}

Manifest load_manifest(const Options& o, const std::vector<std::string>& class_names) {
  if (o.manifest.empty()) throw Error(ErrorKind::invalid_argument, "--manifest is required");
  Manifest m = ingest_manifest(o.manifest, class_names);
  for (const auto& e : m.errors) spdlog::warn("manifest line {}: {}", e.line, e.message);
  spdlog::info("manifest: {} records, {} rejected", m.records.size(), m.errors.size());
  return m;
}

fs::path require_out(const Resolved& r) {
  if (r.config.out_dir.empty()) throw Error(ErrorKind::invalid_argument, "--out is required");
  fs::create_directories(r.config.out_dir);
  return r.config.out_dir;
}

RgbImage load_input_image(const Options& o) {
  if (o.image.empty()) throw Error(ErrorKind::invalid_argument, "--image is required");
  RgbImage img = read_image(o.image);
  if (!o.box.empty()) img = crop(img, parse_box(o.box));
  return img;
}

Manifest without_train(const Manifest& m) {
  Manifest out{{}, m.errors};
  for (const auto& r : m.records) {
    if (r.split != Split::train) out.records.push_back(r);
  }
  return out;
}

ojson accuracy_summary(const PerClassAccuracy& a, const std::vector<std::string>& names) {
  return accuracy_json(a, names);
}

// ---------------------------------------------------------------------------

int cmd_crop(const Options& o) {
  const RgbImage img = load_input_image(o);
  if (o.out.empty()) throw Error(ErrorKind::invalid_argument, "--out is required");
  write_ppm(o.out, img);
  std::cout << ojson{{"output", o.out}, {"width", img.width()}, {"height", img.height()}}.dump()
            << "\n";
  return 0;
}

int cmd_classify(const Options& o) {
  const Resolved r = resolve(o);
  const Network net = load_network(r);
  if (!o.image.empty()) {
    const Prediction p = predict_class(net, classifier_input(net, load_input_image(o)));
    std::cout << ojson{{"prediction", net.class_names()[p.label]}, {"logits", p.logits.data()}}
                     .dump()
              << "\n";
    return 0;
  }
  PipelineConfig cfg = r.config;
  cfg.explain = false;
  cfg.out_dir.clear();
  const RunReport report = run_pipeline(net, load_manifest(o, net.class_names()), cfg);
  for (const auto& row : report.rows) {
    ojson j;
    j["id"] = row.sample_id;
    j["shell"] = row.shell ? ojson(*row.shell) : ojson(nullptr);
    if (row.ok()) {
      j["prediction"] = net.class_names()[*row.prediction];
      j["logits"] = row.logits;
    } else {
      j["error"] = row.error;
    }
    std::cout << j.dump() << "\n";
  }
  return 0;
}

int cmd_explain(const Options& o) {
  const Resolved r = resolve(o);
  const Network net = load_network(r);
  const fs::path out = require_out(r);
  const Tensor input = classifier_input(net, load_input_image(o));
  std::optional<std::size_t> target;
  if (!o.target.empty()) {
    target = net.class_index(o.target);
    if (!target) throw Error(ErrorKind::invalid_argument, "unknown target class '" + o.target + "'");
  }
  const Explanation ex = explain(net, input, r.config.rules, target);
  const std::string stem = fs::path(o.image).stem().string();
  const fs::path ppm = out / (stem + ".ppm");
  const fs::path dump = out / (stem + ".relevance");
  detail::write_file_bytes(ppm.string(), encode_ppm(render_heatmap(ex.heatmap, input)));
  detail::write_file_bytes(dump.string(), serialize_relevance(ex.input_relevance));
  ojson j;
  j["prediction"] = net.class_names()[ex.label];
  j["target"] = net.class_names()[target.value_or(ex.label)];
  j["logits"] = ex.logits.data();
  j["relevance_sum"] = ex.input_relevance.sum();
  j["heatmap"] = ppm.string();
  j["relevance"] = dump.string();
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_gate(const Options& o) {
  const Resolved r = resolve(o);
  const Manifest m = load_manifest(o, default_class_names(3));
  ojson kept = ojson::array(), discarded = ojson::array(), failed = ojson::array();
  for (const auto& rec : m.records) {
    try {
      for (const auto& s : crop_shells(rec)) {
        const double score = select(sharpness_score(to_luminance(s.crop)), r.config.variant);
        const ojson e{{"id", rec.id}, {"shell", s.shell}, {"score", score}};
        (score >= r.config.threshold ? kept : discarded).push_back(e);
      }
    } catch (const Error& e) {
      failed.push_back({{"id", rec.id}, {"line", rec.line}, {"error", e.what()}});
    }
  }
  ojson j;
  j["variant"] = to_string(r.config.variant);
  j["threshold"] = r.config.threshold;
  j["kept"] = kept;
  j["discarded"] = discarded;
  j["failed"] = failed;
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_sweep(const Options& o) {
  const Resolved r = resolve(o);
  const Network net = load_network(r);
  const fs::path out = require_out(r);
  PipelineConfig cfg = r.config;
  cfg.explain = false;
  cfg.out_dir.clear();
  const RunReport report = run_pipeline(net, load_manifest(o, net.class_names()), cfg);
  const std::string csv = sweep_csv(report.aggregates.sweep, report.class_names);
  detail::write_file_bytes((out / "sweep.csv").string(), csv);
  std::cout << csv;
  return 0;
}

int cmd_retrain(const Options& o) {
  const Resolved r = resolve(o);
  const Network net = load_network(r);
  const fs::path out = require_out(r);
  const Manifest m = load_manifest(o, net.class_names());
  const ManifestRetrain rt = retrain_on_manifest(net, m, rebalance_config(r, net));
  for (const auto& e : rt.errors) spdlog::warn("training line {}: {}", e.line, e.message);
  save_model(rt.result.network, (out / "head.model").string());

  ojson j;
  j["head"] = (out / "head.model").string();
  j["train_shells"] = rt.train_shells;
  j["partitions"] = rt.result.partitions.size();
  j["partition_size"] = rt.result.partitions.empty() ? 0 : rt.result.partitions[0].size();
  const Manifest eval = without_train(m);
  const LabeledShells shells = labeled_shells(net, eval, std::nullopt);
  if (!shells.samples.empty()) {
    j["eval_shells"] = shells.samples.size();
    j["before"] = accuracy_summary(per_class_accuracy(net, shells.samples), net.class_names());
    j["after"] = accuracy_summary(per_class_accuracy(rt.result.network, shells.samples),
                                  net.class_names());
  }
  detail::write_file_bytes((out / "retrain.json").string(), j.dump(2) + "\n");
  std::cout << j.dump() << "\n";
  return 0;
}

void log_summary(const RunReport& report) {
  const RunAggregates& a = report.aggregates;
  spdlog::info("{} shells, {} kept, {} discarded, {} failed, {} heatmaps", a.rows, a.kept,
               a.discarded, a.failed, a.heatmaps);
  for (const auto& row : report.rows) {
    if (!row.ok()) spdlog::warn("{} (line {}): {}", row.sample_id, row.line, row.error);
  }
}

int cmd_eval_tki(const Options& o) {
  const Resolved r = resolve(o);
  const Network net = load_network(r);
  const fs::path out = require_out(r);
  PipelineConfig cfg = r.config;
  cfg.explain_masked = true;
  const RunReport report = run_pipeline(net, without_train(load_manifest(o, net.class_names())),
                                        cfg);
  log_summary(report);
  write_report(report, out);
  const RunAggregates& a = report.aggregates;
  std::cout << ojson{{"count", a.tki_count},
                     {"mean_tki", a.mean_tki ? ojson(*a.mean_tki) : ojson(nullptr)}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_run(const Options& o) {
  const Resolved r = resolve(o);
  Network net = load_network(r);
  const fs::path out = require_out(r);
  const Manifest m = load_manifest(o, net.class_names());
  if (o.retrain) {
    const ManifestRetrain rt = retrain_on_manifest(net, m, rebalance_config(r, net));
    for (const auto& e : rt.errors) spdlog::warn("training line {}: {}", e.line, e.message);
    spdlog::info("retrained head on {} shells", rt.train_shells);
    net = rt.result.network;
  }
  save_model(net, (out / "head.model").string());
  const RunReport report = run_pipeline(net, without_train(m), r.config);
  log_summary(report);
  write_report(report, out);
  const RunAggregates& a = report.aggregates;
  ojson j;
  j["report"] = (out / "report.json").string();
  j["shells"] = a.rows;
  j["kept"] = a.kept;
  j["failed"] = a.failed;
  j["heatmaps"] = a.heatmaps;
  j["overall"] = a.accuracy.overall() ? ojson(*a.accuracy.overall()) : ojson(nullptr);
  j["mean_tki"] = a.mean_tki ? ojson(*a.mean_tki) : ojson(nullptr);
  std::cout << j.dump() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  init_logging();
  CLI::App app{"Insulator-shell damage triage: classify, gate, explain, retrain"};
  app.require_subcommand(1);
  Options o;

  auto model_opts = [&o](CLI::App* c) {
    c->add_option("--config", o.config, "JSON config file")->check(CLI::ExistingFile);
    c->add_option("--model", o.model, "model file (overrides the config)");
  };
  auto manifest_opt = [&o](CLI::App* c, bool required) {
    auto* opt = c->add_option("--manifest", o.manifest, "JSON-lines manifest")
                    ->check(CLI::ExistingFile);
    if (required) opt->required();
  };
  auto gate_opts = [&o](CLI::App* c) {
    c->add_option("--threshold", o.threshold, "sharpness threshold");
    c->add_option("--variant", o.variant, "sharpness score: raw | normalized");
  };
  auto retrain_opts = [&o](CLI::App* c) {
    c->add_option("--seed", o.seed, "partition seed");
    c->add_option("--partitions", o.partitions, "number of balanced partitions");
    c->add_option("--emphasis", o.emphasis, "extra class weight, class=factor (repeatable)");
  };

  auto* crop_cmd = app.add_subcommand("crop", "crop an image by a box");
  crop_cmd->add_option("--image", o.image, "PPM/PGM image")->required();
  crop_cmd->add_option("--box", o.box, "x,y,width,height")->required();
  crop_cmd->add_option("--out", o.out, "output PPM")->required();

  auto* classify_cmd = app.add_subcommand("classify", "classify one image or a manifest");
  model_opts(classify_cmd);
  manifest_opt(classify_cmd, false);
  classify_cmd->add_option("--image", o.image, "PPM/PGM image");
  classify_cmd->add_option("--box", o.box, "x,y,width,height crop before classifying");

  auto* explain_cmd = app.add_subcommand("explain", "relevance heatmap for one image");
  model_opts(explain_cmd);
  explain_cmd->add_option("--image", o.image, "PPM/PGM image")->required();
  explain_cmd->add_option("--box", o.box, "x,y,width,height crop before explaining");
  explain_cmd->add_option("--target", o.target, "class to explain (default: prediction)");
  explain_cmd->add_option("--out", o.out, "output directory");

  auto* gate_cmd = app.add_subcommand("gate", "split manifest shells by sharpness");
  gate_cmd->add_option("--config", o.config, "JSON config file")->check(CLI::ExistingFile);
  manifest_opt(gate_cmd, true);
  gate_opts(gate_cmd);

  auto* sweep_cmd = app.add_subcommand("sweep", "accuracy over sharpness thresholds");
  model_opts(sweep_cmd);
  manifest_opt(sweep_cmd, true);
  sweep_cmd->add_option("--thresholds", o.thresholds, "first:last:step");
  sweep_cmd->add_option("--variant", o.variant, "sharpness score: raw | normalized");
  sweep_cmd->add_option("--out", o.out, "output directory");

  auto* retrain_cmd = app.add_subcommand("retrain-head", "refit the head on balanced partitions");
  model_opts(retrain_cmd);
  manifest_opt(retrain_cmd, true);
  retrain_opts(retrain_cmd);
  retrain_cmd->add_option("--out", o.out, "output directory");

  auto* tki_cmd = app.add_subcommand("eval-tki", "localization quality against masks");
  model_opts(tki_cmd);
  manifest_opt(tki_cmd, true);
  gate_opts(tki_cmd);
  tki_cmd->add_option("--k", o.k, "top-k pixel count");
  tki_cmd->add_option("--workers", o.workers, "worker threads");
  tki_cmd->add_option("--out", o.out, "output directory");

  auto* run_cmd = app.add_subcommand("run", "full pipeline over a manifest");
  model_opts(run_cmd);
  manifest_opt(run_cmd, true);
  gate_opts(run_cmd);
  retrain_opts(run_cmd);
  run_cmd->add_option("--k", o.k, "top-k pixel count");
  run_cmd->add_option("--workers", o.workers, "worker threads");
  run_cmd->add_option("--out", o.out, "output directory");
  run_cmd->add_flag("--retrain", o.retrain, "retrain the head on the train split first");
  run_cmd->add_flag("--explain-all", o.explain_all, "heatmaps for every kept shell");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    print_error("usage", e.what());
    return 2;
  }

  try {
    if (*crop_cmd) return cmd_crop(o);
    if (*classify_cmd) return cmd_classify(o);
    if (*explain_cmd) return cmd_explain(o);
    if (*gate_cmd) return cmd_gate(o);
    if (*sweep_cmd) return cmd_sweep(o);
    if (*retrain_cmd) return cmd_retrain(o);
    if (*tki_cmd) return cmd_eval_tki(o);
    if (*run_cmd) return cmd_run(o);
  } catch (const Error& e) {
    print_error(to_string(e.kind()), e.what());
    return 1;
  } catch (const std::exception& e) {
    print_error("internal", e.what());
    return 1;
  }
  return 1;
}
