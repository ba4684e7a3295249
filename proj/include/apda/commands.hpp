#ifndef APDA_COMMANDS_HPP
#define APDA_COMMANDS_HPP

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "apda/io.hpp"
#include "apda/trainer.hpp"

namespace apda {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Experiment config
//
// {
//   "dataset": {"synthetic": {...ShiftConfig...}}  or  {"csv": {"source": path, "target": path}},
//   "train": {...TrainConfig...},
//   "output_dir": "runs/x",
//   "report": {"sweep_target_classes": [...], "sweep_variants": [...], "histogram_bin_width": 0.05}
// }
//
// Every key is optional. Without a dataset section the default synthetic
// config is used. A missing output_dir falls back to $APDA_OUTPUT_DIR.

struct CsvSource {
  std::string source;
  std::string target;
};

struct ReportOptions {
  std::vector<int> sweep_target_classes{1, 2, 3, 4, 5};
  std::vector<Variant> sweep_variants{kAllVariants.begin(), kAllVariants.end()};
  double histogram_bin_width = 0.05;
};

struct ExperimentConfig {
  std::optional<ShiftConfig> synthetic;
  std::optional<CsvSource> csv;
  TrainConfig train;
  std::string output_dir;
  ReportOptions report;
};

inline constexpr std::string_view kOutputDirEnv = "APDA_OUTPUT_DIR";

/// "a-b" -> "a_b"; flags use dashes, config keys use underscores.
inline std::string normalize_key(std::string_view key) {
  std::string out(key);
  for (char& c : out)
    if (c == '-') c = '_';
  return out;
}

/// Parses `value` as JSON when it is valid JSON, otherwise keeps it as a string.
inline Json override_value(std::string_view value) {
  Json v = Json::parse(value, nullptr, false);
  if (v.is_discarded()) return Json(std::string(value));
  return v;
}

/// Applies one "section.key=value" override (leading dashes optional).
inline void apply_override(Json& root, std::string_view assignment) {
  while (!assignment.empty() && assignment.front() == '-') assignment.remove_prefix(1);
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ValidationError("override '" + std::string(assignment) + "' must look like --section.key=value");
  }
  const std::string_view path = assignment.substr(0, eq);
  Json* node = &root;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = normalize_key(path.substr(start, dot == std::string_view::npos ? dot : dot - start));
    if (key.empty()) throw ValidationError("override '" + std::string(assignment) + "' has an empty key");
    if (!node->is_object()) throw ValidationError("override '" + std::string(path) + "' descends into a non-object");
    if (dot == std::string_view::npos) {
      (*node)[key] = override_value(assignment.substr(eq + 1));
      return;
    }
    node = &(*node)[key];
    if (node->is_null()) *node = Json::object();
    start = dot + 1;
  }
}

inline ReportOptions report_options_from_json(const Json& j) {
  detail::reject_unknown(j, "report", {"sweep_target_classes", "sweep_variants", "histogram_bin_width"});
  ReportOptions r;
  detail::read_if(j, "report", "sweep_target_classes", r.sweep_target_classes);
  if (j.contains("sweep_variants")) {
    r.sweep_variants.clear();
    for (const auto& name : detail::get_field<std::vector<std::string>>(j, "report", "sweep_variants")) {
      r.sweep_variants.push_back(parse_variant(name));
    }
  }
  detail::read_if(j, "report", "histogram_bin_width", r.histogram_bin_width);
  if (!(r.histogram_bin_width > 0.0 && r.histogram_bin_width <= 1.0)) {
    throw ValidationError("report.histogram_bin_width must lie in (0, 1]");
  }
  return r;
}

inline ExperimentConfig experiment_config_from_json(const Json& j) {
  detail::reject_unknown(j, "config", {"dataset", "train", "output_dir", "report", "generated"});
  ExperimentConfig c;
  const Json dataset = j.value("dataset", Json::object());
  detail::reject_unknown(dataset, "dataset", {"synthetic", "csv"});
  const bool has_syn = dataset.contains("synthetic");
  const bool has_csv = dataset.contains("csv");
  if (has_syn && has_csv) throw ValidationError("dataset: specify exactly one of 'synthetic' and 'csv'");
  if (has_csv) {
    const Json& csv = dataset.at("csv");
    detail::reject_unknown(csv, "dataset.csv", {"source", "target"});
    c.csv = CsvSource{detail::get_field<std::string>(csv, "dataset.csv", "source"),
                      detail::get_field<std::string>(csv, "dataset.csv", "target")};
  } else {
    c.synthetic = shift_config_from_json(has_syn ? dataset.at("synthetic") : Json::object());
  }
  c.train = train_config_from_json(j.value("train", Json::object()));
  if (j.contains("output_dir")) c.output_dir = detail::get_field<std::string>(j, "config", "output_dir");
  if (c.output_dir.empty()) {
    if (const char* env = std::getenv(std::string(kOutputDirEnv).c_str()); env && *env) c.output_dir = env;
  }
  c.report = report_options_from_json(j.value("report", Json::object()));
  return c;
}

inline Json experiment_config_to_json(const ExperimentConfig& c) {
  Json dataset = Json::object();
  if (c.synthetic) dataset["synthetic"] = to_json(*c.synthetic);
  if (c.csv) dataset["csv"] = Json{{"source", c.csv->source}, {"target", c.csv->target}};
  Json variants = Json::array();
  for (Variant v : c.report.sweep_variants) variants.push_back(std::string(variant_name(v)));
  return Json{{"dataset", std::move(dataset)},
              {"train", to_json(c.train)},
              {"output_dir", c.output_dir},
              {"report", Json{{"sweep_target_classes", c.report.sweep_target_classes},
                              {"sweep_variants", std::move(variants)},
                              {"histogram_bin_width", c.report.histogram_bin_width}}}};
}

/// Config file (optional) plus overrides, in order.
inline ExperimentConfig load_experiment_config(const std::optional<fs::path>& path,
                                               const std::vector<std::string>& overrides) {
  Json root = path ? read_json_file(*path) : Json::object();
  if (!root.is_object()) throw ValidationError("config: top level must be a JSON object");
  for (const auto& o : overrides) apply_override(root, o);
  return experiment_config_from_json(root);
}

inline fs::path require_output_dir(const ExperimentConfig& c) {
  if (c.output_dir.empty()) {
    throw ValidationError("no output directory: set output_dir in the config, pass --output-dir, or set " +
                          std::string(kOutputDirEnv));
  }
  return fs::path(c.output_dir);
}

inline PdaDataset resolve_dataset(const ExperimentConfig& c) {
  if (c.csv) return load_feature_csv(c.csv->source, c.csv->target);
  return generate_pda_gaussians(*c.synthetic);
}

/// 64-bit FNV-1a, used to fingerprint generated files in manifests.
inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

// ---------------------------------------------------------------------------
// generate

struct GenerateOutput {
  fs::path source_csv;
  fs::path target_csv;
  fs::path manifest;
  std::size_t source_rows = 0;
  std::size_t target_rows = 0;
};

inline std::string dataset_csv_text(const Tensor& x, const std::vector<int>* labels) {
  std::ostringstream os;
  write_feature_csv(os, x, labels);
  return os.str();
}

inline GenerateOutput cmd_generate(const ExperimentConfig& c, std::ostream& log = std::cout) {
  if (!c.synthetic) throw ValidationError("generate needs a synthetic dataset section");
  const fs::path dir = require_output_dir(c);
  const PdaDataset ds = generate_pda_gaussians(*c.synthetic);
  const std::string src = dataset_csv_text(ds.source_x(), &ds.source_labels());
  const std::string tgt = dataset_csv_text(ds.target_x(), &ds.hidden_target_labels());

  GenerateOutput out{dir / "source.csv", dir / "target.csv", dir / "manifest.json", ds.source_size(),
                     ds.target_size()};
  write_text_file(out.source_csv, src);
  write_text_file(out.target_csv, tgt);
  const Json manifest{{"dataset", Json{{"synthetic", to_json(*c.synthetic)}}},
                      {"generated", Json{{"source", "source.csv"},
                                         {"target", "target.csv"},
                                         {"source_rows", ds.source_size()},
                                         {"target_rows", ds.target_size()},
                                         {"source_fnv1a64", hex64(fnv1a64(src))},
                                         {"target_fnv1a64", hex64(fnv1a64(tgt))}}}};
  write_json_file(out.manifest, manifest);
  log << "wrote " << out.source_rows << " source rows to " << out.source_csv.string() << "\n"
      << "wrote " << out.target_rows << " target rows to " << out.target_csv.string() << "\n"
      << "wrote manifest " << out.manifest.string() << "\n";
  return out;
}

// ---------------------------------------------------------------------------
// train

struct TrainOutput {
  fs::path run_dir;
  fs::path checkpoint;
  fs::path metrics_csv;
  fs::path metrics_json;
  fs::path snapshot;
  fs::path features;
  TrainResult result;
};

inline fs::path run_directory(const fs::path& output_dir, Variant v) { return output_dir / variant_name(v); }

inline TrainOutput cmd_train(const ExperimentConfig& c, std::ostream& log = std::cout) {
  const fs::path dir = run_directory(require_output_dir(c), c.train.variant);
  const PdaDataset ds = resolve_dataset(c);
  const std::string variant(variant_name(c.train.variant));

  TrainOutput out;
  out.run_dir = dir;
  out.result = train(c.train, ds);
  if (out.result.coverage_warning) {
    log << "warning: batch_size " << c.train.batch_size << " is below 2 x " << ds.num_classes()
        << " source classes; some classes will be missing from most batches\n";
  }

  out.checkpoint = dir / "checkpoint.json";
  out.metrics_csv = dir / "metrics.csv";
  out.metrics_json = dir / "metrics.json";
  out.snapshot = dir / "commonness_snapshot.json";
  out.features = dir / "features.csv";
  save_checkpoint(out.checkpoint, Checkpoint{out.result.params, experiment_config_to_json(c), ds.dim(),
                                             ds.num_classes()});
  write_text_file(out.metrics_csv, metrics_to_csv(out.result.log, variant));
  write_json_file(out.metrics_json, metrics_to_json(out.result.log, variant));
  write_json_file(out.snapshot, snapshot_to_json(make_snapshot(out.result, ds)));
  write_text_file(out.features, features_to_csv(out.result.exports, ds, variant));

  const auto& last = out.result.log.epochs.back();
  log << variant << ": " << out.result.log.steps.size() << " steps over " << out.result.log.epochs.size()
      << " epochs\n";
  if (ds.has_target_labels()) {
    log << "  final target accuracy " << std::fixed << std::setprecision(4) << last.target_accuracy << "\n"
        << "  mean commonness: common " << out.result.exports.mean_w_common << ", private "
        << out.result.exports.mean_w_private << "\n"
        << std::defaultfloat;
  }
  if (out.result.cg_skipped_steps) {
    log << "  L_cg skipped on " << out.result.cg_skipped_steps
        << " steps (fewer than 2K classes had source and target centroids)\n";
  }
  log << "  outputs in " << dir.string() << "\n";
  return out;
}

// ---------------------------------------------------------------------------
// eval

inline Json eval_report_to_json(const EvalReport& r) {
  return Json{{"accuracy", r.accuracy},
              {"classes", r.classes},
              {"per_class_accuracy", r.per_class_accuracy},
              {"per_class_count", r.per_class_count},
              {"confusion", r.confusion}};
}

inline void print_eval_report(const EvalReport& r, std::ostream& os) {
  os << "target accuracy: " << std::fixed << std::setprecision(4) << r.accuracy << "\n";
  for (std::size_t i = 0; i < r.classes.size(); ++i) {
    os << "  class " << r.classes[i] << ": " << r.per_class_accuracy[i] << " (" << r.per_class_count[i]
       << " samples)\n";
  }
  os << "confusion (rows true, columns predicted):\n";
  for (std::size_t t = 0; t < r.confusion.size(); ++t) {
    os << "  ";
    for (std::size_t p = 0; p < r.confusion[t].size(); ++p) os << (p ? " " : "") << std::setw(4) << r.confusion[t][p];
    os << "\n";
  }
  os << std::defaultfloat;
}

struct EvalOutput {
  EvalReport report;
  fs::path json;
};

/// Evaluates `ck` on `ds`; the dataset must carry target labels.
inline EvalReport evaluate_checkpoint(const Checkpoint& ck, const PdaDataset& ds) {
  if (ds.dim() != ck.input_dim) {
    throw ValidationError("checkpoint expects " + std::to_string(ck.input_dim) + "-dimensional inputs, dataset has " +
                          std::to_string(ds.dim()));
  }
  if (ds.num_classes() != ck.num_classes) {
    throw ValidationError("checkpoint has " + std::to_string(ck.num_classes) + " classes, dataset has " +
                          std::to_string(ds.num_classes()));
  }
  if (!ds.has_target_labels()) throw ValidationError("target split has no labels; nothing to evaluate against");
  return evaluate(ck.params, ds);
}

/// Uses `dataset_config` when given, else the config stored in the checkpoint.
inline EvalOutput cmd_eval(const fs::path& checkpoint_path, const std::optional<ExperimentConfig>& dataset_config,
                           const std::optional<fs::path>& output, std::ostream& log = std::cout) {
  const Checkpoint ck = load_checkpoint(checkpoint_path);
  const ExperimentConfig c = dataset_config ? *dataset_config : experiment_config_from_json(ck.config);
  EvalOutput out;
  out.report = evaluate_checkpoint(ck, resolve_dataset(c));
  out.json = output ? *output : checkpoint_path.parent_path() / "eval.json";
  write_json_file(out.json, eval_report_to_json(out.report));
  print_eval_report(out.report, log);
  log << "wrote " << out.json.string() << "\n";
  return out;
}

// ---------------------------------------------------------------------------
// report

struct Histogram {
  double bin_width = 0.05;
  std::vector<std::size_t> common;
  std::vector<std::size_t> private_;
  std::vector<std::size_t> unknown;
};

inline std::size_t histogram_bins(double width) {
  return static_cast<std::size_t>(std::ceil(1.0 / width - 1e-9));
}

/// Edge b of the histogram, rounded so 0.05-wide bins print as 0.15 rather
/// than 0.15000000000000002.
inline double bin_edge(std::size_t b, double width) {
  return std::min(1.0, std::round(static_cast<double>(b) * width * 1e12) / 1e12);
}

/// Bins commonness scores over [0, 1]; the last bin is closed on the right.
inline Histogram commonness_histogram(const CommonnessSnapshot& s, double width) {
  const std::size_t bins = histogram_bins(width);
  Histogram h{width, std::vector<std::size_t>(bins, 0), std::vector<std::size_t>(bins, 0),
              std::vector<std::size_t>(bins, 0)};
  for (std::size_t i = 0; i < s.sample_w.size(); ++i) {
    const double w = std::clamp(s.sample_w[i], 0.0, 1.0);
    const std::size_t b = std::min(bins - 1, static_cast<std::size_t>(w / width));
    if (s.sample_common[i] == 1) ++h.common[b];
    else if (s.sample_common[i] == 0) ++h.private_[b];
    else ++h.unknown[b];
  }
  return h;
}

struct SweepRow {
  Variant variant;
  int num_target_classes;
  double accuracy;
};

/// Retrains each variant while varying the number of target classes.
inline std::vector<SweepRow> run_sweep(const ExperimentConfig& c, std::ostream& log) {
  if (!c.synthetic) throw ValidationError("the sweep needs a synthetic dataset section");
  std::vector<SweepRow> rows;
  for (Variant v : c.report.sweep_variants) {
    for (int k : c.report.sweep_target_classes) {
      ShiftConfig sc = *c.synthetic;
      sc.num_target_classes = k;
      TrainConfig tc = c.train;
      tc.variant = v;
      const PdaDataset ds = generate_pda_gaussians(sc);
      const TrainResult r = train(tc, ds);
      rows.push_back(SweepRow{v, k, r.log.epochs.back().target_accuracy});
      log << "sweep " << variant_name(v) << " target_classes=" << k << " accuracy " << rows.back().accuracy << "\n";
    }
  }
  return rows;
}

struct ReportOutput {
  fs::path error_curves;
  fs::path histogram;
  fs::path features;  // empty when no run had a feature file
  fs::path sweep;     // empty unless requested
  std::size_t curves = 0;
};

inline ReportOutput cmd_report(const std::vector<fs::path>& metrics_files, const ExperimentConfig& c, bool sweep,
                               std::ostream& log = std::cout) {
  if (metrics_files.empty()) throw ValidationError("report needs at least one metrics file");
  const fs::path dir = require_output_dir(c) / "report";
  ReportOutput out{dir / "error_curves.csv", dir / "commonness_histogram.csv", {}, {}, 0};

  std::ostringstream curves, hist, feats;
  curves << "label,epoch,step,target_error\n";
  hist << "label,bin_lo,bin_hi,common,private,unknown\n";
  std::map<std::string, int> seen_labels;
  bool any_features = false;
  for (const fs::path& path : metrics_files) {
    const LabeledMetrics m = load_metrics(path);
    std::string label = m.variant.empty() ? path.parent_path().filename().string() : m.variant;
    if (const int n = ++seen_labels[label]; n > 1) label += "#" + std::to_string(n);
    for (const EpochMetrics& e : m.log.epochs) {
      curves << label << ',' << e.epoch << ',' << e.step << ',' << detail::csv_double(1.0 - e.target_accuracy) << '\n';
    }
    ++out.curves;

    const fs::path snap = path.parent_path() / "commonness_snapshot.json";
    if (fs::exists(snap)) {
      const Histogram h = commonness_histogram(snapshot_from_json(read_json_file(snap)), c.report.histogram_bin_width);
      for (std::size_t b = 0; b < h.common.size(); ++b) {
        hist << label << ',' << format_double(bin_edge(b, h.bin_width)) << ','
             << format_double(bin_edge(b + 1, h.bin_width)) << ',' << h.common[b] << ','
             << h.private_[b] << ',' << h.unknown[b] << '\n';
      }
    } else {
      log << "note: no commonness snapshot next to " << path.string() << "; skipped in the histogram\n";
    }

    const fs::path fpath = path.parent_path() / "features.csv";
    if (fs::exists(fpath)) {
      std::istringstream text(read_text_file(fpath));
      std::string line;
      bool header = true;
      while (std::getline(text, line)) {
        if (header) {
          if (!any_features) feats << line << '\n';
          header = false;
          continue;
        }
        feats << line << '\n';
      }
      any_features = true;
    }
  }
  write_text_file(out.error_curves, curves.str());
  write_text_file(out.histogram, hist.str());
  log << "wrote " << out.error_curves.string() << " (" << out.curves << " curves)\n"
      << "wrote " << out.histogram.string() << "\n";
  if (any_features) {
    out.features = dir / "features.csv";
    write_text_file(out.features, feats.str());
    log << "wrote " << out.features.string() << "\n";
  }

  if (sweep) {
    std::ostringstream table;
    table << "variant,num_target_classes,accuracy\n";
    for (const SweepRow& r : run_sweep(c, log)) {
      table << variant_name(r.variant) << ',' << r.num_target_classes << ',' << format_double(r.accuracy) << '\n';
    }
    out.sweep = dir / "sweep.csv";
    write_text_file(out.sweep, table.str());
    log << "wrote " << out.sweep.string() << "\n";
  }
  return out;
}

}  // namespace apda

#endif
