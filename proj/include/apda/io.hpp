#ifndef APDA_IO_HPP
#define APDA_IO_HPP

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "apda/networks.hpp"
#include "apda/objectives.hpp"
#include "apda/synth_data.hpp"
#include "apda/tensor.hpp"
#include "apda/trainer.hpp"

namespace apda {

using Json = nlohmann::ordered_json;

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline void write_text_file(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory '" + path.parent_path().string() + "': " + ec.message());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  out.flush();
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

inline Json parse_json(std::string_view text, const std::string& origin) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(origin + ": invalid JSON: " + e.what());
  }
}

inline Json read_json_file(const std::filesystem::path& path) { return parse_json(read_text_file(path), path.string()); }

inline void write_json_file(const std::filesystem::path& path, const Json& j) { write_text_file(path, j.dump(2) + "\n"); }

// ---------------------------------------------------------------------------
// Scalars. JSON has no NaN, so NaN travels as null.

inline Json number_or_null(double v) { return std::isnan(v) ? Json(nullptr) : Json(v); }

inline double number_from(const Json& j, std::string_view what) {
  if (j.is_null()) return std::numeric_limits<double>::quiet_NaN();
  if (!j.is_number()) throw ParseError(std::string(what) + ": expected a number");
  return j.get<double>();
}

namespace detail {

template <typename T>
T get_field(const Json& obj, std::string_view section, std::string_view key) {
  try {
    return obj.at(std::string(key)).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ValidationError(std::string(section) + "." + std::string(key) + ": missing or of the wrong type");
  }
}

template <typename T>
void read_if(const Json& obj, std::string_view section, std::string_view key, T& out) {
  if (obj.contains(std::string(key))) out = get_field<T>(obj, section, key);
}

inline void reject_unknown(const Json& obj, std::string_view section, std::initializer_list<std::string_view> known) {
  if (!obj.is_object()) throw ValidationError(std::string(section) + ": expected an object");
  for (const auto& [key, value] : obj.items()) {
    bool ok = false;
    for (auto k : known) ok = ok || key == k;
    if (!ok) throw ValidationError(std::string(section) + ": unknown key '" + key + "'");
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Tensors

inline Json tensor_to_json(const Tensor& t) {
  return Json{{"shape", t.shape()}, {"data", t.data()}};
}

inline Tensor tensor_from_json(const Json& j, std::string_view what) {
  try {
    Shape shape = j.at("shape").get<Shape>();
    std::vector<double> data = j.at("data").get<std::vector<double>>();
    if (shape_size(shape) != data.size()) {
      throw ParseError(std::string(what) + ": shape " + shape_string(shape) + " does not match " +
                       std::to_string(data.size()) + " values");
    }
    return Tensor(std::move(shape), std::move(data));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string(what) + ": malformed tensor (" + e.what() + ")");
  }
}

// ---------------------------------------------------------------------------
// Configs

inline Json to_json(const ShiftConfig& c) {
  return Json{{"num_source_classes", c.num_source_classes},
              {"num_target_classes", c.num_target_classes},
              {"samples_per_class_source", c.samples_per_class_source},
              {"samples_per_class_target", c.samples_per_class_target},
              {"dim", c.dim},
              {"class_spread", c.class_spread},
              {"rotation_deg", c.rotation_deg},
              {"translation", c.translation},
              {"noise_std", c.noise_std},
              {"anomaly_fraction", c.anomaly_fraction},
              {"seed", c.seed}};
}

inline ShiftConfig shift_config_from_json(const Json& j) {
  constexpr std::string_view s = "dataset.synthetic";
  detail::reject_unknown(j, s,
                         {"num_source_classes", "num_target_classes", "samples_per_class_source",
                          "samples_per_class_target", "dim", "class_spread", "rotation_deg", "translation",
                          "noise_std", "anomaly_fraction", "seed"});
  ShiftConfig c;
  detail::read_if(j, s, "num_source_classes", c.num_source_classes);
  detail::read_if(j, s, "num_target_classes", c.num_target_classes);
  detail::read_if(j, s, "samples_per_class_source", c.samples_per_class_source);
  detail::read_if(j, s, "samples_per_class_target", c.samples_per_class_target);
  detail::read_if(j, s, "dim", c.dim);
  detail::read_if(j, s, "class_spread", c.class_spread);
  detail::read_if(j, s, "rotation_deg", c.rotation_deg);
  detail::read_if(j, s, "translation", c.translation);
  detail::read_if(j, s, "noise_std", c.noise_std);
  detail::read_if(j, s, "anomaly_fraction", c.anomaly_fraction);
  detail::read_if(j, s, "seed", c.seed);
  c.validate();
  return c;
}

inline Json to_json(const TrainConfig& c) {
  return Json{{"variant", std::string(variant_name(c.variant))},
              {"lr0", c.lr0},
              {"lr_alpha", c.lr_alpha},
              {"lr_beta", c.lr_beta},
              {"head_lr_multiplier", c.head_lr_multiplier},
              {"grl_gamma", c.grl_gamma},
              {"lambda_c", c.lambda_c},
              {"ema_alpha", c.ema_alpha},
              {"momentum", c.momentum},
              {"top_k", c.top_k},
              {"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"seed", c.seed},
              {"margin_clamp", c.margin_clamp ? Json(*c.margin_clamp) : Json(nullptr)},
              {"target_labels", c.target_labels == TargetLabelMode::Soft ? "soft" : "hard"},
              {"couple_aux_heads", c.couple_aux_heads},
              {"unit_centroid_features", c.unit_centroid_features},
              {"force_identity_adjacency", c.force_identity_adjacency},
              {"force_unit_weights", c.force_unit_weights},
              {"feature_widths", c.feature_widths},
              {"graph_widths", c.graph_widths},
              {"discriminator_hidden", c.discriminator_hidden}};
}

inline TrainConfig train_config_from_json(const Json& j) {
  constexpr std::string_view s = "train";
  detail::reject_unknown(j, s,
                         {"variant", "lr0", "lr_alpha", "lr_beta", "head_lr_multiplier", "grl_gamma", "lambda_c",
                          "ema_alpha", "momentum", "top_k", "epochs", "batch_size", "seed", "margin_clamp",
                          "target_labels", "couple_aux_heads", "unit_centroid_features", "force_identity_adjacency",
                          "force_unit_weights", "feature_widths", "graph_widths", "discriminator_hidden"});
  TrainConfig c;
  if (j.contains("variant")) c.variant = parse_variant(detail::get_field<std::string>(j, s, "variant"));
  detail::read_if(j, s, "lr0", c.lr0);
  detail::read_if(j, s, "lr_alpha", c.lr_alpha);
  detail::read_if(j, s, "lr_beta", c.lr_beta);
  detail::read_if(j, s, "head_lr_multiplier", c.head_lr_multiplier);
  detail::read_if(j, s, "grl_gamma", c.grl_gamma);
  detail::read_if(j, s, "lambda_c", c.lambda_c);
  detail::read_if(j, s, "ema_alpha", c.ema_alpha);
  detail::read_if(j, s, "momentum", c.momentum);
  detail::read_if(j, s, "top_k", c.top_k);
  detail::read_if(j, s, "epochs", c.epochs);
  detail::read_if(j, s, "batch_size", c.batch_size);
  detail::read_if(j, s, "seed", c.seed);
  if (j.contains("margin_clamp") && !j.at("margin_clamp").is_null()) {
    c.margin_clamp = detail::get_field<double>(j, s, "margin_clamp");
  }
  if (j.contains("target_labels")) {
    const auto m = detail::get_field<std::string>(j, s, "target_labels");
    if (m == "soft") c.target_labels = TargetLabelMode::Soft;
    else if (m == "hard") c.target_labels = TargetLabelMode::Hard;
    else throw ValidationError("train.target_labels: expected 'soft' or 'hard', got '" + m + "'");
  }
  detail::read_if(j, s, "couple_aux_heads", c.couple_aux_heads);
  detail::read_if(j, s, "unit_centroid_features", c.unit_centroid_features);
  detail::read_if(j, s, "force_identity_adjacency", c.force_identity_adjacency);
  detail::read_if(j, s, "force_unit_weights", c.force_unit_weights);
  detail::read_if(j, s, "feature_widths", c.feature_widths);
  detail::read_if(j, s, "graph_widths", c.graph_widths);
  detail::read_if(j, s, "discriminator_hidden", c.discriminator_hidden);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Checkpoints: role -> list of layers, each with a weight and optional bias.

inline Json params_to_json(const ParamSet& p) {
  Json roles = Json::object();
  for (Role r : kAllRoles) {
    Json layers = Json::array();
    for (const Layer& l : p.role(r)) {
      layers.push_back(Json{{"weight", tensor_to_json(l.weight)},
                            {"bias", l.bias ? tensor_to_json(*l.bias) : Json(nullptr)}});
    }
    roles[std::string(role_name(r))] = std::move(layers);
  }
  return roles;
}

inline ParamSet params_from_json(const Json& j) {
  if (!j.is_object()) throw ParseError("checkpoint params: expected an object keyed by role");
  ParamSet p;
  for (Role r : kAllRoles) {
    const std::string name(role_name(r));
    if (!j.contains(name)) throw ParseError("checkpoint params: missing role '" + name + "'");
    const Json& layers = j.at(name);
    if (!layers.is_array() || layers.empty()) throw ParseError("checkpoint params: role '" + name + "' has no layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const std::string what = name + "[" + std::to_string(i) + "]";
      Layer l{tensor_from_json(layers[i].at("weight"), what + ".weight"), std::nullopt};
      if (l.weight.rank() != 2) throw ParseError(what + ".weight: expected a matrix");
      if (layers[i].contains("bias") && !layers[i].at("bias").is_null()) {
        l.bias = tensor_from_json(layers[i].at("bias"), what + ".bias");
        if (l.bias->rank() != 2 || l.bias->rows() != 1 || l.bias->cols() != l.weight.cols()) {
          throw ParseError(what + ".bias: expected shape [1x" + std::to_string(l.weight.cols()) + "]");
        }
      }
      if (i > 0 && p.role(r).back().weight.cols() != l.weight.rows()) {
        throw ParseError(what + ".weight: input width does not match the previous layer");
      }
      p.role(r).push_back(std::move(l));
    }
  }
  return p;
}

struct Checkpoint {
  ParamSet params;
  Json config;  // the experiment config that produced it
  std::size_t input_dim = 0;
  std::size_t num_classes = 0;
};

inline Json checkpoint_to_json(const Checkpoint& c) {
  return Json{{"format", "apda-checkpoint"},
              {"version", 1},
              {"input_dim", c.input_dim},
              {"num_classes", c.num_classes},
              {"config", c.config},
              {"params", params_to_json(c.params)}};
}

inline Checkpoint checkpoint_from_json(const Json& j) {
  if (!j.is_object() || j.value("format", std::string()) != "apda-checkpoint") {
    throw ParseError("not an apda checkpoint (missing \"format\": \"apda-checkpoint\")");
  }
  Checkpoint c;
  c.params = params_from_json(j.at("params"));
  c.config = j.value("config", Json::object());
  c.input_dim = j.value("input_dim", std::size_t{0});
  c.num_classes = j.value("num_classes", std::size_t{0});
  const auto& f = c.params.role(Role::F);
  if (f.front().weight.rows() != c.input_dim) throw ParseError("checkpoint: input_dim disagrees with F's first layer");
  return c;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  write_json_file(path, checkpoint_to_json(c));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  try {
    return checkpoint_from_json(read_json_file(path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Metrics log. CSV: one row per step (kind=step) followed by one row per epoch
// (kind=epoch); columns that do not apply to a row kind are left empty.

inline constexpr std::string_view kMetricsHeader =
    "kind,variant,step,epoch,p,lr,lambda,loss_c,loss_d,loss_cg,loss_aux_c,loss_aux_d,total,"
    "target_accuracy,mean_w_common,mean_w_private";

namespace detail {

inline std::string csv_double(double v) { return std::isnan(v) ? std::string("nan") : format_double(v); }

inline double csv_parse_double(std::string_view s, std::size_t line, std::string_view column) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  double v = 0.0;
  if (!parse_double(s, v)) {
    throw ParseError("metrics CSV line " + std::to_string(line) + ": bad number '" + std::string(s) + "' in column " +
                     std::string(column));
  }
  return v;
}

inline std::size_t csv_parse_size(std::string_view s, std::size_t line, std::string_view column) {
  std::size_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ParseError("metrics CSV line " + std::to_string(line) + ": bad integer '" + std::string(s) +
                     "' in column " + std::string(column));
  }
  return v;
}

}  // namespace detail

struct LabeledMetrics {
  std::string variant;
  MetricsLog log;
};

inline std::string metrics_to_csv(const MetricsLog& log, std::string_view variant) {
  using detail::csv_double;
  std::ostringstream os;
  os << kMetricsHeader << '\n';
  for (const StepMetrics& s : log.steps) {
    os << "step," << variant << ',' << s.step << ',' << s.epoch << ',' << csv_double(s.p) << ',' << csv_double(s.lr)
       << ',' << csv_double(s.lambda) << ',' << csv_double(s.loss_c) << ',' << csv_double(s.loss_d) << ','
       << csv_double(s.loss_cg) << ',' << csv_double(s.loss_aux_c) << ',' << csv_double(s.loss_aux_d) << ','
       << csv_double(s.total) << ",,,\n";
  }
  for (const EpochMetrics& e : log.epochs) {
    os << "epoch," << variant << ',' << e.step << ',' << e.epoch << ",,,,,,,,,," << csv_double(e.target_accuracy)
       << ',' << csv_double(e.mean_w_common) << ',' << csv_double(e.mean_w_private) << '\n';
  }
  return os.str();
}

inline LabeledMetrics metrics_from_csv(std::string_view text) {
  using detail::csv_parse_double;
  using detail::csv_parse_size;
  LabeledMetrics out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line) || detail::trim(line) != kMetricsHeader) {
    throw ParseError("metrics CSV: missing or unexpected header");
  }
  ++lineno;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto f = detail::split_commas(line);
    if (f.size() != 16) {
      throw ParseError("metrics CSV line " + std::to_string(lineno) + ": expected 16 columns, got " +
                       std::to_string(f.size()));
    }
    if (out.variant.empty()) out.variant = std::string(f[1]);
    if (f[0] == "step") {
      StepMetrics s;
      s.step = csv_parse_size(f[2], lineno, "step");
      s.epoch = csv_parse_size(f[3], lineno, "epoch");
      s.p = csv_parse_double(f[4], lineno, "p");
      s.lr = csv_parse_double(f[5], lineno, "lr");
      s.lambda = csv_parse_double(f[6], lineno, "lambda");
      s.loss_c = csv_parse_double(f[7], lineno, "loss_c");
      s.loss_d = csv_parse_double(f[8], lineno, "loss_d");
      s.loss_cg = csv_parse_double(f[9], lineno, "loss_cg");
      s.loss_aux_c = csv_parse_double(f[10], lineno, "loss_aux_c");
      s.loss_aux_d = csv_parse_double(f[11], lineno, "loss_aux_d");
      s.total = csv_parse_double(f[12], lineno, "total");
      out.log.steps.push_back(s);
    } else if (f[0] == "epoch") {
      EpochMetrics e;
      e.step = csv_parse_size(f[2], lineno, "step");
      e.epoch = csv_parse_size(f[3], lineno, "epoch");
      e.target_accuracy = csv_parse_double(f[13], lineno, "target_accuracy");
      e.mean_w_common = csv_parse_double(f[14], lineno, "mean_w_common");
      e.mean_w_private = csv_parse_double(f[15], lineno, "mean_w_private");
      out.log.epochs.push_back(e);
    } else {
      throw ParseError("metrics CSV line " + std::to_string(lineno) + ": unknown row kind '" + std::string(f[0]) +
                       "'");
    }
  }
  return out;
}

inline Json metrics_to_json(const MetricsLog& log, std::string_view variant) {
  Json steps = Json::array();
  for (const StepMetrics& s : log.steps) {
    steps.push_back(Json{{"step", s.step},
                         {"epoch", s.epoch},
                         {"p", s.p},
                         {"lr", s.lr},
                         {"lambda", s.lambda},
                         {"loss_c", s.loss_c},
                         {"loss_d", s.loss_d},
                         {"loss_cg", s.loss_cg},
                         {"loss_aux_c", s.loss_aux_c},
                         {"loss_aux_d", s.loss_aux_d},
                         {"total", s.total}});
  }
  Json epochs = Json::array();
  for (const EpochMetrics& e : log.epochs) {
    epochs.push_back(Json{{"epoch", e.epoch},
                          {"step", e.step},
                          {"target_accuracy", number_or_null(e.target_accuracy)},
                          {"mean_w_common", number_or_null(e.mean_w_common)},
                          {"mean_w_private", number_or_null(e.mean_w_private)}});
  }
  return Json{{"variant", variant}, {"steps", std::move(steps)}, {"epochs", std::move(epochs)}};
}

inline LabeledMetrics metrics_from_json(const Json& j) {
  LabeledMetrics out;
  try {
    out.variant = j.at("variant").get<std::string>();
    for (const Json& s : j.at("steps")) {
      out.log.steps.push_back(StepMetrics{s.at("step").get<std::size_t>(), s.at("epoch").get<std::size_t>(),
                                          number_from(s.at("p"), "p"), number_from(s.at("lr"), "lr"),
                                          number_from(s.at("lambda"), "lambda"), number_from(s.at("loss_c"), "loss_c"),
                                          number_from(s.at("loss_d"), "loss_d"),
                                          number_from(s.at("loss_cg"), "loss_cg"),
                                          number_from(s.at("loss_aux_c"), "loss_aux_c"),
                                          number_from(s.at("loss_aux_d"), "loss_aux_d"),
                                          number_from(s.at("total"), "total")});
    }
    for (const Json& e : j.at("epochs")) {
      out.log.epochs.push_back(EpochMetrics{e.at("epoch").get<std::size_t>(), e.at("step").get<std::size_t>(),
                                            number_from(e.at("target_accuracy"), "target_accuracy"),
                                            number_from(e.at("mean_w_common"), "mean_w_common"),
                                            number_from(e.at("mean_w_private"), "mean_w_private")});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("metrics JSON: ") + e.what());
  }
  return out;
}

/// Reads either format, chosen by extension (.json, anything else is CSV).
inline LabeledMetrics load_metrics(const std::filesystem::path& path) {
  try {
    if (path.extension() == ".json") return metrics_from_json(read_json_file(path));
    return metrics_from_csv(read_text_file(path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Commonness snapshot: EMA state plus per-source-sample scores from the final
// full-dataset pass.

struct CommonnessSnapshot {
  CommonnessState state;
  std::vector<double> sample_w;
  std::vector<double> sample_raw;
  std::vector<int> sample_label;
  std::vector<int> sample_common;  // 1 common, 0 private, -1 unknown
  double mean_w_common = std::numeric_limits<double>::quiet_NaN();
  double mean_w_private = std::numeric_limits<double>::quiet_NaN();
};

inline Json snapshot_to_json(const CommonnessSnapshot& s) {
  const CommonnessState& st = s.state;
  Json commonness = Json::array();
  for (std::size_t c = 0; c < st.num_classes(); ++c) {
    commonness.push_back(st.commonness_seen()[c] ? Json(st.class_commonness()[c]) : Json(nullptr));
  }
  const CgSelection sel = st.select();
  auto bools = [](const std::vector<bool>& v) {
    Json a = Json::array();
    for (bool b : v) a.push_back(b);
    return a;
  };
  return Json{{"alpha", st.alpha()},
              {"top_k", st.top_k()},
              {"margin_clamp", st.margin_clamp() ? Json(*st.margin_clamp()) : Json(nullptr)},
              {"class_commonness", std::move(commonness)},
              {"centroid_source", tensor_to_json(st.centroid_source())},
              {"centroid_target", tensor_to_json(st.centroid_target())},
              {"seen_source", bools(st.seen_source())},
              {"seen_target", bools(st.seen_target())},
              {"top", sel.top},
              {"bottom", sel.bottom},
              {"mean_w_common", number_or_null(s.mean_w_common)},
              {"mean_w_private", number_or_null(s.mean_w_private)},
              {"samples", Json{{"w", s.sample_w},
                               {"raw", s.sample_raw},
                               {"label", s.sample_label},
                               {"common", s.sample_common}}}};
}

inline CommonnessSnapshot snapshot_from_json(const Json& j) {
  CommonnessSnapshot s;
  try {
    const Json& cc = j.at("class_commonness");
    const std::size_t nc = cc.size();
    Tensor cs = tensor_from_json(j.at("centroid_source"), "centroid_source");
    Tensor ct = tensor_from_json(j.at("centroid_target"), "centroid_target");
    std::optional<double> clamp;
    if (!j.at("margin_clamp").is_null()) clamp = j.at("margin_clamp").get<double>();
    s.state = CommonnessState(nc, cs.cols(), j.at("alpha").get<double>(), j.at("top_k").get<std::size_t>(), clamp);
    std::vector<double> values(nc, 0.0);
    std::vector<bool> seen(nc, false);
    for (std::size_t c = 0; c < nc; ++c) {
      if (!cc[c].is_null()) {
        values[c] = cc[c].get<double>();
        seen[c] = true;
      }
    }
    s.state.restore(std::move(values), std::move(seen), std::move(cs), std::move(ct),
                    j.at("seen_source").get<std::vector<bool>>(), j.at("seen_target").get<std::vector<bool>>());
    const Json& smp = j.at("samples");
    s.sample_w = smp.at("w").get<std::vector<double>>();
    s.sample_raw = smp.at("raw").get<std::vector<double>>();
    s.sample_label = smp.at("label").get<std::vector<int>>();
    s.sample_common = smp.at("common").get<std::vector<int>>();
    s.mean_w_common = number_from(j.at("mean_w_common"), "mean_w_common");
    s.mean_w_private = number_from(j.at("mean_w_private"), "mean_w_private");
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("commonness snapshot: ") + e.what());
  }
  if (s.sample_w.size() != s.sample_label.size() || s.sample_w.size() != s.sample_common.size()) {
    throw ParseError("commonness snapshot: sample arrays differ in length");
  }
  return s;
}

inline CommonnessSnapshot make_snapshot(const TrainResult& r, const PdaDataset& ds) {
  CommonnessSnapshot s;
  s.state = r.commonness;
  s.sample_w = r.exports.source_w;
  s.sample_raw = r.exports.source_raw;
  s.sample_label = ds.source_labels();
  for (int y : ds.source_labels()) s.sample_common.push_back(ds.has_target_labels() ? (ds.is_common_class(y) ? 1 : 0) : -1);
  s.mean_w_common = r.exports.mean_w_common;
  s.mean_w_private = r.exports.mean_w_private;
  return s;
}

// ---------------------------------------------------------------------------
// Feature export: one row per sample, tagged with domain and class.

inline std::string features_to_csv(const ExportResult& ex, const PdaDataset& ds, std::string_view variant) {
  std::ostringstream os;
  const std::size_t d = ex.source_features.cols();
  os << "variant,domain,class,w";
  for (std::size_t j = 0; j < d; ++j) os << ",g" << j;
  os << '\n';
  auto row = [&](std::string_view domain, int cls, double w, const double* f) {
    os << variant << ',' << domain << ',' << cls << ',' << detail::csv_double(w);
    for (std::size_t j = 0; j < d; ++j) os << ',' << format_double(f[j]);
    os << '\n';
  };
  for (std::size_t i = 0; i < ds.source_size(); ++i) {
    row("source", ds.source_labels()[i], ex.source_w[i], ex.source_features.row_ptr(i));
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t i = 0; i < ds.target_size(); ++i) {
    const int cls = ds.has_target_labels() ? ds.hidden_target_labels()[i] : -1;
    row("target", cls, nan, ex.target_features.row_ptr(i));
  }
  return os.str();
}

}  // namespace apda

#endif
