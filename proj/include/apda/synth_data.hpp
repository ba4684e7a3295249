#ifndef APDA_SYNTH_DATA_HPP
#define APDA_SYNTH_DATA_HPP

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

#include "apda/tensor.hpp"

namespace apda {

/// Parameters of the Gaussian-blob partial-shift generator.
struct ShiftConfig {
  int num_source_classes = 6;
  int num_target_classes = 3;
  int samples_per_class_source = 60;
  int samples_per_class_target = 60;
  int dim = 2;
  double class_spread = 1.0;     // within-class std
  double rotation_deg = 25.0;    // rotation of the target domain in dims (0, 1)
  std::vector<double> translation{};  // padded with zeros up to dim
  double noise_std = 0.3;
  double anomaly_fraction = 0.1;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_target_classes < 1 || num_target_classes >= num_source_classes) {
      throw ValidationError("shift config: need 1 <= num_target_classes < num_source_classes");
    }
    if (samples_per_class_source < 1 || samples_per_class_target < 1) {
      throw ValidationError("shift config: samples per class must be positive");
    }
    if (dim < 2) throw ValidationError("shift config: dim must be at least 2");
    if (!(class_spread > 0.0)) throw ValidationError("shift config: class_spread must be positive");
    if (noise_std < 0.0) throw ValidationError("shift config: noise_std must be non-negative");
    if (!(anomaly_fraction >= 0.0 && anomaly_fraction < 0.5)) {
      throw ValidationError("shift config: anomaly_fraction must lie in [0, 0.5)");
    }
    if (translation.size() > static_cast<std::size_t>(dim)) {
      throw ValidationError("shift config: translation has more entries than dim");
    }
  }
};

/// Labeled source split plus unlabeled target split. Target labels are kept
/// for evaluation only and are not part of any training-facing accessor.
class PdaDataset {
 public:
  PdaDataset() = default;

  PdaDataset(Tensor source_x, std::vector<int> source_labels, Tensor target_x,
             std::optional<std::vector<int>> hidden_target_labels)
      : source_x_(std::move(source_x)),
        source_labels_(std::move(source_labels)),
        target_x_(std::move(target_x)),
        hidden_target_labels_(std::move(hidden_target_labels)) {
    validate();
  }

  const Tensor& source_x() const noexcept { return source_x_; }
  const std::vector<int>& source_labels() const noexcept { return source_labels_; }
  const Tensor& target_x() const noexcept { return target_x_; }

  std::size_t dim() const { return source_x_.cols(); }
  std::size_t source_size() const { return source_x_.rows(); }
  std::size_t target_size() const { return target_x_.rows(); }
  std::size_t num_classes() const { return source_classes_.size(); }
  const std::set<int>& source_classes() const noexcept { return source_classes_; }

  // Evaluation interface.
  bool has_target_labels() const noexcept { return hidden_target_labels_.has_value(); }
  const std::vector<int>& hidden_target_labels() const {
    if (!hidden_target_labels_) throw ValidationError("dataset has no target labels; evaluation is unavailable");
    return *hidden_target_labels_;
  }
  const std::set<int>& target_classes() const noexcept { return target_classes_; }
  bool is_common_class(int c) const { return target_classes_.count(c) != 0; }

 private:
  void validate() {
    if (source_x_.rows() != source_labels_.size()) throw ValidationError("source features/labels length mismatch");
    if (target_x_.cols() != source_x_.cols()) {
      throw ValidationError("source and target feature dimensions differ (" + std::to_string(source_x_.cols()) +
                            " vs " + std::to_string(target_x_.cols()) + ")");
    }
    source_classes_ = std::set<int>(source_labels_.begin(), source_labels_.end());
    if (source_classes_.empty() || *source_classes_.begin() != 0 ||
        *source_classes_.rbegin() != static_cast<int>(source_classes_.size()) - 1) {
      throw ValidationError("source class ids must be contiguous and start at 0");
    }
    if (hidden_target_labels_) {
      if (hidden_target_labels_->size() != target_x_.rows()) {
        throw ValidationError("target features/labels length mismatch");
      }
      target_classes_ = std::set<int>(hidden_target_labels_->begin(), hidden_target_labels_->end());
      for (int c : target_classes_) {
        if (!source_classes_.count(c)) {
          throw ValidationError("target class " + std::to_string(c) + " is not a source class");
        }
      }
      if (target_classes_.size() >= source_classes_.size()) {
        throw ValidationError("target label set must be a strict subset of the source label set");
      }
    }
  }

  Tensor source_x_;
  std::vector<int> source_labels_;
  Tensor target_x_;
  std::optional<std::vector<int>> hidden_target_labels_;
  std::set<int> source_classes_;
  std::set<int> target_classes_;
};

inline std::vector<double> class_mean(const ShiftConfig& cfg, int c) {
  std::vector<double> m(static_cast<std::size_t>(cfg.dim), 0.0);
  const double radius = 4.0 * cfg.class_spread;
  const double angle = 2.0 * std::numbers::pi * c / cfg.num_source_classes;
  m[0] = radius * std::cos(angle);
  m[1] = radius * std::sin(angle);
  return m;
}

/// Gaussian class blobs on a circle; the target domain holds the first
/// num_target_classes classes, rotated, translated and noised.
inline PdaDataset generate_pda_gaussians(const ShiftConfig& cfg) {
  cfg.validate();
  const auto d = static_cast<std::size_t>(cfg.dim);
  const double sigma = cfg.class_spread;
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<std::vector<double>> means;
  for (int c = 0; c < cfg.num_source_classes; ++c) means.push_back(class_mean(cfg, c));

  const std::size_t ns = static_cast<std::size_t>(cfg.num_source_classes * cfg.samples_per_class_source);
  Tensor sx = Tensor::matrix(ns, d);
  std::vector<int> sy;
  sy.reserve(ns);
  const int anomalies = static_cast<int>(std::floor(cfg.anomaly_fraction * cfg.samples_per_class_source));

  std::size_t row = 0;
  for (int c = 0; c < cfg.num_source_classes; ++c) {
    const auto& mu = means[static_cast<std::size_t>(c)];
    for (int k = 0; k < cfg.samples_per_class_source; ++k, ++row) {
      for (std::size_t j = 0; j < d; ++j) sx(row, j) = mu[j] + sigma * normal(rng);
      sy.push_back(c);
    }
    // Displace a fixed share of the class 3 sigma toward another class mean.
    std::vector<int> members(static_cast<std::size_t>(cfg.samples_per_class_source));
    for (int k = 0; k < cfg.samples_per_class_source; ++k) members[static_cast<std::size_t>(k)] = k;
    std::shuffle(members.begin(), members.end(), rng);
    std::uniform_int_distribution<int> other(0, cfg.num_source_classes - 2);
    const std::size_t first = row - static_cast<std::size_t>(cfg.samples_per_class_source);
    for (int a = 0; a < anomalies; ++a) {
      int o = other(rng);
      if (o >= c) ++o;
      const auto& mo = means[static_cast<std::size_t>(o)];
      double norm = 0.0;
      for (std::size_t j = 0; j < d; ++j) norm += (mo[j] - mu[j]) * (mo[j] - mu[j]);
      norm = std::sqrt(norm);
      const std::size_t r = first + static_cast<std::size_t>(members[static_cast<std::size_t>(a)]);
      for (std::size_t j = 0; j < d; ++j) {
        sx(r, j) = mu[j] + 3.0 * sigma * (mo[j] - mu[j]) / norm + 0.1 * sigma * normal(rng);
      }
    }
  }

  const std::size_t nt = static_cast<std::size_t>(cfg.num_target_classes * cfg.samples_per_class_target);
  Tensor tx = Tensor::matrix(nt, d);
  std::vector<int> ty;
  ty.reserve(nt);
  const double theta = cfg.rotation_deg * std::numbers::pi / 180.0;
  const double cs = std::cos(theta), sn = std::sin(theta);
  row = 0;
  for (int c = 0; c < cfg.num_target_classes; ++c) {
    const auto& mu = means[static_cast<std::size_t>(c)];
    for (int k = 0; k < cfg.samples_per_class_target; ++k, ++row) {
      std::vector<double> v(d);
      for (std::size_t j = 0; j < d; ++j) v[j] = mu[j] + sigma * normal(rng);
      const double x0 = cs * v[0] - sn * v[1];
      const double x1 = sn * v[0] + cs * v[1];
      v[0] = x0;
      v[1] = x1;
      for (std::size_t j = 0; j < d; ++j) {
        const double shift = j < cfg.translation.size() ? cfg.translation[j] : 0.0;
        const double noise = cfg.noise_std > 0.0 ? cfg.noise_std * normal(rng) : 0.0;
        tx(row, j) = v[j] + shift + noise;
      }
      ty.push_back(c);
    }
  }
  return PdaDataset(std::move(sx), std::move(sy), std::move(tx), std::move(ty));
}

// ---------------------------------------------------------------------------
// CSV

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline bool parse_double(std::string_view s, double& out) {
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

inline bool parse_int(std::string_view s, int& out) {
  if (s.empty()) return false;
  auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

struct CsvRows {
  std::vector<std::vector<double>> features;
  std::vector<int> labels;  // empty when the file has no label column
};

// expected_dim == 0: infer from the first row, last column is the label.
inline CsvRows read_feature_csv(const std::string& path, std::size_t expected_dim, bool label_optional) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  CsvRows rows;
  std::string line;
  std::size_t line_no = 0;
  std::optional<bool> has_label;
  std::size_t dim = expected_dim;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split_commas(line);
    const auto where = [&] { return "'" + path + "' row " + std::to_string(line_no); };
    if (!has_label) {
      if (expected_dim == 0) {
        if (fields.size() < 2) throw ParseError(where() + ": expected at least one feature and a class id");
        dim = fields.size() - 1;
        has_label = true;
      } else if (fields.size() == expected_dim + 1) {
        has_label = true;
      } else if (fields.size() == expected_dim && label_optional) {
        has_label = false;
      } else {
        throw ParseError(where() + ": expected " + std::to_string(expected_dim) + " features" +
                         (label_optional ? " (optionally followed by a class id)" : " and a class id") + ", got " +
                         std::to_string(fields.size()) + " fields");
      }
    }
    const std::size_t want = dim + (*has_label ? 1 : 0);
    if (fields.size() != want) {
      throw ParseError(where() + ": expected " + std::to_string(want) + " fields, got " +
                       std::to_string(fields.size()));
    }
    std::vector<double> feat(dim);
    for (std::size_t j = 0; j < dim; ++j) {
      if (!parse_double(fields[j], feat[j]) || !std::isfinite(feat[j])) {
        throw ParseError(where() + ": field " + std::to_string(j + 1) + " is not a finite number");
      }
    }
    if (*has_label) {
      int y = 0;
      if (!parse_int(fields[dim], y) || y < 0) {
        throw ParseError(where() + ": class id '" + std::string(fields[dim]) + "' is not a non-negative integer");
      }
      rows.labels.push_back(y);
    }
    rows.features.push_back(std::move(feat));
  }
  if (rows.features.empty()) throw ParseError("'" + path + "' contains no rows");
  return rows;
}

inline Tensor to_tensor(const std::vector<std::vector<double>>& rows) {
  Tensor t = Tensor::matrix(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy(rows[i].begin(), rows[i].end(), t.row_ptr(i));
  return t;
}

}  // namespace detail

/// Rows are `d` floats followed by an integer class id. The target file's class
/// column is optional; when present it is stored as hidden evaluation labels.
inline PdaDataset load_feature_csv(const std::string& source_path, const std::string& target_path) {
  auto src = detail::read_feature_csv(source_path, 0, false);
  const std::size_t d = src.features.front().size();
  auto tgt = detail::read_feature_csv(target_path, d, true);
  std::optional<std::vector<int>> hidden;
  if (!tgt.labels.empty()) hidden = std::move(tgt.labels);
  return PdaDataset(detail::to_tensor(src.features), std::move(src.labels), detail::to_tensor(tgt.features),
                    std::move(hidden));
}

inline void write_feature_csv(std::ostream& os, const Tensor& x, const std::vector<int>* labels) {
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) os << (j ? "," : "") << format_double(x(i, j));
    if (labels) os << ',' << (*labels)[i];
    os << '\n';
  }
}

inline void save_feature_csv(const PdaDataset& ds, const std::string& source_path, const std::string& target_path) {
  std::ofstream s(source_path, std::ios::binary);
  if (!s) throw IoError("cannot write '" + source_path + "'");
  write_feature_csv(s, ds.source_x(), &ds.source_labels());
  std::ofstream t(target_path, std::ios::binary);
  if (!t) throw IoError("cannot write '" + target_path + "'");
  write_feature_csv(t, ds.target_x(), ds.has_target_labels() ? &ds.hidden_target_labels() : nullptr);
  if (!s || !t) throw IoError("write failed for dataset CSV files");
}

// ---------------------------------------------------------------------------
// Batching

struct Batch {
  Tensor source_x;
  std::vector<int> source_labels;
  std::vector<std::size_t> source_index;
  Tensor target_x;
  std::vector<std::size_t> target_index;
};

/// Yields batch_size/2 source and batch_size/2 target rows per step.
///
/// An epoch is one pass over a fresh permutation of the source split; the
/// remainder that does not fill a half-batch is dropped. The target split runs
/// on its own permutation, reshuffled whenever it cannot fill a half-batch.
class BatchIterator {
 public:
  BatchIterator(const PdaDataset& ds, std::size_t batch_size, std::uint64_t seed)
      : ds_(&ds), half_(batch_size / 2) {
    if (batch_size < 2 || batch_size % 2 != 0) throw ValidationError("batch size must be even and at least 2");
    if (half_ > ds.source_size() || half_ > ds.target_size()) {
      throw ValidationError("batch size " + std::to_string(batch_size) + " exceeds twice the smaller split (source " +
                            std::to_string(ds.source_size()) + ", target " + std::to_string(ds.target_size()) + ")");
    }
    coverage_warning_ = batch_size < 2 * ds.num_classes();
    std::seed_seq seq{seed, std::uint64_t{0x5eed}};
    std::array<std::uint64_t, 2> seeds{};
    seq.generate(seeds.begin(), seeds.end());
    source_rng_.seed(seeds[0]);
    target_rng_.seed(seeds[1]);
    source_order_.resize(ds.source_size());
    target_order_.resize(ds.target_size());
    for (std::size_t i = 0; i < source_order_.size(); ++i) source_order_[i] = i;
    for (std::size_t i = 0; i < target_order_.size(); ++i) target_order_[i] = i;
    start_epoch();
    reshuffle_target();
  }

  std::size_t steps_per_epoch() const { return ds_->source_size() / half_; }
  std::size_t half_batch() const { return half_; }
  std::size_t epoch() const { return epoch_; }
  /// True when the batch is smaller than twice the number of classes.
  bool coverage_warning() const { return coverage_warning_; }

  Batch next() {
    if (source_cursor_ + half_ > source_order_.size()) {
      ++epoch_;
      start_epoch();
    }
    if (target_cursor_ + half_ > target_order_.size()) reshuffle_target();

    const std::size_t d = ds_->dim();
    Batch b{Tensor::matrix(half_, d), {}, {}, Tensor::matrix(half_, d), {}};
    for (std::size_t k = 0; k < half_; ++k) {
      const std::size_t si = source_order_[source_cursor_ + k];
      const std::size_t ti = target_order_[target_cursor_ + k];
      std::copy_n(ds_->source_x().row_ptr(si), d, b.source_x.row_ptr(k));
      std::copy_n(ds_->target_x().row_ptr(ti), d, b.target_x.row_ptr(k));
      b.source_labels.push_back(ds_->source_labels()[si]);
      b.source_index.push_back(si);
      b.target_index.push_back(ti);
    }
    source_cursor_ += half_;
    target_cursor_ += half_;
    return b;
  }

 private:
  void start_epoch() {
    std::shuffle(source_order_.begin(), source_order_.end(), source_rng_);
    source_cursor_ = 0;
  }
  void reshuffle_target() {
    std::shuffle(target_order_.begin(), target_order_.end(), target_rng_);
    target_cursor_ = 0;
  }

  const PdaDataset* ds_;
  std::size_t half_;
  bool coverage_warning_ = false;
  std::mt19937_64 source_rng_;
  std::mt19937_64 target_rng_;
  std::vector<std::size_t> source_order_;
  std::vector<std::size_t> target_order_;
  std::size_t source_cursor_ = 0;
  std::size_t target_cursor_ = 0;
  std::size_t epoch_ = 0;
};

}  // namespace apda

#endif  // APDA_SYNTH_DATA_HPP
