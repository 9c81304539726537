#pragma once

// Last-layer retraining against class imbalance.
//
// Penultimate features are extracted for the training set, the set is split
// into class-balanced partitions by undersampling, a class-weighted
// multinomial logistic regression is fitted per partition and the resulting
// heads are averaged into the new final layer.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <future>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "xai_triage/accuracy.hpp"
#include "xai_triage/error.hpp"
#include "xai_triage/network.hpp"
#include "xai_triage/tensor.hpp"

namespace xai_triage {

struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;       // rows x cols
  std::vector<std::size_t> labels;  // one per row

  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(values).subspan(r * cols, cols);
  }

  void append(std::span<const double> features, std::size_t label) {
    if (rows == 0 && cols == 0) cols = features.size();
    if (features.size() != cols) {
      throw Error(ErrorKind::shape_mismatch,
                  detail::concat("feature row of width ", features.size(), ", expected ", cols));
    }
    values.insert(values.end(), features.begin(), features.end());
    labels.push_back(label);
    ++rows;
  }

  FeatureMatrix select(std::span<const std::size_t> indices) const {
    FeatureMatrix out;
    out.cols = cols;
    for (std::size_t i : indices) out.append(row(i), labels.at(i));
    return out;
  }
};

struct SampleError {
  std::size_t index = 0;
  std::string message;
};

struct FeatureExtraction {
  FeatureMatrix features;
  std::vector<std::size_t> source_index;  // sample index of each row
  std::vector<SampleError> errors;
};

// `load(i)` produces sample i or throws; failing samples are reported and
// skipped.
inline FeatureExtraction extract_features(const Network& net, std::size_t count,
                                          const std::function<LabeledSample(std::size_t)>& load) {
  FeatureExtraction out;
  out.features.cols = net.penultimate_width();
  for (std::size_t i = 0; i < count; ++i) {
    try {
      const LabeledSample s = load(i);
      const ForwardResult fwd = forward(net, s.image, true);
      out.features.append(fwd.trace->penultimate().values(), s.label);
      out.source_index.push_back(i);
    } catch (const std::exception& e) {
      out.errors.push_back({i, e.what()});
    }
  }
  return out;
}

inline FeatureExtraction extract_features(const Network& net,
                                          std::span<const LabeledSample> samples) {
  return extract_features(net, samples.size(), [&](std::size_t i) { return samples[i]; });
}

// ---------------------------------------------------------------------------
// Balanced partitions.

namespace detail {

// Uniform integer in [0, bound) by rejection; unlike
// std::uniform_int_distribution the sequence is identical on every standard
// library.
inline std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t v = rng();
  while (v >= limit) v = rng();
  return v % bound;
}

template <typename T>
void shuffle_portable(std::vector<T>& items, std::mt19937_64& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    std::swap(items[i - 1], items[uniform_below(rng, i)]);
  }
}

}  // namespace detail

// Each partition draws the minority-class count m from every class. A class
// is shuffled once and dealt out cyclically in chunks of m, so no sample
// repeats within a partition, large classes are spread disjointly across
// partitions while they last, and small classes are reused.
inline std::vector<std::vector<std::size_t>> make_partitions(
    std::span<const std::size_t> labels, std::size_t num_classes, std::size_t num_partitions,
    std::uint64_t seed, const std::vector<std::string>& class_names = {}) {
  if (num_partitions < 1) throw Error(ErrorKind::invalid_argument, "need at least one partition");
  std::vector<std::vector<std::size_t>> by_class(num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes) {
      throw Error(ErrorKind::invalid_argument, detail::concat("label ", labels[i], " out of range"));
    }
    by_class[labels[i]].push_back(i);
  }
  std::size_t m = std::numeric_limits<std::size_t>::max();
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (by_class[c].empty()) {
      const std::string name = c < class_names.size() ? class_names[c] : std::to_string(c);
      throw Error(ErrorKind::invalid_argument, "class '" + name + "' has no samples");
    }
    m = std::min(m, by_class[c].size());
  }
  std::mt19937_64 rng(seed);
  for (auto& members : by_class) detail::shuffle_portable(members, rng);

  std::vector<std::vector<std::size_t>> partitions(num_partitions);
  for (std::size_t p = 0; p < num_partitions; ++p) {
    for (const auto& members : by_class) {
      for (std::size_t i = 0; i < m; ++i) {
        partitions[p].push_back(members[(p * m + i) % members.size()]);
      }
    }
    std::sort(partitions[p].begin(), partitions[p].end());
  }
  return partitions;
}

// ---------------------------------------------------------------------------
// Class-weighted multinomial logistic regression.

struct ClassWeights {
  std::vector<double> w;

  void validate(std::size_t num_classes) const {
    if (w.size() != num_classes) {
      throw Error(ErrorKind::invalid_argument,
                  detail::concat(w.size(), " class weights for ", num_classes, " classes"));
    }
    for (double v : w) {
      if (!(v > 0.0) || !std::isfinite(v)) {
        throw Error(ErrorKind::invalid_argument, "class weights must be positive and finite");
      }
    }
  }
};

inline ClassWeights uniform_class_weights(std::size_t num_classes) {
  return {std::vector<double>(num_classes, 1.0)};
}

// n / (K * n_c), multiplied by an emphasis factor per named class.
inline ClassWeights inverse_frequency_weights(std::span<const std::size_t> labels,
                                              std::size_t num_classes,
                                              const std::vector<double>& emphasis = {}) {
  std::vector<double> counts(num_classes, 0.0);
  for (std::size_t y : labels) counts.at(y) += 1.0;
  ClassWeights out;
  for (std::size_t c = 0; c < num_classes; ++c) {
    const double base = counts[c] > 0.0 ? static_cast<double>(labels.size()) /
                                              (static_cast<double>(num_classes) * counts[c])
                                        : 1.0;
    out.w.push_back(base * (c < emphasis.size() ? emphasis[c] : 1.0));
  }
  return out;
}

struct SolverConfig {
  double learning_rate = 0.1;
  std::size_t max_iterations = 5000;
  double gradient_tolerance = 1e-6;
};

// Final-layer parameters: weights is F x C (feature-major), bias has C entries.
struct HeadWeights {
  std::size_t features = 0;
  std::size_t classes = 0;
  std::vector<double> weights;
  std::vector<double> bias;

  HeadWeights() = default;
  HeadWeights(std::size_t f, std::size_t c)
      : features(f), classes(c), weights(f * c, 0.0), bias(c, 0.0) {}

  double& w(std::size_t f, std::size_t c) { return weights[f * classes + c]; }
  double w(std::size_t f, std::size_t c) const { return weights[f * classes + c]; }

  double norm() const {
    double s = 0.0;
    for (double v : weights) s += v * v;
    for (double v : bias) s += v * v;
    return std::sqrt(s);
  }

  friend bool operator==(const HeadWeights&, const HeadWeights&) = default;
};

struct LossAndGradient {
  double loss = 0.0;
  HeadWeights gradient;
};

// J = (1/N) sum_i w_{y_i} * -log softmax(W^T z_i + b)[y_i]
inline LossAndGradient weighted_cross_entropy(const FeatureMatrix& x, const ClassWeights& cw,
                                              const HeadWeights& head) {
  LossAndGradient out{0.0, HeadWeights(head.features, head.classes)};
  const std::size_t C = head.classes, F = head.features;
  std::vector<double> logits(C), prob(C);
  for (std::size_t i = 0; i < x.rows; ++i) {
    const auto z = x.row(i);
    for (std::size_t c = 0; c < C; ++c) {
      double acc = head.bias[c];
      for (std::size_t f = 0; f < F; ++f) acc += head.w(f, c) * z[f];
      logits[c] = acc;
    }
    const double peak = *std::max_element(logits.begin(), logits.end());
    double norm = 0.0;
    for (std::size_t c = 0; c < C; ++c) norm += std::exp(logits[c] - peak);
    const double log_norm = peak + std::log(norm);
    const std::size_t y = x.labels[i];
    const double wi = cw.w[y];
    out.loss += wi * (log_norm - logits[y]);
    for (std::size_t c = 0; c < C; ++c) {
      prob[c] = std::exp(logits[c] - log_norm);
      const double g = wi * (prob[c] - (c == y ? 1.0 : 0.0));
      out.gradient.bias[c] += g;
      for (std::size_t f = 0; f < F; ++f) out.gradient.w(f, c) += g * z[f];
    }
  }
  const double inv_n = x.rows > 0 ? 1.0 / static_cast<double>(x.rows) : 0.0;
  out.loss *= inv_n;
  for (double& v : out.gradient.weights) v *= inv_n;
  for (double& v : out.gradient.bias) v *= inv_n;
  return out;
}

struct LogRegFit {
  HeadWeights head;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
};

// Full-batch gradient descent from zero. A step that would raise the loss is
// rejected and the learning rate halved, so accepted iterates never increase J.
inline LogRegFit fit_weighted_logreg(const FeatureMatrix& x, std::size_t num_classes,
                                     const ClassWeights& cw, const SolverConfig& solver = {}) {
  cw.validate(num_classes);
  if (x.rows == 0) throw Error(ErrorKind::invalid_argument, "no training rows");
  std::vector<bool> present(num_classes, false);
  for (std::size_t y : x.labels) {
    if (y >= num_classes) throw Error(ErrorKind::invalid_argument, "label out of range");
    present[y] = true;
  }
  if (std::count(present.begin(), present.end(), true) < 2) {
    throw Error(ErrorKind::invalid_argument, "logistic regression needs at least two classes");
  }
  for (double v : x.values) {
    if (!std::isfinite(v)) throw Error(ErrorKind::invalid_argument, "non-finite feature value");
  }

  LogRegFit fit;
  fit.head = HeadWeights(x.cols, num_classes);
  LossAndGradient current = weighted_cross_entropy(x, cw, fit.head);
  if (!std::isfinite(current.loss)) throw DivergenceError(0);
  fit.initial_loss = current.loss;
  double lr = solver.learning_rate;

  for (std::size_t it = 0; it < solver.max_iterations; ++it) {
    if (current.gradient.norm() < solver.gradient_tolerance) {
      fit.converged = true;
      break;
    }
    fit.iterations = it + 1;
    for (int attempt = 0;; ++attempt) {
      HeadWeights candidate = fit.head;
      for (std::size_t i = 0; i < candidate.weights.size(); ++i) {
        candidate.weights[i] -= lr * current.gradient.weights[i];
      }
      for (std::size_t c = 0; c < num_classes; ++c) {
        candidate.bias[c] -= lr * current.gradient.bias[c];
      }
      LossAndGradient next = weighted_cross_entropy(x, cw, candidate);
      if (!std::isfinite(next.loss)) throw DivergenceError(it + 1);
      if (next.loss <= current.loss) {
        fit.head = std::move(candidate);
        current = std::move(next);
        break;
      }
      lr *= 0.5;
      if (attempt >= 60) {
        // No descent possible at machine precision; treat as converged.
        fit.converged = true;
        fit.final_loss = current.loss;
        return fit;
      }
    }
  }
  fit.final_loss = current.loss;
  return fit;
}

// Per-feature affine standardization, folded back into fitted heads.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> scale;

  static Standardizer fit(const FeatureMatrix& x) {
    Standardizer s{std::vector<double>(x.cols, 0.0), std::vector<double>(x.cols, 1.0)};
    if (x.rows == 0) return s;
    for (std::size_t r = 0; r < x.rows; ++r)
      for (std::size_t f = 0; f < x.cols; ++f) s.mean[f] += x.at(r, f);
    for (double& m : s.mean) m /= static_cast<double>(x.rows);
    std::vector<double> var(x.cols, 0.0);
    for (std::size_t r = 0; r < x.rows; ++r)
      for (std::size_t f = 0; f < x.cols; ++f) {
        const double d = x.at(r, f) - s.mean[f];
        var[f] += d * d;
      }
    for (std::size_t f = 0; f < x.cols; ++f) {
      const double sd = std::sqrt(var[f] / static_cast<double>(x.rows));
      s.scale[f] = sd > 1e-12 ? sd : 1.0;
    }
    return s;
  }

  FeatureMatrix apply(const FeatureMatrix& x) const {
    FeatureMatrix out = x;
    for (std::size_t r = 0; r < x.rows; ++r)
      for (std::size_t f = 0; f < x.cols; ++f)
        out.values[r * x.cols + f] = (x.at(r, f) - mean[f]) / scale[f];
    return out;
  }

  // Head acting on standardized features -> equivalent head on raw features.
  HeadWeights fold(const HeadWeights& h) const {
    HeadWeights out = h;
    for (std::size_t c = 0; c < h.classes; ++c) {
      double shift = 0.0;
      for (std::size_t f = 0; f < h.features; ++f) {
        out.w(f, c) = h.w(f, c) / scale[f];
        shift += h.w(f, c) * mean[f] / scale[f];
      }
      out.bias[c] = h.bias[c] - shift;
    }
    return out;
  }
};

inline HeadWeights average_heads(std::span<const HeadWeights> heads) {
  if (heads.empty()) throw Error(ErrorKind::invalid_argument, "no heads to average");
  HeadWeights out(heads[0].features, heads[0].classes);
  for (const auto& h : heads) {
    if (h.features != out.features || h.classes != out.classes ||
        h.weights.size() != out.weights.size() || h.bias.size() != out.bias.size()) {
      throw Error(ErrorKind::shape_mismatch, "heads differ in shape");
    }
    for (std::size_t i = 0; i < out.weights.size(); ++i) out.weights[i] += h.weights[i];
    for (std::size_t c = 0; c < out.classes; ++c) out.bias[c] += h.bias[c];
  }
  const double n = static_cast<double>(heads.size());
  for (double& v : out.weights) v /= n;
  for (double& v : out.bias) v /= n;
  return out;
}

// Rounds every parameter to the 32-bit precision networks store.
inline HeadWeights quantized(HeadWeights h) {
  for (double& v : h.weights) v = to_f32_precision(v);
  for (double& v : h.bias) v = to_f32_precision(v);
  return h;
}

inline HeadWeights head_of(const Network& net) {
  const Layer& last = net.layers().back();
  const std::size_t C = last.weights.dim(0), F = last.weights.dim(1);
  HeadWeights h(F, C);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t f = 0; f < F; ++f) h.w(f, c) = last.weights[c * F + f];
    h.bias[c] = last.bias[c];
  }
  return h;
}

// Copy of `net` with the final dense layer replaced.
inline Network replace_head(const Network& net, const HeadWeights& head) {
  const Layer& last = net.layers().back();
  const std::size_t C = last.weights.dim(0), F = last.weights.dim(1);
  if (head.features != F || head.classes != C || head.weights.size() != F * C ||
      head.bias.size() != C) {
    throw Error(ErrorKind::shape_mismatch,
                detail::concat("head ", head.features, "x", head.classes,
                               " does not fit final layer ", F, "x", C));
  }
  Tensor w(Shape{C, F});
  Tensor b(Shape{C});
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t f = 0; f < F; ++f) w[c * F + f] = head.w(f, c);
    b[c] = head.bias[c];
  }
  return net.with_layer(net.num_layers() - 1, Layer::dense(std::move(w), std::move(b)));
}

// Standardize, fit, fold back: a head usable directly on raw features.
inline HeadWeights fit_head(const FeatureMatrix& x, std::size_t num_classes,
                            const ClassWeights& cw, const SolverConfig& solver = {}) {
  const Standardizer s = Standardizer::fit(x);
  return quantized(s.fold(fit_weighted_logreg(s.apply(x), num_classes, cw, solver).head));
}

struct RebalanceConfig {
  std::size_t num_partitions = 10;
  std::uint64_t seed = 0;
  SolverConfig solver;
  // Extra factor on the inverse-frequency weight of named classes.
  std::map<std::string, double> emphasis{{"broken", 2.0}};
  // When set, used verbatim for every partition instead of inverse frequency.
  std::optional<ClassWeights> class_weights;
  bool standardize = true;
  bool parallel = true;
};

struct RebalanceResult {
  Network network;
  HeadWeights head;
  std::vector<HeadWeights> partition_heads;
  std::vector<std::vector<std::size_t>> partitions;
};

inline std::vector<double> emphasis_vector(const Network& net,
                                           const std::map<std::string, double>& emphasis) {
  std::vector<double> out(net.num_classes(), 1.0);
  for (const auto& [name, factor] : emphasis) {
    if (!(factor > 0.0)) throw Error(ErrorKind::invalid_argument, "emphasis must be > 0");
    if (auto idx = net.class_index(name)) out[*idx] = factor;
  }
  return out;
}

inline RebalanceResult retrain_head(const Network& net, const FeatureMatrix& features,
                                    const RebalanceConfig& cfg) {
  if (features.cols != net.penultimate_width()) {
    throw Error(ErrorKind::shape_mismatch, "feature width does not match the network head");
  }
  const std::size_t C = net.num_classes();
  auto partitions = make_partitions(features.labels, C, cfg.num_partitions, cfg.seed,
                                    net.class_names());

  std::vector<std::size_t> used;
  for (const auto& p : partitions) used.insert(used.end(), p.begin(), p.end());
  std::sort(used.begin(), used.end());
  used.erase(std::unique(used.begin(), used.end()), used.end());
  const Standardizer standardizer =
      cfg.standardize ? Standardizer::fit(features.select(used))
                      : Standardizer{std::vector<double>(features.cols, 0.0),
                                     std::vector<double>(features.cols, 1.0)};
  const std::vector<double> emphasis = emphasis_vector(net, cfg.emphasis);

  auto fit_partition = [&](std::size_t p) {
    const FeatureMatrix part = standardizer.apply(features.select(partitions[p]));
    const ClassWeights cw = cfg.class_weights
                                ? *cfg.class_weights
                                : inverse_frequency_weights(part.labels, C, emphasis);
    return standardizer.fold(fit_weighted_logreg(part, C, cw, cfg.solver).head);
  };

  std::vector<HeadWeights> heads(partitions.size());
  if (cfg.parallel && partitions.size() > 1) {
    std::vector<std::future<HeadWeights>> jobs;
    for (std::size_t p = 0; p < partitions.size(); ++p) {
      jobs.push_back(std::async(std::launch::async, fit_partition, p));
    }
    for (std::size_t p = 0; p < partitions.size(); ++p) heads[p] = jobs[p].get();
  } else {
    for (std::size_t p = 0; p < partitions.size(); ++p) heads[p] = fit_partition(p);
  }
  HeadWeights mean = quantized(average_heads(heads));
  Network replaced = replace_head(net, mean);
  return {std::move(replaced), std::move(mean), std::move(heads), std::move(partitions)};
}

}  // namespace xai_triage
