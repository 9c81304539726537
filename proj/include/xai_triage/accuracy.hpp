#pragma once

#include <charconv>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xai_triage/error.hpp"
#include "xai_triage/network.hpp"
#include "xai_triage/tensor.hpp"

namespace xai_triage {

// Classifier input plus ground-truth class index.
struct LabeledSample {
  Tensor image;
  std::size_t label = 0;
};

struct PerClassAccuracy {
  std::vector<std::size_t> correct;
  std::vector<std::size_t> total;
  // Absent (nullopt) for classes without samples.
  std::vector<std::optional<double>> accuracy;
  // Unweighted mean over present classes; nullopt if none are present.
  std::optional<double> macro_mean;

  std::size_t sample_count() const {
    std::size_t n = 0;
    for (std::size_t t : total) n += t;
    return n;
  }

  // Fraction of all samples classified correctly.
  std::optional<double> overall() const {
    std::size_t hits = 0, n = 0;
    for (std::size_t c = 0; c < total.size(); ++c) {
      hits += correct[c];
      n += total[c];
    }
    if (n == 0) return std::nullopt;
    return static_cast<double>(hits) / static_cast<double>(n);
  }

  std::optional<double> worst() const {
    std::optional<double> w;
    for (const auto& a : accuracy) {
      if (a && (!w || *a < *w)) w = a;
    }
    return w;
  }
};

inline PerClassAccuracy tally_accuracy(std::span<const std::size_t> predictions,
                                       std::span<const std::size_t> labels,
                                       std::size_t num_classes) {
  if (predictions.size() != labels.size()) {
    throw Error(ErrorKind::invalid_argument, "prediction and label counts differ");
  }
  PerClassAccuracy out;
  out.correct.assign(num_classes, 0);
  out.total.assign(num_classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes) {
      throw Error(ErrorKind::invalid_argument,
                  detail::concat("label ", labels[i], " out of range"));
    }
    ++out.total[labels[i]];
    if (predictions[i] == labels[i]) ++out.correct[labels[i]];
  }
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (out.total[c] == 0) {
      out.accuracy.push_back(std::nullopt);
      continue;
    }
    const double a = static_cast<double>(out.correct[c]) / static_cast<double>(out.total[c]);
    out.accuracy.push_back(a);
    sum += a;
    ++present;
  }
  if (present > 0) out.macro_mean = sum / static_cast<double>(present);
  return out;
}

inline std::vector<std::size_t> predict_labels(const Network& net,
                                               std::span<const LabeledSample> samples) {
  std::vector<std::size_t> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(predict_class(net, s.image).label);
  return out;
}

inline PerClassAccuracy per_class_accuracy(const Network& net,
                                           std::span<const LabeledSample> samples) {
  std::vector<std::size_t> labels;
  for (const auto& s : samples) labels.push_back(s.label);
  return tally_accuracy(predict_labels(net, samples), labels, net.num_classes());
}

// Shortest decimal that round-trips, used for every number written to text
// outputs so that they are reproducible byte for byte.
inline std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace xai_triage
