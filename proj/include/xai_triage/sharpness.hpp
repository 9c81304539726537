#pragma once

// Laplacian-variance sharpness.
//
//   K = 1/6 [[0,-1,0],[-1,4,-1],[0,-1,0]]
//   L = I (*) K                  valid region only, (W-2) x (H-2)
//   mu = mean(|L|)
//   V = sum (L - mu)^2
//
// mu is the mean of |L| while V uses signed L; this is intentional and kept
// as is, so V is not the textbook variance.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "xai_triage/accuracy.hpp"
#include "xai_triage/error.hpp"
#include "xai_triage/image.hpp"

namespace xai_triage {

inline constexpr double kLaplacianCenter = 4.0 / 6.0;
inline constexpr double kLaplacianCross = -1.0 / 6.0;

struct Field2D {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> values;

  double at(std::size_t x, std::size_t y) const { return values[y * width + x]; }
};

inline Field2D laplacian_filter(const GrayImage& img) {
  if (img.width() < 3 || img.height() < 3) {
    throw Error(ErrorKind::invalid_argument,
                detail::concat("image ", img.width(), "x", img.height(),
                               " too small for 3x3 filtering"));
  }
  Field2D out{img.width() - 2, img.height() - 2, {}};
  out.values.reserve(out.width * out.height);
  for (std::size_t y = 1; y + 1 < img.height(); ++y) {
    for (std::size_t x = 1; x + 1 < img.width(); ++x) {
      out.values.push_back(kLaplacianCenter * img.at(x, y) +
                           kLaplacianCross * (img.at(x - 1, y) + img.at(x + 1, y) +
                                              img.at(x, y - 1) + img.at(x, y + 1)));
    }
  }
  return out;
}

struct SharpnessScore {
  double raw = 0.0;         // V
  double normalized = 0.0;  // V per filtered pixel
};

enum class ScoreVariant { raw, normalized };

inline const char* to_string(ScoreVariant v) {
  return v == ScoreVariant::raw ? "raw" : "normalized";
}

inline ScoreVariant score_variant_from_string(const std::string& s) {
  if (s == "raw") return ScoreVariant::raw;
  if (s == "normalized") return ScoreVariant::normalized;
  throw Error(ErrorKind::invalid_argument, "unknown sharpness variant '" + s + "'");
}

inline double select(const SharpnessScore& s, ScoreVariant v) {
  return v == ScoreVariant::raw ? s.raw : s.normalized;
}

inline SharpnessScore sharpness_score(const GrayImage& img) {
  const Field2D lap = laplacian_filter(img);
  const double n = static_cast<double>(lap.values.size());
  double mu = 0.0;
  for (double v : lap.values) mu += std::abs(v);
  mu /= n;
  double total = 0.0;
  for (double v : lap.values) total += (v - mu) * (v - mu);
  return {total, total / n};
}

inline SharpnessScore sharpness_score(const Tensor& image) {
  return sharpness_score(tensor_to_gray(image));
}

// Index split: kept = score >= threshold, both lists in input order.
struct GateResult {
  std::vector<std::size_t> kept;
  std::vector<std::size_t> discarded;
};

inline GateResult gate(std::span<const double> scores, double threshold) {
  if (!(threshold >= 0.0)) {
    throw Error(ErrorKind::invalid_argument, "sharpness threshold must be >= 0");
  }
  GateResult out;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    (scores[i] >= threshold ? out.kept : out.discarded).push_back(i);
  }
  return out;
}

inline GateResult gate(std::span<const LabeledSample> samples, double threshold,
                       ScoreVariant variant) {
  std::vector<double> scores;
  for (const auto& s : samples) scores.push_back(select(sharpness_score(s.image), variant));
  return gate(scores, threshold);
}

struct SweepPoint {
  double threshold = 0.0;
  std::size_t kept_count = 0;
  PerClassAccuracy accuracy;
};

inline void check_ascending(std::span<const double> thresholds) {
  if (!std::is_sorted(thresholds.begin(), thresholds.end())) {
    throw Error(ErrorKind::invalid_argument, "sweep thresholds must be ascending");
  }
}

// Accuracy curve from precomputed scores and predictions.
inline std::vector<SweepPoint> sweep_from_predictions(std::span<const double> scores,
                                                      std::span<const std::size_t> predictions,
                                                      std::span<const std::size_t> labels,
                                                      std::size_t num_classes,
                                                      std::span<const double> thresholds) {
  check_ascending(thresholds);
  if (scores.size() != predictions.size()) {
    throw Error(ErrorKind::invalid_argument, "score and prediction counts differ");
  }
  std::vector<SweepPoint> curve;
  for (double t : thresholds) {
    const GateResult g = gate(scores, t);
    std::vector<std::size_t> kept_pred, kept_labels;
    for (std::size_t i : g.kept) {
      kept_pred.push_back(predictions[i]);
      kept_labels.push_back(labels[i]);
    }
    curve.push_back({t, g.kept.size(), tally_accuracy(kept_pred, kept_labels, num_classes)});
  }
  return curve;
}

inline std::vector<SweepPoint> sweep_thresholds(const Network& net,
                                                std::span<const LabeledSample> samples,
                                                std::span<const double> thresholds,
                                                ScoreVariant variant = ScoreVariant::normalized) {
  std::vector<double> scores;
  std::vector<std::size_t> labels;
  for (const auto& s : samples) {
    scores.push_back(select(sharpness_score(s.image), variant));
    labels.push_back(s.label);
  }
  return sweep_from_predictions(scores, predict_labels(net, samples), labels, net.num_classes(),
                                thresholds);
}

// Evenly spaced thresholds from `first` to `last` inclusive.
inline std::vector<double> threshold_range(double first, double last, double step) {
  if (!(step > 0.0) || last < first) {
    throw Error(ErrorKind::invalid_argument, "threshold range needs step > 0 and last >= first");
  }
  std::vector<double> out;
  const auto n = static_cast<std::size_t>(std::floor((last - first) / step + 1e-9));
  for (std::size_t i = 0; i <= n; ++i) out.push_back(first + static_cast<double>(i) * step);
  return out;
}

// threshold,kept_count,acc_<class>...,macro_mean; absent classes print NA.
inline std::string sweep_csv(std::span<const SweepPoint> curve,
                             const std::vector<std::string>& class_names) {
  std::string out = "threshold,kept_count";
  for (const auto& name : class_names) out += ",acc_" + name;
  out += ",macro_mean\n";
  auto opt = [](const std::optional<double>& v) { return v ? format_number(*v) : "NA"; };
  for (const auto& p : curve) {
    out += format_number(p.threshold) + "," + std::to_string(p.kept_count);
    for (const auto& a : p.accuracy.accuracy) out += "," + opt(a);
    out += "," + opt(p.accuracy.macro_mean) + "\n";
  }
  return out;
}

}  // namespace xai_triage
