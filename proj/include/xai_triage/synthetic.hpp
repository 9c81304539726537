#pragma once

// Synthetic insulator-shell corpus and a small fixed-filter classifier.
//
// Shells are textured grey patches. "broken" shells carry a thin dark crack,
// "flash" shells a bright burn blob; each damage comes with a mask covering
// the damaged region. Damage contrast is drawn at random, so weak instances
// overlap with healthy texture and the classes are not trivially separable.
// Cracks are one pixel wide and largely vanish under blur.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "xai_triage/image.hpp"
#include "xai_triage/localization.hpp"
#include "xai_triage/model_io.hpp"
#include "xai_triage/network.hpp"
#include "xai_triage/rebalance.hpp"

namespace xai_triage::synthetic {

inline constexpr std::size_t kBroken = 0;
inline constexpr std::size_t kFlash = 1;
inline constexpr std::size_t kHealthy = 2;

struct ShellParams {
  std::size_t size = 24;
  double base_level = 0.5;
  double noise_amplitude = 0.12;  // uniform texture in [-a, a]
  double min_contrast = 0.08;
  double max_contrast = 0.30;
  int blur_passes = 2;
};

struct Shell {
  RgbImage image;
  BinaryMask mask;  // empty region for healthy shells
  std::size_t label = kHealthy;
  bool blurred = false;
};

namespace detail {

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  // 53 random bits -> [0, 1); avoids implementation-defined distributions.
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * u;
}

inline std::size_t pick(std::mt19937_64& rng, std::size_t n) {
  return static_cast<std::size_t>(xai_triage::detail::uniform_below(rng, n));
}

}  // namespace detail

inline std::string sample_id(const std::string& split, std::size_t i) {
  std::string digits = std::to_string(i);
  return split + "_" + std::string(digits.size() < 5 ? 5 - digits.size() : 0, '0') + digits;
}

inline Shell make_shell(std::size_t label, std::mt19937_64& rng, const ShellParams& p = {},
                        bool blurred = false) {
  const std::size_t n = p.size;
  GrayImage gray(n, n);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x)
      gray.at(x, y) = GrayImage::clamp01(
          p.base_level + detail::uniform(rng, -p.noise_amplitude, p.noise_amplitude));

  BinaryMask mask(n, n);
  const double contrast = detail::uniform(rng, p.min_contrast, p.max_contrast);
  const std::size_t margin = 3;

  if (label == kBroken) {
    // Straight crack: horizontal, vertical or diagonal.
    const std::size_t orientation = detail::pick(rng, 3);
    const std::size_t length = 8 + detail::pick(rng, 5);
    const std::size_t span = n - 2 * margin;
    const std::size_t x0 = margin + detail::pick(rng, span - (orientation != 1 ? length : 0));
    const std::size_t y0 = margin + detail::pick(rng, span - (orientation != 0 ? length : 0));
    for (std::size_t t = 0; t < length; ++t) {
      const std::size_t x = x0 + (orientation == 1 ? 0 : t);
      const std::size_t y = y0 + (orientation == 0 ? 0 : t);
      gray.at(x, y) = GrayImage::clamp01(gray.at(x, y) - contrast);
      for (long dy = -1; dy <= 1; ++dy)
        for (long dx = -1; dx <= 1; ++dx)
          mask.set(static_cast<std::size_t>(static_cast<long>(y) + dy),
                   static_cast<std::size_t>(static_cast<long>(x) + dx));
    }
  } else if (label == kFlash) {
    // Bright burn blob; the mask extends one pixel past it.
    const std::size_t blob = 4;
    const std::size_t x0 = margin + detail::pick(rng, n - 2 * margin - blob);
    const std::size_t y0 = margin + detail::pick(rng, n - 2 * margin - blob);
    for (std::size_t y = y0; y < y0 + blob; ++y)
      for (std::size_t x = x0; x < x0 + blob; ++x)
        gray.at(x, y) = GrayImage::clamp01(gray.at(x, y) + contrast);
    for (std::size_t y = y0 - 1; y <= y0 + blob; ++y)
      for (std::size_t x = x0 - 1; x <= x0 + blob; ++x) mask.set(y, x);
  }
  if (blurred) gray = box_blur(gray, p.blur_passes);
  return {to_rgb(gray), std::move(mask), label, blurred};
}

// Shells in class-major order: counts[c] shells of class c. A `blur_fraction`
// share of each class (chosen at random) is blurred.
inline std::vector<Shell> make_corpus(const std::vector<std::size_t>& counts, std::uint64_t seed,
                                      double blur_fraction = 0.0, const ShellParams& p = {}) {
  std::mt19937_64 rng(seed);
  std::vector<Shell> out;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    const auto blurred_count =
        static_cast<std::size_t>(std::lround(blur_fraction * static_cast<double>(counts[c])));
    std::vector<bool> blur(counts[c], false);
    for (std::size_t i = 0; i < blurred_count; ++i) blur[i] = true;
    xai_triage::detail::shuffle_portable(blur, rng);
    for (std::size_t i = 0; i < counts[c]; ++i) out.push_back(make_shell(c, rng, p, blur[i]));
  }
  return out;
}

inline std::vector<LabeledSample> to_samples(const std::vector<Shell>& shells,
                                             std::size_t channels = 1) {
  std::vector<LabeledSample> out;
  for (const auto& s : shells) out.push_back({image_to_tensor(s.image, channels), s.label});
  return out;
}

// Two conv blocks of hand-designed damage detectors followed by a
// dense head (zero until trained):
//   conv 3x3 (1 -> 4, pad 1) + relu + maxpool 2
//   conv 3x3 (4 -> 4, pad 1, per-channel box sum) + relu + global avgpool
//   flatten + dense (4 -> 3)
inline Network make_shell_network(std::size_t size = 24) {
  // Absolute-level detectors tuned to the synthetic base level: dark 1-px
  // lines (horizontal, vertical, diagonal) and a bright 3x3 blob.
  constexpr double t = 1.0 / 3.0, b9 = 1.0 / 9.0;
  const double filters[4][9] = {
      {0, 0, 0, -t, -t, -t, 0, 0, 0},
      {0, -t, 0, 0, -t, 0, 0, -t, 0},
      {-t, 0, 0, 0, -t, 0, 0, 0, -t},
      {b9, b9, b9, b9, b9, b9, b9, b9, b9},
  };
  const double bias[4] = {0.40, 0.40, 0.40, -0.58};

  Tensor w1(Shape{4, 1, 3, 3});
  Tensor b1(Shape{4});
  for (std::size_t o = 0; o < 4; ++o) {
    for (std::size_t k = 0; k < 9; ++k) w1[o * 9 + k] = filters[o][k];
    b1[o] = bias[o];
  }
  Tensor w2(Shape{4, 4, 3, 3});
  for (std::size_t o = 0; o < 4; ++o)
    for (std::size_t k = 0; k < 9; ++k) w2[(o * 4 + o) * 9 + k] = 1.0 / 9.0;

  const std::size_t pooled = 1;
  const std::size_t features = 4 * pooled * pooled;
  std::vector<Layer> layers{
      Layer::conv2d(std::move(w1), std::move(b1), 1, 1),
      Layer::relu(),
      Layer::maxpool(2, 2),
      Layer::conv2d(std::move(w2), Tensor(Shape{4}), 1, 1),
      Layer::relu(),
      Layer::avgpool(size / 2, size / 2),
      Layer::flatten(),
      Layer::dense(Tensor(Shape{3, features}), Tensor(Shape{3})),
  };
  return Network(std::move(layers), Shape{1, size, size}, {"broken", "flash", "healthy"});
}

// Plain (unweighted, single-partition) logistic-regression head on the given
// samples; on an imbalanced set this yields a majority-biased classifier.
inline Network train_plain_head(const Network& net, const std::vector<LabeledSample>& samples,
                                const SolverConfig& solver = {}) {
  const FeatureExtraction fx = extract_features(net, samples);
  return replace_head(net, fit_head(fx.features, net.num_classes(),
                                    uniform_class_weights(net.num_classes()), solver));
}

struct CorpusSpec {
  std::vector<std::size_t> train_counts{100, 200, 1000};
  std::vector<std::size_t> test_counts{100, 100, 100};
  std::uint64_t seed = 1;
  double blur_fraction = 0.0;
  std::size_t margin = 4;  // flat border around the shell; the insulator box excludes it
  ShellParams params;
};

struct WrittenCorpus {
  std::filesystem::path manifest;
  std::filesystem::path model;  // plain head trained on the train split
  std::size_t train = 0;
  std::size_t test = 0;
};

// Writes images/, masks/, manifest.jsonl and base.model under `dir`. Each
// image holds one insulator box containing one shell box.
inline WrittenCorpus write_corpus(const std::filesystem::path& dir, const CorpusSpec& spec) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");
  const std::vector<Shell> train = make_corpus(spec.train_counts, spec.seed, spec.blur_fraction,
                                               spec.params);
  const std::vector<Shell> test = make_corpus(spec.test_counts, spec.seed + 0x9e3779b97f4a7c15ULL,
                                              spec.blur_fraction, spec.params);
  const Network base = train_plain_head(make_shell_network(spec.params.size), to_samples(train));

  const std::size_t n = spec.params.size;
  const std::size_t m = spec.margin;
  const char* names[] = {"broken", "flash", "healthy"};
  std::string manifest;
  auto emit = [&](const std::vector<Shell>& shells, const std::string& split) {
    for (std::size_t i = 0; i < shells.size(); ++i) {
      const Shell& s = shells[i];
      const std::string id = sample_id(split, i);
      RgbImage framed(n + 2 * m, n + 2 * m);
      for (std::size_t y = 0; y < framed.height(); ++y)
        for (std::size_t x = 0; x < framed.width(); ++x)
          for (std::size_t c = 0; c < 3; ++c) framed.at(x, y, c) = spec.params.base_level;
      for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x)
          for (std::size_t c = 0; c < 3; ++c) framed.at(x + m, y + m, c) = s.image.at(x, y, c);
      write_ppm((dir / "images" / (id + ".ppm")).string(), framed);

      nlohmann::ordered_json j;
      j["id"] = id;
      j["image"] = "images/" + id + ".ppm";
      j["boxes"] = {{m, m, n, n}};
      j["shell_boxes"] = {{{0, 0, n, n}}};
      j["label"] = names[s.label];
      if (s.label != kHealthy) {
        BinaryMask framed_mask(n + 2 * m, n + 2 * m);
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t c = 0; c < n; ++c) framed_mask.set(r + m, c + m, s.mask.at(r, c));
        xai_triage::detail::write_file_bytes((dir / "masks" / (id + ".pgm")).string(),
                                             encode_mask(framed_mask));
        j["mask"] = "masks/" + id + ".pgm";
      }
      j["split"] = split;
      manifest += j.dump() + "\n";
    }
  };
  emit(train, "train");
  emit(test, "test");
  xai_triage::detail::write_file_bytes((dir / "manifest.jsonl").string(), manifest);
  save_model(base, (dir / "base.model").string());
  return {dir / "manifest.jsonl", dir / "base.model", train.size(), test.size()};
}

}  // namespace xai_triage::synthetic
