#pragma once

// Top-k intersection (tki): the fraction of the k most relevant heatmap
// pixels that fall inside a binary damage mask.

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "xai_triage/error.hpp"
#include "xai_triage/heatmap.hpp"
#include "xai_triage/image.hpp"

namespace xai_triage {

struct BinaryMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<bool> bits;  // row-major

  BinaryMask() = default;
  BinaryMask(std::size_t h, std::size_t w, bool fill = false)
      : height(h), width(w), bits(h * w, fill) {}

  bool at(std::size_t row, std::size_t col) const { return bits[row * width + col]; }
  void set(std::size_t row, std::size_t col, bool v = true) { bits[row * width + col] = v; }
  std::size_t count() const {
    return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), true));
  }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

// Masks on disk are PGM: 0 is background, anything else is damage.
inline BinaryMask mask_from_raster(const PnmRaster& raster) {
  if (raster.channels != 1) throw Error(ErrorKind::invalid_argument, "mask must be a PGM (P5)");
  BinaryMask m(raster.height, raster.width);
  for (std::size_t i = 0; i < raster.samples.size(); ++i) m.bits[i] = raster.samples[i] != 0;
  return m;
}

inline BinaryMask read_mask(const std::string& path) {
  return mask_from_raster(parse_pnm(detail::read_file_bytes(path)));
}

inline std::string encode_mask(const BinaryMask& m) {
  std::string out = detail::concat("P5\n", m.width, " ", m.height, "\n255\n");
  for (bool b : m.bits) out.push_back(static_cast<char>(b ? 255 : 0));
  return out;
}

// Nearest-neighbour resampling, for masks drawn at a different resolution
// than the classifier input.
inline BinaryMask resize_nearest(const BinaryMask& m, std::size_t height, std::size_t width) {
  if (m.height == height && m.width == width) return m;
  BinaryMask out(height, width);
  for (std::size_t r = 0; r < height; ++r) {
    const std::size_t sr = std::min(m.height - 1, r * m.height / height);
    for (std::size_t c = 0; c < width; ++c) {
      const std::size_t sc = std::min(m.width - 1, c * m.width / width);
      out.set(r, c, m.at(sr, sc));
    }
  }
  return out;
}

// k = min(100, 5% of the pixels), at least 1.
inline std::size_t default_k(std::size_t height, std::size_t width) {
  const std::size_t five_percent = height * width / 20;
  return std::max<std::size_t>(1, std::min<std::size_t>(100, five_percent));
}

// Marks the k pixels of highest signed relevance. Equal values are taken in
// row-major order.
inline BinaryMask top_k_mask(const Heatmap& h, std::size_t k) {
  const std::size_t n = h.height * h.width;
  if (k < 1 || k > n) {
    throw Error(ErrorKind::invalid_argument,
                detail::concat("k = ", k, " outside [1, ", n, "]"));
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&h](std::size_t a, std::size_t b) {
    return h.relevance[a] > h.relevance[b];
  });
  BinaryMask e(h.height, h.width);
  for (std::size_t i = 0; i < k; ++i) e.bits[order[i]] = true;
  return e;
}

inline double tki(const BinaryMask& mask, const BinaryMask& top_k, std::size_t k) {
  if (mask.height != top_k.height || mask.width != top_k.width) {
    throw Error(ErrorKind::shape_mismatch,
                detail::concat("mask ", mask.width, "x", mask.height, " vs top-k mask ",
                               top_k.width, "x", top_k.height));
  }
  if (k == 0 || top_k.count() != k) {
    throw Error(ErrorKind::invalid_argument,
                detail::concat("top-k mask has ", top_k.count(), " pixels set, expected ", k));
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < mask.bits.size(); ++i) {
    if (mask.bits[i] && top_k.bits[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(k);
}

inline double tki(const Heatmap& h, const BinaryMask& mask, std::size_t k) {
  return tki(mask, top_k_mask(h, k), k);
}

struct TkiResult {
  std::size_t k = 0;
  std::vector<double> per_image;
  double mean = 0.0;
};

inline TkiResult mean_tki(std::span<const std::pair<Heatmap, BinaryMask>> pairs, std::size_t k) {
  if (pairs.empty()) throw Error(ErrorKind::invalid_argument, "mean tki of an empty corpus");
  TkiResult out{k, {}, 0.0};
  double sum = 0.0;
  for (const auto& [h, m] : pairs) {
    out.per_image.push_back(tki(h, m, k));
    sum += out.per_image.back();
  }
  out.mean = sum / static_cast<double>(pairs.size());
  return out;
}

}  // namespace xai_triage
