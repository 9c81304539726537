#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

#include "xai_triage/error.hpp"
#include "xai_triage/image.hpp"
#include "xai_triage/tensor.hpp"

namespace xai_triage {

// Pixel-wise relevance field, row-major, aligned with the classified image.
struct Heatmap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> relevance;

  Heatmap() = default;
  Heatmap(std::size_t h, std::size_t w, std::vector<double> r)
      : height(h), width(w), relevance(std::move(r)) {
    if (relevance.size() != height * width) {
      throw Error(ErrorKind::shape_mismatch, "heatmap size does not match dimensions");
    }
  }

  double at(std::size_t row, std::size_t col) const { return relevance[row * width + col]; }
  double total() const {
    double s = 0.0;
    for (double v : relevance) s += v;
    return s;
  }

  friend bool operator==(const Heatmap&, const Heatmap&) = default;
};

// Collapses input-space relevance to 2D: [N] -> 1 x N, [H, W] as is,
// [C, H, W] summed over channels.
inline Heatmap heatmap_from_input_relevance(const Tensor& r) {
  switch (r.rank()) {
    case 1:
      return Heatmap(1, r.dim(0), r.data());
    case 2:
      return Heatmap(r.dim(0), r.dim(1), r.data());
    case 3: {
      std::vector<double> out(r.dim(1) * r.dim(2), 0.0);
      for (std::size_t c = 0; c < r.dim(0); ++c) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += r[c * out.size() + i];
      }
      return Heatmap(r.dim(1), r.dim(2), std::move(out));
    }
    default:
      throw Error(ErrorKind::shape_mismatch,
                  "cannot form a heatmap from input shape " + shape_string(r.shape()));
  }
}

inline constexpr double kHeatmapOverlayWeight = 0.6;

// Diverging map on [-1, 1]: blue, white at zero, red.
inline std::array<double, 3> diverging_color(double r) {
  r = std::clamp(r, -1.0, 1.0);
  if (r >= 0.0) return {1.0, 1.0 - r, 1.0 - r};
  return {1.0 + r, 1.0 + r, 1.0};
}

inline Rgb8Image render_heatmap(const Heatmap& h, const GrayImage& image) {
  if (h.height != image.height() || h.width != image.width()) {
    throw Error(ErrorKind::shape_mismatch,
                detail::concat("heatmap ", h.width, "x", h.height, " vs image ",
                               image.width(), "x", image.height()));
  }
  double peak = 0.0;
  for (double v : h.relevance) peak = std::max(peak, std::abs(v));

  Rgb8Image out{h.width, h.height, {}};
  out.pixels.reserve(h.width * h.height);
  for (std::size_t y = 0; y < h.height; ++y) {
    for (std::size_t x = 0; x < h.width; ++x) {
      const double g = image.at(x, y);
      if (peak == 0.0) {
        const auto b = to_byte(g);
        out.pixels.push_back({b, b, b});
        continue;
      }
      const auto color = diverging_color(h.at(y, x) / peak);
      double rgb[3];
      for (int c = 0; c < 3; ++c) {
        rgb[c] = (1.0 - kHeatmapOverlayWeight) * g + kHeatmapOverlayWeight * color[c];
      }
      out.pixels.push_back({to_byte(rgb[0]), to_byte(rgb[1]), to_byte(rgb[2])});
    }
  }
  return out;
}

inline Rgb8Image render_heatmap(const Heatmap& h, const Tensor& image) {
  return render_heatmap(h, tensor_to_gray(image));
}

}  // namespace xai_triage
