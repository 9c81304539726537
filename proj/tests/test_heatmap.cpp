#include <gtest/gtest.h>

#include "xai_triage/heatmap.hpp"

using namespace xai_triage;

namespace {

GrayImage ramp(std::size_t w, std::size_t h) {
  GrayImage g(w, h);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) g.at(x, y) = static_cast<double>(x + y) / (w + h);
  return g;
}

}  // namespace

TEST(RenderHeatmap, ZeroHeatmapIsPlainGray) {
  const GrayImage g = ramp(4, 3);
  const Rgb8Image out = render_heatmap(Heatmap(3, 4, std::vector<double>(12, 0.0)), g);
  for (std::size_t y = 0; y < 3; ++y)
    for (std::size_t x = 0; x < 4; ++x) {
      const Rgb8 p = out.at(x, y);
      EXPECT_EQ(p.r, to_byte(g.at(x, y)));
      EXPECT_EQ(p.g, p.r);
      EXPECT_EQ(p.b, p.r);
    }
}

TEST(RenderHeatmap, PeakPixelAtRedEnd) {
  const GrayImage g(2, 2);  // black
  std::vector<double> r{0.0, 5.0, -2.5, 1.0};
  const Rgb8Image out = render_heatmap(Heatmap(2, 2, r), g);
  // 0.4 * gray + 0.6 * (1, 0, 0)
  EXPECT_EQ(out.at(1, 0).r, to_byte(0.6));
  EXPECT_EQ(out.at(1, 0).g, 0);
  EXPECT_EQ(out.at(1, 0).b, 0);
  // zero relevance is white in the colormap
  EXPECT_EQ(out.at(0, 0).r, to_byte(0.6));
  EXPECT_EQ(out.at(0, 0).g, to_byte(0.6));
  EXPECT_EQ(out.at(0, 0).b, to_byte(0.6));
  // -0.5 -> (0.5, 0.5, 1)
  EXPECT_EQ(out.at(0, 1).r, to_byte(0.3));
  EXPECT_EQ(out.at(0, 1).b, to_byte(0.6));
}

TEST(RenderHeatmap, Deterministic) {
  const GrayImage g = ramp(5, 5);
  std::vector<double> r(25);
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = static_cast<double>(i % 7) - 3.0;
  const Heatmap h(5, 5, r);
  EXPECT_EQ(encode_ppm(render_heatmap(h, g)), encode_ppm(render_heatmap(h, g)));
}

TEST(RenderHeatmap, DimensionMismatch) {
  EXPECT_THROW(render_heatmap(Heatmap(2, 2, std::vector<double>(4)), GrayImage(3, 2)), Error);
}

TEST(DivergingColor, Endpoints) {
  EXPECT_EQ(diverging_color(1.0), (std::array<double, 3>{1, 0, 0}));
  EXPECT_EQ(diverging_color(0.0), (std::array<double, 3>{1, 1, 1}));
  EXPECT_EQ(diverging_color(-1.0), (std::array<double, 3>{0, 0, 1}));
}
