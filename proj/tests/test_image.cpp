#include <gtest/gtest.h>

#include "support.hpp"
#include "xai_triage/image.hpp"

using namespace xai_triage;
using testing_support::Rng;

namespace {

RgbImage numbered(std::size_t w, std::size_t h) {
  RgbImage img(w, h);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) img.at(x, y, c) = static_cast<double>(y * w + x) / (w * h) + c * 0.001;
  return img;
}

}  // namespace

TEST(Crop, FullBoxIsIdentity) {
  const RgbImage img = numbered(5, 4);
  EXPECT_EQ(crop(img, Box{0, 0, 5, 4}), img);
}

TEST(Crop, SinglePixel) {
  const RgbImage img = numbered(5, 4);
  const RgbImage px = crop(img, Box{3, 2, 1, 1});
  ASSERT_EQ(px.width(), 1u);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(px.at(0, 0, c), img.at(3, 2, c));
}

TEST(Crop, Composition) {
  Rng rng(1);
  const RgbImage img = numbered(20, 16);
  for (int trial = 0; trial < 100; ++trial) {
    const long w1 = static_cast<long>(rng.between(1, 20)), h1 = static_cast<long>(rng.between(1, 16));
    const Box outer{static_cast<long>(rng.between(0, 20 - w1)), static_cast<long>(rng.between(0, 16 - h1)), w1, h1};
    const long w2 = static_cast<long>(rng.between(1, w1)), h2 = static_cast<long>(rng.between(1, h1));
    const Box inner{static_cast<long>(rng.between(0, w1 - w2)), static_cast<long>(rng.between(0, h1 - h2)), w2, h2};
    const Box direct{outer.x + inner.x, outer.y + inner.y, w2, h2};
    EXPECT_EQ(crop(crop(img, outer), inner), crop(img, direct));
  }
}

TEST(Crop, OutOfBoundsNamesBoxAndImage) {
  const RgbImage img = numbered(5, 4);
  try {
    crop(img, Box{3, 0, 4, 2});
    FAIL() << "expected out_of_bounds";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::out_of_bounds);
    const std::string msg = e.what();
    EXPECT_NE(msg.find("x=3"), std::string::npos);
    EXPECT_NE(msg.find("5x4"), std::string::npos);
  }
  EXPECT_THROW(crop(img, Box{0, 0, 0, 1}), Error);
  EXPECT_THROW(crop(img, Box{-1, 0, 1, 1}), Error);
}

TEST(Pnm, RoundTrip8Bit) {
  RgbImage img(3, 2);
  for (std::size_t y = 0; y < 2; ++y)
    for (std::size_t x = 0; x < 3; ++x)
      for (std::size_t c = 0; c < 3; ++c) img.at(x, y, c) = static_cast<double>((x * 50 + y * 70 + c * 30) % 256) / 255.0;
  const RgbImage back = raster_to_rgb(parse_pnm(encode_ppm(img)));
  for (std::size_t i = 0; i < img.data().size(); ++i) EXPECT_NEAR(back.data()[i], img.data()[i], 1e-12);

  GrayImage g(2, 2, 0.0);
  g.at(1, 1) = 1.0;
  const RgbImage gb = raster_to_rgb(parse_pnm(encode_pgm(g)));
  EXPECT_EQ(gb.at(1, 1, 2), 1.0);
  EXPECT_EQ(gb.at(0, 1, 0), 0.0);
}

TEST(Pnm, SixteenBitAndComments) {
  std::string bytes = "P5\n# comment\n2 1\n65535\n";
  bytes += std::string("\xff\xff\x80\x00", 4);
  const PnmRaster r = parse_pnm(bytes);
  EXPECT_EQ(r.channels, 1u);
  EXPECT_EQ(r.samples, (std::vector<std::uint16_t>{65535, 32768}));
  const RgbImage img = raster_to_rgb(r);
  EXPECT_EQ(img.at(0, 0, 0), 1.0);
  EXPECT_NEAR(img.at(1, 0, 1), 32768.0 / 65535.0, 1e-15);
}

TEST(Pnm, Errors) {
  EXPECT_THROW(parse_pnm("P3\n1 1\n255\n0 0 0"), ParseError);
  EXPECT_THROW(parse_pnm("P6\n2 2\n255\n\x01"), ParseError);
  EXPECT_THROW(parse_pnm("P5\n0 2\n255\n"), ParseError);
  EXPECT_THROW(parse_pnm("P5\n1 1\n100\n\xff"), ParseError);
  EXPECT_THROW(read_image("/nonexistent/image.ppm"), Error);
}

TEST(Resize, BilinearKeepsConstants) {
  const RgbImage c(7, 5, 0.25);
  const RgbImage r = resize_bilinear(c, 13, 3);
  EXPECT_EQ(r.width(), 13u);
  for (double v : r.data()) EXPECT_NEAR(v, 0.25, 1e-15);
  EXPECT_EQ(resize_bilinear(numbered(4, 4), 4, 4), numbered(4, 4));
}

TEST(ImageTensor, GrayRoundTrip) {
  GrayImage g(3, 2);
  g.at(2, 1) = 0.5;
  const Tensor t = image_to_tensor(to_rgb(g), 1);
  EXPECT_EQ(t.shape(), (Shape{1, 2, 3}));
  const GrayImage back = tensor_to_gray(t);
  for (std::size_t i = 0; i < g.data().size(); ++i) EXPECT_NEAR(back.data()[i], g.data()[i], 1e-15);
}
