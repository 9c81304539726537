#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "xai_triage/error.hpp"
#include "xai_triage/model_io.hpp"
#include "xai_triage/tensor.hpp"

namespace xai_triage {

// Pixel rectangle; (x, y) is the top-left corner.
struct Box {
  long x = 0;
  long y = 0;
  long width = 0;
  long height = 0;

  friend bool operator==(const Box&, const Box&) = default;
};

inline std::string to_string(const Box& b) {
  return detail::concat("(x=", b.x, ", y=", b.y, ", w=", b.width, ", h=", b.height, ")");
}

inline bool box_within(const Box& b, std::size_t width, std::size_t height) {
  return b.width >= 1 && b.height >= 1 && b.x >= 0 && b.y >= 0 &&
         b.x + b.width <= static_cast<long>(width) &&
         b.y + b.height <= static_cast<long>(height);
}

// Interleaved image with values in [0, 1].
template <std::size_t Channels>
class Image {
 public:
  static constexpr std::size_t channels = Channels;

  Image() = default;
  Image(std::size_t width, std::size_t height, double fill = 0.0)
      : width_(width), height_(height), data_(width * height * Channels, clamp01(fill)) {}
  Image(std::size_t width, std::size_t height, std::vector<double> data)
      : width_(width), height_(height), data_(std::move(data)) {
    if (data_.size() != width_ * height_ * Channels) {
      throw Error(ErrorKind::shape_mismatch,
                  detail::concat("image ", width_, "x", height_, "x", Channels,
                                 " given ", data_.size(), " values"));
    }
    for (double& v : data_) v = clamp01(v);
  }

  std::size_t width() const noexcept { return width_; }
  std::size_t height() const noexcept { return height_; }
  std::size_t pixel_count() const noexcept { return width_ * height_; }
  const std::vector<double>& data() const noexcept { return data_; }

  double at(std::size_t x, std::size_t y, std::size_t c = 0) const {
    return data_[(y * width_ + x) * Channels + c];
  }
  double& at(std::size_t x, std::size_t y, std::size_t c = 0) {
    return data_[(y * width_ + x) * Channels + c];
  }

  friend bool operator==(const Image&, const Image&) = default;

  static double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

 private:
  std::size_t width_ = 0;
  std::size_t height_ = 0;
  std::vector<double> data_;
};

using GrayImage = Image<1>;
using RgbImage = Image<3>;

// Cropping operator: output pixel (u, v) is input pixel (x + u, y + v).
template <std::size_t C>
Image<C> crop(const Image<C>& image, const Box& box) {
  if (!box_within(box, image.width(), image.height())) {
    throw Error(ErrorKind::out_of_bounds,
                detail::concat("box ", to_string(box), " outside image ", image.width(),
                               "x", image.height()));
  }
  Image<C> out(static_cast<std::size_t>(box.width), static_cast<std::size_t>(box.height));
  for (std::size_t v = 0; v < out.height(); ++v) {
    for (std::size_t u = 0; u < out.width(); ++u) {
      for (std::size_t c = 0; c < C; ++c) {
        out.at(u, v, c) = image.at(static_cast<std::size_t>(box.x) + u,
                                   static_cast<std::size_t>(box.y) + v, c);
      }
    }
  }
  return out;
}

inline GrayImage to_luminance(const RgbImage& rgb) {
  GrayImage out(rgb.width(), rgb.height());
  for (std::size_t y = 0; y < rgb.height(); ++y) {
    for (std::size_t x = 0; x < rgb.width(); ++x) {
      out.at(x, y) = GrayImage::clamp01(0.299 * rgb.at(x, y, 0) + 0.587 * rgb.at(x, y, 1) +
                                        0.114 * rgb.at(x, y, 2));
    }
  }
  return out;
}

inline RgbImage to_rgb(const GrayImage& gray) {
  RgbImage out(gray.width(), gray.height());
  for (std::size_t y = 0; y < gray.height(); ++y) {
    for (std::size_t x = 0; x < gray.width(); ++x) {
      for (std::size_t c = 0; c < 3; ++c) out.at(x, y, c) = gray.at(x, y);
    }
  }
  return out;
}

// 3x3 mean filter with replicated borders.
template <std::size_t C>
Image<C> box_blur(const Image<C>& image, int passes = 1) {
  Image<C> current = image;
  const long w = static_cast<long>(image.width()), h = static_cast<long>(image.height());
  for (int pass = 0; pass < passes; ++pass) {
    Image<C> next(image.width(), image.height());
    for (long y = 0; y < h; ++y) {
      for (long x = 0; x < w; ++x) {
        for (std::size_t c = 0; c < C; ++c) {
          double acc = 0.0;
          for (long dy = -1; dy <= 1; ++dy) {
            for (long dx = -1; dx <= 1; ++dx) {
              const long sx = std::clamp(x + dx, 0L, w - 1), sy = std::clamp(y + dy, 0L, h - 1);
              acc += current.at(static_cast<std::size_t>(sx), static_cast<std::size_t>(sy), c);
            }
          }
          next.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y), c) = acc / 9.0;
        }
      }
    }
    current = std::move(next);
  }
  return current;
}

// Bilinear resampling with pixel-center alignment. Same-size input is
// returned unchanged.
template <std::size_t C>
Image<C> resize_bilinear(const Image<C>& image, std::size_t width, std::size_t height) {
  if (width == image.width() && height == image.height()) return image;
  if (width == 0 || height == 0 || image.pixel_count() == 0) {
    throw Error(ErrorKind::invalid_argument, "cannot resize to or from an empty image");
  }
  Image<C> out(width, height);
  const double sx = static_cast<double>(image.width()) / static_cast<double>(width);
  const double sy = static_cast<double>(image.height()) / static_cast<double>(height);
  for (std::size_t y = 0; y < height; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0,
                                 static_cast<double>(image.height() - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, image.height() - 1);
    const double ty = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < width; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0,
                                   static_cast<double>(image.width() - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, image.width() - 1);
      const double tx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < C; ++c) {
        const double top = image.at(x0, y0, c) * (1 - tx) + image.at(x1, y0, c) * tx;
        const double bottom = image.at(x0, y1, c) * (1 - tx) + image.at(x1, y1, c) * tx;
        out.at(x, y, c) = top * (1 - ty) + bottom * ty;
      }
    }
  }
  return out;
}

// C x H x W tensor for the classifier: 1 channel uses luminance, 3 uses RGB.
inline Tensor image_to_tensor(const RgbImage& image, std::size_t tensor_channels) {
  if (tensor_channels != 1 && tensor_channels != 3) {
    throw Error(ErrorKind::invalid_argument, "classifier input must have 1 or 3 channels");
  }
  Tensor out(Shape{tensor_channels, image.height(), image.width()});
  const GrayImage gray = tensor_channels == 1 ? to_luminance(image) : GrayImage{};
  for (std::size_t y = 0; y < image.height(); ++y) {
    for (std::size_t x = 0; x < image.width(); ++x) {
      if (tensor_channels == 1) {
        out.at(0, y, x) = gray.at(x, y);
      } else {
        for (std::size_t c = 0; c < 3; ++c) out.at(c, y, x) = image.at(x, y, c);
      }
    }
  }
  return out;
}

inline GrayImage tensor_to_gray(const Tensor& t) {
  if (t.rank() != 3 || (t.dim(0) != 1 && t.dim(0) != 3)) {
    throw Error(ErrorKind::shape_mismatch,
                "expected a 1- or 3-channel image tensor, got " + shape_string(t.shape()));
  }
  GrayImage out(t.dim(2), t.dim(1));
  for (std::size_t y = 0; y < t.dim(1); ++y) {
    for (std::size_t x = 0; x < t.dim(2); ++x) {
      out.at(x, y) = t.dim(0) == 1 ? GrayImage::clamp01(t.at(0, y, x))
                                   : GrayImage::clamp01(0.299 * t.at(0, y, x) +
                                                        0.587 * t.at(1, y, x) +
                                                        0.114 * t.at(2, y, x));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Binary PNM (P5 / P6) codec.

struct PnmRaster {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;  // 1 for P5, 3 for P6
  std::uint32_t maxval = 255;
  std::vector<std::uint16_t> samples;
};

inline PnmRaster parse_pnm(std::string_view bytes) {
  std::size_t pos = 0;
  auto skip_space_and_comments = [&] {
    while (pos < bytes.size()) {
      const char ch = bytes[pos];
      if (ch == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r') {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_number = [&]() -> std::size_t {
    skip_space_and_comments();
    const std::size_t start = pos;
    std::size_t value = 0;
    while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') {
      value = value * 10 + static_cast<std::size_t>(bytes[pos] - '0');
      if (value > (1u << 30)) throw ParseError(start, "PNM header value too large");
      ++pos;
    }
    if (pos == start) throw ParseError(start, "expected a number in PNM header");
    return value;
  };

  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw ParseError(0, "not a binary PGM/PPM (P5/P6) image");
  }
  PnmRaster raster;
  raster.channels = bytes[1] == '5' ? 1 : 3;
  pos = 2;
  raster.width = read_number();
  raster.height = read_number();
  const std::size_t maxval = read_number();
  if (raster.width == 0 || raster.height == 0) throw ParseError(pos, "empty image");
  if (maxval < 1 || maxval > 65535) throw ParseError(pos, "maxval out of range");
  raster.maxval = static_cast<std::uint32_t>(maxval);
  if (pos >= bytes.size()) throw ParseError(pos, "missing raster");
  ++pos;  // single whitespace before the raster
  const std::size_t sample_bytes = maxval > 255 ? 2 : 1;
  const std::size_t count = raster.width * raster.height * raster.channels;
  if (bytes.size() - pos < count * sample_bytes) {
    throw ParseError(bytes.size(), "truncated raster");
  }
  raster.samples.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t v = static_cast<unsigned char>(bytes[pos++]);
    if (sample_bytes == 2) v = (v << 8) | static_cast<unsigned char>(bytes[pos++]);
    if (v > maxval) throw ParseError(pos - sample_bytes, "sample exceeds maxval");
    raster.samples[i] = static_cast<std::uint16_t>(v);
  }
  return raster;
}

inline RgbImage raster_to_rgb(const PnmRaster& raster) {
  RgbImage out(raster.width, raster.height);
  const double scale = static_cast<double>(raster.maxval);
  for (std::size_t y = 0; y < raster.height; ++y) {
    for (std::size_t x = 0; x < raster.width; ++x) {
      const std::size_t base = (y * raster.width + x) * raster.channels;
      for (std::size_t c = 0; c < 3; ++c) {
        const std::size_t src = raster.channels == 3 ? base + c : base;
        out.at(x, y, c) = raster.samples[src] / scale;
      }
    }
  }
  return out;
}

inline RgbImage read_image(const std::string& path) {
  return raster_to_rgb(parse_pnm(detail::read_file_bytes(path)));
}

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

struct Rgb8 {
  std::uint8_t r = 0, g = 0, b = 0;
  friend bool operator==(const Rgb8&, const Rgb8&) = default;
};

// 8-bit RGB raster, the output of heatmap rendering.
struct Rgb8Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<Rgb8> pixels;

  const Rgb8& at(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }
  friend bool operator==(const Rgb8Image&, const Rgb8Image&) = default;
};

inline std::string encode_ppm(const Rgb8Image& image) {
  std::string out = detail::concat("P6\n", image.width, " ", image.height, "\n255\n");
  for (const Rgb8& p : image.pixels) {
    out.push_back(static_cast<char>(p.r));
    out.push_back(static_cast<char>(p.g));
    out.push_back(static_cast<char>(p.b));
  }
  return out;
}

inline std::string encode_ppm(const RgbImage& image) {
  Rgb8Image bytes{image.width(), image.height(), {}};
  for (std::size_t y = 0; y < image.height(); ++y) {
    for (std::size_t x = 0; x < image.width(); ++x) {
      bytes.pixels.push_back({to_byte(image.at(x, y, 0)), to_byte(image.at(x, y, 1)),
                              to_byte(image.at(x, y, 2))});
    }
  }
  return encode_ppm(bytes);
}

inline std::string encode_pgm(const GrayImage& image) {
  std::string out = detail::concat("P5\n", image.width(), " ", image.height(), "\n255\n");
  for (double v : image.data()) out.push_back(static_cast<char>(to_byte(v)));
  return out;
}

inline void write_ppm(const std::string& path, const RgbImage& image) {
  detail::write_file_bytes(path, encode_ppm(image));
}

inline void write_pgm(const std::string& path, const GrayImage& image) {
  detail::write_file_bytes(path, encode_pgm(image));
}

}  // namespace xai_triage
