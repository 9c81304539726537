#pragma once

// Model file layout:
//
//   xai-triage-model 1
//   input_shape 1 24 24
//   classes broken flash healthy
//   layers 5
//   conv2d out 4 in 1 kernel 3 3 stride 1 padding 1
//   relu
//   maxpool window 2 stride 2
//   flatten
//   dense out 3 in 64
//   floats 243
//   end
//   <floats x 4 bytes, little-endian IEEE-754 binary32>
//
// The float block holds, for every dense/conv2d layer in order, its weights
// (row-major) followed by its bias.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "xai_triage/error.hpp"
#include "xai_triage/network.hpp"

namespace xai_triage {

inline constexpr std::string_view kModelMagic = "xai-triage-model";
inline constexpr std::string_view kRelevanceMagic = "xai-triage-relevance";

namespace detail {

inline void append_f32_le(std::string& out, double value) {
  const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(value));
  for (int shift = 0; shift < 32; shift += 8) {
    out.push_back(static_cast<char>((bits >> shift) & 0xFFu));
  }
}

inline double read_f32_le(const char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) {
    bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  }
  return static_cast<double>(std::bit_cast<float>(bits));
}

// Line-oriented tokenizer over the text header that remembers byte offsets.
class HeaderReader {
 public:
  explicit HeaderReader(std::string_view bytes) : bytes_(bytes) {}

  struct Line {
    std::size_t offset = 0;
    std::vector<std::string> tokens;
  };

  Line next_line() {
    if (pos_ >= bytes_.size()) throw ParseError(pos_, "unexpected end of header");
    const std::size_t end = bytes_.find('\n', pos_);
    if (end == std::string_view::npos) {
      throw ParseError(bytes_.size(), "unterminated header line");
    }
    Line line{pos_, {}};
    std::istringstream iss(std::string(bytes_.substr(pos_, end - pos_)));
    for (std::string tok; iss >> tok;) line.tokens.push_back(tok);
    pos_ = end + 1;
    return line;
  }

  std::size_t position() const noexcept { return pos_; }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

inline std::size_t parse_count(const HeaderReader::Line& line, std::size_t i) {
  if (i >= line.tokens.size()) throw ParseError(line.offset, "missing number");
  const std::string& tok = line.tokens[i];
  std::size_t used = 0;
  unsigned long long value = 0;
  try {
    value = std::stoull(tok, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != tok.size() || tok.empty() || tok[0] == '-') {
    throw ParseError(line.offset, "expected a non-negative integer, got '" + tok + "'");
  }
  return static_cast<std::size_t>(value);
}

inline void expect_key(const HeaderReader::Line& line, std::size_t i,
                       std::string_view key) {
  if (i >= line.tokens.size() || line.tokens[i] != key) {
    throw ParseError(line.offset, "expected '" + std::string(key) + "'");
  }
}

inline Layer parse_layer_line(const HeaderReader::Line& line) {
  if (line.tokens.empty()) throw ParseError(line.offset, "empty layer line");
  const auto kind = layer_kind_from_string(line.tokens[0]);
  if (!kind) throw ParseError(line.offset, "unknown layer kind '" + line.tokens[0] + "'");
  auto expect_arity = [&line](std::size_t n) {
    if (line.tokens.size() != n) throw ParseError(line.offset, "wrong field count");
  };
  switch (*kind) {
    case LayerKind::relu:
      expect_arity(1);
      return Layer::relu();
    case LayerKind::flatten:
      expect_arity(1);
      return Layer::flatten();
    case LayerKind::maxpool:
    case LayerKind::avgpool: {
      expect_arity(5);
      expect_key(line, 1, "window");
      expect_key(line, 3, "stride");
      const std::size_t window = parse_count(line, 2), stride = parse_count(line, 4);
      return *kind == LayerKind::maxpool ? Layer::maxpool(window, stride)
                                         : Layer::avgpool(window, stride);
    }
    case LayerKind::dense: {
      expect_arity(5);
      expect_key(line, 1, "out");
      expect_key(line, 3, "in");
      const std::size_t out = parse_count(line, 2), in = parse_count(line, 4);
      return Layer::dense(Tensor(Shape{out, in}), Tensor(Shape{out}));
    }
    case LayerKind::conv2d: {
      expect_arity(12);
      expect_key(line, 1, "out");
      expect_key(line, 3, "in");
      expect_key(line, 5, "kernel");
      expect_key(line, 8, "stride");
      expect_key(line, 10, "padding");
      const std::size_t out = parse_count(line, 2), in = parse_count(line, 4);
      const std::size_t kh = parse_count(line, 6), kw = parse_count(line, 7);
      return Layer::conv2d(Tensor(Shape{out, in, kh, kw}), Tensor(Shape{out}),
                           parse_count(line, 9), parse_count(line, 11));
    }
  }
  throw ParseError(line.offset, "unknown layer kind");
}

inline std::string layer_header(const Layer& layer) {
  switch (layer.kind) {
    case LayerKind::relu:
    case LayerKind::flatten:
      return to_string(layer.kind);
    case LayerKind::maxpool:
    case LayerKind::avgpool:
      return concat(to_string(layer.kind), " window ", layer.window, " stride ",
                    layer.stride);
    case LayerKind::dense:
      return concat("dense out ", layer.weights.dim(0), " in ", layer.weights.dim(1));
    case LayerKind::conv2d: {
      const auto& w = layer.weights.shape();
      return concat("conv2d out ", w[0], " in ", w[1], " kernel ", w[2], " ", w[3],
                    " stride ", layer.stride, " padding ", layer.padding);
    }
  }
  return "";
}

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

inline void write_file_bytes(const std::string& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::io, "write failed for " + path);
}

}  // namespace detail

inline std::string serialize_model(const Network& net) {
  std::string out;
  out += detail::concat(kModelMagic, " 1\n");
  out += "input_shape";
  for (std::size_t d : net.input_shape()) out += " " + std::to_string(d);
  out += "\nclasses";
  for (const auto& name : net.class_names()) {
    if (name.empty() || name.find_first_of(" \t\n") != std::string::npos) {
      throw Error(ErrorKind::validation, "class name '" + name + "' is not a single token");
    }
    out += " " + name;
  }
  out += detail::concat("\nlayers ", net.num_layers(), "\n");
  std::size_t floats = 0;
  for (const Layer& layer : net.layers()) {
    out += detail::layer_header(layer) + "\n";
    floats += layer.weights.size() + layer.bias.size();
  }
  out += detail::concat("floats ", floats, "\nend\n");
  for (const Layer& layer : net.layers()) {
    for (double v : layer.weights.values()) detail::append_f32_le(out, v);
    for (double v : layer.bias.values()) detail::append_f32_le(out, v);
  }
  return out;
}

// Parses a model; nothing is returned unless the whole file is valid.
inline Network parse_model(std::string_view bytes) {
  detail::HeaderReader reader(bytes);
  auto magic = reader.next_line();
  if (magic.tokens.size() != 2 || magic.tokens[0] != kModelMagic) {
    throw ParseError(magic.offset, "not a model file");
  }
  if (magic.tokens[1] != "1") throw ParseError(magic.offset, "unsupported version");

  auto shape_line = reader.next_line();
  detail::expect_key(shape_line, 0, "input_shape");
  Shape input_shape;
  for (std::size_t i = 1; i < shape_line.tokens.size(); ++i) {
    input_shape.push_back(detail::parse_count(shape_line, i));
  }

  auto classes_line = reader.next_line();
  detail::expect_key(classes_line, 0, "classes");
  std::vector<std::string> class_names(classes_line.tokens.begin() + 1,
                                       classes_line.tokens.end());

  auto count_line = reader.next_line();
  detail::expect_key(count_line, 0, "layers");
  const std::size_t num_layers = detail::parse_count(count_line, 1);
  std::vector<Layer> layers;
  std::vector<std::size_t> layer_offsets;
  for (std::size_t i = 0; i < num_layers; ++i) {
    auto line = reader.next_line();
    layer_offsets.push_back(line.offset);
    layers.push_back(detail::parse_layer_line(line));
  }

  auto floats_line = reader.next_line();
  detail::expect_key(floats_line, 0, "floats");
  const std::size_t floats = detail::parse_count(floats_line, 1);
  auto end_line = reader.next_line();
  if (end_line.tokens.size() != 1 || end_line.tokens[0] != "end") {
    throw ParseError(end_line.offset, "expected 'end'");
  }

  std::size_t expected = 0;
  for (const Layer& layer : layers) expected += layer.weights.size() + layer.bias.size();
  if (expected != floats) {
    throw ParseError(floats_line.offset,
                     detail::concat("layers declare ", expected, " floats, header says ",
                                    floats));
  }
  std::size_t pos = reader.position();
  const std::size_t available = bytes.size() - pos;
  if (available < floats * 4) {
    throw ParseError(bytes.size(), detail::concat("truncated weight block: need ",
                                                  floats * 4, " bytes, have ", available));
  }
  if (available > floats * 4) {
    throw ParseError(pos + floats * 4, "trailing bytes after weight block");
  }
  for (Layer& layer : layers) {
    for (double& v : layer.weights.values()) {
      v = detail::read_f32_le(bytes.data() + pos);
      pos += 4;
    }
    for (double& v : layer.bias.values()) {
      v = detail::read_f32_le(bytes.data() + pos);
      pos += 4;
    }
  }
  try {
    return Network(std::move(layers), std::move(input_shape), std::move(class_names));
  } catch (const ShapeError& e) {
    const std::size_t at = e.layer_index() < layer_offsets.size()
                               ? layer_offsets[e.layer_index()]
                               : shape_line.offset;
    throw Error(ErrorKind::validation, detail::concat("byte ", at, ": ", e.what()));
  }
}

inline void save_model(const Network& net, const std::string& path) {
  detail::write_file_bytes(path, serialize_model(net));
}

inline Network load_model(const std::string& path) {
  return parse_model(detail::read_file_bytes(path));
}

// Raw relevance dump: the same float block as the model format, after a
// minimal header.
inline std::string serialize_relevance(const Tensor& relevance) {
  std::string out = detail::concat(kRelevanceMagic, " 1\nshape");
  for (std::size_t d : relevance.shape()) out += " " + std::to_string(d);
  out += detail::concat("\nfloats ", relevance.size(), "\nend\n");
  for (double v : relevance.values()) detail::append_f32_le(out, v);
  return out;
}

inline Tensor parse_relevance(std::string_view bytes) {
  detail::HeaderReader reader(bytes);
  auto magic = reader.next_line();
  if (magic.tokens.size() != 2 || magic.tokens[0] != kRelevanceMagic) {
    throw ParseError(magic.offset, "not a relevance dump");
  }
  auto shape_line = reader.next_line();
  detail::expect_key(shape_line, 0, "shape");
  Shape shape;
  for (std::size_t i = 1; i < shape_line.tokens.size(); ++i) {
    shape.push_back(detail::parse_count(shape_line, i));
  }
  auto floats_line = reader.next_line();
  detail::expect_key(floats_line, 0, "floats");
  const std::size_t floats = detail::parse_count(floats_line, 1);
  auto end_line = reader.next_line();
  detail::expect_key(end_line, 0, "end");
  if (floats != shape_size(shape)) throw ParseError(floats_line.offset, "shape/count mismatch");
  std::size_t pos = reader.position();
  if (bytes.size() - pos != floats * 4) {
    throw ParseError(bytes.size(), "float block length mismatch");
  }
  std::vector<double> values(floats);
  for (double& v : values) {
    v = detail::read_f32_le(bytes.data() + pos);
    pos += 4;
  }
  return Tensor(std::move(shape), std::move(values));
}

}  // namespace xai_triage
