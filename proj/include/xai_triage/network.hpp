#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "xai_triage/error.hpp"
#include "xai_triage/tensor.hpp"

namespace xai_triage {

enum class LayerKind { dense, conv2d, relu, maxpool, avgpool, flatten };

inline const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::avgpool: return "avgpool";
    case LayerKind::flatten: return "flatten";
  }
  return "unknown";
}

inline std::optional<LayerKind> layer_kind_from_string(const std::string& name) {
  for (auto kind : {LayerKind::dense, LayerKind::conv2d, LayerKind::relu,
                    LayerKind::maxpool, LayerKind::avgpool, LayerKind::flatten}) {
    if (name == to_string(kind)) return kind;
  }
  return std::nullopt;
}

// One stage of the classifier.
//
// dense:   weights out x in, bias out; input must be rank 1.
// conv2d:  weights out_ch x in_ch x kH x kW, bias out_ch; input C x H x W,
//          zero padding on every side, cross-correlation (no kernel flip).
// maxpool/avgpool: square `window`, `stride`; input C x H x W, no padding.
struct Layer {
  LayerKind kind = LayerKind::relu;
  Tensor weights;
  Tensor bias;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t window = 0;

  static Layer dense(Tensor weights, Tensor bias) {
    return Layer{LayerKind::dense, std::move(weights), std::move(bias), 1, 0, 0};
  }
  static Layer conv2d(Tensor weights, Tensor bias, std::size_t stride = 1,
                      std::size_t padding = 0) {
    return Layer{LayerKind::conv2d, std::move(weights), std::move(bias), stride,
                 padding, 0};
  }
  static Layer relu() { return Layer{LayerKind::relu, {}, {}, 1, 0, 0}; }
  static Layer flatten() { return Layer{LayerKind::flatten, {}, {}, 1, 0, 0}; }
  static Layer maxpool(std::size_t window, std::size_t stride) {
    return Layer{LayerKind::maxpool, {}, {}, stride, 0, window};
  }
  static Layer avgpool(std::size_t window, std::size_t stride) {
    return Layer{LayerKind::avgpool, {}, {}, stride, 0, window};
  }

  bool has_parameters() const {
    return kind == LayerKind::dense || kind == LayerKind::conv2d;
  }

  friend bool operator==(const Layer&, const Layer&) = default;
};

inline std::size_t conv_output_extent(std::size_t extent, std::size_t kernel,
                                      std::size_t stride, std::size_t padding) {
  return (extent + 2 * padding - kernel) / stride + 1;
}

// Output shape of `layer` for `input`; throws ShapeError tagged with `index`.
inline Shape layer_output_shape(const Layer& layer, const Shape& input,
                                std::size_t index) {
  auto fail = [index](const std::string& what) -> Shape {
    throw ShapeError(index, what);
  };
  switch (layer.kind) {
    case LayerKind::relu:
      return input;
    case LayerKind::flatten:
      return Shape{shape_size(input)};
    case LayerKind::dense: {
      if (layer.weights.rank() != 2) return fail("dense weights must be rank 2");
      const std::size_t out = layer.weights.dim(0), in = layer.weights.dim(1);
      if (input.size() != 1 || input[0] != in) {
        return fail(detail::concat("dense expects input [", in, "], got ",
                                   shape_string(input)));
      }
      if (layer.bias.shape() != Shape{out}) {
        return fail(detail::concat("dense bias must be [", out, "]"));
      }
      return Shape{out};
    }
    case LayerKind::conv2d: {
      if (layer.weights.rank() != 4) return fail("conv2d weights must be rank 4");
      const auto& w = layer.weights.shape();
      if (input.size() != 3 || input[0] != w[1]) {
        return fail(detail::concat("conv2d expects ", w[1],
                                   " input channels, got ", shape_string(input)));
      }
      if (layer.bias.shape() != Shape{w[0]}) {
        return fail(detail::concat("conv2d bias must be [", w[0], "]"));
      }
      if (layer.stride < 1) return fail("stride must be >= 1");
      if (w[2] == 0 || w[3] == 0) return fail("empty conv2d kernel");
      if (input[1] + 2 * layer.padding < w[2] ||
          input[2] + 2 * layer.padding < w[3]) {
        return fail("conv2d kernel larger than padded input");
      }
      return Shape{w[0],
                   conv_output_extent(input[1], w[2], layer.stride, layer.padding),
                   conv_output_extent(input[2], w[3], layer.stride, layer.padding)};
    }
    case LayerKind::maxpool:
    case LayerKind::avgpool: {
      if (input.size() != 3) {
        return fail("pooling expects C x H x W input, got " + shape_string(input));
      }
      if (layer.window < 1 || layer.stride < 1) {
        return fail("pool window and stride must be >= 1");
      }
      if (input[1] < layer.window || input[2] < layer.window) {
        return fail("pool window larger than input");
      }
      return Shape{input[0], conv_output_extent(input[1], layer.window, layer.stride, 0),
                   conv_output_extent(input[2], layer.window, layer.stride, 0)};
    }
  }
  return fail("unknown layer kind");
}

inline std::vector<std::string> default_class_names(std::size_t num_classes) {
  if (num_classes == 3) return {"broken", "flash", "healthy"};
  std::vector<std::string> names;
  for (std::size_t i = 0; i < num_classes; ++i) {
    names.push_back("class" + std::to_string(i));
  }
  return names;
}

// Rounds to the nearest 32-bit float, the precision at which weights are
// stored on disk.
inline double to_f32_precision(double v) {
  return static_cast<double>(static_cast<float>(v));
}

// Immutable feed-forward classifier. Construction validates that all layer
// shapes compose and that the last layer is a dense layer with one output per
// class. Parameters are held at 32-bit precision so that save/load is exact.
class Network {
 public:
  Network(std::vector<Layer> layers, Shape input_shape,
          std::vector<std::string> class_names = {})
      : layers_(std::move(layers)), input_shape_(std::move(input_shape)) {
    if (layers_.empty()) {
      throw Error(ErrorKind::validation, "network has no layers");
    }
    const Layer& last = layers_.back();
    if (last.kind != LayerKind::dense) {
      throw ShapeError(layers_.size() - 1, "final layer must be dense");
    }
    num_classes_ = last.weights.rank() == 2 ? last.weights.dim(0) : 0;
    if (num_classes_ < 1) {
      throw ShapeError(layers_.size() - 1, "final layer has no outputs");
    }
    class_names_ = class_names.empty() ? default_class_names(num_classes_)
                                       : std::move(class_names);
    if (class_names_.size() != num_classes_) {
      throw Error(ErrorKind::validation,
                  detail::concat(class_names_.size(), " class names for ",
                                 num_classes_, " classes"));
    }
    shapes_.push_back(input_shape_);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      shapes_.push_back(layer_output_shape(layers_[i], shapes_.back(), i));
      for (double& v : layers_[i].weights.values()) v = to_f32_precision(v);
      for (double& v : layers_[i].bias.values()) v = to_f32_precision(v);
      if (!layers_[i].weights.all_finite() || !layers_[i].bias.all_finite()) {
        throw ShapeError(i, "non-finite parameters");
      }
    }
  }

  const std::vector<Layer>& layers() const noexcept { return layers_; }
  const Layer& layer(std::size_t i) const { return layers_.at(i); }
  std::size_t num_layers() const noexcept { return layers_.size(); }
  const Shape& input_shape() const noexcept { return input_shape_; }
  std::size_t num_classes() const noexcept { return num_classes_; }
  const std::vector<std::string>& class_names() const noexcept { return class_names_; }

  // Input shape of layer i; i == num_layers() gives the logits shape.
  const Shape& shape_before(std::size_t i) const { return shapes_.at(i); }

  std::size_t penultimate_width() const { return layers_.back().weights.dim(1); }

  std::optional<std::size_t> class_index(const std::string& name) const {
    for (std::size_t i = 0; i < class_names_.size(); ++i) {
      if (class_names_[i] == name) return i;
    }
    return std::nullopt;
  }

  Network with_layer(std::size_t i, Layer layer) const {
    std::vector<Layer> layers = layers_;
    layers.at(i) = std::move(layer);
    return Network(std::move(layers), input_shape_, class_names_);
  }

  friend bool operator==(const Network& a, const Network& b) {
    return a.layers_ == b.layers_ && a.input_shape_ == b.input_shape_ &&
           a.class_names_ == b.class_names_;
  }

 private:
  std::vector<Layer> layers_;
  Shape input_shape_;
  std::size_t num_classes_ = 0;
  std::vector<std::string> class_names_;
  std::vector<Shape> shapes_;
};

namespace detail {

inline Tensor dense_forward(const Layer& layer, const Tensor& input) {
  const std::size_t out = layer.weights.dim(0), in = layer.weights.dim(1);
  Tensor result(Shape{out});
  const auto w = layer.weights.values();
  for (std::size_t k = 0; k < out; ++k) {
    double acc = layer.bias[k];
    for (std::size_t j = 0; j < in; ++j) acc += w[k * in + j] * input[j];
    result[k] = acc;
  }
  return result;
}

inline Tensor conv2d_forward(const Layer& layer, const Tensor& input,
                             const Shape& out_shape) {
  const auto& w = layer.weights.shape();
  const std::size_t in_ch = w[1], kh = w[2], kw = w[3];
  const std::size_t height = input.dim(1), width = input.dim(2);
  const long pad = static_cast<long>(layer.padding);
  Tensor result(out_shape);
  for (std::size_t o = 0; o < out_shape[0]; ++o) {
    for (std::size_t oy = 0; oy < out_shape[1]; ++oy) {
      for (std::size_t ox = 0; ox < out_shape[2]; ++ox) {
        double acc = layer.bias[o];
        for (std::size_t c = 0; c < in_ch; ++c) {
          for (std::size_t ky = 0; ky < kh; ++ky) {
            const long y = static_cast<long>(oy * layer.stride + ky) - pad;
            if (y < 0 || y >= static_cast<long>(height)) continue;
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const long x = static_cast<long>(ox * layer.stride + kx) - pad;
              if (x < 0 || x >= static_cast<long>(width)) continue;
              acc += layer.weights[((o * in_ch + c) * kh + ky) * kw + kx] *
                     input.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x));
            }
          }
        }
        result.at(o, oy, ox) = acc;
      }
    }
  }
  return result;
}

inline Tensor pool_forward(const Layer& layer, const Tensor& input,
                           const Shape& out_shape) {
  Tensor result(out_shape);
  const double area = static_cast<double>(layer.window * layer.window);
  for (std::size_t c = 0; c < out_shape[0]; ++c) {
    for (std::size_t oy = 0; oy < out_shape[1]; ++oy) {
      for (std::size_t ox = 0; ox < out_shape[2]; ++ox) {
        double best = input.at(c, oy * layer.stride, ox * layer.stride);
        double total = 0.0;
        for (std::size_t dy = 0; dy < layer.window; ++dy) {
          for (std::size_t dx = 0; dx < layer.window; ++dx) {
            const double v = input.at(c, oy * layer.stride + dy, ox * layer.stride + dx);
            best = std::max(best, v);
            total += v;
          }
        }
        result.at(c, oy, ox) = layer.kind == LayerKind::maxpool ? best : total / area;
      }
    }
  }
  return result;
}

}  // namespace detail

// Applies one layer. `index` only labels errors.
inline Tensor apply_layer(const Layer& layer, const Tensor& input,
                          std::size_t index = 0) {
  const Shape out_shape = layer_output_shape(layer, input.shape(), index);
  switch (layer.kind) {
    case LayerKind::relu: {
      Tensor out = input;
      for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
      return out;
    }
    case LayerKind::flatten:
      return input.reshaped(out_shape);
    case LayerKind::dense:
      return detail::dense_forward(layer, input);
    case LayerKind::conv2d:
      return detail::conv2d_forward(layer, input, out_shape);
    case LayerKind::maxpool:
    case LayerKind::avgpool:
      return detail::pool_forward(layer, input, out_shape);
  }
  throw ShapeError(index, "unknown layer kind");
}

// Inputs seen by every layer, followed by the logits.
struct ActivationTrace {
  std::vector<Tensor> per_layer_inputs;

  const Tensor& logits() const { return per_layer_inputs.back(); }
  // Activation feeding the final (dense) layer.
  const Tensor& penultimate() const {
    return per_layer_inputs[per_layer_inputs.size() - 2];
  }
};

struct ForwardResult {
  Tensor logits;
  std::optional<ActivationTrace> trace;
};

inline ForwardResult forward(const Network& net, const Tensor& input,
                             bool keep_trace = false) {
  if (input.shape() != net.input_shape()) {
    throw ShapeError(0, detail::concat("network input must be ",
                                       shape_string(net.input_shape()), ", got ",
                                       shape_string(input.shape())));
  }
  ActivationTrace trace;
  Tensor current = input;
  for (std::size_t i = 0; i < net.num_layers(); ++i) {
    Tensor next = apply_layer(net.layer(i), current, i);
    if (keep_trace) trace.per_layer_inputs.push_back(std::move(current));
    current = std::move(next);
  }
  if (!keep_trace) return {std::move(current), std::nullopt};
  trace.per_layer_inputs.push_back(current);
  return {std::move(current), std::move(trace)};
}

struct Prediction {
  std::size_t label = 0;
  Tensor logits;
};

inline Prediction predict_class(const Network& net, const Tensor& input) {
  Tensor logits = forward(net, input).logits;
  return {argmax(logits.values()), std::move(logits)};
}

}  // namespace xai_triage
