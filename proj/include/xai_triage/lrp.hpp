#pragma once

// Layer-wise relevance propagation.
//
// For a dense or conv2d layer with contributions z_jk of input j to output k,
// relevance flows down as
//
//   R_j = sum_k z_jk / (sum_j z_jk + b_k) * R_k
//
// where the bias share of the denominator is absorbed rather than
// redistributed. The rules below only change how z_jk is formed and how the
// denominator is stabilized.

#include <cmath>
#include <cstddef>
#include <optional>
#include <vector>

#include "xai_triage/error.hpp"
#include "xai_triage/heatmap.hpp"
#include "xai_triage/network.hpp"
#include "xai_triage/tensor.hpp"

namespace xai_triage {

enum class RuleKind { basic, epsilon, gamma, zb };

inline const char* to_string(RuleKind kind) {
  switch (kind) {
    case RuleKind::basic: return "basic";
    case RuleKind::epsilon: return "epsilon";
    case RuleKind::gamma: return "gamma";
    case RuleKind::zb: return "zb";
  }
  return "unknown";
}

struct Rule {
  RuleKind kind = RuleKind::basic;
  // Added to |denominator| (sign preserving) for every rule kind.
  double epsilon = 0.0;
  // Epsilon rule only: adds this multiple of the standard deviation of the
  // layer's denominator magnitudes to `epsilon`.
  double epsilon_std_scale = 0.0;
  double gamma = 0.0;
  // zB input bounds.
  double low = 0.0;
  double high = 1.0;

  static Rule basic() { return {}; }
  static Rule eps(double epsilon, double std_scale = 0.0) {
    return {RuleKind::epsilon, epsilon, std_scale, 0.0, 0.0, 1.0};
  }
  static Rule gamma_rule(double gamma, double stabilizer = 0.0) {
    return {RuleKind::gamma, stabilizer, 0.0, gamma, 0.0, 1.0};
  }
  static Rule zb(double low, double high, double stabilizer = 0.0) {
    return {RuleKind::zb, stabilizer, 0.0, 0.0, low, high};
  }

  void validate() const {
    if (!(epsilon >= 0.0) || !(epsilon_std_scale >= 0.0)) {
      throw Error(ErrorKind::invalid_argument, "rule stabilizer must be >= 0");
    }
    if (!(gamma >= 0.0)) throw Error(ErrorKind::invalid_argument, "gamma must be >= 0");
    if (kind == RuleKind::zb && !(low < high)) {
      throw Error(ErrorKind::invalid_argument, "zB rule needs low < high");
    }
  }

  friend bool operator==(const Rule&, const Rule&) = default;
};

// One rule per layer kind, plus an optional override for the first
// parametric (input-adjacent) layer, the only place zB is allowed.
struct RuleConfig {
  std::optional<Rule> first_layer;
  Rule conv;
  Rule dense;
  Rule avgpool;

  static RuleConfig basic() { return {}; }

  // zB on the first conv/dense layer, gamma 0.25 on the other conv layers,
  // adaptive epsilon on dense layers.
  static RuleConfig composite(double low = 0.0, double high = 1.0) {
    RuleConfig cfg;
    cfg.first_layer = Rule::zb(low, high, 1e-9);
    cfg.conv = Rule::gamma_rule(0.25, 1e-9);
    cfg.dense = Rule::eps(1e-6, 0.25);
    cfg.avgpool = Rule::eps(1e-9);
    return cfg;
  }

  void validate() const {
    for (const Rule* r : {&conv, &dense, &avgpool}) {
      r->validate();
      if (r->kind == RuleKind::zb) {
        throw Error(ErrorKind::invalid_argument,
                    "zB may only be assigned to the first layer");
      }
    }
    if (avgpool.kind == RuleKind::gamma) {
      throw Error(ErrorKind::invalid_argument, "avgpool takes basic or epsilon rules");
    }
    if (first_layer) first_layer->validate();
  }

  const Rule& rule_for(const Network& net, std::size_t index) const {
    const Layer& layer = net.layer(index);
    if (first_layer && layer.has_parameters()) {
      std::size_t first = 0;
      while (!net.layer(first).has_parameters()) ++first;
      if (first == index) return *first_layer;
    }
    switch (layer.kind) {
      case LayerKind::conv2d: return conv;
      case LayerKind::dense: return dense;
      default: return avgpool;
    }
  }
};

namespace detail {

inline void check_relevance_shape(const Layer& layer, const Tensor& input,
                                  const Tensor& r_upper, std::size_t index) {
  const Shape out = layer_output_shape(layer, input.shape(), index);
  if (r_upper.shape() != out) {
    throw ShapeError(index, detail::concat("upper relevance ", shape_string(r_upper.shape()),
                                           " does not match layer output ", shape_string(out)));
  }
}

// s_k = R_k / stabilized(z_k). Zero relevance never needs a denominator.
inline Tensor relevance_ratios(const Tensor& z, const Tensor& r_upper, const Rule& rule,
                               std::size_t index) {
  double eps = rule.epsilon;
  if (rule.kind == RuleKind::epsilon && rule.epsilon_std_scale > 0.0 && z.size() > 0) {
    double mean = 0.0;
    for (double v : z.values()) mean += std::abs(v);
    mean /= static_cast<double>(z.size());
    double var = 0.0;
    for (double v : z.values()) var += (std::abs(v) - mean) * (std::abs(v) - mean);
    eps += rule.epsilon_std_scale * std::sqrt(var / static_cast<double>(z.size()));
  }
  Tensor s(z.shape());
  for (std::size_t k = 0; k < z.size(); ++k) {
    if (r_upper[k] == 0.0) continue;
    const double denom = z[k] + (z[k] >= 0.0 ? eps : -eps);
    if (denom == 0.0) throw DegenerateDenominatorError(index);
    s[k] = r_upper[k] / denom;
  }
  return s;
}

inline Layer with_weights(const Layer& layer, Tensor weights, Tensor bias) {
  Layer out = layer;
  out.weights = std::move(weights);
  out.bias = std::move(bias);
  return out;
}

template <typename F>
Tensor map_values(const Tensor& t, F f) {
  Tensor out = t;
  for (double& v : out.values()) v = f(v);
  return out;
}

// Adjoint of the linear part of a dense/conv2d layer: c = W^T s.
inline Tensor linear_transpose(const Layer& layer, const Tensor& s, const Shape& input_shape) {
  Tensor c(input_shape);
  if (layer.kind == LayerKind::dense) {
    const std::size_t out = layer.weights.dim(0), in = layer.weights.dim(1);
    for (std::size_t k = 0; k < out; ++k) {
      if (s[k] == 0.0) continue;
      for (std::size_t j = 0; j < in; ++j) c[j] += layer.weights[k * in + j] * s[k];
    }
    return c;
  }
  const auto& w = layer.weights.shape();
  const std::size_t in_ch = w[1], kh = w[2], kw = w[3];
  const long height = static_cast<long>(input_shape[1]), width = static_cast<long>(input_shape[2]);
  const long pad = static_cast<long>(layer.padding);
  for (std::size_t o = 0; o < s.dim(0); ++o) {
    for (std::size_t oy = 0; oy < s.dim(1); ++oy) {
      for (std::size_t ox = 0; ox < s.dim(2); ++ox) {
        const double sk = s.at(o, oy, ox);
        if (sk == 0.0) continue;
        for (std::size_t ch = 0; ch < in_ch; ++ch) {
          for (std::size_t ky = 0; ky < kh; ++ky) {
            const long y = static_cast<long>(oy * layer.stride + ky) - pad;
            if (y < 0 || y >= height) continue;
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const long x = static_cast<long>(ox * layer.stride + kx) - pad;
              if (x < 0 || x >= width) continue;
              c.at(ch, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) +=
                  layer.weights[((o * in_ch + ch) * kh + ky) * kw + kx] * sk;
            }
          }
        }
      }
    }
  }
  return c;
}

inline Tensor propagate_linear(const Layer& layer, const Tensor& input, const Tensor& r_upper,
                               const Rule& rule, std::size_t index) {
  rule.validate();
  check_relevance_shape(layer, input, r_upper, index);
  const auto pos = [](double v) { return v > 0.0 ? v : 0.0; };
  const auto neg = [](double v) { return v < 0.0 ? v : 0.0; };

  if (rule.kind == RuleKind::zb) {
    const Tensor zero_bias(layer.bias.shape());
    const Layer plain = with_weights(layer, layer.weights, zero_bias);
    const Layer plus = with_weights(layer, map_values(layer.weights, pos), zero_bias);
    const Layer minus = with_weights(layer, map_values(layer.weights, neg), zero_bias);
    const Tensor ones(input.shape(), 1.0);
    const Tensor zx = apply_layer(plain, input, index);
    const Tensor zl = apply_layer(plus, ones, index);
    const Tensor zh = apply_layer(minus, ones, index);
    Tensor z(zx.shape());
    for (std::size_t k = 0; k < z.size(); ++k) {
      z[k] = zx[k] - rule.low * zl[k] - rule.high * zh[k];
    }
    const Tensor s = relevance_ratios(z, r_upper, rule, index);
    const Tensor c = linear_transpose(plain, s, input.shape());
    const Tensor cp = linear_transpose(plus, s, input.shape());
    const Tensor cm = linear_transpose(minus, s, input.shape());
    Tensor r(input.shape());
    for (std::size_t j = 0; j < r.size(); ++j) {
      r[j] = input[j] * c[j] - rule.low * cp[j] - rule.high * cm[j];
    }
    return r;
  }

  Layer modified = layer;
  if (rule.kind == RuleKind::gamma && rule.gamma > 0.0) {
    const double g = rule.gamma;
    modified = with_weights(layer, map_values(layer.weights, [&](double v) { return v + g * pos(v); }),
                            map_values(layer.bias, [&](double v) { return v + g * pos(v); }));
  }
  const Tensor z = apply_layer(modified, input, index);
  const Tensor s = relevance_ratios(z, r_upper, rule, index);
  const Tensor c = linear_transpose(modified, s, input.shape());
  Tensor r(input.shape());
  for (std::size_t j = 0; j < r.size(); ++j) r[j] = input[j] * c[j];
  return r;
}

}  // namespace detail

inline Tensor propagate_dense(const Layer& layer, const Tensor& input, const Tensor& r_upper,
                              const Rule& rule, std::size_t index = 0) {
  if (layer.kind != LayerKind::dense) throw ShapeError(index, "expected a dense layer");
  return detail::propagate_linear(layer, input, r_upper, rule, index);
}

inline Tensor propagate_conv(const Layer& layer, const Tensor& input, const Tensor& r_upper,
                             const Rule& rule, std::size_t index = 0) {
  if (layer.kind != LayerKind::conv2d) throw ShapeError(index, "expected a conv2d layer");
  return detail::propagate_linear(layer, input, r_upper, rule, index);
}

// maxpool: each window's relevance goes to its maximal inputs, split equally
// between ties. avgpool: proportional to each input's share of the window sum.
inline Tensor propagate_pool(const Layer& layer, const Tensor& input, const Tensor& r_upper,
                             const Rule& rule = {}, std::size_t index = 0) {
  if (layer.kind != LayerKind::maxpool && layer.kind != LayerKind::avgpool) {
    throw ShapeError(index, "expected a pooling layer");
  }
  detail::check_relevance_shape(layer, input, r_upper, index);
  Tensor r(input.shape());
  const std::size_t win = layer.window, stride = layer.stride;

  if (layer.kind == LayerKind::maxpool) {
    for (std::size_t c = 0; c < r_upper.dim(0); ++c) {
      for (std::size_t oy = 0; oy < r_upper.dim(1); ++oy) {
        for (std::size_t ox = 0; ox < r_upper.dim(2); ++ox) {
          const double rk = r_upper.at(c, oy, ox);
          double best = input.at(c, oy * stride, ox * stride);
          for (std::size_t dy = 0; dy < win; ++dy)
            for (std::size_t dx = 0; dx < win; ++dx)
              best = std::max(best, input.at(c, oy * stride + dy, ox * stride + dx));
          std::size_t ties = 0;
          for (std::size_t dy = 0; dy < win; ++dy)
            for (std::size_t dx = 0; dx < win; ++dx)
              if (input.at(c, oy * stride + dy, ox * stride + dx) == best) ++ties;
          const double share = rk / static_cast<double>(ties);
          for (std::size_t dy = 0; dy < win; ++dy)
            for (std::size_t dx = 0; dx < win; ++dx)
              if (input.at(c, oy * stride + dy, ox * stride + dx) == best)
                r.at(c, oy * stride + dy, ox * stride + dx) += share;
        }
      }
    }
    return r;
  }

  rule.validate();
  const Tensor z = apply_layer(layer, input, index);
  const Tensor s = detail::relevance_ratios(z, r_upper, rule, index);
  const double area = static_cast<double>(win * win);
  for (std::size_t c = 0; c < s.dim(0); ++c) {
    for (std::size_t oy = 0; oy < s.dim(1); ++oy) {
      for (std::size_t ox = 0; ox < s.dim(2); ++ox) {
        const double sk = s.at(c, oy, ox);
        if (sk == 0.0) continue;
        for (std::size_t dy = 0; dy < win; ++dy) {
          for (std::size_t dx = 0; dx < win; ++dx) {
            const std::size_t y = oy * stride + dy, x = ox * stride + dx;
            r.at(c, y, x) += input.at(c, y, x) / area * sk;
          }
        }
      }
    }
  }
  return r;
}

// Relevance passes through active units unchanged and stops at inactive ones.
inline Tensor propagate_relu(const Tensor& input, const Tensor& r_upper, std::size_t index = 0) {
  if (input.shape() != r_upper.shape()) throw ShapeError(index, "relu relevance shape mismatch");
  Tensor r = r_upper;
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (!(input[i] > 0.0)) r[i] = 0.0;
  }
  return r;
}

inline Tensor propagate_layer(const Network& net, std::size_t index, const Tensor& input,
                              const Tensor& r_upper, const RuleConfig& rules) {
  const Layer& layer = net.layer(index);
  switch (layer.kind) {
    case LayerKind::dense:
      return propagate_dense(layer, input, r_upper, rules.rule_for(net, index), index);
    case LayerKind::conv2d:
      return propagate_conv(layer, input, r_upper, rules.rule_for(net, index), index);
    case LayerKind::maxpool:
    case LayerKind::avgpool:
      return propagate_pool(layer, input, r_upper, rules.avgpool, index);
    case LayerKind::relu:
      return propagate_relu(input, r_upper, index);
    case LayerKind::flatten:
      if (r_upper.size() != input.size()) throw ShapeError(index, "flatten relevance size mismatch");
      return r_upper.reshaped(input.shape());
  }
  throw ShapeError(index, "unknown layer kind");
}

// Output-layer relevance: the target logit on the target class, zero elsewhere.
inline Tensor initial_relevance(const Tensor& logits, std::size_t target_class) {
  Tensor r(logits.shape());
  r[target_class] = logits[target_class];
  return r;
}

inline void check_trace(const Network& net, const ActivationTrace& trace) {
  if (trace.per_layer_inputs.size() != net.num_layers() + 1) {
    throw Error(ErrorKind::shape_mismatch,
                detail::concat("trace has ", trace.per_layer_inputs.size(),
                               " entries, network needs ", net.num_layers() + 1));
  }
  for (std::size_t i = 0; i <= net.num_layers(); ++i) {
    if (trace.per_layer_inputs[i].shape() != net.shape_before(i)) {
      throw ShapeError(i, "trace activation shape does not match the network");
    }
  }
}

// Relevance of every input element (same shape as the network input),
// starting from `r_output` at the logits.
inline Tensor propagate_relevance(const Network& net, const ActivationTrace& trace,
                                  Tensor r_output, const RuleConfig& rules) {
  rules.validate();
  check_trace(net, trace);
  Tensor r = std::move(r_output);
  for (std::size_t i = net.num_layers(); i-- > 0;) {
    r = propagate_layer(net, i, trace.per_layer_inputs[i], r, rules);
  }
  return r;
}

inline Tensor input_relevance(const Network& net, const ActivationTrace& trace,
                              std::size_t target_class, const RuleConfig& rules) {
  if (target_class >= net.num_classes()) {
    throw Error(ErrorKind::invalid_argument,
                detail::concat("target class ", target_class, " >= ", net.num_classes()));
  }
  check_trace(net, trace);
  return propagate_relevance(net, trace, initial_relevance(trace.logits(), target_class), rules);
}

inline Heatmap relevance(const Network& net, const ActivationTrace& trace,
                         std::size_t target_class, const RuleConfig& rules) {
  return heatmap_from_input_relevance(input_relevance(net, trace, target_class, rules));
}

// Convenience: classify, then explain the predicted class.
struct Explanation {
  std::size_t label = 0;
  Tensor logits;
  Tensor input_relevance;
  Heatmap heatmap;
};

inline Explanation explain(const Network& net, const Tensor& input, const RuleConfig& rules,
                           std::optional<std::size_t> target_class = std::nullopt) {
  ForwardResult fwd = forward(net, input, true);
  const std::size_t label = argmax(fwd.logits.values());
  Tensor r = input_relevance(net, *fwd.trace, target_class.value_or(label), rules);
  Heatmap h = heatmap_from_input_relevance(r);
  return {label, std::move(fwd.logits), std::move(r), std::move(h)};
}

}  // namespace xai_triage
