#pragma once

// Brute-force relevance propagation for tests. Every layer is unrolled into
// an explicit (out x in) matrix A and bias b; contributions z_jk = A_kj x_j
// are materialised and redistributed with
//
//   R_j = sum_k z_jk / (sum_j' z_j'k + b_k) * R_k
//
// Shares nothing with the engine beyond the Network type and forward().

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "xai_triage/network.hpp"

namespace lrp_oracle {

using namespace xai_triage;
using Matrix = std::vector<std::vector<double>>;

struct Linear {
  Matrix a;  // out x in
  std::vector<double> b;
};

inline Linear unroll(const Layer& layer, const Tensor& x) {
  const std::size_t n_in = x.size();
  Linear out;
  switch (layer.kind) {
    case LayerKind::dense: {
      const std::size_t rows = layer.weights.dim(0);
      out.a.assign(rows, std::vector<double>(n_in, 0.0));
      for (std::size_t k = 0; k < rows; ++k) {
        for (std::size_t j = 0; j < n_in; ++j) out.a[k][j] = layer.weights[k * n_in + j];
        out.b.push_back(layer.bias[k]);
      }
      return out;
    }
    case LayerKind::conv2d: {
      const auto& w = layer.weights.shape();
      const std::size_t oc = w[0], ic = w[1], kh = w[2], kw = w[3];
      const long H = static_cast<long>(x.dim(1)), W = static_cast<long>(x.dim(2));
      const long p = static_cast<long>(layer.padding), s = static_cast<long>(layer.stride);
      const long oh = (H + 2 * p - static_cast<long>(kh)) / s + 1;
      const long ow = (W + 2 * p - static_cast<long>(kw)) / s + 1;
      for (std::size_t o = 0; o < oc; ++o) {
        for (long oy = 0; oy < oh; ++oy) {
          for (long ox = 0; ox < ow; ++ox) {
            std::vector<double> row(n_in, 0.0);
            for (std::size_t c = 0; c < ic; ++c)
              for (std::size_t ky = 0; ky < kh; ++ky)
                for (std::size_t kx = 0; kx < kw; ++kx) {
                  const long y = oy * s + static_cast<long>(ky) - p;
                  const long xx = ox * s + static_cast<long>(kx) - p;
                  if (y < 0 || y >= H || xx < 0 || xx >= W) continue;
                  row[(c * static_cast<std::size_t>(H) + static_cast<std::size_t>(y)) *
                          static_cast<std::size_t>(W) +
                      static_cast<std::size_t>(xx)] +=
                      layer.weights[((o * ic + c) * kh + ky) * kw + kx];
                }
            out.a.push_back(row);
            out.b.push_back(layer.bias[o]);
          }
        }
      }
      return out;
    }
    case LayerKind::maxpool:
    case LayerKind::avgpool: {
      const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
      const std::size_t win = layer.window, s = layer.stride;
      const std::size_t oh = (H - win) / s + 1, ow = (W - win) / s + 1;
      for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t oy = 0; oy < oh; ++oy) {
          for (std::size_t ox = 0; ox < ow; ++ox) {
            std::vector<double> row(n_in, 0.0);
            std::vector<std::size_t> cells;
            for (std::size_t dy = 0; dy < win; ++dy)
              for (std::size_t dx = 0; dx < win; ++dx)
                cells.push_back((c * H + oy * s + dy) * W + ox * s + dx);
            if (layer.kind == LayerKind::avgpool) {
              for (std::size_t j : cells) row[j] = 1.0 / static_cast<double>(cells.size());
            } else {
              double best = x[cells[0]];
              for (std::size_t j : cells) best = std::max(best, x[j]);
              std::size_t ties = 0;
              for (std::size_t j : cells) ties += x[j] == best ? 1 : 0;
              for (std::size_t j : cells)
                if (x[j] == best) row[j] = 1.0 / static_cast<double>(ties);
            }
            out.a.push_back(row);
            out.b.push_back(0.0);
          }
        }
      }
      return out;
    }
    default:
      throw std::logic_error("unroll: not a linear layer");
  }
}

inline std::vector<double> redistribute(const Linear& lin, const Tensor& x,
                                        const std::vector<double>& r_upper) {
  const std::size_t n_in = x.size();
  std::vector<double> r(n_in, 0.0);
  for (std::size_t k = 0; k < lin.a.size(); ++k) {
    if (r_upper[k] == 0.0) continue;
    std::vector<double> z(n_in);
    double total = lin.b[k];
    for (std::size_t j = 0; j < n_in; ++j) {
      z[j] = lin.a[k][j] * x[j];
      total += z[j];
    }
    if (total == 0.0) throw std::domain_error("oracle: vanishing denominator");
    for (std::size_t j = 0; j < n_in; ++j) r[j] += z[j] / total * r_upper[k];
  }
  return r;
}

// Basic-rule input relevance (flattened) for `target`.
inline std::vector<double> input_relevance(const Network& net, const Tensor& input,
                                           std::size_t target) {
  std::vector<Tensor> acts{input};
  for (std::size_t i = 0; i < net.num_layers(); ++i) {
    acts.push_back(apply_layer(net.layer(i), acts.back(), i));
  }
  std::vector<double> r(acts.back().size(), 0.0);
  r[target] = acts.back()[target];
  for (std::size_t i = net.num_layers(); i-- > 0;) {
    const Layer& layer = net.layer(i);
    const Tensor& x = acts[i];
    if (layer.kind == LayerKind::flatten) continue;
    if (layer.kind == LayerKind::relu) {
      for (std::size_t j = 0; j < r.size(); ++j)
        if (!(x[j] > 0.0)) r[j] = 0.0;
      continue;
    }
    r = redistribute(unroll(layer, x), x, r);
  }
  return r;
}

}  // namespace lrp_oracle
