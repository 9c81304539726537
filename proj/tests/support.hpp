#pragma once

// Shared generators for the unit and acceptance suites.

#include <cstddef>
#include <cstdint>
#include <unistd.h>

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "xai_triage/network.hpp"
#include "xai_triage/tensor.hpp"

namespace testing_support {

using namespace xai_triage;

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform(double lo, double hi) {
    const double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * u;
  }
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(engine_() % n); }
  std::size_t between(std::size_t lo, std::size_t hi) { return lo + below(hi - lo + 1); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

inline Tensor random_tensor(Rng& rng, Shape shape, double lo, double hi) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

// Dense/relu stack with strictly positive weights, no bias: every activation
// of a positive input is positive, so no denominator vanishes.
inline Network random_positive_dense_net(Rng& rng, std::size_t max_layers,
                                         std::size_t max_units) {
  const std::size_t depth = rng.between(1, max_layers);
  std::size_t width = rng.between(1, max_units);
  const Shape input{width};
  std::vector<Layer> layers;
  for (std::size_t d = 0; d < depth; ++d) {
    const std::size_t out = d + 1 == depth ? rng.between(2, 5) : rng.between(1, max_units);
    layers.push_back(Layer::dense(random_tensor(rng, {out, width}, 0.05, 1.0), Tensor(Shape{out})));
    if (d + 1 < depth) layers.push_back(Layer::relu());
    width = out;
  }
  return Network(std::move(layers), input);
}

// conv -> relu -> pool -> flatten -> dense, bias free, positive weights.
inline Network random_positive_conv_net(Rng& rng) {
  const std::size_t ch = rng.between(1, 2), h = rng.between(4, 6), w = rng.between(4, 6);
  const std::size_t oc = rng.between(1, 3), pad = rng.below(2);
  std::vector<Layer> layers;
  layers.push_back(Layer::conv2d(random_tensor(rng, {oc, ch, 3, 3}, 0.05, 1.0), Tensor(Shape{oc}),
                                 1, pad));
  layers.push_back(Layer::relu());
  const bool max = rng.below(2) == 0;
  layers.push_back(max ? Layer::maxpool(2, 2) : Layer::avgpool(2, 2));
  layers.push_back(Layer::flatten());
  Shape s{ch, h, w};
  for (std::size_t i = 0; i < layers.size(); ++i) s = layer_output_shape(layers[i], s, i);
  const std::size_t classes = rng.between(2, 4);
  layers.push_back(Layer::dense(random_tensor(rng, {classes, s[0]}, 0.05, 1.0),
                                Tensor(Shape{classes})));
  return Network(std::move(layers), {ch, h, w});
}

// Mixed-sign weights and biases, at most ~20 neurons. Used against the
// brute-force oracle.
inline Network random_small_net(Rng& rng) {
  std::vector<Layer> layers;
  Shape input;
  if (rng.below(2) == 0) {
    const std::size_t in = rng.between(2, 5), hidden = rng.between(2, 6), out = rng.between(2, 4);
    input = {in};
    layers.push_back(Layer::dense(random_tensor(rng, {hidden, in}, -1.0, 1.0),
                                  random_tensor(rng, {hidden}, -0.3, 0.3)));
    layers.push_back(Layer::relu());
    layers.push_back(Layer::dense(random_tensor(rng, {out, hidden}, -1.0, 1.0),
                                  random_tensor(rng, {out}, -0.3, 0.3)));
  } else {
    const std::size_t h = rng.between(3, 4), w = rng.between(3, 4);
    input = {1, h, w};
    layers.push_back(Layer::conv2d(random_tensor(rng, {1, 1, 2, 2}, -1.0, 1.0),
                                   random_tensor(rng, {1}, -0.3, 0.3), 1, rng.below(2)));
    layers.push_back(Layer::relu());
    layers.push_back(rng.below(2) == 0 ? Layer::maxpool(2, 1) : Layer::avgpool(2, 1));
    layers.push_back(Layer::flatten());
    Shape s = input;
    for (std::size_t i = 0; i < layers.size(); ++i) s = layer_output_shape(layers[i], s, i);
    const std::size_t out = rng.between(2, 3);
    layers.push_back(Layer::dense(random_tensor(rng, {out, s[0]}, -1.0, 1.0),
                                  random_tensor(rng, {out}, -0.3, 0.3)));
  }
  return Network(std::move(layers), input);
}

// Per-process, so that ctest -j runs do not trample each other.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() /
                   ("xai_triage_test_" + std::to_string(::getpid()) + "_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing_support
