#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "pseudoseg/rng.hpp"
#include "pseudoseg/tensor.hpp"

// Minimal single-sample CNN building blocks with hand-written backward passes.
// Matrix products go through Eigen; everything else is plain loops.
namespace pseudoseg::nn {

struct Param {
  std::string name;
  std::vector<int> shape;
  std::vector<float> value;
  std::vector<float> grad;

  Param() = default;
  Param(std::string n, std::vector<int> s);
  std::size_t size() const { return value.size(); }
};

// Per-layer scratch retained by a forward pass so the backward pass can run.
// A null cache pointer in forward() means inference only.
struct LayerCache {
  Tensor input;
  Tensor output;
  std::vector<float> col;
  std::vector<std::int32_t> index;
};

// 'Same' convolution with stride 1, square kernel of odd side (1 or 3 here).
struct Conv2d {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  Param weight;  // (out, in, k, k)
  Param bias;    // (out)
};

// 3x3 transpose convolution, stride 2, padding 1, output padding 1: doubles H and W.
struct ConvTranspose2d {
  int in_channels = 0;
  int out_channels = 0;
  Param weight;  // (in, out, 3, 3)
  Param bias;    // (out)
};

struct Relu {};
struct MaxPool2d {};  // 2x2 window, stride 2
struct Flatten {};

struct Linear {
  int in_features = 0;
  int out_features = 0;
  Param weight;  // (out, in)
  Param bias;    // (out)
};

using Layer = std::variant<Conv2d, ConvTranspose2d, Relu, MaxPool2d, Flatten, Linear>;

Conv2d make_conv(const std::string& name, int in, int out, int kernel);
ConvTranspose2d make_conv_transpose(const std::string& name, int in, int out);
Linear make_linear(const std::string& name, int in, int out);

// Variance-scaling (He) normal initialisation for conv weights; zero biases.
void init_he_normal(Conv2d& conv, Rng& rng);
void init_he_normal(ConvTranspose2d& conv, Rng& rng);
void init_normal(Linear& fc, Rng& rng, double stddev);

Tensor forward(const Layer& layer, const Tensor& x, LayerCache* cache);
// Gradient with respect to the layer input; parameters untouched.
Tensor backward_input(const Layer& layer, const Tensor& dy, const LayerCache& cache);
// Adds dLoss/dParam into each parameter's grad buffer.
void accumulate_grads(Layer& layer, const Tensor& dy, const LayerCache& cache);

std::vector<Param*> params_of(Layer& layer);
std::vector<const Param*> params_of(const Layer& layer);

// Shape produced by `layer` for an input of shape `in` (data left empty).
Tensor output_shape(const Layer& layer, const Tensor& in);

// Ordered layer stack with a name per layer. Convolution layers are followed by
// their rectifier; feature taps resolve a conv name to the rectifier's output.
class LayerStack {
 public:
  void add(std::string name, Layer layer);

  std::size_t size() const { return layers_.size(); }
  const Layer& layer(std::size_t i) const { return layers_[i]; }
  Layer& layer(std::size_t i) { return layers_[i]; }
  const std::string& name(std::size_t i) const { return names_[i]; }

  std::optional<std::size_t> index_of(const std::string& name) const;
  // Index of the layer whose output is the post-rectification feature map of
  // the named convolution.
  std::optional<std::size_t> feature_tap(const std::string& conv_name) const;
  std::vector<std::string> conv_names() const;

  // Runs layers [begin, end). When `caches` is non-null it is resized to
  // size() and filled for the layers that ran.
  Tensor forward(const Tensor& x, std::vector<LayerCache>* caches, std::size_t begin = 0,
                 std::size_t end = SIZE_MAX) const;

  // Backpropagates dy from the output of layer end-1 to the input of layer
  // `begin`, returning the input gradient. Parameter grads untouched.
  Tensor backward_input(const Tensor& dy, const std::vector<LayerCache>& caches,
                        std::size_t begin = 0, std::size_t end = SIZE_MAX) const;

  // Full backward pass accumulating parameter gradients.
  void backward(const Tensor& dy, const std::vector<LayerCache>& caches);

  std::vector<Param*> params();
  std::vector<const Param*> params() const;

 private:
  std::vector<Layer> layers_;
  std::vector<std::string> names_;
};

void zero_grads(std::span<Param* const> params);

// RMSprop with the common defaults (rho 0.9, eps 1e-7):
//   ms = rho*ms + (1-rho)*g^2 ; w -= lr * g / (sqrt(ms) + eps)
class RmsProp {
 public:
  explicit RmsProp(double rho = 0.9, double eps = 1e-7) : rho_(rho), eps_(eps) {}

  // Applies one update using grad * grad_scale as the gradient, then zeroes grads.
  void step(std::span<Param* const> params, double lr, double grad_scale);

  // Running mean of squared gradients, one buffer per parameter (empty before the first step).
  const std::vector<std::vector<float>>& state() const { return mean_square_; }
  void set_state(std::vector<std::vector<float>> state) { mean_square_ = std::move(state); }

 private:
  double rho_;
  double eps_;
  std::vector<std::vector<float>> mean_square_;
};

// Numerically stable softmax of a short vector.
std::vector<float> softmax(std::span<const float> logits);

}  // namespace pseudoseg::nn
