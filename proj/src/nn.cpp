#include "pseudoseg/nn.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace pseudoseg::nn {
namespace {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};

Tensor shape_only(const Tensor& t) {
  Tensor s;
  s.channels = t.channels;
  s.height = t.height;
  s.width = t.width;
  return s;
}

// Reused per-thread work buffers; contents are overwritten by every user.
float* scratch(std::size_t n, int slot) {
  thread_local std::vector<float> buffers[2];
  std::vector<float>& b = buffers[slot];
  if (b.size() < n) b.resize(n);
  return b.data();
}

void check_input(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

// ---- Conv2d ----------------------------------------------------------------

Tensor conv_forward(const Conv2d& conv, const Tensor& x, LayerCache* cache) {
  check_input(x.channels == conv.in_channels, "conv: input channel mismatch");
  const int hw = x.height * x.width;
  const int k_rows = conv.in_channels * conv.kernel * conv.kernel;
  Tensor y(conv.out_channels, x.height, x.width);

  const float* col = x.data.data();
  if (conv.kernel != 1) {
    const std::size_t n = static_cast<std::size_t>(k_rows) * hw;
    float* buf;
    if (cache) {
      cache->col.resize(n);
      buf = cache->col.data();
    } else {
      buf = scratch(n, 0);
    }
    im2col(x.data.data(), x.channels, x.height, x.width, conv.kernel, 1, conv.kernel / 2, x.height,
           x.width, buf);
    col = buf;
  } else if (cache) {
    cache->input = x;
  }

  ConstMatMap w(conv.weight.value.data(), conv.out_channels, k_rows);
  ConstMatMap c(col, k_rows, hw);
  MatMap out(y.data.data(), conv.out_channels, hw);
  out.noalias() = w * c;
  for (int o = 0; o < conv.out_channels; ++o) out.row(o).array() += conv.bias.value[o];
  if (cache) cache->output = shape_only(y);
  return y;
}

Tensor conv_backward_input(const Conv2d& conv, const Tensor& dy) {
  const int hw = dy.height * dy.width;
  const int k = conv.kernel;
  const int kk = k * k;
  Tensor dx(conv.in_channels, dy.height, dy.width);
  if (k == 1) {
    ConstMatMap w(conv.weight.value.data(), conv.out_channels, conv.in_channels);
    ConstMatMap g(dy.data.data(), conv.out_channels, hw);
    MatMap out(dx.data.data(), conv.in_channels, hw);
    out.noalias() = w.transpose() * g;
    return dx;
  }
  // Same convolution of dy with the spatially flipped, channel-transposed kernel.
  RowMatrix flipped(conv.in_channels, conv.out_channels * kk);
  for (int o = 0; o < conv.out_channels; ++o)
    for (int i = 0; i < conv.in_channels; ++i)
      for (int t = 0; t < kk; ++t)
        flipped(i, o * kk + (kk - 1 - t)) = conv.weight.value[(static_cast<std::size_t>(o) * conv.in_channels + i) * kk + t];
  float* col = scratch(static_cast<std::size_t>(conv.out_channels) * kk * hw, 0);
  im2col(dy.data.data(), conv.out_channels, dy.height, dy.width, k, 1, k / 2, dy.height, dy.width, col);
  ConstMatMap c(col, conv.out_channels * kk, hw);
  MatMap out(dx.data.data(), conv.in_channels, hw);
  out.noalias() = flipped * c;
  return dx;
}

void conv_accumulate(Conv2d& conv, const Tensor& dy, const LayerCache& cache) {
  const int hw = dy.height * dy.width;
  const int k_rows = conv.in_channels * conv.kernel * conv.kernel;
  const float* col = conv.kernel == 1 ? cache.input.data.data() : cache.col.data();
  ConstMatMap g(dy.data.data(), conv.out_channels, hw);
  ConstMatMap c(col, k_rows, hw);
  MatMap dw(conv.weight.grad.data(), conv.out_channels, k_rows);
  dw.noalias() += g * c.transpose();
  for (int o = 0; o < conv.out_channels; ++o) {
    const float* row = dy.data.data() + static_cast<std::size_t>(o) * hw;
    conv.bias.grad[o] += std::accumulate(row, row + hw, 0.0f);
  }
}

// ---- ConvTranspose2d -------------------------------------------------------

Tensor convt_forward(const ConvTranspose2d& conv, const Tensor& x, LayerCache* cache) {
  check_input(x.channels == conv.in_channels, "conv_transpose: input channel mismatch");
  const int hw = x.height * x.width;
  const int k_rows = conv.out_channels * 9;
  float* col = scratch(static_cast<std::size_t>(k_rows) * hw, 0);
  ConstMatMap w(conv.weight.value.data(), conv.in_channels, k_rows);
  ConstMatMap in(x.data.data(), conv.in_channels, hw);
  MatMap c(col, k_rows, hw);
  c.noalias() = w.transpose() * in;

  Tensor y(conv.out_channels, 2 * x.height, 2 * x.width);
  col2im(col, conv.out_channels, y.height, y.width, 3, 2, 1, x.height, x.width, y.data.data());
  for (int o = 0; o < conv.out_channels; ++o) {
    const float b = conv.bias.value[o];
    for (float& v : y.plane(o)) v += b;
  }
  if (cache) {
    cache->input = x;
    cache->output = shape_only(y);
  }
  return y;
}

const float* convt_grad_columns(const ConvTranspose2d& conv, const Tensor& dy) {
  const int h = dy.height / 2;
  const int w = dy.width / 2;
  float* dcol = scratch(static_cast<std::size_t>(conv.out_channels) * 9 * h * w, 1);
  im2col(dy.data.data(), conv.out_channels, dy.height, dy.width, 3, 2, 1, h, w, dcol);
  return dcol;
}

Tensor convt_backward_input(const ConvTranspose2d& conv, const Tensor& dy) {
  const int h = dy.height / 2;
  const int w = dy.width / 2;
  const int k_rows = conv.out_channels * 9;
  const float* dcol = convt_grad_columns(conv, dy);
  Tensor dx(conv.in_channels, h, w);
  ConstMatMap wm(conv.weight.value.data(), conv.in_channels, k_rows);
  ConstMatMap dc(dcol, k_rows, h * w);
  MatMap out(dx.data.data(), conv.in_channels, h * w);
  out.noalias() = wm * dc;
  return dx;
}

void convt_accumulate(ConvTranspose2d& conv, const Tensor& dy, const LayerCache& cache) {
  const int hw = cache.input.height * cache.input.width;
  const int k_rows = conv.out_channels * 9;
  const float* dcol = convt_grad_columns(conv, dy);
  ConstMatMap x(cache.input.data.data(), conv.in_channels, hw);
  ConstMatMap dc(dcol, k_rows, hw);
  MatMap dw(conv.weight.grad.data(), conv.in_channels, k_rows);
  dw.noalias() += x * dc.transpose();
  for (int o = 0; o < conv.out_channels; ++o) {
    const auto plane = dy.plane(o);
    conv.bias.grad[o] += std::accumulate(plane.begin(), plane.end(), 0.0f);
  }
}

// ---- elementwise / pooling -------------------------------------------------

Tensor relu_forward(const Tensor& x, LayerCache* cache) {
  Tensor y = x;
  for (float& v : y.data) v = v > 0.0f ? v : 0.0f;
  if (cache) cache->output = y;
  return y;
}

Tensor relu_backward(const Tensor& dy, const LayerCache& cache) {
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.data.size(); ++i)
    if (!(cache.output.data[i] > 0.0f)) dx.data[i] = 0.0f;
  return dx;
}

Tensor pool_forward(const Tensor& x, LayerCache* cache) {
  check_input(x.height % 2 == 0 && x.width % 2 == 0, "maxpool: odd spatial size");
  Tensor y(x.channels, x.height / 2, x.width / 2);
  std::vector<std::int32_t> index;
  if (cache) index.resize(y.size());
  for (int c = 0; c < x.channels; ++c) {
    for (int oy = 0; oy < y.height; ++oy) {
      for (int ox = 0; ox < y.width; ++ox) {
        std::int32_t best = -1;
        float best_v = 0.0f;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const auto idx = static_cast<std::int32_t>(
                (static_cast<std::size_t>(c) * x.height + 2 * oy + dy) * x.width + 2 * ox + dx);
            const float v = x.data[idx];
            if (best < 0 || v > best_v) {
              best = idx;
              best_v = v;
            }
          }
        }
        const std::size_t o = (static_cast<std::size_t>(c) * y.height + oy) * y.width + ox;
        y.data[o] = best_v;
        if (cache) index[o] = best;
      }
    }
  }
  if (cache) {
    cache->input = shape_only(x);
    cache->index = std::move(index);
  }
  return y;
}

Tensor pool_backward(const Tensor& dy, const LayerCache& cache) {
  Tensor dx(cache.input.channels, cache.input.height, cache.input.width);
  for (std::size_t o = 0; o < dy.data.size(); ++o) dx.data[cache.index[o]] += dy.data[o];
  return dx;
}

Tensor linear_forward(const Linear& fc, const Tensor& x, LayerCache* cache) {
  check_input(static_cast<int>(x.size()) == fc.in_features, "linear: input size mismatch");
  Tensor y(fc.out_features, 1, 1);
  ConstMatMap w(fc.weight.value.data(), fc.out_features, fc.in_features);
  Eigen::Map<const Eigen::VectorXf> in(x.data.data(), fc.in_features);
  Eigen::Map<Eigen::VectorXf> out(y.data.data(), fc.out_features);
  Eigen::Map<const Eigen::VectorXf> b(fc.bias.value.data(), fc.out_features);
  out.noalias() = w * in;
  out += b;
  if (cache) cache->input = x;
  return y;
}

Tensor linear_backward(const Linear& fc, const Tensor& dy, const LayerCache& cache) {
  Tensor dx = shape_only(cache.input);
  dx.data.resize(static_cast<std::size_t>(fc.in_features));
  ConstMatMap w(fc.weight.value.data(), fc.out_features, fc.in_features);
  Eigen::Map<const Eigen::VectorXf> g(dy.data.data(), fc.out_features);
  Eigen::Map<Eigen::VectorXf> out(dx.data.data(), fc.in_features);
  out.noalias() = w.transpose() * g;
  return dx;
}

void linear_accumulate(Linear& fc, const Tensor& dy, const LayerCache& cache) {
  MatMap dw(fc.weight.grad.data(), fc.out_features, fc.in_features);
  Eigen::Map<const Eigen::VectorXf> g(dy.data.data(), fc.out_features);
  Eigen::Map<const Eigen::VectorXf> x(cache.input.data.data(), fc.in_features);
  dw.noalias() += g * x.transpose();
  for (int o = 0; o < fc.out_features; ++o) fc.bias.grad[o] += dy.data[o];
}

}  // namespace

Param::Param(std::string n, std::vector<int> s) : name(std::move(n)), shape(std::move(s)) {
  std::size_t count = 1;
  for (int d : shape) count *= static_cast<std::size_t>(d);
  value.assign(count, 0.0f);
  grad.assign(count, 0.0f);
}

Conv2d make_conv(const std::string& name, int in, int out, int kernel) {
  Conv2d conv;
  conv.in_channels = in;
  conv.out_channels = out;
  conv.kernel = kernel;
  conv.weight = Param(name + ".weight", {out, in, kernel, kernel});
  conv.bias = Param(name + ".bias", {out});
  return conv;
}

ConvTranspose2d make_conv_transpose(const std::string& name, int in, int out) {
  ConvTranspose2d conv;
  conv.in_channels = in;
  conv.out_channels = out;
  conv.weight = Param(name + ".weight", {in, out, 3, 3});
  conv.bias = Param(name + ".bias", {out});
  return conv;
}

Linear make_linear(const std::string& name, int in, int out) {
  Linear fc;
  fc.in_features = in;
  fc.out_features = out;
  fc.weight = Param(name + ".weight", {out, in});
  fc.bias = Param(name + ".bias", {out});
  return fc;
}

void init_he_normal(Conv2d& conv, Rng& rng) {
  const double fan_in = static_cast<double>(conv.in_channels) * conv.kernel * conv.kernel;
  const double stddev = std::sqrt(2.0 / fan_in);
  for (float& v : conv.weight.value) v = static_cast<float>(rng.normal(0.0, stddev));
  std::fill(conv.bias.value.begin(), conv.bias.value.end(), 0.0f);
}

void init_he_normal(ConvTranspose2d& conv, Rng& rng) {
  // Each output pixel of a stride-2 3x3 transpose conv sees 9/4 taps per input channel on average.
  const double fan_in = static_cast<double>(conv.in_channels) * 9.0 / 4.0;
  const double stddev = std::sqrt(2.0 / fan_in);
  for (float& v : conv.weight.value) v = static_cast<float>(rng.normal(0.0, stddev));
  std::fill(conv.bias.value.begin(), conv.bias.value.end(), 0.0f);
}

void init_normal(Linear& fc, Rng& rng, double stddev) {
  for (float& v : fc.weight.value) v = static_cast<float>(rng.normal(0.0, stddev));
  std::fill(fc.bias.value.begin(), fc.bias.value.end(), 0.0f);
}

Tensor forward(const Layer& layer, const Tensor& x, LayerCache* cache) {
  return std::visit(
      Overloaded{
          [&](const Conv2d& l) { return conv_forward(l, x, cache); },
          [&](const ConvTranspose2d& l) { return convt_forward(l, x, cache); },
          [&](const Relu&) { return relu_forward(x, cache); },
          [&](const MaxPool2d&) { return pool_forward(x, cache); },
          [&](const Flatten&) {
            if (cache) cache->input = shape_only(x);
            Tensor y;
            y.channels = static_cast<int>(x.size());
            y.height = 1;
            y.width = 1;
            y.data = x.data;
            return y;
          },
          [&](const Linear& l) { return linear_forward(l, x, cache); },
      },
      layer);
}

Tensor backward_input(const Layer& layer, const Tensor& dy, const LayerCache& cache) {
  return std::visit(
      Overloaded{
          [&](const Conv2d& l) { return conv_backward_input(l, dy); },
          [&](const ConvTranspose2d& l) { return convt_backward_input(l, dy); },
          [&](const Relu&) { return relu_backward(dy, cache); },
          [&](const MaxPool2d&) { return pool_backward(dy, cache); },
          [&](const Flatten&) {
            Tensor dx = shape_only(cache.input);
            dx.data = dy.data;
            return dx;
          },
          [&](const Linear& l) { return linear_backward(l, dy, cache); },
      },
      layer);
}

void accumulate_grads(Layer& layer, const Tensor& dy, const LayerCache& cache) {
  std::visit(Overloaded{
                 [&](Conv2d& l) { conv_accumulate(l, dy, cache); },
                 [&](ConvTranspose2d& l) { convt_accumulate(l, dy, cache); },
                 [&](Linear& l) { linear_accumulate(l, dy, cache); },
                 [](auto&) {},
             },
             layer);
}

std::vector<Param*> params_of(Layer& layer) {
  return std::visit(Overloaded{
                        [](Conv2d& l) { return std::vector<Param*>{&l.weight, &l.bias}; },
                        [](ConvTranspose2d& l) { return std::vector<Param*>{&l.weight, &l.bias}; },
                        [](Linear& l) { return std::vector<Param*>{&l.weight, &l.bias}; },
                        [](auto&) { return std::vector<Param*>{}; },
                    },
                    layer);
}

std::vector<const Param*> params_of(const Layer& layer) {
  return std::visit(
      Overloaded{
          [](const Conv2d& l) { return std::vector<const Param*>{&l.weight, &l.bias}; },
          [](const ConvTranspose2d& l) { return std::vector<const Param*>{&l.weight, &l.bias}; },
          [](const Linear& l) { return std::vector<const Param*>{&l.weight, &l.bias}; },
          [](const auto&) { return std::vector<const Param*>{}; },
      },
      layer);
}

Tensor output_shape(const Layer& layer, const Tensor& in) {
  Tensor s;
  std::visit(Overloaded{
                 [&](const Conv2d& l) {
                   s.channels = l.out_channels;
                   s.height = in.height;
                   s.width = in.width;
                 },
                 [&](const ConvTranspose2d& l) {
                   s.channels = l.out_channels;
                   s.height = 2 * in.height;
                   s.width = 2 * in.width;
                 },
                 [&](const Relu&) { s = shape_only(in); },
                 [&](const MaxPool2d&) {
                   s.channels = in.channels;
                   s.height = in.height / 2;
                   s.width = in.width / 2;
                 },
                 [&](const Flatten&) {
                   s.channels = in.channels * in.height * in.width;
                   s.height = s.width = 1;
                 },
                 [&](const Linear& l) {
                   s.channels = l.out_features;
                   s.height = s.width = 1;
                 },
             },
             layer);
  return s;
}

void LayerStack::add(std::string name, Layer layer) {
  names_.push_back(std::move(name));
  layers_.push_back(std::move(layer));
}

std::optional<std::size_t> LayerStack::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return i;
  return std::nullopt;
}

std::optional<std::size_t> LayerStack::feature_tap(const std::string& conv_name) const {
  const auto idx = index_of(conv_name);
  if (!idx || !std::holds_alternative<Conv2d>(layers_[*idx])) return std::nullopt;
  if (*idx + 1 < layers_.size() && std::holds_alternative<Relu>(layers_[*idx + 1])) return *idx + 1;
  return idx;
}

std::vector<std::string> LayerStack::conv_names() const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < layers_.size(); ++i)
    if (std::holds_alternative<Conv2d>(layers_[i])) out.push_back(names_[i]);
  return out;
}

Tensor LayerStack::forward(const Tensor& x, std::vector<LayerCache>* caches, std::size_t begin,
                           std::size_t end) const {
  end = std::min(end, layers_.size());
  if (caches) caches->resize(layers_.size());
  Tensor cur = x;
  for (std::size_t i = begin; i < end; ++i)
    cur = nn::forward(layers_[i], cur, caches ? &(*caches)[i] : nullptr);
  return cur;
}

Tensor LayerStack::backward_input(const Tensor& dy, const std::vector<LayerCache>& caches,
                                  std::size_t begin, std::size_t end) const {
  end = std::min(end, layers_.size());
  Tensor grad = dy;
  for (std::size_t i = end; i-- > begin;) grad = nn::backward_input(layers_[i], grad, caches[i]);
  return grad;
}

void LayerStack::backward(const Tensor& dy, const std::vector<LayerCache>& caches) {
  Tensor grad = dy;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    accumulate_grads(layers_[i], grad, caches[i]);
    if (i > 0) grad = nn::backward_input(layers_[i], grad, caches[i]);
  }
}

std::vector<Param*> LayerStack::params() {
  std::vector<Param*> out;
  for (Layer& l : layers_)
    for (Param* p : params_of(l)) out.push_back(p);
  return out;
}

std::vector<const Param*> LayerStack::params() const {
  std::vector<const Param*> out;
  for (const Layer& l : layers_)
    for (const Param* p : params_of(l)) out.push_back(p);
  return out;
}

void zero_grads(std::span<Param* const> params) {
  for (Param* p : params) std::fill(p->grad.begin(), p->grad.end(), 0.0f);
}

void RmsProp::step(std::span<Param* const> params, double lr, double grad_scale) {
  if (mean_square_.size() != params.size()) {
    mean_square_.clear();
    for (const Param* p : params) mean_square_.emplace_back(p->size(), 0.0f);
  }
  const auto rho = static_cast<float>(rho_);
  const auto eps = static_cast<float>(eps_);
  const auto rate = static_cast<float>(lr);
  const auto scale = static_cast<float>(grad_scale);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Param& p = *params[k];
    std::vector<float>& ms = mean_square_[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const float g = p.grad[i] * scale;
      ms[i] = rho * ms[i] + (1.0f - rho) * g * g;
      p.value[i] -= rate * g / (std::sqrt(ms[i]) + eps);
      p.grad[i] = 0.0f;
    }
  }
}

std::vector<float> softmax(std::span<const float> logits) {
  std::vector<float> out(logits.size());
  if (logits.empty()) return out;
  const float peak = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - peak);
    total += out[i];
  }
  for (float& v : out) v = static_cast<float>(v / total);
  return out;
}

}  // namespace pseudoseg::nn
