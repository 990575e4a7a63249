#pragma once

// Fully-convolutional single-channel network: stride-1 zero-padded
// convolutions with PReLU between layers, an optional input-to-output skip,
// exact backpropagation, and the ADAM optimizer.
//
// Activations are stored as (channels x pixels) matrices, pixel index
// y * width + x. A layer's kernel for offset o = ky * k + kx occupies columns
// [o * in, (o + 1) * in) of its weight matrix, so each offset is one GEMM
// against a shifted copy of the input.

#include "nirvis/core.hpp"

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace nirvis {

enum class Channel : std::uint8_t { Y = 0, Cb = 1, Cr = 2 };

inline std::string_view to_string(Channel c) {
  switch (c) {
    case Channel::Y: return "Y";
    case Channel::Cb: return "Cb";
    case Channel::Cr: return "Cr";
  }
  return "?";
}

inline Channel parse_channel(std::string_view s) {
  if (s == "Y" || s == "y") return Channel::Y;
  if (s == "Cb" || s == "cb" || s == "CB") return Channel::Cb;
  if (s == "Cr" || s == "cr" || s == "CR") return Channel::Cr;
  throw ConfigError("unknown channel '" + std::string(s) + "' (expected Y, Cb or Cr)");
}

enum class SlopeMode : std::uint8_t { PerChannel = 0, Shared = 1 };

struct LayerSpec {
  int in_channels = 1;
  int out_channels = 1;
  int kernel = 3;
  bool prelu = true;
};

struct NetSpec {
  Channel channel = Channel::Y;
  std::vector<LayerSpec> layers;
  bool skip = false;  // add the input raster to the final layer output
  SlopeMode slopes = SlopeMode::PerChannel;

  int max_kernel() const {
    int k = 0;
    for (const auto& l : layers) k = std::max(k, l.kernel);
    return k;
  }
};

/// Hour-glass layout: a wide first layer, narrow intermediates, a wide
/// penultimate layer, and a single-filter output layer without activation.
inline NetSpec hourglass_spec(Channel channel, int layer_count, int wide, int narrow, int kernel, bool skip,
                              SlopeMode slopes = SlopeMode::PerChannel) {
  require(layer_count >= 3, "hourglass network needs at least 3 layers");
  NetSpec spec{channel, {}, skip, slopes};
  spec.layers.push_back({1, wide, kernel, true});
  spec.layers.push_back({wide, narrow, kernel, true});
  for (int i = 0; i < layer_count - 4; ++i) spec.layers.push_back({narrow, narrow, kernel, true});
  spec.layers.push_back({narrow, wide, kernel, true});
  spec.layers.push_back({wide, 1, kernel, false});
  return spec;
}

/// The per-channel architectures used for hallucination.
inline NetSpec hallucination_spec(Channel channel, SlopeMode slopes = SlopeMode::PerChannel) {
  switch (channel) {
    case Channel::Y: return hourglass_spec(channel, 11, 148, 36, 11, true, slopes);
    case Channel::Cb: return hourglass_spec(channel, 7, 66, 32, 3, false, slopes);
    case Channel::Cr: return hourglass_spec(channel, 8, 148, 48, 5, false, slopes);
  }
  throw ContractError("unknown channel");
}

template <typename S>
struct ConvLayer {
  using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
  using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

  int in_channels = 1;
  int out_channels = 1;
  int kernel = 1;
  Mat weights;  // out x (kernel^2 * in)
  Vec bias;     // out
  Vec slopes;   // per output channel, a single shared slope, or empty on the last layer

  int padding() const { return kernel / 2; }
  bool has_prelu() const { return slopes.size() > 0; }
  S slope(Eigen::Index c) const { return slopes.size() == 1 ? slopes(0) : slopes(c); }

  S& weight(int out, int in, int ky, int kx) { return weights(out, (ky * kernel + kx) * in_channels + in); }
  S weight(int out, int in, int ky, int kx) const { return weights(out, (ky * kernel + kx) * in_channels + in); }
};

template <typename S>
struct LayerGradients {
  typename ConvLayer<S>::Mat weights;
  typename ConvLayer<S>::Vec bias;
  typename ConvLayer<S>::Vec slopes;
};

template <typename S>
struct Gradients {
  std::vector<LayerGradients<S>> layers;

  std::vector<std::span<S>> views() {
    std::vector<std::span<S>> out;
    for (auto& l : layers) {
      out.emplace_back(l.weights.data(), static_cast<std::size_t>(l.weights.size()));
      out.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
      out.emplace_back(l.slopes.data(), static_cast<std::size_t>(l.slopes.size()));
    }
    return out;
  }

  void set_zero() {
    for (auto& l : layers) {
      l.weights.setZero();
      l.bias.setZero();
      l.slopes.setZero();
    }
  }

  bool all_zero() const {
    for (const auto& l : layers)
      if (!l.weights.isZero(0) || !l.bias.isZero(0) || !l.slopes.isZero(0)) return false;
    return true;
  }
};

namespace detail {

// dst(:, y*w + x) = src(:, (y+dy)*w + (x+dx)), zero where the source falls outside.
template <typename Mat>
void gather_shifted(const Mat& src, Mat& dst, int h, int w, int dy, int dx) {
  dst.setZero();
  const int x0 = std::max(0, -dx);
  const int x1 = std::min(w, w - dx);
  if (x1 <= x0) return;
  const int len = x1 - x0;
  for (int y = std::max(0, -dy); y < std::min(h, h - dy); ++y)
    dst.middleCols(y * w + x0, len) = src.middleCols((y + dy) * w + x0 + dx, len);
}

// Adjoint of gather_shifted: dst(:, (y+dy)*w + (x+dx)) += src(:, y*w + x).
template <typename Mat>
void scatter_shifted_add(const Mat& src, Mat& dst, int h, int w, int dy, int dx) {
  const int x0 = std::max(0, -dx);
  const int x1 = std::min(w, w - dx);
  if (x1 <= x0) return;
  const int len = x1 - x0;
  for (int y = std::max(0, -dy); y < std::min(h, h - dy); ++y)
    dst.middleCols((y + dy) * w + x0 + dx, len) += src.middleCols(y * w + x0, len);
}

}  // namespace detail

template <typename S>
class HallucinationNet {
 public:
  using Mat = typename ConvLayer<S>::Mat;
  using Vec = typename ConvLayer<S>::Vec;

  struct Cache {
    int height = 0;
    int width = 0;
    std::vector<Mat> inputs;  // input of each layer
    std::vector<Mat> pre;     // convolution output of each layer, before PReLU
    Mat output;
  };

  HallucinationNet() = default;

  /// He-normal weights scaled by fan-in, zero biases, slopes 0.25.
  HallucinationNet(NetSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
    require(!spec_.layers.empty(), "network needs at least one layer");
    std::mt19937_64 rng(seed);
    int expected_in = 1;
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
      const auto& ls = spec_.layers[i];
      require(ls.kernel >= 1 && ls.kernel % 2 == 1, "kernel sizes must be odd");
      require(ls.in_channels == expected_in, "layer input channels must match previous output");
      expected_in = ls.out_channels;
      ConvLayer<S> layer;
      layer.in_channels = ls.in_channels;
      layer.out_channels = ls.out_channels;
      layer.kernel = ls.kernel;
      layer.weights.resize(ls.out_channels, ls.kernel * ls.kernel * ls.in_channels);
      const double fan_in = static_cast<double>(ls.in_channels) * ls.kernel * ls.kernel;
      std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / fan_in));
      for (Eigen::Index j = 0; j < layer.weights.cols(); ++j)
        for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) layer.weights(r, j) = static_cast<S>(normal(rng));
      layer.bias = Vec::Zero(ls.out_channels);
      if (ls.prelu) layer.slopes = Vec::Constant(spec_.slopes == SlopeMode::Shared ? 1 : ls.out_channels, S(0.25));
      layers_.push_back(std::move(layer));
    }
    require(expected_in == 1, "the last layer must produce one channel");
  }

  const NetSpec& spec() const { return spec_; }
  Channel channel() const { return spec_.channel; }
  bool has_skip() const { return spec_.skip; }
  std::vector<ConvLayer<S>>& layers() { return layers_; }
  const std::vector<ConvLayer<S>>& layers() const { return layers_; }
  bool trained() const { return trained_; }
  void set_trained(bool t) { trained_ = t; }

  void set_zero() {
    for (auto& l : layers_) {
      l.weights.setZero();
      l.bias.setZero();
    }
  }

  std::vector<std::span<S>> parameter_views() {
    std::vector<std::span<S>> out;
    for (auto& l : layers_) {
      out.emplace_back(l.weights.data(), static_cast<std::size_t>(l.weights.size()));
      out.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
      out.emplace_back(l.slopes.data(), static_cast<std::size_t>(l.slopes.size()));
    }
    return out;
  }

  Gradients<S> zero_gradients() const {
    Gradients<S> g;
    for (const auto& l : layers_)
      g.layers.push_back({Mat::Zero(l.weights.rows(), l.weights.cols()), Vec::Zero(l.bias.size()),
                          Vec::Zero(l.slopes.size())});
    return g;
  }

  /// x is 1 x (h*w); returns 1 x (h*w). Fills `cache` when given.
  Mat forward(const Mat& x, int h, int w, Cache* cache = nullptr) const {
    require(x.rows() == 1 && x.cols() == static_cast<Eigen::Index>(h) * w, "forward: input shape mismatch");
    require(h >= spec_.max_kernel() && w >= spec_.max_kernel(), "forward: raster smaller than the largest kernel");
    if (cache) {
      cache->height = h;
      cache->width = w;
      cache->inputs.clear();
      cache->pre.clear();
    }
    Mat current = x;
    Mat shifted;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto& layer = layers_[i];
      Mat z = convolve(layer, current, h, w, shifted);
      if (cache) {
        cache->inputs.push_back(std::move(current));
        cache->pre.push_back(z);
      }
      if (layer.has_prelu()) apply_prelu(layer, z);
      current = std::move(z);
    }
    if (spec_.skip) current += x;
    if (cache) cache->output = current;
    return current;
  }

  Image forward(const Image& raster) const {
    const int h = static_cast<int>(raster.rows());
    const int w = static_cast<int>(raster.cols());
    Mat x = to_row(raster);
    Mat y = forward(x, h, w);
    return from_row(y, h, w);
  }

  /// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(output).
  void backward(const Cache& cache, const Mat& output_grad, Gradients<S>& grads) const {
    const int h = cache.height;
    const int w = cache.width;
    Mat delta = output_grad;  // the skip path only feeds the input, which has no parameters
    Mat shifted;
    Mat back;
    for (std::size_t li = layers_.size(); li-- > 0;) {
      const auto& layer = layers_[li];
      auto& g = grads.layers[li];
      const Mat& z = cache.pre[li];
      if (layer.has_prelu()) {
        const bool shared = layer.slopes.size() == 1;
        for (Eigen::Index p = 0; p < z.cols(); ++p)
          for (Eigen::Index c = 0; c < z.rows(); ++c) {
            const S v = z(c, p);
            if (v < S(0)) {
              g.slopes(shared ? 0 : c) += delta(c, p) * v;
              delta(c, p) *= layer.slope(c);
            }
          }
      }
      g.bias += delta.rowwise().sum();
      const Mat& input = cache.inputs[li];
      const bool need_input_grad = li > 0;
      Mat input_grad;
      if (need_input_grad) input_grad = Mat::Zero(input.rows(), input.cols());
      shifted.resize(input.rows(), input.cols());
      back.resize(input.rows(), input.cols());
      const int k = layer.kernel;
      const int pad = layer.padding();
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          const int o = ky * k + kx;
          const int dy = ky - pad;
          const int dx = kx - pad;
          detail::gather_shifted(input, shifted, h, w, dy, dx);
          g.weights.middleCols(o * layer.in_channels, layer.in_channels).noalias() += delta * shifted.transpose();
          if (need_input_grad) {
            back.noalias() = layer.weights.middleCols(o * layer.in_channels, layer.in_channels).transpose() * delta;
            detail::scatter_shifted_add(back, input_grad, h, w, dy, dx);
          }
        }
      if (need_input_grad) delta = std::move(input_grad);
    }
  }

  static Mat to_row(const Image& raster) {
    Mat x(1, raster.size());
    for (Eigen::Index y = 0; y < raster.rows(); ++y)
      for (Eigen::Index c = 0; c < raster.cols(); ++c) x(0, y * raster.cols() + c) = static_cast<S>(raster(y, c));
    return x;
  }

  static Image from_row(const Mat& x, int h, int w) {
    Image out(h, w);
    for (int y = 0; y < h; ++y)
      for (int c = 0; c < w; ++c) out(y, c) = static_cast<double>(x(0, static_cast<Eigen::Index>(y) * w + c));
    return out;
  }

 private:
  static Mat convolve(const ConvLayer<S>& layer, const Mat& input, int h, int w, Mat& shifted) {
    Mat z(layer.out_channels, input.cols());
    z.colwise() = layer.bias;
    shifted.resize(input.rows(), input.cols());
    const int k = layer.kernel;
    const int pad = layer.padding();
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const int o = ky * k + kx;
        const auto block = layer.weights.middleCols(o * layer.in_channels, layer.in_channels);
        if (ky == pad && kx == pad) {
          z.noalias() += block * input;
        } else {
          detail::gather_shifted(input, shifted, h, w, ky - pad, kx - pad);
          z.noalias() += block * shifted;
        }
      }
    return z;
  }

  static void apply_prelu(const ConvLayer<S>& layer, Mat& z) {
    for (Eigen::Index p = 0; p < z.cols(); ++p)
      for (Eigen::Index c = 0; c < z.rows(); ++c)
        if (z(c, p) < S(0)) z(c, p) *= layer.slope(c);
  }

  NetSpec spec_;
  std::vector<ConvLayer<S>> layers_;
  bool trained_ = false;
};

template <typename S>
S prelu(S x, S a) {
  return x >= S(0) ? x : a * x;
}

/// 0.5 * sum (pred - target)^2 / batch_size
template <typename A, typename B>
double euclidean_loss(const Eigen::DenseBase<A>& pred, const Eigen::DenseBase<B>& target, int batch_size = 1) {
  require(pred.rows() == target.rows() && pred.cols() == target.cols(), "euclidean_loss: shape mismatch");
  require(batch_size >= 1, "euclidean_loss: batch size must be positive");
  double sum = 0.0;
  for (Eigen::Index j = 0; j < pred.cols(); ++j)
    for (Eigen::Index i = 0; i < pred.rows(); ++i) {
      const double d = static_cast<double>(pred.derived().coeff(i, j)) - static_cast<double>(target.derived().coeff(i, j));
      sum += d * d;
    }
  return 0.5 * sum / batch_size;
}

/// Forward and backward for one (input, target) pair; returns the loss and
/// accumulates gradients of loss / batch_size.
template <typename S>
double accumulate_pair_gradient(const HallucinationNet<S>& net, const Image& input, const Image& target,
                                Gradients<S>& grads, int batch_size = 1) {
  require(input.rows() == target.rows() && input.cols() == target.cols(), "input/target shape mismatch");
  using Mat = typename HallucinationNet<S>::Mat;
  typename HallucinationNet<S>::Cache cache;
  const int h = static_cast<int>(input.rows());
  const int w = static_cast<int>(input.cols());
  const Mat x = HallucinationNet<S>::to_row(input);
  const Mat t = HallucinationNet<S>::to_row(target);
  const Mat y = net.forward(x, h, w, &cache);
  const Mat diff = y - t;
  net.backward(cache, diff / static_cast<S>(batch_size), grads);
  return euclidean_loss(y, t, batch_size);
}

/// Gradients of euclidean_loss(forward(input), target) for a single pair.
template <typename S>
Gradients<S> backward(const HallucinationNet<S>& net, const Image& input, const Image& target) {
  auto grads = net.zero_gradients();
  accumulate_pair_gradient(net, input, target, grads, 1);
  return grads;
}

// ---------------------------------------------------------------------------
// ADAM

struct AdamConfig {
  double learning_rate = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First/second moment estimates per parameter tensor, plus the step count.
class AdamState {
 public:
  AdamState() = default;
  explicit AdamState(AdamConfig config) : config_(config) {}

  const AdamConfig& config() const { return config_; }
  std::int64_t timestep() const { return t_; }
  const std::vector<std::vector<double>>& first_moment() const { return m_; }
  const std::vector<std::vector<double>>& second_moment() const { return v_; }

  /// Bias-corrected update of every tensor in `params` using `grads`.
  template <typename S>
  void step(const std::vector<std::span<S>>& params, const std::vector<std::span<S>>& grads) {
    require(params.size() == grads.size(), "adam_step: parameter/gradient count mismatch");
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.emplace_back(p.size(), 0.0);
        v_.emplace_back(p.size(), 0.0);
      }
    }
    require(m_.size() == params.size(), "adam_step: parameter layout changed");
    ++t_;
    const double b1 = config_.beta1;
    const double b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      require(params[i].size() == grads[i].size() && params[i].size() == m_[i].size(), "adam_step: shape mismatch");
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < params[i].size(); ++j) {
        const double g = static_cast<double>(grads[i][j]);
        m[j] = b1 * m[j] + (1.0 - b1) * g;
        v[j] = b2 * v[j] + (1.0 - b2) * g * g;
        const double m_hat = m[j] / c1;
        const double v_hat = v[j] / c2;
        params[i][j] = static_cast<S>(static_cast<double>(params[i][j]) -
                                      config_.learning_rate * m_hat / (std::sqrt(v_hat) + config_.epsilon));
      }
    }
  }

 private:
  AdamConfig config_{};
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::int64_t t_ = 0;
};

}  // namespace nirvis
