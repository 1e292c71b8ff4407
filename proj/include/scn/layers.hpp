#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "scn/errors.hpp"
#include "scn/tensor.hpp"

namespace scn {

enum class Mode { kTrain, kEval };

/// Named trainable tensors and non-trainable buffers of one network. Layers
/// keep indices into the store, so copying a store snapshots the network.
template <typename Scalar>
struct ParamStore {
  std::vector<std::string> names;
  std::vector<Mat<Scalar>> values;
  std::vector<std::string> buffer_names;
  std::vector<Mat<Scalar>> buffers;

  int add(std::string name, Mat<Scalar> value) {
    names.push_back(std::move(name));
    values.push_back(std::move(value));
    return static_cast<int>(values.size()) - 1;
  }
  int add_buffer(std::string name, Mat<Scalar> value) {
    buffer_names.push_back(std::move(name));
    buffers.push_back(std::move(value));
    return static_cast<int>(buffers.size()) - 1;
  }

  /// Zero gradients laid out like `values`.
  std::vector<Mat<Scalar>> zero_gradients() const {
    std::vector<Mat<Scalar>> g;
    g.reserve(values.size());
    for (const auto& v : values) g.push_back(Mat<Scalar>::Zero(v.rows(), v.cols()));
    return g;
  }

  Eigen::Index parameter_count() const {
    Eigen::Index n = 0;
    for (const auto& v : values) n += v.size();
    return n;
  }

  /// FNV-1a over names, shapes and raw bytes of parameters and buffers.
  std::uint64_t checksum() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](const void* data, std::size_t bytes) {
      const auto* p = static_cast<const unsigned char*>(data);
      for (std::size_t i = 0; i < bytes; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
      }
    };
    auto mix_all = [&](const std::vector<std::string>& n, const std::vector<Mat<Scalar>>& v) {
      for (std::size_t i = 0; i < v.size(); ++i) {
        mix(n[i].data(), n[i].size());
        const std::int64_t shape[2] = {v[i].rows(), v[i].cols()};
        mix(shape, sizeof shape);
        mix(v[i].data(), sizeof(Scalar) * static_cast<std::size_t>(v[i].size()));
      }
    };
    mix_all(names, values);
    mix_all(buffer_names, buffers);
    return h;
  }
};

template <typename Scalar>
using Gradients = std::vector<Mat<Scalar>>;

// ---------------------------------------------------------------------------
// Batch normalisation over the columns of a channels x samples matrix.

template <typename Scalar>
struct BatchNormCache {
  Mat<Scalar> normalized;
  Vec<Scalar> inv_std;
  Vec<Scalar> batch_mean;
  Vec<Scalar> batch_var;
  Mode mode = Mode::kEval;
};

template <typename Scalar>
class BatchNorm {
 public:
  BatchNorm() = default;
  BatchNorm(ParamStore<Scalar>& store, const std::string& name, int channels)
      : channels_(channels) {
    gamma_ = store.add(name + ".gamma", Mat<Scalar>::Ones(channels, 1));
    beta_ = store.add(name + ".beta", Mat<Scalar>::Zero(channels, 1));
    mean_ = store.add_buffer(name + ".running_mean", Mat<Scalar>::Zero(channels, 1));
    var_ = store.add_buffer(name + ".running_var", Mat<Scalar>::Ones(channels, 1));
  }

  static constexpr Scalar kEps = Scalar(1e-3);
  static constexpr Scalar kMomentum = Scalar(0.1);

  Mat<Scalar> forward(const ParamStore<Scalar>& p, const Mat<Scalar>& x, BatchNormCache<Scalar>& cache,
                      Mode mode) const {
    if (x.rows() != channels_) throw InvalidArgument("batch norm: channel mismatch");
    cache.mode = mode;
    if (mode == Mode::kTrain) {
      const Scalar n = static_cast<Scalar>(x.cols());
      cache.batch_mean = x.rowwise().mean();
      cache.batch_var = (x.colwise() - cache.batch_mean).rowwise().squaredNorm() / n;
      cache.inv_std = (cache.batch_var.array() + kEps).rsqrt().matrix();
      cache.normalized.noalias() = cache.inv_std.asDiagonal() * (x.colwise() - cache.batch_mean);
    } else {
      cache.inv_std = (p.buffers[var_].col(0).array() + kEps).rsqrt().matrix();
      cache.normalized.noalias() = cache.inv_std.asDiagonal() * (x.colwise() - p.buffers[mean_].col(0));
    }
    Mat<Scalar> y(x.rows(), x.cols());
    y.noalias() = (p.values[gamma_].col(0).asDiagonal() * cache.normalized).colwise() + p.values[beta_].col(0);
    return y;
  }

  /// Folds the batch statistics of a training-mode pass into the running ones.
  void update_running(ParamStore<Scalar>& p, const BatchNormCache<Scalar>& cache, Eigen::Index count) const {
    if (cache.mode != Mode::kTrain) return;
    const Scalar n = static_cast<Scalar>(count);
    const Scalar unbiased = n > 1 ? n / (n - 1) : Scalar(1);
    p.buffers[mean_] = (Scalar(1) - kMomentum) * p.buffers[mean_] + kMomentum * cache.batch_mean;
    p.buffers[var_] = (Scalar(1) - kMomentum) * p.buffers[var_] + kMomentum * unbiased * cache.batch_var;
  }

  Mat<Scalar> backward(const ParamStore<Scalar>& p, const BatchNormCache<Scalar>& cache, const Mat<Scalar>& dy,
                       Gradients<Scalar>* grads, bool need_input_grad) const {
    const auto& xhat = cache.normalized;
    if (grads) {
      (*grads)[gamma_].col(0) += (dy.cwiseProduct(xhat)).rowwise().sum();
      (*grads)[beta_].col(0) += dy.rowwise().sum();
    }
    if (!need_input_grad) return {};
    const Vec<Scalar> scale = p.values[gamma_].col(0).cwiseProduct(cache.inv_std);
    if (cache.mode == Mode::kEval) return scale.asDiagonal() * dy;
    const Scalar n = static_cast<Scalar>(dy.cols());
    const Vec<Scalar> sum_dy = dy.rowwise().sum() / n;
    const Vec<Scalar> sum_dy_xhat = dy.cwiseProduct(xhat).rowwise().sum() / n;
    Mat<Scalar> dx = dy.colwise() - sum_dy;
    dx -= sum_dy_xhat.asDiagonal() * xhat;
    return scale.asDiagonal() * dx;
  }

  int channels() const { return channels_; }

 private:
  int channels_ = 0;
  int gamma_ = -1, beta_ = -1, mean_ = -1, var_ = -1;
};

// ---------------------------------------------------------------------------
// k x k convolution, stride 1, zero "same" padding, via im2col + GEMM.

// Row block k = ky*kernel + kx of `cols` holds, for every output pixel, the
// input channel vector at offset (kx - pad, ky - pad), or zeros outside.
template <typename Scalar>
void im2col(const FeatureMap<Scalar>& x, int kernel, Mat<Scalar>& cols) {
  const Eigen::Index c = x.channels();
  const Eigen::Index rows = kernel * kernel * c;
  const int pad = kernel / 2;
  cols.setZero(rows, x.values.cols());
  const Scalar* src = x.values.data();
  Scalar* dst = cols.data();
  for (int b = 0; b < x.batch; ++b) {
    for (int y = 0; y < x.height; ++y) {
      for (int ky = 0; ky < kernel; ++ky) {
        const int sy = y + ky - pad;
        if (sy < 0 || sy >= x.height) continue;
        for (int kx = 0; kx < kernel; ++kx) {
          const int dx = kx - pad;
          const int x0 = std::max(0, -dx);
          const int x1 = std::min(x.width, x.width - dx);
          const Eigen::Index k = ky * kernel + kx;
          const Scalar* s = src + x.column(b, sy, x0 + dx) * c;
          Scalar* d = dst + x.column(b, y, x0) * rows + k * c;
          for (int i = x0; i < x1; ++i, s += c, d += rows) std::copy_n(s, c, d);
        }
      }
    }
  }
}

/// Adjoint of im2col: scatters-adds column blocks back onto the input grid.
template <typename Scalar>
void col2im(const Mat<Scalar>& cols, int kernel, FeatureMap<Scalar>& dx_out) {
  const Eigen::Index c = dx_out.channels();
  const Eigen::Index rows = kernel * kernel * c;
  const int pad = kernel / 2;
  const Scalar* src = cols.data();
  Scalar* dst = dx_out.values.data();
  for (int b = 0; b < dx_out.batch; ++b) {
    for (int y = 0; y < dx_out.height; ++y) {
      for (int ky = 0; ky < kernel; ++ky) {
        const int sy = y + ky - pad;
        if (sy < 0 || sy >= dx_out.height) continue;
        for (int kx = 0; kx < kernel; ++kx) {
          const int dx = kx - pad;
          const int x0 = std::max(0, -dx);
          const int x1 = std::min(dx_out.width, dx_out.width - dx);
          const Eigen::Index k = ky * kernel + kx;
          const Scalar* s = src + dx_out.column(b, y, x0) * rows + k * c;
          Scalar* d = dst + dx_out.column(b, sy, x0 + dx) * c;
          for (int i = x0; i < x1; ++i, s += rows, d += c) {
            for (Eigen::Index j = 0; j < c; ++j) d[j] += s[j];
          }
        }
      }
    }
  }
}

template <typename Scalar>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParamStore<Scalar>& store, const std::string& name, int in, int out, int kernel, std::mt19937_64& rng)
      : in_(in), out_(out), kernel_(kernel) {
    if (kernel % 2 != 1) throw InvalidArgument("conv: kernel size must be odd");
    const int fan_in = in * kernel * kernel;
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / fan_in));
    Mat<Scalar> w(out, fan_in);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<Scalar>(normal(rng));
    weight_ = store.add(name + ".weight", std::move(w));
    bias_ = store.add(name + ".bias", Mat<Scalar>::Zero(out, 1));
  }

  /// Leaves the im2col matrix in `cols` for the backward pass.
  FeatureMap<Scalar> forward(const ParamStore<Scalar>& p, const FeatureMap<Scalar>& x, Mat<Scalar>& cols) const {
    if (x.channels() != in_) throw InvalidArgument("conv: channel mismatch");
    im2col(x, kernel_, cols);
    FeatureMap<Scalar> y;
    y.batch = x.batch;
    y.height = x.height;
    y.width = x.width;
    y.values.noalias() = p.values[weight_] * cols;
    y.values.colwise() += p.values[bias_].col(0);
    return y;
  }

  FeatureMap<Scalar> forward(const ParamStore<Scalar>& p, const FeatureMap<Scalar>& x) const {
    Mat<Scalar> cols;
    return forward(p, x, cols);
  }

  /// `cols` is the matrix left by forward; `batch`, `height`, `width` give
  /// the input geometry.
  FeatureMap<Scalar> backward(const ParamStore<Scalar>& p, const Mat<Scalar>& cols, int batch, int height, int width,
                              const Mat<Scalar>& dy, Gradients<Scalar>* grads, bool need_input_grad) const {
    if (grads) {
      (*grads)[weight_].noalias() += dy * cols.transpose();
      (*grads)[bias_].col(0) += dy.rowwise().sum();
    }
    if (!need_input_grad) return {};
    const Mat<Scalar> d_cols = p.values[weight_].transpose() * dy;
    FeatureMap<Scalar> dx(in_, batch, height, width);
    col2im(d_cols, kernel_, dx);
    return dx;
  }

  FeatureMap<Scalar> backward(const ParamStore<Scalar>& p, const FeatureMap<Scalar>& x, const Mat<Scalar>& dy,
                              Gradients<Scalar>* grads, bool need_input_grad) const {
    Mat<Scalar> cols;
    if (grads) im2col(x, kernel_, cols);
    return backward(p, cols, x.batch, x.height, x.width, dy, grads, need_input_grad);
  }

  int weight_index() const { return weight_; }
  int bias_index() const { return bias_; }
  int in_channels() const { return in_; }
  int out_channels() const { return out_; }

 private:
  int in_ = 0, out_ = 0, kernel_ = 3;
  int weight_ = -1, bias_ = -1;
};

// ---------------------------------------------------------------------------
// Fully connected layer on features x batch matrices.

template <typename Scalar>
class Linear {
 public:
  Linear() = default;
  Linear(ParamStore<Scalar>& store, const std::string& name, int in, int out, std::mt19937_64& rng, double gain = 2.0)
      : in_(in), out_(out) {
    std::normal_distribution<double> normal(0.0, std::sqrt(gain / in));
    Mat<Scalar> w(out, in);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<Scalar>(normal(rng));
    weight_ = store.add(name + ".weight", std::move(w));
    bias_ = store.add(name + ".bias", Mat<Scalar>::Zero(out, 1));
  }

  Mat<Scalar> forward(const ParamStore<Scalar>& p, const Mat<Scalar>& x) const {
    if (x.rows() != in_) throw InvalidArgument("linear: feature size mismatch");
    Mat<Scalar> y = p.values[weight_] * x;
    y.colwise() += p.values[bias_].col(0);
    return y;
  }

  Mat<Scalar> backward(const ParamStore<Scalar>& p, const Mat<Scalar>& x, const Mat<Scalar>& dy,
                       Gradients<Scalar>* grads, bool need_input_grad) const {
    if (grads) {
      (*grads)[weight_].noalias() += dy * x.transpose();
      (*grads)[bias_].col(0) += dy.rowwise().sum();
    }
    if (!need_input_grad) return {};
    return p.values[weight_].transpose() * dy;
  }

  int weight_index() const { return weight_; }
  int bias_index() const { return bias_; }

 private:
  int in_ = 0, out_ = 0;
  int weight_ = -1, bias_ = -1;
};

// ---------------------------------------------------------------------------
// 2x2 max pooling that records argmax positions, and the matching unpooling.

/// For every pooled element, the input column (pixel) holding the maximum.
using PoolIndices = Eigen::Matrix<std::int32_t, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
struct Pooled {
  FeatureMap<Scalar> values;
  PoolIndices indices;
};

/// Non-overlapping 2x2 windows; ties resolve to the first maximum in row-major
/// window order.
template <typename Scalar>
Pooled<Scalar> pool_with_indices(const FeatureMap<Scalar>& x) {
  if (x.height % 2 != 0 || x.width % 2 != 0) throw InvalidArgument("pool: spatial size must be even");
  const int c = x.channels();
  Pooled<Scalar> out{FeatureMap<Scalar>(c, x.batch, x.height / 2, x.width / 2), PoolIndices()};
  out.indices.resize(c, out.values.values.cols());
  for (int b = 0; b < x.batch; ++b) {
    for (int y = 0; y < out.values.height; ++y) {
      for (int xx = 0; xx < out.values.width; ++xx) {
        const Eigen::Index dst = out.values.column(b, y, xx);
        const Eigen::Index window[4] = {x.column(b, 2 * y, 2 * xx), x.column(b, 2 * y, 2 * xx + 1),
                                        x.column(b, 2 * y + 1, 2 * xx), x.column(b, 2 * y + 1, 2 * xx + 1)};
        for (int ch = 0; ch < c; ++ch) {
          Eigen::Index best = window[0];
          Scalar best_value = x.values(ch, best);
          for (int k = 1; k < 4; ++k) {
            const Scalar v = x.values(ch, window[k]);
            if (v > best_value) {
              best_value = v;
              best = window[k];
            }
          }
          out.values.values(ch, dst) = best_value;
          out.indices(ch, dst) = static_cast<std::int32_t>(best);
        }
      }
    }
  }
  return out;
}

/// Scatters each pooled value to its recorded position in a map of the
/// pre-pool size; everything else is zero.
template <typename Scalar>
FeatureMap<Scalar> unpool_with_indices(const FeatureMap<Scalar>& pooled, const PoolIndices& indices, int out_height,
                                       int out_width) {
  if (out_height != 2 * pooled.height || out_width != 2 * pooled.width) {
    throw InvalidArgument("unpool: output size must be twice the pooled size");
  }
  if (indices.rows() != pooled.values.rows() || indices.cols() != pooled.values.cols()) {
    throw InvalidArgument("unpool: index shape mismatch");
  }
  FeatureMap<Scalar> out(pooled.channels(), pooled.batch, out_height, out_width);
  for (int b = 0; b < pooled.batch; ++b) {
    for (int y = 0; y < pooled.height; ++y) {
      for (int x = 0; x < pooled.width; ++x) {
        const Eigen::Index src = pooled.column(b, y, x);
        const Eigen::Index top_left = out.column(b, 2 * y, 2 * x);
        for (int ch = 0; ch < pooled.channels(); ++ch) {
          const Eigen::Index idx = indices(ch, src);
          const Eigen::Index off = idx - top_left;
          if (off != 0 && off != 1 && off != out_width && off != out_width + 1) {
            throw InternalConsistency("unpool: index outside its pooling window");
          }
          out.values(ch, idx) = pooled.values(ch, src);
        }
      }
    }
  }
  return out;
}

/// Gradient of pool_with_indices: routes each pooled gradient to its argmax.
template <typename Scalar>
FeatureMap<Scalar> pool_backward(const Mat<Scalar>& d_pooled, const PoolIndices& indices, int batch, int in_height,
                                 int in_width) {
  FeatureMap<Scalar> dx(static_cast<int>(d_pooled.rows()), batch, in_height, in_width);
  for (Eigen::Index p = 0; p < d_pooled.cols(); ++p) {
    for (Eigen::Index ch = 0; ch < d_pooled.rows(); ++ch) dx.values(ch, indices(ch, p)) += d_pooled(ch, p);
  }
  return dx;
}

/// Gradient of unpool_with_indices: gathers at the recorded positions.
template <typename Scalar>
Mat<Scalar> unpool_backward(const Mat<Scalar>& d_out, const PoolIndices& indices) {
  Mat<Scalar> d_pooled(indices.rows(), indices.cols());
  for (Eigen::Index p = 0; p < indices.cols(); ++p) {
    for (Eigen::Index ch = 0; ch < indices.rows(); ++ch) d_pooled(ch, p) = d_out(ch, indices(ch, p));
  }
  return d_pooled;
}

// ---------------------------------------------------------------------------
// Nearest-neighbour 2x upsampling (generator).

template <typename Scalar>
FeatureMap<Scalar> upsample2(const FeatureMap<Scalar>& x) {
  FeatureMap<Scalar> out(x.channels(), x.batch, 2 * x.height, 2 * x.width);
  for (int b = 0; b < x.batch; ++b) {
    for (int y = 0; y < out.height; ++y) {
      for (int xx = 0; xx < out.width; ++xx) {
        out.values.col(out.column(b, y, xx)) = x.values.col(x.column(b, y / 2, xx / 2));
      }
    }
  }
  return out;
}

template <typename Scalar>
FeatureMap<Scalar> upsample2_backward(const FeatureMap<Scalar>& d_out) {
  FeatureMap<Scalar> dx(d_out.channels(), d_out.batch, d_out.height / 2, d_out.width / 2);
  for (int b = 0; b < d_out.batch; ++b) {
    for (int y = 0; y < d_out.height; ++y) {
      for (int xx = 0; xx < d_out.width; ++xx) {
        dx.values.col(dx.column(b, y / 2, xx / 2)) += d_out.values.col(d_out.column(b, y, xx));
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Activations.

enum class Activation { kNone, kRelu, kLeakyRelu };

template <typename Scalar>
Mat<Scalar> activate(const Mat<Scalar>& x, Activation act) {
  switch (act) {
    case Activation::kRelu: return x.cwiseMax(Scalar(0));
    case Activation::kLeakyRelu: return x.cwiseMax(Scalar(0.2) * x);
    case Activation::kNone: break;
  }
  return x;
}

template <typename Scalar>
void activate_inplace(Mat<Scalar>& x, Activation act) {
  switch (act) {
    case Activation::kRelu: x = x.cwiseMax(Scalar(0)); break;
    case Activation::kLeakyRelu: x = x.cwiseMax(Scalar(0.2) * x); break;
    case Activation::kNone: break;
  }
}

/// Derivative in terms of the activation output (sign is preserved by all
/// supported activations).
template <typename Scalar>
Mat<Scalar> activate_backward(const Mat<Scalar>& y, const Mat<Scalar>& dy, Activation act) {
  switch (act) {
    case Activation::kRelu: return (y.array() > Scalar(0)).select(dy, Scalar(0));
    case Activation::kLeakyRelu: return (y.array() > Scalar(0)).select(dy, Scalar(0.2) * dy);
    case Activation::kNone: break;
  }
  return dy;
}

/// Softmax over channels (rows) independently for every column.
template <typename Scalar>
Mat<Scalar> softmax_columns(const Mat<Scalar>& logits) {
  const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> max = logits.colwise().maxCoeff();
  Mat<Scalar> e = (logits.rowwise() - max).array().exp().matrix();
  const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> sum = e.colwise().sum();
  e.array().rowwise() /= sum.array();
  return e;
}

template <typename Scalar>
Mat<Scalar> softmax_backward(const Mat<Scalar>& probs, const Mat<Scalar>& d_probs) {
  const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> dot = probs.cwiseProduct(d_probs).colwise().sum();
  return probs.cwiseProduct(d_probs.rowwise() - dot);
}

template <typename Scalar>
Mat<Scalar> sigmoid(const Mat<Scalar>& x) {
  return (Scalar(1) / (Scalar(1) + (-x.array()).exp())).matrix();
}

// ---------------------------------------------------------------------------
// BN -> conv -> activation, the unit every convolutional network here is made
// of (normalisation precedes each weight layer).

template <typename Scalar>
struct ConvBlockCache {
  BatchNormCache<Scalar> bn;
  Mat<Scalar> cols;  // im2col of the normalised input
  FeatureMap<Scalar> output;
};

template <typename Scalar>
class ConvBlock {
 public:
  ConvBlock() = default;
  ConvBlock(ParamStore<Scalar>& store, const std::string& name, int in, int out, Activation act,
            std::mt19937_64& rng, int kernel = 3)
      : bn_(store, name + ".bn", in), conv_(store, name + ".conv", in, out, kernel, rng), act_(act) {}

  FeatureMap<Scalar> forward(const ParamStore<Scalar>& p, const FeatureMap<Scalar>& x, ConvBlockCache<Scalar>& cache,
                             Mode mode) const {
    FeatureMap<Scalar> normalized;
    normalized.batch = x.batch;
    normalized.height = x.height;
    normalized.width = x.width;
    normalized.values = bn_.forward(p, x.values, cache.bn, mode);
    FeatureMap<Scalar> y = conv_.forward(p, normalized, cache.cols);
    activate_inplace(y.values, act_);
    cache.output = y;
    return y;
  }

  void update_running(ParamStore<Scalar>& p, const ConvBlockCache<Scalar>& cache) const {
    bn_.update_running(p, cache.bn, cache.output.values.cols());
  }

  FeatureMap<Scalar> backward(const ParamStore<Scalar>& p, const ConvBlockCache<Scalar>& cache,
                              const FeatureMap<Scalar>& dy, Gradients<Scalar>* grads, bool need_input_grad) const {
    const Mat<Scalar> d_pre = activate_backward(cache.output.values, dy.values, act_);
    const bool need_bn = need_input_grad || grads != nullptr;
    FeatureMap<Scalar> d_conv_in =
        conv_.backward(p, cache.cols, dy.batch, dy.height, dy.width, d_pre, grads, need_bn);
    if (!need_bn) return {};
    FeatureMap<Scalar> dx;
    dx.batch = dy.batch;
    dx.height = dy.height;
    dx.width = dy.width;
    dx.values = bn_.backward(p, cache.bn, d_conv_in.values, grads, need_input_grad);
    return dx;
  }

  const Conv2d<Scalar>& conv() const { return conv_; }

 private:
  BatchNorm<Scalar> bn_;
  Conv2d<Scalar> conv_;
  Activation act_ = Activation::kRelu;
};

/// BN -> linear -> activation on features x batch matrices.
template <typename Scalar>
struct DenseBlockCache {
  BatchNormCache<Scalar> bn;
  Mat<Scalar> linear_input;
  Mat<Scalar> output;
};

template <typename Scalar>
class DenseBlock {
 public:
  DenseBlock() = default;
  DenseBlock(ParamStore<Scalar>& store, const std::string& name, int in, int out, Activation act,
             std::mt19937_64& rng, double gain = 2.0)
      : bn_(store, name + ".bn", in), linear_(store, name + ".linear", in, out, rng, gain), act_(act) {}

  Mat<Scalar> forward(const ParamStore<Scalar>& p, const Mat<Scalar>& x, DenseBlockCache<Scalar>& cache,
                      Mode mode) const {
    cache.linear_input = bn_.forward(p, x, cache.bn, mode);
    cache.output = activate(linear_.forward(p, cache.linear_input), act_);
    return cache.output;
  }

  void update_running(ParamStore<Scalar>& p, const DenseBlockCache<Scalar>& cache) const {
    bn_.update_running(p, cache.bn, cache.linear_input.cols());
  }

  Mat<Scalar> backward(const ParamStore<Scalar>& p, const DenseBlockCache<Scalar>& cache, const Mat<Scalar>& dy,
                       Gradients<Scalar>* grads, bool need_input_grad) const {
    const Mat<Scalar> d_pre = activate_backward(cache.output, dy, act_);
    const bool need_bn = need_input_grad || grads != nullptr;
    const Mat<Scalar> d_lin = linear_.backward(p, cache.linear_input, d_pre, grads, need_bn);
    if (!need_bn) return {};
    return bn_.backward(p, cache.bn, d_lin, grads, need_input_grad);
  }

  const Linear<Scalar>& linear() const { return linear_; }

 private:
  BatchNorm<Scalar> bn_;
  Linear<Scalar> linear_;
  Activation act_ = Activation::kNone;
};

/// Per-sample flattening of a feature map into (channels*h*w) x batch; the
/// memory layout is already sample-contiguous so this is a reshape.
template <typename Scalar>
Mat<Scalar> flatten(const FeatureMap<Scalar>& x) {
  return Eigen::Map<const Mat<Scalar>>(x.values.data(), x.values.rows() * x.pixels_per_sample(), x.batch);
}

template <typename Scalar>
FeatureMap<Scalar> unflatten(const Mat<Scalar>& flat, int channels, int height, int width) {
  FeatureMap<Scalar> out;
  out.batch = static_cast<int>(flat.cols());
  out.height = height;
  out.width = width;
  out.values = Eigen::Map<const Mat<Scalar>>(flat.data(), channels, flat.cols() * height * width);
  return out;
}

}  // namespace scn
