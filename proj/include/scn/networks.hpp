#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "scn/layers.hpp"
#include "scn/tensor.hpp"

namespace scn {

struct SegNetConfig {
  int width = 64;
  int height = 32;
  int in_channels = 3;
  std::vector<int> channel_widths{16, 32, 64};
  int convs_per_stage = 1;
  int num_classes = kNumClasses;

  int num_stages() const { return static_cast<int>(channel_widths.size()); }
  void validate() const;
};

struct VaeGanConfig {
  int width = 64;
  int height = 32;
  int latent_dim = 16;
  std::vector<int> encoder_widths{16, 32, 64};
  std::vector<int> generator_widths{16, 32, 64};
  std::vector<int> discriminator_widths{16, 32, 64};
  int rec_feature_layer = 1;  // 1-based index of a discriminator conv layer

  void validate() const;
};

void to_json(nlohmann::json& j, const SegNetConfig& c);
void from_json(const nlohmann::json& j, SegNetConfig& c);
void to_json(nlohmann::json& j, const VaeGanConfig& c);
void from_json(const nlohmann::json& j, VaeGanConfig& c);

inline constexpr double kLogVarMin = -20.0;
inline constexpr double kLogVarMax = 4.0;

/// Diagonal Gaussian per sample; columns index the batch.
template <typename Scalar>
struct ShapeLatent {
  Mat<Scalar> mu;
  Mat<Scalar> sigma;

  int dim() const { return static_cast<int>(mu.rows()); }
  int batch() const { return static_cast<int>(mu.cols()); }
};

template <typename Scalar>
struct Reparameterized {
  Mat<Scalar> z;
  Mat<Scalar> noise;  // the standard-normal draw
};

/// z = mu + sigma * eps with eps ~ N(0, I) drawn column by column; sigma is
/// floored at 1e-8.
template <typename Scalar>
Reparameterized<Scalar> reparameterize(const ShapeLatent<Scalar>& latent, std::mt19937_64& rng) {
  if (latent.mu.rows() != latent.sigma.rows() || latent.mu.cols() != latent.sigma.cols()) {
    throw InvalidArgument("reparameterize: mu and sigma shapes differ");
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  Reparameterized<Scalar> out;
  out.noise.resize(latent.mu.rows(), latent.mu.cols());
  for (Eigen::Index i = 0; i < out.noise.size(); ++i) out.noise.data()[i] = static_cast<Scalar>(normal(rng));
  out.z = latent.mu + latent.sigma.cwiseMax(Scalar(1e-8)).cwiseProduct(out.noise);
  return out;
}

template <typename Scalar>
Mat<Scalar> standard_normal(int rows, int cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Mat<Scalar> out(rows, cols);
  for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = static_cast<Scalar>(normal(rng));
  return out;
}

namespace detail {

inline void check_input(int channels, int height, int width, int want_c, int want_h, int want_w, const char* who) {
  if (channels != want_c || height != want_h || width != want_w) {
    throw InvalidArgument(std::string(who) + ": input is " + std::to_string(channels) + "x" +
                          std::to_string(height) + "x" + std::to_string(width) + ", expected " +
                          std::to_string(want_c) + "x" + std::to_string(want_h) + "x" + std::to_string(want_w));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Segmentation network: encoder stages (blocks + 2x2 max pool) and a mirrored
// decoder that unpools with the encoder's argmax indices.

template <typename Scalar>
struct SegNetTrace {
  std::vector<ConvBlockCache<Scalar>> encoder;
  std::vector<ConvBlockCache<Scalar>> decoder;
  std::vector<PoolIndices> indices;
  std::vector<std::pair<int, int>> pre_pool_size;  // (height, width)
  ConvBlockCache<Scalar> classifier;
  FeatureMap<Scalar> probs;
};

template <typename Scalar>
class SegNet {
 public:
  SegNet() = default;
  SegNet(SegNetConfig config, std::uint64_t seed) : config_(std::move(config)) {
    config_.validate();
    std::mt19937_64 rng(seed);
    const auto& w = config_.channel_widths;
    int in = config_.in_channels;
    for (int s = 0; s < config_.num_stages(); ++s) {
      for (int j = 0; j < config_.convs_per_stage; ++j) {
        encoder_.emplace_back(store_, "seg.enc" + std::to_string(s) + "." + std::to_string(j), in, w[s],
                              Activation::kRelu, rng);
        in = w[s];
      }
    }
    for (int s = config_.num_stages() - 1; s >= 0; --s) {
      const int out = s > 0 ? w[s - 1] : w[0];
      for (int j = 0; j < config_.convs_per_stage; ++j) {
        const bool last = j + 1 == config_.convs_per_stage;
        decoder_.emplace_back(store_, "seg.dec" + std::to_string(s) + "." + std::to_string(j), w[s],
                              last ? out : w[s], Activation::kRelu, rng);
      }
    }
    classifier_ = ConvBlock<Scalar>(store_, "seg.classifier", w[0], config_.num_classes, Activation::kNone, rng);
  }

  FeatureMap<Scalar> forward(const FeatureMap<Scalar>& x, SegNetTrace<Scalar>& t, Mode mode) const {
    detail::check_input(x.channels(), x.height, x.width, config_.in_channels, config_.height, config_.width,
                        "segmentation network");
    const int per = config_.convs_per_stage;
    t.encoder.resize(encoder_.size());
    t.decoder.resize(decoder_.size());
    t.indices.resize(config_.num_stages());
    t.pre_pool_size.resize(config_.num_stages());
    FeatureMap<Scalar> h = x;
    for (int s = 0; s < config_.num_stages(); ++s) {
      for (int j = 0; j < per; ++j) h = encoder_[s * per + j].forward(store_, h, t.encoder[s * per + j], mode);
      t.pre_pool_size[s] = {h.height, h.width};
      auto pooled = pool_with_indices(h);
      t.indices[s] = std::move(pooled.indices);
      h = std::move(pooled.values);
    }
    int k = 0;
    for (int s = config_.num_stages() - 1; s >= 0; --s) {
      h = unpool_with_indices(h, t.indices[s], t.pre_pool_size[s].first, t.pre_pool_size[s].second);
      for (int j = 0; j < per; ++j, ++k) h = decoder_[k].forward(store_, h, t.decoder[k], mode);
    }
    h = classifier_.forward(store_, h, t.classifier, mode);
    h.values = softmax_columns(h.values);
    t.probs = h;
    return h;
  }

  FeatureMap<Scalar> predict(const FeatureMap<Scalar>& x) const {
    SegNetTrace<Scalar> t;
    return forward(x, t, Mode::kEval);
  }

  void update_running(const SegNetTrace<Scalar>& t) {
    for (std::size_t i = 0; i < encoder_.size(); ++i) encoder_[i].update_running(store_, t.encoder[i]);
    for (std::size_t i = 0; i < decoder_.size(); ++i) decoder_[i].update_running(store_, t.decoder[i]);
    classifier_.update_running(store_, t.classifier);
  }

  /// Parameter gradients of a scalar loss given d loss / d probabilities.
  void backward(const SegNetTrace<Scalar>& t, const FeatureMap<Scalar>& d_probs, Gradients<Scalar>& grads) const {
    const int per = config_.convs_per_stage;
    FeatureMap<Scalar> d = d_probs;
    d.values = softmax_backward(t.probs.values, d_probs.values);
    d = classifier_.backward(store_, t.classifier, d, &grads, true);
    int k = static_cast<int>(decoder_.size()) - 1;
    for (int s = 0; s < config_.num_stages(); ++s) {
      for (int j = 0; j < per; ++j, --k) d = decoder_[k].backward(store_, t.decoder[k], d, &grads, true);
      FeatureMap<Scalar> dp;
      dp.batch = d.batch;
      dp.height = d.height / 2;
      dp.width = d.width / 2;
      dp.values = unpool_backward(d.values, t.indices[s]);
      d = std::move(dp);
    }
    for (int s = config_.num_stages() - 1; s >= 0; --s) {
      d = pool_backward(d.values, t.indices[s], d.batch, t.pre_pool_size[s].first, t.pre_pool_size[s].second);
      for (int j = per - 1; j >= 0; --j) {
        const int i = s * per + j;
        d = encoder_[i].backward(store_, t.encoder[i], d, &grads, i > 0);
      }
    }
  }

  void zero_classifier() {
    store_.values[classifier_.conv().weight_index()].setZero();
    store_.values[classifier_.conv().bias_index()].setZero();
  }

  ParamStore<Scalar>& params() { return store_; }
  const ParamStore<Scalar>& params() const { return store_; }
  const SegNetConfig& config() const { return config_; }

 private:
  SegNetConfig config_;
  ParamStore<Scalar> store_;
  std::vector<ConvBlock<Scalar>> encoder_;
  std::vector<ConvBlock<Scalar>> decoder_;
  ConvBlock<Scalar> classifier_;
};

// ---------------------------------------------------------------------------
// VAE encoder E: mask probabilities -> (mu, sigma).

template <typename Scalar>
struct EncoderTrace {
  std::vector<ConvBlockCache<Scalar>> blocks;
  std::vector<PoolIndices> indices;
  std::vector<std::pair<int, int>> pre_pool_size;
  int flat_channels = 0, flat_height = 0, flat_width = 0;
  DenseBlockCache<Scalar> head;
  Mat<Scalar> raw_logvar;
  ShapeLatent<Scalar> latent;
};

template <typename Scalar>
class VaeEncoder {
 public:
  VaeEncoder() = default;
  VaeEncoder(const VaeGanConfig& config, std::mt19937_64& rng, ParamStore<Scalar>& store)
      : width_(config.width), height_(config.height), latent_dim_(config.latent_dim) {
    int in = kNumClasses;
    for (std::size_t s = 0; s < config.encoder_widths.size(); ++s) {
      blocks_.emplace_back(store, "enc.conv" + std::to_string(s), in, config.encoder_widths[s], Activation::kRelu,
                           rng);
      in = config.encoder_widths[s];
    }
    const int down = 1 << config.encoder_widths.size();
    head_ = DenseBlock<Scalar>(store, "enc.head", in * (height_ / down) * (width_ / down), 2 * latent_dim_,
                               Activation::kNone, rng, 1.0);
  }

  ShapeLatent<Scalar> forward(const ParamStore<Scalar>& p, const FeatureMap<Scalar>& y, EncoderTrace<Scalar>& t,
                              Mode mode) const {
    detail::check_input(y.channels(), y.height, y.width, kNumClasses, height_, width_, "encoder");
    t.blocks.resize(blocks_.size());
    t.indices.resize(blocks_.size());
    t.pre_pool_size.resize(blocks_.size());
    FeatureMap<Scalar> h = y;
    for (std::size_t s = 0; s < blocks_.size(); ++s) {
      h = blocks_[s].forward(p, h, t.blocks[s], mode);
      t.pre_pool_size[s] = {h.height, h.width};
      auto pooled = pool_with_indices(h);
      t.indices[s] = std::move(pooled.indices);
      h = std::move(pooled.values);
    }
    t.flat_channels = h.channels();
    t.flat_height = h.height;
    t.flat_width = h.width;
    const Mat<Scalar> out = head_.forward(p, flatten(h), t.head, mode);
    t.latent.mu = out.topRows(latent_dim_);
    t.raw_logvar = out.bottomRows(latent_dim_);
    t.latent.sigma = (Scalar(0.5) * t.raw_logvar.array().max(Scalar(kLogVarMin)).min(Scalar(kLogVarMax)))
                         .exp()
                         .matrix();
    return t.latent;
  }

  void update_running(ParamStore<Scalar>& p, const EncoderTrace<Scalar>& t) const {
    for (std::size_t s = 0; s < blocks_.size(); ++s) blocks_[s].update_running(p, t.blocks[s]);
    head_.update_running(p, t.head);
  }

  /// Backpropagates d loss / d mu and d loss / d sigma (either may be empty).
  FeatureMap<Scalar> backward(const ParamStore<Scalar>& p, const EncoderTrace<Scalar>& t, const Mat<Scalar>& d_mu,
                              const Mat<Scalar>& d_sigma, Gradients<Scalar>* grads, bool need_input_grad) const {
    const int n = t.latent.batch();
    Mat<Scalar> d_out = Mat<Scalar>::Zero(2 * latent_dim_, n);
    if (d_mu.size() > 0) d_out.topRows(latent_dim_) = d_mu;
    if (d_sigma.size() > 0) {
      const auto inside = (t.raw_logvar.array() >= Scalar(kLogVarMin)) && (t.raw_logvar.array() <= Scalar(kLogVarMax));
      d_out.bottomRows(latent_dim_) =
          inside.select(Scalar(0.5) * d_sigma.array() * t.latent.sigma.array(), Scalar(0)).matrix();
    }
    const Mat<Scalar> d_flat = head_.backward(p, t.head, d_out, grads, true);
    FeatureMap<Scalar> d = unflatten(d_flat, t.flat_channels, t.flat_height, t.flat_width);
    for (std::size_t s = blocks_.size(); s-- > 0;) {
      d = pool_backward(d.values, t.indices[s], d.batch, t.pre_pool_size[s].first, t.pre_pool_size[s].second);
      d = blocks_[s].backward(p, t.blocks[s], d, grads, need_input_grad || s > 0);
    }
    return d;
  }

 private:
  int width_ = 0, height_ = 0, latent_dim_ = 0;
  std::vector<ConvBlock<Scalar>> blocks_;
  DenseBlock<Scalar> head_;
};

// ---------------------------------------------------------------------------
// Generator G: latent -> mask probabilities.

template <typename Scalar>
struct GeneratorTrace {
  DenseBlockCache<Scalar> head;
  std::vector<ConvBlockCache<Scalar>> blocks;
  ConvBlockCache<Scalar> classifier;
  FeatureMap<Scalar> probs;
};

template <typename Scalar>
class Generator {
 public:
  Generator() = default;
  Generator(const VaeGanConfig& config, std::mt19937_64& rng, ParamStore<Scalar>& store)
      : latent_dim_(config.latent_dim), widths_(config.generator_widths) {
    const int stages = static_cast<int>(widths_.size());
    base_height_ = config.height >> stages;
    base_width_ = config.width >> stages;
    head_ = DenseBlock<Scalar>(store, "gen.head", latent_dim_, widths_.back() * base_height_ * base_width_,
                               Activation::kRelu, rng);
    for (int s = stages - 1; s >= 0; --s) {
      const int out = s > 0 ? widths_[s - 1] : widths_[0];
      blocks_.emplace_back(store, "gen.conv" + std::to_string(s), widths_[s], out, Activation::kRelu, rng);
    }
    classifier_ = ConvBlock<Scalar>(store, "gen.classifier", widths_[0], kNumClasses, Activation::kNone, rng);
  }

  FeatureMap<Scalar> forward(const ParamStore<Scalar>& p, const Mat<Scalar>& z, GeneratorTrace<Scalar>& t,
                             Mode mode) const {
    if (z.rows() != latent_dim_) throw InvalidArgument("generator: latent dimension mismatch");
    FeatureMap<Scalar> h = unflatten(head_.forward(p, z, t.head, mode), widths_.back(), base_height_, base_width_);
    t.blocks.resize(blocks_.size());
    for (std::size_t s = 0; s < blocks_.size(); ++s) h = blocks_[s].forward(p, upsample2(h), t.blocks[s], mode);
    h = classifier_.forward(p, h, t.classifier, mode);
    h.values = softmax_columns(h.values);
    t.probs = h;
    return h;
  }

  void update_running(ParamStore<Scalar>& p, const GeneratorTrace<Scalar>& t) const {
    head_.update_running(p, t.head);
    for (std::size_t s = 0; s < blocks_.size(); ++s) blocks_[s].update_running(p, t.blocks[s]);
    classifier_.update_running(p, t.classifier);
  }

  /// Returns d loss / d z (empty when not requested).
  Mat<Scalar> backward(const ParamStore<Scalar>& p, const GeneratorTrace<Scalar>& t, const FeatureMap<Scalar>& d_probs,
                       Gradients<Scalar>* grads, bool need_input_grad) const {
    FeatureMap<Scalar> d = d_probs;
    d.values = softmax_backward(t.probs.values, d_probs.values);
    d = classifier_.backward(p, t.classifier, d, grads, true);
    for (std::size_t s = blocks_.size(); s-- > 0;) {
      d = upsample2_backward(blocks_[s].backward(p, t.blocks[s], d, grads, true));
    }
    return head_.backward(p, t.head, flatten(d), grads, need_input_grad);
  }

 private:
  int latent_dim_ = 0;
  std::vector<int> widths_;
  int base_height_ = 0, base_width_ = 0;
  DenseBlock<Scalar> head_;
  std::vector<ConvBlock<Scalar>> blocks_;
  ConvBlock<Scalar> classifier_;
};

// ---------------------------------------------------------------------------
// Discriminator D: mask probabilities -> validity in (0, 1) plus the hidden
// feature maps of each conv layer (post-activation).

template <typename Scalar>
struct DiscriminatorTrace {
  std::vector<ConvBlockCache<Scalar>> blocks;
  std::vector<PoolIndices> indices;
  std::vector<std::pair<int, int>> pre_pool_size;
  int flat_channels = 0, flat_height = 0, flat_width = 0;
  DenseBlockCache<Scalar> head;
  Mat<Scalar> validity;  // 1 x batch

  /// 1-based hidden layer index.
  const FeatureMap<Scalar>& features(int layer) const { return blocks.at(layer - 1).output; }
  int num_features() const { return static_cast<int>(blocks.size()); }
};

template <typename Scalar>
class Discriminator {
 public:
  Discriminator() = default;
  Discriminator(const VaeGanConfig& config, std::mt19937_64& rng, ParamStore<Scalar>& store)
      : width_(config.width), height_(config.height) {
    int in = kNumClasses;
    for (std::size_t s = 0; s < config.discriminator_widths.size(); ++s) {
      blocks_.emplace_back(store, "disc.conv" + std::to_string(s), in, config.discriminator_widths[s],
                           Activation::kLeakyRelu, rng);
      in = config.discriminator_widths[s];
    }
    const int down = 1 << config.discriminator_widths.size();
    head_ = DenseBlock<Scalar>(store, "disc.head", in * (height_ / down) * (width_ / down), 1, Activation::kNone, rng,
                               1.0);
  }

  Mat<Scalar> forward(const ParamStore<Scalar>& p, const FeatureMap<Scalar>& y, DiscriminatorTrace<Scalar>& t,
                      Mode mode) const {
    detail::check_input(y.channels(), y.height, y.width, kNumClasses, height_, width_, "discriminator");
    t.blocks.resize(blocks_.size());
    t.indices.resize(blocks_.size());
    t.pre_pool_size.resize(blocks_.size());
    FeatureMap<Scalar> h = y;
    for (std::size_t s = 0; s < blocks_.size(); ++s) {
      h = blocks_[s].forward(p, h, t.blocks[s], mode);
      t.pre_pool_size[s] = {h.height, h.width};
      auto pooled = pool_with_indices(h);
      t.indices[s] = std::move(pooled.indices);
      h = std::move(pooled.values);
    }
    t.flat_channels = h.channels();
    t.flat_height = h.height;
    t.flat_width = h.width;
    t.validity = sigmoid<Scalar>(head_.forward(p, flatten(h), t.head, mode));
    return t.validity;
  }

  void update_running(ParamStore<Scalar>& p, const DiscriminatorTrace<Scalar>& t) const {
    for (std::size_t s = 0; s < blocks_.size(); ++s) blocks_[s].update_running(p, t.blocks[s]);
    head_.update_running(p, t.head);
  }

  /// Backpropagates d loss / d validity (1 x batch, may be empty) and/or
  /// d loss / d features(feature_layer) (may be empty).
  FeatureMap<Scalar> backward(const ParamStore<Scalar>& p, const DiscriminatorTrace<Scalar>& t,
                              const Mat<Scalar>& d_validity, const FeatureMap<Scalar>& d_feature, int feature_layer,
                              Gradients<Scalar>* grads, bool need_input_grad) const {
    const bool from_head = d_validity.size() > 0;
    const bool from_feature = d_feature.values.size() > 0;
    if (!from_head && !from_feature) throw InvalidArgument("discriminator backward: no upstream gradient");
    std::size_t top = blocks_.size();
    FeatureMap<Scalar> d;
    if (from_head) {
      const Mat<Scalar> d_logit = d_validity.cwiseProduct(t.validity.cwiseProduct(
          (Mat<Scalar>::Ones(1, t.validity.cols()) - t.validity)));
      d = unflatten(head_.backward(p, t.head, d_logit, grads, true), t.flat_channels, t.flat_height, t.flat_width);
    } else {
      top = static_cast<std::size_t>(feature_layer);
    }
    for (std::size_t s = top; s-- > 0;) {
      if (s + 1 < top || from_head) {
        d = pool_backward(d.values, t.indices[s], d.batch, t.pre_pool_size[s].first, t.pre_pool_size[s].second);
      }
      if (from_feature && static_cast<int>(s) + 1 == feature_layer) {
        if (d.values.size() == 0) {
          d = d_feature;
        } else {
          d.values += d_feature.values;
        }
      }
      d = blocks_[s].backward(p, t.blocks[s], d, grads, need_input_grad || s > 0);
    }
    return d;
  }

  int num_layers() const { return static_cast<int>(blocks_.size()); }

 private:
  int width_ = 0, height_ = 0;
  std::vector<ConvBlock<Scalar>> blocks_;
  DenseBlock<Scalar> head_;
};

/// Encoder, generator and discriminator with separate parameter stores (they
/// are optimised, frozen and checksummed independently).
template <typename Scalar>
struct VaeGan {
  VaeGanConfig config;
  ParamStore<Scalar> encoder_params;
  ParamStore<Scalar> generator_params;
  ParamStore<Scalar> discriminator_params;
  VaeEncoder<Scalar> encoder;
  Generator<Scalar> generator;
  Discriminator<Scalar> discriminator;

  VaeGan() = default;
  VaeGan(VaeGanConfig cfg, std::uint64_t seed) : config(std::move(cfg)) {
    config.validate();
    std::mt19937_64 rng(seed);
    encoder = VaeEncoder<Scalar>(config, rng, encoder_params);
    generator = Generator<Scalar>(config, rng, generator_params);
    discriminator = Discriminator<Scalar>(config, rng, discriminator_params);
  }

  ShapeLatent<Scalar> encode(const FeatureMap<Scalar>& y) const {
    EncoderTrace<Scalar> t;
    return encoder.forward(encoder_params, y, t, Mode::kEval);
  }
  FeatureMap<Scalar> generate(const Mat<Scalar>& z) const {
    GeneratorTrace<Scalar> t;
    return generator.forward(generator_params, z, t, Mode::kEval);
  }
  Mat<Scalar> discriminate(const FeatureMap<Scalar>& y, DiscriminatorTrace<Scalar>& t) const {
    return discriminator.forward(discriminator_params, y, t, Mode::kEval);
  }
};

}  // namespace scn
