#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "scn/dataset.hpp"
#include "scn/evaluation.hpp"
#include "scn/losses.hpp"
#include "scn/networks.hpp"
#include "scn/optim.hpp"

namespace scn {

/// Networks are trained in single precision.
using Real = float;

struct TrainConfig {
  double learning_rate = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  int batch_size = 32;
  int stage1_epochs = 100;
  int stage2_max_epochs = 300;
  int stage2_early_stop_patience = 50;
  bool augment_hflip = true;
  LossWeights weights;
  std::uint64_t seed = 0;
  std::string checkpoint_dir;  // empty: no checkpoints written

  AdamConfig adam() const { return {learning_rate, beta1, beta2, 1e-8}; }
  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct TrainState {
  std::int64_t step = 0;
  int epoch = 0;
  double best_val_metric = -std::numeric_limits<double>::infinity();
  int steps_since_improvement = 0;
  std::string rng_state;  // serialized engine state
};

void to_json(nlohmann::json& j, const TrainState& s);
void from_json(const nlohmann::json& j, TrainState& s);

/// Validation-metric controller: stops after `patience` consecutive checks
/// without a strict improvement.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience);

  /// Records one check; returns true when it is a new best.
  bool update(double metric);
  bool should_stop() const { return since_best_ >= patience_; }
  double best() const { return best_; }
  int best_check() const { return best_check_; }
  int checks() const { return checks_; }
  int since_best() const { return since_best_; }

 private:
  int patience_;
  double best_ = -std::numeric_limits<double>::infinity();
  int best_check_ = -1;
  int checks_ = 0;
  int since_best_ = 0;
};

struct PriorStepLog {
  std::int64_t step = 0;
  double l_prior = 0, l_rec = 0, l_gan_d = 0, l_gan_g = 0;
};

struct SegStepLog {
  std::int64_t step = 0;
  double l_iou = 0;
  std::optional<double> l_z, l_disc;  // absent without a shape prior
  double total = 0;
  std::optional<double> l_ce;         // cross-entropy baseline only
};

void to_json(nlohmann::json& j, const PriorStepLog& r);
void to_json(nlohmann::json& j, const SegStepLog& r);

/// Receives each logged record as a JSON object (one line of losses.jsonl).
using LossSink = std::function<void(const nlohmann::json&)>;

/// Appends JSON lines to a file.
LossSink jsonl_sink(const std::filesystem::path& path);

struct PriorResult {
  VaeGan<Real> model;
  std::vector<PriorStepLog> history;
  TrainState state;
};

/// Stage 1: trains encoder, generator and discriminator on ground-truth masks
/// for exactly `stage1_epochs` epochs. Writes `prior.ckpt` into the checkpoint
/// directory after every epoch.
PriorResult train_shape_prior(std::span<const EyeMask> masks, const VaeGanConfig& model_config,
                              const TrainConfig& config, const LossSink& sink = {});

enum class SegVariant { kFull, kIouOnly, kZOnly, kIouPlusZ, kBaselineCe };

std::string to_string(SegVariant v);
SegVariant parse_variant(const std::string& name);

/// Term weights of the stage-2 objective for a variant.
struct VariantWeights {
  double iou = 0, z = 0, disc = 0, ce = 0;
};
VariantWeights variant_weights(SegVariant v, const LossWeights& w);
bool variant_needs_prior(SegVariant v);

struct SegResult {
  SegNet<Real> model;  // restored to the best validation epoch
  std::vector<SegStepLog> history;
  std::vector<double> val_history;  // Mean mIoU per epoch
  int best_epoch = -1;
  TrainState state;
};

/// Stage 2: trains the segmentation network against the frozen encoder and
/// discriminator, with per-epoch validation and early stopping. `prior` may be
/// null only for variants that do not use it. Writes `seg.ckpt` whenever the
/// validation metric improves.
SegResult train_segmentation(std::span<const Sample> train, std::span<const Sample> val, const VaeGan<Real>* prior,
                             const SegNetConfig& model_config, const TrainConfig& config, SegVariant variant,
                             const LossSink& sink = {});

/// Trains one variant and evaluates it on the test split.
EvalReport ablation_run(std::span<const Sample> train, std::span<const Sample> val, std::span<const Sample> test,
                        const VaeGan<Real>* prior, const SegNetConfig& model_config, const TrainConfig& config,
                        SegVariant variant, const LossSink& sink = {});

// Checkpoint helpers. Metadata records the network configuration so that a
// model can be rebuilt from the file alone.
void save_prior(const VaeGan<Real>& model, const TrainState& state, const std::filesystem::path& path);
VaeGan<Real> load_prior(const std::filesystem::path& path);
void save_segnet(const SegNet<Real>& model, const TrainState& state, const std::filesystem::path& path);
SegNet<Real> load_segnet(const std::filesystem::path& path);

// Building blocks of one optimisation step, exposed for testing.

template <typename Scalar>
struct PriorGradients {
  Gradients<Scalar> encoder, generator, discriminator;
  PriorStepLog losses;
};

/// One stage-1 step without the parameter updates: encoder gradients of
/// L_prior + L_rec, generator gradients of alpha * L_rec + the adversarial
/// term, discriminator gradients of its GAN loss, all from a single forward
/// computation. Running statistics are updated.
template <typename Scalar>
PriorGradients<Scalar> prior_step_gradients(VaeGan<Scalar>& model, const FeatureMap<Scalar>& y,
                                            const LossWeights& weights, std::mt19937_64& rng) {
  const int n = y.batch;
  const int layer = model.config.rec_feature_layer;
  const auto& enc = model.encoder;
  const auto& gen = model.generator;
  const auto& disc = model.discriminator;

  EncoderTrace<Scalar> te;
  const ShapeLatent<Scalar> latent = enc.forward(model.encoder_params, y, te, Mode::kTrain);
  const Reparameterized<Scalar> rep = reparameterize(latent, rng);
  const Mat<Scalar> z_p = standard_normal<Scalar>(latent.dim(), n, rng);

  // Reconstructions and prior samples share one generator pass; real,
  // reconstructed and sampled masks share one discriminator pass so that all
  // three are normalised with the same batch statistics.
  Mat<Scalar> z_all(latent.dim(), 2 * n);
  z_all << rep.z, z_p;
  GeneratorTrace<Scalar> tg;
  const FeatureMap<Scalar> generated = gen.forward(model.generator_params, z_all, tg, Mode::kTrain);
  const FeatureMap<Scalar> d_input = concat_batches<Scalar>({&y, &generated});
  DiscriminatorTrace<Scalar> td;
  const Mat<Scalar> validity = disc.forward(model.discriminator_params, d_input, td, Mode::kTrain);

  const auto kl = kl_prior_loss<Scalar>(latent.mu, latent.sigma);
  const FeatureMap<Scalar>& feats = td.features(layer);
  const FeatureMap<Scalar> feat_real = slice_batch(feats, 0, n);
  const FeatureMap<Scalar> feat_fake = slice_batch(feats, n, n);
  // The objective uses the squared feature distance of each sample (batch
  // mean), i.e. the element mean times the elements per sample. With the
  // plain element mean the KL term outweighs it by orders of magnitude and
  // the latent collapses.
  const auto rec_mean = vaegan_rec_loss<Scalar>(feat_real.values, feat_fake.values);
  const Scalar rec_scale = static_cast<Scalar>(feat_real.values.rows() * feat_real.pixels_per_sample());
  const Scalar rec_value = rec_scale * rec_mean.value;
  const Mat<Scalar> rec_grad = rec_scale * rec_mean.grad;
  const auto gan = gan_losses<Scalar>(validity.leftCols(n), validity.middleCols(n, n), validity.rightCols(n));

  PriorGradients<Scalar> out;
  out.losses.l_prior = kl.value;
  out.losses.l_rec = rec_value;
  out.losses.l_gan_d = gan.disc_loss;
  out.losses.l_gan_g = gan.gen_adv_loss;
  if (!std::isfinite(out.losses.l_prior) || !std::isfinite(out.losses.l_rec) || !std::isfinite(out.losses.l_gan_d) ||
      !std::isfinite(out.losses.l_gan_g)) {
    throw TrainingDivergence("non-finite stage-1 loss (l_prior=" + std::to_string(out.losses.l_prior) +
                             ", l_rec=" + std::to_string(out.losses.l_rec) + ", l_gan_d=" +
                             std::to_string(out.losses.l_gan_d) + ", l_gan_g=" + std::to_string(out.losses.l_gan_g) +
                             ")");
  }

  const auto pixels = feats.pixels_per_sample();
  FeatureMap<Scalar> d_feat = feats;
  d_feat.values.setZero();
  d_feat.values.leftCols(n * pixels) = -rec_grad;
  d_feat.values.middleCols(n * pixels, n * pixels) = rec_grad;
  const FeatureMap<Scalar> d_in_rec =
      disc.backward(model.discriminator_params, td, Mat<Scalar>(), d_feat, layer, nullptr, true);

  Mat<Scalar> dv_gen = Mat<Scalar>::Zero(1, 3 * n);
  dv_gen.middleCols(n, n) = gan.gen_d_fake;
  dv_gen.rightCols(n) = gan.gen_d_sampled;
  const FeatureMap<Scalar> d_in_gen =
      disc.backward(model.discriminator_params, td, dv_gen, FeatureMap<Scalar>(), 0, nullptr, true);

  // Generator: alpha * L_rec + adversarial term.
  const FeatureMap<Scalar> rec_to_gen = slice_batch(d_in_rec, n, 2 * n);
  FeatureMap<Scalar> up_gen = slice_batch(d_in_gen, n, 2 * n);
  up_gen.values += static_cast<Scalar>(weights.alpha) * rec_to_gen.values;
  out.generator = model.generator_params.zero_gradients();
  gen.backward(model.generator_params, tg, up_gen, &out.generator, false);

  // Encoder: L_prior + L_rec through the reparameterised sample.
  const Mat<Scalar> dz_all = gen.backward(model.generator_params, tg, rec_to_gen, nullptr, true);
  const Mat<Scalar> dz = dz_all.leftCols(n);
  const Mat<Scalar> d_mu = kl.d_mu + dz;
  const Mat<Scalar> d_sigma = kl.d_sigma + dz.cwiseProduct(rep.noise);
  out.encoder = model.encoder_params.zero_gradients();
  enc.backward(model.encoder_params, te, d_mu, d_sigma, &out.encoder, false);

  // Discriminator.
  Mat<Scalar> dv_disc(1, 3 * n);
  dv_disc << gan.disc_d_real, gan.disc_d_fake, gan.disc_d_sampled;
  out.discriminator = model.discriminator_params.zero_gradients();
  disc.backward(model.discriminator_params, td, dv_disc, FeatureMap<Scalar>(), 0, &out.discriminator, false);

  enc.update_running(model.encoder_params, te);
  gen.update_running(model.generator_params, tg);
  disc.update_running(model.discriminator_params, td);
  return out;
}

template <typename Scalar>
struct SegObjective {
  Scalar value = 0;
  SegStepLog losses;
  FeatureMap<Scalar> d_probs;
};

/// Stage-2 objective and its gradient w.r.t. the predicted probabilities.
/// The encoder and discriminator run in evaluation mode and are not modified.
template <typename Scalar>
SegObjective<Scalar> seg_objective(const FeatureMap<Scalar>& y_hat, const FeatureMap<Scalar>& y,
                                   const VaeGan<Scalar>* prior, const VariantWeights& vw, const LossWeights& w) {
  SegObjective<Scalar> out;
  out.d_probs = y_hat;
  out.d_probs.values.setZero();
  const auto iou = soft_iou_loss<Scalar>(y_hat.values, y.values, static_cast<Scalar>(w.epsilon));
  out.losses.l_iou = iou.value;
  double total = 0.0;
  if (vw.iou != 0.0) {
    out.d_probs.values += static_cast<Scalar>(vw.iou) * iou.grad;
    total += vw.iou * iou.value;
  }
  if (prior != nullptr) {
    EncoderTrace<Scalar> t_gt, t_hat;
    const auto gt = prior->encoder.forward(prior->encoder_params, y, t_gt, Mode::kEval);
    const auto pred = prior->encoder.forward(prior->encoder_params, y_hat, t_hat, Mode::kEval);
    const auto emb = shape_embedding_loss<Scalar>(gt.mu, pred.mu, pred.sigma, static_cast<Scalar>(w.lambda_z));
    DiscriminatorTrace<Scalar> t_d;
    const Mat<Scalar> d_fake = prior->discriminator.forward(prior->discriminator_params, y_hat, t_d, Mode::kEval);
    const auto disc = shape_discriminator_loss<Scalar>(d_fake);
    out.losses.l_z = emb.value;
    out.losses.l_disc = disc.value;
    if (vw.z != 0.0) {
      const auto d = prior->encoder.backward(prior->encoder_params, t_hat, emb.d_mu_hat, emb.d_sigma_hat, nullptr, true);
      out.d_probs.values += static_cast<Scalar>(vw.z) * d.values;
      total += vw.z * emb.value;
    }
    if (vw.disc != 0.0) {
      const auto d = prior->discriminator.backward(prior->discriminator_params, t_d, disc.grad, {}, 0, nullptr, true);
      out.d_probs.values += static_cast<Scalar>(vw.disc) * d.values;
      total += vw.disc * disc.value;
    }
  } else if (vw.z != 0.0 || vw.disc != 0.0) {
    throw ConfigurationError("this loss variant needs a trained shape prior");
  }
  if (vw.ce != 0.0) {
    const auto ce = cross_entropy_loss<Scalar>(y_hat.values, y.values);
    out.d_probs.values += static_cast<Scalar>(vw.ce) * ce.grad;
    out.losses.l_ce = ce.value;
    total += vw.ce * ce.value;
  }
  out.losses.total = total;
  out.value = static_cast<Scalar>(total);
  return out;
}

}  // namespace scn
