#pragma once

#include <array>
#include <cmath>
#include <string>

#include <json.hpp>

#include "scn/errors.hpp"
#include "scn/tensor.hpp"

namespace scn {

struct LossWeights {
  double lambda_1 = 0.3;  // shape embedding
  double lambda_2 = 0.3;  // shape discriminator
  double lambda_z = 1.0;  // predicted-variance tolerance inside the embedding loss
  double alpha = 1.0;     // generator reconstruction weight (stage 1)
  double epsilon = 1e-8;  // IoU denominator guard

  void validate() const;
};

void to_json(nlohmann::json& j, const LossWeights& w);
void from_json(const nlohmann::json& j, LossWeights& w);

inline constexpr double kProbabilityClamp = 1e-7;

/// A scalar loss and its gradient with respect to one input.
template <typename Scalar>
struct LossAndGrad {
  Scalar value = 0;
  Mat<Scalar> grad;
};

template <typename Scalar>
void require_same_shape(const Mat<Scalar>& a, const Mat<Scalar>& b, const char* who) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw InvalidArgument(std::string(who) + ": shape mismatch");
  }
}

/// Per-class soft IoU on channels x pixels probability maps (sums over every
/// pixel of every sample in the batch).
template <typename Scalar>
Vec<Scalar> soft_iou_per_class(const Mat<Scalar>& y_hat, const Mat<Scalar>& y, Scalar epsilon) {
  require_same_shape(y_hat, y, "soft IoU");
  const Vec<Scalar> inter = y_hat.cwiseProduct(y).rowwise().sum();
  const Vec<Scalar> uni = y_hat.rowwise().sum() + y.rowwise().sum() - inter;
  return inter.array() / (uni.array() + epsilon);
}

/// 1 - mean over classes of the soft IoU; gradient w.r.t. y_hat.
template <typename Scalar>
LossAndGrad<Scalar> soft_iou_loss(const Mat<Scalar>& y_hat, const Mat<Scalar>& y, Scalar epsilon) {
  require_same_shape(y_hat, y, "soft IoU");
  if (y_hat.rows() != kNumClasses) throw InvalidArgument("soft IoU: expected 3 channels");
  const Vec<Scalar> inter = y_hat.cwiseProduct(y).rowwise().sum();
  const Vec<Scalar> uni = (y_hat.rowwise().sum() + y.rowwise().sum() - inter).array() + epsilon;
  const Scalar classes = static_cast<Scalar>(y_hat.rows());
  LossAndGrad<Scalar> out;
  out.value = Scalar(1) - (inter.array() / uni.array()).sum() / classes;
  // d(I/U)/dy_hat = (y U - I (1 - y)) / U^2 = (y (U + I) - I) / U^2
  const Vec<Scalar> u2 = uni.array().square();
  out.grad = y.array().colwise() * ((uni + inter).array() / u2.array());
  out.grad.array().colwise() -= inter.array() / u2.array();
  out.grad *= -Scalar(1) / classes;
  return out;
}

/// Mean pixel cross-entropy of probabilities against one-hot targets.
template <typename Scalar>
LossAndGrad<Scalar> cross_entropy_loss(const Mat<Scalar>& probs, const Mat<Scalar>& y) {
  require_same_shape(probs, y, "cross entropy");
  const Scalar n = static_cast<Scalar>(probs.cols());
  const Mat<Scalar> clamped = probs.cwiseMax(Scalar(kProbabilityClamp));
  LossAndGrad<Scalar> out;
  out.value = -(y.array() * clamped.array().log()).sum() / n;
  out.grad = (probs.array() >= Scalar(kProbabilityClamp)).select(-y.array() / clamped.array() / n, Scalar(0));
  return out;
}

template <typename Scalar>
struct KlLoss {
  Scalar value = 0;
  Mat<Scalar> d_mu;
  Mat<Scalar> d_sigma;
};

/// KL(N(mu, sigma^2) || N(0, I)) summed over latent dims, averaged over the
/// batch (columns).
template <typename Scalar>
KlLoss<Scalar> kl_prior_loss(const Mat<Scalar>& mu, const Mat<Scalar>& sigma) {
  require_same_shape(mu, sigma, "KL prior");
  if (!((sigma.array() > Scalar(0)).all())) throw InvalidArgument("KL prior: sigma must be positive");
  const Scalar n = static_cast<Scalar>(mu.cols());
  KlLoss<Scalar> out;
  out.value = Scalar(0.5) *
              (mu.array().square() + sigma.array().square() - Scalar(1) - Scalar(2) * sigma.array().log()).sum() / n;
  out.d_mu = mu / n;
  out.d_sigma = ((sigma.array() - sigma.array().inverse()) / n).matrix();
  return out;
}

/// Mean squared difference between discriminator feature maps; gradient is
/// w.r.t. the reconstructed (fake) features.
template <typename Scalar>
LossAndGrad<Scalar> vaegan_rec_loss(const Mat<Scalar>& feat_real, const Mat<Scalar>& feat_fake) {
  require_same_shape(feat_real, feat_fake, "feature reconstruction");
  const Scalar n = static_cast<Scalar>(feat_real.size());
  LossAndGrad<Scalar> out;
  const Mat<Scalar> diff = feat_fake - feat_real;
  out.value = diff.squaredNorm() / n;
  out.grad = Scalar(2) / n * diff;
  return out;
}

template <typename Scalar>
struct GanLosses {
  Scalar disc_loss = 0;
  Scalar gen_adv_loss = 0;
  // Gradients of disc_loss.
  Mat<Scalar> disc_d_real, disc_d_fake, disc_d_sampled;
  // Gradients of gen_adv_loss.
  Mat<Scalar> gen_d_fake, gen_d_sampled;
};

namespace detail {

template <typename Scalar>
Mat<Scalar> clamp_probability(const Mat<Scalar>& d) {
  return d.cwiseMax(Scalar(kProbabilityClamp)).cwiseMin(Scalar(1.0 - kProbabilityClamp));
}

// Gradient mask: zero where the clamp is active.
template <typename Scalar>
auto inside_clamp(const Mat<Scalar>& d) {
  return (d.array() >= Scalar(kProbabilityClamp)) && (d.array() <= Scalar(1.0 - kProbabilityClamp));
}

}  // namespace detail

/// Discriminator: -[log D(y) + log(1 - D(y_hat)) + log(1 - D(y_p))];
/// generator (non-saturating): -[log D(y_hat) + log D(y_p)]. Batch means over
/// 1 x batch validity rows.
template <typename Scalar>
GanLosses<Scalar> gan_losses(const Mat<Scalar>& d_real, const Mat<Scalar>& d_fake, const Mat<Scalar>& d_sampled) {
  require_same_shape(d_real, d_fake, "GAN losses");
  require_same_shape(d_real, d_sampled, "GAN losses");
  const Scalar n = static_cast<Scalar>(d_real.size());
  const Mat<Scalar> r = detail::clamp_probability(d_real);
  const Mat<Scalar> f = detail::clamp_probability(d_fake);
  const Mat<Scalar> s = detail::clamp_probability(d_sampled);
  GanLosses<Scalar> out;
  out.disc_loss = -(r.array().log() + (Scalar(1) - f.array()).log() + (Scalar(1) - s.array()).log()).sum() / n;
  out.gen_adv_loss = -(f.array().log() + s.array().log()).sum() / n;
  out.disc_d_real = detail::inside_clamp(d_real).select(-r.array().inverse() / n, Scalar(0));
  out.disc_d_fake = detail::inside_clamp(d_fake).select((Scalar(1) - f.array()).inverse() / n, Scalar(0));
  out.disc_d_sampled = detail::inside_clamp(d_sampled).select((Scalar(1) - s.array()).inverse() / n, Scalar(0));
  out.gen_d_fake = detail::inside_clamp(d_fake).select(-f.array().inverse() / n, Scalar(0));
  out.gen_d_sampled = detail::inside_clamp(d_sampled).select(-s.array().inverse() / n, Scalar(0));
  return out;
}

template <typename Scalar>
struct EmbeddingLoss {
  Scalar value = 0;
  Mat<Scalar> d_mu;  // w.r.t. the ground-truth mean
  Mat<Scalar> d_mu_hat;
  Mat<Scalar> d_sigma_hat;
};

/// sum_i (mu_i - mu_hat_i)^2 + lambda_z * sum_i sigma_hat_i^2, batch mean.
template <typename Scalar>
EmbeddingLoss<Scalar> shape_embedding_loss(const Mat<Scalar>& mu, const Mat<Scalar>& mu_hat,
                                           const Mat<Scalar>& sigma_hat, Scalar lambda_z) {
  require_same_shape(mu, mu_hat, "shape embedding");
  require_same_shape(mu, sigma_hat, "shape embedding");
  if ((sigma_hat.array() < Scalar(0)).any()) throw InvalidArgument("shape embedding: sigma_hat must be positive");
  const Scalar n = static_cast<Scalar>(mu.cols());
  const Mat<Scalar> diff = mu - mu_hat;
  EmbeddingLoss<Scalar> out;
  out.value = (diff.squaredNorm() + lambda_z * sigma_hat.squaredNorm()) / n;
  out.d_mu = Scalar(2) / n * diff;
  out.d_mu_hat = -out.d_mu;
  out.d_sigma_hat = Scalar(2) * lambda_z / n * sigma_hat;
  return out;
}

/// -log D(y_hat), batch mean (generator-side form).
template <typename Scalar>
LossAndGrad<Scalar> shape_discriminator_loss(const Mat<Scalar>& d_fake) {
  const Scalar n = static_cast<Scalar>(d_fake.size());
  const Mat<Scalar> f = detail::clamp_probability(d_fake);
  LossAndGrad<Scalar> out;
  out.value = -f.array().log().sum() / n;
  out.grad = detail::inside_clamp(d_fake).select(-f.array().inverse() / n, Scalar(0));
  return out;
}

/// l_iou + lambda_1 * l_z + lambda_2 * l_disc. Throws TrainingDivergence on a
/// non-finite component or result.
double total_seg_loss(double l_iou, double l_z, double l_disc, const LossWeights& weights);

}  // namespace scn
