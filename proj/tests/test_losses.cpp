#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "scn/errors.hpp"
#include "scn/evaluation.hpp"
#include "scn/losses.hpp"
#include "test_util.hpp"

using namespace scn;
using scn::testing::numeric_gradient;
using scn::testing::relative_error;
using scn::testing::uniform_matrix;
using D = double;

namespace {

Mat<D> one_hot_of(const std::vector<int>& labels) {
  Mat<D> m = Mat<D>::Zero(3, static_cast<Eigen::Index>(labels.size()));
  for (std::size_t i = 0; i < labels.size(); ++i) m(labels[i], static_cast<Eigen::Index>(i)) = 1;
  return m;
}

Mat<D> one_hot_of(const EyeMask& mask) {
  std::vector<int> labels;
  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < mask.width(); ++x) labels.push_back(mask(x, y));
  }
  return one_hot_of(labels);
}

}  // namespace

TEST_SUITE("losses") {

TEST_CASE("soft IoU examples") {
  const double eps = 1e-8;
  const Mat<D> y = one_hot_of({0, 1, 2, 0});
  CHECK(soft_iou_loss<D>(y, y, eps).value <= 3 * eps);

  // Prediction: all background. Class 0: I = 2, U = 4; classes 1, 2: I = 0.
  const Mat<D> bg = one_hot_of({0, 0, 0, 0});
  CHECK(soft_iou_loss<D>(bg, y, eps).value == doctest::Approx(1.0 - (2.0 / (4.0 + eps)) / 3.0).epsilon(1e-15));

  // Uniform 1/3 against labels (0, 1, 2, 0):
  //   class 0: I = 2/3, U = 4/3 + 2 - 2/3 = 8/3  -> 1/4
  //   class 1: I = 1/3, U = 4/3 + 1 - 1/3 = 2    -> 1/6
  //   class 2: same as class 1                    -> 1/6
  const Mat<D> uniform = Mat<D>::Constant(3, 4, 1.0 / 3.0);
  const Vec<D> per = soft_iou_per_class<D>(uniform, y, 0);
  CHECK(per(0) == doctest::Approx(0.25));
  CHECK(per(1) == doctest::Approx(1.0 / 6.0));
  CHECK(per(2) == doctest::Approx(1.0 / 6.0));
  CHECK(soft_iou_loss<D>(uniform, y, 0).value == doctest::Approx(1.0 - (0.25 + 1.0 / 3.0) / 3.0));
}

TEST_CASE("soft IoU on one-hot predictions equals the discrete class-mean IoU") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const EyeMask pred = scn::testing::random_mask(8, 4, rng);
    const EyeMask gt = scn::testing::random_mask(8, 4, rng);
    double mean = 0;
    for (int c = 0; c < 3; ++c) mean += class_iou(pred, gt, c).value_or(0.0);
    mean /= 3;
    CHECK(1.0 - soft_iou_loss<D>(one_hot_of(pred), one_hot_of(gt), 0.0).value == doctest::Approx(mean).epsilon(1e-14));
  }
}

TEST_CASE("cross entropy") {
  const Mat<D> y = one_hot_of({0, 1, 2});
  Mat<D> p(3, 3);
  p << 0.5, 0.25, 0.25, 0.25, 0.5, 0.25, 0.25, 0.25, 0.5;
  CHECK(cross_entropy_loss<D>(p, y).value == doctest::Approx(std::log(2.0)));
  std::mt19937_64 rng(2);
  const Mat<D> q = scn::testing::random_probabilities(3, 6, rng);
  const Mat<D> t = one_hot_of({0, 1, 2, 2, 1, 0});
  auto f = [&](const Mat<D>& v) { return cross_entropy_loss<D>(v, t).value; };
  CHECK(relative_error(cross_entropy_loss<D>(q, t).grad, numeric_gradient(f, q)) < 1e-7);
}

TEST_CASE("KL examples and non-negativity") {
  CHECK(kl_prior_loss<D>(Mat<D>::Zero(8, 3), Mat<D>::Ones(8, 3)).value == 0.0);
  CHECK(kl_prior_loss<D>(Mat<D>::Ones(1, 1), Mat<D>::Ones(1, 1)).value == doctest::Approx(0.5));
  std::mt19937_64 rng(3);
  for (int i = 0; i < 1000; ++i) {
    const Mat<D> mu = uniform_matrix(8, 1, -3, 3, rng);
    const Mat<D> sigma = uniform_matrix(8, 1, 0.01, 4, rng);
    CHECK(kl_prior_loss<D>(mu, sigma).value >= 0.0);
  }
  CHECK_THROWS_AS(kl_prior_loss<D>(Mat<D>::Zero(2, 1), Mat<D>::Zero(2, 1)), InvalidArgument);
}

TEST_CASE("feature reconstruction examples") {
  std::mt19937_64 rng(4);
  const Mat<D> a = uniform_matrix(5, 7, -1, 1, rng);
  CHECK(vaegan_rec_loss<D>(a, a).value == 0.0);
  CHECK(vaegan_rec_loss<D>(a, (a.array() + 1).matrix()).value == doctest::Approx(1.0));
  const Mat<D> b = uniform_matrix(5, 7, -1, 1, rng);
  double brute = 0;
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 7; ++j) brute += (a(i, j) - b(i, j)) * (a(i, j) - b(i, j));
  }
  CHECK(vaegan_rec_loss<D>(a, b).value == doctest::Approx(brute / 35.0).epsilon(1e-14));
}

TEST_CASE("GAN loss examples") {
  auto one = [](double v) { return Mat<D>::Constant(1, 1, v); };
  const auto perfect = gan_losses<D>(one(1 - 1e-7), one(1e-7), one(1e-7));
  CHECK(perfect.disc_loss < 1e-6);
  const auto half = gan_losses<D>(one(0.5), one(0.5), one(0.5));
  CHECK(half.disc_loss == doctest::Approx(3 * std::log(2.0)));
  double prev = std::numeric_limits<double>::infinity();
  for (double f = 0.05; f < 1; f += 0.05) {
    const double g = gan_losses<D>(one(0.5), one(f), one(0.3)).gen_adv_loss;
    CHECK(g < prev);
    prev = g;
  }
}

TEST_CASE("shape embedding examples") {
  const Mat<D> mu = Mat<D>::Constant(8, 1, 0.3);
  CHECK(shape_embedding_loss<D>(mu, mu, Mat<D>::Constant(8, 1, 1e-12), 1).value < 1e-20);
  const Mat<D> shifted = (mu.array() - 1).matrix();
  for (double lz : {0.0, 1.0, 5.0}) {
    CHECK(shape_embedding_loss<D>(mu, shifted, Mat<D>::Constant(8, 1, 1e-12), lz).value == doctest::Approx(8.0));
  }
  const Mat<D> m4 = Mat<D>::Zero(4, 1);
  CHECK(shape_embedding_loss<D>(m4, m4, Mat<D>::Constant(4, 1, 0.5), 1).value == doctest::Approx(1.0));
}

TEST_CASE("shape discriminator examples") {
  auto one = [](double v) { return Mat<D>::Constant(1, 1, v); };
  CHECK(shape_discriminator_loss<D>(one(1 - 1e-7)).value < 1e-6);
  CHECK(shape_discriminator_loss<D>(one(std::exp(-1.0))).value == doctest::Approx(1.0));
  double prev = std::numeric_limits<double>::infinity();
  for (double f = 0.01; f < 1; f += 0.01) {
    const double v = shape_discriminator_loss<D>(one(f)).value;
    CHECK(v < prev);
    prev = v;
  }
}

TEST_CASE("total segmentation loss") {
  LossWeights zero;
  zero.lambda_1 = zero.lambda_2 = 0;
  CHECK(total_seg_loss(0.7, 5, 9, zero) == 0.7);
  const LossWeights w;
  CHECK(w.lambda_1 == 0.3);
  CHECK(w.lambda_2 == 0.3);
  CHECK(total_seg_loss(1.0, 2.0, 3.0, w) == doctest::Approx(2.5));
  CHECK_THROWS_AS(total_seg_loss(std::nan(""), 0, 0, w), TrainingDivergence);
  CHECK_THROWS_AS(total_seg_loss(0, std::numeric_limits<double>::infinity(), 0, w), TrainingDivergence);
}

TEST_CASE("loss gradients match finite differences") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const Mat<D> y = scn::testing::random_probabilities(3, 6, rng);
    const Mat<D> t = one_hot_of({0, 1, 2, 0, 2, 1});
    auto iou = [&](const Mat<D>& v) { return soft_iou_loss<D>(v, t, 1e-8).value; };
    CHECK(relative_error(soft_iou_loss<D>(y, t, 1e-8).grad, numeric_gradient(iou, y)) < 1e-7);

    const Mat<D> mu = uniform_matrix(4, 3, -1, 1, rng);
    const Mat<D> sigma = uniform_matrix(4, 3, 0.2, 2, rng);
    const auto kl = kl_prior_loss<D>(mu, sigma);
    CHECK(relative_error(kl.d_mu, numeric_gradient([&](const Mat<D>& v) { return kl_prior_loss<D>(v, sigma).value; },
                                                   mu)) < 1e-7);
    CHECK(relative_error(kl.d_sigma,
                         numeric_gradient([&](const Mat<D>& v) { return kl_prior_loss<D>(mu, v).value; }, sigma)) <
          1e-7);

    const auto emb = shape_embedding_loss<D>(mu, sigma, sigma, 0.7);
    CHECK(relative_error(emb.d_mu_hat, numeric_gradient(
                                           [&](const Mat<D>& v) {
                                             return shape_embedding_loss<D>(mu, v, sigma, 0.7).value;
                                           },
                                           sigma)) < 1e-7);
  }
}

}  // TEST_SUITE
