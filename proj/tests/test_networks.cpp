#include <doctest.h>

#include <random>

#include "scn/checkpoint.hpp"
#include "scn/errors.hpp"
#include "scn/networks.hpp"
#include "scn/training.hpp"
#include "test_util.hpp"

using namespace scn;
using scn::testing::relative_error;
using scn::testing::uniform_matrix;
using D = double;

namespace {

VaeGanConfig tiny_vae() {
  VaeGanConfig c;
  c.width = 16;
  c.height = 8;
  c.latent_dim = 4;
  c.encoder_widths = {3, 4};
  c.generator_widths = {3, 4};
  c.discriminator_widths = {3, 4};
  c.rec_feature_layer = 2;
  return c;
}

SegNetConfig tiny_seg() {
  SegNetConfig c;
  c.width = 16;
  c.height = 8;
  c.channel_widths = {3, 4};
  return c;
}

FeatureMap<D> random_probs(int batch, int h, int w, std::mt19937_64& rng) {
  FeatureMap<D> y(kNumClasses, batch, h, w);
  y.values = scn::testing::random_probabilities(kNumClasses, y.values.cols(), rng);
  return y;
}

// Compares analytic parameter gradients with central differences of `loss`
// over every parameter tensor of `store`.
void check_store(ParamStore<D>& store, const Gradients<D>& analytic, const std::function<double()>& loss,
                 double tol = 1e-5, double h = 1e-6) {
  REQUIRE(analytic.size() == store.values.size());
  for (std::size_t i = 0; i < store.values.size(); ++i) {
    const Mat<D> keep = store.values[i];
    auto f = [&](const Mat<D>& v) {
      store.values[i] = v;
      const double out = loss();
      store.values[i] = keep;
      return out;
    };
    INFO(store.names[i]);
    CHECK(relative_error(analytic[i], scn::testing::numeric_gradient(f, keep, h)) < tol);
  }
}

}  // namespace

TEST_SUITE("networks") {

TEST_CASE("segmentation output is a per-pixel distribution at input size") {
  for (auto [w, h] : {std::pair{64, 32}, std::pair{160, 80}}) {
    SegNetConfig c;
    c.width = w;
    c.height = h;
    const SegNet<float> net(c, 1);
    std::mt19937_64 rng(2);
    FeatureMap<float> x(3, 2, h, w);
    x.values = uniform_matrix(3, x.values.cols(), 0, 1, rng).cast<float>();
    const auto p = net.predict(x);
    CHECK(p.height == h);
    CHECK(p.width == w);
    CHECK(p.channels() == 3);
    CHECK((p.values.colwise().sum().array() - 1.0f).abs().maxCoeff() < 1e-6f);
  }
}

TEST_CASE("a zeroed classifier predicts uniform probabilities") {
  SegNet<float> net(SegNetConfig{}, 3);
  net.zero_classifier();
  std::mt19937_64 rng(4);
  FeatureMap<float> x(3, 1, 32, 64);
  x.values = uniform_matrix(3, x.values.cols(), 0, 1, rng).cast<float>();
  CHECK((net.predict(x).values.array() - 1.0f / 3.0f).abs().maxCoeff() < 1e-7f);
}

TEST_CASE("wrong input shapes are rejected") {
  const SegNet<float> net(SegNetConfig{}, 1);
  CHECK_THROWS_AS(net.predict(FeatureMap<float>(3, 1, 16, 64)), InvalidArgument);
  CHECK_THROWS_AS(net.predict(FeatureMap<float>(1, 1, 32, 64)), InvalidArgument);
  SegNetConfig bad;
  bad.width = 60;
  CHECK_THROWS_AS(SegNet<float>(bad, 1), InvalidArgument);
}

TEST_CASE("segmentation network gradients") {
  SegNet<D> net(tiny_seg(), 5);
  std::mt19937_64 rng(6);
  FeatureMap<D> x(3, 2, 8, 16);
  x.values = uniform_matrix(3, x.values.cols(), 0, 1, rng);
  const Mat<D> r = uniform_matrix(3, x.values.cols(), -1, 1, rng);
  SegNetTrace<D> t;
  net.forward(x, t, Mode::kTrain);
  Gradients<D> g = net.params().zero_gradients();
  FeatureMap<D> d = t.probs;
  d.values = r;
  net.backward(t, d, g);
  check_store(net.params(), g, [&] {
    SegNetTrace<D> tt;
    return net.forward(x, tt, Mode::kTrain).values.cwiseProduct(r).sum();
  });
}

TEST_CASE("encoder gradients and latent contract") {
  std::mt19937_64 rng(7);
  const VaeGanConfig cfg = tiny_vae();
  ParamStore<D> store;
  VaeEncoder<D> enc(cfg, rng, store);
  const FeatureMap<D> y = random_probs(3, 8, 16, rng);
  const Mat<D> rm = uniform_matrix(4, 3, -1, 1, rng);
  const Mat<D> rs = uniform_matrix(4, 3, -1, 1, rng);
  EncoderTrace<D> t;
  const auto latent = enc.forward(store, y, t, Mode::kTrain);
  CHECK(latent.batch() == 3);
  CHECK(latent.dim() == 4);
  CHECK((latent.sigma.array() > 0).all());
  auto loss = [&](const FeatureMap<D>& in) {
    EncoderTrace<D> tt;
    const auto l = enc.forward(store, in, tt, Mode::kTrain);
    return l.mu.cwiseProduct(rm).sum() + l.sigma.cwiseProduct(rs).sum();
  };
  Gradients<D> g = store.zero_gradients();
  const FeatureMap<D> dy = enc.backward(store, t, rm, rs, &g, true);
  check_store(store, g, [&] { return loss(y); });
  auto f = [&](const Mat<D>& v) {
    FeatureMap<D> in = y;
    in.values = v;
    return loss(in);
  };
  CHECK(relative_error(dy.values, scn::testing::numeric_gradient(f, y.values)) < 1e-5);
}

TEST_CASE("evaluation-mode encoding is per-sample and order aligned") {
  std::mt19937_64 rng(8);
  const VaeGan<D> model(tiny_vae(), 9);
  const FeatureMap<D> y = random_probs(4, 8, 16, rng);
  const auto all = model.encode(y);
  for (int b = 0; b < 4; ++b) {
    const auto one = model.encode(slice_batch(y, b, 1));
    CHECK((one.mu.col(0) - all.mu.col(b)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((one.sigma.col(0) - all.sigma.col(b)).cwiseAbs().maxCoeff() < 1e-12);
  }
  const auto again = model.encode(y);
  CHECK(again.mu == all.mu);
}

TEST_CASE("generator gradients and output contract") {
  std::mt19937_64 rng(10);
  const VaeGanConfig cfg = tiny_vae();
  ParamStore<D> store;
  Generator<D> gen(cfg, rng, store);
  const Mat<D> z = uniform_matrix(4, 3, -1, 1, rng);
  GeneratorTrace<D> t;
  const FeatureMap<D> out = gen.forward(store, z, t, Mode::kTrain);
  CHECK(out.height == 8);
  CHECK(out.width == 16);
  CHECK((out.values.colwise().sum().array() - 1).abs().maxCoeff() < 1e-12);
  const Mat<D> r = uniform_matrix(3, out.values.cols(), -1, 1, rng);
  FeatureMap<D> d = out;
  d.values = r;
  Gradients<D> g = store.zero_gradients();
  const Mat<D> dz = gen.backward(store, t, d, &g, true);
  auto loss = [&](const Mat<D>& zz) {
    GeneratorTrace<D> tt;
    return gen.forward(store, zz, tt, Mode::kTrain).values.cwiseProduct(r).sum();
  };
  check_store(store, g, [&] { return loss(z); });
  CHECK(relative_error(dz, scn::testing::numeric_gradient(loss, z)) < 1e-5);
}

TEST_CASE("discriminator gradients through the head and the feature layer") {
  std::mt19937_64 rng(11);
  const VaeGanConfig cfg = tiny_vae();
  ParamStore<D> store;
  Discriminator<D> disc(cfg, rng, store);
  const FeatureMap<D> y = random_probs(3, 8, 16, rng);
  DiscriminatorTrace<D> t;
  const Mat<D> v = disc.forward(store, y, t, Mode::kTrain);
  CHECK((v.array() > 0).all());
  CHECK((v.array() < 1).all());
  CHECK(t.num_features() >= cfg.rec_feature_layer);

  const Mat<D> rv = uniform_matrix(1, 3, -1, 1, rng);
  FeatureMap<D> rf = t.features(2);
  rf.values = uniform_matrix(rf.values.rows(), rf.values.cols(), -1, 1, rng);
  auto loss = [&](const FeatureMap<D>& in) {
    DiscriminatorTrace<D> tt;
    const Mat<D> out = disc.forward(store, in, tt, Mode::kTrain);
    return out.cwiseProduct(rv).sum() + tt.features(2).values.cwiseProduct(rf.values).sum();
  };
  Gradients<D> g = store.zero_gradients();
  const FeatureMap<D> dy = disc.backward(store, t, rv, rf, 2, &g, true);
  check_store(store, g, [&] { return loss(y); });
  auto f = [&](const Mat<D>& vals) {
    FeatureMap<D> in = y;
    in.values = vals;
    return loss(in);
  };
  CHECK(relative_error(dy.values, scn::testing::numeric_gradient(f, y.values)) < 1e-5);

  // Feature path alone, from the first layer.
  FeatureMap<D> rf1 = t.features(1);
  rf1.values = uniform_matrix(rf1.values.rows(), rf1.values.cols(), -1, 1, rng);
  Gradients<D> g1 = store.zero_gradients();
  disc.backward(store, t, Mat<D>(), rf1, 1, &g1, false);
  // One first-layer activation sits about 1e-6 from the leaky-ReLU kink.
  check_store(
      store, g1,
      [&] {
        DiscriminatorTrace<D> tt;
        disc.forward(store, y, tt, Mode::kTrain);
        return tt.features(1).values.cwiseProduct(rf1.values).sum();
      },
      1e-5, 1e-8);
}

TEST_CASE("reparameterisation statistics") {
  const int n = 100000;
  ShapeLatent<D> latent;
  Vec<D> mu(8), sigma(8);
  mu << -2, -1, -0.5, 0, 0.25, 0.5, 1, 3;
  sigma << 0.1, 0.3, 0.5, 0.8, 1, 1.2, 1.5, 2;
  latent.mu = mu.replicate(1, n);
  latent.sigma = sigma.replicate(1, n);
  std::mt19937_64 rng(12);
  const auto rep = reparameterize(latent, rng);
  const Vec<D> mean = rep.z.rowwise().mean();
  const Vec<D> sd = ((rep.z.colwise() - mean).rowwise().squaredNorm() / (n - 1)).cwiseSqrt();
  CHECK((mean - mu).cwiseAbs().maxCoeff() < 0.02);
  CHECK((sd - sigma).cwiseAbs().maxCoeff() < 0.02);
  CHECK((rep.z - latent.mu - latent.sigma.cwiseProduct(rep.noise)).cwiseAbs().maxCoeff() < 1e-12);

  std::mt19937_64 a(5), b(5);
  latent.mu = mu;
  latent.sigma = sigma;
  CHECK(reparameterize(latent, a).z == reparameterize(latent, b).z);

  latent.sigma.setZero();
  std::mt19937_64 c(6);
  CHECK((reparameterize(latent, c).z - mu).cwiseAbs().maxCoeff() < 1e-7);
}

TEST_CASE("checkpoints restore bit-identical parameters") {
  scn::testing::TempDir dir("ckpt");
  VaeGan<float> model(VaeGanConfig{}, 13);
  model.encoder_params.buffers[0].setConstant(0.25f);
  TrainState state;
  state.step = 17;
  state.epoch = 2;
  save_prior(model, state, dir.path() / "prior.ckpt");
  const VaeGan<float> back = load_prior(dir.path() / "prior.ckpt");
  CHECK(back.encoder_params.checksum() == model.encoder_params.checksum());
  CHECK(back.generator_params.checksum() == model.generator_params.checksum());
  CHECK(back.discriminator_params.checksum() == model.discriminator_params.checksum());

  const SegNet<float> seg(SegNetConfig{}, 14);
  save_segnet(seg, state, dir.path() / "seg.ckpt");
  const SegNet<float> seg_back = load_segnet(dir.path() / "seg.ckpt");
  CHECK(seg_back.params().checksum() == seg.params().checksum());

  CheckpointReader reader(dir.path() / "seg.ckpt");
  CHECK(reader.has_section("segnet"));
  CHECK(!reader.has_section("encoder"));
  SegNetConfig other;
  other.channel_widths = {8, 16, 32};
  SegNet<float> wrong(other, 1);
  CHECK_THROWS_AS(reader.restore("segnet", wrong.params()), CheckpointMismatch);
  // Stored precision converts on load.
  SegNet<double> wider(SegNetConfig{}, 1);
  reader.restore("segnet", wider.params());
  CHECK(wider.params().values.front().cast<float>() == seg.params().values.front());
  CHECK_THROWS_AS(load_prior(dir.path() / "seg.ckpt"), Error);
  CHECK_THROWS_AS(CheckpointReader(dir.path() / "missing.ckpt"), IoError);
}

}  // TEST_SUITE
