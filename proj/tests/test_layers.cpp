#include <doctest.h>

#include <random>

#include "scn/layers.hpp"
#include "test_util.hpp"

using namespace scn;
using scn::testing::numeric_gradient;
using scn::testing::relative_error;
using scn::testing::uniform_matrix;
using D = double;

namespace {

FeatureMap<D> random_map(int c, int b, int h, int w, std::mt19937_64& rng) {
  FeatureMap<D> x(c, b, h, w);
  x.values = uniform_matrix(c, x.values.cols(), -1, 1, rng);
  return x;
}

// Direct zero-padded 3x3 correlation, written against the documented weight
// layout: column (ky*3 + kx)*in + c of the weight matrix.
FeatureMap<D> direct_conv(const FeatureMap<D>& x, const Mat<D>& w, const Mat<D>& bias) {
  const int in = x.channels();
  const int out = static_cast<int>(w.rows());
  FeatureMap<D> y(out, x.batch, x.height, x.width);
  for (int b = 0; b < x.batch; ++b) {
    for (int yy = 0; yy < x.height; ++yy) {
      for (int xx = 0; xx < x.width; ++xx) {
        for (int o = 0; o < out; ++o) {
          double acc = bias(o, 0);
          for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
              const int sy = yy + ky - 1, sx = xx + kx - 1;
              if (sy < 0 || sx < 0 || sy >= x.height || sx >= x.width) continue;
              for (int c = 0; c < in; ++c) acc += w(o, (ky * 3 + kx) * in + c) * x.values(c, x.column(b, sy, sx));
            }
          }
          y.values(o, y.column(b, yy, xx)) = acc;
        }
      }
    }
  }
  return y;
}

// Checks every parameter gradient of `store` for the scalar loss
// <R, forward(store)> against central differences.
template <typename Forward, typename Backward>
void check_param_grads(ParamStore<D>& store, Forward forward, Backward backward, const Mat<D>& r, double tol = 1e-6) {
  Gradients<D> grads = store.zero_gradients();
  backward(grads);
  for (std::size_t i = 0; i < store.values.size(); ++i) {
    const Mat<D> keep = store.values[i];
    auto f = [&](const Mat<D>& v) {
      store.values[i] = v;
      const double out = forward().cwiseProduct(r).sum();
      store.values[i] = keep;
      return out;
    };
    const Mat<D> num = numeric_gradient(f, keep);
    INFO(store.names[i]);
    CHECK(relative_error(grads[i], num) < tol);
  }
}

}  // namespace

TEST_SUITE("layers") {

TEST_CASE("im2col convolution equals the direct sum") {
  std::mt19937_64 rng(1);
  ParamStore<D> store;
  Conv2d<D> conv(store, "c", 3, 5, 3, rng);
  store.values[conv.bias_index()] = uniform_matrix(5, 1, -1, 1, rng);
  const FeatureMap<D> x = random_map(3, 2, 6, 7, rng);
  const FeatureMap<D> y = conv.forward(store, x);
  const FeatureMap<D> want = direct_conv(x, store.values[conv.weight_index()], store.values[conv.bias_index()]);
  CHECK((y.values - want.values).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("col2im is the adjoint of im2col") {
  std::mt19937_64 rng(2);
  const FeatureMap<D> x = random_map(4, 2, 5, 6, rng);
  Mat<D> cols;
  im2col(x, 3, cols);
  const Mat<D> r = uniform_matrix(cols.rows(), cols.cols(), -1, 1, rng);
  FeatureMap<D> back(4, 2, 5, 6);
  col2im(r, 3, back);
  CHECK(cols.cwiseProduct(r).sum() == doctest::Approx(x.values.cwiseProduct(back.values).sum()).epsilon(1e-12));
}

TEST_CASE("convolution gradients") {
  std::mt19937_64 rng(3);
  ParamStore<D> store;
  Conv2d<D> conv(store, "c", 2, 3, 3, rng);
  FeatureMap<D> x = random_map(2, 2, 4, 6, rng);
  const Mat<D> r = uniform_matrix(3, x.values.cols(), -1, 1, rng);
  check_param_grads(
      store, [&] { return conv.forward(store, x).values; },
      [&](Gradients<D>& g) { conv.backward(store, x, r, &g, false); }, r);
  const FeatureMap<D> dx = conv.backward(store, x, r, nullptr, true);
  auto f = [&](const Mat<D>& v) {
    FeatureMap<D> xv = x;
    xv.values = v;
    return conv.forward(store, xv).values.cwiseProduct(r).sum();
  };
  CHECK(relative_error(dx.values, numeric_gradient(f, x.values)) < 1e-6);
}

TEST_CASE("linear layer gradients") {
  std::mt19937_64 rng(4);
  ParamStore<D> store;
  Linear<D> lin(store, "l", 6, 4, rng);
  const Mat<D> x = uniform_matrix(6, 5, -1, 1, rng);
  const Mat<D> r = uniform_matrix(4, 5, -1, 1, rng);
  check_param_grads(
      store, [&] { return lin.forward(store, x); }, [&](Gradients<D>& g) { lin.backward(store, x, r, &g, false); },
      r);
  const Mat<D> dx = lin.backward(store, x, r, nullptr, true);
  auto f = [&](const Mat<D>& v) { return lin.forward(store, v).cwiseProduct(r).sum(); };
  CHECK(relative_error(dx, numeric_gradient(f, x)) < 1e-6);
}

TEST_CASE("batch norm gradients in both modes") {
  std::mt19937_64 rng(5);
  ParamStore<D> store;
  BatchNorm<D> bn(store, "bn", 3);
  store.values[0] = uniform_matrix(3, 1, 0.5, 1.5, rng);
  store.values[1] = uniform_matrix(3, 1, -0.5, 0.5, rng);
  store.buffers[0] = uniform_matrix(3, 1, -0.2, 0.2, rng);
  store.buffers[1] = uniform_matrix(3, 1, 0.5, 2.0, rng);
  const Mat<D> x = uniform_matrix(3, 10, -2, 2, rng);
  const Mat<D> r = uniform_matrix(3, 10, -1, 1, rng);
  for (Mode mode : {Mode::kTrain, Mode::kEval}) {
    BatchNormCache<D> cache;
    auto fwd = [&] {
      BatchNormCache<D> c;
      return bn.forward(store, x, c, mode);
    };
    bn.forward(store, x, cache, mode);
    check_param_grads(
        store, fwd, [&](Gradients<D>& g) { bn.backward(store, cache, r, &g, false); }, r);
    const Mat<D> dx = bn.backward(store, cache, r, nullptr, true);
    auto f = [&](const Mat<D>& v) {
      BatchNormCache<D> c;
      return bn.forward(store, v, c, mode).cwiseProduct(r).sum();
    };
    CHECK(relative_error(dx, numeric_gradient(f, x)) < 1e-6);
  }
}

TEST_CASE("batch norm running statistics") {
  ParamStore<D> store;
  BatchNorm<D> bn(store, "bn", 1);
  Mat<D> x(1, 4);
  x << 1, 2, 3, 6;  // mean 3, biased variance 3.5, unbiased 14/3
  BatchNormCache<D> cache;
  const Mat<D> y = bn.forward(store, x, cache, Mode::kTrain);
  CHECK(y.mean() == doctest::Approx(0).epsilon(1e-12));
  CHECK(y.squaredNorm() / 4 == doctest::Approx(3.5 / (3.5 + 1e-3)).epsilon(1e-12));
  CHECK(store.buffers[0](0, 0) == 0);  // forward leaves the buffers alone
  bn.update_running(store, cache, 4);
  CHECK(store.buffers[0](0, 0) == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(store.buffers[1](0, 0) == doctest::Approx(0.9 + 0.1 * 14.0 / 3.0).epsilon(1e-12));
  BatchNormCache<D> eval_cache;
  bn.forward(store, x, eval_cache, Mode::kEval);
  const double before = store.buffers[0](0, 0);
  bn.update_running(store, eval_cache, 4);
  CHECK(store.buffers[0](0, 0) == before);
}

TEST_CASE("conv and dense blocks backpropagate end to end") {
  std::mt19937_64 rng(6);
  ParamStore<D> store;
  ConvBlock<D> block(store, "b", 2, 3, Activation::kLeakyRelu, rng);
  const FeatureMap<D> x = random_map(2, 2, 4, 4, rng);
  const Mat<D> r = uniform_matrix(3, x.values.cols(), -1, 1, rng);
  ConvBlockCache<D> cache;
  block.forward(store, x, cache, Mode::kTrain);
  FeatureMap<D> dy = cache.output;
  dy.values = r;
  check_param_grads(
      store,
      [&] {
        ConvBlockCache<D> c;
        return block.forward(store, x, c, Mode::kTrain).values;
      },
      [&](Gradients<D>& g) { block.backward(store, cache, dy, &g, false); }, r);

  ParamStore<D> dstore;
  DenseBlock<D> dense(dstore, "d", 5, 3, Activation::kRelu, rng);
  const Mat<D> h = uniform_matrix(5, 6, -1, 1, rng);
  const Mat<D> rd = uniform_matrix(3, 6, -1, 1, rng);
  DenseBlockCache<D> dc;
  dense.forward(dstore, h, dc, Mode::kTrain);
  check_param_grads(
      dstore,
      [&] {
        DenseBlockCache<D> c;
        return dense.forward(dstore, h, c, Mode::kTrain);
      },
      [&](Gradients<D>& g) { dense.backward(dstore, dc, rd, &g, false); }, rd);
}

TEST_CASE("softmax and its backward pass") {
  std::mt19937_64 rng(7);
  const Mat<D> logits = uniform_matrix(3, 8, -3, 3, rng);
  const Mat<D> p = softmax_columns(logits);
  CHECK((p.colwise().sum().array() - 1).abs().maxCoeff() < 1e-12);
  CHECK((softmax_columns<D>(Mat<D>::Zero(3, 4)).array() - 1.0 / 3).abs().maxCoeff() < 1e-15);
  const Mat<D> r = uniform_matrix(3, 8, -1, 1, rng);
  auto f = [&](const Mat<D>& v) { return softmax_columns(v).cwiseProduct(r).sum(); };
  CHECK(relative_error(softmax_backward(p, r), numeric_gradient(f, logits)) < 1e-7);
  Mat<D> huge(3, 1);
  huge << 1000, 999, -1000;
  CHECK(softmax_columns(huge).allFinite());
}

TEST_CASE("pool and unpool round trip") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const FeatureMap<D> x = random_map(3, 2, 6, 8, rng);
    const auto pooled = pool_with_indices(x);
    const FeatureMap<D> up = unpool_with_indices(pooled.values, pooled.indices, 6, 8);
    Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> marked =
        Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(3, up.values.cols(), false);
    for (Eigen::Index p = 0; p < pooled.indices.cols(); ++p) {
      for (int c = 0; c < 3; ++c) {
        const auto idx = pooled.indices(c, p);
        marked(c, idx) = true;
        CHECK(up.values(c, idx) == pooled.values.values(c, p));
        CHECK(x.values(c, idx) == pooled.values.values(c, p));
      }
    }
    for (Eigen::Index i = 0; i < up.values.size(); ++i) {
      if (!marked.data()[i]) CHECK(up.values.data()[i] == 0.0);
    }
    // Re-pooling recovers the maxima when they are non-negative, as after a
    // ReLU; a negative maximum loses to the zeros around it.
    FeatureMap<D> rect = x;
    rect.values = x.values.cwiseAbs();
    const auto pr = pool_with_indices(rect);
    const auto again = pool_with_indices(unpool_with_indices(pr.values, pr.indices, 6, 8));
    CHECK(again.values.values == pr.values.values);
  }
}

TEST_CASE("pooling ties resolve to the first maximum in row-major order") {
  FeatureMap<D> x(2, 1, 4, 4);
  x.values.setConstant(0.5);
  const auto pooled = pool_with_indices(x);
  for (int y = 0; y < 2; ++y) {
    for (int xx = 0; xx < 2; ++xx) {
      const auto p = pooled.values.column(0, y, xx);
      CHECK(pooled.indices(0, p) == x.column(0, 2 * y, 2 * xx));
      CHECK(pooled.indices(1, p) == x.column(0, 2 * y, 2 * xx));
    }
  }
  FeatureMap<D> odd(1, 1, 3, 4);
  CHECK_THROWS_AS(pool_with_indices(odd), InvalidArgument);
}

TEST_CASE("pooling, unpooling and upsampling backward passes are adjoints") {
  std::mt19937_64 rng(9);
  const FeatureMap<D> x = random_map(2, 2, 4, 6, rng);
  const auto pooled = pool_with_indices(x);
  const Mat<D> dp = uniform_matrix(2, pooled.values.values.cols(), -1, 1, rng);
  const FeatureMap<D> dx = pool_backward(dp, pooled.indices, 2, 4, 6);
  auto f = [&](const Mat<D>& v) {
    FeatureMap<D> xv = x;
    xv.values = v;
    return pool_with_indices(xv).values.values.cwiseProduct(dp).sum();
  };
  CHECK(relative_error(dx.values, numeric_gradient(f, x.values)) < 1e-8);

  const Mat<D> r = uniform_matrix(2, x.values.cols(), -1, 1, rng);
  const FeatureMap<D> up = unpool_with_indices(pooled.values, pooled.indices, 4, 6);
  CHECK(up.values.cwiseProduct(r).sum() ==
        doctest::Approx(pooled.values.values.cwiseProduct(unpool_backward(r, pooled.indices)).sum()).epsilon(1e-12));

  const FeatureMap<D> small = random_map(2, 2, 3, 4, rng);
  const FeatureMap<D> big = upsample2(small);
  FeatureMap<D> dbig = big;
  dbig.values = uniform_matrix(2, big.values.cols(), -1, 1, rng);
  CHECK(big.values.cwiseProduct(dbig.values).sum() ==
        doctest::Approx(small.values.cwiseProduct(upsample2_backward(dbig).values).sum()).epsilon(1e-12));
}

TEST_CASE("flatten and unflatten are inverse reshapes") {
  std::mt19937_64 rng(10);
  const FeatureMap<D> x = random_map(3, 4, 2, 5, rng);
  const Mat<D> flat = flatten(x);
  CHECK(flat.rows() == 30);
  CHECK(flat.cols() == 4);
  CHECK(flat(7, 2) == x.values(7 % 3, 2 * 10 + 7 / 3));
  CHECK(unflatten(flat, 3, 2, 5).values == x.values);
}

TEST_CASE("parameter checksums track every byte") {
  std::mt19937_64 rng(11);
  ParamStore<D> store;
  Linear<D> lin(store, "l", 3, 2, rng);
  const auto c0 = store.checksum();
  ParamStore<D> copy = store;
  CHECK(copy.checksum() == c0);
  copy.values[0](1, 1) = std::nextafter(copy.values[0](1, 1), 10.0);
  CHECK(copy.checksum() != c0);
}

}  // TEST_SUITE
