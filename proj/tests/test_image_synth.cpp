#include <doctest.h>

#include <random>

#include "scn/errors.hpp"
#include "scn/experiments.hpp"
#include "scn/image.hpp"
#include "scn/synth.hpp"
#include "test_util.hpp"

using namespace scn;
using scn::testing::TempDir;

namespace {

Image random_image(int w, int h, int c, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Image img(w, h, c);
  for (Eigen::Index i = 0; i < img.pixels.size(); ++i) img.pixels.data()[i] = u(rng);
  return img;
}

SynthConfig clean_config() {
  SynthConfig c;
  c.noise_level = 0;
  c.blur_sigma = 0;
  c.native_sqrt_area = {200, 200};
  c.illumination_jitter = 0;
  c.shading = 0;
  c.highlight_prob = 0;
  c.occlusion_prob = 0;
  c.iris_color_jitter = 0;
  return c;
}

}  // namespace

TEST_SUITE("image") {

TEST_CASE("resizing to the same size is the identity") {
  std::mt19937_64 rng(1);
  const Image img = random_image(160, 80, 3, rng);
  CHECK(resize_bilinear(img, 160, 80) == img);
  const EyeMask m = scn::testing::random_mask(160, 80, rng);
  CHECK(resize_nearest(m, 160, 80) == m);
}

TEST_CASE("nearest-neighbour mask resizing never invents labels") {
  EyeMask only_iris(37, 19);
  only_iris.labels.setConstant(kIris);
  const auto h = resize_nearest(only_iris, 160, 80).histogram();
  CHECK(h[kIris] == 160 * 80);

  EyeMask checker(320, 160);
  for (int y = 0; y < 160; ++y) {
    for (int x = 0; x < 320; ++x) checker(x, y) = static_cast<std::uint8_t>((x + y) % 3);
  }
  const EyeMask small = resize_nearest(checker, 160, 80);
  CHECK((small.labels.array() <= 2).all());
}

TEST_CASE("bilinear resizing preserves constants") {
  Image img(50, 25, 3);
  img.pixels.setConstant(0.375f);
  const Image out = resize_bilinear(img, 160, 80);
  CHECK((out.pixels.array() - 0.375f).abs().maxCoeff() < 1e-6f);
}

TEST_CASE("PNG round trips") {
  TempDir dir("png");
  std::mt19937_64 rng(2);
  const EyeMask m = scn::testing::random_mask(64, 32, rng);
  write_mask_png(m, dir.path() / "m.png");
  CHECK(read_mask_png(dir.path() / "m.png") == m);

  const Image img = quantize_8bit(random_image(64, 32, 3, rng));
  write_image_png(img, dir.path() / "i.png");
  CHECK(read_image_png(dir.path() / "i.png") == img);

  CHECK_THROWS_AS(read_image_png(dir.path() / "missing.png"), IoError);
}

TEST_CASE("image mirroring reverses columns") {
  std::mt19937_64 rng(3);
  const Image img = random_image(9, 4, 3, rng);
  const Image m = mirror(img);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 9; ++x) CHECK(m.pixels.col(m.index(x, y)) == img.pixels.col(img.index(8 - x, y)));
  }
}

}  // TEST_SUITE

TEST_SUITE("synth") {

TEST_CASE("samples are deterministic in seed and config") {
  const SynthConfig c;
  const SynthSample a = synth_sample(42, c);
  const SynthSample b = synth_sample(42, c);
  CHECK(a.image == b.image);
  CHECK(a.mask == b.mask);
  CHECK(a.subject_id == b.subject_id);
  CHECK(!(synth_sample(43, c).image == a.image));
}

TEST_CASE("the mask is the exact rasterisation of the parameters") {
  const SynthConfig c;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const SynthSample s = synth_sample(seed, c);
    CHECK(s.mask == rasterize_eye(s.params, c.width, c.height));
    CHECK(s.image.width == c.width);
    CHECK(s.image.height == c.height);
    CHECK(s.subject_id >= 0);
    CHECK(s.subject_id < c.subjects);
    CHECK(s.native_width == 2 * s.native_height);
  }
}

TEST_CASE("without degradation region means equal the base colours") {
  const SynthConfig c = clean_config();
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const SynthSample s = synth_sample(seed, c);
    const std::array<const std::array<double, 3>*, 3> base{&c.base_background, &c.base_sclera, &c.base_iris};
    for (int label = 0; label < kNumClasses; ++label) {
      Eigen::Vector3d sum = Eigen::Vector3d::Zero();
      long n = 0;
      for (int y = 0; y < c.height; ++y) {
        for (int x = 0; x < c.width; ++x) {
          if (s.mask(x, y) != label) continue;
          sum += s.image.pixels.col(s.image.index(x, y)).cast<double>();
          ++n;
        }
      }
      if (n == 0) continue;
      for (int ch = 0; ch < 3; ++ch) {
        CHECK(sum(ch) / n == doctest::Approx(static_cast<float>((*base[label])[ch])).epsilon(1e-6));
      }
    }
  }
}

TEST_CASE("default ranges almost always show the iris") {
  const SynthConfig c;
  int with_iris = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) with_iris += synth_sample(seed, c).mask.histogram()[kIris] > 0;
  CHECK(with_iris >= 950);
}

TEST_CASE("the native size range yields both resolution classes") {
  const SynthConfig c;
  int low = 0;
  for (std::uint64_t seed = 0; seed < 300; ++seed) low += synth_sample(seed, c).native_area() < 4900.0;
  CHECK(low > 30);
  CHECK(low < 270);
}

TEST_CASE("invalid configurations are rejected") {
  SynthConfig c;
  c.iris_radius = {0.3, 0.2};
  CHECK_THROWS_AS(synth_sample(1, c), InvalidArgument);
  SynthConfig d;
  d.height = 40;
  CHECK_THROWS_AS(synth_sample(1, d), InvalidArgument);
  SynthConfig e;
  e.subjects = 0;
  CHECK_THROWS_AS(synth_sample(1, e), InvalidArgument);
}

TEST_CASE("configuration JSON round trip and strictness") {
  SynthConfig c;
  c.width = 160;
  c.height = 80;
  c.gaze = {-0.1, 0.2};
  c.noise_level = 0.01;
  const nlohmann::json j = c;
  const auto back = j.get<SynthConfig>();
  CHECK(nlohmann::json(back) == j);

  nlohmann::json bad = j;
  bad["no_such_key"] = 1;
  CHECK_THROWS_AS(bad.get<SynthConfig>(), ConfigurationError);
}

}  // TEST_SUITE
