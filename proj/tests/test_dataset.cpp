#include <doctest.h>

#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include "scn/dataset.hpp"
#include "scn/errors.hpp"
#include "scn/experiments.hpp"
#include "test_util.hpp"

using namespace scn;
using scn::testing::TempDir;

namespace {

std::vector<EyePatchRecord> records_for(const std::vector<int>& counts) {
  std::vector<EyePatchRecord> out;
  for (std::size_t s = 0; s < counts.size(); ++s) {
    for (int k = 0; k < counts[s]; ++k) {
      EyePatchRecord r;
      r.subject_id = "subject" + std::to_string(s);
      r.image_path = r.subject_id + "_" + std::to_string(k) + ".png";
      out.push_back(r);
    }
  }
  return out;
}

std::array<long, 3> split_sizes(std::span<const int> sizes, std::span<const Split> assignment) {
  std::array<long, 3> out{};
  for (std::size_t i = 0; i < sizes.size(); ++i) out[static_cast<int>(assignment[i])] += sizes[i];
  return out;
}

double split_cost(const std::array<long, 3>& sizes, const SplitRatios& ratios) {
  const double total = static_cast<double>(sizes[0] + sizes[1] + sizes[2]);
  const double rsum = ratios[0] + ratios[1] + ratios[2];
  double cost = 0;
  for (int k = 0; k < 3; ++k) {
    const double d = sizes[k] - total * ratios[k] / rsum;
    cost += d * d;
  }
  return cost;
}

// Exhaustive search over all 3^n assignments with every split nonempty.
double optimal_cost(const std::vector<int>& sizes, const SplitRatios& ratios) {
  const std::size_t n = sizes.size();
  long combos = 1;
  for (std::size_t i = 0; i < n; ++i) combos *= 3;
  double best = std::numeric_limits<double>::infinity();
  for (long code = 0; code < combos; ++code) {
    std::array<long, 3> s{};
    std::array<int, 3> members{};
    long c = code;
    for (std::size_t i = 0; i < n; ++i) {
      s[c % 3] += sizes[i];
      ++members[c % 3];
      c /= 3;
    }
    if (members[0] == 0 || members[1] == 0 || members[2] == 0) continue;
    best = std::min(best, split_cost(s, ratios));
  }
  return best;
}

Sample random_sample(int w, int h, std::mt19937_64& rng) {
  Sample s{Image(w, h, 3), scn::testing::random_mask(w, h, rng)};
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (Eigen::Index i = 0; i < s.image.pixels.size(); ++i) s.image.pixels.data()[i] = u(rng);
  return s;
}

}  // namespace

TEST_SUITE("dataset") {

TEST_CASE("resolution tags use an inclusive 4900-pixel threshold") {
  CHECK(tag_resolution(4900) == ResolutionTag::kHigh);
  CHECK(tag_resolution(4899) == ResolutionTag::kLow);
  CHECK(tag_resolution(160 * 80) == ResolutionTag::kHigh);
  CHECK(tag_resolution(69.9 * 69.9) == ResolutionTag::kLow);
}

TEST_CASE("eye patch boxes keep a 2:1 aspect ratio around the eye") {
  CropConfig none;
  none.margin = 0;
  const BoundingBox wide{10, 40, 109, 59};
  const BoundingBox a = eye_patch_box(wide, none);
  CHECK(a.width() == 100);
  CHECK(a.height() == 50);
  CHECK(a.x0 + a.x1 == wide.x0 + wide.x1);
  CHECK(a.y0 + a.y1 == wide.y0 + wide.y1);

  const BoundingBox tall{30, 10, 49, 69};
  const BoundingBox b = eye_patch_box(tall, none);
  CHECK(b.width() == 120);
  CHECK(b.height() == 60);
  CHECK(b.x0 + b.x1 == tall.x0 + tall.x1);

  const BoundingBox dot{20, 20, 20, 20};
  const BoundingBox c = eye_patch_box(dot, CropConfig{});
  CHECK(c.width() == 8);
  CHECK(c.height() == 4);

  const BoundingBox d = eye_patch_box(wide, CropConfig{});
  CHECK(d.width() == 2 * d.height());
  CHECK(d.width() >= 140);
}

TEST_CASE("cropping copies pixels and zero-fills outside the image") {
  std::mt19937_64 rng(1);
  const Sample src = random_sample(30, 20, rng);
  EyeMask one(30, 20);
  one(1, 1) = kIris;
  const Sample patch = crop_eye_patch(src.image, one, CropConfig{});
  REQUIRE(patch.mask.width() == 8);
  REQUIRE(patch.mask.height() == 4);
  const BoundingBox box = eye_patch_box({1, 1, 1, 1}, CropConfig{});
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 8; ++x) {
      const int sx = box.x0 + x, sy = box.y0 + y;
      const bool inside = sx >= 0 && sy >= 0 && sx < 30 && sy < 20;
      if (inside) {
        CHECK(patch.image.pixels.col(patch.image.index(x, y)) == src.image.pixels.col(src.image.index(sx, sy)));
        CHECK(patch.mask(x, y) == one(sx, sy));
      } else {
        CHECK(patch.image.pixels.col(patch.image.index(x, y)).isZero());
      }
    }
  }
  CHECK(patch.mask.histogram()[kIris] == 1);
  CHECK_THROWS_AS(crop_eye_patch(src.image, EyeMask(30, 20)), EmptyForeground);
}

TEST_CASE("foreground bounding box") {
  EyeMask m(10, 6);
  CHECK(!foreground_bbox(m).has_value());
  m(2, 1) = kSclera;
  m(7, 4) = kIris;
  const BoundingBox want{2, 1, 7, 4};
  CHECK(*foreground_bbox(m) == want);
}

TEST_CASE("ten single-record subjects split 8/1/1") {
  const auto records = records_for(std::vector<int>(10, 1));
  const auto splits = split_subject_independent(records, {8, 1, 1}, 5);
  std::array<int, 3> n{};
  for (Split s : splits) ++n[static_cast<int>(s)];
  CHECK(n[0] == 8);
  CHECK(n[1] == 1);
  CHECK(n[2] == 1);
}

TEST_CASE("no subject appears in two splits") {
  for (const auto& counts : {std::vector<int>{5, 5, 1, 1}, std::vector<int>{3, 1, 4, 1, 5, 9, 2, 6, 5, 3, 5}}) {
    const auto records = records_for(counts);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto splits = split_subject_independent(records, {8, 1, 1}, seed);
      std::map<std::string, std::set<Split>> seen;
      for (std::size_t i = 0; i < records.size(); ++i) seen[records[i].subject_id].insert(splits[i]);
      for (const auto& [subject, where] : seen) CHECK(where.size() == 1);
      std::set<Split> used(splits.begin(), splits.end());
      CHECK(used.size() == 3);
    }
  }
}

TEST_CASE("subject assignment is close to the exhaustive optimum") {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> count(1, 12);
  int optimal = 0;
  const int trials = 40;
  for (int trial = 0; trial < trials; ++trial) {
    std::vector<int> sizes(3 + trial % 10);
    for (auto& s : sizes) s = count(rng);
    const SplitRatios ratios{8, 1, 1};
    const auto assignment = assign_subjects(sizes, ratios, trial);
    const auto got = split_sizes(sizes, assignment);
    const double best = optimal_cost(sizes, ratios);
    const double cost = split_cost(got, ratios);
    CHECK(cost >= best - 1e-9);
    optimal += cost <= best + 1e-9;
  }
  CHECK(optimal >= trials * 9 / 10);
}

TEST_CASE("skewed subject pools stay within one subject of the targets") {
  std::mt19937_64 rng(7);
  std::geometric_distribution<int> skew(0.15);
  std::vector<int> sizes(100);
  for (auto& s : sizes) s = 1 + skew(rng);
  const auto assignment = assign_subjects(sizes, {8, 1, 1}, 3);
  const auto got = split_sizes(sizes, assignment);
  const int biggest = *std::max_element(sizes.begin(), sizes.end());
  const double total = std::accumulate(sizes.begin(), sizes.end(), 0.0);
  const SplitRatios r{8, 1, 1};
  for (int k = 0; k < 3; ++k) CHECK(std::abs(got[k] - total * r[k] / 10.0) <= biggest);
  CHECK_THROWS_AS(assign_subjects(std::vector<int>{4, 4}, r, 0), InsufficientSubjects);
}

TEST_CASE("horizontal flip") {
  std::mt19937_64 rng(2);
  const Sample s = random_sample(12, 6, rng);
  const Sample f = hflip(s);
  for (int y = 0; y < 6; ++y) {
    for (int x = 0; x < 12; ++x) {
      CHECK(f.mask(x, y) == s.mask(11 - x, y));
      CHECK(f.image.pixels.col(f.image.index(x, y)) == s.image.pixels.col(s.image.index(11 - x, y)));
    }
  }
  const Sample ff = hflip(f);
  CHECK(ff.mask == s.mask);
  CHECK(ff.image == s.image);
  CHECK(f.mask.histogram() == s.mask.histogram());

  std::mt19937_64 coin(4);
  int flips = 0;
  for (int i = 0; i < 400; ++i) {
    Sample t = s;
    const bool flipped = augment_hflip(t, coin);
    flips += flipped;
    CHECK(t.mask == (flipped ? f.mask : s.mask));
  }
  CHECK(flips > 150);
  CHECK(flips < 250);
}

TEST_CASE("resize_pair") {
  std::mt19937_64 rng(3);
  const Sample s = random_sample(160, 80, rng);
  const Sample same = resize_pair(s);
  CHECK(same.image == s.image);
  CHECK(same.mask == s.mask);
  const Sample small = resize_pair(s, 64, 32);
  CHECK(small.image.width == 64);
  CHECK(small.mask.height() == 32);
  CHECK((small.mask.labels.array() <= 2).all());
}

TEST_CASE("batch iteration") {
  std::mt19937_64 rng(5);
  std::vector<Sample> samples;
  for (int i = 0; i < 10; ++i) samples.push_back(random_sample(8, 4, rng));

  BatchIterator<float> it(samples, 4, 11);
  std::vector<int> sizes;
  std::vector<std::size_t> seen;
  while (auto b = it.next()) {
    sizes.push_back(b->images.batch);
    CHECK(b->one_hot.batch == b->images.batch);
    CHECK((b->one_hot.values.colwise().sum().array() == 1.0f).all());
    seen.insert(seen.end(), b->indices.begin(), b->indices.end());
    for (std::size_t k = 0; k < b->indices.size(); ++k) CHECK(b->masks[k] == samples[b->indices[k]].mask);
  }
  CHECK(sizes == std::vector<int>{4, 4, 2});
  std::sort(seen.begin(), seen.end());
  std::vector<std::size_t> all(10);
  std::iota(all.begin(), all.end(), 0);
  CHECK(seen == all);

  BatchIterator<float> again(samples, 4, 11);
  CHECK(again.order() == it.order());
  BatchIterator<float> other(samples, 4, 12);
  CHECK(other.order() != it.order());

  CHECK_THROWS_AS(BatchIterator<float>(samples, 0, 1), InvalidArgument);
  CHECK_THROWS_AS(BatchIterator<float>(std::span<const Sample>(), 4, 1), InvalidArgument);
}

TEST_CASE("manifest round trip and loading") {
  TempDir dir("manifest");
  SynthConfig cfg;
  const Corpus corpus = synthesize_corpus(cfg, 12, 3);
  DatasetManifest m = write_corpus(corpus, dir.path());
  {
    std::ifstream in(dir.path() / "manifest.jsonl");
    int lines = 0;
    for (std::string line; std::getline(in, line);) lines += !line.empty();
    CHECK(lines == 12);
  }
  const auto assignment = split_subject_independent(m.records, {2, 1, 1}, 9);
  for (std::size_t i = 0; i < m.records.size(); ++i) m.records[i].split = assignment[i];
  m.split_seed = 9;
  m.ratios = {2, 1, 1};
  write_manifest(m, dir.path() / "manifest.jsonl");

  const DatasetManifest back = read_manifest(dir.path() / "manifest.jsonl");
  REQUIRE(back.records.size() == 12);
  CHECK(back.split_seed == std::optional<std::uint64_t>(9));
  CHECK(back.ratios == SplitRatios{2, 1, 1});
  for (std::size_t i = 0; i < 12; ++i) {
    CHECK(back.records[i].image_path == m.records[i].image_path);
    CHECK(back.records[i].subject_id == m.records[i].subject_id);
    CHECK(back.records[i].split == m.records[i].split);
    CHECK(back.records[i].native_area == m.records[i].native_area);
    CHECK(back.records[i].resolution == tag_resolution(back.records[i].native_area));
  }

  const auto train = load_split(back, Split::kTrain, 64, 32);
  const auto idx = back.indices(Split::kTrain);
  REQUIRE(train.size() == idx.size());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    CHECK(train[k].mask == corpus.samples[idx[k]].mask);
    CHECK(train[k].image == corpus.samples[idx[k]].image);
  }
  CHECK_THROWS_AS(read_manifest(dir.path() / "nope.jsonl"), IoError);
}

}  // TEST_SUITE
