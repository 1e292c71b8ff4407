#include "scn/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>

#include <json.hpp>

#include "scn/errors.hpp"

namespace scn {

std::string to_string(PoseTag tag) { return tag == PoseTag::kNearFrontal ? "near-frontal" : "non-frontal"; }
std::string to_string(ResolutionTag tag) { return tag == ResolutionTag::kHigh ? "high" : "low"; }

std::string to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "train";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  throw InvalidArgument("unknown split '" + name + "'");
}

std::vector<std::size_t> DatasetManifest::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].split == split) out.push_back(i);
  }
  return out;
}

std::filesystem::path DatasetManifest::resolve(const std::string& path) const {
  const std::filesystem::path p(path);
  return p.is_absolute() ? p : root / p;
}

namespace {

nlohmann::json record_json(const EyePatchRecord& r) {
  nlohmann::json j = {{"image_path", r.image_path},
                      {"mask_path", r.mask_path},
                      {"subject_id", r.subject_id},
                      {"pose_tag", to_string(r.pose)},
                      {"resolution_tag", to_string(r.resolution)},
                      {"occlusion_tag", r.occluded},
                      {"native_area", r.native_area}};
  if (r.split) j["split"] = to_string(*r.split);
  return j;
}

EyePatchRecord record_from_json(const nlohmann::json& j) {
  EyePatchRecord r;
  r.image_path = j.at("image_path").get<std::string>();
  r.mask_path = j.at("mask_path").get<std::string>();
  r.subject_id = j.at("subject_id").get<std::string>();
  const auto pose = j.at("pose_tag").get<std::string>();
  if (pose != "near-frontal" && pose != "non-frontal") throw InvalidArgument("bad pose_tag " + pose);
  r.pose = pose == "near-frontal" ? PoseTag::kNearFrontal : PoseTag::kNonFrontal;
  const auto res = j.at("resolution_tag").get<std::string>();
  if (res != "high" && res != "low") throw InvalidArgument("bad resolution_tag " + res);
  r.resolution = res == "high" ? ResolutionTag::kHigh : ResolutionTag::kLow;
  r.occluded = j.at("occlusion_tag").get<bool>();
  r.native_area = j.at("native_area").get<double>();
  if (r.resolution != tag_resolution(r.native_area)) {
    throw InvalidArgument("resolution_tag disagrees with native_area for " + r.image_path);
  }
  if (j.contains("split")) r.split = parse_split(j.at("split").get<std::string>());
  return r;
}

}  // namespace

std::filesystem::path split_info_path(const std::filesystem::path& manifest_path) {
  return manifest_path.parent_path() / (manifest_path.stem().string() + ".split.json");
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  DatasetManifest manifest;
  manifest.root = path.parent_path();
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      manifest.records.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const InvalidArgument& e) {
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (manifest.records.empty()) throw IoError("empty manifest " + path.string());

  const auto info_path = split_info_path(path);
  if (std::filesystem::exists(info_path)) {
    std::ifstream info_in(info_path);
    nlohmann::json info;
    try {
      info = nlohmann::json::parse(info_in);
      manifest.split_seed = info.at("split_seed").get<std::uint64_t>();
      const auto r = info.at("ratios").get<std::vector<double>>();
      if (r.size() != 3) throw IoError("split ratios must have three entries");
      manifest.ratios = {r[0], r[1], r[2]};
    } catch (const nlohmann::json::exception& e) {
      throw IoError(info_path.string() + ": " + e.what());
    }
  }
  return manifest;
}

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write manifest " + path.string());
    for (const auto& r : manifest.records) out << record_json(r).dump() << '\n';
    if (!out) throw IoError("failed writing manifest " + path.string());
  }
  const auto info_path = split_info_path(path);
  if (manifest.split_seed) {
    std::ofstream out(info_path, std::ios::binary | std::ios::trunc);
    const nlohmann::json info = {{"split_seed", *manifest.split_seed},
                                 {"ratios", {manifest.ratios[0], manifest.ratios[1], manifest.ratios[2]}}};
    out << info.dump(2) << '\n';
    if (!out) throw IoError("failed writing " + info_path.string());
  } else {
    std::filesystem::remove(info_path);
  }
}

ResolutionTag tag_resolution(double native_area) {
  if (!(native_area > 0.0)) throw InvalidArgument("native area must be positive");
  return native_area < kLowResolutionArea ? ResolutionTag::kLow : ResolutionTag::kHigh;
}

std::optional<BoundingBox> foreground_bbox(const EyeMask& mask) {
  BoundingBox box{mask.width(), mask.height(), -1, -1};
  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < mask.width(); ++x) {
      if (mask(x, y) != kBackground) {
        box.x0 = std::min(box.x0, x);
        box.y0 = std::min(box.y0, y);
        box.x1 = std::max(box.x1, x);
        box.y1 = std::max(box.y1, y);
      }
    }
  }
  if (box.x1 < 0) return std::nullopt;
  return box;
}

BoundingBox eye_patch_box(const BoundingBox& tight, const CropConfig& config) {
  if (config.margin < 0.0) throw InvalidArgument("crop margin must be non-negative");
  const double grown_w = tight.width() * (1.0 + config.margin);
  const double grown_h = tight.height() * (1.0 + config.margin);
  int h = static_cast<int>(std::ceil(std::max(grown_w / 2.0, grown_h) - 1e-9));
  h = std::max({h, config.min_height, (config.min_width + 1) / 2});
  const int w = 2 * h;
  // Centre in continuous coordinates; the output origin is rounded down.
  const double cx = (tight.x0 + tight.x1 + 1) / 2.0;
  const double cy = (tight.y0 + tight.y1 + 1) / 2.0;
  BoundingBox box;
  box.x0 = static_cast<int>(std::floor(cx - w / 2.0));
  box.y0 = static_cast<int>(std::floor(cy - h / 2.0));
  box.x1 = box.x0 + w - 1;
  box.y1 = box.y0 + h - 1;
  return box;
}

Sample crop_eye_patch(const Image& image, const EyeMask& mask, const BoundingBox& tight,
                      const CropConfig& config) {
  if (image.width != mask.width() || image.height != mask.height()) {
    throw InvalidArgument("crop: image and mask sizes differ");
  }
  const BoundingBox box = eye_patch_box(tight, config);
  Sample out{Image(box.width(), box.height(), image.channels), EyeMask(box.width(), box.height())};
  for (int y = 0; y < box.height(); ++y) {
    const int sy = box.y0 + y;
    if (sy < 0 || sy >= image.height) continue;
    for (int x = 0; x < box.width(); ++x) {
      const int sx = box.x0 + x;
      if (sx < 0 || sx >= image.width) continue;
      out.image.pixels.col(out.image.index(x, y)) = image.pixels.col(image.index(sx, sy));
      out.mask(x, y) = mask(sx, sy);
    }
  }
  return out;
}

Sample crop_eye_patch(const Image& image, const EyeMask& mask, const CropConfig& config) {
  const auto tight = foreground_bbox(mask);
  if (!tight) throw EmptyForeground("crop: mask has no foreground pixels");
  return crop_eye_patch(image, mask, *tight, config);
}

namespace {

struct SplitState {
  std::array<double, 3> targets{};
  std::array<long, 3> counts{};
  std::array<int, 3> members{};

  double cost() const {
    double c = 0.0;
    for (int k = 0; k < 3; ++k) c += (counts[k] - targets[k]) * (counts[k] - targets[k]);
    return c;
  }
  // Cost change when `size` records leave split `from` and enter split `to`.
  double move_delta(int from, int to, long size) const {
    auto sq = [](double v) { return v * v; };
    return sq(counts[from] - size - targets[from]) - sq(counts[from] - targets[from]) +
           sq(counts[to] + size - targets[to]) - sq(counts[to] - targets[to]);
  }
};

void refine(std::span<const int> sizes, std::vector<int>& assignment, SplitState& state) {
  const std::size_t n = sizes.size();
  constexpr double kTol = 1e-9;
  bool improved = true;
  while (improved) {
    improved = false;
    for (std::size_t i = 0; i < n && !improved; ++i) {
      const int from = assignment[i];
      if (state.members[from] <= 1) continue;
      for (int to = 0; to < 3; ++to) {
        if (to == from) continue;
        if (state.move_delta(from, to, sizes[i]) < -kTol) {
          state.counts[from] -= sizes[i];
          state.counts[to] += sizes[i];
          --state.members[from];
          ++state.members[to];
          assignment[i] = to;
          improved = true;
          break;
        }
      }
    }
    for (std::size_t i = 0; i < n && !improved; ++i) {
      for (std::size_t j = i + 1; j < n && !improved; ++j) {
        const int a = assignment[i];
        const int b = assignment[j];
        if (a == b || sizes[i] == sizes[j]) continue;
        const long d = sizes[i] - sizes[j];  // net records leaving a for b
        if (state.move_delta(a, b, d) < -kTol) {
          state.counts[a] -= d;
          state.counts[b] += d;
          std::swap(assignment[i], assignment[j]);
          improved = true;
        }
      }
    }
  }
}

}  // namespace

std::vector<Split> assign_subjects(std::span<const int> subject_sizes, const SplitRatios& ratios,
                                   std::uint64_t seed) {
  const std::size_t n = subject_sizes.size();
  if (n < 3) throw InsufficientSubjects("subject-independent split needs at least 3 subjects");
  const double ratio_sum = ratios[0] + ratios[1] + ratios[2];
  if (!(ratios[0] > 0.0 && ratios[1] > 0.0 && ratios[2] > 0.0)) {
    throw InvalidArgument("split ratios must be positive");
  }
  const long total = std::accumulate(subject_sizes.begin(), subject_sizes.end(), 0L);

  std::mt19937_64 rng(seed);
  constexpr int kRestarts = 8;
  std::vector<int> best;
  double best_cost = std::numeric_limits<double>::infinity();
  for (int restart = 0; restart < kRestarts; ++restart) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    // First pass is largest-first; later passes keep the random order.
    if (restart == 0) {
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return subject_sizes[a] > subject_sizes[b]; });
    }
    SplitState state;
    for (int k = 0; k < 3; ++k) state.targets[k] = total * ratios[k] / ratio_sum;
    std::vector<int> assignment(n, 0);
    for (std::size_t pos = 0; pos < n; ++pos) {
      const std::size_t i = order[pos];
      const std::size_t remaining = n - pos;
      const int empty = static_cast<int>(std::count(state.members.begin(), state.members.end(), 0));
      int pick = -1;
      double best_deficit = -std::numeric_limits<double>::infinity();
      for (int k = 0; k < 3; ++k) {
        if (static_cast<int>(remaining) <= empty && state.members[k] > 0) continue;
        const double deficit = state.targets[k] - state.counts[k];
        if (deficit > best_deficit) {
          best_deficit = deficit;
          pick = k;
        }
      }
      assignment[i] = pick;
      state.counts[pick] += subject_sizes[i];
      ++state.members[pick];
    }
    refine(subject_sizes, assignment, state);
    if (state.cost() < best_cost - 1e-9) {
      best_cost = state.cost();
      best = assignment;
    }
  }
  std::vector<Split> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<Split>(best[i]);
  return out;
}

std::vector<Split> split_subject_independent(std::span<const EyePatchRecord> records,
                                             const SplitRatios& ratios, std::uint64_t seed) {
  std::map<std::string, int> subject_index;
  std::vector<int> sizes;
  std::vector<int> record_subject(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].subject_id.empty()) throw InvalidArgument("record without subject_id");
    auto [it, inserted] = subject_index.try_emplace(records[i].subject_id, static_cast<int>(sizes.size()));
    if (inserted) sizes.push_back(0);
    ++sizes[it->second];
    record_subject[i] = it->second;
  }
  const auto per_subject = assign_subjects(sizes, ratios, seed);
  std::vector<Split> out(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) out[i] = per_subject[record_subject[i]];
  return out;
}

Sample hflip(const Sample& sample) { return {mirror(sample.image), mirror(sample.mask)}; }

bool augment_hflip(Sample& sample, std::mt19937_64& rng) {
  if (sample.image.width != sample.mask.width() || sample.image.height != sample.mask.height()) {
    throw InvalidArgument("hflip: image and mask sizes differ");
  }
  const bool flip = std::bernoulli_distribution(0.5)(rng);
  if (flip) sample = hflip(sample);
  return flip;
}

Sample resize_pair(const Sample& sample, int width, int height) {
  if (sample.image.width == 0 || sample.mask.width() == 0) throw InvalidArgument("resize: empty input");
  return {resize_bilinear(sample.image, width, height), resize_nearest(sample.mask, width, height)};
}

std::vector<Sample> load_records(const DatasetManifest& manifest, std::span<const std::size_t> indices,
                                 int width, int height) {
  std::vector<Sample> out;
  out.reserve(indices.size());
  for (const auto i : indices) {
    const auto& r = manifest.records.at(i);
    Sample s{read_image_png(manifest.resolve(r.image_path)), read_mask_png(manifest.resolve(r.mask_path))};
    if (s.image.width != s.mask.width() || s.image.height != s.mask.height()) {
      throw IoError("image and mask sizes differ for " + r.image_path);
    }
    if (s.mask.width() != 2 * s.mask.height()) s = crop_eye_patch(s.image, s.mask);
    out.push_back(resize_pair(s, width, height));
  }
  return out;
}

std::vector<Sample> load_split(const DatasetManifest& manifest, Split split, int width, int height) {
  const auto idx = manifest.indices(split);
  return load_records(manifest, idx, width, height);
}

}  // namespace scn
