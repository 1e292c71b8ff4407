#include "scn/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "scn/image.hpp"

namespace scn {

std::uint64_t sample_seed(std::uint64_t corpus_seed, std::size_t index) {
  // splitmix64 of the combined value
  std::uint64_t z = corpus_seed + 0x9E3779B97F4A7C15ULL * (static_cast<std::uint64_t>(index) + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::string subject_name(int subject_id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "s%04d", subject_id);
  return buf;
}

Image quantize_8bit(const Image& image) {
  Image out = image;
  for (Eigen::Index i = 0; i < out.pixels.size(); ++i) {
    const float v = std::clamp(out.pixels.data()[i], 0.0f, 1.0f);
    out.pixels.data()[i] = static_cast<float>(std::lround(v * 255.0f)) / 255.0f;
  }
  return out;
}

Corpus synthesize_corpus(const SynthConfig& config, int count, std::uint64_t seed) {
  config.validate();
  if (count < 1) throw InvalidArgument("corpus size must be at least 1");
  Corpus corpus;
  corpus.records.reserve(static_cast<std::size_t>(count));
  corpus.samples.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    SynthSample s = synth_sample(sample_seed(seed, static_cast<std::size_t>(i)), config);
    char name[32];
    std::snprintf(name, sizeof name, "%06d.png", i);
    EyePatchRecord r;
    r.image_path = std::string("images/") + name;
    r.mask_path = std::string("masks/") + name;
    r.subject_id = subject_name(s.subject_id);
    r.pose = s.non_frontal ? PoseTag::kNonFrontal : PoseTag::kNearFrontal;
    r.native_area = s.native_area();
    r.resolution = tag_resolution(r.native_area);
    r.occluded = s.occluded;
    corpus.records.push_back(std::move(r));
    corpus.samples.push_back({quantize_8bit(s.image), std::move(s.mask)});
  }
  return corpus;
}

DatasetManifest write_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "images", ec);
  if (!ec) std::filesystem::create_directories(dir / "masks", ec);
  if (ec) throw IoError("cannot create dataset directory " + dir.string() + ": " + ec.message());
  DatasetManifest manifest;
  manifest.root = dir;
  manifest.records = corpus.records;
  for (std::size_t i = 0; i < corpus.records.size(); ++i) {
    write_image_png(corpus.samples[i].image, dir / corpus.records[i].image_path);
    write_mask_png(corpus.samples[i].mask, dir / corpus.records[i].mask_path);
  }
  write_manifest(manifest, dir / "manifest.jsonl");
  return manifest;
}

DataSplits split_corpus(const Corpus& corpus, const SplitRatios& ratios, std::uint64_t seed) {
  const std::vector<Split> assignment = split_subject_independent(corpus.records, ratios, seed);
  DataSplits out;
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    switch (assignment[i]) {
      case Split::kTrain:
        out.train.push_back(corpus.samples[i]);
        out.train_index.push_back(i);
        break;
      case Split::kVal:
        out.val.push_back(corpus.samples[i]);
        out.val_index.push_back(i);
        break;
      case Split::kTest:
        out.test.push_back(corpus.samples[i]);
        out.test_index.push_back(i);
        break;
    }
  }
  return out;
}

std::vector<EyeMask> masks_of(std::span<const Sample> samples) {
  std::vector<EyeMask> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.mask);
  return out;
}

AblationOutcome ablation_study(const DataSplits& data, const VaeGan<Real>* prior, const SegNetConfig& seg_config,
                               const TrainConfig& train_config, std::span<const SegVariant> variants) {
  AblationOutcome out;
  for (SegVariant v : variants) {
    if (variant_needs_prior(v) && prior == nullptr) {
      throw ConfigurationError("variant '" + to_string(v) + "' needs a shape prior");
    }
    TrainConfig cfg = train_config;
    if (!cfg.checkpoint_dir.empty()) cfg.checkpoint_dir = (std::filesystem::path(cfg.checkpoint_dir) / to_string(v)).string();
    SegResult r = train_segmentation(data.train, data.val, prior, seg_config, cfg, v);
    out.reports[v] = evaluate_model(r.model, std::span<const Sample>(data.test));
    out.runs.emplace(v, std::move(r));
  }
  return out;
}

CrossResolutionResult cross_resolution_experiment(const Corpus& corpus, const CrossResolutionConfig& config) {
  const std::vector<Split> assignment = split_subject_independent(corpus.records, config.ratios, config.split_seed);
  std::vector<Sample> train, val, test;
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    const bool high = corpus.records[i].resolution == ResolutionTag::kHigh;
    if (assignment[i] == Split::kTrain && high) train.push_back(corpus.samples[i]);
    if (assignment[i] == Split::kVal && high) val.push_back(corpus.samples[i]);
    if (assignment[i] == Split::kTest && !high) test.push_back(corpus.samples[i]);
  }
  if (train.empty() || val.empty()) throw ConfigurationError("no high-resolution samples for training/validation");
  if (test.empty()) throw ConfigurationError("no low-resolution samples for testing");
  if (config.high_low_ratio) {
    if (!(*config.high_low_ratio > 0.0)) throw ConfigurationError("high_low_ratio must be positive");
    const auto keep = static_cast<std::size_t>(
        std::max(1.0, std::floor(static_cast<double>(train.size() + val.size()) / *config.high_low_ratio)));
    if (test.size() > keep) test.resize(keep);
  }

  CrossResolutionResult out;
  out.n_train = static_cast<int>(train.size());
  out.n_val = static_cast<int>(val.size());
  out.n_test = static_cast<int>(test.size());
  const std::vector<EyeMask> masks = masks_of(train);
  const PriorResult prior = train_shape_prior(masks, config.vae, config.train);
  const SegResult base = train_segmentation(train, val, &prior.model, config.seg, config.train, SegVariant::kIouOnly);
  out.baseline = evaluate_model(base.model, std::span<const Sample>(test));
  const SegResult scn = train_segmentation(train, val, &prior.model, config.seg, config.train, SegVariant::kFull);
  out.scn = evaluate_model(scn.model, std::span<const Sample>(test));
  return out;
}

}  // namespace scn
