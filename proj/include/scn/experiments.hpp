#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <vector>

#include <json.hpp>

#include "scn/dataset.hpp"
#include "scn/evaluation.hpp"
#include "scn/synth.hpp"
#include "scn/training.hpp"

namespace scn {

/// Seed of the `index`-th sample of a corpus generated with `corpus_seed`.
std::uint64_t sample_seed(std::uint64_t corpus_seed, std::size_t index);

std::string subject_name(int subject_id);

/// Rounds every pixel to the nearest 8-bit level, as a PNG round trip does.
Image quantize_8bit(const Image& image);

/// Synthetic samples with manifest records. Images are 8-bit quantised so
/// that the in-memory corpus matches what write_corpus puts on disk. Record
/// paths are images/NNNNNN.png and masks/NNNNNN.png.
struct Corpus {
  std::vector<EyePatchRecord> records;
  std::vector<Sample> samples;
};

Corpus synthesize_corpus(const SynthConfig& config, int count, std::uint64_t seed);

/// Writes PNGs and manifest.jsonl under `dir`; returns the manifest.
DatasetManifest write_corpus(const Corpus& corpus, const std::filesystem::path& dir);

struct DataSplits {
  std::vector<Sample> train, val, test;
  std::vector<std::size_t> train_index, val_index, test_index;  // into the corpus
};

/// Subject-independent split of an in-memory corpus.
DataSplits split_corpus(const Corpus& corpus, const SplitRatios& ratios, std::uint64_t seed);

std::vector<EyeMask> masks_of(std::span<const Sample> samples);

struct AblationOutcome {
  std::map<SegVariant, EvalReport> reports;
  std::map<SegVariant, SegResult> runs;
};

/// Trains each variant from the same initialisation and evaluates on the
/// test split. `prior` may be null when no variant needs it.
AblationOutcome ablation_study(const DataSplits& data, const VaeGan<Real>* prior, const SegNetConfig& seg_config,
                               const TrainConfig& train_config, std::span<const SegVariant> variants);

struct CrossResolutionConfig {
  SplitRatios ratios{7.0, 1.0, 2.0};
  std::uint64_t split_seed = 0;
  /// When set, the low-resolution test set is subsampled so that
  /// (train + val) : test is at most this ratio.
  std::optional<double> high_low_ratio;
  SegNetConfig seg;
  VaeGanConfig vae;
  TrainConfig train;
};

struct CrossResolutionResult {
  EvalReport baseline;  // IoU-only
  EvalReport scn;       // full loss
  int n_train = 0, n_val = 0, n_test = 0;
};

/// Subjects are split first; training and validation keep only
/// high-resolution records of their subjects, the test split keeps only
/// low-resolution ones. The shape prior is trained on the high-resolution
/// training masks.
CrossResolutionResult cross_resolution_experiment(const Corpus& corpus, const CrossResolutionConfig& config);

}  // namespace scn
