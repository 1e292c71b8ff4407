#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "scn/config.hpp"
#include "scn/evaluation.hpp"
#include "scn/experiments.hpp"
#include "scn/training.hpp"

namespace scn {

/// A pipeline stage failed; the message names the stage and the cause.
class StageError : public Error {
 public:
  StageError(const std::string& stage, const std::string& cause)
      : Error("stage '" + stage + "' failed: " + cause), stage_(stage) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

/// Progress lines for humans (stderr in the command-line tool).
using Logger = std::function<void(const std::string&)>;

/// Refuses to touch a directory that already holds any of `artifacts` unless
/// `overwrite` is set, in which case those artifacts are removed first.
void prepare_output(const std::filesystem::path& dir, const std::vector<std::string>& artifacts, bool overwrite);

/// Rewrites a JSON-lines loss log without the records that carry `key`
/// (e.g. "l_iou" for stage 2). Missing files are left alone.
void drop_log_records(const std::filesystem::path& path, const std::string& key);

/// Generates `config.synth.count` samples seeded by the config seed and writes
/// PNGs plus manifest.jsonl into `out_dir`.
DatasetManifest cmd_synth(const RunConfig& config, const std::filesystem::path& out_dir, bool overwrite,
                          const Logger& log = {});

/// Writes a subject-independent split assignment into the manifest.
DatasetManifest cmd_split(const std::filesystem::path& manifest_path, const SplitRatios& ratios, std::uint64_t seed,
                          bool overwrite, const Logger& log = {});

/// Stage 1 on the training split; writes prior.ckpt and appends to
/// losses.jsonl in `run_dir`.
PriorResult cmd_train_prior(const RunConfig& config, const DatasetManifest& manifest,
                            const std::filesystem::path& run_dir, const Logger& log = {});

/// Stage 2 with a frozen prior loaded from `prior_path` (may be empty for
/// baseline_ce); writes seg.ckpt and appends to losses.jsonl.
SegResult cmd_train_seg(const RunConfig& config, const DatasetManifest& manifest,
                        const std::filesystem::path& prior_path, const std::filesystem::path& run_dir,
                        SegVariant variant, const Logger& log = {});

/// EvalReport JSON plus a fingerprint of whatever produced the model.
nlohmann::json report_json(const EvalReport& report, const std::string& fingerprint);
void write_report(const nlohmann::json& report, const std::filesystem::path& path);

EvalReport cmd_eval(const std::filesystem::path& checkpoint, const DatasetManifest& manifest, Split split,
                    const std::filesystem::path& out, const Logger& log = {});

/// Median seconds per single-image forward pass. Uses the test split images
/// of `manifest` when given, otherwise synthetic images.
double cmd_bench(const std::filesystem::path& checkpoint, const std::optional<DatasetManifest>& manifest, int warmup,
                 int reps);

/// Segments one PNG image; the mask is written at the input resolution.
void cmd_infer(const std::filesystem::path& image, const std::filesystem::path& checkpoint,
               const std::filesystem::path& out);

/// synth (or external manifest) -> split -> train-prior -> train-seg -> eval,
/// with every artifact under `run_dir`. The config must have a resolved seed.
EvalReport cmd_pipeline(const RunConfig& config, const std::filesystem::path& run_dir, bool overwrite,
                        const Logger& log = {});

/// Artifacts of a pipeline run directory.
inline const std::vector<std::string> kRunArtifacts{"config.json", "data", "prior.ckpt", "seg.ckpt", "losses.jsonl",
                                                    "report.json"};

}  // namespace scn
