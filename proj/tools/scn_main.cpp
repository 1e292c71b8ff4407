// Command-line entry point: scn <subcommand> [options]

#include <malloc.h>

#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "scn/commands.hpp"

namespace {

using scn::RunConfig;

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  bool overwrite = false;
};

void add_common(CLI::App* cmd, Common& c, bool with_seed = true) {
  cmd->add_option("--config", c.config_path, "JSON run configuration");
  cmd->add_option("--set", c.overrides, "Override a config value: section.key=value (repeatable)");
  if (with_seed) cmd->add_option("--seed", c.seed, "Seed for every stochastic component");
  cmd->add_flag("--overwrite", c.overwrite, "Replace existing outputs");
}

// Flags win over --set, which wins over the config file.
RunConfig load_config(const Common& c, const std::vector<std::string>& flag_overrides) {
  nlohmann::json doc = nlohmann::json::object();
  if (!c.config_path.empty()) {
    std::ifstream in(c.config_path);
    if (!in) throw scn::IoError("cannot read config " + c.config_path);
    try {
      doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw scn::ConfigurationError("cannot parse " + c.config_path + ": " + e.what());
    }
  }
  for (const auto& o : c.overrides) scn::apply_override(doc, o);
  for (const auto& o : flag_overrides) scn::apply_override(doc, o);
  RunConfig config = doc.get<RunConfig>();
  const bool had_seed = c.seed || config.seed;
  scn::resolve_seed(config, c.seed);
  if (!had_seed) std::cerr << "no seed given; using random seed " << *config.seed << "\n";
  config.validate();
  return config;
}

scn::SplitRatios parse_ratios(const std::string& text) {
  scn::SplitRatios r{};
  std::stringstream in(text);
  std::string part;
  int i = 0;
  while (std::getline(in, part, ',')) {
    if (i >= 3) throw scn::ConfigurationError("--ratios takes three comma-separated numbers");
    r[i++] = std::stod(part);
  }
  if (i != 3) throw scn::ConfigurationError("--ratios takes three comma-separated numbers");
  return r;
}

scn::DatasetManifest manifest_for(const std::string& flag, const RunConfig& config) {
  const std::string path = !flag.empty() ? flag : config.manifest;
  if (path.empty()) throw scn::ConfigurationError("no manifest given (--manifest or config 'manifest')");
  return scn::read_manifest(path);
}

std::string timestamp_dir() {
  const std::time_t now = std::time(nullptr);
  char buf[64];
  std::strftime(buf, sizeof buf, "runs/%Y%m%d-%H%M%S", std::localtime(&now));
  return buf;
}

void log_line(const std::string& line) { std::cerr << line << std::endl; }

}  // namespace

int main(int argc, char** argv) {
  // Large, short-lived matrices: keep freed memory in the heap instead of
  // returning it to the kernel on every step.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);

  CLI::App app{"Shape-constrained eye segmentation: data, training and evaluation"};
  app.require_subcommand(1);
  Common common;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic eye-patch dataset");
  std::string synth_out;
  std::optional<int> synth_count;
  add_common(synth, common);
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--count", synth_count, "Number of samples");

  auto* split = app.add_subcommand("split", "Assign subject-independent train/val/test splits");
  std::string split_manifest, split_ratios = "8,1,1";
  add_common(split, common);
  split->add_option("--manifest", split_manifest, "Manifest to update in place")->required();
  split->add_option("--ratios", split_ratios, "Train,val,test ratios");

  auto* tprior = app.add_subcommand("train-prior", "Stage 1: train the VAE-GAN shape prior");
  std::string tp_manifest, tp_run;
  std::optional<int> tp_epochs;
  add_common(tprior, common);
  tprior->add_option("--manifest", tp_manifest, "Dataset manifest with splits");
  tprior->add_option("--run-dir", tp_run, "Run directory")->required();
  tprior->add_option("--epochs", tp_epochs, "Stage-1 epochs");

  auto* tseg = app.add_subcommand("train-seg", "Stage 2: train the segmentation network");
  std::string ts_manifest, ts_run, ts_prior, ts_variant = "full";
  std::optional<int> ts_epochs, ts_patience;
  add_common(tseg, common);
  tseg->add_option("--manifest", ts_manifest, "Dataset manifest with splits");
  tseg->add_option("--run-dir", ts_run, "Run directory")->required();
  tseg->add_option("--prior", ts_prior, "Stage-1 checkpoint");
  tseg->add_option("--variant", ts_variant, "full|iou_only|z_only|iou_plus_z|baseline_ce");
  tseg->add_option("--epochs", ts_epochs, "Maximum stage-2 epochs");
  tseg->add_option("--patience", ts_patience, "Early-stopping patience (validation checks)");

  auto* ablate = app.add_subcommand("ablate", "Train one loss variant and evaluate it on the test split");
  std::string ab_manifest, ab_run, ab_prior, ab_variant;
  std::optional<int> ab_epochs;
  add_common(ablate, common);
  ablate->add_option("--variant", ab_variant, "full|iou_only|z_only|iou_plus_z|baseline_ce")->required();
  ablate->add_option("--manifest", ab_manifest, "Dataset manifest with splits");
  ablate->add_option("--run-dir", ab_run, "Run directory")->required();
  ablate->add_option("--prior", ab_prior, "Stage-1 checkpoint (not needed for baseline_ce)");
  ablate->add_option("--epochs", ab_epochs, "Maximum stage-2 epochs");

  auto* eval = app.add_subcommand("eval", "Evaluate a segmentation checkpoint");
  std::string ev_ckpt, ev_manifest, ev_split = "test", ev_out;
  eval->add_option("--checkpoint", ev_ckpt, "Segmentation checkpoint")->required();
  eval->add_option("--manifest", ev_manifest, "Dataset manifest")->required();
  eval->add_option("--split", ev_split, "train|val|test");
  eval->add_option("--out", ev_out, "Report path");

  auto* bench = app.add_subcommand("bench", "Time single-image inference");
  std::string bn_ckpt, bn_manifest;
  int bn_reps = 100, bn_warmup = 5;
  bench->add_option("--checkpoint", bn_ckpt, "Segmentation checkpoint")->required();
  bench->add_option("--reps", bn_reps, "Timed repetitions");
  bench->add_option("--warmup", bn_warmup, "Discarded warm-up passes");
  bench->add_option("--manifest", bn_manifest, "Use test-split images from this manifest");

  auto* infer = app.add_subcommand("infer", "Segment one image");
  std::string in_image, in_ckpt, in_out;
  infer->add_option("--image", in_image, "Input PNG")->required();
  infer->add_option("--checkpoint", in_ckpt, "Segmentation checkpoint")->required();
  infer->add_option("--out", in_out, "Output mask PNG (labels 0, 1, 2)")->required();

  auto* pipeline = app.add_subcommand("pipeline", "synth/ingest -> split -> train-prior -> train-seg -> eval");
  std::string pl_run, pl_manifest;
  add_common(pipeline, common);
  pipeline->add_option("--run-dir", pl_run, "Run directory (default runs/<timestamp>)");
  pipeline->add_option("--manifest", pl_manifest, "External dataset manifest instead of synthetic data");

  auto* stats = app.add_subcommand("stats", "Paired t-test with Bonferroni correction between two reports");
  std::string st_a, st_b;
  int st_m = 1;
  stats->add_option("--a", st_a, "Report of the proposed method")->required();
  stats->add_option("--b", st_b, "Report of the compared method")->required();
  stats->add_option("--comparisons", st_m, "Number of comparisons in the family");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      std::vector<std::string> flags;
      if (synth_count) flags.push_back("synth.count=" + std::to_string(*synth_count));
      const RunConfig config = load_config(common, flags);
      scn::cmd_synth(config, synth_out, common.overwrite, log_line);
    } else if (split->parsed()) {
      const RunConfig config = load_config(common, {});
      scn::cmd_split(split_manifest, parse_ratios(split_ratios), *config.seed, common.overwrite, log_line);
    } else if (tprior->parsed()) {
      std::vector<std::string> flags;
      if (tp_epochs) flags.push_back("train.stage1_epochs=" + std::to_string(*tp_epochs));
      const RunConfig config = load_config(common, flags);
      const auto manifest = manifest_for(tp_manifest, config);
      scn::prepare_output(tp_run, {"prior.ckpt"}, common.overwrite);
      scn::drop_log_records(std::filesystem::path(tp_run) / "losses.jsonl", "l_prior");
      scn::cmd_train_prior(config, manifest, tp_run, log_line);
    } else if (tseg->parsed()) {
      std::vector<std::string> flags;
      if (ts_epochs) flags.push_back("train.stage2_max_epochs=" + std::to_string(*ts_epochs));
      if (ts_patience) flags.push_back("train.stage2_early_stop_patience=" + std::to_string(*ts_patience));
      const RunConfig config = load_config(common, flags);
      const auto manifest = manifest_for(ts_manifest, config);
      scn::prepare_output(ts_run, {"seg.ckpt"}, common.overwrite);
      scn::drop_log_records(std::filesystem::path(ts_run) / "losses.jsonl", "l_iou");
      scn::cmd_train_seg(config, manifest, ts_prior, ts_run, scn::parse_variant(ts_variant), log_line);
    } else if (ablate->parsed()) {
      std::vector<std::string> flags;
      if (ab_epochs) flags.push_back("train.stage2_max_epochs=" + std::to_string(*ab_epochs));
      const RunConfig config = load_config(common, flags);
      const auto manifest = manifest_for(ab_manifest, config);
      const auto variant = scn::parse_variant(ab_variant);
      if (scn::variant_needs_prior(variant) && ab_prior.empty()) {
        throw scn::ConfigurationError("variant '" + ab_variant + "' needs --prior");
      }
      scn::prepare_output(ab_run, {"seg.ckpt", "losses.jsonl", "report.json", "config.json"}, common.overwrite);
      scn::save_run_config(config, std::filesystem::path(ab_run) / "config.json");
      const auto r = scn::cmd_train_seg(config, manifest, ab_prior, ab_run, variant, log_line);
      const auto test = scn::load_split(manifest, scn::Split::kTest, config.model.segnet.width,
                                        config.model.segnet.height);
      const auto report = scn::evaluate_model(r.model, std::span<const scn::Sample>(test));
      auto j = scn::report_json(report, scn::config_fingerprint(config));
      j["variant"] = ab_variant;
      scn::write_report(j, std::filesystem::path(ab_run) / "report.json");
      std::cout << "Mean mIoU " << report.mean_miou << "\n";
    } else if (eval->parsed()) {
      scn::cmd_eval(ev_ckpt, scn::read_manifest(ev_manifest), scn::parse_split(ev_split), ev_out, log_line);
    } else if (bench->parsed()) {
      std::optional<scn::DatasetManifest> m;
      if (!bn_manifest.empty()) m = scn::read_manifest(bn_manifest);
      const double s = scn::cmd_bench(bn_ckpt, m, bn_warmup, bn_reps);
      std::cout << nlohmann::json{{"seconds_per_image", s}, {"reps", bn_reps}}.dump() << "\n";
    } else if (infer->parsed()) {
      scn::cmd_infer(in_image, in_ckpt, in_out);
    } else if (pipeline->parsed()) {
      std::vector<std::string> flags;
      if (!pl_manifest.empty()) flags.push_back("manifest=" + nlohmann::json(pl_manifest).dump());
      const RunConfig config = load_config(common, flags);
      const std::string run = pl_run.empty() ? timestamp_dir() : pl_run;
      const auto report = scn::cmd_pipeline(config, run, common.overwrite, log_line);
      std::cout << nlohmann::json{{"run_dir", run}, {"mean_miou", report.mean_miou}}.dump() << "\n";
    } else if (stats->parsed()) {
      auto read = [](const std::string& path) {
        std::ifstream in(path);
        if (!in) throw scn::IoError("cannot read report " + path);
        return nlohmann::json::parse(in).get<scn::EvalReport>();
      };
      const auto r = scn::paired_ttest_bonferroni(read(st_a), read(st_b), st_m);
      std::cout << nlohmann::json(r).dump() << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
