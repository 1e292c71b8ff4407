#include "scn/commands.hpp"

#include <chrono>
#include <fstream>

#include "scn/checkpoint.hpp"
#include "scn/image.hpp"

namespace scn {

namespace {

void say(const Logger& log, const std::string& line) {
  if (log) log(line);
}

std::string seconds_since(std::chrono::steady_clock::time_point t0) {
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1fs", s);
  return buf;
}

template <typename F>
auto stage(const std::string& name, const Logger& log, F&& f) -> decltype(f()) {
  const auto t0 = std::chrono::steady_clock::now();
  say(log, "[" + name + "] start");
  try {
    if constexpr (std::is_void_v<decltype(f())>) {
      f();
      say(log, "[" + name + "] done in " + seconds_since(t0));
    } else {
      auto result = f();
      say(log, "[" + name + "] done in " + seconds_since(t0));
      return result;
    }
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

TrainConfig run_train_config(const RunConfig& config, const std::filesystem::path& run_dir) {
  TrainConfig t = config.train;
  t.checkpoint_dir = run_dir.string();
  return t;
}

std::vector<Sample> split_samples(const DatasetManifest& manifest, Split split, const SegNetConfig& model) {
  if (manifest.indices(split).empty()) {
    throw ConfigurationError("the manifest has no '" + to_string(split) + "' records (run split first)");
  }
  return load_split(manifest, split, model.width, model.height);
}

}  // namespace

void prepare_output(const std::filesystem::path& dir, const std::vector<std::string>& artifacts, bool overwrite) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
  std::vector<std::filesystem::path> present;
  for (const auto& a : artifacts) {
    if (std::filesystem::exists(dir / a)) present.push_back(dir / a);
  }
  if (present.empty()) return;
  if (!overwrite) {
    throw IoError("refusing to overwrite " + present.front().string() + " (pass --overwrite)");
  }
  for (const auto& p : present) std::filesystem::remove_all(p);
}

void drop_log_records(const std::filesystem::path& path, const std::string& key) {
  if (!std::filesystem::exists(path)) return;
  std::vector<std::string> keep;
  {
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      if (!nlohmann::json::parse(line).contains(key)) keep.push_back(line);
    }
  }
  std::ofstream out(path, std::ios::trunc);
  for (const auto& line : keep) out << line << '\n';
  if (!out) throw IoError("failed rewriting " + path.string());
}

DatasetManifest cmd_synth(const RunConfig& config, const std::filesystem::path& out_dir, bool overwrite,
                          const Logger& log) {
  if (!config.seed) throw ConfigurationError("synth needs a resolved seed");
  prepare_output(out_dir, {"images", "masks", "manifest.jsonl", "manifest.split.json"}, overwrite);
  const Corpus corpus = synthesize_corpus(config.synth.generator, config.synth.count, *config.seed);
  DatasetManifest m = write_corpus(corpus, out_dir);
  say(log, "wrote " + std::to_string(m.records.size()) + " samples to " + out_dir.string());
  return m;
}

DatasetManifest cmd_split(const std::filesystem::path& manifest_path, const SplitRatios& ratios, std::uint64_t seed,
                          bool overwrite, const Logger& log) {
  DatasetManifest m = read_manifest(manifest_path);
  for (const auto& r : m.records) {
    if (r.split && !overwrite) {
      throw IoError(manifest_path.string() + " already has a split assignment (pass --overwrite)");
    }
  }
  const std::vector<Split> assignment = split_subject_independent(m.records, ratios, seed);
  for (std::size_t i = 0; i < assignment.size(); ++i) m.records[i].split = assignment[i];
  m.ratios = ratios;
  m.split_seed = seed;
  write_manifest(m, manifest_path);
  say(log, "split " + std::to_string(m.indices(Split::kTrain).size()) + "/" +
               std::to_string(m.indices(Split::kVal).size()) + "/" + std::to_string(m.indices(Split::kTest).size()));
  return m;
}

PriorResult cmd_train_prior(const RunConfig& config, const DatasetManifest& manifest,
                            const std::filesystem::path& run_dir, const Logger& log) {
  const std::vector<Sample> train = split_samples(manifest, Split::kTrain, config.model.segnet);
  const std::vector<EyeMask> masks = masks_of(train);
  say(log, "training shape prior on " + std::to_string(masks.size()) + " masks for " +
               std::to_string(config.train.stage1_epochs) + " epochs");
  return train_shape_prior(masks, config.model.vaegan, run_train_config(config, run_dir),
                           jsonl_sink(run_dir / "losses.jsonl"));
}

SegResult cmd_train_seg(const RunConfig& config, const DatasetManifest& manifest,
                        const std::filesystem::path& prior_path, const std::filesystem::path& run_dir,
                        SegVariant variant, const Logger& log) {
  std::optional<VaeGan<Real>> prior;
  if (!prior_path.empty()) {
    prior = load_prior(prior_path);
  } else if (variant_needs_prior(variant)) {
    throw ConfigurationError("variant '" + to_string(variant) + "' needs --prior");
  }
  const std::vector<Sample> train = split_samples(manifest, Split::kTrain, config.model.segnet);
  const std::vector<Sample> val = split_samples(manifest, Split::kVal, config.model.segnet);
  say(log, "training segmentation (" + to_string(variant) + ") on " + std::to_string(train.size()) + " samples");
  SegResult r = train_segmentation(train, val, prior ? &*prior : nullptr, config.model.segnet,
                                   run_train_config(config, run_dir), variant, jsonl_sink(run_dir / "losses.jsonl"));
  say(log, "best validation Mean mIoU " + std::to_string(r.state.best_val_metric) + " at epoch " +
               std::to_string(r.best_epoch + 1));
  return r;
}

nlohmann::json report_json(const EvalReport& report, const std::string& fingerprint) {
  nlohmann::json j = report;
  j["config_fingerprint"] = fingerprint;
  return j;
}

void write_report(const nlohmann::json& report, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write report " + path.string());
  out << report.dump(2) << '\n';
  if (!out) throw IoError("failed writing report " + path.string());
}

EvalReport cmd_eval(const std::filesystem::path& checkpoint, const DatasetManifest& manifest, Split split,
                    const std::filesystem::path& out, const Logger& log) {
  const SegNet<Real> model = load_segnet(checkpoint);
  const EvalReport r = evaluate_split(model, manifest, split);
  const CheckpointReader reader(checkpoint);
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : reader.metadata().dump()) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char fp[17];
  std::snprintf(fp, sizeof fp, "%016llx", static_cast<unsigned long long>(h));
  if (!out.empty()) write_report(report_json(r, fp), out);
  say(log, "S-mIoU " + (r.s_miou ? std::to_string(*r.s_miou) : "n/a") + "  I-mIoU " +
               (r.i_miou ? std::to_string(*r.i_miou) : "n/a") + "  Mean mIoU " + std::to_string(r.mean_miou));
  return r;
}

double cmd_bench(const std::filesystem::path& checkpoint, const std::optional<DatasetManifest>& manifest, int warmup,
                 int reps) {
  const SegNet<Real> model = load_segnet(checkpoint);
  std::vector<Image> images;
  if (manifest) {
    for (auto& s : load_split(*manifest, Split::kTest, model.config().width, model.config().height)) {
      images.push_back(std::move(s.image));
    }
  } else {
    SynthConfig sc;
    sc.width = model.config().width;
    sc.height = model.config().height;
    for (const auto& s : synthesize_corpus(sc, 16, 0).samples) images.push_back(s.image);
  }
  return bench_inference(model, images, warmup, reps);
}

void cmd_infer(const std::filesystem::path& image_path, const std::filesystem::path& checkpoint,
               const std::filesystem::path& out) {
  const SegNet<Real> model = load_segnet(checkpoint);
  Image image = read_image_png(image_path);
  if (image.channels == 1) {
    Image rgb(image.width, image.height, 3);
    for (int c = 0; c < 3; ++c) rgb.pixels.row(c) = image.pixels.row(0);
    image = std::move(rgb);
  }
  if (image.channels != model.config().in_channels) throw InvalidArgument("image channel count does not match the model");
  const Image resized = resize_bilinear(image, model.config().width, model.config().height);
  const Image* batch[] = {&resized};
  const auto probs = model.predict(images_to_batch<Real>(batch));
  const EyeMask mask = argmax_masks(probs).front();
  const Sample full = resize_pair({resized, mask}, image.width, image.height);
  write_mask_png(full.mask, out);
}

EvalReport cmd_pipeline(const RunConfig& config, const std::filesystem::path& run_dir, bool overwrite,
                        const Logger& log) {
  if (!config.seed) throw ConfigurationError("pipeline needs a resolved seed");
  config.validate();
  prepare_output(run_dir, kRunArtifacts, overwrite);
  save_run_config(config, run_dir / "config.json");
  say(log, "run directory " + run_dir.string() + ", seed " + std::to_string(*config.seed));

  DatasetManifest manifest = stage("synth", log, [&] {
    if (!config.manifest.empty()) {
      DatasetManifest m = read_manifest(config.manifest);
      // Keep the external files in place; the run gets its own copy of the
      // manifest with absolute paths.
      for (auto& r : m.records) {
        r.image_path = std::filesystem::absolute(m.resolve(r.image_path)).string();
        r.mask_path = std::filesystem::absolute(m.resolve(r.mask_path)).string();
      }
      std::filesystem::create_directories(run_dir / "data");
      m.root = run_dir / "data";
      write_manifest(m, run_dir / "data" / "manifest.jsonl");
      return m;
    }
    return cmd_synth(config, run_dir / "data", overwrite, log);
  });
  manifest = stage("split", log, [&] {
    const bool has_split = !manifest.records.empty() && manifest.records.front().split.has_value();
    if (has_split) return manifest;
    return cmd_split(run_dir / "data" / "manifest.jsonl", config.split.ratios, *config.seed, overwrite, log);
  });
  const PriorResult prior = stage("train-prior", log, [&] { return cmd_train_prior(config, manifest, run_dir, log); });
  (void)prior;
  const SegResult seg = stage("train-seg", log, [&] {
    return cmd_train_seg(config, manifest, run_dir / "prior.ckpt", run_dir, SegVariant::kFull, log);
  });
  return stage("eval", log, [&] {
    const EvalReport r = evaluate_model(seg.model, std::span<const Sample>(
                                                       split_samples(manifest, parse_split(config.eval.split),
                                                                     config.model.segnet)));
    write_report(report_json(r, config_fingerprint(config)), run_dir / "report.json");
    say(log, "Mean mIoU " + std::to_string(r.mean_miou));
    return r;
  });
}

}  // namespace scn
