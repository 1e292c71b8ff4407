#include "scn/training.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "scn/checkpoint.hpp"

namespace scn {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw InvalidArgument("learning_rate must be > 0");
  if (batch_size < 1) throw InvalidArgument("batch_size must be at least 1");
  if (stage1_epochs < 1) throw InvalidArgument("stage1_epochs must be at least 1");
  if (stage2_max_epochs < 1) throw InvalidArgument("stage2_max_epochs must be at least 1");
  if (stage2_early_stop_patience < 1) throw InvalidArgument("stage2_early_stop_patience must be at least 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw InvalidArgument("Adam moment parameters must lie in [0, 1)");
  }
  weights.validate();
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"learning_rate", c.learning_rate},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"batch_size", c.batch_size},
       {"stage1_epochs", c.stage1_epochs},
       {"stage2_max_epochs", c.stage2_max_epochs},
       {"stage2_early_stop_patience", c.stage2_early_stop_patience},
       {"augment_hflip", c.augment_hflip},
       {"weights", c.weights},
       {"seed", c.seed},
       {"checkpoint_dir", c.checkpoint_dir}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c = TrainConfig{};
  for (const auto& [key, value] : j.items()) {
    if (key == "learning_rate") value.get_to(c.learning_rate);
    else if (key == "beta1") value.get_to(c.beta1);
    else if (key == "beta2") value.get_to(c.beta2);
    else if (key == "batch_size") value.get_to(c.batch_size);
    else if (key == "stage1_epochs") value.get_to(c.stage1_epochs);
    else if (key == "stage2_max_epochs") value.get_to(c.stage2_max_epochs);
    else if (key == "stage2_early_stop_patience") value.get_to(c.stage2_early_stop_patience);
    else if (key == "augment_hflip") value.get_to(c.augment_hflip);
    else if (key == "weights") value.get_to(c.weights);
    else if (key == "seed") value.get_to(c.seed);
    else if (key == "checkpoint_dir") value.get_to(c.checkpoint_dir);
    else throw ConfigurationError("unknown key 'train." + key + "'");
  }
}

void to_json(nlohmann::json& j, const TrainState& s) {
  j = {{"step", s.step},
       {"epoch", s.epoch},
       {"best_val_metric", std::isfinite(s.best_val_metric) ? nlohmann::json(s.best_val_metric) : nlohmann::json()},
       {"steps_since_improvement", s.steps_since_improvement},
       {"rng_state", s.rng_state}};
}

void from_json(const nlohmann::json& j, TrainState& s) {
  s = TrainState{};
  j.at("step").get_to(s.step);
  j.at("epoch").get_to(s.epoch);
  if (!j.at("best_val_metric").is_null()) j.at("best_val_metric").get_to(s.best_val_metric);
  j.at("steps_since_improvement").get_to(s.steps_since_improvement);
  j.at("rng_state").get_to(s.rng_state);
}

EarlyStopping::EarlyStopping(int patience) : patience_(patience) {
  if (patience < 1) throw InvalidArgument("patience must be at least 1");
}

bool EarlyStopping::update(double metric) {
  const int check = checks_++;
  if (metric > best_) {
    best_ = metric;
    best_check_ = check;
    since_best_ = 0;
    return true;
  }
  ++since_best_;
  return false;
}

void to_json(nlohmann::json& j, const PriorStepLog& r) {
  j = {{"step", r.step}, {"l_prior", r.l_prior}, {"l_rec", r.l_rec}, {"l_gan_d", r.l_gan_d}, {"l_gan_g", r.l_gan_g}};
}

void to_json(nlohmann::json& j, const SegStepLog& r) {
  j = {{"step", r.step},
       {"l_iou", r.l_iou},
       {"l_z", r.l_z ? nlohmann::json(*r.l_z) : nlohmann::json()},
       {"l_disc", r.l_disc ? nlohmann::json(*r.l_disc) : nlohmann::json()},
       {"total", r.total}};
  if (r.l_ce) j["l_ce"] = *r.l_ce;
}

LossSink jsonl_sink(const std::filesystem::path& path) {
  auto out = std::make_shared<std::ofstream>(path, std::ios::app);
  if (!*out) throw IoError("cannot open loss log " + path.string());
  return [out, path](const nlohmann::json& record) {
    *out << record.dump() << '\n';
    out->flush();
    if (!*out) throw IoError("failed writing loss log " + path.string());
  };
}

namespace {

std::string engine_state(const std::mt19937_64& rng) {
  std::ostringstream s;
  s << rng;
  return s.str();
}

bool all_finite(std::initializer_list<double> values) {
  for (double v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::filesystem::path checkpoint_path(const TrainConfig& config, const char* name) {
  if (config.checkpoint_dir.empty()) return {};
  return std::filesystem::path(config.checkpoint_dir) / name;
}

std::string last_good(const std::filesystem::path& path) {
  if (path.empty()) return "no checkpoint directory configured";
  if (std::filesystem::exists(path)) return "last good checkpoint: " + path.string();
  return "no checkpoint written yet";
}

// Independent engines for each stage, derived from the run seed.
constexpr std::uint64_t kPriorStream = 0x5A17'0001ULL;
constexpr std::uint64_t kSegInitStream = 0x5A17'0002ULL;
constexpr std::uint64_t kSegDataStream = 0x5A17'0003ULL;

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

}  // namespace

PriorResult train_shape_prior(std::span<const EyeMask> masks, const VaeGanConfig& model_config,
                              const TrainConfig& config, const LossSink& sink) {
  config.validate();
  if (masks.empty()) throw InvalidArgument("shape prior training needs at least one mask");
  for (const auto& m : masks) {
    if (m.width() != model_config.width || m.height() != model_config.height) {
      throw InvalidArgument("mask size does not match the VAE-GAN input size");
    }
  }
  std::mt19937_64 rng(derive_seed(config.seed, kPriorStream));
  PriorResult result{VaeGan<Real>(model_config, rng()), {}, {}};
  VaeGan<Real>& model = result.model;
  Adam<Real> opt_e(model.encoder_params, config.adam());
  Adam<Real> opt_g(model.generator_params, config.adam());
  Adam<Real> opt_d(model.discriminator_params, config.adam());
  const auto ckpt = checkpoint_path(config, "prior.ckpt");

  std::vector<std::size_t> order(masks.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  TrainState& state = result.state;
  for (int epoch = 0; epoch < config.stage1_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      std::vector<EyeMask> flipped;
      flipped.reserve(end - start);
      std::vector<const EyeMask*> batch;
      for (std::size_t i = start; i < end; ++i) {
        const EyeMask& m = masks[order[i]];
        if (config.augment_hflip && std::bernoulli_distribution(0.5)(rng)) {
          flipped.push_back(mirror(m));
          batch.push_back(&flipped.back());
        } else {
          batch.push_back(&m);
        }
      }
      PriorGradients<Real> g;
      try {
        g = prior_step_gradients(model, one_hot<Real>(batch), config.weights, rng);
      } catch (const TrainingDivergence& e) {
        throw TrainingDivergence(std::string(e.what()) + " at stage-1 step " + std::to_string(state.step) +
                                 " (epoch " + std::to_string(epoch) + "); " + last_good(ckpt));
      }
      opt_e.step(model.encoder_params, g.encoder);
      opt_g.step(model.generator_params, g.generator);
      opt_d.step(model.discriminator_params, g.discriminator);
      g.losses.step = state.step++;
      if (sink) sink(nlohmann::json(g.losses));
      result.history.push_back(g.losses);
    }
    state.epoch = epoch + 1;
    state.rng_state = engine_state(rng);
    if (!ckpt.empty()) save_prior(model, state, ckpt);
  }
  return result;
}

std::string to_string(SegVariant v) {
  switch (v) {
    case SegVariant::kFull: return "full";
    case SegVariant::kIouOnly: return "iou_only";
    case SegVariant::kZOnly: return "z_only";
    case SegVariant::kIouPlusZ: return "iou_plus_z";
    case SegVariant::kBaselineCe: return "baseline_ce";
  }
  throw InvalidArgument("unknown variant");
}

SegVariant parse_variant(const std::string& name) {
  for (auto v : {SegVariant::kFull, SegVariant::kIouOnly, SegVariant::kZOnly, SegVariant::kIouPlusZ,
                 SegVariant::kBaselineCe}) {
    if (to_string(v) == name) return v;
  }
  throw InvalidArgument("unknown variant '" + name + "' (full|iou_only|z_only|iou_plus_z|baseline_ce)");
}

VariantWeights variant_weights(SegVariant v, const LossWeights& w) {
  switch (v) {
    case SegVariant::kFull: return {1.0, w.lambda_1, w.lambda_2, 0.0};
    case SegVariant::kIouOnly: return {1.0, 0.0, 0.0, 0.0};
    case SegVariant::kZOnly: return {0.0, w.lambda_1, 0.0, 0.0};
    case SegVariant::kIouPlusZ: return {1.0, w.lambda_1, 0.0, 0.0};
    case SegVariant::kBaselineCe: return {0.0, 0.0, 0.0, 1.0};
  }
  throw InvalidArgument("unknown variant");
}

bool variant_needs_prior(SegVariant v) {
  return v == SegVariant::kFull || v == SegVariant::kZOnly || v == SegVariant::kIouPlusZ;
}

SegResult train_segmentation(std::span<const Sample> train, std::span<const Sample> val, const VaeGan<Real>* prior,
                             const SegNetConfig& model_config, const TrainConfig& config, SegVariant variant,
                             const LossSink& sink) {
  config.validate();
  const VariantWeights vw = variant_weights(variant, config.weights);
  if (prior == nullptr && (vw.z != 0.0 || vw.disc != 0.0)) {
    throw ConfigurationError("variant '" + to_string(variant) + "' needs a trained shape prior");
  }
  if (train.empty() || val.empty()) throw InvalidArgument("segmentation training needs train and val samples");
  if (prior != nullptr && (prior->config.width != model_config.width || prior->config.height != model_config.height)) {
    throw ConfigurationError("shape prior and segmentation network input sizes differ");
  }
  const std::uint64_t enc_sum = prior ? prior->encoder_params.checksum() : 0;
  const std::uint64_t disc_sum = prior ? prior->discriminator_params.checksum() : 0;

  SegResult result{SegNet<Real>(model_config, derive_seed(config.seed, kSegInitStream)), {}, {}, -1, {}};
  SegNet<Real>& model = result.model;
  Adam<Real> opt(model.params(), config.adam());
  std::mt19937_64 rng(derive_seed(config.seed, kSegDataStream));
  EarlyStopping stopper(config.stage2_early_stop_patience);
  ParamStore<Real> best = model.params();
  const auto ckpt = checkpoint_path(config, "seg.ckpt");
  TrainState& state = result.state;

  for (int epoch = 0; epoch < config.stage2_max_epochs; ++epoch) {
    BatchIterator<Real> batches(train, config.batch_size, rng(), true, config.augment_hflip);
    while (auto batch = batches.next()) {
      SegNetTrace<Real> trace;
      const FeatureMap<Real> probs = model.forward(batch->images, trace, Mode::kTrain);
      auto obj = seg_objective<Real>(probs, batch->one_hot, prior, vw, config.weights);
      obj.losses.step = state.step;
      if (!all_finite({obj.losses.l_iou, obj.losses.l_z.value_or(0.0), obj.losses.l_disc.value_or(0.0),
                       obj.losses.l_ce.value_or(0.0), obj.losses.total})) {
        throw TrainingDivergence("non-finite stage-2 loss at step " + std::to_string(state.step) + " (epoch " +
                                 std::to_string(epoch) + ", " + nlohmann::json(obj.losses).dump() + "); " +
                                 last_good(ckpt));
      }
      Gradients<Real> grads = model.params().zero_gradients();
      model.backward(trace, obj.d_probs, grads);
      model.update_running(trace);
      opt.step(model.params(), grads);
      ++state.step;
      if (sink) sink(nlohmann::json(obj.losses));
      result.history.push_back(obj.losses);
    }
    const double metric = evaluate_model(model, val).mean_miou;
    result.val_history.push_back(metric);
    state.epoch = epoch + 1;
    state.rng_state = engine_state(rng);
    if (stopper.update(metric)) {
      best = model.params();
      result.best_epoch = epoch;
      state.best_val_metric = metric;
      if (!ckpt.empty()) save_segnet(model, state, ckpt);
    }
    state.steps_since_improvement = stopper.since_best();
    if (stopper.should_stop()) break;
  }
  model.params() = best;

  if (prior != nullptr &&
      (prior->encoder_params.checksum() != enc_sum || prior->discriminator_params.checksum() != disc_sum)) {
    throw FreezeViolation("encoder or discriminator parameters changed during segmentation training");
  }
  return result;
}

EvalReport ablation_run(std::span<const Sample> train, std::span<const Sample> val, std::span<const Sample> test,
                        const VaeGan<Real>* prior, const SegNetConfig& model_config, const TrainConfig& config,
                        SegVariant variant, const LossSink& sink) {
  if (variant_needs_prior(variant) && prior == nullptr) {
    throw ConfigurationError("variant '" + to_string(variant) + "' needs a shape prior checkpoint");
  }
  const SegResult r = train_segmentation(train, val, prior, model_config, config, variant, sink);
  return evaluate_model(r.model, test);
}

void save_prior(const VaeGan<Real>& model, const TrainState& state, const std::filesystem::path& path) {
  CheckpointWriter w({{"kind", "prior"}, {"vaegan", model.config}, {"state", state}});
  w.add("encoder", model.encoder_params);
  w.add("generator", model.generator_params);
  w.add("discriminator", model.discriminator_params);
  w.write(path);
}

VaeGan<Real> load_prior(const std::filesystem::path& path) {
  const CheckpointReader r(path);
  if (r.metadata().value("kind", "") != "prior") throw CheckpointMismatch(path.string() + " is not a shape prior checkpoint");
  VaeGan<Real> model(r.metadata().at("vaegan").get<VaeGanConfig>(), 0);
  r.restore("encoder", model.encoder_params);
  r.restore("generator", model.generator_params);
  r.restore("discriminator", model.discriminator_params);
  return model;
}

void save_segnet(const SegNet<Real>& model, const TrainState& state, const std::filesystem::path& path) {
  CheckpointWriter w({{"kind", "segnet"}, {"segnet", model.config()}, {"state", state}});
  w.add("segnet", model.params());
  w.write(path);
}

SegNet<Real> load_segnet(const std::filesystem::path& path) {
  const CheckpointReader r(path);
  if (r.metadata().value("kind", "") != "segnet") {
    throw CheckpointMismatch(path.string() + " is not a segmentation checkpoint");
  }
  SegNet<Real> model(r.metadata().at("segnet").get<SegNetConfig>(), 0);
  r.restore("segnet", model.params());
  return model;
}

}  // namespace scn
