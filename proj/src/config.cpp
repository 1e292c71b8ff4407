#include "scn/config.hpp"

#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

namespace scn {

void RunConfig::validate() const {
  synth.generator.validate();
  if (synth.count < 1) throw ConfigurationError("synth.count must be at least 1");
  for (double r : split.ratios) {
    if (!(r >= 0.0) || !std::isfinite(r)) throw ConfigurationError("split.ratios must be finite and non-negative");
  }
  model.segnet.validate();
  model.vaegan.validate();
  if (model.segnet.width != model.vaegan.width || model.segnet.height != model.vaegan.height) {
    throw ConfigurationError("model.segnet and model.vaegan input sizes differ");
  }
  train.validate();
  parse_split(eval.split);
  if (eval.bench_reps < 1 || eval.bench_warmup < 0) throw ConfigurationError("invalid bench repetitions");
}

void to_json(nlohmann::json& j, const RunConfig& c) {
  j = nlohmann::json::object();
  j["seed"] = c.seed ? nlohmann::json(*c.seed) : nlohmann::json();
  j["manifest"] = c.manifest;
  j["synth"] = {{"generator", c.synth.generator}, {"count", c.synth.count}};
  j["split"] = {{"ratios", c.split.ratios}};
  j["model"] = {{"segnet", c.model.segnet}, {"vaegan", c.model.vaegan}};
  j["train"] = c.train;
  j["eval"] = {{"split", c.eval.split}, {"bench_warmup", c.eval.bench_warmup}, {"bench_reps", c.eval.bench_reps}};
}

namespace {

template <typename F>
void for_each_key(const nlohmann::json& j, const std::string& section, F&& f) {
  if (!j.is_object()) throw ConfigurationError("'" + section + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!f(key, value)) throw ConfigurationError("unknown key '" + section + (section.empty() ? "" : ".") + key + "'");
  }
}

}  // namespace

void from_json(const nlohmann::json& j, RunConfig& c) {
  c = RunConfig{};
  try {
    for_each_key(j, "", [&](const std::string& key, const nlohmann::json& v) {
      if (key == "seed") {
        c.seed = v.is_null() ? std::nullopt : std::optional<std::uint64_t>(v.get<std::uint64_t>());
      } else if (key == "manifest") {
        v.get_to(c.manifest);
      } else if (key == "synth") {
        for_each_key(v, "synth", [&](const std::string& k, const nlohmann::json& x) {
          if (k == "generator") x.get_to(c.synth.generator);
          else if (k == "count") x.get_to(c.synth.count);
          else return false;
          return true;
        });
      } else if (key == "split") {
        for_each_key(v, "split", [&](const std::string& k, const nlohmann::json& x) {
          if (k != "ratios") return false;
          x.get_to(c.split.ratios);
          return true;
        });
      } else if (key == "model") {
        for_each_key(v, "model", [&](const std::string& k, const nlohmann::json& x) {
          if (k == "segnet") x.get_to(c.model.segnet);
          else if (k == "vaegan") x.get_to(c.model.vaegan);
          else return false;
          return true;
        });
      } else if (key == "train") {
        v.get_to(c.train);
      } else if (key == "eval") {
        for_each_key(v, "eval", [&](const std::string& k, const nlohmann::json& x) {
          if (k == "split") x.get_to(c.eval.split);
          else if (k == "bench_warmup") x.get_to(c.eval.bench_warmup);
          else if (k == "bench_reps") x.get_to(c.eval.bench_reps);
          else return false;
          return true;
        });
      } else {
        return false;
      }
      return true;
    });
  } catch (const nlohmann::json::exception& e) {
    throw ConfigurationError(std::string("invalid configuration value: ") + e.what());
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigurationError("cannot parse " + path.string() + ": " + e.what());
  }
  return j.get<RunConfig>();
}

void save_run_config(const RunConfig& config, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write config " + path.string());
  out << nlohmann::json(config).dump(2) << '\n';
  if (!out) throw IoError("failed writing config " + path.string());
}

void apply_override(nlohmann::json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigurationError("override must look like section.key=value");
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception&) {
    value = text;
  }
  nlohmann::json* node = &doc;
  std::stringstream parts(path);
  std::string part;
  std::vector<std::string> keys;
  while (std::getline(parts, part, '.')) keys.push_back(part);
  for (std::size_t i = 0; i < keys.size(); ++i) {
    if (!node->is_object()) throw ConfigurationError("cannot override '" + path + "'");
    if (i + 1 == keys.size()) {
      (*node)[keys[i]] = value;
    } else {
      if (!node->contains(keys[i])) (*node)[keys[i]] = nlohmann::json::object();
      node = &(*node)[keys[i]];
    }
  }
}

std::uint64_t resolve_seed(RunConfig& config, std::optional<std::uint64_t> flag_seed) {
  if (flag_seed) config.seed = flag_seed;
  if (!config.seed) {
    std::random_device rd;
    config.seed = (static_cast<std::uint64_t>(rd()) << 32) | rd();
  }
  config.train.seed = *config.seed;
  return *config.seed;
}

std::string config_fingerprint(const RunConfig& config) {
  const std::string text = nlohmann::json(config).dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace scn
