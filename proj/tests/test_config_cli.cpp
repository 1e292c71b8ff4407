#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "scn/commands.hpp"
#include "scn/config.hpp"
#include "scn/errors.hpp"
#include "test_util.hpp"

using namespace scn;
using scn::testing::TempDir;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

int count_lines(const fs::path& p) {
  std::ifstream in(p);
  int n = 0;
  for (std::string line; std::getline(in, line);) n += !line.empty();
  return n;
}

int count_files(const fs::path& dir) {
  int n = 0;
  for (const auto& e : fs::directory_iterator(dir)) n += e.is_regular_file();
  return n;
}

RunConfig tiny_config(std::uint64_t seed, int count) {
  RunConfig c;
  c.seed = seed;
  c.synth.count = count;
  c.synth.generator.subjects = 10;
  c.train.stage1_epochs = 1;
  c.train.stage2_max_epochs = 1;
  c.train.stage2_early_stop_patience = 1;
  c.train.batch_size = 8;
  c.model.segnet.channel_widths = {4, 8};
  c.model.vaegan.encoder_widths = {4, 8};
  c.model.vaegan.generator_widths = {4, 8};
  c.model.vaegan.discriminator_widths = {4, 8};
  c.model.vaegan.latent_dim = 4;
  c.eval.split = "test";
  resolve_seed(c, std::nullopt);
  return c;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(SCN_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_SUITE("config") {

TEST_CASE("run config JSON round trip") {
  RunConfig c;
  c.seed = 99;
  c.synth.count = 42;
  c.train.learning_rate = 1e-3;
  c.train.weights.lambda_1 = 0.5;
  c.split.ratios = {7, 1, 2};
  c.eval.split = "val";
  const nlohmann::json j = c;
  const RunConfig back = j.get<RunConfig>();
  CHECK(nlohmann::json(back) == j);
  CHECK(*back.seed == 99);
  CHECK(back.synth.count == 42);
  CHECK(back.train.weights.lambda_1 == 0.5);
  CHECK(config_fingerprint(back) == config_fingerprint(c));

  TempDir dir("cfg");
  save_run_config(c, dir.path() / "c.json");
  CHECK(nlohmann::json(load_run_config(dir.path() / "c.json")) == j);
}

TEST_CASE("defaults") {
  const RunConfig c = nlohmann::json::object().get<RunConfig>();
  CHECK(!c.seed.has_value());
  CHECK(c.train.learning_rate == 2e-4);
  CHECK(c.train.beta1 == 0.9);
  CHECK(c.train.beta2 == 0.999);
  CHECK(c.train.weights.lambda_1 == 0.3);
  CHECK(c.train.weights.lambda_2 == 0.3);
  CHECK(c.model.segnet.width == 64);
  CHECK(c.model.segnet.height == 32);
}

TEST_CASE("unknown keys and bad values are rejected") {
  CHECK_THROWS_AS(nlohmann::json({{"sed", 1}}).get<RunConfig>(), ConfigurationError);
  CHECK_THROWS_AS(nlohmann::json({{"train", {{"learning_rat", 1}}}}).get<RunConfig>(), ConfigurationError);
  RunConfig c;
  c.train.learning_rate = -1;
  CHECK_THROWS(c.validate());
  RunConfig d;
  d.eval.split = "holdout";
  CHECK_THROWS(d.validate());
}

TEST_CASE("overrides") {
  nlohmann::json doc = nlohmann::json::object();
  apply_override(doc, "train.learning_rate=0.001");
  apply_override(doc, "seed=5");
  apply_override(doc, "eval.split=val");
  const RunConfig c = doc.get<RunConfig>();
  CHECK(c.train.learning_rate == 0.001);
  CHECK(*c.seed == 5);
  CHECK(c.eval.split == "val");
  CHECK_THROWS_AS(apply_override(doc, "no_equals_sign"), ConfigurationError);
}

TEST_CASE("seed resolution") {
  RunConfig c;
  c.seed = 3;
  CHECK(resolve_seed(c, 11) == 11);
  CHECK(c.train.seed == 11);
  RunConfig d;
  d.seed = 3;
  CHECK(resolve_seed(d, std::nullopt) == 3);
  CHECK(d.train.seed == 3);
  RunConfig e;
  resolve_seed(e, std::nullopt);
  CHECK(e.seed.has_value());
  CHECK(e.train.seed == *e.seed);
}

TEST_CASE("fingerprint tracks content") {
  RunConfig a, b;
  CHECK(config_fingerprint(a) == config_fingerprint(b));
  b.train.batch_size = 16;
  CHECK(config_fingerprint(a) != config_fingerprint(b));
}

}  // TEST_SUITE

TEST_SUITE("cli") {

TEST_CASE("synth writes one manifest line and two PNGs per sample") {
  TempDir dir("synth");
  const RunConfig c = tiny_config(4, 10);
  const DatasetManifest m = cmd_synth(c, dir.path() / "a", false);
  CHECK(m.records.size() == 10);
  CHECK(count_lines(dir.path() / "a" / "manifest.jsonl") == 10);
  CHECK(count_files(dir.path() / "a" / "images") + count_files(dir.path() / "a" / "masks") == 20);
  for (const auto& r : m.records) {
    CHECK(r.resolution == tag_resolution(r.native_area));
    CHECK(fs::exists(m.resolve(r.image_path)));
  }

  cmd_synth(c, dir.path() / "b", false);
  CHECK(slurp(dir.path() / "a" / "manifest.jsonl") == slurp(dir.path() / "b" / "manifest.jsonl"));
  CHECK(slurp(m.resolve(m.records[3].image_path)) ==
        slurp(dir.path() / "b" / m.records[3].image_path));
}

TEST_CASE("outputs are not clobbered without overwrite") {
  TempDir dir("clobber");
  const RunConfig c = tiny_config(4, 10);
  cmd_synth(c, dir.path(), false);
  CHECK_THROWS_AS(cmd_synth(c, dir.path(), false), IoError);
  CHECK_NOTHROW(cmd_synth(tiny_config(5, 12), dir.path(), true));
  CHECK(count_lines(dir.path() / "manifest.jsonl") == 12);

  const fs::path manifest = dir.path() / "manifest.jsonl";
  const DatasetManifest s = cmd_split(manifest, {8, 1, 1}, 1, false);
  CHECK(s.split_seed == 1u);
  CHECK(read_manifest(manifest).records.front().split.has_value());
  CHECK_THROWS_AS(cmd_split(manifest, {8, 1, 1}, 1, false), IoError);
  CHECK_NOTHROW(cmd_split(manifest, {8, 1, 1}, 2, true));
}

TEST_CASE("pipeline writes every artifact") {
  TempDir dir("pipeline");
  const RunConfig c = tiny_config(8, 40);
  const fs::path run = dir.path() / "run";
  const EvalReport r = cmd_pipeline(c, run, false);
  for (const char* name : {"config.json", "prior.ckpt", "seg.ckpt", "losses.jsonl", "report.json"}) {
    CHECK_MESSAGE(fs::exists(run / name), name);
  }
  CHECK(fs::exists(run / "data" / "manifest.jsonl"));
  CHECK(r.mean_miou >= 0.0);
  CHECK(r.mean_miou <= 100.0);
  const auto report = nlohmann::json::parse(slurp(run / "report.json"));
  CHECK(report.contains("mean_miou"));
  CHECK(report.at("config_fingerprint") == config_fingerprint(c));
  CHECK_THROWS(cmd_pipeline(c, run, false));
}

TEST_CASE("command-line exit codes") {
  TempDir dir("exit");
  const std::string out = (dir.path() / "data").string();
  CHECK(run_cli("") != 0);
  CHECK(run_cli("frobnicate") != 0);
  CHECK(run_cli("synth --out " + out + " --count 6 --seed 2 --set synth.generator.subjects=3") == 0);
  CHECK(count_lines(dir.path() / "data" / "manifest.jsonl") == 6);
  CHECK(run_cli("synth --out " + out + " --count 6 --seed 2") == 1);
  CHECK(run_cli("split --manifest " + out + "/manifest.jsonl --seed 2") == 0);
  CHECK(run_cli("split --manifest " + out + "/manifest.jsonl --seed 2") == 1);
  CHECK(run_cli("synth --out " + out + " --seed 2 --set train.no_such_key=1 --overwrite") == 1);
  CHECK(run_cli("eval --checkpoint " + (dir.path() / "missing.ckpt").string() + " --manifest " + out +
                "/manifest.jsonl") == 1);
}

}  // TEST_SUITE
