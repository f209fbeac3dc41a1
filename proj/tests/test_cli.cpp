#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "msnet/cli.hpp"
#include "msnet/common.hpp"
#include "msnet/config.hpp"

using namespace msnet;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("msnet_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  return json::parse(in);
}

// Overrides shrinking every stage far enough for an in-test end-to-end run.
std::vector<std::string> tiny_overrides() {
  return {
      "--set", "data.num_clips=4",
      "--set", "data.num_test=1",
      "--set", "data.frames_per_clip=12",
      "--set", "data.canvas_h=16",
      "--set", "data.canvas_w=16",
      "--set", "network.image_shape=[1,16,16]",
      "--set", "network.num_blocks=2",
      "--set", "network.base_channels=4",
      "--set", "network.motion_channels=2",
      "--set", "network.content_channels=4",
      "--set", "network.clstm_layers=1",
      "--set", "network.clstm_hidden=8",
      "--set", "train.steps=2",
      "--set", "train.batch_size=2",
      "--set", "train.k_max=3",
      "--set", "train.k=3",
      "--set", "train.T=8",
      "--set", "train.checkpoint_every=1",
      "--set", "train.log_every=1",
      "--set", "eval.k=3",
      "--set", "eval.t_out=4",
  };
}

std::vector<std::string> with_tiny(std::vector<std::string> args) {
  auto extra = tiny_overrides();
  args.insert(args.end(), extra.begin(), extra.end());
  return args;
}

}  // namespace

TEST_CASE("presets pin the published settings") {
  RunConfig mnist = preset_config("mnist64");
  CHECK(mnist.network.image_shape == std::array<int, 3>{1, 64, 64});
  CHECK(mnist.network.bottleneck_h() == 4);
  CHECK(mnist.network.motion_channels == 4);
  CHECK(mnist.network.content_channels == 8);
  CHECK(mnist.train.weights.alpha == 1.0);
  CHECK(mnist.train.weights.beta == 3.3e-5);
  CHECK(mnist.train.k_max == 5);

  RunConfig kth = preset_config("kth128");
  CHECK(kth.network.image_shape == std::array<int, 3>{1, 128, 128});
  CHECK(kth.network.bottleneck_h() == 8);
  CHECK(kth.network.bottleneck_w() == 8);
  CHECK(kth.network.motion_channels == 8);
  CHECK(kth.network.content_channels == 8);
  CHECK(kth.train.weights.beta == 4e-5);
  CHECK(kth.train.k_max == 10);

  RunConfig desk = preset_config("desk");
  CHECK(desk.network.image_shape == std::array<int, 3>{1, 32, 32});
  CHECK(desk.network.base_channels == 16);
  CHECK(desk.train.steps == 4000);
  CHECK(desk.data.spec.canvas_h == 32);
  CHECK(desk.data.spec.sprites_per_clip == 1);
  CHECK(desk.data.spec.speed_set == std::vector<int>{-1, 1});
  CHECK(desk.data.spec.bounce_free);

  CHECK_THROWS_AS(preset_config("mnist"), Error);
}

TEST_CASE("config merge applies preset, file, and overrides in order") {
  json file = {{"preset", "mnist64"}, {"train", {{"beta", 1e-3}, {"steps", 7}}}};
  RunConfig merged = merge_config(file, {});
  CHECK(merged.preset == "mnist64");
  CHECK(merged.train.weights.beta == 1e-3);
  CHECK(merged.train.steps == 7);
  CHECK(merged.train.weights.alpha == 1.0);  // untouched preset default

  RunConfig overridden = merge_config(file, {{"train.beta", "0"}});
  CHECK(overridden.train.weights.beta == 0.0);
  CHECK(overridden.train.steps == 7);

  RunConfig preset_override = merge_config(file, {{"preset", "kth128"}});
  CHECK(preset_override.preset == "kth128");
  CHECK(preset_override.train.weights.beta == 1e-3);  // file still wins over its preset
  CHECK(preset_override.network.motion_channels == 8);
}

TEST_CASE("config merge is strict about keys, types, and invariants") {
  CHECK_THROWS_AS(merge_config({{"train", {{"gamma", 1}}}}, {}), Error);
  try {
    merge_config({{"train", {{"gamma", 1}}}}, {});
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("train.gamma") != std::string::npos);
    CHECK(e.code() == Errc::invalid_config);
  }

  CHECK_THROWS_AS(merge_config({{"train", 5}}, {}), Error);                       // section type mismatch
  CHECK_THROWS_AS(merge_config({{"bogus", json::object()}}, {}), Error);          // unknown section
  CHECK_THROWS_AS(merge_config(json(nullptr), {{"train.bogus", "1"}}), Error);    // unknown override path
  CHECK_THROWS_AS(merge_config(json(nullptr), {{"train", "1"}}), Error);          // cannot override a section
  CHECK_THROWS_AS(merge_config({{"train", {{"steps", 0}}}}, {}), Error);          // failed invariant
  CHECK_THROWS_AS(merge_config({{"train", {{"steps", "many"}}}}, {}), Error);     // value type mismatch

  RunConfig speeds = merge_config(json(nullptr), {{"data.speed_set", "[-3,3]"}});
  CHECK(speeds.data.spec.speed_set == std::vector<int>({-3, 3}));
}

TEST_CASE("parse_config reads files and rejects broken ones") {
  fs::path dir = temp_dir("cfg");
  fs::path good = dir / "good.json";
  std::ofstream(good) << R"({"train": {"seed": 5}})";
  RunConfig cfg = parse_config(good.string(), {});
  CHECK(cfg.train.seed == 5);
  CHECK(cfg.preset == "desk");

  fs::path bad = dir / "bad.json";
  std::ofstream(bad) << "{nope";
  CHECK_THROWS_AS(parse_config(bad.string(), {}), Error);
  CHECK_THROWS_AS(parse_config((dir / "missing.json").string(), {}), Error);
  CHECK(parse_config("", {}).preset == "desk");
}

TEST_CASE("usage errors exit with 2 and help with 0") {
  CHECK(run_command({"--help"}) == 0);
  CHECK(run_command({}) == 2);
  CHECK(run_command({"frobnicate"}) == 2);
  CHECK(run_command({"predict", "--data", "x", "--out", "y"}) == 2);        // missing --checkpoint
  CHECK(run_command({"gen-data", "--out", "/tmp/x", "--set", "nope=1"}) == 2);
  CHECK(run_command({"gen-data", "--out", "/tmp/x", "--preset", "huge"}) == 2);
  CHECK(run_command({"gen-data", "--out", "/tmp/x", "--set", "broken"}) == 2);  // no '='
}

TEST_CASE("runtime failures exit with 1") {
  fs::path dir = temp_dir("runtime");
  // Dataset directory without a manifest.
  CHECK(run_command({"train-repro", "--data", (dir / "nothing").string(), "--out", (dir / "run").string()}) == 1);
  // Checkpoint file that does not exist.
  CHECK(run_command({"eval", "--checkpoint", (dir / "no.ck").string(), "--data", dir.string(), "--out",
                     (dir / "e").string()}) == 1);
}

TEST_CASE("pipeline smoke: gen-data, both training stages, predict, eval, probes") {
  fs::path root = temp_dir("pipeline");
  std::string data = (root / "data").string();
  std::string run1 = (root / "run1").string();
  std::string run2 = (root / "run2").string();

  REQUIRE(run_command(with_tiny({"gen-data", "--out", data})) == 0);
  CHECK(fs::exists(fs::path(data) / "manifest.json"));
  CHECK(fs::exists(fs::path(data) / "resolved_config.json"));
  CHECK(fs::exists(fs::path(data) / "clip_0003" / "frame_0011.png"));

  REQUIRE(run_command(with_tiny({"train-repro", "--data", data, "--out", run1})) == 0);
  CHECK(fs::exists(fs::path(run1) / "stage1.ck"));
  json resolved = read_json(fs::path(run1) / "resolved_config.json");
  CHECK(resolved.at("train").at("steps") == 2);
  CHECK(resolved.at("command") == "train-repro");

  // Two log lines for two steps at log_every=1.
  std::ifstream log(fs::path(run1) / "stage1_log.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(log, line))
    if (!line.empty()) {
      json entry = json::parse(line);
      CHECK(entry.contains("L_rec"));
      ++lines;
    }
  CHECK(lines == 2);

  std::string stage1 = (fs::path(run1) / "stage1.ck").string();
  REQUIRE(run_command(with_tiny({"train-predict", "--data", data, "--out", run2, "--stage1", stage1})) == 0);
  CHECK(fs::exists(fs::path(run2) / "stage2.ck"));
  std::string stage2 = (fs::path(run2) / "stage2.ck").string();

  std::string pred = (root / "pred").string();
  REQUIRE(run_command(with_tiny({"predict", "--checkpoint", stage2, "--data", data, "--out", pred, "--gif"})) == 0);
  CHECK(fs::exists(fs::path(pred) / "given_0003.png"));
  CHECK(fs::exists(fs::path(pred) / "pred_0004.png"));
  CHECK_FALSE(fs::exists(fs::path(pred) / "pred_0005.png"));
  CHECK(fs::exists(fs::path(pred) / "prediction.gif"));
  CHECK(fs::exists(fs::path(pred) / "metadata.json"));

  std::string evald = (root / "eval").string();
  REQUIRE(run_command(with_tiny({"eval", "--checkpoint", stage2, "--data", data, "--out", evald})) == 0);
  CHECK(fs::exists(fs::path(evald) / "model_ssim.csv"));
  CHECK(fs::exists(fs::path(evald) / "baseline_psnr.csv"));
  json report = read_json(fs::path(evald) / "report.json");
  CHECK(report.at("model_ssim").at("mean").size() == 4);
  CHECK(report.at("num_sequences") == 1);

  std::string feats = (root / "features").string();
  REQUIRE(run_command(with_tiny({"export-features", "--checkpoint", stage2, "--data", data, "--out", feats,
                                 "--kind", "motion", "--split", "all"})) == 0);
  std::ifstream csv(fs::path(feats) / "features_motion.csv");
  REQUIRE(csv.good());
  std::getline(csv, line);
  CHECK(line.rfind("clip_id,frame_a,frame_b,kind,motion_label,content_label,v0", 0) == 0);
  int rows = 0;
  while (std::getline(csv, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 4 * 11);  // 4 clips, 12 frames each, one record per adjacent pair

  std::string retr = (root / "retrieve").string();
  REQUIRE(run_command(with_tiny({"retrieve", "--checkpoint", stage2, "--data", data, "--out", retr, "--kind",
                                 "motion", "--split", "all", "--query-clip", "clip_0000", "--query-frame", "2"})) ==
          0);
  std::ifstream rcsv(fs::path(retr) / "retrieved.csv");
  REQUIRE(rcsv.good());
  std::getline(rcsv, line);
  CHECK(line == "rank,clip_id,frame_a,frame_b,distance,motion_label,content_label");
  std::getline(rcsv, line);
  CHECK(line.rfind("0,clip_0000,2,3,0,", 0) == 0);  // self-retrieval at distance zero

  std::string probe = (root / "probe").string();
  int probe_rc = run_command(with_tiny({"probe", "--checkpoint", stage2, "--data", data, "--out", probe, "--split",
                                        "all", "--label", "motion"}));
  if (probe_rc == 0) {
    json pj = read_json(fs::path(probe) / "probe.json");
    CHECK(pj.contains("motion_silhouette"));
    CHECK(pj.contains("content_silhouette"));
    CHECK(pj.contains("gap"));
  } else {
    // Four random clips can all land on one motion label; the probe then
    // refuses (needs two labels), which is usage feedback, not a crash.
    CHECK(probe_rc == 2);
  }

  // Unknown clip id is a usage error.
  CHECK(run_command(with_tiny({"predict", "--checkpoint", stage2, "--data", data, "--out", pred, "--clip",
                               "clip_9999"})) == 2);
}

TEST_CASE("stage-1 resume picks the checkpoint's config back up") {
  fs::path root = temp_dir("resume");
  std::string data = (root / "data").string();
  std::string run = (root / "run").string();
  REQUIRE(run_command(with_tiny({"gen-data", "--out", data})) == 0);
  REQUIRE(run_command(with_tiny({"train-repro", "--data", data, "--out", run})) == 0);

  std::string ck = (fs::path(run) / "stage1.ck").string();
  // Resumed run ignores fresh-config flags and continues from step 2; with
  // steps=2 already done it finishes immediately but must still succeed.
  REQUIRE(run_command({"train-repro", "--data", data, "--out", run, "--resume", ck}) == 0);
  json resolved = read_json(fs::path(run) / "resolved_config.json");
  CHECK(resolved.at("train").at("steps") == 2);
}
