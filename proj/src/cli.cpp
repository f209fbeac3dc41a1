#include "msnet/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "msnet/checkpoint.hpp"
#include "msnet/common.hpp"
#include "msnet/config.hpp"
#include "msnet/dataset.hpp"
#include "msnet/evaluation.hpp"
#include "msnet/prediction.hpp"
#include "msnet/training.hpp"

namespace fs = std::filesystem;

namespace msnet {
namespace {

// Every pipeline stage is deterministic given its seed; the environment
// variable exists so scripts can assert that they rely on it. Its value is
// recorded in resolved_config.json.
bool deterministic_mode() {
  const char* v = std::getenv("MSNET_DETERMINISTIC");
  return v != nullptr && std::string(v) == "1";
}

// Shared --config/--preset/--set plumbing. Sugar flags funnel into the same
// override map that --set feeds, so precedence stays preset < file < flags.
struct ConfigArgs {
  std::string config_path;
  std::map<std::string, std::string> overrides;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON config file merged over the preset defaults");
    alias(cmd, "--preset", "preset", "Preset name: mnist64, kth128, or desk");
    cmd->add_option(
           "--set",
           [this](const CLI::results_t& res) {
             for (const std::string& item : res) {
               std::size_t eq = item.find('=');
               if (eq == std::string::npos || eq == 0) return false;
               overrides[item.substr(0, eq)] = item.substr(eq + 1);
             }
             return true;
           },
           "Override any config key, e.g. --set train.beta=1e-4")
        ->take_all()
        ->type_name("KEY=VALUE");
  }

  void alias(CLI::App* cmd, const std::string& flag, std::string path, const std::string& desc) {
    cmd->add_option(
           flag,
           [this, path = std::move(path)](const CLI::results_t& res) {
             overrides[path] = res.back();
             return true;
           },
           desc)
        ->type_name("VALUE");
  }

  RunConfig resolve() const { return parse_config(config_path, overrides); }
};

void write_resolved_config(const std::string& dir, const RunConfig& cfg, const char* command) {
  fs::create_directories(dir);
  nlohmann::ordered_json j = run_config_to_json(cfg);
  j["command"] = command;
  j["deterministic"] = deterministic_mode();
  std::ofstream out(fs::path(dir) / "resolved_config.json");
  require(out.good(), Errc::io_error, "cannot write resolved_config.json under " + dir);
  out << j.dump(2) << "\n";
  require(out.good(), Errc::io_error, "failed writing resolved_config.json under " + dir);
}

std::vector<VideoClip> load_split(const Dataset& ds, const std::string& split) {
  std::vector<VideoClip> clips;
  if (split == "all") {
    for (int i = 0; i < static_cast<int>(ds.manifest().clips.size()); ++i) clips.push_back(ds.load_clip(i));
  } else {
    require(split == "train" || split == "test", Errc::invalid_argument, "split must be train, test, or all");
    for (int i : ds.indices(split)) clips.push_back(ds.load_clip(i));
  }
  require(!clips.empty(), Errc::dataset_too_small, "split '" + split + "' has no clips");
  return clips;
}

FeatureKind parse_kind(const std::string& kind) {
  if (kind == "motion") return FeatureKind::motion;
  require(kind == "content", Errc::invalid_argument, "kind must be motion or content");
  return FeatureKind::content;
}

int clip_index_by_id(const Dataset& ds, const std::string& clip_id) {
  const auto& clips = ds.manifest().clips;
  for (int i = 0; i < static_cast<int>(clips.size()); ++i)
    if (clips[static_cast<std::size_t>(i)].id == clip_id) return i;
  fail(Errc::invalid_argument, "unknown clip id: " + clip_id);
}

// Picks the showcase clip for `predict` when none is named: the first test
// clip, else the first clip.
int default_clip_index(const Dataset& ds) {
  auto test = ds.indices("test");
  if (!test.empty()) return test.front();
  require(!ds.manifest().clips.empty(), Errc::dataset_too_small, "dataset has no clips");
  return 0;
}

int cmd_gen_data(const ConfigArgs& args, const std::string& out_dir) {
  RunConfig cfg = args.resolve();
  generate_bouncing_sprites(cfg.data.spec, cfg.data.num_clips, cfg.data.seed, out_dir, cfg.data.num_test);
  write_resolved_config(out_dir, cfg, "gen-data");
  std::cout << "generated " << cfg.data.num_clips << " clips (" << cfg.data.num_test << " test) under " << out_dir
            << "\n";
  return 0;
}

int cmd_train_repro(const ConfigArgs& args, const std::string& data_dir, const std::string& out_dir,
                    const std::string& resume) {
  RunConfig cfg = args.resolve();
  Dataset ds = Dataset::load(data_dir);
  std::vector<VideoClip> clips = load_split(ds, "train");

  std::optional<ReproductionTrainer> trainer;
  if (resume.empty()) {
    trainer.emplace(cfg.network, cfg.train);
  } else {
    trainer.emplace(load_checkpoint(resume));
    cfg.network = trainer->model().config();
    cfg.train = trainer->config();
    std::cout << "resuming stage 1 from step " << trainer->completed_steps() << "\n";
  }
  write_resolved_config(out_dir, cfg, "train-repro");

  std::ofstream log(fs::path(out_dir) / "stage1_log.jsonl", resume.empty() ? std::ios::trunc : std::ios::app);
  require(log.good(), Errc::io_error, "cannot open stage1_log.jsonl under " + out_dir);
  std::string ckpt = (fs::path(out_dir) / "stage1.ck").string();
  trainer->run(clips, &log, ckpt);
  std::cout << "stage-1 training done at step " << trainer->completed_steps() << "; checkpoint: " << ckpt << "\n";
  return 0;
}

int cmd_train_predict(const ConfigArgs& args, const std::string& data_dir, const std::string& out_dir,
                      const std::string& stage1, const std::string& resume) {
  RunConfig cfg = args.resolve();
  Dataset ds = Dataset::load(data_dir);
  std::vector<VideoClip> clips = load_split(ds, "train");

  std::optional<PredictorTrainer> trainer;
  if (resume.empty()) {
    require(!stage1.empty(), Errc::invalid_config, "train-predict needs --stage1 (or --resume)");
    trainer.emplace(load_checkpoint(stage1), cfg.train);
  } else {
    trainer.emplace(load_checkpoint(resume));
    cfg.train = trainer->config();
    std::cout << "resuming stage 2 from step " << trainer->completed_steps() << "\n";
  }
  cfg.network = trainer->model().config();
  write_resolved_config(out_dir, cfg, "train-predict");

  std::ofstream log(fs::path(out_dir) / "stage2_log.jsonl", resume.empty() ? std::ios::trunc : std::ios::app);
  require(log.good(), Errc::io_error, "cannot open stage2_log.jsonl under " + out_dir);
  std::string ckpt = (fs::path(out_dir) / "stage2.ck").string();
  trainer->run(clips, &log, ckpt);
  std::cout << "stage-2 training done at step " << trainer->completed_steps() << "; checkpoint: " << ckpt << "\n";
  return 0;
}

int cmd_predict(const ConfigArgs& args, const std::string& ckpt_path, const std::string& data_dir,
                const std::string& clip_id, const std::string& out_dir, bool gif) {
  RunConfig cfg = args.resolve();
  Checkpoint ck = load_checkpoint(ckpt_path);
  Model<float> model = model_from_checkpoint(ck);
  cfg.network = model.config();
  Dataset ds = Dataset::load(data_dir);

  int index = clip_id.empty() ? default_clip_index(ds) : clip_index_by_id(ds, clip_id);
  VideoClip clip = ds.load_clip(index);
  require(static_cast<int>(clip.frames.size()) >= cfg.eval.k, Errc::invalid_argument,
          "clip " + clip.clip_id + " is shorter than eval.k");

  PredictionRequest req;
  req.given.assign(clip.frames.begin(), clip.frames.begin() + cfg.eval.k);
  req.horizon = cfg.eval.t_out;
  std::vector<Tensor<float>> frames = predict_sequence(model, req);
  write_prediction(out_dir, req.given, frames, gif);
  write_resolved_config(out_dir, cfg, "predict");
  std::cout << "predicted " << frames.size() << " frames of clip " << clip.clip_id << " into " << out_dir << "\n";
  return 0;
}

int cmd_eval(const ConfigArgs& args, const std::string& ckpt_path, const std::string& data_dir,
             const std::string& split, const std::string& out_dir) {
  RunConfig cfg = args.resolve();
  Checkpoint ck = load_checkpoint(ckpt_path);
  Model<float> model = model_from_checkpoint(ck);
  cfg.network = model.config();
  Dataset ds = Dataset::load(data_dir);
  std::vector<VideoClip> clips = load_split(ds, split);

  EvaluationReport report = evaluate_prediction(model, clips, cfg.eval.k, cfg.eval.t_out);
  fs::create_directories(out_dir);
  auto write_csv = [&](const char* name, const MetricCurve& curve) {
    std::ofstream out(fs::path(out_dir) / name);
    require(out.good(), Errc::io_error, std::string("cannot write ") + name);
    out << curve_to_csv(curve);
  };
  write_csv("model_ssim.csv", report.model_ssim);
  write_csv("model_psnr.csv", report.model_psnr);
  write_csv("baseline_ssim.csv", report.baseline_ssim);
  write_csv("baseline_psnr.csv", report.baseline_psnr);

  auto horizon_mean = [](const MetricCurve& curve) {
    double acc = 0.0;
    for (double v : curve.mean) acc += v;
    return acc / static_cast<double>(curve.mean.size());
  };
  nlohmann::ordered_json summary;
  summary["num_sequences"] = report.model_ssim.num_sequences;
  summary["model_ssim_mean"] = horizon_mean(report.model_ssim);
  summary["baseline_ssim_mean"] = horizon_mean(report.baseline_ssim);
  summary["model_psnr_mean"] = horizon_mean(report.model_psnr);
  summary["baseline_psnr_mean"] = horizon_mean(report.baseline_psnr);
  summary["model_ssim"] = curve_to_json(report.model_ssim);
  summary["model_psnr"] = curve_to_json(report.model_psnr);
  summary["baseline_ssim"] = curve_to_json(report.baseline_ssim);
  summary["baseline_psnr"] = curve_to_json(report.baseline_psnr);
  std::ofstream out(fs::path(out_dir) / "report.json");
  require(out.good(), Errc::io_error, "cannot write report.json");
  out << summary.dump(2) << "\n";
  write_resolved_config(out_dir, cfg, "eval");

  std::cout << "mean ssim over horizon " << cfg.eval.t_out << ": model " << summary["model_ssim_mean"]
            << " vs copy-last-frame " << summary["baseline_ssim_mean"] << " (" << report.model_ssim.num_sequences
            << " clips)\n";
  return 0;
}

int cmd_export_features(const ConfigArgs& args, const std::string& ckpt_path, const std::string& data_dir,
                        const std::string& kind, const std::string& split, const std::string& out_dir) {
  RunConfig cfg = args.resolve();
  Checkpoint ck = load_checkpoint(ckpt_path);
  Model<float> model = model_from_checkpoint(ck);
  cfg.network = model.config();
  Dataset ds = Dataset::load(data_dir);
  std::vector<VideoClip> clips = load_split(ds, split);

  std::vector<FeatureRecord> records = compute_features(model, clips, parse_kind(kind));
  fs::create_directories(out_dir);
  std::string csv = (fs::path(out_dir) / ("features_" + kind + ".csv")).string();
  write_features_csv(csv, records);
  write_resolved_config(out_dir, cfg, "export-features");
  std::cout << "wrote " << records.size() << " " << kind << " feature records to " << csv << "\n";
  return 0;
}

int cmd_retrieve(const ConfigArgs& args, const std::string& ckpt_path, const std::string& data_dir,
                 const std::string& kind, const std::string& split, const std::string& query_clip, int query_frame,
                 const std::string& out_dir) {
  RunConfig cfg = args.resolve();
  Checkpoint ck = load_checkpoint(ckpt_path);
  Model<float> model = model_from_checkpoint(ck);
  cfg.network = model.config();
  Dataset ds = Dataset::load(data_dir);
  std::vector<VideoClip> clips = load_split(ds, split);

  FeatureKind fk = parse_kind(kind);
  std::vector<FeatureRecord> pool = compute_features(model, clips, fk);
  const FeatureRecord* query = nullptr;
  for (const FeatureRecord& r : pool)
    if (r.clip_id == query_clip && r.frame_a == query_frame) query = &r;
  require(query != nullptr, Errc::invalid_argument,
          "query pair (" + query_clip + ", frame " + std::to_string(query_frame) + ") is not in the " + split +
              " split's adjacent pairs");

  std::vector<RankedMatch> ranked = retrieve_nearest(*query, pool, fk);
  int top = std::min<int>(cfg.eval.top, static_cast<int>(ranked.size()));

  fs::create_directories(out_dir);
  std::ofstream out(fs::path(out_dir) / "retrieved.csv");
  require(out.good(), Errc::io_error, "cannot write retrieved.csv");
  out << "rank,clip_id,frame_a,frame_b,distance,motion_label,content_label\n";
  for (int i = 0; i < top; ++i) {
    const RankedMatch& m = ranked[static_cast<std::size_t>(i)];
    out << i << "," << m.record.clip_id << "," << m.record.frame_a << "," << m.record.frame_b << "," << m.distance
        << "," << m.record.motion_label << "," << m.record.content_label << "\n";
    std::cout << i << ": " << m.record.clip_id << " frames (" << m.record.frame_a << "," << m.record.frame_b
              << ") distance " << m.distance << " motion " << m.record.motion_label << "\n";
  }
  write_resolved_config(out_dir, cfg, "retrieve");
  return 0;
}

int cmd_probe(const ConfigArgs& args, const std::string& ckpt_path, const std::string& data_dir,
              const std::string& label, const std::string& split, const std::string& out_dir) {
  RunConfig cfg = args.resolve();
  Checkpoint ck = load_checkpoint(ckpt_path);
  Model<float> model = model_from_checkpoint(ck);
  cfg.network = model.config();
  Dataset ds = Dataset::load(data_dir);
  std::vector<VideoClip> clips = load_split(ds, split);

  require(label == "motion" || label == "content", Errc::invalid_argument, "label must be motion or content");
  LabelField field = label == "motion" ? LabelField::motion : LabelField::content;
  double motion_sil = silhouette_probe(compute_features(model, clips, FeatureKind::motion), field);
  double content_sil = silhouette_probe(compute_features(model, clips, FeatureKind::content), field);

  nlohmann::ordered_json j;
  j["label"] = label;
  j["motion_silhouette"] = motion_sil;
  j["content_silhouette"] = content_sil;
  j["gap"] = motion_sil - content_sil;
  fs::create_directories(out_dir);
  std::ofstream out(fs::path(out_dir) / "probe.json");
  require(out.good(), Errc::io_error, "cannot write probe.json");
  out << j.dump(2) << "\n";
  write_resolved_config(out_dir, cfg, "probe");
  std::cout << j.dump() << "\n";
  return 0;
}

}  // namespace

int run_command(const std::vector<std::string>& args) {
  CLI::App app{"Mutually suppressed motion/content disentangling and video prediction"};
  app.require_subcommand(1);

  ConfigArgs cfg_args;
  struct {
    std::string data_dir, out_dir, resume, stage1, ckpt, clip, kind = "motion", split = "test", label = "motion";
    std::string query_clip;
    int query_frame = 0;
    bool gif = false;
  } opt;

  CLI::App* gen = app.add_subcommand("gen-data", "Generate a bouncing-sprites dataset");
  gen->add_option("--out", opt.out_dir, "Dataset directory")->required();

  CLI::App* repro = app.add_subcommand("train-repro", "Stage 1: adversarial reproduction training");
  repro->add_option("--data", opt.data_dir, "Dataset directory")->required();
  repro->add_option("--out", opt.out_dir, "Run directory for checkpoint and log")->required();
  repro->add_option("--resume", opt.resume, "Continue from an existing stage-1 checkpoint");
  repro->add_flag_callback(
      "--no-cd", [&] { cfg_args.overrides["train.use_content_disc"] = "false"; },
      "Ablation: drop the content discriminator");
  repro->add_flag_callback(
      "--no-md", [&] { cfg_args.overrides["train.use_motion_disc"] = "false"; },
      "Ablation: drop the motion discriminator");

  CLI::App* predtrain = app.add_subcommand("train-predict", "Stage 2: motion predictor training");
  predtrain->add_option("--data", opt.data_dir, "Dataset directory")->required();
  predtrain->add_option("--out", opt.out_dir, "Run directory for checkpoint and log")->required();
  predtrain->add_option("--stage1", opt.stage1, "Stage-1 checkpoint to start from");
  predtrain->add_option("--resume", opt.resume, "Continue from an existing stage-2 checkpoint");

  CLI::App* predict = app.add_subcommand("predict", "Predict future frames for one clip");
  predict->add_option("--checkpoint", opt.ckpt, "Trained checkpoint")->required();
  predict->add_option("--data", opt.data_dir, "Dataset directory")->required();
  predict->add_option("--out", opt.out_dir, "Output directory")->required();
  predict->add_option("--clip", opt.clip, "Clip id (default: first test clip)");
  predict->add_flag("--gif", opt.gif, "Also write an animated gif");

  CLI::App* eval = app.add_subcommand("eval", "Score predictions against ground truth");
  eval->add_option("--checkpoint", opt.ckpt, "Trained checkpoint")->required();
  eval->add_option("--data", opt.data_dir, "Dataset directory")->required();
  eval->add_option("--out", opt.out_dir, "Output directory")->required();
  eval->add_option("--split", opt.split, "Clip split: train, test, or all");

  CLI::App* exportf = app.add_subcommand("export-features", "Write per-pair feature vectors as CSV");
  exportf->add_option("--checkpoint", opt.ckpt, "Trained checkpoint")->required();
  exportf->add_option("--data", opt.data_dir, "Dataset directory")->required();
  exportf->add_option("--out", opt.out_dir, "Output directory")->required();
  exportf->add_option("--kind", opt.kind, "Feature kind: motion or content");
  exportf->add_option("--split", opt.split, "Clip split: train, test, or all");

  CLI::App* retrieve = app.add_subcommand("retrieve", "Rank frame pairs by feature distance to a query");
  retrieve->add_option("--checkpoint", opt.ckpt, "Trained checkpoint")->required();
  retrieve->add_option("--data", opt.data_dir, "Dataset directory")->required();
  retrieve->add_option("--out", opt.out_dir, "Output directory")->required();
  retrieve->add_option("--kind", opt.kind, "Feature kind: motion or content");
  retrieve->add_option("--split", opt.split, "Candidate split: train, test, or all");
  retrieve->add_option("--query-clip", opt.query_clip, "Query clip id")->required();
  retrieve->add_option("--query-frame", opt.query_frame, "Query pair's first frame index");

  CLI::App* probe = app.add_subcommand("probe", "Silhouette separability of features under labels");
  probe->add_option("--checkpoint", opt.ckpt, "Trained checkpoint")->required();
  probe->add_option("--data", opt.data_dir, "Dataset directory")->required();
  probe->add_option("--out", opt.out_dir, "Output directory")->required();
  probe->add_option("--label", opt.label, "Grouping label: motion or content");
  probe->add_option("--split", opt.split, "Clip split: train, test, or all");

  for (CLI::App* sub : {gen, repro, predtrain, predict, eval, exportf, retrieve, probe}) cfg_args.attach(sub);

  std::vector<const char*> argv;
  argv.push_back("msnet");
  for (const std::string& a : args) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
    if (gen->parsed()) return cmd_gen_data(cfg_args, opt.out_dir);
    if (repro->parsed()) return cmd_train_repro(cfg_args, opt.data_dir, opt.out_dir, opt.resume);
    if (predtrain->parsed()) return cmd_train_predict(cfg_args, opt.data_dir, opt.out_dir, opt.stage1, opt.resume);
    if (predict->parsed()) return cmd_predict(cfg_args, opt.ckpt, opt.data_dir, opt.clip, opt.out_dir, opt.gif);
    if (eval->parsed()) return cmd_eval(cfg_args, opt.ckpt, opt.data_dir, opt.split, opt.out_dir);
    if (exportf->parsed())
      return cmd_export_features(cfg_args, opt.ckpt, opt.data_dir, opt.kind, opt.split, opt.out_dir);
    if (retrieve->parsed())
      return cmd_retrieve(cfg_args, opt.ckpt, opt.data_dir, opt.kind, opt.split, opt.query_clip, opt.query_frame,
                          opt.out_dir);
    if (probe->parsed()) return cmd_probe(cfg_args, opt.ckpt, opt.data_dir, opt.label, opt.split, opt.out_dir);
    return 2;
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == Errc::invalid_config || e.code() == Errc::invalid_argument ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace msnet
