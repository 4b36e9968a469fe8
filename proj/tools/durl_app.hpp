#pragma once

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "durl/eval.hpp"
#include "durl/io.hpp"
#include "durl/losses.hpp"
#include "durl/parallel.hpp"
#include "durl/refine.hpp"
#include "durl/svg.hpp"
#include "durl/synthgen.hpp"

namespace durl::cli {

using json = nlohmann::json;
namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;

/// Problems with flags, config files or referenced inputs; nothing ran.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Problems found in the data while working.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SynthArgs {
  std::string out;
  std::uint64_t n = 100;
  std::uint64_t seed = 0;
  double noise_px = 0.0;
  double outlier_rate = 0.0;
  double outlier_spread = 100.0;
  double box_jitter = 0.0;
  double alpha = 2.0;
  double depth_min = 0.75;
  double depth_max = 3.0;
  std::string intrinsics;
  std::string model;
  unsigned threads = 1;
};

struct RansacArgs {
  std::uint64_t seed = 0;
  int iterations = 200;
  double threshold = 8.0;
  int min_inliers = 6;
  bool no_polish = false;
};

struct InferArgs {
  std::string dataset;
  std::string out;
  std::string intrinsics;
  std::string model;
  RansacArgs ransac;
  unsigned threads = 1;
};

struct EvalArgs {
  std::string dataset;
  std::string pred;
  std::string out;
  std::string csv;
  std::string plot;
  double rep_px = 10.0;
  double add_fraction = 0.1;
  std::vector<double> bins = eval::default_bin_edges();
};

struct BenchArgs {
  std::string dataset;
  std::string out;
  RansacArgs ransac;
  int reps = 1;
  unsigned threads = 1;
};

struct LossesArgs {
  std::string fixture;
  std::string out;
};

// ---------------------------------------------------------------------------
// Helpers

inline void add_ransac_options(CLI::App* sub, RansacArgs& r) {
  sub->add_option("--seed", r.seed, "RANSAC seed; frame i uses seed + i");
  sub->add_option("--iterations", r.iterations, "Maximum RANSAC iterations")->check(CLI::PositiveNumber);
  sub->add_option("--threshold", r.threshold, "Inlier threshold in network (416 px) pixels")
      ->check(CLI::PositiveNumber);
  sub->add_option("--min-inliers", r.min_inliers, "Minimum consensus size");
  sub->add_flag("--no-polish", r.no_polish, "Skip the Gauss-Newton polish after RANSAC");
}

inline InferOptions to_infer_options(const RansacArgs& r) {
  InferOptions opt;
  opt.ransac.rng_seed = r.seed;
  opt.ransac.max_iterations = r.iterations;
  opt.ransac.inlier_threshold = r.threshold;
  opt.ransac.min_inliers = r.min_inliers;
  opt.ransac.polish = !r.no_polish;
  return opt;
}

inline json ransac_json(const RansacArgs& r) {
  return {{"seed", r.seed}, {"iterations", r.iterations}, {"threshold", r.threshold},
          {"min-inliers", r.min_inliers}, {"no-polish", r.no_polish}};
}

/// Config-stage loading: any failure is a configuration error.
template <typename Fn>
auto load_config_input(const std::string& what, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    throw ConfigError(what + ": " + e.what());
  }
}

inline CameraIntrinsics load_intrinsics(const std::string& path) {
  return load_config_input("intrinsics", [&] { return io::intrinsics_from(io::read_json(path)); });
}

inline ObjectModel load_model(const std::string& path) {
  return load_config_input("model", [&] { return io::model_from(io::read_json(path)); });
}

inline io::Manifest load_manifest(const std::string& dir) {
  return load_config_input("dataset", [&] { return io::read_manifest(dir); });
}

/// Writes to `path`, or to `out` when the path is empty or "-".
inline void emit(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text;
    return;
  }
  io::write_text(path, text);
}

inline void require_dir(const std::string& dir, const char* flag) {
  if (dir.empty()) throw ConfigError(std::string(flag) + " is required");
  if (!fs::is_directory(dir)) throw ConfigError(dir + " is not a directory");
}

/// Appends config-file settings as flags for options the command line did
/// not set, so flags take precedence over the file, and the file over
/// defaults. Keys may sit at top level (used when the subcommand knows
/// them) or under an object named after the subcommand.
inline void merge_config_file(CLI::App& app, std::vector<std::string>& args) {
  const auto it = std::find_if(args.begin(), args.end(), [](const std::string& a) {
    return a == "--config" || a.rfind("--config=", 0) == 0;
  });
  if (it == args.end() || args.empty()) return;
  std::string path;
  if (*it == "--config") {
    if (it + 1 == args.end()) throw ConfigError("--config needs a path");
    path = *(it + 1);
  } else {
    path = it->substr(std::string("--config=").size());
  }
  CLI::App* sub = nullptr;
  try {
    sub = app.get_subcommand(args.front());
  } catch (const CLI::OptionNotFound&) {
    throw ConfigError("--config must follow a subcommand");
  }
  const json doc = load_config_input("config", [&] { return io::read_json(path); });
  if (!doc.is_object()) throw ConfigError("config file must hold a JSON object");

  std::map<std::string, json> settings;
  for (const auto& [key, value] : doc.items())
    if (!value.is_object() && sub->get_option_no_throw("--" + key)) settings[key] = value;
  if (doc.contains(sub->get_name()) && doc[sub->get_name()].is_object())
    for (const auto& [key, value] : doc[sub->get_name()].items()) settings[key] = value;

  std::vector<std::string> extra;
  for (const auto& [key, value] : settings) {
    if (key == "config") continue;
    const std::string flag = "--" + key;
    const bool given = std::any_of(args.begin(), args.end(), [&](const std::string& a) {
      return a == flag || a.rfind(flag + "=", 0) == 0;
    });
    if (given) continue;
    const auto scalar = [](const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); };
    if (value.is_boolean()) {
      if (value.get<bool>()) extra.push_back(flag);
    } else if (value.is_array()) {
      extra.push_back(flag);
      for (const auto& v : value) extra.push_back(scalar(v));
    } else {
      extra.push_back(flag);
      extra.push_back(scalar(value));
    }
  }
  args.insert(args.end(), extra.begin(), extra.end());
}

// ---------------------------------------------------------------------------
// Subcommands

inline int run_synth(const SynthArgs& a, std::ostream& out) {
  if (a.out.empty()) throw ConfigError("--out is required");
  const CameraIntrinsics intr = a.intrinsics.empty() ? default_intrinsics() : load_intrinsics(a.intrinsics);
  const ObjectModel model = a.model.empty() ? default_model() : load_model(a.model);
  synth::PoseRanges ranges;
  ranges.depth_min = a.depth_min;
  ranges.depth_max = a.depth_max;
  synth::NoiseModel noise;
  noise.keypoint_noise_sigma = a.noise_px;
  noise.outlier_rate = a.outlier_rate;
  noise.outlier_spread = a.outlier_spread;
  noise.box_jitter = a.box_jitter;
  noise.confidence_alpha = a.alpha;
  noise.rng_seed = a.seed;
  load_config_input("synth", [&] {
    ranges.validate();
    noise.validate();
    return 0;
  });

  const json config = {{"command", "synth"},      {"n", a.n},
                       {"seed", a.seed},          {"noise-px", a.noise_px},
                       {"outlier-rate", a.outlier_rate}, {"outlier-spread", a.outlier_spread},
                       {"box-jitter", a.box_jitter}, {"alpha", a.alpha},
                       {"depth-min", a.depth_min}, {"depth-max", a.depth_max},
                       {"intrinsics", a.intrinsics}, {"model", a.model}};
  io::write_dataset(a.out, a.n, intr, model, ranges, noise, config, a.threads);
  out << "wrote " << a.n << " frames to " << a.out << "\n";
  return kExitOk;
}

/// Runs the pipeline on one dataset frame. Pipeline failures become typed
/// status records; unreadable or malformed inputs throw.
inline io::PoseRecord infer_frame(const fs::path& dir, std::uint64_t index, const CameraIntrinsics& intr,
                                  const ObjectModel& model, InferOptions opt, const FrameTensors* preloaded = nullptr) {
  io::PoseRecord rec;
  rec.frame = io::frame_id(index);
  const FrameTensors tensors = preloaded ? *preloaded : io::read_tensor_file(io::tensor_path(dir, index));
  opt.ransac.rng_seed += index;
  try {
    rec.estimate = infer_pose(tensors, intr, model, opt);
    rec.status = eval::FrameStatus::kOk;
  } catch (const Error& e) {
    switch (e.code()) {
      case ErrorCode::kNoDetection:
      case ErrorCode::kInsufficientCorrespondences:
      case ErrorCode::kNoConsensus:
      case ErrorCode::kSolverDivergence:
        rec.status = eval::status_from_error(e.code());
        break;
      default:
        throw Error(e.code(), "frame " + rec.frame + ": " + e.what());
    }
  }
  return rec;
}

inline int run_infer(const InferArgs& a, std::ostream& out) {
  require_dir(a.dataset, "--dataset");
  const io::Manifest manifest = load_manifest(a.dataset);
  const CameraIntrinsics intr = a.intrinsics.empty() ? manifest.intrinsics : load_intrinsics(a.intrinsics);
  const ObjectModel model = a.model.empty() ? manifest.model : load_model(a.model);
  const InferOptions opt = to_infer_options(a.ransac);

  std::vector<io::PoseRecord> records(manifest.count);
  parallel_for(manifest.count, a.threads, [&](std::size_t i) {
    records[i] = infer_frame(a.dataset, i, intr, model, opt);
  });
  std::string text;
  for (const auto& r : records) text += io::pose_record_json(r).dump() + "\n";
  emit(a.out, text, out);
  return kExitOk;
}

inline int run_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
  require_dir(a.dataset, "--dataset");
  if (a.pred.empty()) throw ConfigError("--pred is required");
  if (!fs::is_regular_file(a.pred)) throw ConfigError(a.pred + " does not exist");
  const io::Manifest manifest = load_manifest(a.dataset);

  std::map<std::string, io::PoseRecord> preds;
  for (auto& p : io::read_pose_ndjson(a.pred)) {
    const std::string id = p.frame;
    if (!preds.emplace(id, std::move(p)).second) throw DataError("duplicate prediction for frame " + id);
  }
  std::vector<io::GroundTruthRecord> gts;
  std::set<std::string> gt_ids;
  for (std::uint64_t i = 0; i < manifest.count; ++i) {
    gts.push_back(io::groundtruth_from(io::read_json(io::groundtruth_path(a.dataset, i))));
    gt_ids.insert(gts.back().frame);
  }
  std::vector<std::string> unmatched;
  for (const auto& g : gts)
    if (!preds.count(g.frame)) unmatched.push_back(g.frame);
  for (const auto& [id, p] : preds)
    if (!gt_ids.count(id)) unmatched.push_back(id);
  if (!unmatched.empty()) {
    err << "frame_mismatch: " << unmatched.size() << " unmatched frame id(s):";
    for (const auto& id : unmatched) err << ' ' << id;
    err << "\n";
    return kExitData;
  }

  const eval::Thresholds th{a.rep_px, a.add_fraction};
  std::vector<eval::EvalRecord> records;
  for (const auto& g : gts) {
    const auto& p = preds.at(g.frame);
    std::optional<Pose> pose;
    if (p.estimate) pose = p.estimate->pose;
    records.push_back(eval::evaluate_frame(g.frame, g.gt.pose, pose, p.status, manifest.model,
                                           manifest.intrinsics, th));
  }
  const eval::EvalReport report = eval::aggregate(records, a.bins);
  json j = io::report_json(report);
  j["config"] = {{"command", "eval"},     {"dataset", a.dataset},           {"pred", a.pred},
                 {"rep-px", a.rep_px},    {"add-fraction", a.add_fraction}, {"bins", a.bins}};
  j["dataset_config"] = manifest.raw.value("config", json::object());
  emit(a.out, j.dump(2) + "\n", out);
  if (!a.csv.empty()) io::write_text(a.csv, io::records_csv(records));
  if (!a.plot.empty()) {
    fs::create_directories(a.plot);
    io::write_text(fs::path(a.plot) / "translation_by_distance.svg",
                   svg::distance_boxplot(report, "Translation error by distance", "meters",
                                         [](const eval::DistanceBin& b) { return b.translation; }));
    io::write_text(fs::path(a.plot) / "orientation_by_distance.svg",
                   svg::distance_boxplot(report, "Orientation error by distance", "degrees",
                                         [](const eval::DistanceBin& b) { return b.orientation; },
                                         rad2deg(1.0)));
  }
  return kExitOk;
}

inline int run_bench(const BenchArgs& a, std::ostream& out) {
  require_dir(a.dataset, "--dataset");
  const io::Manifest manifest = load_manifest(a.dataset);
  if (manifest.count < 10) throw ConfigError("bench needs a dataset with at least 10 frames");
  std::vector<FrameTensors> frames(manifest.count);
  for (std::uint64_t i = 0; i < manifest.count; ++i) frames[i] = io::read_tensor_file(io::tensor_path(a.dataset, i));
  const InferOptions opt = to_infer_options(a.ransac);

  std::vector<io::PoseRecord> serial(frames.size()), parallel(frames.size());
  const auto run_into = [&](std::vector<io::PoseRecord>& dst) {
    return [&](std::size_t i) {
      dst[i] = infer_frame(a.dataset, i, manifest.intrinsics, manifest.model, opt, &frames[i]);
    };
  };
  const auto s = eval::bench(run_into(serial), frames.size(), a.reps, 1);
  json j = {{"frames", frames.size()},
            {"repetitions", a.reps},
            {"scope", "decode + refine + RANSAC-PnP; network inference excluded"},
            {"serial", {{"fps", s.fps}, {"seconds", s.seconds}}}};
  if (a.threads > 1) {
    const auto p = eval::bench(run_into(parallel), frames.size(), a.reps, a.threads);
    bool identical = true;
    for (std::size_t i = 0; i < frames.size(); ++i)
      identical &= io::pose_record_json(serial[i]) == io::pose_record_json(parallel[i]);
    j["parallel"] = {{"fps", p.fps}, {"seconds", p.seconds}, {"threads", a.threads}};
    j["fps_ratio"] = p.fps / s.fps;
    j["identical_poses"] = identical;
  }
  emit(a.out, j.dump(2) + "\n", out);
  return kExitOk;
}

/// Evaluates every loss on a fixture document; see README for the schema.
inline json losses_report(const json& fx) {
  return io::guarded("losses fixture", [&] {
    losses::LossWeights w;
    if (fx.contains("weights")) {
      const auto& wj = fx.at("weights");
      w.alpha = wj.value("alpha", w.alpha);
      w.lambda_off = wj.value("lambda_off", w.lambda_off);
      w.lambda_conf_obj = wj.value("lambda_conf_obj", w.lambda_conf_obj);
      w.lambda_conf_noobj = wj.value("lambda_conf_noobj", w.lambda_conf_noobj);
    }
    std::array<Vec2, kNumKeypoints> gt{};
    const auto& gtj = fx.at("ground_truth_keypoints");
    if (gtj.size() != kNumKeypoints) throw Error(ErrorCode::kFormat, "need 8 ground-truth keypoints");
    for (int i = 0; i < kNumKeypoints; ++i) gt[i] = io::vec2_from(gtj[i]);

    std::vector<losses::CellPrediction> in_box, background;
    for (const auto& c : fx.value("cells", json::array())) {
      losses::CellPrediction p;
      p.cell = io::vec2_from(c.at("cell"));
      const auto& off = c.at("offsets");
      const auto& conf = c.at("confidences");
      if (off.size() != kNumKeypoints || conf.size() != kNumKeypoints)
        throw Error(ErrorCode::kFormat, "each cell needs 8 offsets and 8 confidences");
      for (int i = 0; i < kNumKeypoints; ++i) {
        p.offsets[i] = io::vec2_from(off[i]);
        p.confidences[i] = conf[i].get<double>();
      }
      (c.value("in_box", true) ? in_box : background).push_back(p);
    }
    const auto reg = losses::pose_regression_loss(in_box, background, gt, w);

    std::vector<losses::AnchorPrediction> preds;
    std::vector<losses::AnchorTarget> targets;
    for (const auto& aj : fx.value("anchors", json::array())) {
      losses::AnchorPrediction p;
      losses::AnchorTarget t;
      p.t = aj.at("t_pred").get<std::array<double, 4>>();
      p.objectness = aj.at("objectness").get<double>();
      p.class_probs = aj.value("class_probs", std::vector<double>{});
      t.responsible = aj.value("responsible", false);
      t.ignore = aj.value("ignore", false);
      t.t = aj.value("t_true", std::array<double, 4>{});
      t.class_targets = aj.value("class_targets", std::vector<double>(p.class_probs.size(), 0.0));
      preds.push_back(std::move(p));
      targets.push_back(std::move(t));
    }
    const auto det = losses::detection_loss(preds, targets);
    return json{{"offset_loss", reg.offset},
                {"confidence_loss_obj", reg.confidence_obj},
                {"confidence_loss_noobj", reg.confidence_noobj},
                {"regression_loss", reg.total},
                {"detection_loss",
                 {{"coordinates", det.coordinates},
                  {"objectness", det.objectness},
                  {"classification", det.classification},
                  {"total", det.total}}},
                {"total_loss", losses::total_loss(det.total, reg.total)},
                {"weights",
                 {{"alpha", w.alpha},
                  {"lambda_off", w.lambda_off},
                  {"lambda_conf_obj", w.lambda_conf_obj},
                  {"lambda_conf_noobj", w.lambda_conf_noobj}}}};
  });
}

inline int run_losses_check(const LossesArgs& a, std::ostream& out) {
  if (a.fixture.empty()) throw ConfigError("--fixture is required");
  const json fx = load_config_input("fixture", [&] { return io::read_json(a.fixture); });
  emit(a.out, losses_report(fx).dump(2) + "\n", out);
  return kExitOk;
}

// ---------------------------------------------------------------------------

/// Entry point. `args` excludes the program name. Exit codes: 0 success,
/// 2 configuration error, 3 data error.
inline int run(std::vector<std::string> args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Post-network 6D pose engine: synthetic fixtures, inference, evaluation", "durl"};
  app.require_subcommand(1);
  std::string config_path;

  SynthArgs synth_args;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset of prediction tensors");
  synth->add_option("--out", synth_args.out, "Output dataset directory");
  synth->add_option("--n", synth_args.n, "Number of frames");
  synth->add_option("--seed", synth_args.seed, "Generator seed");
  synth->add_option("--noise-px", synth_args.noise_px, "Keypoint noise sigma (network pixels)");
  synth->add_option("--outlier-rate", synth_args.outlier_rate, "Fraction of keypoint votes replaced by outliers");
  synth->add_option("--outlier-spread", synth_args.outlier_spread, "Outlier half-width (network pixels)");
  synth->add_option("--box-jitter", synth_args.box_jitter, "Detection box jitter sigma (network pixels)");
  synth->add_option("--alpha", synth_args.alpha, "Confidence sharpness (per cell)");
  synth->add_option("--depth-min", synth_args.depth_min, "Minimum depth (m)");
  synth->add_option("--depth-max", synth_args.depth_max, "Maximum depth (m)");
  synth->add_option("--intrinsics", synth_args.intrinsics, "Camera intrinsics JSON");
  synth->add_option("--model", synth_args.model, "Object model JSON");
  synth->add_option("--threads", synth_args.threads, "Worker threads");

  InferArgs infer_args;
  auto* infer = app.add_subcommand("infer", "Estimate poses for every frame of a dataset (NDJSON)");
  infer->add_option("--dataset", infer_args.dataset, "Dataset directory");
  infer->add_option("--out", infer_args.out, "Output NDJSON file (default stdout)");
  infer->add_option("--intrinsics", infer_args.intrinsics, "Override camera intrinsics JSON");
  infer->add_option("--model", infer_args.model, "Override object model JSON");
  add_ransac_options(infer, infer_args.ransac);
  infer->add_option("--threads", infer_args.threads, "Worker threads");

  EvalArgs eval_args;
  auto* evalc = app.add_subcommand("eval", "Score predictions against dataset ground truth");
  evalc->add_option("--dataset", eval_args.dataset, "Dataset directory");
  evalc->add_option("--pred", eval_args.pred, "Predictions NDJSON");
  evalc->add_option("--out", eval_args.out, "Report JSON (default stdout)");
  evalc->add_option("--csv", eval_args.csv, "Per-frame CSV output");
  evalc->add_option("--plot", eval_args.plot, "Directory for SVG box plots per distance bin");
  evalc->add_option("--rep-px", eval_args.rep_px, "REP acceptance threshold (pixels)");
  evalc->add_option("--add-fraction", eval_args.add_fraction, "ADD acceptance fraction of the diameter");
  evalc->add_option("--bins", eval_args.bins, "Distance bin edges (m)")->expected(2, 1000);

  BenchArgs bench_args;
  auto* bench = app.add_subcommand("bench", "Throughput of decode -> refine -> RANSAC-PnP");
  bench->add_option("--dataset", bench_args.dataset, "Dataset directory (>= 10 frames)");
  bench->add_option("--out", bench_args.out, "Output JSON (default stdout)");
  bench->add_option("--reps", bench_args.reps, "Repetitions over the dataset")->check(CLI::PositiveNumber);
  add_ransac_options(bench, bench_args.ransac);
  bench->add_option("--threads", bench_args.threads, "Also run a parallel pass with this many threads");

  LossesArgs losses_args;
  auto* lossc = app.add_subcommand("losses-check", "Evaluate every training loss on a fixture file");
  lossc->add_option("--fixture", losses_args.fixture, "Fixture JSON");
  lossc->add_option("--out", losses_args.out, "Report JSON (default stdout)");

  for (auto* sub : {synth, infer, evalc, bench, lossc})
    sub->add_option("--config", config_path, "JSON config; flags override its values");

  try {
    merge_config_file(app, args);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitConfig;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    if (synth->parsed()) return run_synth(synth_args, out);
    if (infer->parsed()) return run_infer(infer_args, out);
    if (evalc->parsed()) return run_eval(eval_args, out, err);
    if (bench->parsed()) return run_bench(bench_args, out);
    if (lossc->parsed()) return run_losses_check(losses_args, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const Error& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitConfig;
}

}  // namespace durl::cli
