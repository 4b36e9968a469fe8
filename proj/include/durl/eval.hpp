#pragma once

#include <chrono>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "durl/error.hpp"
#include "durl/geometry.hpp"
#include "durl/parallel.hpp"

namespace durl::eval {

enum class FrameStatus { kOk, kNoDetection, kInsufficient, kNoConsensus, kDiverged, kRejected };

constexpr std::string_view to_string(FrameStatus s) {
  switch (s) {
    case FrameStatus::kOk: return "ok";
    case FrameStatus::kNoDetection: return "no_detection";
    case FrameStatus::kInsufficient: return "insufficient";
    case FrameStatus::kNoConsensus: return "no_consensus";
    case FrameStatus::kDiverged: return "diverged";
    case FrameStatus::kRejected: return "rejected";
  }
  return "unknown";
}

inline FrameStatus status_from_string(std::string_view s) {
  for (auto st : {FrameStatus::kOk, FrameStatus::kNoDetection, FrameStatus::kInsufficient,
                  FrameStatus::kNoConsensus, FrameStatus::kDiverged, FrameStatus::kRejected})
    if (to_string(st) == s) return st;
  throw Error(ErrorCode::kFormat, "unknown frame status '" + std::string(s) + "'");
}

inline FrameStatus status_from_error(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNoDetection: return FrameStatus::kNoDetection;
    case ErrorCode::kInsufficientCorrespondences: return FrameStatus::kInsufficient;
    case ErrorCode::kNoConsensus: return FrameStatus::kNoConsensus;
    case ErrorCode::kSolverDivergence: return FrameStatus::kDiverged;
    default: return FrameStatus::kRejected;
  }
}

inline double translation_error(const Pose& gt, const Pose& pred) {
  return (gt.translation - pred.translation).norm();
}

struct MetricResult {
  double mean = 0.0;
  bool accepted = false;
};

/// Mean 2D distance between corners projected with both poses; accepted
/// when strictly below `threshold_px`.
inline MetricResult rep_metric(const Pose& gt, const Pose& pred, const ObjectModel& model,
                               const CameraIntrinsics& intr, double threshold_px = 10.0) {
  double sum = 0.0;
  for (const auto& c : model.corners) sum += (project(c, gt, intr) - project(c, pred, intr)).norm();
  const double mean = sum / static_cast<double>(model.corners.size());
  return {mean, mean < threshold_px};
}

/// Mean 3D distance between corners transformed by both poses; accepted
/// when strictly below fraction * diameter.
inline MetricResult add_metric(const Pose& gt, const Pose& pred, const ObjectModel& model,
                               double fraction = 0.1) {
  double sum = 0.0;
  for (const auto& c : model.corners) sum += (gt.transform(c) - pred.transform(c)).norm();
  const double mean = sum / static_cast<double>(model.corners.size());
  return {mean, mean < fraction * model.diameter};
}

struct Thresholds {
  double rep_px = 10.0;
  double add_fraction = 0.1;
};

struct EvalRecord {
  std::string frame;
  FrameStatus status = FrameStatus::kOk;
  std::string reason;
  double gt_depth = 0.0;  // meters, z of the ground-truth translation
  double translation_error = 0.0;
  double orientation_error = 0.0;  // radians
  double roll_error = 0.0;
  double pitch_error = 0.0;
  double yaw_error = 0.0;
  bool gimbal_lock = false;
  double rep_error = 0.0;  // pixels
  double add_error = 0.0;  // meters
  bool rep_accepted = false;
  bool add_accepted = false;

  bool ok() const { return status == FrameStatus::kOk; }
};

/// Scores one frame. A missing prediction keeps the failure status; a
/// prediction that puts a corner behind the camera is marked rejected.
inline EvalRecord evaluate_frame(std::string frame, const Pose& gt, const std::optional<Pose>& pred,
                                 FrameStatus status, const ObjectModel& model,
                                 const CameraIntrinsics& intr, const Thresholds& th = {}) {
  EvalRecord r;
  r.frame = std::move(frame);
  r.gt_depth = gt.translation.z();
  r.status = pred ? status : (status == FrameStatus::kOk ? FrameStatus::kRejected : status);
  if (!pred || status != FrameStatus::kOk) return r;

  r.translation_error = translation_error(gt, *pred);
  r.orientation_error = rotation_error(gt.rotation, pred->rotation);
  const AngleErrors ae = angle_errors(gt.rotation, pred->rotation);
  r.roll_error = ae.roll;
  r.pitch_error = ae.pitch;
  r.yaw_error = ae.yaw;
  r.gimbal_lock = ae.gimbal_lock;
  const MetricResult add = add_metric(gt, *pred, model, th.add_fraction);
  r.add_error = add.mean;
  r.add_accepted = add.accepted;
  try {
    const MetricResult rep = rep_metric(gt, *pred, model, intr, th.rep_px);
    r.rep_error = rep.mean;
    r.rep_accepted = rep.accepted;
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kNonPositiveDepth) throw;
    r.status = FrameStatus::kRejected;
    r.reason = e.what();
    r.rep_error = std::numeric_limits<double>::infinity();
    r.add_accepted = false;
  }
  return r;
}

struct Quartiles {
  double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0;
};

inline Quartiles quartiles(const std::vector<double>& v) {
  if (v.empty()) return {};
  return {quantile(v, 0.0), quantile(v, 0.25), quantile(v, 0.5), quantile(v, 0.75), quantile(v, 1.0)};
}

struct DistanceBin {
  double lo = 0.0, hi = 0.0;  // [lo, hi) on ground-truth depth
  std::size_t frames = 0;
  std::size_t successes = 0;
  Quartiles translation;
  Quartiles orientation;
};

struct EvalReport {
  std::size_t frames = 0;
  std::size_t successes = 0;
  double mean_translation_error = 0.0;
  double median_translation_error = 0.0;
  double mean_orientation_error = 0.0;  // radians
  double median_orientation_error = 0.0;
  double mean_roll_error = 0.0;
  double mean_pitch_error = 0.0;
  double mean_yaw_error = 0.0;
  double rep_accuracy = 0.0;
  double add_accuracy = 0.0;
  std::optional<double> fps;
  std::vector<DistanceBin> bins;
};

/// 0.5 m bins over [0.5, 3.5] m.
inline std::vector<double> default_bin_edges() { return {0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5}; }

/// Error statistics over successful frames; accuracies over all frames,
/// so failures count as not accepted. Frames outside the bin range are
/// counted in totals only.
inline EvalReport aggregate(const std::vector<EvalRecord>& records,
                            const std::vector<double>& bin_edges = default_bin_edges()) {
  if (records.empty()) throw Error(ErrorCode::kEmptyInput, "no records to aggregate");
  for (std::size_t i = 1; i < bin_edges.size(); ++i)
    if (!(bin_edges[i] > bin_edges[i - 1]))
      throw Error(ErrorCode::kInvalidArgument, "bin edges must be strictly increasing");

  EvalReport rep;
  rep.frames = records.size();
  std::vector<double> trans, orient;
  double roll = 0.0, pitch = 0.0, yaw = 0.0;
  std::size_t rep_ok = 0, add_ok = 0;
  for (const auto& r : records) {
    if (!r.ok()) continue;
    ++rep.successes;
    trans.push_back(r.translation_error);
    orient.push_back(r.orientation_error);
    roll += r.roll_error;
    pitch += r.pitch_error;
    yaw += r.yaw_error;
    rep_ok += r.rep_accepted ? 1 : 0;
    add_ok += r.add_accepted ? 1 : 0;
  }
  const auto n = static_cast<double>(rep.frames);
  rep.rep_accuracy = static_cast<double>(rep_ok) / n;
  rep.add_accuracy = static_cast<double>(add_ok) / n;
  if (rep.successes > 0) {
    const auto s = static_cast<double>(rep.successes);
    double st = 0.0, so = 0.0;
    for (double v : trans) st += v;
    for (double v : orient) so += v;
    rep.mean_translation_error = st / s;
    rep.mean_orientation_error = so / s;
    rep.median_translation_error = median(trans);
    rep.median_orientation_error = median(orient);
    rep.mean_roll_error = roll / s;
    rep.mean_pitch_error = pitch / s;
    rep.mean_yaw_error = yaw / s;
  }

  for (std::size_t b = 0; b + 1 < bin_edges.size(); ++b) {
    DistanceBin bin;
    bin.lo = bin_edges[b];
    bin.hi = bin_edges[b + 1];
    std::vector<double> bt, bo;
    for (const auto& r : records) {
      if (r.gt_depth < bin.lo || r.gt_depth >= bin.hi) continue;
      ++bin.frames;
      if (!r.ok()) continue;
      ++bin.successes;
      bt.push_back(r.translation_error);
      bo.push_back(r.orientation_error);
    }
    bin.translation = quartiles(bt);
    bin.orientation = quartiles(bo);
    rep.bins.push_back(bin);
  }
  return rep;
}

struct BenchResult {
  double fps = 0.0;
  double seconds = 0.0;
  std::size_t frames = 0;  // frames processed, across repetitions
  unsigned threads = 1;
};

/// Wall-clock throughput of `pipeline(i)` over frames [0, n), repeated
/// `repetitions` times. Single-threaded unless `threads` > 1.
inline BenchResult bench(const std::function<void(std::size_t)>& pipeline, std::size_t n,
                         int repetitions = 1, unsigned threads = 1) {
  if (n < 10) throw Error(ErrorCode::kInvalidArgument, "bench needs at least 10 frames");
  repetitions = std::max(repetitions, 1);
  const auto start = std::chrono::steady_clock::now();
  for (int rep = 0; rep < repetitions; ++rep) parallel_for(n, threads, pipeline);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  BenchResult r;
  r.frames = n * static_cast<std::size_t>(repetitions);
  r.seconds = seconds;
  r.fps = seconds > 0.0 ? static_cast<double>(r.frames) / seconds : std::numeric_limits<double>::infinity();
  r.threads = threads;
  return r;
}

}  // namespace durl::eval
