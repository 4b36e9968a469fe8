#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "durl/error.hpp"
#include "durl/geometry.hpp"
#include "durl/pnp.hpp"
#include "durl/tensor.hpp"

namespace durl {

struct Correspondence {
  Vec3 model_point = Vec3::Zero();  // meters, object frame
  Vec2 pixel = Vec2::Zero();        // image pixels
  double confidence = 1.0;
  int keypoint = -1;  // model corner index, -1 if unknown
};

inline constexpr int kMinCorrespondences = 6;

struct RansacParams {
  int max_iterations = 200;
  double inlier_threshold = 8.0;  // pixels of the correspondence frame
  int min_inliers = 6;
  std::uint64_t rng_seed = 0;
  /// Early termination once the standard iteration bound for this
  /// confidence is met; 1.0 always runs `max_iterations`.
  double confidence = 0.9999;
  /// Gauss-Newton polish of the consensus pose. Between rounds the
  /// consensus is trimmed of points beyond max(3 * 1.4826 * MAD,
  /// trim_fraction * inlier_threshold).
  bool polish = true;
  int polish_iterations = 10;  // total across rounds
  double trim_fraction = 0.1;
};

struct PoseEstimate {
  Pose pose;
  int inlier_count = 0;
  double mean_reprojection_error = 0.0;  // pixels, over inliers
  int correspondences_used = 0;
  int iterations = 0;
  std::vector<bool> inlier_mask;
};


// ---------------------------------------------------------------------------
// Candidate filters. Each returns a subset of its input in canonical order.

/// Keeps candidates whose source cell centre lies inside `box`.
inline std::vector<KeypointCandidate> filter_in_box(std::span<const KeypointCandidate> cands,
                                                    const DetectionBox& box) {
  std::vector<KeypointCandidate> out;
  for (const auto& c : cands)
    if (box.contains(c.cell_center())) out.push_back(c);
  canonicalize(out);
  return out;
}

/// Per keypoint index, drops candidates farther than factor * image_width
/// from the coordinate-wise median of that keypoint's candidates.
inline std::vector<KeypointCandidate> prune_clusters(std::span<const KeypointCandidate> cands,
                                                     double image_width, double factor = 0.3) {
  std::array<std::vector<double>, kNumKeypoints> xs, ys;
  for (const auto& c : cands) {
    xs[c.keypoint].push_back(c.pixel.x());
    ys[c.keypoint].push_back(c.pixel.y());
  }
  std::array<Vec2, kNumKeypoints> centers;
  for (int k = 0; k < kNumKeypoints; ++k) centers[k] = Vec2(median(xs[k]), median(ys[k]));

  const double radius = factor * image_width;
  std::vector<KeypointCandidate> out;
  for (const auto& c : cands)
    if ((c.pixel - centers[c.keypoint]).norm() <= radius) out.push_back(c);
  canonicalize(out);
  return out;
}

inline std::vector<KeypointCandidate> filter_confidence(std::span<const KeypointCandidate> cands,
                                                        double threshold = 0.5) {
  std::vector<KeypointCandidate> out;
  for (const auto& c : cands)
    if (c.confidence >= threshold) out.push_back(c);
  canonicalize(out);
  return out;
}

/// Ranking for top-k: confidence, then pixel x, then pixel y, descending.
inline bool more_confident(const KeypointCandidate& a, const KeypointCandidate& b) {
  const auto ka = std::make_tuple(a.confidence, a.pixel.x(), a.pixel.y());
  const auto kb = std::make_tuple(b.confidence, b.pixel.x(), b.pixel.y());
  if (ka != kb) return ka > kb;
  return a.canonical_key() < b.canonical_key();
}

inline std::vector<KeypointCandidate> select_top_k(std::span<const KeypointCandidate> cands,
                                                   int k = 12) {
  std::array<std::vector<KeypointCandidate>, kNumKeypoints> groups;
  for (const auto& c : cands) groups[c.keypoint].push_back(c);
  std::vector<KeypointCandidate> out;
  for (auto& g : groups) {
    const auto keep = std::min<std::size_t>(g.size(), static_cast<std::size_t>(std::max(k, 0)));
    std::partial_sort(g.begin(), g.begin() + static_cast<std::ptrdiff_t>(keep), g.end(), more_confident);
    out.insert(out.end(), g.begin(), g.begin() + static_cast<std::ptrdiff_t>(keep));
  }
  canonicalize(out);
  return out;
}

// ---------------------------------------------------------------------------
// RANSAC-PnP

namespace detail {

/// Draws four correspondences with distinct model points. Returns false if
/// the set has fewer than four distinct model points.
inline bool draw_minimal_sample(std::span<const Correspondence> corrs, std::mt19937_64& rng,
                                std::array<std::size_t, 4>& sample) {
  std::uniform_int_distribution<std::size_t> pick(0, corrs.size() - 1);
  int filled = 0;
  for (int attempt = 0; attempt < 64 && filled < 4; ++attempt) {
    const std::size_t idx = pick(rng);
    bool duplicate = false;
    for (int j = 0; j < filled; ++j)
      if ((corrs[sample[j]].model_point - corrs[idx].model_point).squaredNorm() < 1e-18)
        duplicate = true;
    if (!duplicate) sample[filled++] = idx;
  }
  return filled == 4;
}

/// Squared reprojection residual in undistorted pixels; +inf behind camera.
inline double squared_residual(const Pose& pose, const Vec3& world, const Vec2& normalized,
                               const CameraIntrinsics& intr) {
  const Vec3 pc = pose.transform(world);
  if (!(pc.z() > kMinDepth)) return std::numeric_limits<double>::infinity();
  const double dx = intr.fx * (pc.x() / pc.z() - normalized.x());
  const double dy = intr.fy * (pc.y() / pc.z() - normalized.y());
  return dx * dx + dy * dy;
}

inline int count_inliers(const Pose& pose, std::span<const Vec3> world,
                         std::span<const Vec2> normalized, const CameraIntrinsics& intr,
                         double threshold_sq, std::vector<bool>* mask = nullptr) {
  int count = 0;
  if (mask) mask->assign(world.size(), false);
  for (std::size_t i = 0; i < world.size(); ++i) {
    if (squared_residual(pose, world[i], normalized[i], intr) <= threshold_sq) {
      ++count;
      if (mask) (*mask)[i] = true;
    }
  }
  return count;
}

inline int required_iterations(double inlier_ratio, double confidence, int max_iterations) {
  if (confidence >= 1.0) return max_iterations;
  const double good = std::pow(inlier_ratio, 4);
  if (good <= 0.0) return max_iterations;
  if (good >= 1.0) return 1;
  const double n = std::log(1.0 - confidence) / std::log(1.0 - good);
  return static_cast<int>(std::min<double>(max_iterations, std::ceil(n)));
}

/// Gauss-Newton rounds on the consensus set, trimming residual outliers
/// that slipped under the inlier threshold.
inline Pose polish(Pose pose, std::vector<Vec3> world, std::vector<Vec2> image,
                   const CameraIntrinsics& intr, const RansacParams& params) {
  int budget = params.polish_iterations;
  const double floor = params.trim_fraction * params.inlier_threshold;
  const auto min_keep = static_cast<std::size_t>(std::max(params.min_inliers, kMinCorrespondences));
  for (int round = 0; round < 3 && budget > 0; ++round) {
    const auto res = pnp::refine_pose(pose, world, image, intr.fx, intr.fy, budget);
    pose = res.pose;
    budget -= std::max(res.iterations, 1);

    std::vector<double> r(world.size());
    for (std::size_t i = 0; i < world.size(); ++i)
      r[i] = std::sqrt(squared_residual(pose, world[i], image[i], intr));
    const double cut = std::max(3.0 * 1.4826 * median(r), floor);
    std::vector<Vec3> kw;
    std::vector<Vec2> ki;
    for (std::size_t i = 0; i < world.size(); ++i) {
      if (r[i] > cut) continue;
      kw.push_back(world[i]);
      ki.push_back(image[i]);
    }
    if (kw.size() == world.size() || kw.size() < min_keep) break;
    world = std::move(kw);
    image = std::move(ki);
  }
  return pose;
}

}  // namespace detail

/// Robust pose from 2D-3D correspondences: RANSAC over minimal EPnP
/// solves, EPnP refit on the consensus set, optional Gauss-Newton polish.
/// Reprojection residuals are measured on undistorted pixels, and the
/// reported inliers are those within `inlier_threshold` of the final pose.
inline PoseEstimate estimate_pose(std::span<const Correspondence> corrs,
                                  const CameraIntrinsics& intr, const RansacParams& params) {
  if (params.max_iterations < 1 || !(params.inlier_threshold > 0.0))
    throw Error(ErrorCode::kInvalidArgument, "RANSAC needs max_iterations >= 1 and a positive threshold");
  if (corrs.size() < static_cast<std::size_t>(kMinCorrespondences))
    throw Error(ErrorCode::kInsufficientCorrespondences,
                std::to_string(corrs.size()) + " correspondences, at least " +
                    std::to_string(kMinCorrespondences) + " required");

  const std::size_t n = corrs.size();
  std::vector<Vec3> world(n);
  std::vector<Vec2> normalized(n);
  for (std::size_t i = 0; i < n; ++i) {
    world[i] = corrs[i].model_point;
    normalized[i] = pixel_to_normalized(corrs[i].pixel, intr);
  }
  const double threshold_sq = params.inlier_threshold * params.inlier_threshold;

  std::mt19937_64 rng(params.rng_seed);
  std::optional<Pose> best;
  int best_count = -1;
  int iterations = 0;
  int budget = params.max_iterations;
  bool any_solution = false;
  std::array<std::size_t, 4> sample{};
  std::array<Vec3, 4> sw;
  std::array<Vec2, 4> si;
  for (; iterations < budget; ++iterations) {
    if (!detail::draw_minimal_sample(corrs, rng, sample)) break;
    for (int j = 0; j < 4; ++j) {
      sw[j] = world[sample[j]];
      si[j] = normalized[sample[j]];
    }
    const auto hypothesis = pnp::solve_epnp(sw, si);
    if (!hypothesis) continue;
    any_solution = true;
    const int count = detail::count_inliers(*hypothesis, world, normalized, intr, threshold_sq);
    if (count > best_count) {
      best_count = count;
      best = hypothesis;
      budget = std::max(iterations + 1,
                        detail::required_iterations(static_cast<double>(count) / n,
                                                    params.confidence, params.max_iterations));
    }
  }
  if (!best) {
    if (!any_solution && iterations > 0)
      throw Error(ErrorCode::kSolverDivergence, "EPnP produced no finite hypothesis");
    throw Error(ErrorCode::kNoConsensus, "no usable minimal sample");
  }
  if (best_count < params.min_inliers)
    throw Error(ErrorCode::kNoConsensus, "best consensus has " + std::to_string(best_count) +
                                             " inliers, need " + std::to_string(params.min_inliers));

  std::vector<bool> mask;
  detail::count_inliers(*best, world, normalized, intr, threshold_sq, &mask);
  std::vector<Vec3> in_world;
  std::vector<Vec2> in_image;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    in_world.push_back(world[i]);
    in_image.push_back(normalized[i]);
  }
  Pose pose = *best;
  if (auto refit = pnp::solve_epnp(in_world, in_image)) {
    const int refit_count = detail::count_inliers(*refit, world, normalized, intr, threshold_sq);
    if (refit_count >= best_count) pose = *refit;
  } else if (in_world.size() >= 4) {
    // A refit on a non-degenerate consensus must not fail; keep the sample
    // pose only when the inliers themselves are degenerate.
    const auto frame = pnp::principal_frame(in_world);
    if (frame.variances(1) >= 1e-12 * frame.variances(0))
      throw Error(ErrorCode::kSolverDivergence, "EPnP refit on consensus set is not finite");
  }
  if (params.polish) {
    detail::count_inliers(pose, world, normalized, intr, threshold_sq, &mask);
    in_world.clear();
    in_image.clear();
    for (std::size_t i = 0; i < n; ++i) {
      if (!mask[i]) continue;
      in_world.push_back(world[i]);
      in_image.push_back(normalized[i]);
    }
    pose = detail::polish(pose, in_world, in_image, intr, params);
  }
  if (!pose.rotation.allFinite() || !pose.translation.allFinite())
    throw Error(ErrorCode::kSolverDivergence, "non-finite pose");

  PoseEstimate est;
  est.pose = pose;
  est.correspondences_used = static_cast<int>(n);
  est.iterations = iterations;
  est.inlier_count = detail::count_inliers(pose, world, normalized, intr, threshold_sq, &est.inlier_mask);
  if (est.inlier_count < params.min_inliers)
    throw Error(ErrorCode::kNoConsensus, "final pose keeps only " + std::to_string(est.inlier_count) +
                                             " inliers");
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    if (est.inlier_mask[i]) sum += std::sqrt(detail::squared_residual(pose, world[i], normalized[i], intr));
  est.mean_reprojection_error = sum / est.inlier_count;
  return est;
}

// ---------------------------------------------------------------------------
// Full post-network pipeline

struct InferOptions {
  RansacParams ransac{};
  double score_threshold = 0.3;
  double iou_threshold = 0.4;
  double cluster_factor = 0.3;
  double confidence_threshold = 0.5;
  int top_k = 12;
};

/// Intermediate products of `infer_pose`, for inspection and tests.
struct InferTrace {
  std::optional<DetectionBox> box;
  std::size_t decoded = 0;
  std::size_t in_box = 0;
  std::size_t clustered = 0;
  std::size_t confident = 0;
  std::vector<Correspondence> correspondences;
};

/// Scales network-frame (416 x 416) pixels to the camera image.
inline Vec2 network_to_image(const Vec2& p, const CameraIntrinsics& intr) {
  return {p.x() * intr.width / kInputResolution, p.y() * intr.height / kInputResolution};
}

inline Vec2 image_to_network(const Vec2& p, const CameraIntrinsics& intr) {
  return {p.x() * kInputResolution / intr.width, p.y() * kInputResolution / intr.height};
}

/// Largest stretch factor from the network frame to the image.
inline double network_to_image_scale(const CameraIntrinsics& intr) {
  return std::max(intr.width, intr.height) / static_cast<double>(kInputResolution);
}

/// Best detection after NMS, or nullopt when nothing survives.
inline std::optional<DetectionBox> best_detection(std::span<const ScaleTensor> det_tensors,
                                                  const InferOptions& opt = {}) {
  const auto scales = default_scales();
  std::vector<DetectionBox> boxes;
  for (const auto& t : det_tensors) {
    const int s = scale_index_for_grid(t.grid_size);
    if (s < 0)
      throw Error(ErrorCode::kShapeMismatch, "no anchor set for grid size " + std::to_string(t.grid_size));
    auto decoded = decode_boxes(t, scales[s].anchors, opt.score_threshold, kNumClasses, s);
    boxes.insert(boxes.end(), std::make_move_iterator(decoded.begin()),
                 std::make_move_iterator(decoded.end()));
  }
  auto kept = nms(std::move(boxes), opt.iou_threshold, opt.score_threshold);
  if (kept.empty()) return std::nullopt;
  return kept.front();
}

/// Keypoint candidates of all scales, filtered and reduced to correspondences
/// in image pixels. Throws NoDetection when no box survives NMS.
inline std::vector<Correspondence> build_correspondences(std::span<const ScaleTensor> det_tensors,
                                                         std::span<const ScaleTensor> kp_tensors,
                                                         const CameraIntrinsics& intr,
                                                         const ObjectModel& model,
                                                         const InferOptions& opt = {},
                                                         InferTrace* trace = nullptr) {
  const auto box = best_detection(det_tensors, opt);
  if (trace) trace->box = box;
  if (!box) throw Error(ErrorCode::kNoDetection, "no detection survives NMS");

  std::vector<KeypointCandidate> cands;
  for (const auto& t : kp_tensors) {
    const int s = scale_index_for_grid(t.grid_size);
    auto decoded = decode_keypoints(t, s < 0 ? 0 : s);
    cands.insert(cands.end(), decoded.begin(), decoded.end());
  }
  canonicalize(cands);
  if (trace) trace->decoded = cands.size();

  cands = filter_in_box(cands, *box);
  if (trace) trace->in_box = cands.size();
  cands = prune_clusters(cands, kInputResolution, opt.cluster_factor);
  if (trace) trace->clustered = cands.size();
  cands = filter_confidence(cands, opt.confidence_threshold);
  if (trace) trace->confident = cands.size();
  cands = select_top_k(cands, opt.top_k);

  std::vector<Correspondence> corrs;
  corrs.reserve(cands.size());
  for (const auto& c : cands)
    corrs.push_back({model.corners[c.keypoint], network_to_image(c.pixel, intr), c.confidence, c.keypoint});
  if (trace) trace->correspondences = corrs;
  return corrs;
}

/// decode -> NMS -> box/cluster/confidence filters -> top-k -> RANSAC-PnP.
/// The inlier threshold in `opt.ransac` is in network pixels and is scaled
/// to the image before solving.
inline PoseEstimate infer_pose(std::span<const ScaleTensor> det_tensors,
                               std::span<const ScaleTensor> kp_tensors, const CameraIntrinsics& intr,
                               const ObjectModel& model, const InferOptions& opt = {},
                               InferTrace* trace = nullptr) {
  const auto corrs = build_correspondences(det_tensors, kp_tensors, intr, model, opt, trace);
  RansacParams params = opt.ransac;
  params.inlier_threshold *= network_to_image_scale(intr);
  return estimate_pose(corrs, intr, params);
}

inline PoseEstimate infer_pose(const FrameTensors& frame, const CameraIntrinsics& intr,
                               const ObjectModel& model, const InferOptions& opt = {},
                               InferTrace* trace = nullptr) {
  return infer_pose(frame.detection, frame.keypoints, intr, model, opt, trace);
}

}  // namespace durl
