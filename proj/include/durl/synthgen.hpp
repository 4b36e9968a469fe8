#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>

#include "durl/error.hpp"
#include "durl/geometry.hpp"
#include "durl/losses.hpp"
#include "durl/refine.hpp"
#include "durl/tensor.hpp"

/// Geometric ground-truth oracle: samples poses, projects the model and
/// writes prediction tensors that a perfect (or noisy) network would emit.
namespace durl::synth {

using Rng = std::mt19937_64;

struct PoseRanges {
  double depth_min = 0.75;  // meters
  double depth_max = 3.0;
  double roll_min = deg2rad(-50.0);
  double roll_max = deg2rad(50.0);
  double pitch_min = deg2rad(-70.0);
  double pitch_max = deg2rad(70.0);
  double yaw_min = deg2rad(-90.0);
  double yaw_max = deg2rad(90.0);
  /// The object origin projects uniformly into this central fraction of
  /// the image (per axis).
  double lateral_fraction = 0.8;
  /// Accepted samples keep the projected box centre inside this central
  /// fraction of the image.
  double box_center_band = 0.8;
  int max_attempts = 1000;

  void validate() const {
    if (!(depth_min > 0.0 && depth_max >= depth_min))
      throw Error(ErrorCode::kInvalidArgument, "depth range must be positive and ordered");
    if (roll_max < roll_min || pitch_max < pitch_min || yaw_max < yaw_min)
      throw Error(ErrorCode::kInvalidArgument, "angle ranges must be ordered");
    if (!(lateral_fraction >= 0.0 && lateral_fraction <= 1.0) ||
        !(box_center_band > 0.0 && box_center_band <= 1.0))
      throw Error(ErrorCode::kInvalidArgument, "image fractions must lie in [0, 1]");
  }
};

struct NoiseModel {
  double keypoint_noise_sigma = 0.0;  // network pixels
  double outlier_rate = 0.0;
  double outlier_spread = 100.0;  // network pixels, half-width of the uniform outlier square
  double confidence_alpha = 2.0;
  double box_jitter = 0.0;  // network pixels
  std::uint64_t rng_seed = 0;

  void validate() const {
    if (!(keypoint_noise_sigma >= 0.0) || !(box_jitter >= 0.0) || !(outlier_spread >= 0.0))
      throw Error(ErrorCode::kInvalidArgument, "noise magnitudes must be non-negative");
    if (!(outlier_rate >= 0.0 && outlier_rate < 1.0))
      throw Error(ErrorCode::kInvalidArgument, "outlier rate must lie in [0, 1)");
    if (!(confidence_alpha > 0.0)) throw Error(ErrorCode::kInvalidArgument, "alpha must be positive");
  }
};

inline constexpr double kConfidenceLogitClamp = 15.0;
inline constexpr double kBackgroundLogit = -12.0;
inline constexpr double kResponsibleLogit = 12.0;
inline constexpr double kSecondaryLogit = 8.0;

/// Independent stream for frame `index`, so frames can be generated in any
/// order or in parallel.
inline Rng frame_rng(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return Rng(seq);
}

inline double uniform(Rng& rng, double lo, double hi) {
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  return hi > lo ? lo + (hi - lo) * u : lo;
}

struct GroundTruth {
  Pose pose;
  std::array<Vec2, kNumKeypoints> keypoints{};
  Vec2 box_min = Vec2::Zero();
  Vec2 box_max = Vec2::Zero();

  DetectionBox box() const {
    DetectionBox b;
    b.bx = 0.5 * (box_min.x() + box_max.x());
    b.by = 0.5 * (box_min.y() + box_max.y());
    b.bw = box_max.x() - box_min.x();
    b.bh = box_max.y() - box_min.y();
    b.objectness = 1.0;
    b.class_scores.assign(kNumClasses, 1.0);
    return b;
  }
};

/// Projected corners and their axis-aligned hull, in image pixels.
inline GroundTruth render_groundtruth(const Pose& pose, const ObjectModel& model,
                                      const CameraIntrinsics& intr) {
  GroundTruth gt;
  gt.pose = pose;
  gt.box_min = Vec2::Constant(std::numeric_limits<double>::infinity());
  gt.box_max = -gt.box_min;
  for (int i = 0; i < kNumKeypoints; ++i) {
    gt.keypoints[i] = project(model.corners[i], pose, intr);
    gt.box_min = gt.box_min.cwiseMin(gt.keypoints[i]);
    gt.box_max = gt.box_max.cwiseMax(gt.keypoints[i]);
  }
  return gt;
}

inline GroundTruth to_network_frame(const GroundTruth& gt, const CameraIntrinsics& intr) {
  GroundTruth out = gt;
  for (auto& k : out.keypoints) k = image_to_network(k, intr);
  out.box_min = image_to_network(gt.box_min, intr);
  out.box_max = image_to_network(gt.box_max, intr);
  return out;
}

inline bool acceptable(const GroundTruth& gt, const CameraIntrinsics& intr, double band) {
  for (const auto& k : gt.keypoints)
    if (!(k.x() >= 0.0 && k.x() < intr.width && k.y() >= 0.0 && k.y() < intr.height)) return false;
  const Vec2 center = 0.5 * (gt.box_min + gt.box_max);
  const double mx = 0.5 * (1.0 - band) * intr.width, my = 0.5 * (1.0 - band) * intr.height;
  return center.x() >= mx && center.x() <= intr.width - mx && center.y() >= my &&
         center.y() <= intr.height - my;
}

/// Uniform pose within `ranges`, resampled until every corner projects
/// into the image and the box centre stays in the central band.
inline Pose sample_pose(const PoseRanges& ranges, const ObjectModel& model,
                        const CameraIntrinsics& intr, Rng& rng) {
  ranges.validate();
  for (int attempt = 0; attempt < ranges.max_attempts; ++attempt) {
    const double depth = uniform(rng, ranges.depth_min, ranges.depth_max);
    EulerAngles e;
    e.roll = uniform(rng, ranges.roll_min, ranges.roll_max);
    e.pitch = uniform(rng, ranges.pitch_min, ranges.pitch_max);
    e.yaw = uniform(rng, ranges.yaw_min, ranges.yaw_max);
    const double f = ranges.lateral_fraction;
    const double u = uniform(rng, 0.5 * (1.0 - f) * intr.width, 0.5 * (1.0 + f) * intr.width);
    const double v = uniform(rng, 0.5 * (1.0 - f) * intr.height, 0.5 * (1.0 + f) * intr.height);

    Pose pose;
    pose.rotation = euler_compose(e);
    pose.translation = depth * Vec3((u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0);
    bool in_front = true;
    for (const auto& c : model.corners) in_front &= pose.transform(c).z() > kMinDepth;
    if (!in_front) continue;
    if (acceptable(render_groundtruth(pose, model, intr), intr, ranges.box_center_band)) return pose;
  }
  throw Error(ErrorCode::kSamplingExhausted,
              "no in-frame pose after " + std::to_string(ranges.max_attempts) + " attempts");
}

/// Prediction tensors for a ground truth given in network pixels. The cell
/// holding the box centre carries an exact box encoding for every anchor
/// on every scale; keypoint cells inside the box vote for the (noisy)
/// corners with confidence logits matching exp(-alpha * residual).
inline FrameTensors encode_tensors(const GroundTruth& gt_network, const NoiseModel& noise, Rng& rng) {
  noise.validate();
  const auto scales = default_scales();
  std::normal_distribution<double> normal(0.0, 1.0);

  const DetectionBox truth = gt_network.box();
  DetectionBox box = truth;
  if (noise.box_jitter > 0.0) {
    box.bx += noise.box_jitter * normal(rng);
    box.by += noise.box_jitter * normal(rng);
    box.bw = std::max(1.0, box.bw + noise.box_jitter * normal(rng));
    box.bh = std::max(1.0, box.bh + noise.box_jitter * normal(rng));
  }

  int best_scale = 0, best_anchor = 0;
  double best_iou = -1.0;
  for (std::size_t s = 0; s < scales.size(); ++s)
    for (int a = 0; a < kAnchorsPerScale; ++a) {
      const double v = losses::shape_iou(box.bw, box.bh, scales[s].anchors[a].width,
                                         scales[s].anchors[a].height);
      if (v > best_iou) {
        best_iou = v;
        best_scale = static_cast<int>(s);
        best_anchor = a;
      }
    }

  FrameTensors out;
  const int per_anchor = kBoxFields + kNumClasses;
  for (std::size_t s = 0; s < scales.size(); ++s) {
    const auto& sc = scales[s];
    const double stride = sc.stride();

    ScaleTensor det = ScaleTensor::filled(sc.grid_size, detection_channels());
    for (int row = 0; row < sc.grid_size; ++row)
      for (int col = 0; col < sc.grid_size; ++col)
        for (int a = 0; a < kAnchorsPerScale; ++a) {
          det.at(row, col, a * per_anchor + 4) = kBackgroundLogit;
          for (int c = 0; c < kNumClasses; ++c) det.at(row, col, a * per_anchor + kBoxFields + c) = kBackgroundLogit;
        }
    const int col = std::clamp(static_cast<int>(std::floor(box.bx / stride)), 0, sc.grid_size - 1);
    const int row = std::clamp(static_cast<int>(std::floor(box.by / stride)), 0, sc.grid_size - 1);
    DetectionBox cell_box = box;
    // Keep the centre strictly inside the cell so the logit stays finite.
    constexpr double kEdge = 1e-9;
    cell_box.bx = std::clamp(box.bx, (col + kEdge) * stride, (col + 1 - kEdge) * stride);
    cell_box.by = std::clamp(box.by, (row + kEdge) * stride, (row + 1 - kEdge) * stride);
    for (int a = 0; a < kAnchorsPerScale; ++a) {
      const auto t = losses::invert_box_encoding(cell_box, sc.anchors[a], col, row, stride);
      const int base = a * per_anchor;
      for (int j = 0; j < 4; ++j) det.at(row, col, base + j) = t[j];
      const bool best = static_cast<int>(s) == best_scale && a == best_anchor;
      det.at(row, col, base + 4) = best ? kResponsibleLogit : kSecondaryLogit;
      for (int c = 0; c < kNumClasses; ++c) det.at(row, col, base + kBoxFields + c) = kResponsibleLogit;
    }
    out.detection.push_back(std::move(det));

    ScaleTensor kp = ScaleTensor::filled(sc.grid_size, kKeypointChannels);
    for (int r = 0; r < sc.grid_size; ++r) {
      for (int c = 0; c < sc.grid_size; ++c) {
        const Vec2 cell(c, r);
        const Vec2 center((c + 0.5) * stride, (r + 0.5) * stride);
        const bool inside = truth.contains(center);
        for (int i = 0; i < kNumKeypoints; ++i) {
          // Fixed draw count per vote, so the noise pattern for a seed does
          // not depend on the noise magnitudes.
          const double pick = uniform(rng, 0.0, 1.0);
          const double ux = uniform(rng, -1.0, 1.0), uy = uniform(rng, -1.0, 1.0);
          const double nx = normal(rng), ny = normal(rng);
          Vec2 target;
          double conf_logit;
          if (inside) {
            const Vec2& g = gt_network.keypoints[i];
            target = pick < noise.outlier_rate ? Vec2(g + noise.outlier_spread * Vec2(ux, uy))
                                               : Vec2(g + noise.keypoint_noise_sigma * Vec2(nx, ny));
            const Vec2 residual = (target - g) / stride;
            const double conf = losses::confidence_target(residual, noise.confidence_alpha);
            conf_logit = conf >= 1.0 ? kConfidenceLogitClamp : logit(conf);
          } else {
            target = Vec2(0.5 * (ux + 1.0) * kInputResolution, 0.5 * (uy + 1.0) * kInputResolution);
            conf_logit = 4.0 * (2.0 * pick - 1.0);
          }
          conf_logit = std::clamp(conf_logit, -kConfidenceLogitClamp, kConfidenceLogitClamp);
          const Vec2 offset = target / stride - cell;
          kp.at(r, c, 3 * i) = offset.x();
          kp.at(r, c, 3 * i + 1) = offset.y();
          kp.at(r, c, 3 * i + 2) = conf_logit;
        }
      }
    }
    out.keypoints.push_back(std::move(kp));
  }
  return out;
}

struct Frame {
  std::uint64_t index = 0;
  GroundTruth gt;  // image pixels
  FrameTensors tensors;
};

inline Frame generate_frame(std::uint64_t index, const PoseRanges& ranges, const NoiseModel& noise,
                            const ObjectModel& model, const CameraIntrinsics& intr) {
  Rng rng = frame_rng(noise.rng_seed, index);
  Frame f;
  f.index = index;
  f.gt = render_groundtruth(sample_pose(ranges, model, intr, rng), model, intr);
  f.tensors = encode_tensors(to_network_frame(f.gt, intr), noise, rng);
  return f;
}

}  // namespace durl::synth
