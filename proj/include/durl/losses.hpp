#pragma once

#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "durl/error.hpp"
#include "durl/math.hpp"
#include "durl/tensor.hpp"

/// Reference implementations of the training losses. Keypoint residuals
/// live in grid-cell units of the scale they are predicted on, so the
/// confidence sharpness `alpha` is per cell, not per pixel.
namespace durl::losses {

struct LossWeights {
  double alpha = 2.0;
  double lambda_off = 1.0;
  double lambda_conf_obj = 5.0;
  double lambda_conf_noobj = 0.1;
};

// ---------------------------------------------------------------------------
// Box encoding

/// Raw coordinates (p_x, p_y, p_w, p_h) that decode to `box` from cell
/// (col, row). The centre must lie strictly inside the cell.
inline std::array<double, 4> invert_box_encoding(const DetectionBox& box, const Anchor& anchor,
                                                 int col, int row, double stride) {
  const double fx = box.bx / stride - col;
  const double fy = box.by / stride - row;
  if (!(fx > 0.0 && fx < 1.0 && fy > 0.0 && fy < 1.0))
    throw Error(ErrorCode::kCenterOutsideCell, "box centre is not strictly inside the cell");
  if (!(box.bw > 0.0 && box.bh > 0.0) || !(anchor.width > 0.0 && anchor.height > 0.0))
    throw Error(ErrorCode::kInvalidArgument, "box and anchor sizes must be positive");
  return {logit(fx), logit(fy), std::log(box.bw / anchor.width), std::log(box.bh / anchor.height)};
}

// ---------------------------------------------------------------------------
// Keypoint regression

/// Per-cell prediction of the keypoint stream, in cell units.
struct CellPrediction {
  Vec2 cell = Vec2::Zero();  // (col, row) of the cell's top-left corner
  std::array<Vec2, kNumKeypoints> offsets{};
  std::array<double, kNumKeypoints> confidences{};
};

/// c + f_i(c) - g_i.
inline Vec2 keypoint_residual(const Vec2& cell, const Vec2& offset, const Vec2& ground_truth) {
  return cell + offset - ground_truth;
}

/// exp(-alpha * ||residual||_2), in (0, 1].
inline double confidence_target(const Vec2& residual, double alpha) {
  return std::exp(-alpha * residual.norm());
}

inline std::vector<Vec2> residuals(std::span<const CellPrediction> cells,
                                   const std::array<Vec2, kNumKeypoints>& ground_truth) {
  std::vector<Vec2> out;
  out.reserve(cells.size() * kNumKeypoints);
  for (const auto& c : cells)
    for (int i = 0; i < kNumKeypoints; ++i)
      out.push_back(keypoint_residual(c.cell, c.offsets[i], ground_truth[i]));
  return out;
}

inline std::vector<double> confidences(std::span<const CellPrediction> cells) {
  std::vector<double> out;
  out.reserve(cells.size() * kNumKeypoints);
  for (const auto& c : cells) out.insert(out.end(), c.confidences.begin(), c.confidences.end());
  return out;
}

/// Sum of L1 norms of the residuals.
inline double offset_loss(std::span<const Vec2> res) {
  double sum = 0.0;
  for (const auto& r : res) sum += r.lpNorm<1>();
  return sum;
}

/// Sum of |v - exp(-alpha ||residual||_2)|.
inline double confidence_loss(std::span<const double> v, std::span<const Vec2> res, double alpha) {
  if (v.size() != res.size())
    throw Error(ErrorCode::kShapeMismatch, "confidence and residual counts differ");
  double sum = 0.0;
  for (std::size_t k = 0; k < v.size(); ++k) sum += std::abs(v[k] - confidence_target(res[k], alpha));
  return sum;
}

/// Confidence loss of cells outside the object box, whose target is zero.
inline double background_confidence_loss(std::span<const double> v) {
  double sum = 0.0;
  for (double x : v) sum += std::abs(x);
  return sum;
}

/// lambda_off * L_off + lambda_conf * L_conf, with the object and
/// background confidence terms weighted separately.
inline double pose_regression_loss(double offset, double conf_obj, double conf_noobj = 0.0,
                                   const LossWeights& w = {}) {
  return w.lambda_off * offset + w.lambda_conf_obj * conf_obj + w.lambda_conf_noobj * conf_noobj;
}

struct RegressionLoss {
  double offset = 0.0;
  double confidence_obj = 0.0;
  double confidence_noobj = 0.0;
  double total = 0.0;
};

inline RegressionLoss pose_regression_loss(std::span<const CellPrediction> in_box,
                                           std::span<const CellPrediction> background,
                                           const std::array<Vec2, kNumKeypoints>& ground_truth,
                                           const LossWeights& w = {}) {
  RegressionLoss out;
  const auto res = residuals(in_box, ground_truth);
  const auto v = confidences(in_box);
  out.offset = offset_loss(res);
  out.confidence_obj = confidence_loss(v, res, w.alpha);
  out.confidence_noobj = background_confidence_loss(confidences(background));
  out.total = pose_regression_loss(out.offset, out.confidence_obj, out.confidence_noobj, w);
  return out;
}

inline double total_loss(double detection, double regression) { return detection + regression; }

// Subgradients (sign(0) = 0 at the L1 kinks).

inline double sign(double x) { return static_cast<double>((x > 0.0) - (x < 0.0)); }

/// d L_off / d residual, which equals d L_off / d offset.
inline std::vector<Vec2> offset_loss_gradient(std::span<const Vec2> res) {
  std::vector<Vec2> g;
  g.reserve(res.size());
  for (const auto& r : res) g.emplace_back(sign(r.x()), sign(r.y()));
  return g;
}

struct ConfidenceGradient {
  std::vector<double> d_confidence;
  std::vector<Vec2> d_residual;
};

inline ConfidenceGradient confidence_loss_gradient(std::span<const double> v, std::span<const Vec2> res,
                                                   double alpha) {
  ConfidenceGradient g;
  for (std::size_t k = 0; k < v.size(); ++k) {
    const double norm = res[k].norm();
    const double target = std::exp(-alpha * norm);
    const double s = sign(v[k] - target);
    g.d_confidence.push_back(s);
    g.d_residual.push_back(norm > 0.0 ? Vec2(s * alpha * target * res[k] / norm) : Vec2::Zero());
  }
  return g;
}

// ---------------------------------------------------------------------------
// Detection

struct AnchorPrediction {
  std::array<double, 4> t{};  // raw (p_x, p_y, p_w, p_h)
  double objectness = 0.0;    // probability
  std::vector<double> class_probs;
};

struct AnchorTarget {
  bool responsible = false;
  bool ignore = false;  // excluded from the objectness term
  std::array<double, 4> t{};
  std::vector<double> class_targets;
};

struct DetectionLoss {
  double coordinates = 0.0;
  double objectness = 0.0;
  double classification = 0.0;
  double total = 0.0;
};

/// Binary cross-entropy with 0 * log(0) taken as 0.
inline double binary_cross_entropy(double p, double y) {
  constexpr double kEps = 1e-15;
  double loss = 0.0;
  if (y > 0.0) loss -= y * std::log(std::max(p, kEps));
  if (y < 1.0) loss -= (1.0 - y) * std::log(std::max(1.0 - p, kEps));
  return loss;
}

/// Squared coordinate error on responsible anchors, plus cross-entropy on
/// objectness (all non-ignored anchors) and class scores (responsible ones).
inline DetectionLoss detection_loss(std::span<const AnchorPrediction> preds,
                                    std::span<const AnchorTarget> targets) {
  if (preds.size() != targets.size())
    throw Error(ErrorCode::kShapeMismatch, "prediction and target counts differ");
  DetectionLoss out;
  for (std::size_t k = 0; k < preds.size(); ++k) {
    const auto& p = preds[k];
    const auto& t = targets[k];
    if (t.responsible) {
      for (int j = 0; j < 4; ++j) out.coordinates += (p.t[j] - t.t[j]) * (p.t[j] - t.t[j]);
      if (p.class_probs.size() != t.class_targets.size())
        throw Error(ErrorCode::kShapeMismatch, "class vector sizes differ");
      for (std::size_t c = 0; c < p.class_probs.size(); ++c)
        out.classification += binary_cross_entropy(p.class_probs[c], t.class_targets[c]);
    }
    if (!t.ignore) out.objectness += binary_cross_entropy(p.objectness, t.responsible ? 1.0 : 0.0);
  }
  out.total = out.coordinates + out.objectness + out.classification;
  return out;
}

/// IOU of two boxes sharing a centre.
inline double shape_iou(double w1, double h1, double w2, double h2) {
  const double inter = std::min(w1, w2) * std::min(h1, h2);
  return inter / (w1 * h1 + w2 * h2 - inter);
}

/// Anchor targets for one ground-truth box (network pixels), ordered
/// (scale, row, col, anchor) over `scales`. The anchor whose shape best
/// matches the box is responsible at the cell holding the box centre;
/// other anchors at their own centre cell with shape IOU above
/// `ignore_threshold` are ignored.
inline std::vector<AnchorTarget> build_detection_targets(const DetectionBox& gt,
                                                         std::span<const ScaleConfig> scales,
                                                         double ignore_threshold = 0.5) {
  int best_scale = 0, best_anchor = 0;
  double best_iou = -1.0;
  for (std::size_t s = 0; s < scales.size(); ++s)
    for (int a = 0; a < kAnchorsPerScale; ++a) {
      const double v = shape_iou(gt.bw, gt.bh, scales[s].anchors[a].width, scales[s].anchors[a].height);
      if (v > best_iou) {
        best_iou = v;
        best_scale = static_cast<int>(s);
        best_anchor = a;
      }
    }

  std::vector<AnchorTarget> out;
  for (std::size_t s = 0; s < scales.size(); ++s) {
    const auto& sc = scales[s];
    const double stride = sc.stride();
    const int ccol = static_cast<int>(std::floor(gt.bx / stride));
    const int crow = static_cast<int>(std::floor(gt.by / stride));
    for (int row = 0; row < sc.grid_size; ++row)
      for (int col = 0; col < sc.grid_size; ++col)
        for (int a = 0; a < kAnchorsPerScale; ++a) {
          AnchorTarget t;
          t.class_targets.assign(kNumClasses, 0.0);
          if (row == crow && col == ccol) {
            const auto& anchor = sc.anchors[a];
            if (static_cast<int>(s) == best_scale && a == best_anchor) {
              t.responsible = true;
              t.t = invert_box_encoding(gt, anchor, col, row, stride);
              t.class_targets.assign(kNumClasses, 1.0);
            } else if (shape_iou(gt.bw, gt.bh, anchor.width, anchor.height) > ignore_threshold) {
              t.ignore = true;
            }
          }
          out.push_back(std::move(t));
        }
  }
  return out;
}

/// Reads anchor predictions out of detection tensors in the same
/// (scale, row, col, anchor) order as `build_detection_targets`.
inline std::vector<AnchorPrediction> anchor_predictions(std::span<const ScaleTensor> tensors,
                                                        int num_classes = kNumClasses) {
  std::vector<AnchorPrediction> out;
  const int per_anchor = kBoxFields + num_classes;
  for (const auto& t : tensors) {
    t.validate();
    if (t.channels % per_anchor != 0) throw Error(ErrorCode::kShapeMismatch, "bad detection channels");
    const int anchors = t.channels / per_anchor;
    for (int row = 0; row < t.grid_size; ++row)
      for (int col = 0; col < t.grid_size; ++col)
        for (int a = 0; a < anchors; ++a) {
          const int base = a * per_anchor;
          AnchorPrediction p;
          for (int j = 0; j < 4; ++j) p.t[j] = t.at(row, col, base + j);
          p.objectness = sigmoid(t.at(row, col, base + 4));
          for (int c = 0; c < num_classes; ++c)
            p.class_probs.push_back(sigmoid(t.at(row, col, base + kBoxFields + c)));
          out.push_back(std::move(p));
        }
  }
  return out;
}

}  // namespace durl::losses
