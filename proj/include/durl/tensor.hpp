#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "durl/error.hpp"
#include "durl/math.hpp"

namespace durl {

inline constexpr int kInputResolution = 416;
inline constexpr int kNumKeypoints = 8;
inline constexpr int kKeypointChannels = 3 * kNumKeypoints;  // (dx, dy, logit) per keypoint
inline constexpr int kAnchorsPerScale = 3;
inline constexpr int kNumClasses = 1;
inline constexpr int kBoxFields = 5;  // x, y, w, h, objectness

constexpr int detection_channels(int anchors = kAnchorsPerScale, int classes = kNumClasses) {
  return anchors * (kBoxFields + classes);
}

/// One S x S x D grid of raw network outputs, cell-major and channel-last:
/// value(row, col, ch) lives at (row * S + col) * D + ch.
struct ScaleTensor {
  int grid_size = 0;
  int channels = 0;
  std::vector<double> values;

  static ScaleTensor filled(int grid_size, int channels, double value = 0.0) {
    return {grid_size, channels,
            std::vector<double>(static_cast<std::size_t>(grid_size) * grid_size * channels, value)};
  }

  double stride() const { return static_cast<double>(kInputResolution) / grid_size; }

  std::size_t index(int row, int col, int ch) const {
    return (static_cast<std::size_t>(row) * grid_size + col) * channels + ch;
  }
  double at(int row, int col, int ch) const { return values[index(row, col, ch)]; }
  double& at(int row, int col, int ch) { return values[index(row, col, ch)]; }

  void validate() const {
    if (grid_size <= 0 || channels <= 0)
      throw Error(ErrorCode::kShapeMismatch, "grid size and channel count must be positive");
    if (kInputResolution % grid_size != 0)
      throw Error(ErrorCode::kShapeMismatch,
                  "grid size " + std::to_string(grid_size) + " does not divide the input resolution");
    if (values.size() != static_cast<std::size_t>(grid_size) * grid_size * channels)
      throw Error(ErrorCode::kShapeMismatch, "value count does not match S*S*D");
  }
};

/// Detection and keypoint streams of one frame, coarsest scale first.
struct FrameTensors {
  std::vector<ScaleTensor> detection;
  std::vector<ScaleTensor> keypoints;
};

struct Anchor {
  double width = 0.0;
  double height = 0.0;
};

struct ScaleConfig {
  int grid_size = 0;
  std::array<Anchor, kAnchorsPerScale> anchors{};

  double stride() const { return static_cast<double>(kInputResolution) / grid_size; }
};

/// The nine COCO k-means anchors, largest on the coarsest grid.
inline std::array<ScaleConfig, 3> default_scales() {
  return {{
      {13, {{{116, 90}, {156, 198}, {373, 326}}}},
      {26, {{{30, 61}, {62, 45}, {59, 119}}}},
      {52, {{{10, 13}, {16, 30}, {33, 23}}}},
  }};
}

/// Index into `default_scales()` for a grid size, or -1.
inline int scale_index_for_grid(int grid_size) {
  const auto scales = default_scales();
  for (std::size_t i = 0; i < scales.size(); ++i)
    if (scales[i].grid_size == grid_size) return static_cast<int>(i);
  return -1;
}

struct GridCell {
  int row = 0;
  int col = 0;
  int scale = 0;

  auto operator<=>(const GridCell&) const = default;
};

struct DetectionBox {
  double bx = 0.0;  // centre, input-image pixels
  double by = 0.0;
  double bw = 0.0;
  double bh = 0.0;
  double objectness = 0.0;
  std::vector<double> class_scores;
  // Provenance of the prediction; not used by the geometry.
  GridCell cell{};
  int anchor = 0;

  double class_score() const {
    return class_scores.empty() ? 1.0 : *std::max_element(class_scores.begin(), class_scores.end());
  }
  /// Class-specific confidence: objectness times the best class probability.
  double score() const { return objectness * class_score(); }

  double left() const { return bx - 0.5 * bw; }
  double right() const { return bx + 0.5 * bw; }
  double top() const { return by - 0.5 * bh; }
  double bottom() const { return by + 0.5 * bh; }

  bool contains(const Vec2& p) const {
    return std::abs(p.x() - bx) <= 0.5 * bw && std::abs(p.y() - by) <= 0.5 * bh;
  }
};

struct KeypointCandidate {
  int keypoint = 0;  // model corner index, 0..7
  GridCell cell{};
  double stride = 0.0;
  Vec2 pixel = Vec2::Zero();  // input-image pixels
  double confidence = 0.0;

  Vec2 cell_center() const { return {(cell.col + 0.5) * stride, (cell.row + 0.5) * stride}; }
  auto canonical_key() const { return std::tie(cell.scale, cell.row, cell.col, keypoint); }
};

/// Restores (scale, row, col, keypoint) order.
inline void canonicalize(std::vector<KeypointCandidate>& cands) {
  std::sort(cands.begin(), cands.end(), [](const auto& a, const auto& b) {
    return a.canonical_key() < b.canonical_key();
  });
}

// ---------------------------------------------------------------------------

/// Box centre and size from raw coordinates (p_x, p_y, p_w, p_h) predicted
/// by cell (col, row) with the given anchor.
struct DecodedBox {
  double bx, by, bw, bh;
};

inline DecodedBox decode_box_encoding(const std::array<double, 4>& p, const Anchor& anchor, int col,
                                      int row, double stride) {
  return {(sigmoid(p[0]) + col) * stride, (sigmoid(p[1]) + row) * stride,
          anchor.width * std::exp(p[2]), anchor.height * std::exp(p[3])};
}

/// Decodes every (cell, anchor) slot of a detection tensor and keeps those
/// whose class-specific score reaches `score_threshold`.
inline std::vector<DetectionBox> decode_boxes(const ScaleTensor& t, std::span<const Anchor> anchors,
                                              double score_threshold, int num_classes = kNumClasses,
                                              int scale_index = 0) {
  t.validate();
  const int per_anchor = kBoxFields + num_classes;
  if (anchors.empty() || t.channels != static_cast<int>(anchors.size()) * per_anchor)
    throw Error(ErrorCode::kShapeMismatch,
                "detection tensor has " + std::to_string(t.channels) + " channels, expected " +
                    std::to_string(anchors.size() * per_anchor));
  const double stride = t.stride();
  std::vector<DetectionBox> boxes;
  for (int row = 0; row < t.grid_size; ++row) {
    for (int col = 0; col < t.grid_size; ++col) {
      for (std::size_t a = 0; a < anchors.size(); ++a) {
        const int base = static_cast<int>(a) * per_anchor;
        DetectionBox box;
        box.objectness = sigmoid(t.at(row, col, base + 4));
        box.class_scores.resize(num_classes);
        for (int k = 0; k < num_classes; ++k)
          box.class_scores[k] = sigmoid(t.at(row, col, base + kBoxFields + k));
        if (box.score() < score_threshold) continue;
        const auto d = decode_box_encoding({t.at(row, col, base), t.at(row, col, base + 1),
                                            t.at(row, col, base + 2), t.at(row, col, base + 3)},
                                           anchors[a], col, row, stride);
        box.bx = d.bx;
        box.by = d.by;
        box.bw = d.bw;
        box.bh = d.bh;
        box.cell = {row, col, scale_index};
        box.anchor = static_cast<int>(a);
        boxes.push_back(std::move(box));
      }
    }
  }
  return boxes;
}

inline double iou(const DetectionBox& a, const DetectionBox& b) {
  const double w = std::min(a.right(), b.right()) - std::max(a.left(), b.left());
  const double h = std::min(a.bottom(), b.bottom()) - std::max(a.top(), b.top());
  if (w <= 0.0 || h <= 0.0) return 0.0;
  const double inter = w * h;
  const double uni = a.bw * a.bh + b.bw * b.bh - inter;
  return uni > 0.0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

/// Ordering used by NMS: score, then bx, then by, all descending. Size
/// breaks any remaining tie so the result never depends on input order.
inline bool nms_precedes(const DetectionBox& a, const DetectionBox& b) {
  return std::make_tuple(a.score(), a.bx, a.by, a.bw, a.bh) >
         std::make_tuple(b.score(), b.bx, b.by, b.bw, b.bh);
}

/// Greedy non-maximum suppression. Boxes below `score_threshold` are
/// discarded first; a box survives when its IOU with every higher-ranked
/// survivor is at most `iou_threshold`.
inline std::vector<DetectionBox> nms(std::vector<DetectionBox> boxes, double iou_threshold = 0.4,
                                     double score_threshold = 0.3) {
  std::erase_if(boxes, [&](const DetectionBox& b) { return b.score() < score_threshold; });
  std::stable_sort(boxes.begin(), boxes.end(), nms_precedes);
  std::vector<DetectionBox> kept;
  for (auto& box : boxes) {
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const DetectionBox& k) {
      return iou(k, box) > iou_threshold;
    });
    if (!suppressed) kept.push_back(std::move(box));
  }
  return kept;
}

/// Decodes per-cell keypoint votes. The pixel for keypoint i of cell c is
/// (c + f_i(c)) * stride with unbounded offsets f_i in cell units.
inline std::vector<KeypointCandidate> decode_keypoints(const ScaleTensor& t, int scale_index = 0) {
  t.validate();
  if (t.channels != kKeypointChannels)
    throw Error(ErrorCode::kShapeMismatch, "keypoint tensor has " + std::to_string(t.channels) +
                                               " channels, expected " +
                                               std::to_string(kKeypointChannels));
  const double stride = t.stride();
  std::vector<KeypointCandidate> out;
  out.reserve(static_cast<std::size_t>(t.grid_size) * t.grid_size * kNumKeypoints);
  for (int row = 0; row < t.grid_size; ++row) {
    for (int col = 0; col < t.grid_size; ++col) {
      for (int i = 0; i < kNumKeypoints; ++i) {
        KeypointCandidate c;
        c.keypoint = i;
        c.cell = {row, col, scale_index};
        c.stride = stride;
        c.pixel = Vec2((col + t.at(row, col, 3 * i)) * stride, (row + t.at(row, col, 3 * i + 1)) * stride);
        c.confidence = sigmoid(t.at(row, col, 3 * i + 2));
        out.push_back(c);
      }
    }
  }
  return out;
}

}  // namespace durl
