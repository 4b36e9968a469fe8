#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "durl/error.hpp"
#include "durl/eval.hpp"
#include "durl/geometry.hpp"
#include "durl/refine.hpp"
#include "durl/synthgen.hpp"
#include "durl/tensor.hpp"

namespace durl::io {

using json = nlohmann::json;
namespace fs = std::filesystem;

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

inline json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kFormat, what + ": " + e.what());
  }
}

inline json read_json(const fs::path& path) { return parse_json(read_text(path), path.string()); }

/// Runs `fn`, turning JSON type/key errors into Format errors.
template <typename Fn>
auto guarded(const std::string& what, Fn&& fn) {
  try {
    return fn();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kFormat, what + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Binary tensor files: "DURL", u16 version, u8 scale count, then per scale
// u16 S, u16 D and S*S*D little-endian f32 values (cell-major, channel-last).

inline constexpr std::array<char, 4> kTensorMagic{'D', 'U', 'R', 'L'};
inline constexpr std::uint16_t kTensorVersion = 1;

namespace detail {

inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

inline void put_f32(std::string& out, float f) {
  const auto bits = std::bit_cast<std::uint32_t>(f);
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<char>((bits >> (8 * k)) & 0xff));
}

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}

  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw Error(ErrorCode::kFormat, "tensor file truncated");
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }
  std::uint16_t u16() {
    const std::uint16_t lo = u8();
    return static_cast<std::uint16_t>(lo | (u8() << 8));
  }
  float f32() {
    std::uint32_t bits = 0;
    for (int k = 0; k < 4; ++k) bits |= static_cast<std::uint32_t>(u8()) << (8 * k);
    return std::bit_cast<float>(bits);
  }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Detection scales first, then keypoint scales.
inline std::vector<const ScaleTensor*> ordered_scales(const FrameTensors& f) {
  std::vector<const ScaleTensor*> all;
  for (const auto& t : f.detection) all.push_back(&t);
  for (const auto& t : f.keypoints) all.push_back(&t);
  return all;
}

/// Splits decoded scales into streams: D = 24 is a keypoint tensor.
inline FrameTensors split_streams(std::vector<ScaleTensor> scales) {
  FrameTensors f;
  for (auto& t : scales) (t.channels == kKeypointChannels ? f.keypoints : f.detection).push_back(std::move(t));
  return f;
}

inline std::string encode_tensor_binary(const FrameTensors& frame) {
  const auto scales = ordered_scales(frame);
  if (scales.size() > 255) throw Error(ErrorCode::kInvalidArgument, "too many scales");
  std::string out(kTensorMagic.begin(), kTensorMagic.end());
  detail::put_u16(out, kTensorVersion);
  out.push_back(static_cast<char>(scales.size()));
  for (const ScaleTensor* t : scales) {
    t->validate();
    if (t->grid_size > 0xffff || t->channels > 0xffff)
      throw Error(ErrorCode::kInvalidArgument, "tensor dimension exceeds u16");
    detail::put_u16(out, static_cast<std::uint16_t>(t->grid_size));
    detail::put_u16(out, static_cast<std::uint16_t>(t->channels));
    for (double v : t->values) detail::put_f32(out, static_cast<float>(v));
  }
  return out;
}

inline FrameTensors decode_tensor_binary(std::string_view data) {
  if (data.size() < 7 || std::memcmp(data.data(), kTensorMagic.data(), 4) != 0)
    throw Error(ErrorCode::kFormat, "missing DURL magic");
  detail::Reader rd(data.substr(4));
  const std::uint16_t version = rd.u16();
  if (version != kTensorVersion)
    throw Error(ErrorCode::kFormat, "unsupported tensor version " + std::to_string(version));
  const int count = rd.u8();
  std::vector<ScaleTensor> scales;
  for (int s = 0; s < count; ++s) {
    ScaleTensor t;
    t.grid_size = rd.u16();
    t.channels = rd.u16();
    if (t.grid_size == 0 || t.channels == 0) throw Error(ErrorCode::kFormat, "zero tensor dimension");
    const std::size_t n = static_cast<std::size_t>(t.grid_size) * t.grid_size * t.channels;
    rd.need(4 * n);
    t.values.resize(n);
    for (auto& v : t.values) v = rd.f32();
    try {
      t.validate();
    } catch (const Error& e) {
      throw Error(ErrorCode::kFormat, e.what());
    }
    scales.push_back(std::move(t));
  }
  if (rd.remaining() != 0) throw Error(ErrorCode::kFormat, "trailing bytes after last scale");
  return split_streams(std::move(scales));
}

inline void write_tensor_file(const fs::path& path, const FrameTensors& frame) {
  write_text(path, encode_tensor_binary(frame));
}

inline FrameTensors read_tensor_file(const fs::path& path) {
  const std::string data = read_text(path);
  try {
    return decode_tensor_binary(data);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

/// JSON mirror of the binary format, lossless in double precision.
inline json tensor_to_json(const FrameTensors& frame) {
  json scales = json::array();
  for (const ScaleTensor* t : ordered_scales(frame))
    scales.push_back({{"S", t->grid_size}, {"D", t->channels}, {"values", t->values}});
  return {{"format", "durl"}, {"version", kTensorVersion}, {"scales", scales}};
}

inline FrameTensors tensor_from_json(const json& j) {
  return guarded("tensor json", [&] {
    if (j.value("format", std::string{}) != "durl" || j.at("version").get<int>() != kTensorVersion)
      throw Error(ErrorCode::kFormat, "not a version-1 durl tensor document");
    std::vector<ScaleTensor> scales;
    for (const auto& s : j.at("scales")) {
      ScaleTensor t{s.at("S").get<int>(), s.at("D").get<int>(), s.at("values").get<std::vector<double>>()};
      try {
        t.validate();
      } catch (const Error& e) {
        throw Error(ErrorCode::kFormat, e.what());
      }
      scales.push_back(std::move(t));
    }
    return split_streams(std::move(scales));
  });
}

// ---------------------------------------------------------------------------
// Geometry documents

inline json vec_json(const Vec2& v) { return json::array({v.x(), v.y()}); }
inline json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

inline Vec2 vec2_from(const json& j) {
  if (!j.is_array() || j.size() != 2) throw Error(ErrorCode::kFormat, "expected a 2-vector");
  return {j[0].get<double>(), j[1].get<double>()};
}

inline Vec3 vec3_from(const json& j) {
  if (!j.is_array() || j.size() != 3) throw Error(ErrorCode::kFormat, "expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

/// Row-major, as three rows.
inline json rotation_json(const Mat3& r) {
  json rows = json::array();
  for (int i = 0; i < 3; ++i) rows.push_back({r(i, 0), r(i, 1), r(i, 2)});
  return rows;
}

/// Accepts three rows or nine row-major values.
inline Mat3 rotation_from(const json& j) {
  Mat3 r;
  if (j.is_array() && j.size() == 9) {
    for (int k = 0; k < 9; ++k) r(k / 3, k % 3) = j[k].get<double>();
  } else if (j.is_array() && j.size() == 3) {
    for (int i = 0; i < 3; ++i) r.row(i) = vec3_from(j[i]).transpose();
  } else {
    throw Error(ErrorCode::kFormat, "rotation must be 3x3 row-major");
  }
  return r;
}

inline json pose_json(const Pose& p) {
  return {{"rotation", rotation_json(p.rotation)}, {"translation", vec_json(p.translation)}};
}

inline Pose pose_from(const json& j) {
  return guarded("pose", [&] {
    Pose p{rotation_from(j.at("rotation")), vec3_from(j.at("translation"))};
    if (!p.is_valid(1e-6)) throw Error(ErrorCode::kFormat, "rotation is not orthonormal");
    return p;
  });
}

inline json intrinsics_json(const CameraIntrinsics& k) {
  return {{"fx", k.fx},       {"fy", k.fy},         {"cx", k.cx},  {"cy", k.cy},
          {"width", k.width}, {"height", k.height}, {"dist", k.dist}};
}

inline CameraIntrinsics intrinsics_from(const json& j) {
  return guarded("intrinsics", [&] {
    CameraIntrinsics k;
    k.fx = j.at("fx").get<double>();
    k.fy = j.at("fy").get<double>();
    k.cx = j.at("cx").get<double>();
    k.cy = j.at("cy").get<double>();
    k.width = j.at("width").get<int>();
    k.height = j.at("height").get<int>();
    if (j.contains("dist")) {
      const auto d = j.at("dist").get<std::vector<double>>();
      if (d.size() != 5) throw Error(ErrorCode::kFormat, "dist must have 5 coefficients");
      std::copy(d.begin(), d.end(), k.dist.begin());
    }
    try {
      k.validate();
    } catch (const Error& e) {
      throw Error(ErrorCode::kFormat, e.what());
    }
    return k;
  });
}

inline json model_json(const ObjectModel& m) {
  json corners = json::array();
  for (const auto& c : m.corners) corners.push_back(vec_json(c));
  return {{"name", m.name}, {"corners", corners}, {"diameter", m.diameter}};
}

/// Parses an object model, validating the diameter against the corners.
inline ObjectModel model_from(const json& j) {
  return guarded("object model", [&] {
    ObjectModel m;
    m.name = j.at("name").get<std::string>();
    const auto& corners = j.at("corners");
    if (!corners.is_array() || corners.size() != 8)
      throw Error(ErrorCode::kFormat, "object model needs exactly 8 corners");
    for (std::size_t i = 0; i < 8; ++i) m.corners[i] = vec3_from(corners[i]);
    m.diameter = j.at("diameter").get<double>();
    try {
      m.validate();
    } catch (const Error& e) {
      throw Error(ErrorCode::kFormat, e.what());
    }
    return m;
  });
}

// ---------------------------------------------------------------------------
// Ground truth, poses, reports

inline std::string frame_id(std::uint64_t index) {
  std::ostringstream ss;
  ss << std::setw(6) << std::setfill('0') << index;
  return ss.str();
}

inline json groundtruth_json(const std::string& frame, const synth::GroundTruth& gt) {
  json kps = json::array();
  for (const auto& k : gt.keypoints) kps.push_back(vec_json(k));
  return {{"frame", frame},
          {"pose", pose_json(gt.pose)},
          {"depth", gt.pose.translation.z()},
          {"keypoints", kps},
          {"box", {{"min", vec_json(gt.box_min)}, {"max", vec_json(gt.box_max)}}}};
}

struct GroundTruthRecord {
  std::string frame;
  synth::GroundTruth gt;
};

inline GroundTruthRecord groundtruth_from(const json& j) {
  return guarded("ground truth", [&] {
    GroundTruthRecord r;
    r.frame = j.at("frame").get<std::string>();
    r.gt.pose = pose_from(j.at("pose"));
    const auto& kps = j.at("keypoints");
    if (kps.size() != kNumKeypoints) throw Error(ErrorCode::kFormat, "ground truth needs 8 keypoints");
    for (int i = 0; i < kNumKeypoints; ++i) r.gt.keypoints[i] = vec2_from(kps[i]);
    r.gt.box_min = vec2_from(j.at("box").at("min"));
    r.gt.box_max = vec2_from(j.at("box").at("max"));
    return r;
  });
}

/// One NDJSON pose record.
struct PoseRecord {
  std::string frame;
  eval::FrameStatus status = eval::FrameStatus::kOk;
  std::optional<PoseEstimate> estimate;
};

inline json pose_record_json(const PoseRecord& r) {
  json j = {{"frame", r.frame}, {"status", eval::to_string(r.status)}};
  if (r.status == eval::FrameStatus::kOk && r.estimate) {
    j["rotation"] = rotation_json(r.estimate->pose.rotation);
    j["translation"] = vec_json(r.estimate->pose.translation);
    j["inliers"] = r.estimate->inlier_count;
    j["reproj_px"] = r.estimate->mean_reprojection_error;
  }
  return j;
}

inline PoseRecord pose_record_from(const json& j) {
  return guarded("pose record", [&] {
    PoseRecord r;
    r.frame = j.at("frame").get<std::string>();
    r.status = eval::status_from_string(j.at("status").get<std::string>());
    if (r.status == eval::FrameStatus::kOk) {
      PoseEstimate e;
      e.pose = pose_from(j);
      e.inlier_count = j.value("inliers", 0);
      e.mean_reprojection_error = j.value("reproj_px", 0.0);
      r.estimate = e;
    }
    return r;
  });
}

inline std::vector<PoseRecord> read_pose_ndjson(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::vector<PoseRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(pose_record_from(parse_json(line, path.string() + ":" + std::to_string(lineno))));
  }
  return out;
}

inline json quartiles_json(const eval::Quartiles& q) {
  return {{"min", q.min}, {"q1", q.q1}, {"median", q.median}, {"q3", q.q3}, {"max", q.max}};
}

inline json report_json(const eval::EvalReport& r) {
  json bins = json::array();
  for (const auto& b : r.bins)
    bins.push_back({{"lo", b.lo},
                    {"hi", b.hi},
                    {"frames", b.frames},
                    {"successes", b.successes},
                    {"translation_m", quartiles_json(b.translation)},
                    {"orientation_deg",
                     quartiles_json({rad2deg(b.orientation.min), rad2deg(b.orientation.q1),
                                     rad2deg(b.orientation.median), rad2deg(b.orientation.q3),
                                     rad2deg(b.orientation.max)})}});
  json j = {{"frames", r.frames},
            {"successes", r.successes},
            {"mean_translation_error_m", r.mean_translation_error},
            {"median_translation_error_m", r.median_translation_error},
            {"mean_orientation_error_rad", r.mean_orientation_error},
            {"median_orientation_error_rad", r.median_orientation_error},
            {"mean_orientation_error_deg", rad2deg(r.mean_orientation_error)},
            {"median_orientation_error_deg", rad2deg(r.median_orientation_error)},
            {"mean_roll_error_deg", rad2deg(r.mean_roll_error)},
            {"mean_pitch_error_deg", rad2deg(r.mean_pitch_error)},
            {"mean_yaw_error_deg", rad2deg(r.mean_yaw_error)},
            {"rep_10px_accuracy", r.rep_accuracy},
            {"add_0_1d_accuracy", r.add_accuracy},
            {"bins", bins}};
  j["fps"] = r.fps ? json(*r.fps) : json(nullptr);
  return j;
}

inline std::string records_csv(const std::vector<eval::EvalRecord>& records) {
  std::ostringstream ss;
  ss << std::setprecision(10);
  ss << "frame,status,gt_depth_m,translation_error_m,orientation_error_deg,roll_error_deg,"
        "pitch_error_deg,yaw_error_deg,rep_error_px,add_error_m,rep_accepted,add_accepted\n";
  for (const auto& r : records)
    ss << r.frame << ',' << eval::to_string(r.status) << ',' << r.gt_depth << ',' << r.translation_error
       << ',' << rad2deg(r.orientation_error) << ',' << rad2deg(r.roll_error) << ','
       << rad2deg(r.pitch_error) << ',' << rad2deg(r.yaw_error) << ',' << r.rep_error << ','
       << r.add_error << ',' << (r.rep_accepted ? 1 : 0) << ',' << (r.add_accepted ? 1 : 0) << '\n';
  return ss.str();
}

// ---------------------------------------------------------------------------
// Dataset directories: frames/NNNNNN.durl, gt/NNNNNN.json, manifest.json

inline json ranges_json(const synth::PoseRanges& r) {
  return {{"depth_m", {r.depth_min, r.depth_max}},
          {"roll_deg", {rad2deg(r.roll_min), rad2deg(r.roll_max)}},
          {"pitch_deg", {rad2deg(r.pitch_min), rad2deg(r.pitch_max)}},
          {"yaw_deg", {rad2deg(r.yaw_min), rad2deg(r.yaw_max)}},
          {"lateral_fraction", r.lateral_fraction},
          {"box_center_band", r.box_center_band},
          {"max_attempts", r.max_attempts}};
}

inline json noise_json(const synth::NoiseModel& n) {
  return {{"keypoint_noise_sigma_px", n.keypoint_noise_sigma},
          {"outlier_rate", n.outlier_rate},
          {"outlier_spread_px", n.outlier_spread},
          {"confidence_alpha", n.confidence_alpha},
          {"box_jitter_px", n.box_jitter},
          {"seed", n.rng_seed}};
}

struct Manifest {
  std::uint64_t count = 0;
  std::uint64_t seed = 0;
  CameraIntrinsics intrinsics;
  ObjectModel model;
  json raw;
};

inline fs::path tensor_path(const fs::path& dir, std::uint64_t index) {
  return dir / "frames" / (frame_id(index) + ".durl");
}

inline fs::path groundtruth_path(const fs::path& dir, std::uint64_t index) {
  return dir / "gt" / (frame_id(index) + ".json");
}

inline json manifest_json(std::uint64_t count, const CameraIntrinsics& intr, const ObjectModel& model,
                          const synth::PoseRanges& ranges, const synth::NoiseModel& noise,
                          const json& config) {
  return {{"format", "durl-dataset"},
          {"version", 1},
          {"count", count},
          {"seed", noise.rng_seed},
          {"intrinsics", intrinsics_json(intr)},
          {"model", model_json(model)},
          {"ranges", ranges_json(ranges)},
          {"noise", noise_json(noise)},
          {"config", config}};
}

inline Manifest read_manifest(const fs::path& dir) {
  const json j = read_json(dir / "manifest.json");
  return guarded("manifest", [&] {
    if (j.value("format", std::string{}) != "durl-dataset")
      throw Error(ErrorCode::kFormat, "manifest is not a durl dataset");
    Manifest m;
    m.count = j.at("count").get<std::uint64_t>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.intrinsics = intrinsics_from(j.at("intrinsics"));
    m.model = model_from(j.at("model"));
    m.raw = j;
    return m;
  });
}

/// Generates and writes `count` frames. Each frame depends only on (seed,
/// index), so any thread count yields identical files.
inline void write_dataset(const fs::path& dir, std::uint64_t count, const CameraIntrinsics& intr,
                          const ObjectModel& model, const synth::PoseRanges& ranges,
                          const synth::NoiseModel& noise, const json& config, unsigned threads = 1) {
  std::error_code ec;
  fs::create_directories(dir / "frames", ec);
  fs::create_directories(dir / "gt", ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot create " + dir.string() + ": " + ec.message());
  parallel_for(count, threads, [&](std::size_t i) {
    const auto frame = synth::generate_frame(i, ranges, noise, model, intr);
    write_tensor_file(tensor_path(dir, i), frame.tensors);
    write_text(groundtruth_path(dir, i), groundtruth_json(frame_id(i), frame.gt).dump(2) + "\n");
  });
  write_text(dir / "manifest.json", manifest_json(count, intr, model, ranges, noise, config).dump(2) + "\n");
}

}  // namespace durl::io
