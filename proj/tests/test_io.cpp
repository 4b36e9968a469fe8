#include <gtest/gtest.h>

#include <random>

#include "durl/io.hpp"
#include "oracles.hpp"
#include "temp_dir.hpp"

namespace durl::io {
namespace {

using durl::testing::TempDir;

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::kInvalidArgument;
}

FrameTensors small_frame() {
  FrameTensors f;
  ScaleTensor det = ScaleTensor::filled(2, 18);
  ScaleTensor kp = ScaleTensor::filled(2, 24);
  for (std::size_t i = 0; i < det.values.size(); ++i) det.values[i] = 0.25 * static_cast<double>(i) - 3;
  for (std::size_t i = 0; i < kp.values.size(); ++i) kp.values[i] = -0.5 * static_cast<double>(i);
  f.detection.push_back(det);
  f.keypoints.push_back(kp);
  return f;
}

TEST(TensorBinary, HeaderLayout) {
  const std::string bytes = encode_tensor_binary(small_frame());
  ASSERT_GE(bytes.size(), 15u);
  EXPECT_EQ(bytes.substr(0, 4), "DURL");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 1);
  EXPECT_EQ(static_cast<unsigned char>(bytes[5]), 0);
  EXPECT_EQ(static_cast<unsigned char>(bytes[6]), 2);
  EXPECT_EQ(static_cast<unsigned char>(bytes[7]), 2);   // S
  EXPECT_EQ(static_cast<unsigned char>(bytes[9]), 18);  // D
  EXPECT_EQ(bytes.size(), 7u + 4 + 4 * 2 * 2 * 18 + 4 + 4 * 2 * 2 * 24);
  // first value -3.0f, little-endian
  EXPECT_EQ(static_cast<unsigned char>(bytes[11]), 0x00);
  EXPECT_EQ(static_cast<unsigned char>(bytes[14]), 0xc0);
}

TEST(TensorBinary, RoundTripAtFloatPrecision) {
  const auto frame = synth::generate_frame(3, {}, {.keypoint_noise_sigma = 2, .rng_seed = 1},
                                           default_model(), default_intrinsics());
  const auto back = decode_tensor_binary(encode_tensor_binary(frame.tensors));
  ASSERT_EQ(back.detection.size(), 3u);
  ASSERT_EQ(back.keypoints.size(), 3u);
  for (int s = 0; s < 3; ++s) {
    EXPECT_EQ(back.detection[s].grid_size, frame.tensors.detection[s].grid_size);
    for (std::size_t i = 0; i < back.keypoints[s].values.size(); ++i)
      ASSERT_EQ(back.keypoints[s].values[i], static_cast<float>(frame.tensors.keypoints[s].values[i]));
  }
}

TEST(TensorBinary, MalformedInputsAreFormatErrors) {
  const std::string good = encode_tensor_binary(small_frame());
  EXPECT_EQ(code_of([&] { decode_tensor_binary("XURL" + good.substr(4)); }), ErrorCode::kFormat);
  std::string v2 = good;
  v2[4] = 2;
  EXPECT_EQ(code_of([&] { decode_tensor_binary(v2); }), ErrorCode::kFormat);
  EXPECT_EQ(code_of([&] { decode_tensor_binary(good.substr(0, good.size() - 1)); }), ErrorCode::kFormat);
  EXPECT_EQ(code_of([&] { decode_tensor_binary(good + "x"); }), ErrorCode::kFormat);
  EXPECT_EQ(code_of([&] { decode_tensor_binary("DUR"); }), ErrorCode::kFormat);
  std::string zero = good;
  zero[7] = 0;
  EXPECT_EQ(code_of([&] { decode_tensor_binary(zero); }), ErrorCode::kFormat);
}

TEST(TensorFile, WriteReadAndMissingFile) {
  TempDir dir("tensor");
  write_tensor_file(dir / "a.durl", small_frame());
  const auto back = read_tensor_file(dir / "a.durl");
  EXPECT_EQ(back.detection[0].values, small_frame().detection[0].values);
  EXPECT_EQ(code_of([&] { read_tensor_file(dir / "missing.durl"); }), ErrorCode::kIo);
}

TEST(TensorJson, LosslessRoundTrip) {
  auto f = small_frame();
  f.keypoints[0].values[3] = 0.1 + 1e-17 + std::acos(-1.0);
  const auto back = tensor_from_json(parse_json(tensor_to_json(f).dump(), "t"));
  EXPECT_EQ(back.keypoints[0].values, f.keypoints[0].values);
  EXPECT_EQ(back.detection[0].values, f.detection[0].values);
  auto bad = tensor_to_json(f);
  bad["scales"][0]["values"].erase(0);
  EXPECT_EQ(code_of([&] { tensor_from_json(bad); }), ErrorCode::kFormat);
  EXPECT_EQ(code_of([&] { tensor_from_json(json{{"format", "other"}, {"version", 1}}); }), ErrorCode::kFormat);
}

TEST(Intrinsics, RoundTripAndValidation) {
  CameraIntrinsics k = default_intrinsics();
  k.dist = {0.1, -0.02, 0.001, 0.002, 0.0};
  const auto back = intrinsics_from(intrinsics_json(k));
  EXPECT_EQ(back.fx, k.fx);
  EXPECT_EQ(back.dist, k.dist);
  EXPECT_EQ(back.width, 640);
  auto j = intrinsics_json(k);
  j["fx"] = -1;
  EXPECT_EQ(code_of([&] { intrinsics_from(j); }), ErrorCode::kFormat);
  j = intrinsics_json(k);
  j["dist"] = {0.1, 0.2};
  EXPECT_EQ(code_of([&] { intrinsics_from(j); }), ErrorCode::kFormat);
  j.erase("cy");
  EXPECT_EQ(code_of([&] { intrinsics_from(j); }), ErrorCode::kFormat);
}

TEST(ObjectModelDoc, RoundTripAndDiameterCheck) {
  const auto m = default_model();
  const auto back = model_from(model_json(m));
  EXPECT_EQ(back.name, m.name);
  EXPECT_EQ(back.diameter, m.diameter);
  auto j = model_json(m);
  j["diameter"] = m.diameter * 1.01;
  EXPECT_EQ(code_of([&] { model_from(j); }), ErrorCode::kFormat);
  j = model_json(m);
  j["corners"].erase(7);
  EXPECT_EQ(code_of([&] { model_from(j); }), ErrorCode::kFormat);
}

TEST(PoseDoc, RowsAndFlatRotation) {
  const Mat3 r = euler_compose({0.1, 0.2, 0.3});
  const Pose p{r, Vec3(1, 2, 3)};
  const Pose back = pose_from(pose_json(p));
  EXPECT_EQ(back.rotation, r);
  json flat = pose_json(p);
  flat["rotation"] = json::array();
  for (int k = 0; k < 9; ++k) flat["rotation"].push_back(r(k / 3, k % 3));
  EXPECT_EQ(pose_from(flat).rotation, r);
  json skewed = pose_json({2.0 * r, Vec3::Zero()});
  EXPECT_EQ(code_of([&] { pose_from(skewed); }), ErrorCode::kFormat);
}

TEST(GroundTruthDoc, RoundTrip) {
  const auto f = synth::generate_frame(0, {}, {}, default_model(), default_intrinsics());
  const auto back = groundtruth_from(groundtruth_json(frame_id(0), f.gt));
  EXPECT_EQ(back.frame, "000000");
  EXPECT_EQ(back.gt.pose.translation, f.gt.pose.translation);
  EXPECT_EQ(back.gt.keypoints, f.gt.keypoints);
  EXPECT_EQ(back.gt.box_max, f.gt.box_max);
}

TEST(PoseRecords, NdjsonRoundTrip) {
  TempDir dir("ndjson");
  PoseEstimate e;
  e.pose = {euler_compose({0.3, 0.1, -0.2}), Vec3(0.1, 0.2, 1.4)};
  e.inlier_count = 40;
  e.mean_reprojection_error = 1.25;
  const PoseRecord ok{"000001", eval::FrameStatus::kOk, e};
  const PoseRecord miss{"000002", eval::FrameStatus::kNoDetection, std::nullopt};
  write_text(dir / "p.ndjson", pose_record_json(ok).dump() + "\n\n" + pose_record_json(miss).dump() + "\n");
  const auto recs = read_pose_ndjson(dir / "p.ndjson");
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_EQ(recs[0].estimate->pose.rotation, e.pose.rotation);
  EXPECT_EQ(recs[0].estimate->inlier_count, 40);
  EXPECT_EQ(recs[1].status, eval::FrameStatus::kNoDetection);
  EXPECT_FALSE(recs[1].estimate.has_value());
  EXPECT_FALSE(pose_record_json(miss).contains("rotation"));
  write_text(dir / "bad.ndjson", "{\"frame\": \"1\"\n");
  EXPECT_EQ(code_of([&] { read_pose_ndjson(dir / "bad.ndjson"); }), ErrorCode::kFormat);
}

TEST(Ids, SixDigitFrameIds) {
  EXPECT_EQ(frame_id(42), "000042");
  EXPECT_EQ(frame_id(123456), "123456");
}

TEST(Reports, JsonAndCsv) {
  std::vector<eval::EvalRecord> recs(3);
  for (int i = 0; i < 3; ++i) {
    recs[i].frame = frame_id(i);
    recs[i].gt_depth = 1.1;
    recs[i].orientation_error = deg2rad(2.0);
    recs[i].rep_accepted = true;
  }
  auto rep = eval::aggregate(recs);
  rep.fps = 250.0;
  const auto j = report_json(rep);
  EXPECT_EQ(j.at("frames"), 3);
  EXPECT_NEAR(j.at("mean_orientation_error_deg").get<double>(), 2.0, 1e-12);
  EXPECT_EQ(j.at("rep_10px_accuracy"), 1.0);
  EXPECT_EQ(j.at("fps"), 250.0);
  EXPECT_EQ(j.at("bins").size(), 6u);
  const std::string csv = records_csv(recs);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
  EXPECT_EQ(csv.rfind("frame,status,", 0), 0u);
}

TEST(Dataset, WriteReadAndThreadIndependence) {
  TempDir a("ds"), b("ds");
  const synth::NoiseModel noise{.keypoint_noise_sigma = 1, .outlier_rate = 0.1, .rng_seed = 5};
  write_dataset(a.path(), 6, default_intrinsics(), default_model(), {}, noise, json::object(), 1);
  write_dataset(b.path(), 6, default_intrinsics(), default_model(), {}, noise, json::object(), 3);
  const auto m = read_manifest(a.path());
  EXPECT_EQ(m.count, 6u);
  EXPECT_EQ(m.seed, 5u);
  EXPECT_EQ(m.model.name, default_model().name);
  for (std::uint64_t i = 0; i < 6; ++i) {
    EXPECT_EQ(read_text(tensor_path(a.path(), i)), read_text(tensor_path(b.path(), i)));
    EXPECT_EQ(read_text(groundtruth_path(a.path(), i)), read_text(groundtruth_path(b.path(), i)));
  }
  EXPECT_EQ(read_text(a / "manifest.json"), read_text(b / "manifest.json"));
  EXPECT_EQ(code_of([&] { read_manifest(a / "nowhere"); }), ErrorCode::kIo);
}

}  // namespace
}  // namespace durl::io
