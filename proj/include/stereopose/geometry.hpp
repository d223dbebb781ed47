#pragma once

#include <string>
#include <vector>

namespace stereopose {

inline constexpr int kNumJoints = 21;

// Rectified pinhole stereo rig. Intrinsics are shared by both cameras; the
// right camera sits at +baseline along x in left-camera coordinates, so
// disparity d = u_left - u_right = fx * baseline / z is positive in front of
// the cameras. World units are millimeters, pixel indices are 0-based with
// pixel centers at integer coordinates.
struct StereoRig {
  double fx = 500.0;
  double fy = 500.0;
  double tx = 160.0;
  double ty = 120.0;
  double baseline_mm = 60.0;
  int width = 320;
  int height = 240;

  bool operator==(const StereoRig&) const = default;
};

// throws DataError if the rig violates its invariants
void validate_rig(const StereoRig& rig);

struct JointUVD {
  double u = 0.0;  // column, pixels
  double v = 0.0;  // row, pixels
  double d = 0.0;  // disparity, pixels
};

struct JointXYZ {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;  // depth, millimeters, > 0 in front of the camera
};

using JointSetUVD = std::vector<JointUVD>;
using JointSetXYZ = std::vector<JointXYZ>;

JointSetXYZ uvd_to_xyz(const StereoRig& rig, const JointSetUVD& joints);
JointSetUVD xyz_to_uvd(const StereoRig& rig, const JointSetXYZ& joints);

struct PixelUV {
  double u = 0.0;
  double v = 0.0;
};

// Right-view pixel location of each joint under the rectified epipolar
// relation: u_r = u - d, v_r = v.
std::vector<PixelUV> project_right(const StereoRig& rig, const JointSetUVD& joints);

// Rig file: one `key = value` per line, keys exactly
// {fx, fy, tx, ty, baseline_mm, width, height}. Unknown keys are rejected.
StereoRig read_rig_file(const std::string& path);
void write_rig_file(const StereoRig& rig, const std::string& path);
StereoRig parse_rig_text(const std::string& text);
std::string rig_to_text(const StereoRig& rig);

}  // namespace stereopose
