#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "stereopose/geometry.hpp"
#include "stereopose/image.hpp"

namespace stereopose {

struct Vec3 {
  double x = 0, y = 0, z = 0;
};

// 21-joint kinematic hand: wrist plus five fingers with MCP/PIP/DIP/TIP
// chains. The rest pose is planar (all joints at z = 0 in the hand frame,
// fingers along +y); per-joint radius is the capsule radius of the bone from
// the parent to that joint.
struct HandSkeleton {
  std::array<Vec3, kNumJoints> rest;
  std::array<double, kNumJoints> radius;

  static const std::array<int, kNumJoints>& parents();
  static int joint_index(int finger, int segment);  // segment 0..3 = MCP..TIP
};

HandSkeleton make_default_skeleton(double scale = 1.0);

struct SceneLimits {
  double depth_min_mm = 420.0;
  double depth_max_mm = 850.0;
  double frustum_margin = 0.18;  // wrist kept inside the central (1-2m) of the frame
  double rot_range_rad = 3.14159265358979;  // yaw; pitch/roll use half of it
  double flex_min_rad = 0.0;
  double flex_max_rad = 1.25;
};

struct SceneParams {
  Vec3 translation;          // wrist position, left camera frame, mm
  double rotation[3] = {0, 0, 0};   // yaw (y), pitch (x), roll (z)
  double flexion[5] = {0, 0, 0, 0, 0};
  double albedo[3] = {0.8, 0.6, 0.5};
  double light[3] = {0, 0, -1};  // unit vector toward the light
  std::uint32_t background = 0;
  std::uint64_t seed = 0;
};

// Deterministic scene draw; the wrist lands inside the configured depth range
// and, for both views of the given rig, inside the frustum margin.
SceneParams sample_scene(std::uint64_t seed, const SceneLimits& limits,
                         const StereoRig& rig = StereoRig{});

// Forward kinematics: flexion curls each finger segment progressively out of
// the palm plane, then the global rotation and translation are applied.
JointSetXYZ pose_skeleton(const HandSkeleton& skel, const SceneParams& scene);

struct StereoSample {
  ImageBuffer left;
  ImageBuffer right;
  JointSetUVD gt;
  StereoRig rig;
  int id = 0;
};

// Renders the posed hand into both rectified views by per-pixel analytic
// ray-capsule intersection with Lambertian shading; hand pixels overwrite the
// background. Ground truth comes from xyz_to_uvd of the posed joints. Throws
// HandOutOfFrustum when any joint projects outside either image.
StereoSample render_pair(const SceneParams& scene, const HandSkeleton& skel,
                         const StereoRig& rig, const ImageBuffer& bg_left,
                         const ImageBuffer& bg_right, int id = 0);

// Procedural value-noise background, deterministic in (selector, eye).
ImageBuffer noise_background(const StereoRig& rig, std::uint32_t selector, int eye);

// Bounded random walk over SceneParams, for synthetic tracking sequences.
struct TrackWalk {
  double step_mm = 9.0;
  double step_rad = 0.05;
  double flex_step_rad = 0.06;
};

std::vector<SceneParams> walk_scenes(const SceneParams& base, int length,
                                     const TrackWalk& walk, const SceneLimits& limits,
                                     std::uint64_t seed);

// ---------------------------------------------------------------------------
// Dataset on disk: rig.cfg, NNNNNN_l.ppm / NNNNNN_r.ppm, annotations.csv with
// header id,j,u,v,d (one row per joint per sample), and sequences.csv with
// header seq,first_id,last_id when tracking sequences are present.
// ---------------------------------------------------------------------------

struct Dataset {
  StereoRig rig;
  std::vector<StereoSample> samples;
  std::vector<std::pair<int, int>> sequences;  // [first_id, last_id] inclusive

  const StereoSample& by_id(int id) const;
};

void write_dataset(const Dataset& ds, const std::string& dir);
Dataset read_dataset(const std::string& dir);

struct GenConfig {
  StereoRig rig;
  SceneLimits limits;
  int count = 100;          // independent frames
  int tracks = 0;           // tracking sequences appended after the frames
  int track_len = 12;
  TrackWalk walk;
  std::uint64_t seed = 1;
  int threads = 1;
  std::string background_dir;  // empty = procedural noise backgrounds
  double skeleton_scale = 1.0;
};

// Deterministic in (seed, config) regardless of thread count.
Dataset generate_dataset(const GenConfig& cfg);

}  // namespace stereopose
