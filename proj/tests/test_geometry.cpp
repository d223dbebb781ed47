#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cmath>
#include <filesystem>

#include "stereopose/errors.hpp"
#include "stereopose/geometry.hpp"
#include "stereopose/rng.hpp"

using namespace stereopose;

namespace {
StereoRig test_rig() {
  StereoRig rig;
  rig.fx = 500;
  rig.fy = 500;
  rig.tx = 160;
  rig.ty = 120;
  rig.baseline_mm = 60;
  rig.width = 320;
  rig.height = 240;
  return rig;
}
}  // namespace

TEST_CASE("principal point maps to the optical axis") {
  StereoRig rig = test_rig();
  JointSetXYZ xyz = uvd_to_xyz(rig, {{160, 120, 50}});
  CHECK(xyz[0].x == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(xyz[0].y == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(xyz[0].z == doctest::Approx(600.0).epsilon(1e-12));

  JointSetXYZ off = uvd_to_xyz(rig, {{210, 120, 50}});
  CHECK(off[0].x == doctest::Approx(60.0).epsilon(1e-12));
  CHECK(off[0].y == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(off[0].z == doctest::Approx(600.0).epsilon(1e-12));
}

TEST_CASE("inverse projection of the trivial cases") {
  StereoRig rig = test_rig();
  JointSetUVD uvd = xyz_to_uvd(rig, {{0, 0, 600}});
  CHECK(uvd[0].u == doctest::Approx(160.0).epsilon(1e-12));
  CHECK(uvd[0].v == doctest::Approx(120.0).epsilon(1e-12));
  CHECK(uvd[0].d == doctest::Approx(50.0).epsilon(1e-12));

  uvd = xyz_to_uvd(rig, {{60, 0, 600}});
  CHECK(uvd[0].u == doctest::Approx(210.0).epsilon(1e-12));
}

TEST_CASE("uvd -> xyz -> uvd round trip over random inputs") {
  StereoRig rig = test_rig();
  RandomStream rng(1234);
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    JointUVD p{rng.uniform(0, rig.width), rng.uniform(0, rig.height), rng.uniform(1, 200)};
    JointSetUVD back = xyz_to_uvd(rig, uvd_to_xyz(rig, {p}));
    worst = std::max({worst, std::abs(back[0].u - p.u), std::abs(back[0].v - p.v),
                      std::abs(back[0].d - p.d)});
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("xyz -> uvd -> xyz round trip with z in [200, 1500]") {
  StereoRig rig = test_rig();
  RandomStream rng(99);
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    JointXYZ p{rng.uniform(-300, 300), rng.uniform(-300, 300), rng.uniform(200, 1500)};
    JointSetXYZ back = uvd_to_xyz(rig, xyz_to_uvd(rig, {p}));
    worst = std::max({worst, std::abs(back[0].x - p.x), std::abs(back[0].y - p.y),
                      std::abs(back[0].z - p.z)});
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("non-positive disparity and depth are rejected with the joint index") {
  StereoRig rig = test_rig();
  JointSetUVD uvd = {{10, 10, 5}, {10, 10, 0}};
  CHECK_THROWS_AS(uvd_to_xyz(rig, uvd), NonPositiveDisparity);
  try {
    uvd_to_xyz(rig, uvd);
  } catch (const NonPositiveDisparity& e) {
    CHECK(e.joint == 1);
  }
  CHECK_THROWS_AS(xyz_to_uvd(rig, {{0, 0, -5}}), NonPositiveDepth);
}

TEST_CASE("project_right keeps the row and subtracts the disparity") {
  StereoRig rig = test_rig();
  auto r = project_right(rig, {{210, 120, 50}, {77, 31, 0}});
  CHECK(r[0].u == doctest::Approx(160.0));
  CHECK(r[0].v == doctest::Approx(120.0));
  CHECK(r[1].u == doctest::Approx(77.0));  // zero disparity is the identity
  CHECK(r[1].v == doctest::Approx(31.0));
}

TEST_CASE("project_right agrees with projecting xyz through the right camera") {
  StereoRig rig = test_rig();
  RandomStream rng(7);
  for (int i = 0; i < 2000; ++i) {
    JointUVD p{rng.uniform(0, rig.width), rng.uniform(0, rig.height), rng.uniform(1, 200)};
    JointSetXYZ xyz = uvd_to_xyz(rig, {p});
    // independent path: shift the point by -B along x and project with the
    // left intrinsics
    double xr = xyz[0].x - rig.baseline_mm;
    double ur = xr * rig.fx / xyz[0].z + rig.tx;
    double vr = xyz[0].y * rig.fy / xyz[0].z + rig.ty;
    auto got = project_right(rig, {p});
    CHECK(std::abs(got[0].u - ur) < 1e-9);
    CHECK(std::abs(got[0].v - vr) < 1e-9);
  }
}

TEST_CASE("z is strictly decreasing in d, and scales linearly with the baseline") {
  StereoRig rig = test_rig();
  double prev = 1e300;
  for (double d = 1; d < 100; d += 1) {
    double z = uvd_to_xyz(rig, {{50, 60, d}})[0].z;
    CHECK(z < prev);
    prev = z;
  }
  StereoRig wide = rig;
  wide.baseline_mm *= 2;
  JointSetXYZ a = uvd_to_xyz(rig, {{50, 60, 10}});
  JointSetXYZ b = uvd_to_xyz(wide, {{50, 60, 10}});
  CHECK(b[0].x == doctest::Approx(2 * a[0].x).epsilon(1e-12));
  CHECK(b[0].y == doctest::Approx(2 * a[0].y).epsilon(1e-12));
  CHECK(b[0].z == doctest::Approx(2 * a[0].z).epsilon(1e-12));
}

TEST_CASE("rig file round trip and validation") {
  StereoRig rig = test_rig();
  rig.fx = 501.25;
  rig.ty = 119.5;
  std::string text = rig_to_text(rig);
  StereoRig back = parse_rig_text(text);
  CHECK(back == rig);

  CHECK_THROWS_AS(parse_rig_text("fx = 500\nbogus = 1\n"), DataError);
  CHECK_THROWS_AS(parse_rig_text(text + "fx = 2\n"), DataError);       // duplicate
  CHECK_THROWS_AS(parse_rig_text("fx = 500\n"), DataError);            // missing keys
  CHECK_THROWS_AS(parse_rig_text("fx = abc\nfy = 1\ntx = 0\nty = 0\n"
                                 "baseline_mm = 1\nwidth = 4\nheight = 4\n"),
                  DataError);

  StereoRig bad = rig;
  bad.tx = 400;  // outside image
  CHECK_THROWS_AS(parse_rig_text(rig_to_text(bad)), DataError);

  auto path = std::filesystem::temp_directory_path() / "stereopose_rig_test.cfg";
  write_rig_file(rig, path.string());
  CHECK(read_rig_file(path.string()) == rig);
  std::filesystem::remove(path);
}

TEST_CASE("round-trip throughput stays under a second for 1e4 joints") {
  StereoRig rig = test_rig();
  RandomStream rng(5);
  JointSetUVD pts(10000);
  for (auto& p : pts) p = {rng.uniform(0, 320), rng.uniform(0, 240), rng.uniform(1, 200)};
  auto t0 = std::chrono::steady_clock::now();
  JointSetUVD back = xyz_to_uvd(rig, uvd_to_xyz(rig, pts));
  auto dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(back.size() == pts.size());
  CHECK(dt < 1.0);
}
