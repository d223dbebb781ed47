#include "stereopose/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>

#include "stereopose/errors.hpp"
#include "stereopose/parallel.hpp"
#include "stereopose/rng.hpp"

namespace stereopose {

namespace {

Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
double norm(Vec3 a) { return std::sqrt(dot(a, a)); }
Vec3 normalized(Vec3 a) {
  double n = norm(a);
  return n > 0 ? (1.0 / n) * a : Vec3{0, 0, 0};
}

Vec3 rotate_euler(const double r[3], Vec3 p) {
  // roll about z, pitch about x, yaw about y, in that order
  double cz = std::cos(r[2]), sz = std::sin(r[2]);
  p = {cz * p.x - sz * p.y, sz * p.x + cz * p.y, p.z};
  double cx = std::cos(r[1]), sx = std::sin(r[1]);
  p = {p.x, cx * p.y - sx * p.z, sx * p.y + cx * p.z};
  double cy = std::cos(r[0]), sy = std::sin(r[0]);
  return {cy * p.x + sy * p.z, p.y, -sy * p.x + cy * p.z};
}

}  // namespace

const std::array<int, kNumJoints>& HandSkeleton::parents() {
  static const std::array<int, kNumJoints> p = [] {
    std::array<int, kNumJoints> a{};
    a[0] = -1;
    for (int f = 0; f < 5; ++f) {
      a[static_cast<size_t>(1 + 4 * f)] = 0;
      for (int k = 1; k < 4; ++k) a[static_cast<size_t>(1 + 4 * f + k)] = 4 * f + k;
    }
    return a;
  }();
  return p;
}

int HandSkeleton::joint_index(int finger, int segment) { return 1 + 4 * finger + segment; }

HandSkeleton make_default_skeleton(double scale) {
  struct Finger {
    double mcp_x, mcp_y;
    double dir_x, dir_y;
    double len[3];
    double rad[4];  // wrist->MCP, MCP->PIP, PIP->DIP, DIP->TIP
  };
  static const Finger fingers[5] = {
      {-28, 18, -0.60, 0.80, {34, 26, 22}, {13.0, 10.0, 8.5, 7.0}},  // thumb
      {-22, 80, -0.06, 1.00, {42, 25, 21}, {11.0, 7.5, 6.8, 6.0}},   // index
      {0, 82, 0.00, 1.00, {46, 28, 23}, {11.5, 8.0, 7.0, 6.2}},      // middle
      {20, 79, 0.06, 1.00, {42, 26, 21.5}, {11.0, 7.5, 6.8, 6.0}},   // ring
      {37, 72, 0.14, 0.99, {32, 21, 18}, {10.0, 6.5, 6.0, 5.5}},     // pinky
  };
  HandSkeleton skel;
  skel.rest[0] = {0, 0, 0};
  skel.radius[0] = 14.0 * scale;
  for (int f = 0; f < 5; ++f) {
    const Finger& fg = fingers[f];
    double dn = std::hypot(fg.dir_x, fg.dir_y);
    double dx = fg.dir_x / dn, dy = fg.dir_y / dn;
    Vec3 p{fg.mcp_x * scale, fg.mcp_y * scale, 0.0};
    skel.rest[static_cast<size_t>(HandSkeleton::joint_index(f, 0))] = p;
    for (int k = 0; k < 3; ++k) {
      p = p + (fg.len[k] * scale) * Vec3{dx, dy, 0};
      skel.rest[static_cast<size_t>(HandSkeleton::joint_index(f, k + 1))] = p;
    }
    for (int k = 0; k < 4; ++k)
      skel.radius[static_cast<size_t>(HandSkeleton::joint_index(f, k))] = fg.rad[k] * scale;
  }
  return skel;
}

SceneParams sample_scene(std::uint64_t seed, const SceneLimits& limits,
                         const StereoRig& rig) {
  RandomStream rng(seed);
  SceneParams s;
  s.seed = seed;

  double z = rng.uniform(limits.depth_min_mm, limits.depth_max_mm);
  // keep the wrist inside the margin in the left view, and its right-view
  // projection (shifted left by the wrist disparity) inside the margin too
  double m = limits.frustum_margin;
  double d = rig.fx * rig.baseline_mm / z;
  double u_lo = m * rig.width + d;
  double u_hi = std::max(u_lo + 1.0, (1.0 - m) * rig.width);
  double v_lo = m * rig.height;
  double v_hi = (1.0 - m) * rig.height;
  double u = rng.uniform(u_lo, u_hi);
  double v = rng.uniform(v_lo, v_hi);
  s.translation = {(u - rig.tx) / rig.fx * z, (v - rig.ty) / rig.fy * z, z};

  s.rotation[0] = rng.uniform(-limits.rot_range_rad, limits.rot_range_rad);
  s.rotation[1] = rng.uniform(-0.5 * limits.rot_range_rad, 0.5 * limits.rot_range_rad);
  s.rotation[2] = rng.uniform(-0.5 * limits.rot_range_rad, 0.5 * limits.rot_range_rad);
  for (int f = 0; f < 5; ++f)
    s.flexion[f] = rng.uniform(limits.flex_min_rad, limits.flex_max_rad);

  double tone = rng.uniform(0.55, 1.1);
  const double base[3] = {0.82, 0.62, 0.50};
  for (int c = 0; c < 3; ++c)
    s.albedo[c] = std::clamp(base[c] * tone + rng.uniform(-0.06, 0.06), 0.05, 1.0);

  double l[3];
  rng.unit_vector(l);
  l[2] = -std::abs(l[2]) - 0.25;  // light from the camera side
  double ln = std::sqrt(l[0] * l[0] + l[1] * l[1] + l[2] * l[2]);
  for (int c = 0; c < 3; ++c) s.light[c] = l[c] / ln;

  s.background = static_cast<std::uint32_t>(rng.uniform_index(1u << 30));
  return s;
}

JointSetXYZ pose_skeleton(const HandSkeleton& skel, const SceneParams& scene) {
  std::array<Vec3, kNumJoints> hand;
  hand[0] = skel.rest[0];
  for (int f = 0; f < 5; ++f) {
    int mcp = HandSkeleton::joint_index(f, 0);
    Vec3 p = skel.rest[static_cast<size_t>(mcp)];
    hand[static_cast<size_t>(mcp)] = p;
    Vec3 dir = normalized(skel.rest[static_cast<size_t>(mcp + 1)] -
                          skel.rest[static_cast<size_t>(mcp)]);
    for (int k = 1; k < 4; ++k) {
      double len = norm(skel.rest[static_cast<size_t>(mcp + k)] -
                        skel.rest[static_cast<size_t>(mcp + k - 1)]);
      double theta = k * scene.flexion[f];  // progressive curl out of the palm plane
      Vec3 seg{dir.x * std::cos(theta), dir.y * std::cos(theta), -std::sin(theta)};
      p = p + len * seg;
      hand[static_cast<size_t>(mcp + k)] = p;
    }
  }
  JointSetXYZ world(kNumJoints);
  for (int j = 0; j < kNumJoints; ++j) {
    Vec3 p = rotate_euler(scene.rotation, hand[static_cast<size_t>(j)]) + scene.translation;
    world[static_cast<size_t>(j)] = {p.x, p.y, p.z};
  }
  return world;
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

namespace {

struct Capsule {
  Vec3 a, b;
  double r;
};

// Ray r(t) = ro + t*rd against a capsule. rd need not be unit length; with
// rd = (., ., 1) the hit parameter t equals camera-space depth, which is what
// the z-buffer compares. Returns false on a miss.
bool ray_capsule(Vec3 ro, Vec3 rd, const Capsule& c, double& t_out, Vec3& n_out) {
  Vec3 ba = c.b - c.a;
  Vec3 oa = ro - c.a;
  double baba = dot(ba, ba);

  auto sphere = [&](Vec3 center, double& t, Vec3& n) -> bool {
    Vec3 oc = ro - center;
    double qa = dot(rd, rd);
    double qb = dot(oc, rd);
    double qc = dot(oc, oc) - c.r * c.r;
    double h = qb * qb - qa * qc;
    if (h < 0) return false;
    double tt = (-qb - std::sqrt(h)) / qa;
    if (tt <= 1e-9) return false;
    t = tt;
    n = normalized(ro + tt * rd - center);
    return true;
  };

  if (baba < 1e-12) return sphere(c.a, t_out, n_out);  // degenerate segment

  double bard = dot(ba, rd);
  double baoa = dot(ba, oa);
  double qa = baba * dot(rd, rd) - bard * bard;
  double qb = baba * dot(rd, oa) - baoa * bard;
  double qc = baba * dot(oa, oa) - baoa * baoa - c.r * c.r * baba;
  if (qa > 1e-12) {
    double h = qb * qb - qa * qc;
    if (h < 0) return false;
    double t = (-qb - std::sqrt(h)) / qa;
    double y = baoa + t * bard;
    if (t > 1e-9 && y >= 0.0 && y <= baba) {
      t_out = t;
      n_out = normalized((ro + t * rd - c.a) - (y / baba) * ba);
      return true;
    }
    return sphere(y < 0.0 ? c.a : c.b, t_out, n_out);
  }
  // ray parallel to the axis: caps only
  double ta;
  Vec3 na;
  bool hit_a = sphere(c.a, ta, na);
  double tb;
  Vec3 nb;
  bool hit_b = sphere(c.b, tb, nb);
  if (hit_a && (!hit_b || ta <= tb)) {
    t_out = ta;
    n_out = na;
    return true;
  }
  if (hit_b) {
    t_out = tb;
    n_out = nb;
    return true;
  }
  return false;
}

void render_view(ImageBuffer& img, const std::vector<Capsule>& capsules,
                 const StereoRig& rig, const SceneParams& scene) {
  const int w = rig.width, h = rig.height;
  std::vector<float> zbuf(static_cast<size_t>(w) * h, std::numeric_limits<float>::max());
  std::vector<float> normals(static_cast<size_t>(w) * h * 3, 0.0f);

  Vec3 ro{0, 0, 0};
  for (const Capsule& c : capsules) {
    if (c.a.z <= c.r || c.b.z <= c.r) continue;  // behind or straddling the camera
    double zmin = std::min(c.a.z, c.b.z);
    double ua = c.a.x / c.a.z * rig.fx + rig.tx, va = c.a.y / c.a.z * rig.fy + rig.ty;
    double ub = c.b.x / c.b.z * rig.fx + rig.tx, vb = c.b.y / c.b.z * rig.fy + rig.ty;
    double rad_px = c.r / zmin * std::max(rig.fx, rig.fy) + 2.0;
    int x0 = std::max(0, static_cast<int>(std::floor(std::min(ua, ub) - rad_px)));
    int x1 = std::min(w - 1, static_cast<int>(std::ceil(std::max(ua, ub) + rad_px)));
    int y0 = std::max(0, static_cast<int>(std::floor(std::min(va, vb) - rad_px)));
    int y1 = std::min(h - 1, static_cast<int>(std::ceil(std::max(va, vb) + rad_px)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        Vec3 rd{(x - rig.tx) / rig.fx, (y - rig.ty) / rig.fy, 1.0};
        double t;
        Vec3 n;
        if (!ray_capsule(ro, rd, c, t, n)) continue;
        size_t i = static_cast<size_t>(y) * w + x;
        if (t >= zbuf[i]) continue;
        zbuf[i] = static_cast<float>(t);
        normals[3 * i] = static_cast<float>(n.x);
        normals[3 * i + 1] = static_cast<float>(n.y);
        normals[3 * i + 2] = static_cast<float>(n.z);
      }
    }
  }

  const double ambient = 0.25;
  for (size_t i = 0; i < zbuf.size(); ++i) {
    if (zbuf[i] == std::numeric_limits<float>::max()) continue;
    double lambert = std::max(0.0, normals[3 * i] * scene.light[0] +
                                       normals[3 * i + 1] * scene.light[1] +
                                       normals[3 * i + 2] * scene.light[2]);
    double shade = ambient + (1.0 - ambient) * lambert;
    int y = static_cast<int>(i) / w, x = static_cast<int>(i) % w;
    for (int c = 0; c < 3; ++c)
      img.at(c, y, x) = static_cast<float>(std::clamp(scene.albedo[c] * shade, 0.0, 1.0));
  }
}

}  // namespace

StereoSample render_pair(const SceneParams& scene, const HandSkeleton& skel,
                         const StereoRig& rig, const ImageBuffer& bg_left,
                         const ImageBuffer& bg_right, int id) {
  if (bg_left.height != rig.height || bg_left.width != rig.width ||
      bg_right.height != rig.height || bg_right.width != rig.width)
    throw ShapeMismatch("render_pair: background size does not match the rig");

  JointSetXYZ world = pose_skeleton(skel, scene);
  JointSetUVD gt = xyz_to_uvd(rig, world);
  for (size_t j = 0; j < gt.size(); ++j) {
    double ur = gt[j].u - gt[j].d;
    bool inside = gt[j].u >= 0 && gt[j].u <= rig.width - 1 && gt[j].v >= 0 &&
                  gt[j].v <= rig.height - 1 && ur >= 0 && ur <= rig.width - 1;
    if (!inside) throw HandOutOfFrustum(static_cast<int>(j));
  }

  const auto& parents = HandSkeleton::parents();
  std::vector<Capsule> left_caps, right_caps;
  Vec3 shift{rig.baseline_mm, 0, 0};
  for (int j = 1; j < kNumJoints; ++j) {
    const JointXYZ& pa = world[static_cast<size_t>(parents[static_cast<size_t>(j)])];
    const JointXYZ& pb = world[static_cast<size_t>(j)];
    Vec3 a{pa.x, pa.y, pa.z};
    Vec3 b{pb.x, pb.y, pb.z};
    double r = skel.radius[static_cast<size_t>(j)];
    left_caps.push_back({a, b, r});
    right_caps.push_back({a - shift, b - shift, r});
  }

  StereoSample s;
  s.left = bg_left;
  s.right = bg_right;
  s.rig = rig;
  s.id = id;
  s.gt = std::move(gt);
  render_view(s.left, left_caps, rig, scene);
  render_view(s.right, right_caps, rig, scene);
  quantize_to_8bit(s.left);
  quantize_to_8bit(s.right);
  return s;
}

ImageBuffer noise_background(const StereoRig& rig, std::uint32_t selector, int eye) {
  ImageBuffer img(rig.height, rig.width);
  auto lattice = [&](int octave, int yi, int xi, int c) -> double {
    std::uint64_t h = derive_seed(0x9e0ddeedULL + selector,
                                  (static_cast<std::uint64_t>(eye) << 40) ^
                                      (static_cast<std::uint64_t>(octave) << 32) ^
                                      (static_cast<std::uint64_t>(yi) << 16) ^
                                      static_cast<std::uint64_t>(xi),
                                  static_cast<std::uint64_t>(c));
    return static_cast<double>(h >> 11) * 0x1.0p-53;
  };
  const double weights[3] = {0.55, 0.30, 0.15};
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < rig.height; ++y) {
      for (int x = 0; x < rig.width; ++x) {
        double acc = 0.0;
        for (int o = 0; o < 3; ++o) {
          double cells = 4.0 * (1 << o);
          double gx = x * cells / rig.width;
          double gy = y * cells / rig.height;
          int xi = static_cast<int>(gx), yi = static_cast<int>(gy);
          double fx = gx - xi, fy = gy - yi;
          double v00 = lattice(o, yi, xi, c), v01 = lattice(o, yi, xi + 1, c);
          double v10 = lattice(o, yi + 1, xi, c), v11 = lattice(o, yi + 1, xi + 1, c);
          acc += weights[o] * ((1 - fy) * ((1 - fx) * v00 + fx * v01) +
                               fy * ((1 - fx) * v10 + fx * v11));
        }
        img.at(c, y, x) = static_cast<float>(0.08 + 0.84 * acc);
      }
    }
  }
  quantize_to_8bit(img);
  return img;
}

SceneParams walk_step(const SceneParams& prev, const TrackWalk& walk,
                      const SceneLimits& limits, std::uint64_t seed) {
  RandomStream rng(seed);
  SceneParams s = prev;
  s.seed = seed;
  s.translation.x += rng.uniform(-walk.step_mm, walk.step_mm);
  s.translation.y += rng.uniform(-walk.step_mm, walk.step_mm);
  s.translation.z = std::clamp(s.translation.z + rng.uniform(-walk.step_mm, walk.step_mm),
                               limits.depth_min_mm, limits.depth_max_mm);
  for (double& r : s.rotation) r += rng.uniform(-walk.step_rad, walk.step_rad);
  for (double& f : s.flexion)
    f = std::clamp(f + rng.uniform(-walk.flex_step_rad, walk.flex_step_rad),
                   limits.flex_min_rad, limits.flex_max_rad);
  return s;
}

std::vector<SceneParams> walk_scenes(const SceneParams& base, int length,
                                     const TrackWalk& walk, const SceneLimits& limits,
                                     std::uint64_t seed) {
  std::vector<SceneParams> out;
  out.reserve(static_cast<size_t>(length));
  out.push_back(base);
  for (int t = 1; t < length; ++t)
    out.push_back(walk_step(out.back(), walk, limits, derive_seed(seed, t)));
  return out;
}

// ---------------------------------------------------------------------------
// Dataset on disk
// ---------------------------------------------------------------------------

const StereoSample& Dataset::by_id(int id) const {
  auto it = std::lower_bound(samples.begin(), samples.end(), id,
                             [](const StereoSample& s, int key) { return s.id < key; });
  if (it == samples.end() || it->id != id)
    throw CorruptDataset("sample " + std::to_string(id) + " not found");
  return *it;
}

namespace {

std::string sample_image_name(int id, char eye) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06d_%c.ppm", id, eye);
  return buf;
}

}  // namespace

void write_dataset(const Dataset& ds, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  write_rig_file(ds.rig, dir + "/rig.cfg");

  std::vector<const StereoSample*> ordered;
  for (const StereoSample& s : ds.samples) ordered.push_back(&s);
  std::sort(ordered.begin(), ordered.end(),
            [](const StereoSample* a, const StereoSample* b) { return a->id < b->id; });
  for (size_t i = 1; i < ordered.size(); ++i)
    if (ordered[i]->id == ordered[i - 1]->id)
      throw CorruptDataset("duplicate sample id " + std::to_string(ordered[i]->id));

  std::ofstream ann(dir + "/annotations.csv", std::ios::binary);
  if (!ann) throw DataError("dataset: cannot write annotations in '" + dir + "'");
  ann << "id,j,u,v,d\n";
  char row[160];
  for (const StereoSample* s : ordered) {
    if (!(s->rig == ds.rig))
      throw CorruptDataset("sample " + std::to_string(s->id) + " has a different rig");
    write_ppm(s->left, dir + "/" + sample_image_name(s->id, 'l'));
    write_ppm(s->right, dir + "/" + sample_image_name(s->id, 'r'));
    for (size_t j = 0; j < s->gt.size(); ++j) {
      std::snprintf(row, sizeof(row), "%d,%d,%.17g,%.17g,%.17g\n", s->id,
                    static_cast<int>(j), s->gt[j].u, s->gt[j].v, s->gt[j].d);
      ann << row;
    }
  }
  if (!ds.sequences.empty()) {
    std::ofstream seq(dir + "/sequences.csv", std::ios::binary);
    seq << "seq,first_id,last_id\n";
    for (size_t i = 0; i < ds.sequences.size(); ++i)
      seq << i << "," << ds.sequences[i].first << "," << ds.sequences[i].second << "\n";
  }
}

Dataset read_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  Dataset ds;
  if (!fs::exists(dir + "/rig.cfg")) throw CorruptDataset("missing rig.cfg in '" + dir + "'");
  ds.rig = read_rig_file(dir + "/rig.cfg");

  std::ifstream ann(dir + "/annotations.csv", std::ios::binary);
  if (!ann) throw CorruptDataset("missing annotations.csv in '" + dir + "'");
  std::string line;
  if (!std::getline(ann, line) || (line != "id,j,u,v,d" && line != "id,j,u,v,d\r"))
    throw CorruptDataset("annotations.csv: bad header");

  std::map<int, JointSetUVD> labels;
  int lineno = 1;
  while (std::getline(ann, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    int id, j;
    double u, v, d;
    if (std::sscanf(line.c_str(), "%d,%d,%lf,%lf,%lf", &id, &j, &u, &v, &d) != 5)
      throw CorruptDataset("annotations.csv: malformed row at line " + std::to_string(lineno));
    JointSetUVD& joints = labels[id];
    if (j != static_cast<int>(joints.size()))
      throw CorruptDataset("sample " + std::to_string(id) +
                           ": joint rows out of order or duplicated");
    joints.push_back({u, v, d});
  }
  if (labels.empty()) throw CorruptDataset("annotations.csv: no samples");
  size_t joint_count = labels.begin()->second.size();

  for (auto& [id, joints] : labels) {
    if (joints.size() != joint_count)
      throw CorruptDataset("sample " + std::to_string(id) + ": wrong joint count " +
                           std::to_string(joints.size()) + " (expected " +
                           std::to_string(joint_count) + ")");
    StereoSample s;
    s.id = id;
    s.rig = ds.rig;
    s.gt = std::move(joints);
    std::string lpath = dir + "/" + sample_image_name(id, 'l');
    std::string rpath = dir + "/" + sample_image_name(id, 'r');
    if (!fs::exists(lpath) || !fs::exists(rpath))
      throw CorruptDataset("sample " + std::to_string(id) + ": missing image file");
    s.left = read_ppm(lpath);
    s.right = read_ppm(rpath);
    if (s.left.width != ds.rig.width || s.left.height != ds.rig.height ||
        s.right.width != ds.rig.width || s.right.height != ds.rig.height)
      throw CorruptDataset("sample " + std::to_string(id) +
                           ": image size does not match the rig");
    ds.samples.push_back(std::move(s));
  }

  if (fs::exists(dir + "/sequences.csv")) {
    std::ifstream seq(dir + "/sequences.csv", std::ios::binary);
    if (!std::getline(seq, line) ||
        (line != "seq,first_id,last_id" && line != "seq,first_id,last_id\r"))
      throw CorruptDataset("sequences.csv: bad header");
    while (std::getline(seq, line)) {
      if (line.empty() || line == "\r") continue;
      int s, a, b;
      if (std::sscanf(line.c_str(), "%d,%d,%d", &s, &a, &b) != 3 || a > b)
        throw CorruptDataset("sequences.csv: malformed row");
      ds.sequences.emplace_back(a, b);
      for (int id = a; id <= b; ++id) ds.by_id(id);  // every frame must exist
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

namespace {

struct BackgroundSource {
  const StereoRig* rig;
  std::vector<std::pair<ImageBuffer, ImageBuffer>> loaded;

  std::pair<ImageBuffer, ImageBuffer> get(std::uint32_t selector) const {
    if (!loaded.empty()) {
      const auto& p = loaded[selector % loaded.size()];
      return {p.first, p.second};
    }
    return {noise_background(*rig, selector, 0), noise_background(*rig, selector, 1)};
  }
};

BackgroundSource load_backgrounds(const StereoRig& rig, const std::string& dir) {
  namespace fs = std::filesystem;
  BackgroundSource src;
  src.rig = &rig;
  if (dir.empty()) return src;
  std::vector<std::string> lefts;
  for (const auto& e : fs::directory_iterator(dir)) {
    std::string name = e.path().filename().string();
    if (name.size() > 6 && name.substr(name.size() - 6) == "_l.ppm") lefts.push_back(name);
  }
  std::sort(lefts.begin(), lefts.end());
  for (const std::string& name : lefts) {
    std::string rname = name.substr(0, name.size() - 6) + "_r.ppm";
    if (!fs::exists(dir + "/" + rname))
      throw DataError("background '" + name + "' has no right view");
    ImageBuffer l = read_ppm(dir + "/" + name);
    ImageBuffer r = read_ppm(dir + "/" + rname);
    if (l.width != rig.width || l.height != rig.height || r.width != rig.width ||
        r.height != rig.height)
      throw DataError("background '" + name + "' size does not match the rig");
    src.loaded.emplace_back(std::move(l), std::move(r));
  }
  if (src.loaded.empty()) throw DataError("no *_l.ppm/_r.ppm pairs in '" + dir + "'");
  return src;
}

constexpr int kMaxPlacementAttempts = 400;

}  // namespace

Dataset generate_dataset(const GenConfig& cfg) {
  validate_rig(cfg.rig);
  if (cfg.count < 0 || cfg.tracks < 0 || (cfg.tracks > 0 && cfg.track_len < 1))
    throw InvalidConfig("synth: counts must be non-negative, track_len positive");
  HandSkeleton skel = make_default_skeleton(cfg.skeleton_scale);
  BackgroundSource bg = load_backgrounds(cfg.rig, cfg.background_dir);

  Dataset ds;
  ds.rig = cfg.rig;
  ds.samples.resize(static_cast<size_t>(cfg.count));

  parallel_for(0, cfg.count, cfg.threads, [&](int id) {
    for (int attempt = 0;; ++attempt) {
      if (attempt >= kMaxPlacementAttempts)
        throw DataError("synth: could not place a hand inside the frustum (sample " +
                        std::to_string(id) + ")");
      SceneParams scene = sample_scene(
          derive_seed(cfg.seed, static_cast<std::uint64_t>(id), attempt), cfg.limits,
          cfg.rig);
      auto [bl, br] = bg.get(scene.background);
      try {
        ds.samples[static_cast<size_t>(id)] = render_pair(scene, skel, cfg.rig, bl, br, id);
        return;
      } catch (const HandOutOfFrustum&) {
      }
    }
  });

  // tracking sequences: a bounded random walk from a rendered base scene
  if (cfg.tracks > 0) {
    std::vector<std::vector<StereoSample>> tracks(static_cast<size_t>(cfg.tracks));
    parallel_for(0, cfg.tracks, cfg.threads, [&](int t) {
      std::uint64_t tseed = derive_seed(cfg.seed, 0x77aaULL, static_cast<std::uint64_t>(t));
      SceneParams scene;
      std::pair<ImageBuffer, ImageBuffer> bgs;
      StereoSample frame;
      bool placed = false;
      for (int attempt = 0; attempt < kMaxPlacementAttempts && !placed; ++attempt) {
        scene = sample_scene(derive_seed(tseed, 1, attempt), cfg.limits, cfg.rig);
        bgs = bg.get(scene.background);
        try {
          frame = render_pair(scene, skel, cfg.rig, bgs.first, bgs.second, 0);
          placed = true;
        } catch (const HandOutOfFrustum&) {
        }
      }
      if (!placed) throw DataError("synth: could not place track " + std::to_string(t));
      tracks[static_cast<size_t>(t)].push_back(std::move(frame));
      for (int k = 1; k < cfg.track_len; ++k) {
        StereoSample next;
        SceneParams cur = scene;
        bool ok = false;
        for (int attempt = 0; attempt < kMaxPlacementAttempts && !ok; ++attempt) {
          cur = walk_step(scene, cfg.walk, cfg.limits,
                          derive_seed(tseed, 100 + static_cast<std::uint64_t>(k), attempt));
          try {
            next = render_pair(cur, skel, cfg.rig, bgs.first, bgs.second, 0);
            ok = true;
          } catch (const HandOutOfFrustum&) {
          }
        }
        if (!ok) {  // hold the pose rather than fail the whole track
          cur = scene;
          next = render_pair(cur, skel, cfg.rig, bgs.first, bgs.second, 0);
        }
        scene = cur;
        tracks[static_cast<size_t>(t)].push_back(std::move(next));
      }
    });
    int next_id = cfg.count;
    for (auto& track : tracks) {
      int first = next_id;
      for (StereoSample& s : track) {
        s.id = next_id++;
        ds.samples.push_back(std::move(s));
      }
      ds.sequences.emplace_back(first, next_id - 1);
    }
  }
  return ds;
}

}  // namespace stereopose
