#include "stereopose/geometry.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "stereopose/errors.hpp"

namespace stereopose {

void validate_rig(const StereoRig& rig) {
  if (!(rig.fx > 0.0) || !(rig.fy > 0.0))
    throw DataError("rig: focal lengths must be positive");
  if (!(rig.baseline_mm > 0.0)) throw DataError("rig: baseline must be positive");
  if (rig.width < 1 || rig.height < 1) throw DataError("rig: image size must be at least 1x1");
  if (!(rig.tx >= 0.0 && rig.tx < rig.width))
    throw DataError("rig: principal point column outside image");
  if (!(rig.ty >= 0.0 && rig.ty < rig.height))
    throw DataError("rig: principal point row outside image");
}

JointSetXYZ uvd_to_xyz(const StereoRig& rig, const JointSetUVD& joints) {
  JointSetXYZ out(joints.size());
  for (size_t j = 0; j < joints.size(); ++j) {
    const JointUVD& p = joints[j];
    if (!(p.d > 0.0)) throw NonPositiveDisparity(static_cast<int>(j));
    double z = rig.fx * rig.baseline_mm / p.d;
    out[j].z = z;
    out[j].x = (p.u - rig.tx) / rig.fx * z;
    out[j].y = (p.v - rig.ty) / rig.fy * z;
  }
  return out;
}

JointSetUVD xyz_to_uvd(const StereoRig& rig, const JointSetXYZ& joints) {
  JointSetUVD out(joints.size());
  for (size_t j = 0; j < joints.size(); ++j) {
    const JointXYZ& p = joints[j];
    if (!(p.z > 0.0)) throw NonPositiveDepth(static_cast<int>(j));
    out[j].d = rig.fx * rig.baseline_mm / p.z;
    out[j].u = p.x * rig.fx / p.z + rig.tx;
    out[j].v = p.y * rig.fy / p.z + rig.ty;
  }
  return out;
}

std::vector<PixelUV> project_right(const StereoRig&, const JointSetUVD& joints) {
  std::vector<PixelUV> out(joints.size());
  for (size_t j = 0; j < joints.size(); ++j) {
    out[j].u = joints[j].u - joints[j].d;
    out[j].v = joints[j].v;
  }
  return out;
}

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

double parse_number(const std::string& key, const std::string& text) {
  try {
    size_t pos = 0;
    double val = std::stod(text, &pos);
    if (pos != text.size()) throw DataError("");
    return val;
  } catch (const std::exception&) {
    throw DataError("rig: bad value for key '" + key + "': '" + text + "'");
  }
}

}  // namespace

StereoRig parse_rig_text(const std::string& text) {
  static const char* kKeys[] = {"fx", "fy", "tx", "ty", "baseline_mm", "width", "height"};
  std::map<std::string, double> values;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos) throw DataError("rig: malformed line '" + line + "'");
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    bool known = false;
    for (const char* k : kKeys) known = known || key == k;
    if (!known) throw DataError("rig: unknown key '" + key + "'");
    if (values.count(key)) throw DataError("rig: duplicate key '" + key + "'");
    values[key] = parse_number(key, val);
  }
  for (const char* k : kKeys)
    if (!values.count(k)) throw DataError(std::string("rig: missing key '") + k + "'");

  StereoRig rig;
  rig.fx = values["fx"];
  rig.fy = values["fy"];
  rig.tx = values["tx"];
  rig.ty = values["ty"];
  rig.baseline_mm = values["baseline_mm"];
  rig.width = static_cast<int>(values["width"]);
  rig.height = static_cast<int>(values["height"]);
  if (rig.width != values["width"] || rig.height != values["height"])
    throw DataError("rig: width/height must be integers");
  validate_rig(rig);
  return rig;
}

std::string rig_to_text(const StereoRig& rig) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "fx = %.17g\nfy = %.17g\ntx = %.17g\nty = %.17g\n"
                "baseline_mm = %.17g\nwidth = %d\nheight = %d\n",
                rig.fx, rig.fy, rig.tx, rig.ty, rig.baseline_mm, rig.width, rig.height);
  return buf;
}

StereoRig read_rig_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("rig: cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_rig_text(ss.str());
}

void write_rig_file(const StereoRig& rig, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("rig: cannot write '" + path + "'");
  out << rig_to_text(rig);
}

}  // namespace stereopose
