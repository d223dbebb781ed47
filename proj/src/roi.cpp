#include "stereopose/roi.hpp"

#include <algorithm>
#include <cmath>

#include "stereopose/errors.hpp"

namespace stereopose {

namespace {
constexpr double kDegToRad = 0.017453292519943295;
}

ImageBuffer crop_resample(const ImageBuffer& src, const CropInit& init, bool shift_right,
                          int net_w, int net_h, double rot_deg) {
  ImageBuffer out(net_h, net_w);
  if (!(init.w0 > 0.0) || !(init.h0 > 0.0)) return out;  // black crop, not an error

  double u0 = init.u0 - (shift_right ? init.d0 : 0.0);
  double v0 = init.v0;
  double su = init.w0 / net_w;
  double sv = init.h0 / net_h;
  double cu = u0 + init.w0 / 2.0;
  double cv = v0 + init.h0 / 2.0;
  double ca = 1.0, sa = 0.0;
  bool rotate = rot_deg != 0.0;
  if (rotate) {
    // content is rotated by +rot_deg, so sampling runs through the inverse
    ca = std::cos(-rot_deg * kDegToRad);
    sa = std::sin(-rot_deg * kDegToRad);
  }
  for (int y = 0; y < net_h; ++y) {
    double gv = v0 + y * sv;
    for (int x = 0; x < net_w; ++x) {
      double gu = u0 + x * su;
      double sx = gu, sy = gv;
      if (rotate) {
        double du = gu - cu, dv = gv - cv;
        sx = cu + ca * du - sa * dv;
        sy = cv + sa * du + ca * dv;
      }
      for (int c = 0; c < 3; ++c) out.at(c, y, x) = bilinear_sample(src, c, sx, sy);
    }
  }
  return out;
}

std::pair<ImageBuffer, ImageBuffer> preprocess_pair(const ImageBuffer& left,
                                                    const ImageBuffer& right,
                                                    const CropInit& init, int net_w,
                                                    int net_h) {
  return {crop_resample(left, init, false, net_w, net_h),
          crop_resample(right, init, true, net_w, net_h)};
}

NormalizedLabels normalize_labels(const JointSetUVD& gt, const CropInit& init, int net_w,
                                  int net_h) {
  NormalizedLabels out(gt.size());
  for (size_t j = 0; j < gt.size(); ++j) {
    out[j].u = (gt[j].u - init.u0) / init.w0 * net_w;
    out[j].v = (gt[j].v - init.v0) / init.h0 * net_h;
    out[j].d = (gt[j].d - init.d0) / init.w0 * net_w;
  }
  return out;
}

JointSetUVD denormalize(const NormalizedLabels& pred, const CropInit& init, int net_w,
                        int net_h) {
  JointSetUVD out(pred.size());
  for (size_t j = 0; j < pred.size(); ++j) {
    out[j].u = pred[j].u / net_w * init.w0 + init.u0;
    out[j].v = pred[j].v / net_h * init.h0 + init.v0;
    out[j].d = pred[j].d / net_w * init.w0 + init.d0;
  }
  return out;
}

JointSetUVD rotate_labels(const JointSetUVD& joints, const CropInit& init, double rot_deg) {
  double ca = std::cos(rot_deg * kDegToRad);
  double sa = std::sin(rot_deg * kDegToRad);
  double cu = init.u0 + init.w0 / 2.0;
  double cv = init.v0 + init.h0 / 2.0;
  JointSetUVD out(joints.size());
  for (size_t j = 0; j < joints.size(); ++j) {
    double du = joints[j].u - cu, dv = joints[j].v - cv;
    out[j].u = cu + ca * du - sa * dv;
    out[j].v = cv + sa * du + ca * dv;
    out[j].d = joints[j].d;
  }
  return out;
}

CropInit init_from_joints(const JointSetUVD& joints, double margin) {
  if (joints.empty()) throw DegenerateBox();
  double umin = joints[0].u, umax = joints[0].u;
  double vmin = joints[0].v, vmax = joints[0].v;
  double dsum = 0.0;
  for (const JointUVD& p : joints) {
    umin = std::min(umin, p.u);
    umax = std::max(umax, p.u);
    vmin = std::min(vmin, p.v);
    vmax = std::max(vmax, p.v);
    dsum += p.d;
  }
  double side = std::max(umax - umin, vmax - vmin);
  if (side == 0.0) {
    if (margin == 0.0) throw DegenerateBox();
    side = 1.0;  // 1 px reference box around coincident joints
  }
  double size = side * (1.0 + 2.0 * margin);
  CropInit init;
  init.u0 = (umin + umax) / 2.0 - size / 2.0;
  init.v0 = (vmin + vmax) / 2.0 - size / 2.0;
  init.w0 = size;
  init.h0 = size;
  init.d0 = dsum / static_cast<double>(joints.size());
  return init;
}

}  // namespace stereopose
