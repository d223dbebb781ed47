#pragma once

#include <utility>
#include <vector>

#include "stereopose/geometry.hpp"
#include "stereopose/image.hpp"

namespace stereopose {

// Crop initialization: the box (u0, v0, w0, h0) applied to the left image and
// the global disparity d0 shifting the right box to (u0 - d0, v0, w0, h0).
// Boxes may extend outside the image; out-of-image pixels read as 0.
struct CropInit {
  double u0 = 0.0;
  double v0 = 0.0;
  double w0 = 0.0;
  double h0 = 0.0;
  double d0 = 0.0;
};

struct NormalizedJoint {
  double u = 0.0;  // crop-local column, network pixels
  double v = 0.0;  // crop-local row, network pixels
  double d = 0.0;  // crop-local disparity, network pixels; may be negative
};

using NormalizedLabels = std::vector<NormalizedJoint>;

// Crop the region (u0, v0, w0, h0) (or the d0-shifted right box) and resample
// to net_w x net_h. Output pixel (x, y) samples the source bilinearly at
// (u0 + x*w0/net_w, v0 + y*h0/net_h), so crop pixel coordinates coincide with
// normalized label coordinates. rot_deg, when nonzero, rotates the sampled
// content clockwise about the crop center; callers must keep rotation off the
// right view. Degenerate boxes (w0 or h0 <= 0) produce black crops.
ImageBuffer crop_resample(const ImageBuffer& src, const CropInit& init, bool shift_right,
                          int net_w, int net_h, double rot_deg = 0.0);

std::pair<ImageBuffer, ImageBuffer> preprocess_pair(const ImageBuffer& left,
                                                    const ImageBuffer& right,
                                                    const CropInit& init, int net_w,
                                                    int net_h);

NormalizedLabels normalize_labels(const JointSetUVD& gt, const CropInit& init, int net_w,
                                  int net_h);

JointSetUVD denormalize(const NormalizedLabels& pred, const CropInit& init, int net_w,
                        int net_h);

// Rotate (u, v) clockwise by rot_deg about the crop center of `init`, matching
// the content rotation of crop_resample. Disparities are untouched.
JointSetUVD rotate_labels(const JointSetUVD& joints, const CropInit& init, double rot_deg);

// Tight (u, v) bounding box, expanded to a square on its longer side about the
// box center, then grown by margin * side on every edge; d0 is the mean joint
// disparity. Coincident joints use a 1 px reference side when margin > 0 and
// raise DegenerateBox when margin == 0.
CropInit init_from_joints(const JointSetUVD& joints, double margin);

}  // namespace stereopose
