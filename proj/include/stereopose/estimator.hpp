#pragma once

#include <vector>

#include "stereopose/graph.hpp"
#include "stereopose/image.hpp"
#include "stereopose/network.hpp"
#include "stereopose/roi.hpp"

namespace stereopose {

// Per-joint Gaussian grids. Normalized targets sum to exactly 1 per joint and
// drive the disparity expectation; unnormalized targets peak at 1 at the grid
// cell nearest the joint and serve as heatmap-regression targets. Row index m
// pairs with v, column index n with u.
template <typename T>
struct HeatmapTargetT {
  int grid_h = 0, grid_w = 0;
  int stride = 0;
  double sigma = 0.0;
  bool normalized = false;
  std::vector<T> values;       // (J, grid_h, grid_w)
  std::vector<double> scale;   // A_j per joint

  int num_joints() const { return static_cast<int>(scale.size()); }
  const T* joint(int j) const {
    return values.data() + static_cast<size_t>(j) * grid_h * grid_w;
  }
};

using HeatmapTarget = HeatmapTargetT<float>;

// Joints farther than 6*sigma (in grid cells) outside the grid raise
// EmptyHeatmap; nearer out-of-grid joints produce valid near-zero maps.
template <typename T>
HeatmapTargetT<T> make_heatmap_target(const NormalizedLabels& gt, int grid_h, int grid_w,
                                      int stride, double sigma, bool normalized);

struct JointEstimate {
  double u = 0.0;  // network pixels
  double v = 0.0;
  double d = 0.0;  // network pixels, relative to d0; may be negative
  double confidence = 0.0;
};

struct Prediction {
  std::vector<JointEstimate> joints;
};

NormalizedLabels to_normalized_labels(const Prediction& p);

enum class DecodeMode { kArgmax, kSoftArgmax };

// Decode (u', v') in network pixels from the last stack's heatmaps. Argmax
// mode refines the peak cell with a per-axis quadratic fit over the two axial
// neighbors; ties break toward the smallest (m, n). Confidence is the peak.
template <typename T>
std::vector<JointEstimate> decode_2d(const TensorT<T>& heatmaps, int stride,
                                     DecodeMode mode = DecodeMode::kArgmax);

// Bilinear read of the disparity map at per-joint query points given in
// network pixels; out-of-grid queries clamp to the border cell.
template <typename T>
std::vector<double> sample_disparity(const TensorT<T>& map, int map_stride,
                                     const std::vector<JointEstimate>& joints);

// --- differentiable loss / sampling nodes -----------------------------------

// Sum over stacks of the mean squared error against a fixed target grid.
template <typename T>
class HeatmapLossNodeT : public NodeT<T> {
 public:
  explicit HeatmapLossNodeT(const std::vector<NodeT<T>*>& stacks);
  const char* kind() const override { return "loss_uv"; }
  void forward(GraphT<T>&) override;
  void backward(GraphT<T>&) override;
  void set_target(const HeatmapTargetT<T>& target);

 private:
  std::vector<T> target_;
};

// Huber loss between ground-truth disparities and the per-joint expectation of
// the disparity map under normalized heatmap targets. Gradients flow into the
// map only.
template <typename T>
class DisparityLossNodeT : public NodeT<T> {
 public:
  DisparityLossNodeT(NodeT<T>* map, int num_joints, double delta);
  const char* kind() const override { return "loss_d"; }
  void forward(GraphT<T>&) override;
  void backward(GraphT<T>&) override;
  void set_target(const HeatmapTargetT<T>& target, const NormalizedLabels& gt);

  double delta;

 private:
  int num_joints_;
  std::vector<T> target_;
  std::vector<double> gt_d_;
  std::vector<double> residual_;
};

// Differentiable counterpart of sample_disparity: inputs are the map node and
// a (J, 2) coordinate node holding (u', v') in network pixels.
template <typename T>
class BilinearSampleNodeT : public NodeT<T> {
 public:
  BilinearSampleNodeT(NodeT<T>* map, NodeT<T>* coords, int map_stride);
  const char* kind() const override { return "sample_disparity"; }
  void forward(GraphT<T>&) override;
  void backward(GraphT<T>&) override;

  int map_stride;
};

double huber(double x, double delta);
double huber_grad(double x, double delta);

// Loss heads attached to a network; targets are set per sample.
template <typename T>
struct TrainHooksT {
  HeatmapLossNodeT<T>* loss_uv = nullptr;
  DisparityLossNodeT<T>* loss_d = nullptr;
  NodeT<T>* loss_total = nullptr;  // loss_uv + loss_d
};

template <typename T>
TrainHooksT<T> attach_losses(NetworkT<T>& net, double delta);

// Full g_n forward pass over preprocessed crops. In mono mode the disparity
// head sees the left features concatenated with zeros, so parameter shapes
// match the stereo network. The prediction's d' is sampled at the decoded
// (u', v').
template <typename T>
Prediction forward(NetworkT<T>& net, const ImageBuffer& left_crop,
                   const ImageBuffer& right_crop, ViewMode mode,
                   DecodeMode decode = DecodeMode::kArgmax);

// Copy a crop into an input node (shapes must agree).
template <typename T>
void set_image_input(NodeT<T>* node, const ImageBuffer& img);

}  // namespace stereopose
