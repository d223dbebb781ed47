#include "stereopose/estimator.hpp"

#include <algorithm>
#include <cmath>

#include "stereopose/errors.hpp"

namespace stereopose {

template <typename T>
HeatmapTargetT<T> make_heatmap_target(const NormalizedLabels& gt, int grid_h, int grid_w,
                                      int stride, double sigma, bool normalized) {
  if (!(sigma > 0.0)) throw InvalidConfig("heatmap sigma must be positive");
  HeatmapTargetT<T> t;
  t.grid_h = grid_h;
  t.grid_w = grid_w;
  t.stride = stride;
  t.sigma = sigma;
  t.normalized = normalized;
  t.values.assign(static_cast<size_t>(gt.size()) * grid_h * grid_w, T(0));
  t.scale.assign(gt.size(), 0.0);

  std::vector<double> raw(static_cast<size_t>(grid_h) * grid_w);
  for (size_t j = 0; j < gt.size(); ++j) {
    double cu = gt[j].u / stride;  // column of the Gaussian center, grid cells
    double cv = gt[j].v / stride;
    double du = std::max({0.0, -cu, cu - (grid_w - 1)});
    double dv = std::max({0.0, -cv, cv - (grid_h - 1)});
    if (std::hypot(du, dv) > 6.0 * sigma) throw EmptyHeatmap(static_cast<int>(j));

    double sum = 0.0, peak = 0.0;
    double inv = 1.0 / (2.0 * sigma * sigma);
    for (int m = 0; m < grid_h; ++m) {
      for (int n = 0; n < grid_w; ++n) {
        double g = std::exp(-((n - cu) * (n - cu) + (m - cv) * (m - cv)) * inv);
        raw[static_cast<size_t>(m) * grid_w + n] = g;
        sum += g;
        peak = std::max(peak, g);
      }
    }
    double scale = normalized ? 1.0 / sum : 1.0 / peak;
    t.scale[j] = scale;
    T* dst = t.values.data() + j * static_cast<size_t>(grid_h) * grid_w;
    for (size_t i = 0; i < raw.size(); ++i) dst[i] = static_cast<T>(raw[i] * scale);
  }
  return t;
}

template <typename T>
std::vector<JointEstimate> decode_2d(const TensorT<T>& heatmaps, int stride,
                                     DecodeMode mode) {
  if (heatmaps.rank() != 3) throw ShapeMismatch("decode_2d: heatmaps must be rank 3");
  int joints = heatmaps.dim(0), gh = heatmaps.dim(1), gw = heatmaps.dim(2);
  std::vector<JointEstimate> out(static_cast<size_t>(joints));
  for (int j = 0; j < joints; ++j) {
    const T* map = heatmaps.v.data() + static_cast<size_t>(j) * gh * gw;
    if (mode == DecodeMode::kSoftArgmax) {
      // expectation of the cell coordinates under the min-shifted heatmap
      double peak = map[0], low = map[0];
      for (int i = 1; i < gh * gw; ++i) {
        peak = std::max(peak, static_cast<double>(map[i]));
        low = std::min(low, static_cast<double>(map[i]));
      }
      double z = 0.0, eu = 0.0, ev = 0.0;
      for (int m = 0; m < gh; ++m)
        for (int n = 0; n < gw; ++n) {
          double w = static_cast<double>(map[m * gw + n]) - low;
          z += w;
          eu += w * n;
          ev += w * m;
        }
      if (z <= 0.0) z = 1.0;  // flat map decodes to the grid origin
      out[j].u = stride * eu / z;
      out[j].v = stride * ev / z;
      out[j].confidence = peak;
      continue;
    }
    int best = 0;
    for (int i = 1; i < gh * gw; ++i)
      if (map[i] > map[best]) best = i;
    int bm = best / gw, bn = best % gw;
    auto refine = [&](double lo, double hi, double mid) {
      double denom = lo - 2.0 * mid + hi;
      if (denom >= 0.0) return 0.0;  // not a local maximum profile
      return std::clamp(0.5 * (lo - hi) / denom, -0.5, 0.5);
    };
    double dn = 0.0, dm = 0.0;
    double mid = map[best];
    if (bn > 0 && bn + 1 < gw) dn = refine(map[best - 1], map[best + 1], mid);
    if (bm > 0 && bm + 1 < gh) dm = refine(map[best - gw], map[best + gw], mid);
    out[j].u = stride * (bn + dn);
    out[j].v = stride * (bm + dm);
    out[j].confidence = mid;
  }
  return out;
}

namespace {

struct BilinearTaps {
  int n0, n1, m0, m1;
  double au, av;  // interpolation fractions
  bool clamped_u, clamped_v;
};

BilinearTaps bilinear_taps(double u, double v, int stride, int gh, int gw) {
  BilinearTaps t{};
  double gu = u / stride;
  double gv = v / stride;
  t.clamped_u = gu <= 0.0 || gu >= gw - 1;
  t.clamped_v = gv <= 0.0 || gv >= gh - 1;
  gu = std::clamp(gu, 0.0, static_cast<double>(gw - 1));
  gv = std::clamp(gv, 0.0, static_cast<double>(gh - 1));
  t.n0 = std::min(static_cast<int>(std::floor(gu)), gw - 2 < 0 ? 0 : gw - 2);
  t.m0 = std::min(static_cast<int>(std::floor(gv)), gh - 2 < 0 ? 0 : gh - 2);
  t.n1 = std::min(t.n0 + 1, gw - 1);
  t.m1 = std::min(t.m0 + 1, gh - 1);
  t.au = gu - t.n0;
  t.av = gv - t.m0;
  return t;
}

}  // namespace

template <typename T>
std::vector<double> sample_disparity(const TensorT<T>& map, int map_stride,
                                     const std::vector<JointEstimate>& joints) {
  if (map.rank() != 2 && !(map.rank() == 3 && map.dim(0) == 1))
    throw ShapeMismatch("sample_disparity: map must be (H,W) or (1,H,W)");
  int gh = map.dim(map.rank() - 2), gw = map.dim(map.rank() - 1);
  std::vector<double> out(joints.size());
  for (size_t j = 0; j < joints.size(); ++j) {
    BilinearTaps t = bilinear_taps(joints[j].u, joints[j].v, map_stride, gh, gw);
    auto at = [&](int m, int n) {
      return static_cast<double>(map.v[static_cast<size_t>(m) * gw + n]);
    };
    out[j] = (1.0 - t.av) * ((1.0 - t.au) * at(t.m0, t.n0) + t.au * at(t.m0, t.n1)) +
             t.av * ((1.0 - t.au) * at(t.m1, t.n0) + t.au * at(t.m1, t.n1));
  }
  return out;
}

double huber(double x, double delta) {
  double a = std::abs(x);
  return a <= delta ? 0.5 * x * x : delta * (a - 0.5 * delta);
}

double huber_grad(double x, double delta) {
  if (x > delta) return delta;
  if (x < -delta) return -delta;
  return x;
}

// ---------------------------------------------------------------------------
// Loss nodes
// ---------------------------------------------------------------------------

template <typename T>
HeatmapLossNodeT<T>::HeatmapLossNodeT(const std::vector<NodeT<T>*>& stacks)
    : NodeT<T>(std::vector<int>{1}) {
  if (stacks.empty()) throw ShapeMismatch("loss_uv: no stacks");
  for (NodeT<T>* s : stacks) {
    if (s->out.shape != stacks[0]->out.shape)
      throw ShapeMismatch("loss_uv: stack shapes differ");
    this->in.push_back(s);
  }
  target_.assign(stacks[0]->out.numel(), T(0));
}

template <typename T>
void HeatmapLossNodeT<T>::set_target(const HeatmapTargetT<T>& target) {
  if (target.values.size() != target_.size())
    throw ShapeMismatch("loss_uv: target size " + std::to_string(target.values.size()) +
                        " vs heatmaps " + std::to_string(target_.size()));
  std::copy(target.values.begin(), target.values.end(), target_.begin());
}

template <typename T>
void HeatmapLossNodeT<T>::forward(GraphT<T>&) {
  double total = 0.0;
  for (NodeT<T>* s : this->in) {
    double sum = 0.0;
    for (size_t i = 0; i < target_.size(); ++i) {
      double r = static_cast<double>(s->out.v[i]) - static_cast<double>(target_[i]);
      sum += r * r;
    }
    total += sum / static_cast<double>(target_.size());
  }
  this->out.v[0] = static_cast<T>(total);
}

template <typename T>
void HeatmapLossNodeT<T>::backward(GraphT<T>& g) {
  const T scale = this->out.g[0] * static_cast<T>(2.0 / static_cast<double>(target_.size()));
  for (NodeT<T>* s : this->in) {
    if (!g.grad_wanted(s)) continue;
    for (size_t i = 0; i < target_.size(); ++i)
      s->out.g[i] += scale * (s->out.v[i] - target_[i]);
  }
}

template <typename T>
DisparityLossNodeT<T>::DisparityLossNodeT(NodeT<T>* map, int num_joints, double delta)
    : NodeT<T>(std::vector<int>{1}), delta(delta), num_joints_(num_joints) {
  if (!(map->out.rank() == 3 && map->out.dim(0) == 1))
    throw ShapeMismatch("loss_d: disparity map must be (1,H,W)");
  this->in = {map};
  target_.assign(static_cast<size_t>(num_joints) * map->out.dim(1) * map->out.dim(2), T(0));
  gt_d_.assign(static_cast<size_t>(num_joints), 0.0);
  residual_.assign(static_cast<size_t>(num_joints), 0.0);
}

template <typename T>
void DisparityLossNodeT<T>::set_target(const HeatmapTargetT<T>& target,
                                       const NormalizedLabels& gt) {
  if (target.values.size() != target_.size() ||
      static_cast<int>(gt.size()) != num_joints_)
    throw ShapeMismatch("loss_d: target size mismatch");
  size_t cells = target_.size() / static_cast<size_t>(num_joints_);
  for (int j = 0; j < num_joints_; ++j) {
    double sum = 0.0;
    const T* src = target.values.data() + static_cast<size_t>(j) * cells;
    for (size_t i = 0; i < cells; ++i) sum += static_cast<double>(src[i]);
    if (std::abs(sum - 1.0) > 1e-6) throw UnnormalizedTarget(j, sum);
  }
  std::copy(target.values.begin(), target.values.end(), target_.begin());
  for (int j = 0; j < num_joints_; ++j) gt_d_[static_cast<size_t>(j)] = gt[j].d;
}

template <typename T>
void DisparityLossNodeT<T>::forward(GraphT<T>&) {
  const TensorT<T>& map = this->in[0]->out;
  size_t cells = map.numel();
  double total = 0.0;
  for (int j = 0; j < num_joints_; ++j) {
    const T* h = target_.data() + static_cast<size_t>(j) * cells;
    double expect = 0.0;
    for (size_t i = 0; i < cells; ++i)
      expect += static_cast<double>(h[i]) * static_cast<double>(map.v[i]);
    double r = gt_d_[static_cast<size_t>(j)] - expect;
    residual_[static_cast<size_t>(j)] = r;
    total += huber(r, delta);
  }
  this->out.v[0] = static_cast<T>(total / num_joints_);
}

template <typename T>
void DisparityLossNodeT<T>::backward(GraphT<T>& g) {
  if (!g.grad_wanted(this->in[0])) return;
  TensorT<T>& map = this->in[0]->out;
  size_t cells = map.numel();
  const double gscale = static_cast<double>(this->out.g[0]) / num_joints_;
  for (int j = 0; j < num_joints_; ++j) {
    double w = -huber_grad(residual_[static_cast<size_t>(j)], delta) * gscale;
    if (w == 0.0) continue;
    const T* h = target_.data() + static_cast<size_t>(j) * cells;
    for (size_t i = 0; i < cells; ++i) map.g[i] += static_cast<T>(w * h[i]);
  }
}

template <typename T>
BilinearSampleNodeT<T>::BilinearSampleNodeT(NodeT<T>* map, NodeT<T>* coords, int map_stride)
    : NodeT<T>(std::vector<int>{coords->out.dim(0)}), map_stride(map_stride) {
  if (!(map->out.rank() == 3 && map->out.dim(0) == 1))
    throw ShapeMismatch("sample_disparity: map must be (1,H,W)");
  if (coords->out.rank() != 2 || coords->out.dim(1) != 2)
    throw ShapeMismatch("sample_disparity: coords must be (J,2)");
  this->in = {map, coords};
}

template <typename T>
void BilinearSampleNodeT<T>::forward(GraphT<T>&) {
  const TensorT<T>& map = this->in[0]->out;
  const TensorT<T>& coords = this->in[1]->out;
  int gh = map.dim(1), gw = map.dim(2);
  int joints = coords.dim(0);
  for (int j = 0; j < joints; ++j) {
    double u = coords.v[static_cast<size_t>(j) * 2];
    double v = coords.v[static_cast<size_t>(j) * 2 + 1];
    BilinearTaps t = bilinear_taps(u, v, map_stride, gh, gw);
    auto at = [&](int m, int n) {
      return static_cast<double>(map.v[static_cast<size_t>(m) * gw + n]);
    };
    this->out.v[static_cast<size_t>(j)] = static_cast<T>(
        (1.0 - t.av) * ((1.0 - t.au) * at(t.m0, t.n0) + t.au * at(t.m0, t.n1)) +
        t.av * ((1.0 - t.au) * at(t.m1, t.n0) + t.au * at(t.m1, t.n1)));
  }
}

template <typename T>
void BilinearSampleNodeT<T>::backward(GraphT<T>& g) {
  TensorT<T>& map = this->in[0]->out;
  TensorT<T>& coords = this->in[1]->out;
  int gh = map.dim(1), gw = map.dim(2);
  int joints = coords.dim(0);
  bool want_map = g.grad_wanted(this->in[0]);
  bool want_coords = g.grad_wanted(this->in[1]);
  for (int j = 0; j < joints; ++j) {
    double gy = static_cast<double>(this->out.g[static_cast<size_t>(j)]);
    if (gy == 0.0) continue;
    double u = coords.v[static_cast<size_t>(j) * 2];
    double v = coords.v[static_cast<size_t>(j) * 2 + 1];
    BilinearTaps t = bilinear_taps(u, v, map_stride, gh, gw);
    auto at = [&](int m, int n) {
      return static_cast<double>(map.v[static_cast<size_t>(m) * gw + n]);
    };
    auto gat = [&](int m, int n) -> T& { return map.g[static_cast<size_t>(m) * gw + n]; };
    if (want_map) {
      gat(t.m0, t.n0) += static_cast<T>(gy * (1.0 - t.av) * (1.0 - t.au));
      gat(t.m0, t.n1) += static_cast<T>(gy * (1.0 - t.av) * t.au);
      gat(t.m1, t.n0) += static_cast<T>(gy * t.av * (1.0 - t.au));
      gat(t.m1, t.n1) += static_cast<T>(gy * t.av * t.au);
    }
    if (want_coords) {
      // flat beyond the border once the query clamps
      double dfdu = t.clamped_u ? 0.0
                                : ((1.0 - t.av) * (at(t.m0, t.n1) - at(t.m0, t.n0)) +
                                   t.av * (at(t.m1, t.n1) - at(t.m1, t.n0))) /
                                      map_stride;
      double dfdv = t.clamped_v ? 0.0
                                : ((1.0 - t.au) * (at(t.m1, t.n0) - at(t.m0, t.n0)) +
                                   t.au * (at(t.m1, t.n1) - at(t.m0, t.n1))) /
                                      map_stride;
      coords.g[static_cast<size_t>(j) * 2] += static_cast<T>(gy * dfdu);
      coords.g[static_cast<size_t>(j) * 2 + 1] += static_cast<T>(gy * dfdv);
    }
  }
}

// ---------------------------------------------------------------------------
// Network-level helpers
// ---------------------------------------------------------------------------

template <typename T>
TrainHooksT<T> attach_losses(NetworkT<T>& net, double delta) {
  GraphT<T>& g = net.graph();
  TrainHooksT<T> hooks;
  auto uv = std::make_unique<HeatmapLossNodeT<T>>(net.heatmaps);
  hooks.loss_uv = uv.get();
  g.add(std::move(uv));
  auto d = std::make_unique<DisparityLossNodeT<T>>(net.disparity_map,
                                                   net.config().num_joints, delta);
  hooks.loss_d = d.get();
  g.add(std::move(d));
  hooks.loss_total = g.add_tensors(hooks.loss_uv, hooks.loss_d);
  return hooks;
}

template <typename T>
void set_image_input(NodeT<T>* node, const ImageBuffer& img) {
  if (node->out.shape != std::vector<int>{3, img.height, img.width})
    throw ShapeMismatch("input node " + shape_str(node->out.shape) + " vs image (3," +
                        std::to_string(img.height) + "," + std::to_string(img.width) + ")");
  for (size_t i = 0; i < img.data.size(); ++i) node->out.v[i] = static_cast<T>(img.data[i]);
}

NormalizedLabels to_normalized_labels(const Prediction& p) {
  NormalizedLabels out(p.joints.size());
  for (size_t j = 0; j < p.joints.size(); ++j) {
    out[j].u = p.joints[j].u;
    out[j].v = p.joints[j].v;
    out[j].d = p.joints[j].d;
  }
  return out;
}

template <typename T>
Prediction forward(NetworkT<T>& net, const ImageBuffer& left_crop,
                   const ImageBuffer& right_crop, ViewMode mode, DecodeMode decode) {
  GraphT<T>& g = net.graph();
  set_image_input(net.left_input, left_crop);
  if (mode == ViewMode::kStereo) set_image_input(net.right_input, right_crop);

  std::vector<NodeT<T>*> outputs = net.heatmaps;
  outputs.push_back(net.disparity_map);
  ExecPlanT<T> plan = g.plan(outputs, net.barriers(mode));
  net.prepare_mode(mode);
  g.run_forward(plan);

  std::vector<JointEstimate> joints =
      decode_2d(net.heatmaps.back()->out, net.config().heatmap_stride, decode);
  std::vector<double> d =
      sample_disparity(net.disparity_map->out, net.config().disparity_stride, joints);
  for (size_t j = 0; j < joints.size(); ++j) joints[j].d = d[j];

  Prediction p;
  p.joints = std::move(joints);
  return p;
}

template HeatmapTargetT<float> make_heatmap_target<float>(const NormalizedLabels&, int, int,
                                                          int, double, bool);
template HeatmapTargetT<double> make_heatmap_target<double>(const NormalizedLabels&, int,
                                                            int, int, double, bool);
template std::vector<JointEstimate> decode_2d<float>(const TensorT<float>&, int, DecodeMode);
template std::vector<JointEstimate> decode_2d<double>(const TensorT<double>&, int,
                                                      DecodeMode);
template std::vector<double> sample_disparity<float>(const TensorT<float>&, int,
                                                     const std::vector<JointEstimate>&);
template std::vector<double> sample_disparity<double>(const TensorT<double>&, int,
                                                      const std::vector<JointEstimate>&);
template class HeatmapLossNodeT<float>;
template class HeatmapLossNodeT<double>;
template class DisparityLossNodeT<float>;
template class DisparityLossNodeT<double>;
template class BilinearSampleNodeT<float>;
template class BilinearSampleNodeT<double>;
template TrainHooksT<float> attach_losses<float>(NetworkT<float>&, double);
template TrainHooksT<double> attach_losses<double>(NetworkT<double>&, double);
template void set_image_input<float>(NodeT<float>*, const ImageBuffer&);
template void set_image_input<double>(NodeT<double>*, const ImageBuffer&);
template Prediction forward<float>(NetworkT<float>&, const ImageBuffer&, const ImageBuffer&,
                                   ViewMode, DecodeMode);
template Prediction forward<double>(NetworkT<double>&, const ImageBuffer&,
                                    const ImageBuffer&, ViewMode, DecodeMode);

}  // namespace stereopose
