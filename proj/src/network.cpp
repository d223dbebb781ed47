#include "stereopose/network.hpp"

#include <cmath>
#include <set>

#include "stereopose/errors.hpp"
#include "stereopose/rng.hpp"

namespace stereopose {

void NetConfig::validate() const {
  if (disparity_stride != 4 && disparity_stride != 8)
    throw InvalidConfig("disparity_stride must be 4 or 8");
  if (heatmap_stride != 4 && heatmap_stride != 8)
    throw InvalidConfig("heatmap_stride must be 4 or 8");
  if (num_stacks < 1) throw InvalidConfig("num_stacks must be at least 1");
  if (base_channels < 1) throw InvalidConfig("base_channels must be at least 1");
  if (hourglass_depth < 1) throw InvalidConfig("hourglass_depth must be at least 1");
  if (num_joints < 1) throw InvalidConfig("num_joints must be at least 1");
  if (net_w < 8 || net_h < 8) throw InvalidConfig("network input must be at least 8x8");
  int stack_div = heatmap_stride << hourglass_depth;
  if (net_w % stack_div != 0 || net_h % stack_div != 0)
    throw InvalidConfig("net size must be divisible by heatmap_stride * 2^depth");
  int disp_div = disparity_stride << hourglass_depth;
  if (net_w % disp_div != 0 || net_h % disp_div != 0)
    throw InvalidConfig("net size must be divisible by disparity_stride * 2^depth");
  if (disparity_stride < breakpoint_stride())
    throw InvalidConfig("disparity_stride must not be finer than the breakpoint stride");
}

std::string NetConfig::variant_name() const {
  return std::string(breakpoint == Breakpoint::kD2 ? "D2" : "D4") +
         (disparity_stride == 4 ? "S4" : "S8");
}

void NetConfig::apply_variant(const std::string& name) {
  if (name == "D2S4") {
    breakpoint = Breakpoint::kD2;
    disparity_stride = 4;
  } else if (name == "D4S4") {
    breakpoint = Breakpoint::kD4;
    disparity_stride = 4;
  } else if (name == "D2S8") {
    breakpoint = Breakpoint::kD2;
    disparity_stride = 8;
  } else if (name == "D4S8") {
    breakpoint = Breakpoint::kD4;
    disparity_stride = 8;
  } else {
    throw InvalidConfig("unknown variant '" + name + "' (expected D2S4/D4S4/D2S8/D4S8)");
  }
}

namespace {

// Builder shared by fresh and checkpoint-backed construction. In create mode
// parameters are drawn fan-in-scaled uniform; in bind mode they must already
// exist with matching shapes.
template <typename T>
class NetBuilder {
 public:
  NetBuilder(GraphT<T>& g, ParamStoreT<T>& store, std::uint64_t seed, bool bind)
      : g_(g), store_(store), rng_(seed), bind_(bind) {}

  NodeT<T>* conv(NodeT<T>* x, const std::string& name, int out_ch, int k, int stride) {
    int in_ch = x->out.dim(0);
    int wid = param(name + "/w", {out_ch, in_ch, k, k}, in_ch * k * k);
    int bid = param(name + "/b", {out_ch}, 0);
    return g_.conv2d(x, g_.param_node(wid), g_.param_node(bid), stride, (k - 1) / 2);
  }

  NodeT<T>* conv_relu(NodeT<T>* x, const std::string& name, int out_ch, int k, int stride) {
    return g_.relu(conv(x, name, out_ch, k, stride));
  }

  // conv-relu-conv with identity skip (channel counts must match)
  NodeT<T>* residual(NodeT<T>* x, const std::string& name) {
    int ch = x->out.dim(0);
    NodeT<T>* y = conv_relu(x, name + "/c1", ch, 3, 1);
    y = conv(y, name + "/c2", ch, 3, 1);
    return g_.relu(g_.add_tensors(x, y));
  }

  NodeT<T>* hourglass(NodeT<T>* x, int depth, const std::string& name) {
    NodeT<T>* up = residual(x, name + "/up" + std::to_string(depth));
    NodeT<T>* low = g_.maxpool2(x);
    low = residual(low, name + "/in" + std::to_string(depth));
    low = depth > 1 ? hourglass(low, depth - 1, name)
                    : residual(low, name + "/bottleneck");
    low = residual(low, name + "/out" + std::to_string(depth));
    return g_.add_tensors(up, g_.upsample2_nearest(low));
  }

  void done() {
    if (bind_ && seen_.size() != store_.size())
      throw DataError("checkpoint does not match config: it has " +
                      std::to_string(store_.size()) + " parameters, the network needs " +
                      std::to_string(seen_.size()));
  }

 private:
  // Reusing a name binds the same parameter again; this is how the left and
  // right trunk instantiations share h_f weights.
  int param(const std::string& name, std::vector<int> shape, int fan_in) {
    int id = store_.find(name);
    if (id >= 0) {
      if (store_.param(id).value.shape != shape)
        throw DataError("checkpoint does not match config: shape of '" + name + "' is " +
                        shape_str(store_.param(id).value.shape) + ", expected " +
                        shape_str(shape));
      seen_.insert(id);
      return id;
    }
    if (bind_)
      throw DataError("checkpoint does not match config: missing '" + name + "'");
    TensorT<T> value(shape);
    if (fan_in > 0) {
      double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (T& v : value.v) v = static_cast<T>(rng_.uniform(-bound, bound));
    }
    id = store_.add(name, std::move(value));
    seen_.insert(id);
    return id;
  }

  GraphT<T>& g_;
  ParamStoreT<T>& store_;
  RandomStream rng_;
  bool bind_;
  std::set<int> seen_;
};

}  // namespace

template <typename T>
NetworkT<T>::NetworkT(const NetConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), store_(std::make_shared<ParamStoreT<T>>()) {
  build(seed);
}

template <typename T>
NetworkT<T>::NetworkT(const NetConfig& cfg, std::shared_ptr<ParamStoreT<T>> store)
    : cfg_(cfg), store_(std::move(store)) {
  build(0);
}

template <typename T>
void NetworkT<T>::build(std::uint64_t seed) {
  cfg_.validate();
  graph_ = std::make_unique<GraphT<T>>(store_.get());
  GraphT<T>& g = *graph_;
  bool bind = store_->size() > 0;
  NetBuilder<T> b(g, *store_, seed, bind);

  const int ch = cfg_.base_channels;
  const int depth = cfg_.hourglass_depth;

  left_input = g.input({3, cfg_.net_h, cfg_.net_w});
  right_input = g.input({3, cfg_.net_h, cfg_.net_w});

  // Shared trunk h_f, tapped at the breakpoint: D2 is the output of the first
  // convolution (stride 2), D4 the output of the first max pool (stride 4).
  auto trunk = [&](NodeT<T>* img, NodeGroup group) -> NodeT<T>* {
    g.current_group = group;
    NodeT<T>* x = b.conv_relu(img, "hf/stem", ch, 3, 2);
    if (cfg_.breakpoint == Breakpoint::kD2) return x;
    x = b.residual(x, "hf/res1");
    return g.maxpool2(x);
  };
  feat_left = trunk(left_input, NodeGroup::kTrunkLeft);
  feat_right = trunk(right_input, NodeGroup::kTrunkRight);

  // 2D head h_uv: remainder of the trunk plus the hourglass stacks.
  g.current_group = NodeGroup::kHeadUV;
  NodeT<T>* x = feat_left;
  if (cfg_.breakpoint == Breakpoint::kD2) {
    x = b.residual(x, "huv/res1");
    x = g.maxpool2(x);
  }
  if (cfg_.heatmap_stride == 8) {
    x = b.residual(x, "huv/res_s8");
    x = g.maxpool2(x);
  }
  x = b.residual(x, "huv/res2");
  heatmaps.clear();
  for (int s = 0; s < cfg_.num_stacks; ++s) {
    std::string p = "huv/stack" + std::to_string(s);
    NodeT<T>* y = b.hourglass(x, depth, p + "/hg");
    y = b.conv_relu(y, p + "/feat", ch, 1, 1);
    NodeT<T>* hm = b.conv(y, p + "/out", cfg_.num_joints, 1, 1);
    heatmaps.push_back(hm);
    if (s + 1 < cfg_.num_stacks) {
      NodeT<T>* back = g.add_tensors(b.conv(y, p + "/remap_feat", ch, 1, 1),
                                     b.conv(hm, p + "/remap_pred", ch, 1, 1));
      x = g.add_tensors(x, back);
    }
  }

  // Disparity head h_D on the concatenated trunk features.
  g.current_group = NodeGroup::kHeadD;
  NodeT<T>* flr = g.concat_channels(feat_left, feat_right);
  disparity_pool_count_ = 0;
  for (int s = cfg_.breakpoint_stride(); s < cfg_.disparity_stride; s *= 2) {
    flr = g.maxpool2(flr);
    ++disparity_pool_count_;
  }
  NodeT<T>* z = b.conv_relu(flr, "hd/reduce", ch, 3, 1);
  z = b.hourglass(z, depth, "hd/hg");
  z = b.conv_relu(z, "hd/feat", ch, 1, 1);
  disparity_map = b.conv(z, "hd/out", 1, 1, 1);

  g.current_group = NodeGroup::kOther;
  b.done();
}

template <typename T>
void NetworkT<T>::accumulate_param_grads(std::vector<std::vector<T>>& grads) const {
  grads.resize(store_->size());
  for (const ParamNodeT<T>* pn : graph_->param_nodes()) {
    if (pn->out.g.empty()) continue;
    std::vector<T>& dst = grads[static_cast<size_t>(pn->param_id)];
    if (dst.empty()) dst.assign(pn->out.numel(), T(0));
    for (size_t i = 0; i < pn->out.g.size(); ++i) dst[i] += pn->out.g[i];
  }
}

Network build_network_from_store(const NetConfig& cfg, ParamStore store) {
  return Network(cfg, std::make_shared<ParamStore>(std::move(store)));
}

template class NetworkT<float>;
template class NetworkT<double>;

}  // namespace stereopose
