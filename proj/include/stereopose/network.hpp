#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "stereopose/graph.hpp"
#include "stereopose/params.hpp"

namespace stereopose {

enum class Breakpoint { kD2, kD4 };
enum class ViewMode { kStereo, kMono };

inline const char* view_mode_name(ViewMode m) {
  return m == ViewMode::kStereo ? "stereo" : "mono";
}

// Architecture knobs. The 2D estimator is a stacked mini-hourglass; the
// breakpoint picks where the shared trunk h_f is tapped (D2 = after the first
// convolution, stride 2; D4 = after the first max pool, stride 4) and the
// disparity stride fixes the resolution of the disparity map (S4/S8). Defaults
// are desk-scale; the paper-scale 256x256 network is a configuration choice.
struct NetConfig {
  Breakpoint breakpoint = Breakpoint::kD4;
  int disparity_stride = 4;  // S4 or S8
  int heatmap_stride = 4;
  int num_stacks = 2;
  int base_channels = 16;
  int hourglass_depth = 2;
  int num_joints = 21;
  int net_w = 64;
  int net_h = 64;

  void validate() const;  // throws InvalidConfig
  int breakpoint_stride() const { return breakpoint == Breakpoint::kD2 ? 2 : 4; }
  int heatmap_w() const { return net_w / heatmap_stride; }
  int heatmap_h() const { return net_h / heatmap_stride; }
  int disparity_w() const { return net_w / disparity_stride; }
  int disparity_h() const { return net_h / disparity_stride; }
  std::string variant_name() const;  // "D2S4" .. "D4S8"
  void apply_variant(const std::string& name);
};

// A built network: the shared trunk h_f instantiated on both views, the
// 2D head h_uv emitting one heatmap tensor per stack, and the disparity head
// h_D emitting a single-channel map. Parameters live in a shared store so
// worker replicas can evaluate concurrently against the same weights.
template <typename T>
class NetworkT {
 public:
  NetworkT(const NetConfig& cfg, std::uint64_t seed);
  NetworkT(const NetConfig& cfg, std::shared_ptr<ParamStoreT<T>> store);

  const NetConfig& config() const { return cfg_; }
  GraphT<T>& graph() { return *graph_; }
  ParamStoreT<T>& store() { return *store_; }
  std::shared_ptr<ParamStoreT<T>> shared_store() { return store_; }

  // a worker-private graph over the same parameter store
  NetworkT<T> replica() { return NetworkT<T>(cfg_, store_); }

  NodeT<T>* left_input = nullptr;
  NodeT<T>* right_input = nullptr;
  NodeT<T>* feat_left = nullptr;   // h_f(I'_l)
  NodeT<T>* feat_right = nullptr;  // h_f(I'_r); zero-filled in mono mode
  std::vector<NodeT<T>*> heatmaps;  // per stack, shape (J, H_n/s, W_n/s)
  NodeT<T>* disparity_map = nullptr;  // shape (1, H_d, W_d)

  int disparity_pool_count() const { return disparity_pool_count_; }

  // In mono mode the right trunk is not executed and f_r reads as zeros.
  std::vector<NodeT<T>*> barriers(ViewMode mode) const {
    return mode == ViewMode::kMono ? std::vector<NodeT<T>*>{feat_right}
                                   : std::vector<NodeT<T>*>{};
  }
  void prepare_mode(ViewMode mode) {
    if (mode == ViewMode::kMono)
      std::fill(feat_right->out.v.begin(), feat_right->out.v.end(), T(0));
  }

  // parameter-gradient snapshot from this graph's param nodes, indexed by id
  void accumulate_param_grads(std::vector<std::vector<T>>& grads) const;

 private:
  void build(std::uint64_t seed);

  NetConfig cfg_;
  std::shared_ptr<ParamStoreT<T>> store_;
  std::unique_ptr<GraphT<T>> graph_;
  int disparity_pool_count_ = 0;
};

using Network = NetworkT<float>;

// Builds a fresh network with fan-in-scaled uniform initialization. The same
// seed yields bit-identical parameters.
template <typename T>
NetworkT<T> build_network(const NetConfig& cfg, std::uint64_t seed) {
  return NetworkT<T>(cfg, seed);
}

// Builds a network over previously loaded parameters; every parameter must
// match the architecture by name and shape.
Network build_network_from_store(const NetConfig& cfg, ParamStore store);

}  // namespace stereopose
