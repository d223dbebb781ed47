#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "stereopose/params.hpp"
#include "stereopose/tensor.hpp"

namespace stereopose {

template <typename T>
class GraphT;

enum class NodeGroup { kOther = 0, kTrunkLeft, kTrunkRight, kHeadUV, kHeadD };
inline constexpr int kNumNodeGroups = 5;

// One operation in the computation graph. `out.v` holds forward values,
// `out.g` the gradient of the loss with respect to this output; backward
// accumulates (+=) into the inputs' gradient buffers.
template <typename T>
class NodeT {
 public:
  explicit NodeT(std::vector<int> shape) : out(std::move(shape)) {}
  virtual ~NodeT() = default;
  NodeT(const NodeT&) = delete;
  NodeT& operator=(const NodeT&) = delete;

  virtual const char* kind() const = 0;
  virtual void forward(GraphT<T>& g) = 0;
  virtual void backward(GraphT<T>& g) = 0;
  virtual long long macs() const { return 0; }

  TensorT<T> out;
  std::vector<NodeT<T>*> in;
  NodeGroup group = NodeGroup::kOther;
  int id = -1;
};

template <typename T>
class InputNodeT : public NodeT<T> {
 public:
  using NodeT<T>::NodeT;
  const char* kind() const override { return "input"; }
  void forward(GraphT<T>&) override {}
  void backward(GraphT<T>&) override {}
};

// Leaf bound to a ParamStore entry; forward copies the current parameter
// values, and after backward `out.g` holds this graph's parameter gradient.
template <typename T>
class ParamNodeT : public NodeT<T> {
 public:
  ParamNodeT(std::vector<int> shape, int param_id)
      : NodeT<T>(std::move(shape)), param_id(param_id) {}
  const char* kind() const override { return "param"; }
  void forward(GraphT<T>& g) override;
  void backward(GraphT<T>&) override {}
  int param_id;
};

template <typename T>
class Conv2dNodeT : public NodeT<T> {
 public:
  Conv2dNodeT(std::vector<int> shape, NodeT<T>* x, NodeT<T>* w, NodeT<T>* b, int stride,
              int pad);
  const char* kind() const override { return "conv2d"; }
  void forward(GraphT<T>& g) override;
  void backward(GraphT<T>& g) override;
  long long macs() const override;

  int stride, pad;

 private:
  std::vector<T> col_;  // im2col scratch, kept for backward
};

template <typename T>
class ReluNodeT : public NodeT<T> {
 public:
  explicit ReluNodeT(NodeT<T>* x);
  const char* kind() const override { return "relu"; }
  void forward(GraphT<T>&) override;
  void backward(GraphT<T>&) override;
};

template <typename T>
class MaxPool2NodeT : public NodeT<T> {
 public:
  explicit MaxPool2NodeT(NodeT<T>* x);
  const char* kind() const override { return "maxpool2"; }
  void forward(GraphT<T>&) override;
  void backward(GraphT<T>&) override;

 private:
  std::vector<std::int32_t> argmax_;
};

template <typename T>
class Upsample2NodeT : public NodeT<T> {
 public:
  explicit Upsample2NodeT(NodeT<T>* x);
  const char* kind() const override { return "upsample2_nearest"; }
  void forward(GraphT<T>&) override;
  void backward(GraphT<T>&) override;
};

template <typename T>
class ConcatNodeT : public NodeT<T> {
 public:
  ConcatNodeT(NodeT<T>* a, NodeT<T>* b);
  const char* kind() const override { return "concat_channels"; }
  void forward(GraphT<T>&) override;
  void backward(GraphT<T>&) override;
};

template <typename T>
class AddNodeT : public NodeT<T> {
 public:
  AddNodeT(NodeT<T>* a, NodeT<T>* b);
  const char* kind() const override { return "add"; }
  void forward(GraphT<T>&) override;
  void backward(GraphT<T>&) override;
};

// Topologically ordered execution set. `order` lists the nodes to run;
// `grad_zero` additionally contains barrier leaves whose gradient buffers
// must be cleared before backward.
template <typename T>
struct ExecPlanT {
  std::vector<NodeT<T>*> order;
  std::vector<NodeT<T>*> grad_zero;
};

// Reverse pass over the subset of an ExecPlan that lies on a path from a
// requested leaf to the loss; `wanted[id]` marks nodes whose gradient is
// actually consumed, letting ops skip dead input gradients.
template <typename T>
struct BackwardPlanT {
  std::vector<NodeT<T>*> order;
  std::vector<std::uint8_t> wanted;
};

struct ExecStats {
  long long convs[kNumNodeGroups] = {0, 0, 0, 0, 0};
  long long macs[kNumNodeGroups] = {0, 0, 0, 0, 0};
  long long total_convs() const {
    long long s = 0;
    for (long long c : convs) s += c;
    return s;
  }
  long long total_macs() const {
    long long s = 0;
    for (long long m : macs) s += m;
    return s;
  }
};

template <typename T>
class GraphT {
 public:
  explicit GraphT(ParamStoreT<T>* store) : store_(store) {}
  GraphT(const GraphT&) = delete;
  GraphT& operator=(const GraphT&) = delete;

  NodeT<T>* add(std::unique_ptr<NodeT<T>> node);

  NodeT<T>* input(std::vector<int> shape);
  NodeT<T>* param_node(int param_id);  // one shared node per parameter
  NodeT<T>* conv2d(NodeT<T>* x, NodeT<T>* w, NodeT<T>* b, int stride, int pad);
  NodeT<T>* relu(NodeT<T>* x);
  NodeT<T>* maxpool2(NodeT<T>* x);
  NodeT<T>* upsample2_nearest(NodeT<T>* x);
  NodeT<T>* concat_channels(NodeT<T>* a, NodeT<T>* b);
  NodeT<T>* add_tensors(NodeT<T>* a, NodeT<T>* b);

  ExecPlanT<T> plan(const std::vector<NodeT<T>*>& outputs,
                    const std::vector<NodeT<T>*>& barriers = {}) const;
  BackwardPlanT<T> backward_plan(const ExecPlanT<T>& fwd, NodeT<T>* loss,
                                 const std::vector<NodeT<T>*>& leaves) const;

  void run_forward(const ExecPlanT<T>& plan);
  void run_backward(const ExecPlanT<T>& fwd, const BackwardPlanT<T>& bwd, NodeT<T>* loss);

  bool grad_wanted(const NodeT<T>* n) const {
    if (!active_bwd_) return true;
    size_t i = static_cast<size_t>(n->id);
    return i < active_bwd_->wanted.size() && active_bwd_->wanted[i] != 0;
  }

  ParamStoreT<T>& store() { return *store_; }
  const std::vector<std::unique_ptr<NodeT<T>>>& nodes() const { return nodes_; }
  const std::vector<ParamNodeT<T>*>& param_nodes() const { return param_nodes_; }

  ExecStats& stats() { return stats_; }
  void reset_stats() { stats_ = ExecStats{}; }

  NodeGroup current_group = NodeGroup::kOther;  // applied to newly added nodes

 private:
  ParamStoreT<T>* store_;
  std::vector<std::unique_ptr<NodeT<T>>> nodes_;
  std::vector<ParamNodeT<T>*> param_nodes_;
  std::map<int, NodeT<T>*> param_node_by_id_;
  const BackwardPlanT<T>* active_bwd_ = nullptr;
  ExecStats stats_;
};

using Graph = GraphT<float>;
using Node = NodeT<float>;

}  // namespace stereopose
