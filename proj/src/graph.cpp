#include "stereopose/graph.hpp"

#include <algorithm>
#include <cstring>

#include "stereopose/errors.hpp"

namespace stereopose {

namespace {

// C[M,N] += A[M,K] * B[K,N]
template <typename T>
void gemm_acc(const T* a, const T* b, T* c, int m_dim, int k_dim, int n_dim) {
  for (int m = 0; m < m_dim; ++m) {
    const T* arow = a + static_cast<size_t>(m) * k_dim;
    T* crow = c + static_cast<size_t>(m) * n_dim;
    for (int k = 0; k < k_dim; ++k) {
      T av = arow[k];
      if (av == T(0)) continue;
      const T* brow = b + static_cast<size_t>(k) * n_dim;
      for (int n = 0; n < n_dim; ++n) crow[n] += av * brow[n];
    }
  }
}

// C[M,K] += A[M,N] * B[K,N]^T
template <typename T>
void gemm_nt_acc(const T* a, const T* b, T* c, int m_dim, int n_dim, int k_dim) {
  for (int m = 0; m < m_dim; ++m) {
    const T* arow = a + static_cast<size_t>(m) * n_dim;
    T* crow = c + static_cast<size_t>(m) * k_dim;
    for (int k = 0; k < k_dim; ++k) {
      const T* brow = b + static_cast<size_t>(k) * n_dim;
      T acc = T(0);
      for (int n = 0; n < n_dim; ++n) acc += arow[n] * brow[n];
      crow[k] += acc;
    }
  }
}

// C[M,N] += A[K,M]^T * B[K,N]
template <typename T>
void gemm_tn_acc(const T* a, const T* b, T* c, int k_dim, int m_dim, int n_dim) {
  for (int k = 0; k < k_dim; ++k) {
    const T* arow = a + static_cast<size_t>(k) * m_dim;
    const T* brow = b + static_cast<size_t>(k) * n_dim;
    for (int m = 0; m < m_dim; ++m) {
      T av = arow[m];
      if (av == T(0)) continue;
      T* crow = c + static_cast<size_t>(m) * n_dim;
      for (int n = 0; n < n_dim; ++n) crow[n] += av * brow[n];
    }
  }
}

template <typename T>
void im2col(const T* x, T* col, int ch, int h, int w, int kh, int kw, int stride, int pad,
            int ho, int wo) {
  for (int c = 0; c < ch; ++c) {
    const T* plane = x + static_cast<size_t>(c) * h * w;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        T* row = col + (static_cast<size_t>(c) * kh * kw + static_cast<size_t>(ky) * kw + kx) *
                           ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          int sy = oy * stride + ky - pad;
          T* dst = row + static_cast<size_t>(oy) * wo;
          if (sy < 0 || sy >= h) {
            std::fill(dst, dst + wo, T(0));
            continue;
          }
          const T* src = plane + static_cast<size_t>(sy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            int sx = ox * stride + kx - pad;
            dst[ox] = (sx < 0 || sx >= w) ? T(0) : src[sx];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_acc(const T* col, T* x, int ch, int h, int w, int kh, int kw, int stride, int pad,
                int ho, int wo) {
  for (int c = 0; c < ch; ++c) {
    T* plane = x + static_cast<size_t>(c) * h * w;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const T* row = col + (static_cast<size_t>(c) * kh * kw +
                              static_cast<size_t>(ky) * kw + kx) *
                                 ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          int sy = oy * stride + ky - pad;
          if (sy < 0 || sy >= h) continue;
          const T* src = row + static_cast<size_t>(oy) * wo;
          T* dst = plane + static_cast<size_t>(sy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            int sx = ox * stride + kx - pad;
            if (sx >= 0 && sx < w) dst[sx] += src[ox];
          }
        }
      }
    }
  }
}

template <typename T>
std::vector<int> require_chw(const NodeT<T>* n, const char* who) {
  if (n->out.rank() != 3)
    throw ShapeMismatch(std::string(who) + ": expected rank-3 input, got " +
                        shape_str(n->out.shape));
  return n->out.shape;
}

}  // namespace

// ---------------------------------------------------------------------------
// Nodes
// ---------------------------------------------------------------------------

template <typename T>
void ParamNodeT<T>::forward(GraphT<T>& g) {
  const ParameterT<T>& p = g.store().param(param_id);
  std::copy(p.value.v.begin(), p.value.v.end(), this->out.v.begin());
}

template <typename T>
Conv2dNodeT<T>::Conv2dNodeT(std::vector<int> shape, NodeT<T>* x, NodeT<T>* w, NodeT<T>* b,
                            int stride, int pad)
    : NodeT<T>(std::move(shape)), stride(stride), pad(pad) {
  this->in = {x, w, b};
}

template <typename T>
void Conv2dNodeT<T>::forward(GraphT<T>&) {
  const TensorT<T>& x = this->in[0]->out;
  const TensorT<T>& w = this->in[1]->out;
  const TensorT<T>& b = this->in[2]->out;
  int ci = x.dim(0), h = x.dim(1), wd = x.dim(2);
  int co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  int ho = this->out.dim(1), wo = this->out.dim(2);
  int k_dim = ci * kh * kw;
  int n_dim = ho * wo;
  col_.assign(static_cast<size_t>(k_dim) * n_dim, T(0));
  im2col(x.v.data(), col_.data(), ci, h, wd, kh, kw, stride, pad, ho, wo);
  for (int c = 0; c < co; ++c) {
    T* dst = this->out.v.data() + static_cast<size_t>(c) * n_dim;
    std::fill(dst, dst + n_dim, b.v[static_cast<size_t>(c)]);
  }
  gemm_acc(w.v.data(), col_.data(), this->out.v.data(), co, k_dim, n_dim);
}

template <typename T>
void Conv2dNodeT<T>::backward(GraphT<T>& g) {
  TensorT<T>& x = this->in[0]->out;
  TensorT<T>& w = this->in[1]->out;
  TensorT<T>& b = this->in[2]->out;
  int ci = x.dim(0), h = x.dim(1), wd = x.dim(2);
  int co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  int ho = this->out.dim(1), wo = this->out.dim(2);
  int k_dim = ci * kh * kw;
  int n_dim = ho * wo;
  const T* gy = this->out.g.data();

  if (g.grad_wanted(this->in[2])) {
    for (int c = 0; c < co; ++c) {
      const T* row = gy + static_cast<size_t>(c) * n_dim;
      T acc = T(0);
      for (int n = 0; n < n_dim; ++n) acc += row[n];
      b.g[static_cast<size_t>(c)] += acc;
    }
  }
  if (g.grad_wanted(this->in[1]))
    gemm_nt_acc(gy, col_.data(), w.g.data(), co, n_dim, k_dim);
  if (g.grad_wanted(this->in[0])) {
    std::vector<T> dcol(static_cast<size_t>(k_dim) * n_dim, T(0));
    gemm_tn_acc(w.v.data(), gy, dcol.data(), co, k_dim, n_dim);
    col2im_acc(dcol.data(), x.g.data(), ci, h, wd, kh, kw, stride, pad, ho, wo);
  }
}

template <typename T>
long long Conv2dNodeT<T>::macs() const {
  const TensorT<T>& w = this->in[1]->out;
  return static_cast<long long>(this->out.numel()) * w.dim(1) * w.dim(2) * w.dim(3);
}

template <typename T>
ReluNodeT<T>::ReluNodeT(NodeT<T>* x) : NodeT<T>(x->out.shape) {
  this->in = {x};
}

template <typename T>
void ReluNodeT<T>::forward(GraphT<T>&) {
  const TensorT<T>& x = this->in[0]->out;
  for (size_t i = 0; i < x.numel(); ++i) this->out.v[i] = x.v[i] > T(0) ? x.v[i] : T(0);
}

template <typename T>
void ReluNodeT<T>::backward(GraphT<T>& g) {
  if (!g.grad_wanted(this->in[0])) return;
  TensorT<T>& x = this->in[0]->out;
  // subgradient at 0 is 0
  for (size_t i = 0; i < x.numel(); ++i)
    if (x.v[i] > T(0)) x.g[i] += this->out.g[i];
}

template <typename T>
MaxPool2NodeT<T>::MaxPool2NodeT(NodeT<T>* x)
    : NodeT<T>([&] {
        std::vector<int> s = require_chw(x, "maxpool2");
        if (s[1] % 2 != 0 || s[2] % 2 != 0)
          throw ShapeMismatch("maxpool2: odd input extent " + shape_str(s));
        return std::vector<int>{s[0], s[1] / 2, s[2] / 2};
      }()) {
  this->in = {x};
}

template <typename T>
void MaxPool2NodeT<T>::forward(GraphT<T>&) {
  const TensorT<T>& x = this->in[0]->out;
  int ch = x.dim(0), h = x.dim(1), w = x.dim(2);
  int ho = h / 2, wo = w / 2;
  argmax_.resize(this->out.numel());
  for (int c = 0; c < ch; ++c) {
    const T* plane = x.v.data() + static_cast<size_t>(c) * h * w;
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        int base = (2 * oy) * w + 2 * ox;
        int best = base;
        T bv = plane[base];
        const int cand[3] = {base + 1, base + w, base + w + 1};
        for (int idx : cand) {
          if (plane[idx] > bv) {
            bv = plane[idx];
            best = idx;
          }
        }
        size_t o = (static_cast<size_t>(c) * ho + oy) * wo + ox;
        this->out.v[o] = bv;
        argmax_[o] = best + c * h * w;
      }
    }
  }
}

template <typename T>
void MaxPool2NodeT<T>::backward(GraphT<T>& g) {
  if (!g.grad_wanted(this->in[0])) return;
  TensorT<T>& x = this->in[0]->out;
  for (size_t o = 0; o < this->out.numel(); ++o)
    x.g[static_cast<size_t>(argmax_[o])] += this->out.g[o];
}

template <typename T>
Upsample2NodeT<T>::Upsample2NodeT(NodeT<T>* x)
    : NodeT<T>([&] {
        std::vector<int> s = require_chw(x, "upsample2_nearest");
        return std::vector<int>{s[0], s[1] * 2, s[2] * 2};
      }()) {
  this->in = {x};
}

template <typename T>
void Upsample2NodeT<T>::forward(GraphT<T>&) {
  const TensorT<T>& x = this->in[0]->out;
  int ch = x.dim(0), h = x.dim(1), w = x.dim(2);
  for (int c = 0; c < ch; ++c) {
    for (int y = 0; y < 2 * h; ++y) {
      const T* src = x.v.data() + (static_cast<size_t>(c) * h + y / 2) * w;
      T* dst = this->out.v.data() + (static_cast<size_t>(c) * 2 * h + y) * 2 * w;
      for (int xph = 0; xph < 2 * w; ++xph) dst[xph] = src[xph / 2];
    }
  }
}

template <typename T>
void Upsample2NodeT<T>::backward(GraphT<T>& g) {
  if (!g.grad_wanted(this->in[0])) return;
  TensorT<T>& x = this->in[0]->out;
  int ch = x.dim(0), h = x.dim(1), w = x.dim(2);
  for (int c = 0; c < ch; ++c) {
    for (int y = 0; y < 2 * h; ++y) {
      T* dst = x.g.data() + (static_cast<size_t>(c) * h + y / 2) * w;
      const T* src = this->out.g.data() + (static_cast<size_t>(c) * 2 * h + y) * 2 * w;
      for (int xph = 0; xph < 2 * w; ++xph) dst[xph / 2] += src[xph];
    }
  }
}

template <typename T>
ConcatNodeT<T>::ConcatNodeT(NodeT<T>* a, NodeT<T>* b)
    : NodeT<T>([&] {
        std::vector<int> sa = require_chw(a, "concat_channels");
        std::vector<int> sb = require_chw(b, "concat_channels");
        if (sa[1] != sb[1] || sa[2] != sb[2])
          throw ShapeMismatch("concat_channels: " + shape_str(sa) + " vs " + shape_str(sb));
        return std::vector<int>{sa[0] + sb[0], sa[1], sa[2]};
      }()) {
  this->in = {a, b};
}

template <typename T>
void ConcatNodeT<T>::forward(GraphT<T>&) {
  const TensorT<T>& a = this->in[0]->out;
  const TensorT<T>& b = this->in[1]->out;
  std::copy(a.v.begin(), a.v.end(), this->out.v.begin());
  std::copy(b.v.begin(), b.v.end(), this->out.v.begin() + static_cast<long>(a.numel()));
}

template <typename T>
void ConcatNodeT<T>::backward(GraphT<T>& g) {
  TensorT<T>& a = this->in[0]->out;
  TensorT<T>& b = this->in[1]->out;
  if (g.grad_wanted(this->in[0]))
    for (size_t i = 0; i < a.numel(); ++i) a.g[i] += this->out.g[i];
  if (g.grad_wanted(this->in[1]))
    for (size_t i = 0; i < b.numel(); ++i) b.g[i] += this->out.g[a.numel() + i];
}

template <typename T>
AddNodeT<T>::AddNodeT(NodeT<T>* a, NodeT<T>* b) : NodeT<T>(a->out.shape) {
  if (a->out.shape != b->out.shape)
    throw ShapeMismatch("add: " + shape_str(a->out.shape) + " vs " + shape_str(b->out.shape));
  this->in = {a, b};
}

template <typename T>
void AddNodeT<T>::forward(GraphT<T>&) {
  const TensorT<T>& a = this->in[0]->out;
  const TensorT<T>& b = this->in[1]->out;
  for (size_t i = 0; i < a.numel(); ++i) this->out.v[i] = a.v[i] + b.v[i];
}

template <typename T>
void AddNodeT<T>::backward(GraphT<T>& g) {
  for (int k = 0; k < 2; ++k) {
    if (!g.grad_wanted(this->in[k])) continue;
    TensorT<T>& t = this->in[k]->out;
    for (size_t i = 0; i < t.numel(); ++i) t.g[i] += this->out.g[i];
  }
}

// ---------------------------------------------------------------------------
// Graph
// ---------------------------------------------------------------------------

template <typename T>
NodeT<T>* GraphT<T>::add(std::unique_ptr<NodeT<T>> node) {
  node->id = static_cast<int>(nodes_.size());
  node->group = current_group;
  nodes_.push_back(std::move(node));
  return nodes_.back().get();
}

template <typename T>
NodeT<T>* GraphT<T>::input(std::vector<int> shape) {
  return add(std::make_unique<InputNodeT<T>>(std::move(shape)));
}

template <typename T>
NodeT<T>* GraphT<T>::param_node(int param_id) {
  auto it = param_node_by_id_.find(param_id);
  if (it != param_node_by_id_.end()) return it->second;
  const ParameterT<T>& p = store_->param(param_id);
  auto node = std::make_unique<ParamNodeT<T>>(p.value.shape, param_id);
  ParamNodeT<T>* raw = node.get();
  add(std::move(node));
  param_nodes_.push_back(raw);
  param_node_by_id_[param_id] = raw;
  return raw;
}

template <typename T>
NodeT<T>* GraphT<T>::conv2d(NodeT<T>* x, NodeT<T>* w, NodeT<T>* b, int stride, int pad) {
  std::vector<int> xs = require_chw(x, "conv2d");
  const std::vector<int>& ws = w->out.shape;
  if (ws.size() != 4) throw ShapeMismatch("conv2d: weight must be rank 4");
  if (ws[1] != xs[0])
    throw ShapeMismatch("conv2d: input channels " + shape_str(xs) + " vs weight " +
                        shape_str(ws));
  if (b->out.shape != std::vector<int>{ws[0]})
    throw ShapeMismatch("conv2d: bias shape " + shape_str(b->out.shape));
  int ho = (xs[1] + 2 * pad - ws[2]) / stride + 1;
  int wo = (xs[2] + 2 * pad - ws[3]) / stride + 1;
  if (ho <= 0 || wo <= 0) throw ShapeMismatch("conv2d: empty output");
  return add(std::make_unique<Conv2dNodeT<T>>(std::vector<int>{ws[0], ho, wo}, x, w, b,
                                              stride, pad));
}

template <typename T>
NodeT<T>* GraphT<T>::relu(NodeT<T>* x) {
  return add(std::make_unique<ReluNodeT<T>>(x));
}

template <typename T>
NodeT<T>* GraphT<T>::maxpool2(NodeT<T>* x) {
  return add(std::make_unique<MaxPool2NodeT<T>>(x));
}

template <typename T>
NodeT<T>* GraphT<T>::upsample2_nearest(NodeT<T>* x) {
  return add(std::make_unique<Upsample2NodeT<T>>(x));
}

template <typename T>
NodeT<T>* GraphT<T>::concat_channels(NodeT<T>* a, NodeT<T>* b) {
  return add(std::make_unique<ConcatNodeT<T>>(a, b));
}

template <typename T>
NodeT<T>* GraphT<T>::add_tensors(NodeT<T>* a, NodeT<T>* b) {
  return add(std::make_unique<AddNodeT<T>>(a, b));
}

template <typename T>
ExecPlanT<T> GraphT<T>::plan(const std::vector<NodeT<T>*>& outputs,
                             const std::vector<NodeT<T>*>& barriers) const {
  std::vector<std::uint8_t> needed(nodes_.size(), 0);
  std::vector<std::uint8_t> barrier(nodes_.size(), 0);
  for (const NodeT<T>* b : barriers) barrier[static_cast<size_t>(b->id)] = 1;

  std::vector<const NodeT<T>*> stack(outputs.begin(), outputs.end());
  std::vector<std::uint8_t> is_barrier_leaf(nodes_.size(), 0);
  while (!stack.empty()) {
    const NodeT<T>* n = stack.back();
    stack.pop_back();
    size_t i = static_cast<size_t>(n->id);
    if (needed[i]) continue;
    needed[i] = 1;
    if (barrier[i]) {
      is_barrier_leaf[i] = 1;
      continue;
    }
    for (NodeT<T>* src : n->in)
      if (!needed[static_cast<size_t>(src->id)]) stack.push_back(src);
  }

  ExecPlanT<T> p;
  for (const auto& n : nodes_) {
    size_t i = static_cast<size_t>(n->id);
    if (!needed[i]) continue;
    p.grad_zero.push_back(n.get());
    if (!is_barrier_leaf[i]) p.order.push_back(n.get());
  }
  return p;
}

template <typename T>
BackwardPlanT<T> GraphT<T>::backward_plan(const ExecPlanT<T>& fwd, NodeT<T>* loss,
                                          const std::vector<NodeT<T>*>& leaves) const {
  BackwardPlanT<T> bp;
  bp.wanted.assign(nodes_.size(), 0);
  std::vector<std::uint8_t> in_plan(nodes_.size(), 0);
  for (const NodeT<T>* n : fwd.order) in_plan[static_cast<size_t>(n->id)] = 1;
  for (const NodeT<T>* leaf : leaves) {
    size_t i = static_cast<size_t>(leaf->id);
    if (i < bp.wanted.size()) bp.wanted[i] = in_plan[i];
  }
  // a node's gradient is wanted when any of its inputs' gradients are
  for (NodeT<T>* n : fwd.order) {
    size_t i = static_cast<size_t>(n->id);
    if (bp.wanted[i]) continue;
    for (NodeT<T>* src : n->in) {
      if (bp.wanted[static_cast<size_t>(src->id)]) {
        bp.wanted[i] = 1;
        break;
      }
    }
  }
  if (!bp.wanted[static_cast<size_t>(loss->id)]) {
    // nothing trainable feeds the loss; backward is a no-op
    return bp;
  }
  for (NodeT<T>* n : fwd.order)
    if (bp.wanted[static_cast<size_t>(n->id)]) bp.order.push_back(n);
  return bp;
}

template <typename T>
void GraphT<T>::run_forward(const ExecPlanT<T>& plan) {
  for (NodeT<T>* n : plan.order) {
    n->forward(*this);
    long long m = n->macs();
    if (m > 0) {
      stats_.macs[static_cast<int>(n->group)] += m;
      stats_.convs[static_cast<int>(n->group)] += 1;
    }
  }
}

template <typename T>
void GraphT<T>::run_backward(const ExecPlanT<T>& fwd, const BackwardPlanT<T>& bwd,
                             NodeT<T>* loss) {
  for (NodeT<T>* n : fwd.grad_zero) n->out.zero_grad();
  if (loss->out.numel() != 1) throw ShapeMismatch("backward: loss must be scalar");
  loss->out.g[0] = T(1);
  active_bwd_ = &bwd;
  for (auto it = bwd.order.rbegin(); it != bwd.order.rend(); ++it) (*it)->backward(*this);
  active_bwd_ = nullptr;
}

template class NodeT<float>;
template class NodeT<double>;
template class InputNodeT<float>;
template class InputNodeT<double>;
template class ParamNodeT<float>;
template class ParamNodeT<double>;
template class Conv2dNodeT<float>;
template class Conv2dNodeT<double>;
template class ReluNodeT<float>;
template class ReluNodeT<double>;
template class MaxPool2NodeT<float>;
template class MaxPool2NodeT<double>;
template class Upsample2NodeT<float>;
template class Upsample2NodeT<double>;
template class ConcatNodeT<float>;
template class ConcatNodeT<double>;
template class AddNodeT<float>;
template class AddNodeT<double>;
template class GraphT<float>;
template class GraphT<double>;

}  // namespace stereopose
