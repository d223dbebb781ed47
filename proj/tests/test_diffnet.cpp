#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "stereopose/errors.hpp"
#include "stereopose/estimator.hpp"
#include "stereopose/network.hpp"
#include "stereopose/rng.hpp"

using namespace stereopose;
using stereopose::testing::WeightedSumNode;
using stereopose::testing::fd_check;

namespace {

void fill_random(std::vector<double>& v, RandomStream& rng, double lo, double hi) {
  for (double& x : v) x = rng.uniform(lo, hi);
}

// graph fixture: double store + graph + helper to wrap an output into a
// scalar loss and run the finite-difference oracle. Parameter perturbations
// go through the store, since param nodes re-copy store values each forward.
struct OpFixture {
  ParamStoreT<double> store;
  GraphT<double> graph{&store};

  stereopose::testing::GradCheckReport check(NodeT<double>* out,
                                             std::vector<NodeT<double>*> leaves,
                                             std::uint64_t seed, int coords = 50) {
    auto* loss = static_cast<WeightedSumNode*>(
        graph.add(std::make_unique<WeightedSumNode>(out, seed)));
    ExecPlanT<double> plan = graph.plan({loss});
    BackwardPlanT<double> bwd = graph.backward_plan(plan, loss, leaves);
    graph.run_forward(plan);
    graph.run_backward(plan, bwd, loss);

    std::vector<std::vector<double>*> values;
    std::vector<const std::vector<double>*> grads;
    for (NodeT<double>* leaf : leaves) {
      if (auto* pn = dynamic_cast<ParamNodeT<double>*>(leaf))
        values.push_back(&store.param(pn->param_id).value.v);
      else
        values.push_back(&leaf->out.v);
      grads.push_back(&leaf->out.g);
    }
    auto eval = [&]() {
      graph.run_forward(plan);
      return loss->out.v[0];
    };
    return fd_check(eval, values, grads, coords, seed ^ 0xabcdef);
  }
};

}  // namespace

TEST_CASE("conv2d gradients match finite differences") {
  for (int stride : {1, 2}) {
    OpFixture f;
    RandomStream rng(100 + stride);
    NodeT<double>* x = f.graph.input({3, 8, 8});
    fill_random(x->out.v, rng, -1, 1);
    TensorT<double> wt({4, 3, 3, 3});
    fill_random(wt.v, rng, -0.5, 0.5);
    TensorT<double> bt({4});
    fill_random(bt.v, rng, -0.5, 0.5);
    NodeT<double>* w = f.graph.param_node(f.store.add("w", wt));
    NodeT<double>* b = f.graph.param_node(f.store.add("b", bt));
    NodeT<double>* y = f.graph.conv2d(x, w, b, stride, 1);
    auto rep = f.check(y, {x, w, b}, 11 + stride);
    CHECK(rep.max_rel_err < 1e-4);
    CHECK(rep.checked > 0);
  }
}

TEST_CASE("relu gradients match finite differences away from the kink") {
  OpFixture f;
  RandomStream rng(3);
  NodeT<double>* x = f.graph.input({2, 6, 6});
  for (double& v : x->out.v) {
    v = rng.uniform(0.05, 1.0) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
  }
  NodeT<double>* y = f.graph.relu(x);
  auto rep = f.check(y, {x}, 31);
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("relu passes gradients unchanged on the positive side") {
  OpFixture f;
  NodeT<double>* x = f.graph.input({1, 2, 2});
  x->out.v = {1.0, 2.0, 3.0, 4.0};
  NodeT<double>* y = f.graph.relu(x);
  auto* loss = static_cast<WeightedSumNode*>(
      f.graph.add(std::make_unique<WeightedSumNode>(y, 5)));
  ExecPlanT<double> plan = f.graph.plan({loss});
  BackwardPlanT<double> bwd = f.graph.backward_plan(plan, loss, {x});
  f.graph.run_forward(plan);
  f.graph.run_backward(plan, bwd, loss);
  for (size_t i = 0; i < 4; ++i) CHECK(x->out.g[i] == loss->weights[i]);
}

TEST_CASE("maxpool2, upsample2, concat and add gradients match finite differences") {
  OpFixture f;
  RandomStream rng(17);
  NodeT<double>* a = f.graph.input({2, 8, 8});
  NodeT<double>* b = f.graph.input({3, 4, 4});
  fill_random(a->out.v, rng, -1, 1);
  fill_random(b->out.v, rng, -1, 1);
  NodeT<double>* pooled = f.graph.maxpool2(a);               // (2,4,4)
  NodeT<double>* cat = f.graph.concat_channels(pooled, b);   // (5,4,4)
  NodeT<double>* up = f.graph.upsample2_nearest(cat);        // (5,8,8)
  NodeT<double>* down = f.graph.maxpool2(up);                // (5,4,4)
  NodeT<double>* sum = f.graph.add_tensors(down, cat);
  auto rep = f.check(sum, {a, b}, 19);
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("concat output shape stacks the channels") {
  OpFixture f;
  NodeT<double>* a = f.graph.input({3, 5, 7});
  NodeT<double>* b = f.graph.input({4, 5, 7});
  NodeT<double>* cat = f.graph.concat_channels(a, b);
  CHECK(cat->out.shape == std::vector<int>{7, 5, 7});
  CHECK_THROWS_AS(f.graph.concat_channels(a, f.graph.input({3, 4, 7})), ShapeMismatch);
  CHECK_THROWS_AS(f.graph.add_tensors(a, b), ShapeMismatch);
}

TEST_CASE("built network shapes follow the stride arithmetic for all variants") {
  for (const char* variant : {"D2S4", "D4S4", "D2S8", "D4S8"}) {
    for (int size : {64, 96}) {
      NetConfig cfg;
      cfg.apply_variant(variant);
      cfg.net_w = size;
      cfg.net_h = size;
      cfg.base_channels = 4;
      Network net = build_network<float>(cfg, 1);
      REQUIRE(net.heatmaps.size() == 2);
      for (Node* hm : net.heatmaps)
        CHECK(hm->out.shape == std::vector<int>{21, size / 4, size / 4});
      CHECK(net.disparity_map->out.shape ==
            std::vector<int>{1, size / cfg.disparity_stride, size / cfg.disparity_stride});
      int expected_pools = 0;
      for (int s = cfg.breakpoint_stride(); s < cfg.disparity_stride; s *= 2)
        ++expected_pools;
      CHECK(net.disparity_pool_count() == expected_pools);
    }
  }
}

TEST_CASE("toy D4S4 heatmaps come out at (21,16,16)") {
  NetConfig cfg;  // defaults: D4S4, net 64
  cfg.base_channels = 4;
  Network net = build_network<float>(cfg, 7);
  CHECK(net.heatmaps.back()->out.shape == std::vector<int>{21, 16, 16});
  CHECK(net.disparity_map->out.shape == std::vector<int>{1, 16, 16});
}

TEST_CASE("the disparity path of D2S8 has two downsampling steps, D2S4 one, D4S4 none") {
  auto pools = [](const char* variant) {
    NetConfig cfg;
    cfg.apply_variant(variant);
    cfg.base_channels = 2;
    Network net = build_network<float>(cfg, 3);
    return net.disparity_pool_count();
  };
  CHECK(pools("D4S4") == 0);  // no downsampling in D4S4
  CHECK(pools("D2S4") == 1);
  CHECK(pools("D4S8") == 1);
  CHECK(pools("D2S8") == 2);
}

TEST_CASE("identical seeds give bit-identical parameters") {
  NetConfig cfg;
  cfg.base_channels = 4;
  Network a = build_network<float>(cfg, 99);
  Network b = build_network<float>(cfg, 99);
  Network c = build_network<float>(cfg, 100);
  REQUIRE(a.store().size() == b.store().size());
  bool all_equal = true, any_diff_c = false;
  for (size_t i = 0; i < a.store().size(); ++i) {
    all_equal = all_equal && a.store().param(static_cast<int>(i)).value.v ==
                                 b.store().param(static_cast<int>(i)).value.v;
    any_diff_c = any_diff_c || a.store().param(static_cast<int>(i)).value.v !=
                                   c.store().param(static_cast<int>(i)).value.v;
  }
  CHECK(all_equal);
  CHECK(any_diff_c);
}

TEST_CASE("invalid configurations are rejected") {
  NetConfig cfg;
  cfg.disparity_stride = 3;
  CHECK_THROWS_AS(cfg.validate(), InvalidConfig);
  cfg = NetConfig{};
  cfg.net_w = 60;  // not divisible by stride * 2^depth
  CHECK_THROWS_AS(cfg.validate(), InvalidConfig);
  cfg = NetConfig{};
  cfg.apply_variant("D4S4");
  CHECK_NOTHROW(cfg.validate());
  CHECK_THROWS_AS(cfg.apply_variant("D3S4"), InvalidConfig);
}

TEST_CASE("rmsprop follows the scalar recurrence and zero gradients change nothing") {
  ParamStore store;
  TensorT<float> t({1});
  t.v = {2.0f};
  int id = store.add("p", t);

  // zero gradient: parameter untouched
  rmsprop_step(store, {{0.0f}}, 0.05, 0.9, 1e-8);
  CHECK(store.param(id).value.v[0] == 2.0f);

  // constant gradient for k steps against a hand-stepped recurrence
  float p = store.param(id).value.v[0];
  float acc = store.param(id).acc[0];
  const float g = 0.3f, lr = 0.05f, rho = 0.9f, eps = 1e-8f;
  for (int k = 0; k < 10; ++k) {
    rmsprop_step(store, {{g}}, lr, rho, eps);
    acc = rho * acc + (1.0f - rho) * g * g;
    p -= lr * g / std::sqrt(acc + eps);
    CHECK(store.param(id).value.v[0] == p);
    CHECK(store.param(id).acc[0] == acc);
  }
}

TEST_CASE("frozen parameters and their accumulators never move") {
  ParamStore store;
  TensorT<float> t({2});
  t.v = {1.0f, -1.0f};
  int id = store.add("hf/w", t);
  store.freeze_prefix("hf/");
  rmsprop_step(store, {{5.0f, 5.0f}}, 0.1, 0.9, 1e-8);
  CHECK(store.param(id).value.v == std::vector<float>{1.0f, -1.0f});
  CHECK(store.param(id).acc == std::vector<float>{0.0f, 0.0f});
  store.freeze_prefix("hf/", false);
  rmsprop_step(store, {{5.0f, 5.0f}}, 0.1, 0.9, 1e-8);
  CHECK(store.param(id).value.v[0] != 1.0f);
}

TEST_CASE("checkpoints round trip bit for bit") {
  NetConfig cfg;
  cfg.base_channels = 2;
  cfg.num_stacks = 1;
  Network net = build_network<float>(cfg, 5);
  net.store().freeze_prefix("hf/");
  net.store().param(0).acc[0] = 0.125f;

  std::vector<std::uint8_t> bytes = save_checkpoint(net.store());
  ParamStore back = load_checkpoint(bytes);
  REQUIRE(back.size() == net.store().size());
  for (size_t i = 0; i < back.size(); ++i) {
    const auto& a = net.store().param(static_cast<int>(i));
    const auto& b = back.param(static_cast<int>(i));
    CHECK(a.name == b.name);
    CHECK(a.value.shape == b.value.shape);
    CHECK(a.value.v == b.value.v);
    CHECK(a.acc == b.acc);
    CHECK(a.frozen == b.frozen);
  }
  // and the loaded store rebuilds into a working network
  Network rebuilt = build_network_from_store(cfg, std::move(back));
  CHECK(rebuilt.store().size() == net.store().size());
}

TEST_CASE("an empty store round trips") {
  ParamStore store;
  std::vector<std::uint8_t> bytes = save_checkpoint(store);
  ParamStore back = load_checkpoint(bytes);
  CHECK(back.size() == 0);
}

TEST_CASE("every truncation of a valid checkpoint is rejected") {
  ParamStore store;
  TensorT<float> t({2, 3});
  RandomStream rng(8);
  for (float& v : t.v) v = static_cast<float>(rng.uniform(-1, 1));
  store.add("a/w", t);
  TensorT<float> u({4});
  store.add("b/w", u);
  std::vector<std::uint8_t> bytes = save_checkpoint(store);
  REQUIRE(bytes.size() > 8);
  for (size_t cut = 0; cut < bytes.size(); ++cut) {
    std::vector<std::uint8_t> prefix(bytes.begin(), bytes.begin() + cut);
    CHECK_THROWS_AS(load_checkpoint(prefix), CorruptCheckpoint);
  }
  // trailing garbage and bad magic are rejected too
  std::vector<std::uint8_t> longer = bytes;
  longer.push_back(0);
  CHECK_THROWS_AS(load_checkpoint(longer), CorruptCheckpoint);
  std::vector<std::uint8_t> mangled = bytes;
  mangled[0] = 'X';
  CHECK_THROWS_AS(load_checkpoint(mangled), CorruptCheckpoint);
}

TEST_CASE("checkpoint and config mismatches are reported") {
  NetConfig small;
  small.base_channels = 2;
  small.num_stacks = 1;
  Network net = build_network<float>(small, 5);
  ParamStore store = load_checkpoint(save_checkpoint(net.store()));
  NetConfig other = small;
  other.base_channels = 4;
  CHECK_THROWS_AS(build_network_from_store(other, std::move(store)), DataError);
}

TEST_CASE("forward and backward are deterministic across runs") {
  NetConfig cfg;
  cfg.base_channels = 4;
  auto run = [&]() {
    Network net = build_network<float>(cfg, 21);
    auto hooks = attach_losses(net, 1.0);
    RandomStream rng(3);
    ImageBuffer img(cfg.net_h, cfg.net_w);
    for (float& v : img.data) v = static_cast<float>(rng.uniform());
    set_image_input(net.left_input, img);
    set_image_input(net.right_input, img);

    NormalizedLabels gt(static_cast<size_t>(cfg.num_joints));
    for (auto& p : gt) {
      p.u = rng.uniform(4, 60);
      p.v = rng.uniform(4, 60);
      p.d = rng.uniform(-8, 8);
    }
    hooks.loss_uv->set_target(make_heatmap_target<float>(gt, cfg.heatmap_h(),
                                                         cfg.heatmap_w(),
                                                         cfg.heatmap_stride, 3.0, false));
    hooks.loss_d->set_target(
        make_heatmap_target<float>(gt, cfg.disparity_h(), cfg.disparity_w(),
                                   cfg.disparity_stride, 3.0, true),
        gt);
    GraphT<float>& g = net.graph();
    ExecPlanT<float> plan = g.plan({hooks.loss_total});
    std::vector<NodeT<float>*> leaves(g.param_nodes().begin(), g.param_nodes().end());
    BackwardPlanT<float> bwd = g.backward_plan(plan, hooks.loss_total, leaves);
    g.run_forward(plan);
    g.run_backward(plan, bwd, hooks.loss_total);
    std::vector<std::vector<float>> grads;
    net.accumulate_param_grads(grads);
    return std::make_pair(hooks.loss_total->out.v[0], grads);
  };
  auto [loss_a, grads_a] = run();
  auto [loss_b, grads_b] = run();
  CHECK(loss_a == loss_b);
  CHECK(grads_a == grads_b);
  for (const auto& g : grads_a)
    for (float v : g) CHECK(std::isfinite(v));
}
