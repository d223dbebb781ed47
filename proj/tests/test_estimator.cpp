#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "stereopose/errors.hpp"
#include "stereopose/estimator.hpp"
#include "stereopose/rng.hpp"

using namespace stereopose;
using stereopose::testing::fd_check;

namespace {

NormalizedLabels random_labels(RandomStream& rng, int count, double lo, double hi) {
  NormalizedLabels gt(static_cast<size_t>(count));
  for (auto& p : gt) {
    p.u = rng.uniform(lo, hi);
    p.v = rng.uniform(lo, hi);
    p.d = rng.uniform(-10, 10);
  }
  return gt;
}

}  // namespace

TEST_CASE("normalized heatmap targets sum to one") {
  RandomStream rng(1);
  NormalizedLabels gt = random_labels(rng, 21, 2, 62);
  HeatmapTargetT<double> t = make_heatmap_target<double>(gt, 16, 16, 4, 3.0, true);
  for (int j = 0; j < 21; ++j) {
    double sum = 0.0;
    for (int i = 0; i < 16 * 16; ++i) sum += t.joint(j)[i];
    CHECK(std::abs(sum - 1.0) < 1e-9);
  }
}

TEST_CASE("heatmap peak at the nearest grid cell, unnormalized peak is 1") {
  NormalizedLabels gt = {{4 * 5.3, 4 * 9.8, 0}};  // grid cell near (10, 5)
  HeatmapTargetT<double> t = make_heatmap_target<double>(gt, 16, 16, 4, 3.0, false);
  int best = 0;
  for (int i = 0; i < 16 * 16; ++i)
    if (t.joint(0)[i] > t.joint(0)[best]) best = i;
  CHECK(best / 16 == 10);  // row m pairs with v
  CHECK(best % 16 == 5);   // column n pairs with u
  CHECK(t.joint(0)[best] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("cells equidistant from the joint get equal values") {
  NormalizedLabels gt = {{4 * 7.5, 4 * 3.0, 0}};  // center between columns 7 and 8
  HeatmapTargetT<double> t = make_heatmap_target<double>(gt, 16, 16, 4, 3.0, true);
  CHECK(t.joint(0)[3 * 16 + 7] == doctest::Approx(t.joint(0)[3 * 16 + 8]).epsilon(1e-12));
  CHECK(t.joint(0)[2 * 16 + 7] == doctest::Approx(t.joint(0)[4 * 16 + 7]).epsilon(1e-12));
}

TEST_CASE("joints just outside the grid still normalize; far outside raises EmptyHeatmap") {
  NormalizedLabels near = {{-4.0 * 3, 8.0, 0}};  // 3 cells outside
  HeatmapTargetT<double> t = make_heatmap_target<double>(near, 16, 16, 4, 3.0, true);
  double sum = 0.0;
  for (int i = 0; i < 16 * 16; ++i) sum += t.joint(0)[i];
  CHECK(std::abs(sum - 1.0) < 1e-9);

  NormalizedLabels far = {{-4.0 * 19, 8.0, 0}};  // 19 cells > 6 * sigma
  CHECK_THROWS_AS(make_heatmap_target<double>(far, 16, 16, 4, 3.0, true), EmptyHeatmap);
}

TEST_CASE("decode_2d recovers a one-hot peak exactly and breaks ties low") {
  TensorT<float> maps({2, 8, 8});
  maps.v[static_cast<size_t>(0) * 64 + 3 * 8 + 6] = 1.0f;  // joint 0 at (m=3, n=6)
  // joint 1 stays uniform at zero: tie-break to (0, 0)
  auto est = decode_2d(maps, 4);
  CHECK(est[0].u == doctest::Approx(4.0 * 6));
  CHECK(est[0].v == doctest::Approx(4.0 * 3));
  CHECK(est[0].confidence == doctest::Approx(1.0));
  CHECK(est[1].u == 0.0);
  CHECK(est[1].v == 0.0);
}

TEST_CASE("decode_2d lands within half a cell of the encoded location") {
  RandomStream rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    NormalizedLabels gt = {{rng.uniform(8, 56), rng.uniform(8, 56), 0}};
    HeatmapTargetT<float> t = make_heatmap_target<float>(gt, 16, 16, 4, 3.0, false);
    TensorT<float> maps({1, 16, 16});
    std::copy(t.values.begin(), t.values.end(), maps.v.begin());
    auto est = decode_2d(maps, 4);
    CHECK(std::abs(est[0].u - gt[0].u) < 0.5 * 4);
    CHECK(std::abs(est[0].v - gt[0].v) < 0.5 * 4);
  }
}

TEST_CASE("soft-argmax decoding is available and lands near the peak") {
  NormalizedLabels gt = {{4 * 9.4, 4 * 6.6, 0}};
  HeatmapTargetT<float> t = make_heatmap_target<float>(gt, 16, 16, 4, 3.0, false);
  TensorT<float> maps({1, 16, 16});
  std::copy(t.values.begin(), t.values.end(), maps.v.begin());
  auto est = decode_2d(maps, 4, DecodeMode::kSoftArgmax);
  CHECK(std::abs(est[0].u - gt[0].u) < 4.0);
  CHECK(std::abs(est[0].v - gt[0].v) < 4.0);
}

TEST_CASE("sample_disparity is exact at grid cells and midpoints") {
  TensorT<float> map({1, 4, 6});
  RandomStream rng(2);
  for (float& v : map.v) v = static_cast<float>(rng.uniform(-5, 5));
  const int s = 4;
  std::vector<JointEstimate> q = {{s * 2.0, s * 1.0, 0, 0}, {s * 2.5, s * 1.0, 0, 0}};
  auto d = sample_disparity(map, s, q);
  CHECK(d[0] == doctest::Approx(map.v[1 * 6 + 2]).epsilon(1e-12));
  CHECK(d[1] == doctest::Approx(0.5 * (map.v[1 * 6 + 2] + map.v[1 * 6 + 3])).epsilon(1e-7));
}

TEST_CASE("sample_disparity equals the brute-force double sum of the bilinear kernel") {
  RandomStream rng(31);
  const int gh = 7, gw = 9, s = 4;
  for (int trial = 0; trial < 1000; ++trial) {
    TensorT<double> map({1, gh, gw});
    for (double& v : map.v) v = rng.uniform(-10, 10);
    // include queries far outside the grid to exercise the border clamp
    double u = rng.uniform(-2.0 * s * gw, 2.0 * s * gw);
    double v = rng.uniform(-2.0 * s * gh, 2.0 * s * gh);
    std::vector<JointEstimate> q = {{u, v, 0, 0}};
    double got = sample_disparity(map, s, q)[0];

    // brute force: d = sum_{m,n} D[m,n] * G(n, u/s) * G(m, v/s) on the
    // clamped query, G(p, q) = max(0, 1 - |p - q|)
    double qu = std::clamp(u / s, 0.0, static_cast<double>(gw - 1));
    double qv = std::clamp(v / s, 0.0, static_cast<double>(gh - 1));
    double want = 0.0;
    for (int m = 0; m < gh; ++m)
      for (int n = 0; n < gw; ++n) {
        double g = std::max(0.0, 1.0 - std::abs(n - qu)) *
                   std::max(0.0, 1.0 - std::abs(m - qv));
        want += map.v[static_cast<size_t>(m) * gw + n] * g;
      }
    CHECK(std::abs(got - want) < 1e-12 * std::max(1.0, std::abs(want)));
  }
}

TEST_CASE("sampling at a one-hot target location equals the loss-side expectation") {
  // Dirac consistency between the inference-side sampler and the loss
  RandomStream rng(4);
  TensorT<double> map({1, 8, 8});
  for (double& v : map.v) v = rng.uniform(-3, 3);
  const int s = 8;
  for (int m = 0; m < 8; ++m)
    for (int n = 0; n < 8; ++n) {
      std::vector<JointEstimate> q = {{static_cast<double>(s * n),
                                       static_cast<double>(s * m), 0, 0}};
      double sampled = sample_disparity(map, s, q)[0];
      // expectation under a one-hot H at (m, n) is exactly D[m, n]
      CHECK(sampled == map.v[static_cast<size_t>(m) * 8 + n]);
    }
}

TEST_CASE("huber branch values") {
  CHECK(huber(0.5, 1.0) == doctest::Approx(0.125).epsilon(1e-15));
  CHECK(huber(2.0, 1.0) == doctest::Approx(1.5).epsilon(1e-15));
  CHECK(huber(-2.0, 1.0) == doctest::Approx(1.5).epsilon(1e-15));
}

TEST_CASE("loss_uv is zero at the target and c^2 per stack for a constant offset") {
  ParamStoreT<double> store;
  GraphT<double> g(&store);
  NodeT<double>* s1 = g.input({2, 4, 4});
  NodeT<double>* s2 = g.input({2, 4, 4});
  auto* loss = static_cast<HeatmapLossNodeT<double>*>(
      g.add(std::make_unique<HeatmapLossNodeT<double>>(std::vector<NodeT<double>*>{s1, s2})));

  RandomStream rng(6);
  HeatmapTargetT<double> target;
  target.values.assign(2 * 4 * 4, 0.0);
  target.scale.assign(2, 1.0);
  for (double& v : target.values) v = rng.uniform(0, 1);
  loss->set_target(target);

  std::copy(target.values.begin(), target.values.end(), s1->out.v.begin());
  std::copy(target.values.begin(), target.values.end(), s2->out.v.begin());
  ExecPlanT<double> plan = g.plan({loss});
  g.run_forward(plan);
  CHECK(loss->out.v[0] == doctest::Approx(0.0).epsilon(1e-15));

  const double c = 0.37;
  for (size_t i = 0; i < s1->out.numel(); ++i) s1->out.v[i] += c;
  g.run_forward(plan);
  CHECK(loss->out.v[0] == doctest::Approx(c * c).epsilon(1e-9));  // one offset stack

  for (size_t i = 0; i < s2->out.numel(); ++i) s2->out.v[i] += c;
  g.run_forward(plan);
  CHECK(loss->out.v[0] == doctest::Approx(2 * c * c).epsilon(1e-9));
}

TEST_CASE("loss_uv equals a direct elementwise recomputation") {
  ParamStoreT<double> store;
  GraphT<double> g(&store);
  NodeT<double>* s1 = g.input({3, 5, 4});
  auto* loss = static_cast<HeatmapLossNodeT<double>*>(
      g.add(std::make_unique<HeatmapLossNodeT<double>>(std::vector<NodeT<double>*>{s1})));
  RandomStream rng(12);
  HeatmapTargetT<double> target;
  target.values.assign(3 * 5 * 4, 0.0);
  target.scale.assign(3, 1.0);
  for (double& v : target.values) v = rng.uniform(0, 1);
  loss->set_target(target);
  for (double& v : s1->out.v) v = rng.uniform(-1, 1);
  ExecPlanT<double> plan = g.plan({loss});
  g.run_forward(plan);
  double want = 0.0;
  for (size_t i = 0; i < s1->out.numel(); ++i) {
    double r = s1->out.v[i] - target.values[i];
    want += r * r;
  }
  want /= static_cast<double>(s1->out.numel());
  CHECK(loss->out.v[0] == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("loss_d reduces to Huber of (gt - c) under a constant map") {
  ParamStoreT<double> store;
  GraphT<double> g(&store);
  NodeT<double>* map = g.input({1, 8, 8});
  const double c = 2.75;
  std::fill(map->out.v.begin(), map->out.v.end(), c);
  const int joints = 5;
  auto* loss = static_cast<DisparityLossNodeT<double>*>(
      g.add(std::make_unique<DisparityLossNodeT<double>>(map, joints, 1.0)));

  RandomStream rng(14);
  NormalizedLabels gt = random_labels(rng, joints, 8, 56);
  HeatmapTargetT<double> target = make_heatmap_target<double>(gt, 8, 8, 8, 3.0, true);
  loss->set_target(target, gt);
  ExecPlanT<double> plan = g.plan({loss});
  g.run_forward(plan);

  double want = 0.0;
  for (const auto& p : gt) want += huber(p.d - c, 1.0);
  want /= joints;
  CHECK(loss->out.v[0] == doctest::Approx(want).epsilon(1e-9));
}

TEST_CASE("loss_d matches the brute-force expectation plus Huber computation") {
  ParamStoreT<double> store;
  GraphT<double> g(&store);
  NodeT<double>* map = g.input({1, 8, 8});
  RandomStream rng(15);
  for (double& v : map->out.v) v = rng.uniform(-6, 6);
  const int joints = 7;
  auto* loss = static_cast<DisparityLossNodeT<double>*>(
      g.add(std::make_unique<DisparityLossNodeT<double>>(map, joints, 1.0)));
  NormalizedLabels gt = random_labels(rng, joints, 4, 60);
  HeatmapTargetT<double> target = make_heatmap_target<double>(gt, 8, 8, 8, 3.0, true);
  loss->set_target(target, gt);
  ExecPlanT<double> plan = g.plan({loss});
  g.run_forward(plan);

  double want = 0.0;
  for (int j = 0; j < joints; ++j) {
    double expect = 0.0;
    for (int i = 0; i < 64; ++i) expect += target.joint(j)[i] * map->out.v[static_cast<size_t>(i)];
    want += huber(gt[static_cast<size_t>(j)].d - expect, 1.0);
  }
  want /= joints;
  CHECK(loss->out.v[0] == doctest::Approx(want).epsilon(1e-9));
}

TEST_CASE("loss_d rejects unnormalized targets") {
  ParamStoreT<double> store;
  GraphT<double> g(&store);
  NodeT<double>* map = g.input({1, 8, 8});
  auto* loss = static_cast<DisparityLossNodeT<double>*>(
      g.add(std::make_unique<DisparityLossNodeT<double>>(map, 3, 1.0)));
  RandomStream rng(16);
  NormalizedLabels gt = random_labels(rng, 3, 8, 56);
  HeatmapTargetT<double> target = make_heatmap_target<double>(gt, 8, 8, 8, 3.0, false);
  CHECK_THROWS_AS(loss->set_target(target, gt), UnnormalizedTarget);
}

TEST_CASE("loss_d is invariant to joint permutation") {
  auto eval = [](const NormalizedLabels& gt, const TensorT<double>& mapv) {
    ParamStoreT<double> store;
    GraphT<double> g(&store);
    NodeT<double>* map = g.input({1, 8, 8});
    map->out.v = mapv.v;
    auto* loss = static_cast<DisparityLossNodeT<double>*>(g.add(
        std::make_unique<DisparityLossNodeT<double>>(map, static_cast<int>(gt.size()), 1.0)));
    loss->set_target(make_heatmap_target<double>(gt, 8, 8, 8, 3.0, true), gt);
    ExecPlanT<double> plan = g.plan({loss});
    g.run_forward(plan);
    return loss->out.v[0];
  };
  RandomStream rng(18);
  TensorT<double> map({1, 8, 8});
  for (double& v : map.v) v = rng.uniform(-4, 4);
  NormalizedLabels gt = random_labels(rng, 6, 8, 56);
  NormalizedLabels perm = {gt[3], gt[0], gt[5], gt[1], gt[4], gt[2]};
  CHECK(eval(gt, map) == doctest::Approx(eval(perm, map)).epsilon(1e-12));
}

TEST_CASE("loss and sampling gradients match finite differences") {
  ParamStoreT<double> store;
  GraphT<double> g(&store);
  RandomStream rng(20);

  NodeT<double>* s1 = g.input({3, 8, 8});
  NodeT<double>* s2 = g.input({3, 8, 8});
  for (double& v : s1->out.v) v = rng.uniform(-1, 1);
  for (double& v : s2->out.v) v = rng.uniform(-1, 1);
  auto* luv = static_cast<HeatmapLossNodeT<double>*>(
      g.add(std::make_unique<HeatmapLossNodeT<double>>(std::vector<NodeT<double>*>{s1, s2})));
  NormalizedLabels gt3 = random_labels(rng, 3, 8, 56);
  luv->set_target(make_heatmap_target<double>(gt3, 8, 8, 8, 3.0, false));

  NodeT<double>* map = g.input({1, 8, 8});
  for (double& v : map->out.v) v = rng.uniform(-2, 2);
  auto* ld = static_cast<DisparityLossNodeT<double>*>(
      g.add(std::make_unique<DisparityLossNodeT<double>>(map, 3, 1.0)));
  // keep residuals away from the Huber threshold so FD stays smooth
  NormalizedLabels gtd = gt3;
  for (auto& p : gtd) p.d = rng.uniform(2.5, 8.0);
  ld->set_target(make_heatmap_target<double>(gtd, 8, 8, 8, 3.0, true), gtd);

  NodeT<double>* coords = g.input({3, 2});
  for (int j = 0; j < 3; ++j) {
    coords->out.v[static_cast<size_t>(j) * 2] = rng.uniform(10, 50) + 0.37;
    coords->out.v[static_cast<size_t>(j) * 2 + 1] = rng.uniform(10, 50) + 0.21;
  }
  auto* sampled = static_cast<BilinearSampleNodeT<double>*>(
      g.add(std::make_unique<BilinearSampleNodeT<double>>(map, coords, 8)));
  auto* wsum = g.add(std::make_unique<stereopose::testing::WeightedSumNode>(sampled, 77));

  NodeT<double>* total = g.add_tensors(g.add_tensors(luv, ld), wsum);
  ExecPlanT<double> plan = g.plan({total});
  std::vector<NodeT<double>*> leaves = {s1, s2, map, coords};
  BackwardPlanT<double> bwd = g.backward_plan(plan, total, leaves);
  g.run_forward(plan);
  g.run_backward(plan, bwd, total);

  std::vector<std::vector<double>*> values;
  std::vector<const std::vector<double>*> grads;
  for (NodeT<double>* leaf : leaves) {
    values.push_back(&leaf->out.v);
    grads.push_back(&leaf->out.g);
  }
  auto eval = [&]() {
    g.run_forward(plan);
    return total->out.v[0];
  };
  auto rep = fd_check(eval, values, grads, 40, 555);
  CHECK(rep.max_rel_err < 1e-4);
}
