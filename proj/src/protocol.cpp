#include "stereopose/protocol.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <sstream>

#include "stereopose/errors.hpp"
#include "stereopose/parallel.hpp"

namespace stereopose {

Augmentation augment(const CropInit& init, const AugPolicy& policy, RandomStream& rng,
                     bool force_rotation) {
  if (force_rotation && !policy.allow_rotate())
    throw IllegalAugmentation("rotation under a 3D stage breaks the rectified stereo pair");
  Augmentation aug;
  aug.init = init;
  if (policy.allow_rotate() || force_rotation)
    aug.rotation_deg = rng.uniform(-kRotateRangeDeg, kRotateRangeDeg);
  if (policy.allow_scale()) {
    double s = 1.0 + rng.uniform(-kScaleRange, kScaleRange);
    double cu = aug.init.u0 + aug.init.w0 / 2.0;
    double cv = aug.init.v0 + aug.init.h0 / 2.0;
    aug.init.w0 *= s;
    aug.init.h0 *= s;
    aug.init.u0 = cu - aug.init.w0 / 2.0;
    aug.init.v0 = cv - aug.init.h0 / 2.0;
  }
  if (policy.allow_shift_uv()) {
    aug.init.u0 += rng.uniform(-kShiftUVRange, kShiftUVRange) * aug.init.w0;
    aug.init.v0 += rng.uniform(-kShiftUVRange, kShiftUVRange) * aug.init.h0;
  }
  if (policy.allow_shift_d0())
    aug.init.d0 += rng.uniform(-kShiftD0Range, kShiftD0Range) * aug.init.d0;
  return aug;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace {

enum class TrainMode { k2D, k3D, kJoint };

struct Worker {
  Network net;
  TrainHooksT<float> hooks;
  Node* loss = nullptr;
  ExecPlanT<float> fwd;
  BackwardPlanT<float> bwd;
  std::vector<std::vector<float>> grads;
  double loss_sum = 0.0;
  int count = 0;
};

// One training or validation sample: preprocess, set targets, forward and
// optionally backward. Returns the loss value.
double process_sample(Worker& w, const StereoSample& sample, const TrainConfig& cfg,
                      TrainMode mode, const AugPolicy& policy, bool train_pass,
                      std::uint64_t aug_seed) {
  const NetConfig& nc = w.net.config();
  CropInit gt_init = init_from_joints(sample.gt, cfg.margin);
  Augmentation aug;
  aug.init = gt_init;
  if (train_pass) {
    RandomStream rng(aug_seed);
    aug = augment(gt_init, policy, rng);
  }

  ImageBuffer left =
      crop_resample(sample.left, aug.init, false, nc.net_w, nc.net_h, aug.rotation_deg);
  set_image_input(w.net.left_input, left);
  bool needs_right = mode != TrainMode::k2D && cfg.views == ViewMode::kStereo;
  if (needs_right) {
    ImageBuffer right = crop_resample(sample.right, aug.init, true, nc.net_w, nc.net_h);
    set_image_input(w.net.right_input, right);
  }

  JointSetUVD labels = aug.rotation_deg != 0.0
                           ? rotate_labels(sample.gt, aug.init, aug.rotation_deg)
                           : sample.gt;
  NormalizedLabels norm = normalize_labels(labels, aug.init, nc.net_w, nc.net_h);

  if (mode != TrainMode::k3D)
    w.hooks.loss_uv->set_target(make_heatmap_target<float>(
        norm, nc.heatmap_h(), nc.heatmap_w(), nc.heatmap_stride, cfg.sigma, false));
  if (mode != TrainMode::k2D)
    w.hooks.loss_d->set_target(
        make_heatmap_target<float>(norm, nc.disparity_h(), nc.disparity_w(),
                                   nc.disparity_stride, cfg.sigma, true),
        norm);

  GraphT<float>& g = w.net.graph();
  g.run_forward(w.fwd);
  double loss = w.loss->out.v[0];
  if (train_pass) {
    g.run_backward(w.fwd, w.bwd, w.loss);
    w.net.accumulate_param_grads(w.grads);
    w.loss_sum += loss;
    w.count += 1;
  }
  return loss;
}

TrainResult train_impl(Network& net, const Dataset& train, const Dataset* val,
                       const TrainConfig& cfg, TrainMode mode, std::ostream* log) {
  if (train.samples.empty()) throw DataError("training set is empty");
  const NetConfig& nc = net.config();
  for (const StereoSample& s : train.samples)
    if (static_cast<int>(s.gt.size()) != nc.num_joints)
      throw DataError("dataset joint count does not match the network");

  AugPolicy policy{mode == TrainMode::k2D ? Stage::k2D : Stage::k3D, cfg.protocol};

  if (mode == TrainMode::k3D) {
    net.store().freeze_prefix("hf/");
    net.store().freeze_prefix("huv/");
  }
  std::vector<std::pair<int, std::vector<float>>> frozen_snapshot;
  for (size_t i = 0; i < net.store().size(); ++i)
    if (net.store().param(static_cast<int>(i)).frozen)
      frozen_snapshot.emplace_back(static_cast<int>(i),
                                   net.store().param(static_cast<int>(i)).value.v);

  int threads = std::max(1, cfg.threads);
  std::vector<Worker> workers;
  workers.reserve(static_cast<size_t>(threads));
  for (int t = 0; t < threads; ++t) {
    workers.push_back(Worker{net.replica(), {}, nullptr, {}, {}, {}, 0.0, 0});
    Worker& w = workers.back();
    w.hooks = attach_losses(w.net, cfg.delta);
    w.loss = mode == TrainMode::k2D   ? static_cast<Node*>(w.hooks.loss_uv)
             : mode == TrainMode::k3D ? static_cast<Node*>(w.hooks.loss_d)
                                      : w.hooks.loss_total;
    std::vector<Node*> barriers;
    if (mode != TrainMode::k2D) barriers = w.net.barriers(cfg.views);
    w.fwd = w.net.graph().plan({w.loss}, barriers);
    w.net.prepare_mode(mode == TrainMode::k2D ? ViewMode::kStereo : cfg.views);
    std::vector<Node*> leaves;
    for (ParamNodeT<float>* pn : w.net.graph().param_nodes())
      if (!net.store().param(pn->param_id).frozen) leaves.push_back(pn);
    w.bwd = w.net.graph().backward_plan(w.fwd, w.loss, leaves);
  }

  const int n = static_cast<int>(train.samples.size());
  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double lr = cfg.lr * std::pow(cfg.lr_decay_factor, epoch / cfg.lr_decay_every);
    {
      RandomStream shuffle_rng(derive_seed(cfg.seed, 0x5f0ff1eULL, epoch));
      for (int i = n - 1; i > 0; --i) {
        int k = static_cast<int>(shuffle_rng.uniform_index(static_cast<std::uint64_t>(i + 1)));
        std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(k)]);
      }
    }

    double epoch_loss = 0.0;
    int seen = 0;
    for (int start = 0; start < n; start += cfg.batch_size) {
      int end = std::min(n, start + cfg.batch_size);
      int batch = end - start;
      for (Worker& w : workers) {
        w.grads.assign(net.store().size(), {});
        w.loss_sum = 0.0;
        w.count = 0;
      }
      int chunk = (batch + threads - 1) / threads;
      parallel_for(0, threads, threads, [&](int t) {
        Worker& w = workers[static_cast<size_t>(t)];
        int lo = start + t * chunk, hi = std::min(end, lo + chunk);
        for (int i = lo; i < hi; ++i) {
          const StereoSample& s = train.samples[static_cast<size_t>(order[static_cast<size_t>(i)])];
          process_sample(w, s, cfg, mode, policy, true,
                         derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch) + 1,
                                     static_cast<std::uint64_t>(s.id)));
        }
      });

      std::vector<std::vector<float>> grads(net.store().size());
      for (Worker& w : workers) {
        for (size_t p = 0; p < grads.size(); ++p) {
          if (w.grads[p].empty()) continue;
          if (grads[p].empty()) grads[p].assign(w.grads[p].size(), 0.0f);
          for (size_t i = 0; i < w.grads[p].size(); ++i) grads[p][i] += w.grads[p][i];
        }
        epoch_loss += w.loss_sum;
        seen += w.count;
      }
      float inv = 1.0f / static_cast<float>(batch);
      for (auto& g : grads)
        for (float& v : g) v *= inv;
      rmsprop_step(net.store(), grads, lr, cfg.rho, cfg.eps);
    }
    result.train_loss.push_back(epoch_loss / std::max(1, seen));

    if (val && !val->samples.empty()) {
      double vloss = 0.0;
      for (const StereoSample& s : val->samples)
        vloss += process_sample(workers[0], s, cfg, mode, policy, false, 0);
      result.val_loss.push_back(vloss / static_cast<double>(val->samples.size()));
    }
    if (log) {
      char line[160];
      if (!result.val_loss.empty())
        std::snprintf(line, sizeof(line), "epoch %d lr %.6g train_loss %.6f val_loss %.6f\n",
                      epoch, lr, result.train_loss.back(), result.val_loss.back());
      else
        std::snprintf(line, sizeof(line), "epoch %d lr %.6g train_loss %.6f\n", epoch, lr,
                      result.train_loss.back());
      (*log) << line << std::flush;
    }
  }

  for (const auto& [id, values] : frozen_snapshot)
    if (net.store().param(id).value.v != values)
      throw FrozenViolation(net.store().param(id).name);
  return result;
}

}  // namespace

TrainResult train_stage_2d(Network& net, const Dataset& train, const Dataset* val,
                           const TrainConfig& cfg, std::ostream* log) {
  return train_impl(net, train, val, cfg, TrainMode::k2D, log);
}

TrainResult train_stage_3d(Network& net, const Dataset& train, const Dataset* val,
                           const TrainConfig& cfg, std::ostream* log) {
  return train_impl(net, train, val, cfg, TrainMode::k3D, log);
}

TrainResult train_joint(Network& net, const Dataset& train, const Dataset* val,
                        const TrainConfig& cfg, std::ostream* log) {
  return train_impl(net, train, val, cfg, TrainMode::kJoint, log);
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

Prediction OraclePredictor::predict(const StereoSample& sample, const CropInit& init,
                                    const ImageBuffer&, const ImageBuffer&) {
  NormalizedLabels norm = normalize_labels(sample.gt, init, net_w_, net_h_);
  Prediction p;
  p.joints.resize(norm.size());
  for (size_t j = 0; j < norm.size(); ++j)
    p.joints[j] = {norm[j].u, norm[j].v, norm[j].d, 1.0};
  return p;
}

namespace {

struct FrameOutcome {
  FrameRecord record;
  JointSetUVD global;  // denormalized prediction, for track propagation
  bool finite = true;
};

FrameOutcome process_frame(const StereoSample& sample, const CropInit& init,
                           Predictor& predictor, const EvalConfig& cfg) {
  FrameOutcome out;
  out.record.frame_id = sample.id;
  out.record.init = init;

  auto [lc, rc] = preprocess_pair(sample.left, sample.right, init, cfg.net_w, cfg.net_h);
  Prediction p = predictor.predict(sample, init, lc, rc);
  out.global = denormalize(to_normalized_labels(p), init, cfg.net_w, cfg.net_h);

  JointSetXYZ gt_xyz = uvd_to_xyz(sample.rig, sample.gt);
  size_t joints = sample.gt.size();
  out.record.joint_err_mm.resize(joints);
  double sum = 0.0;
  for (size_t j = 0; j < joints; ++j) {
    const JointUVD& g = out.global[j];
    bool ok = std::isfinite(g.u) && std::isfinite(g.v) && std::isfinite(g.d) && g.d > 0.0;
    if (!ok) {
      out.record.joint_err_mm[j] = cfg.penalty_mm;
      out.record.invalid_disparity = true;
      if (!std::isfinite(g.u) || !std::isfinite(g.v) || !std::isfinite(g.d))
        out.finite = false;
      sum += cfg.penalty_mm;
      continue;
    }
    double z = sample.rig.fx * sample.rig.baseline_mm / g.d;
    double x = (g.u - sample.rig.tx) / sample.rig.fx * z;
    double y = (g.v - sample.rig.ty) / sample.rig.fy * z;
    double err = std::sqrt((x - gt_xyz[j].x) * (x - gt_xyz[j].x) +
                           (y - gt_xyz[j].y) * (y - gt_xyz[j].y) +
                           (z - gt_xyz[j].z) * (z - gt_xyz[j].z));
    out.record.joint_err_mm[j] = err;
    sum += err;
  }
  out.record.mean_err_mm = sum / static_cast<double>(joints);
  return out;
}

EvalReport finalize_report(Protocol protocol, std::vector<FrameRecord> records,
                           const EvalConfig& cfg) {
  EvalReport rep;
  rep.protocol = protocol;
  rep.frames = static_cast<int>(records.size());
  rep.divergence_threshold_mm = cfg.divergence_mm;
  rep.penalty_mm = cfg.penalty_mm;
  size_t joints = records.empty() ? 0 : records[0].joint_err_mm.size();
  rep.per_joint_mean_mm.assign(joints, 0.0);
  double sum = 0.0;
  for (const FrameRecord& r : records) {
    sum += r.mean_err_mm;
    for (size_t j = 0; j < joints; ++j) rep.per_joint_mean_mm[j] += r.joint_err_mm[j];
    rep.invalid_disparity_frames += r.invalid_disparity ? 1 : 0;
    rep.divergence_count += r.divergent ? 1 : 0;
  }
  if (rep.frames > 0) {
    sum /= rep.frames;
    for (double& v : rep.per_joint_mean_mm) v /= rep.frames;
  }
  rep.mean_error_mm = sum;
  rep.records = std::move(records);
  return rep;
}

}  // namespace

EvalReport eval_frame(const Dataset& data, Predictor& predictor, const EvalConfig& cfg) {
  if (data.samples.empty()) throw DataError("evaluation set is empty");
  std::vector<FrameRecord> records(data.samples.size());

  int threads = std::max(1, cfg.threads);
  std::vector<std::unique_ptr<Predictor>> clones;
  if (threads > 1)
    for (int t = 0; t < threads; ++t) clones.push_back(predictor.clone());
  bool parallel = threads > 1 && std::all_of(clones.begin(), clones.end(),
                                             [](const auto& c) { return c != nullptr; });

  if (!parallel) {
    for (size_t i = 0; i < data.samples.size(); ++i) {
      const StereoSample& s = data.samples[i];
      records[i] =
          process_frame(s, init_from_joints(s.gt, cfg.margin), predictor, cfg).record;
    }
  } else {
    int n = static_cast<int>(data.samples.size());
    int chunk = (n + threads - 1) / threads;
    parallel_for(0, threads, threads, [&](int t) {
      for (int i = t * chunk; i < std::min(n, (t + 1) * chunk); ++i) {
        const StereoSample& s = data.samples[static_cast<size_t>(i)];
        records[static_cast<size_t>(i)] =
            process_frame(s, init_from_joints(s.gt, cfg.margin), *clones[static_cast<size_t>(t)], cfg)
                .record;
      }
    });
  }
  return finalize_report(Protocol::kFrame, std::move(records), cfg);
}

EvalReport eval_track(const Dataset& data, Predictor& predictor, const EvalConfig& cfg) {
  if (data.sequences.empty()) throw DataError("dataset has no tracking sequences");

  int threads = std::max(1, cfg.threads);
  std::vector<std::unique_ptr<Predictor>> clones;
  if (threads > 1)
    for (int t = 0; t < threads; ++t) clones.push_back(predictor.clone());
  bool parallel = threads > 1 && std::all_of(clones.begin(), clones.end(),
                                             [](const auto& c) { return c != nullptr; });

  std::vector<std::vector<FrameRecord>> per_seq(data.sequences.size());
  auto run_sequence = [&](int si, Predictor& pred) {
    auto [first, last] = data.sequences[static_cast<size_t>(si)];
    JointSetUVD prev;
    CropInit init;
    bool have_init = false;
    for (int id = first; id <= last; ++id) {
      const StereoSample& s = data.by_id(id);
      if (id == first) {
        init = init_from_joints(s.gt, cfg.margin);
        if (cfg.perturb_track_init) {
          RandomStream rng(derive_seed(cfg.seed, 0x7e57ULL, static_cast<std::uint64_t>(si)));
          double sc = 1.0 + rng.uniform(-kScaleRange, kScaleRange);
          double cu = init.u0 + init.w0 / 2.0, cv = init.v0 + init.h0 / 2.0;
          init.w0 *= sc;
          init.h0 *= sc;
          init.u0 = cu - init.w0 / 2.0 + rng.uniform(-kShiftUVRange, kShiftUVRange) * init.w0;
          init.v0 = cv - init.h0 / 2.0 + rng.uniform(-kShiftUVRange, kShiftUVRange) * init.h0;
          init.d0 += rng.uniform(-kShiftD0Range, kShiftD0Range) * init.d0;
        }
        have_init = true;
      } else if (have_init) {
        // propagate: the previous frame's estimate induces the next box,
        // unless the estimate was non-finite, in which case hold the box
        bool finite = true;
        for (const JointUVD& p : prev)
          finite = finite && std::isfinite(p.u) && std::isfinite(p.v) && std::isfinite(p.d);
        if (finite) init = init_from_joints(prev, cfg.margin);
      }
      FrameOutcome out = process_frame(s, init, pred, cfg);
      out.record.divergent = out.record.mean_err_mm > cfg.divergence_mm;
      prev = out.global;
      per_seq[static_cast<size_t>(si)].push_back(std::move(out.record));
    }
  };

  if (!parallel) {
    for (size_t si = 0; si < data.sequences.size(); ++si)
      run_sequence(static_cast<int>(si), predictor);
  } else {
    int n = static_cast<int>(data.sequences.size());
    int chunk = (n + threads - 1) / threads;
    parallel_for(0, threads, threads, [&](int t) {
      for (int si = t * chunk; si < std::min(n, (t + 1) * chunk); ++si)
        run_sequence(si, *clones[static_cast<size_t>(t)]);
    });
  }

  std::vector<FrameRecord> records;
  for (auto& seq : per_seq)
    for (FrameRecord& r : seq) records.push_back(std::move(r));
  return finalize_report(Protocol::kTrack, std::move(records), cfg);
}

std::string EvalReport::to_text() const {
  char buf[256];
  std::string out;
  out += std::string("protocol: ") + protocol_name(protocol) + "\n";
  std::snprintf(buf, sizeof(buf), "frames: %d\n", frames);
  out += buf;
  std::snprintf(buf, sizeof(buf), "mean_error_mm: %.6f\n", mean_error_mm);
  out += buf;
  std::snprintf(buf, sizeof(buf), "invalid_disparity_frames: %d\n", invalid_disparity_frames);
  out += buf;
  if (protocol == Protocol::kTrack) {
    std::snprintf(buf, sizeof(buf), "divergent_frames: %d\n", divergence_count);
    out += buf;
    std::snprintf(buf, sizeof(buf), "divergence_threshold_mm: %.6f\n",
                  divergence_threshold_mm);
    out += buf;
  }
  out += "per_joint_mean_mm:";
  for (double v : per_joint_mean_mm) {
    std::snprintf(buf, sizeof(buf), " %.6f", v);
    out += buf;
  }
  out += "\n";
  return out;
}

std::string EvalReport::to_records() const {
  std::string out;
  char buf[64];
  for (const FrameRecord& r : records) {
    std::snprintf(buf, sizeof(buf), "%d,%.6f", r.frame_id, r.mean_err_mm);
    out += buf;
    for (double v : r.joint_err_mm) {
      std::snprintf(buf, sizeof(buf), ",%.6f", v);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Benchmarking
// ---------------------------------------------------------------------------

std::vector<BenchRow> bench_fps(const std::vector<NetConfig>& variants,
                                const std::vector<ViewMode>& views, const BenchConfig& cfg) {
  if (cfg.repetitions < 1) throw InvalidConfig("bench: repetitions must be at least 1");
  std::vector<BenchRow> rows;
  for (const NetConfig& nc : variants) {
    for (ViewMode mode : views) {
      Network net = build_network<float>(nc, cfg.seed);
      RandomStream rng(derive_seed(cfg.seed, 0xbe7c4ULL));
      ImageBuffer left(nc.net_h, nc.net_w), right(nc.net_h, nc.net_w);
      for (float& v : left.data) v = static_cast<float>(rng.uniform());
      for (float& v : right.data) v = static_cast<float>(rng.uniform());

      for (int i = 0; i < cfg.burn_in; ++i) forward(net, left, right, mode);

      std::vector<double> fps(static_cast<size_t>(cfg.repetitions));
      for (int i = 0; i < cfg.repetitions; ++i) {
        auto t0 = std::chrono::steady_clock::now();
        forward(net, left, right, mode);
        double dt =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        fps[static_cast<size_t>(i)] = dt > 0 ? 1.0 / dt : 0.0;
      }
      double mean = std::accumulate(fps.begin(), fps.end(), 0.0) / cfg.repetitions;
      double var = 0.0;
      for (double f : fps) var += (f - mean) * (f - mean);
      var /= cfg.repetitions;

      net.graph().reset_stats();
      forward(net, left, right, mode);
      const ExecStats& st = net.graph().stats();

      BenchRow row;
      row.variant = nc.variant_name();
      row.views = mode;
      row.fps_mean = mean;
      row.fps_std = std::sqrt(var);
      row.total_macs = st.total_macs();
      row.hf_macs = st.macs[static_cast<int>(NodeGroup::kTrunkLeft)] +
                    st.macs[static_cast<int>(NodeGroup::kTrunkRight)];
      rows.push_back(row);
    }
  }
  return rows;
}

std::string bench_table(const std::vector<BenchRow>& rows) {
  std::string out = "variant  views   fps_mean  fps_std   total_macs  hf_macs\n";
  char buf[160];
  for (const BenchRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%-8s %-7s %9.2f %8.2f %12lld %8lld\n",
                  r.variant.c_str(), view_mode_name(r.views), r.fps_mean, r.fps_std,
                  r.total_macs, r.hf_macs);
    out += buf;
  }
  return out;
}

}  // namespace stereopose
