#include "stereopose/cli.hpp"

#include <CLI11.hpp>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>

#include "stereopose/errors.hpp"
#include "stereopose/estimator.hpp"
#include "stereopose/geometry.hpp"
#include "stereopose/network.hpp"
#include "stereopose/protocol.hpp"
#include "stereopose/rng.hpp"
#include "stereopose/synthdata.hpp"

namespace stereopose {

namespace {

struct NetOptions {
  std::string variant = "D4S4";
  int channels = 16;
  int stacks = 2;
  int depth = 2;
  int net_size = 64;
  int joints = kNumJoints;

  NetConfig to_config() const {
    NetConfig cfg;
    cfg.apply_variant(variant);
    cfg.base_channels = channels;
    cfg.num_stacks = stacks;
    cfg.hourglass_depth = depth;
    cfg.net_w = net_size;
    cfg.net_h = net_size;
    cfg.num_joints = joints;
    cfg.validate();
    return cfg;
  }
};

void add_net_options(CLI::App* cmd, NetOptions& opts) {
  cmd->add_option("--variant", opts.variant, "network variant: D2S4, D4S4, D2S8, D4S8")
      ->check(CLI::IsMember({"D2S4", "D4S4", "D2S8", "D4S8"}));
  cmd->add_option("--channels", opts.channels, "trunk channel count");
  cmd->add_option("--stacks", opts.stacks, "hourglass stack count");
  cmd->add_option("--hg-depth", opts.depth, "hourglass pooling depth");
  cmd->add_option("--net-size", opts.net_size, "network input size (square)");
  cmd->add_option("--joints", opts.joints, "joint count");
}

ViewMode parse_views(const std::string& views) {
  if (views == "stereo") return ViewMode::kStereo;
  if (views == "mono") return ViewMode::kMono;
  throw UsageError("views must be 'stereo' or 'mono'");
}

Network load_network(const std::string& checkpoint, const NetOptions& opts) {
  return build_network_from_store(opts.to_config(), load_checkpoint_file(checkpoint));
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << text;
}

// annotations.csv reader for a single sample id (cmd_infer's gt-file init)
JointSetUVD read_annotation_joints(const std::string& path, int want_id) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || (line != "id,j,u,v,d" && line != "id,j,u,v,d\r"))
    throw CorruptDataset("annotations: bad header in '" + path + "'");
  JointSetUVD joints;
  while (std::getline(in, line)) {
    int id, j;
    double u, v, d;
    if (line.empty() || line == "\r") continue;
    if (std::sscanf(line.c_str(), "%d,%d,%lf,%lf,%lf", &id, &j, &u, &v, &d) != 5)
      throw CorruptDataset("annotations: malformed row in '" + path + "'");
    if (id != want_id) continue;
    if (j != static_cast<int>(joints.size()))
      throw CorruptDataset("annotations: joint rows out of order for id " +
                           std::to_string(want_id));
    joints.push_back({u, v, d});
  }
  if (joints.empty())
    throw CorruptDataset("annotations: no rows for id " + std::to_string(want_id));
  return joints;
}

// ---------------------------------------------------------------------------
// overlay drawing
// ---------------------------------------------------------------------------

void draw_disc(ImageBuffer& img, double u, double v, int radius, const float rgb[3]) {
  int x0 = static_cast<int>(std::lround(u)), y0 = static_cast<int>(std::lround(v));
  for (int y = y0 - radius; y <= y0 + radius; ++y) {
    for (int x = x0 - radius; x <= x0 + radius; ++x) {
      if (x < 0 || x >= img.width || y < 0 || y >= img.height) continue;
      if ((x - x0) * (x - x0) + (y - y0) * (y - y0) > radius * radius) continue;
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = rgb[c];
    }
  }
}

void draw_line(ImageBuffer& img, double u0, double v0, double u1, double v1,
               const float rgb[3]) {
  int x0 = static_cast<int>(std::lround(u0)), y0 = static_cast<int>(std::lround(v0));
  int x1 = static_cast<int>(std::lround(u1)), y1 = static_cast<int>(std::lround(v1));
  int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  while (true) {
    if (x0 >= 0 && x0 < img.width && y0 >= 0 && y0 < img.height)
      for (int c = 0; c < 3; ++c) img.at(c, y0, x0) = rgb[c];
    if (x0 == x1 && y0 == y1) break;
    int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

void draw_joints(ImageBuffer& img, const JointSetUVD& joints, bool right_view,
                 const float rgb[3]) {
  const auto& parents = HandSkeleton::parents();
  auto col = [&](const JointUVD& p) { return right_view ? p.u - p.d : p.u; };
  for (size_t j = 1; j < joints.size() && j < static_cast<size_t>(kNumJoints); ++j) {
    const JointUVD& a = joints[static_cast<size_t>(parents[j])];
    const JointUVD& b = joints[j];
    draw_line(img, col(a), a.v, col(b), b.v, rgb);
  }
  for (const JointUVD& p : joints) draw_disc(img, col(p), p.v, 2, rgb);
}

// ---------------------------------------------------------------------------
// subcommand bodies
// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string out;
  std::string rig_file;
  std::string backgrounds;
  GenConfig gen;
};

int cmd_synth(const SynthArgs& a) {
  GenConfig cfg = a.gen;
  if (!a.rig_file.empty()) cfg.rig = read_rig_file(a.rig_file);
  cfg.background_dir = a.backgrounds;
  Dataset ds = generate_dataset(cfg);
  write_dataset(ds, a.out);
  std::printf("wrote %zu samples (%zu sequences) to %s\n", ds.samples.size(),
              ds.sequences.size(), a.out.c_str());
  return 0;
}

struct TrainArgs {
  std::string stage = "2d";
  std::string data;
  std::string val;
  std::string out;
  std::string resume;
  std::string views = "stereo";
  NetOptions net;
  TrainConfig cfg;
  std::string protocol = "frame";
};

int cmd_train(const TrainArgs& a) {
  TrainConfig cfg = a.cfg;
  cfg.views = parse_views(a.views);
  cfg.protocol = a.protocol == "track" ? Protocol::kTrack : Protocol::kFrame;

  Dataset train = read_dataset(a.data);
  Dataset val;
  bool have_val = !a.val.empty();
  if (have_val) val = read_dataset(a.val);

  Network net = a.resume.empty() ? build_network<float>(a.net.to_config(), cfg.seed)
                                 : load_network(a.resume, a.net);
  TrainResult result;
  if (a.stage == "2d") {
    result = train_stage_2d(net, train, have_val ? &val : nullptr, cfg, &std::cout);
  } else if (a.stage == "3d") {
    if (a.resume.empty())
      throw UsageError("train --stage 3d requires --resume with the stage-2d checkpoint");
    result = train_stage_3d(net, train, have_val ? &val : nullptr, cfg, &std::cout);
  } else if (a.stage == "joint") {
    result = train_joint(net, train, have_val ? &val : nullptr, cfg, &std::cout);
  } else {
    throw UsageError("stage must be 2d, 3d or joint");
  }
  save_checkpoint_file(net.store(), a.out);
  std::printf("saved checkpoint to %s (final train loss %.6f)\n", a.out.c_str(),
              result.train_loss.empty() ? 0.0 : result.train_loss.back());
  return 0;
}

struct EvalArgs {
  std::string protocol = "frame";
  std::string data;
  std::string checkpoint;
  std::string out;
  std::string views = "stereo";
  NetOptions net;
  EvalConfig cfg;
};

int cmd_eval(const EvalArgs& a) {
  Dataset data = read_dataset(a.data);
  Network net = load_network(a.checkpoint, a.net);
  EvalConfig cfg = a.cfg;
  cfg.net_w = net.config().net_w;
  cfg.net_h = net.config().net_h;
  NetPredictor predictor(net, parse_views(a.views));
  EvalReport rep = a.protocol == "track" ? eval_track(data, predictor, cfg)
                                         : eval_frame(data, predictor, cfg);
  std::string text = rep.to_text();
  std::fputs(text.c_str(), stdout);
  if (!a.out.empty()) {
    write_text_file(a.out, text);
    write_text_file(a.out + ".records", rep.to_records());
  }
  return 0;
}

struct InferArgs {
  std::string left, right, rig_file, checkpoint;
  std::string init_spec;  // "u0,v0,w0,h0,d0"
  std::string gt_file;
  int gt_id = 0;
  double margin = 0.25;
  std::string views = "stereo";
  NetOptions net;
};

int cmd_infer(const InferArgs& a) {
  StereoRig rig = read_rig_file(a.rig_file);
  ImageBuffer left = read_ppm(a.left);
  ImageBuffer right = read_ppm(a.right);

  CropInit init;
  if (!a.init_spec.empty()) {
    if (std::sscanf(a.init_spec.c_str(), "%lf,%lf,%lf,%lf,%lf", &init.u0, &init.v0,
                    &init.w0, &init.h0, &init.d0) != 5)
      throw UsageError("--init expects u0,v0,w0,h0,d0");
  } else if (!a.gt_file.empty()) {
    init = init_from_joints(read_annotation_joints(a.gt_file, a.gt_id), a.margin);
  } else {
    throw UsageError("provide --init or --gt-file/--id");
  }

  Network net = load_network(a.checkpoint, a.net);
  auto [lc, rc] = preprocess_pair(left, right, init, net.config().net_w, net.config().net_h);
  Prediction p = forward(net, lc, rc, parse_views(a.views));
  JointSetUVD global =
      denormalize(to_normalized_labels(p), init, net.config().net_w, net.config().net_h);
  JointSetXYZ xyz = uvd_to_xyz(rig, global);
  std::printf("j,u,v,d,x,y,z\n");
  for (size_t j = 0; j < global.size(); ++j)
    std::printf("%zu,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", j, global[j].u, global[j].v,
                global[j].d, xyz[j].x, xyz[j].y, xyz[j].z);
  return 0;
}

struct BenchArgs {
  std::string variants = "D2S4,D4S4,D2S8,D4S8";
  std::string views = "both";
  NetOptions net;
  BenchConfig cfg;
};

int cmd_bench(const BenchArgs& a) {
  std::vector<NetConfig> variants;
  std::stringstream ss(a.variants);
  std::string name;
  while (std::getline(ss, name, ',')) {
    NetOptions opts = a.net;
    opts.variant = name;
    variants.push_back(opts.to_config());
  }
  if (variants.empty()) throw UsageError("no variants given");
  std::vector<ViewMode> views;
  if (a.views == "both")
    views = {ViewMode::kStereo, ViewMode::kMono};
  else
    views = {parse_views(a.views)};
  std::vector<BenchRow> rows = bench_fps(variants, views, a.cfg);
  std::fputs(bench_table(rows).c_str(), stdout);
  return 0;
}

struct OverlayArgs {
  std::string data;
  int id = 0;
  std::string checkpoint;
  std::string out = "overlay";
  std::string views = "stereo";
  double margin = 0.25;
  NetOptions net;
};

int cmd_overlay(const OverlayArgs& a) {
  Dataset ds = read_dataset(a.data);
  const StereoSample& sample = ds.by_id(a.id);
  Network net = load_network(a.checkpoint, a.net);
  CropInit init = init_from_joints(sample.gt, a.margin);
  auto [lc, rc] =
      preprocess_pair(sample.left, sample.right, init, net.config().net_w, net.config().net_h);
  Prediction p = forward(net, lc, rc, parse_views(a.views));
  JointSetUVD pred =
      denormalize(to_normalized_labels(p), init, net.config().net_w, net.config().net_h);

  const float red[3] = {1.0f, 0.1f, 0.1f};
  const float green[3] = {0.1f, 1.0f, 0.1f};
  ImageBuffer left = sample.left, right = sample.right;
  draw_joints(left, sample.gt, false, red);
  draw_joints(left, pred, false, green);
  draw_joints(right, sample.gt, true, red);
  draw_joints(right, pred, true, green);
  write_ppm(left, a.out + "_l.ppm");
  write_ppm(right, a.out + "_r.ppm");
  std::printf("wrote %s_l.ppm and %s_r.ppm\n", a.out.c_str(), a.out.c_str());
  return 0;
}

int cmd_selfcheck() {
  int failures = 0;
  auto check = [&](const char* name, bool ok) {
    std::printf("[%s] %s\n", ok ? "ok" : "FAIL", name);
    if (!ok) ++failures;
  };

  {  // geometry round trip
    StereoRig rig;
    RandomStream rng(11);
    double worst = 0.0;
    for (int i = 0; i < 2000; ++i) {
      JointUVD p{rng.uniform(0, rig.width), rng.uniform(0, rig.height), rng.uniform(1, 200)};
      JointSetUVD back = xyz_to_uvd(rig, uvd_to_xyz(rig, {p}));
      worst = std::max({worst, std::abs(back[0].u - p.u), std::abs(back[0].v - p.v),
                        std::abs(back[0].d - p.d)});
    }
    check("geometry round trip < 1e-9", worst < 1e-9);
  }
  {  // crop label round trip
    RandomStream rng(12);
    double worst = 0.0;
    for (int i = 0; i < 2000; ++i) {
      CropInit init{rng.uniform(-50, 300), rng.uniform(-50, 200), rng.uniform(1, 200),
                    rng.uniform(1, 200), rng.uniform(1, 100)};
      JointUVD p{rng.uniform(-100, 400), rng.uniform(-100, 300), rng.uniform(0.1, 150)};
      JointSetUVD back = denormalize(normalize_labels({p}, init, 64, 64), init, 64, 64);
      worst = std::max({worst, std::abs(back[0].u - p.u), std::abs(back[0].v - p.v),
                        std::abs(back[0].d - p.d)});
    }
    check("crop normalization round trip < 1e-9", worst < 1e-9);
  }
  {  // bilinear sampling against the brute-force double sum
    RandomStream rng(13);
    TensorT<float> map({1, 8, 8});
    for (float& v : map.v) v = static_cast<float>(rng.uniform(-5, 5));
    double worst = 0.0;
    for (int i = 0; i < 200; ++i) {
      double u = rng.uniform(-10, 70), v = rng.uniform(-10, 70);
      double got = sample_disparity(map, 4, {{u, v, 0, 0}})[0];
      double qu = std::clamp(u / 4, 0.0, 7.0), qv = std::clamp(v / 4, 0.0, 7.0);
      double want = 0.0;
      for (int m = 0; m < 8; ++m)
        for (int n = 0; n < 8; ++n)
          want += map.v[static_cast<size_t>(m) * 8 + n] *
                  std::max(0.0, 1.0 - std::abs(n - qu)) *
                  std::max(0.0, 1.0 - std::abs(m - qv));
      worst = std::max(worst, std::abs(got - want));
    }
    check("disparity sampling matches double sum", worst < 1e-6);
  }
  check("huber branches", huber(0.5, 1.0) == 0.125 && huber(2.0, 1.0) == 1.5);
  {  // heatmap normalization
    NormalizedLabels gt = {{17.3, 40.2, 0}};
    HeatmapTargetT<double> t = make_heatmap_target<double>(gt, 16, 16, 4, 3.0, true);
    double sum = 0.0;
    for (int i = 0; i < 256; ++i) sum += t.joint(0)[i];
    check("heatmap target sums to 1", std::abs(sum - 1.0) < 1e-9);
  }
  {  // fast gradient check on a small double network
    NetConfig cfg;
    cfg.base_channels = 2;
    cfg.num_stacks = 1;
    cfg.net_w = 32;
    cfg.net_h = 32;
    NetworkT<double> net = build_network<double>(cfg, 17);
    auto hooks = attach_losses(net, 1.0);
    RandomStream rng(18);
    ImageBuffer img(32, 32);
    for (float& v : img.data) v = static_cast<float>(rng.uniform());
    set_image_input(net.left_input, img);
    set_image_input(net.right_input, img);
    NormalizedLabels gt(static_cast<size_t>(cfg.num_joints));
    for (auto& p : gt) {
      p.u = rng.uniform(4, 28);
      p.v = rng.uniform(4, 28);
      p.d = rng.uniform(2, 6);
    }
    hooks.loss_uv->set_target(make_heatmap_target<double>(gt, 8, 8, 4, 3.0, false));
    hooks.loss_d->set_target(make_heatmap_target<double>(gt, 8, 8, 4, 3.0, true), gt);
    GraphT<double>& g = net.graph();
    ExecPlanT<double> plan = g.plan({hooks.loss_total});
    std::vector<NodeT<double>*> leaves(g.param_nodes().begin(), g.param_nodes().end());
    BackwardPlanT<double> bwd = g.backward_plan(plan, hooks.loss_total, leaves);
    g.run_forward(plan);
    g.run_backward(plan, bwd, hooks.loss_total);
    double worst = 0.0;
    RandomStream pick(19);
    for (int k = 0; k < 12; ++k) {
      int pid = static_cast<int>(pick.uniform_index(net.store().size()));
      auto& param = net.store().param(pid);
      size_t i = static_cast<size_t>(pick.uniform_index(param.value.numel()));
      double orig = param.value.v[i];
      const double h = 1e-5;
      param.value.v[i] = orig + h;
      g.run_forward(plan);
      double lp = hooks.loss_total->out.v[0];
      param.value.v[i] = orig - h;
      g.run_forward(plan);
      double lm = hooks.loss_total->out.v[0];
      param.value.v[i] = orig;
      double fd = (lp - lm) / (2 * h);
      double analytic = 0.0;
      for (ParamNodeT<double>* pn : g.param_nodes())
        if (pn->param_id == pid) analytic = pn->out.g[i];
      double denom = std::max({std::abs(fd), std::abs(analytic), 1e-4});
      worst = std::max(worst, std::abs(fd - analytic) / denom);
    }
    check("network gradient check < 1e-4", worst < 1e-4);
  }

  if (failures == 0) std::printf("selfcheck passed\n");
  return failures == 0 ? 0 : 3;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"stereo 3D hand pose estimation toolkit"};
  app.require_subcommand(1);
  app.set_config("--config");

  std::uint64_t seed = 1;
  int threads = 1;
  app.add_option("--seed", seed, "global random seed")->envname("STEREOPOSE_SEED");
  app.add_option("--threads", threads, "worker threads (1 = bit-deterministic)");

  SynthArgs synth;
  CLI::App* c_synth = app.add_subcommand("synth", "generate a synthetic stereo dataset");
  c_synth->add_option("--out", synth.out, "output dataset directory")->required();
  c_synth->add_option("--count", synth.gen.count, "independent frames");
  c_synth->add_option("--tracks", synth.gen.tracks, "tracking sequences");
  c_synth->add_option("--track-len", synth.gen.track_len, "frames per sequence");
  c_synth->add_option("--rig", synth.rig_file, "rig file (default: built-in rig)");
  c_synth->add_option("--backgrounds", synth.backgrounds,
                      "directory of *_l.ppm/*_r.ppm background pairs");
  c_synth->add_option("--depth-min", synth.gen.limits.depth_min_mm, "nearest wrist depth, mm");
  c_synth->add_option("--depth-max", synth.gen.limits.depth_max_mm, "farthest wrist depth, mm");
  c_synth->add_option("--flex-max", synth.gen.limits.flex_max_rad, "max finger flexion, rad");
  c_synth->add_option("--skeleton-scale", synth.gen.skeleton_scale, "hand size factor");
  c_synth->add_option("--walk-step-mm", synth.gen.walk.step_mm, "track translation step");
  c_synth->add_option("--walk-step-rad", synth.gen.walk.step_rad, "track rotation step");

  TrainArgs train;
  CLI::App* c_train = app.add_subcommand("train", "train a stage (2d, 3d or joint)");
  c_train->add_option("--stage", train.stage, "2d, 3d or joint")
      ->check(CLI::IsMember({"2d", "3d", "joint"}));
  c_train->add_option("--protocol", train.protocol, "target protocol: frame or track")
      ->check(CLI::IsMember({"frame", "track"}));
  c_train->add_option("--data", train.data, "training dataset directory")->required();
  c_train->add_option("--val", train.val, "validation dataset directory");
  c_train->add_option("--out", train.out, "output checkpoint path")->required();
  c_train->add_option("--resume", train.resume, "checkpoint to continue from");
  c_train->add_option("--views", train.views, "stereo or mono")
      ->check(CLI::IsMember({"stereo", "mono"}));
  c_train->add_option("--epochs", train.cfg.epochs, "training epochs");
  c_train->add_option("--batch", train.cfg.batch_size, "batch size");
  c_train->add_option("--lr", train.cfg.lr, "learning rate");
  c_train->add_option("--lr-decay-factor", train.cfg.lr_decay_factor,
                      "learning-rate multiplier applied every --lr-decay-every epochs");
  c_train->add_option("--lr-decay-every", train.cfg.lr_decay_every, "epochs between decays");
  c_train->add_option("--sigma", train.cfg.sigma, "heatmap Gaussian sigma, grid cells");
  c_train->add_option("--delta", train.cfg.delta, "Huber threshold");
  c_train->add_option("--margin", train.cfg.margin, "crop box margin fraction");
  add_net_options(c_train, train.net);

  EvalArgs eval;
  CLI::App* c_eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  c_eval->add_option("--protocol", eval.protocol, "frame or track")
      ->check(CLI::IsMember({"frame", "track"}));
  c_eval->add_option("--data", eval.data, "dataset directory")->required();
  c_eval->add_option("--checkpoint", eval.checkpoint, "checkpoint path")->required();
  c_eval->add_option("--out", eval.out, "report file (records go to <out>.records)");
  c_eval->add_option("--views", eval.views, "stereo or mono")
      ->check(CLI::IsMember({"stereo", "mono"}));
  c_eval->add_option("--margin", eval.cfg.margin, "crop box margin fraction");
  c_eval->add_option("--penalty", eval.cfg.penalty_mm, "error charged for invalid disparity");
  c_eval->add_option("--divergence", eval.cfg.divergence_mm, "track divergence threshold, mm");
  c_eval->add_flag("--perturb-init", eval.cfg.perturb_track_init,
                   "jitter the frame-0 init within augmentation ranges (track)");
  add_net_options(c_eval, eval.net);

  InferArgs infer;
  CLI::App* c_infer = app.add_subcommand("infer", "run the full chain on one stereo pair");
  c_infer->add_option("--left", infer.left, "left image (PPM)")->required();
  c_infer->add_option("--right", infer.right, "right image (PPM)")->required();
  c_infer->add_option("--rig", infer.rig_file, "rig file")->required();
  c_infer->add_option("--checkpoint", infer.checkpoint, "checkpoint path")->required();
  c_infer->add_option("--init", infer.init_spec, "explicit crop init u0,v0,w0,h0,d0");
  c_infer->add_option("--gt-file", infer.gt_file, "annotations.csv supplying the init");
  c_infer->add_option("--id", infer.gt_id, "sample id inside --gt-file");
  c_infer->add_option("--margin", infer.margin, "crop box margin fraction");
  c_infer->add_option("--views", infer.views, "stereo or mono")
      ->check(CLI::IsMember({"stereo", "mono"}));
  add_net_options(c_infer, infer.net);

  BenchArgs bench;
  CLI::App* c_bench = app.add_subcommand("bench", "time inference across variants");
  c_bench->add_option("--variants", bench.variants, "comma list of D2S4,D4S4,D2S8,D4S8");
  c_bench->add_option("--views", bench.views, "stereo, mono or both")
      ->check(CLI::IsMember({"stereo", "mono", "both"}));
  c_bench->add_option("--reps", bench.cfg.repetitions, "timed repetitions");
  c_bench->add_option("--burn-in", bench.cfg.burn_in, "untimed warm-up runs");
  add_net_options(c_bench, bench.net);

  OverlayArgs overlay;
  CLI::App* c_overlay = app.add_subcommand("overlay", "draw ground truth and prediction");
  c_overlay->add_option("--data", overlay.data, "dataset directory")->required();
  c_overlay->add_option("--id", overlay.id, "sample id")->required();
  c_overlay->add_option("--checkpoint", overlay.checkpoint, "checkpoint path")->required();
  c_overlay->add_option("--out", overlay.out, "output prefix");
  c_overlay->add_option("--margin", overlay.margin, "crop box margin fraction");
  c_overlay->add_option("--views", overlay.views, "stereo or mono")
      ->check(CLI::IsMember({"stereo", "mono"}));
  add_net_options(c_overlay, overlay.net);

  CLI::App* c_selfcheck = app.add_subcommand("selfcheck", "run built-in numeric checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::fprintf(stderr, "error: usage: %s\n", e.what());
    return 1;
  }

  try {
    synth.gen.seed = seed;
    synth.gen.threads = threads;
    train.cfg.seed = seed;
    train.cfg.threads = threads;
    eval.cfg.seed = seed;
    eval.cfg.threads = threads;
    bench.cfg.seed = seed;

    if (c_synth->parsed()) return cmd_synth(synth);
    if (c_train->parsed()) return cmd_train(train);
    if (c_eval->parsed()) return cmd_eval(eval);
    if (c_infer->parsed()) return cmd_infer(infer);
    if (c_bench->parsed()) return cmd_bench(bench);
    if (c_overlay->parsed()) return cmd_overlay(overlay);
    if (c_selfcheck->parsed()) return cmd_selfcheck();
    throw UsageError("no subcommand given");
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: usage: %s\n", e.what());
    return 1;
  } catch (const DataError& e) {
    std::fprintf(stderr, "error: data: %s\n", e.what());
    return 2;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "error: numeric: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
}

int run_cli(const std::vector<std::string>& args) {
  std::vector<std::string> storage;
  storage.push_back("stereopose");
  storage.insert(storage.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const std::string& s : storage) argv.push_back(s.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace stereopose
