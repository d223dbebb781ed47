#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "stereopose/estimator.hpp"
#include "stereopose/network.hpp"
#include "stereopose/roi.hpp"
#include "stereopose/rng.hpp"
#include "stereopose/synthdata.hpp"

namespace stereopose {

enum class Stage { k2D, k3D };
enum class Protocol { kFrame, kTrack };

inline const char* stage_name(Stage s) { return s == Stage::k2D ? "2D" : "3D"; }
inline const char* protocol_name(Protocol p) { return p == Protocol::kFrame ? "frame" : "track"; }

// Augmentation switches per training stage and evaluation protocol:
//
//                      2D/Frame  2D/Track  3D/Frame  3D/Track
//   rotate +-20 deg       yes       yes       no        no
//   shift (u0,v0) +-20%   no        yes       no        no
//   shift d0 +-10%        no        no        no        yes
//   scale (w0,h0) +-20%   yes       yes       yes       yes
struct AugPolicy {
  Stage stage = Stage::k2D;
  Protocol protocol = Protocol::kFrame;

  bool allow_rotate() const { return stage == Stage::k2D; }
  bool allow_shift_uv() const { return stage == Stage::k2D && protocol == Protocol::kTrack; }
  bool allow_shift_d0() const { return stage == Stage::k3D && protocol == Protocol::kTrack; }
  bool allow_scale() const { return true; }
};

inline constexpr double kRotateRangeDeg = 20.0;
inline constexpr double kShiftUVRange = 0.20;
inline constexpr double kShiftD0Range = 0.10;
inline constexpr double kScaleRange = 0.20;

struct Augmentation {
  CropInit init;
  double rotation_deg = 0.0;  // applies to the left crop and uv labels only
};

// Jitters a ground-truth-induced crop init per the policy. Rotation under a
// 3D stage would break the rectified-epipolar assumption: forcing it raises
// IllegalAugmentation.
Augmentation augment(const CropInit& init, const AugPolicy& policy, RandomStream& rng,
                     bool force_rotation = false);

struct TrainConfig {
  int batch_size = 32;
  int epochs = 100;
  double lr = 0.05;
  double lr_decay_factor = 0.3;  // per the 70%-decrease schedule; 0.7 also plausible
  int lr_decay_every = 30;
  double rho = 0.9;
  double eps = 1e-8;
  double sigma = 3.0;
  double delta = 1.0;
  double margin = 0.25;
  std::uint64_t seed = 1;
  Protocol protocol = Protocol::kFrame;
  ViewMode views = ViewMode::kStereo;
  int threads = 1;
};

struct TrainResult {
  std::vector<double> train_loss;  // per epoch
  std::vector<double> val_loss;    // per epoch; empty when no validation set
};

// Stage one: optimize the heatmap loss over h_f and h_uv with 2D augmentation.
TrainResult train_stage_2d(Network& net, const Dataset& train, const Dataset* val,
                           const TrainConfig& cfg, std::ostream* log = nullptr);

// Stage two: freeze h_f (and h_uv) and optimize the disparity loss over h_D
// with stereo-safe augmentation. Throws FrozenViolation if a frozen parameter
// moves.
TrainResult train_stage_3d(Network& net, const Dataset& train, const Dataset* val,
                           const TrainConfig& cfg, std::ostream* log = nullptr);

// Joint alternative: optimize L_uv + L_d together under 3D augmentation.
TrainResult train_joint(Network& net, const Dataset& train, const Dataset* val,
                        const TrainConfig& cfg, std::ostream* log = nullptr);

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual Prediction predict(const StereoSample& sample, const CropInit& init,
                             const ImageBuffer& left_crop, const ImageBuffer& right_crop) = 0;
  // an independent instance safe to run on another thread; null disables
  // parallel evaluation
  virtual std::unique_ptr<Predictor> clone() { return nullptr; }
};

// Owns a worker graph over the given network's parameter store, so clones can
// evaluate concurrently against shared weights.
class NetPredictor : public Predictor {
 public:
  NetPredictor(Network& net, ViewMode mode, DecodeMode decode = DecodeMode::kArgmax)
      : net_(net.replica()), mode_(mode), decode_(decode) {}
  Prediction predict(const StereoSample&, const CropInit&, const ImageBuffer& left_crop,
                     const ImageBuffer& right_crop) override {
    return forward(net_, left_crop, right_crop, mode_, decode_);
  }
  std::unique_ptr<Predictor> clone() override {
    return std::make_unique<NetPredictor>(net_, mode_, decode_);
  }

 private:
  Network net_;
  ViewMode mode_;
  DecodeMode decode_;
};

// Echoes normalized ground truth: the zero-error reference for the full
// preprocess/denormalize/projection chain.
class OraclePredictor : public Predictor {
 public:
  OraclePredictor(int net_w, int net_h) : net_w_(net_w), net_h_(net_h) {}
  Prediction predict(const StereoSample& sample, const CropInit& init, const ImageBuffer&,
                     const ImageBuffer&) override;
  std::unique_ptr<Predictor> clone() override {
    return std::make_unique<OraclePredictor>(net_w_, net_h_);
  }

 private:
  int net_w_, net_h_;
};

struct EvalConfig {
  int net_w = 64;
  int net_h = 64;
  double margin = 0.25;
  double penalty_mm = 1000.0;       // per-joint distance charged for d <= 0
  double divergence_mm = 100.0;     // track frames above this count as diverged
  bool perturb_track_init = false;  // jitter the frame-0 init within aug ranges
  std::uint64_t seed = 1;
  int threads = 1;
};

struct FrameRecord {
  int frame_id = 0;
  double mean_err_mm = 0.0;
  std::vector<double> joint_err_mm;
  CropInit init;
  bool invalid_disparity = false;
  bool divergent = false;
};

struct EvalReport {
  Protocol protocol = Protocol::kFrame;
  int frames = 0;
  double mean_error_mm = 0.0;
  std::vector<double> per_joint_mean_mm;
  std::vector<FrameRecord> records;
  int invalid_disparity_frames = 0;
  int divergence_count = 0;
  double divergence_threshold_mm = 100.0;
  double penalty_mm = 1000.0;

  std::string to_text() const;
  std::string to_records() const;  // frame_id, mean_err_mm, j0_err, ..., j20_err
};

EvalReport eval_frame(const Dataset& data, Predictor& predictor, const EvalConfig& cfg);
EvalReport eval_track(const Dataset& data, Predictor& predictor, const EvalConfig& cfg);

// ---------------------------------------------------------------------------
// Benchmarking
// ---------------------------------------------------------------------------

struct BenchRow {
  std::string variant;
  ViewMode views = ViewMode::kStereo;
  double fps_mean = 0.0;
  double fps_std = 0.0;
  long long total_macs = 0;
  long long hf_macs = 0;  // shared-trunk share of the count
};

struct BenchConfig {
  int repetitions = 20;
  int burn_in = 5;
  std::uint64_t seed = 1;
};

std::vector<BenchRow> bench_fps(const std::vector<NetConfig>& variants,
                                const std::vector<ViewMode>& views, const BenchConfig& cfg);

std::string bench_table(const std::vector<BenchRow>& rows);

}  // namespace stereopose
