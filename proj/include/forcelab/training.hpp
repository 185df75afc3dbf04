#pragma once

#include "forcelab/mathcore.hpp"
#include "forcelab/mlp.hpp"

#include <functional>
#include <optional>

namespace forcelab::training {

enum class Optimizer { kSgd, kAdam };
enum class Cadence { kPerBatch, kPerEpoch };
enum class LossKind { kCrossEntropy, kMseProb };

struct TrainConfig {
  double eta = 0.05;
  int epochs = 100;
  int batch_size = 32;
  Optimizer optimizer = Optimizer::kSgd;
  std::uint64_t seed = 0;
  int patience = 0;  // early-stop patience in evaluations; 0 disables
  Cadence cadence = Cadence::kPerEpoch;
  LossKind loss = LossKind::kCrossEntropy;
  double weight_decay = 0.0;
  int head_groups = 1;  // softmax blocks over the logits (multi-head targets)
};

struct TrainData {
  Matrix x;                // n x d
  std::vector<int> labels; // size n; multi-head labels are packed per block
  Matrix soft_targets;     // optional n x V rows; override one-hot targets when nonempty

  Eigen::Index size() const { return x.rows(); }
};

// One-hot (or packed multi-head one-hot) target rows for `data`.
Matrix target_rows(const TrainData& data, int output_dim, int head_groups);

// Mean loss and the per-logit gradient for a batch of logits under grouped
// softmax heads. `targets` rows live on the (blockwise) simplex.
double loss_and_grad(LossKind loss, int head_groups, const Matrix& logits,
                     const Matrix& targets, Matrix* dloss_dz);

Matrix predict_probs(const MlpModel& model, const Matrix& x_rows, int head_groups = 1);
double accuracy(const MlpModel& model, const TrainData& data, int head_groups = 1);

struct AdamState {
  Vector m, v;
  long step = 0;
};

void apply_update(MlpModel& model, const Vector& grad, const TrainConfig& config,
                  AdamState* adam);

/// Per-example probability trace over training, plus its low-pass copy.
struct LearningPath {
  int example_id = -1;
  std::vector<Vector> raw;
  std::vector<Vector> smoothed;
};

struct Recorder {
  std::vector<int> tracked;
  Cadence cadence = Cadence::kPerEpoch;
  double ema_alpha = 0.05;
};

// Called after each batch forward, before the parameter update.
using BatchHook = std::function<void(const std::vector<int>& batch_indices, const Matrix& probs)>;

struct TrainResult {
  MlpModel model;
  std::vector<LearningPath> paths;
  std::vector<double> loss_curve;  // mean training loss per epoch
  std::vector<double> val_curve;   // validation loss per epoch (empty without val data)
  int stop_epoch = 0;              // epoch whose parameters are returned
};

TrainResult train(MlpModel model, const TrainData& data, const TrainConfig& config,
                  const Recorder& recorder = {}, const TrainData* validation = nullptr,
                  const BatchHook& hook = nullptr);

/// First-order low-pass filter along the path; alpha = 1 copies the input.
std::vector<Vector> ema(const std::vector<Vector>& path, double alpha);

struct BarycentricPoint {
  double u = 0.0;
  double v = 0.0;
};

/// Collapse a prediction to (correct, runner-up, rest) and place it inside
/// the reference triangle; 3-class predictions map corner-per-class.
BarycentricPoint project_barycentric(const ProbVector& p, int y);

struct ZigzagStats {
  double initial_dist = 0.0;
  double min_dist = 0.0;
  int epoch_of_min = 0;  // first global minimizer
  double final_dist = 0.0;
  double final_dist_to_label = 0.0;
};

ZigzagStats zigzag_stats(const std::vector<Vector>& path_smoothed, const Vector& q_star,
                         const Vector& e_y);

/// Area under the curve by the trapezoid rule over the epoch index.
double convergence_time(const std::vector<double>& loss_curve);

/// First epoch at or after the curve's maximum where the curve strictly
/// decreases for `window` consecutive points; nullopt if it never does.
std::optional<int> inflection_epoch(const std::vector<double>& smoothed_curve, int window = 3);

}  // namespace forcelab::training
