#pragma once

#include "forcelab/mathcore.hpp"
#include "forcelab/training.hpp"

#include <array>
#include <optional>

namespace forcelab::filterkd {

/// Per-example smoothed teacher predictions; one row per training example,
/// each row updated exactly once per teacher epoch.
struct EmaTable {
  Matrix rows;                     // N x V, rows on the simplex
  std::vector<int> update_count;   // per row
};

enum class Mode { kFilterKd, kEskd, kOneHot };

/// What the teacher's early stopping watches. Cross-entropy on held-out
/// noisy labels starts climbing as soon as the model grows confident, long
/// before its decision quality peaks, so accuracy is the default.
enum class StopMetric { kValAccuracy, kValLoss };

struct KdConfig {
  double alpha = 0.05;  // low-pass coefficient; 1 reproduces the early-stopped-teacher baseline
  training::TrainConfig teacher;
  training::TrainConfig student;
  Mode mode = Mode::kFilterKd;
  StopMetric stop_metric = StopMetric::kValAccuracy;
  // Stopping cannot fire inside the filter's transient: a table smoothed at
  // rate alpha only reflects the recent path after roughly 1/alpha epochs.
  int min_epochs = 0;
};

struct TeacherResult {
  EmaTable table;      // state when training stopped
  int stop_epoch = 0;  // number of epochs actually run
  MlpModel model;      // teacher parameters when training stopped
  std::vector<double> val_curve;  // per-epoch stopping metric (lower is better)
};

/// Trains the teacher while maintaining the prediction table: the table is
/// filled from the untrained teacher and each visited batch refreshes its
/// rows before the parameter update. Training halts, and the table freezes,
/// once the validation metric has not improved for `patience` epochs (after
/// the burn-in), or at the epoch cap.
TeacherResult train_teacher(const MlpModel& init, const training::TrainData& train_data,
                            const training::TrainData& validation, const KdConfig& config);

/// Student training under soft cross-entropy against the table rows.
MlpModel train_student(const MlpModel& init, const training::TrainData& data,
                       const EmaTable& targets, const training::TrainConfig& config);

/// Mean L2 distance between supervision rows and reference rows.
double supervision_quality(const Matrix& q_tar_rows, const Matrix& q_star_rows);

/// Expected calibration error over M uniform confidence bins.
double ece(const std::vector<double>& confidences, const std::vector<int>& correctness,
           int num_bins = 10);

struct StratifiedSplit {
  training::TrainData fit;
  training::TrainData held_out;
  std::vector<int> fit_indices;       // positions in the original dataset
  std::vector<int> held_out_indices;
};

/// Stratified split: roughly `fraction` of each class goes to the held-out
/// (validation) part.
StratifiedSplit split_stratified(const training::TrainData& data, double fraction,
                                 std::uint64_t seed);

// ---------------------------------------------------------------------------
// Variance/bias bound on the risk estimate under an alternative target.

struct RiskBoundTerms {
  double variance_term = 0.0;           // Var_x[q_tar^T L] / n
  // xi terms in order: L2*K, L1, (E sqrt KL(tar||*))^2, E KL(tar||*),
  // (E sqrt KL(*||tar))^2, E KL(*||tar), Jeffreys. Unset when a KL form is
  // undefined because the supports mismatch.
  std::array<std::optional<double>, 7> xi{};
  double mc_lhs = 0.0;                  // Monte-Carlo estimate of E[(R_tar - R)^2]
};

extern const std::array<const char*, 7> kRiskBoundNames;

/// Inputs are row-aligned over a finite input population sampled uniformly:
/// q_tar and q_star rows on the simplex, loss_table rows bounded by ell.
/// n is the sample count of one risk estimate; the Monte-Carlo expectation
/// over datasets uses `resamples` draws.
RiskBoundTerms risk_bound_terms(const Matrix& q_tar, const Matrix& q_star,
                                const Matrix& loss_table, double ell, int n, int resamples,
                                std::uint64_t seed);

}  // namespace forcelab::filterkd
