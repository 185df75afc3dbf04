#pragma once

#include "forcelab/mathcore.hpp"

#include <optional>

namespace forcelab::featadapt {

/// Wide linear backbone with a linear head on top: h = B x, z = w h.
/// A single head row makes it the scalar-regression form.
struct OpmState {
  Matrix backbone;  // h_dim x d
  Matrix head;      // V x h_dim

  int hidden_dim() const { return static_cast<int>(backbone.rows()); }
  int input_dim() const { return static_cast<int>(backbone.cols()); }
  Vector flat_backbone() const;  // column-major vec(B)
  Matrix features(const Matrix& x_rows) const { return x_rows * backbone.transpose(); }
};

OpmState random_opm(int hidden_dim, int input_dim, int output_dim, std::uint64_t seed,
                    double backbone_scale = 1.0, double head_scale = 1.0);

struct HpConfig {
  int tau = 0;           // head-probe epochs
  double eta_hp = 1.0;   // label-smoothing coefficient in (0,1]
  double head_lr = 0.5;
};

struct HeadProbeResult {
  Matrix head;  // trained head, backbone untouched
  Matrix q0;    // predictions at the end of probing: N x V probs, or N x 1 values
};

/// Classification probe: full-batch descent on the head only, targets
/// eta_hp * e_y + (1 - eta_hp)/V * 1.
HeadProbeResult head_probe(const OpmState& opm, const Matrix& x_rows,
                           const std::vector<int>& labels, const HpConfig& config);

/// Regression probe (scalar head) under squared error.
HeadProbeResult head_probe(const OpmState& opm, const Matrix& x_rows, const Vector& y,
                           const HpConfig& config);

/// Average initial energy: mean distance from the probe-end predictions to
/// the training targets.
double aie(const Matrix& q0_probs, const std::vector<int>& labels);
double aie(const Vector& q0, const Vector& y);

struct NtkSolveInfo {
  bool used_pseudo_inverse = false;
  double condition_number = 0.0;
};

/// Converged flattened backbone of the linearized scalar-output model:
/// b0 - (grad_b q0)^T kappa0^{-1} (q0 - Y) with
/// kappa0 = X (B^T B + ||w0||^2 I) X^T. Falls back to a pseudo-inverse on
/// singular kernels and reports the conditioning.
Vector ntk_converged(const Vector& b0, const Matrix& x_rows, const Vector& y, const Vector& q0,
                     const Vector& w0, int hidden_dim, NtkSolveInfo* info = nullptr);

struct AdaptMetrics {
  double d_euc = 0.0;   // E ||h^T - h^0||^2
  double d_dot = 0.0;   // E <h^T, h^0>
  double norm_t = 0.0;  // E ||h^T||^2
  double cosine = 1.0;  // E cos(h^T, h^0) over rows with nonzero norms
  int cosine_skipped = 0;
  double norm_0 = 0.0;
  double identity_gap = 0.0;  // |d_euc - (norm_t - 2 d_dot + norm_0)|
};

AdaptMetrics adapt_metrics(const Matrix& h0_rows, const Matrix& ht_rows);

struct SweepPoint {
  double s = 0.0;
  double tr_btb0 = 0.0;
  double tr_btbt = 0.0;
  double d_euc = 0.0;
  double d_dot = 0.0;
  double norm_t = 0.0;
  double cosine = 0.0;
};

struct SweepResult {
  std::vector<SweepPoint> points;          // ascending in s
  double argmax_tr_btb0 = 0.0;             // s at the tr(B^t B^0) maximum
  bool d_euc_increasing_towards_zero = false;  // monotone growth as s drops
  NtkSolveInfo solve_info;
};

/// Closed-form sweep over scaled targets q0 = s Y on a grid over [0, 1].
SweepResult sweep_q0(const Vector& b0, const Matrix& x_rows, const Vector& y, const Vector& w0,
                     int hidden_dim, int grid_points = 21);

/// Per-step head movement ||w^{t+1} - w^t||_F.
std::vector<double> direction_change(const std::vector<Matrix>& head_series);

struct FullTuneResult {
  OpmState state;
  std::vector<Matrix> head_series;  // head snapshot per epoch, including the start
  std::vector<double> loss_curve;
};

/// Joint full-batch descent on head and backbone (classification).
FullTuneResult full_tune(const OpmState& start, const Matrix& x_rows,
                         const std::vector<int>& labels, int epochs, double lr);

}  // namespace forcelab::featadapt
