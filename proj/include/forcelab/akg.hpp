#pragma once

#include "forcelab/mathcore.hpp"
#include "forcelab/mlp.hpp"

#include <map>

namespace forcelab::akg {

enum class Loss { kCrossEntropy, kMse };

/// The triple behind a one-step confidence change: a centering matrix from
/// the observer's prediction, a gradient-similarity kernel block, and the
/// updater's prediction gap, scaled by the learning rate.
struct AkgTerms {
  Matrix a;    // V x V, rows sum to zero
  Matrix k;    // V x V
  Vector g;    // V
  double eta = 0.0;
};

/// Centering operator I - 1 p^T: for any b, (A b) = b - (p^T b) 1.
Matrix a_term(const ProbVector& p_o);

/// Empirical tangent-kernel block J_o J_u^T between two examples.
Matrix k_term(const JacobianBlock& j_o, const JacobianBlock& j_u);

/// Prediction gap driving the update: p - e_y for cross-entropy,
/// 2 c (.) (p - e_y) with c_i = p_i (1 - p_i) for the squared-error form.
Vector g_term(Loss loss, const ProbVector& p_u, int y_u);

AkgTerms assemble(const MlpModel& model, const Vector& x_o, const Vector& x_u, int y_u,
                  double eta, Loss loss = Loss::kCrossEntropy);

/// Predicted change of log p(.|x_o) after one step on the updater: -eta A K G.
Vector one_step_influence(const AkgTerms& terms);

struct FirstOrderCheck {
  Vector predicted;
  Vector actual;
  double residual = 0.0;  // ||actual - predicted||_2
};

/// Takes a real SGD step on (x_u, y_u) and compares the measured change of
/// log p(.|x_o) against the first-order prediction.
FirstOrderCheck verify_first_order(const MlpModel& model, const Vector& x_o, const Vector& x_u,
                                   int y_u, double eta);

/// Epoch-level force split: the observer's own pull versus the summed pull of
/// every other example, with the kernel and centering frozen at the snapshot.
struct ForceReport {
  Vector self_force;
  Vector other_force;
  std::map<int, Vector> per_updater;  // keyed by example id, excludes the observer
};

ForceReport epoch_force(const MlpModel& model, const Vector& x_o, int y_o, int observer_id,
                        const std::vector<Vector>& inputs, const std::vector<int>& labels,
                        double eta, Loss loss = Loss::kCrossEntropy);

/// Per adjacent snapshot pair, the Spearman correlation between the
/// Frobenius-norm rankings of the kernel blocks over the probe pairs.
std::vector<Correlation> entk_stability(const std::vector<MlpModel>& snapshots,
                                        const std::vector<std::pair<Vector, Vector>>& probe_pairs);

}  // namespace forcelab::akg
