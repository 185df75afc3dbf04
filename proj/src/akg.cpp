#include "forcelab/akg.hpp"

#include <cmath>

namespace forcelab::akg {

Matrix a_term(const ProbVector& p_o) {
  const Eigen::Index v = p_o.size();
  return Matrix::Identity(v, v) - Vector::Ones(v) * p_o.values().transpose();
}

Matrix k_term(const JacobianBlock& j_o, const JacobianBlock& j_u) {
  require(j_o.rows.cols() == j_u.rows.cols(), "k_term: parameter counts differ");
  return j_o.rows * j_u.rows.transpose();
}

Vector g_term(Loss loss, const ProbVector& p_u, int y_u) {
  const Eigen::Index v = p_u.size();
  require(y_u >= 0 && y_u < v, "g_term: label out of range");
  Vector gap = p_u.values();
  gap(y_u) -= 1.0;
  if (loss == Loss::kMse) {
    const Vector c = p_u.values().array() * (1.0 - p_u.values().array());
    gap = 2.0 * c.cwiseProduct(gap);
  }
  return gap;
}

AkgTerms assemble(const MlpModel& model, const Vector& x_o, const Vector& x_u, int y_u,
                  double eta, Loss loss) {
  const ProbVector p_o = softmax(model.logits(x_o));
  const ProbVector p_u = softmax(model.logits(x_u));
  const JacobianBlock j_o = per_example_jacobian(model, x_o);
  const JacobianBlock j_u = per_example_jacobian(model, x_u);
  return {a_term(p_o), k_term(j_o, j_u), g_term(loss, p_u, y_u), eta};
}

Vector one_step_influence(const AkgTerms& terms) {
  require(terms.a.cols() == terms.k.rows() && terms.k.cols() == terms.g.size(),
          "one_step_influence: inconsistent dimensions");
  return -terms.eta * (terms.a * (terms.k * terms.g));
}

FirstOrderCheck verify_first_order(const MlpModel& model, const Vector& x_o, const Vector& x_u,
                                   int y_u, double eta) {
  require(eta >= 0.0, "verify_first_order: eta must be nonnegative");
  FirstOrderCheck out;
  out.predicted = one_step_influence(assemble(model, x_o, x_u, y_u, eta));

  const Vector log_p_before = log_softmax(model.logits(x_o));
  // Real SGD step on the updating example under cross-entropy.
  const JacobianBlock j_u = per_example_jacobian(model, x_u);
  const Vector gap = g_term(Loss::kCrossEntropy, softmax(model.logits(x_u)), y_u);
  const Vector grad = j_u.rows.transpose() * gap;
  MlpModel stepped = model;
  stepped.axpy(-eta, grad);
  const Vector z_after = stepped.logits(x_o);
  if (!z_after.allFinite()) throw DivergenceError("verify_first_order: step diverged");
  out.actual = log_softmax(z_after) - log_p_before;
  out.residual = (out.actual - out.predicted).norm();
  return out;
}

ForceReport epoch_force(const MlpModel& model, const Vector& x_o, int y_o, int observer_id,
                        const std::vector<Vector>& inputs, const std::vector<int>& labels,
                        double eta, Loss loss) {
  require(inputs.size() == labels.size(), "epoch_force: inputs/labels length mismatch");
  const ProbVector p_o = softmax(model.logits(x_o));
  const Matrix a = a_term(p_o);
  const JacobianBlock j_o = per_example_jacobian(model, x_o, observer_id);

  ForceReport report;
  report.self_force = -eta * (a * (k_term(j_o, j_o) * g_term(loss, p_o, y_o)));
  report.other_force = Vector::Zero(p_o.size());
  for (std::size_t u = 0; u < inputs.size(); ++u) {
    if (static_cast<int>(u) == observer_id) continue;
    const JacobianBlock j_u = per_example_jacobian(model, inputs[u], static_cast<int>(u));
    const ProbVector p_u = softmax(model.logits(inputs[u]));
    const Vector contribution =
        -eta * (a * (k_term(j_o, j_u) * g_term(loss, p_u, labels[u])));
    report.per_updater.emplace(static_cast<int>(u), contribution);
    report.other_force += contribution;
  }
  return report;
}

std::vector<Correlation> entk_stability(const std::vector<MlpModel>& snapshots,
                                        const std::vector<std::pair<Vector, Vector>>& probe_pairs) {
  require(snapshots.size() >= 2, "entk_stability: need at least 2 snapshots");
  if (probe_pairs.size() < 3) {
    throw std::invalid_argument("entk_stability: need at least 3 probe pairs");
  }

  // Pairs usually reuse a small set of probe points; deduplicate them so
  // each snapshot differentiates every point once.
  std::vector<Vector> points;
  std::vector<std::pair<std::size_t, std::size_t>> pair_index;
  auto intern = [&points](const Vector& x) {
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (points[i].size() == x.size() && points[i] == x) return i;
    }
    points.push_back(x);
    return points.size() - 1;
  };
  for (const auto& [x_o, x_u] : probe_pairs) pair_index.emplace_back(intern(x_o), intern(x_u));

  const Eigen::Index n_pairs = static_cast<Eigen::Index>(probe_pairs.size());
  std::vector<Vector> norms;
  norms.reserve(snapshots.size());
  for (const auto& model : snapshots) {
    std::vector<JacobianBlock> blocks;
    blocks.reserve(points.size());
    for (const auto& x : points) blocks.push_back(per_example_jacobian(model, x));
    Vector f(n_pairs);
    for (Eigen::Index i = 0; i < n_pairs; ++i) {
      const auto& [o, u] = pair_index[static_cast<std::size_t>(i)];
      f(i) = k_term(blocks[o], blocks[u]).norm();
    }
    norms.push_back(std::move(f));
  }

  std::vector<Correlation> series;
  series.reserve(snapshots.size() - 1);
  for (std::size_t t = 0; t + 1 < norms.size(); ++t) {
    series.push_back(spearman(norms[t], norms[t + 1]));
  }
  return series;
}

}  // namespace forcelab::akg
