#include "forcelab/feature_adapt.hpp"

#include <cmath>

namespace forcelab::featadapt {

Vector OpmState::flat_backbone() const {
  return Eigen::Map<const Vector>(backbone.data(), backbone.size());
}

OpmState random_opm(int hidden_dim, int input_dim, int output_dim, std::uint64_t seed,
                    double backbone_scale, double head_scale) {
  require(hidden_dim >= input_dim, "random_opm: hidden width below input dimension");
  require(output_dim >= 1, "random_opm: bad output dimension");
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  OpmState opm;
  const double bs = backbone_scale / std::sqrt(static_cast<double>(input_dim));
  const double hs = head_scale / std::sqrt(static_cast<double>(hidden_dim));
  opm.backbone = Matrix::NullaryExpr(hidden_dim, input_dim, [&]() { return bs * normal(rng); });
  opm.head = Matrix::NullaryExpr(output_dim, hidden_dim, [&]() { return hs * normal(rng); });
  return opm;
}

namespace {

Matrix smoothed_targets(const std::vector<int>& labels, int v, double eta_hp) {
  Matrix t = Matrix::Constant(static_cast<Eigen::Index>(labels.size()), v, (1.0 - eta_hp) / v);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    t(static_cast<Eigen::Index>(i), labels[i]) += eta_hp;
  }
  return t;
}

}  // namespace

HeadProbeResult head_probe(const OpmState& opm, const Matrix& x_rows,
                           const std::vector<int>& labels, const HpConfig& config) {
  require(config.tau >= 0, "head_probe: tau >= 0");
  require(config.eta_hp > 0.0 && config.eta_hp <= 1.0, "head_probe: eta_hp in (0,1]");
  require(static_cast<Eigen::Index>(labels.size()) == x_rows.rows(), "head_probe: label count");
  const int v = static_cast<int>(opm.head.rows());
  const Matrix h = opm.features(x_rows);  // N x h_dim, frozen throughout
  const Matrix targets = smoothed_targets(labels, v, config.eta_hp);
  const double inv_n = 1.0 / static_cast<double>(x_rows.rows());

  HeadProbeResult out;
  out.head = opm.head;
  for (int epoch = 0; epoch < config.tau; ++epoch) {
    const Matrix p = softmax_rows(h * out.head.transpose());
    const Matrix grad = (p - targets).transpose() * h * inv_n;
    out.head -= config.head_lr * grad;
    if (!out.head.allFinite()) throw DivergenceError("head_probe: diverged");
  }
  out.q0 = softmax_rows(h * out.head.transpose());
  return out;
}

HeadProbeResult head_probe(const OpmState& opm, const Matrix& x_rows, const Vector& y,
                           const HpConfig& config) {
  require(opm.head.rows() == 1, "head_probe: regression form needs a scalar head");
  require(y.size() == x_rows.rows(), "head_probe: target count");
  const Matrix h = opm.features(x_rows);
  const double inv_n = 1.0 / static_cast<double>(x_rows.rows());

  HeadProbeResult out;
  out.head = opm.head;
  for (int epoch = 0; epoch < config.tau; ++epoch) {
    const Vector q = h * out.head.transpose();
    out.head -= config.head_lr * (2.0 * inv_n) * ((q - y).transpose() * h);
    if (!out.head.allFinite()) throw DivergenceError("head_probe: diverged");
  }
  out.q0 = h * out.head.transpose();
  return out;
}

double aie(const Matrix& q0_probs, const std::vector<int>& labels) {
  require(q0_probs.rows() == static_cast<Eigen::Index>(labels.size()), "aie: aligned inputs");
  require(q0_probs.rows() > 0, "aie: empty input");
  double total = 0.0;
  for (Eigen::Index i = 0; i < q0_probs.rows(); ++i) {
    Eigen::RowVectorXd gap = q0_probs.row(i);
    gap(labels[static_cast<std::size_t>(i)]) -= 1.0;
    total += gap.norm();
  }
  return total / static_cast<double>(q0_probs.rows());
}

double aie(const Vector& q0, const Vector& y) {
  require(q0.size() == y.size() && q0.size() > 0, "aie: aligned inputs");
  return (q0 - y).cwiseAbs().mean();
}

namespace {

// Jacobian of the scalar outputs w.r.t. vec(B): row n = kron(x_n, w0).
Matrix backbone_jacobian(const Matrix& x_rows, const Vector& w0) {
  const Eigen::Index n = x_rows.rows();
  const Eigen::Index d = x_rows.cols();
  const Eigen::Index h = w0.size();
  Matrix j(n, h * d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index c = 0; c < d; ++c) {
      j.row(i).segment(c * h, h) = x_rows(i, c) * w0.transpose();
    }
  }
  return j;
}

}  // namespace

Vector ntk_converged(const Vector& b0, const Matrix& x_rows, const Vector& y, const Vector& q0,
                     const Vector& w0, int hidden_dim, NtkSolveInfo* info) {
  const Eigen::Index n = x_rows.rows();
  const Eigen::Index d = x_rows.cols();
  require(hidden_dim >= 1 && b0.size() == hidden_dim * d, "ntk_converged: b0 size mismatch");
  require(w0.size() == hidden_dim, "ntk_converged: head size mismatch");
  require(y.size() == n && q0.size() == n, "ntk_converged: target sizes");

  const Eigen::Map<const Matrix> backbone(b0.data(), hidden_dim, d);
  const Matrix gram = backbone.transpose() * backbone +
                      w0.squaredNorm() * Matrix::Identity(d, d);
  const Matrix kappa = x_rows * gram * x_rows.transpose();

  Eigen::JacobiSVD<Matrix> svd(kappa, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const double smax = svd.singularValues()(0);
  const double smin = svd.singularValues()(svd.singularValues().size() - 1);
  const double rank_tol = static_cast<double>(n) * smax * 1e-14;
  Vector coeffs;
  bool pseudo = smin <= rank_tol;
  if (!pseudo) {
    coeffs = svd.solve(q0 - y);
  } else {
    // Rank-deficient kernel: least-squares pseudo-inverse path.
    svd.setThreshold(1e-12);
    coeffs = svd.solve(q0 - y);
  }
  if (info) {
    info->used_pseudo_inverse = pseudo;
    info->condition_number = smin > 0.0 ? smax / smin : std::numeric_limits<double>::infinity();
  }
  return b0 - backbone_jacobian(x_rows, w0).transpose() * coeffs;
}

AdaptMetrics adapt_metrics(const Matrix& h0_rows, const Matrix& ht_rows) {
  require(h0_rows.rows() == ht_rows.rows() && h0_rows.cols() == ht_rows.cols(),
          "adapt_metrics: aligned feature sets required");
  require(h0_rows.rows() > 0, "adapt_metrics: empty input");
  AdaptMetrics m;
  const double n = static_cast<double>(h0_rows.rows());
  double cos_total = 0.0;
  int cos_count = 0;
  for (Eigen::Index i = 0; i < h0_rows.rows(); ++i) {
    const auto h0 = h0_rows.row(i);
    const auto ht = ht_rows.row(i);
    m.d_euc += (ht - h0).squaredNorm();
    m.d_dot += ht.dot(h0);
    m.norm_t += ht.squaredNorm();
    m.norm_0 += h0.squaredNorm();
    const double denom = h0.norm() * ht.norm();
    if (denom > 0.0) {
      cos_total += ht.dot(h0) / denom;
      ++cos_count;
    }
  }
  m.d_euc /= n;
  m.d_dot /= n;
  m.norm_t /= n;
  m.norm_0 /= n;
  m.cosine_skipped = static_cast<int>(h0_rows.rows()) - cos_count;
  m.cosine = cos_count > 0 ? cos_total / cos_count : 0.0;
  m.identity_gap = std::abs(m.d_euc - (m.norm_t - 2.0 * m.d_dot + m.norm_0));
  return m;
}

SweepResult sweep_q0(const Vector& b0, const Matrix& x_rows, const Vector& y, const Vector& w0,
                     int hidden_dim, int grid_points) {
  require(grid_points >= 11, "sweep_q0: grid too coarse");
  SweepResult result;
  const Eigen::Index n = x_rows.rows();
  const Eigen::Index d = x_rows.cols();
  const Eigen::Map<const Matrix> backbone0(b0.data(), hidden_dim, d);
  const Matrix h0 = x_rows * backbone0.transpose();
  const double norm0 = h0.rowwise().squaredNorm().mean();
  const double b0b0 = b0.squaredNorm();
  const double w0sq = w0.squaredNorm();

  // The kernel is fixed across the grid; each grid point describes a probe
  // state whose predictions equal q0 = s Y exactly. For such a state the
  // prediction Jacobian contracted with the backbone gives q0 itself, which
  // is what the trace forms below rely on.
  const Matrix gram = backbone0.transpose() * backbone0 + w0sq * Matrix::Identity(d, d);
  const Matrix kappa = x_rows * gram * x_rows.transpose();
  Eigen::JacobiSVD<Matrix> svd(kappa, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const double smax = svd.singularValues()(0);
  const double smin = svd.singularValues()(svd.singularValues().size() - 1);
  result.solve_info.used_pseudo_inverse = smin <= static_cast<double>(n) * smax * 1e-14;
  result.solve_info.condition_number =
      smin > 0.0 ? smax / smin : std::numeric_limits<double>::infinity();
  if (result.solve_info.used_pseudo_inverse) svd.setThreshold(1e-12);

  for (int g = 0; g < grid_points; ++g) {
    const double s = static_cast<double>(g) / static_cast<double>(grid_points - 1);
    const Vector q0 = s * y;
    const Vector u = svd.solve(q0 - y);
    // Backbone shift is rank one: delta B = -w0 v^T with v = X^T u.
    const Vector v = x_rows.transpose() * u;
    const Vector xv = x_rows * v;  // per-example feature shift scale
    const double delta_sq = w0sq * v.squaredNorm();

    SweepPoint point;
    point.s = s;
    point.tr_btb0 = b0b0 - q0.dot(u);
    point.tr_btbt = b0b0 - 2.0 * q0.dot(u) + delta_sq;
    point.d_euc = w0sq * xv.array().square().mean();
    point.d_dot = norm0 - (xv.array() * q0.array()).mean();
    point.norm_t = point.d_euc + 2.0 * point.d_dot - norm0;
    // Cosine from the realized feature vectors.
    const Matrix ht = h0 - xv * w0.transpose();
    point.cosine = adapt_metrics(h0, ht).cosine;
    result.points.push_back(point);
  }

  double best = -std::numeric_limits<double>::infinity();
  for (const auto& p : result.points) {
    if (p.tr_btb0 > best) {
      best = p.tr_btb0;
      result.argmax_tr_btb0 = p.s;
    }
  }
  result.d_euc_increasing_towards_zero = true;
  for (std::size_t i = 0; i + 1 < result.points.size(); ++i) {
    if (!(result.points[i].d_euc > result.points[i + 1].d_euc)) {
      result.d_euc_increasing_towards_zero = false;
      break;
    }
  }
  return result;
}

std::vector<double> direction_change(const std::vector<Matrix>& head_series) {
  require(head_series.size() >= 2, "direction_change: need at least 2 snapshots");
  std::vector<double> out;
  out.reserve(head_series.size() - 1);
  for (std::size_t t = 0; t + 1 < head_series.size(); ++t) {
    out.push_back((head_series[t + 1] - head_series[t]).norm());
  }
  return out;
}

FullTuneResult full_tune(const OpmState& start, const Matrix& x_rows,
                         const std::vector<int>& labels, int epochs, double lr) {
  require(epochs >= 1, "full_tune: epochs >= 1");
  require(static_cast<Eigen::Index>(labels.size()) == x_rows.rows(), "full_tune: label count");
  const int v = static_cast<int>(start.head.rows());
  const Matrix targets = smoothed_targets(labels, v, 1.0);
  const double inv_n = 1.0 / static_cast<double>(x_rows.rows());

  FullTuneResult out;
  out.state = start;
  out.head_series.push_back(start.head);
  for (int epoch = 0; epoch < epochs; ++epoch) {
    const Matrix h = out.state.features(x_rows);
    const Matrix p = softmax_rows(h * out.state.head.transpose());
    const Matrix dz = (p - targets) * inv_n;  // N x V
    double loss = 0.0;
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      loss -= std::log(std::max(p(i, labels[static_cast<std::size_t>(i)]), 1e-300));
    }
    out.loss_curve.push_back(loss * inv_n);
    const Matrix head_grad = dz.transpose() * h;
    const Matrix backbone_grad = (dz * out.state.head).transpose() * x_rows;
    out.state.head -= lr * head_grad;
    out.state.backbone -= lr * backbone_grad;
    if (!out.state.head.allFinite() || !out.state.backbone.allFinite()) {
      throw DivergenceError("full_tune: diverged");
    }
    out.head_series.push_back(out.state.head);
  }
  return out;
}

}  // namespace forcelab::featadapt
