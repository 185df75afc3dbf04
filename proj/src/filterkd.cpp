#include "forcelab/filterkd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace forcelab::filterkd {

TeacherResult train_teacher(const MlpModel& init, const training::TrainData& train_data,
                            const training::TrainData& validation, const KdConfig& config) {
  require(config.alpha > 0.0 && config.alpha <= 1.0, "train_teacher: alpha in (0,1]");
  require(validation.size() > 0, "train_teacher: validation split required");
  const auto& tc = config.teacher;
  const Eigen::Index n = train_data.size();
  const int v = init.output_dim();

  EmaTable table;
  table.rows = training::predict_probs(init, train_data.x);
  table.update_count.assign(static_cast<std::size_t>(n), 0);

  // The table refresh rides on the batch forward pass, before each update.
  auto hook = [&](const std::vector<int>& batch, const Matrix& probs) {
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto row = static_cast<Eigen::Index>(batch[i]);
      table.rows.row(row) = (1.0 - config.alpha) * table.rows.row(row) +
                            config.alpha * probs.row(static_cast<Eigen::Index>(i));
      ++table.update_count[static_cast<std::size_t>(batch[i])];
    }
  };

  // Epoch-by-epoch loop so the table can be snapshotted at the epoch the
  // early-stopping criterion selects.
  Rng rng(tc.seed);
  training::AdamState adam;
  const Matrix targets = training::target_rows(train_data, v, tc.head_groups);
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  MlpModel model = init;
  TeacherResult result;
  double best_val = std::numeric_limits<double>::infinity();
  int stale = 0;
  int epochs_run = 0;

  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (Eigen::Index start = 0; start < n; start += tc.batch_size) {
      const Eigen::Index len = std::min<Eigen::Index>(tc.batch_size, n - start);
      Matrix xb(len, train_data.x.cols());
      Matrix tb(len, v);
      std::vector<int> batch_ids(static_cast<std::size_t>(len));
      for (Eigen::Index i = 0; i < len; ++i) {
        const int idx = order[static_cast<std::size_t>(start + i)];
        batch_ids[static_cast<std::size_t>(i)] = idx;
        xb.row(i) = train_data.x.row(idx);
        tb.row(i) = targets.row(idx);
      }
      ForwardCache cache;
      const Matrix z = model.forward_batch(xb, cache);
      hook(batch_ids, softmax_rows(z));
      Matrix dz;
      const double batch_loss = training::loss_and_grad(tc.loss, tc.head_groups, z, tb, &dz);
      if (!std::isfinite(batch_loss)) throw DivergenceError("train_teacher: non-finite loss");
      const Vector grad = model.backward_batch(cache, dz / static_cast<double>(len));
      training::apply_update(model, grad, tc, &adam);
    }

    epochs_run = epoch;
    const Matrix vz = model.logits_batch(validation.x);
    const Matrix vt = training::target_rows(validation, v, tc.head_groups);
    double val = training::loss_and_grad(tc.loss, tc.head_groups, vz, vt, nullptr);
    if (config.stop_metric == StopMetric::kValAccuracy) {
      val = -training::accuracy(model, validation, tc.head_groups);
    }
    result.val_curve.push_back(val);
    // Ties refresh the counter: accuracy moves in discrete steps and the
    // plateau should not exhaust the patience on its own.
    if (val <= best_val) {
      best_val = val;
      stale = 0;
    } else {
      ++stale;
    }
    if (tc.patience > 0 && epoch > config.min_epochs && stale >= tc.patience) break;
  }
  result.table = std::move(table);
  result.model = std::move(model);
  result.stop_epoch = epochs_run;
  return result;
}

MlpModel train_student(const MlpModel& init, const training::TrainData& data,
                       const EmaTable& targets, const training::TrainConfig& config) {
  require(targets.rows.rows() == data.size(), "train_student: table misaligned with dataset");
  training::TrainData soft = data;
  soft.soft_targets = targets.rows;
  return training::train(init, soft, config).model;
}

double supervision_quality(const Matrix& q_tar_rows, const Matrix& q_star_rows) {
  require(q_tar_rows.rows() == q_star_rows.rows() && q_tar_rows.cols() == q_star_rows.cols(),
          "supervision_quality: shape mismatch");
  require(q_tar_rows.rows() > 0, "supervision_quality: empty input");
  double total = 0.0;
  for (Eigen::Index i = 0; i < q_tar_rows.rows(); ++i) {
    total += (q_tar_rows.row(i) - q_star_rows.row(i)).norm();
  }
  return total / static_cast<double>(q_tar_rows.rows());
}

double ece(const std::vector<double>& confidences, const std::vector<int>& correctness,
           int num_bins) {
  require(confidences.size() == correctness.size(), "ece: aligned inputs required");
  require(!confidences.empty(), "ece: empty input");
  require(num_bins >= 1, "ece: need at least one bin");
  std::vector<double> conf_sum(static_cast<std::size_t>(num_bins), 0.0);
  std::vector<double> acc_sum(static_cast<std::size_t>(num_bins), 0.0);
  std::vector<int> count(static_cast<std::size_t>(num_bins), 0);
  for (std::size_t i = 0; i < confidences.size(); ++i) {
    const double c = confidences[i];
    require(c >= 0.0 && c <= 1.0, "ece: confidence out of [0,1]");
    // Bins are ((m-1)/M, m/M]; zero confidence lands in the first bin.
    int bin = static_cast<int>(std::ceil(c * num_bins)) - 1;
    bin = std::clamp(bin, 0, num_bins - 1);
    conf_sum[static_cast<std::size_t>(bin)] += c;
    acc_sum[static_cast<std::size_t>(bin)] += correctness[i] != 0 ? 1.0 : 0.0;
    ++count[static_cast<std::size_t>(bin)];
  }
  const double n = static_cast<double>(confidences.size());
  double total = 0.0;
  for (int m = 0; m < num_bins; ++m) {
    const auto idx = static_cast<std::size_t>(m);
    if (count[idx] == 0) continue;
    const double acc = acc_sum[idx] / count[idx];
    const double conf = conf_sum[idx] / count[idx];
    total += (count[idx] / n) * std::abs(acc - conf);
  }
  return total;
}

StratifiedSplit split_stratified(const training::TrainData& data, double fraction,
                                 std::uint64_t seed) {
  require(fraction > 0.0 && fraction < 1.0, "split_stratified: fraction in (0,1)");
  require(!data.labels.empty(), "split_stratified: labels required");
  const int n = static_cast<int>(data.size());
  const int num_classes = 1 + *std::max_element(data.labels.begin(), data.labels.end());

  Rng rng(seed);
  std::vector<bool> in_val(static_cast<std::size_t>(n), false);
  for (int c = 0; c < num_classes; ++c) {
    std::vector<int> members;
    for (int i = 0; i < n; ++i) {
      if (data.labels[static_cast<std::size_t>(i)] == c) members.push_back(i);
    }
    std::shuffle(members.begin(), members.end(), rng);
    const auto take = static_cast<std::size_t>(
        std::llround(fraction * static_cast<double>(members.size())));
    for (std::size_t i = 0; i < take; ++i) in_val[static_cast<std::size_t>(members[i])] = true;
  }

  StratifiedSplit split;
  auto gather = [&](bool pick_val, std::vector<int>& indices) {
    training::TrainData part;
    for (int i = 0; i < n; ++i) {
      if (in_val[static_cast<std::size_t>(i)] == pick_val) indices.push_back(i);
    }
    part.x.resize(static_cast<Eigen::Index>(indices.size()), data.x.cols());
    part.labels.reserve(indices.size());
    const bool soft = data.soft_targets.size() > 0;
    if (soft) {
      part.soft_targets.resize(static_cast<Eigen::Index>(indices.size()), data.soft_targets.cols());
    }
    for (std::size_t i = 0; i < indices.size(); ++i) {
      part.x.row(static_cast<Eigen::Index>(i)) = data.x.row(indices[i]);
      part.labels.push_back(data.labels[static_cast<std::size_t>(indices[i])]);
      if (soft) part.soft_targets.row(static_cast<Eigen::Index>(i)) = data.soft_targets.row(indices[i]);
    }
    return part;
  };
  split.fit = gather(false, split.fit_indices);
  split.held_out = gather(true, split.held_out_indices);
  return split;
}

namespace {

// KL(p || q) over aligned rows; empty when some q_i = 0 has p_i > 0.
std::optional<double> kl_divergence(const Eigen::RowVectorXd& p, const Eigen::RowVectorXd& q) {
  double kl = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p(i) == 0.0) continue;
    if (q(i) <= 0.0) return std::nullopt;
    kl += p(i) * std::log(p(i) / q(i));
  }
  return std::max(kl, 0.0);
}

}  // namespace

const std::array<const char*, 7> kRiskBoundNames = {
    "l2_k", "l1", "pinsker_sqrt_tar_star", "pinsker_mean_tar_star",
    "pinsker_sqrt_star_tar", "pinsker_mean_star_tar", "jeffreys"};

RiskBoundTerms risk_bound_terms(const Matrix& q_tar, const Matrix& q_star,
                                const Matrix& loss_table, double ell, int n, int resamples,
                                std::uint64_t seed) {
  const Eigen::Index s = q_tar.rows();
  const Eigen::Index k = q_tar.cols();
  require(q_star.rows() == s && loss_table.rows() == s && q_star.cols() == k &&
              loss_table.cols() == k,
          "risk_bound_terms: shape mismatch");
  require(loss_table.maxCoeff() <= ell + 1e-12, "risk_bound_terms: loss entries exceed ell");
  require(n >= 1 && resamples >= 1, "risk_bound_terms: bad sample counts");

  RiskBoundTerms out;

  // Per-input target risks and the true risk over the uniform population.
  Vector t(s);
  double true_risk = 0.0;
  for (Eigen::Index i = 0; i < s; ++i) {
    t(i) = q_tar.row(i).dot(loss_table.row(i));
    true_risk += q_star.row(i).dot(loss_table.row(i));
  }
  true_risk /= static_cast<double>(s);
  const double t_mean = t.mean();
  const double variance = (t.array() - t_mean).square().mean();
  out.variance_term = variance / static_cast<double>(n);

  double mean_l2 = 0.0, mean_l1 = 0.0;
  double mean_sqrt_kl_ts = 0.0, mean_kl_ts = 0.0;
  double mean_sqrt_kl_st = 0.0, mean_kl_st = 0.0;
  bool kl_ts_ok = true, kl_st_ok = true;
  for (Eigen::Index i = 0; i < s; ++i) {
    const Eigen::RowVectorXd diff = q_tar.row(i) - q_star.row(i);
    mean_l2 += diff.norm();
    mean_l1 += diff.cwiseAbs().sum();
    if (const auto kl = kl_divergence(q_tar.row(i), q_star.row(i))) {
      mean_kl_ts += *kl;
      mean_sqrt_kl_ts += std::sqrt(*kl);
    } else {
      kl_ts_ok = false;
    }
    if (const auto kl = kl_divergence(q_star.row(i), q_tar.row(i))) {
      mean_kl_st += *kl;
      mean_sqrt_kl_st += std::sqrt(*kl);
    } else {
      kl_st_ok = false;
    }
  }
  const double inv_s = 1.0 / static_cast<double>(s);
  mean_l2 *= inv_s;
  mean_l1 *= inv_s;
  mean_kl_ts *= inv_s;
  mean_sqrt_kl_ts *= inv_s;
  mean_kl_st *= inv_s;
  mean_sqrt_kl_st *= inv_s;

  const double ell2 = ell * ell;
  out.xi[0] = ell2 * static_cast<double>(k) * mean_l2 * mean_l2;
  out.xi[1] = ell2 * mean_l1 * mean_l1;
  if (kl_ts_ok) {
    out.xi[2] = 2.0 * ell2 * mean_sqrt_kl_ts * mean_sqrt_kl_ts;
    out.xi[3] = 2.0 * ell2 * mean_kl_ts;
  }
  if (kl_st_ok) {
    out.xi[4] = 2.0 * ell2 * mean_sqrt_kl_st * mean_sqrt_kl_st;
    out.xi[5] = 2.0 * ell2 * mean_kl_st;
  }
  if (kl_ts_ok && kl_st_ok) {
    out.xi[6] = ell2 * (mean_kl_ts + mean_kl_st);
  }

  Rng rng(seed);
  std::uniform_int_distribution<Eigen::Index> pick(0, s - 1);
  double acc = 0.0;
  for (int r = 0; r < resamples; ++r) {
    double r_tar = 0.0;
    for (int i = 0; i < n; ++i) r_tar += t(pick(rng));
    r_tar /= static_cast<double>(n);
    const double d = r_tar - true_risk;
    acc += d * d;
  }
  out.mc_lhs = acc / static_cast<double>(resamples);
  return out;
}

}  // namespace forcelab::filterkd
