#include "forcelab/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace forcelab::training {

namespace {

double block_loss_and_grad(LossKind loss, const Eigen::RowVectorXd& logits,
                           const Eigen::RowVectorXd& target, Eigen::RowVectorXd& dz) {
  const double m = logits.maxCoeff();
  Eigen::RowVectorXd e = (logits.array() - m).exp();
  const double z = e.sum();
  Eigen::RowVectorXd p = e / z;
  if (loss == LossKind::kCrossEntropy) {
    const double lse = m + std::log(z);
    double value = 0.0;
    for (Eigen::Index i = 0; i < logits.size(); ++i) {
      if (target(i) != 0.0) value -= target(i) * (logits(i) - lse);
    }
    dz = p - target;
    return value;
  }
  // Squared error on the probability vector; gradient through the softmax.
  Eigen::RowVectorXd diff = p - target;
  const double inner = diff.dot(p);
  dz = 2.0 * (p.array() * (diff.array() - inner)).matrix();
  return diff.squaredNorm();
}

}  // namespace

Matrix target_rows(const TrainData& data, int output_dim, int head_groups) {
  require(head_groups >= 1 && output_dim % head_groups == 0, "target_rows: bad head grouping");
  if (data.soft_targets.size() > 0) {
    require(data.soft_targets.rows() == data.x.rows() && data.soft_targets.cols() == output_dim,
            "target_rows: soft target shape mismatch");
    return data.soft_targets;
  }
  require(static_cast<Eigen::Index>(data.labels.size()) == data.x.rows(),
          "target_rows: labels missing");
  const int block = output_dim / head_groups;
  Matrix t = Matrix::Zero(data.x.rows(), output_dim);
  for (Eigen::Index i = 0; i < data.x.rows(); ++i) {
    int packed = data.labels[static_cast<std::size_t>(i)];
    for (int g = head_groups - 1; g >= 0; --g) {
      const int lab = packed % block;
      packed /= block;
      t(i, g * block + lab) = 1.0;
    }
  }
  return t;
}

double loss_and_grad(LossKind loss, int head_groups, const Matrix& logits, const Matrix& targets,
                     Matrix* dloss_dz) {
  require(logits.rows() == targets.rows() && logits.cols() == targets.cols(),
          "loss_and_grad: shape mismatch");
  require(head_groups >= 1 && logits.cols() % head_groups == 0, "loss_and_grad: bad head grouping");
  const int block = static_cast<int>(logits.cols()) / head_groups;
  if (dloss_dz) dloss_dz->resize(logits.rows(), logits.cols());
  double total = 0.0;
  Eigen::RowVectorXd dz(block);
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    for (int g = 0; g < head_groups; ++g) {
      total += block_loss_and_grad(loss, logits.row(i).segment(g * block, block),
                                   targets.row(i).segment(g * block, block), dz);
      if (dloss_dz) dloss_dz->row(i).segment(g * block, block) = dz;
    }
  }
  return total / static_cast<double>(logits.rows());
}

Matrix predict_probs(const MlpModel& model, const Matrix& x_rows, int head_groups) {
  Matrix z = model.logits_batch(x_rows);
  const int block = static_cast<int>(z.cols()) / head_groups;
  Matrix p(z.rows(), z.cols());
  for (int g = 0; g < head_groups; ++g) {
    p.middleCols(g * block, block) = softmax_rows(z.middleCols(g * block, block));
  }
  return p;
}

double accuracy(const MlpModel& model, const TrainData& data, int head_groups) {
  const Matrix p = predict_probs(model, data.x, head_groups);
  const int block = static_cast<int>(p.cols()) / head_groups;
  int correct = 0;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    int predicted = 0;
    for (int g = 0; g < head_groups; ++g) {
      Eigen::Index arg;
      p.row(i).segment(g * block, block).maxCoeff(&arg);
      predicted = predicted * block + static_cast<int>(arg);
    }
    if (predicted == data.labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(p.rows());
}

void apply_update(MlpModel& model, const Vector& grad, const TrainConfig& config,
                  AdamState* adam) {
  Vector g = grad;
  if (config.weight_decay > 0.0) g += config.weight_decay * model.flatten();
  if (config.optimizer == Optimizer::kSgd) {
    model.axpy(-config.eta, g);
    return;
  }
  require(adam != nullptr, "apply_update: adam state required");
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  if (adam->m.size() == 0) {
    adam->m = Vector::Zero(g.size());
    adam->v = Vector::Zero(g.size());
  }
  ++adam->step;
  adam->m = kBeta1 * adam->m + (1.0 - kBeta1) * g;
  adam->v = kBeta2 * adam->v + (1.0 - kBeta2) * g.cwiseProduct(g);
  const double c1 = 1.0 - std::pow(kBeta1, adam->step);
  const double c2 = 1.0 - std::pow(kBeta2, adam->step);
  const Vector update =
      (adam->m / c1).cwiseQuotient(((adam->v / c2).cwiseSqrt().array() + kEps).matrix());
  model.axpy(-config.eta, update);
}

namespace {

void record_tracked(const MlpModel& model, const TrainData& data, const Recorder& recorder,
                    int head_groups, std::vector<LearningPath>& paths) {
  if (recorder.tracked.empty()) return;
  Matrix x(static_cast<Eigen::Index>(recorder.tracked.size()), data.x.cols());
  for (std::size_t i = 0; i < recorder.tracked.size(); ++i) {
    x.row(static_cast<Eigen::Index>(i)) = data.x.row(recorder.tracked[i]);
  }
  const Matrix p = predict_probs(model, x, head_groups);
  for (std::size_t i = 0; i < recorder.tracked.size(); ++i) {
    paths[i].raw.push_back(p.row(static_cast<Eigen::Index>(i)).transpose());
  }
}

double validation_loss(const MlpModel& model, const TrainData& val, const TrainConfig& config) {
  const Matrix z = model.logits_batch(val.x);
  const Matrix t = target_rows(val, static_cast<int>(z.cols()), config.head_groups);
  return loss_and_grad(config.loss, config.head_groups, z, t, nullptr);
}

}  // namespace

TrainResult train(MlpModel model, const TrainData& data, const TrainConfig& config,
                  const Recorder& recorder, const TrainData* validation, const BatchHook& hook) {
  require(config.eta >= 0.0, "train: eta must be nonnegative");
  require(config.epochs >= 1, "train: epochs >= 1");
  require(config.batch_size >= 1, "train: batch_size >= 1");
  const Eigen::Index n = data.size();
  require(n > 0, "train: empty dataset");

  const int v = model.output_dim();
  const Matrix targets = target_rows(data, v, config.head_groups);

  TrainResult result;
  result.paths.resize(recorder.tracked.size());
  for (std::size_t i = 0; i < recorder.tracked.size(); ++i) {
    result.paths[i].example_id = recorder.tracked[i];
  }
  record_tracked(model, data, recorder, config.head_groups, result.paths);

  Rng rng(config.seed);
  AdamState adam;
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  MlpModel best = model;
  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  int stale = 0;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    Eigen::Index seen = 0;
    for (Eigen::Index start = 0; start < n; start += config.batch_size) {
      const Eigen::Index len = std::min<Eigen::Index>(config.batch_size, n - start);
      Matrix xb(len, data.x.cols());
      Matrix tb(len, v);
      std::vector<int> batch_ids(static_cast<std::size_t>(len));
      for (Eigen::Index i = 0; i < len; ++i) {
        const int idx = order[static_cast<std::size_t>(start + i)];
        batch_ids[static_cast<std::size_t>(i)] = idx;
        xb.row(i) = data.x.row(idx);
        tb.row(i) = targets.row(idx);
      }

      ForwardCache cache;
      const Matrix z = model.forward_batch(xb, cache);
      Matrix dz;
      const double batch_loss = loss_and_grad(config.loss, config.head_groups, z, tb, &dz);
      if (!std::isfinite(batch_loss)) throw DivergenceError("train: non-finite loss");
      if (hook) {
        Matrix probs(z.rows(), z.cols());
        const int block = v / config.head_groups;
        for (int g = 0; g < config.head_groups; ++g) {
          probs.middleCols(g * block, block) = softmax_rows(z.middleCols(g * block, block));
        }
        hook(batch_ids, probs);
      }
      epoch_loss += batch_loss * static_cast<double>(len);
      seen += len;
      // Mean-over-batch gradient.
      const Vector grad = model.backward_batch(cache, dz / static_cast<double>(len));
      apply_update(model, grad, config, &adam);
      if (recorder.cadence == Cadence::kPerBatch) {
        record_tracked(model, data, recorder, config.head_groups, result.paths);
      }
    }
    result.loss_curve.push_back(epoch_loss / static_cast<double>(seen));
    if (recorder.cadence == Cadence::kPerEpoch) {
      record_tracked(model, data, recorder, config.head_groups, result.paths);
    }

    if (validation) {
      const double vl = validation_loss(model, *validation, config);
      result.val_curve.push_back(vl);
      if (vl < best_val) {
        best_val = vl;
        best = model;
        best_epoch = epoch;
        stale = 0;
      } else if (config.patience > 0 && ++stale >= config.patience) {
        break;
      }
    }
  }

  if (validation && config.patience > 0) {
    result.model = std::move(best);
    result.stop_epoch = best_epoch;
  } else {
    result.model = std::move(model);
    result.stop_epoch = static_cast<int>(result.loss_curve.size());
  }
  for (auto& path : result.paths) path.smoothed = ema(path.raw, recorder.ema_alpha);
  return result;
}

std::vector<Vector> ema(const std::vector<Vector>& path, double alpha) {
  require(alpha >= 0.0 && alpha <= 1.0, "ema: alpha in [0,1]");
  std::vector<Vector> smoothed;
  smoothed.reserve(path.size());
  for (const auto& p : path) {
    if (smoothed.empty()) {
      smoothed.push_back(p);
    } else {
      smoothed.push_back((1.0 - alpha) * smoothed.back() + alpha * p);
    }
  }
  return smoothed;
}

BarycentricPoint project_barycentric(const ProbVector& p, int y) {
  require(p.size() >= 3, "project_barycentric: need at least 3 classes");
  require(y >= 0 && y < p.size(), "project_barycentric: label out of range");
  Vector w(3);
  if (p.size() == 3) {
    w = p.values();
  } else {
    const double correct = p[y];
    double runner = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      if (i != y) runner = std::max(runner, p[i]);
    }
    w << correct, runner, std::max(0.0, 1.0 - correct - runner);
  }
  // Reference triangle corners: (0,0), (1,0), (1/2, sqrt(3)/2).
  BarycentricPoint out;
  out.u = w(1) + 0.5 * w(2);
  out.v = 0.5 * std::sqrt(3.0) * w(2);
  return out;
}

ZigzagStats zigzag_stats(const std::vector<Vector>& path_smoothed, const Vector& q_star,
                         const Vector& e_y) {
  require(!path_smoothed.empty(), "zigzag_stats: empty path");
  ZigzagStats stats;
  stats.initial_dist = (path_smoothed.front() - q_star).norm();
  stats.min_dist = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < path_smoothed.size(); ++t) {
    const double d = (path_smoothed[t] - q_star).norm();
    if (d < stats.min_dist) {
      stats.min_dist = d;
      stats.epoch_of_min = static_cast<int>(t);
    }
  }
  stats.final_dist = (path_smoothed.back() - q_star).norm();
  stats.final_dist_to_label = (path_smoothed.back() - e_y).norm();
  return stats;
}

double convergence_time(const std::vector<double>& loss_curve) {
  require(!loss_curve.empty(), "convergence_time: empty curve");
  double area = 0.0;
  for (std::size_t i = 0; i + 1 < loss_curve.size(); ++i) {
    area += 0.5 * (loss_curve[i] + loss_curve[i + 1]);
  }
  return area;
}

std::optional<int> inflection_epoch(const std::vector<double>& smoothed_curve, int window) {
  require(smoothed_curve.size() >= 5, "inflection_epoch: curve too short");
  require(window >= 2, "inflection_epoch: window >= 2");
  const auto peak = std::max_element(smoothed_curve.begin(), smoothed_curve.end());
  const int start = static_cast<int>(peak - smoothed_curve.begin());
  const int n = static_cast<int>(smoothed_curve.size());
  for (int t = start; t + window - 1 < n; ++t) {
    bool decaying = true;
    for (int k = 0; k < window - 1; ++k) {
      if (!(smoothed_curve[static_cast<std::size_t>(t + k)] >
            smoothed_curve[static_cast<std::size_t>(t + k + 1)])) {
        decaying = false;
        break;
      }
    }
    if (decaying) return t;
  }
  return std::nullopt;
}

}  // namespace forcelab::training
