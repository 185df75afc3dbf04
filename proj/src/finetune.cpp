#include "forcelab/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace forcelab::finetune {

Matrix UfmModel::context_rows() const {
  const int n = static_cast<int>(features.cols());
  Matrix rows(n, vocab());
  for (int c = 0; c < n; ++c) rows.row(c) = probs(c).transpose();
  return rows;
}

UfmModel make_ufm(const Matrix& features, std::uint64_t seed, double readout_scale) {
  // Contexts and predicted tokens share one vocabulary: one feature column
  // per token, readout rows spanning the same tokens.
  UfmModel model;
  model.features = features;
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double scale = readout_scale / std::sqrt(static_cast<double>(features.rows()));
  model.readout = Matrix::NullaryExpr(features.cols(), features.rows(),
                                      [&]() { return scale * normal(rng); });
  return model;
}

Matrix g_sft(const Matrix& pi_columns, const std::vector<int>& tokens) {
  require(pi_columns.cols() == static_cast<Eigen::Index>(tokens.size()),
          "g_sft: one prediction column per token required");
  require(!tokens.empty(), "g_sft: empty sequence");
  Matrix gap = pi_columns;
  for (std::size_t l = 0; l < tokens.size(); ++l) {
    const int y = tokens[l];
    require(y >= 0 && y < pi_columns.rows(), "g_sft: token out of vocabulary");
    gap(y, static_cast<Eigen::Index>(l)) -= 1.0;
  }
  return gap;
}

DpoGate dpo_gate(const DpoState& state) {
  require(state.beta > 0.0, "dpo_gate: beta must be positive");
  require(std::isfinite(state.cur_logprob_pos) && std::isfinite(state.cur_logprob_neg) &&
              std::isfinite(state.ref_logprob_pos) && std::isfinite(state.ref_logprob_neg),
          "dpo_gate: non-finite log-probabilities");
  DpoGate gate;
  gate.margin = state.beta * ((state.cur_logprob_pos - state.ref_logprob_pos) -
                              (state.cur_logprob_neg - state.ref_logprob_neg));
  gate.a = 1.0 / (1.0 + std::exp(-gate.margin));
  const double scale = state.beta * (1.0 - gate.a);
  gate.g_plus = scale * g_sft(state.pi_pos, state.y_pos);
  gate.g_minus = scale * g_sft(state.pi_neg, state.y_neg);
  return gate;
}

SqueezeResult squeeze_step(const UfmModel& model, int y_neg, double eta, int context) {
  require(eta > 0.0, "squeeze_step: eta must be positive");
  require(y_neg >= 0 && y_neg < model.vocab(), "squeeze_step: label out of range");
  SqueezeResult out;
  out.p_before = model.probs(context);
  const Vector h = model.features.col(context);
  Vector gap = out.p_before;
  gap(y_neg) -= 1.0;
  // Ascent on the loss of the rejected label.
  const Matrix readout_after = model.readout + eta * gap * h.transpose();
  out.p_after = softmax(readout_after * h).values();
  out.alpha_ratios = out.p_after.cwiseQuotient(out.p_before);

  double best = -1.0;
  for (int i = 0; i < model.vocab(); ++i) {
    if (i == y_neg) continue;
    if (out.p_before(i) > best) {
      best = out.p_before(i);
      out.argmax_excluded = i;
    }
  }
  out.target_dropped = out.p_after(y_neg) < out.p_before(y_neg);
  out.argmax_rose = out.p_after(out.argmax_excluded) > out.p_before(out.argmax_excluded);
  return out;
}

PairedStepResult paired_step(const UfmModel& model, int y_pos, int y_neg, double eta_pos,
                             double eta_neg, int context) {
  require(y_pos != y_neg, "paired_step: labels must differ");
  require(y_pos >= 0 && y_pos < model.vocab() && y_neg >= 0 && y_neg < model.vocab(),
          "paired_step: label out of range");
  PairedStepResult out;
  out.p_before = model.probs(context);
  const Vector h = model.features.col(context);
  Vector gap_pos = out.p_before;
  gap_pos(y_pos) -= 1.0;
  Vector gap_neg = out.p_before;
  gap_neg(y_neg) -= 1.0;
  // Descent on the preferred label, ascent on the rejected one.
  out.readout_delta = (-eta_pos * gap_pos + eta_neg * gap_neg) * h.transpose();
  out.p_after = softmax((model.readout + out.readout_delta) * h).values();
  return out;
}

TwoGramMode two_gram_mode_from_name(const std::string& name) {
  if (name == "pos_only") return TwoGramMode::kPosOnly;
  if (name == "paired") return TwoGramMode::kPaired;
  if (name == "sft_both_then_dpo") return TwoGramMode::kSftBothThenDpo;
  if (name == "sft_pos_then_dpo") return TwoGramMode::kSftPosThenDpo;
  throw std::invalid_argument("unknown two-gram mode: " + name);
}

namespace {

// Next-token descent over adjacent pairs of `tokens`; sign < 0 turns the
// pass into gradient ascent.
void sequence_pass(UfmModel& model, const std::vector<int>& tokens, double eta, double sign) {
  for (std::size_t l = 1; l < tokens.size(); ++l) {
    const int ctx = tokens[l - 1];
    const int y = tokens[l];
    const Vector h = model.features.col(ctx);
    Vector gap = softmax(model.readout * h).values();
    gap(y) -= 1.0;
    model.readout -= sign * eta * gap * h.transpose();
    if (!model.readout.allFinite()) throw DivergenceError("two-gram pass diverged");
  }
}

// Paired pass: descent on the positive stream and ascent on the negative
// one, interleaved position by position.
void paired_pass(UfmModel& model, const std::vector<int>& pos, const std::vector<int>& neg,
                 double eta) {
  require(pos.size() == neg.size(), "paired_pass: sequences must have equal length");
  for (std::size_t l = 1; l < pos.size(); ++l) {
    const Vector h_pos = model.features.col(pos[l - 1]);
    const Vector h_neg = model.features.col(neg[l - 1]);
    Vector gap_pos = softmax(model.readout * h_pos).values();
    gap_pos(pos[l]) -= 1.0;
    Vector gap_neg = softmax(model.readout * h_neg).values();
    gap_neg(neg[l]) -= 1.0;
    model.readout += -eta * gap_pos * h_pos.transpose() + eta * gap_neg * h_neg.transpose();
    if (!model.readout.allFinite()) throw DivergenceError("two-gram pass diverged");
  }
}

double corpus_log_prob(const UfmModel& model, const std::vector<int>& tokens) {
  double total = 0.0;
  for (std::size_t l = 1; l < tokens.size(); ++l) {
    total += log_softmax(model.logits(tokens[l - 1]))(tokens[l]);
  }
  return total;
}

void dpo_pass(UfmModel& model, const UfmModel& reference, const std::vector<int>& pos,
              const std::vector<int>& neg, double beta, double eta) {
  const double margin = beta * ((corpus_log_prob(model, pos) - corpus_log_prob(reference, pos)) -
                                (corpus_log_prob(model, neg) - corpus_log_prob(reference, neg)));
  const double a = 1.0 / (1.0 + std::exp(-margin));
  const double scale = beta * (1.0 - a);
  Matrix delta = Matrix::Zero(model.readout.rows(), model.readout.cols());
  for (std::size_t l = 1; l < pos.size(); ++l) {
    const Vector h = model.features.col(pos[l - 1]);
    Vector gap = softmax(model.readout * h).values();
    gap(pos[l]) -= 1.0;
    delta -= gap * h.transpose();
  }
  for (std::size_t l = 1; l < neg.size(); ++l) {
    const Vector h = model.features.col(neg[l - 1]);
    Vector gap = softmax(model.readout * h).values();
    gap(neg[l]) -= 1.0;
    delta += gap * h.transpose();
  }
  model.readout += eta * scale * delta;
  if (!model.readout.allFinite()) throw DivergenceError("two-gram preference pass diverged");
}

double mean_row_entropy(const Matrix& rows) {
  double total = 0.0;
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    for (Eigen::Index c = 0; c < rows.cols(); ++c) {
      if (rows(r, c) > 0.0) total -= rows(r, c) * std::log(rows(r, c));
    }
  }
  return total / static_cast<double>(rows.rows());
}

}  // namespace

TwoGramSummary run_two_gram(const datasets::TwoGramSpec& spec, TwoGramMode mode,
                            const TwoGramRunConfig& config) {
  require(config.steps >= 1, "run_two_gram: steps >= 1");
  const datasets::TwoGramData data = datasets::gen_two_gram(spec);
  UfmModel model = make_ufm(data.features, config.model_seed);

  TwoGramSummary summary;
  summary.rows_before = model.context_rows();

  switch (mode) {
    case TwoGramMode::kPosOnly:
      for (int s = 0; s < config.steps; ++s) sequence_pass(model, data.positive, config.eta, 1.0);
      break;
    case TwoGramMode::kPaired:
      for (int s = 0; s < config.steps; ++s) paired_pass(model, data.positive, data.negative, config.eta);
      break;
    case TwoGramMode::kSftBothThenDpo:
    case TwoGramMode::kSftPosThenDpo: {
      for (int s = 0; s < config.steps; ++s) {
        sequence_pass(model, data.positive, config.eta, 1.0);
        if (mode == TwoGramMode::kSftBothThenDpo) {
          sequence_pass(model, data.negative, config.eta, 1.0);
        }
      }
      const UfmModel reference = model;
      for (int s = 0; s < config.steps; ++s) {
        dpo_pass(model, reference, data.positive, data.negative, config.beta, config.dpo_eta);
      }
      break;
    }
  }

  summary.rows_after = model.context_rows();
  summary.mean_entropy_before = mean_row_entropy(summary.rows_before);
  summary.mean_entropy_after = mean_row_entropy(summary.rows_after);
  summary.mean_max_prob_before = summary.rows_before.rowwise().maxCoeff().mean();
  summary.mean_max_prob_after = summary.rows_after.rowwise().maxCoeff().mean();
  return summary;
}

std::vector<double> grpo_advantages(const std::vector<int>& rewards) {
  require(rewards.size() >= 2, "grpo_advantages: need at least 2 rewards");
  const double n = static_cast<double>(rewards.size());
  double mean = 0.0;
  for (int r : rewards) mean += r;
  mean /= n;
  double var = 0.0;
  for (int r : rewards) var += (r - mean) * (r - mean);
  var /= n;  // population convention
  std::vector<double> a(rewards.size(), 0.0);
  if (var <= 0.0) return a;  // all-equal rewards carry no signal
  const double sd = std::sqrt(var);
  for (std::size_t i = 0; i < rewards.size(); ++i) a[i] = (rewards[i] - mean) / sd;
  return a;
}

RatioClip grpo_ratio_and_clip(double pi_theta, double pi_ref, double eps_l, double eps_h) {
  require(eps_l <= eps_h, "grpo_ratio_and_clip: eps_l <= eps_h");
  if (pi_ref <= 0.0) throw std::domain_error("grpo_ratio_and_clip: zero reference probability");
  RatioClip out;
  out.gamma = pi_theta / pi_ref;
  out.clipped = std::clamp(out.gamma, eps_l, eps_h);
  return out;
}

double nthr_alpha(const TokenState& observer, const TokenState& updater) {
  Vector gap_o = -observer.pi;
  gap_o(observer.token) += 1.0;
  Vector gap_u = -updater.pi;
  gap_u(updater.token) += 1.0;
  return gap_o.dot(gap_u) * updater.h.dot(observer.h);
}

double token_inner_full(const TokenState& observer, const TokenState& updater,
                        const Matrix& readout) {
  Vector gap_o = -observer.pi;
  gap_o(observer.token) += 1.0;
  Vector gap_u = -updater.pi;
  gap_u(updater.token) += 1.0;
  return nthr_alpha(observer, updater) +
         (readout.transpose() * gap_o).dot(readout.transpose() * gap_u);
}

namespace {

TokenState token_state(const UfmModel& model, const RolloutGroup& group, int response,
                       int position) {
  TokenState state;
  state.token = group.responses[static_cast<std::size_t>(response)][static_cast<std::size_t>(position)];
  const int ctx = group.context_of(response, position);
  state.h = model.features.col(ctx);
  state.pi = model.probs(ctx);
  return state;
}

}  // namespace

NthrScores nthr_scores(const UfmModel& model, const RolloutGroup& group) {
  require(!group.pos_index.empty(), "nthr_scores: no positive responses");
  // Positive-token states are reused across every updating token.
  std::vector<TokenState> positive;
  for (int o : group.pos_index) {
    const auto len = group.responses[static_cast<std::size_t>(o)].size();
    for (std::size_t m = 0; m < len; ++m) {
      positive.push_back(token_state(model, group, o, static_cast<int>(m)));
    }
  }

  NthrScores scores;
  scores.alpha_hat.resize(group.responses.size());
  double neg_sum = 0.0;
  long neg_count = 0;
  for (std::size_t n = 0; n < group.responses.size(); ++n) {
    const auto len = group.responses[n].size();
    scores.alpha_hat[n].resize(len, 0.0);
    for (std::size_t l = 0; l < len; ++l) {
      const TokenState updater = token_state(model, group, static_cast<int>(n), static_cast<int>(l));
      double total = 0.0;
      for (const auto& obs : positive) total += nthr_alpha(obs, updater);
      scores.alpha_hat[n][l] = total / static_cast<double>(positive.size());
    }
  }
  for (int n : group.neg_index) {
    for (double v : scores.alpha_hat[static_cast<std::size_t>(n)]) {
      neg_sum += v;
      ++neg_count;
    }
  }
  scores.mean_negative_alpha = neg_count > 0 ? neg_sum / static_cast<double>(neg_count) : 0.0;
  return scores;
}

std::vector<std::vector<double>> plain_token_advantages(const RolloutGroup& group) {
  std::vector<std::vector<double>> adv(group.responses.size());
  for (std::size_t n = 0; n < group.responses.size(); ++n) {
    adv[n].assign(group.responses[n].size(), group.advantages[n]);
  }
  return adv;
}

std::vector<std::vector<double>> nthr_mask(const NthrScores& scores, const RolloutGroup& group,
                                           double tau, double beta) {
  require(beta >= 0.0 && beta <= 1.0, "nthr_mask: beta in [0,1]");
  auto adv = plain_token_advantages(group);
  for (int n : group.neg_index) {
    const auto idx = static_cast<std::size_t>(n);
    for (std::size_t l = 0; l < adv[idx].size(); ++l) {
      if (scores.alpha_hat[idx][l] > tau) adv[idx][l] = beta * group.advantages[idx];
    }
  }
  return adv;
}

UfmModel grpo_step(const UfmModel& model, const UfmModel& reference, const RolloutGroup& group,
                   const std::vector<std::vector<double>>& token_advantages,
                   const GrpoStepConfig& config) {
  require(token_advantages.size() == group.responses.size(),
          "grpo_step: advantage table misaligned");
  long total_tokens = 0;
  for (const auto& r : group.responses) total_tokens += static_cast<long>(r.size());
  require(total_tokens > 0, "grpo_step: empty group");

  Matrix readout_grad = Matrix::Zero(model.readout.rows(), model.readout.cols());
  Matrix feature_grad = Matrix::Zero(model.features.rows(), model.features.cols());
  for (std::size_t n = 0; n < group.responses.size(); ++n) {
    for (std::size_t l = 0; l < group.responses[n].size(); ++l) {
      const double a = token_advantages[n][static_cast<std::size_t>(l)];
      if (a == 0.0) continue;
      const int ctx = group.context_of(static_cast<int>(n), static_cast<int>(l));
      const int y = group.responses[n][l];
      const Vector h = model.features.col(ctx);
      const Vector pi = model.probs(ctx);
      const double pi_ref = softmax(reference.logits(ctx)).values()(y);
      const auto ratio = grpo_ratio_and_clip(pi(y), pi_ref, config.eps_low, config.eps_high);
      // The min picks the constant clipped branch for overshooting ratios,
      // which contributes no gradient.
      const bool active = a > 0.0 ? ratio.gamma <= config.eps_high : ratio.gamma >= config.eps_low;
      if (!active) continue;
      Vector pull = -pi;  // grad of log pi(y|ctx) w.r.t. logits
      pull(y) += 1.0;
      const double w = a * ratio.gamma;
      if (model.train_readout) readout_grad += w * pull * h.transpose();
      if (model.train_features) feature_grad.col(ctx) += w * (model.readout.transpose() * pull);
    }
  }
  const double scale = config.eta / static_cast<double>(total_tokens);
  UfmModel updated = model;
  if (model.train_readout) updated.readout += scale * readout_grad;
  if (model.train_features) updated.features += scale * feature_grad;
  if (!updated.readout.allFinite() || !updated.features.allFinite()) {
    throw DivergenceError("grpo_step: diverged");
  }
  return updated;
}

double sequence_log_prob(const UfmModel& model, const RolloutGroup& group, int response) {
  double total = 0.0;
  const auto& tokens = group.responses[static_cast<std::size_t>(response)];
  for (std::size_t l = 0; l < tokens.size(); ++l) {
    const int ctx = group.context_of(response, static_cast<int>(l));
    total += log_softmax(model.logits(ctx))(tokens[l]);
  }
  return total;
}

std::optional<double> measure_gap(const UfmModel& model_before, const UfmModel& model_after,
                                  const RolloutGroup& group) {
  if (group.pos_index.empty()) return std::nullopt;
  double total = 0.0;
  for (int o : group.pos_index) {
    total += std::exp(sequence_log_prob(model_after, group, o)) -
             std::exp(sequence_log_prob(model_before, group, o));
  }
  return total / static_cast<double>(group.pos_index.size());
}

double topk_overlap(const Vector& score_a, const Vector& score_b, int k) {
  require(score_a.size() == score_b.size(), "topk_overlap: equal universes required");
  require(k >= 1 && k <= score_a.size(), "topk_overlap: K larger than universe");
  auto top_set = [k](const Vector& s) {
    std::vector<int> idx(static_cast<std::size_t>(s.size()));
    std::iota(idx.begin(), idx.end(), 0);
    std::partial_sort(idx.begin(), idx.begin() + k, idx.end(),
                      [&s](int a, int b) { return s(a) > s(b) || (s(a) == s(b) && a < b); });
    idx.resize(static_cast<std::size_t>(k));
    return idx;
  };
  const auto ta = top_set(score_a);
  auto tb = top_set(score_b);
  std::sort(tb.begin(), tb.end());
  int hits = 0;
  for (int i : ta) {
    if (std::binary_search(tb.begin(), tb.end(), i)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(k);
}

}  // namespace forcelab::finetune
