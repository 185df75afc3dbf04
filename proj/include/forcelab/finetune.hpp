#pragma once

#include "forcelab/datasets.hpp"
#include "forcelab/mathcore.hpp"

#include <optional>

namespace forcelab::finetune {

/// Linear readout over fixed per-context feature columns; the readout and,
/// optionally, the feature columns are the trainable parts.
struct UfmModel {
  Matrix readout;   // V x d
  Matrix features;  // d x n_contexts, one column per context token
  bool train_readout = true;
  bool train_features = false;

  int vocab() const { return static_cast<int>(readout.rows()); }
  Vector logits(int context) const { return readout * features.col(context); }
  Vector probs(int context) const { return softmax(logits(context)).values(); }
  /// Row r = predicted distribution conditioned on context r.
  Matrix context_rows() const;
};

UfmModel make_ufm(const Matrix& features, std::uint64_t seed, double readout_scale = 1.0);

/// Per-position prediction gaps: column l = pi(.|context_l) - e_{y_l}.
Matrix g_sft(const Matrix& pi_columns, const std::vector<int>& tokens);

// ---------------------------------------------------------------------------
// Preference-pair gating.

struct DpoState {
  double beta = 0.1;
  double ref_logprob_pos = 0.0;  // sequence log-likelihood under the reference
  double ref_logprob_neg = 0.0;
  double cur_logprob_pos = 0.0;  // and under the current policy
  double cur_logprob_neg = 0.0;
  Matrix pi_pos;                 // V x L per-position predictions on the chosen sequence
  Matrix pi_neg;                 //   and on the rejected one
  std::vector<int> y_pos;
  std::vector<int> y_neg;
};

struct DpoGate {
  double margin = 0.0;  // beta * (log-ratio gap between chosen and rejected)
  double a = 0.5;       // sigmoid(margin); scales both gap terms by beta*(1-a)
  Matrix g_plus;        // V x L
  Matrix g_minus;       // V x L
};

DpoGate dpo_gate(const DpoState& state);

// ---------------------------------------------------------------------------
// Negative-gradient probability flow on a single context.

struct SqueezeResult {
  Vector p_before;
  Vector p_after;
  Vector alpha_ratios;      // p_after (./) p_before
  int argmax_excluded = 0;  // pre-update argmax over classes other than y_neg
  bool target_dropped = false;
  bool argmax_rose = false;
};

/// One gradient-ascent step on the cross-entropy loss of y_neg (readout only).
SqueezeResult squeeze_step(const UfmModel& model, int y_neg, double eta, int context = 0);

struct PairedStepResult {
  Vector p_before;
  Vector p_after;
  Matrix readout_delta;  // applied change of the readout
};

/// Combined descent on y_pos and ascent on y_neg under one shared context.
PairedStepResult paired_step(const UfmModel& model, int y_pos, int y_neg, double eta_pos,
                             double eta_neg, int context = 0);

// ---------------------------------------------------------------------------
// Token-pair corpus runs.

enum class TwoGramMode { kPosOnly, kPaired, kSftBothThenDpo, kSftPosThenDpo };
TwoGramMode two_gram_mode_from_name(const std::string& name);

struct TwoGramRunConfig {
  int steps = 20;        // passes over the corpus per phase
  double eta = 0.05;
  double beta = 1.0;     // preference-gate scale in the *_then_dpo modes
  double dpo_eta = 0.5;  // learning rate of the preference phase
  std::uint64_t model_seed = 1;
};

struct TwoGramSummary {
  Matrix rows_before;  // context-conditional distributions at initialization
  Matrix rows_after;
  double mean_entropy_before = 0.0;
  double mean_entropy_after = 0.0;
  double mean_max_prob_before = 0.0;
  double mean_max_prob_after = 0.0;
};

TwoGramSummary run_two_gram(const datasets::TwoGramSpec& spec, TwoGramMode mode,
                            const TwoGramRunConfig& config);

// ---------------------------------------------------------------------------
// Group-relative updates.

/// Standardized advantages with the population standard deviation; all-equal
/// rewards yield all zeros.
std::vector<double> grpo_advantages(const std::vector<int>& rewards);

struct RatioClip {
  double gamma = 1.0;
  double clipped = 1.0;
};

RatioClip grpo_ratio_and_clip(double pi_theta, double pi_ref, double eps_l, double eps_h);

struct RolloutGroup {
  int question_id = 0;
  std::vector<std::vector<int>> responses;  // token sequences
  std::vector<int> contexts_start;          // context token of each response's first position
  std::vector<int> rewards;                 // binary
  std::vector<double> advantages;
  std::vector<int> pos_index;               // responses with reward 1
  std::vector<int> neg_index;

  int context_of(int response, int position) const {
    return position == 0 ? contexts_start[static_cast<std::size_t>(response)]
                         : responses[static_cast<std::size_t>(response)][static_cast<std::size_t>(position - 1)];
  }
};

/// One observed or updating token: its label, the model's prediction in that
/// context, and the context feature vector.
struct TokenState {
  int token = 0;
  Vector pi;  // V
  Vector h;   // d
};

/// Feature-space influence score between two tokens:
/// (e_o - pi_o)^T (e_u - pi_u) * h_u^T h_o.
double nthr_alpha(const TokenState& observer, const TokenState& updater);

/// The un-approximated gradient inner product, which adds the readout-gram
/// term (e_o - pi_o)^T W W^T (e_u - pi_u) on top of nthr_alpha.
double token_inner_full(const TokenState& observer, const TokenState& updater,
                        const Matrix& readout);

struct NthrScores {
  // alpha_hat[n][l]: influence of token (n,l) averaged over every token of
  // every positive response.
  std::vector<std::vector<double>> alpha_hat;
  double mean_negative_alpha = 0.0;  // E over negative-response tokens
};

NthrScores nthr_scores(const UfmModel& model, const RolloutGroup& group);

/// Per-token advantages after masking: tokens of negative responses whose
/// averaged influence exceeds tau are rescaled by beta; others keep A_n.
std::vector<std::vector<double>> nthr_mask(const NthrScores& scores, const RolloutGroup& group,
                                           double tau, double beta);

std::vector<std::vector<double>> plain_token_advantages(const RolloutGroup& group);

struct GrpoStepConfig {
  double eta = 0.5;
  double eps_low = 0.8;
  double eps_high = 1.2;
};

/// One policy update on the group under the clipped ratio objective, with
/// per-token advantages (use plain_token_advantages for the unmasked form).
UfmModel grpo_step(const UfmModel& model, const UfmModel& reference, const RolloutGroup& group,
                   const std::vector<std::vector<double>>& token_advantages,
                   const GrpoStepConfig& config);

double sequence_log_prob(const UfmModel& model, const RolloutGroup& group, int response);

/// Mean confidence change on the positive responses; empty when the group
/// has no positive response.
std::optional<double> measure_gap(const UfmModel& model_before, const UfmModel& model_after,
                                  const RolloutGroup& group);

/// |top-K(score_a) ∩ top-K(score_b)| / K with top-K by descending score.
double topk_overlap(const Vector& score_a, const Vector& score_b, int k);

}  // namespace forcelab::finetune
