#pragma once

#include "forcelab/akg.hpp"
#include "forcelab/datasets.hpp"
#include "forcelab/feature_adapt.hpp"
#include "forcelab/filterkd.hpp"
#include "forcelab/finetune.hpp"
#include "forcelab/report.hpp"
#include "forcelab/simplicity.hpp"
#include "forcelab/training.hpp"

#include <filesystem>

namespace forcelab::experiments {

struct OutputOptions {
  std::filesystem::path out_dir = "results";
  std::string format = "csv";  // csv | json
  std::uint64_t seed = 0;
  int jobs = 1;
  bool write_files = true;
};

void write_table(const OutputOptions& opts, const std::string& stem,
                 const report::CsvTable& table);

/// Toy-Gaussian dataset reshaped for the trainer, with the exact posterior
/// rows kept alongside.
struct GaussianBundle {
  training::TrainData data;
  Matrix q_star;  // n x V
  std::vector<double> difficulty;
  std::vector<Vector> class_means;
  double sigma = 0.0;
};

GaussianBundle make_gaussian_bundle(const datasets::ToyGaussianSpec& spec);

MlpModel default_gaussian_mlp(int input_dim, int num_classes, std::uint64_t seed);

/// Dataset export: x columns, the label, the posterior columns, and the
/// difficulty per row.
report::CsvTable dataset_table(const GaussianBundle& bundle);

/// Compact description of the 256 assignments.
report::Json mappings_json();

// ---------------------------------------------------------------------------

struct AkgVerifyParams {
  int triples = 50;
  std::vector<double> etas = {1e-2, 3.16e-3, 1e-3, 3.16e-4, 1e-4};
  int force_epochs = 60;      // training horizon for the force/stability series
  int force_examples = 60;    // dataset size of the epoch-force study
  int probe_per_class = 2;    // probe exemplars per class for kernel stability
};

struct AkgVerifyResult {
  std::vector<double> slopes;             // per-triple log-log residual slope
  std::vector<double> stability_rho;      // adjacent-epoch rank correlation
  double median_stability_after_plateau = 0.0;
  int plateau_epoch = 0;
};

AkgVerifyResult run_akg_verify(const OutputOptions& opts, const AkgVerifyParams& params);

// ---------------------------------------------------------------------------

struct ToygaussPathsParams {
  datasets::ToyGaussianSpec gaussian{};  // defaults with n overridden below
  int n = 2000;
  int epochs = 120;
  double eta = 0.05;
  int batch_size = 32;
  double ema_alpha = 0.05;
  int max_tracked = 400;  // cap on tracked examples (balanced over groups)
};

struct ZigzagGroupStats {
  int total = 0;
  int dipped = 0;      // min < initial and min < final
  int no_dip = 0;      // final <= min + 0.05
};

struct ToygaussPathsResult {
  ZigzagGroupStats easy;
  ZigzagGroupStats medium;
  ZigzagGroupStats hard;
};

ToygaussPathsResult run_toygauss_paths(const OutputOptions& opts,
                                       const ToygaussPathsParams& params);

// ---------------------------------------------------------------------------

struct FilterKdParams {
  double alpha = 0.05;
  double noise_ratio = 0.2;
  std::vector<filterkd::Mode> modes = {filterkd::Mode::kFilterKd, filterkd::Mode::kEskd,
                                       filterkd::Mode::kOneHot};
  int seeds = 5;
  int n_train = 2000;
  int n_test = 2000;
  // Tight clusters keep the posterior sharp, so flipped labels are the only
  // noise source and the mid-training prediction cloud sits near the
  // posterior for a long stretch.
  double gaussian_sigma = 1.0;
  // Aggressive small-batch steps keep the teacher's per-example predictions
  // jittering around the posterior instead of settling onto the flipped
  // labels; the low-pass table is what extracts the stable component, and
  // the burn-in keeps the stop past its ~1/alpha warmup horizon.
  int teacher_epochs = 200;
  double teacher_eta = 0.35;
  int teacher_batch_size = 4;
  int patience = 30;
  int teacher_min_epochs = 80;
  int student_epochs = 150;
  double student_eta = 0.05;
  int student_batch_size = 32;
  double val_fraction = 0.1;
};

struct FilterKdRow {
  std::string mode;
  std::uint64_t seed = 0;
  int stop_epoch = 0;
  double test_acc = 0.0;
  double ece = 0.0;
  double supervision_quality = 0.0;
};

struct FilterKdResult {
  std::vector<FilterKdRow> rows;
  double mean_acc(filterkd::Mode mode) const;
  double mean_supervision(filterkd::Mode mode) const;
};

FilterKdResult run_filter_kd(const OutputOptions& opts, const FilterKdParams& params);

// ---------------------------------------------------------------------------

struct SqueezeParams {
  int num_classes = 8;
  int feature_dim = 6;
  int trials = 1000;
  double eta_max = 0.1;
};

struct SqueezeResultSummary {
  int trials = 0;
  int target_dropped = 0;
  int argmax_rose = 0;
};

SqueezeResultSummary run_squeeze(const OutputOptions& opts, const SqueezeParams& params);

// ---------------------------------------------------------------------------

struct TwoGramParams {
  finetune::TwoGramMode mode = finetune::TwoGramMode::kPosOnly;
  int steps = 20;
  int length = 1024;
  int seeds = 5;
  finetune::TwoGramRunConfig run{};
};

struct TwoGramRow {
  std::uint64_t seed = 0;
  double entropy_before = 0.0;
  double entropy_after = 0.0;
  double max_prob_before = 0.0;
  double max_prob_after = 0.0;
};

std::vector<TwoGramRow> run_two_gram_study(const OutputOptions& opts, const TwoGramParams& params);

// ---------------------------------------------------------------------------

struct NthrParams {
  int questions = 100;
  int rollouts = 8;
  int response_length = 8;
  int vocab = 16;
  int feature_dim = 32;
  double readout_scale = 0.0;  // cold start keeps sequence baselines equal
  double tau_quantile = 0.5;
  double beta = 0.0;
  int topk = 10;
  double grpo_eta = 0.3;
  int seeds = 3;
  int baseline_trials = 10000;
};

struct NthrQuestionRow {
  int question = 0;
  std::uint64_t seed = 0;
  double mean_neg_alpha = 0.0;
  double gap_grpo = 0.0;
  double gap_pos_only = 0.0;
  double gap_nthr = 0.0;
  double gap_random_mask = 0.0;
  int masked_tokens = 0;
};

struct NthrResult {
  std::vector<NthrQuestionRow> rows;
  double overlap_top10 = 0.0;       // score ranking vs. smallest-gap ranking
  double overlap_top15 = 0.0;
  double baseline_top10 = 0.0;      // Monte-Carlo random-ranking means
  double baseline_top15 = 0.0;
  double frac_nthr_beats_grpo = 0.0;
  double frac_nthr_beats_random = 0.0;
};

NthrResult run_nthr(const OutputOptions& opts, const NthrParams& params);

// ---------------------------------------------------------------------------

struct FeatAdaptParams {
  int input_dim = 3;
  int hidden_dim = 8;
  int samples = 5;
  int grid_points = 21;
  int instances = 20;
  std::vector<int> tau_list = {0, 4, 16, 64, 256};
  double eta_hp = 1.0;
};

struct FeatAdaptInstanceSummary {
  double argmax_s = 0.0;
  bool d_euc_monotone = false;
};

struct FeatAdaptResult {
  std::vector<FeatAdaptInstanceSummary> instances;
  std::vector<double> aie_by_tau;  // from the head-probe sweep on instance 0
};

FeatAdaptResult run_feat_adapt(const OutputOptions& opts, const FeatAdaptParams& params);

// ---------------------------------------------------------------------------

simplicity::Toy256Result run_toy256_study(const OutputOptions& opts,
                                          simplicity::Toy256Config config);

}  // namespace forcelab::experiments
