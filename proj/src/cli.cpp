#include "forcelab/cli.hpp"

#include "forcelab/experiments.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

namespace forcelab::cli {

namespace {

using experiments::OutputOptions;

void add_common(CLI::App* app, OutputOptions& opts) {
  app->add_option("--seed", opts.seed, "base random seed");
  app->add_option("--jobs", opts.jobs, "worker pool size for independent runs")
      ->check(CLI::PositiveNumber);
  app->add_option("--out-dir", opts.out_dir, "directory for result files");
  app->add_option("--format", opts.format, "result table format")
      ->check(CLI::IsMember({"csv", "json"}));
}

void finalize_out_dir(OutputOptions& opts) {
  if (const char* env = std::getenv("FORCE_LAB_OUT"); env && *env) {
    opts.out_dir = env;
  }
  std::filesystem::create_directories(opts.out_dir);
}

}  // namespace

int dispatch(int argc, const char* const* argv) {
  CLI::App app{"force-analysis learning dynamics lab"};
  app.require_subcommand(1);
  app.set_config("--config", "", "key = value config file with [subcommand] sections");
  app.allow_config_extras(CLI::config_extras_mode::ignore_all);

  OutputOptions opts;
  add_common(&app, opts);

  // akg-verify
  experiments::AkgVerifyParams akg_params;
  auto* akg_cmd = app.add_subcommand("akg-verify",
                                     "first-order fidelity, epoch forces, kernel stability");
  akg_cmd->add_option("--triples", akg_params.triples, "random observer/updater triples");
  akg_cmd->add_option("--force-epochs", akg_params.force_epochs, "epochs of the force series");
  akg_cmd->add_option("--force-examples", akg_params.force_examples, "dataset size");

  // toygauss-paths
  experiments::ToygaussPathsParams path_params;
  auto* path_cmd = app.add_subcommand("toygauss-paths", "learning-path recording and analytics");
  path_cmd->add_option("--n", path_params.n, "training examples");
  path_cmd->add_option("--epochs", path_params.epochs, "training epochs");
  path_cmd->add_option("--eta", path_params.eta, "learning rate");
  path_cmd->add_option("--ema-alpha", path_params.ema_alpha, "low-pass coefficient");

  // filter-kd
  experiments::FilterKdParams kd_params;
  std::vector<std::string> kd_modes{"filterkd", "eskd", "oht"};
  auto* kd_cmd = app.add_subcommand("filter-kd", "filtered distillation study");
  kd_cmd->add_option("--alpha", kd_params.alpha, "table smoothing coefficient");
  kd_cmd->add_option("--noise-ratio", kd_params.noise_ratio, "label flip fraction");
  kd_cmd->add_option("--mode", kd_modes, "modes to run")
      ->check(CLI::IsMember({"filterkd", "eskd", "oht"}));
  kd_cmd->add_option("--seeds", kd_params.seeds, "seed replicates");
  kd_cmd->add_option("--n-train", kd_params.n_train, "training examples");

  // squeeze
  experiments::SqueezeParams squeeze_params;
  auto* squeeze_cmd = app.add_subcommand("squeeze", "negative-gradient guarantee trials");
  squeeze_cmd->add_option("--v", squeeze_params.num_classes, "class count");
  squeeze_cmd->add_option("--trials", squeeze_params.trials, "random trials");
  squeeze_cmd->add_option("--eta", squeeze_params.eta_max, "largest step size drawn");

  // two-gram
  experiments::TwoGramParams two_gram_params;
  std::string two_gram_mode = "pos_only";
  auto* two_gram_cmd = app.add_subcommand("two-gram", "token-pair gradient direction study");
  two_gram_cmd->add_option("--mode", two_gram_mode, "training mode")
      ->check(CLI::IsMember({"pos_only", "paired", "sft_both_then_dpo", "sft_pos_then_dpo"}));
  two_gram_cmd->add_option("--steps", two_gram_params.steps, "passes over the corpus");
  two_gram_cmd->add_option("--length", two_gram_params.length, "sequence length");
  two_gram_cmd->add_option("--seeds", two_gram_params.seeds, "seed replicates");

  // nthr
  experiments::NthrParams nthr_params;
  auto* nthr_cmd = app.add_subcommand("nthr", "token influence scores and masking");
  nthr_cmd->add_option("--groups", nthr_params.questions, "synthetic questions");
  nthr_cmd->add_option("--tau", nthr_params.tau_quantile, "masking threshold quantile");
  nthr_cmd->add_option("--beta", nthr_params.beta, "advantage penalty for masked tokens");
  nthr_cmd->add_option("--topk", nthr_params.topk, "overlap list size");
  nthr_cmd->add_option("--seeds", nthr_params.seeds, "seed replicates");

  // feat-adapt
  experiments::FeatAdaptParams feat_params;
  std::vector<int> dims;
  auto* feat_cmd = app.add_subcommand("feat-adapt", "feature adaptation closed-form sweep");
  feat_cmd->add_option("--dims", dims, "input and hidden width, e.g. --dims 3 8")
      ->expected(2);
  feat_cmd->add_option("--grid", feat_params.grid_points, "sweep grid points");
  feat_cmd->add_option("--tau-list", feat_params.tau_list, "head-probe epochs to sweep");
  feat_cmd->add_option("--eta-hp", feat_params.eta_hp, "label-smoothing coefficient");
  feat_cmd->add_option("--instances", feat_params.instances, "random instances");

  // toy256
  simplicity::Toy256Config toy_config;
  std::string toy_encoding = "oht2", toy_loss = "ce", toy_optimizer = "sgd";
  auto* toy_cmd = app.add_subcommand("toy256", "mapping learning-speed study");
  toy_cmd->add_option("--encoding", toy_encoding, "input encoding")
      ->check(CLI::IsMember({"oht2", "oht3"}));
  toy_cmd->add_option("--loss", toy_loss, "training loss")->check(CLI::IsMember({"ce", "mse"}));
  toy_cmd->add_option("--optimizer", toy_optimizer, "optimizer")
      ->check(CLI::IsMember({"sgd", "adam"}));
  toy_cmd->add_option("--seeds", toy_config.seeds, "seed replicates");
  toy_cmd->add_option("--epoch-cap", toy_config.epoch_cap, "training epoch cap");
  toy_cmd->add_flag("--curves", toy_config.keep_curves, "also emit the loss-curve plot");

  // Shared flags stay valid after the subcommand name.
  for (auto* sub : app.get_subcommands([](const CLI::App*) { return true; })) {
    sub->fallthrough();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);  // prints usage or help text
    return code == 0 ? 0 : 1;
  }

  try {
    finalize_out_dir(opts);
    if (*akg_cmd) {
      const auto result = experiments::run_akg_verify(opts, akg_params);
      double lo = result.slopes.front(), hi = lo;
      for (double s : result.slopes) {
        lo = std::min(lo, s);
        hi = std::max(hi, s);
      }
      std::cout << "first-order slope range [" << lo << ", " << hi << "]\n"
                << "kernel-ranking stability (median after plateau) "
                << result.median_stability_after_plateau << "\n";
    } else if (*path_cmd) {
      const auto result = experiments::run_toygauss_paths(opts, path_params);
      std::cout << "hard dipped " << result.hard.dipped << "/" << result.hard.total
                << ", easy without dip " << result.easy.no_dip << "/" << result.easy.total << "\n";
    } else if (*kd_cmd) {
      kd_params.modes.clear();
      for (const auto& m : kd_modes) {
        kd_params.modes.push_back(m == "filterkd" ? filterkd::Mode::kFilterKd
                                  : m == "eskd"   ? filterkd::Mode::kEskd
                                                  : filterkd::Mode::kOneHot);
      }
      const auto result = experiments::run_filter_kd(opts, kd_params);
      for (const auto mode :
           {filterkd::Mode::kFilterKd, filterkd::Mode::kEskd, filterkd::Mode::kOneHot}) {
        if (std::find(kd_params.modes.begin(), kd_params.modes.end(), mode) ==
            kd_params.modes.end()) {
          continue;
        }
        const char* name = mode == filterkd::Mode::kFilterKd ? "filterkd"
                           : mode == filterkd::Mode::kEskd   ? "eskd"
                                                             : "oht";
        std::cout << name << " mean test accuracy " << result.mean_acc(mode) << "\n";
      }
    } else if (*squeeze_cmd) {
      const auto result = experiments::run_squeeze(opts, squeeze_params);
      std::cout << "target dropped " << result.target_dropped << "/" << result.trials
                << ", argmax rose " << result.argmax_rose << "/" << result.trials << "\n";
    } else if (*two_gram_cmd) {
      two_gram_params.mode = finetune::two_gram_mode_from_name(two_gram_mode);
      const auto rows = experiments::run_two_gram_study(opts, two_gram_params);
      for (const auto& r : rows) {
        std::cout << "seed " << r.seed << ": entropy " << r.entropy_before << " -> "
                  << r.entropy_after << ", max-prob " << r.max_prob_before << " -> "
                  << r.max_prob_after << "\n";
      }
    } else if (*nthr_cmd) {
      const auto result = experiments::run_nthr(opts, nthr_params);
      std::cout << "top-10 overlap " << result.overlap_top10 << " (random "
                << result.baseline_top10 << "), top-15 overlap " << result.overlap_top15
                << " (random " << result.baseline_top15 << ")\n"
                << "masking beats plain updates on " << result.frac_nthr_beats_grpo
                << " of questions\n";
    } else if (*feat_cmd) {
      if (dims.size() == 2) {
        feat_params.input_dim = dims[0];
        feat_params.hidden_dim = dims[1];
      }
      const auto result = experiments::run_feat_adapt(opts, feat_params);
      int at_half = 0;
      for (const auto& inst : result.instances) {
        if (std::abs(inst.argmax_s - 0.5) <= 0.05) ++at_half;
      }
      std::cout << "tr(B^t B^0) peak at s=0.5 on " << at_half << "/" << result.instances.size()
                << " instances\n";
    } else if (*toy_cmd) {
      toy_config.encoding = toy_encoding == "oht2" ? simplicity::Toy256Encoding::kOht2
                                                   : simplicity::Toy256Encoding::kOht3;
      toy_config.loss =
          toy_loss == "ce" ? simplicity::Toy256Loss::kCe : simplicity::Toy256Loss::kMse;
      toy_config.optimizer = toy_optimizer == "sgd" ? simplicity::Toy256Optimizer::kSgd
                                                    : simplicity::Toy256Optimizer::kAdam;
      const auto result = experiments::run_toy256_study(opts, toy_config);
      std::cout << "records " << result.records.size() << ", coding-length correlation "
                << result.cl_vs_time.rho << " (p " << result.cl_vs_time.p_value
                << "), topsim correlation " << result.topsim_vs_time.rho << " (p "
                << result.topsim_vs_time.p_value << ")\n";
    }
  } catch (const DivergenceError& e) {
    std::cerr << "numeric divergence: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace forcelab::cli
