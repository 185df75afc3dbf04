// End-to-end acceptance suite: every experiment-level claim runs here at its
// committed threshold, one verdict line per criterion.

#include "forcelab/experiments.hpp"

#include <chrono>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

using namespace forcelab;

namespace {

struct Criterion {
  std::string name;
  double budget_seconds = 0.0;
  std::function<bool(std::string&)> run;
};

experiments::OutputOptions quiet_options(std::uint64_t seed) {
  experiments::OutputOptions opts;
  opts.seed = seed;
  opts.write_files = false;
  return opts;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

bool criterion_first_order(std::string& detail) {
  experiments::AkgVerifyParams params;
  params.triples = 50;
  params.force_epochs = 0;  // fidelity part only
  const auto result = experiments::run_akg_verify(quiet_options(101), params);
  double lo = result.slopes.front(), hi = lo;
  for (double s : result.slopes) {
    lo = std::min(lo, s);
    hi = std::max(hi, s);
  }
  detail = "log-log residual slopes in [" + fmt(lo) + ", " + fmt(hi) + "] over 50 triples";
  return lo >= 1.8 && hi <= 2.2;
}

bool criterion_squeeze(std::string& detail) {
  experiments::SqueezeParams params;
  params.trials = 1000;
  const auto result = experiments::run_squeeze(quiet_options(102), params);
  detail = "target dropped " + std::to_string(result.target_dropped) + "/1000, leader rose " +
           std::to_string(result.argmax_rose) + "/1000";
  return result.target_dropped == 1000 && result.argmax_rose == 1000;
}

bool criterion_two_gram(std::string& detail) {
  experiments::TwoGramParams params;
  params.seeds = 5;
  params.steps = 12;
  params.length = 768;
  params.mode = finetune::TwoGramMode::kPosOnly;
  const auto flat = experiments::run_two_gram_study(quiet_options(103), params);
  params.mode = finetune::TwoGramMode::kPaired;
  const auto peaky = experiments::run_two_gram_study(quiet_options(103), params);
  int entropy_up = 0, maxp_up = 0;
  for (const auto& r : flat) entropy_up += r.entropy_after > r.entropy_before;
  for (const auto& r : peaky) maxp_up += r.max_prob_after > r.max_prob_before;
  detail = "descent-only entropy rose in " + std::to_string(entropy_up) +
           "/5 seeds, paired max-prob rose in " + std::to_string(maxp_up) + "/5";
  return entropy_up == 5 && maxp_up == 5;
}

bool criterion_zigzag(std::string& detail) {
  experiments::ToygaussPathsParams params;
  params.n = 2000;
  params.epochs = 120;
  const auto result = experiments::run_toygauss_paths(quiet_options(104), params);
  const double hard_frac =
      result.hard.total > 0 ? static_cast<double>(result.hard.dipped) / result.hard.total : 0.0;
  const double easy_frac =
      result.easy.total > 0 ? static_cast<double>(result.easy.no_dip) / result.easy.total : 0.0;
  detail = std::to_string(result.hard.total) + " hard samples, dip on " + fmt(100 * hard_frac) +
           "%, easy without dip " + fmt(100 * easy_frac) + "%";
  return result.hard.total >= 20 && hard_frac >= 0.8 && easy_frac >= 0.8;
}

bool criterion_filter_kd(std::string& detail) {
  using filterkd::Mode;
  bool pass = true;
  detail.clear();
  for (double noise : {0.1, 0.2}) {
    experiments::FilterKdParams params;
    params.noise_ratio = noise;
    params.seeds = 5;
    const auto result =
        experiments::run_filter_kd(quiet_options(noise < 0.15 ? 105 : 106), params);
    const double kd = result.mean_acc(Mode::kFilterKd);
    const double eskd = result.mean_acc(Mode::kEskd);
    const double oht = result.mean_acc(Mode::kOneHot);
    const bool ordered = kd >= eskd && eskd >= oht;
    const bool margin = noise < 0.15 || (kd - oht >= 0.02);
    const bool supervision = result.mean_supervision(Mode::kFilterKd) <
                             result.mean_supervision(Mode::kOneHot);
    pass = pass && ordered && margin && supervision;
    detail += "noise " + fmt(noise) + ": acc " + fmt(kd) + "/" + fmt(eskd) + "/" + fmt(oht) + " ";
  }
  return pass;
}

bool criterion_risk_bounds(std::string& detail) {
  Rng rng(107);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> loss_draw(0.0, 2.0);
  int dominated = 0;
  for (int inst = 0; inst < 100; ++inst) {
    const int s = 60, k = 3;
    Matrix q_tar(s, k), q_star(s, k), loss(s, k);
    for (int i = 0; i < s; ++i) {
      const Vector z = Vector::NullaryExpr(k, [&]() { return normal(rng); });
      q_star.row(i) = softmax(z).values().transpose();
      q_tar.row(i) =
          softmax(z + 0.5 * Vector::NullaryExpr(k, [&]() { return normal(rng); }))
              .values()
              .transpose();
      for (int j = 0; j < k; ++j) loss(i, j) = loss_draw(rng);
    }
    const auto terms = filterkd::risk_bound_terms(q_tar, q_star, loss, 2.0, 50, 10000,
                                                  derive_seed(107, static_cast<std::uint64_t>(inst)));
    bool ok = true;
    for (const auto& xi : terms.xi) {
      if (xi && terms.mc_lhs > terms.variance_term + *xi) ok = false;
    }
    dominated += ok ? 1 : 0;
  }
  detail = "all defined bounds dominate the Monte-Carlo estimate on " +
           std::to_string(dominated) + "/100 instances";
  return dominated >= 99;
}

bool criterion_feature_adaptation(std::string& detail) {
  experiments::FeatAdaptParams params;
  params.instances = 20;
  const auto result = experiments::run_feat_adapt(quiet_options(108), params);
  int at_half = 0, monotone = 0;
  for (const auto& inst : result.instances) {
    at_half += std::abs(inst.argmax_s - 0.5) <= 0.05;
    monotone += inst.d_euc_monotone;
  }

  // Closed form against long-run descent on the linearized model.
  int matched = 0;
  for (int trial = 0; trial < 3; ++trial) {
    Rng rng(200 + static_cast<std::uint64_t>(trial));
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto opm = featadapt::random_opm(8, 3, 1, 300 + static_cast<std::uint64_t>(trial));
    const Matrix x = Matrix::NullaryExpr(5, 3, [&]() { return normal(rng); });
    const Vector y = Vector::NullaryExpr(5, [&]() { return normal(rng); });
    const Vector w0 = opm.head.row(0).transpose();
    const Vector b0 = opm.flat_backbone();
    const Vector q0 = 0.4 * y;
    const Vector closed = featadapt::ntk_converged(b0, x, y, q0, w0, 8);

    Matrix jacobian(5, 8 * 3 + 8);
    for (Eigen::Index i = 0; i < 5; ++i) {
      for (Eigen::Index c = 0; c < 3; ++c) {
        jacobian.row(i).segment(c * 8, 8) = x(i, c) * w0.transpose();
      }
      jacobian.row(i).tail(8) = (opm.backbone * x.row(i).transpose()).transpose();
    }
    Eigen::JacobiSVD<Matrix> svd(jacobian);
    const double lr = 0.5 / std::pow(svd.singularValues()(0), 2);
    Vector delta = Vector::Zero(jacobian.cols());
    for (int step = 0; step < 200000; ++step) {
      delta -= lr * (jacobian.transpose() * (q0 + jacobian * delta - y));
    }
    if ((closed - (b0 + delta.head(b0.size()))).cwiseAbs().maxCoeff() < 1e-6) ++matched;
  }

  detail = "peak at 1/2 on " + std::to_string(at_half) + "/20, drift monotone on " +
           std::to_string(monotone) + "/20, descent check " + std::to_string(matched) + "/3";
  return at_half == 20 && monotone == 20 && matched == 3;
}

// The ranking and masking criteria share one synthetic-rollout study; the
// first caller pays for it.
const experiments::NthrResult& nthr_shared() {
  static const experiments::NthrResult result = [] {
    experiments::NthrParams params;
    params.questions = 100;
    params.seeds = 3;
    params.beta = 0.0;
    params.tau_quantile = 0.5;
    return experiments::run_nthr(quiet_options(109), params);
  }();
  return result;
}

bool criterion_nthr_ranking(std::string& detail) {
  const auto& result = nthr_shared();
  detail = "top-10 overlap " + fmt(result.overlap_top10) + " vs baseline " +
           fmt(result.baseline_top10) + ", top-15 " + fmt(result.overlap_top15) + " vs " +
           fmt(result.baseline_top15);
  return result.overlap_top10 > 2.0 * result.baseline_top10 &&
         result.overlap_top15 > 2.0 * result.baseline_top15;
}

bool criterion_nthr_masking(std::string& detail) {
  const auto& result = nthr_shared();
  detail = "masking beats plain updates on " + fmt(100 * result.frac_nthr_beats_grpo) +
           "% and blind masking on " + fmt(100 * result.frac_nthr_beats_random) + "%";
  return result.frac_nthr_beats_grpo >= 0.7 && result.frac_nthr_beats_random >= 0.7;
}

bool criterion_toy256(std::string& detail) {
  simplicity::Toy256Config config;  // committed defaults
  const auto result = experiments::run_toy256_study(quiet_options(0), config);
  detail = "coding-length rho " + fmt(result.cl_vs_time.rho) + " (p " +
           fmt(result.cl_vs_time.p_value) + "), topsim rho " + fmt(result.topsim_vs_time.rho) +
           " (p " + fmt(result.topsim_vs_time.p_value) + ")";
  return result.cl_vs_time.rho >= 0.4 && result.cl_vs_time.p_value < 1e-6 &&
         result.topsim_vs_time.rho <= -0.4 && result.topsim_vs_time.p_value < 1e-6 &&
         result.compositional_faster_every_seed && result.degenerate_fastest_every_seed &&
         result.diverged_runs == 0;
}

bool criterion_counting(std::string& detail) {
  const auto mappings = datasets::enumerate_mappings();
  int counts[4] = {0, 0, 0, 0};
  for (const auto& m : mappings) ++counts[static_cast<int>(m.cls)];
  const auto bounds = simplicity::kc_bounds(2, 2);
  bool gamma_ok = true;
  for (int m = 2; m <= 6; ++m) {
    for (int v = 2; v <= 6; ++v) gamma_ok = gamma_ok && simplicity::kc_bounds(m, v).gamma > 1.0;
  }
  detail = "classes " + std::to_string(counts[0]) + "/" + std::to_string(counts[1]) + "/" +
           std::to_string(counts[2]) + "/" + std::to_string(counts[3]) + ", bounds (" +
           fmt(bounds.bijection_bound) + ", " + fmt(bounds.comp_bound) + ", " + fmt(bounds.gamma) +
           ")";
  return mappings.size() == 256 && counts[0] == 8 && counts[1] == 16 && counts[2] == 4 &&
         counts[3] == 228 && bounds.bijection_bound == 8.0 && bounds.comp_bound == 4.0 &&
         bounds.gamma == 2.0 && gamma_ok;
}

bool criterion_kernel_stability(std::string& detail) {
  experiments::AkgVerifyParams params;
  params.triples = 0;
  params.force_epochs = 60;
  params.force_examples = 60;
  params.probe_per_class = 1;
  const auto result = experiments::run_akg_verify(quiet_options(110), params);
  detail = "median adjacent-epoch rank correlation after the plateau (epoch " +
           std::to_string(result.plateau_epoch) + ") is " +
           fmt(result.median_stability_after_plateau);
  return result.median_stability_after_plateau >= 0.7;
}

}  // namespace

int main() {
  std::vector<Criterion> criteria = {
      {"1. first-order fidelity of the one-step prediction", 60,
       criterion_first_order},
      {"2. negative-gradient squeeze guarantees", 30, criterion_squeeze},
      {"3. token-pair corpus direction claims", 120, criterion_two_gram},
      {"4. zig-zag learning paths by difficulty", 300, criterion_zigzag},
      {"5. filtered distillation beats the baselines", 600, criterion_filter_kd},
      {"6. risk-estimate variance bounds", 120, criterion_risk_bounds},
      {"7. closed-form feature adaptation sweep", 60, criterion_feature_adaptation},
      {"8. influence-score ranking agreement", 300, criterion_nthr_ranking},
      {"9. influence-guided masking benefit", 300, criterion_nthr_masking},
      {"10. mapping simplicity and learning speed", 1800, criterion_toy256},
      {"11. counting exactness of mappings and bounds", 10, criterion_counting},
      {"12. kernel ranking stability after the plateau", 300, criterion_kernel_stability},
  };

  int failures = 0;
  for (auto& criterion : criteria) {
    const auto start = std::chrono::steady_clock::now();
    std::string detail;
    bool ok = false;
    try {
      ok = criterion.run(detail);
    } catch (const std::exception& e) {
      detail = std::string("exception: ") + e.what();
    }
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (elapsed > criterion.budget_seconds) {
      ok = false;
      detail += " [over budget " + fmt(criterion.budget_seconds) + "s]";
    }
    std::printf("[%s] %s — %s (%.1fs)\n", ok ? "PASS" : "FAIL", criterion.name.c_str(),
                detail.c_str(), elapsed);
    std::fflush(stdout);
    failures += ok ? 0 : 1;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures,
              criteria.size());
  return failures == 0 ? 0 : 1;
}
