#include "forcelab/experiments.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <sstream>

namespace forcelab::experiments {

namespace {

// Least-squares slope of log(y) against log(x).
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const auto n = static_cast<double>(x.size());
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double lx = std::log(x[i]);
    const double ly = std::log(std::max(y[i], 1e-300));
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

report::Json correlation_json(const Correlation& c) {
  return report::Json{{"rho", c.rho}, {"p_value", c.p_value}};
}

}  // namespace

void write_table(const OutputOptions& opts, const std::string& stem,
                 const report::CsvTable& table) {
  if (!opts.write_files) return;
  if (opts.format == "json") {
    // Same schema, one object per row.
    report::Json rows = report::Json::array();
    std::istringstream lines(table.to_string());
    std::string line;
    std::getline(lines, line);
    std::vector<std::string> header;
    std::istringstream hs(line);
    std::string cell;
    while (std::getline(hs, cell, ',')) header.push_back(cell);
    while (std::getline(lines, line)) {
      report::Json row;
      std::istringstream ls(line);
      for (const auto& key : header) {
        std::getline(ls, cell, ',');
        row[key] = cell;
      }
      rows.push_back(row);
    }
    report::write_json(opts.out_dir / (stem + ".json"), rows);
  } else {
    table.write(opts.out_dir / (stem + ".csv"));
  }
}

GaussianBundle make_gaussian_bundle(const datasets::ToyGaussianSpec& spec) {
  const auto generated = datasets::gen_toy_gaussian(spec);
  GaussianBundle bundle;
  bundle.class_means = generated.class_means;
  bundle.sigma = generated.sigma;
  const auto n = static_cast<Eigen::Index>(generated.examples.size());
  bundle.data.x.resize(n, spec.dim);
  bundle.q_star.resize(n, spec.num_classes);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& ex = generated.examples[static_cast<std::size_t>(i)];
    bundle.data.x.row(i) = ex.x.transpose();
    bundle.q_star.row(i) = ex.q_star.transpose();
    bundle.data.labels.push_back(ex.y);
    bundle.difficulty.push_back(ex.difficulty);
  }
  return bundle;
}

MlpModel default_gaussian_mlp(int input_dim, int num_classes, std::uint64_t seed) {
  Rng rng(seed);
  return MlpModel::random({input_dim, 32, 32, 32, num_classes}, Activation::kTanh, rng);
}

report::CsvTable dataset_table(const GaussianBundle& bundle) {
  const int dim = static_cast<int>(bundle.data.x.cols());
  const int v = static_cast<int>(bundle.q_star.cols());
  std::vector<std::string> header;
  for (int d = 1; d <= dim; ++d) header.push_back("x_" + std::to_string(d));
  header.emplace_back("y");
  for (int c = 1; c <= v; ++c) header.push_back("q_" + std::to_string(c));
  header.emplace_back("difficulty");
  report::CsvTable table(std::move(header));
  for (Eigen::Index i = 0; i < bundle.data.size(); ++i) {
    std::vector<report::Cell> row;
    for (int d = 0; d < dim; ++d) row.emplace_back(bundle.data.x(i, d));
    row.emplace_back(bundle.data.labels[static_cast<std::size_t>(i)]);
    for (int c = 0; c < v; ++c) row.emplace_back(bundle.q_star(i, c));
    row.emplace_back(bundle.difficulty[static_cast<std::size_t>(i)]);
    table.add_row(std::move(row));
  }
  return table;
}

report::Json mappings_json() {
  report::Json out = report::Json::array();
  for (const auto& m : datasets::enumerate_mappings()) {
    out.push_back({{"id", m.id},
                   {"codes", m.codes},
                   {"class", datasets::mapping_class_name(m.cls)}});
  }
  return out;
}

// ---------------------------------------------------------------------------

AkgVerifyResult run_akg_verify(const OutputOptions& opts, const AkgVerifyParams& params) {
  AkgVerifyResult result;
  if (opts.write_files) {
    report::write_manifest(opts.out_dir, "akg-verify",
                           {{"triples", params.triples},
                            {"force_epochs", params.force_epochs},
                            {"force_examples", params.force_examples}},
                           opts.seed);
  }

  // First-order fidelity over random observer/updater pairs.
  datasets::ToyGaussianSpec spec;
  spec.n = std::max(params.triples * 2, params.force_examples);
  spec.seed = derive_seed(opts.seed, 1);
  const GaussianBundle bundle = make_gaussian_bundle(spec);

  report::CsvTable residuals({"triple", "eta", "residual"});
  Rng rng(derive_seed(opts.seed, 2));
  std::uniform_int_distribution<int> pick(0, static_cast<int>(bundle.data.size()) - 1);
  for (int t = 0; t < params.triples; ++t) {
    const MlpModel model =
        MlpModel::random({spec.dim, 16, 16, spec.num_classes}, Activation::kTanh, rng);
    const int io = pick(rng);
    const int iu = pick(rng);
    const Vector x_o = bundle.data.x.row(io).transpose();
    const Vector x_u = bundle.data.x.row(iu).transpose();
    const int y_u = bundle.data.labels[static_cast<std::size_t>(iu)];
    std::vector<double> res;
    for (double eta : params.etas) {
      res.push_back(akg::verify_first_order(model, x_o, x_u, y_u, eta).residual);
      residuals.add_row({t, eta, res.back()});
    }
    result.slopes.push_back(loglog_slope(params.etas, res));
  }
  write_table(opts, "first_order_residuals", residuals);

  if (params.force_epochs <= 0) return result;

  // Epoch-force and kernel-stability series along one training run.
  datasets::ToyGaussianSpec force_spec;
  force_spec.n = params.force_examples;
  force_spec.seed = derive_seed(opts.seed, 3);
  const GaussianBundle force = make_gaussian_bundle(force_spec);
  MlpModel model = default_gaussian_mlp(force_spec.dim, force_spec.num_classes,
                                        derive_seed(opts.seed, 4));

  // Probe points: lowest-difficulty exemplars per class, plus class means.
  std::vector<Vector> probe_points;
  for (int c = 0; c < force_spec.num_classes; ++c) {
    probe_points.push_back(force.class_means[static_cast<std::size_t>(c)]);
    std::vector<std::pair<double, int>> members;
    for (Eigen::Index i = 0; i < force.data.size(); ++i) {
      if (force.data.labels[static_cast<std::size_t>(i)] == c) {
        members.emplace_back(force.difficulty[static_cast<std::size_t>(i)], static_cast<int>(i));
      }
    }
    std::sort(members.begin(), members.end());
    for (int k = 0; k < params.probe_per_class && k < static_cast<int>(members.size()); ++k) {
      probe_points.push_back(force.data.x.row(members[static_cast<std::size_t>(k)].second).transpose());
    }
  }
  std::vector<std::pair<Vector, Vector>> probe_pairs;
  for (std::size_t i = 0; i < probe_points.size(); ++i) {
    for (std::size_t j = 0; j < probe_points.size(); ++j) {
      if (i != j) probe_pairs.emplace_back(probe_points[i], probe_points[j]);
    }
  }

  // Track the hardest example's force balance.
  int observer = 0;
  for (Eigen::Index i = 0; i < force.data.size(); ++i) {
    if (force.difficulty[static_cast<std::size_t>(i)] >
        force.difficulty[static_cast<std::size_t>(observer)]) {
      observer = static_cast<int>(i);
    }
  }
  std::vector<Vector> observer_inputs;
  for (Eigen::Index i = 0; i < force.data.size(); ++i) {
    observer_inputs.push_back(force.data.x.row(i).transpose());
  }

  training::TrainConfig tc;
  tc.eta = 0.05;
  tc.epochs = 1;
  tc.batch_size = 8;
  report::CsvTable force_table({"epoch", "example_id", "self_norm", "other_norm",
                                "delta_label_dim"});
  std::vector<MlpModel> snapshots;
  std::vector<double> loss_curve;
  Rng order_rng(derive_seed(opts.seed, 5));
  const Matrix targets = training::target_rows(force.data, force_spec.num_classes, 1);
  std::vector<int> order(static_cast<std::size_t>(force.data.size()));
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < params.force_epochs; ++epoch) {
    snapshots.push_back(model);
    const auto report_force =
        akg::epoch_force(model, observer_inputs[static_cast<std::size_t>(observer)],
                         force.data.labels[static_cast<std::size_t>(observer)], observer,
                         observer_inputs, force.data.labels, tc.eta);
    const Vector total = report_force.self_force + report_force.other_force;
    force_table.add_row({epoch, observer, report_force.self_force.norm(),
                         report_force.other_force.norm(),
                         total(force.data.labels[static_cast<std::size_t>(observer)])});

    std::shuffle(order.begin(), order.end(), order_rng);
    double epoch_loss = 0.0;
    for (Eigen::Index start = 0; start < force.data.size(); start += tc.batch_size) {
      const Eigen::Index len = std::min<Eigen::Index>(tc.batch_size, force.data.size() - start);
      Matrix xb(len, force.data.x.cols());
      Matrix tb(len, force_spec.num_classes);
      for (Eigen::Index i = 0; i < len; ++i) {
        const int idx = order[static_cast<std::size_t>(start + i)];
        xb.row(i) = force.data.x.row(idx);
        tb.row(i) = targets.row(idx);
      }
      ForwardCache cache;
      const Matrix z = model.forward_batch(xb, cache);
      Matrix dz;
      epoch_loss += training::loss_and_grad(training::LossKind::kCrossEntropy, 1, z, tb, &dz) *
                    static_cast<double>(len);
      training::apply_update(model, model.backward_batch(cache, dz / static_cast<double>(len)),
                             tc, nullptr);
    }
    loss_curve.push_back(epoch_loss / static_cast<double>(force.data.size()));
  }
  write_table(opts, "epoch_force", force_table);

  if (snapshots.size() >= 2) {
    const auto stability = akg::entk_stability(snapshots, probe_pairs);
    report::CsvTable stability_table({"epoch", "rho", "p_value"});
    for (std::size_t t = 0; t < stability.size(); ++t) {
      stability_table.add_row({static_cast<int>(t), stability[t].rho, stability[t].p_value});
      result.stability_rho.push_back(stability[t].rho);
    }
    write_table(opts, "entk_stability", stability_table);
  }

  // Plateau: first epoch whose relative loss improvement stays under 1%.
  result.plateau_epoch = static_cast<int>(loss_curve.size()) / 2;
  for (std::size_t e = 1; e + 2 < loss_curve.size(); ++e) {
    const bool flat = loss_curve[e - 1] - loss_curve[e] < 0.01 * loss_curve[e - 1] &&
                      loss_curve[e] - loss_curve[e + 1] < 0.01 * loss_curve[e] &&
                      loss_curve[e + 1] - loss_curve[e + 2] < 0.01 * loss_curve[e + 1];
    if (flat) {
      result.plateau_epoch = static_cast<int>(e);
      break;
    }
  }
  std::vector<double> tail(result.stability_rho.begin() + result.plateau_epoch,
                           result.stability_rho.end());
  if (!tail.empty()) {
    std::nth_element(tail.begin(), tail.begin() + static_cast<long>(tail.size() / 2), tail.end());
    result.median_stability_after_plateau = tail[tail.size() / 2];
  }
  return result;
}

// ---------------------------------------------------------------------------

ToygaussPathsResult run_toygauss_paths(const OutputOptions& opts,
                                       const ToygaussPathsParams& params) {
  datasets::ToyGaussianSpec spec = params.gaussian;
  spec.n = params.n;
  spec.seed = derive_seed(opts.seed, 11);
  if (opts.write_files) {
    report::write_manifest(opts.out_dir, "toygauss-paths",
                           {{"n", params.n},
                            {"epochs", params.epochs},
                            {"eta", params.eta},
                            {"ema_alpha", params.ema_alpha}},
                           opts.seed);
  }
  const GaussianBundle bundle = make_gaussian_bundle(spec);
  write_table(opts, "dataset", dataset_table(bundle));

  // Track every medium/hard example and fill the rest with easy ones.
  std::vector<int> tracked;
  std::vector<int> easy_pool;
  for (Eigen::Index i = 0; i < bundle.data.size(); ++i) {
    datasets::LabeledExample ex;
    ex.difficulty = bundle.difficulty[static_cast<std::size_t>(i)];
    if (datasets::difficulty_group(ex) == datasets::Difficulty::kEasy) {
      easy_pool.push_back(static_cast<int>(i));
    } else {
      tracked.push_back(static_cast<int>(i));
    }
  }
  const int easy_budget = std::max(0, params.max_tracked - static_cast<int>(tracked.size()));
  for (int i = 0; i < easy_budget && i < static_cast<int>(easy_pool.size()); ++i) {
    tracked.push_back(easy_pool[static_cast<std::size_t>(i)]);
  }
  std::sort(tracked.begin(), tracked.end());

  training::TrainConfig tc;
  tc.eta = params.eta;
  tc.epochs = params.epochs;
  tc.batch_size = params.batch_size;
  tc.seed = derive_seed(opts.seed, 12);
  training::Recorder recorder;
  recorder.tracked = tracked;
  recorder.cadence = training::Cadence::kPerEpoch;
  recorder.ema_alpha = params.ema_alpha;

  const MlpModel init = default_gaussian_mlp(spec.dim, spec.num_classes, derive_seed(opts.seed, 13));
  const auto trained = training::train(init, bundle.data, tc, recorder);

  ToygaussPathsResult result;
  report::CsvTable path_table([&] {
    std::vector<std::string> header{"run_id", "example_id", "epoch"};
    for (int v = 1; v <= spec.num_classes; ++v) header.push_back("p_" + std::to_string(v));
    for (int v = 1; v <= spec.num_classes; ++v) header.push_back("smoothed_p_" + std::to_string(v));
    return header;
  }());
  report::CsvTable zigzag_table({"example_id", "group", "difficulty", "initial_dist", "min_dist",
                                 "epoch_of_min", "final_dist", "final_dist_to_label"});

  std::array<int, 3> svg_example{-1, -1, -1};  // one per difficulty group
  for (const auto& path : trained.paths) {
    const auto id = static_cast<std::size_t>(path.example_id);
    datasets::LabeledExample ex;
    ex.difficulty = bundle.difficulty[id];
    const auto group = datasets::difficulty_group(ex);
    Vector e_y = Vector::Zero(spec.num_classes);
    e_y(bundle.data.labels[id]) = 1.0;
    const auto stats = training::zigzag_stats(
        path.smoothed, bundle.q_star.row(static_cast<Eigen::Index>(id)).transpose(), e_y);

    const char* group_name = group == datasets::Difficulty::kEasy     ? "easy"
                             : group == datasets::Difficulty::kMedium ? "medium"
                                                                      : "hard";
    ZigzagGroupStats* bucket = group == datasets::Difficulty::kEasy     ? &result.easy
                               : group == datasets::Difficulty::kMedium ? &result.medium
                                                                        : &result.hard;
    ++bucket->total;
    if (stats.min_dist < stats.initial_dist && stats.min_dist < stats.final_dist) ++bucket->dipped;
    if (stats.final_dist <= stats.min_dist + 0.05) ++bucket->no_dip;
    zigzag_table.add_row({path.example_id, group_name, ex.difficulty, stats.initial_dist,
                          stats.min_dist, stats.epoch_of_min, stats.final_dist,
                          stats.final_dist_to_label});
    auto& slot = svg_example[static_cast<std::size_t>(group == datasets::Difficulty::kEasy ? 0
                                                      : group == datasets::Difficulty::kMedium ? 1
                                                                                               : 2)];
    if (slot < 0) slot = path.example_id;
  }
  write_table(opts, "zigzag", zigzag_table);

  for (const auto& path : trained.paths) {
    for (std::size_t t = 0; t < path.raw.size(); ++t) {
      std::vector<report::Cell> row{0, path.example_id, static_cast<int>(t)};
      for (int v = 0; v < spec.num_classes; ++v) row.emplace_back(path.raw[t](v));
      for (int v = 0; v < spec.num_classes; ++v) row.emplace_back(path.smoothed[t](v));
      path_table.add_row(std::move(row));
    }
  }
  write_table(opts, "paths", path_table);

  if (opts.write_files) {
    // One trajectory per difficulty group on the reference triangle.
    std::vector<report::Series> series;
    for (const auto& path : trained.paths) {
      if (path.example_id != svg_example[0] && path.example_id != svg_example[1] &&
          path.example_id != svg_example[2]) {
        continue;
      }
      report::Series s;
      s.name = "example_" + std::to_string(path.example_id);
      const int y = bundle.data.labels[static_cast<std::size_t>(path.example_id)];
      for (const auto& p : path.smoothed) {
        const auto point = training::project_barycentric(ProbVector(p), y);
        s.x.push_back(point.u);
        s.y.push_back(point.v);
      }
      series.push_back(std::move(s));
    }
    if (!series.empty()) {
      report::PlotSpec plot;
      plot.kind = report::PlotKind::kPathTriangle;
      plot.title = "learning paths";
      plot.data_ref = "paths.csv";
      report::emit_svg(plot, series, opts.out_dir / "paths_triangle.svg");
    }
  }
  return result;
}

// ---------------------------------------------------------------------------

double FilterKdResult::mean_acc(filterkd::Mode mode) const {
  const char* name = mode == filterkd::Mode::kFilterKd ? "filterkd"
                     : mode == filterkd::Mode::kEskd   ? "eskd"
                                                       : "oht";
  double total = 0.0;
  int count = 0;
  for (const auto& r : rows) {
    if (r.mode == name) {
      total += r.test_acc;
      ++count;
    }
  }
  return count ? total / count : 0.0;
}

double FilterKdResult::mean_supervision(filterkd::Mode mode) const {
  const char* name = mode == filterkd::Mode::kFilterKd ? "filterkd"
                     : mode == filterkd::Mode::kEskd   ? "eskd"
                                                       : "oht";
  double total = 0.0;
  int count = 0;
  for (const auto& r : rows) {
    if (r.mode == name) {
      total += r.supervision_quality;
      ++count;
    }
  }
  return count ? total / count : 0.0;
}

FilterKdResult run_filter_kd(const OutputOptions& opts, const FilterKdParams& params) {
  if (opts.write_files) {
    report::write_manifest(opts.out_dir, "filter-kd",
                           {{"alpha", params.alpha},
                            {"noise_ratio", params.noise_ratio},
                            {"seeds", params.seeds},
                            {"n_train", params.n_train}},
                           opts.seed);
  }
  FilterKdResult result;
  report::CsvTable table({"mode", "seed", "stop_epoch", "test_acc", "ece", "supervision_quality"});

  for (int s = 0; s < params.seeds; ++s) {
    const std::uint64_t seed = derive_seed(opts.seed, 100 + static_cast<std::uint64_t>(s));
    datasets::ToyGaussianSpec train_spec;
    train_spec.n = params.n_train;
    train_spec.sigma = params.gaussian_sigma;
    train_spec.seed = derive_seed(seed, 1);
    auto generated = datasets::gen_toy_gaussian(train_spec);
    datasets::flip_labels(generated.examples, params.noise_ratio, derive_seed(seed, 2));

    GaussianBundle train_bundle;
    train_bundle.class_means = generated.class_means;
    const auto n = static_cast<Eigen::Index>(generated.examples.size());
    train_bundle.data.x.resize(n, train_spec.dim);
    train_bundle.q_star.resize(n, train_spec.num_classes);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& ex = generated.examples[static_cast<std::size_t>(i)];
      train_bundle.data.x.row(i) = ex.x.transpose();
      train_bundle.q_star.row(i) = ex.q_star.transpose();
      train_bundle.data.labels.push_back(ex.y);
    }

    // Test distribution shares the class means: regenerate with the same
    // generator seed but more draws, keeping the clean labels.
    datasets::ToyGaussianSpec test_spec = train_spec;
    test_spec.n = params.n_train + params.n_test;
    const GaussianBundle both = make_gaussian_bundle(test_spec);
    training::TrainData test_data;
    test_data.x = both.data.x.bottomRows(params.n_test);
    test_data.labels.assign(both.data.labels.end() - params.n_test, both.data.labels.end());

    const auto split = filterkd::split_stratified(train_bundle.data, params.val_fraction,
                                                  derive_seed(seed, 3));
    Matrix q_star_fit(static_cast<Eigen::Index>(split.fit_indices.size()),
                      train_spec.num_classes);
    for (std::size_t i = 0; i < split.fit_indices.size(); ++i) {
      q_star_fit.row(static_cast<Eigen::Index>(i)) = train_bundle.q_star.row(split.fit_indices[i]);
    }

    const MlpModel teacher_init =
        default_gaussian_mlp(train_spec.dim, train_spec.num_classes, derive_seed(seed, 4));
    const MlpModel student_init =
        default_gaussian_mlp(train_spec.dim, train_spec.num_classes, derive_seed(seed, 5));

    training::TrainConfig teacher_tc;
    teacher_tc.eta = params.teacher_eta;
    teacher_tc.epochs = params.teacher_epochs;
    teacher_tc.batch_size = params.teacher_batch_size;
    teacher_tc.patience = params.patience;
    teacher_tc.seed = derive_seed(seed, 6);

    training::TrainConfig student_tc = teacher_tc;
    student_tc.eta = params.student_eta;
    student_tc.epochs = params.student_epochs;
    student_tc.batch_size = params.student_batch_size;
    student_tc.patience = 0;
    student_tc.seed = derive_seed(seed, 7);

    for (const auto mode : params.modes) {
      FilterKdRow row;
      row.seed = seed;
      MlpModel student = student_init;
      if (mode == filterkd::Mode::kOneHot) {
        row.mode = "oht";
        row.stop_epoch = 0;
        student = training::train(student_init, split.fit, student_tc).model;
        const Matrix one_hot = training::target_rows(split.fit, train_spec.num_classes, 1);
        row.supervision_quality = filterkd::supervision_quality(one_hot, q_star_fit);
      } else {
        filterkd::KdConfig kd;
        kd.alpha = mode == filterkd::Mode::kEskd ? 1.0 : params.alpha;
        kd.mode = mode;
        kd.teacher = teacher_tc;
        kd.student = student_tc;
        kd.min_epochs = params.teacher_min_epochs;
        const auto teacher = filterkd::train_teacher(teacher_init, split.fit, split.held_out, kd);
        row.mode = mode == filterkd::Mode::kEskd ? "eskd" : "filterkd";
        row.stop_epoch = teacher.stop_epoch;
        row.supervision_quality = filterkd::supervision_quality(teacher.table.rows, q_star_fit);
        student = filterkd::train_student(student_init, split.fit, teacher.table, student_tc);
      }

      row.test_acc = training::accuracy(student, test_data);
      const Matrix probs = training::predict_probs(student, test_data.x);
      std::vector<double> conf;
      std::vector<int> correct;
      for (Eigen::Index i = 0; i < probs.rows(); ++i) {
        Eigen::Index arg;
        conf.push_back(probs.row(i).maxCoeff(&arg));
        correct.push_back(arg == test_data.labels[static_cast<std::size_t>(i)] ? 1 : 0);
      }
      row.ece = filterkd::ece(conf, correct);
      table.add_row({row.mode, std::to_string(row.seed), row.stop_epoch, row.test_acc, row.ece,
                     row.supervision_quality});
      result.rows.push_back(std::move(row));
    }
  }
  write_table(opts, "filter_kd_summary", table);
  return result;
}

// ---------------------------------------------------------------------------

SqueezeResultSummary run_squeeze(const OutputOptions& opts, const SqueezeParams& params) {
  if (opts.write_files) {
    report::write_manifest(opts.out_dir, "squeeze",
                           {{"num_classes", params.num_classes},
                            {"trials", params.trials},
                            {"eta_max", params.eta_max}},
                           opts.seed);
  }
  Rng rng(derive_seed(opts.seed, 21));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> eta_draw(1e-3, params.eta_max);
  std::uniform_int_distribution<int> label(0, params.num_classes - 1);

  report::CsvTable table({"trial", "eta", "y_neg", "argmax_excluded", "p_neg_before",
                          "p_neg_after", "p_star_before", "p_star_after", "target_dropped",
                          "argmax_rose"});
  SqueezeResultSummary summary;
  summary.trials = params.trials;
  for (int t = 0; t < params.trials; ++t) {
    finetune::UfmModel model;
    model.features = Matrix::NullaryExpr(params.feature_dim, 1, [&]() { return normal(rng); });
    model.readout = Matrix::NullaryExpr(params.num_classes, params.feature_dim,
                                        [&]() { return normal(rng) / std::sqrt(1.0 * params.feature_dim); });
    const int y_neg = label(rng);
    const double eta = eta_draw(rng);
    const auto step = finetune::squeeze_step(model, y_neg, eta);
    summary.target_dropped += step.target_dropped ? 1 : 0;
    summary.argmax_rose += step.argmax_rose ? 1 : 0;
    table.add_row({t, eta, y_neg, step.argmax_excluded, step.p_before(y_neg), step.p_after(y_neg),
                   step.p_before(step.argmax_excluded), step.p_after(step.argmax_excluded),
                   step.target_dropped, step.argmax_rose});
  }
  write_table(opts, "squeeze_trials", table);
  return summary;
}

// ---------------------------------------------------------------------------

std::vector<TwoGramRow> run_two_gram_study(const OutputOptions& opts, const TwoGramParams& params) {
  if (opts.write_files) {
    report::write_manifest(opts.out_dir, "two-gram",
                           {{"steps", params.steps},
                            {"length", params.length},
                            {"seeds", params.seeds}},
                           opts.seed);
  }
  std::vector<TwoGramRow> rows;
  report::CsvTable table({"seed", "context", "entropy_before", "entropy_after", "max_prob_before",
                          "max_prob_after"});
  for (int s = 0; s < params.seeds; ++s) {
    datasets::TwoGramSpec spec;
    spec.length = params.length;
    spec.seed = derive_seed(opts.seed, 31 + static_cast<std::uint64_t>(s));
    finetune::TwoGramRunConfig run = params.run;
    run.steps = params.steps;
    run.model_seed = derive_seed(spec.seed, 1);
    const auto summary = finetune::run_two_gram(spec, params.mode, run);
    TwoGramRow row;
    row.seed = spec.seed;
    row.entropy_before = summary.mean_entropy_before;
    row.entropy_after = summary.mean_entropy_after;
    row.max_prob_before = summary.mean_max_prob_before;
    row.max_prob_after = summary.mean_max_prob_after;
    rows.push_back(row);
    for (Eigen::Index c = 0; c < summary.rows_before.rows(); ++c) {
      double hb = 0.0, ha = 0.0;
      for (Eigen::Index k = 0; k < summary.rows_before.cols(); ++k) {
        if (summary.rows_before(c, k) > 0) hb -= summary.rows_before(c, k) * std::log(summary.rows_before(c, k));
        if (summary.rows_after(c, k) > 0) ha -= summary.rows_after(c, k) * std::log(summary.rows_after(c, k));
      }
      table.add_row({std::to_string(spec.seed), static_cast<int>(c), hb, ha,
                     summary.rows_before.row(c).maxCoeff(), summary.rows_after.row(c).maxCoeff()});
    }
  }
  write_table(opts, "two_gram_contexts", table);
  return rows;
}

// ---------------------------------------------------------------------------

namespace {

// One synthetic question: half the rollouts end on the answer token, and the
// rejected ones reuse the content of an accepted rollout with a planted,
// question-specific rate. Questions therefore span the spectrum from
// harmless to harmful negative gradients.
finetune::RolloutGroup make_synthetic_group(int question, int n_questions, int rollouts,
                                            int length, int vocab, Rng& rng) {
  finetune::RolloutGroup group;
  group.question_id = question;
  std::uniform_int_distribution<int> token(0, vocab - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int answer = (question * 7 + 3) % vocab;
  const double reuse = n_questions > 1
                           ? static_cast<double>(question) / (n_questions - 1)
                           : 0.5;
  const int n_pos = rollouts / 2;
  std::vector<int> reward_slots(static_cast<std::size_t>(rollouts), 0);
  for (int i = 0; i < n_pos; ++i) reward_slots[static_cast<std::size_t>(i)] = 1;
  std::shuffle(reward_slots.begin(), reward_slots.end(), rng);

  std::vector<std::vector<int>> accepted;
  for (int n = 0; n < rollouts; ++n) {
    if (!reward_slots[static_cast<std::size_t>(n)]) continue;
    std::vector<int> response(static_cast<std::size_t>(length));
    for (auto& t : response) t = token(rng);
    response.back() = answer;
    accepted.push_back(std::move(response));
  }

  std::size_t cursor = 0;
  for (int n = 0; n < rollouts; ++n) {
    std::vector<int> response(static_cast<std::size_t>(length));
    if (reward_slots[static_cast<std::size_t>(n)]) {
      response = accepted[cursor++];
    } else {
      const auto& base = accepted[static_cast<std::size_t>(token(rng)) % accepted.size()];
      for (int l = 0; l < length; ++l) {
        response[static_cast<std::size_t>(l)] =
            unit(rng) < reuse ? base[static_cast<std::size_t>(l)] : token(rng);
      }
      if (response.back() == answer) {
        response.back() = (answer + 1 + token(rng) % (vocab - 1)) % vocab;
      }
    }
    group.responses.push_back(std::move(response));
    group.contexts_start.push_back(question % vocab);
    group.rewards.push_back(reward_slots[static_cast<std::size_t>(n)]);
    if (reward_slots[static_cast<std::size_t>(n)]) {
      group.pos_index.push_back(n);
    } else {
      group.neg_index.push_back(n);
    }
  }
  group.advantages = finetune::grpo_advantages(group.rewards);
  return group;
}

double quantile_of(std::vector<double> values, double q) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = static_cast<std::size_t>(std::ceil(pos));
  const double frac = pos - std::floor(pos);
  return values[lo] * (1.0 - frac) + values[hi] * frac;
}

}  // namespace

NthrResult run_nthr(const OutputOptions& opts, const NthrParams& params) {
  if (opts.write_files) {
    report::write_manifest(opts.out_dir, "nthr",
                           {{"questions", params.questions},
                            {"rollouts", params.rollouts},
                            {"tau_quantile", params.tau_quantile},
                            {"beta", params.beta},
                            {"topk", params.topk}},
                           opts.seed);
  }
  NthrResult result;
  report::CsvTable table({"seed", "question", "mean_neg_alpha", "gap_grpo", "gap_pos_only",
                          "gap_nthr", "gap_random_mask", "masked_tokens"});

  int beats_grpo = 0, beats_random = 0, total_questions = 0;
  double overlap10 = 0.0, overlap15 = 0.0, base10 = 0.0, base15 = 0.0;

  for (int s = 0; s < params.seeds; ++s) {
    const std::uint64_t seed = derive_seed(opts.seed, 41 + static_cast<std::uint64_t>(s));
    Rng rng(seed);
    Rng mask_rng(derive_seed(seed, 2));  // keeps group draws mask-independent
    std::normal_distribution<double> normal(0.0, 1.0);
    const Matrix features = Matrix::NullaryExpr(params.feature_dim, params.vocab,
                                                [&]() { return normal(rng); });
    // A cold readout: every context starts uniform, so the sequence
    // baselines match across questions and the feature-space score is the
    // entire first-order influence.
    const finetune::UfmModel model =
        finetune::make_ufm(features, derive_seed(seed, 1), params.readout_scale);
    const finetune::GrpoStepConfig step_config{params.grpo_eta, 0.8, 1.2};

    std::vector<double> seed_scores, seed_gaps;
    for (int q = 0; q < params.questions; ++q) {
      const auto group = make_synthetic_group(q, params.questions, params.rollouts,
                                              params.response_length, params.vocab, rng);
      const auto scores = finetune::nthr_scores(model, group);

      // Per-question threshold from the quantile of negative-token scores.
      std::vector<double> neg_scores;
      for (int n : group.neg_index) {
        for (double v : scores.alpha_hat[static_cast<std::size_t>(n)]) neg_scores.push_back(v);
      }
      const double tau = quantile_of(neg_scores, params.tau_quantile);

      const auto plain = finetune::plain_token_advantages(group);
      const auto masked = finetune::nthr_mask(scores, group, tau, params.beta);
      auto pos_only = plain;
      for (int n : group.neg_index) {
        std::fill(pos_only[static_cast<std::size_t>(n)].begin(),
                  pos_only[static_cast<std::size_t>(n)].end(), 0.0);
      }
      // Random mask: silence the same number of negative tokens, chosen blind.
      int masked_count = 0;
      for (int n : group.neg_index) {
        const auto idx = static_cast<std::size_t>(n);
        for (std::size_t l = 0; l < masked[idx].size(); ++l) {
          if (masked[idx][l] != plain[idx][l]) ++masked_count;
        }
      }
      auto random_mask = plain;
      std::vector<std::pair<int, int>> neg_tokens;
      for (int n : group.neg_index) {
        for (std::size_t l = 0; l < plain[static_cast<std::size_t>(n)].size(); ++l) {
          neg_tokens.emplace_back(n, static_cast<int>(l));
        }
      }
      std::shuffle(neg_tokens.begin(), neg_tokens.end(), mask_rng);
      for (int i = 0; i < masked_count && i < static_cast<int>(neg_tokens.size()); ++i) {
        const auto [n, l] = neg_tokens[static_cast<std::size_t>(i)];
        random_mask[static_cast<std::size_t>(n)][static_cast<std::size_t>(l)] =
            params.beta * group.advantages[static_cast<std::size_t>(n)];
      }

      NthrQuestionRow row;
      row.question = q;
      row.seed = seed;
      row.mean_neg_alpha = scores.mean_negative_alpha;
      row.masked_tokens = masked_count;
      row.gap_grpo = *finetune::measure_gap(model, finetune::grpo_step(model, model, group, plain,
                                                                       step_config), group);
      row.gap_pos_only = *finetune::measure_gap(
          model, finetune::grpo_step(model, model, group, pos_only, step_config), group);
      row.gap_nthr = *finetune::measure_gap(
          model, finetune::grpo_step(model, model, group, masked, step_config), group);
      row.gap_random_mask = *finetune::measure_gap(
          model, finetune::grpo_step(model, model, group, random_mask, step_config), group);

      if (row.gap_nthr > row.gap_grpo) ++beats_grpo;
      if (row.gap_nthr > row.gap_random_mask) ++beats_random;
      ++total_questions;
      seed_scores.push_back(row.mean_neg_alpha);
      seed_gaps.push_back(row.gap_grpo);
      table.add_row({std::to_string(seed), q, row.mean_neg_alpha, row.gap_grpo,
                     row.gap_pos_only, row.gap_nthr, row.gap_random_mask, row.masked_tokens});
      result.rows.push_back(std::move(row));
    }

    // Ranking agreement for this seed: a high influence score should pick
    // out the questions with the weakest confidence gains.
    const auto n = static_cast<Eigen::Index>(seed_scores.size());
    const int k10 = std::min<int>(10, static_cast<int>(n));
    const int k15 = std::min<int>(15, static_cast<int>(n));
    Vector score = Eigen::Map<Vector>(seed_scores.data(), n);
    Vector neg_gap = -Eigen::Map<Vector>(seed_gaps.data(), n);
    overlap10 += finetune::topk_overlap(score, neg_gap, k10);
    overlap15 += finetune::topk_overlap(score, neg_gap, k15);

    Rng baseline_rng(derive_seed(seed, 49));
    Vector shuffled = score;
    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    for (int t = 0; t < params.baseline_trials; ++t) {
      std::shuffle(perm.begin(), perm.end(), baseline_rng);
      for (Eigen::Index i = 0; i < n; ++i) shuffled(i) = perm[static_cast<std::size_t>(i)];
      base10 += finetune::topk_overlap(shuffled, neg_gap, k10);
      base15 += finetune::topk_overlap(shuffled, neg_gap, k15);
    }
  }
  write_table(opts, "nthr_questions", table);

  result.overlap_top10 = overlap10 / params.seeds;
  result.overlap_top15 = overlap15 / params.seeds;
  result.baseline_top10 = base10 / (params.baseline_trials * params.seeds);
  result.baseline_top15 = base15 / (params.baseline_trials * params.seeds);
  result.frac_nthr_beats_grpo = static_cast<double>(beats_grpo) / total_questions;
  result.frac_nthr_beats_random = static_cast<double>(beats_random) / total_questions;

  if (opts.write_files) {
    report::write_json(opts.out_dir / "nthr_summary.json",
                       {{"overlap_top10", result.overlap_top10},
                        {"overlap_top15", result.overlap_top15},
                        {"baseline_top10", result.baseline_top10},
                        {"baseline_top15", result.baseline_top15},
                        {"frac_nthr_beats_grpo", result.frac_nthr_beats_grpo},
                        {"frac_nthr_beats_random", result.frac_nthr_beats_random}});
  }
  return result;
}

// ---------------------------------------------------------------------------

FeatAdaptResult run_feat_adapt(const OutputOptions& opts, const FeatAdaptParams& params) {
  if (opts.write_files) {
    report::write_manifest(opts.out_dir, "feat-adapt",
                           {{"input_dim", params.input_dim},
                            {"hidden_dim", params.hidden_dim},
                            {"grid_points", params.grid_points},
                            {"instances", params.instances},
                            {"eta_hp", params.eta_hp}},
                           opts.seed);
  }
  FeatAdaptResult result;
  report::CsvTable table({"instance", "s", "d_euc", "d_dot", "norm_T", "cosine", "tr_BtB0"});

  for (int inst = 0; inst < params.instances; ++inst) {
    const std::uint64_t seed = derive_seed(opts.seed, 61 + static_cast<std::uint64_t>(inst));
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto opm = featadapt::random_opm(params.hidden_dim, params.input_dim, 1, seed);
    Matrix x(params.samples, params.input_dim);
    Vector y(params.samples);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = normal(rng);
      y(i) = normal(rng);
    }
    const Vector w0 = opm.head.row(0).transpose();
    const auto sweep = featadapt::sweep_q0(opm.flat_backbone(), x, y, w0, params.hidden_dim,
                                           params.grid_points);
    for (const auto& p : sweep.points) {
      table.add_row({inst, p.s, p.d_euc, p.d_dot, p.norm_t, p.cosine, p.tr_btb0});
    }
    result.instances.push_back({sweep.argmax_tr_btb0, sweep.d_euc_increasing_towards_zero});
  }
  write_table(opts, "feat_adapt_sweep", table);

  // Head-probe energy sweep on small Gaussian clusters, plus the feature
  // movement a subsequent full-tune produces from each probe length.
  const std::uint64_t seed = derive_seed(opts.seed, 60);
  datasets::ToyGaussianSpec spec;
  spec.dim = std::max(params.input_dim, 4);
  spec.n = 120;
  spec.seed = seed;
  const GaussianBundle bundle = make_gaussian_bundle(spec);
  const auto opm = featadapt::random_opm(std::max(params.hidden_dim, spec.dim), spec.dim,
                                         spec.num_classes, derive_seed(seed, 1));
  const Matrix h0 = opm.features(bundle.data.x);
  report::CsvTable hp_table({"tau", "aie", "d_euc", "d_dot", "norm_T", "cosine"});
  for (int tau : params.tau_list) {
    featadapt::HpConfig hp;
    hp.tau = tau;
    hp.eta_hp = params.eta_hp;
    const auto probe = featadapt::head_probe(opm, bundle.data.x, bundle.data.labels, hp);
    const double energy = featadapt::aie(probe.q0, bundle.data.labels);
    result.aie_by_tau.push_back(energy);

    featadapt::OpmState probed = opm;
    probed.head = probe.head;
    const auto tuned = featadapt::full_tune(probed, bundle.data.x, bundle.data.labels, 400, 0.1);
    const auto metrics = featadapt::adapt_metrics(h0, tuned.state.features(bundle.data.x));
    hp_table.add_row({tau, energy, metrics.d_euc, metrics.d_dot, metrics.norm_t, metrics.cosine});
  }
  write_table(opts, "head_probe_energy", hp_table);
  return result;
}

// ---------------------------------------------------------------------------

simplicity::Toy256Result run_toy256_study(const OutputOptions& opts,
                                          simplicity::Toy256Config config) {
  config.jobs = opts.jobs;
  config.base_seed = opts.seed;
  if (opts.write_files) {
    report::write_manifest(opts.out_dir, "toy256",
                           {{"encoding", config.encoding == simplicity::Toy256Encoding::kOht2
                                             ? "oht2"
                                             : "oht3"},
                            {"loss", config.loss == simplicity::Toy256Loss::kCe ? "ce" : "mse"},
                            {"optimizer",
                             config.optimizer == simplicity::Toy256Optimizer::kSgd ? "sgd" : "adam"},
                            {"seeds", config.seeds},
                            {"epoch_cap", config.epoch_cap}},
                           opts.seed);
  }
  const auto result = simplicity::run_toy256(config);
  if (opts.write_files) report::write_json(opts.out_dir / "mappings.json", mappings_json());

  report::CsvTable table({"mapping_id", "class", "seed", "convergence_time", "coding_length_bits",
                          "topsim", "diverged"});
  for (const auto& r : result.records) {
    table.add_row({r.mapping_id, datasets::mapping_class_name(r.cls), std::to_string(r.seed),
                   r.convergence_time, r.coding_bits,
                   r.topsim ? report::Cell(*r.topsim) : report::Cell(std::string("")),
                   r.diverged});
  }
  write_table(opts, "toy256_records", table);

  if (opts.write_files) {
    report::write_json(opts.out_dir / "toy256_correlations.json",
                       {{"cl_vs_time", correlation_json(result.cl_vs_time)},
                        {"topsim_vs_time", correlation_json(result.topsim_vs_time)},
                        {"topsim_excluded", result.topsim_excluded},
                        {"diverged_runs", result.diverged_runs},
                        {"mean_time_compositional", result.mean_time_compositional},
                        {"mean_time_holistic", result.mean_time_holistic},
                        {"mean_time_degenerate", result.mean_time_degenerate}});
    if (config.keep_curves && !result.curves.empty()) {
      std::vector<report::Series> series;
      for (std::size_t i = 0; i < result.curves.size() && i < 256; ++i) {
        report::Series s;
        s.name = "m" + std::to_string(i);
        for (std::size_t e = 0; e < result.curves[i].size(); ++e) {
          s.x.push_back(static_cast<double>(e));
          s.y.push_back(result.curves[i][e]);
        }
        if (!s.x.empty()) series.push_back(std::move(s));
      }
      report::PlotSpec plot;
      plot.kind = report::PlotKind::kLine;
      plot.title = "training loss per mapping";
      plot.x_label = "epoch";
      plot.y_label = "loss";
      plot.data_ref = "toy256_records.csv";
      report::emit_svg(plot, series, opts.out_dir / "toy256_curves.svg");
    }
  }
  return result;
}

}  // namespace forcelab::experiments
