#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "forcelab/experiments.hpp"
#include "forcelab/filterkd.hpp"

#include <cmath>

using namespace forcelab;
using namespace forcelab::filterkd;

namespace {

training::TrainData gaussian_data(int n, std::uint64_t seed, double flip = 0.0) {
  datasets::ToyGaussianSpec spec;
  spec.n = n;
  spec.seed = seed;
  auto generated = datasets::gen_toy_gaussian(spec);
  if (flip > 0.0) datasets::flip_labels(generated.examples, flip, derive_seed(seed, 9));
  training::TrainData data;
  data.x.resize(n, spec.dim);
  for (int i = 0; i < n; ++i) {
    data.x.row(i) = generated.examples[static_cast<std::size_t>(i)].x.transpose();
    data.labels.push_back(generated.examples[static_cast<std::size_t>(i)].y);
  }
  return data;
}

KdConfig small_kd_config(std::uint64_t seed) {
  KdConfig kd;
  kd.alpha = 0.05;
  kd.teacher.eta = 0.05;
  kd.teacher.epochs = 12;
  kd.teacher.batch_size = 16;
  kd.teacher.patience = 0;  // fixed-length run unless a test says otherwise
  kd.teacher.seed = seed;
  kd.student = kd.teacher;
  return kd;
}

}  // namespace

TEST_CASE("table rows blend the visited predictions one step per epoch") {
  const auto data = gaussian_data(24, 31);
  const auto init = experiments::default_gaussian_mlp(30, 3, 32);
  auto kd = small_kd_config(33);
  kd.teacher.epochs = 2;
  kd.teacher.batch_size = 24;  // single batch per epoch

  const auto result = train_teacher(init, data, gaussian_data(8, 34), kd);
  for (int count : result.table.update_count) CHECK(count == 2);

  // Epoch 1 sees the untrained model, so the first blend is a no-op; the
  // second blends in the predictions after exactly one update.
  const Matrix p0 = training::predict_probs(init, data.x);
  training::TrainConfig one_epoch = kd.teacher;
  one_epoch.epochs = 1;
  const auto after_one = training::train(init, data, one_epoch);
  const Matrix p1 = training::predict_probs(after_one.model, data.x);
  const Matrix expected = (1.0 - kd.alpha) * p0 + kd.alpha * p1;
  CHECK((result.table.rows - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("unit smoothing reproduces the raw epoch predictions") {
  const auto data = gaussian_data(24, 35);
  const auto init = experiments::default_gaussian_mlp(30, 3, 36);
  auto kd = small_kd_config(37);
  kd.alpha = 1.0;
  kd.teacher.epochs = 3;
  kd.teacher.batch_size = 24;

  const auto result = train_teacher(init, data, gaussian_data(8, 38), kd);
  training::TrainConfig two_epochs = kd.teacher;
  two_epochs.epochs = 2;
  const auto after_two = training::train(init, data, two_epochs);
  const Matrix expected = training::predict_probs(after_two.model, data.x);
  CHECK((result.table.rows - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("table rows stay on the simplex and stopping obeys the patience") {
  const auto data = gaussian_data(60, 39, 0.2);
  const auto init = experiments::default_gaussian_mlp(30, 3, 40);
  auto kd = small_kd_config(41);
  kd.teacher.epochs = 40;
  kd.teacher.patience = 5;
  const auto split = split_stratified(data, 0.2, 42);
  const auto result = train_teacher(init, split.fit, split.held_out, kd);
  for (Eigen::Index i = 0; i < result.table.rows.rows(); ++i) {
    CHECK_NOTHROW(ProbVector{result.table.rows.row(i).transpose()});
  }
  REQUIRE(!result.val_curve.empty());
  CHECK(result.stop_epoch == static_cast<int>(result.val_curve.size()));
  if (result.stop_epoch < kd.teacher.epochs) {
    // Early stop: the trailing epochs never improved on the running best.
    const double best = *std::min_element(result.val_curve.begin(),
                                          result.val_curve.end() - kd.teacher.patience);
    for (std::size_t e = result.val_curve.size() - static_cast<std::size_t>(kd.teacher.patience);
         e < result.val_curve.size(); ++e) {
      CHECK(result.val_curve[e] > best);
    }
  }
}

TEST_CASE("early-stopped table sits closer to the posterior than a converged one") {
  // Label noise with tight clusters: the jittering mid-training predictions
  // hover near the posterior, while a run to the cap memorizes the flips.
  datasets::ToyGaussianSpec spec;
  spec.n = 2000;
  spec.sigma = 1.0;
  spec.seed = 43;
  auto generated = datasets::gen_toy_gaussian(spec);
  datasets::flip_labels(generated.examples, 0.2, 44);
  training::TrainData data;
  Matrix q_star(spec.n, spec.num_classes);
  data.x.resize(spec.n, spec.dim);
  for (int i = 0; i < spec.n; ++i) {
    data.x.row(i) = generated.examples[static_cast<std::size_t>(i)].x.transpose();
    data.labels.push_back(generated.examples[static_cast<std::size_t>(i)].y);
    q_star.row(i) = generated.examples[static_cast<std::size_t>(i)].q_star.transpose();
  }
  const auto split = split_stratified(data, 0.1, 45);
  Matrix q_star_fit(static_cast<Eigen::Index>(split.fit_indices.size()), spec.num_classes);
  for (std::size_t i = 0; i < split.fit_indices.size(); ++i) {
    q_star_fit.row(static_cast<Eigen::Index>(i)) = q_star.row(split.fit_indices[i]);
  }

  const auto init = experiments::default_gaussian_mlp(spec.dim, spec.num_classes, 46);
  auto kd = small_kd_config(47);
  kd.teacher.eta = 0.2;
  kd.teacher.batch_size = 8;
  kd.teacher.epochs = 160;
  kd.teacher.patience = 20;
  kd.min_epochs = 80;
  const auto stopped = train_teacher(init, split.fit, split.held_out, kd);

  auto kd_long = kd;
  kd_long.teacher.patience = 0;  // run far past the memorization point
  kd_long.teacher.epochs = 340;
  const auto converged = train_teacher(init, split.fit, split.held_out, kd_long);

  CHECK(supervision_quality(stopped.table.rows, q_star_fit) <
        supervision_quality(converged.table.rows, q_star_fit));
}

TEST_CASE("one-hot table rows reproduce plain supervised training") {
  const auto data = gaussian_data(40, 49);
  const auto init = experiments::default_gaussian_mlp(30, 3, 50);
  training::TrainConfig tc;
  tc.eta = 0.05;
  tc.epochs = 5;
  tc.batch_size = 8;
  tc.seed = 51;

  EmaTable one_hot;
  one_hot.rows = training::target_rows(data, 3, 1);
  one_hot.update_count.assign(40, 0);
  const auto student = train_student(init, data, one_hot, tc);
  const auto baseline = training::train(init, data, tc);
  CHECK((student.flatten() - baseline.model.flatten()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("training against the model's own predictions moves nothing") {
  const auto data = gaussian_data(32, 52);
  const auto init = experiments::default_gaussian_mlp(30, 3, 53);
  training::TrainConfig tc;
  tc.eta = 0.1;
  tc.epochs = 4;
  tc.batch_size = 8;

  EmaTable self;
  self.rows = training::predict_probs(init, data.x);
  self.update_count.assign(32, 0);
  const auto student = train_student(init, data, self, tc);
  CHECK((student.flatten() - init.flatten()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("misaligned tables are rejected") {
  const auto data = gaussian_data(16, 54);
  EmaTable table;
  table.rows = Matrix::Constant(8, 3, 1.0 / 3);
  CHECK_THROWS_AS(
      (void)train_student(experiments::default_gaussian_mlp(30, 3, 55), data, table, {}),
      std::invalid_argument);
}

TEST_CASE("supervision quality distances") {
  Matrix q(2, 3);
  q << 1, 0, 0, 0, 1, 0;
  CHECK(supervision_quality(q, q) == doctest::Approx(0.0));

  Matrix target(1, 3), truth(1, 3);
  target << 1, 0, 0;  // label one-hot
  truth << 0, 1, 0;   // posterior peaked elsewhere
  CHECK(supervision_quality(target, truth) == doctest::Approx(std::sqrt(2.0)));

  Rng rng(56);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix a(5, 4), b(5, 4);
  for (int i = 0; i < 5; ++i) {
    a.row(i) = softmax(Vector::NullaryExpr(4, [&]() { return normal(rng); })).values().transpose();
    b.row(i) = softmax(Vector::NullaryExpr(4, [&]() { return normal(rng); })).values().transpose();
  }
  double expected = 0.0;
  for (int i = 0; i < 5; ++i) expected += (a.row(i) - b.row(i)).norm();
  CHECK(supervision_quality(a, b) == doctest::Approx(expected / 5.0));
}

TEST_CASE("calibration error cases") {
  // A predictor that is always confident and always right is calibrated.
  CHECK(ece({1.0, 1.0, 1.0}, {1, 1, 1}) == doctest::Approx(0.0));
  CHECK(ece({1.0, 1.0, 1.0, 1.0}, {1, 0, 1, 0}) == doctest::Approx(0.5));

  // Hand tally: bin 10 holds (.95, 1) and (.95, 0), bin 6 holds (.55, 1),
  // bin 7 holds (.65, 1): 0.5*0.45 + 0.25*0.45 + 0.25*0.35.
  const double expected = 0.5 * 0.45 + 0.25 * 0.45 + 0.25 * 0.35;
  CHECK(ece({0.95, 0.95, 0.55, 0.65}, {1, 0, 1, 1}) == doctest::Approx(expected));

  CHECK_THROWS_AS((void)ece({0.5}, {1, 0}), std::invalid_argument);
}

TEST_CASE("stratified split keeps class balance and partitions indices") {
  const auto data = gaussian_data(200, 57);
  const auto split = split_stratified(data, 0.1, 58);
  CHECK(split.fit_indices.size() + split.held_out_indices.size() == 200);
  std::vector<bool> seen(200, false);
  for (int i : split.fit_indices) seen[static_cast<std::size_t>(i)] = true;
  for (int i : split.held_out_indices) {
    CHECK(!seen[static_cast<std::size_t>(i)]);
    seen[static_cast<std::size_t>(i)] = true;
  }
  for (bool s : seen) CHECK(s);
  // Each class contributes roughly its share.
  for (int c = 0; c < 3; ++c) {
    int total = 0, held = 0;
    for (std::size_t i = 0; i < data.labels.size(); ++i) total += data.labels[i] == c;
    for (std::size_t i = 0; i < split.held_out.labels.size(); ++i) {
      held += split.held_out.labels[i] == c;
    }
    CHECK(std::abs(held - 0.1 * total) <= 1.0);
  }
}

namespace {

struct BoundInstance {
  Matrix q_tar, q_star, loss_table;
};

BoundInstance random_instance(std::uint64_t seed, int s, int k, double ell, double spread) {
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> loss_draw(0.0, ell);
  BoundInstance inst;
  inst.q_star.resize(s, k);
  inst.q_tar.resize(s, k);
  inst.loss_table.resize(s, k);
  for (int i = 0; i < s; ++i) {
    const Vector z = Vector::NullaryExpr(k, [&]() { return normal(rng); });
    inst.q_star.row(i) = softmax(z).values().transpose();
    inst.q_tar.row(i) =
        softmax(z + spread * Vector::NullaryExpr(k, [&]() { return normal(rng); }))
            .values()
            .transpose();
    for (int j = 0; j < k; ++j) inst.loss_table(i, j) = loss_draw(rng);
  }
  return inst;
}

}  // namespace

TEST_CASE("matching targets reduce the bound to the variance term") {
  const auto inst = random_instance(59, 40, 3, 2.0, 0.0);
  const auto terms = risk_bound_terms(inst.q_star, inst.q_star, inst.loss_table, 2.0, 50, 4000, 60);
  for (const auto& xi : terms.xi) {
    REQUIRE(xi.has_value());
    CHECK(*xi == doctest::Approx(0.0).epsilon(1e-12));
  }
  CHECK(terms.mc_lhs == doctest::Approx(terms.variance_term).epsilon(0.1));
}

TEST_CASE("the total-variation bound never exceeds the euclidean one") {
  for (int trial = 0; trial < 20; ++trial) {
    const auto inst = random_instance(100 + static_cast<std::uint64_t>(trial), 30, 3, 1.5, 0.7);
    const auto terms = risk_bound_terms(inst.q_tar, inst.q_star, inst.loss_table, 1.5, 50, 1, 1);
    REQUIRE(terms.xi[0].has_value());
    REQUIRE(terms.xi[1].has_value());
    CHECK(*terms.xi[1] <= *terms.xi[0] + 1e-12);
  }
}

TEST_CASE("every defined bound dominates the resampled left-hand side") {
  int ok = 0;
  const int instances = 25;
  for (int trial = 0; trial < instances; ++trial) {
    const auto inst = random_instance(200 + static_cast<std::uint64_t>(trial), 60, 3, 2.0, 0.5);
    const auto terms =
        risk_bound_terms(inst.q_tar, inst.q_star, inst.loss_table, 2.0, 50, 10000,
                         300 + static_cast<std::uint64_t>(trial));
    bool dominated = true;
    for (const auto& xi : terms.xi) {
      if (xi && terms.mc_lhs > terms.variance_term + *xi) dominated = false;
    }
    ok += dominated ? 1 : 0;
  }
  CHECK(ok >= instances - 1);
}

TEST_CASE("support mismatches flag the divergence-based bounds") {
  Matrix q_tar(1, 3), q_star(1, 3), loss(1, 3);
  q_tar << 0.5, 0.5, 0.0;
  q_star << 0.5, 0.0, 0.5;  // zero where the target has mass
  loss << 1.0, 1.0, 1.0;
  const auto terms = risk_bound_terms(q_tar, q_star, loss, 1.0, 10, 10, 1);
  CHECK(terms.xi[0].has_value());
  CHECK(terms.xi[1].has_value());
  CHECK(!terms.xi[2].has_value());  // forward divergence undefined
  CHECK(!terms.xi[3].has_value());
  CHECK(!terms.xi[4].has_value());  // reverse direction also hits a zero
  CHECK(!terms.xi[5].has_value());
  CHECK(!terms.xi[6].has_value());
}
