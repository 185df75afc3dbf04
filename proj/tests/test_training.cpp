#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "forcelab/training.hpp"

#include <cmath>

using namespace forcelab;
using namespace forcelab::training;

namespace {

TrainData separable_two_class(int n, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 0.4);
  TrainData data;
  data.x.resize(n, 2);
  for (int i = 0; i < n; ++i) {
    const int y = i % 2;
    data.x(i, 0) = (y == 0 ? -2.0 : 2.0) + normal(rng);
    data.x(i, 1) = normal(rng);
    data.labels.push_back(y);
  }
  return data;
}

MlpModel two_class_model(std::uint64_t seed) {
  Rng rng(seed);
  return MlpModel::random({2, 8, 2}, Activation::kTanh, rng);
}

}  // namespace

TEST_CASE("zero learning rate leaves parameters untouched") {
  const auto data = separable_two_class(32, 1);
  const auto model = two_class_model(2);
  TrainConfig config;
  config.eta = 0.0;
  config.epochs = 3;
  config.batch_size = 8;
  const auto result = train(model, data, config);
  CHECK((result.model.flatten() - model.flatten()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("full-batch descent on separable data is monotone after warmup") {
  const auto data = separable_two_class(64, 3);
  TrainConfig config;
  config.eta = 0.1;
  config.epochs = 40;
  config.batch_size = 64;
  const auto result = train(two_class_model(4), data, config);
  for (std::size_t e = 1; e + 1 < result.loss_curve.size(); ++e) {
    CHECK(result.loss_curve[e + 1] <= result.loss_curve[e] + 1e-12);
  }
}

TEST_CASE("identical seeds give identical loss curves") {
  const auto data = separable_two_class(48, 5);
  TrainConfig config;
  config.eta = 0.05;
  config.epochs = 12;
  config.batch_size = 16;
  config.seed = 9;
  const auto a = train(two_class_model(6), data, config);
  const auto b = train(two_class_model(6), data, config);
  REQUIRE(a.loss_curve.size() == b.loss_curve.size());
  for (std::size_t e = 0; e < a.loss_curve.size(); ++e) {
    CHECK(a.loss_curve[e] == b.loss_curve[e]);
  }
}

TEST_CASE("divergent configurations raise the dedicated error") {
  // Contradictory labels on one input keep the gradient alive, and a deep
  // linear model with an absurd step compounds until it overflows.
  TrainData data;
  data.x = Matrix::Ones(2, 2);
  data.labels = {0, 1};
  TrainConfig config;
  config.eta = 1e6;
  config.epochs = 100;
  config.batch_size = 2;
  Rng rng(8);
  const auto model = MlpModel::random({2, 8, 8, 2}, Activation::kIdentity, rng);
  CHECK_THROWS_AS((void)train(model, data, config), DivergenceError);
}

TEST_CASE("low-pass filter endpoints") {
  std::vector<Vector> path;
  Rng rng(11);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int t = 0; t < 8; ++t) {
    path.push_back(softmax(Vector::NullaryExpr(3, [&]() { return normal(rng); })).values());
  }
  const auto copy = ema(path, 1.0);
  for (std::size_t t = 0; t < path.size(); ++t) {
    CHECK((copy[t] - path[t]).cwiseAbs().maxCoeff() == 0.0);
  }
  const auto frozen = ema(path, 0.0);
  for (const auto& p : frozen) CHECK((p - path.front()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("filtering a constant stream decays geometrically") {
  const Vector target = softmax((Vector(3) << 0.2, -0.1, 0.5).finished()).values();
  std::vector<Vector> path{softmax((Vector(3) << -1.0, 1.0, 0.0).finished()).values()};
  for (int t = 0; t < 20; ++t) path.push_back(target);
  const double alpha = 0.3;
  const auto smoothed = ema(path, alpha);
  for (std::size_t t = 1; t + 1 < smoothed.size(); ++t) {
    const double before = (smoothed[t] - target).norm();
    const double after = (smoothed[t + 1] - target).norm();
    CHECK(after == doctest::Approx((1.0 - alpha) * before).epsilon(1e-10));
  }
}

TEST_CASE("filtered paths stay on the simplex") {
  Rng rng(13);
  std::normal_distribution<double> normal(0.0, 2.0);
  std::vector<Vector> path;
  for (int t = 0; t < 30; ++t) {
    path.push_back(softmax(Vector::NullaryExpr(4, [&]() { return normal(rng); })).values());
  }
  for (const auto& p : ema(path, 0.05)) CHECK_NOTHROW(ProbVector{p});
}

TEST_CASE("barycentric projection of landmark points") {
  // A one-hot prediction sits exactly on a corner.
  const auto corner = project_barycentric(ProbVector::one_hot(3, 0), 0);
  CHECK(corner.u == doctest::Approx(0.0));
  CHECK(corner.v == doctest::Approx(0.0));

  const auto centroid = project_barycentric(ProbVector::uniform(3), 1);
  CHECK(centroid.u == doctest::Approx(0.5));
  CHECK(centroid.v == doctest::Approx(std::sqrt(3.0) / 6.0));

  // Ten classes collapse to (correct, runner-up, rest).
  Vector p = Vector::Constant(10, 0.2 / 8);
  p(4) = 0.5;
  p(7) = 0.3;
  const auto collapsed = project_barycentric(ProbVector(p), 4);
  const double expected_u = 0.3 + 0.5 * 0.2;
  const double expected_v = 0.5 * std::sqrt(3.0) * 0.2;
  CHECK(collapsed.u == doctest::Approx(expected_u));
  CHECK(collapsed.v == doctest::Approx(expected_v));

  CHECK_THROWS_AS((void)project_barycentric(ProbVector::uniform(2), 0), std::invalid_argument);
}

TEST_CASE("distinct collapsed predictions land on distinct triangle points") {
  Rng rng(14);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int trial = 0; trial < 60; ++trial) {
    const auto a = softmax(Vector::NullaryExpr(3, [&]() { return normal(rng); }));
    const auto b = softmax(Vector::NullaryExpr(3, [&]() { return normal(rng); }));
    const auto pa = project_barycentric(a, 0);
    const auto pb = project_barycentric(b, 0);
    const double point_gap = std::hypot(pa.u - pb.u, pa.v - pb.v);
    const double prob_gap = (a.values() - b.values()).norm();
    if (prob_gap > 1e-9) CHECK(point_gap > 0.0);
    // The planar coordinates recover the vector, so the map cannot collide.
    const double w3 = pa.v / (std::sqrt(3.0) / 2.0);
    const double w2 = pa.u - 0.5 * w3;
    CHECK(w3 == doctest::Approx(a[2]).epsilon(1e-12));
    CHECK(w2 == doctest::Approx(a[1]).epsilon(1e-12));
  }
}

TEST_CASE("barycentric points stay inside the reference triangle") {
  Rng rng(15);
  std::normal_distribution<double> normal(0.0, 1.5);
  for (int trial = 0; trial < 100; ++trial) {
    const auto p = softmax(Vector::NullaryExpr(5, [&]() { return normal(rng); }));
    const auto point = project_barycentric(p, trial % 5);
    CHECK(point.v >= -1e-12);
    CHECK(point.v <= std::sqrt(3.0) / 2 + 1e-12);
    // Inside the two slanted edges.
    CHECK(point.v <= std::sqrt(3.0) * point.u + 1e-9);
    CHECK(point.v <= std::sqrt(3.0) * (1.0 - point.u) + 1e-9);
  }
}

TEST_CASE("zig-zag statistics on degenerate paths") {
  Vector q_star(3);
  q_star << 0.6, 0.3, 0.1;
  const Vector e_y = Vector::Unit(3, 0);
  const std::vector<Vector> constant(5, q_star);
  const auto at_target = zigzag_stats(constant, q_star, e_y);
  CHECK(at_target.min_dist == doctest::Approx(0.0));
  CHECK(at_target.epoch_of_min == 0);
  CHECK(at_target.final_dist == doctest::Approx(0.0));

  // Monotone approach towards a label that coincides with the target.
  std::vector<Vector> approach;
  for (int t = 0; t <= 10; ++t) {
    const double w = t / 10.0;
    approach.push_back((1.0 - w) * Vector::Constant(3, 1.0 / 3) + w * e_y);
  }
  const auto monotone = zigzag_stats(approach, e_y, e_y);
  CHECK(monotone.epoch_of_min == 10);
  CHECK(monotone.min_dist == doctest::Approx(monotone.final_dist));
}

TEST_CASE("area under the curve by trapezoids") {
  CHECK(convergence_time({2.5, 2.5, 2.5, 2.5}) == doctest::Approx(2.5 * 3));
  CHECK(convergence_time({0.0, 0.0, 0.0}) == doctest::Approx(0.0));
  CHECK(convergence_time({1.0, 0.5, 0.25}) == doctest::Approx(1.125));
  CHECK(convergence_time({3.0}) == doctest::Approx(0.0));
  CHECK_THROWS_AS((void)convergence_time({}), std::invalid_argument);
}

TEST_CASE("the area splits across a shared junction point") {
  const std::vector<double> curve{1.0, 0.9, 0.5, 0.4, 0.2, 0.1};
  const std::vector<double> left(curve.begin(), curve.begin() + 3);
  const std::vector<double> right(curve.begin() + 2, curve.end());
  CHECK(convergence_time(curve) ==
        doctest::Approx(convergence_time(left) + convergence_time(right)));
}

TEST_CASE("inflection detection") {
  CHECK(!inflection_epoch({1, 2, 3, 4, 5, 6}).has_value());

  const std::vector<double> unimodal{0.1, 0.4, 0.9, 0.7, 0.5, 0.3};
  auto peak = inflection_epoch(unimodal);
  REQUIRE(peak.has_value());
  CHECK(*peak == 2);

  // Noisy hump: compare against a brute-force scan of every window.
  Rng rng(17);
  std::normal_distribution<double> noise(0.0, 0.02);
  std::vector<double> curve;
  for (int t = 0; t < 40; ++t) {
    const double u = t / 39.0;
    curve.push_back(1.0 - 4.0 * (u - 0.45) * (u - 0.45) + noise(rng));
  }
  const int window = 3;
  const auto got = inflection_epoch(curve, window);
  std::optional<int> expected;
  const int start =
      static_cast<int>(std::max_element(curve.begin(), curve.end()) - curve.begin());
  for (int t = start; t + window - 1 < static_cast<int>(curve.size()); ++t) {
    bool ok = true;
    for (int k = 0; k + 1 < window; ++k) {
      ok = ok && curve[static_cast<std::size_t>(t + k)] > curve[static_cast<std::size_t>(t + k + 1)];
    }
    if (ok) {
      expected = t;
      break;
    }
  }
  REQUIRE(got.has_value() == expected.has_value());
  if (expected) CHECK(*got == *expected);

  CHECK_THROWS_AS((void)inflection_epoch({1.0, 2.0}), std::invalid_argument);
}

TEST_CASE("recorder tracks per-epoch probabilities for chosen examples") {
  const auto data = separable_two_class(40, 19);
  TrainConfig config;
  config.eta = 0.05;
  config.epochs = 10;
  config.batch_size = 8;
  Recorder recorder;
  recorder.tracked = {0, 7, 13};
  recorder.ema_alpha = 0.5;
  const auto result = train(two_class_model(20), data, config, recorder);
  REQUIRE(result.paths.size() == 3);
  for (const auto& path : result.paths) {
    CHECK(path.raw.size() == 11);  // initial snapshot plus one per epoch
    CHECK(path.smoothed.size() == path.raw.size());
    for (const auto& p : path.raw) CHECK_NOTHROW(ProbVector{p});
  }
}

TEST_CASE("early stopping returns the best validation epoch") {
  const auto data = separable_two_class(60, 21);
  const auto val = separable_two_class(20, 22);
  TrainConfig config;
  config.eta = 0.2;
  config.epochs = 60;
  config.batch_size = 12;
  config.patience = 6;
  const auto result = train(two_class_model(23), data, config, {}, &val);
  REQUIRE(!result.val_curve.empty());
  const auto best =
      std::min_element(result.val_curve.begin(), result.val_curve.end()) - result.val_curve.begin();
  CHECK(result.stop_epoch == static_cast<int>(best) + 1);
}
