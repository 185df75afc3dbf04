#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "forcelab/datasets.hpp"

#include <cmath>
#include <set>

using namespace forcelab;
using namespace forcelab::datasets;

TEST_CASE("posterior peaks at the nearest class mean") {
  std::vector<Vector> means;
  Vector m0(2), m1(2), m2(2);
  m0 << 0, 0;
  m1 << 4, 0;
  m2 << 0, 4;
  means = {m0, m1, m2};
  for (int v = 0; v < 3; ++v) {
    const Vector q = bayes_posterior(means[static_cast<std::size_t>(v)], means, 1.0);
    Eigen::Index arg;
    q.maxCoeff(&arg);
    CHECK(arg == v);
  }
}

TEST_CASE("generated posteriors live on the simplex") {
  ToyGaussianSpec spec;
  spec.n = 500;
  spec.seed = 3;
  const auto data = gen_toy_gaussian(spec);
  REQUIRE(data.examples.size() == 500);
  for (const auto& ex : data.examples) {
    CHECK(ex.q_star.minCoeff() >= 0.0);
    CHECK(ex.q_star.sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(ex.difficulty == doctest::Approx((ex.q_star - Vector::Unit(3, ex.y)).squaredNorm()));
  }
}

TEST_CASE("posterior matches a rejection-sampling estimate") {
  // Low-dimensional spec so a ball around the probe point collects enough
  // mass; the oracle never touches the closed form.
  ToyGaussianSpec spec;
  spec.dim = 2;
  spec.sigma = 1.0;
  spec.n = 1;
  spec.seed = 12;
  const auto data = gen_toy_gaussian(spec);
  const Vector probe = data.examples[0].x;
  const Vector q = bayes_posterior(probe, data.class_means, spec.sigma);

  Rng rng(99);
  std::uniform_int_distribution<int> label(0, spec.num_classes - 1);
  std::normal_distribution<double> noise(0.0, spec.sigma);
  const double radius = 0.35;
  Vector counts = Vector::Zero(spec.num_classes);
  for (int draw = 0; draw < 1000000; ++draw) {
    const int y = label(rng);
    Vector x = data.class_means[static_cast<std::size_t>(y)];
    for (int d = 0; d < spec.dim; ++d) x(d) += noise(rng);
    if ((x - probe).norm() <= radius) counts(y) += 1.0;
  }
  REQUIRE(counts.sum() > 500);
  const Vector estimate = counts / counts.sum();
  CHECK((estimate - q).cwiseAbs().maxCoeff() < 0.01);
}

TEST_CASE("difficulty grouping") {
  LabeledExample ex;
  ex.q_star = Vector::Unit(3, 1);
  ex.y = 1;
  ex.difficulty = 0.0;
  CHECK(difficulty_group(ex) == Difficulty::kEasy);

  ex.difficulty = 2.0;  // one-hot on a wrong class
  CHECK(difficulty_group(ex) == Difficulty::kHard);

  Vector q(3);
  q << 0.5, 0.5, 0.0;
  ex.q_star = q;
  ex.y = 0;
  ex.difficulty = (q - Vector::Unit(3, 0)).squaredNorm();
  CHECK(ex.difficulty == doctest::Approx(0.5));
  CHECK(difficulty_group(ex) == Difficulty::kMedium);

  CHECK_THROWS_AS((void)difficulty_group(ex, {1.0, 0.2}), std::invalid_argument);
}

TEST_CASE("label flipping count, reproducibility, and untouched posterior") {
  ToyGaussianSpec spec;
  spec.n = 1000;
  spec.seed = 4;
  auto clean = gen_toy_gaussian(spec);

  auto untouched = clean.examples;
  CHECK(flip_labels(untouched, 0.0, 1).empty());
  for (std::size_t i = 0; i < untouched.size(); ++i) {
    CHECK(untouched[i].y == clean.examples[i].y);
  }

  auto all = clean.examples;
  flip_labels(all, 1.0, 2);
  for (std::size_t i = 0; i < all.size(); ++i) CHECK(all[i].y != clean.examples[i].y);

  auto a = clean.examples;
  auto b = clean.examples;
  const auto flipped_a = flip_labels(a, 0.2, 7);
  const auto flipped_b = flip_labels(b, 0.2, 7);
  CHECK(flipped_a.size() == 200);
  CHECK(flipped_a == flipped_b);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].y == b[i].y);
    CHECK((a[i].q_star - clean.examples[i].q_star).cwiseAbs().maxCoeff() == 0.0);
  }
  for (int idx : flipped_a) {
    CHECK(a[static_cast<std::size_t>(idx)].y != clean.examples[static_cast<std::size_t>(idx)].y);
  }
}

TEST_CASE("the 256 assignments partition into the expected classes") {
  const auto mappings = enumerate_mappings();
  REQUIRE(mappings.size() == 256);
  int comp = 0, holistic = 0, degenerate = 0, other = 0;
  std::set<int> ids;
  for (const auto& m : mappings) {
    ids.insert(m.id);
    switch (m.cls) {
      case MappingClass::kCompositional: ++comp; break;
      case MappingClass::kHolistic: ++holistic; break;
      case MappingClass::kDegenerate: ++degenerate; break;
      case MappingClass::kOther: ++other; break;
    }
  }
  CHECK(ids.size() == 256);
  CHECK(comp == 8);
  CHECK(holistic == 16);
  CHECK(degenerate == 4);
  CHECK(other == 228);
}

TEST_CASE("the identity-structured assignment is compositional") {
  // First output bit copies the first attribute, second bit the second.
  std::array<int, 4> codes{};
  for (int object = 0; object < 4; ++object) {
    const int a0 = object / 2, a1 = object % 2;
    codes[static_cast<std::size_t>(object)] = 2 * a0 + a1;
  }
  CHECK(classify_mapping(codes) == MappingClass::kCompositional);
}

TEST_CASE("token corpora are uniform, paired, and reproducible") {
  TwoGramSpec spec;
  spec.length = 10000;
  spec.seed = 5;
  const auto data = gen_two_gram(spec);
  CHECK(data.positive.size() == data.negative.size());
  CHECK(data.features.rows() == spec.feature_dim);
  CHECK(data.features.cols() == 16);

  std::array<int, 16> counts{};
  for (int t : data.positive) ++counts[static_cast<std::size_t>(t)];
  const double expected = spec.length / 16.0;
  const double sigma = std::sqrt(spec.length * (1.0 / 16) * (15.0 / 16));
  for (int c : counts) CHECK(std::abs(c - expected) <= 3.0 * sigma);

  const auto again = gen_two_gram(spec);
  CHECK(again.positive == data.positive);
  CHECK(again.negative == data.negative);
  CHECK((again.features - data.features).cwiseAbs().maxCoeff() == 0.0);
}
