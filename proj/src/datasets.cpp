#include "forcelab/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace forcelab::datasets {

Vector bayes_posterior(const Vector& x, const std::vector<Vector>& means, double sigma) {
  require(!means.empty(), "bayes_posterior: no class means");
  Vector scores(static_cast<Eigen::Index>(means.size()));
  for (std::size_t v = 0; v < means.size(); ++v) {
    scores(static_cast<Eigen::Index>(v)) =
        -(x - means[v]).squaredNorm() / (2.0 * sigma * sigma);
  }
  return softmax(scores).values();
}

ToyGaussianData gen_toy_gaussian(const ToyGaussianSpec& spec) {
  require(spec.num_classes >= 2, "gen_toy_gaussian: need at least 2 classes");
  require(spec.sigma > 0.0, "gen_toy_gaussian: sigma must be positive");
  require(spec.dim >= 1 && spec.n >= 1, "gen_toy_gaussian: bad dims");

  Rng rng(spec.seed);
  std::uniform_int_distribution<int> tri(0, 2);
  ToyGaussianData data;
  data.sigma = spec.sigma;
  data.class_means.reserve(static_cast<std::size_t>(spec.num_classes));
  for (int v = 0; v < spec.num_classes; ++v) {
    Vector mu(spec.dim);
    for (int d = 0; d < spec.dim; ++d) mu(d) = spec.delta_mu * (tri(rng) - 1);
    data.class_means.push_back(std::move(mu));
  }

  std::uniform_int_distribution<int> label(0, spec.num_classes - 1);
  std::normal_distribution<double> noise(0.0, spec.sigma);
  data.examples.reserve(static_cast<std::size_t>(spec.n));
  for (int i = 0; i < spec.n; ++i) {
    LabeledExample ex;
    ex.y = label(rng);
    ex.x = data.class_means[static_cast<std::size_t>(ex.y)];
    for (int d = 0; d < spec.dim; ++d) ex.x(d) += noise(rng);
    ex.q_star = bayes_posterior(ex.x, data.class_means, spec.sigma);
    Vector gap = ex.q_star;
    gap(ex.y) -= 1.0;
    ex.difficulty = gap.squaredNorm();
    data.examples.push_back(std::move(ex));
  }
  return data;
}

Difficulty difficulty_group(const LabeledExample& example, std::pair<double, double> thresholds) {
  require(thresholds.first < thresholds.second, "difficulty_group: thresholds must be ordered");
  if (example.difficulty < thresholds.first) return Difficulty::kEasy;
  if (example.difficulty < thresholds.second) return Difficulty::kMedium;
  return Difficulty::kHard;
}

std::vector<int> flip_labels(std::vector<LabeledExample>& dataset, double noise_ratio,
                             std::uint64_t seed) {
  require(noise_ratio >= 0.0 && noise_ratio <= 1.0, "flip_labels: ratio in [0,1]");
  const int n = static_cast<int>(dataset.size());
  const int n_flip = static_cast<int>(std::floor(noise_ratio * n));
  if (n_flip == 0 || n == 0) return {};

  Rng rng(seed);
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(static_cast<std::size_t>(n_flip));
  std::sort(order.begin(), order.end());

  const int v = static_cast<int>(dataset.front().q_star.size());
  std::uniform_int_distribution<int> offset(1, v - 1);
  for (int idx : order) {
    auto& ex = dataset[static_cast<std::size_t>(idx)];
    ex.y = (ex.y + offset(rng)) % v;
  }
  return order;
}

namespace {

// True when output bit `bit` of the mapping is a function of attribute
// `attr` alone and actually depends on it.
bool bit_encodes_attribute(const std::array<int, 4>& codes, int bit, int attr) {
  int value_of[2];
  for (int val = 0; val < 2; ++val) {
    // Two objects share this attribute value; both must agree on the bit.
    int obj_a, obj_b;
    if (attr == 0) {
      obj_a = 2 * val + 0;
      obj_b = 2 * val + 1;
    } else {
      obj_a = 0 * 2 + val;
      obj_b = 1 * 2 + val;
    }
    const int bit_a = mapping_code_bit(codes[static_cast<std::size_t>(obj_a)], bit);
    const int bit_b = mapping_code_bit(codes[static_cast<std::size_t>(obj_b)], bit);
    if (bit_a != bit_b) return false;
    value_of[val] = bit_a;
  }
  return value_of[0] != value_of[1];
}

}  // namespace

MappingClass classify_mapping(const std::array<int, 4>& codes) {
  if (codes[0] == codes[1] && codes[1] == codes[2] && codes[2] == codes[3]) {
    return MappingClass::kDegenerate;
  }
  std::array<bool, 4> used{};
  bool bijection = true;
  for (int c : codes) {
    if (used[static_cast<std::size_t>(c)]) bijection = false;
    used[static_cast<std::size_t>(c)] = true;
  }
  if (!bijection) return MappingClass::kOther;

  // Compositional: each output bit encodes a distinct attribute.
  for (int perm = 0; perm < 2; ++perm) {
    const int attr_for_bit0 = perm;
    const int attr_for_bit1 = 1 - perm;
    if (bit_encodes_attribute(codes, 0, attr_for_bit0) &&
        bit_encodes_attribute(codes, 1, attr_for_bit1)) {
      return MappingClass::kCompositional;
    }
  }
  return MappingClass::kHolistic;
}

std::vector<MappingSpec> enumerate_mappings() {
  std::vector<MappingSpec> all;
  all.reserve(256);
  for (int id = 0; id < 256; ++id) {
    MappingSpec m;
    m.id = id;
    int rest = id;
    for (int obj = 0; obj < 4; ++obj) {
      m.codes[static_cast<std::size_t>(obj)] = rest % 4;
      rest /= 4;
    }
    m.cls = classify_mapping(m.codes);
    all.push_back(m);
  }
  return all;
}

const char* mapping_class_name(MappingClass cls) {
  switch (cls) {
    case MappingClass::kCompositional: return "compositional";
    case MappingClass::kHolistic: return "holistic";
    case MappingClass::kDegenerate: return "degenerate";
    case MappingClass::kOther: return "other";
  }
  return "other";
}

TwoGramData gen_two_gram(const TwoGramSpec& spec) {
  require(spec.vocab >= 2, "gen_two_gram: vocab too small");
  require(spec.feature_dim >= 1 && spec.length >= 1, "gen_two_gram: bad dims");
  Rng rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  TwoGramData data;
  data.features = Matrix::NullaryExpr(spec.feature_dim, spec.vocab, [&]() { return normal(rng); });
  std::uniform_int_distribution<int> token(0, spec.vocab - 1);
  data.positive.resize(static_cast<std::size_t>(spec.length));
  data.negative.resize(static_cast<std::size_t>(spec.length));
  for (auto& t : data.positive) t = token(rng);
  for (auto& t : data.negative) t = token(rng);
  return data;
}

}  // namespace forcelab::datasets
