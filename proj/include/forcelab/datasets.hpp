#pragma once

#include "forcelab/mathcore.hpp"

#include <array>
#include <cstdint>
#include <optional>

namespace forcelab::datasets {

/// Gaussian-mixture classification data with an exact Bayes posterior.
/// Class means have entries drawn from {-delta_mu, 0, delta_mu}.
struct ToyGaussianSpec {
  int num_classes = 3;
  int dim = 30;
  double delta_mu = 1.0;
  double sigma = 1.5;
  int n = 1000;
  std::uint64_t seed = 0;
};

struct LabeledExample {
  Vector x;
  int y = 0;
  Vector q_star;       // exact posterior from the generating means
  double difficulty = 0.0;  // ||q_star - e_y||_2^2
};

struct ToyGaussianData {
  std::vector<LabeledExample> examples;
  std::vector<Vector> class_means;
  double sigma = 0.0;
};

Vector bayes_posterior(const Vector& x, const std::vector<Vector>& means, double sigma);
ToyGaussianData gen_toy_gaussian(const ToyGaussianSpec& spec);

enum class Difficulty { kEasy, kMedium, kHard };

/// Partition by ||q* - e_y||^2; default cuts at 0.2 and 1.0.
Difficulty difficulty_group(const LabeledExample& example,
                            std::pair<double, double> thresholds = {0.2, 1.0});

/// Flips exactly floor(ratio * n) labels to a uniformly random different
/// class; the stored posterior is left untouched. Returns flipped indices.
std::vector<int> flip_labels(std::vector<LabeledExample>& dataset, double noise_ratio,
                             std::uint64_t seed);

// ---------------------------------------------------------------------------
// The 256 assignments from four two-attribute objects to 2-bit codes.

enum class MappingClass { kCompositional, kHolistic, kDegenerate, kOther };

struct MappingSpec {
  // codes[object] with object index = 2*attr0 + attr1 and code in 0..3.
  std::array<int, 4> codes{};
  MappingClass cls = MappingClass::kOther;
  int id = 0;  // base-4 encoding of `codes`
};

std::vector<MappingSpec> enumerate_mappings();
MappingClass classify_mapping(const std::array<int, 4>& codes);
const char* mapping_class_name(MappingClass cls);

inline int mapping_code_bit(int code, int bit) { return (code >> (1 - bit)) & 1; }

// ---------------------------------------------------------------------------
// Token-pair corpora over a 16-symbol vocabulary with fixed random features.

struct TwoGramSpec {
  int vocab = 16;
  int feature_dim = 8;
  int length = 1024;
  std::uint64_t seed = 0;
};

struct TwoGramData {
  std::vector<int> positive;
  std::vector<int> negative;
  Matrix features;  // feature_dim x vocab, one column per context token
};

TwoGramData gen_two_gram(const TwoGramSpec& spec);

}  // namespace forcelab::datasets
