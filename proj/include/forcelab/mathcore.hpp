#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace forcelab {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Rng = std::mt19937_64;

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

inline void require_finite(const Vector& v, const std::string& what) {
  if (!v.allFinite()) throw std::domain_error(what + ": non-finite entries");
}

inline void require_finite(const Matrix& m, const std::string& what) {
  if (!m.allFinite()) throw std::domain_error(what + ": non-finite entries");
}

/// Thrown when a training step or experiment produces non-finite values.
struct DivergenceError : std::runtime_error {
  explicit DivergenceError(const std::string& msg) : std::runtime_error(msg) {}
};

// Derives an independent stream seed from a base seed and a stream index
// (splitmix64 finalizer). Lets parallel runs share one user-facing seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

/// A point on the probability simplex. Validated on construction:
/// entries in [0,1], summing to one within 1e-9.
class ProbVector {
 public:
  explicit ProbVector(Vector p);
  static ProbVector uniform(int v);
  static ProbVector one_hot(int v, int index);

  const Vector& values() const { return p_; }
  double operator[](Eigen::Index i) const { return p_(i); }
  Eigen::Index size() const { return p_.size(); }
  int argmax() const;
  double entropy() const;       // natural log
  double max_prob() const { return p_.maxCoeff(); }

 private:
  Vector p_;
};

ProbVector softmax(const Vector& z);
Vector log_softmax(const Vector& z);
// Row-wise softmax of a logits matrix; no per-row validation overhead.
Matrix softmax_rows(const Matrix& z);

double logsumexp(const Vector& z);

/// Spearman rank correlation with average ranks for ties and a two-sided
/// p-value from the large-sample t approximation.
struct Correlation {
  double rho;
  double p_value;
};
Correlation spearman(const Vector& a, const Vector& b);

// Regularized incomplete beta I_x(a, b); used for the t-distribution tail.
double incomplete_beta(double a, double b, double x);
// Two-sided p-value of a t statistic with nu degrees of freedom.
double t_two_sided_p(double t, double nu);

Vector average_ranks(const Vector& v);

}  // namespace forcelab
