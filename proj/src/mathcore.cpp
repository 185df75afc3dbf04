#include "forcelab/mathcore.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace forcelab {

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

ProbVector::ProbVector(Vector p) : p_(std::move(p)) {
  require(p_.size() > 0, "ProbVector: empty");
  require_finite(p_, "ProbVector");
  const double sum = p_.sum();
  if (std::abs(sum - 1.0) > 1e-9 || p_.minCoeff() < -1e-12 || p_.maxCoeff() > 1.0 + 1e-12) {
    throw std::domain_error("ProbVector: not on the simplex");
  }
}

ProbVector ProbVector::uniform(int v) {
  require(v >= 1, "ProbVector::uniform: v >= 1");
  return ProbVector(Vector::Constant(v, 1.0 / v));
}

ProbVector ProbVector::one_hot(int v, int index) {
  require(index >= 0 && index < v, "ProbVector::one_hot: index out of range");
  Vector p = Vector::Zero(v);
  p(index) = 1.0;
  return ProbVector(std::move(p));
}

int ProbVector::argmax() const {
  Eigen::Index i;
  p_.maxCoeff(&i);
  return static_cast<int>(i);
}

double ProbVector::entropy() const {
  double h = 0.0;
  for (Eigen::Index i = 0; i < p_.size(); ++i) {
    if (p_(i) > 0.0) h -= p_(i) * std::log(p_(i));
  }
  return h;
}

double logsumexp(const Vector& z) {
  const double m = z.maxCoeff();
  return m + std::log((z.array() - m).exp().sum());
}

ProbVector softmax(const Vector& z) {
  require_finite(z, "softmax");
  const double m = z.maxCoeff();
  Vector e = (z.array() - m).exp();
  return ProbVector(e / e.sum());
}

Vector log_softmax(const Vector& z) {
  require_finite(z, "log_softmax");
  return z.array() - logsumexp(z);
}

Matrix softmax_rows(const Matrix& z) {
  Matrix p(z.rows(), z.cols());
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const double m = z.row(r).maxCoeff();
    Eigen::RowVectorXd e = (z.row(r).array() - m).exp();
    p.row(r) = e / e.sum();
  }
  return p;
}

Vector average_ranks(const Vector& v) {
  const Eigen::Index n = v.size();
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](Eigen::Index a, Eigen::Index b) { return v(a) < v(b); });

  Vector ranks(n);
  Eigen::Index i = 0;
  while (i < n) {
    Eigen::Index j = i;
    while (j + 1 < n && v(idx[static_cast<std::size_t>(j + 1)]) == v(idx[static_cast<std::size_t>(i)])) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;  // 1-based average rank
    for (Eigen::Index k = i; k <= j; ++k) ranks(idx[static_cast<std::size_t>(k)]) = r;
    i = j + 1;
  }
  return ranks;
}

namespace {

double beta_cont_fraction(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 3e-14;
  constexpr double kTiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  require(a > 0.0 && b > 0.0, "incomplete_beta: a,b > 0");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                          a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return front * beta_cont_fraction(a, b, x) / a;
  }
  return 1.0 - front * beta_cont_fraction(b, a, 1.0 - x) / b;
}

double t_two_sided_p(double t, double nu) {
  if (!std::isfinite(t)) return 0.0;
  return incomplete_beta(0.5 * nu, 0.5, nu / (nu + t * t));
}

Correlation spearman(const Vector& a, const Vector& b) {
  require(a.size() == b.size(), "spearman: length mismatch");
  require(a.size() >= 3, "spearman: need at least 3 points");
  if (a.minCoeff() == a.maxCoeff() || b.minCoeff() == b.maxCoeff()) {
    throw std::domain_error("spearman: correlation undefined for constant input");
  }
  const Vector ra = average_ranks(a);
  const Vector rb = average_ranks(b);
  const double ma = ra.mean(), mb = rb.mean();
  const Vector da = ra.array() - ma, db = rb.array() - mb;
  const double denom = std::sqrt(da.squaredNorm() * db.squaredNorm());
  if (denom == 0.0) throw std::domain_error("spearman: zero rank variance");
  double rho = da.dot(db) / denom;
  rho = std::clamp(rho, -1.0, 1.0);

  const double n = static_cast<double>(a.size());
  double p = 0.0;
  if (std::abs(rho) < 1.0) {
    const double t = rho * std::sqrt((n - 2.0) / (1.0 - rho * rho));
    p = t_two_sided_p(t, n - 2.0);
  }
  return {rho, p};
}

}  // namespace forcelab
