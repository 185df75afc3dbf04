#pragma once

#include "forcelab/mathcore.hpp"

namespace forcelab {

// Differentiable activations only; a first-order analysis needs smooth models,
// so the piecewise-linear ReLU is replaced by softplus.
enum class Activation { kIdentity, kSmoothRelu, kTanh };

double activate(Activation a, double x);
double activate_grad(Activation a, double x);

struct MlpLayer {
  Matrix weight;  // out x in
  Vector bias;    // out
  Activation act = Activation::kIdentity;
};

struct ForwardCache {
  std::vector<Matrix> pre;   // pre-activations per layer, rows = examples
  std::vector<Matrix> post;  // post-activations per layer (post[0] is the input)
};

/// Fully connected network producing logits. Parameters flatten layer by
/// layer as [vec(W_0); b_0; vec(W_1); b_1; ...] with column-major vec.
class MlpModel {
 public:
  MlpModel() = default;
  explicit MlpModel(std::vector<MlpLayer> layers);

  /// Random init: He-style scaling on weights, zero biases. `dims` lists
  /// layer widths input-first, e.g. {30, 16, 16, 3}. Hidden layers use
  /// `hidden`; the output layer is linear.
  static MlpModel random(const std::vector<int>& dims, Activation hidden, Rng& rng,
                         double weight_scale = 1.0);

  int input_dim() const;
  int output_dim() const;
  Eigen::Index param_count() const;
  const std::vector<MlpLayer>& layers() const { return layers_; }

  Vector logits(const Vector& x) const;
  Matrix logits_batch(const Matrix& x_rows) const;
  Matrix forward_batch(const Matrix& x_rows, ForwardCache& cache) const;

  /// Gradient of a scalar loss w.r.t. the flat parameters, given dL/dZ for a
  /// batch (rows aligned with x_rows). The cache must come from forward_batch.
  Vector backward_batch(const ForwardCache& cache, const Matrix& dloss_dz) const;

  Vector flatten() const;
  void unflatten(const Vector& theta);
  void axpy(double alpha, const Vector& direction);  // theta += alpha * direction

 private:
  std::vector<MlpLayer> layers_;
};

/// Rows are the parameter gradients of each logit: row i = d z_i / d theta.
struct JacobianBlock {
  Matrix rows;         // V x d
  int example_id = -1;
};

JacobianBlock per_example_jacobian(const MlpModel& model, const Vector& x, int example_id = -1);

}  // namespace forcelab
