#include "forcelab/mlp.hpp"

#include <cmath>

namespace forcelab {

double activate(Activation a, double x) {
  switch (a) {
    case Activation::kIdentity: return x;
    case Activation::kSmoothRelu:
      if (x > 30.0) return x;
      if (x < -30.0) return std::exp(x);
      return std::log1p(std::exp(x));
    case Activation::kTanh: return std::tanh(x);
  }
  return x;
}

double activate_grad(Activation a, double x) {
  switch (a) {
    case Activation::kIdentity: return 1.0;
    case Activation::kSmoothRelu: {
      if (x > 30.0) return 1.0;
      if (x < -30.0) return std::exp(x);
      return 1.0 / (1.0 + std::exp(-x));
    }
    case Activation::kTanh: {
      const double t = std::tanh(x);
      return 1.0 - t * t;
    }
  }
  return 1.0;
}

MlpModel::MlpModel(std::vector<MlpLayer> layers) : layers_(std::move(layers)) {
  require(!layers_.empty(), "MlpModel: no layers");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    require(l.weight.rows() == l.bias.size(), "MlpModel: weight/bias shape mismatch");
    if (i > 0) {
      require(l.weight.cols() == layers_[i - 1].weight.rows(),
              "MlpModel: consecutive layer dimensions incompatible");
    }
    require_finite(l.weight, "MlpModel weight");
    require_finite(l.bias, "MlpModel bias");
  }
}

MlpModel MlpModel::random(const std::vector<int>& dims, Activation hidden, Rng& rng,
                          double weight_scale) {
  require(dims.size() >= 2, "MlpModel::random: need input and output dims");
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<MlpLayer> layers;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    MlpLayer l;
    const int in = dims[i], out = dims[i + 1];
    require(in > 0 && out > 0, "MlpModel::random: nonpositive width");
    const double scale = weight_scale * std::sqrt(2.0 / in);
    l.weight = Matrix::NullaryExpr(out, in, [&]() { return scale * normal(rng); });
    l.bias = Vector::Zero(out);
    l.act = (i + 2 < dims.size()) ? hidden : Activation::kIdentity;
    layers.push_back(std::move(l));
  }
  return MlpModel(std::move(layers));
}

int MlpModel::input_dim() const { return static_cast<int>(layers_.front().weight.cols()); }
int MlpModel::output_dim() const { return static_cast<int>(layers_.back().weight.rows()); }

Eigen::Index MlpModel::param_count() const {
  Eigen::Index n = 0;
  for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
  return n;
}

Matrix MlpModel::forward_batch(const Matrix& x_rows, ForwardCache& cache) const {
  require(x_rows.cols() == input_dim(), "MlpModel: input dimension mismatch");
  cache.pre.clear();
  cache.post.clear();
  cache.post.push_back(x_rows);
  Matrix h = x_rows;
  for (const auto& l : layers_) {
    Matrix z = (h * l.weight.transpose()).rowwise() + l.bias.transpose();
    cache.pre.push_back(z);
    if (l.act == Activation::kIdentity) {
      h = z;
    } else {
      h = z.unaryExpr([&l](double v) { return activate(l.act, v); });
    }
    cache.post.push_back(h);
  }
  return h;
}

Matrix MlpModel::logits_batch(const Matrix& x_rows) const {
  ForwardCache cache;
  return forward_batch(x_rows, cache);
}

Vector MlpModel::logits(const Vector& x) const {
  return logits_batch(x.transpose()).row(0).transpose();
}

Vector MlpModel::backward_batch(const ForwardCache& cache, const Matrix& dloss_dz) const {
  Vector grad = Vector::Zero(param_count());
  Matrix delta = dloss_dz;  // dL/d pre-activation of the current layer
  Eigen::Index offset = param_count();
  for (std::size_t li = layers_.size(); li-- > 0;) {
    const auto& l = layers_[li];
    if (l.act != Activation::kIdentity) {
      delta = delta.cwiseProduct(
          cache.pre[li].unaryExpr([&l](double v) { return activate_grad(l.act, v); }));
    }
    const Matrix& input = cache.post[li];  // n x in
    const Matrix gw = delta.transpose() * input;
    const Vector gb = delta.colwise().sum().transpose();
    offset -= l.weight.size() + l.bias.size();
    grad.segment(offset, l.weight.size()) = Eigen::Map<const Vector>(gw.data(), gw.size());
    grad.segment(offset + l.weight.size(), l.bias.size()) = gb;
    if (li > 0) delta = delta * l.weight;  // propagate to previous post-activation
  }
  return grad;
}

Vector MlpModel::flatten() const {
  Vector theta(param_count());
  Eigen::Index offset = 0;
  for (const auto& l : layers_) {
    theta.segment(offset, l.weight.size()) =
        Eigen::Map<const Vector>(l.weight.data(), l.weight.size());
    offset += l.weight.size();
    theta.segment(offset, l.bias.size()) = l.bias;
    offset += l.bias.size();
  }
  return theta;
}

void MlpModel::unflatten(const Vector& theta) {
  require(theta.size() == param_count(), "MlpModel::unflatten: size mismatch");
  Eigen::Index offset = 0;
  for (auto& l : layers_) {
    l.weight = Eigen::Map<const Matrix>(theta.data() + offset, l.weight.rows(), l.weight.cols());
    offset += l.weight.size();
    l.bias = theta.segment(offset, l.bias.size());
    offset += l.bias.size();
  }
}

void MlpModel::axpy(double alpha, const Vector& direction) {
  require(direction.size() == param_count(), "MlpModel::axpy: size mismatch");
  Eigen::Index offset = 0;
  for (auto& l : layers_) {
    l.weight += alpha * Eigen::Map<const Matrix>(direction.data() + offset, l.weight.rows(),
                                                 l.weight.cols());
    offset += l.weight.size();
    l.bias += alpha * direction.segment(offset, l.bias.size());
    offset += l.bias.size();
  }
}

JacobianBlock per_example_jacobian(const MlpModel& model, const Vector& x, int example_id) {
  require(x.size() == model.input_dim(), "per_example_jacobian: input dimension mismatch");
  const int v = model.output_dim();
  ForwardCache cache;
  model.forward_batch(x.transpose(), cache);

  JacobianBlock block;
  block.example_id = example_id;
  block.rows.resize(v, model.param_count());
  // One reverse pass per logit.
  Matrix seed = Matrix::Zero(1, v);
  for (int i = 0; i < v; ++i) {
    seed.setZero();
    seed(0, i) = 1.0;
    block.rows.row(i) = model.backward_batch(cache, seed).transpose();
  }
  return block;
}

}  // namespace forcelab
