#pragma once

// Feed-forward networks with exact input Jacobians, exact second directional
// derivatives and reverse-mode parameter gradients. Activations are limited to
// smooth ones so every derivative used by the geometry is analytic.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "rfpt/error.hpp"
#include "rfpt/numerics.hpp"
#include "rfpt/random.hpp"

namespace rfpt::nnet {

enum class Activation : int { Tanh = 0, Softplus = 1, Identity = 2 };

namespace detail {

inline double softplus(double x) {
  return x > 30.0 ? x : (x < -30.0 ? std::exp(x) : std::log1p(std::exp(x)));
}
inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Writes phi(x), phi'(x) and optionally phi''(x) elementwise.
inline void activate(Activation act, const Vector& pre, Vector& out, Vector& d1, Vector* d2) {
  const Eigen::Index n = pre.size();
  out.resize(n);
  d1.resize(n);
  if (d2) d2->resize(n);
  switch (act) {
    case Activation::Tanh:
      for (Eigen::Index i = 0; i < n; ++i) {
        const double t = std::tanh(pre(i));
        out(i) = t;
        d1(i) = 1.0 - t * t;
        if (d2) (*d2)(i) = -2.0 * t * (1.0 - t * t);
      }
      break;
    case Activation::Softplus:
      for (Eigen::Index i = 0; i < n; ++i) {
        const double s = sigmoid(pre(i));
        out(i) = softplus(pre(i));
        d1(i) = s;
        if (d2) (*d2)(i) = s * (1.0 - s);
      }
      break;
    case Activation::Identity:
      out = pre;
      d1.setOnes();
      if (d2) d2->setZero();
      break;
  }
}

}  // namespace detail

struct Layer {
  Matrix weight;  // out x in
  Vector bias;    // out
  Activation activation = Activation::Identity;
};

/// Gradient structure mirroring an Mlp's parameters.
struct MlpGradient {
  std::vector<Matrix> weight;
  std::vector<Vector> bias;

  void set_zero() {
    for (auto& w : weight) w.setZero();
    for (auto& b : bias) b.setZero();
  }
  double squared_norm() const {
    double s = 0.0;
    for (const auto& w : weight) s += w.squaredNorm();
    for (const auto& b : bias) s += b.squaredNorm();
    return s;
  }
};

class Mlp {
 public:
  Mlp() = default;

  explicit Mlp(std::vector<Layer> layers) : layers_(std::move(layers)) {
    require(!layers_.empty(), Errc::DimensionMismatch, "Mlp needs at least one layer");
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto& l = layers_[i];
      require(l.weight.rows() == l.bias.size() && l.weight.rows() > 0 && l.weight.cols() > 0,
              Errc::DimensionMismatch, "layer " + std::to_string(i) + " weight/bias mismatch");
      if (i > 0) {
        require(l.weight.cols() == layers_[i - 1].weight.rows(), Errc::DimensionMismatch,
                "layer " + std::to_string(i) + " does not chain");
      }
    }
  }

  /// Glorot-uniform weights, zero biases. `sizes` = {in, hidden..., out};
  /// `activations` has one entry per layer.
  static Mlp random(const std::vector<int>& sizes, const std::vector<Activation>& activations,
                    Rng& rng) {
    require(sizes.size() >= 2 && activations.size() == sizes.size() - 1,
            Errc::DimensionMismatch, "Mlp::random size/activation count mismatch");
    std::vector<Layer> layers;
    for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
      const double a = std::sqrt(6.0 / (sizes[i] + sizes[i + 1]));
      std::uniform_real_distribution<double> u(-a, a);
      Layer l;
      l.weight.resize(sizes[i + 1], sizes[i]);
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c)
        for (Eigen::Index r = 0; r < l.weight.rows(); ++r) l.weight(r, c) = u(rng);
      l.bias = Vector::Zero(sizes[i + 1]);
      l.activation = activations[i];
      layers.push_back(std::move(l));
    }
    return Mlp(std::move(layers));
  }

  int input_dim() const { return static_cast<int>(layers_.front().weight.cols()); }
  int output_dim() const { return static_cast<int>(layers_.back().weight.rows()); }
  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& layers() { return layers_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
    return n;
  }

  MlpGradient zero_gradient() const {
    MlpGradient g;
    for (const auto& l : layers_) {
      g.weight.push_back(Matrix::Zero(l.weight.rows(), l.weight.cols()));
      g.bias.push_back(Vector::Zero(l.bias.size()));
    }
    return g;
  }

  Vector forward(const Vector& x) const {
    check_input(x);
    Vector a = x, d1;
    for (const auto& l : layers_) {
      const Vector pre = l.weight * a + l.bias;
      detail::activate(l.activation, pre, a, d1, nullptr);
    }
    return a;
  }

  /// Exact d forward / d x, output_dim x input_dim.
  Matrix input_jacobian(const Vector& x, Vector* value = nullptr) const {
    check_input(x);
    Vector a = x, d1;
    Matrix jac = Matrix::Identity(x.size(), x.size());
    for (const auto& l : layers_) {
      const Vector pre = l.weight * a + l.bias;
      detail::activate(l.activation, pre, a, d1, nullptr);
      jac = d1.asDiagonal() * (l.weight * jac);
    }
    if (value) *value = a;
    return jac;
  }

  /// Second derivative of t -> forward(x + t v) at t = 0.
  Vector second_directional(const Vector& x, const Vector& v) const {
    check_input(x);
    Vector a = x, da = v, dda = Vector::Zero(x.size());
    Vector d1, d2, next;
    for (const auto& l : layers_) {
      const Vector pre = l.weight * a + l.bias;
      const Vector dpre = l.weight * da;
      const Vector ddpre = l.weight * dda;
      detail::activate(l.activation, pre, next, d1, &d2);
      a = next;
      dda = d2.cwiseProduct(dpre.cwiseProduct(dpre)) + d1.cwiseProduct(ddpre);
      da = d1.cwiseProduct(dpre);
    }
    return dda;
  }

  /// Reverse-mode pass. Accumulates parameter gradients of <upstream, forward(x)>
  /// into `grad` and returns the gradient with respect to x.
  Vector backward(const Vector& x, const Vector& upstream, MlpGradient& grad) const {
    check_input(x);
    std::vector<Vector> inputs;
    std::vector<Vector> slopes;
    inputs.reserve(layers_.size());
    slopes.reserve(layers_.size());
    Vector a = x, d1, next;
    for (const auto& l : layers_) {
      inputs.push_back(a);
      detail::activate(l.activation, Vector(l.weight * a + l.bias), next, d1, nullptr);
      slopes.push_back(d1);
      a = next;
    }
    require(upstream.size() == a.size(), Errc::DimensionMismatch, "upstream gradient size");
    Vector delta = upstream;
    for (std::size_t i = layers_.size(); i-- > 0;) {
      delta = delta.cwiseProduct(slopes[i]);
      grad.weight[i].noalias() += delta * inputs[i].transpose();
      grad.bias[i] += delta;
      delta = layers_[i].weight.transpose() * delta;
    }
    return delta;
  }

  /// params += scale * grad, skipping frozen layers.
  void apply(const MlpGradient& step, double scale, const std::vector<bool>& frozen = {}) {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      if (i < frozen.size() && frozen[i]) continue;
      layers_[i].weight += scale * step.weight[i];
      layers_[i].bias += scale * step.bias[i];
    }
  }

  bool all_finite() const {
    for (const auto& l : layers_)
      if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
    return true;
  }

  friend bool operator==(const Mlp& a, const Mlp& b) {
    if (a.layers_.size() != b.layers_.size()) return false;
    for (std::size_t i = 0; i < a.layers_.size(); ++i) {
      const auto& la = a.layers_[i];
      const auto& lb = b.layers_[i];
      if (la.activation != lb.activation || la.weight.rows() != lb.weight.rows() ||
          la.weight.cols() != lb.weight.cols() || la.weight != lb.weight || la.bias != lb.bias)
        return false;
    }
    return true;
  }

 private:
  void check_input(const Vector& x) const {
    require(x.size() == input_dim(), Errc::DimensionMismatch,
            "expected input of size " + std::to_string(input_dim()) + ", got " +
                std::to_string(x.size()));
  }

  std::vector<Layer> layers_;
};

/// Rows are samples. Targets are either regression vectors or class labels.
struct TrainBatch {
  Matrix inputs;
  Matrix targets;
  std::vector<int> labels;

  Eigen::Index size() const { return inputs.rows(); }
};

/// Loss on one output: returns the value and writes dL/d output.
/// `sample` indexes the row within the batch.
using Loss = std::function<double(const Vector& output, const TrainBatch& batch,
                                  Eigen::Index sample, Vector& grad)>;

inline Loss squared_error_loss() {
  return [](const Vector& out, const TrainBatch& b, Eigen::Index i, Vector& g) {
    const Vector diff = out - b.targets.row(i).transpose();
    g = diff;
    return 0.5 * diff.squaredNorm();
  };
}

inline Loss cross_entropy_loss() {
  return [](const Vector& logits, const TrainBatch& b, Eigen::Index i, Vector& g) {
    const double top = logits.maxCoeff();
    const Vector e = (logits.array() - top).exp();
    const double z = e.sum();
    g = e / z;
    const int y = b.labels[static_cast<std::size_t>(i)];
    g(y) -= 1.0;
    return -(logits(y) - top - std::log(z));
  };
}

/// Mean loss over the batch and its exact parameter gradient.
inline std::pair<double, MlpGradient> param_gradients(const Mlp& net, const Loss& loss,
                                                      const TrainBatch& batch) {
  require(batch.size() >= 1, Errc::DimensionMismatch, "empty batch");
  require(batch.inputs.cols() == net.input_dim(), Errc::DimensionMismatch,
          "batch input dimension");
  MlpGradient grad = net.zero_gradient();
  double total = 0.0;
  Vector g;
  for (Eigen::Index i = 0; i < batch.size(); ++i) {
    const Vector x = batch.inputs.row(i).transpose();
    total += loss(net.forward(x), batch, i, g);
    net.backward(x, g, grad);
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (auto& w : grad.weight) w *= inv;
  for (auto& b : grad.bias) b *= inv;
  return {total * inv, std::move(grad)};
}

/// SGD with classical momentum.
class Sgd {
 public:
  Sgd(const Mlp& net, double lr, double momentum)
      : lr_(lr), momentum_(momentum), velocity_(net.zero_gradient()) {}

  void step(Mlp& net, const MlpGradient& grad, const std::vector<bool>& frozen = {}) {
    for (std::size_t i = 0; i < velocity_.weight.size(); ++i) {
      velocity_.weight[i] = momentum_ * velocity_.weight[i] - lr_ * grad.weight[i];
      velocity_.bias[i] = momentum_ * velocity_.bias[i] - lr_ * grad.bias[i];
    }
    net.apply(velocity_, 1.0, frozen);
  }

 private:
  double lr_;
  double momentum_;
  MlpGradient velocity_;
};

struct TrainConfig {
  double lr = 0.01;
  int epochs = 100;
  int batch_size = 32;
  double momentum = 0.9;
  std::uint64_t seed = 0;
  // One flag per layer; frozen layers are never written.
  std::vector<bool> frozen;
  // Called after every epoch with the epoch index and the current network.
  std::function<void(int, const Mlp&)> on_epoch;
};

struct TrainResult {
  std::vector<double> loss_history;  // mean training loss per epoch
};

/// Minibatch SGD over `data`, reshuffled each epoch with a seeded engine.
inline TrainResult train(Mlp& net, const TrainBatch& data, const Loss& loss,
                         const TrainConfig& config) {
  require(config.lr > 0.0, Errc::ConfigInvalid, "lr must be positive");
  require(config.epochs >= 0, Errc::ConfigInvalid, "epochs must be non-negative");
  require(config.batch_size >= 1, Errc::ConfigInvalid, "batch_size must be >= 1");
  require(data.size() >= 1, Errc::InsufficientData, "no training data");

  TrainResult result;
  Sgd opt(net, config.lr, config.momentum);
  Rng rng = make_rng(config.seed, "nnet/shuffle");
  std::vector<Eigen::Index> order(static_cast<std::size_t>(data.size()));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<Eigen::Index>(i);

  MlpGradient grad = net.zero_gradient();
  Vector g;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      grad.set_zero();
      for (std::size_t j = start; j < stop; ++j) {
        const Vector x = data.inputs.row(order[j]).transpose();
        epoch_loss += loss(net.forward(x), data, order[j], g);
        net.backward(x, g, grad);
      }
      const double inv = 1.0 / static_cast<double>(stop - start);
      for (auto& w : grad.weight) w *= inv;
      for (auto& b : grad.bias) b *= inv;
      opt.step(net, grad, config.frozen);
    }
    epoch_loss /= static_cast<double>(order.size());
    if (!std::isfinite(epoch_loss) || !net.all_finite()) {
      throw Error(Errc::Diverged, "training loss non-finite at epoch " + std::to_string(epoch));
    }
    result.loss_history.push_back(epoch_loss);
    if (config.on_epoch) config.on_epoch(epoch, net);
  }
  return result;
}

}  // namespace rfpt::nnet
