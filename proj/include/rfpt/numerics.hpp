#pragma once

// Dense linear algebra helpers, finite differences, RK4 and a first-order
// descent driver shared by every other module.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "rfpt/error.hpp"

namespace rfpt {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline bool all_finite(const Vector& v) { return v.allFinite(); }
inline bool all_finite(const Matrix& m) { return m.allFinite(); }

inline bool is_symmetric(const Matrix& m, double rel_tol = 1e-10) {
  if (m.rows() != m.cols()) return false;
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  return (m - m.transpose()).cwiseAbs().maxCoeff() <= rel_tol * scale;
}

/// Lower-triangular L with L * L^T = m. Throws NotPositiveDefinite on a
/// non-positive pivot.
inline Matrix cholesky(const Matrix& m) {
  require(m.rows() == m.cols() && m.rows() > 0, Errc::DimensionMismatch,
          "cholesky expects a non-empty square matrix");
  require(is_symmetric(m), Errc::NonSymmetric, "cholesky input is not symmetric");
  const Eigen::Index n = m.rows();
  Matrix l = Matrix::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    double pivot = m(j, j) - l.row(j).head(j).squaredNorm();
    if (!(pivot > 0.0)) {
      throw Error(Errc::NotPositiveDefinite,
                  "pivot " + std::to_string(j) + " is " + std::to_string(pivot));
    }
    l(j, j) = std::sqrt(pivot);
    for (Eigen::Index i = j + 1; i < n; ++i) {
      l(i, j) = (m(i, j) - l.row(i).head(j).dot(l.row(j).head(j))) / l(j, j);
    }
  }
  return l;
}

/// Symmetric square root of a positive semidefinite matrix. Eigenvalues in
/// [-1e-10 * max, 0) are treated as round-off and clamped to zero.
inline Matrix psd_sqrt(const Matrix& m) {
  require(m.rows() == m.cols() && m.rows() > 0, Errc::DimensionMismatch,
          "psd_sqrt expects a non-empty square matrix");
  require(is_symmetric(m, 1e-8), Errc::NonSymmetric, "psd_sqrt input is not symmetric");
  const Matrix sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
  Vector values = eig.eigenvalues();
  const double top = std::max(values.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    if (values(i) < -1e-10 * top) {
      throw Error(Errc::NonPsd, "eigenvalue " + std::to_string(values(i)) + " is negative");
    }
    values(i) = std::sqrt(std::max(values(i), 0.0));
  }
  return eig.eigenvectors() * values.asDiagonal() * eig.eigenvectors().transpose();
}

/// Central-difference Jacobian of f at x.
template <class F>
Matrix finite_diff_jacobian(F&& f, const Vector& x, double h) {
  const Vector f0 = f(x);
  Matrix jac(f0.size(), x.size());
  Vector probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    probe(i) = x(i) + h;
    const Vector fp = f(probe);
    probe(i) = x(i) - h;
    const Vector fm = f(probe);
    probe(i) = x(i);
    jac.col(i) = (fp - fm) / (2.0 * h);
  }
  return jac;
}

/// Classical fixed-step RK4 for an autonomous field from t = 0 to t_end.
template <class Field>
Vector rk4_integrate(Field&& field, const Vector& state0, double t_end, int steps) {
  require(steps >= 1, Errc::ConfigInvalid, "rk4_integrate needs steps >= 1");
  const double dt = t_end / steps;
  Vector s = state0;
  for (int i = 0; i < steps; ++i) {
    const Vector k1 = field(s);
    const Vector k2 = field(Vector(s + 0.5 * dt * k1));
    const Vector k3 = field(Vector(s + 0.5 * dt * k2));
    const Vector k4 = field(Vector(s + dt * k3));
    s += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!s.allFinite()) {
      throw Error(Errc::NonFiniteState, "rk4 state became non-finite at step " + std::to_string(i));
    }
  }
  return s;
}

struct StepRule {
  enum class Kind { Backtracking, Fixed };
  Kind kind = Kind::Backtracking;
  double initial_step = 1.0;
  double shrink = 0.5;
  double armijo = 1e-4;
  int max_backtracks = 60;

  static StepRule fixed(double step) {
    StepRule r;
    r.kind = Kind::Fixed;
    r.initial_step = step;
    return r;
  }
};

struct StopRule {
  double grad_tol = 1e-6;
  int max_iters = 500;
  // Consecutive objective increases tolerated before declaring divergence.
  int divergence_window = 20;
};

struct DescentResult {
  Vector x;
  double value = 0.0;
  double grad_norm = 0.0;
  int iterations = 0;
  bool converged = false;
  // Line search could not find a decreasing step; x is numerically stationary
  // along the search direction.
  bool stalled = false;
  std::vector<double> history;
};

/// Preconditioner maps (x, gradient) to a descent direction. The default is
/// the steepest-descent direction -gradient.
using Preconditioner = std::function<Vector(const Vector&, const Vector&)>;

/// Gradient descent with a pluggable step rule. `objective(x, grad)` returns
/// f(x) and writes the gradient when grad != nullptr.
template <class Objective>
DescentResult gradient_descent(Objective&& objective, Vector x0, const StepRule& step = {},
                               const StopRule& stop = {}, const Preconditioner& precond = {}) {
  DescentResult out;
  Vector grad(x0.size());
  double value = objective(x0, &grad);
  require(std::isfinite(value) && grad.allFinite(), Errc::Diverged,
          "objective or gradient non-finite at x0");
  out.x = std::move(x0);
  out.history.push_back(value);

  int increases = 0;
  Vector trial_grad(out.x.size());
  for (int iter = 0; iter < stop.max_iters; ++iter) {
    out.grad_norm = grad.norm();
    if (out.grad_norm <= stop.grad_tol) {
      out.converged = true;
      break;
    }
    const Vector dir = precond ? precond(out.x, grad) : Vector(-grad);
    double slope = grad.dot(dir);
    const bool use_dir = slope < 0.0;
    const Vector search = use_dir ? dir : Vector(-grad);
    if (!use_dir) slope = -grad.squaredNorm();

    double t = step.initial_step;
    bool accepted = false;
    Vector trial;
    double trial_value = 0.0;
    if (step.kind == StepRule::Kind::Fixed) {
      trial = out.x + t * search;
      trial_value = objective(trial, &trial_grad);
      require(std::isfinite(trial_value) && trial_grad.allFinite(), Errc::Diverged,
              "objective became non-finite");
      accepted = true;
      increases = trial_value > value ? increases + 1 : 0;
      if (increases >= stop.divergence_window) {
        throw Error(Errc::Diverged, "objective increased for " +
                                        std::to_string(increases) + " consecutive steps");
      }
    } else {
      for (int b = 0; b <= step.max_backtracks; ++b, t *= step.shrink) {
        trial = out.x + t * search;
        trial_value = objective(trial, &trial_grad);
        if (std::isfinite(trial_value) && trial_grad.allFinite() &&
            trial_value <= value + step.armijo * t * slope) {
          accepted = true;
          break;
        }
      }
    }
    if (!accepted) {
      out.stalled = true;
      break;
    }
    out.x = std::move(trial);
    value = trial_value;
    grad = trial_grad;
    out.iterations = iter + 1;
    out.history.push_back(value);
  }
  out.value = value;
  out.grad_norm = grad.norm();
  if (out.grad_norm <= stop.grad_tol) out.converged = true;
  return out;
}

}  // namespace rfpt
