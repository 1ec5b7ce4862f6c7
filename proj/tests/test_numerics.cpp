#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "rfpt/numerics.hpp"
#include "rfpt/random.hpp"

using rfpt::Errc;
using rfpt::Matrix;
using rfpt::Vector;

namespace {

Matrix random_spd(int n, rfpt::Rng& rng) {
  std::normal_distribution<double> g;
  Matrix a(n, n);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = g(rng);
  return a * a.transpose() + 0.1 * Matrix::Identity(n, n);
}

// Denman-Beavers iteration: Y -> sqrt(A), independent of any eigensolver.
Matrix denman_beavers(const Matrix& a) {
  Matrix y = a, z = Matrix::Identity(a.rows(), a.cols());
  for (int i = 0; i < 60; ++i) {
    const Matrix yi = y.inverse(), zi = z.inverse();
    y = 0.5 * (y + zi);
    z = 0.5 * (z + yi);
  }
  return y;
}

template <class F>
void expect_errc(F&& f, Errc code) {
  try {
    f();
    FAIL() << "expected " << rfpt::to_string(code);
  } catch (const rfpt::Error& e) {
    EXPECT_EQ(e.code(), code) << e.what();
  }
}

}  // namespace

TEST(Cholesky, IdentityAndDiagonal) {
  EXPECT_EQ(rfpt::cholesky(Matrix::Identity(3, 3)), Matrix::Identity(3, 3));
  Matrix d = Vector(Eigen::Vector3d(4.0, 9.0, 0.25)).asDiagonal();
  Matrix expect = Vector(Eigen::Vector3d(2.0, 3.0, 0.5)).asDiagonal();
  EXPECT_LE((rfpt::cholesky(d) - expect).norm(), 1e-15);
}

TEST(Cholesky, TwoByTwoByHand) {
  Matrix m(2, 2);
  m << 4, 2, 2, 3;
  const Matrix l = rfpt::cholesky(m);
  EXPECT_DOUBLE_EQ(l(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(l(0, 1), 0.0);
  EXPECT_DOUBLE_EQ(l(1, 0), 1.0);
  EXPECT_NEAR(l(1, 1), std::sqrt(2.0), 1e-15);
  // L L^T entry by entry.
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      double s = 0.0;
      for (int k = 0; k < 2; ++k) s += l(i, k) * l(j, k);
      EXPECT_NEAR(s, m(i, j), 1e-14);
    }
}

TEST(Cholesky, Errors) {
  Matrix indefinite(2, 2);
  indefinite << 1, 2, 2, 1;
  expect_errc([&] { rfpt::cholesky(indefinite); }, Errc::NotPositiveDefinite);
  Matrix asym(2, 2);
  asym << 1, 0.5, 0, 1;
  expect_errc([&] { rfpt::cholesky(asym); }, Errc::NonSymmetric);
}

TEST(Cholesky, ReconstructsRandomSpd) {
  rfpt::Rng rng(42);
  std::uniform_int_distribution<int> dim(1, 16);
  for (int trial = 0; trial < 100; ++trial) {
    const Matrix m = random_spd(dim(rng), rng);
    const Matrix l = rfpt::cholesky(m);
    EXPECT_LE((l * l.transpose() - m).norm() / m.norm(), 1e-9);
    EXPECT_TRUE(l.isLowerTriangular());
  }
}

TEST(PsdSqrt, Examples) {
  EXPECT_LE((rfpt::psd_sqrt(Matrix::Identity(4, 4)) - Matrix::Identity(4, 4)).norm(), 1e-15);
  Matrix d = Vector(Eigen::Vector2d(4.0, 9.0)).asDiagonal();
  Matrix expect = Vector(Eigen::Vector2d(2.0, 3.0)).asDiagonal();
  EXPECT_LE((rfpt::psd_sqrt(d) - expect).norm(), 1e-14);
}

TEST(PsdSqrt, MatchesDenmanBeavers) {
  rfpt::Rng rng(7);
  for (int n : {2, 3, 5, 8}) {
    const Matrix a = random_spd(n, rng);
    const Matrix s = rfpt::psd_sqrt(a);
    EXPECT_LE((s * s - a).norm() / a.norm(), 1e-8);
    EXPECT_LE((s - denman_beavers(a)).norm() / s.norm(), 1e-8);
  }
}

TEST(PsdSqrt, RankDeficientAndErrors) {
  Vector u(3);
  u << 1, 2, 2;
  const Matrix a = u * u.transpose();
  const Matrix s = rfpt::psd_sqrt(a);
  EXPECT_LE((s * s - a).norm() / a.norm(), 1e-8);
  Matrix neg(2, 2);
  neg << 1, 0, 0, -1;
  expect_errc([&] { rfpt::psd_sqrt(neg); }, Errc::NonPsd);
  Matrix asym(2, 2);
  asym << 1, 1, 0, 1;
  expect_errc([&] { rfpt::psd_sqrt(asym); }, Errc::NonSymmetric);
}

TEST(FiniteDiff, IdentityAndLinear) {
  Vector x(3);
  x << 0.3, -1.2, 2.0;
  const Matrix id = rfpt::finite_diff_jacobian([](const Vector& v) { return v; }, x, 1e-5);
  EXPECT_LE((id - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-8);
  Matrix a(2, 3);
  a << 1, 2, 3, -4, 5, 0.5;
  const Matrix j = rfpt::finite_diff_jacobian([&](const Vector& v) { return Vector(a * v); }, x, 1e-5);
  EXPECT_LE((j - a).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(FiniteDiff, SecondOrderConvergence) {
  auto f = [](const Vector& v) {
    Vector out(2);
    out << std::sin(v(0)) * v(1), std::exp(0.5 * v(1)) + v(0) * v(0) * v(0);
    return out;
  };
  Vector x(2);
  x << 0.7, -0.4;
  Matrix exact(2, 2);
  exact << std::cos(x(0)) * x(1), std::sin(x(0)), 3 * x(0) * x(0), 0.5 * std::exp(0.5 * x(1));
  const double e1 = (rfpt::finite_diff_jacobian(f, x, 1e-2) - exact).cwiseAbs().maxCoeff();
  const double e2 = (rfpt::finite_diff_jacobian(f, x, 5e-3) - exact).cwiseAbs().maxCoeff();
  EXPECT_GE(e1 / e2, 3.0);
  EXPECT_LE(e1 / e2, 5.0);
}

TEST(Rk4, ZeroFieldAndFlatGeodesic) {
  Vector s(3);
  s << 1, 2, 3;
  EXPECT_EQ(rfpt::rk4_integrate([](const Vector& v) { return Vector(Vector::Zero(v.size())); }, s, 1.0, 7), s);
  // z'' = 0 with state (z, z'): endpoint z0 + t v.
  Vector st(4);
  st << 0.5, -1.0, 2.0, 0.25;
  auto field = [](const Vector& v) {
    Vector d(4);
    d << v(2), v(3), 0.0, 0.0;
    return d;
  };
  const Vector end = rfpt::rk4_integrate(field, st, 2.0, 16);
  EXPECT_NEAR(end(0), 0.5 + 2.0 * 2.0, 1e-14);
  EXPECT_NEAR(end(1), -1.0 + 2.0 * 0.25, 1e-14);
}

TEST(Rk4, ExponentialGrowth) {
  auto field = [](const Vector& v) { return v; };
  const Vector one = Vector::Ones(1);
  EXPECT_NEAR(rfpt::rk4_integrate(field, one, 1.0, 100)(0), std::exp(1.0), 1e-6);
  const double e10 = std::abs(rfpt::rk4_integrate(field, one, 1.0, 10)(0) - std::exp(1.0));
  const double e20 = std::abs(rfpt::rk4_integrate(field, one, 1.0, 20)(0) - std::exp(1.0));
  EXPECT_GE(e10 / e20, 12.0);
  EXPECT_LE(e10 / e20, 20.0);
}

TEST(Rk4, NonFiniteState) {
  auto blowup = [](const Vector& v) { return Vector(v.array().square() * 1e300); };
  expect_errc([&] { rfpt::rk4_integrate(blowup, Vector::Constant(1, 10.0), 1.0, 10); },
              Errc::NonFiniteState);
}

namespace {

double quadratic(const Matrix& h, const Vector& x, Vector* g) {
  if (g) *g = h * x;
  return 0.5 * x.dot(h * x);
}

}  // namespace

TEST(GradientDescent, Quadratic) {
  const Matrix h = Matrix::Identity(3, 3);
  Vector x0(3);
  x0 << 3, -2, 5;
  const auto r = rfpt::gradient_descent([&](const Vector& x, Vector* g) { return quadratic(h, x, g); }, x0);
  EXPECT_TRUE(r.converged);
  EXPECT_LE(r.x.norm(), 1e-6);
}

TEST(GradientDescent, AlreadyAtMinimum) {
  const Matrix h = Matrix::Identity(2, 2);
  const Vector x0 = Vector::Zero(2);
  const auto r = rfpt::gradient_descent([&](const Vector& x, Vector* g) { return quadratic(h, x, g); }, x0);
  EXPECT_EQ(r.x, x0);
  EXPECT_EQ(r.iterations, 0);
  EXPECT_TRUE(r.converged);
}

TEST(GradientDescent, Rosenbrock) {
  auto rosen = [](const Vector& x, Vector* g) {
    const double a = 1.0 - x(0), b = x(1) - x(0) * x(0);
    if (g) {
      g->resize(2);
      (*g)(0) = -2.0 * a - 400.0 * x(0) * b;
      (*g)(1) = 200.0 * b;
    }
    return a * a + 100.0 * b * b;
  };
  Vector x0(2);
  x0 << -1.2, 1.0;
  rfpt::StopRule stop;
  stop.grad_tol = 1e-8;
  stop.max_iters = 200000;
  const auto r = rfpt::gradient_descent(rosen, x0, rfpt::StepRule{}, stop);
  EXPECT_NEAR(r.x(0), 1.0, 1e-3);
  EXPECT_NEAR(r.x(1), 1.0, 1e-3);
  for (std::size_t i = 1; i < r.history.size(); ++i) EXPECT_LE(r.history[i], r.history[i - 1]);
}

TEST(GradientDescent, FixedStepBelowTwoOverL) {
  Matrix h = Matrix::Zero(3, 3);
  h.diagonal() << 1.0, 4.0, 10.0;
  Vector x0 = Vector::Ones(3);
  for (double frac : {0.1, 0.5, 0.9, 0.99}) {
    rfpt::StopRule stop;
    stop.grad_tol = 1e-10;
    stop.max_iters = 100000;
    const auto r = rfpt::gradient_descent([&](const Vector& x, Vector* g) { return quadratic(h, x, g); }, x0,
                                          rfpt::StepRule::fixed(frac * 2.0 / 10.0), stop);
    EXPECT_TRUE(r.converged) << frac;
    EXPECT_LE(r.x.norm(), 1e-9);
  }
}

TEST(GradientDescent, DivergesAboveTwoOverL) {
  Matrix h = Matrix::Zero(2, 2);
  h.diagonal() << 1.0, 10.0;
  expect_errc(
      [&] {
        rfpt::gradient_descent([&](const Vector& x, Vector* g) { return quadratic(h, x, g); }, Vector::Ones(2),
                               rfpt::StepRule::fixed(0.25));
      },
      Errc::Diverged);
}

TEST(RandomStreams, IndependentAndStable) {
  EXPECT_EQ(rfpt::stream_seed(1, "a"), rfpt::stream_seed(1, "a"));
  EXPECT_NE(rfpt::stream_seed(1, "a"), rfpt::stream_seed(1, "b"));
  EXPECT_NE(rfpt::stream_seed(1, "a"), rfpt::stream_seed(2, "a"));
  EXPECT_NE(rfpt::stream_seed(1, "a", 0), rfpt::stream_seed(1, "a", 1));
}
