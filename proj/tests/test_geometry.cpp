#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "fixtures.hpp"
#include "rfpt/geometry.hpp"
#include "rfpt/vae.hpp"

using fixtures::BumpSurface;
using fixtures::bump_metric;
using fixtures::coarse_graph;
using fixtures::GridOracle;
using fixtures::LinearDecoder;
using fixtures::vec2;
using fixtures::wiggle;
using rfpt::DiscreteCurve;
using rfpt::Matrix;
using rfpt::PullbackMetric;
using rfpt::Vector;

namespace {

Matrix circle_codes(int count) {
  const auto& m = fixtures::trained_circle_vae();
  const Matrix& x = fixtures::trained_circle_data();
  Matrix z(count, 2);
  for (int i = 0; i < count; ++i) z.row(i) = m.encode(x.row(i).transpose()).mean.transpose();
  return z;
}

}  // namespace

// --- metric --------------------------------------------------------------------

TEST(Metric, LinearDecoderIsConstant) {
  const LinearDecoder dec = fixtures::random_linear(3, 6, 1);
  const PullbackMetric<LinearDecoder> m(dec);
  const Matrix ata = dec.a.transpose() * dec.a;
  const double lambda = 1e-6 * ata.trace() / 3.0;
  for (double s : {0.0, 1.0, -7.5}) {
    const Matrix g = m.metric_at(Vector::Constant(3, s));
    EXPECT_LE((g - ata - lambda * Matrix::Identity(3, 3)).norm(), 1e-12 * ata.norm());
  }
}

TEST(Metric, IdentityDecoder) {
  const LinearDecoder dec{Matrix::Identity(4, 4), Vector::Zero(4), Vector(0)};
  const PullbackMetric<LinearDecoder> m(dec);
  EXPECT_LE((m.metric_at(Vector::Ones(4)) - (1.0 + 1e-6) * Matrix::Identity(4, 4)).norm(), 1e-15);
}

TEST(Metric, TrainedVaeMatchesFiniteDifferenceConstruction) {
  const auto& vae = fixtures::trained_circle_vae();
  const PullbackMetric<rfpt::VaeModel> m(vae);
  rfpt::Rng rng(2);
  std::normal_distribution<double> g(0.0, 1.5);
  for (int t = 0; t < 50; ++t) {
    const Vector z = vec2(g(rng), g(rng));
    const Matrix j = rfpt::finite_diff_jacobian([&](const Vector& p) { return vae.embed(p); }, z, 1e-6);
    Matrix expect = j.transpose() * j;
    expect.diagonal().array() += 1e-6 * expect.trace() / 2.0;
    EXPECT_LE(fixtures::rel_err(m.metric_at(z), expect), 1e-5);
  }
}

TEST(Metric, SpdAtRandomPoints) {
  const PullbackMetric<rfpt::VaeModel> m(fixtures::trained_circle_vae());
  rfpt::Rng rng(3);
  std::normal_distribution<double> g(0.0, 3.0);
  double lowest = std::numeric_limits<double>::infinity();
  for (int t = 0; t < 1000; ++t) {
    const Matrix gm = m.metric_at(vec2(g(rng), g(rng)));
    EXPECT_TRUE(rfpt::is_symmetric(gm));
    lowest = std::min(lowest, Eigen::SelfAdjointEigenSolver<Matrix>(gm).eigenvalues().minCoeff());
  }
  EXPECT_GT(lowest, 0.0);
}

TEST(Metric, NonFinitePoint) {
  const LinearDecoder dec = fixtures::random_linear(2, 3, 1);
  const PullbackMetric<LinearDecoder> m(dec);
  EXPECT_THROW(m.metric_at(vec2(std::nan(""), 0.0)), rfpt::Error);
}

// --- lengths and energy ----------------------------------------------------------

TEST(CurveLength, ConstantAndLinear) {
  const LinearDecoder dec = fixtures::random_linear(2, 5, 4);
  const PullbackMetric<LinearDecoder> m(dec);
  const Vector p = vec2(0.2, -0.3), q = vec2(1.0, 2.0);
  const DiscreteCurve still = DiscreteCurve::straight(p, p, 5);
  EXPECT_NEAR(rfpt::curve_length_ambient(m, still), 0.0, 1e-12);
  EXPECT_NEAR(rfpt::curve_length_metric(m, still), 0.0, 1e-12);
  const double exact = (dec.a * (q - p)).norm();
  EXPECT_NEAR(rfpt::curve_length_ambient(m, DiscreteCurve::straight(p, q, 1)), exact, 1e-12 * exact);
  const Matrix gc = dec.a.transpose() * dec.a;
  const auto constant = [&](const Vector&) { return gc; };
  EXPECT_NEAR(rfpt::curve_length_metric(constant, DiscreteCurve::straight(p, q, 7)),
              std::sqrt((q - p).dot(gc * (q - p))), 1e-12 * exact);
}

TEST(CurveLength, AmbientAndMetricFormsAgreeAtK128) {
  const PullbackMetric<rfpt::VaeModel> m(fixtures::trained_circle_vae());
  const Matrix z = circle_codes(40);
  for (int t = 0; t + 1 < 40; t += 2) {
    const Vector p = z.row(t).transpose(), q = z.row(t + 1).transpose();
    const DiscreteCurve c = wiggle(p, q, vec2(0.1, -0.05), 128);
    const double amb = rfpt::curve_length_ambient(m, c);
    const double met = rfpt::curve_length_metric(m, c);
    EXPECT_LE(std::abs(amb - met) / met, 0.01);
  }
}

TEST(CurveLength, MetricQuadratureConverges) {
  const BumpSurface s = fixtures::two_bumps();
  const PullbackMetric<BumpSurface> m(s);
  const Vector p = vec2(-1.0, -0.8), q = vec2(1.1, 0.9), w = vec2(0.3, -0.4);
  const double l8 = rfpt::curve_length_metric(m, wiggle(p, q, w, 8));
  const double l16 = rfpt::curve_length_metric(m, wiggle(p, q, w, 16));
  const double l32 = rfpt::curve_length_metric(m, wiggle(p, q, w, 32));
  EXPECT_GE(std::abs(l8 - l16), 2.0 * std::abs(l16 - l32));
}

TEST(CurveEnergy, BoundsHalfSquaredLength) {
  const BumpSurface s = fixtures::two_bumps();
  const PullbackMetric<BumpSurface> m(s);
  rfpt::Rng rng(5);
  std::normal_distribution<double> g(0.0, 0.3);
  for (int t = 0; t < 20; ++t) {
    DiscreteCurve c = DiscreteCurve::straight(vec2(-1, 0), vec2(1, 0.5), 12);
    for (auto& pt : c.points) pt += vec2(g(rng), g(rng));
    const double len = rfpt::curve_length_ambient(m, c);
    EXPECT_GE(rfpt::curve_energy(m, c), 0.5 * len * len);
  }
  // Constant speed under a linear decoder: equality.
  const LinearDecoder dec = fixtures::random_linear(2, 4, 2);
  const PullbackMetric<LinearDecoder> lin(dec);
  const DiscreteCurve c = DiscreteCurve::straight(vec2(0, 0), vec2(1, 2), 10);
  const double len = rfpt::curve_length_ambient(lin, c);
  EXPECT_NEAR(rfpt::curve_energy(lin, c), 0.5 * len * len, 1e-12 * len * len);
}

TEST(CurveEnergy, GradientMatchesFiniteDifferences) {
  const auto& vae = fixtures::trained_circle_vae();
  const PullbackMetric<rfpt::VaeModel> m(vae);
  const Matrix z = circle_codes(4);
  DiscreteCurve c = wiggle(z.row(0).transpose(), z.row(1).transpose(), vec2(0.2, 0.1), 8);
  Matrix grad;
  rfpt::curve_energy(m, c, &grad);
  ASSERT_EQ(grad.rows(), 7);
  const double h = 1e-6;
  for (int t = 1; t < 8; ++t)
    for (int i = 0; i < 2; ++i) {
      const double keep = c.points[t](i);
      c.points[t](i) = keep + h;
      const double up = rfpt::curve_energy(m, c);
      c.points[t](i) = keep - h;
      const double down = rfpt::curve_energy(m, c);
      c.points[t](i) = keep;
      const double fd = (up - down) / (2.0 * h);
      EXPECT_NEAR(grad(t - 1, i), fd, 1e-5 * std::max(1.0, grad.norm()));
    }
}

TEST(CurveEnergy, StraightLineIsStationaryUnderLinearDecoder) {
  const LinearDecoder dec = fixtures::random_linear(2, 5, 9);
  const PullbackMetric<LinearDecoder> m(dec);
  Matrix grad;
  rfpt::curve_energy(m, DiscreteCurve::straight(vec2(-1, 3), vec2(2, 0.5), 9), &grad);
  EXPECT_LE(grad.cwiseAbs().maxCoeff(), 1e-12);
}

// --- boundary value problem ------------------------------------------------------------

TEST(GeodesicBvp, FlatLimit) {
  const LinearDecoder dec = fixtures::random_linear(3, 7, 6);
  const PullbackMetric<LinearDecoder> m(dec);
  Vector p(3), q(3);
  p << 0.5, -1, 2;
  q << -1.5, 0.25, 1;
  const DiscreteCurve bent = wiggle(p, q, Vector::Constant(3, 0.4), 16);
  const auto r = rfpt::geodesic_bvp(m, p, q, {}, nullptr, &bent);
  EXPECT_TRUE(r.converged);
  for (int t = 0; t <= 16; ++t)
    EXPECT_LE((r.curve.points[t] - (p + (q - p) * t / 16.0)).norm(), 1e-6);
  const double exact = (dec.a * (q - p)).norm();
  EXPECT_NEAR(rfpt::geodesic_distance(m, p, q), exact, 1e-6 * exact);
  EXPECT_NEAR(rfpt::geodesic_distance(m, q, p), exact, 1e-6 * exact);
}

TEST(GeodesicBvp, CoincidentEndpoints) {
  const BumpSurface s = fixtures::two_bumps();
  const PullbackMetric<BumpSurface> m(s);
  const Vector p = vec2(0.3, 0.3);
  const auto r = rfpt::geodesic_bvp(m, p, p);
  EXPECT_EQ(r.length, 0.0);
  for (const auto& pt : r.curve.points) EXPECT_EQ(pt, p);
  EXPECT_EQ(rfpt::geodesic_distance(m, p, p), 0.0);
}

TEST(GeodesicBvp, NeverWorseThanStraightLine) {
  const BumpSurface s = fixtures::two_bumps();
  const PullbackMetric<BumpSurface> m(s);
  rfpt::Rng rng(4);
  std::uniform_real_distribution<double> u(-1.2, 1.2);
  for (int t = 0; t < 20; ++t) {
    const Vector p = vec2(u(rng), u(rng)), q = vec2(u(rng), u(rng));
    const auto r = rfpt::geodesic_bvp(m, p, q);
    EXPECT_TRUE(r.converged);
    EXPECT_LE(r.energy, rfpt::curve_energy(m, DiscreteCurve::straight(p, q, 16)) + 1e-9);
  }
}

TEST(GeodesicBvp, MatchesDenseGridDijkstra) {
  const BumpSurface s = fixtures::two_bumps();
  const PullbackMetric<BumpSurface> m(s);
  const GridOracle grid(s, 100, -1.5, 1.5);
  const rfpt::LatentGraph graph = coarse_graph(s, 25, -1.5, 1.5);
  rfpt::GeodesicOptions opts;
  opts.segments = 32;
  rfpt::Rng rng(10);
  std::uniform_int_distribution<int> cell(10, 89);
  for (int t = 0; t < 15; ++t) {
    const int a = cell(rng), b = cell(rng), c = cell(rng), d = cell(rng);
    if (a == c && b == d) continue;
    const double oracle = grid.distance(grid.id(a, b), grid.id(c, d));
    const double got = rfpt::geodesic_distance(m, grid.node(a, b), grid.node(c, d), opts, &graph);
    EXPECT_LE(std::abs(got - oracle) / oracle, 0.05) << a << "," << b << " -> " << c << "," << d;
  }
}

TEST(GeodesicBvp, SymmetricAndTriangleOnTrainedVae) {
  const auto& vae = fixtures::trained_circle_vae();
  const PullbackMetric<rfpt::VaeModel> m(vae);
  const Matrix codes = circle_codes(300);
  const rfpt::LatentGraph graph = rfpt::LatentGraph::build(m, codes, 10);
  rfpt::Rng rng(6);
  std::uniform_int_distribution<int> pick(0, 299);
  for (int t = 0; t < 20; ++t) {
    const Vector p = codes.row(pick(rng)).transpose(), q = codes.row(pick(rng)).transpose();
    const Vector r = codes.row(pick(rng)).transpose();
    const double pq = rfpt::geodesic_distance(m, p, q, {}, &graph);
    const double qp = rfpt::geodesic_distance(m, q, p, {}, &graph);
    if (pq > 0.0) {
      EXPECT_LE(std::abs(pq - qp) / pq, 0.02);
    }
    const double pr = rfpt::geodesic_distance(m, p, r, {}, &graph);
    const double rq = rfpt::geodesic_distance(m, r, q, {}, &graph);
    EXPECT_LE(pq, 1.02 * (pr + rq));
  }
}

TEST(GeodesicBvp, ConvergedCurveIsLocalEnergyMinimum) {
  const BumpSurface s = fixtures::two_bumps();
  const PullbackMetric<BumpSurface> m(s);
  const auto r = rfpt::geodesic_bvp(m, vec2(-1.0, 0.2), vec2(1.0, -0.1));
  ASSERT_TRUE(r.converged);
  const double e0 = rfpt::curve_energy(m, r.curve);
  rfpt::Rng rng(7);
  std::normal_distribution<double> g(0.0, 1e-2);
  for (int t = 0; t < 100; ++t) {
    DiscreteCurve c = r.curve;
    for (std::size_t i = 1; i + 1 < c.points.size(); ++i) c.points[i] += vec2(g(rng), g(rng));
    EXPECT_GE(rfpt::curve_energy(m, c), e0 - 1e-12);
  }
}

// --- Christoffel symbols -------------------------------------------------------------

TEST(Christoffel, ConstantMetricVanishes) {
  Matrix g(2, 2);
  g << 2, 0.3, 0.3, 1;
  const auto gamma = rfpt::christoffel_at([&](const Vector&) { return g; }, vec2(0.4, -0.2));
  for (const auto& k : gamma) EXPECT_LE(k.cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Christoffel, ConformalClosedForm) {
  const Vector a = vec2(0.7, -0.4);
  const auto metric = [&](const Vector& z) { return Matrix(std::exp(2.0 * a.dot(z)) * Matrix::Identity(2, 2)); };
  for (const Vector& z : {vec2(0, 0), vec2(0.5, 1.0), vec2(-1.2, 0.3)}) {
    const auto gamma = rfpt::christoffel_at(metric, z);
    for (int k = 0; k < 2; ++k)
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
          const double exact = (i == k) * a(j) + (j == k) * a(i) - (i == j) * a(k);
          EXPECT_NEAR(gamma[k](i, j), exact, 1e-3);
          EXPECT_EQ(gamma[k](i, j), gamma[k](j, i));
        }
  }
}

TEST(Christoffel, FieldAgreesWithExactAcceleration) {
  const BumpSurface s = fixtures::two_bumps();
  const PullbackMetric<BumpSurface> m(s);
  const rfpt::ChristoffelField field([&](const Vector& z) { return m.metric_at(z); });
  rfpt::Rng rng(8);
  std::normal_distribution<double> g;
  for (int t = 0; t < 20; ++t) {
    const Vector z = vec2(0.6 * g(rng), 0.6 * g(rng)), v = vec2(g(rng), g(rng));
    const Vector exact = m.acceleration(z, v);
    EXPECT_LE((field.acceleration(z, v) - exact).norm(), 1e-5 * std::max(1.0, exact.norm()));
  }
}

// --- exp and log --------------------------------------------------------------------------

TEST(ExpMap, ZeroAndFlat) {
  const LinearDecoder dec = fixtures::random_linear(2, 5, 3);
  const PullbackMetric<LinearDecoder> m(dec);
  const Vector x = vec2(0.3, -0.7), v = vec2(1.5, 2.0);
  EXPECT_EQ(rfpt::exp_map(m, {x, Vector::Zero(2)}), x);
  EXPECT_LE((rfpt::exp_map(m, {x, v}) - (x + v)).norm(), 1e-12);
  EXPECT_THROW(rfpt::exp_map(m, {x, vec2(std::nan(""), 0)}), rfpt::Error);
}

TEST(ExpMap, StaysOnConstantSpeedGeodesic) {
  const BumpSurface s = fixtures::two_bumps();
  const PullbackMetric<BumpSurface> m(s);
  const Vector x = vec2(-0.8, 0.1), v = vec2(0.5, 0.15);
  const Vector y = rfpt::exp_map(m, {x, v}, 128);
  // Metric speed is conserved along a geodesic: the BVP between the endpoints
  // has length |v|_g.
  rfpt::GeodesicOptions opts;
  opts.segments = 64;
  const auto r = rfpt::geodesic_bvp(m, x, y, opts);
  EXPECT_NEAR(r.length, m.norm(x, v), 0.01 * m.norm(x, v));
}

TEST(LogMap, Contracts) {
  const LinearDecoder dec = fixtures::random_linear(2, 4, 5);
  const PullbackMetric<LinearDecoder> lin(dec);
  const Vector x = vec2(1, 2), y = vec2(-0.5, 0.7);
  EXPECT_EQ(rfpt::log_map(lin, x, x).direction, Vector::Zero(2));
  // Off by the 1e-6 jitter only.
  EXPECT_LE((rfpt::log_map(lin, x, y).direction - (y - x)).norm(), 1e-5 * (y - x).norm());

  const BumpSurface s = fixtures::two_bumps();
  const PullbackMetric<BumpSurface> m(s);
  const auto r = rfpt::log_map_full(m, vec2(-1, 0), vec2(1, 0.2));
  EXPECT_NEAR(m.norm(r.vector.base, r.vector.direction), r.distance, 1e-6 * r.distance);
}

TEST(LogMap, InvertsExpOnTrainedVae) {
  const auto& vae = fixtures::trained_circle_vae();
  const PullbackMetric<rfpt::VaeModel> m(vae);
  const Matrix codes = circle_codes(20);
  rfpt::Rng rng(9);
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> len(0.05, 0.4);  // up to 0.1 x data radius 4
  // The norm is pinned to the discrete distance, whose chord error at K=16 can
  // reach a couple of percent on this decoder.
  rfpt::GeodesicOptions fine;
  fine.segments = 64;
  for (int t = 0; t < 20; ++t) {
    const Vector x = codes.row(t).transpose();
    Vector v = vec2(g(rng), g(rng));
    v *= len(rng) / m.norm(x, v);
    const Vector y = rfpt::exp_map(m, {x, v});
    const Vector back = rfpt::log_map(m, x, y, fine).direction;
    EXPECT_LE((back - v).norm() / v.norm(), 0.01) << t;
  }
}

// --- neighbor graph ---------------------------------------------------------------------

TEST(LatentGraph, ShortestPathsMatchFloydWarshall) {
  const BumpSurface s = fixtures::two_bumps();
  const auto metric = [&](const Vector& z) { return bump_metric(s, z); };
  rfpt::Rng rng(12);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  const int n = 40, k = 3;
  Matrix nodes(n, 2);
  for (int i = 0; i < n; ++i) nodes.row(i) << u(rng), u(rng);
  const auto graph = rfpt::LatentGraph::build(metric, nodes, k);

  const double inf = std::numeric_limits<double>::infinity();
  const auto weight = [&](int i, int j) {
    const Vector a = nodes.row(i).transpose(), b = nodes.row(j).transpose();
    return std::sqrt((b - a).dot(metric(Vector(0.5 * (a + b))) * (b - a)));
  };
  Matrix d = Matrix::Constant(n, n, inf);
  for (int i = 0; i < n; ++i) {
    d(i, i) = 0.0;
    std::vector<std::pair<double, int>> order;
    for (int j = 0; j < n; ++j)
      if (j != i) order.emplace_back((nodes.row(j) - nodes.row(i)).squaredNorm(), j);
    std::sort(order.begin(), order.end());
    for (int r = 0; r < k; ++r) {
      const int j = order[r].second;
      d(i, j) = d(j, i) = weight(i, j);
    }
  }
  for (int m = 0; m < n; ++m)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) d(i, j) = std::min(d(i, j), d(i, m) + d(m, j));

  for (int i = 0; i < n; i += 3)
    for (int j = 0; j < n; j += 5) {
      const auto path = graph.shortest_path(i, j);
      if (!std::isfinite(d(i, j))) {
        EXPECT_TRUE(path.empty());
        continue;
      }
      ASSERT_FALSE(path.empty());
      EXPECT_EQ(path.front(), i);
      EXPECT_EQ(path.back(), j);
      double len = 0.0;
      for (std::size_t e = 1; e < path.size(); ++e) len += weight(path[e - 1], path[e]);
      EXPECT_NEAR(len, d(i, j), 1e-12 * std::max(1.0, d(i, j)));
    }
}
