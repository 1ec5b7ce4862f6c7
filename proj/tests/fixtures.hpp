#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <queue>
#include <random>
#include <vector>

#include "rfpt/rfpt.hpp"

namespace fixtures {

using rfpt::Matrix;
using rfpt::Vector;

/// embed(z) = [A z + b; s], constant sigma: the flat case.
struct LinearDecoder {
  Matrix a;
  Vector b;
  Vector sigma;

  int latent_dim() const { return static_cast<int>(a.cols()); }
  Vector embed(const Vector& z) const {
    Vector out(a.rows() + sigma.size());
    out << a * z + b, sigma;
    return out;
  }
  Matrix embed_jacobian(const Vector& z, Vector* value) const {
    Matrix j = Matrix::Zero(a.rows() + sigma.size(), a.cols());
    j.topRows(a.rows()) = a;
    if (value) *value = embed(z);
    return j;
  }
  Vector embed_second(const Vector&, const Vector&) const {
    return Vector::Zero(a.rows() + sigma.size());
  }
};

inline LinearDecoder random_linear(int d, int D, std::uint64_t seed) {
  rfpt::Rng rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  LinearDecoder dec{Matrix(D, d), Vector(D), Vector::Constant(D, 0.3)};
  for (Eigen::Index i = 0; i < dec.a.size(); ++i) dec.a.data()[i] = g(rng);
  for (Eigen::Index i = 0; i < dec.b.size(); ++i) dec.b(i) = g(rng);
  return dec;
}

/// Graph of a height field over the plane, embed(z) = [z1, z2, h(z)], with
/// h a sum of Gaussian bumps. Geodesics bend around the bumps.
struct BumpSurface {
  std::vector<Vector> centers;
  std::vector<double> heights;
  double width = 0.5;

  int latent_dim() const { return 2; }

  double h(const Vector& z, Vector* grad = nullptr, Matrix* hess = nullptr) const {
    double v = 0.0;
    if (grad) grad->setZero(2);
    if (hess) hess->setZero(2, 2);
    const double w2 = width * width;
    for (std::size_t i = 0; i < centers.size(); ++i) {
      const Vector d = z - centers[i];
      const double e = heights[i] * std::exp(-d.squaredNorm() / (2.0 * w2));
      v += e;
      if (grad) *grad -= e * d / w2;
      if (hess) *hess += e * (d * d.transpose() / (w2 * w2) - Matrix::Identity(2, 2) / w2);
    }
    return v;
  }

  Vector embed(const Vector& z) const {
    Vector out(3);
    out << z(0), z(1), h(z);
    return out;
  }
  Matrix embed_jacobian(const Vector& z, Vector* value) const {
    Vector g;
    const double hv = h(z, &g);
    Matrix j(3, 2);
    j << 1, 0, 0, 1, g(0), g(1);
    if (value) {
      value->resize(3);
      *value << z(0), z(1), hv;
    }
    return j;
  }
  Vector embed_second(const Vector& z, const Vector& v) const {
    Vector g;
    Matrix hs;
    h(z, &g, &hs);
    Vector out = Vector::Zero(3);
    out(2) = v.dot(hs * v);
    return out;
  }
};

inline BumpSurface two_bumps() {
  BumpSurface s;
  s.centers = {Vector::Zero(2), Vector::Zero(2)};
  s.centers[0] << -0.4, 0.3;
  s.centers[1] << 0.5, -0.2;
  s.heights = {1.2, 0.9};
  s.width = 0.45;
  return s;
}

inline Vector vec2(double a, double b) {
  Vector v(2);
  v << a, b;
  return v;
}

// I + grad h grad h^T, straight from the height field.
inline Matrix bump_metric(const BumpSurface& s, const Vector& z) {
  Vector g;
  s.h(z, &g);
  return Matrix::Identity(2, 2) + g * g.transpose();
}

inline rfpt::DiscreteCurve wiggle(const Vector& p, const Vector& q, const Vector& w, int k) {
  rfpt::DiscreteCurve c = rfpt::DiscreteCurve::straight(p, q, k);
  for (int t = 0; t <= k; ++t) c.points[t] += std::sin(std::numbers::pi * t / k) * w;
  return c;
}

// Dense 16-neighbor grid over [lo, hi]^2 with metric edge weights.
struct GridOracle {
  int n;
  double lo, step;
  std::vector<std::vector<std::pair<int, double>>> adj;

  GridOracle(const BumpSurface& s, int n_, double lo_, double hi) : n(n_), lo(lo_), step((hi - lo_) / (n_ - 1)) {
    adj.resize(static_cast<std::size_t>(n) * n);
    const int offs[16][2] = {{1, 0},  {0, 1},  {-1, 0}, {0, -1}, {1, 1},  {1, -1}, {-1, 1}, {-1, -1},
                             {2, 1},  {1, 2},  {-1, 2}, {-2, 1}, {-2, -1}, {-1, -2}, {1, -2}, {2, -1}};
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        for (const auto& o : offs) {
          const int a = i + o[0], b = j + o[1];
          if (a < 0 || b < 0 || a >= n || b >= n) continue;
          const Vector p = node(i, j), q = node(a, b);
          const Vector dz = q - p;
          const double w = std::sqrt(dz.dot(bump_metric(s, Vector(0.5 * (p + q))) * dz));
          adj[id(i, j)].emplace_back(id(a, b), w);
        }
  }
  int id(int i, int j) const { return i * n + j; }
  Vector node(int i, int j) const { return vec2(lo + i * step, lo + j * step); }

  double distance(int from, int to) const {
    std::vector<double> dist(adj.size(), std::numeric_limits<double>::infinity());
    using Item = std::pair<double, int>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> q;
    dist[from] = 0.0;
    q.emplace(0.0, from);
    while (!q.empty()) {
      auto [d, u] = q.top();
      q.pop();
      if (u == to) return d;
      if (d > dist[u]) continue;
      for (auto [v, w] : adj[u])
        if (d + w < dist[v]) {
          dist[v] = d + w;
          q.emplace(dist[v], v);
        }
    }
    return dist[to];
  }
};

inline rfpt::LatentGraph coarse_graph(const BumpSurface& s, int side, double lo, double hi) {
  Matrix nodes(side * side, 2);
  for (int i = 0; i < side; ++i)
    for (int j = 0; j < side; ++j)
      nodes.row(i * side + j) << lo + (hi - lo) * i / (side - 1), lo + (hi - lo) * j / (side - 1);
  return rfpt::LatentGraph::build([&](const Vector& z) { return bump_metric(s, z); }, nodes, 8);
}

/// Noisy circle of radius 4 in the first two of ten coordinates.
inline Matrix circle_data(int n, double noise, std::uint64_t seed) {
  rfpt::bench::SynthSpec spec;
  spec.kind = rfpt::bench::ManifoldKind::Circle;
  spec.dim = 10;
  spec.n = n;
  spec.noise = noise;
  spec.scale = 4.0;
  spec.seed = seed;
  return rfpt::bench::make_real_dataset(spec);
}

/// A VAE trained once per test binary on circle_data(1500, 0.2, 7).
inline const rfpt::VaeModel& trained_circle_vae() {
  static const rfpt::VaeModel model = [] {
    rfpt::VaeConfig cfg;
    cfg.epochs = 80;
    cfg.seed = 11;
    return rfpt::train_two_phase(circle_data(1500, 0.2, 7), 2, cfg);
  }();
  return model;
}

inline const Matrix& trained_circle_data() {
  static const Matrix data = circle_data(1500, 0.2, 7);
  return data;
}

inline double rel_err(const Matrix& a, const Matrix& b) {
  return (a - b).norm() / std::max(b.norm(), 1e-300);
}

inline rfpt::nnet::Mlp linear_mlp(const Matrix& w, const Vector& b) {
  return rfpt::nnet::Mlp({rfpt::nnet::Layer{w, b, rfpt::nnet::Activation::Identity}});
}

// mu(z) = A z, sigma = s, encoder mean = A^+ x, encoder logvar = c.
inline rfpt::VaeModel linear_vae(const Matrix& a, double sigma, double logvar) {
  const Matrix pinv = a.completeOrthogonalDecomposition().pseudoInverse();
  const auto d = a.cols(), D = a.rows();
  return rfpt::VaeModel(linear_mlp(pinv, Vector::Zero(d)),
                        linear_mlp(Matrix::Zero(d, D), Vector::Constant(d, logvar)),
                        linear_mlp(a, Vector::Zero(D)),
                        rfpt::RbfStdNet::constant(static_cast<int>(d), static_cast<int>(D), sigma));
}

}  // namespace fixtures
