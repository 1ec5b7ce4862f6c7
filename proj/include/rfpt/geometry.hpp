#pragma once

// Riemannian machinery on a decoder's latent space. The metric is the pullback
//   g(z) = J_mu^T J_mu + J_sigma^T J_sigma + lambda(z) I
// through embed(z) = [mu(z); sigma(z)]. Geodesics are found by minimizing the
// discrete ambient energy of a latent polyline; exp is integrated with RK4.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <functional>
#include <limits>
#include <queue>
#include <utility>
#include <vector>

#include "rfpt/error.hpp"
#include "rfpt/numerics.hpp"

namespace rfpt {

/// A smooth map from latent space into an embedding space whose Euclidean
/// geometry is pulled back. VaeModel satisfies it.
template <class D>
concept CurveDecoder = requires(const D& dec, const Vector& z, Vector* value) {
  { dec.latent_dim() } -> std::convertible_to<int>;
  { dec.embed(z) } -> std::convertible_to<Vector>;
  { dec.embed_jacobian(z, value) } -> std::convertible_to<Matrix>;
  { dec.embed_second(z, z) } -> std::convertible_to<Vector>;
};

/// Anything that produces a geodesic acceleration z'' from (z, z').
template <class F>
concept GeodesicField = requires(const F& f, const Vector& z) {
  { f.acceleration(z, z) } -> std::convertible_to<Vector>;
};

struct TangentVector {
  Vector base;
  Vector direction;
};

struct DiscreteCurve {
  std::vector<Vector> points;  // K + 1 latent points, endpoints fixed

  int segments() const { return static_cast<int>(points.size()) - 1; }

  static DiscreteCurve straight(const Vector& p, const Vector& q, int segments) {
    require(segments >= 1, Errc::ConfigInvalid, "a curve needs at least one segment");
    DiscreteCurve c;
    c.points.reserve(static_cast<std::size_t>(segments) + 1);
    for (int t = 0; t <= segments; ++t) {
      const double s = static_cast<double>(t) / segments;
      c.points.push_back((1.0 - s) * p + s * q);
    }
    c.points.back() = q;
    return c;
  }
};

template <CurveDecoder Decoder>
class PullbackMetric {
 public:
  explicit PullbackMetric(const Decoder& decoder, double jitter = 1e-6)
      : decoder_(&decoder), jitter_(jitter) {}
  PullbackMetric(Decoder&&, double = 1e-6) = delete;  // holds a reference

  const Decoder& decoder() const { return *decoder_; }
  int dim() const { return decoder_->latent_dim(); }
  double jitter() const { return jitter_; }

  /// J^T J + lambda I with lambda = jitter * trace(J^T J) / d.
  Matrix metric_at(const Vector& z) const {
    require(z.allFinite(), Errc::NonFiniteJacobian, "metric requested at a non-finite point");
    const Matrix jac = decoder_->embed_jacobian(z, nullptr);
    require(jac.allFinite(), Errc::NonFiniteJacobian, "decoder Jacobian is not finite");
    return regularize(jac);
  }

  Matrix operator()(const Vector& z) const { return metric_at(z); }

  double norm(const Vector& base, const Vector& v) const {
    return std::sqrt(std::max(0.0, v.dot(metric_at(base) * v)));
  }

  /// Geodesic acceleration of the pullback metric:
  ///   g(z) z'' = -J^T (d^2/dt^2 embed(z + t z'))
  /// Exact second derivatives of the decoder, no metric differencing.
  Vector acceleration(const Vector& z, const Vector& v) const {
    const Matrix jac = decoder_->embed_jacobian(z, nullptr);
    const Vector second = decoder_->embed_second(z, v);
    const Vector rhs = -(jac.transpose() * second);
    return regularize(jac).llt().solve(rhs);
  }

 private:
  Matrix regularize(const Matrix& jac) const {
    Matrix g = jac.transpose() * jac;
    const double lambda = jitter_ * g.trace() / static_cast<double>(g.rows());
    g.diagonal().array() += std::max(lambda, std::numeric_limits<double>::min());
    return g;
  }

  const Decoder* decoder_;
  double jitter_;
};

/// Christoffel symbols of the second kind, gamma[k](i, j) = Gamma^k_ij.
using Christoffel = std::vector<Matrix>;

inline double christoffel_step(const Vector& z) { return 1e-4 * (1.0 + z.norm()); }

/// Gamma^k_ij = 1/2 g^{kl} (d_i g_lj + d_j g_li - d_l g_ij), metric derivatives
/// by central differences with step h (h <= 0 selects 1e-4 (1 + |z|)).
template <class MetricFn>
Christoffel christoffel_at(const MetricFn& metric, const Vector& z, double h = 0.0) {
  require(z.allFinite(), Errc::NonFiniteState, "christoffel_at needs a finite point");
  if (h <= 0.0) h = christoffel_step(z);
  const Eigen::Index d = z.size();
  const Matrix g = metric(z);
  std::vector<Matrix> dg(static_cast<std::size_t>(d));  // dg[i] = d_i g
  Vector probe = z;
  for (Eigen::Index i = 0; i < d; ++i) {
    probe(i) = z(i) + h;
    const Matrix gp = metric(probe);
    probe(i) = z(i) - h;
    const Matrix gm = metric(probe);
    probe(i) = z(i);
    dg[i] = (gp - gm) / (2.0 * h);
  }
  const Matrix ginv = g.llt().solve(Matrix::Identity(d, d));
  Christoffel gamma(static_cast<std::size_t>(d), Matrix::Zero(d, d));
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = i; j < d; ++j) {
      Vector lowered(d);  // Gamma_{l,ij}
      for (Eigen::Index l = 0; l < d; ++l)
        lowered(l) = 0.5 * (dg[i](l, j) + dg[j](l, i) - dg[l](i, j));
      const Vector raised = ginv * lowered;
      for (Eigen::Index k = 0; k < d; ++k) {
        gamma[k](i, j) = raised(k);
        gamma[k](j, i) = raised(k);
      }
    }
  }
  for (const auto& m : gamma)
    require(m.allFinite(), Errc::NonFiniteState, "Christoffel symbols are not finite");
  return gamma;
}

/// Geodesic field of an arbitrary metric through its Christoffel symbols.
template <class MetricFn>
class ChristoffelField {
 public:
  explicit ChristoffelField(MetricFn metric, double h = 0.0) : metric_(std::move(metric)), h_(h) {}

  Vector acceleration(const Vector& z, const Vector& v) const {
    const Christoffel gamma = christoffel_at(metric_, z, h_);
    Vector a(z.size());
    for (Eigen::Index k = 0; k < z.size(); ++k) a(k) = -v.dot(gamma[k] * v);
    return a;
  }

 private:
  MetricFn metric_;
  double h_;
};

/// exp_base(direction): RK4 on z'' = -Gamma(z)[z', z'] over unit time.
template <GeodesicField Field>
Vector exp_map(const Field& field, const TangentVector& v, int steps = 64) {
  require(v.base.allFinite() && v.direction.allFinite(), Errc::NonFiniteState,
          "exp_map needs a finite tangent vector");
  require(v.base.size() == v.direction.size(), Errc::DimensionMismatch,
          "tangent vector base/direction sizes differ");
  if (v.direction.squaredNorm() == 0.0) return v.base;
  const Eigen::Index d = v.base.size();
  Vector state(2 * d);
  state << v.base, v.direction;
  const Vector end = rk4_integrate(
      [&](const Vector& s) {
        Vector ds(2 * d);
        ds << s.tail(d), field.acceleration(s.head(d), s.tail(d));
        return ds;
      },
      state, 1.0, steps);
  return end.head(d);
}

// ---------------------------------------------------------------------------
// Curves

template <CurveDecoder Decoder>
double curve_length_ambient(const PullbackMetric<Decoder>& m, const DiscreteCurve& c) {
  require(c.segments() >= 1, Errc::ConfigInvalid, "curve needs K >= 1");
  double len = 0.0;
  Vector prev = m.decoder().embed(c.points.front());
  for (std::size_t t = 1; t < c.points.size(); ++t) {
    Vector cur = m.decoder().embed(c.points[t]);
    len += (cur - prev).norm();
    prev = std::move(cur);
  }
  return len;
}

/// Midpoint quadrature of the integral of sqrt(c'^T g c').
template <class MetricFn>
double curve_length_metric(const MetricFn& metric, const DiscreteCurve& c) {
  require(c.segments() >= 1, Errc::ConfigInvalid, "curve needs K >= 1");
  double len = 0.0;
  for (std::size_t t = 0; t + 1 < c.points.size(); ++t) {
    const Vector dz = c.points[t + 1] - c.points[t];
    if (dz.squaredNorm() == 0.0) continue;
    const Vector mid = 0.5 * (c.points[t] + c.points[t + 1]);
    len += std::sqrt(std::max(0.0, dz.dot(metric(mid) * dz)));
  }
  return len;
}

/// E = (K / 2) sum_t |embed(z_{t+1}) - embed(z_t)|^2 and, when requested, its
/// gradient with respect to the interior points (one row per interior point).
template <CurveDecoder Decoder>
double curve_energy(const PullbackMetric<Decoder>& m, const DiscreteCurve& c,
                    Matrix* interior_grad = nullptr) {
  const int k = c.segments();
  require(k >= 1, Errc::ConfigInvalid, "curve needs K >= 1");
  const auto& dec = m.decoder();
  std::vector<Vector> f(c.points.size());
  std::vector<Matrix> jac(c.points.size());
  for (std::size_t t = 0; t < c.points.size(); ++t) {
    const bool interior = t > 0 && t + 1 < c.points.size();
    if (interior && interior_grad)
      jac[t] = dec.embed_jacobian(c.points[t], &f[t]);
    else
      f[t] = dec.embed(c.points[t]);
  }
  double e = 0.0;
  for (std::size_t t = 0; t + 1 < f.size(); ++t) e += (f[t + 1] - f[t]).squaredNorm();
  e *= 0.5 * k;
  if (interior_grad) {
    interior_grad->resize(std::max(k - 1, 0), m.dim());
    for (int t = 1; t < k; ++t)
      interior_grad->row(t - 1) =
          (k * (jac[t].transpose() * (2.0 * f[t] - f[t - 1] - f[t + 1]))).transpose();
  }
  return e;
}

// ---------------------------------------------------------------------------
// Neighbor graph over latent codes, used to initialize long geodesics.

class LatentGraph {
 public:
  LatentGraph() = default;

  /// k-nearest-neighbor graph (symmetrized) over the rows of `nodes`; edge
  /// weights are metric lengths of the straight segments.
  template <class MetricFn>
  static LatentGraph build(const MetricFn& metric, const Matrix& nodes, int neighbors) {
    const Eigen::Index n = nodes.rows();
    require(n >= 1, Errc::InsufficientData, "graph needs nodes");
    LatentGraph g;
    g.nodes_ = nodes;
    g.adj_.assign(static_cast<std::size_t>(n), {});
    const int k = static_cast<int>(std::min<Eigen::Index>(neighbors, n - 1));
    std::vector<std::pair<double, int>> cand;
    for (Eigen::Index i = 0; i < n; ++i) {
      cand.clear();
      for (Eigen::Index j = 0; j < n; ++j)
        if (j != i) cand.emplace_back((nodes.row(j) - nodes.row(i)).squaredNorm(), static_cast<int>(j));
      std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
      for (int r = 0; r < k; ++r) {
        const int j = cand[r].second;
        const Vector a = nodes.row(i).transpose(), b = nodes.row(j).transpose();
        const Vector dz = b - a;
        const double w = std::sqrt(std::max(0.0, dz.dot(metric(Vector(0.5 * (a + b))) * dz)));
        g.add_edge(static_cast<int>(i), j, w);
        g.add_edge(j, static_cast<int>(i), w);
      }
    }
    return g;
  }

  bool empty() const { return nodes_.rows() == 0; }
  const Matrix& nodes() const { return nodes_; }

  int nearest(const Vector& z) const {
    Eigen::Index arg = 0;
    (nodes_.rowwise() - z.transpose()).rowwise().squaredNorm().minCoeff(&arg);
    return static_cast<int>(arg);
  }

  /// Node sequence of the shortest path between two nodes (empty if unreachable).
  std::vector<int> shortest_path(int from, int to) const {
    const auto n = adj_.size();
    std::vector<double> dist(n, std::numeric_limits<double>::infinity());
    std::vector<int> prev(n, -1);
    using Item = std::pair<double, int>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> queue;
    dist[from] = 0.0;
    queue.emplace(0.0, from);
    while (!queue.empty()) {
      auto [du, u] = queue.top();
      queue.pop();
      if (du > dist[u]) continue;
      if (u == to) break;
      for (const auto& [v, w] : adj_[u]) {
        if (du + w < dist[v]) {
          dist[v] = du + w;
          prev[v] = u;
          queue.emplace(dist[v], v);
        }
      }
    }
    if (!std::isfinite(dist[to])) return {};
    std::vector<int> path;
    for (int v = to; v != -1; v = prev[v]) path.push_back(v);
    std::reverse(path.begin(), path.end());
    return path;
  }

 private:
  void add_edge(int a, int b, double w) {
    for (auto& [v, old] : adj_[a])
      if (v == b) {
        old = std::min(old, w);
        return;
      }
    adj_[a].emplace_back(b, w);
  }

  Matrix nodes_;
  std::vector<std::vector<std::pair<int, double>>> adj_;
};

namespace detail {

// K + 1 points equally spaced by latent arc length along a polyline.
inline DiscreteCurve resample_polyline(const std::vector<Vector>& poly, int segments) {
  std::vector<double> cum(poly.size(), 0.0);
  for (std::size_t i = 1; i < poly.size(); ++i) cum[i] = cum[i - 1] + (poly[i] - poly[i - 1]).norm();
  const double total = cum.back();
  if (total == 0.0) return DiscreteCurve::straight(poly.front(), poly.back(), segments);
  DiscreteCurve c;
  std::size_t seg = 0;
  for (int t = 0; t <= segments; ++t) {
    const double s = total * t / segments;
    while (seg + 2 < poly.size() && cum[seg + 1] < s) ++seg;
    const double len = cum[seg + 1] - cum[seg];
    const double u = len > 0.0 ? std::clamp((s - cum[seg]) / len, 0.0, 1.0) : 0.0;
    c.points.push_back((1.0 - u) * poly[seg] + u * poly[seg + 1]);
  }
  c.points.front() = poly.front();
  c.points.back() = poly.back();
  return c;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Boundary-value geodesics

struct GeodesicOptions {
  int segments = 16;
  // Stop when |grad E| <= grad_tol * (gradient scale of the problem).
  double grad_tol = 1e-8;
  int max_iters = 200;
};

struct GeodesicResult {
  DiscreteCurve curve;
  double energy = 0.0;
  double length = 0.0;  // ambient (decoded) length
  double grad_norm = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Discrete geodesic from p to q: minimizes the ambient curve energy over the
/// interior points with Gauss-Newton-preconditioned descent and backtracking.
/// Initialized from the cheaper (in energy) of the straight line, the optional
/// warm start, and the shortest path through `graph`.
template <CurveDecoder Decoder>
GeodesicResult geodesic_bvp(const PullbackMetric<Decoder>& m, const Vector& p, const Vector& q,
                            const GeodesicOptions& opts = {}, const LatentGraph* graph = nullptr,
                            const DiscreteCurve* warm_start = nullptr) {
  require(p.allFinite() && q.allFinite(), Errc::NonFiniteState, "geodesic endpoints not finite");
  require(p.size() == m.dim() && q.size() == m.dim(), Errc::DimensionMismatch,
          "geodesic endpoints must be latent points");
  const int k = opts.segments;
  require(k >= 1, Errc::ConfigInvalid, "geodesic needs at least one segment");

  GeodesicResult out;
  out.curve = DiscreteCurve::straight(p, q, k);
  if (p == q) {
    out.converged = true;
    return out;
  }
  out.energy = curve_energy(m, out.curve);

  auto consider = [&](DiscreteCurve cand) {
    if (cand.segments() != k) return;
    cand.points.front() = p;
    cand.points.back() = q;
    const double e = curve_energy(m, cand);
    if (std::isfinite(e) && e < out.energy) {
      out.energy = e;
      out.curve = std::move(cand);
    }
  };
  if (warm_start) consider(*warm_start);
  if (graph && !graph->empty()) {
    const auto path = graph->shortest_path(graph->nearest(p), graph->nearest(q));
    if (path.size() >= 2) {
      std::vector<Vector> poly{p};
      for (int node : path) poly.push_back(graph->nodes().row(node).transpose());
      poly.push_back(q);
      consider(detail::resample_polyline(poly, k));
    }
  }

  if (k == 1) {
    out.length = curve_length_ambient(m, out.curve);
    out.converged = true;
    return out;
  }

  const int d = m.dim();
  const int n_int = k - 1;
  const auto& dec = m.decoder();
  const Vector fp = dec.embed(p), fq = dec.embed(q);

  // Jacobians at the most recently evaluated interior configuration.
  Vector cached_x;
  std::vector<Matrix> cached_jac(static_cast<std::size_t>(n_int));

  auto unpack = [&](const Vector& x, int t) -> Vector { return x.segment((t - 1) * d, d); };

  auto objective = [&](const Vector& x, Vector* grad) {
    std::vector<Vector> f(static_cast<std::size_t>(k) + 1);
    f.front() = fp;
    f.back() = fq;
    for (int t = 1; t < k; ++t) cached_jac[t - 1] = dec.embed_jacobian(unpack(x, t), &f[t]);
    cached_x = x;
    double e = 0.0;
    for (int t = 0; t < k; ++t) e += (f[t + 1] - f[t]).squaredNorm();
    if (grad) {
      grad->resize(x.size());
      for (int t = 1; t < k; ++t)
        grad->segment((t - 1) * d, d) =
            k * (cached_jac[t - 1].transpose() * (2.0 * f[t] - f[t - 1] - f[t + 1]));
    }
    return 0.5 * k * e;
  };

  auto gauss_newton = [&](const Vector& x, const Vector& grad) -> Vector {
    if (cached_x.size() != x.size() || cached_x != x) objective(x, nullptr);
    Matrix h = Matrix::Zero(n_int * d, n_int * d);
    for (int t = 0; t < n_int; ++t) {
      h.block(t * d, t * d, d, d) = 2.0 * k * cached_jac[t].transpose() * cached_jac[t];
      if (t + 1 < n_int) {
        const Matrix off = -k * cached_jac[t].transpose() * cached_jac[t + 1];
        h.block(t * d, (t + 1) * d, d, d) = off;
        h.block((t + 1) * d, t * d, d, d) = off.transpose();
      }
    }
    const double ridge = 1e-10 * h.trace() / static_cast<double>(h.rows()) +
                         std::numeric_limits<double>::min();
    h.diagonal().array() += ridge;
    Eigen::LLT<Matrix> llt(h);
    if (llt.info() != Eigen::Success) return -grad;
    return llt.solve(-grad);
  };

  Vector x0(n_int * d);
  for (int t = 1; t < k; ++t) x0.segment((t - 1) * d, d) = out.curve.points[t];

  // Gradient scale: K |f(q) - f(p)| times the typical decoder stretch.
  const Matrix jp = dec.embed_jacobian(p, nullptr);
  const double scale = k * (fq - fp).norm() * std::max(jp.norm(), 1e-12);
  StopRule stop;
  stop.grad_tol = opts.grad_tol * scale + 1e-300;
  stop.max_iters = opts.max_iters;
  const DescentResult res = gradient_descent(objective, x0, StepRule{}, stop, gauss_newton);

  for (int t = 1; t < k; ++t) out.curve.points[t] = unpack(res.x, t);
  out.energy = res.value;
  out.grad_norm = res.grad_norm;
  out.iterations = res.iterations;
  // A stalled line search at a tiny gradient is numerical stationarity.
  out.converged = res.converged || (res.stalled && res.grad_norm <= 1e-5 * scale);
  out.length = curve_length_ambient(m, out.curve);
  return out;
}

/// Ambient length of the discrete geodesic. Throws NoConvergence when the
/// solver fails.
template <CurveDecoder Decoder>
double geodesic_distance(const PullbackMetric<Decoder>& m, const Vector& p, const Vector& q,
                         const GeodesicOptions& opts = {}, const LatentGraph* graph = nullptr) {
  const GeodesicResult r = geodesic_bvp(m, p, q, opts, graph);
  if (!r.converged) {
    throw Error(Errc::NoConvergence,
                "geodesic solver stopped with gradient norm " + std::to_string(r.grad_norm));
  }
  return r.length;
}

struct LogResult {
  TangentVector vector;
  double distance = 0.0;
  GeodesicResult geodesic;
  // g^{-1} K J(x)^T (f(c_1) - f(c_0)) before rescaling: minus the Riemannian
  // gradient of the discrete energy in x.
  Vector envelope;
};

/// Initial velocity of the discrete geodesic from x to y, rescaled so its
/// metric norm at x equals the geodesic distance. The velocity is the metric
/// dual of the first decoded segment, g^{-1} K J(x)^T (f(c_1) - f(c_0)), which
/// is minus the exact gradient of the discrete energy in x and agrees with
/// K (c_1 - c_0) to first order.
template <CurveDecoder Decoder>
LogResult log_map_full(const PullbackMetric<Decoder>& m, const Vector& x, const Vector& y,
                       const GeodesicOptions& opts = {}, const LatentGraph* graph = nullptr,
                       const DiscreteCurve* warm_start = nullptr) {
  LogResult out;
  out.geodesic = geodesic_bvp(m, x, y, opts, graph, warm_start);
  out.distance = out.geodesic.length;
  if (out.distance == 0.0) {
    out.vector = {x, Vector::Zero(x.size())};
    out.envelope = Vector::Zero(x.size());
    return out;
  }
  const auto& pts = out.geodesic.curve.points;
  const double k = static_cast<double>(out.geodesic.curve.segments());
  Vector f0;
  const Matrix jac = m.decoder().embed_jacobian(pts[0], &f0);
  const Vector f1 = m.decoder().embed(pts[1]);
  const Matrix g = m.metric_at(x);
  out.envelope = g.llt().solve(Vector(k * (jac.transpose() * (f1 - f0))));
  Vector dir = out.envelope;
  const double n = std::sqrt(std::max(0.0, dir.dot(g * dir)));
  if (n > 0.0) dir *= out.distance / n;
  out.vector = {x, dir};
  return out;
}

/// Newton shooting on v -> exp_map(x, v) - y from a starting velocity. Returns
/// the iterate with the smallest endpoint residual; the start itself when no
/// step improves on it.
template <class Field>
Vector shoot_towards(const Field& field, const Vector& x, const Vector& y, Vector v, int iters,
                     int exp_steps) {
  const Eigen::Index d = x.size();
  Vector hit = exp_map(field, TangentVector{x, v}, exp_steps);
  double best = (y - hit).norm();
  const double target = 1e-10 * std::max((y - x).norm(), 1e-300);
  for (int it = 0; it < iters && best > target; ++it) {
    const double h = 1e-7 * std::max(v.norm(), 1e-8);
    Matrix jac(d, d);
    for (Eigen::Index i = 0; i < d; ++i) {
      Vector vh = v;
      vh(i) += h;
      jac.col(i) = (exp_map(field, TangentVector{x, vh}, exp_steps) - hit) / h;
    }
    const Vector cand = v + jac.partialPivLu().solve(Vector(y - hit));
    if (!cand.allFinite()) break;
    const Vector cand_hit = exp_map(field, TangentVector{x, cand}, exp_steps);
    const double res = (y - cand_hit).norm();
    if (!(res < best)) break;
    v = cand;
    hit = cand_hit;
    best = res;
  }
  return v;
}

/// log_map_full followed by a few shooting steps that make exp_map(x, .) land
/// on y; the result is rescaled to the geodesic distance like log_map_full.
template <CurveDecoder Decoder>
TangentVector log_map(const PullbackMetric<Decoder>& m, const Vector& x, const Vector& y,
                      const GeodesicOptions& opts = {}, const LatentGraph* graph = nullptr,
                      int shooting_iters = 4, int exp_steps = 64) {
  LogResult r = log_map_full(m, x, y, opts, graph);
  if (!r.geodesic.converged) {
    throw Error(Errc::NoConvergence, "log_map: geodesic solver did not converge");
  }
  if (r.distance == 0.0 || shooting_iters <= 0) return r.vector;
  Vector v = shoot_towards(m, x, y, r.vector.direction, shooting_iters, exp_steps);
  const double n = m.norm(x, v);
  if (n > 0.0) v *= r.distance / n;
  return {x, v};
}

}  // namespace rfpt
