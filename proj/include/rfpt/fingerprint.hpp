#pragma once

// Artifacts and fingerprints. A generated sample is encoded, its k nearest
// real latent codes are averaged on the learned manifold (Riemannian center of
// mass), and the artifact is the sample minus the decoded center.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "rfpt/error.hpp"
#include "rfpt/geometry.hpp"
#include "rfpt/numerics.hpp"
#include "rfpt/random.hpp"
#include "rfpt/vae.hpp"

namespace rfpt {

/// Brute-force Euclidean neighbor queries over the rows of a point set.
class PointIndex {
 public:
  PointIndex() = default;
  explicit PointIndex(Matrix points) : points_(std::move(points)), columns_(points_.transpose()) {
    require(points_.rows() >= 1, Errc::InsufficientData, "index needs at least one point");
    require(points_.allFinite(), Errc::InsufficientData, "index points must be finite");
  }

  Eigen::Index size() const { return points_.rows(); }
  int dim() const { return static_cast<int>(points_.cols()); }
  const Matrix& points() const { return points_; }
  Vector point(Eigen::Index i) const { return points_.row(i).transpose(); }

  /// Indices of the k nearest points; ties go to the lower index.
  std::vector<int> knn(const Vector& z, int k) const {
    require(z.size() == dim(), Errc::DimensionMismatch, "query dimension does not match index");
    require(k >= 1 && k <= size(), Errc::KTooLarge,
            "k = " + std::to_string(k) + " but index holds " + std::to_string(size()));
    const Vector dist = (columns_.colwise() - z).colwise().squaredNorm().transpose();
    std::vector<std::pair<double, int>> order(static_cast<std::size_t>(size()));
    for (Eigen::Index i = 0; i < size(); ++i) order[i] = {dist(i), static_cast<int>(i)};
    std::partial_sort(order.begin(), order.begin() + k, order.end());
    std::vector<int> out(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) out[i] = order[i].second;
    return out;
  }

 private:
  Matrix points_;
  Matrix columns_;
};

/// Latent codes of the real dataset: the estimated data manifold.
class ManifoldIndex {
 public:
  ManifoldIndex() = default;

  static ManifoldIndex build(const VaeModel& model, const Matrix& real) {
    require(real.rows() >= 1, Errc::InsufficientData, "real dataset is empty");
    require(real.cols() == model.data_dim(), Errc::DimensionMismatch,
            "real data dimension does not match the model");
    Matrix codes(real.rows(), model.latent_dim());
    for (Eigen::Index i = 0; i < real.rows(); ++i)
      codes.row(i) = model.encoder_mean.forward(real.row(i).transpose()).transpose();
    ManifoldIndex idx;
    idx.real_ = real;
    idx.codes_ = PointIndex(std::move(codes));
    return idx;
  }

  static ManifoldIndex from_codes(Matrix codes) {
    ManifoldIndex idx;
    idx.codes_ = PointIndex(std::move(codes));
    return idx;
  }

  Eigen::Index size() const { return codes_.size(); }
  const Matrix& codes() const { return codes_.points(); }
  Vector code(Eigen::Index i) const { return codes_.point(i); }
  const Matrix& real() const { return real_; }

  std::vector<int> knn(const Vector& z, int k) const { return codes_.knn(z, k); }

  std::vector<Vector> knn_latent(const Vector& z, int k) const {
    std::vector<Vector> out;
    for (int i : knn(z, k)) out.push_back(code(i));
    return out;
  }

  /// Attaches a metric-weighted neighbor graph used to initialize geodesics.
  template <class MetricFn>
  void build_graph(const MetricFn& metric, int neighbors) {
    graph_ = LatentGraph::build(metric, codes(), neighbors);
  }

  const LatentGraph* graph() const { return graph_ ? &*graph_ : nullptr; }

 private:
  Matrix real_;
  PointIndex codes_;
  std::optional<LatentGraph> graph_;
};

// ---------------------------------------------------------------------------
// Riemannian center of mass

struct RcmOptions {
  double p = 2.0;
  double grad_tol = 1e-6;
  int max_iters = 500;
  int exp_steps = 64;
  GeodesicOptions geodesic;
  StepRule step{StepRule::Kind::Backtracking, 1.0, 0.5, 1e-4, 20};
  // Initializes the geodesics of the first evaluation; later ones warm-start
  // from the previous iterate's curves.
  const LatentGraph* graph = nullptr;
};

struct RcmDiagnostics {
  int iterations = 0;
  double grad_norm = 0.0;
  double objective = 0.0;
  bool converged = false;
  int geodesic_failures = 0;
  // Two of the k neighbors lie within 1e-6 of each other: the sample is not
  // sparse there and the local gradient formula is suspect.
  bool near_duplicate = false;
  std::vector<double> objective_history;
};

struct RcmResult {
  Vector point;
  RcmDiagnostics diagnostics;
};

namespace detail {

struct RcmEvaluation {
  double objective = 0.0;
  Vector gradient;
  std::vector<DiscreteCurve> curves;
  int failures = 0;
};

template <CurveDecoder Decoder>
RcmEvaluation rcm_evaluate(const PullbackMetric<Decoder>& m, const std::vector<Vector>& points,
                           const std::vector<double>& weights, const Vector& x,
                           const RcmOptions& opts, const std::vector<DiscreteCurve>* warm) {
  RcmEvaluation ev;
  ev.gradient = Vector::Zero(x.size());
  ev.curves.resize(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    const DiscreteCurve* start = warm && !(*warm)[i].points.empty() ? &(*warm)[i] : nullptr;
    LogResult lr = log_map_full(m, x, points[i], opts.geodesic, start ? nullptr : opts.graph, start);
    if (!lr.geodesic.converged) ++ev.failures;
    // Distance from the minimal discrete energy, d = sqrt(2E). Its gradient is
    // exactly the envelope vector, so line searches see a consistent slope.
    const double dist = lr.distance == 0.0 ? 0.0 : std::sqrt(2.0 * lr.geodesic.energy);
    ev.objective += weights[i] * std::pow(dist, opts.p) / opts.p;
    if (dist > 0.0) {
      const double factor = opts.p == 2.0 ? 1.0 : std::pow(dist, opts.p - 2.0);
      ev.gradient -= weights[i] * factor * lr.envelope;
    }
    ev.curves[i] = std::move(lr.geodesic.curve);
  }
  return ev;
}

// Curves from x to each point, re-anchored at x_new by a linear shift.
inline std::vector<DiscreteCurve> shift_curves(const std::vector<DiscreteCurve>& curves,
                                               const Vector& x, const Vector& x_new) {
  std::vector<DiscreteCurve> out = curves;
  const Vector delta = x_new - x;
  for (auto& c : out) {
    const int k = c.segments();
    for (int t = 0; t < k; ++t) c.points[t] += (1.0 - static_cast<double>(t) / k) * delta;
  }
  return out;
}

}  // namespace detail

/// Weighted L^p center of mass by Riemannian gradient descent:
///   x <- exp_x(-t grad f_p(x)),  grad f_p = -sum_i w_i d^{p-2}(x, x_i) log_x(x_i),
/// with backtracking on t (start 1, halve until Armijo holds).
template <CurveDecoder Decoder>
RcmResult rcm(const PullbackMetric<Decoder>& m, const std::vector<Vector>& points,
              const std::vector<double>& weights, const Vector& x0, const RcmOptions& opts = {}) {
  require(!points.empty(), Errc::InsufficientData, "rcm needs at least one point");
  require(points.size() == weights.size(), Errc::DimensionMismatch, "one weight per point");
  require(opts.p >= 1.0 && std::isfinite(opts.p), Errc::ConfigInvalid, "p must lie in [1, inf)");
  require(x0.allFinite() && x0.size() == m.dim(), Errc::DimensionMismatch, "x0 must be latent");
  double wsum = 0.0;
  for (double w : weights) {
    require(w >= 0.0, Errc::ConfigInvalid, "weights must be non-negative");
    wsum += w;
  }
  require(std::abs(wsum - 1.0) <= 1e-9, Errc::ConfigInvalid, "weights must sum to 1");

  RcmResult out;
  auto& diag = out.diagnostics;
  Vector x = x0;
  detail::RcmEvaluation ev = detail::rcm_evaluate(m, points, weights, x, opts, nullptr);
  diag.geodesic_failures += ev.failures;
  diag.objective_history.push_back(ev.objective);

  for (int iter = 0; iter < opts.max_iters; ++iter) {
    const double gnorm = m.norm(x, ev.gradient);
    diag.grad_norm = gnorm;
    if (gnorm <= opts.grad_tol) {
      diag.converged = true;
      break;
    }
    double t = opts.step.initial_step;
    bool accepted = false;
    for (int b = 0; b <= opts.step.max_backtracks; ++b, t *= opts.step.shrink) {
      const Vector cand = exp_map(m, TangentVector{x, -t * ev.gradient}, opts.exp_steps);
      const auto warm = detail::shift_curves(ev.curves, x, cand);
      detail::RcmEvaluation trial = detail::rcm_evaluate(m, points, weights, cand, opts, &warm);
      diag.geodesic_failures += trial.failures;
      if (std::isfinite(trial.objective) &&
          trial.objective <= ev.objective - opts.step.armijo * t * gnorm * gnorm) {
        x = cand;
        ev = std::move(trial);
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    diag.iterations = iter + 1;
    diag.objective_history.push_back(ev.objective);
  }
  diag.objective = ev.objective;
  diag.grad_norm = m.norm(x, ev.gradient);
  if (diag.grad_norm <= opts.grad_tol) diag.converged = true;
  out.point = std::move(x);
  return out;
}

/// Latent projection: RCM of the k nearest real codes with equal weights,
/// started from one of them chosen with `rng`.
struct Projection {
  Vector point;
  std::vector<int> neighbors;
  RcmDiagnostics diagnostics;
};

template <CurveDecoder Decoder>
Projection project(const PullbackMetric<Decoder>& m, const ManifoldIndex& index,
                   const Vector& z_g, int k, const RcmOptions& opts, Rng& rng) {
  Projection out;
  out.neighbors = index.knn(z_g, k);
  std::vector<Vector> pts;
  for (int i : out.neighbors) pts.push_back(index.code(i));
  const std::vector<double> weights(pts.size(), 1.0 / static_cast<double>(pts.size()));
  std::uniform_int_distribution<std::size_t> pick(0, pts.size() - 1);
  const Vector x0 = pts[pick(rng)];
  RcmOptions local = opts;
  if (!local.graph) local.graph = index.graph();
  RcmResult r = rcm(m, pts, weights, x0, local);
  out.point = std::move(r.point);
  out.diagnostics = std::move(r.diagnostics);
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = i + 1; j < pts.size(); ++j)
      if ((pts[i] - pts[j]).norm() < 1e-6) out.diagnostics.near_duplicate = true;
  return out;
}

// ---------------------------------------------------------------------------
// Artifacts

struct Artifact {
  int sample_id = 0;
  Vector ambient;     // a   = x_G - decoded projection
  Vector latent;      // a_z = z_G - z*
  Vector projection;  // z*  (in the embedding space the method works in)
  RcmDiagnostics diagnostics;
};

enum class ProjectionMethod {
  Riemannian,       // RCM under the pullback metric
  EuclideanCenter,  // centroid of the latent neighbors
};

template <CurveDecoder Decoder>
Artifact artifact(const VaeModel& model, const PullbackMetric<Decoder>& m,
                  const ManifoldIndex& index, const Vector& x_g, int k, const RcmOptions& opts,
                  Rng& rng) {
  require(x_g.size() == model.data_dim(), Errc::DimensionMismatch,
          "sample dimension does not match the model");
  require(x_g.allFinite(), Errc::NonFiniteState, "generated sample is not finite");
  const Vector z_g = model.encoder_mean.forward(x_g);
  Projection proj = project(m, index, z_g, k, opts, rng);
  Artifact a;
  a.ambient = x_g - model.decode_mean(proj.point);
  a.latent = z_g - proj.point;
  a.projection = std::move(proj.point);
  a.diagnostics = std::move(proj.diagnostics);
  return a;
}

/// Euclidean center of the latent neighbors, decoded.
inline Artifact euclidean_center_artifact(const VaeModel& model, const ManifoldIndex& index,
                                          const Vector& x_g, int k) {
  require(x_g.size() == model.data_dim(), Errc::DimensionMismatch,
          "sample dimension does not match the model");
  require(x_g.allFinite(), Errc::NonFiniteState, "generated sample is not finite");
  const Vector z_g = model.encoder_mean.forward(x_g);
  Vector center = Vector::Zero(z_g.size());
  for (int i : index.knn(z_g, k)) center += index.code(i);
  center /= static_cast<double>(k);
  Artifact a;
  a.ambient = x_g - model.decode_mean(center);
  a.latent = z_g - center;
  a.projection = std::move(center);
  a.diagnostics.converged = true;
  return a;
}

enum class BaselineVariant { OneNearest, KCenter };

/// Euclidean baselines in a fixed embedding space: projection onto the nearest
/// real sample, or onto the centroid of the k nearest real samples.
inline Artifact euclidean_baseline_artifact(const PointIndex& embedding, const Vector& x_g, int k,
                                            BaselineVariant variant) {
  const int kk = variant == BaselineVariant::OneNearest ? 1 : k;
  require(kk >= 1, Errc::KTooLarge, "k must be >= 1");
  Vector center = Vector::Zero(x_g.size());
  for (int i : embedding.knn(x_g, kk)) center += embedding.point(i);
  center /= static_cast<double>(kk);
  Artifact a;
  a.ambient = x_g - center;
  a.latent = a.ambient;
  a.projection = std::move(center);
  a.diagnostics.converged = true;
  return a;
}

// ---------------------------------------------------------------------------
// Fingerprint sets

struct FingerprintOptions {
  int k = 5;
  RcmOptions rcm;
  ProjectionMethod method = ProjectionMethod::Riemannian;
  std::uint64_t seed = 0;
  int threads = 1;
};

struct SampleFailure {
  int sample_id = 0;
  std::string message;
};

struct FingerprintSet {
  int label = 0;
  std::vector<Artifact> artifacts;  // ordered by sample id
  std::vector<SampleFailure> failures;
  int k = 0;
  double p = 2.0;
  std::uint64_t seed = 0;
};

namespace detail {

// Runs fn(i) for i in [0, n) on up to `threads` workers; fn writes slot i only.
template <class Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  const std::size_t workers =
      std::max<std::size_t>(1, std::min<std::size_t>(n, static_cast<std::size_t>(std::max(threads, 1))));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) fn(i);
    });
  for (auto& t : pool) t.join();
}

}  // namespace detail

/// One artifact per row of `samples`. Each sample draws from its own stream
/// ("rcm/x0", sample id) so results do not depend on the thread count.
template <CurveDecoder Decoder>
FingerprintSet fingerprint_set(const VaeModel& model, const PullbackMetric<Decoder>& m,
                               const ManifoldIndex& index, const Matrix& samples, int label,
                               const FingerprintOptions& opts) {
  require(samples.rows() >= 1, Errc::InsufficientData, "no generated samples");
  const auto n = static_cast<std::size_t>(samples.rows());
  std::vector<std::optional<Artifact>> slots(n);
  std::vector<std::string> errors(n);
  detail::parallel_for(n, opts.threads, [&](std::size_t i) {
    try {
      const Vector x = samples.row(static_cast<Eigen::Index>(i)).transpose();
      Artifact a;
      if (opts.method == ProjectionMethod::Riemannian) {
        Rng rng = make_rng(opts.seed, "rcm/x0", i);
        a = artifact(model, m, index, x, opts.k, opts.rcm, rng);
      } else {
        a = euclidean_center_artifact(model, index, x, opts.k);
      }
      a.sample_id = static_cast<int>(i);
      slots[i] = std::move(a);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });
  FingerprintSet set;
  set.label = label;
  set.k = opts.k;
  set.p = opts.rcm.p;
  set.seed = opts.seed;
  for (std::size_t i = 0; i < n; ++i) {
    if (slots[i])
      set.artifacts.push_back(std::move(*slots[i]));
    else
      set.failures.push_back({static_cast<int>(i), errors[i]});
  }
  return set;
}

}  // namespace rfpt
