#pragma once

// Synthetic stand-in for a zoo of generative models. A "real" distribution is a
// noisy low-dimensional manifold in R^D; each simulated generator draws from
// the same manifold and adds its own deterministic or random signature.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "rfpt/error.hpp"
#include "rfpt/numerics.hpp"
#include "rfpt/random.hpp"

namespace rfpt::bench {

enum class ManifoldKind { Circle, SwissRoll, TwoMoons };

inline std::string_view to_string(ManifoldKind k) {
  switch (k) {
    case ManifoldKind::Circle: return "circle";
    case ManifoldKind::SwissRoll: return "swiss_roll";
    case ManifoldKind::TwoMoons: return "two_moons";
  }
  return "unknown";
}

inline ManifoldKind parse_manifold(std::string_view s) {
  if (s == "circle") return ManifoldKind::Circle;
  if (s == "swiss_roll" || s == "swiss-roll") return ManifoldKind::SwissRoll;
  if (s == "two_moons" || s == "two-moons") return ManifoldKind::TwoMoons;
  throw Error(Errc::ConfigInvalid, "unknown manifold kind '" + std::string(s) + "'");
}

// Every manifold lives in the span of the first three coordinates.
inline constexpr int kManifoldSpan = 3;

struct SynthSpec {
  ManifoldKind kind = ManifoldKind::Circle;
  int dim = 10;
  double noise = 0.0;  // isotropic std, ambient units
  int n = 2000;
  double scale = 1.0;  // circle radius; overall extent of the other kinds
  std::uint64_t seed = 0;

  void validate() const {
    require(dim >= kManifoldSpan, Errc::ConfigInvalid, "dataset dim must be >= 3");
    require(n >= 100, Errc::ConfigInvalid, "dataset needs N >= 100");
    require(noise >= 0.0 && std::isfinite(noise), Errc::ConfigInvalid, "noise must be >= 0");
    require(scale > 0.0 && std::isfinite(scale), Errc::ConfigInvalid, "scale must be > 0");
  }
};

/// One noise-free point on the manifold.
inline Vector manifold_point(const SynthSpec& spec, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Vector x = Vector::Zero(spec.dim);
  constexpr double pi = std::numbers::pi;
  switch (spec.kind) {
    case ManifoldKind::Circle: {
      const double th = 2.0 * pi * u(rng);
      x(0) = std::cos(th);
      x(1) = std::sin(th);
      break;
    }
    case ManifoldKind::SwissRoll: {
      const double t = 1.5 * pi * (1.0 + 2.0 * u(rng));
      const double h = 2.0 * u(rng) - 1.0;
      x(0) = t * std::cos(t) / (4.5 * pi);
      x(1) = h;
      x(2) = t * std::sin(t) / (4.5 * pi);
      break;
    }
    case ManifoldKind::TwoMoons: {
      const double th = pi * u(rng);
      if (u(rng) < 0.5) {
        x(0) = std::cos(th) - 0.5;
        x(1) = std::sin(th) - 0.25;
      } else {
        x(0) = 0.5 - std::cos(th);
        x(1) = 0.25 - std::sin(th);
      }
      break;
    }
  }
  return spec.scale * x;
}

inline void add_noise(Vector& x, double noise, Rng& rng) {
  if (noise <= 0.0) return;
  std::normal_distribution<double> g(0.0, noise);
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) += g(rng);
}

/// Rows are samples.
inline Matrix make_real_dataset(const SynthSpec& spec, std::string_view stream = "bench/real") {
  spec.validate();
  Rng rng = make_rng(spec.seed, stream);
  Matrix out(spec.n, spec.dim);
  for (int i = 0; i < spec.n; ++i) {
    Vector x = manifold_point(spec, rng);
    add_noise(x, spec.noise, rng);
    out.row(i) = x.transpose();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Simulated generators

enum class SignatureKind { Bias, Ripple, RadialShrink, StructuredNoise };

inline std::string_view to_string(SignatureKind k) {
  switch (k) {
    case SignatureKind::Bias: return "bias";
    case SignatureKind::Ripple: return "ripple";
    case SignatureKind::RadialShrink: return "radial_shrink";
    case SignatureKind::StructuredNoise: return "structured_noise";
  }
  return "unknown";
}

/// Signature parameters are ambient and domain-free, so one family can be
/// applied to several real distributions.
///   Bias            x + m u
///   Ripple          x + m (pi/2) sin(w x_c) u
///   RadialShrink    x moved a distance m toward the manifold center
///   StructuredNoise x + m sqrt(pi/2) xi u,  xi ~ N(0, 1)
/// The constants make the mean deviation norm equal to m.
struct GmSimulator {
  int id = 1;  // class label; 0 is reserved for real data
  SignatureKind kind = SignatureKind::Bias;
  Vector direction;  // unit, orthogonal to the manifold span
  double magnitude = 0.0;
  double frequency = 3.0;
  int coordinate = 0;
};

struct GeneratorDraw {
  Matrix samples;     // rows are generated samples
  Matrix deviations;  // sample minus its (noisy) real counterpart
};

/// Mean of the noise-free manifold, used as the shrink target.
inline Vector manifold_center(const SynthSpec& spec) {
  Vector c = Vector::Zero(spec.dim);
  if (spec.kind == ManifoldKind::SwissRoll) {
    // Closed-form mean of t cos t, t sin t over t in [1.5 pi, 4.5 pi].
    constexpr double pi = std::numbers::pi;
    const double a = 1.5 * pi, b = 4.5 * pi;
    const auto cos_int = [](double t) { return std::cos(t) + t * std::sin(t); };
    const auto sin_int = [](double t) { return std::sin(t) - t * std::cos(t); };
    c(0) = (cos_int(b) - cos_int(a)) / (b - a) / (4.5 * pi);
    c(2) = (sin_int(b) - sin_int(a)) / (b - a) / (4.5 * pi);
  }
  return spec.scale * c;
}

inline Vector signature(const GmSimulator& g, const SynthSpec& spec, const Vector& base,
                        Rng& rng) {
  constexpr double pi = std::numbers::pi;
  switch (g.kind) {
    case SignatureKind::Bias:
      return g.magnitude * g.direction;
    case SignatureKind::Ripple:
      return g.magnitude * (pi / 2.0) * std::sin(g.frequency * base(g.coordinate)) * g.direction;
    case SignatureKind::RadialShrink: {
      const Vector toward = manifold_center(spec) - base;
      const double n = toward.norm();
      return n > 0.0 ? Vector(g.magnitude * toward / n) : Vector::Zero(base.size());
    }
    case SignatureKind::StructuredNoise: {
      std::normal_distribution<double> xi(0.0, 1.0);
      return g.magnitude * std::sqrt(pi / 2.0) * xi(rng) * g.direction;
    }
  }
  return Vector::Zero(base.size());
}

/// n samples of generator g on the manifold of `spec`.
inline GeneratorDraw sample_generator(const GmSimulator& g, const SynthSpec& spec, int n,
                                      std::uint64_t seed) {
  spec.validate();
  require(g.direction.size() == spec.dim, Errc::DimensionMismatch,
          "generator direction does not match the domain dimension");
  Rng rng = make_rng(seed, "bench/generator", static_cast<std::uint64_t>(g.id));
  GeneratorDraw out{Matrix(n, spec.dim), Matrix(n, spec.dim)};
  for (int i = 0; i < n; ++i) {
    const Vector clean = manifold_point(spec, rng);
    Vector x = clean;
    add_noise(x, spec.noise, rng);
    const Vector dev = signature(g, spec, clean, rng);
    out.samples.row(i) = (x + dev).transpose();
    out.deviations.row(i) = dev.transpose();
  }
  return out;
}

struct GeneratorFamily {
  std::vector<GmSimulator> generators;
  std::vector<Matrix> samples;     // one block per generator, same order
  std::vector<Matrix> deviations;
};

/// Orthonormal directions in the complement of the manifold span. Directions
/// beyond the complement's dimension are random unit vectors.
inline std::vector<Vector> complement_directions(int dim, int count, Rng& rng) {
  const int free = dim - kManifoldSpan;
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<Vector> out;
  for (int i = 0; i < count; ++i) {
    Vector v = Vector::Zero(dim);
    if (free <= 0) {
      for (int j = 0; j < dim; ++j) v(j) = g(rng);
    } else {
      for (int j = kManifoldSpan; j < dim; ++j) v(j) = g(rng);
      if (i < free)
        for (const auto& u : out) v -= u.dot(v) * u;
    }
    out.push_back(v / v.norm());
  }
  return out;
}

/// M generators cycling through bias, ripple, radial shrink, structured noise,
/// then bias again with a fresh orthogonal direction. Magnitudes are spread
/// evenly over [lo, hi] (same units as the data).
inline std::vector<GmSimulator> make_generators(int dim, int m, double lo, double hi,
                                                std::uint64_t seed, double frequency = 3.0) {
  require(m >= 2, Errc::ConfigInvalid, "a generator family needs M >= 2");
  require(lo >= 0.0 && hi >= lo, Errc::ConfigInvalid, "magnitudes must satisfy 0 <= lo <= hi");
  Rng rng = make_rng(seed, "bench/signatures");
  const auto dirs = complement_directions(dim, m, rng);
  constexpr SignatureKind cycle[] = {SignatureKind::Bias, SignatureKind::Ripple,
                                     SignatureKind::RadialShrink, SignatureKind::StructuredNoise};
  std::vector<GmSimulator> out;
  for (int i = 0; i < m; ++i) {
    GmSimulator g;
    g.id = i + 1;
    g.kind = cycle[i % 4];
    g.direction = dirs[static_cast<std::size_t>(i)];
    g.magnitude = m == 1 ? lo : lo + (hi - lo) * i / (m - 1);
    g.frequency = frequency;
    g.coordinate = 0;
    out.push_back(std::move(g));
  }
  return out;
}

inline GeneratorFamily make_generator_family(const SynthSpec& spec, int m, double lo, double hi,
                                             int samples_per_generator, std::uint64_t seed) {
  GeneratorFamily fam;
  fam.generators = make_generators(spec.dim, m, lo, hi, seed);
  for (const auto& g : fam.generators) {
    GeneratorDraw d = sample_generator(g, spec, samples_per_generator, spec.seed);
    fam.samples.push_back(std::move(d.samples));
    fam.deviations.push_back(std::move(d.deviations));
  }
  return fam;
}

// ---------------------------------------------------------------------------
// Labeled datasets and splits

enum class Split : int { Train = 0, Val = 1, Test = 2 };

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "unknown";
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw Error(Errc::FormatError, "unknown split '" + std::string(s) + "'");
}

struct LabeledDataset {
  Matrix samples;           // rows
  std::vector<int> labels;  // 0 = real, g = generator id
  std::vector<Split> splits;

  Eigen::Index size() const { return samples.rows(); }
  int num_classes() const {
    return labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
  }
  std::vector<int> indices(Split s) const {
    std::vector<int> out;
    for (std::size_t i = 0; i < splits.size(); ++i)
      if (splits[i] == s) out.push_back(static_cast<int>(i));
    return out;
  }
};

struct SplitIndices {
  std::vector<int> train, val, test;
};

/// Stratified 7:2:1 split. Per class of size n: round(0.7 n) train,
/// round(0.2 n) val, the rest test.
inline SplitIndices split_7_2_1(const std::vector<int>& labels, std::uint64_t seed) {
  require(labels.size() >= 10, Errc::TooFewSamples,
          "a 7:2:1 split needs at least 10 samples, got " + std::to_string(labels.size()));
  const int classes = *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<std::vector<int>> by_class(static_cast<std::size_t>(classes));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require(labels[i] >= 0, Errc::ConfigInvalid, "labels must be non-negative");
    by_class[static_cast<std::size_t>(labels[i])].push_back(static_cast<int>(i));
  }
  SplitIndices out;
  for (int c = 0; c < classes; ++c) {
    auto& idx = by_class[static_cast<std::size_t>(c)];
    Rng rng = make_rng(seed, "bench/split", static_cast<std::uint64_t>(c));
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n = static_cast<double>(idx.size());
    const auto n_train = static_cast<std::size_t>(std::lround(0.7 * n));
    const auto n_val =
        std::min(idx.size() - n_train, static_cast<std::size_t>(std::lround(0.2 * n)));
    out.train.insert(out.train.end(), idx.begin(), idx.begin() + n_train);
    out.val.insert(out.val.end(), idx.begin() + n_train, idx.begin() + n_train + n_val);
    out.test.insert(out.test.end(), idx.begin() + n_train + n_val, idx.end());
  }
  for (auto* v : {&out.train, &out.val, &out.test}) std::sort(v->begin(), v->end());
  return out;
}

inline void apply_split(LabeledDataset& ds, const SplitIndices& s) {
  ds.splits.assign(static_cast<std::size_t>(ds.size()), Split::Train);
  for (int i : s.val) ds.splits[static_cast<std::size_t>(i)] = Split::Val;
  for (int i : s.test) ds.splits[static_cast<std::size_t>(i)] = Split::Test;
}

/// Real class (fresh draws from the real distribution) followed by every
/// generator's samples, split 7:2:1.
inline LabeledDataset make_labeled_dataset(const SynthSpec& spec,
                                           const std::vector<GmSimulator>& generators,
                                           int samples_per_class, std::uint64_t split_seed) {
  SynthSpec real_spec = spec;
  real_spec.n = std::max(samples_per_class, 100);
  Matrix real = make_real_dataset(real_spec, "bench/real-class");
  const auto per = static_cast<Eigen::Index>(samples_per_class);
  LabeledDataset ds;
  ds.samples.resize(per * static_cast<Eigen::Index>(generators.size() + 1), spec.dim);
  ds.samples.topRows(per) = real.topRows(per);
  ds.labels.assign(static_cast<std::size_t>(per), 0);
  Eigen::Index row = per;
  for (const auto& g : generators) {
    GeneratorDraw d = sample_generator(g, spec, samples_per_class, spec.seed);
    ds.samples.middleRows(row, per) = d.samples;
    ds.labels.insert(ds.labels.end(), static_cast<std::size_t>(per), g.id);
    row += per;
  }
  apply_split(ds, split_7_2_1(ds.labels, split_seed));
  return ds;
}

/// The same generator family applied to two different real manifolds.
inline std::pair<LabeledDataset, LabeledDataset> cross_domain_pair(
    const SynthSpec& a, const SynthSpec& b, const std::vector<GmSimulator>& generators,
    int samples_per_class, std::uint64_t split_seed) {
  require(a.kind != b.kind, Errc::ConfigInvalid, "cross-domain pair needs distinct manifolds");
  require(a.dim == b.dim, Errc::DimensionMismatch, "cross-domain pair needs equal dimensions");
  return {make_labeled_dataset(a, generators, samples_per_class, split_seed),
          make_labeled_dataset(b, generators, samples_per_class, split_seed)};
}

// ---------------------------------------------------------------------------
// Two-sample energy statistic

/// V-statistic 2 E|X - Y| - E|X - X'| - E|Y - Y'| over the rows.
inline double energy_statistic(const Matrix& x, const Matrix& y) {
  require(x.rows() >= 1 && y.rows() >= 1 && x.cols() == y.cols(), Errc::DimensionMismatch,
          "energy statistic needs two non-empty samples of equal dimension");
  const auto mean_dist = [](const Matrix& a, const Matrix& b) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      s += (b.rowwise() - a.row(i)).rowwise().norm().sum();
    return s / static_cast<double>(a.rows() * b.rows());
  };
  return 2.0 * mean_dist(x, y) - mean_dist(x, x) - mean_dist(y, y);
}

struct EnergyTest {
  double statistic = 0.0;
  double threshold = 0.0;  // (1 - alpha) quantile of the permutation distribution
  double p_value = 1.0;
  bool reject() const { return statistic > threshold; }
};

inline EnergyTest energy_test(const Matrix& x, const Matrix& y, int permutations,
                              double alpha, std::uint64_t seed) {
  require(permutations >= 1, Errc::ConfigInvalid, "energy test needs permutations >= 1");
  EnergyTest out;
  out.statistic = energy_statistic(x, y);
  Matrix pooled(x.rows() + y.rows(), x.cols());
  pooled << x, y;
  std::vector<Eigen::Index> order(static_cast<std::size_t>(pooled.rows()));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<Eigen::Index>(i);
  Rng rng = make_rng(seed, "bench/energy");
  std::vector<double> null;
  int exceed = 0;
  for (int p = 0; p < permutations; ++p) {
    std::shuffle(order.begin(), order.end(), rng);
    Matrix a(x.rows(), x.cols()), b(y.rows(), y.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) a.row(i) = pooled.row(order[i]);
    for (Eigen::Index i = 0; i < y.rows(); ++i) b.row(i) = pooled.row(order[x.rows() + i]);
    null.push_back(energy_statistic(a, b));
    if (null.back() >= out.statistic) ++exceed;
  }
  std::sort(null.begin(), null.end());
  const auto q = static_cast<std::size_t>(
      std::min<double>(null.size() - 1, std::ceil((1.0 - alpha) * null.size()) - 1));
  out.threshold = null[q];
  out.p_value = (1.0 + exceed) / (1.0 + permutations);
  return out;
}

}  // namespace rfpt::bench
