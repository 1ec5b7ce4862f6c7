#pragma once

// Pipeline configuration: an INI file with one section per stage. Missing keys
// keep their defaults; unknown keys are rejected so typos do not go unnoticed.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <set>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "rfpt/attribution.hpp"
#include "rfpt/benchmark.hpp"
#include "rfpt/error.hpp"
#include "rfpt/fingerprint.hpp"
#include "rfpt/vae.hpp"

namespace rfpt {

struct PipelineConfig {
  // [dataset]
  std::string dataset_kind = "circle";
  std::string dataset_path;  // optional CSV of real samples instead of a synthetic set
  int dim = 10;
  int n_real = 2000;
  double noise = 0.2;
  double scale = 4.0;

  // [generators]
  int generators = 5;
  int samples_per_generator = 400;
  double magnitude_min = 0.1;  // fractions of `scale`
  double magnitude_max = 0.3;
  double ripple_frequency = 3.0;

  // [vae]
  int latent_dim = 2;
  VaeConfig vae;

  // [geometry]
  int segments = 16;
  int exp_steps = 64;
  double jitter = 1e-6;
  double geodesic_tol = 1e-8;
  int geodesic_max_iters = 200;
  int graph_neighbors = 0;  // 0 disables graph initialization of geodesics

  // [fingerprint]
  int k = 5;
  double p = 2.0;
  std::string feature = "ambient";
  std::string method = "riemannian";
  double rcm_tol = 1e-6;
  int rcm_max_iters = 500;

  // [classifier]
  attr::ClassifierConfig classifier;
  double fdr_shrinkage = 0.1;

  // [benchmark]
  int seeds = 5;
  std::string domain_b = "swiss_roll";

  // [run]
  std::uint64_t seed = 0;
  int threads = 1;
  std::string out = "out";

  bench::SynthSpec synth_spec(std::uint64_t root) const {
    bench::SynthSpec s;
    s.kind = bench::parse_manifold(dataset_kind);
    s.dim = dim;
    s.noise = noise;
    s.n = n_real;
    s.scale = scale;
    s.seed = stream_seed(root, "data");
    return s;
  }

  GeodesicOptions geodesic_options() const {
    GeodesicOptions g;
    g.segments = segments;
    g.grad_tol = geodesic_tol;
    g.max_iters = geodesic_max_iters;
    return g;
  }

  RcmOptions rcm_options() const {
    RcmOptions r;
    r.p = p;
    r.grad_tol = rcm_tol;
    r.max_iters = rcm_max_iters;
    r.exp_steps = exp_steps;
    r.geodesic = geodesic_options();
    return r;
  }

  ProjectionMethod projection_method() const {
    if (method == "riemannian") return ProjectionMethod::Riemannian;
    if (method == "euclidean_center") return ProjectionMethod::EuclideanCenter;
    throw Error(Errc::ConfigInvalid, "unknown projection method '" + method + "'");
  }

  void validate() const {
    const auto check = [](bool ok, const std::string& what) { require(ok, Errc::ConfigInvalid, what); };
    bench::parse_manifold(dataset_kind);
    bench::parse_manifold(domain_b);
    attr::parse_feature_mode(feature);
    projection_method();
    if (!dataset_path.empty())
      require(std::filesystem::exists(dataset_path), Errc::FileMissing,
              "dataset.path does not exist: " + dataset_path);
    check(dim >= 3 && dim <= 256, "dataset.dim must lie in [3, 256]");
    check(n_real >= 100, "dataset.n must be >= 100");
    check(noise >= 0.0 && std::isfinite(noise), "dataset.noise must be >= 0");
    check(scale > 0.0 && std::isfinite(scale), "dataset.scale must be > 0");
    check(generators >= 2, "generators.count must be >= 2");
    check(samples_per_generator >= 10, "generators.samples must be >= 10");
    check(magnitude_min >= 0.0 && magnitude_max >= magnitude_min,
          "generators magnitudes must satisfy 0 <= min <= max");
    check(latent_dim >= 1 && latent_dim < dim && latent_dim <= 8, "vae.latent_dim must lie in [1, min(8, dim - 1)]");
    check(!vae.hidden.empty(), "vae.hidden needs at least one layer");
    for (int h : vae.hidden) check(h >= 1, "vae.hidden widths must be >= 1");
    check(vae.epochs >= 1 && vae.batch_size >= 1 && vae.lr > 0.0, "vae training parameters out of range");
    check(vae.momentum >= 0.0 && vae.momentum < 1.0, "vae.momentum must lie in [0, 1)");
    check(vae.max_centers >= 1 && vae.floor_ratio > 0.0 && vae.variance_iters >= 1,
          "vae variance parameters out of range");
    check(segments >= 1 && exp_steps >= 1, "geometry.segments and geometry.exp_steps must be >= 1");
    check(jitter > 0.0, "geometry.jitter must be > 0");
    check(geodesic_tol > 0.0 && geodesic_max_iters >= 1, "geometry solver parameters out of range");
    check(graph_neighbors >= 0, "geometry.graph_neighbors must be >= 0");
    check(k >= 1, "fingerprint.k must be >= 1");
    check(p >= 1.0 && std::isfinite(p), "fingerprint.p must lie in [1, inf)");
    check(rcm_tol > 0.0 && rcm_max_iters >= 1, "fingerprint solver parameters out of range");
    check(classifier.epochs >= 1 && classifier.batch_size >= 1 && classifier.lr > 0.0,
          "classifier training parameters out of range");
    check(classifier.momentum >= 0.0 && classifier.momentum < 1.0, "classifier.momentum must lie in [0, 1)");
    for (int h : classifier.hidden) check(h >= 1, "classifier.hidden widths must be >= 1");
    check(fdr_shrinkage >= 0.0 && fdr_shrinkage <= 1.0, "classifier.fdr_shrinkage must lie in [0, 1]");
    check(seeds >= 1, "benchmark.seeds must be >= 1");
    check(domain_b != dataset_kind, "benchmark.domain_b must differ from dataset.kind");
    check(threads >= 1, "run.threads must be >= 1");
  }
};

namespace detail {

inline std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

inline std::vector<int> parse_ints(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      require(used == item.size(), Errc::ConfigInvalid, "bad integer list '" + s + "'");
    } catch (const std::logic_error&) {
      throw Error(Errc::ConfigInvalid, "bad integer list '" + s + "'");
    }
  }
  return out;
}

// Visits every (key, field) pair; shared by load and save so they cannot drift.
template <class Visitor>
void visit_config(PipelineConfig& c, Visitor&& v) {
  v("dataset.kind", c.dataset_kind);
  v("dataset.path", c.dataset_path);
  v("dataset.dim", c.dim);
  v("dataset.n", c.n_real);
  v("dataset.noise", c.noise);
  v("dataset.scale", c.scale);
  v("generators.count", c.generators);
  v("generators.samples", c.samples_per_generator);
  v("generators.magnitude_min", c.magnitude_min);
  v("generators.magnitude_max", c.magnitude_max);
  v("generators.ripple_frequency", c.ripple_frequency);
  v("vae.latent_dim", c.latent_dim);
  v("vae.hidden", c.vae.hidden);
  v("vae.epochs", c.vae.epochs);
  v("vae.batch_size", c.vae.batch_size);
  v("vae.lr", c.vae.lr);
  v("vae.momentum", c.vae.momentum);
  v("vae.max_centers", c.vae.max_centers);
  v("vae.floor_ratio", c.vae.floor_ratio);
  v("vae.variance_iters", c.vae.variance_iters);
  v("vae.scalar_std", c.vae.scalar_std);
  v("geometry.segments", c.segments);
  v("geometry.exp_steps", c.exp_steps);
  v("geometry.jitter", c.jitter);
  v("geometry.geodesic_tol", c.geodesic_tol);
  v("geometry.geodesic_max_iters", c.geodesic_max_iters);
  v("geometry.graph_neighbors", c.graph_neighbors);
  v("fingerprint.k", c.k);
  v("fingerprint.p", c.p);
  v("fingerprint.feature", c.feature);
  v("fingerprint.method", c.method);
  v("fingerprint.rcm_tol", c.rcm_tol);
  v("fingerprint.rcm_max_iters", c.rcm_max_iters);
  v("classifier.hidden", c.classifier.hidden);
  v("classifier.linear", c.classifier.linear);
  v("classifier.epochs", c.classifier.epochs);
  v("classifier.batch_size", c.classifier.batch_size);
  v("classifier.lr", c.classifier.lr);
  v("classifier.momentum", c.classifier.momentum);
  v("classifier.fdr_shrinkage", c.fdr_shrinkage);
  v("benchmark.seeds", c.seeds);
  v("benchmark.domain_b", c.domain_b);
  v("run.seed", c.seed);
  v("run.threads", c.threads);
  v("run.out", c.out);
}

}  // namespace detail

inline PipelineConfig parse_config(const boost::property_tree::ptree& tree) {
  PipelineConfig c;
  std::set<std::string> known;
  detail::visit_config(c, [&](const std::string& key, auto& field) {
    known.insert(key);
    const auto node = tree.get_optional<std::string>(key);
    if (!node) return;
    using T = std::decay_t<decltype(field)>;
    try {
      if constexpr (std::is_same_v<T, std::vector<int>>) {
        field = detail::parse_ints(*node);
      } else if constexpr (std::is_same_v<T, std::string>) {
        field = *node;
      } else {
        field = tree.get<T>(key);
      }
    } catch (const boost::property_tree::ptree_error&) {
      throw Error(Errc::ConfigInvalid, "cannot parse " + key + " = '" + *node + "'");
    }
  });
  for (const auto& [section, body] : tree) {
    require(!body.empty() || body.data().empty(), Errc::ConfigInvalid,
            "key outside a section: " + section);
    for (const auto& [key, value] : body) {
      const std::string full = section + "." + key;
      require(known.count(full) == 1, Errc::ConfigInvalid, "unknown config key " + full);
    }
  }
  return c;
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
  require(std::filesystem::exists(path), Errc::FileMissing, "config not found: " + path.string());
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(path.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw Error(Errc::ConfigInvalid, e.what());
  }
  return parse_config(tree);
}

inline boost::property_tree::ptree to_ptree(const PipelineConfig& config) {
  PipelineConfig c = config;
  boost::property_tree::ptree tree;
  detail::visit_config(c, [&](const std::string& key, auto& field) {
    using T = std::decay_t<decltype(field)>;
    if constexpr (std::is_same_v<T, std::vector<int>>) {
      tree.put(key, detail::join_ints(field));
    } else if constexpr (std::is_same_v<T, bool>) {
      tree.put(key, field ? "true" : "false");
    } else if constexpr (std::is_floating_point_v<T>) {
      std::ostringstream ss;
      ss.precision(17);
      ss << field;
      tree.put(key, ss.str());
    } else {
      tree.put(key, field);
    }
  });
  return tree;
}

inline void save_config(const std::filesystem::path& path, const PipelineConfig& config) {
  boost::property_tree::write_ini(path.string(), to_ptree(config));
}

}  // namespace rfpt
