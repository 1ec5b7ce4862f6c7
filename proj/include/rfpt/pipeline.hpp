#pragma once

// End-to-end commands. Every command reads its inputs from the output
// directory (or paths named in the config), writes its results there, and
// copies the resolved config next to them.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "rfpt/attribution.hpp"
#include "rfpt/benchmark.hpp"
#include "rfpt/config.hpp"
#include "rfpt/error.hpp"
#include "rfpt/fingerprint.hpp"
#include "rfpt/geometry.hpp"
#include "rfpt/io.hpp"
#include "rfpt/vae.hpp"

namespace rfpt::pipeline {

namespace fs = std::filesystem;

inline fs::path prepare_out(const PipelineConfig& c) {
  const fs::path out(c.out);
  fs::create_directories(out);
  return out;
}

inline void copy_config(const PipelineConfig& c, const fs::path& out) {
  save_config(out / "config.ini", c);
}

inline fs::path require_file(const fs::path& p) {
  require(fs::exists(p), Errc::FileMissing, "missing input " + p.string());
  return p;
}

inline std::vector<bench::GmSimulator> generators_for(const PipelineConfig& c, std::uint64_t root) {
  return bench::make_generators(c.dim, c.generators, c.magnitude_min * c.scale,
                                c.magnitude_max * c.scale, stream_seed(root, "generators"),
                                c.ripple_frequency);
}

inline VaeConfig vae_config_for(const PipelineConfig& c, std::uint64_t root) {
  VaeConfig v = c.vae;
  v.seed = stream_seed(root, "vae");
  return v;
}

// ---------------------------------------------------------------------------
// synth

/// real.csv (training set for the VAE), dataset.csv (labeled and split),
/// generators.csv (signature parameters).
inline void cmd_synth(const PipelineConfig& c) {
  c.validate();
  const fs::path out = prepare_out(c);
  const bench::SynthSpec spec = c.synth_spec(c.seed);
  io::write_matrix_csv(out / "real.csv", bench::make_real_dataset(spec));
  const auto gens = generators_for(c, c.seed);
  io::write_dataset_csv(out / "dataset.csv",
                        bench::make_labeled_dataset(spec, gens, c.samples_per_generator,
                                                    stream_seed(c.seed, "split")));
  io::CsvWriter w(out / "generators.csv");
  w.cell("id").cell("kind").cell("magnitude").cell("frequency").cell("coordinate");
  for (int j = 0; j < c.dim; ++j) w.cell("u_" + std::to_string(j + 1));
  w.end_row();
  for (const auto& g : gens) {
    w.cell(g.id).cell(bench::to_string(g.kind)).cell(g.magnitude).cell(g.frequency).cell(g.coordinate);
    w.cells(g.direction);
    w.end_row();
  }
  copy_config(c, out);
}

// ---------------------------------------------------------------------------
// train-vae

inline Matrix load_real(const PipelineConfig& c) {
  const fs::path path = c.dataset_path.empty() ? fs::path(c.out) / "real.csv" : fs::path(c.dataset_path);
  return io::read_matrix_csv(require_file(path));
}

/// vae.ckpt and vae_loss.csv (phase,step,value).
inline VaeModel cmd_train_vae(const PipelineConfig& c) {
  c.validate();
  const fs::path out = prepare_out(c);
  const Matrix real = load_real(c);
  VaeTrainReport report;
  VaeModel model = train_two_phase(real, c.latent_dim, vae_config_for(c, c.seed), &report);
  io::save_checkpoint(out / "vae.ckpt", io::to_checkpoint(model));
  io::CsvWriter w(out / "vae_loss.csv");
  w.cell("phase").cell("step").cell("value");
  w.end_row();
  for (std::size_t i = 0; i < report.phase1_loss.size(); ++i) {
    w.cell("negative_elbo").cell(static_cast<long>(i)).cell(report.phase1_loss[i]);
    w.end_row();
  }
  for (std::size_t i = 0; i < report.phase2_loglik.size(); ++i) {
    w.cell("residual_loglik").cell(static_cast<long>(i)).cell(report.phase2_loglik[i]);
    w.end_row();
  }
  copy_config(c, out);
  return model;
}

// ---------------------------------------------------------------------------
// fingerprint

inline ManifoldIndex make_index(const PipelineConfig& c, const VaeModel& model, const Matrix& real,
                                const PullbackMetric<VaeModel>& metric) {
  ManifoldIndex index = ManifoldIndex::build(model, real);
  if (c.graph_neighbors > 0) index.build_graph(metric, c.graph_neighbors);
  return index;
}

inline FingerprintOptions fingerprint_options(const PipelineConfig& c, std::uint64_t root) {
  FingerprintOptions o;
  o.k = c.k;
  o.rcm = c.rcm_options();
  o.method = c.projection_method();
  o.seed = stream_seed(root, "fingerprint");
  o.threads = c.threads;
  return o;
}

/// Artifacts for rows `ids` of `samples`; failed samples are reported and
/// left out of the returned rows.
inline FingerprintSet fingerprint_rows(const VaeModel& model, const PullbackMetric<VaeModel>& metric,
                                       const ManifoldIndex& index, const Matrix& samples,
                                       const std::vector<int>& ids, const FingerprintOptions& opts) {
  Matrix block(static_cast<Eigen::Index>(ids.size()), samples.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) block.row(static_cast<Eigen::Index>(i)) = samples.row(ids[i]);
  FingerprintSet set = fingerprint_set(model, metric, index, block, 0, opts);
  for (auto& a : set.artifacts) a.sample_id = ids[static_cast<std::size_t>(a.sample_id)];
  for (auto& f : set.failures) f.sample_id = ids[static_cast<std::size_t>(f.sample_id)];
  return set;
}

/// fingerprints.csv and diagnostics.csv for every sample of dataset.csv.
inline void cmd_fingerprint(const PipelineConfig& c) {
  c.validate();
  const fs::path out = prepare_out(c);
  const VaeModel model = io::vae_from_checkpoint(io::load_checkpoint(require_file(out / "vae.ckpt")));
  const Matrix real = load_real(c);
  const bench::LabeledDataset ds = io::read_dataset_csv(require_file(out / "dataset.csv"));
  require(ds.samples.cols() == model.data_dim(), Errc::DimensionMismatch,
          "dataset dimension does not match the VAE");
  const PullbackMetric<VaeModel> metric(model, c.jitter);
  const ManifoldIndex index = make_index(c, model, real, metric);
  std::vector<int> ids(static_cast<std::size_t>(ds.size()));
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
  const FingerprintSet set = fingerprint_rows(model, metric, index, ds.samples, ids, fingerprint_options(c, c.seed));

  std::vector<io::FingerprintRow> rows;
  std::vector<io::DiagnosticsRow> diag;
  for (const auto& a : set.artifacts) {
    const int label = ds.labels[static_cast<std::size_t>(a.sample_id)];
    rows.push_back({label, a.sample_id, a.diagnostics.converged, a.ambient, a.latent});
    diag.push_back({label, a.sample_id, a.diagnostics, ""});
  }
  for (const auto& f : set.failures)
    diag.push_back({ds.labels[static_cast<std::size_t>(f.sample_id)], f.sample_id, {}, f.message});
  io::write_fingerprints_csv(out / "fingerprints.csv", rows);
  io::write_diagnostics_csv(out / "diagnostics.csv", diag);
  copy_config(c, out);
}

// ---------------------------------------------------------------------------
// attribute

struct SplitFeatures {
  Matrix train_x, val_x, test_x, all_x;
  std::vector<int> train_y, val_y, test_y, all_y;
};

inline Matrix gather(const Matrix& m, const std::vector<int>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

inline std::vector<int> gather(const std::vector<int>& v, const std::vector<int>& rows) {
  std::vector<int> out;
  for (int r : rows) out.push_back(v[static_cast<std::size_t>(r)]);
  return out;
}

/// Feature rows indexed like `ds`; `present[i]` is false for samples without
/// features (failed fingerprints), which are dropped from every split.
inline SplitFeatures split_features(const Matrix& features, const std::vector<bool>& present,
                                    const bench::LabeledDataset& ds) {
  SplitFeatures s;
  std::vector<int> tr, va, te, all;
  for (std::size_t i = 0; i < ds.splits.size(); ++i) {
    if (!present[i]) continue;
    all.push_back(static_cast<int>(i));
    if (ds.splits[i] == bench::Split::Train) tr.push_back(static_cast<int>(i));
    if (ds.splits[i] == bench::Split::Val) va.push_back(static_cast<int>(i));
    if (ds.splits[i] == bench::Split::Test) te.push_back(static_cast<int>(i));
  }
  s.train_x = gather(features, tr), s.train_y = gather(ds.labels, tr);
  s.val_x = gather(features, va), s.val_y = gather(ds.labels, va);
  s.test_x = gather(features, te), s.test_y = gather(ds.labels, te);
  s.all_x = gather(features, all), s.all_y = gather(ds.labels, all);
  return s;
}

inline attr::ClassifierConfig classifier_config_for(const PipelineConfig& c, std::uint64_t root) {
  attr::ClassifierConfig cc = c.classifier;
  cc.seed = stream_seed(root, "classifier");
  return cc;
}

/// classifier.ckpt, report.csv and confusion.csv. Features follow
/// fingerprint.feature; "raw" classifies the samples themselves.
inline attr::EvalReport cmd_attribute(const PipelineConfig& c) {
  c.validate();
  const fs::path out = prepare_out(c);
  const bench::LabeledDataset ds = io::read_dataset_csv(require_file(out / "dataset.csv"));
  const attr::FeatureMode mode = attr::parse_feature_mode(c.feature);
  Matrix features;
  std::vector<bool> present(static_cast<std::size_t>(ds.size()), mode == attr::FeatureMode::Raw);
  if (mode == attr::FeatureMode::Raw) {
    features = ds.samples;
  } else {
    const auto rows = io::read_fingerprints_csv(require_file(out / "fingerprints.csv"));
    require(!rows.empty(), Errc::InsufficientData, "fingerprint file is empty");
    const auto dim = mode == attr::FeatureMode::Ambient ? rows.front().ambient.size() : rows.front().latent.size();
    features = Matrix::Zero(ds.size(), dim);
    for (const auto& r : rows) {
      require(r.sample_id >= 0 && r.sample_id < ds.size(), Errc::FormatError,
              "fingerprint sample id out of range");
      features.row(r.sample_id) = (mode == attr::FeatureMode::Ambient ? r.ambient : r.latent).transpose();
      present[static_cast<std::size_t>(r.sample_id)] = true;
    }
  }
  const SplitFeatures s = split_features(features, present, ds);
  attr::AttributionModel model =
      attr::train_classifier(s.train_x, s.train_y, s.val_x, s.val_y, classifier_config_for(c, c.seed),
                             ds.num_classes());
  model.mode = mode;
  attr::EvalReport report = attr::evaluate(model, s.test_x, s.test_y);
  report.fdr = attr::fdr(s.all_x, s.all_y, stream_seed(c.seed, "fdr"), c.fdr_shrinkage);
  io::save_checkpoint(out / "classifier.ckpt", io::to_checkpoint(model));
  io::write_report_csv(out / "report.csv", report);
  io::write_confusion_csv(out / "confusion.csv", report);
  copy_config(c, out);
  return report;
}

// ---------------------------------------------------------------------------
// benchmark

inline constexpr const char* kMethods[] = {"rcm", "euclidean_center", "euclidean_1nn", "raw_input"};
inline constexpr int kMethodCount = 4;

struct SeedResult {
  int seed_index = 0;
  double accuracy[kMethodCount] = {};
  double fdr[kMethodCount] = {};
  double cross_accuracy[kMethodCount] = {};
  int rcm_failures = 0;
  int rcm_nonconverged = 0;
  int rcm_samples = 0;
};

struct BenchmarkResult {
  std::vector<SeedResult> seeds;

  double mean_accuracy(int m) const {
    double s = 0.0;
    for (const auto& r : seeds) s += r.accuracy[m];
    return s / static_cast<double>(seeds.size());
  }
  double std_accuracy(int m) const {
    const double mu = mean_accuracy(m);
    double s = 0.0;
    for (const auto& r : seeds) s += (r.accuracy[m] - mu) * (r.accuracy[m] - mu);
    return seeds.size() > 1 ? std::sqrt(s / static_cast<double>(seeds.size() - 1)) : 0.0;
  }
};

namespace detail {

struct DomainFeatures {
  Matrix features[kMethodCount];
  std::vector<bool> present;
  int failures = 0;
  int nonconverged = 0;
  int attempted = 0;
};

/// Features of `rows` of ds for every method, with a VAE trained on `real`.
inline DomainFeatures domain_features(const PipelineConfig& c, const Matrix& real,
                                      const bench::LabeledDataset& ds, const std::vector<int>& rows,
                                      std::uint64_t root, std::ostream* log) {
  const auto t0 = std::chrono::steady_clock::now();
  const VaeModel model = train_two_phase(real, c.latent_dim, vae_config_for(c, root));
  const PullbackMetric<VaeModel> metric(model, c.jitter);
  const ManifoldIndex index = make_index(c, model, real, metric);
  const PointIndex ambient(real);
  const auto t1 = std::chrono::steady_clock::now();

  DomainFeatures out;
  const Eigen::Index D = ds.samples.cols();
  const bool latent = attr::parse_feature_mode(c.feature) == attr::FeatureMode::Latent;
  out.features[0] = Matrix::Zero(ds.size(), latent ? model.latent_dim() : D);
  for (int m = 1; m < kMethodCount; ++m) out.features[m] = Matrix::Zero(ds.size(), D);
  out.present.assign(static_cast<std::size_t>(ds.size()), false);

  const FingerprintSet set = fingerprint_rows(model, metric, index, ds.samples, rows, fingerprint_options(c, root));
  for (const auto& a : set.artifacts) {
    out.features[0].row(a.sample_id) = (latent ? a.latent : a.ambient).transpose();
    out.present[static_cast<std::size_t>(a.sample_id)] = true;
    out.nonconverged += a.diagnostics.converged ? 0 : 1;
  }
  out.failures = static_cast<int>(set.failures.size());
  out.attempted = static_cast<int>(rows.size());
  for (int i : rows) {
    const Vector x = ds.samples.row(i).transpose();
    out.features[1].row(i) = euclidean_baseline_artifact(ambient, x, c.k, BaselineVariant::KCenter).ambient.transpose();
    out.features[2].row(i) = euclidean_baseline_artifact(ambient, x, c.k, BaselineVariant::OneNearest).ambient.transpose();
    out.features[3].row(i) = x.transpose();
  }
  if (log) {
    const auto t2 = std::chrono::steady_clock::now();
    *log << "  vae " << std::chrono::duration<double>(t1 - t0).count() << " s, fingerprints "
         << std::chrono::duration<double>(t2 - t1).count() << " s (" << rows.size() << " samples, "
         << out.failures << " failed, " << out.nonconverged << " not converged)\n";
  }
  return out;
}

}  // namespace detail

/// Trains a domain-A and a domain-B VAE per seed, fingerprints both with
/// every method, trains one classifier per method on domain A and tests it in
/// domain and on domain B. Writes accuracy_table.csv, per_seed.csv,
/// cross_domain.csv and config.ini.
inline BenchmarkResult cmd_benchmark(const PipelineConfig& c, std::ostream* log = nullptr) {
  c.validate();
  const fs::path out = prepare_out(c);
  BenchmarkResult result;
  for (int s = 0; s < c.seeds; ++s) {
    const std::uint64_t root = stream_seed(c.seed, "benchmark/seed", static_cast<std::uint64_t>(s));
    if (log) *log << "seed " << s << "\n";
    PipelineConfig cb = c;
    cb.dataset_kind = c.domain_b;
    bench::SynthSpec spec_a = c.synth_spec(stream_seed(root, "domain-a"));
    bench::SynthSpec spec_b = cb.synth_spec(stream_seed(root, "domain-b"));
    const auto gens = generators_for(c, root);
    const auto [ds_a, ds_b] =
        bench::cross_domain_pair(spec_a, spec_b, gens, c.samples_per_generator, stream_seed(root, "split"));

    std::vector<int> all_a(static_cast<std::size_t>(ds_a.size()));
    for (std::size_t i = 0; i < all_a.size(); ++i) all_a[i] = static_cast<int>(i);
    const auto feat_a = detail::domain_features(c, bench::make_real_dataset(spec_a), ds_a, all_a,
                                                stream_seed(root, "model-a"), log);
    const auto test_b = ds_b.indices(bench::Split::Test);
    const auto feat_b = detail::domain_features(c, bench::make_real_dataset(spec_b), ds_b, test_b,
                                                stream_seed(root, "model-b"), log);

    SeedResult r;
    r.seed_index = s;
    r.rcm_failures = feat_a.failures + feat_b.failures;
    r.rcm_nonconverged = feat_a.nonconverged + feat_b.nonconverged;
    r.rcm_samples = feat_a.attempted + feat_b.attempted;
    for (int m = 0; m < kMethodCount; ++m) {
      const std::vector<bool>& pa = feat_a.present;
      std::vector<bool> all_present(pa.size(), true);
      const SplitFeatures sa = split_features(feat_a.features[m], m == 0 ? pa : all_present, ds_a);
      std::vector<bool> pb(static_cast<std::size_t>(ds_b.size()), false);
      for (int i : test_b) pb[static_cast<std::size_t>(i)] = m == 0 ? feat_b.present[static_cast<std::size_t>(i)] : true;
      const SplitFeatures sb = split_features(feat_b.features[m], pb, ds_b);
      const auto model = attr::train_classifier(sa.train_x, sa.train_y, sa.val_x, sa.val_y,
                                                classifier_config_for(c, root), ds_a.num_classes());
      r.accuracy[m] = attr::evaluate(model, sa.test_x, sa.test_y).accuracy;
      r.cross_accuracy[m] = attr::evaluate(model, sb.test_x, sb.test_y).accuracy;
      r.fdr[m] = attr::fdr(sa.all_x, sa.all_y, stream_seed(root, "fdr"), c.fdr_shrinkage);
      if (log)
        *log << "  " << kMethods[m] << ": acc " << r.accuracy[m] << ", cross " << r.cross_accuracy[m]
             << ", fdr " << r.fdr[m] << "\n";
    }
    result.seeds.push_back(r);
  }

  {
    io::CsvWriter w(out / "accuracy_table.csv");
    for (const char* h : {"method", "mean_accuracy", "std_accuracy", "mean_fdr", "mean_cross_domain_accuracy"})
      w.cell(h);
    w.end_row();
    for (int m = 0; m < kMethodCount; ++m) {
      double fdr = 0.0, cross = 0.0;
      for (const auto& r : result.seeds) fdr += r.fdr[m], cross += r.cross_accuracy[m];
      const auto n = static_cast<double>(result.seeds.size());
      w.cell(kMethods[m]).cell(result.mean_accuracy(m)).cell(result.std_accuracy(m)).cell(fdr / n).cell(cross / n);
      w.end_row();
    }
  }
  {
    io::CsvWriter w(out / "per_seed.csv");
    for (const char* h : {"seed", "method", "accuracy", "fdr", "cross_domain_accuracy"}) w.cell(h);
    w.end_row();
    for (const auto& r : result.seeds)
      for (int m = 0; m < kMethodCount; ++m) {
        w.cell(r.seed_index).cell(kMethods[m]).cell(r.accuracy[m]).cell(r.fdr[m]).cell(r.cross_accuracy[m]);
        w.end_row();
      }
  }
  {
    io::CsvWriter w(out / "cross_domain.csv");
    for (const char* h : {"seed", "method", "in_domain_accuracy", "cross_domain_accuracy", "retention"}) w.cell(h);
    w.end_row();
    for (const auto& r : result.seeds)
      for (int m = 0; m < kMethodCount; ++m) {
        w.cell(r.seed_index).cell(kMethods[m]).cell(r.accuracy[m]).cell(r.cross_accuracy[m]);
        w.cell(r.accuracy[m] > 0.0 ? r.cross_accuracy[m] / r.accuracy[m] : 0.0);
        w.end_row();
      }
  }
  {
    io::CsvWriter w(out / "rcm_diagnostics.csv");
    for (const char* h : {"seed", "samples", "failed", "not_converged"}) w.cell(h);
    w.end_row();
    for (const auto& r : result.seeds) {
      w.cell(r.seed_index).cell(r.rcm_samples).cell(r.rcm_failures).cell(r.rcm_nonconverged);
      w.end_row();
    }
  }
  copy_config(c, out);
  return result;
}

}  // namespace rfpt::pipeline
