#pragma once

// Source attribution from feature vectors (artifacts or raw samples) and the
// Frechet-distance-ratio separability score.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "rfpt/error.hpp"
#include "rfpt/nnet.hpp"
#include "rfpt/numerics.hpp"
#include "rfpt/random.hpp"

namespace rfpt::attr {

enum class FeatureMode { Ambient, Latent, Raw };

inline std::string_view to_string(FeatureMode m) {
  switch (m) {
    case FeatureMode::Ambient: return "ambient";
    case FeatureMode::Latent: return "latent";
    case FeatureMode::Raw: return "raw";
  }
  return "unknown";
}

inline FeatureMode parse_feature_mode(std::string_view s) {
  if (s == "ambient") return FeatureMode::Ambient;
  if (s == "latent") return FeatureMode::Latent;
  if (s == "raw") return FeatureMode::Raw;
  throw Error(Errc::ConfigInvalid, "unknown feature mode '" + std::string(s) + "'");
}

struct ClassifierConfig {
  std::vector<int> hidden = {64, 64};
  bool linear = false;  // multinomial logistic regression instead of the MLP
  int epochs = 150;
  int batch_size = 32;
  double lr = 0.02;
  double momentum = 0.9;
  std::uint64_t seed = 0;
};

/// Standardizes features, then applies the network. Outputs are logits.
struct AttributionModel {
  nnet::Mlp net;
  Vector feature_mean;
  Vector feature_scale;
  FeatureMode mode = FeatureMode::Ambient;

  int num_classes() const { return net.output_dim(); }
  int feature_dim() const { return net.input_dim(); }

  Vector standardize(const Vector& f) const {
    return ((f - feature_mean).array() / feature_scale.array()).matrix();
  }
  Vector logits(const Vector& f) const {
    require(f.size() == feature_dim(), Errc::DimensionMismatch,
            "feature has " + std::to_string(f.size()) + " entries, model expects " +
                std::to_string(feature_dim()));
    return net.forward(standardize(f));
  }
};

inline Vector softmax(const Vector& logits) {
  const Vector e = (logits.array() - logits.maxCoeff()).exp();
  return e / e.sum();
}

struct Prediction {
  int label = 0;
  Vector probabilities;
};

inline Prediction predict(const AttributionModel& model, const Vector& feature) {
  const Vector z = model.logits(feature);
  Prediction p;
  z.maxCoeff(&p.label);
  p.probabilities = softmax(z);
  return p;
}

inline std::vector<int> predict_labels(const AttributionModel& model, const Matrix& features) {
  std::vector<int> out(static_cast<std::size_t>(features.rows()));
  for (Eigen::Index i = 0; i < features.rows(); ++i)
    out[static_cast<std::size_t>(i)] = predict(model, features.row(i).transpose()).label;
  return out;
}

struct EvalReport {
  double accuracy = 0.0;
  std::vector<double> per_class;                // NaN for classes absent from the split
  std::vector<std::vector<long>> confusion;     // [true][predicted]
  double fdr = std::numeric_limits<double>::quiet_NaN();
};

inline EvalReport evaluate(const std::vector<int>& truth, const std::vector<int>& predicted,
                           int classes) {
  require(truth.size() == predicted.size() && !truth.empty(), Errc::DimensionMismatch,
          "evaluation needs equally many non-zero predictions and labels");
  EvalReport r;
  r.confusion.assign(static_cast<std::size_t>(classes), std::vector<long>(classes, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    require(truth[i] >= 0 && truth[i] < classes && predicted[i] >= 0 && predicted[i] < classes,
            Errc::DimensionMismatch, "label out of range");
    ++r.confusion[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(predicted[i])];
  }
  long trace = 0;
  for (int c = 0; c < classes; ++c) {
    const auto& row = r.confusion[static_cast<std::size_t>(c)];
    const long total = std::accumulate(row.begin(), row.end(), 0L);
    trace += row[static_cast<std::size_t>(c)];
    r.per_class.push_back(total > 0 ? static_cast<double>(row[static_cast<std::size_t>(c)]) / total
                                    : std::numeric_limits<double>::quiet_NaN());
  }
  r.accuracy = static_cast<double>(trace) / static_cast<double>(truth.size());
  return r;
}

inline EvalReport evaluate(const AttributionModel& model, const Matrix& features,
                           const std::vector<int>& labels) {
  return evaluate(labels, predict_labels(model, features), model.num_classes());
}

struct TrainingTrace {
  std::vector<double> train_loss;    // cross-entropy per epoch
  std::vector<double> val_accuracy;  // per epoch
  int best_epoch = -1;
};

/// Cross-entropy training; the returned network is the epoch with the best
/// validation accuracy (earliest on ties). `classes` <= 0 infers the count
/// from the labels.
inline AttributionModel train_classifier(const Matrix& train_x, const std::vector<int>& train_y,
                                         const Matrix& val_x, const std::vector<int>& val_y,
                                         const ClassifierConfig& config, int classes = 0,
                                         TrainingTrace* trace = nullptr) {
  require(train_x.rows() == static_cast<Eigen::Index>(train_y.size()) && train_x.rows() > 0,
          Errc::DimensionMismatch, "one label per training row");
  require(val_x.rows() == static_cast<Eigen::Index>(val_y.size()), Errc::DimensionMismatch,
          "one label per validation row");
  require(val_x.rows() == 0 || val_x.cols() == train_x.cols(), Errc::DimensionMismatch,
          "validation features differ in dimension");
  const int inferred = *std::max_element(train_y.begin(), train_y.end()) + 1;
  if (classes <= 0) classes = inferred;
  require(inferred <= classes, Errc::DimensionMismatch, "label exceeds class count");
  std::vector<int> sorted = train_y;
  std::sort(sorted.begin(), sorted.end());
  require(std::unique(sorted.begin(), sorted.end()) - sorted.begin() >= 2, Errc::SingleClass,
          "training labels contain a single class");

  AttributionModel model;
  model.feature_mean = train_x.colwise().mean().transpose();
  model.feature_scale =
      ((train_x.rowwise() - model.feature_mean.transpose()).array().square().colwise().mean())
          .sqrt()
          .transpose();
  for (Eigen::Index j = 0; j < model.feature_scale.size(); ++j)
    if (!(model.feature_scale(j) > 1e-12)) model.feature_scale(j) = 1.0;

  const int in = static_cast<int>(train_x.cols());
  std::vector<int> sizes{in};
  std::vector<nnet::Activation> acts;
  if (!config.linear) {
    for (int h : config.hidden) {
      sizes.push_back(h);
      acts.push_back(nnet::Activation::Tanh);
    }
  }
  sizes.push_back(classes);
  acts.push_back(nnet::Activation::Identity);
  Rng init = make_rng(config.seed, "attr/init");
  model.net = nnet::Mlp::random(sizes, acts, init);

  nnet::TrainBatch data;
  data.inputs.resize(train_x.rows(), in);
  for (Eigen::Index i = 0; i < train_x.rows(); ++i)
    data.inputs.row(i) = model.standardize(train_x.row(i).transpose()).transpose();
  data.labels = train_y;

  TrainingTrace local;
  TrainingTrace& tr = trace ? *trace : local;
  nnet::Mlp best = model.net;
  double best_acc = -1.0;
  nnet::TrainConfig tc;
  tc.lr = config.lr;
  tc.epochs = config.epochs;
  tc.batch_size = config.batch_size;
  tc.momentum = config.momentum;
  tc.seed = stream_seed(config.seed, "attr/train");
  tc.on_epoch = [&](int epoch, const nnet::Mlp& net) {
    double acc = 0.0;
    if (val_x.rows() > 0) {
      long hits = 0;
      for (Eigen::Index i = 0; i < val_x.rows(); ++i) {
        Eigen::Index arg;
        net.forward(model.standardize(val_x.row(i).transpose())).maxCoeff(&arg);
        hits += arg == val_y[static_cast<std::size_t>(i)];
      }
      acc = static_cast<double>(hits) / static_cast<double>(val_x.rows());
    }
    tr.val_accuracy.push_back(acc);
    if (acc > best_acc || val_x.rows() == 0) {
      best_acc = acc;
      best = net;
      tr.best_epoch = epoch;
    }
  };
  tr.train_loss = nnet::train(model.net, data, nnet::cross_entropy_loss(), tc).loss_history;
  if (tr.best_epoch >= 0) model.net = std::move(best);
  return model;
}

// ---------------------------------------------------------------------------
// Frechet distance ratio

struct GaussianFit {
  Vector mean;
  Matrix cov;
};

/// Sample mean and (n - 1)-normalized covariance of the rows. With
/// `shrinkage` > 0 the covariance is blended toward (tr C / d) I.
inline GaussianFit fit_gaussian(const Matrix& rows, double shrinkage = 0.0) {
  require(rows.rows() >= 2, Errc::TooFewSamples, "a Gaussian fit needs at least 2 samples");
  GaussianFit g;
  g.mean = rows.colwise().mean().transpose();
  const Matrix centered = rows.rowwise() - g.mean.transpose();
  g.cov = centered.transpose() * centered / static_cast<double>(rows.rows() - 1);
  if (shrinkage > 0.0) {
    const double avg = g.cov.trace() / static_cast<double>(g.cov.rows());
    g.cov = (1.0 - shrinkage) * g.cov;
    g.cov.diagonal().array() += shrinkage * avg;
  }
  return g;
}

/// |mA - mB|^2 + tr(CA + CB - 2 (CA^1/2 CB CA^1/2)^1/2). The symmetric inner
/// form has the same trace as (CA CB)^1/2 and keeps psd_sqrt on a symmetric
/// argument.
inline double frechet_gaussian_distance(const Vector& mean_a, const Matrix& cov_a,
                                        const Vector& mean_b, const Matrix& cov_b) {
  require(mean_a.size() == mean_b.size() && cov_a.rows() == mean_a.size() &&
              cov_b.rows() == mean_b.size(),
          Errc::DimensionMismatch, "Gaussian parameters disagree in dimension");
  const Matrix sa = psd_sqrt(cov_a);
  psd_sqrt(cov_b);  // validates cov_b
  Matrix inner = sa * cov_b * sa;
  inner = 0.5 * (inner + inner.transpose());
  const double cross = psd_sqrt(inner).trace();
  const double d = (mean_a - mean_b).squaredNorm() + cov_a.trace() + cov_b.trace() - 2.0 * cross;
  return std::max(d, 0.0);
}

inline double frechet_gaussian_distance(const GaussianFit& a, const GaussianFit& b) {
  return frechet_gaussian_distance(a.mean, a.cov, b.mean, b.cov);
}

/// Inter-class over intra-class Frechet distance. Each class is split at
/// random into halves H1, H2. Intra for class c is FD(H1_c, H2_c); inter for a
/// pair (a, b) is the mean of FD(H1_a, H2_b) and FD(H2_a, H1_b). Comparing
/// half-sample fits on both sides gives the two averages the same
/// finite-sample bias, so classes drawn from one distribution score about 1.
/// Covariances are shrunk when a half holds fewer than 2 * dim samples.
inline double fdr(const Matrix& features, const std::vector<int>& labels, std::uint64_t seed,
                  double shrinkage = 0.1) {
  require(features.rows() == static_cast<Eigen::Index>(labels.size()), Errc::DimensionMismatch,
          "one label per feature row");
  std::vector<int> classes = labels;
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  require(classes.size() >= 2, Errc::TooFewSamples, "fdr needs at least two classes");
  const Eigen::Index dim = features.cols();

  std::vector<GaussianFit> h1, h2;
  for (int c : classes) {
    std::vector<Eigen::Index> idx;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == c) idx.push_back(static_cast<Eigen::Index>(i));
    require(idx.size() >= 4, Errc::TooFewSamples,
            "class " + std::to_string(c) + " has fewer than 4 samples");
    Rng rng = make_rng(seed, "attr/fdr-halves", static_cast<std::uint64_t>(c));
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto half = static_cast<Eigen::Index>(idx.size() / 2);
    Matrix a(half, dim), b(static_cast<Eigen::Index>(idx.size()) - half, dim);
    for (Eigen::Index i = 0; i < a.rows(); ++i) a.row(i) = features.row(idx[i]);
    for (Eigen::Index i = 0; i < b.rows(); ++i) b.row(i) = features.row(idx[half + i]);
    const double shrink = a.rows() < 2 * dim ? shrinkage : 0.0;
    h1.push_back(fit_gaussian(a, shrink));
    h2.push_back(fit_gaussian(b, shrink));
  }
  double intra = 0.0, inter = 0.0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < classes.size(); ++a) {
    intra += frechet_gaussian_distance(h1[a], h2[a]);
    for (std::size_t b = a + 1; b < classes.size(); ++b, ++pairs)
      inter += 0.5 * (frechet_gaussian_distance(h1[a], h2[b]) +
                      frechet_gaussian_distance(h2[a], h1[b]));
  }
  intra /= static_cast<double>(classes.size());
  inter /= static_cast<double>(pairs);
  require(intra > 0.0, Errc::TooFewSamples, "intra-class distance is zero");
  return inter / intra;
}

}  // namespace rfpt::attr
