#pragma once

// Gaussian VAE with a mean decoder mu(z) and an RBF precision network for the
// per-dimension standard deviation sigma(z). The decoder pair (mu, sigma) is
// what the latent geometry is pulled back through.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <utility>
#include <vector>

#include "rfpt/error.hpp"
#include "rfpt/nnet.hpp"
#include "rfpt/numerics.hpp"
#include "rfpt/random.hpp"

namespace rfpt {

/// sigma(z) = (W^T phi(z) + floor)^(-1/2), phi_c(z) = exp(-|z - c|^2 / (2 h_c^2)).
/// With weights of width 1 the network is in scalar mode: one sigma shared by
/// every data dimension.
struct RbfStdNet {
  Matrix centers;     // C x d
  Vector bandwidths;  // C
  Matrix weights;     // C x D (or C x 1 in scalar mode), entries >= 0
  double floor = 1.0;

  /// Constant sigma everywhere: no centers contribute.
  static RbfStdNet constant(int latent_dim, int out_dim, double sigma) {
    RbfStdNet net;
    net.centers = Matrix::Zero(1, latent_dim);
    net.bandwidths = Vector::Ones(1);
    net.weights = Matrix::Zero(1, out_dim);
    net.floor = 1.0 / (sigma * sigma);
    return net;
  }

  int latent_dim() const { return static_cast<int>(centers.cols()); }
  int output_dim() const { return static_cast<int>(weights.cols()); }
  int center_count() const { return static_cast<int>(centers.rows()); }

  Vector kernel(const Vector& z) const {
    Vector phi(centers.rows());
    for (Eigen::Index c = 0; c < centers.rows(); ++c) {
      const double h = bandwidths(c);
      phi(c) = std::exp(-(z.transpose() - centers.row(c)).squaredNorm() / (2.0 * h * h));
    }
    return phi;
  }

  Vector precision(const Vector& z) const {
    check(z);
    return (weights.transpose() * kernel(z)).array() + floor;
  }

  Vector std(const Vector& z) const { return precision(z).array().rsqrt(); }

  /// d sigma / d z, output_dim x d.
  Matrix jacobian(const Vector& z, Vector* value = nullptr) const {
    check(z);
    const Vector phi = kernel(z);
    Matrix dphi(centers.rows(), z.size());  // C x d
    for (Eigen::Index c = 0; c < centers.rows(); ++c) {
      const double h2 = bandwidths(c) * bandwidths(c);
      dphi.row(c) = -phi(c) * (z.transpose() - centers.row(c)) / h2;
    }
    const Vector prec = (weights.transpose() * phi).array() + floor;
    const Vector sigma = prec.array().rsqrt();
    if (value) *value = sigma;
    const Vector scale = -0.5 * sigma.array().cube();
    return scale.asDiagonal() * (weights.transpose() * dphi);
  }

  /// Second derivative of t -> sigma(z + t v) at t = 0.
  Vector second_directional(const Vector& z, const Vector& v) const {
    check(z);
    const Eigen::Index n = centers.rows();
    Vector phi(n), dphi(n), ddphi(n);
    const double vv = v.squaredNorm();
    for (Eigen::Index c = 0; c < n; ++c) {
      const double h2 = bandwidths(c) * bandwidths(c);
      const Vector diff = z - centers.row(c).transpose();
      const double p = std::exp(-diff.squaredNorm() / (2.0 * h2));
      const double s = diff.dot(v) / h2;
      phi(c) = p;
      dphi(c) = -p * s;
      ddphi(c) = p * (s * s - vv / h2);
    }
    const Vector prec = (weights.transpose() * phi).array() + floor;
    const Vector dprec = weights.transpose() * dphi;
    const Vector ddprec = weights.transpose() * ddphi;
    const Vector sigma = prec.array().rsqrt();
    const Vector s3 = sigma.array().cube();
    const Vector s5 = s3.cwiseProduct(sigma).cwiseProduct(sigma);
    return 0.75 * s5.cwiseProduct(dprec.cwiseProduct(dprec)) - 0.5 * s3.cwiseProduct(ddprec);
  }

  friend bool operator==(const RbfStdNet& a, const RbfStdNet& b) {
    return a.centers.rows() == b.centers.rows() && a.centers.cols() == b.centers.cols() &&
           a.weights.cols() == b.weights.cols() && a.centers == b.centers &&
           a.bandwidths == b.bandwidths && a.weights == b.weights && a.floor == b.floor;
  }

 private:
  void check(const Vector& z) const {
    require(z.size() == centers.cols(), Errc::DimensionMismatch,
            "RbfStdNet expects latent of size " + std::to_string(centers.cols()));
  }
};

struct Encoding {
  Vector mean;
  Vector logvar;
};

/// Encoder (mean, log-variance), mean decoder and std decoder. Also models the
/// decoder interface consumed by the geometry: embed(z) = [mu(z); sigma(z)].
class VaeModel {
 public:
  VaeModel() = default;
  VaeModel(nnet::Mlp encoder_mean, nnet::Mlp encoder_logvar, nnet::Mlp decoder_mean,
           RbfStdNet decoder_std)
      : encoder_mean(std::move(encoder_mean)),
        encoder_logvar(std::move(encoder_logvar)),
        decoder_mean(std::move(decoder_mean)),
        decoder_std(std::move(decoder_std)) {
    validate();
  }

  nnet::Mlp encoder_mean;
  nnet::Mlp encoder_logvar;
  nnet::Mlp decoder_mean;
  RbfStdNet decoder_std;

  int data_dim() const { return decoder_mean.output_dim(); }
  int latent_dim() const { return decoder_mean.input_dim(); }
  bool scalar_std() const { return decoder_std.output_dim() == 1 && data_dim() > 1; }

  void validate() const {
    const int d = latent_dim(), D = data_dim();
    require(encoder_mean.input_dim() == D && encoder_logvar.input_dim() == D,
            Errc::DimensionMismatch, "encoder input must match data dimension");
    require(encoder_mean.output_dim() == d && encoder_logvar.output_dim() == d,
            Errc::DimensionMismatch, "encoder output must match latent dimension");
    require(decoder_std.latent_dim() == d, Errc::DimensionMismatch, "std net latent dimension");
    require(decoder_std.output_dim() == D || decoder_std.output_dim() == 1,
            Errc::DimensionMismatch, "std net output must be D or 1");
    require(decoder_std.floor > 0.0, Errc::ConfigInvalid, "std floor must be positive");
  }

  Encoding encode(const Vector& x) const {
    return {encoder_mean.forward(x), encoder_logvar.forward(x)};
  }

  Vector decode_mean(const Vector& z) const { return decoder_mean.forward(z); }

  /// Always D entries; scalar mode broadcasts.
  Vector decode_std(const Vector& z) const {
    const Vector s = decoder_std.std(z);
    return s.size() == data_dim() ? s : Vector::Constant(data_dim(), s(0));
  }

  // Decoder interface used by the geometry module.
  int embed_dim() const { return data_dim() + decoder_std.output_dim(); }

  Vector embed(const Vector& z) const {
    Vector out(embed_dim());
    out << decoder_mean.forward(z), decoder_std.std(z);
    return out;
  }

  Matrix embed_jacobian(const Vector& z, Vector* value = nullptr) const {
    Matrix jac(embed_dim(), latent_dim());
    Vector mu, sigma;
    jac.topRows(data_dim()) = decoder_mean.input_jacobian(z, value ? &mu : nullptr);
    jac.bottomRows(decoder_std.output_dim()) = decoder_std.jacobian(z, value ? &sigma : nullptr);
    if (value) {
      value->resize(embed_dim());
      *value << mu, sigma;
    }
    return jac;
  }

  Vector embed_second(const Vector& z, const Vector& v) const {
    Vector out(embed_dim());
    out << decoder_mean.second_directional(z, v), decoder_std.second_directional(z, v);
    return out;
  }

  friend bool operator==(const VaeModel& a, const VaeModel& b) {
    return a.encoder_mean == b.encoder_mean && a.encoder_logvar == b.encoder_logvar &&
           a.decoder_mean == b.decoder_mean && a.decoder_std == b.decoder_std;
  }
};

/// KL( N(mean, diag exp(logvar)) || N(0, I) ).
inline double gaussian_kl(const Vector& mean, const Vector& logvar) {
  return 0.5 * (logvar.array().exp() + mean.array().square() - 1.0 - logvar.array()).sum();
}

/// log N(x; mu, diag sigma^2).
inline double gaussian_log_likelihood(const Vector& x, const Vector& mu, const Vector& sigma) {
  const double log2pi = std::log(2.0 * std::numbers::pi);
  double ll = -0.5 * static_cast<double>(x.size()) * log2pi;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double r = (x(j) - mu(j)) / sigma(j);
    ll += -std::log(sigma(j)) - 0.5 * r * r;
  }
  return ll;
}

/// Monte-Carlo ELBO: E_q[log p(x | z)] - KL(q || N(0, I)).
inline double elbo(const VaeModel& model, const Vector& x, int n_mc, std::uint64_t seed) {
  require(n_mc >= 1, Errc::ConfigInvalid, "n_mc must be >= 1");
  const Encoding q = model.encode(x);
  Rng rng = make_rng(seed, "vae/elbo");
  std::normal_distribution<double> normal;
  const Vector stdev = (0.5 * q.logvar.array()).exp();
  double recon = 0.0;
  for (int s = 0; s < n_mc; ++s) {
    Vector eps(q.mean.size());
    for (Eigen::Index i = 0; i < eps.size(); ++i) eps(i) = normal(rng);
    const Vector z = q.mean + stdev.cwiseProduct(eps);
    recon += gaussian_log_likelihood(x, model.decode_mean(z), model.decode_std(z));
  }
  return recon / n_mc - gaussian_kl(q.mean, q.logvar);
}

struct VaeConfig {
  std::vector<int> hidden = {32, 32};
  int epochs = 150;
  int batch_size = 32;
  double lr = 2e-3;
  double momentum = 0.9;
  std::uint64_t seed = 0;
  int max_centers = 64;
  // sigma far from the data is sqrt(1 / floor_ratio) times the RMS residual.
  double floor_ratio = 0.01;
  int variance_iters = 200;
  bool scalar_std = false;
};

struct VaeTrainReport {
  std::vector<double> phase1_loss;      // negative ELBO per epoch, sigma = 1
  std::vector<double> phase2_loglik;    // residual log-likelihood per ascent iteration
  double reconstruction_mse = 0.0;      // mean squared error per sample after phase 1
};

namespace detail {

/// Lloyd's algorithm with k-means++ seeding. Rows of `points` are samples.
inline Matrix kmeans(const Matrix& points, int k, Rng& rng, int iters = 50) {
  const Eigen::Index n = points.rows();
  require(k >= 1 && k <= n, Errc::InsufficientData, "kmeans needs 1 <= k <= n");
  Matrix centers(k, points.cols());
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  centers.row(0) = points.row(pick(rng));
  Vector best = Vector::Constant(n, std::numeric_limits<double>::infinity());
  for (int c = 1; c < k; ++c) {
    for (Eigen::Index i = 0; i < n; ++i)
      best(i) = std::min(best(i), (points.row(i) - centers.row(c - 1)).squaredNorm());
    std::uniform_real_distribution<double> u(0.0, best.sum());
    double target = u(rng), acc = 0.0;
    Eigen::Index chosen = n - 1;
    for (Eigen::Index i = 0; i < n; ++i) {
      acc += best(i);
      if (acc >= target) {
        chosen = i;
        break;
      }
    }
    centers.row(c) = points.row(chosen);
  }
  std::vector<int> assign(static_cast<std::size_t>(n), -1);
  for (int it = 0; it < iters; ++it) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Index arg;
      (centers.rowwise() - points.row(i)).rowwise().squaredNorm().minCoeff(&arg);
      if (assign[i] != static_cast<int>(arg)) {
        assign[i] = static_cast<int>(arg);
        changed = true;
      }
    }
    Matrix sums = Matrix::Zero(k, points.cols());
    Vector counts = Vector::Zero(k);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(assign[i]) += points.row(i);
      counts(assign[i]) += 1.0;
    }
    for (int c = 0; c < k; ++c)
      if (counts(c) > 0) centers.row(c) = sums.row(c) / counts(c);
    if (!changed) break;
  }
  return centers;
}

// Maximizes sum_i 0.5 log(p_i) - 0.5 p_i r_i^2, p = phi w + floor, over w >= 0
// by projected gradient ascent with backtracking. Concave in w.
inline Vector fit_precision_weights(const Matrix& phi, const Vector& sq_resid, double floor,
                                    int iters, std::vector<double>* trace) {
  const Eigen::Index c = phi.cols();
  auto objective = [&](const Vector& w) {
    const Vector p = (phi * w).array() + floor;
    return (0.5 * p.array().log() - 0.5 * p.array() * sq_resid.array()).sum();
  };
  const double target = 1.0 / std::max(sq_resid.mean(), 1e-300);
  const double mass = std::max(phi.rowwise().sum().mean(), 1e-12);
  Vector w = Vector::Constant(c, std::max(target - floor, 0.0) / mass);
  double value = objective(w);
  double step = 1.0 / std::max(phi.squaredNorm() * target * target, 1e-300);
  for (int it = 0; it < iters; ++it) {
    const Vector p = (phi * w).array() + floor;
    const Vector grad = phi.transpose() * (0.5 * p.array().inverse() - 0.5 * sq_resid.array()).matrix();
    bool moved = false;
    for (int b = 0; b < 40; ++b) {
      const Vector trial = (w + step * grad).cwiseMax(0.0);
      const double tv = objective(trial);
      if (std::isfinite(tv) && tv >= value + 1e-4 * grad.dot(trial - w)) {
        moved = (trial - w).norm() > 0.0;
        w = trial;
        value = tv;
        step *= 2.0;
        break;
      }
      step *= 0.5;
    }
    if (trace) trace->push_back(value);
    if (!moved) break;
  }
  return w;
}

}  // namespace detail

/// Phase 1: encoder and mean decoder trained against the ELBO with sigma
/// frozen at 1. The returned model carries a constant unit std network.
inline VaeModel train_phase1(const Matrix& data, int latent_dim, const VaeConfig& config,
                             VaeTrainReport* report = nullptr) {
  const Eigen::Index n = data.rows();
  const int D = static_cast<int>(data.cols());
  require(latent_dim >= 1 && latent_dim < D, Errc::ConfigInvalid,
          "latent dimension must satisfy 1 <= d < D");
  require(n >= 10 * latent_dim, Errc::InsufficientData,
          "need at least 10 * latent_dim samples, got " + std::to_string(n));
  require(data.allFinite(), Errc::InsufficientData, "training data contains non-finite values");

  using nnet::Activation;
  Rng init = make_rng(config.seed, "vae/init");
  std::vector<int> enc_sizes{D};
  std::vector<int> dec_sizes{latent_dim};
  std::vector<Activation> acts;
  for (int h : config.hidden) {
    enc_sizes.push_back(h);
    dec_sizes.push_back(h);
    acts.push_back(Activation::Tanh);
  }
  enc_sizes.push_back(latent_dim);
  dec_sizes.push_back(D);
  acts.push_back(Activation::Identity);

  nnet::Mlp enc_mean = nnet::Mlp::random(enc_sizes, acts, init);
  nnet::Mlp enc_logvar = nnet::Mlp::random(enc_sizes, acts, init);
  nnet::Mlp dec_mean = nnet::Mlp::random(dec_sizes, acts, init);
  // Start the posterior narrow so early training is not dominated by noise.
  enc_logvar.layers().back().bias.setConstant(-4.0);

  VaeTrainReport local;
  VaeTrainReport& rep = report ? *report : local;

  // Phase 1.
  {
    nnet::Sgd opt_mean(enc_mean, config.lr, config.momentum);
    nnet::Sgd opt_logvar(enc_logvar, config.lr, config.momentum);
    nnet::Sgd opt_dec(dec_mean, config.lr, config.momentum);
    auto g_mean = enc_mean.zero_gradient();
    auto g_logvar = enc_logvar.zero_gradient();
    auto g_dec = dec_mean.zero_gradient();
    Rng shuffle = make_rng(config.seed, "vae/shuffle");
    Rng noise = make_rng(config.seed, "vae/reparam");
    std::normal_distribution<double> normal;
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<Eigen::Index>(i);
    const double log2pi = std::log(2.0 * std::numbers::pi);
    const auto batch = static_cast<std::size_t>(std::max(1, config.batch_size));

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), shuffle);
      double epoch_loss = 0.0;
      for (std::size_t start = 0; start < order.size(); start += batch) {
        const std::size_t stop = std::min(order.size(), start + batch);
        g_mean.set_zero();
        g_logvar.set_zero();
        g_dec.set_zero();
        for (std::size_t j = start; j < stop; ++j) {
          const Vector x = data.row(order[j]).transpose();
          const Vector m = enc_mean.forward(x);
          const Vector lv = enc_logvar.forward(x).cwiseMax(-20.0).cwiseMin(10.0);
          const Vector sd = (0.5 * lv.array()).exp();
          Vector eps(latent_dim);
          for (int i = 0; i < latent_dim; ++i) eps(i) = normal(noise);
          const Vector z = m + sd.cwiseProduct(eps);
          const Vector resid = dec_mean.forward(z) - x;
          epoch_loss += 0.5 * resid.squaredNorm() + 0.5 * D * log2pi + gaussian_kl(m, lv);
          const Vector dz = dec_mean.backward(z, resid, g_dec);
          enc_mean.backward(x, Vector(dz + m), g_mean);
          const Vector dlv = (dz.cwiseProduct(sd).cwiseProduct(eps) * 0.5).array() +
                             0.5 * (lv.array().exp() - 1.0);
          enc_logvar.backward(x, dlv, g_logvar);
        }
        const double inv = 1.0 / static_cast<double>(stop - start);
        for (auto* g : {&g_mean, &g_logvar, &g_dec}) {
          for (auto& w : g->weight) w *= inv;
          for (auto& b : g->bias) b *= inv;
        }
        opt_mean.step(enc_mean, g_mean);
        opt_logvar.step(enc_logvar, g_logvar);
        opt_dec.step(dec_mean, g_dec);
      }
      epoch_loss /= static_cast<double>(n);
      if (!std::isfinite(epoch_loss) || !enc_mean.all_finite() || !dec_mean.all_finite()) {
        throw Error(Errc::Diverged, "VAE phase 1 diverged at epoch " + std::to_string(epoch));
      }
      rep.phase1_loss.push_back(epoch_loss);
    }
  }

  return VaeModel(std::move(enc_mean), std::move(enc_logvar), std::move(dec_mean),
                  RbfStdNet::constant(latent_dim, config.scalar_std ? 1 : D, 1.0));
}

/// Phase 2: fits the RBF precision network to the squared residuals of the
/// current mean decoder. Only `decoder_std` is written.
inline void fit_std_network(VaeModel& model, const Matrix& data, const VaeConfig& config,
                            VaeTrainReport* report = nullptr) {
  const Eigen::Index n = data.rows();
  const int D = model.data_dim();
  const int latent_dim = model.latent_dim();
  require(data.cols() == D, Errc::DimensionMismatch, "data dimension does not match model");
  require(n >= 1, Errc::InsufficientData, "no data for the std network");
  VaeTrainReport local;
  VaeTrainReport& rep = report ? *report : local;

  Matrix codes(n, latent_dim);
  Matrix sq_resid(n, D);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vector x = data.row(i).transpose();
    const Vector z = model.encoder_mean.forward(x);
    codes.row(i) = z.transpose();
    sq_resid.row(i) = (x - model.decoder_mean.forward(z)).array().square().transpose();
  }
  rep.reconstruction_mse = sq_resid.rowwise().sum().mean();

  const int centers_n =
      std::max(1, std::min(config.max_centers, static_cast<int>(n / 10)));
  Rng km = make_rng(config.seed, "vae/kmeans");
  RbfStdNet std_net;
  std_net.centers = detail::kmeans(codes, centers_n, km);
  double mean_nn = 0.0;
  if (centers_n > 1) {
    for (int c = 0; c < centers_n; ++c) {
      double best = std::numeric_limits<double>::infinity();
      for (int o = 0; o < centers_n; ++o)
        if (o != c) best = std::min(best, (std_net.centers.row(c) - std_net.centers.row(o)).norm());
      mean_nn += best;
    }
    mean_nn /= centers_n;
  } else {
    mean_nn = std::sqrt((codes.rowwise() - codes.colwise().mean()).rowwise().squaredNorm().mean());
  }
  std_net.bandwidths = Vector::Constant(centers_n, 2.0 * std::max(mean_nn, 1e-6));

  Matrix phi(n, centers_n);
  for (Eigen::Index i = 0; i < n; ++i)
    phi.row(i) = std_net.kernel(codes.row(i).transpose()).transpose();

  const int out_dims = config.scalar_std ? 1 : D;
  Matrix targets = config.scalar_std ? Matrix(sq_resid.rowwise().mean()) : sq_resid;
  const double mean_sq = std::max(targets.mean(), 1e-12);
  std_net.floor = config.floor_ratio / mean_sq;
  std_net.weights.resize(centers_n, out_dims);
  for (int j = 0; j < out_dims; ++j) {
    std::vector<double>* trace = j == 0 ? &rep.phase2_loglik : nullptr;
    std_net.weights.col(j) = detail::fit_precision_weights(phi, targets.col(j), std_net.floor,
                                                           config.variance_iters, trace);
  }

  model.decoder_std = std::move(std_net);
}

/// Both phases on rows of `data`.
inline VaeModel train_two_phase(const Matrix& data, int latent_dim, const VaeConfig& config,
                                VaeTrainReport* report = nullptr) {
  VaeModel model = train_phase1(data, latent_dim, config, report);
  fit_std_network(model, data, config, report);
  return model;
}

}  // namespace rfpt
