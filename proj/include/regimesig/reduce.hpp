#pragma once

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <vector>

#include "regimesig/dense.hpp"
#include "regimesig/error.hpp"
#include "regimesig/matrix.hpp"
#include "regimesig/model_io.hpp"
#include "regimesig/trainer.hpp"

namespace regimesig::reduce {

struct EigenDecomposition {
  std::vector<double> values;  // non-increasing
  Matrix vectors;              // row i is the eigenvector for values[i]
};

/// Cyclic Jacobi rotations for a symmetric matrix.
///
/// Sweeps until the off-diagonal Frobenius norm drops below
/// `tol * max(1, ||A||_F)` or `max_sweeps` is hit.
inline EigenDecomposition jacobi_eigen(Matrix a, double tol = 1e-12, int max_sweeps = 100) {
  const std::size_t n = a.rows();
  require(a.cols() == n, Errc::ShapeMismatch, "jacobi_eigen needs a square matrix");
  Matrix v = Matrix::identity(n);
  double fro = 0.0;
  for (double x : a.data()) fro += x * x;
  const double threshold = tol * std::max(1.0, std::sqrt(fro));

  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += 2.0 * a(p, q) * a(p, q);
    if (std::sqrt(off) <= threshold) break;

    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto i, auto j) { return a(i, i) > a(j, j); });
  EigenDecomposition out{std::vector<double>(n), Matrix(n, n)};
  for (std::size_t r = 0; r < n; ++r) {
    out.values[r] = a(order[r], order[r]);
    for (std::size_t k = 0; k < n; ++k) out.vectors(r, k) = v(k, order[r]);
  }
  return out;
}

inline Matrix sample_covariance(const Matrix& x, std::span<const double> mean) {
  const std::size_t n = x.rows(), d = x.cols();
  Matrix cov(d, d);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = x.row(i);
    for (std::size_t a = 0; a < d; ++a) {
      const double da = r[a] - mean[a];
      for (std::size_t b = a; b < d; ++b) cov(a, b) += da * (r[b] - mean[b]);
    }
  }
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = a; b < d; ++b) {
      cov(a, b) /= static_cast<double>(n - 1);
      cov(b, a) = cov(a, b);
    }
  return cov;
}

inline std::vector<double> column_means(const Matrix& x) {
  std::vector<double> m(x.cols(), 0.0);
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) m[j] += x(i, j);
  for (double& v : m) v /= static_cast<double>(x.rows());
  return m;
}

struct PcaModel {
  std::vector<double> mean;
  Matrix components;  // k x d, orthonormal rows
  std::vector<double> explained_variance;
  std::vector<double> explained_ratio;

  std::size_t k() const { return components.rows(); }
  std::size_t d() const { return components.cols(); }

  void save(std::ostream& out) const {
    io::ModelWriter w(out, "pca_model");
    w.u64(k());
    w.u64(d());
    w.f64s(mean);
    w.f64s(components.data());
    w.f64s(explained_variance);
    w.f64s(explained_ratio);
  }
  static PcaModel load(std::istream& in) {
    io::ModelReader r(in, "pca_model");
    PcaModel m;
    const auto k = r.u64(), d = r.u64();
    m.mean = r.f64s();
    m.components = Matrix(k, d, r.f64s());
    m.explained_variance = r.f64s();
    m.explained_ratio = r.f64s();
    return m;
  }
};

/// Top-k principal axes of the sample covariance of X.
///
/// Each component is flipped so its largest-magnitude entry is positive.
/// Ratios are fractions of total variance; components beyond the rank get
/// ratio 0.
inline PcaModel pca_fit(const Matrix& x, std::size_t k) {
  require(x.rows() >= 2, Errc::TooFewRows, "pca needs at least 2 rows");
  require(k >= 1 && k <= x.cols(), Errc::InvalidArgument, "pca k must be in [1, d]");
  for (double v : x.data()) require(std::isfinite(v), Errc::NonFiniteFeature, "pca input not finite");

  PcaModel m;
  m.mean = column_means(x);
  const auto eig = jacobi_eigen(sample_covariance(x, m.mean));
  double total = 0.0;
  for (double v : eig.values) total += std::max(v, 0.0);

  m.components = Matrix(k, x.cols());
  for (std::size_t c = 0; c < k; ++c) {
    auto row = eig.vectors.row(c);
    std::size_t arg = 0;
    for (std::size_t j = 1; j < row.size(); ++j)
      if (std::abs(row[j]) > std::abs(row[arg])) arg = j;
    const double sign = row[arg] < 0 ? -1.0 : 1.0;
    for (std::size_t j = 0; j < row.size(); ++j) m.components(c, j) = sign * row[j];
    const double lambda = std::max(eig.values[c], 0.0);
    m.explained_variance.push_back(lambda);
    m.explained_ratio.push_back(total > 0 ? lambda / total : 0.0);
  }
  return m;
}

inline Matrix pca_transform(const PcaModel& m, const Matrix& x) {
  require(x.cols() == m.d(), Errc::ShapeMismatch, "pca_transform column count");
  Matrix scores(x.rows(), m.k());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t c = 0; c < m.k(); ++c) {
      double s = 0.0;
      for (std::size_t j = 0; j < m.d(); ++j) s += (x(i, j) - m.mean[j]) * m.components(c, j);
      scores(i, c) = s;
    }
  return scores;
}

inline Matrix pca_inverse(const PcaModel& m, const Matrix& scores) {
  require(scores.cols() == m.k(), Errc::ShapeMismatch, "pca_inverse column count");
  Matrix x(scores.rows(), m.d());
  for (std::size_t i = 0; i < scores.rows(); ++i)
    for (std::size_t j = 0; j < m.d(); ++j) {
      double s = m.mean[j];
      for (std::size_t c = 0; c < m.k(); ++c) s += scores(i, c) * m.components(c, j);
      x(i, j) = s;
    }
  return x;
}

/// Cumulative explained ratio of the first k_check components.
inline double pca_explained(const PcaModel& m, std::size_t k_check) {
  require(k_check <= m.k(), Errc::InvalidArgument, "k_check exceeds fitted components");
  return std::accumulate(m.explained_ratio.begin(),
                         m.explained_ratio.begin() + static_cast<std::ptrdiff_t>(k_check), 0.0);
}

// ---------------------------------------------------------------------------
// Autoencoder
// ---------------------------------------------------------------------------

struct AutoencoderModel {
  nn::DenseNet encoder;
  nn::DenseNet decoder;
  std::size_t bottleneck_dim = 0;

  void save(std::ostream& out) const {
    io::ModelWriter w(out, "autoencoder");
    w.u64(bottleneck_dim);
    encoder.write_payload(w);
    decoder.write_payload(w);
  }
  static AutoencoderModel load(std::istream& in) {
    io::ModelReader r(in, "autoencoder");
    AutoencoderModel m;
    m.bottleneck_dim = r.u64();
    m.encoder = nn::DenseNet::read_payload(r);
    m.decoder = nn::DenseNet::read_payload(r);
    return m;
  }
};

struct AutoencoderFit {
  AutoencoderModel model;
  nn::LossCurve curve;
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

/// The d -> hidden -> bottleneck -> hidden -> d network used for training.
/// Hidden layers are relu; the code layer and the output are linear.
inline nn::DenseNet autoencoder_network(std::size_t d, std::size_t bottleneck, std::size_t hidden,
                                        std::uint64_t seed) {
  using nn::Activation;
  return nn::DenseNet({d, hidden, bottleneck, hidden, d},
                      {Activation::Relu, Activation::Linear, Activation::Relu, Activation::Linear},
                      0.0, seed);
}

/// Minimises mean squared reconstruction error over X.
///
/// X is expected to be standardised already. The validation set is X itself,
/// so the returned snapshot never has higher loss than the initial weights.
inline AutoencoderFit autoencoder_train(const Matrix& x, std::size_t bottleneck,
                                        const nn::TrainConfig& cfg, std::size_t hidden = 32) {
  require(bottleneck >= 1 && bottleneck < x.cols(), Errc::InvalidArgument,
          "bottleneck must be in [1, d)");
  auto net = autoencoder_network(x.cols(), bottleneck, hidden, cfg.seed);
  AutoencoderFit fit;
  fit.initial_loss = net.loss(x, x, nn::LossKind::SquaredError);
  require(std::isfinite(fit.initial_loss), Errc::DivergedLoss, "initial reconstruction loss");
  fit.curve = nn::train(net, x, x, x, x, nn::LossKind::SquaredError, cfg);
  fit.final_loss = net.loss(x, x, nn::LossKind::SquaredError);

  const auto& p = net.params();
  const std::size_t enc_params = x.cols() * hidden + hidden + hidden * bottleneck + bottleneck;
  fit.model.bottleneck_dim = bottleneck;
  fit.model.encoder = nn::DenseNet({x.cols(), hidden, bottleneck},
                                   {nn::Activation::Relu, nn::Activation::Linear}, 0.0, 0);
  fit.model.decoder = nn::DenseNet({bottleneck, hidden, x.cols()},
                                   {nn::Activation::Relu, nn::Activation::Linear}, 0.0, 0);
  std::copy(p.begin(), p.begin() + static_cast<std::ptrdiff_t>(enc_params), fit.model.encoder.params().begin());
  std::copy(p.begin() + static_cast<std::ptrdiff_t>(enc_params), p.end(), fit.model.decoder.params().begin());
  return fit;
}

inline Matrix autoencoder_encode(const AutoencoderModel& m, const Matrix& x) {
  return m.encoder.predict(x);
}

inline Matrix autoencoder_reconstruct(const AutoencoderModel& m, const Matrix& x) {
  return m.decoder.predict(m.encoder.predict(x));
}

/// Column-wise z-scoring; zero-variance columns are centred but not scaled.
struct Standardizer {
  std::vector<double> mean, sd;

  static Standardizer fit(const Matrix& x) {
    Standardizer s;
    s.mean = column_means(x);
    s.sd.assign(x.cols(), 0.0);
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < x.cols(); ++j) s.sd[j] += (x(i, j) - s.mean[j]) * (x(i, j) - s.mean[j]);
    for (double& v : s.sd) {
      v = std::sqrt(v / static_cast<double>(std::max<std::size_t>(x.rows(), 2) - 1));
      if (v == 0.0) v = 1.0;
    }
    return s;
  }

  Matrix apply(const Matrix& x) const {
    require(x.cols() == mean.size(), Errc::ShapeMismatch, "standardizer column count");
    Matrix out(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = (x(i, j) - mean[j]) / sd[j];
    return out;
  }
};

}  // namespace regimesig::reduce
