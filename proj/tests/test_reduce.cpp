#include <cmath>
#include <sstream>

#include <Eigen/Dense>

#include "regimesig/reduce.hpp"
#include "test_support.hpp"

using namespace regimesig;
using namespace regimesig::reduce;
using testing_support::random_matrix;
using testing_support::to_eigen;
using testing_support::oracle_eigenvalues;

namespace {

// Rows x = A z with z in R^2, A fixed 9x2.
Matrix subspace_data(std::size_t n, Rng& rng) {
  const auto a = random_matrix(9, 2, rng);
  Matrix x(n, 9);
  for (std::size_t i = 0; i < n; ++i) {
    const double z0 = rng.normal(), z1 = rng.normal();
    for (std::size_t j = 0; j < 9; ++j) x(i, j) = a(j, 0) * z0 + a(j, 1) * z1;
  }
  return Standardizer::fit(x).apply(x);
}

}  // namespace

TEST(Jacobi, MatchesEigenOracle) {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const auto b = random_matrix(7, 7, rng);
    const Matrix s = matmul(b.transpose(), b);
    const auto eig = jacobi_eigen(s);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> oracle(to_eigen(s));
    const Eigen::VectorXd ev = oracle.eigenvalues().reverse();
    for (std::size_t i = 0; i < 7; ++i) {
      EXPECT_NEAR(eig.values[i], ev(static_cast<Eigen::Index>(i)), 1e-9 * std::max(1.0, ev(0)));
      // A v = lambda v
      for (std::size_t r = 0; r < 7; ++r) {
        double av = 0.0;
        for (std::size_t c = 0; c < 7; ++c) av += s(r, c) * eig.vectors(i, c);
        EXPECT_NEAR(av, eig.values[i] * eig.vectors(i, r), 1e-8);
      }
    }
  }
}

TEST(Pca, LineYEqualsX) {
  Matrix x(5, 2);
  for (std::size_t i = 0; i < 5; ++i) x(i, 0) = x(i, 1) = static_cast<double>(i);
  const auto m = pca_fit(x, 2);
  EXPECT_NEAR(m.components(0, 0), 1.0 / std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(m.components(0, 1), 1.0 / std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(m.explained_ratio[0], 1.0, 1e-12);
  EXPECT_NEAR(m.explained_ratio[1], 0.0, 1e-12);
  EXPECT_NEAR(pca_explained(m, 1), 1.0, 1e-12);
}

TEST(Pca, IsotropicGaussianSplitsVarianceEvenly) {
  Rng rng(5);
  const auto x = random_matrix(10000, 2, rng);
  const auto m = pca_fit(x, 2);
  EXPECT_NEAR(m.explained_ratio[0], 0.5, 0.05);
  EXPECT_NEAR(m.explained_ratio[1], 0.5, 0.05);
}

TEST(Pca, FullBasisRoundTrip) {
  Rng rng(8);
  const auto x = random_matrix(40, 5, rng, 3.0);
  const auto m = pca_fit(x, 5);
  const auto back = pca_inverse(m, pca_transform(m, x));
  for (std::size_t i = 0; i < x.data().size(); ++i) EXPECT_NEAR(back.data()[i], x.data()[i], 1e-8);
}

TEST(Pca, TransformShapesAndCentering) {
  Rng rng(9);
  const auto x = random_matrix(500, 9, rng);
  const auto m = pca_fit(x, 2);
  const auto s = pca_transform(m, x);
  EXPECT_EQ(s.rows(), 500u);
  EXPECT_EQ(s.cols(), 2u);
  Matrix mean_row(1, 9, m.mean);
  const auto z = pca_transform(m, mean_row);
  EXPECT_NEAR(z(0, 0), 0.0, 1e-12);
  EXPECT_NEAR(z(0, 1), 0.0, 1e-12);
  EXPECT_ERRC(pca_transform(m, Matrix(3, 8)), Errc::ShapeMismatch);
  EXPECT_ERRC(pca_inverse(m, Matrix(3, 3)), Errc::ShapeMismatch);
}

TEST(Pca, OrthogonalDeviationsStayOrthogonal) {
  Rng rng(10);
  const auto x = random_matrix(100, 3, rng);
  const auto m = pca_fit(x, 3);
  // Two orthogonal deviations from the mean.
  Matrix pts(2, 3);
  for (std::size_t j = 0; j < 3; ++j) {
    pts(0, j) = m.mean[j] + (j == 0 ? 1.0 : 0.0);
    pts(1, j) = m.mean[j] + (j == 1 ? 2.0 : 0.0);
  }
  const auto s = pca_transform(m, pts);
  double dot = 0.0;
  for (std::size_t c = 0; c < 3; ++c) dot += s(0, c) * s(1, c);
  EXPECT_NEAR(dot, 0.0, 1e-10);
}

TEST(Pca, Preconditions) {
  EXPECT_ERRC(pca_fit(Matrix(1, 3), 1), Errc::TooFewRows);
  EXPECT_ERRC(pca_fit(Matrix(4, 3), 4), Errc::InvalidArgument);
  Matrix bad(4, 2);
  bad(1, 1) = std::nan("");
  EXPECT_ERRC(pca_fit(bad, 1), Errc::NonFiniteFeature);
}

TEST(Pca, PropertyOrthonormalSortedAndMatchesOracle) {
  Rng rng(12);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t d = 2 + rng.below(6);
    const auto x = random_matrix(30 + rng.below(30), d, rng);
    const auto m = pca_fit(x, d);
    const auto gram = matmul_bt(m.components, m.components);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) EXPECT_NEAR(gram(i, j), i == j ? 1.0 : 0.0, 1e-8);
    const auto ev = oracle_eigenvalues(x);
    double ratio_sum = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      if (i > 0) {
        EXPECT_LE(m.explained_variance[i], m.explained_variance[i - 1]);
      }
      EXPECT_NEAR(m.explained_variance[i], ev(static_cast<Eigen::Index>(i)), 1e-9);
      ratio_sum += m.explained_ratio[i];
      // sign convention
      auto row = m.components.row(i);
      const auto arg = std::max_element(row.begin(), row.end(),
                                        [](double a, double b) { return std::abs(a) < std::abs(b); });
      EXPECT_GT(*arg, 0.0);
    }
    EXPECT_LE(ratio_sum, 1.0 + 1e-9);
    EXPECT_NEAR(pca_explained(m, d), ratio_sum, 1e-12);
  }
}

// Residual sum of squares after projecting on k components equals
// (n - 1) times the discarded sample-covariance eigenvalues.
TEST(Pca, PropertyReconstructionErrorEqualsDiscardedVariance) {
  Rng rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    const auto x = random_matrix(6, 4, rng);
    const auto ev = oracle_eigenvalues(x);
    for (std::size_t k = 1; k <= 4; ++k) {
      const auto m = pca_fit(x, k);
      const auto back = pca_inverse(m, pca_transform(m, x));
      double sse = 0.0;
      for (std::size_t i = 0; i < x.data().size(); ++i) sse += std::pow(x.data()[i] - back.data()[i], 2);
      double discarded = 0.0;
      for (Eigen::Index i = static_cast<Eigen::Index>(k); i < 4; ++i) discarded += std::max(ev(i), 0.0);
      const double expected = 5.0 * discarded;
      EXPECT_NEAR(sse, expected, 1e-6 * std::max(1.0, expected));
    }
  }
}

TEST(Pca, PropertyScoresHaveDiagonalCovariance) {
  Rng rng(14);
  for (int trial = 0; trial < 10; ++trial) {
    auto x = random_matrix(80, 5, rng);
    for (std::size_t i = 0; i < 80; ++i) x(i, 1) += 0.8 * x(i, 0);
    const auto m = pca_fit(x, 5);
    const auto s = pca_transform(m, x);
    const auto cov = sample_covariance(s, column_means(s));
    for (std::size_t a = 0; a < 5; ++a)
      for (std::size_t b = 0; b < 5; ++b)
        if (a != b) {
          EXPECT_LT(std::abs(cov(a, b)), 1e-8);
        }
  }
}

TEST(Pca, SerializationRoundTrip) {
  Rng rng(15);
  const auto m = pca_fit(random_matrix(20, 4, rng), 3);
  std::stringstream ss;
  m.save(ss);
  const auto back = PcaModel::load(ss);
  EXPECT_EQ(back.components, m.components);
  EXPECT_EQ(back.mean, m.mean);
  EXPECT_EQ(back.explained_ratio, m.explained_ratio);
  std::stringstream wrong;
  nn::DenseNet({2, 2}, {nn::Activation::Linear}, 0.0, 1).save(wrong);
  EXPECT_ERRC(PcaModel::load(wrong), Errc::Io);
}

TEST(Autoencoder, LinearSubspaceIsRecovered) {
  Rng rng(21);
  const auto x = subspace_data(400, rng);
  nn::TrainConfig cfg;
  cfg.learning_rate = 5e-3;
  cfg.max_epochs = 400;
  cfg.early_stop_patience = 50;
  cfg.seed = 4;
  const auto fit = autoencoder_train(x, 2, cfg);
  EXPECT_LT(fit.final_loss, 0.05 * fit.initial_loss);
  EXPECT_LE(fit.final_loss, fit.initial_loss);
  // The split encoder/decoder reproduce the trained network.
  const auto recon = autoencoder_reconstruct(fit.model, x);
  double sse = 0.0;
  for (std::size_t i = 0; i < x.data().size(); ++i) sse += std::pow(recon.data()[i] - x.data()[i], 2);
  EXPECT_NEAR(sse / static_cast<double>(x.rows()), fit.final_loss, 1e-9 * std::max(1.0, fit.final_loss));
}

TEST(Autoencoder, FullRankNoiseStillImproves) {
  Rng rng(22);
  auto x = random_matrix(300, 6, rng);
  x = Standardizer::fit(x).apply(x);
  nn::TrainConfig cfg;
  cfg.learning_rate = 5e-3;
  cfg.max_epochs = 200;
  cfg.early_stop_patience = 30;
  cfg.seed = 2;
  const auto fit = autoencoder_train(x, 5, cfg);
  EXPECT_LE(fit.final_loss, 0.9 * fit.initial_loss);
}

TEST(Autoencoder, ZeroEpochsKeepsInitialWeights) {
  Rng rng(23);
  const auto x = subspace_data(50, rng);
  nn::TrainConfig cfg;
  cfg.max_epochs = 0;
  cfg.seed = 9;
  const auto fit = autoencoder_train(x, 2, cfg);
  EXPECT_TRUE(fit.curve.train.empty());
  EXPECT_TRUE(fit.curve.val.empty());
  EXPECT_DOUBLE_EQ(fit.final_loss, fit.initial_loss);
  const auto fresh = autoencoder_network(9, 2, 32, 9);
  std::vector<double> joined = fit.model.encoder.params();
  joined.insert(joined.end(), fit.model.decoder.params().begin(), fit.model.decoder.params().end());
  EXPECT_EQ(joined, fresh.params());
}

TEST(Autoencoder, EncodeShapeAndDeterminism) {
  Rng rng(24);
  auto x = subspace_data(60, rng);
  for (std::size_t j = 0; j < 9; ++j) x(1, j) = x(0, j);
  nn::TrainConfig cfg;
  cfg.max_epochs = 5;
  const auto fit = autoencoder_train(x, 3, cfg);
  const auto a = autoencoder_encode(fit.model, x);
  const auto b = autoencoder_encode(fit.model, x);
  EXPECT_EQ(a.rows(), 60u);
  EXPECT_EQ(a.cols(), 3u);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.row(0)[0], a.row(1)[0]);
  EXPECT_EQ(a.row(0)[2], a.row(1)[2]);
  EXPECT_EQ(fit.model.encoder.output_dim(), fit.model.decoder.input_dim());
  EXPECT_EQ(fit.model.decoder.output_dim(), fit.model.encoder.input_dim());
  EXPECT_ERRC(autoencoder_encode(fit.model, Matrix(2, 4)), Errc::ShapeMismatch);
  EXPECT_ERRC(autoencoder_train(x, 9, cfg), Errc::InvalidArgument);

  std::stringstream ss;
  fit.model.save(ss);
  const auto back = AutoencoderModel::load(ss);
  EXPECT_EQ(autoencoder_encode(back, x), a);
}

TEST(Autoencoder, SameSeedSameModel) {
  Rng rng(25);
  const auto x = subspace_data(80, rng);
  nn::TrainConfig cfg;
  cfg.max_epochs = 10;
  cfg.seed = 77;
  const auto a = autoencoder_train(x, 2, cfg);
  const auto b = autoencoder_train(x, 2, cfg);
  EXPECT_EQ(a.model.encoder.params(), b.model.encoder.params());
  EXPECT_EQ(a.model.decoder.params(), b.model.decoder.params());
}
