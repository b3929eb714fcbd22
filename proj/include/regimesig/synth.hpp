#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "regimesig/error.hpp"
#include "regimesig/frame.hpp"
#include "regimesig/matrix.hpp"
#include "regimesig/random.hpp"

// Synthetic stand-ins for the proprietary market, macro and text-derived data.
namespace regimesig::synth {

struct Labeled {
  Matrix x;
  std::vector<int> labels;
};

inline Labeled gaussian_blobs(const std::vector<std::vector<double>>& centres, std::size_t per_blob,
                              const std::vector<double>& sd, std::uint64_t seed) {
  require(!centres.empty() && per_blob > 0, Errc::ConfigInvalid, "blobs need centres and a positive size");
  const std::size_t d = centres[0].size();
  require(sd.size() == d, Errc::ConfigInvalid, "one standard deviation per dimension");
  Rng rng(seed);
  Labeled out{Matrix(centres.size() * per_blob, d), {}};
  for (std::size_t c = 0; c < centres.size(); ++c)
    for (std::size_t i = 0; i < per_blob; ++i) {
      const std::size_t r = c * per_blob + i;
      for (std::size_t j = 0; j < d; ++j) out.x(r, j) = centres[c][j] + rng.normal(0.0, sd[j]);
      out.labels.push_back(static_cast<int>(c) + 1);
    }
  return out;
}

struct Blobs5Params {
  std::size_t n = 500;
  std::size_t dims = 9;
  double radius = 2.45;    // pentagon radius in the first two dimensions (unit noise there)
  double noise_sd = 0.8;   // standard deviation of the remaining dimensions
};

inline Matrix blobs5_centres(const Blobs5Params& p) {
  Matrix c(5, p.dims);
  for (std::size_t k = 0; k < 5; ++k) {
    const double a = 2.0 * std::numbers::pi * static_cast<double>(k) / 5.0;
    c(k, 0) = p.radius * std::cos(a);
    c(k, 1) = p.radius * std::sin(a);
  }
  return c;
}

/// Five overlapping classes in `dims` dimensions, labels 1..5 drawn uniformly.
/// Only the first two dimensions carry class information.
inline Labeled blobs5(const Blobs5Params& p, std::uint64_t seed) {
  require(p.dims >= 2 && p.n > 0, Errc::ConfigInvalid, "blobs5 needs dims >= 2 and n > 0");
  const auto c = blobs5_centres(p);
  Rng rng(seed);
  Labeled out{Matrix(p.n, p.dims), {}};
  for (std::size_t i = 0; i < p.n; ++i) {
    const std::size_t k = rng.below(5);
    for (std::size_t j = 0; j < p.dims; ++j) out.x(i, j) = c(k, j) + rng.normal(0.0, j < 2 ? 1.0 : p.noise_sd);
    out.labels.push_back(static_cast<int>(k) + 1);
  }
  return out;
}

/// Two unit-variance blobs in `dims` dimensions, `separation` apart along the first axis.
inline Labeled two_blobs(std::size_t per_blob, std::uint64_t seed, std::size_t dims = 5, double separation = 20.0) {
  std::vector<double> a(dims, 0.0), b(dims, 0.0);
  b[0] = separation;
  return gaussian_blobs({a, b}, per_blob, std::vector<double>(dims, 1.0), seed);
}

struct ArSineParams {
  std::size_t n = 3000;
  double level = 100.0;
  double amplitude = 3.27;
  double period = 50.0;
  double phi = 0.5;
  double sigma = 1.0;
};

/// level + amplitude * sin(2 pi t / period) + AR(1) noise. With the defaults an
/// order-30 linear predictor explains about 85% of the variance.
inline std::vector<double> ar_sine(const ArSineParams& p, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> y(p.n);
  double u = rng.normal(0.0, p.sigma / std::sqrt(1.0 - p.phi * p.phi));
  for (std::size_t t = 0; t < p.n; ++t) {
    if (t > 0) u = p.phi * u + rng.normal(0.0, p.sigma);
    y[t] = p.level + p.amplitude * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / p.period) + u;
  }
  return y;
}

/// Noise-free y_t = 0.9 y_{t-1} + drift + periodic forcing. Without forcing
/// the recursion collapses to its fixed point, so two sinusoids keep it moving.
inline std::vector<double> ar1_forced(std::size_t n, double phi = 0.9, double drift = 10.0) {
  std::vector<double> y(n);
  double prev = drift / (1.0 - phi);
  for (std::size_t t = 0; t < n; ++t) {
    const double tt = static_cast<double>(t);
    prev = phi * prev + drift + 2.0 * std::sin(2.0 * std::numbers::pi * tt / 40.0) +
           1.0 * std::sin(2.0 * std::numbers::pi * tt / 17.0);
    y[t] = prev;
  }
  return y;
}

inline std::vector<double> random_walk(std::size_t n, std::uint64_t seed, double start = 100.0, double sigma = 1.0) {
  Rng rng(seed);
  std::vector<double> y(n);
  double v = start;
  for (std::size_t t = 0; t < n; ++t) {
    if (t > 0) v += rng.normal(0.0, sigma);
    y[t] = v;
  }
  return y;
}

/// Two standard-normal series with correlation `rho`.
inline std::pair<std::vector<double>, std::vector<double>> correlated_pair(std::size_t n, double rho,
                                                                            std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> x(n), y(n);
  const double s = std::sqrt(1.0 - rho * rho);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = rng.normal();
    y[i] = rho * x[i] + s * rng.normal();
  }
  return {x, y};
}

struct RegimeCoupledParams {
  std::size_t n = 1500;
  double stay = 0.95;           // Markov probability of keeping the regime
  double drift_step = 0.0026;   // daily log drift per regime step away from 3
  double vol = 0.01;            // daily log volatility
  double feature_radius = 6.0;  // pentagon radius of the regime feature centres
  double feature_sd = 0.6;
  std::size_t features = 9;
  double prob_alpha = 1.0;      // synthetic forecaster: P = sigmoid(alpha (C - 3) + beta xi)
  double prob_beta = 1.4;
  double second_corr = 0.75;    // correlation of the second index's returns with the first
};

struct RegimeCoupled {
  std::vector<Timestamp> dates;
  std::vector<int> regimes;        // 1..5
  std::vector<double> drift;       // log drift in force from t to t+1
  Matrix features;                 // n x features
  std::vector<double> index;       // primary index closes
  std::vector<double> second;      // correlated index closes
  std::vector<double> p_up;        // synthetic directional probability
  std::vector<Timestamp> macro_dates;
  std::vector<double> macro;       // monthly macro series
};

inline double regime_drift(int regime, const RegimeCoupledParams& p) { return (regime - 3) * p.drift_step; }

/// Regimes follow a sticky Markov chain; each regime shifts the feature
/// centre and sets the index drift, so ordering clusters by forward return
/// recovers the regime ordinal.
inline RegimeCoupled regime_coupled(const RegimeCoupledParams& p, std::uint64_t seed) {
  require(p.n >= 10 && p.features >= 2, Errc::ConfigInvalid, "regime_coupled needs n >= 10 and >= 2 features");
  require(p.stay >= 0.0 && p.stay <= 1.0 && p.vol > 0.0, Errc::ConfigInvalid, "invalid regime_coupled params");
  Rng rng(seed);
  RegimeCoupled out;
  out.features = Matrix(p.n, p.features);
  int c = 1 + static_cast<int>(rng.below(5));
  double px = 1000.0, px2 = 500.0;
  const double s2 = std::sqrt(1.0 - p.second_corr * p.second_corr);
  const Timestamp start = make_timestamp(2015, 1, 1);
  for (std::size_t t = 0; t < p.n; ++t) {
    if (t > 0 && rng.uniform() >= p.stay) {
      const int jump = 1 + static_cast<int>(rng.below(4));
      c = 1 + (c - 1 + jump) % 5;
    }
    out.dates.push_back(Timestamp{start.seconds + static_cast<std::int64_t>(t) * 86400});
    out.regimes.push_back(c);
    out.drift.push_back(regime_drift(c, p));
    const double angle = 2.0 * std::numbers::pi * (c - 1) / 5.0;
    // every column sees the pentagon through its own phase, so no column is pure noise
    for (std::size_t j = 0; j < p.features; ++j) {
      const double phase = std::numbers::pi * static_cast<double>(j) / static_cast<double>(p.features);
      const double centre = p.feature_radius * std::cos(angle - phase);
      out.features(t, j) = centre + rng.normal(0.0, p.feature_sd);
    }
    out.index.push_back(px);
    out.second.push_back(px2);
    const double xi = rng.normal();
    out.p_up.push_back(1.0 / (1.0 + std::exp(-(p.prob_alpha * (c - 3) + p.prob_beta * xi))));
    const double e1 = rng.normal(), e2 = rng.normal();
    px *= std::exp(out.drift.back() + p.vol * e1);
    px2 *= std::exp(0.5 * out.drift.back() + p.vol * (p.second_corr * e1 + s2 * e2));
  }
  // monthly macro series released on the first of each month
  const std::int64_t last = out.dates.back().seconds;
  double level = 100.0;
  for (unsigned k = 0;; ++k) {
    const auto ts = make_timestamp(2015 + static_cast<int>(k / 12), k % 12 + 1, 1);
    if (ts.seconds > last) break;
    level *= 1.0 + rng.normal(0.004, 0.002);
    out.macro_dates.push_back(ts);
    out.macro.push_back(level);
  }
  return out;
}

}  // namespace regimesig::synth
