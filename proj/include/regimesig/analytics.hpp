#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "regimesig/error.hpp"

namespace regimesig::analytics {

inline std::vector<double> simple_returns(std::span<const double> prices) {
  require(prices.size() >= 2, Errc::TooShort, "need at least 2 prices");
  for (double p : prices) require(p > 0.0, Errc::NonPositivePrice, "prices must be > 0");
  std::vector<double> r(prices.size() - 1);
  for (std::size_t t = 1; t < prices.size(); ++t) r[t - 1] = prices[t] / prices[t - 1] - 1.0;
  return r;
}

inline std::vector<double> log_returns(std::span<const double> prices) {
  require(prices.size() >= 2, Errc::TooShort, "need at least 2 prices");
  for (double p : prices) require(p > 0.0, Errc::NonPositivePrice, "prices must be > 0");
  std::vector<double> r(prices.size() - 1);
  for (std::size_t t = 1; t < prices.size(); ++t) r[t - 1] = std::log(prices[t] / prices[t - 1]);
  return r;
}

/// Trailing simple moving average; entry j averages series[j .. j+window-1].
inline std::vector<double> moving_average(std::span<const double> series, std::size_t window) {
  require(window >= 1, Errc::InvalidArgument, "window must be >= 1");
  require(window <= series.size(), Errc::WindowTooLarge, "window exceeds series length");
  std::vector<double> out(series.size() - window + 1);
  // Each window summed directly: O(n*w) but free of running-sum drift.
  for (std::size_t j = 0; j < out.size(); ++j) {
    double s = 0.0;
    for (std::size_t k = 0; k < window; ++k) s += series[j + k];
    out[j] = s / static_cast<double>(window);
  }
  return out;
}

inline double mean(std::span<const double> x) {
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

/// Sample standard deviation (n-1 denominator).
inline double sample_std(std::span<const double> x) {
  const double m = mean(x);
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(x.size() - 1));
}

inline std::vector<double> rolling_volatility_annualized(std::span<const double> returns,
                                                         std::size_t window,
                                                         int periods_per_year = 252) {
  require(window >= 2, Errc::InvalidArgument, "volatility window must be >= 2");
  require(window <= returns.size(), Errc::WindowTooLarge, "window exceeds series length");
  const double scale = std::sqrt(static_cast<double>(periods_per_year));
  std::vector<double> out(returns.size() - window + 1);
  for (std::size_t j = 0; j < out.size(); ++j)
    out[j] = sample_std(returns.subspan(j, window)) * scale;
  return out;
}

namespace detail {

/// Pearson on raw spans; nullopt when either side has zero variance.
inline std::optional<double> pearson_or_none(std::span<const double> x, std::span<const double> y) {
  const double mx = mean(x), my = mean(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

}  // namespace detail

inline double pearson(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size(), Errc::LengthMismatch, "pearson: series lengths differ");
  require(x.size() >= 2, Errc::TooShort, "pearson: need at least 2 points");
  const auto r = detail::pearson_or_none(x, y);
  require(r.has_value(), Errc::ZeroVariance, "pearson: zero variance input");
  return *r;
}

/// Ranks starting at 1; ties share the average of their positions.
inline std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

inline double spearman(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size(), Errc::LengthMismatch, "spearman: series lengths differ");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return pearson(rx, ry);
}

struct RollingCorrelation {
  /// One entry per window position; missing where a window has zero variance.
  std::vector<std::optional<double>> values;
  double mean = 0.0;
  double std = 0.0;  // sample std over present values
  std::size_t present = 0;
};

inline RollingCorrelation rolling_correlation(std::span<const double> x, std::span<const double> y,
                                              std::size_t window) {
  require(x.size() == y.size(), Errc::LengthMismatch, "rolling_correlation: lengths differ");
  require(window >= 3, Errc::InvalidArgument, "rolling correlation window must be >= 3");
  require(window <= x.size(), Errc::WindowTooLarge, "window exceeds series length");
  RollingCorrelation out;
  out.values.resize(x.size() - window + 1);
  std::vector<double> present;
  for (std::size_t j = 0; j < out.values.size(); ++j) {
    out.values[j] = detail::pearson_or_none(x.subspan(j, window), y.subspan(j, window));
    if (out.values[j]) present.push_back(*out.values[j]);
  }
  out.present = present.size();
  if (!present.empty()) out.mean = mean(present);
  if (present.size() >= 2) out.std = sample_std(present);
  return out;
}

struct LeadLagProfile {
  std::vector<int> lags;
  std::vector<double> correlations;
  int best_lag = 0;
};

/// Correlation of x_t with y_{t+k} for k in [-L, L].
///
/// best_lag maximises the correlation; ties go to the smallest |k|, and
/// between +k and -k to the negative one. Lags whose overlap has zero
/// variance contribute correlation 0.
inline LeadLagProfile lead_lag_profile(std::span<const double> x, std::span<const double> y,
                                       int max_lag) {
  require(x.size() == y.size(), Errc::LengthMismatch, "lead_lag_profile: lengths differ");
  require(max_lag >= 0, Errc::InvalidArgument, "max_lag must be >= 0");
  require(x.size() > static_cast<std::size_t>(2 * max_lag + 2), Errc::SeriesTooShort,
          "series too short for requested lag range");
  const auto n = static_cast<std::ptrdiff_t>(x.size());
  LeadLagProfile p;
  for (int k = -max_lag; k <= max_lag; ++k) {
    // overlap: t in [max(0,-k), min(n, n-k))
    const std::ptrdiff_t t0 = std::max<std::ptrdiff_t>(0, -k);
    const std::ptrdiff_t t1 = std::min<std::ptrdiff_t>(n, n - k);
    const auto len = static_cast<std::size_t>(t1 - t0);
    const auto r = detail::pearson_or_none(x.subspan(static_cast<std::size_t>(t0), len),
                                           y.subspan(static_cast<std::size_t>(t0 + k), len));
    p.lags.push_back(k);
    p.correlations.push_back(r.value_or(0.0));
  }
  // Visit candidates in tie-break priority order: 0, -1, +1, -2, +2, ...
  double best = -2.0;
  for (int a = 0; a <= max_lag; ++a) {
    for (int k : {-a, a}) {
      const double c = p.correlations[static_cast<std::size_t>(k + max_lag)];
      if (c > best) {
        best = c;
        p.best_lag = k;
      }
      if (a == 0) break;
    }
  }
  return p;
}

}  // namespace regimesig::analytics
