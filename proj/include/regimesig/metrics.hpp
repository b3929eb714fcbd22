#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>

#include <nlohmann/json.hpp>

#include "regimesig/error.hpp"

namespace regimesig::metrics {

namespace detail {
inline void check_pair(std::span<const double> y, std::span<const double> yhat) {
  require(y.size() == yhat.size(), Errc::LengthMismatch, "metric inputs differ in length");
  require(!y.empty(), Errc::Empty, "metric inputs are empty");
}
inline int sign(double v) { return (v > 0.0) - (v < 0.0); }
}  // namespace detail

inline double mae(std::span<const double> y, std::span<const double> yhat) {
  detail::check_pair(y, yhat);
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += std::abs(y[i] - yhat[i]);
  return s / static_cast<double>(y.size());
}

inline double mse(std::span<const double> y, std::span<const double> yhat) {
  detail::check_pair(y, yhat);
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += (y[i] - yhat[i]) * (y[i] - yhat[i]);
  return s / static_cast<double>(y.size());
}

inline double rmse(std::span<const double> y, std::span<const double> yhat) {
  return std::sqrt(mse(y, yhat));
}

inline double r2(std::span<const double> y, std::span<const double> yhat) {
  detail::check_pair(y, yhat);
  double mean = 0.0;
  for (double v : y) mean += v;
  mean /= static_cast<double>(y.size());
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    ss_res += (y[i] - yhat[i]) * (y[i] - yhat[i]);
    ss_tot += (y[i] - mean) * (y[i] - mean);
  }
  require(ss_tot > 0.0, Errc::ZeroVariance, "r2: target has zero variance");
  return 1.0 - ss_res / ss_tot;
}

/// Percent.
inline double mape(std::span<const double> y, std::span<const double> yhat) {
  detail::check_pair(y, yhat);
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    require(y[i] != 0.0, Errc::ZeroTarget, "mape: zero target at index " + std::to_string(i));
    s += std::abs((y[i] - yhat[i]) / y[i]);
  }
  return 100.0 * s / static_cast<double>(y.size());
}

/// Percent in [0, 200]. Terms with y_i = yhat_i = 0 contribute 0.
inline double smape(std::span<const double> y, std::span<const double> yhat) {
  detail::check_pair(y, yhat);
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double denom = std::abs(y[i]) + std::abs(yhat[i]);
    if (denom == 0.0) continue;
    s += 2.0 * std::abs(y[i] - yhat[i]) / denom;
  }
  return 100.0 * s / static_cast<double>(y.size());
}

/// Fraction of i with sign(yhat_i - prev_i) == sign(y_i - prev_i); a zero move matches only zero.
inline double directional_accuracy(std::span<const double> y, std::span<const double> yhat,
                                   std::span<const double> y_prev) {
  detail::check_pair(y, yhat);
  require(y_prev.size() == y.size(), Errc::LengthMismatch, "directional_accuracy: y_prev length");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < y.size(); ++i)
    hits += detail::sign(yhat[i] - y_prev[i]) == detail::sign(y[i] - y_prev[i]);
  return static_cast<double>(hits) / static_cast<double>(y.size());
}

struct MetricReport {
  double mae = 0.0;
  double rmse = 0.0;
  double r2 = 0.0;
  double mape_pct = 0.0;
  double smape_pct = 0.0;
  double directional_accuracy = 0.0;
  std::size_t n = 0;
};

/// All six metrics. Zero-variance targets report r2 = 0 rather than failing,
/// and a target containing 0 reports mape as NaN.
inline MetricReport evaluate(std::span<const double> y, std::span<const double> yhat,
                             std::span<const double> y_prev) {
  MetricReport r;
  r.mae = mae(y, yhat);
  r.rmse = rmse(y, yhat);
  try {
    r.r2 = metrics::r2(y, yhat);
  } catch (const Error& e) {
    if (e.code() != Errc::ZeroVariance) throw;
    r.r2 = 0.0;
  }
  try {
    r.mape_pct = mape(y, yhat);
  } catch (const Error& e) {
    if (e.code() != Errc::ZeroTarget) throw;
    r.mape_pct = std::nan("");
  }
  r.smape_pct = smape(y, yhat);
  r.directional_accuracy = directional_accuracy(y, yhat, y_prev);
  r.n = y.size();
  return r;
}

inline nlohmann::json to_json(const MetricReport& r) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  return nlohmann::json{{"mae", num(r.mae)},
                        {"rmse", num(r.rmse)},
                        {"r2", num(r.r2)},
                        {"mape_pct", num(r.mape_pct)},
                        {"smape_pct", num(r.smape_pct)},
                        {"directional_accuracy", num(r.directional_accuracy)},
                        {"n", r.n}};
}

inline MetricReport metric_report_from_json(const nlohmann::json& j) {
  auto num = [&](const char* k) {
    return j.at(k).is_null() ? std::nan("") : j.at(k).get<double>();
  };
  MetricReport r;
  r.mae = num("mae");
  r.rmse = num("rmse");
  r.r2 = num("r2");
  r.mape_pct = num("mape_pct");
  r.smape_pct = num("smape_pct");
  r.directional_accuracy = num("directional_accuracy");
  r.n = j.at("n").get<std::size_t>();
  return r;
}

}  // namespace regimesig::metrics
