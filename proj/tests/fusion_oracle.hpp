#pragma once

#include <cmath>
#include <vector>

#include "regimesig/fusion.hpp"
#include "regimesig/synth.hpp"

// Signal streams built straight from the regime_coupled generator's own
// regimes and directional probabilities, plus closed-form expectations.
namespace fusion_oracle {

using namespace regimesig;

struct Scenario {
  synth::RegimeCoupled data;
  std::vector<fusion::Dated<int>> regimes;
  std::vector<fusion::ForecastPoint> forecasts;
  std::vector<fusion::Dated<double>> prices;
};

inline Scenario scenario(const synth::RegimeCoupledParams& p, std::uint64_t seed) {
  Scenario s{synth::regime_coupled(p, seed), {}, {}, {}};
  for (std::size_t t = 0; t < s.data.dates.size(); ++t) {
    s.regimes.push_back({s.data.dates[t], s.data.regimes[t]});
    s.forecasts.push_back({s.data.dates[t], s.data.index[t], s.data.p_up[t]});
    s.prices.push_back({s.data.dates[t], s.data.index[t]});
  }
  return s;
}

inline double phi(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

struct Expected {
  double fused_trades = 0, baseline_trades = 0, fused_hits = 0, baseline_hits = 0;
  double reduction() const { return 1.0 - fused_trades / baseline_trades; }
  double fused_hit_rate() const { return fused_hits / fused_trades; }
  double baseline_hit_rate() const { return baseline_hits / baseline_trades; }
};

/// Expected counts given the realised regime path. With P = sigmoid(a(c-3) + b xi)
/// the Buy probability is P(xi >= (logit(p_buy) - a(c-3)) / b), and a Buy
/// hits with probability Phi(drift_c / vol) under lognormal steps.
inline Expected expected(const synth::RegimeCoupledParams& p, const std::vector<int>& regimes,
                         const fusion::Thresholds& th = {}) {
  auto logit = [](double q) { return std::log(q / (1.0 - q)); };
  Expected e;
  for (std::size_t t = 0; t + 1 < regimes.size(); ++t) {
    const int c = regimes[t];
    const double shift = p.prob_alpha * (c - 3);
    const double pb = 1.0 - phi((logit(th.buy_p) - shift) / p.prob_beta);
    const double ps = phi((logit(th.sell_p) - shift) / p.prob_beta);
    const double up = phi(synth::regime_drift(c, p) / p.vol);
    e.baseline_trades += pb + ps;
    e.baseline_hits += pb * up + ps * (1.0 - up);
    if (c >= th.buy_c) e.fused_trades += pb, e.fused_hits += pb * up;
    if (c <= th.sell_c) e.fused_trades += ps, e.fused_hits += ps * (1.0 - up);
  }
  return e;
}

}  // namespace fusion_oracle
