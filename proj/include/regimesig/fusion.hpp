#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "regimesig/error.hpp"
#include "regimesig/frame.hpp"

namespace regimesig::fusion {

enum class Signal { Buy, Sell, Hold };

constexpr std::string_view signal_name(Signal s) noexcept {
  switch (s) {
    case Signal::Buy: return "Buy";
    case Signal::Sell: return "Sell";
    case Signal::Hold: return "Hold";
  }
  return "?";
}

struct Thresholds {
  int buy_c = 4;
  double buy_p = 0.65;
  int sell_c = 2;
  double sell_p = 0.35;

  void validate() const {
    require(buy_c >= 1 && buy_c <= 5 && sell_c >= 1 && sell_c <= 5, Errc::ConfigInvalid,
            "regime thresholds must lie in 1..5");
    require(buy_p >= 0.0 && buy_p <= 1.0 && sell_p >= 0.0 && sell_p <= 1.0, Errc::ConfigInvalid,
            "probability thresholds must lie in [0, 1]");
  }
  bool operator==(const Thresholds&) const = default;
};

/// The rule: Buy on a favourable regime with confident upside, Sell on an
/// unfavourable regime with confident downside, Hold otherwise. Boundaries
/// are inclusive.
inline Signal fuse(int c, double p, const Thresholds& th = {}) {
  require(c >= 1 && c <= 5, Errc::OutOfRange, "regime must lie in 1..5, got " + std::to_string(c));
  require(p >= 0.0 && p <= 1.0, Errc::OutOfRange, "probability must lie in [0, 1]");
  if (c >= th.buy_c && p >= th.buy_p) return Signal::Buy;
  if (c <= th.sell_c && p <= th.sell_p) return Signal::Sell;
  return Signal::Hold;
}

/// Momentum-only rule with the regime condition removed.
inline Signal momentum(double p, double p_buy, double p_sell) {
  require(p >= 0.0 && p <= 1.0, Errc::OutOfRange, "probability must lie in [0, 1]");
  if (p >= p_buy) return Signal::Buy;
  if (p <= p_sell) return Signal::Sell;
  return Signal::Hold;
}

template <class T>
struct Dated {
  Timestamp date;
  T value;
};

/// Forecast issued at `date` for the next close.
struct ForecastPoint {
  Timestamp date;
  double y_hat = 0.0;
  double p_up = 0.5;
};

struct SignalDecision {
  Timestamp date;
  Signal signal = Signal::Hold;
  int c_t = 0;  // 0 for the regime-free baseline
  double p_t = 0.5;
  double y_hat = 0.0;
  double y_prev = 0.0;  // close on the decision date
  bool operator==(const SignalDecision&) const = default;
};

using SignalSeries = std::vector<SignalDecision>;

namespace detail {
template <class T>
std::map<std::int64_t, T> by_date(std::span<const Dated<T>> xs) {
  std::map<std::int64_t, T> m;
  for (const auto& x : xs) m[x.date.seconds] = x.value;
  return m;
}
}  // namespace detail

/// One decision per date present in all three inputs, in date order.
inline SignalSeries generate_signals(std::span<const Dated<int>> regimes, std::span<const ForecastPoint> forecasts,
                                     std::span<const Dated<double>> prices, const Thresholds& th = {}) {
  th.validate();
  const auto c = detail::by_date(regimes);
  const auto px = detail::by_date(prices);
  SignalSeries out;
  for (const auto& f : forecasts) {
    const auto ic = c.find(f.date.seconds);
    const auto ip = px.find(f.date.seconds);
    if (ic == c.end() || ip == px.end()) continue;
    out.push_back({f.date, fuse(ic->second, f.p_up, th), ic->second, f.p_up, f.y_hat, ip->second});
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.date < b.date; });
  require(!out.empty(), Errc::EmptyIntersection, "regimes, forecasts and prices share no dates");
  return out;
}

inline SignalSeries baseline_signals(std::span<const ForecastPoint> forecasts, std::span<const Dated<double>> prices,
                                     double p_buy = 0.65, double p_sell = 0.35) {
  const auto px = detail::by_date(prices);
  SignalSeries out;
  for (const auto& f : forecasts) {
    const auto ip = px.find(f.date.seconds);
    if (ip == px.end()) continue;
    out.push_back({f.date, momentum(f.p_up, p_buy, p_sell), 0, f.p_up, f.y_hat, ip->second});
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.date < b.date; });
  require(!out.empty(), Errc::EmptyIntersection, "forecasts and prices share no dates");
  return out;
}

// ---------------------------------------------------------------------------
// Backtest
// ---------------------------------------------------------------------------

struct Outcome {
  Timestamp date;
  Signal signal = Signal::Hold;
  double close = 0.0, next_close = 0.0;
  bool hit = false;
};

/// Scoring of one signal stream against the next close.
struct SignalScore {
  std::size_t trades = 0;  // non-Hold signals
  std::size_t scored = 0;  // trades with a next close available
  std::size_t hits = 0, misses = 0;
  std::optional<double> hit_rate;  // missing when nothing was scored
  std::vector<Outcome> outcomes;
};

/// A Buy hits when the next close is above the current one, a Sell when it
/// is below. The next close is the following row of `prices`.
inline SignalScore score(const SignalSeries& signals, std::span<const Dated<double>> prices) {
  require(prices.size() >= 2, Errc::TooShort, "backtest needs at least two prices");
  std::map<std::int64_t, std::size_t> row;
  for (std::size_t i = 0; i < prices.size(); ++i) {
    require(i == 0 || prices[i - 1].date < prices[i].date, Errc::UnsortableDates, "prices must be date-ordered");
    row[prices[i].date.seconds] = i;
  }
  SignalScore s;
  for (const auto& d : signals) {
    if (d.signal == Signal::Hold) continue;
    ++s.trades;
    const auto it = row.find(d.date.seconds);
    if (it == row.end() || it->second + 1 >= prices.size()) continue;
    const double now = prices[it->second].value, next = prices[it->second + 1].value;
    const bool hit = d.signal == Signal::Buy ? next > now : next < now;
    ++s.scored;
    (hit ? s.hits : s.misses) += 1;
    s.outcomes.push_back({d.date, d.signal, now, next, hit});
  }
  if (s.scored > 0) s.hit_rate = static_cast<double>(s.hits) / static_cast<double>(s.scored);
  return s;
}

struct BacktestReport {
  SignalScore fused, baseline;
  std::optional<double> trade_reduction;  // 1 - fused/baseline trades; missing when baseline has none
};

inline BacktestReport backtest(const SignalSeries& fused, const SignalSeries& baseline,
                               std::span<const Dated<double>> prices) {
  BacktestReport r{score(fused, prices), score(baseline, prices), std::nullopt};
  if (r.baseline.trades > 0)
    r.trade_reduction = 1.0 - static_cast<double>(r.fused.trades) / static_cast<double>(r.baseline.trades);
  return r;
}

inline nlohmann::json to_json(const BacktestReport& r, const std::function<std::string(Timestamp)>& fmt) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  auto log = [&](const SignalScore& s) {
    auto a = nlohmann::json::array();
    for (const auto& o : s.outcomes)
      a.push_back({{"date", fmt(o.date)},
                   {"signal", signal_name(o.signal)},
                   {"close", o.close},
                   {"next_close", o.next_close},
                   {"hit", o.hit}});
    return a;
  };
  return nlohmann::json{
      {"fused_trade_count", r.fused.trades},
      {"baseline_trade_count", r.baseline.trades},
      {"trade_reduction", opt(r.trade_reduction)},
      {"trade_reduction_pct", r.trade_reduction ? nlohmann::json(100.0 * *r.trade_reduction) : nlohmann::json(nullptr)},
      {"fused_hit_rate", opt(r.fused.hit_rate)},
      {"baseline_hit_rate", opt(r.baseline.hit_rate)},
      {"fused_scored", r.fused.scored},
      {"fused_hits", r.fused.hits},
      {"baseline_scored", r.baseline.scored},
      {"baseline_hits", r.baseline.hits},
      {"fused_outcomes", log(r.fused)},
      {"baseline_outcomes", log(r.baseline)}};
}

}  // namespace regimesig::fusion
