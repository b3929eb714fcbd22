#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "regimesig/dense.hpp"
#include "regimesig/error.hpp"
#include "regimesig/frame.hpp"
#include "regimesig/matrix.hpp"
#include "regimesig/metrics.hpp"
#include "regimesig/model_io.hpp"
#include "regimesig/random.hpp"
#include "regimesig/trainer.hpp"

namespace regimesig::forecast {

enum class Kind : std::uint64_t { Srnn = 0, Mlp = 1, Lstm = 2, Gru = 3 };

inline constexpr Kind kAllKinds[] = {Kind::Srnn, Kind::Mlp, Kind::Lstm, Kind::Gru};

constexpr std::string_view kind_name(Kind k) noexcept {
  switch (k) {
    case Kind::Srnn: return "srnn";
    case Kind::Mlp: return "mlp";
    case Kind::Lstm: return "lstm";
    case Kind::Gru: return "gru";
  }
  return "?";
}

inline Kind parse_kind(std::string_view s) {
  for (Kind k : kAllKinds)
    if (kind_name(k) == s) return k;
  fail(Errc::ConfigInvalid, "unknown forecaster kind '" + std::string(s) + "'");
}

/// Gate blocks per step: SRNN 1, GRU z/r/candidate, LSTM i/f/o/candidate.
constexpr std::size_t gate_count(Kind k) noexcept {
  switch (k) {
    case Kind::Srnn: return 1;
    case Kind::Gru: return 3;
    case Kind::Lstm: return 4;
    case Kind::Mlp: return 0;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// Windows
// ---------------------------------------------------------------------------

/// The networks predict the one-step change of the target, so the target
/// statistics describe that change; a level that drifts past the training
/// range is then no extrapolation for the network.
struct Normalization {
  std::vector<double> mean, sd;  // per input feature
  double target_mean = 0.0, target_sd = 1.0;  // of target[t] - target[t-1]

  double normalize_target(double y) const { return (y - target_mean) / target_sd; }
  double denormalize_target(double z) const { return z * target_sd + target_mean; }
  bool operator==(const Normalization&) const = default;
};

struct WindowSet {
  std::size_t lookback = 0, features = 0;
  std::vector<double> inputs;        // count x lookback x features, normalized
  std::vector<double> targets;       // next close, raw
  std::vector<double> last_close;    // close at the final window step, raw
  std::vector<int> direction;        // 1 iff target > last_close
  std::vector<Timestamp> dates;      // timestamp of the target row

  std::size_t size() const { return targets.size(); }
  std::span<const double> window(std::size_t i) const {
    return std::span<const double>(inputs).subspan(i * lookback * features, lookback * features);
  }
};

struct WindowSplits {
  WindowSet train, val, test;
  Normalization norm;
};

/// Sliding windows over rows [begin, end): window i covers rows begin+i ..
/// begin+i+L-1 and predicts row begin+i+L, which must also lie in the range.
inline WindowSet build_windows(const Matrix& features, std::span<const double> target,
                               std::span<const Timestamp> dates, std::size_t begin, std::size_t end,
                               std::size_t lookback, const Normalization& norm) {
  require(end <= features.rows() && target.size() == features.rows() && dates.size() == features.rows(),
          Errc::LengthMismatch, "window inputs differ in length");
  require(end > begin + lookback, Errc::TooFewRows, "range too short for one window");
  WindowSet s;
  s.lookback = lookback;
  s.features = features.cols();
  for (std::size_t t = begin + lookback; t < end; ++t) {
    for (std::size_t r = t - lookback; r < t; ++r)
      for (std::size_t j = 0; j < s.features; ++j) s.inputs.push_back((features(r, j) - norm.mean[j]) / norm.sd[j]);
    s.targets.push_back(target[t]);
    s.last_close.push_back(target[t - 1]);
    s.direction.push_back(target[t] > target[t - 1] ? 1 : 0);
    s.dates.push_back(dates[t]);
  }
  return s;
}

/// Population mean and standard deviation over rows [0, n); a constant column gets sd 1.
/// Target statistics are taken over the n - 1 changes inside those rows.
inline Normalization fit_normalization(const Matrix& features, std::span<const double> target, std::size_t n) {
  Normalization z;
  auto stats = [n](auto get, double& m, double& s) {
    m = 0.0;
    for (std::size_t i = 0; i < n; ++i) m += get(i);
    m /= static_cast<double>(n);
    s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += (get(i) - m) * (get(i) - m);
    s = std::sqrt(s / static_cast<double>(n));
    if (!(s > 1e-12)) s = 1.0;
  };
  z.mean.resize(features.cols());
  z.sd.resize(features.cols());
  for (std::size_t j = 0; j < features.cols(); ++j)
    stats([&](std::size_t i) { return features(i, j); }, z.mean[j], z.sd[j]);
  if (n >= 2) {
    auto delta = [&](std::size_t i) { return target[i + 1] - target[i]; };
    const auto m = n - 1;
    z.target_mean = 0.0;
    for (std::size_t i = 0; i < m; ++i) z.target_mean += delta(i);
    z.target_mean /= static_cast<double>(m);
    double ss = 0.0;
    for (std::size_t i = 0; i < m; ++i) ss += (delta(i) - z.target_mean) * (delta(i) - z.target_mean);
    z.target_sd = std::sqrt(ss / static_cast<double>(m));
    if (!(z.target_sd > 1e-12)) z.target_sd = 1.0;
  }
  return z;
}

/// Windows within each chronological split; normalization statistics come
/// from the training rows only.
inline WindowSplits make_windows(const Matrix& features, std::span<const double> target,
                                 std::span<const Timestamp> dates, std::size_t lookback, const SplitSpec& split) {
  require(lookback >= 1, Errc::InvalidArgument, "lookback must be >= 1");
  require(target.size() == features.rows(), Errc::LengthMismatch, "target and features differ in length");
  for (double v : features.data()) require(std::isfinite(v), Errc::NonFiniteFeature, "feature not finite");
  for (double v : target) require(std::isfinite(v), Errc::NonFiniteFeature, "target not finite");
  const auto [ntr, nva, nte] = split.sizes(features.rows());
  for (std::size_t len : {ntr, nva, nte})
    require(len > lookback, Errc::TooFewRows,
            "every split needs more than lookback=" + std::to_string(lookback) + " rows");
  WindowSplits out;
  out.norm = fit_normalization(features, target, ntr);
  out.train = build_windows(features, target, dates, 0, ntr, lookback, out.norm);
  out.val = build_windows(features, target, dates, ntr, ntr + nva, lookback, out.norm);
  out.test = build_windows(features, target, dates, ntr + nva, features.rows(), lookback, out.norm);
  return out;
}

inline WindowSplits make_windows(const TimeSeriesFrame& frame, const std::string& target_column,
                                 const std::vector<std::string>& feature_columns, std::size_t lookback,
                                 const SplitSpec& split) {
  require(!feature_columns.empty(), Errc::InvalidArgument, "no feature columns");
  Matrix x(frame.size(), feature_columns.size());
  for (std::size_t j = 0; j < feature_columns.size(); ++j) {
    const auto v = frame.values(feature_columns[j]);
    for (std::size_t i = 0; i < v.size(); ++i) x(i, j) = v[i];
  }
  return make_windows(x, frame.values(target_column), frame.timestamps(), lookback, split);
}

/// Windows over a single series used as both feature and target.
inline WindowSplits make_windows(std::span<const double> series, std::size_t lookback, const SplitSpec& split) {
  std::vector<Timestamp> dates(series.size());
  for (std::size_t i = 0; i < dates.size(); ++i) dates[i] = Timestamp{static_cast<std::int64_t>(i) * 86400};
  return make_windows(Matrix(series.size(), 1, std::vector<double>(series.begin(), series.end())), series, dates,
                      lookback, split);
}

// ---------------------------------------------------------------------------
// Recurrent cells
// ---------------------------------------------------------------------------

namespace detail {

inline double sigmoid(double z) { return nn::sigmoid(z); }

// y += M x for a row-major rows x cols block
inline void matvec_add(const double* m, std::size_t rows, std::size_t cols, const double* x, double* y) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = m + r * cols;
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += row[c] * x[c];
    y[r] += s;
  }
}

// x += M^T y
inline void matvec_t_add(const double* m, std::size_t rows, std::size_t cols, const double* y, double* x) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = m + r * cols;
    const double yr = y[r];
    if (yr == 0.0) continue;
    for (std::size_t c = 0; c < cols; ++c) x[c] += row[c] * yr;
  }
}

// G += y x^T
inline void outer_add(double* g, std::size_t rows, std::size_t cols, const double* y, const double* x) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double yr = y[r];
    if (yr == 0.0) continue;
    double* row = g + r * cols;
    for (std::size_t c = 0; c < cols; ++c) row[c] += yr * x[c];
  }
}

struct CellParams {
  Kind kind;
  std::size_t input, hidden;
  const double *w, *u, *b;  // (G*H x input), (G*H x H), (G*H)
};

/// One step. `gates` receives the post-activation gate values (G*H).
inline void step(const CellParams& p, const double* x, const double* h, const double* c, double* gates,
                 double* h_out, double* c_out) {
  const std::size_t hd = p.hidden, g = gate_count(p.kind);
  std::copy(p.b, p.b + g * hd, gates);
  matvec_add(p.w, g * hd, p.input, x, gates);
  switch (p.kind) {
    case Kind::Srnn:
      matvec_add(p.u, hd, hd, h, gates);
      for (std::size_t j = 0; j < hd; ++j) h_out[j] = gates[j] = std::tanh(gates[j]);
      break;
    case Kind::Lstm:
      matvec_add(p.u, 4 * hd, hd, h, gates);
      for (std::size_t j = 0; j < 3 * hd; ++j) gates[j] = sigmoid(gates[j]);
      for (std::size_t j = 0; j < hd; ++j) {
        const double i = gates[j], f = gates[hd + j], o = gates[2 * hd + j];
        const double cand = gates[3 * hd + j] = std::tanh(gates[3 * hd + j]);
        c_out[j] = f * c[j] + i * cand;
        h_out[j] = o * std::tanh(c_out[j]);
      }
      break;
    case Kind::Gru: {
      matvec_add(p.u, 2 * hd, hd, h, gates);
      for (std::size_t j = 0; j < 2 * hd; ++j) gates[j] = sigmoid(gates[j]);
      const double* un = p.u + 2 * hd * hd;
      for (std::size_t j = 0; j < hd; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < hd; ++k) s += un[j * hd + k] * gates[hd + k] * h[k];
        gates[2 * hd + j] = std::tanh(gates[2 * hd + j] + s);
      }
      for (std::size_t j = 0; j < hd; ++j) {
        const double z = gates[j];
        h_out[j] = (1.0 - z) * h[j] + z * gates[2 * hd + j];
      }
      break;
    }
    case Kind::Mlp: fail(Errc::InvalidArgument, "mlp has no recurrent cell");
  }
}

/// Backward through one step. On entry dh/dc hold dL/dh_t and dL/dc_t; on
/// exit they hold dL/dh_{t-1} and dL/dc_{t-1}. `dpre` is scratch of G*H,
/// `scratch` of 3*H.
inline void step_backward(const CellParams& p, const double* x, const double* h_prev, const double* c_prev,
                          const double* gates, const double* c_now, double* dh, double* dc, double* dw, double* du,
                          double* db, double* dpre, double* scratch) {
  const std::size_t hd = p.hidden, g = gate_count(p.kind);
  double* dh_prev = scratch;
  std::fill(dh_prev, dh_prev + hd, 0.0);
  switch (p.kind) {
    case Kind::Srnn:
      for (std::size_t j = 0; j < hd; ++j) dpre[j] = dh[j] * (1.0 - gates[j] * gates[j]);
      outer_add(du, hd, hd, dpre, h_prev);
      matvec_t_add(p.u, hd, hd, dpre, dh_prev);
      break;
    case Kind::Lstm:
      for (std::size_t j = 0; j < hd; ++j) {
        const double i = gates[j], f = gates[hd + j], o = gates[2 * hd + j], cand = gates[3 * hd + j];
        const double tc = std::tanh(c_now[j]);
        const double dct = dc[j] + dh[j] * o * (1.0 - tc * tc);
        dpre[j] = dct * cand * i * (1.0 - i);
        dpre[hd + j] = dct * c_prev[j] * f * (1.0 - f);
        dpre[2 * hd + j] = dh[j] * tc * o * (1.0 - o);
        dpre[3 * hd + j] = dct * i * (1.0 - cand * cand);
        dc[j] = dct * f;
      }
      outer_add(du, 4 * hd, hd, dpre, h_prev);
      matvec_t_add(p.u, 4 * hd, hd, dpre, dh_prev);
      break;
    case Kind::Gru: {
      const double* un = p.u + 2 * hd * hd;
      double* rh = scratch + hd;
      double* drh = scratch + 2 * hd;
      std::fill(drh, drh + hd, 0.0);
      for (std::size_t j = 0; j < hd; ++j) {
        const double z = gates[j], n = gates[2 * hd + j];
        dpre[j] = dh[j] * (n - h_prev[j]) * z * (1.0 - z);
        dpre[2 * hd + j] = dh[j] * z * (1.0 - n * n);
        dh_prev[j] = dh[j] * (1.0 - z);
        rh[j] = gates[hd + j] * h_prev[j];
      }
      outer_add(du + 2 * hd * hd, hd, hd, dpre + 2 * hd, rh);
      matvec_t_add(un, hd, hd, dpre + 2 * hd, drh);
      for (std::size_t j = 0; j < hd; ++j) {
        const double r = gates[hd + j];
        dpre[hd + j] = drh[j] * h_prev[j] * r * (1.0 - r);
        dh_prev[j] += drh[j] * r;
      }
      outer_add(du, 2 * hd, hd, dpre, h_prev);
      matvec_t_add(p.u, 2 * hd, hd, dpre, dh_prev);
      break;
    }
    case Kind::Mlp: fail(Errc::InvalidArgument, "mlp has no recurrent cell");
  }
  for (std::size_t j = 0; j < g * hd; ++j) db[j] += dpre[j];
  outer_add(dw, g * hd, p.input, dpre, x);
  std::copy(dh_prev, dh_prev + hd, dh);
}

}  // namespace detail

/// Stand-alone cell with its own weights, for inspecting single steps.
struct RecurrentCell {
  Kind kind = Kind::Gru;
  std::size_t input = 0, hidden = 0;
  std::vector<double> w, u, b;

  RecurrentCell() = default;
  RecurrentCell(Kind k, std::size_t in, std::size_t hd)
      : kind(k), input(in), hidden(hd), w(gate_count(k) * hd * in, 0.0), u(gate_count(k) * hd * hd, 0.0),
        b(gate_count(k) * hd, 0.0) {
    require(k != Kind::Mlp, Errc::InvalidArgument, "mlp has no recurrent cell");
  }
};

struct CellState {
  std::vector<double> h, c;  // c is used by LSTM only
};

inline CellState cell_step(const RecurrentCell& cell, std::span<const double> x, const CellState& state) {
  require(x.size() == cell.input && state.h.size() == cell.hidden, Errc::ShapeMismatch, "cell input shape");
  require(cell.kind != Kind::Lstm || state.c.size() == cell.hidden, Errc::ShapeMismatch, "lstm needs a cell state");
  const std::size_t g = gate_count(cell.kind);
  require(cell.w.size() == g * cell.hidden * cell.input && cell.u.size() == g * cell.hidden * cell.hidden &&
              cell.b.size() == g * cell.hidden,
          Errc::ShapeMismatch, "cell weight shape");
  detail::CellParams p{cell.kind, cell.input, cell.hidden, cell.w.data(), cell.u.data(), cell.b.data()};
  std::vector<double> gates(g * cell.hidden);
  CellState out{std::vector<double>(cell.hidden), {}};
  if (cell.kind == Kind::Lstm) out.c.resize(cell.hidden);
  detail::step(p, x.data(), state.h.data(), cell.kind == Kind::Lstm ? state.c.data() : nullptr, gates.data(),
               out.h.data(), cell.kind == Kind::Lstm ? out.c.data() : nullptr);
  return out;
}

// ---------------------------------------------------------------------------
// Forecaster network
// ---------------------------------------------------------------------------

/// Offsets of each block in the flat parameter vector.
struct Layout {
  Kind kind = Kind::Gru;
  std::size_t lookback = 0, features = 0, hidden = 0;
  std::size_t w = 0, u = 0, b = 0, wv = 0, bv = 0, wd = 0, bd = 0, total = 0;

  Layout() = default;
  Layout(Kind k, std::size_t l, std::size_t f, std::size_t h) : kind(k), lookback(l), features(f), hidden(h) {
    require(l >= 1 && f >= 1 && h >= 1, Errc::InvalidArgument, "lookback, features and hidden must be >= 1");
    const std::size_t in = k == Kind::Mlp ? l * f : f;
    const std::size_t rows = k == Kind::Mlp ? h : gate_count(k) * h;
    u = w + rows * in;
    b = u + (k == Kind::Mlp ? 0 : rows * h);
    wv = b + rows;
    bv = wv + h;
    wd = bv + 1;
    bd = wd + h;
    total = bd + 1;
  }

  detail::CellParams cell(std::span<const double> p) const {
    return {kind, features, hidden, p.data() + w, p.data() + u, p.data() + b};
  }
};

/// Cached activations of one forward pass over a window.
struct Trace {
  std::vector<double> h, c, gates;  // (L+1)*H, (L+1)*H, L*G*H; MLP keeps its hidden layer in h
  double value = 0.0, logit = 0.0;
};

inline void forward(const Layout& lay, std::span<const double> p, std::span<const double> window, Trace& tr) {
  const std::size_t hd = lay.hidden, L = lay.lookback, f = lay.features;
  if (lay.kind == Kind::Mlp) {
    tr.h.assign(p.begin() + static_cast<std::ptrdiff_t>(lay.b), p.begin() + static_cast<std::ptrdiff_t>(lay.b + hd));
    detail::matvec_add(p.data() + lay.w, hd, L * f, window.data(), tr.h.data());
    for (double& v : tr.h) v = std::max(v, 0.0);
  } else {
    const std::size_t g = gate_count(lay.kind);
    tr.h.assign((L + 1) * hd, 0.0);
    tr.c.assign(lay.kind == Kind::Lstm ? (L + 1) * hd : 0, 0.0);
    tr.gates.resize(L * g * hd);
    const auto cp = lay.cell(p);
    for (std::size_t t = 0; t < L; ++t) {
      const bool lstm = lay.kind == Kind::Lstm;
      detail::step(cp, window.data() + t * f, tr.h.data() + t * hd, lstm ? tr.c.data() + t * hd : nullptr,
                   tr.gates.data() + t * g * hd, tr.h.data() + (t + 1) * hd,
                   lstm ? tr.c.data() + (t + 1) * hd : nullptr);
    }
  }
  const double* last = tr.h.data() + tr.h.size() - hd;
  tr.value = p[lay.bv];
  tr.logit = p[lay.bd];
  for (std::size_t j = 0; j < hd; ++j) {
    tr.value += p[lay.wv + j] * last[j];
    tr.logit += p[lay.wd + j] * last[j];
  }
}

inline double softplus(double s) { return s > 0.0 ? s + std::log1p(std::exp(-s)) : std::log1p(std::exp(s)); }

/// Squared error on the normalized target plus binary cross-entropy on direction.
inline double joint_loss(double value, double logit, double target, int direction) {
  const double e = value - target;
  return e * e + softplus(logit) - direction * logit;
}

/// Adds d(loss)/d(params) * scale into `grad` and returns the loss.
inline double loss_grad(const Layout& lay, std::span<const double> p, std::span<const double> window, double target,
                        int direction, std::span<double> grad, double scale, Trace& tr) {
  forward(lay, p, window, tr);
  const double loss = joint_loss(tr.value, tr.logit, target, direction);
  const std::size_t hd = lay.hidden, L = lay.lookback, f = lay.features;
  const double dv = 2.0 * (tr.value - target) * scale;
  const double ds = (nn::sigmoid(tr.logit) - direction) * scale;
  const double* last = tr.h.data() + tr.h.size() - hd;
  std::vector<double> dh(hd);
  grad[lay.bv] += dv;
  grad[lay.bd] += ds;
  for (std::size_t j = 0; j < hd; ++j) {
    grad[lay.wv + j] += dv * last[j];
    grad[lay.wd + j] += ds * last[j];
    dh[j] = dv * p[lay.wv + j] + ds * p[lay.wd + j];
  }
  if (lay.kind == Kind::Mlp) {
    for (std::size_t j = 0; j < hd; ++j) dh[j] = tr.h[j] > 0.0 ? dh[j] : 0.0;
    for (std::size_t j = 0; j < hd; ++j) grad[lay.b + j] += dh[j];
    detail::outer_add(grad.data() + lay.w, hd, L * f, dh.data(), window.data());
    return loss;
  }
  const std::size_t g = gate_count(lay.kind);
  const auto cp = lay.cell(p);
  std::vector<double> dc(hd, 0.0), dpre(g * hd), scratch(3 * hd);
  const bool lstm = lay.kind == Kind::Lstm;
  for (std::size_t t = L; t-- > 0;)
    detail::step_backward(cp, window.data() + t * f, tr.h.data() + t * hd, lstm ? tr.c.data() + t * hd : nullptr,
                          tr.gates.data() + t * g * hd, lstm ? tr.c.data() + (t + 1) * hd : nullptr, dh.data(),
                          dc.data(), grad.data() + lay.w, grad.data() + lay.u, grad.data() + lay.b, dpre.data(),
                          scratch.data());
  return loss;
}

inline std::vector<double> init_params(const Layout& lay, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> p(lay.total, 0.0);
  const double hd = static_cast<double>(lay.hidden);
  if (lay.kind == Kind::Mlp) {
    const double lim = std::sqrt(6.0 / static_cast<double>(lay.lookback * lay.features));
    for (std::size_t i = lay.w; i < lay.b; ++i) p[i] = rng.uniform(-lim, lim);
  } else {
    const double lim = 1.0 / std::sqrt(hd);
    for (std::size_t i = lay.w; i < lay.wv; ++i) p[i] = rng.uniform(-lim, lim);
    if (lay.kind == Kind::Lstm)  // forget-gate bias 1 keeps early gradients alive
      for (std::size_t j = 0; j < lay.hidden; ++j) p[lay.b + lay.hidden + j] = 1.0;
  }
  const double head = std::sqrt(6.0 / (hd + 1.0));
  for (std::size_t j = 0; j < lay.hidden; ++j) {
    p[lay.wv + j] = rng.uniform(-head, head);
    p[lay.wd + j] = rng.uniform(-head, head);
  }
  return p;
}

struct ForecastModel {
  Layout layout;
  std::vector<double> params;
  Normalization norm;

  Kind kind() const { return layout.kind; }
  std::size_t lookback() const { return layout.lookback; }

  void save(std::ostream& out) const {
    io::ModelWriter w(out, "forecast_model");
    w.u64(static_cast<std::uint64_t>(layout.kind));
    w.u64(layout.lookback);
    w.u64(layout.features);
    w.u64(layout.hidden);
    w.f64s(params);
    w.f64s(norm.mean);
    w.f64s(norm.sd);
    w.f64(norm.target_mean);
    w.f64(norm.target_sd);
  }
  static ForecastModel load(std::istream& in) {
    io::ModelReader r(in, "forecast_model");
    ForecastModel m;
    const auto k = r.u64();
    require(k <= 3, Errc::Io, "bad forecaster kind");
    const auto l = r.u64(), f = r.u64(), h = r.u64();
    m.layout = Layout(static_cast<Kind>(k), l, f, h);
    m.params = r.f64s();
    require(m.params.size() == m.layout.total, Errc::Io, "forecaster parameter count mismatch");
    m.norm.mean = r.f64s();
    m.norm.sd = r.f64s();
    m.norm.target_mean = r.f64();
    m.norm.target_sd = r.f64();
    return m;
  }
};

struct Prediction {
  double value = 0.0;  // de-normalized next close
  double p_up = 0.5;   // strictly inside (0, 1)
};

namespace detail {
inline Prediction finish(const ForecastModel& m, const Trace& tr, double last_close) {
  const double p = std::clamp(nn::sigmoid(tr.logit), nn::kProbFloor, 1.0 - nn::kProbFloor);
  return {last_close + m.norm.denormalize_target(tr.value), p};
}
}  // namespace detail

/// Prediction from a raw (un-normalized) window, L rows x features columns,
/// whose final row closed at `last_close`.
inline Prediction predict(const ForecastModel& m, const Matrix& window, double last_close) {
  require(window.rows() == m.layout.lookback && window.cols() == m.layout.features, Errc::ShapeMismatch,
          "window must be lookback x features");
  std::vector<double> z(window.data().begin(), window.data().end());
  for (std::size_t i = 0; i < z.size(); ++i) {
    const std::size_t j = i % m.layout.features;
    z[i] = (z[i] - m.norm.mean[j]) / m.norm.sd[j];
  }
  Trace tr;
  forward(m.layout, m.params, z, tr);
  return detail::finish(m, tr, last_close);
}

inline std::vector<Prediction> predict_all(const ForecastModel& m, const WindowSet& s) {
  require(s.lookback == m.layout.lookback && s.features == m.layout.features, Errc::ShapeMismatch,
          "window set shape differs from model");
  std::vector<Prediction> out;
  out.reserve(s.size());
  Trace tr;
  for (std::size_t i = 0; i < s.size(); ++i) {
    forward(m.layout, m.params, s.window(i), tr);
    out.push_back(detail::finish(m, tr, s.last_close[i]));
  }
  return out;
}

/// Metrics over de-normalized predictions; direction is judged against the last window close.
inline metrics::MetricReport evaluate_predictions(const WindowSet& s, std::span<const double> yhat) {
  require(s.size() > 0, Errc::EmptySplit, "empty test set");
  return metrics::evaluate(s.targets, yhat, s.last_close);
}

inline metrics::MetricReport evaluate_forecaster(const ForecastModel& m, const WindowSet& test) {
  std::vector<double> yhat;
  for (const auto& p : predict_all(m, test)) yhat.push_back(p.value);
  return evaluate_predictions(test, yhat);
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct ForecastConfig {
  std::size_t hidden = 32;
  nn::TrainConfig train = [] {
    nn::TrainConfig c;
    c.clip_norm = 5.0;
    return c;
  }();
};

class ForecastObjective {
 public:
  ForecastObjective(const Layout& lay, const WindowSet& train, const WindowSet& val, const Normalization& norm)
      : lay_(lay), train_(train), val_(val), norm_(norm) {
    require(train.size() > 0 && val.size() > 0, Errc::EmptySplit, "train and val windows must be non-empty");
  }

  std::size_t train_size() const { return train_.size(); }

  double batch_loss_grad(std::span<const double> p, std::span<const std::size_t> rows, std::span<double> grad,
                         Rng&) const {
    Trace tr;
    const double scale = 1.0 / static_cast<double>(rows.size());
    double loss = 0.0;
    for (std::size_t i : rows)
      loss += loss_grad(lay_, p, train_.window(i), norm_.normalize_target(train_.targets[i] - train_.last_close[i]),
                        train_.direction[i],
                        grad, scale, tr);
    return loss * scale;
  }

  double validation_loss(std::span<const double> p) const { return mean_loss(p, val_); }

  double mean_loss(std::span<const double> p, const WindowSet& s) const {
    Trace tr;
    double loss = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      forward(lay_, p, s.window(i), tr);
      loss += joint_loss(tr.value, tr.logit, norm_.normalize_target(s.targets[i] - s.last_close[i]), s.direction[i]);
    }
    return loss / static_cast<double>(s.size());
  }

 private:
  const Layout& lay_;
  const WindowSet& train_;
  const WindowSet& val_;
  const Normalization& norm_;
};

struct ForecastFit {
  ForecastModel model;
  nn::LossCurve curve;
};

/// Initial weights use a seed derived from the training seed and the kind,
/// so kinds trained side by side start from independent draws.
inline ForecastFit train_forecaster(Kind kind, const WindowSplits& w, const ForecastConfig& cfg = {}) {
  require(w.train.size() > 0 && w.val.size() > 0, Errc::EmptySplit, "train and val windows must be non-empty");
  ForecastFit fit;
  fit.model.layout = Layout(kind, w.train.lookback, w.train.features, cfg.hidden);
  fit.model.norm = w.norm;
  fit.model.params = init_params(fit.model.layout, derive_seed(cfg.train.seed, static_cast<std::uint64_t>(kind)));
  ForecastObjective obj(fit.model.layout, w.train, w.val, w.norm);
  fit.curve = nn::train_params(obj, fit.model.params, cfg.train);
  return fit;
}

}  // namespace regimesig::forecast
