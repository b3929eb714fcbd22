#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "regimesig/analytics.hpp"
#include "regimesig/cluster.hpp"
#include "regimesig/config.hpp"
#include "regimesig/embed.hpp"
#include "regimesig/error.hpp"
#include "regimesig/forecast.hpp"
#include "regimesig/frame.hpp"
#include "regimesig/fusion.hpp"
#include "regimesig/metrics.hpp"
#include "regimesig/reduce.hpp"
#include "regimesig/regime.hpp"
#include "regimesig/synth.hpp"

namespace regimesig::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr std::string_view kStages[] = {"synth",    "ingest", "analytics", "embed",    "cluster",
                                               "classify", "forecast", "fuse",    "backtest", "report"};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct SynthSettings {
  std::string kind = "regime_coupled";
  std::size_t n = 0;  // 0 picks the generator default
  synth::RegimeCoupledParams coupled;
  synth::Blobs5Params blobs5;
  std::size_t two_blobs_dims = 5;
  double two_blobs_separation = 20.0;
  synth::ArSineParams ar_sine;
  double walk_sigma = 1.0;
};

struct PipelineConfig {
  fs::path out;
  std::uint64_t seed = 0;

  // inputs; macro is optional
  fs::path market, features, macro, truth;
  Frequency frequency = Frequency::Daily;
  std::string index_column = "index";
  std::string second_column = "second";
  FillPolicy fill = FillPolicy::ForwardFill;
  std::vector<std::pair<std::string, std::size_t>> lags;  // column, k
  SplitSpec split;

  std::size_t ma_short = 20, ma_long = 60, vol_window = 20, corr_window = 60;
  int max_lag = 5;
  double periods_per_year = 252.0;

  std::vector<std::string> feature_columns;  // empty: every aligned column except the two indices
  std::string embed_method = "umap";         // or "autoencoder"
  embed::UmapConfig umap{15, 0.5, 200, 0, 5};
  double variance_cap = 0.0;  // 0 disables the filter
  nn::TrainConfig autoencoder;

  std::size_t min_cluster_size = 50;
  std::optional<std::size_t> min_samples;

  regime::StackConfig classifier;

  std::vector<forecast::Kind> kinds{forecast::kAllKinds, forecast::kAllKinds + 4};
  std::size_t lookback = 30;
  std::vector<std::string> forecast_columns;  // empty: index plus the first two features
  std::string dataset = "daily";
  forecast::ForecastConfig forecaster;

  fusion::Thresholds thresholds;
  forecast::Kind fusion_kind = forecast::Kind::Gru;

  SynthSettings synth;
};

namespace detail {

inline Frequency parse_frequency(const std::string& s) {
  if (s == "daily") return Frequency::Daily;
  if (s == "monthly") return Frequency::Monthly;
  if (s == "intraday10min") return Frequency::Intraday10Min;
  fail(Errc::ConfigInvalid, "data.frequency: expected daily, monthly or intraday10min, got '" + s + "'");
}

inline std::size_t positive(const config::KeyValues& kv, const std::string& key, std::size_t fallback) {
  const auto v = kv.u64(key, fallback);
  require(v >= 1, Errc::ConfigInvalid, key + ": must be >= 1");
  return static_cast<std::size_t>(v);
}

inline nn::TrainConfig train_config(const config::KeyValues& kv, const std::string& prefix, nn::TrainConfig c) {
  c.learning_rate = kv.real(prefix + ".learning_rate", c.learning_rate);
  c.max_epochs = kv.integer(prefix + ".epochs", c.max_epochs);
  c.batch_size = positive(kv, prefix + ".batch_size", c.batch_size);
  c.early_stop_patience = kv.integer(prefix + ".patience", c.early_stop_patience);
  c.clip_norm = kv.real(prefix + ".clip_norm", c.clip_norm);
  require(c.learning_rate >= 0.0 && c.max_epochs >= 0 && c.early_stop_patience >= 1 && c.clip_norm >= 0.0,
          Errc::ConfigInvalid, prefix + ": invalid training settings");
  return c;
}

}  // namespace detail

/// Builds the pipeline settings. Relative paths resolve against `base`.
/// Every key must be recognised; a leftover key is reported as invalid.
inline PipelineConfig make_config(const config::KeyValues& kv, const fs::path& base) {
  PipelineConfig c;
  auto path = [&](const std::string& key, const std::string& fallback) -> fs::path {
    const auto s = kv.str(key, fallback);
    if (s.empty()) return {};
    const fs::path p(s);
    return p.is_absolute() ? p : base / p;
  };
  require(kv.has("seed"), Errc::ConfigInvalid, "seed: required (set it in the file or pass --seed)");
  c.seed = kv.u64("seed", 0);
  c.out = path("out", "out");

  c.market = path("data.market", "data/market.csv");
  c.features = path("data.features", "data/features.csv");
  c.macro = path("data.macro", "");
  c.truth = path("data.truth", "data/truth.csv");
  c.frequency = detail::parse_frequency(kv.str("data.frequency", "daily"));
  c.index_column = kv.str("data.index_column", c.index_column);
  c.second_column = kv.str("data.second_column", c.second_column);

  const auto fill = kv.str("align.fill", "forward_fill");
  require(fill == "forward_fill" || fill == "drop", Errc::ConfigInvalid,
          "align.fill: expected forward_fill or drop, got '" + fill + "'");
  c.fill = fill == "drop" ? FillPolicy::Drop : FillPolicy::ForwardFill;
  for (const auto& item : kv.list("align.lags", {})) {
    const auto colon = item.rfind(':');
    std::size_t k = 0;
    const bool ok = colon != std::string::npos && regimesig::detail::parse_int(std::string_view(item).substr(colon + 1), k);
    require(ok && k >= 1, Errc::ConfigInvalid, "align.lags: expected column:k, got '" + item + "'");
    c.lags.emplace_back(item.substr(0, colon), k);
  }

  c.split.train_frac = kv.real("split.train", c.split.train_frac);
  c.split.val_frac = kv.real("split.val", c.split.val_frac);
  c.split.test_frac = kv.real("split.test", c.split.test_frac);
  try {
    c.split.validate();
  } catch (const Error& e) {
    fail(Errc::ConfigInvalid, std::string("split: ") + e.what());
  }

  c.ma_short = detail::positive(kv, "analytics.ma_short", c.ma_short);
  c.ma_long = detail::positive(kv, "analytics.ma_long", c.ma_long);
  c.vol_window = detail::positive(kv, "analytics.vol_window", c.vol_window);
  c.corr_window = detail::positive(kv, "analytics.corr_window", c.corr_window);
  c.max_lag = kv.integer("analytics.max_lag", c.max_lag);
  c.periods_per_year = kv.real("analytics.periods_per_year", c.periods_per_year);
  require(c.max_lag >= 0, Errc::ConfigInvalid, "analytics.max_lag: must be >= 0");
  require(c.periods_per_year > 0.0, Errc::ConfigInvalid, "analytics.periods_per_year: must be > 0");

  c.feature_columns = kv.list("embed.feature_columns", {});
  c.embed_method = kv.str("embed.method", c.embed_method);
  require(c.embed_method == "umap" || c.embed_method == "autoencoder", Errc::ConfigInvalid,
          "embed.method: expected umap or autoencoder");
  c.umap.n_neighbors = detail::positive(kv, "embed.n_neighbors", c.umap.n_neighbors);
  c.umap.min_dist = kv.real("embed.min_dist", c.umap.min_dist);
  c.umap.epochs = kv.integer("embed.epochs", c.umap.epochs);
  c.umap.negative_rate = detail::positive(kv, "embed.negative_rate", c.umap.negative_rate);
  c.umap.seed = derive_seed(c.seed, 1);
  require(c.umap.min_dist >= 0.0 && c.umap.epochs >= 1, Errc::ConfigInvalid, "embed: invalid min_dist or epochs");
  c.variance_cap = kv.real("embed.variance_cap", c.variance_cap);
  c.autoencoder = detail::train_config(kv, "embed.autoencoder", {});
  c.autoencoder.seed = derive_seed(c.seed, 2);

  c.min_cluster_size = detail::positive(kv, "cluster.min_cluster_size", c.min_cluster_size);
  if (kv.has("cluster.min_samples")) c.min_samples = detail::positive(kv, "cluster.min_samples", 1);

  auto& g = c.classifier.gbm;
  g.rounds = kv.integer("classify.gbm.rounds", g.rounds);
  g.max_depth = kv.integer("classify.gbm.max_depth", g.max_depth);
  g.learning_rate = kv.real("classify.gbm.learning_rate", g.learning_rate);
  g.min_samples_leaf = detail::positive(kv, "classify.gbm.min_samples_leaf", g.min_samples_leaf);
  require(g.rounds >= 0 && g.max_depth >= 0 && g.learning_rate >= 0.0, Errc::ConfigInvalid,
          "classify.gbm: invalid settings");
  c.classifier.head = detail::train_config(kv, "classify.head", {});
  c.classifier.head.seed = derive_seed(c.seed, 3);
  c.classifier.dropout = kv.real("classify.head.dropout", c.classifier.dropout);
  require(c.classifier.dropout >= 0.0 && c.classifier.dropout < 1.0, Errc::ConfigInvalid,
          "classify.head.dropout: must lie in [0, 1)");
  if (kv.has("classify.head.hidden")) {
    c.classifier.hidden.clear();
    for (const auto& h : kv.list("classify.head.hidden", {})) {
      std::size_t v = 0;
      require(regimesig::detail::parse_int(std::string_view(h), v) && v >= 1, Errc::ConfigInvalid,
              "classify.head.hidden: expected positive integers");
      c.classifier.hidden.push_back(v);
    }
  }
  c.classifier.folds = detail::positive(kv, "classify.folds", c.classifier.folds);

  if (kv.has("forecast.kinds")) {
    c.kinds.clear();
    for (const auto& k : kv.list("forecast.kinds", {})) c.kinds.push_back(forecast::parse_kind(k));
    require(!c.kinds.empty(), Errc::ConfigInvalid, "forecast.kinds: empty");
  }
  c.lookback = detail::positive(kv, "forecast.lookback", c.lookback);
  c.forecast_columns = kv.list("forecast.feature_columns", {});
  c.dataset = kv.str("forecast.dataset", c.dataset);
  c.forecaster.hidden = detail::positive(kv, "forecast.hidden", c.forecaster.hidden);
  nn::TrainConfig ft = c.forecaster.train;
  ft.max_epochs = 100;
  c.forecaster.train = detail::train_config(kv, "forecast", ft);
  c.forecaster.train.seed = derive_seed(c.seed, 4);

  auto& th = c.thresholds;
  th.buy_c = kv.integer("fusion.buy_c", th.buy_c);
  th.buy_p = kv.real("fusion.buy_p", th.buy_p);
  th.sell_c = kv.integer("fusion.sell_c", th.sell_c);
  th.sell_p = kv.real("fusion.sell_p", th.sell_p);
  th.validate();
  c.fusion_kind = forecast::parse_kind(kv.str("fusion.forecaster", "gru"));

  auto& s = c.synth;
  s.kind = kv.str("synth.kind", s.kind);
  s.n = static_cast<std::size_t>(kv.u64("synth.n", 0));
  auto& rc = s.coupled;
  rc.stay = kv.real("synth.stay", rc.stay);
  rc.drift_step = kv.real("synth.drift_step", rc.drift_step);
  rc.vol = kv.real("synth.vol", rc.vol);
  rc.feature_radius = kv.real("synth.feature_radius", rc.feature_radius);
  rc.feature_sd = kv.real("synth.feature_sd", rc.feature_sd);
  rc.features = detail::positive(kv, "synth.features", rc.features);
  rc.prob_alpha = kv.real("synth.prob_alpha", rc.prob_alpha);
  rc.prob_beta = kv.real("synth.prob_beta", rc.prob_beta);
  rc.second_corr = kv.real("synth.second_corr", rc.second_corr);
  s.blobs5.dims = detail::positive(kv, "synth.dims", s.blobs5.dims);
  s.blobs5.radius = kv.real("synth.radius", s.blobs5.radius);
  s.blobs5.noise_sd = kv.real("synth.noise_sd", s.blobs5.noise_sd);
  s.two_blobs_dims = detail::positive(kv, "synth.blob_dims", s.two_blobs_dims);
  s.two_blobs_separation = kv.real("synth.separation", s.two_blobs_separation);
  s.ar_sine.amplitude = kv.real("synth.amplitude", s.ar_sine.amplitude);
  s.ar_sine.period = kv.real("synth.period", s.ar_sine.period);
  s.ar_sine.phi = kv.real("synth.phi", s.ar_sine.phi);
  s.ar_sine.sigma = kv.real("synth.sigma", s.ar_sine.sigma);
  s.walk_sigma = kv.real("synth.walk_sigma", s.walk_sigma);

  const auto extra = kv.unused();
  require(extra.empty(), Errc::ConfigInvalid, extra.empty() ? "" : extra.front() + ": unknown key");
  return c;
}

/// Reads a config file. `out` and `seed` override the file's values.
inline PipelineConfig load_config(const fs::path& file, const std::optional<fs::path>& out = std::nullopt,
                                  const std::optional<std::uint64_t>& seed = std::nullopt) {
  auto kv = config::KeyValues::load(file);
  if (seed) kv.set("seed", std::to_string(*seed));
  auto c = make_config(kv, file.parent_path());
  if (out) c.out = *out;
  return c;
}

// ---------------------------------------------------------------------------
// Artifact I/O
// ---------------------------------------------------------------------------

/// Writes through a sibling temp file and renames it into place.
inline void write_atomic(const fs::path& path, const std::string& bytes) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  require(!ec, Errc::Io, "cannot create " + path.parent_path().string());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(out.good(), Errc::Io, "cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    require(out.good(), Errc::Io, "write failed for " + tmp.string());
  }
  fs::rename(tmp, path, ec);
  require(!ec, Errc::Io, "cannot rename into " + path.string());
}

inline void write_json(const fs::path& path, const json& j) { write_atomic(path, j.dump(2) + "\n"); }

template <class Model>
void write_model(const fs::path& path, const Model& m) {
  std::ostringstream os(std::ios::binary);
  m.save(os);
  write_atomic(path, os.str());
}

inline void write_frame(const fs::path& path, const TimeSeriesFrame& f) {
  std::ostringstream os;
  write_csv(os, f);
  write_atomic(path, os.str());
}

/// Fails with MissingUpstream unless `path` exists; `from` names the producer.
inline void need(const fs::path& path, std::string_view from) {
  require(fs::exists(path), Errc::MissingUpstream,
          path.string() + " (run '" + std::string(from) + "' first)");
}

template <class Model>
Model read_model(const fs::path& path, std::string_view from) {
  need(path, from);
  std::ifstream in(path, std::ios::binary);
  return Model::load(in);
}

inline json read_json(const fs::path& path, std::string_view from) {
  need(path, from);
  std::ifstream in(path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    fail(Errc::Io, path.string() + ": " + e.what());
  }
}

/// Header plus string cells; for artifacts whose first column is not a date.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t col(std::string_view name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    require(it != header.end(), Errc::MissingColumn, std::string(name));
    return static_cast<std::size_t>(it - header.begin());
  }

  std::string str() const {
    std::string s;
    auto line = [&](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) s += (i ? "," : "") + cells[i];
      s += '\n';
    };
    line(header);
    for (const auto& r : rows) line(r);
    return s;
  }
};

inline Table read_table(const fs::path& path, std::string_view from) {
  need(path, from);
  std::ifstream in(path);
  Table t;
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), Errc::EmptyFile, path.string());
  for (auto c : regimesig::detail::split_commas(line)) t.header.emplace_back(c);
  while (std::getline(in, line)) {
    if (regimesig::detail::trim(line).empty()) continue;
    std::vector<std::string> row;
    for (auto c : regimesig::detail::split_commas(line)) row.emplace_back(c);
    require(row.size() == t.header.size(), Errc::ShapeMismatch, path.string() + ": ragged row");
    t.rows.push_back(std::move(row));
  }
  return t;
}

inline double cell_double(const std::string& s, const fs::path& where) {
  const auto v = parse_double(s);
  require(v.has_value(), Errc::Io, where.string() + ": bad number '" + s + "'");
  return *v;
}

inline std::string opt_str(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

// ---------------------------------------------------------------------------
// Artifact locations
// ---------------------------------------------------------------------------

struct Paths {
  fs::path root;
  fs::path aligned() const { return root / "aligned.csv"; }
  fs::path moving_averages() const { return root / "moving_averages.csv"; }
  fs::path volatility() const { return root / "volatility.csv"; }
  fs::path leadlag() const { return root / "leadlag.csv"; }
  fs::path rolling() const { return root / "rolling_correlation.csv"; }
  fs::path correlation() const { return root / "correlation.json"; }
  fs::path pca_json() const { return root / "pca.json"; }
  fs::path pca_model() const { return root / "pca.bin"; }
  fs::path pca_scores() const { return root / "pca_scores.csv"; }
  fs::path autoencoder() const { return root / "autoencoder.bin"; }
  fs::path embed_json() const { return root / "embed.json"; }
  fs::path coords() const { return root / "umap_coords.csv"; }
  fs::path clusters() const { return root / "clusters.csv"; }
  fs::path cluster_validation() const { return root / "cluster_validation.json"; }
  fs::path classifier() const { return root / "classifier.bin"; }
  fs::path confusion() const { return root / "confusion.csv"; }
  fs::path classifier_report() const { return root / "classifier_report.json"; }
  fs::path regimes() const { return root / "regimes.csv"; }
  fs::path forecast_dir(forecast::Kind k) const { return root / "forecast" / std::string(forecast::kind_name(k)); }
  fs::path signals() const { return root / "signals.csv"; }
  fs::path baseline() const { return root / "baseline_signals.csv"; }
  fs::path backtest() const { return root / "backtest.json"; }
  fs::path report_csv() const { return root / "report.csv"; }
  fs::path report_json() const { return root / "report.json"; }
};

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

namespace detail {

inline std::string date_str(Timestamp t, Frequency f) { return format_timestamp(t, f); }

inline TimeSeriesFrame load_aligned(const PipelineConfig& c) {
  const Paths p{c.out};
  need(p.aligned(), "ingest");
  return load_csv(p.aligned().string(), {c.frequency, {c.index_column}});
}

inline std::vector<std::string> feature_columns(const PipelineConfig& c, const TimeSeriesFrame& f) {
  if (!c.feature_columns.empty()) {
    for (const auto& n : c.feature_columns)
      require(f.has_column(n), Errc::ConfigInvalid, "embed.feature_columns: no column '" + n + "' in aligned.csv");
    return c.feature_columns;
  }
  std::vector<std::string> out;
  for (const auto& n : f.column_names())
    if (n != c.index_column && n != c.second_column) out.push_back(n);
  require(!out.empty(), Errc::ConfigInvalid, "embed.feature_columns: aligned.csv has no feature columns");
  return out;
}

inline Matrix feature_matrix(const TimeSeriesFrame& f, const std::vector<std::string>& cols) {
  Matrix x(f.size(), cols.size());
  for (std::size_t j = 0; j < cols.size(); ++j) {
    const auto v = f.values(cols[j]);
    for (std::size_t i = 0; i < v.size(); ++i) x(i, j) = v[i];
  }
  return x;
}

inline Matrix embed_input(const PipelineConfig& c, const TimeSeriesFrame& f, std::vector<std::string>* used = nullptr) {
  auto cols = feature_columns(c, f);
  Matrix raw = feature_matrix(f, cols);
  if (c.variance_cap > 0.0) {
    const auto keep = embed::variance_filter(raw, c.variance_cap);
    require(!keep.empty(), Errc::ConfigInvalid, "embed.variance_cap: removes every feature");
    std::vector<std::string> kept;
    Matrix filtered(raw.rows(), keep.size());
    for (std::size_t j = 0; j < keep.size(); ++j) {
      kept.push_back(cols[keep[j]]);
      for (std::size_t i = 0; i < raw.rows(); ++i) filtered(i, j) = raw(i, keep[j]);
    }
    cols = std::move(kept);
    raw = std::move(filtered);
  }
  if (used) *used = cols;
  return reduce::Standardizer::fit(raw).apply(raw);
}

inline void synth_write(const PipelineConfig& c) {
  const auto& s = c.synth;
  const auto daily = [](std::size_t n) {
    std::vector<Timestamp> d(n);
    const Timestamp start = make_timestamp(2015, 1, 1);
    for (std::size_t i = 0; i < n; ++i) d[i] = Timestamp{start.seconds + static_cast<std::int64_t>(i) * 86400};
    return d;
  };
  const auto column = [](auto first, auto last) { return Column(first, last); };
  auto labeled = [&](const synth::Labeled& l) {
    const auto dates = daily(l.x.rows());
    std::vector<std::pair<std::string, Column>> cols;
    for (std::size_t j = 0; j < l.x.cols(); ++j) {
      Column col(l.x.rows());
      for (std::size_t i = 0; i < l.x.rows(); ++i) col[i] = l.x(i, j);
      cols.emplace_back("f" + std::to_string(j + 1), std::move(col));
    }
    write_frame(c.features, TimeSeriesFrame(Frequency::Daily, dates, std::move(cols)));
    Column lab(l.labels.begin(), l.labels.end());
    write_frame(c.truth, TimeSeriesFrame(Frequency::Daily, dates, {{"label", lab}}));
  };
  auto series = [&](const std::vector<double>& y) {
    write_frame(c.market, TimeSeriesFrame(Frequency::Daily, daily(y.size()), {{c.index_column, column(y.begin(), y.end())}}));
  };

  if (s.kind == "regime_coupled") {
    auto p = s.coupled;
    if (s.n) p.n = s.n;
    const auto d = synth::regime_coupled(p, c.seed);
    write_frame(c.market, TimeSeriesFrame(Frequency::Daily, d.dates,
                                          {{c.index_column, column(d.index.begin(), d.index.end())},
                                           {c.second_column, column(d.second.begin(), d.second.end())}}));
    std::vector<std::pair<std::string, Column>> cols;
    for (std::size_t j = 0; j < d.features.cols(); ++j) {
      Column col(d.features.rows());
      for (std::size_t i = 0; i < d.features.rows(); ++i) col[i] = d.features(i, j);
      cols.emplace_back("f" + std::to_string(j + 1), std::move(col));
    }
    write_frame(c.features, TimeSeriesFrame(Frequency::Daily, d.dates, std::move(cols)));
    if (!c.macro.empty())
      write_frame(c.macro, TimeSeriesFrame(Frequency::Monthly, d.macro_dates, {{"macro", column(d.macro.begin(), d.macro.end())}}));
    write_frame(c.truth, TimeSeriesFrame(Frequency::Daily, d.dates,
                                         {{"regime", column(d.regimes.begin(), d.regimes.end())},
                                          {"drift", column(d.drift.begin(), d.drift.end())},
                                          {"p_up", column(d.p_up.begin(), d.p_up.end())}}));
  } else if (s.kind == "blobs5") {
    auto p = s.blobs5;
    if (s.n) p.n = s.n;
    labeled(synth::blobs5(p, c.seed));
  } else if (s.kind == "two_blobs") {
    labeled(synth::two_blobs(s.n ? s.n / 2 : 250, c.seed, s.two_blobs_dims, s.two_blobs_separation));
  } else if (s.kind == "ar_sine") {
    auto p = s.ar_sine;
    if (s.n) p.n = s.n;
    series(synth::ar_sine(p, c.seed));
  } else if (s.kind == "random_walk") {
    series(synth::random_walk(s.n ? s.n : 3000, c.seed, 100.0, s.walk_sigma));
  } else {
    fail(Errc::ConfigInvalid, "synth.kind: unknown generator '" + s.kind + "'");
  }
}

}  // namespace detail

inline void run_synth(const PipelineConfig& c) { detail::synth_write(c); }

inline void run_ingest(const PipelineConfig& c) {
  std::vector<TimeSeriesFrame> frames;
  need(c.market, "synth");
  frames.push_back(load_csv(c.market.string(), {c.frequency, {c.index_column}}));
  if (!c.features.empty() && fs::exists(c.features)) frames.push_back(load_csv(c.features.string(), {c.frequency, {}}));
  if (!c.macro.empty()) {
    need(c.macro, "synth");
    frames.push_back(load_csv(c.macro.string(), {Frequency::Monthly, {}}));
  }
  auto aligned = align(frames, c.frequency, c.fill);
  for (const auto& [col, k] : c.lags) aligned = lag(aligned, col, k);
  if (!c.lags.empty()) {
    std::size_t skip = 0;
    for (const auto& [_, k] : c.lags) skip = std::max(skip, k);
    aligned = aligned.slice(std::min(skip, aligned.size()), aligned.size());
  }
  require(aligned.size() >= 10, Errc::TooFewRows, "aligned data has fewer than 10 rows");
  write_frame(Paths{c.out}.aligned(), aligned);
}

inline void run_analytics(const PipelineConfig& c) {
  const Paths p{c.out};
  const auto f = detail::load_aligned(c);
  require(f.has_column(c.second_column), Errc::ConfigInvalid,
          "data.second_column: aligned.csv has no column '" + c.second_column + "'");
  const auto a = f.values(c.index_column), b = f.values(c.second_column);
  const auto& ts = f.timestamps();
  const auto ds = [&](std::size_t i) { return detail::date_str(ts[i], c.frequency); };
  const std::size_t n = f.size();

  Table ma{{"date", "series_a_ma" + std::to_string(c.ma_short), "series_a_ma" + std::to_string(c.ma_long),
            "series_b_ma" + std::to_string(c.ma_short), "series_b_ma" + std::to_string(c.ma_long)},
           {}};
  const std::vector<std::vector<double>> mas{analytics::moving_average(a, c.ma_short),
                                             analytics::moving_average(a, c.ma_long),
                                             analytics::moving_average(b, c.ma_short),
                                             analytics::moving_average(b, c.ma_long)};
  const std::size_t windows[] = {c.ma_short, c.ma_long, c.ma_short, c.ma_long};
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::string> row{ds(i)};
    for (std::size_t k = 0; k < 4; ++k) row.push_back(i + 1 >= windows[k] ? format_double(mas[k][i + 1 - windows[k]]) : "");
    ma.rows.push_back(std::move(row));
  }
  write_atomic(p.moving_averages(), ma.str());

  const auto ra = analytics::simple_returns(a), rb = analytics::simple_returns(b);
  const auto va = analytics::rolling_volatility_annualized(ra, c.vol_window, c.periods_per_year);
  const auto vb = analytics::rolling_volatility_annualized(rb, c.vol_window, c.periods_per_year);
  Table vol{{"date", "vol_a", "vol_b"}, {}};
  // return j spans rows j..j+1, so window j..j+w-1 ends on row j+w
  for (std::size_t i = 0; i < n; ++i) {
    const bool has = i >= c.vol_window;
    vol.rows.push_back({ds(i), has ? format_double(va[i - c.vol_window]) : "",
                        has ? format_double(vb[i - c.vol_window]) : ""});
  }
  write_atomic(p.volatility(), vol.str());

  const auto ll = analytics::lead_lag_profile(ra, rb, c.max_lag);
  Table lt{{"lag", "correlation"}, {}};
  for (std::size_t i = 0; i < ll.lags.size(); ++i)
    lt.rows.push_back({std::to_string(ll.lags[i]), format_double(ll.correlations[i])});
  write_atomic(p.leadlag(), lt.str());

  const auto rc = analytics::rolling_correlation(a, b, c.corr_window);
  Table rt{{"date", "correlation"}, {}};
  for (std::size_t i = 0; i < n; ++i)
    rt.rows.push_back({ds(i), i + 1 >= c.corr_window ? opt_str(rc.values[i + 1 - c.corr_window]) : ""});
  write_atomic(p.rolling(), rt.str());

  write_json(p.correlation(),
             json{{"series_a", c.index_column},
                  {"series_b", c.second_column},
                  {"pearson_levels", analytics::pearson(a, b)},
                  {"spearman_levels", analytics::spearman(a, b)},
                  {"pearson_returns", analytics::pearson(ra, rb)},
                  {"spearman_returns", analytics::spearman(ra, rb)},
                  {"volatility_correlation", analytics::pearson(va, vb)},
                  {"rolling_window", c.corr_window},
                  {"rolling_mean", rc.mean},
                  {"rolling_std", rc.std},
                  {"rolling_present", rc.present},
                  {"lead_lag_best", ll.best_lag}});
}

inline void run_embed(const PipelineConfig& c) {
  const Paths p{c.out};
  const auto f = detail::load_aligned(c);
  std::vector<std::string> cols;
  const Matrix x = detail::embed_input(c, f, &cols);

  const auto pca = reduce::pca_fit(x, x.cols());
  write_model(p.pca_model(), pca);
  json pj{{"features", cols}, {"explained_variance", pca.explained_variance}, {"explained_ratio", pca.explained_ratio}};
  std::vector<double> cum;
  double run = 0.0;
  for (double r : pca.explained_ratio) cum.push_back(run += r);
  pj["cumulative_ratio"] = cum;
  pj["top2_ratio"] = cum.size() >= 2 ? cum[1] : cum[0];
  write_json(p.pca_json(), pj);

  const Matrix scores = reduce::pca_transform(pca, x);
  Table st{{"index", "date"}, {}};
  for (std::size_t k = 0; k < scores.cols(); ++k) st.header.push_back("pc" + std::to_string(k + 1));
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    std::vector<std::string> row{std::to_string(i), detail::date_str(f.timestamps()[i], c.frequency)};
    for (double v : scores.row(i)) row.push_back(format_double(v));
    st.rows.push_back(std::move(row));
  }
  write_atomic(p.pca_scores(), st.str());

  Matrix coords;
  json ej{{"method", c.embed_method}};
  if (c.embed_method == "umap") {
    const auto e = embed::umap(x, c.umap);
    coords = e.coords;
    ej["n_neighbors"] = c.umap.n_neighbors;
    ej["min_dist"] = c.umap.min_dist;
    ej["epochs"] = c.umap.epochs;
    ej["kernel_a"] = e.kernel.a;
    ej["kernel_b"] = e.kernel.b;
    ej["final_loss"] = e.final_loss;
    ej["epoch_losses"] = e.epoch_losses;
  } else {
    const auto fit = reduce::autoencoder_train(x, 2, c.autoencoder);
    write_model(p.autoencoder(), fit.model);
    coords = reduce::autoencoder_encode(fit.model, x);
    ej["initial_loss"] = fit.initial_loss;
    ej["final_loss"] = fit.final_loss;
    ej["train_curve"] = fit.curve.train;
  }
  write_json(p.embed_json(), ej);

  Table ct{{"index", "x", "y", "cluster"}, {}};
  for (std::size_t i = 0; i < coords.rows(); ++i)
    ct.rows.push_back({std::to_string(i), format_double(coords(i, 0)), format_double(coords(i, 1)), ""});
  write_atomic(p.coords(), ct.str());
}

inline void run_cluster(const PipelineConfig& c) {
  const Paths p{c.out};
  auto ct = read_table(p.coords(), "embed");
  const auto scores = read_table(p.pca_scores(), "embed");
  const auto f = detail::load_aligned(c);
  require(ct.rows.size() == f.size() && scores.rows.size() == f.size(), Errc::ShapeMismatch,
          "embed artifacts do not match aligned.csv; re-run embed");

  Matrix coords(ct.rows.size(), 2);
  for (std::size_t i = 0; i < ct.rows.size(); ++i) {
    coords(i, 0) = cell_double(ct.rows[i][ct.col("x")], p.coords());
    coords(i, 1) = cell_double(ct.rows[i][ct.col("y")], p.coords());
  }
  Matrix pcs(scores.rows.size(), scores.header.size() - 2);
  for (std::size_t i = 0; i < pcs.rows(); ++i)
    for (std::size_t j = 0; j < pcs.cols(); ++j) pcs(i, j) = cell_double(scores.rows[i][j + 2], p.pca_scores());

  const auto res = cluster::hdbscan(coords, c.min_cluster_size, c.min_samples);
  const auto in_embedding = cluster::validate_clusters(res.labels, coords);
  const auto in_pca = cluster::validate_clusters(res.labels, pcs);
  for (std::size_t i = 0; i < ct.rows.size(); ++i) ct.rows[i][ct.col("cluster")] = std::to_string(res.labels[i]);
  write_atomic(p.coords(), ct.str());

  json v{{"cluster_count", res.cluster_count()},
         {"noise_fraction", in_embedding.noise_fraction},
         {"silhouette_embedding", in_embedding.silhouette},
         {"silhouette_pca", in_pca.silhouette},
         {"stabilities", res.stabilities},
         {"min_cluster_size", c.min_cluster_size}};
  write_json(p.cluster_validation(), v);

  // features the regime map imputes noise against: the standardized embed input
  const auto map = cluster::build_regime_map(res, f, c.index_column, detail::embed_input(c, f));
  Table out{{"index", "date", "label", "probability", "regime", "imputed"}, {}};
  for (std::size_t i = 0; i < res.labels.size(); ++i)
    out.rows.push_back({std::to_string(i), detail::date_str(f.timestamps()[i], c.frequency),
                        std::to_string(res.labels[i]), format_double(res.probabilities[i]),
                        std::to_string(map.sample_regime[i]), map.imputed[i] ? "1" : "0"});
  write_atomic(p.clusters(), out.str());
  v["cluster_regime"] = map.cluster_regime;
  v["mean_forward_return"] = map.statistic;
  write_json(p.cluster_validation(), v);
}

inline void run_classify(const PipelineConfig& c) {
  const Paths p{c.out};
  const auto ct = read_table(p.clusters(), "cluster");
  const auto f = detail::load_aligned(c);
  require(ct.rows.size() == f.size(), Errc::ShapeMismatch, "clusters.csv does not match aligned.csv; re-run cluster");
  std::vector<int> labels;
  for (const auto& r : ct.rows) labels.push_back(static_cast<int>(cell_double(r[ct.col("regime")], p.clusters())));
  const Matrix x = detail::feature_matrix(f, detail::feature_columns(c, f));

  const auto res = regime::stack_train(x, labels, c.split, c.classifier);
  write_model(p.classifier(), res.model);

  const std::size_t k = res.validation.k;
  Table conf{{"true"}, {}};
  for (std::size_t j = 1; j <= k; ++j) conf.header.push_back("pred_" + std::to_string(j));
  for (std::size_t i = 1; i <= k; ++i) {
    std::vector<std::string> row{std::to_string(i)};
    for (std::size_t j = 1; j <= k; ++j) row.push_back(std::to_string(res.validation.at(i - 1, j - 1)));
    conf.rows.push_back(std::move(row));
  }
  write_atomic(p.confusion(), conf.str());

  write_json(p.classifier_report(),
             json{{"validation_accuracy", res.validation.accuracy()},
                  {"gbm_validation_accuracy", res.gbm_validation.accuracy()},
                  {"training_accuracy", res.training.accuracy()},
                  {"validation_rows", res.validation.total()},
                  {"gbm_train_loss", res.model.gbm.train_loss},
                  {"head_train_loss", res.curve.train},
                  {"head_val_loss", res.curve.val},
                  {"head_best_epoch", res.curve.best_epoch}});

  const Matrix probs = res.model.predict_proba(x);
  Table rt{{"date", "regime"}, {}};
  for (std::size_t j = 1; j <= k; ++j) rt.header.push_back("p" + std::to_string(j));
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    std::vector<std::string> row{detail::date_str(f.timestamps()[i], c.frequency),
                                 std::to_string(regime::argmax_class(probs.row(i)))};
    for (double v : probs.row(i)) row.push_back(format_double(v));
    rt.rows.push_back(std::move(row));
  }
  write_atomic(p.regimes(), rt.str());
}

inline void run_forecast(const PipelineConfig& c) {
  const Paths p{c.out};
  const auto f = detail::load_aligned(c);
  auto cols = c.forecast_columns;
  if (cols.empty()) {
    cols.push_back(c.index_column);
    for (const auto& n : detail::feature_columns(c, f))
      if (cols.size() < 3) cols.push_back(n);
  }
  for (const auto& n : cols)
    require(f.has_column(n), Errc::ConfigInvalid, "forecast.feature_columns: no column '" + n + "' in aligned.csv");
  const auto w = forecast::make_windows(f, c.index_column, cols, c.lookback, c.split);

  // kinds train concurrently; each draws from its own derived seed
  std::vector<std::future<forecast::ForecastFit>> jobs;
  for (auto k : c.kinds)
    jobs.push_back(std::async(std::launch::async, [&, k] { return forecast::train_forecaster(k, w, c.forecaster); }));
  std::vector<forecast::ForecastFit> fits;
  for (auto& j : jobs) fits.push_back(j.get());

  for (std::size_t m = 0; m < c.kinds.size(); ++m) {
    const auto& fit = fits[m];
    const auto dir = p.forecast_dir(c.kinds[m]);
    const auto preds = forecast::predict_all(fit.model, w.test);
    std::vector<double> yhat;
    Table pt{{"date", "y_true", "y_hat", "p_up"}, {}};
    for (std::size_t i = 0; i < preds.size(); ++i) {
      yhat.push_back(preds[i].value);
      pt.rows.push_back({detail::date_str(w.test.dates[i], c.frequency), format_double(w.test.targets[i]),
                         format_double(preds[i].value), format_double(preds[i].p_up)});
    }
    const auto rep = forecast::evaluate_predictions(w.test, yhat);
    json j = metrics::to_json(rep);
    j["kind"] = forecast::kind_name(c.kinds[m]);
    j["dataset"] = c.dataset;
    j["features"] = cols;
    j["lookback"] = c.lookback;
    j["epochs_run"] = fit.curve.train.size();
    j["best_epoch"] = fit.curve.best_epoch;
    j["train_loss"] = fit.curve.train;
    j["val_loss"] = fit.curve.val;
    write_model(dir / "model.bin", fit.model);
    write_atomic(dir / "predictions.csv", pt.str());
    write_json(dir / "forecast_report.json", j);
  }
}

namespace detail {

inline std::vector<fusion::Dated<double>> prices(const PipelineConfig& c, const TimeSeriesFrame& f) {
  const auto v = f.values(c.index_column);
  std::vector<fusion::Dated<double>> out;
  for (std::size_t i = 0; i < v.size(); ++i) out.push_back({f.timestamps()[i], v[i]});
  return out;
}

inline Timestamp parse_date(const std::string& s, const fs::path& where) {
  const auto t = parse_timestamp(s);
  require(t.has_value(), Errc::Io, where.string() + ": bad date '" + s + "'");
  return *t;
}

inline fusion::SignalSeries read_signals(const fs::path& path, std::string_view from) {
  const auto t = read_table(path, from);
  fusion::SignalSeries out;
  for (const auto& r : t.rows) {
    fusion::SignalDecision d;
    d.date = parse_date(r[t.col("date")], path);
    const auto& s = r[t.col("signal")];
    d.signal = s == "Buy" ? fusion::Signal::Buy : s == "Sell" ? fusion::Signal::Sell : fusion::Signal::Hold;
    d.c_t = static_cast<int>(cell_double(r[t.col("c_t")], path));
    d.p_t = cell_double(r[t.col("p_t")], path);
    d.y_hat = cell_double(r[t.col("y_hat")], path);
    d.y_prev = cell_double(r[t.col("y_prev")], path);
    out.push_back(d);
  }
  return out;
}

inline std::string signals_csv(const fusion::SignalSeries& s, Frequency f) {
  Table t{{"date", "signal", "c_t", "p_t", "y_hat", "y_prev"}, {}};
  for (const auto& d : s)
    t.rows.push_back({date_str(d.date, f), std::string(fusion::signal_name(d.signal)), std::to_string(d.c_t),
                      format_double(d.p_t), format_double(d.y_hat), format_double(d.y_prev)});
  return t.str();
}

}  // namespace detail

inline void run_fuse(const PipelineConfig& c) {
  const Paths p{c.out};
  const auto rt = read_table(p.regimes(), "classify");
  const auto pred_path = p.forecast_dir(c.fusion_kind) / "predictions.csv";
  const auto pt = read_table(pred_path, "forecast");
  const auto f = detail::load_aligned(c);

  std::vector<fusion::Dated<int>> regimes;
  for (const auto& r : rt.rows)
    regimes.push_back({detail::parse_date(r[rt.col("date")], p.regimes()),
                       static_cast<int>(cell_double(r[rt.col("regime")], p.regimes()))});

  // predictions are stamped with the target row; the decision is taken one row earlier
  std::map<std::int64_t, std::size_t> row;
  for (std::size_t i = 0; i < f.size(); ++i) row[f.timestamps()[i].seconds] = i;
  std::vector<fusion::ForecastPoint> fc;
  for (const auto& r : pt.rows) {
    const auto target = detail::parse_date(r[pt.col("date")], pred_path);
    const auto it = row.find(target.seconds);
    if (it == row.end() || it->second == 0) continue;
    fc.push_back({f.timestamps()[it->second - 1], cell_double(r[pt.col("y_hat")], pred_path),
                  cell_double(r[pt.col("p_up")], pred_path)});
  }
  const auto px = detail::prices(c, f);
  const auto fused = fusion::generate_signals(regimes, fc, px, c.thresholds);
  const auto base = fusion::baseline_signals(fc, px, c.thresholds.buy_p, c.thresholds.sell_p);
  write_atomic(p.signals(), detail::signals_csv(fused, c.frequency));
  write_atomic(p.baseline(), detail::signals_csv(base, c.frequency));
}

inline void run_backtest(const PipelineConfig& c) {
  const Paths p{c.out};
  const auto fused = detail::read_signals(p.signals(), "fuse");
  const auto base = detail::read_signals(p.baseline(), "fuse");
  const auto f = detail::load_aligned(c);
  const auto r = fusion::backtest(fused, base, detail::prices(c, f));
  auto j = fusion::to_json(r, [&](Timestamp t) { return detail::date_str(t, c.frequency); });
  j["thresholds"] = {{"buy_c", c.thresholds.buy_c},
                     {"buy_p", c.thresholds.buy_p},
                     {"sell_c", c.thresholds.sell_c},
                     {"sell_p", c.thresholds.sell_p}};
  write_json(p.backtest(), j);
}

inline void run_report(const PipelineConfig& c) {
  const Paths p{c.out};
  struct Row {
    std::string model, dataset;
    metrics::MetricReport m;
  };
  std::vector<Row> rows;
  for (auto k : c.kinds) {
    const auto j = read_json(p.forecast_dir(k) / "forecast_report.json", "forecast");
    rows.push_back({j.at("kind").get<std::string>(), j.at("dataset").get<std::string>(),
                    metrics::metric_report_from_json(j)});
  }
  // best R^2 first; NaN sorts last
  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    const bool an = std::isnan(a.m.r2), bn = std::isnan(b.m.r2);
    if (an != bn) return bn;
    return !an && a.m.r2 > b.m.r2;
  });
  Table t{{"model", "dataset", "mae", "rmse", "r2", "mape_pct", "smape_pct", "directional_accuracy", "n"}, {}};
  json models = json::array();
  for (const auto& r : rows) {
    auto num = [](double v) { return std::isfinite(v) ? format_double(v) : std::string(); };
    t.rows.push_back({r.model, r.dataset, num(r.m.mae), num(r.m.rmse), num(r.m.r2), num(r.m.mape_pct),
                      num(r.m.smape_pct), num(r.m.directional_accuracy), std::to_string(r.m.n)});
    auto j = metrics::to_json(r.m);
    j["model"] = r.model;
    j["dataset"] = r.dataset;
    models.push_back(j);
  }
  write_atomic(p.report_csv(), t.str());

  json out{{"forecasters", models}};
  auto attach = [&](const char* key, const fs::path& path) {
    if (fs::exists(path)) out[key] = read_json(path, "");
  };
  attach("correlation", p.correlation());
  if (fs::exists(p.pca_json())) {
    const auto pj = read_json(p.pca_json(), "embed");
    out["pca"] = {{"explained_ratio", pj.at("explained_ratio")}, {"top2_ratio", pj.at("top2_ratio")}};
  }
  attach("clusters", p.cluster_validation());
  if (fs::exists(p.classifier_report())) {
    const auto cj = read_json(p.classifier_report(), "classify");
    out["classifier"] = {{"validation_accuracy", cj.at("validation_accuracy")},
                         {"gbm_validation_accuracy", cj.at("gbm_validation_accuracy")},
                         {"training_accuracy", cj.at("training_accuracy")}};
  }
  if (fs::exists(p.backtest())) {
    auto bj = read_json(p.backtest(), "backtest");
    bj.erase("fused_outcomes");
    bj.erase("baseline_outcomes");
    out["backtest"] = bj;
  }
  write_json(p.report_json(), out);
}

inline void run_stage(std::string_view stage, const PipelineConfig& c) {
  if (stage == "synth") return run_synth(c);
  if (stage == "ingest") return run_ingest(c);
  if (stage == "analytics") return run_analytics(c);
  if (stage == "embed") return run_embed(c);
  if (stage == "cluster") return run_cluster(c);
  if (stage == "classify") return run_classify(c);
  if (stage == "forecast") return run_forecast(c);
  if (stage == "fuse") return run_fuse(c);
  if (stage == "backtest") return run_backtest(c);
  if (stage == "report") return run_report(c);
  fail(Errc::InvalidArgument, "unknown stage '" + std::string(stage) + "'");
}

/// 0 ok, 1 computation error, 2 usage or dependency error.
inline int exit_code(Errc e) noexcept {
  switch (e) {
    case Errc::MissingUpstream:
    case Errc::ConfigInvalid: return 2;
    default: return 1;
  }
}

}  // namespace regimesig::pipeline
