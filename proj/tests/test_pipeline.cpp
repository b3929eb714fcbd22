#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "regimesig/pipeline.hpp"
#include "test_support.hpp"

using namespace regimesig;
namespace fs = std::filesystem;
namespace pl = regimesig::pipeline;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("regimesig_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void put(const fs::path& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; }

// small but complete run: 600 days, short training
const char* kSmallConfig = R"(seed = 11
out = out
data.market = data/market.csv
data.features = data/features.csv
data.macro = data/macro.csv
data.truth = data/truth.csv
embed.feature_columns = f1, f2, f3, f4, f5, f6, f7, f8, f9
embed.epochs = 100
cluster.min_cluster_size = 30
classify.gbm.rounds = 20
classify.head.epochs = 30
classify.head.hidden = 16
forecast.lookback = 10
forecast.hidden = 8
forecast.epochs = 4
synth.n = 600
)";

int cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string("\"") + REGIMESIG_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = slurp(e.path());
  return files;
}

const std::vector<std::string> kOrder{"synth", "ingest",   "analytics", "embed",    "cluster",
                                      "classify", "forecast", "fuse",      "backtest", "report"};

}  // namespace

// ---------------------------------------------------------------------------
// config
// ---------------------------------------------------------------------------

TEST(Config, ParsesCommentsAndRejectsDuplicates) {
  std::istringstream ok("# header\n a = 1 # trailing\n\nb=x, y ,z\n");
  const auto kv = config::KeyValues::parse(ok);
  EXPECT_EQ(kv.u64("a", 0), 1u);
  EXPECT_EQ(kv.list("b", {}), (std::vector<std::string>{"x", "y", "z"}));
  EXPECT_TRUE(kv.unused().empty());

  std::istringstream dup("a = 1\na = 2\n");
  EXPECT_ERRC(config::KeyValues::parse(dup), Errc::ConfigInvalid);
  std::istringstream bare("just words\n");
  EXPECT_ERRC(config::KeyValues::parse(bare), Errc::ConfigInvalid);
  std::istringstream bad("n = 1.5\n");
  EXPECT_ERRC(config::KeyValues::parse(bad).u64("n", 0), Errc::ConfigInvalid);
}

TEST(Config, SeedIsMandatoryAndUnknownKeysAreNamed) {
  const auto dir = fresh_dir("cfg_seed");
  put(dir / "a.cfg", "out = o\n");
  EXPECT_ERRC(pl::load_config(dir / "a.cfg"), Errc::ConfigInvalid);
  EXPECT_EQ(pl::load_config(dir / "a.cfg", std::nullopt, 7u).seed, 7u);

  put(dir / "b.cfg", "seed = 1\nembed.n_neigbors = 10\n");
  try {
    pl::load_config(dir / "b.cfg");
    FAIL() << "typo accepted";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::ConfigInvalid);
    EXPECT_NE(std::string(e.what()).find("embed.n_neigbors"), std::string::npos);
  }
  put(dir / "c.cfg", "seed = 1\nsplit.train = 0.9\n");
  EXPECT_ERRC(pl::load_config(dir / "c.cfg"), Errc::ConfigInvalid);
  put(dir / "d.cfg", "seed = 1\nforecast.kinds = gru, transformer\n");
  EXPECT_ERRC(pl::load_config(dir / "d.cfg"), Errc::ConfigInvalid);
  put(dir / "e.cfg", "seed = 1\nfusion.buy_p = 1.2\n");
  EXPECT_ERRC(pl::load_config(dir / "e.cfg"), Errc::ConfigInvalid);
}

TEST(Config, PathsResolveAgainstTheConfigDirectory) {
  const auto dir = fresh_dir("cfg_paths");
  put(dir / "a.cfg", "seed = 3\ndata.market = in/m.csv\nout = results\n");
  const auto c = pl::load_config(dir / "a.cfg");
  EXPECT_EQ(c.market, dir / "in/m.csv");
  EXPECT_EQ(c.out, dir / "results");
  EXPECT_EQ(pl::load_config(dir / "a.cfg", fs::path("/tmp/x")).out, fs::path("/tmp/x"));
}

TEST(Config, ThresholdsRoundTripExactly) {
  const auto dir = fresh_dir("cfg_thresholds");
  Rng rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    fusion::Thresholds th{1 + static_cast<int>(rng.below(5)), rng.uniform(), 1 + static_cast<int>(rng.below(5)),
                          rng.uniform()};
    put(dir / "t.cfg", "seed = 1\nfusion.buy_c = " + std::to_string(th.buy_c) + "\nfusion.buy_p = " +
                           format_double(th.buy_p) + "\nfusion.sell_c = " + std::to_string(th.sell_c) +
                           "\nfusion.sell_p = " + format_double(th.sell_p) + "\n");
    EXPECT_EQ(pl::load_config(dir / "t.cfg").thresholds, th);
  }
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

TEST(Synth, Blobs5WritesFiveHundredLabelledRows) {
  const auto dir = fresh_dir("synth_blobs");
  put(dir / "a.cfg", "seed = 5\nsynth.kind = blobs5\nsynth.n = 500\n");
  const auto c = pl::load_config(dir / "a.cfg");
  pl::run_stage("synth", c);
  const auto f = load_csv(c.features.string(), {});
  EXPECT_EQ(f.size(), 500u);
  EXPECT_EQ(f.column_names().size(), 9u);
  const auto labels = load_csv(c.truth.string(), {}).values("label");
  EXPECT_EQ(std::set<double>(labels.begin(), labels.end()), (std::set<double>{1, 2, 3, 4, 5}));
  const auto first = slurp(c.features);
  pl::run_stage("synth", c);
  EXPECT_EQ(slurp(c.features), first);
}

TEST(Synth, RegimeCoupledSidecarDriftFollowsRegimes) {
  const auto dir = fresh_dir("synth_coupled");
  put(dir / "a.cfg", "seed = 2\nsynth.n = 400\ndata.macro = data/macro.csv\n");
  const auto c = pl::load_config(dir / "a.cfg");
  pl::run_stage("synth", c);
  const auto t = load_csv(c.truth.string(), {});
  const auto r = t.values("regime"), d = t.values("drift");
  for (std::size_t i = 0; i < r.size(); ++i) EXPECT_EQ((d[i] > 0) - (d[i] < 0), (r[i] > 3) - (r[i] < 3));
  EXPECT_EQ(load_csv(c.market.string(), {Frequency::Daily, {"index", "second"}}).size(), 400u);
  EXPECT_EQ(load_csv(c.macro.string(), {Frequency::Monthly, {"macro"}}).frequency(), Frequency::Monthly);
}

TEST(Synth, SeriesKindsAndUnknownKind) {
  const auto dir = fresh_dir("synth_series");
  for (const char* kind : {"ar_sine", "random_walk"}) {
    put(dir / "a.cfg", std::string("seed = 2\nsynth.n = 300\nsynth.kind = ") + kind + "\n");
    const auto c = pl::load_config(dir / "a.cfg");
    pl::run_stage("synth", c);
    EXPECT_EQ(load_csv(c.market.string(), {Frequency::Daily, {"index"}}).size(), 300u) << kind;
  }
  put(dir / "b.cfg", "seed = 2\nsynth.kind = blobs7\n");
  EXPECT_ERRC(pl::run_stage("synth", pl::load_config(dir / "b.cfg")), Errc::ConfigInvalid);
}

// ---------------------------------------------------------------------------
// stages
// ---------------------------------------------------------------------------

TEST(Stages, MissingUpstreamNamesTheArtifact) {
  const auto dir = fresh_dir("stages_missing");
  put(dir / "a.cfg", kSmallConfig);
  const auto c = pl::load_config(dir / "a.cfg");
  try {
    pl::run_stage("cluster", c);
    FAIL() << "cluster ran without embed outputs";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::MissingUpstream);
    EXPECT_NE(std::string(e.what()).find("umap_coords.csv"), std::string::npos);
  }
  EXPECT_ERRC(pl::run_stage("ingest", c), Errc::MissingUpstream);
  EXPECT_ERRC(pl::run_stage("report", c), Errc::MissingUpstream);
  EXPECT_EQ(pl::exit_code(Errc::MissingUpstream), 2);
  EXPECT_EQ(pl::exit_code(Errc::ConfigInvalid), 2);
  EXPECT_EQ(pl::exit_code(Errc::WrongClusterCount), 1);
}

TEST(Stages, AtomicWriteLeavesNoTempFile) {
  const auto dir = fresh_dir("stages_atomic");
  pl::write_atomic(dir / "sub" / "x.txt", "one");
  pl::write_atomic(dir / "sub" / "x.txt", "two");
  EXPECT_EQ(slurp(dir / "sub" / "x.txt"), "two");
  EXPECT_FALSE(fs::exists(dir / "sub" / "x.txt.tmp"));
}

TEST(Stages, IngestAlignsMonthlyMacroWithoutLookahead) {
  const auto dir = fresh_dir("stages_ingest");
  put(dir / "a.cfg", std::string(kSmallConfig) + "align.lags = f1:2\n");
  const auto c = pl::load_config(dir / "a.cfg");
  pl::run_stage("synth", c);
  pl::run_stage("ingest", c);
  const auto a = load_csv((c.out / "aligned.csv").string(), {});
  const auto macro = load_csv(c.macro.string(), {Frequency::Monthly, {}});
  ASSERT_TRUE(a.has_column("macro") && a.has_column("f1_lag2"));
  EXPECT_EQ(a.size(), 598u);  // two rows lost to the lag
  const auto m = a.values("macro");
  for (std::size_t i = 0; i < a.size(); ++i) {
    // the value in force is the latest release at or before the row's date
    double want = 0.0;
    for (std::size_t k = 0; k < macro.size() && macro.timestamps()[k] <= a.timestamps()[i]; ++k)
      want = *macro.column("macro")[k];
    EXPECT_EQ(m[i], want);
  }
}

// ---------------------------------------------------------------------------
// CLI end to end
// ---------------------------------------------------------------------------

TEST(Cli, UsageAndDependencyErrorsExitTwo) {
  const auto dir = fresh_dir("cli_usage");
  put(dir / "a.cfg", kSmallConfig);
  const auto log = dir / "log.txt";
  EXPECT_EQ(cli("cluster --config " + (dir / "a.cfg").string(), log), 2);
  EXPECT_NE(slurp(log).find("umap_coords.csv"), std::string::npos);
  EXPECT_EQ(cli("dance --config " + (dir / "a.cfg").string(), log), 2);
  EXPECT_EQ(cli("ingest", log), 2);
  EXPECT_EQ(cli("ingest --config " + (dir / "missing.cfg").string(), log), 2);
  EXPECT_EQ(cli("synth --config " + (dir / "a.cfg").string() + " --seed notanumber", log), 2);
}

TEST(Cli, FullPipelineIsByteDeterministic) {
  const auto dir = fresh_dir("cli_e2e");
  put(dir / "a.cfg", kSmallConfig);
  const auto log = dir / "log.txt";
  for (const char* run : {"r1", "r2"})
    for (const auto& stage : kOrder) {
      const int rc = cli(stage + " --config " + (dir / "a.cfg").string() + " --out " + (dir / run).string(), log);
      ASSERT_EQ(rc, 0) << stage << ": " << slurp(log);
    }
  const auto a = snapshot(dir / "r1"), b = snapshot(dir / "r2");
  for (const char* must : {"aligned.csv", "moving_averages.csv", "volatility.csv", "leadlag.csv", "correlation.json",
                           "pca.json", "umap_coords.csv", "clusters.csv", "cluster_validation.json", "classifier.bin",
                           "confusion.csv", "regimes.csv", "forecast/gru/predictions.csv",
                           "forecast/lstm/forecast_report.json", "signals.csv", "baseline_signals.csv",
                           "backtest.json", "report.csv", "report.json"})
    EXPECT_TRUE(a.contains(must)) << must;
  ASSERT_EQ(a.size(), b.size());
  for (const auto& [name, bytes] : a) EXPECT_TRUE(b.at(name) == bytes) << name << " differs between runs";
  for (const auto& [name, _] : a) EXPECT_NE(fs::path(name).extension(), ".tmp") << name;

  // the cluster column is filled once clustering has run
  const auto coords = pl::read_table(dir / "r1" / "umap_coords.csv", "embed");
  for (const auto& r : coords.rows) EXPECT_FALSE(r[coords.col("cluster")].empty());

  // a stage re-run on unchanged inputs reproduces its outputs
  ASSERT_EQ(cli("backtest --config " + (dir / "a.cfg").string() + " --out " + (dir / "r1").string(), log), 0);
  EXPECT_EQ(slurp(dir / "r1" / "backtest.json"), a.at("backtest.json"));

  // a different seed changes the synthetic data
  const auto market = slurp(dir / "data" / "market.csv");
  ASSERT_EQ(cli("synth --config " + (dir / "a.cfg").string() + " --seed 12", log), 0);
  EXPECT_NE(slurp(dir / "data" / "market.csv"), market);
}

TEST(Cli, SignalsFollowTheRuleAndStayInsideBaseline) {
  const auto dir = fresh_dir("cli_signals");
  put(dir / "a.cfg", kSmallConfig);
  const auto c = pl::load_config(dir / "a.cfg");
  for (const auto& s : kOrder) pl::run_stage(s, c);
  const auto fused = pl::read_table(c.out / "signals.csv", "fuse");
  const auto base = pl::read_table(c.out / "baseline_signals.csv", "fuse");
  ASSERT_EQ(fused.rows.size(), base.rows.size());
  for (std::size_t i = 0; i < fused.rows.size(); ++i) {
    const int ct = std::stoi(fused.rows[i][2]);
    const double pt = *parse_double(fused.rows[i][3]);
    EXPECT_EQ(fused.rows[i][1], fusion::signal_name(fusion::fuse(ct, pt)));
    if (fused.rows[i][1] != "Hold") {
      EXPECT_EQ(base.rows[i][1], fused.rows[i][1]);
    }
  }
  const auto report = pl::read_json(c.out / "report.json", "report");
  EXPECT_EQ(report.at("forecasters").size(), 4u);
  EXPECT_EQ(report.at("clusters").at("cluster_count"), 5);
}
