#include <algorithm>
#include <cmath>
#include <numeric>

#include "regimesig/cluster.hpp"
#include "test_support.hpp"

using namespace regimesig;
using namespace regimesig::cluster;
using testing_support::adjusted_rand_index;
using testing_support::random_matrix;
using testing_support::blobs;
using testing_support::kruskal_weights;

namespace {

double silhouette_of_two_blobs(double gap) {
  Rng rng(31);
  std::vector<int> truth;
  const auto x = blobs({{0.0, 0.0}, {gap, 0.0}}, 40, 1.0, rng, truth);
  return validate_clusters(truth, x).silhouette;
}

}  // namespace

TEST(MutualReachability, IdenticalPointsAreAllZero) {
  const Matrix x(5, 3, 1.25);
  const auto d = mutual_reachability(x, 3);
  for (double v : d.data()) EXPECT_EQ(v, 0.0);
}

TEST(MutualReachability, TwoDistantPoints) {
  const Matrix x{{0.0, 0.0}, {30.0, 40.0}};
  const auto d = mutual_reachability(x, 1);
  EXPECT_EQ(d(0, 1), 50.0);
  EXPECT_EQ(d(1, 0), 50.0);
  EXPECT_ERRC(mutual_reachability(x, 2), Errc::MinSamplesTooLarge);
}

TEST(MutualReachability, MatchesTripleMaxOracle) {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto x = random_matrix(6, 3, rng);
    for (std::size_t ms = 1; ms < 6; ++ms) {
      const auto d = mutual_reachability(x, ms);
      std::vector<double> core(6);
      for (std::size_t i = 0; i < 6; ++i) {
        std::vector<double> di;
        for (std::size_t j = 0; j < 6; ++j) di.push_back(std::sqrt(squared_distance(x.row(i), x.row(j))));
        std::sort(di.begin(), di.end());
        core[i] = di[ms - 1];
      }
      for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 6; ++j) {
          const double expected =
              i == j ? 0.0 : std::max({core[i], core[j], std::sqrt(squared_distance(x.row(i), x.row(j)))});
          EXPECT_EQ(d(i, j), expected);
          EXPECT_EQ(d(i, j), d(j, i));
        }
    }
  }
}

TEST(Mst, PrimMatchesKruskalExactly) {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng.below(11);
    const auto x = random_matrix(n, 2, rng);
    const auto d = mutual_reachability(x, 1 + rng.below(n - 1));
    auto prim = prim_mst(d);
    ASSERT_EQ(prim.size(), n - 1);
    std::vector<double> w;
    for (const auto& e : prim) w.push_back(e.w);
    std::sort(w.begin(), w.end());
    const auto oracle = kruskal_weights(d);
    EXPECT_EQ(w, oracle);
    EXPECT_EQ(std::accumulate(w.begin(), w.end(), 0.0), std::accumulate(oracle.begin(), oracle.end(), 0.0));
  }
}

TEST(Hdbscan, TooFewPointsAreNoise) {
  Rng rng(3);
  const auto r = hdbscan(random_matrix(3, 2, rng), 5);
  EXPECT_EQ(r.labels, (std::vector<int>{-1, -1, -1}));
  EXPECT_EQ(r.cluster_count(), 0u);
  EXPECT_ERRC(hdbscan(Matrix(0, 2), 5), Errc::TooFewPoints);
}

// Cutting the single-linkage tree of the mutual-reachability graph at its
// largest MST edge is the oracle partition for two far-apart blobs.
TEST(Hdbscan, TwoSeparatedBlobs) {
  Rng rng(4);
  std::vector<int> truth;
  const auto x = blobs({{0.0, 0.0, 0.0}, {20.0, 0.0, 0.0}}, 30, 1.0, rng, truth);
  const auto r = hdbscan(x, 5);
  EXPECT_EQ(r.cluster_count(), 2u);
  EXPECT_EQ(std::count(r.labels.begin(), r.labels.end(), -1), 0);

  const auto d = mutual_reachability(x, 5);
  auto mst = prim_mst(d);
  const auto cut = std::max_element(mst.begin(), mst.end(), [](auto& p, auto& q) { return p.w < q.w; });
  mst.erase(cut);
  std::vector<int> comp(60);
  std::iota(comp.begin(), comp.end(), 0);
  for (bool changed = true; changed;) {
    changed = false;
    for (const auto& e : mst) {
      const int m = std::min(comp[e.a], comp[e.b]);
      if (comp[e.a] != m || comp[e.b] != m) comp[e.a] = comp[e.b] = m, changed = true;
    }
  }
  EXPECT_DOUBLE_EQ(adjusted_rand_index(r.labels, comp), 1.0);
  EXPECT_DOUBLE_EQ(adjusted_rand_index(r.labels, truth), 1.0);
}

TEST(Hdbscan, ThreeBlobsRecoverGroundTruth) {
  Rng rng(5);
  std::vector<int> truth;
  const auto x = blobs({{0.0, 0.0}, {9.0, 0.0}, {4.5, 8.0}}, 167, 1.0, rng, truth);
  const auto r = hdbscan(x, 15);
  EXPECT_GE(adjusted_rand_index(r.labels, truth), 0.9);
  EXPECT_EQ(r.cluster_count(), 3u);
}

TEST(Hdbscan, PropertyPermutationEquivariant) {
  Rng rng(6);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<int> truth;
    const auto x = blobs({{0.0, 0.0}, {6.0, 1.0}, {2.0, 7.0}}, 25, 1.0, rng, truth);
    std::vector<std::size_t> perm(x.rows());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(perm));
    const auto base = hdbscan(x, 6);
    const auto shuffled = hdbscan(x.select_rows(perm), 6);
    // Renumbering differs only through the lowest-member-index tie rule,
    // so compare partitions and sizes.
    std::vector<int> mapped(perm.size());
    for (std::size_t r = 0; r < perm.size(); ++r) mapped[r] = base.labels[perm[r]];
    EXPECT_DOUBLE_EQ(adjusted_rand_index(shuffled.labels, mapped), 1.0);
    for (std::size_t r = 0; r < perm.size(); ++r) {
      EXPECT_EQ(shuffled.labels[r] < 0, mapped[r] < 0);
      EXPECT_DOUBLE_EQ(shuffled.probabilities[r], base.probabilities[perm[r]]);
    }
  }
}

TEST(Hdbscan, PropertyLabelsProbabilitiesAndStabilities) {
  Rng rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<int> truth;
    const auto x = blobs({{0.0, 0.0}, {5.0, 5.0}, {10.0, 0.0}}, 20 + rng.below(20), 1.0 + rng.uniform(), rng, truth);
    const std::size_t n = x.rows();
    const auto r = hdbscan(x, 5 + rng.below(5));
    const int m = static_cast<int>(r.cluster_count());
    std::vector<std::size_t> sizes(static_cast<std::size_t>(m), 0);
    for (std::size_t i = 0; i < n; ++i) {
      EXPECT_LT(r.labels[i], m);
      EXPECT_GE(r.probabilities[i], 0.0);
      EXPECT_LE(r.probabilities[i], 1.0);
      if (r.labels[i] < 0) {
        EXPECT_EQ(r.probabilities[i], 0.0);
      } else {
        ++sizes[static_cast<std::size_t>(r.labels[i])];
      }
    }
    for (std::size_t c = 1; c < sizes.size(); ++c) EXPECT_GE(sizes[c - 1], sizes[c]);
    for (double s : r.stabilities) EXPECT_GE(s, 0.0);

    // within a cluster, probability is monotone in the point's exit lambda
    std::vector<double> lambda(n, 0.0);
    for (const auto& row : r.condensed_tree)
      if (row.child < n) lambda[row.child] = row.lambda;
    bool saw_one = false;
    for (std::size_t i = 0; i < n; ++i) {
      if (r.labels[i] < 0) continue;
      saw_one |= r.probabilities[i] == 1.0;
      for (std::size_t j = 0; j < n; ++j)
        if (r.labels[j] == r.labels[i] && lambda[j] <= lambda[i]) {
          EXPECT_LE(r.probabilities[j], r.probabilities[i] + 1e-15);
        }
    }
    if (m > 0) {
      EXPECT_TRUE(saw_one);
    }
  }
}

TEST(Hdbscan, NoiseFractionOneWhenClusterSizeExceedsN) {
  Rng rng(8);
  const auto x = random_matrix(12, 2, rng);
  const auto r = hdbscan(x, 13);
  EXPECT_TRUE(std::all_of(r.labels.begin(), r.labels.end(), [](int l) { return l == -1; }));
}

TEST(Hdbscan, Deterministic) {
  Rng rng(9);
  std::vector<int> truth;
  const auto x = blobs({{0.0, 0.0}, {7.0, 0.0}}, 50, 1.0, rng, truth);
  const auto a = hdbscan(x, 8), b = hdbscan(x, 8);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.probabilities, b.probabilities);
}

TEST(Validate, SilhouetteExamples) {
  EXPECT_GT(silhouette_of_two_blobs(20.0), 0.7);
  EXPECT_ERRC(validate_clusters(std::vector<int>(5, 0), Matrix(5, 2)), Errc::TooFewClusters);
  std::vector<int> labels{0, 0, 1, 1, -1};
  const Matrix x{{0, 0}, {0, 1}, {10, 0}, {10, 1}, {5, 5}};
  const auto rep = validate_clusters(labels, x);
  EXPECT_EQ(rep.cluster_count, 2u);
  EXPECT_DOUBLE_EQ(rep.noise_fraction, 0.2);
  // a = 1, b = mean(10, sqrt(101)) for every scored point
  const double b = 0.5 * (10.0 + std::sqrt(101.0));
  EXPECT_NEAR(rep.silhouette, (b - 1.0) / b, 1e-12);
}

TEST(Validate, PropertySilhouetteBounded) {
  Rng rng(10);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 10 + rng.below(30);
    const auto x = random_matrix(n, 2, rng);
    std::vector<int> labels(n);
    for (auto& l : labels) l = static_cast<int>(rng.below(4)) - 1;
    labels[0] = 0;
    labels[1] = 1;
    const auto rep = validate_clusters(labels, x);
    EXPECT_GE(rep.silhouette, -1.0);
    EXPECT_LE(rep.silhouette, 1.0);
  }
}

namespace {

ClusterResult five_cluster_result(std::size_t per, std::vector<int> extra = {}) {
  ClusterResult r;
  for (int c = 0; c < 5; ++c)
    for (std::size_t i = 0; i < per; ++i) r.labels.push_back(c);
  for (int l : extra) r.labels.push_back(l);
  r.probabilities.assign(r.labels.size(), 1.0);
  r.stabilities.assign(5, 1.0);
  return r;
}

}  // namespace

TEST(RegimeMap, OrdersByForwardReturn) {
  // clusters 0..4 carry forward returns +2%, -1%, 0%, -2%, +1%
  const double ret[5] = {0.02, -0.01, 0.0, -0.02, 0.01};
  auto r = five_cluster_result(3);
  std::vector<std::optional<double>> fr;
  for (int l : r.labels) fr.push_back(ret[l]);
  Matrix feats(r.labels.size(), 1);
  for (std::size_t i = 0; i < r.labels.size(); ++i) feats(i, 0) = r.labels[i];
  const auto map = build_regime_map(r, fr, feats);
  EXPECT_EQ(map.cluster_regime, (std::vector<int>{5, 2, 3, 1, 4}));
  for (std::size_t i = 0; i < r.labels.size(); ++i) EXPECT_FALSE(map.imputed[i]);
}

TEST(RegimeMap, TiesGoToLowerClusterId) {
  auto r = five_cluster_result(2);
  std::vector<std::optional<double>> fr(r.labels.size(), 0.01);
  const auto map = build_regime_map(r, fr, Matrix(r.labels.size(), 1));
  EXPECT_EQ(map.cluster_regime, (std::vector<int>{1, 2, 3, 4, 5}));
}

TEST(RegimeMap, NoiseImputedFromNearestCentroid) {
  auto r = five_cluster_result(2, {-1, -1});
  std::vector<std::optional<double>> fr;
  for (int l : r.labels) fr.push_back(l < 0 ? 0.5 : -0.01 * l);  // noise returns never used
  fr.back() = std::nullopt;
  Matrix feats(r.labels.size(), 2);
  for (std::size_t i = 0; i < 10; ++i) feats(i, 0) = 10.0 * r.labels[i];
  feats(10, 0) = 38.0;  // nearest to cluster 4
  feats(11, 0) = 1.0;   // nearest to cluster 0
  const auto map = build_regime_map(r, fr, feats);
  EXPECT_EQ(map.cluster_regime, (std::vector<int>{5, 4, 3, 2, 1}));
  EXPECT_TRUE(map.imputed[10]);
  EXPECT_EQ(map.sample_regime[10], 1);
  EXPECT_EQ(map.sample_regime[11], 5);
}

TEST(RegimeMap, WrongClusterCount) {
  ClusterResult r;
  r.labels = {0, 1, 2, 3};
  r.probabilities.assign(4, 1.0);
  r.stabilities.assign(4, 1.0);
  std::vector<std::optional<double>> fr(4, 0.0);
  EXPECT_ERRC(build_regime_map(r, fr, Matrix(4, 1)), Errc::WrongClusterCount);
}

TEST(RegimeMap, FromFrameIndexColumn) {
  std::vector<Timestamp> ts;
  Column px;
  for (int i = 0; i < 11; ++i) {
    ts.push_back(make_timestamp(2024, 1, 1));
    ts.back().seconds += i * 86400;
  }
  // cluster c at rows 2c, 2c+1; row 10 is the last date (no forward return)
  const double growth[5] = {-0.02, 0.01, 0.0, 0.02, -0.01};
  double p = 100.0;
  ClusterResult r;
  for (int i = 0; i < 11; ++i) {
    px.push_back(p);
    const int c = std::min(i / 2, 4);
    r.labels.push_back(c);
    p *= 1.0 + growth[c];
  }
  r.probabilities.assign(11, 1.0);
  r.stabilities.assign(5, 1.0);
  const TimeSeriesFrame f(Frequency::Daily, ts, {{"index", px}});
  const auto map = build_regime_map(r, f, "index", Matrix(11, 1));
  EXPECT_EQ(map.cluster_regime, (std::vector<int>{1, 4, 3, 5, 2}));
  EXPECT_NEAR(map.statistic[3], 0.02, 1e-12);
}
