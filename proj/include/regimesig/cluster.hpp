#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "regimesig/error.hpp"
#include "regimesig/frame.hpp"
#include "regimesig/matrix.hpp"

namespace regimesig::cluster {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Dense pairwise Euclidean distances.
inline Matrix pairwise_distances(const Matrix& x) {
  const std::size_t n = x.rows();
  Matrix d(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) d(i, j) = d(j, i) = std::sqrt(squared_distance(x.row(i), x.row(j)));
  return d;
}

/// Distance to the min_samples-th nearest point, counting the point itself
/// (so min_samples = 1 gives 0).
inline std::vector<double> core_distances(const Matrix& dist, std::size_t min_samples) {
  const std::size_t n = dist.rows();
  std::vector<double> core(n), row(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy(dist.row(i).begin(), dist.row(i).end(), row.begin());
    std::nth_element(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(min_samples - 1), row.end());
    core[i] = row[min_samples - 1];
  }
  return core;
}

inline Matrix mutual_reachability(const Matrix& x, std::size_t min_samples) {
  require(min_samples >= 1, Errc::InvalidArgument, "min_samples must be >= 1");
  require(min_samples < x.rows(), Errc::MinSamplesTooLarge, "min_samples must be < sample count");
  Matrix d = pairwise_distances(x);
  const auto core = core_distances(d, min_samples);
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.rows(); ++j)
      if (i != j) d(i, j) = std::max({core[i], core[j], d(i, j)});
  return d;
}

struct MstEdge {
  std::size_t a = 0, b = 0;
  double w = 0.0;
};

/// Prim's algorithm on a dense symmetric matrix. Ties pick the lowest index.
inline std::vector<MstEdge> prim_mst(const Matrix& d) {
  const std::size_t n = d.rows();
  std::vector<MstEdge> edges;
  if (n < 2) return edges;
  std::vector<bool> in_tree(n, false);
  std::vector<double> best(n, kInf);
  std::vector<std::size_t> from(n, 0);
  std::size_t current = 0;
  in_tree[0] = true;
  for (std::size_t step = 1; step < n; ++step) {
    std::size_t next = n;
    for (std::size_t j = 0; j < n; ++j) {
      if (in_tree[j]) continue;
      if (d(current, j) < best[j]) best[j] = d(current, j), from[j] = current;
      if (next == n || best[j] < best[next]) next = j;
    }
    edges.push_back({std::min(from[next], next), std::max(from[next], next), best[next]});
    in_tree[next] = true;
    current = next;
  }
  return edges;
}

struct CondensedRow {
  std::size_t parent = 0, child = 0;  // ids >= n are clusters, < n are points
  double lambda = 0.0;
  std::size_t size = 0;
};

struct ClusterResult {
  std::vector<int> labels;  // -1 noise, else 0..m-1 by decreasing size
  std::vector<double> probabilities;
  std::vector<CondensedRow> condensed_tree;
  std::vector<double> stabilities;  // per final label
  std::size_t cluster_count() const { return stabilities.size(); }
};

namespace detail {

struct Linkage {
  std::size_t left, right;
  double dist;
  std::size_t size;
};

/// Single-linkage merges from the MST, smallest weight first. Ties are
/// ordered by (lower endpoint, higher endpoint).
inline std::vector<Linkage> single_linkage(std::size_t n, std::vector<MstEdge> mst) {
  std::stable_sort(mst.begin(), mst.end(), [](const MstEdge& p, const MstEdge& q) {
    if (p.w != q.w) return p.w < q.w;
    if (p.a != q.a) return p.a < q.a;
    return p.b < q.b;
  });
  std::vector<std::size_t> parent(2 * n - 1), size(2 * n - 1, 1);
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  auto find = [&](std::size_t x) {
    std::size_t r = x;
    while (parent[r] != r) r = parent[r];
    while (parent[x] != r) {
      const std::size_t nx = parent[x];
      parent[x] = r;
      x = nx;
    }
    return r;
  };
  std::vector<Linkage> out;
  std::size_t next = n;
  for (const auto& e : mst) {
    const std::size_t ra = find(e.a), rb = find(e.b);
    out.push_back({ra, rb, e.w, size[ra] + size[rb]});
    parent[ra] = parent[rb] = next;
    size[next] = size[ra] + size[rb];
    ++next;
  }
  return out;
}

inline std::vector<CondensedRow> condense(std::size_t n, const std::vector<Linkage>& link,
                                          std::size_t min_cluster_size) {
  const std::size_t root = 2 * n - 2;
  auto node_size = [&](std::size_t node) { return node < n ? std::size_t{1} : link[node - n].size; };
  auto leaves = [&](std::size_t node) {
    std::vector<std::size_t> out, stack{node};
    while (!stack.empty()) {
      const std::size_t v = stack.back();
      stack.pop_back();
      if (v < n) {
        out.push_back(v);
      } else {
        stack.push_back(link[v - n].right);
        stack.push_back(link[v - n].left);
      }
    }
    return out;
  };

  std::vector<std::size_t> relabel(2 * n - 1, 0);
  relabel[root] = n;
  std::size_t next_label = n + 1;
  std::vector<CondensedRow> rows;
  std::vector<bool> ignore(2 * n - 1, false);

  std::vector<std::size_t> level{root};
  while (!level.empty()) {
    std::vector<std::size_t> next_level;
    for (const std::size_t node : level) {
      if (node < n || ignore[node]) continue;
      const auto& l = link[node - n];
      next_level.push_back(l.left);
      next_level.push_back(l.right);
      const double lambda = l.dist > 0.0 ? 1.0 / l.dist : kInf;
      const std::size_t ls = node_size(l.left), rs = node_size(l.right);
      const bool lbig = ls >= min_cluster_size, rbig = rs >= min_cluster_size;
      auto spill = [&](std::size_t child) {
        for (const std::size_t p : leaves(child)) rows.push_back({relabel[node], p, lambda, 1});
        std::vector<std::size_t> stack{child};
        while (!stack.empty()) {
          const std::size_t v = stack.back();
          stack.pop_back();
          ignore[v] = true;
          if (v >= n) {
            stack.push_back(link[v - n].left);
            stack.push_back(link[v - n].right);
          }
        }
      };
      if (lbig && rbig) {
        relabel[l.left] = next_label++;
        rows.push_back({relabel[node], relabel[l.left], lambda, ls});
        relabel[l.right] = next_label++;
        rows.push_back({relabel[node], relabel[l.right], lambda, rs});
      } else if (!lbig && !rbig) {
        spill(l.left);
        spill(l.right);
      } else if (!lbig) {
        relabel[l.right] = relabel[node];
        spill(l.left);
      } else {
        relabel[l.left] = relabel[node];
        spill(l.right);
      }
    }
    level = std::move(next_level);
  }
  return rows;
}

}  // namespace detail

/// Excess-of-mass stability of every condensed cluster, indexed by id - n.
inline std::vector<double> cluster_stabilities(std::size_t n, const std::vector<CondensedRow>& tree) {
  std::size_t max_id = n;
  for (const auto& r : tree) max_id = std::max({max_id, r.parent, r.child >= n ? r.child : n});
  std::vector<double> birth(max_id - n + 1, 0.0), stability(max_id - n + 1, 0.0);
  for (const auto& r : tree)
    if (r.child >= n) birth[r.child - n] = r.lambda;
  for (const auto& r : tree) {
    const double b = birth[r.parent - n];
    const double gap = (std::isinf(r.lambda) && std::isinf(b)) ? 0.0 : r.lambda - b;
    stability[r.parent - n] += gap * static_cast<double>(r.size);
  }
  return stability;
}

/// Hierarchical density clustering with excess-of-mass selection.
/// The root is never selected; if nothing else survives, everything is noise.
/// Fewer points than min_cluster_size is not an error: all points are noise.
inline ClusterResult hdbscan(const Matrix& x, std::size_t min_cluster_size,
                             std::optional<std::size_t> min_samples = std::nullopt) {
  const std::size_t n = x.rows();
  require(n > 0, Errc::TooFewPoints, "hdbscan needs at least one point");
  require(min_cluster_size >= 2, Errc::InvalidArgument, "min_cluster_size must be >= 2");
  for (double v : x.data()) require(std::isfinite(v), Errc::NonFiniteFeature, "cluster input not finite");
  ClusterResult res;
  res.labels.assign(n, -1);
  res.probabilities.assign(n, 0.0);
  if (n < min_cluster_size) return res;

  // defaulted min_samples follows min_cluster_size, capped so it stays below n
  const std::size_t ms = min_samples.value_or(std::min(min_cluster_size, n - 1));
  const auto link = detail::single_linkage(n, prim_mst(mutual_reachability(x, ms)));
  auto tree = detail::condense(n, link, min_cluster_size);
  const auto raw_stability = cluster_stabilities(n, tree);
  auto stability = raw_stability;
  const std::size_t clusters = stability.size();

  // cluster -> child clusters
  std::vector<std::vector<std::size_t>> kids(clusters);
  std::vector<std::size_t> parent_of(clusters, 0);
  for (const auto& r : tree)
    if (r.child >= n) {
      kids[r.parent - n].push_back(r.child - n);
      parent_of[r.child - n] = r.parent - n;
    }

  std::vector<bool> selected(clusters, false);
  for (std::size_t c = clusters; c-- > 1;) {  // children have larger ids than parents
    double subtree = 0.0;
    for (std::size_t k : kids[c]) subtree += stability[k];
    if (!kids[c].empty() && subtree > stability[c]) {
      stability[c] = subtree;
    } else {
      selected[c] = true;
      std::vector<std::size_t> stack(kids[c]);
      while (!stack.empty()) {
        const std::size_t v = stack.back();
        stack.pop_back();
        selected[v] = false;
        stack.insert(stack.end(), kids[v].begin(), kids[v].end());
      }
    }
  }

  // Point -> the cluster it fell out of, then up to the nearest selected ancestor.
  std::vector<std::size_t> point_parent(n, 0);
  std::vector<double> point_lambda(n, 0.0);
  for (const auto& r : tree)
    if (r.child < n) point_parent[r.child] = r.parent - n, point_lambda[r.child] = r.lambda;
  std::vector<double> death(clusters, 0.0);
  for (const auto& r : tree) death[r.parent - n] = std::max(death[r.parent - n], r.lambda);

  std::vector<long> raw(n, -1);
  for (std::size_t p = 0; p < n; ++p) {
    std::size_t c = point_parent[p];
    while (c != 0 && !selected[c]) c = parent_of[c];
    if (c != 0) raw[p] = static_cast<long>(c);
  }

  // Canonical numbering: descending size, ties by lowest member index.
  std::map<long, std::pair<std::size_t, std::size_t>> info;  // cluster -> (count, first member)
  for (std::size_t p = 0; p < n; ++p)
    if (raw[p] >= 0) {
      auto [it, fresh] = info.try_emplace(raw[p], 0, p);
      ++it->second.first;
    }
  std::vector<long> order;
  for (const auto& [c, _] : info) order.push_back(c);
  std::sort(order.begin(), order.end(), [&](long p, long q) {
    if (info[p].first != info[q].first) return info[p].first > info[q].first;
    return info[p].second < info[q].second;
  });
  std::map<long, int> final_label;
  for (std::size_t i = 0; i < order.size(); ++i) {
    final_label[order[i]] = static_cast<int>(i);
    res.stabilities.push_back(raw_stability[static_cast<std::size_t>(order[i])]);
  }

  for (std::size_t p = 0; p < n; ++p) {
    if (raw[p] < 0) continue;
    res.labels[p] = final_label[raw[p]];
    const double max_lambda = death[static_cast<std::size_t>(raw[p])];
    const double lam = point_lambda[p];
    if (max_lambda == 0.0 || !std::isfinite(lam))
      res.probabilities[p] = 1.0;
    else
      res.probabilities[p] = std::min(lam, max_lambda) / max_lambda;
  }
  res.condensed_tree = std::move(tree);
  return res;
}

struct ValidationReport {
  double silhouette = 0.0;
  std::size_t cluster_count = 0;
  double noise_fraction = 0.0;
};

/// Mean silhouette over non-noise points, measured in the given coordinates.
inline ValidationReport validate_clusters(const std::vector<int>& labels, const Matrix& coords) {
  require(labels.size() == coords.rows(), Errc::LengthMismatch, "labels and coords differ in length");
  int m = 0;
  std::size_t noise = 0;
  for (int l : labels) {
    m = std::max(m, l + 1);
    noise += l < 0;
  }
  std::vector<std::size_t> count(static_cast<std::size_t>(m), 0);
  for (int l : labels)
    if (l >= 0) ++count[static_cast<std::size_t>(l)];
  const auto populated = std::count_if(count.begin(), count.end(), [](std::size_t c) { return c > 0; });
  require(populated >= 2, Errc::TooFewClusters, "silhouette needs at least two clusters");

  double total = 0.0;
  std::size_t scored = 0;
  std::vector<double> sums(static_cast<std::size_t>(m));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0) continue;
    std::fill(sums.begin(), sums.end(), 0.0);
    for (std::size_t j = 0; j < labels.size(); ++j)
      if (j != i && labels[j] >= 0)
        sums[static_cast<std::size_t>(labels[j])] += std::sqrt(squared_distance(coords.row(i), coords.row(j)));
    const auto own = static_cast<std::size_t>(labels[i]);
    ++scored;
    if (count[own] < 2) continue;  // singleton clusters score 0
    const double a = sums[own] / static_cast<double>(count[own] - 1);
    double b = kInf;
    for (std::size_t c = 0; c < sums.size(); ++c)
      if (c != own && count[c] > 0) b = std::min(b, sums[c] / static_cast<double>(count[c]));
    const double denom = std::max(a, b);
    total += denom > 0 ? (b - a) / denom : 0.0;
  }
  return {total / static_cast<double>(scored), static_cast<std::size_t>(populated),
          static_cast<double>(noise) / static_cast<double>(labels.size())};
}

inline constexpr std::size_t kRegimeCount = 5;

struct RegimeMap {
  std::vector<int> cluster_regime;   // cluster label -> 1..5
  std::vector<double> statistic;     // mean forward return per cluster
  std::vector<int> sample_regime;    // per input row
  std::vector<bool> imputed;         // noise rows assigned by nearest centroid
};

/// Orders clusters by mean forward return (ties: lower cluster id first) and
/// gives noise rows the regime of the nearest cluster centroid in `features`.
/// `forward_returns[t]` is missing where no next period exists.
inline RegimeMap build_regime_map(const ClusterResult& result, std::span<const std::optional<double>> forward_returns,
                                  const Matrix& features) {
  const std::size_t n = result.labels.size();
  require(forward_returns.size() == n && features.rows() == n, Errc::LengthMismatch,
          "regime map inputs must share the sample axis");
  const std::size_t m = result.cluster_count();
  require(m == kRegimeCount, Errc::WrongClusterCount,
          "expected 5 clusters, found " + std::to_string(m));

  RegimeMap map;
  std::vector<double> sum(m, 0.0);
  std::vector<std::size_t> cnt(m, 0);
  Matrix centroid(m, features.cols());
  std::vector<std::size_t> members(m, 0);
  for (std::size_t t = 0; t < n; ++t) {
    const int l = result.labels[t];
    if (l < 0) continue;
    const auto c = static_cast<std::size_t>(l);
    ++members[c];
    for (std::size_t j = 0; j < features.cols(); ++j) centroid(c, j) += features(t, j);
    if (forward_returns[t]) sum[c] += *forward_returns[t], ++cnt[c];
  }
  for (std::size_t c = 0; c < m; ++c) {
    require(cnt[c] > 0, Errc::InvalidArgument, "cluster " + std::to_string(c) + " has no forward return");
    map.statistic.push_back(sum[c] / static_cast<double>(cnt[c]));
    for (std::size_t j = 0; j < features.cols(); ++j) centroid(c, j) /= static_cast<double>(members[c]);
  }
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t p, std::size_t q) { return map.statistic[p] < map.statistic[q]; });
  map.cluster_regime.assign(m, 0);
  for (std::size_t r = 0; r < m; ++r) map.cluster_regime[order[r]] = static_cast<int>(r + 1);

  map.sample_regime.resize(n);
  map.imputed.assign(n, false);
  for (std::size_t t = 0; t < n; ++t) {
    int l = result.labels[t];
    if (l < 0) {
      double best = kInf;
      for (std::size_t c = 0; c < m; ++c) {
        const double d = squared_distance(features.row(t), centroid.row(c));
        if (d < best) best = d, l = static_cast<int>(c);
      }
      map.imputed[t] = true;
    }
    map.sample_regime[t] = map.cluster_regime[static_cast<std::size_t>(l)];
  }
  return map;
}

/// Next-period simple return of `index_column`, missing on the last row.
inline std::vector<std::optional<double>> forward_returns(const TimeSeriesFrame& frame, const std::string& index_column) {
  const auto px = frame.values(index_column);
  std::vector<std::optional<double>> out(px.size());
  for (std::size_t t = 0; t + 1 < px.size(); ++t) {
    require(px[t] > 0.0, Errc::NonPositivePrice, "index prices must be positive");
    out[t] = px[t + 1] / px[t] - 1.0;
  }
  return out;
}

inline RegimeMap build_regime_map(const ClusterResult& result, const TimeSeriesFrame& frame,
                                  const std::string& index_column, const Matrix& features) {
  const auto fr = forward_returns(frame, index_column);
  return build_regime_map(result, fr, features);
}

}  // namespace regimesig::cluster
