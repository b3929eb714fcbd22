#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "regimesig/error.hpp"
#include "regimesig/matrix.hpp"
#include "regimesig/random.hpp"
#include "regimesig/reduce.hpp"

namespace regimesig::embed {

struct Edge {
  std::size_t i = 0, j = 0;
  double w = 0.0;
  bool operator==(const Edge&) const = default;
};

struct FuzzyGraph {
  std::size_t n = 0;
  std::size_t k_neighbors = 0;
  std::vector<Edge> edges;  // both directions present, sorted by (i, j)
  std::vector<double> rhos, sigmas;
};

struct Neighbors {
  std::vector<std::vector<std::size_t>> index;  // per point, ascending distance
  std::vector<std::vector<double>> dist;
};

/// Exact k nearest neighbours, self excluded. Ties go to the lower index.
inline Neighbors brute_force_knn(const Matrix& x, std::size_t k) {
  const std::size_t n = x.rows();
  Neighbors nb{std::vector<std::vector<std::size_t>>(n), std::vector<std::vector<double>>(n)};
  std::vector<std::pair<double, std::size_t>> row(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t c = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) row[c++] = {std::sqrt(squared_distance(x.row(i), x.row(j))), j};
    std::partial_sort(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(k), row.end());
    for (std::size_t r = 0; r < k; ++r) {
      nb.index[i].push_back(row[r].second);
      nb.dist[i].push_back(row[r].first);
    }
  }
  return nb;
}

inline double membership(double d, double rho, double sigma) {
  const double gap = d - rho;
  if (gap <= 0.0) return 1.0;
  if (sigma <= 0.0) return 0.0;
  return std::exp(-gap / sigma);
}

/// Bandwidth so that the neighbour weights sum to log2(k).
/// When ties at rho already overshoot the target, sigma collapses towards 0.
inline double calibrate_sigma(std::span<const double> dists, double rho, double target) {
  auto total = [&](double sigma) {
    double s = 0.0;
    for (double d : dists) s += membership(d, rho, sigma);
    return s;
  };
  double lo = 0.0, hi = 1.0;
  for (int i = 0; i < 200 && total(hi) < target; ++i) hi *= 2.0;
  if (total(hi) < target) return hi;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double s = total(mid);
    if (std::abs(s - target) < 1e-10) return mid;
    (s > target ? hi : lo) = mid;
  }
  return 0.5 * (lo + hi);
}

inline FuzzyGraph knn_graph(const Matrix& x, std::size_t k) {
  const std::size_t n = x.rows();
  require(k >= 2, Errc::InvalidArgument, "n_neighbors must be >= 2");
  require(k < n, Errc::KTooLarge, "n_neighbors must be < sample count");
  const auto nb = brute_force_knn(x, k);
  const double target = std::log2(static_cast<double>(k));

  FuzzyGraph g;
  g.n = n;
  g.k_neighbors = k;
  g.rhos.resize(n);
  g.sigmas.resize(n);
  // directed[i] holds (j, w) sorted by j
  std::vector<std::vector<std::pair<std::size_t, double>>> directed(n);
  for (std::size_t i = 0; i < n; ++i) {
    g.rhos[i] = nb.dist[i][0];
    g.sigmas[i] = calibrate_sigma(nb.dist[i], g.rhos[i], target);
    for (std::size_t r = 0; r < k; ++r)
      directed[i].emplace_back(nb.index[i][r], membership(nb.dist[i][r], g.rhos[i], g.sigmas[i]));
    std::sort(directed[i].begin(), directed[i].end());
  }
  auto lookup = [&](std::size_t i, std::size_t j) {
    const auto& row = directed[i];
    auto it = std::lower_bound(row.begin(), row.end(), std::pair<std::size_t, double>{j, -1.0});
    return it != row.end() && it->first == j ? it->second : 0.0;
  };
  std::vector<std::vector<std::pair<std::size_t, double>>> sym(n);
  for (std::size_t i = 0; i < n; ++i)
    for (const auto& [j, w1] : directed[i]) {
      const double w2 = lookup(j, i);
      // each unordered pair emitted once, from its lower endpoint or from the only side holding it
      if (w2 > 0.0 && j < i) continue;
      const double w = w1 + w2 - w1 * w2;
      if (w <= 0.0) continue;
      sym[i].emplace_back(j, w);
      sym[j].emplace_back(i, w);
    }
  for (std::size_t i = 0; i < n; ++i) {
    std::sort(sym[i].begin(), sym[i].end());
    for (const auto& [j, w] : sym[i]) g.edges.push_back({i, j, std::min(w, 1.0)});
  }
  return g;
}

struct KernelParams {
  double a = 0.0, b = 0.0;
};

inline double low_dim_similarity(double d, KernelParams p) {
  return 1.0 / (1.0 + p.a * std::pow(d, 2.0 * p.b));
}

/// Least-squares fit of 1 / (1 + a d^{2b}) to the min_dist step-exponential
/// curve on d in (0, 3]. A coarse grid seeds Gauss-Newton in (log a, log b).
inline KernelParams low_dim_kernel_params(double min_dist, double spread = 1.0) {
  require(min_dist > 0.0, Errc::InvalidArgument, "min_dist must be positive");
  constexpr int kPoints = 300;
  std::vector<double> xs(kPoints), ys(kPoints);
  for (int i = 0; i < kPoints; ++i) {
    xs[i] = 3.0 * (i + 1) / kPoints;
    ys[i] = xs[i] <= min_dist ? 1.0 : std::exp(-(xs[i] - min_dist) / spread);
  }
  auto sse = [&](double la, double lb) {
    const KernelParams p{std::exp(la), std::exp(lb)};
    double s = 0.0;
    for (int i = 0; i < kPoints; ++i) s += std::pow(low_dim_similarity(xs[i], p) - ys[i], 2);
    return s;
  };

  double la = 0.0, lb = 0.0, best = std::numeric_limits<double>::infinity();
  for (int ia = 0; ia <= 40; ++ia)
    for (int ib = 0; ib <= 30; ++ib) {
      const double ta = -3.0 + 6.0 * ia / 40.0, tb = std::log(0.2) + (std::log(3.0) - std::log(0.2)) * ib / 30.0;
      const double s = sse(ta, tb);
      if (s < best) best = s, la = ta, lb = tb;
    }

  double damping = 1e-3;
  for (int it = 0; it < 200; ++it) {
    const double a = std::exp(la), b = std::exp(lb);
    double jtj[2][2] = {{0, 0}, {0, 0}}, jtr[2] = {0, 0};
    for (int i = 0; i < kPoints; ++i) {
      const double d2b = std::pow(xs[i], 2.0 * b);
      const double den = 1.0 + a * d2b;
      const double r = 1.0 / den - ys[i];
      const double dla = -a * d2b / (den * den);
      const double dlb = -a * d2b * 2.0 * b * std::log(xs[i]) / (den * den);
      jtj[0][0] += dla * dla, jtj[0][1] += dla * dlb, jtj[1][1] += dlb * dlb;
      jtr[0] += dla * r, jtr[1] += dlb * r;
    }
    const double m00 = jtj[0][0] * (1 + damping), m11 = jtj[1][1] * (1 + damping), m01 = jtj[0][1];
    const double det = m00 * m11 - m01 * m01;
    if (!(std::abs(det) > 0.0)) break;
    const double sa = -(m11 * jtr[0] - m01 * jtr[1]) / det;
    const double sb = -(m00 * jtr[1] - m01 * jtr[0]) / det;
    const double cand = sse(la + sa, lb + sb);
    if (cand < best) {
      const double gain = best - cand;
      la += sa, lb += sb, best = cand;
      damping = std::max(damping / 3.0, 1e-9);
      if (gain < 1e-14 * std::max(1.0, best)) break;
    } else {
      damping *= 4.0;
      if (damping > 1e8) break;
    }
  }
  const KernelParams p{std::exp(la), std::exp(lb)};
  require(std::isfinite(p.a) && std::isfinite(p.b) && p.a > 0 && p.b > 0, Errc::FitDiverged,
          "kernel curve fit did not converge");
  return p;
}

struct UmapConfig {
  std::size_t n_neighbors = 15;
  double min_dist = 0.5;
  int epochs = 500;
  std::uint64_t seed = 0;
  std::size_t negative_rate = 5;
};

struct Embedding {
  Matrix coords;  // n x 2
  UmapConfig config;
  KernelParams kernel;
  std::vector<double> epoch_losses;
  double final_loss = 0.0;
};

/// 2-D PCA scores scaled so the largest |coordinate| is 10, plus a tiny jitter.
inline Matrix pca_init(const Matrix& x, std::uint64_t seed) {
  Matrix init(x.rows(), 2);
  const std::size_t k = std::min<std::size_t>(2, x.cols());
  const auto scores = reduce::pca_transform(reduce::pca_fit(x, k), x);
  double peak = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t c = 0; c < k; ++c) {
      init(i, c) = scores(i, c);
      peak = std::max(peak, std::abs(scores(i, c)));
    }
  const double scale = peak > 0 ? 10.0 / peak : 1.0;
  Rng rng(derive_seed(seed, 0x1417));
  for (double& v : init.data()) v = v * scale + rng.normal(0.0, 1e-4);
  return init;
}

namespace detail {

inline double clip4(double g) { return std::clamp(g, -4.0, 4.0); }

inline double edge_loss(double w, double v) {
  v = std::clamp(v, 1e-12, 1.0 - 1e-12);
  double s = -w * std::log(v) - (1.0 - w) * std::log(1.0 - v);
  if (w > 0) s += w * std::log(w);
  if (w < 1) s += (1.0 - w) * std::log(1.0 - w);
  return s;
}

}  // namespace detail

/// Cross-entropy layout optimisation by edge sampling and negative sampling.
///
/// Edges are visited every max_w / w epochs; each visit draws `negative_rate`
/// repulsion targets from the degree distribution. One RNG stream per epoch.
/// The recorded epoch loss is the mean cross-entropy term of the edges sampled
/// in that epoch, evaluated before each update; negative samples are not edges
/// and do not enter it.
inline Embedding umap_embed(const FuzzyGraph& g, Matrix init, KernelParams kp, const UmapConfig& cfg) {
  require(!g.edges.empty(), Errc::InvalidArgument, "empty fuzzy graph");
  require(init.rows() == g.n && init.cols() == 2, Errc::ShapeMismatch, "init must be n x 2");
  require(cfg.epochs >= 1, Errc::InvalidArgument, "epochs must be >= 1");

  const double epochs = cfg.epochs;
  double max_w = 0.0;
  for (const auto& e : g.edges) max_w = std::max(max_w, e.w);
  std::vector<Edge> edges;
  for (const auto& e : g.edges)
    if (e.w >= max_w / epochs) edges.push_back(e);

  std::vector<double> degree(g.n, 0.0);
  for (const auto& e : edges) degree[e.i] += e.w;
  std::vector<double> cumulative(g.n);
  std::partial_sum(degree.begin(), degree.end(), cumulative.begin());
  const double total_degree = cumulative.back();
  auto draw_vertex = [&](Rng& rng) {
    const double u = rng.uniform() * total_degree;
    return static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin());
  };

  const double neg_rate = static_cast<double>(cfg.negative_rate);
  std::vector<double> eps(edges.size()), next(edges.size()), eps_neg(edges.size()), next_neg(edges.size());
  for (std::size_t e = 0; e < edges.size(); ++e) {
    eps[e] = max_w / edges[e].w;
    next[e] = eps[e];
    eps_neg[e] = eps[e] / neg_rate;
    next_neg[e] = eps_neg[e];
  }

  const double a = kp.a, b = kp.b;
  Matrix y = std::move(init);
  Embedding out;
  out.config = cfg;
  out.kernel = kp;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    const double alpha = 1.0 - static_cast<double>(epoch - 1) / epochs;
    double loss = 0.0;
    std::size_t sampled = 0;
    for (std::size_t e = 0; e < edges.size(); ++e) {
      if (next[e] > epoch) continue;
      const std::size_t i = edges[e].i, j = edges[e].j;
      double* yi = &y(i, 0);
      double* yj = &y(j, 0);
      double dx = yi[0] - yj[0], dy = yi[1] - yj[1];
      double d2 = dx * dx + dy * dy;
      const double v = 1.0 / (1.0 + a * std::pow(d2, b));
      loss += detail::edge_loss(edges[e].w, v);
      ++sampled;
      if (d2 > 0.0) {
        const double coeff = -2.0 * a * b * std::pow(d2, b - 1.0) / (1.0 + a * std::pow(d2, b));
        const double gx = detail::clip4(coeff * dx), gy = detail::clip4(coeff * dy);
        yi[0] += alpha * gx, yi[1] += alpha * gy;
        yj[0] -= alpha * gx, yj[1] -= alpha * gy;
      }
      next[e] += eps[e];

      const auto n_neg = static_cast<std::size_t>((epoch - next_neg[e]) / eps_neg[e]);
      for (std::size_t s = 0; s < n_neg; ++s) {
        const std::size_t k = draw_vertex(rng);
        if (k == i) continue;
        const double* yk = &y(k, 0);
        dx = yi[0] - yk[0], dy = yi[1] - yk[1];
        d2 = dx * dx + dy * dy;
        if (d2 > 0.0) {
          const double coeff = 2.0 * b / ((0.001 + d2) * (1.0 + a * std::pow(d2, b)));
          yi[0] += alpha * detail::clip4(coeff * dx);
          yi[1] += alpha * detail::clip4(coeff * dy);
        }
      }
      next_neg[e] += static_cast<double>(n_neg) * eps_neg[e];
    }
    out.epoch_losses.push_back(sampled ? loss / static_cast<double>(sampled) : 0.0);
  }

  for (double v : y.data()) require(std::isfinite(v), Errc::NonFiniteCoords, "embedding diverged");
  out.coords = std::move(y);
  out.final_loss = out.epoch_losses.back();
  return out;
}

/// Row order used internally: lexicographic by values, ties by index.
/// Makes the embedding a function of the row set, so permuting the input
/// permutes the output the same way.
inline std::vector<std::size_t> canonical_order(const Matrix& x) {
  std::vector<std::size_t> order(x.rows());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t p, std::size_t q) {
    const auto a = x.row(p), b = x.row(q);
    return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
  });
  return order;
}

/// Full path: canonical ordering, fuzzy graph, PCA init, layout, map back.
inline Embedding umap(const Matrix& x, const UmapConfig& cfg) {
  for (double v : x.data()) require(std::isfinite(v), Errc::NonFiniteFeature, "embedding input not finite");
  const auto order = canonical_order(x);
  const Matrix xc = x.select_rows(order);
  const auto graph = knn_graph(xc, cfg.n_neighbors);
  auto emb = umap_embed(graph, pca_init(xc, cfg.seed), low_dim_kernel_params(cfg.min_dist), cfg);
  Matrix coords(x.rows(), 2);
  for (std::size_t r = 0; r < order.size(); ++r) {
    coords(order[r], 0) = emb.coords(r, 0);
    coords(order[r], 1) = emb.coords(r, 1);
  }
  emb.coords = std::move(coords);
  return emb;
}

/// Indices of columns whose sample variance does not exceed `cap`.
inline std::vector<std::size_t> variance_filter(const Matrix& x, double cap) {
  const auto mean = reduce::column_means(x);
  std::vector<std::size_t> keep;
  for (std::size_t j = 0; j < x.cols(); ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i) s += (x(i, j) - mean[j]) * (x(i, j) - mean[j]);
    if (s / static_cast<double>(std::max<std::size_t>(x.rows(), 2) - 1) <= cap) keep.push_back(j);
  }
  return keep;
}

}  // namespace regimesig::embed
