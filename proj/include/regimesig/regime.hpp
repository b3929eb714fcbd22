#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <numeric>
#include <ostream>
#include <vector>

#include "regimesig/dense.hpp"
#include "regimesig/error.hpp"
#include "regimesig/frame.hpp"
#include "regimesig/matrix.hpp"
#include "regimesig/model_io.hpp"
#include "regimesig/trainer.hpp"

namespace regimesig::regime {

// ---------------------------------------------------------------------------
// Regression trees
// ---------------------------------------------------------------------------

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  std::size_t left = 0, right = 0;
  double value = 0.0;
  bool operator==(const TreeNode&) const = default;
};

struct Tree {
  std::vector<TreeNode> nodes;

  double predict(std::span<const double> x) const {
    std::size_t i = 0;
    while (nodes[i].feature >= 0)
      i = x[static_cast<std::size_t>(nodes[i].feature)] <= nodes[i].threshold ? nodes[i].left : nodes[i].right;
    return nodes[i].value;
  }

  int depth() const {
    std::vector<std::pair<std::size_t, int>> stack{{0, 0}};
    int best = 0;
    while (!stack.empty()) {
      auto [i, d] = stack.back();
      stack.pop_back();
      best = std::max(best, d);
      if (nodes[i].feature >= 0) {
        stack.push_back({nodes[i].left, d + 1});
        stack.push_back({nodes[i].right, d + 1});
      }
    }
    return best;
  }

  bool operator==(const Tree&) const = default;
};

namespace detail {

/// Fits one variance-reduction tree to `residual`, Newton leaves
/// lr * sum(r) / max(sum(h), 1e-6). `order[f]` lists all rows sorted by feature f.
class TreeBuilder {
 public:
  TreeBuilder(const Matrix& x, const std::vector<std::vector<std::size_t>>& order, std::span<const double> residual,
              std::span<const double> hessian, int max_depth, std::size_t min_leaf, double lr)
      : x_(x), order_(order), r_(residual), h_(hessian), max_depth_(max_depth), min_leaf_(min_leaf), lr_(lr) {}

  Tree build(const std::vector<std::size_t>& rows) {
    node_of_.assign(x_.rows(), kNone);
    for (std::size_t i : rows) node_of_[i] = 0;
    tree_.nodes.assign(1, TreeNode{});
    grow(0, rows, 0);
    return std::move(tree_);
  }

 private:
  static constexpr std::size_t kNone = static_cast<std::size_t>(-1);

  void make_leaf(std::size_t node, const std::vector<std::size_t>& rows) {
    double sr = 0.0, sh = 0.0;
    for (std::size_t i : rows) sr += r_[i], sh += h_[i];
    tree_.nodes[node].feature = -1;
    tree_.nodes[node].value = lr_ * sr / std::max(sh, 1e-6);
  }

  void grow(std::size_t node, const std::vector<std::size_t>& rows, int depth) {
    if (depth >= max_depth_ || rows.size() < 2 * min_leaf_) return make_leaf(node, rows);
    double total = 0.0;
    for (std::size_t i : rows) total += r_[i];
    const double n = static_cast<double>(rows.size());
    const double base = total * total / n;

    double best_gain = 1e-12;
    int best_f = -1;
    double best_t = 0.0;
    std::vector<std::size_t> sorted;
    sorted.reserve(rows.size());
    for (std::size_t f = 0; f < x_.cols(); ++f) {
      sorted.clear();
      for (std::size_t i : order_[f])
        if (node_of_[i] == node) sorted.push_back(i);
      double left = 0.0;
      for (std::size_t k = 0; k + 1 < sorted.size(); ++k) {
        left += r_[sorted[k]];
        const double a = x_(sorted[k], f), b = x_(sorted[k + 1], f);
        if (a == b) continue;
        const std::size_t nl = k + 1, nr = sorted.size() - nl;
        if (nl < min_leaf_ || nr < min_leaf_) continue;
        const double right = total - left;
        const double gain = left * left / static_cast<double>(nl) + right * right / static_cast<double>(nr) - base;
        if (gain > best_gain) best_gain = gain, best_f = static_cast<int>(f), best_t = 0.5 * (a + b);
      }
    }
    if (best_f < 0) return make_leaf(node, rows);

    std::vector<std::size_t> lrows, rrows;
    for (std::size_t i : rows) (x_(i, static_cast<std::size_t>(best_f)) <= best_t ? lrows : rrows).push_back(i);
    const std::size_t l = tree_.nodes.size(), r = l + 1;
    tree_.nodes.resize(tree_.nodes.size() + 2);
    tree_.nodes[node].feature = best_f;
    tree_.nodes[node].threshold = best_t;
    tree_.nodes[node].left = l;
    tree_.nodes[node].right = r;
    for (std::size_t i : lrows) node_of_[i] = l;
    for (std::size_t i : rrows) node_of_[i] = r;
    grow(l, lrows, depth + 1);
    grow(r, rrows, depth + 1);
  }

  const Matrix& x_;
  const std::vector<std::vector<std::size_t>>& order_;
  std::span<const double> r_, h_;
  int max_depth_;
  std::size_t min_leaf_;
  double lr_;
  std::vector<std::size_t> node_of_;
  Tree tree_;
};

inline void softmax_row(std::span<double> z) {
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double& v : z) s += (v = std::exp(v - m));
  for (double& v : z) v /= s;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Gradient boosting
// ---------------------------------------------------------------------------

struct GbmConfig {
  int rounds = 100;
  int max_depth = 4;
  double learning_rate = 0.1;
  std::size_t min_samples_leaf = 1;
  std::size_t num_classes = 5;
};

struct GbmModel {
  std::size_t num_features = 0;
  std::vector<double> init_scores;          // per class log prior
  std::vector<std::vector<Tree>> rounds;    // rounds[r][class]
  std::vector<double> train_loss;           // before any round, then after each

  std::size_t num_classes() const { return init_scores.size(); }

  void save(std::ostream& out) const {
    io::ModelWriter w(out, "gbm_model");
    write_payload(w);
  }
  static GbmModel load(std::istream& in) {
    io::ModelReader r(in, "gbm_model");
    return read_payload(r);
  }

  void write_payload(io::ModelWriter& w) const {
    w.u64(num_features);
    w.f64s(init_scores);
    w.u64(rounds.size());
    for (const auto& round : rounds)
      for (const auto& tree : round) {
        w.u64(tree.nodes.size());
        for (const auto& n : tree.nodes) {
          w.u64(static_cast<std::uint64_t>(static_cast<std::int64_t>(n.feature)));
          w.f64(n.threshold);
          w.u64(n.left);
          w.u64(n.right);
          w.f64(n.value);
        }
      }
    w.f64s(train_loss);
  }
  static GbmModel read_payload(io::ModelReader& r) {
    GbmModel m;
    m.num_features = r.u64();
    m.init_scores = r.f64s();
    m.rounds.resize(r.u64());
    for (auto& round : m.rounds) {
      round.resize(m.init_scores.size());
      for (auto& tree : round) {
        tree.nodes.resize(r.u64());
        for (auto& n : tree.nodes) {
          n.feature = static_cast<int>(static_cast<std::int64_t>(r.u64()));
          n.threshold = r.f64();
          n.left = r.u64();
          n.right = r.u64();
          n.value = r.f64();
        }
      }
    }
    m.train_loss = r.f64s();
    return m;
  }
  bool operator==(const GbmModel&) const = default;
};

/// Summed tree scores (logits), n x K.
inline Matrix gbm_decision(const GbmModel& m, const Matrix& x) {
  require(x.cols() == m.num_features, Errc::ShapeMismatch, "gbm feature count mismatch");
  const std::size_t k = m.num_classes();
  Matrix f(x.rows(), k);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto row = x.row(i);
    for (std::size_t c = 0; c < k; ++c) {
      double s = m.init_scores[c];
      for (const auto& round : m.rounds) s += round[c].predict(row);
      f(i, c) = s;
    }
  }
  return f;
}

inline Matrix gbm_predict_proba(const GbmModel& m, const Matrix& x) {
  Matrix p = gbm_decision(m, x);
  for (std::size_t i = 0; i < p.rows(); ++i) detail::softmax_row(p.row(i));
  return p;
}

inline void check_labels(const Matrix& x, std::span<const int> labels, std::size_t classes) {
  require(labels.size() == x.rows(), Errc::LengthMismatch, "labels and features differ in length");
  require(x.rows() > 0, Errc::EmptySplit, "no training rows");
  for (double v : x.data()) require(std::isfinite(v), Errc::NonFiniteFeature, "feature not finite");
  for (int l : labels)
    require(l >= 1 && static_cast<std::size_t>(l) <= classes, Errc::OutOfRange,
            "label outside 1.." + std::to_string(classes));
  const bool single = std::all_of(labels.begin(), labels.end(), [&](int l) { return l == labels[0]; });
  require(!single, Errc::SingleClass, "need at least two distinct labels");
}

/// Multiclass boosting with a softmax link. Labels are 1..K.
///
/// Each round fits one tree per class to y_c - p_c, with all classes seeing
/// the same probabilities; scores are updated after the round. Fully
/// deterministic: no row or feature subsampling.
inline GbmModel gbm_train(const Matrix& x, std::span<const int> labels, const GbmConfig& cfg = {}) {
  const std::size_t k = cfg.num_classes, n = x.rows();
  require(k >= 2, Errc::InvalidArgument, "num_classes must be >= 2");
  require(cfg.rounds >= 0 && cfg.max_depth >= 1 && cfg.learning_rate >= 0.0 && cfg.min_samples_leaf >= 1,
          Errc::InvalidArgument, "invalid gbm config");
  check_labels(x, labels, k);

  GbmModel m;
  m.num_features = x.cols();
  std::vector<double> count(k, 0.0);
  for (int l : labels) count[static_cast<std::size_t>(l - 1)] += 1.0;
  for (double c : count) m.init_scores.push_back(std::log(std::max(c / static_cast<double>(n), 1e-12)));

  std::vector<std::vector<std::size_t>> order(x.cols(), std::vector<std::size_t>(n));
  for (std::size_t f = 0; f < x.cols(); ++f) {
    std::iota(order[f].begin(), order[f].end(), std::size_t{0});
    std::stable_sort(order[f].begin(), order[f].end(), [&](std::size_t a, std::size_t b) { return x(a, f) < x(b, f); });
  }
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});

  Matrix f(n, k);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < k; ++c) f(i, c) = m.init_scores[c];
  Matrix p(n, k);
  auto refresh = [&] {
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      std::copy(f.row(i).begin(), f.row(i).end(), p.row(i).begin());
      detail::softmax_row(p.row(i));
      loss -= std::log(std::max(p(i, static_cast<std::size_t>(labels[i] - 1)), nn::kProbFloor));
    }
    m.train_loss.push_back(loss / static_cast<double>(n));
  };
  refresh();

  std::vector<double> r(n), h(n);
  for (int round = 0; round < cfg.rounds; ++round) {
    std::vector<Tree> trees;
    for (std::size_t c = 0; c < k; ++c) {
      for (std::size_t i = 0; i < n; ++i) {
        const double y = labels[i] - 1 == static_cast<int>(c) ? 1.0 : 0.0;
        r[i] = y - p(i, c);
        h[i] = p(i, c) * (1.0 - p(i, c));
      }
      detail::TreeBuilder builder(x, order, r, h, cfg.max_depth, cfg.min_samples_leaf, cfg.learning_rate);
      trees.push_back(builder.build(all));
    }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < k; ++c) f(i, c) += trees[c].predict(x.row(i));
    m.rounds.push_back(std::move(trees));
    refresh();
  }
  return m;
}

// ---------------------------------------------------------------------------
// Confusion matrix
// ---------------------------------------------------------------------------

struct ConfusionMatrix {
  std::size_t k = 0;
  std::vector<std::size_t> counts;  // row = true, column = predicted

  explicit ConfusionMatrix(std::size_t classes = 5) : k(classes), counts(classes * classes, 0) {}

  void add(int truth, int predicted) {
    counts[static_cast<std::size_t>(truth - 1) * k + static_cast<std::size_t>(predicted - 1)] += 1;
  }
  std::size_t at(std::size_t t, std::size_t p) const { return counts[t * k + p]; }
  std::size_t total() const { return std::accumulate(counts.begin(), counts.end(), std::size_t{0}); }
  std::size_t trace() const {
    std::size_t s = 0;
    for (std::size_t i = 0; i < k; ++i) s += at(i, i);
    return s;
  }
  double accuracy() const {
    const auto t = total();
    return t ? static_cast<double>(trace()) / static_cast<double>(t) : 0.0;
  }
  bool operator==(const ConfusionMatrix&) const = default;
};

/// Index of the largest entry + 1; ties go to the lower class.
inline int argmax_class(std::span<const double> p) {
  return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin()) + 1;
}

inline ConfusionMatrix confusion(const Matrix& probs, std::span<const int> labels) {
  require(probs.rows() == labels.size(), Errc::LengthMismatch, "confusion inputs differ in length");
  ConfusionMatrix cm(probs.cols());
  for (std::size_t i = 0; i < labels.size(); ++i) cm.add(labels[i], argmax_class(probs.row(i)));
  return cm;
}

// ---------------------------------------------------------------------------
// Stacked classifier
// ---------------------------------------------------------------------------

struct StackedClassifier {
  GbmModel gbm;
  nn::DenseNet head;

  void save(std::ostream& out) const {
    io::ModelWriter w(out, "stacked_classifier");
    gbm.write_payload(w);
    head.write_payload(w);
  }
  static StackedClassifier load(std::istream& in) {
    io::ModelReader r(in, "stacked_classifier");
    StackedClassifier s;
    s.gbm = GbmModel::read_payload(r);
    s.head = nn::DenseNet::read_payload(r);
    return s;
  }

  Matrix predict_proba(const Matrix& x) const { return head.predict(gbm_predict_proba(gbm, x)); }
};

struct StackConfig {
  GbmConfig gbm;
  nn::TrainConfig head;  // learning rate 1e-3, batch 32, 500 epochs, patience 15 by default
  std::vector<std::size_t> hidden{128, 64, 32};
  double dropout = 0.3;
  std::size_t folds = 5;
};

struct StackResult {
  StackedClassifier model;
  ConfusionMatrix validation;
  ConfusionMatrix gbm_validation;  // stage one alone, for comparison
  ConfusionMatrix training;
  nn::LossCurve curve;
};

inline nn::DenseNet make_head(std::size_t classes, const StackConfig& cfg) {
  std::vector<std::size_t> sizes{classes};
  std::vector<nn::Activation> acts;
  for (std::size_t h : cfg.hidden) sizes.push_back(h), acts.push_back(nn::Activation::Relu);
  sizes.push_back(classes);
  acts.push_back(nn::Activation::Softmax);
  return nn::DenseNet(sizes, acts, cfg.dropout, cfg.head.seed);
}

/// Out-of-fold GBM probabilities over contiguous folds of `x`.
inline Matrix out_of_fold_proba(const Matrix& x, std::span<const int> labels, const StackConfig& cfg) {
  const std::size_t n = x.rows(), folds = cfg.folds;
  require(folds >= 2 && n >= folds, Errc::InvalidArgument, "need at least as many rows as folds");
  Matrix oof(n, cfg.gbm.num_classes);
  for (std::size_t f = 0; f < folds; ++f) {
    const std::size_t lo = f * n / folds, hi = (f + 1) * n / folds;
    std::vector<std::size_t> keep;
    std::vector<int> kl;
    for (std::size_t i = 0; i < n; ++i)
      if (i < lo || i >= hi) keep.push_back(i), kl.push_back(labels[i]);
    const auto model = gbm_train(x.select_rows(keep), kl, cfg.gbm);
    const auto p = gbm_predict_proba(model, x.slice_rows(lo, hi));
    for (std::size_t i = lo; i < hi; ++i)
      std::copy(p.row(i - lo).begin(), p.row(i - lo).end(), oof.row(i).begin());
  }
  return oof;
}

/// Two-stage training on rows that are already in chronological order.
///
/// Stage one is trained out of fold on the training split so the head never
/// sees probabilities from a GBM that was fit on the same rows. The head is
/// validated on probabilities of the GBM refit on the full training split,
/// which is the model that ships.
inline StackResult stack_train(const Matrix& x, std::span<const int> labels, const SplitSpec& split,
                               const StackConfig& cfg = {}) {
  require(labels.size() == x.rows(), Errc::LengthMismatch, "labels and features differ in length");
  split.validate();
  const auto [ntr, nva, nte] = split.sizes(x.rows());
  require(ntr > 0 && nva > 0, Errc::EmptySplit, "train and validation splits must be non-empty");
  const Matrix xtr = x.slice_rows(0, ntr), xva = x.slice_rows(ntr, ntr + nva);
  const std::vector<int> ytr(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(ntr));
  const std::vector<int> yva(labels.begin() + static_cast<std::ptrdiff_t>(ntr),
                             labels.begin() + static_cast<std::ptrdiff_t>(ntr + nva));
  check_labels(xtr, ytr, cfg.gbm.num_classes);
  const std::size_t k = cfg.gbm.num_classes;

  const Matrix oof = out_of_fold_proba(xtr, ytr, cfg);
  StackResult res{{gbm_train(xtr, ytr, cfg.gbm), make_head(k, cfg)}, ConfusionMatrix(k), ConfusionMatrix(k),
                  ConfusionMatrix(k), {}};
  const Matrix pva = gbm_predict_proba(res.model.gbm, xva);

  auto to_zero_based = [](const std::vector<int>& y) {
    std::vector<int> z;
    for (int l : y) z.push_back(l - 1);
    return z;
  };
  res.curve = nn::train(res.model.head, oof, nn::one_hot(to_zero_based(ytr), k), pva,
                        nn::one_hot(to_zero_based(yva), k), nn::LossKind::CrossEntropy, cfg.head);

  res.validation = confusion(res.model.head.predict(pva), yva);
  res.gbm_validation = confusion(pva, yva);
  res.training = confusion(res.model.predict_proba(xtr), ytr);
  return res;
}

struct Classification {
  int regime = 0;
  std::vector<double> probabilities;
};

inline Classification classify(const StackedClassifier& model, std::span<const double> x) {
  require(x.size() == model.gbm.num_features, Errc::ShapeMismatch, "feature count mismatch");
  const auto p = model.predict_proba(Matrix(1, x.size(), std::vector<double>(x.begin(), x.end())));
  Classification c;
  c.probabilities.assign(p.row(0).begin(), p.row(0).end());
  c.regime = argmax_class(c.probabilities);
  return c;
}

}  // namespace regimesig::regime
