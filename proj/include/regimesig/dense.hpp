#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "regimesig/error.hpp"
#include "regimesig/matrix.hpp"
#include "regimesig/model_io.hpp"
#include "regimesig/random.hpp"
#include "regimesig/trainer.hpp"

namespace regimesig::nn {

enum class Activation : std::uint64_t { Linear = 0, Relu = 1, Sigmoid = 2, Tanh = 3, Softmax = 4 };
enum class LossKind { SquaredError, CrossEntropy };
enum class Mode { Train, Eval };

inline double sigmoid(double z) {
  // split form keeps exp() from overflowing for large |z|
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline void apply_activation(Activation act, Matrix& z) {
  switch (act) {
    case Activation::Linear: return;
    case Activation::Relu:
      for (double& v : z.data()) v = v > 0.0 ? v : 0.0;
      return;
    case Activation::Sigmoid:
      for (double& v : z.data()) v = sigmoid(v);
      return;
    case Activation::Tanh:
      for (double& v : z.data()) v = std::tanh(v);
      return;
    case Activation::Softmax:
      for (std::size_t i = 0; i < z.rows(); ++i) {
        auto r = z.row(i);
        const double mx = *std::max_element(r.begin(), r.end());
        double s = 0.0;
        for (double& v : r) s += (v = std::exp(v - mx));
        for (double& v : r) v /= s;
      }
      return;
  }
}

/// Turns dL/d(activation output) into dL/d(pre-activation), in place.
inline void activation_backward(Activation act, const Matrix& out, Matrix& grad) {
  auto& g = grad.data();
  const auto& a = out.data();
  switch (act) {
    case Activation::Linear: return;
    case Activation::Relu:
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = a[i] > 0.0 ? g[i] : 0.0;
      return;
    case Activation::Sigmoid:
      for (std::size_t i = 0; i < g.size(); ++i) g[i] *= a[i] * (1.0 - a[i]);
      return;
    case Activation::Tanh:
      for (std::size_t i = 0; i < g.size(); ++i) g[i] *= 1.0 - a[i] * a[i];
      return;
    case Activation::Softmax:
      for (std::size_t r = 0; r < grad.rows(); ++r) {
        auto gr = grad.row(r);
        const auto ar = out.row(r);
        double dot = 0.0;
        for (std::size_t k = 0; k < gr.size(); ++k) dot += gr[k] * ar[k];
        for (std::size_t k = 0; k < gr.size(); ++k) gr[k] = ar[k] * (gr[k] - dot);
      }
      return;
  }
}

inline constexpr double kProbFloor = 1e-12;

/// Mean over rows of -sum_c y_c log p_c, with p clamped to [1e-12, 1].
inline double cross_entropy(const Matrix& probs, const Matrix& labels) {
  require(probs.rows() == labels.rows() && probs.cols() == labels.cols(), Errc::ShapeMismatch,
          "cross_entropy: probs and labels differ in shape");
  require(probs.rows() > 0, Errc::ShapeMismatch, "cross_entropy: no rows");
  double total = 0.0;
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    double row_sum = 0.0;
    for (std::size_t c = 0; c < probs.cols(); ++c) {
      row_sum += probs(i, c);
      if (labels(i, c) != 0.0)
        total -= labels(i, c) * std::log(std::clamp(probs(i, c), kProbFloor, 1.0));
    }
    require(std::abs(row_sum - 1.0) <= 1e-6, Errc::InvalidArgument,
            "cross_entropy: probability row does not sum to 1");
  }
  return total / static_cast<double>(probs.rows());
}

/// Fully connected feed-forward network with parameters in one flat vector.
///
/// Layer l maps layer_sizes[l] -> layer_sizes[l+1]; its weight block is
/// row-major (in x out) followed by the bias. Dropout applies to hidden
/// layer outputs in train mode only (inverted scaling).
class DenseNet {
 public:
  struct ForwardPass {
    std::vector<Matrix> inputs;   // input of each layer (after dropout)
    std::vector<Matrix> outputs;  // activation output of each layer (before dropout)
    std::vector<Matrix> masks;    // dropout masks; empty matrix when not applied
    const Matrix& result() const { return outputs.back(); }
  };

  struct LossGrad {
    double loss = 0.0;
    std::vector<double> grad;
  };

  DenseNet() = default;

  DenseNet(std::vector<std::size_t> layer_sizes, std::vector<Activation> activations,
           double dropout_rate, std::uint64_t seed)
      : sizes_(std::move(layer_sizes)), acts_(std::move(activations)), dropout_(dropout_rate) {
    validate_architecture();
    build_offsets();
    params_.assign(param_count_, 0.0);
    Rng rng(seed);
    for (std::size_t l = 0; l < num_layers(); ++l) {
      const double fan_in = static_cast<double>(sizes_[l]);
      const double fan_out = static_cast<double>(sizes_[l + 1]);
      // He-uniform for relu layers, Xavier-uniform otherwise
      const double limit = acts_[l] == Activation::Relu ? std::sqrt(6.0 / fan_in)
                                                        : std::sqrt(6.0 / (fan_in + fan_out));
      for (std::size_t k = 0; k < sizes_[l] * sizes_[l + 1]; ++k)
        params_[w_off_[l] + k] = rng.uniform(-limit, limit);
    }
  }

  std::size_t num_layers() const noexcept { return acts_.size(); }
  const std::vector<std::size_t>& layer_sizes() const noexcept { return sizes_; }
  const std::vector<Activation>& activations() const noexcept { return acts_; }
  double dropout_rate() const noexcept { return dropout_; }
  std::size_t input_dim() const { return sizes_.front(); }
  std::size_t output_dim() const { return sizes_.back(); }

  std::vector<double>& params() noexcept { return params_; }
  const std::vector<double>& params() const noexcept { return params_; }

  std::span<const double> weights(std::size_t l) const {
    return {params_.data() + w_off_[l], sizes_[l] * sizes_[l + 1]};
  }
  std::span<const double> bias(std::size_t l) const {
    return {params_.data() + b_off_[l], sizes_[l + 1]};
  }
  std::span<double> weights(std::size_t l) {
    return {params_.data() + w_off_[l], sizes_[l] * sizes_[l + 1]};
  }
  std::span<double> bias(std::size_t l) { return {params_.data() + b_off_[l], sizes_[l + 1]}; }

  ForwardPass forward(const Matrix& x, Mode mode, Rng* rng = nullptr) const {
    return forward_with(params_, x, mode, rng);
  }

  Matrix predict(const Matrix& x) const { return forward(x, Mode::Eval).result(); }

  /// Forward pass using an external parameter vector of this architecture.
  ForwardPass forward_with(std::span<const double> p, const Matrix& x, Mode mode, Rng* rng) const {
    require(x.cols() == input_dim(), Errc::ShapeMismatch,
            "input has " + std::to_string(x.cols()) + " columns, network expects " +
                std::to_string(input_dim()));
    require(mode == Mode::Eval || dropout_ == 0.0 || rng != nullptr, Errc::InvalidArgument,
            "train-mode dropout needs a generator");
    ForwardPass pass;
    pass.inputs.reserve(num_layers());
    Matrix a = x;
    for (std::size_t l = 0; l < num_layers(); ++l) {
      const std::size_t in = sizes_[l], out = sizes_[l + 1];
      Matrix z(a.rows(), out);
      const double* w = p.data() + w_off_[l];
      const double* b = p.data() + b_off_[l];
      for (std::size_t i = 0; i < a.rows(); ++i) {
        auto zi = z.row(i);
        std::copy(b, b + out, zi.begin());
        const auto ai = a.row(i);
        for (std::size_t k = 0; k < in; ++k) {
          const double aik = ai[k];
          if (aik == 0.0) continue;
          const double* wk = w + k * out;
          for (std::size_t j = 0; j < out; ++j) zi[j] += aik * wk[j];
        }
      }
      apply_activation(acts_[l], z);
      pass.inputs.push_back(std::move(a));
      Matrix mask;
      a = z;
      const bool hidden = l + 1 < num_layers();
      if (hidden && mode == Mode::Train && dropout_ > 0.0) {
        mask = Matrix(z.rows(), z.cols());
        const double keep_scale = 1.0 / (1.0 - dropout_);
        for (std::size_t k = 0; k < mask.data().size(); ++k) {
          mask.data()[k] = rng->uniform() < dropout_ ? 0.0 : keep_scale;
          a.data()[k] *= mask.data()[k];
        }
      }
      pass.outputs.push_back(std::move(z));
      pass.masks.push_back(std::move(mask));
    }
    return pass;
  }

  static double loss_value(const Matrix& out, const Matrix& y, LossKind kind, Activation out_act) {
    require(out.rows() == y.rows() && out.cols() == y.cols(), Errc::ShapeMismatch,
            "targets shape differs from network output");
    const double n = static_cast<double>(out.rows());
    double total = 0.0;
    if (kind == LossKind::SquaredError) {
      for (std::size_t k = 0; k < out.data().size(); ++k) {
        const double d = out.data()[k] - y.data()[k];
        total += d * d;
      }
      return total / n;
    }
    if (out_act == Activation::Softmax) {
      for (std::size_t k = 0; k < out.data().size(); ++k)
        if (y.data()[k] != 0.0) total -= y.data()[k] * std::log(std::max(out.data()[k], kProbFloor));
      return total / n;
    }
    require(out_act == Activation::Sigmoid, Errc::InvalidArgument,
            "cross-entropy needs a softmax or sigmoid output layer");
    for (std::size_t k = 0; k < out.data().size(); ++k) {
      const double a = std::clamp(out.data()[k], kProbFloor, 1.0 - kProbFloor);
      const double t = y.data()[k];
      total -= t * std::log(a) + (1.0 - t) * std::log(1.0 - a);
    }
    return total / n;
  }

  double loss(const Matrix& x, const Matrix& y, LossKind kind) const {
    return loss_value(predict(x), y, kind, acts_.back());
  }

  /// Exact gradient of the mean loss for a recorded forward pass.
  LossGrad backward_with(std::span<const double> p, const ForwardPass& pass, const Matrix& y,
                         LossKind kind) const {
    const Matrix& out = pass.result();
    LossGrad lg;
    lg.loss = loss_value(out, y, kind, acts_.back());
    lg.grad.assign(param_count_, 0.0);
    const double n = static_cast<double>(out.rows());

    Matrix dz(out.rows(), out.cols());
    for (std::size_t k = 0; k < dz.data().size(); ++k) dz.data()[k] = out.data()[k] - y.data()[k];
    if (kind == LossKind::SquaredError) {
      for (double& v : dz.data()) v *= 2.0 / n;
      activation_backward(acts_.back(), out, dz);
    } else {
      // softmax/sigmoid with cross-entropy: dL/dz = (p - y) / n
      for (double& v : dz.data()) v /= n;
    }

    for (std::size_t l = num_layers(); l-- > 0;) {
      const std::size_t in = sizes_[l], outd = sizes_[l + 1];
      const Matrix& a = pass.inputs[l];
      double* gw = lg.grad.data() + w_off_[l];
      double* gb = lg.grad.data() + b_off_[l];
      for (std::size_t i = 0; i < a.rows(); ++i) {
        const auto ai = a.row(i);
        const auto di = dz.row(i);
        for (std::size_t j = 0; j < outd; ++j) gb[j] += di[j];
        for (std::size_t k = 0; k < in; ++k) {
          const double aik = ai[k];
          if (aik == 0.0) continue;
          double* gwk = gw + k * outd;
          for (std::size_t j = 0; j < outd; ++j) gwk[j] += aik * di[j];
        }
      }
      if (l == 0) break;
      const double* w = p.data() + w_off_[l];
      Matrix da(a.rows(), in);
      for (std::size_t i = 0; i < a.rows(); ++i) {
        const auto di = dz.row(i);
        auto dai = da.row(i);
        for (std::size_t k = 0; k < in; ++k) {
          const double* wk = w + k * outd;
          double s = 0.0;
          for (std::size_t j = 0; j < outd; ++j) s += wk[j] * di[j];
          dai[k] = s;
        }
      }
      const Matrix& mask = pass.masks[l - 1];
      if (!mask.empty())
        for (std::size_t k = 0; k < da.data().size(); ++k) da.data()[k] *= mask.data()[k];
      activation_backward(acts_[l - 1], pass.outputs[l - 1], da);
      dz = std::move(da);
    }
    return lg;
  }

  LossGrad backward(const ForwardPass& pass, const Matrix& y, LossKind kind) const {
    return backward_with(params_, pass, y, kind);
  }

  void save(std::ostream& out) const {
    io::ModelWriter w(out, "dense_net");
    write_payload(w);
  }
  static DenseNet load(std::istream& in) {
    io::ModelReader r(in, "dense_net");
    return read_payload(r);
  }

  void write_payload(io::ModelWriter& w) const {
    std::vector<std::uint64_t> sizes(sizes_.begin(), sizes_.end());
    std::vector<std::uint64_t> acts;
    for (auto a : acts_) acts.push_back(static_cast<std::uint64_t>(a));
    w.u64s(sizes);
    w.u64s(acts);
    w.f64(dropout_);
    for (std::size_t l = 0; l < num_layers(); ++l) {
      w.f64s(weights(l));
      w.f64s(bias(l));
    }
  }
  static DenseNet read_payload(io::ModelReader& r) {
    DenseNet net;
    for (auto s : r.u64s()) net.sizes_.push_back(static_cast<std::size_t>(s));
    for (auto a : r.u64s()) {
      require(a <= 4, Errc::Io, "unknown activation tag");
      net.acts_.push_back(static_cast<Activation>(a));
    }
    net.dropout_ = r.f64();
    net.validate_architecture();
    net.build_offsets();
    net.params_.assign(net.param_count_, 0.0);
    for (std::size_t l = 0; l < net.num_layers(); ++l) {
      const auto w = r.f64s();
      const auto b = r.f64s();
      require(w.size() == net.sizes_[l] * net.sizes_[l + 1] && b.size() == net.sizes_[l + 1],
              Errc::Io, "weight block size mismatch");
      std::copy(w.begin(), w.end(), net.weights(l).begin());
      std::copy(b.begin(), b.end(), net.bias(l).begin());
    }
    return net;
  }

  friend bool operator==(const DenseNet& a, const DenseNet& b) {
    return a.sizes_ == b.sizes_ && a.acts_ == b.acts_ && a.dropout_ == b.dropout_ &&
           a.params_ == b.params_;
  }

 private:
  void validate_architecture() const {
    require(sizes_.size() >= 2, Errc::InvalidArgument, "need at least input and output sizes");
    require(acts_.size() + 1 == sizes_.size(), Errc::InvalidArgument,
            "one activation per layer required");
    for (auto s : sizes_) require(s >= 1, Errc::InvalidArgument, "layer size must be >= 1");
    for (std::size_t l = 0; l + 1 < acts_.size(); ++l)
      require(acts_[l] != Activation::Softmax, Errc::InvalidArgument,
              "softmax is only allowed on the output layer");
    require(dropout_ >= 0.0 && dropout_ < 1.0, Errc::InvalidArgument, "dropout must be in [0, 1)");
  }

  void build_offsets() {
    w_off_.clear();
    b_off_.clear();
    std::size_t off = 0;
    for (std::size_t l = 0; l < acts_.size(); ++l) {
      w_off_.push_back(off);
      off += sizes_[l] * sizes_[l + 1];
      b_off_.push_back(off);
      off += sizes_[l + 1];
    }
    param_count_ = off;
  }

  std::vector<std::size_t> sizes_;
  std::vector<Activation> acts_;
  double dropout_ = 0.0;
  std::vector<std::size_t> w_off_, b_off_;
  std::size_t param_count_ = 0;
  std::vector<double> params_;
};

/// Supervised objective for a DenseNet over (X, Y) with a held-out validation pair.
class DenseObjective {
 public:
  DenseObjective(const DenseNet& arch, const Matrix& x_train, const Matrix& y_train,
                 const Matrix& x_val, const Matrix& y_val, LossKind kind)
      : arch_(arch), xt_(x_train), yt_(y_train), xv_(x_val), yv_(y_val), kind_(kind) {
    require(xt_.rows() == yt_.rows() && xv_.rows() == yv_.rows(), Errc::ShapeMismatch,
            "feature and target row counts differ");
    require(xt_.rows() > 0 && xv_.rows() > 0, Errc::EmptySplit, "train and val sets must be non-empty");
  }

  std::size_t train_size() const { return xt_.rows(); }

  double batch_loss_grad(std::span<const double> p, std::span<const std::size_t> rows,
                         std::span<double> grad, Rng& rng) const {
    const Matrix xb = xt_.select_rows(rows);
    const Matrix yb = yt_.select_rows(rows);
    const auto pass = arch_.forward_with(p, xb, Mode::Train, &rng);
    const auto lg = arch_.backward_with(p, pass, yb, kind_);
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += lg.grad[i];
    return lg.loss;
  }

  double validation_loss(std::span<const double> p) const {
    const auto pass = arch_.forward_with(p, xv_, Mode::Eval, nullptr);
    return DenseNet::loss_value(pass.result(), yv_, kind_, arch_.activations().back());
  }

 private:
  const DenseNet& arch_;
  const Matrix& xt_;
  const Matrix& yt_;
  const Matrix& xv_;
  const Matrix& yv_;
  LossKind kind_;
};

/// Trains `net` in place; on return it holds the best-validation-epoch weights.
inline LossCurve train(DenseNet& net, const Matrix& x_train, const Matrix& y_train,
                       const Matrix& x_val, const Matrix& y_val, LossKind kind,
                       const TrainConfig& cfg) {
  DenseObjective obj(net, x_train, y_train, x_val, y_val, kind);
  std::vector<double> p = net.params();
  auto curve = train_params(obj, p, cfg);
  net.params() = std::move(p);
  return curve;
}

/// Central-difference check of backward() in eval mode; returns the worst relative error.
inline double grad_check(const DenseNet& net, const Matrix& x, const Matrix& y, LossKind kind,
                         double step = 1e-5) {
  const auto pass = net.forward(x, Mode::Eval);
  const auto lg = net.backward(pass, y, kind);
  auto loss = [&](std::span<const double> p) {
    return DenseNet::loss_value(net.forward_with(p, x, Mode::Eval, nullptr).result(), y, kind,
                                net.activations().back());
  };
  return max_relative_gradient_error(net.params(), loss, lg.grad, step);
}

/// One-hot encoding of labels in [0, classes).
inline Matrix one_hot(std::span<const int> labels, std::size_t classes) {
  Matrix m(labels.size(), classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require(labels[i] >= 0 && static_cast<std::size_t>(labels[i]) < classes, Errc::OutOfRange,
            "label out of range");
    m(i, static_cast<std::size_t>(labels[i])) = 1.0;
  }
  return m;
}

}  // namespace regimesig::nn
