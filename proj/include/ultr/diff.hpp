#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "ultr/common.hpp"

namespace ultr::diff {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

// Named parameter tensors with a parallel gradient buffer per tensor.
class ParamStore {
 public:
  using Handle = std::size_t;

  struct Entry {
    std::string name;
    Matrix value;
    Matrix grad;
  };

  Handle add_zero(std::string name, Eigen::Index rows, Eigen::Index cols) {
    entries_.push_back(
        {std::move(name), Matrix::Zero(rows, cols), Matrix::Zero(rows, cols)});
    return entries_.size() - 1;
  }

  // Uniform in +-sqrt(6 / (rows + cols)); fill order is row-major so the
  // result is a pure function of (shape, rng state).
  Handle add_glorot(std::string name, Eigen::Index rows, Eigen::Index cols,
                    Rng& rng) {
    double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::uniform_real_distribution<double> u(-limit, limit);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = u(rng);
    entries_.push_back({std::move(name), std::move(m), Matrix::Zero(rows, cols)});
    return entries_.size() - 1;
  }

  Matrix& value(Handle h) { return entries_[h].value; }
  const Matrix& value(Handle h) const { return entries_[h].value; }
  Matrix& grad(Handle h) { return entries_[h].grad; }
  const Matrix& grad(Handle h) const { return entries_[h].grad; }
  const Entry& entry(Handle h) const { return entries_[h]; }
  Entry& entry(Handle h) { return entries_[h]; }

  std::size_t tensor_count() const { return entries_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += static_cast<std::size_t>(e.value.size());
    return n;
  }

  void zero_grads() {
    for (auto& e : entries_) e.grad.setZero();
  }

  // value -= lr * grad (optionally scaled, e.g. 1/batch)
  void sgd_step(double lr, double scale = 1.0) {
    for (auto& e : entries_) e.value -= (lr * scale) * e.grad;
  }

  // grads must stay shape-aligned with values
  void check_invariants() const {
    for (const auto& e : entries_)
      if (e.grad.rows() != e.value.rows() || e.grad.cols() != e.value.cols())
        throw ShapeError("ParamStore: gradient shape diverged for " + e.name);
  }

 private:
  std::vector<Entry> entries_;
};

// ---------------------------------------------------------------------------
// elementwise nonlinearities

inline Matrix relu(const Matrix& x) { return x.cwiseMax(0.0); }

inline Matrix relu_backward(const Matrix& pre, const Matrix& dout) {
  return (pre.array() > 0.0).cast<double>() * dout.array();
}

inline Matrix tanh_fwd(const Matrix& x) { return x.array().tanh(); }

inline Matrix tanh_backward(const Matrix& out, const Matrix& dout) {
  return dout.array() * (1.0 - out.array().square());
}

inline Matrix sigmoid(const Matrix& x) {
  return 1.0 / (1.0 + (-x.array()).exp());
}

inline Matrix sigmoid_backward(const Matrix& out, const Matrix& dout) {
  return dout.array() * out.array() * (1.0 - out.array());
}

// ---------------------------------------------------------------------------
// softmax over the first n_real entries; padded tail gets probability 0

inline Vector softmax_masked(const Vector& scores, int n_real) {
  if (n_real <= 0) throw UsageError("softmax_masked: empty list");
  if (n_real > scores.size()) throw ShapeError("softmax_masked: n_real too large");
  Vector out = Vector::Zero(scores.size());
  double m = scores.head(n_real).maxCoeff();
  double denom = 0.0;
  for (int i = 0; i < n_real; ++i) {
    out[i] = std::exp(scores[i] - m);
    denom += out[i];
  }
  out.head(n_real) /= denom;
  return out;
}

inline Vector softmax(const Vector& scores) {
  return softmax_masked(scores, static_cast<int>(scores.size()));
}

// loss = -sum_i target_i * log softmax(logits)_i; grad is softmax - target
struct SoftmaxXent {
  double loss;
  Vector grad;
};

inline SoftmaxXent softmax_xent(const Vector& logits, const Vector& target) {
  if (logits.size() != target.size())
    throw ShapeError("softmax_xent: size mismatch");
  Vector p = softmax(logits);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i)
    if (target[i] != 0.0) loss -= target[i] * std::log(p[i]);
  return {loss, p * target.sum() - target};
}

// ---------------------------------------------------------------------------
// dense linear map y = x W + 1 b^T

struct LinearCache {
  Matrix in;
};

class Linear {
 public:
  Linear() = default;

  Linear(ParamStore& store, const std::string& name, Eigen::Index in_dim,
         Eigen::Index out_dim, Rng& rng, bool bias = true)
      : has_bias_(bias), in_dim_(in_dim), out_dim_(out_dim) {
    w_ = store.add_glorot(name + ".w", in_dim, out_dim, rng);
    if (bias) b_ = store.add_zero(name + ".b", out_dim, 1);
  }

  Matrix forward(const ParamStore& store, const Matrix& x,
                 LinearCache& cache) const {
    if (x.cols() != in_dim_)
      throw ShapeError("linear: input has " + std::to_string(x.cols()) +
                       " columns, expected " + std::to_string(in_dim_));
    cache.in = x;
    Matrix y = x * store.value(w_);
    if (has_bias_) y.rowwise() += store.value(b_).col(0).transpose();
    return y;
  }

  Matrix backward(ParamStore& store, const LinearCache& cache,
                  const Matrix& dy) const {
    store.grad(w_) += cache.in.transpose() * dy;
    if (has_bias_) store.grad(b_) += dy.colwise().sum().transpose();
    return dy * store.value(w_).transpose();
  }

  Eigen::Index in_dim() const { return in_dim_; }
  Eigen::Index out_dim() const { return out_dim_; }

 private:
  ParamStore::Handle w_ = 0, b_ = 0;
  bool has_bias_ = true;
  Eigen::Index in_dim_ = 0, out_dim_ = 0;
};

// ---------------------------------------------------------------------------
// layer normalization across each row, with learned gain and shift

struct LayerNormCache {
  Matrix xhat;
  Vector inv_std;
};

class LayerNorm {
 public:
  static constexpr double kEps = 1e-5;

  LayerNorm() = default;

  LayerNorm(ParamStore& store, const std::string& name, Eigen::Index dim)
      : dim_(dim) {
    gamma_ = store.add_zero(name + ".gamma", dim, 1);
    beta_ = store.add_zero(name + ".beta", dim, 1);
    store.value(gamma_).setOnes();
  }

  Matrix forward(const ParamStore& store, const Matrix& x,
                 LayerNormCache& cache) const {
    if (x.cols() != dim_) throw ShapeError("layernorm: dimension mismatch");
    const auto n = static_cast<double>(x.cols());
    cache.xhat.resize(x.rows(), x.cols());
    cache.inv_std.resize(x.rows());
    Matrix y(x.rows(), x.cols());
    const RowVector gamma = store.value(gamma_).col(0).transpose();
    const RowVector beta = store.value(beta_).col(0).transpose();
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      double mu = x.row(i).mean();
      double var = (x.row(i).array() - mu).square().sum() / n;
      double inv = 1.0 / std::sqrt(var + kEps);
      cache.inv_std[i] = inv;
      cache.xhat.row(i) = (x.row(i).array() - mu) * inv;
      y.row(i) = cache.xhat.row(i).cwiseProduct(gamma) + beta;
    }
    return y;
  }

  Matrix backward(ParamStore& store, const LayerNormCache& cache,
                  const Matrix& dy) const {
    const auto n = static_cast<double>(dy.cols());
    store.grad(gamma_) +=
        (dy.array() * cache.xhat.array()).colwise().sum().transpose().matrix();
    store.grad(beta_) += dy.colwise().sum().transpose();
    const RowVector gamma = store.value(gamma_).col(0).transpose();
    Matrix dx(dy.rows(), dy.cols());
    for (Eigen::Index i = 0; i < dy.rows(); ++i) {
      RowVector dxhat = dy.row(i).cwiseProduct(gamma);
      double m1 = dxhat.sum() / n;
      double m2 = dxhat.cwiseProduct(cache.xhat.row(i)).sum() / n;
      dx.row(i) = cache.inv_std[i] *
                  (dxhat.array() - m1 - cache.xhat.row(i).array() * m2);
    }
    return dx;
  }

 private:
  ParamStore::Handle gamma_ = 0, beta_ = 0;
  Eigen::Index dim_ = 0;
};

// ---------------------------------------------------------------------------
// gated recurrent cell
//
//   z = sigmoid(x Wz + h Uz + bz)
//   r = sigmoid(x Wr + h Ur + br)
//   hbar = tanh(x Wh + (r . h) Uh + bh)
//   h' = (1 - z) . h + z . hbar

struct GruStepCache {
  RowVector x, h_prev, z, r, hbar;
};

class GruCell {
 public:
  GruCell() = default;

  GruCell(ParamStore& store, const std::string& name, Eigen::Index in_dim,
          Eigen::Index hidden, Rng& rng)
      : in_dim_(in_dim), hidden_(hidden) {
    wz_ = store.add_glorot(name + ".wz", in_dim, hidden, rng);
    uz_ = store.add_glorot(name + ".uz", hidden, hidden, rng);
    bz_ = store.add_zero(name + ".bz", hidden, 1);
    wr_ = store.add_glorot(name + ".wr", in_dim, hidden, rng);
    ur_ = store.add_glorot(name + ".ur", hidden, hidden, rng);
    br_ = store.add_zero(name + ".br", hidden, 1);
    wh_ = store.add_glorot(name + ".wh", in_dim, hidden, rng);
    uh_ = store.add_glorot(name + ".uh", hidden, hidden, rng);
    bh_ = store.add_zero(name + ".bh", hidden, 1);
  }

  RowVector step(const ParamStore& store, const RowVector& x,
                 const RowVector& h_prev, GruStepCache& cache) const {
    if (x.size() != in_dim_ || h_prev.size() != hidden_)
      throw ShapeError("gru: input/state dimension mismatch");
    cache.x = x;
    cache.h_prev = h_prev;
    RowVector zpre = x * store.value(wz_) + h_prev * store.value(uz_) +
                     store.value(bz_).col(0).transpose();
    cache.z = sigmoid(zpre);
    RowVector rpre = x * store.value(wr_) + h_prev * store.value(ur_) +
                     store.value(br_).col(0).transpose();
    cache.r = sigmoid(rpre);
    RowVector hpre = x * store.value(wh_) +
                     cache.r.cwiseProduct(h_prev) * store.value(uh_) +
                     store.value(bh_).col(0).transpose();
    cache.hbar = hpre.array().tanh();
    return (1.0 - cache.z.array()) * h_prev.array() +
           cache.z.array() * cache.hbar.array();
  }

  // Returns dLoss/dh_prev and accumulates dLoss/dx into dx.
  RowVector backward_step(ParamStore& store, const GruStepCache& c,
                          const RowVector& dh, RowVector& dx) const {
    RowVector dz = dh.cwiseProduct(c.hbar - c.h_prev);
    RowVector dhbar = dh.cwiseProduct(c.z);
    RowVector dh_prev =
        dh.cwiseProduct(RowVector::Ones(hidden_) - c.z);

    RowVector dhpre =
        dhbar.array() * (1.0 - c.hbar.array().square());
    store.grad(wh_) += c.x.transpose() * dhpre;
    store.grad(uh_) += c.r.cwiseProduct(c.h_prev).transpose() * dhpre;
    store.grad(bh_) += dhpre.transpose();
    RowVector drh = dhpre * store.value(uh_).transpose();
    RowVector dr = drh.cwiseProduct(c.h_prev);
    dh_prev += drh.cwiseProduct(c.r);
    dx = dhpre * store.value(wh_).transpose();

    RowVector drpre = dr.array() * c.r.array() * (1.0 - c.r.array());
    store.grad(wr_) += c.x.transpose() * drpre;
    store.grad(ur_) += c.h_prev.transpose() * drpre;
    store.grad(br_) += drpre.transpose();
    dh_prev += drpre * store.value(ur_).transpose();
    dx += drpre * store.value(wr_).transpose();

    RowVector dzpre = dz.array() * c.z.array() * (1.0 - c.z.array());
    store.grad(wz_) += c.x.transpose() * dzpre;
    store.grad(uz_) += c.h_prev.transpose() * dzpre;
    store.grad(bz_) += dzpre.transpose();
    dh_prev += dzpre * store.value(uz_).transpose();
    dx += dzpre * store.value(wz_).transpose();

    return dh_prev;
  }

  Eigen::Index hidden() const { return hidden_; }
  Eigen::Index in_dim() const { return in_dim_; }

 private:
  ParamStore::Handle wz_ = 0, uz_ = 0, bz_ = 0;
  ParamStore::Handle wr_ = 0, ur_ = 0, br_ = 0;
  ParamStore::Handle wh_ = 0, uh_ = 0, bh_ = 0;
  Eigen::Index in_dim_ = 0, hidden_ = 0;
};

// ---------------------------------------------------------------------------
// scaled dot-product multi-head self-attention over stacked lists
//
// The input stacks `lists` lists of `list_len` rows each. Attention never
// crosses list boundaries, carries no positional signal, and masks padded
// rows (row index >= n_real) out of the keys.

struct AttentionCache {
  Matrix in, q, k, v, ctx;
  std::vector<Matrix> attn;  // one L x L matrix per (list, head)
  int lists = 0, list_len = 0;
  std::vector<int> n_real;
};

class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;

  MultiHeadAttention(ParamStore& store, const std::string& name,
                     Eigen::Index model_dim, int heads, Rng& rng)
      : dim_(model_dim), heads_(heads) {
    if (heads < 1 || model_dim % heads != 0)
      throw ConfigError("attention: model dim must divide evenly by heads");
    wq_ = store.add_glorot(name + ".wq", model_dim, model_dim, rng);
    wk_ = store.add_glorot(name + ".wk", model_dim, model_dim, rng);
    wv_ = store.add_glorot(name + ".wv", model_dim, model_dim, rng);
    wo_ = store.add_glorot(name + ".wo", model_dim, model_dim, rng);
  }

  Matrix forward(const ParamStore& store, const Matrix& in, int lists,
                 int list_len, const std::vector<int>& n_real,
                 AttentionCache& cache) const {
    if (in.cols() != dim_) throw ShapeError("attention: model dim mismatch");
    if (in.rows() != static_cast<Eigen::Index>(lists) * list_len)
      throw ShapeError("attention: stacked rows do not match geometry");
    const Eigen::Index dk = dim_ / heads_;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

    cache.in = in;
    cache.lists = lists;
    cache.list_len = list_len;
    cache.n_real = n_real;
    cache.q = in * store.value(wq_);
    cache.k = in * store.value(wk_);
    cache.v = in * store.value(wv_);
    cache.attn.assign(static_cast<std::size_t>(lists) * heads_, Matrix());
    cache.ctx.resize(in.rows(), dim_);

    for (int b = 0; b < lists; ++b) {
      const Eigen::Index row0 = static_cast<Eigen::Index>(b) * list_len;
      const int nr = n_real[static_cast<std::size_t>(b)];
      if (nr < 1) throw UsageError("attention: empty list in batch");
      for (int h = 0; h < heads_; ++h) {
        auto qb = cache.q.block(row0, h * dk, list_len, dk);
        auto kb = cache.k.block(row0, h * dk, list_len, dk);
        auto vb = cache.v.block(row0, h * dk, list_len, dk);
        Matrix logits = qb * kb.transpose() * scale;
        Matrix& a = cache.attn[static_cast<std::size_t>(b) * heads_ + h];
        a = Matrix::Zero(list_len, list_len);
        for (int i = 0; i < list_len; ++i) {
          double m = logits.row(i).head(nr).maxCoeff();
          double denom = 0.0;
          for (int j = 0; j < nr; ++j) {
            a(i, j) = std::exp(logits(i, j) - m);
            denom += a(i, j);
          }
          a.row(i).head(nr) /= denom;
        }
        cache.ctx.block(row0, h * dk, list_len, dk) = a * vb;
      }
    }
    return cache.ctx * store.value(wo_);
  }

  Matrix backward(ParamStore& store, const AttentionCache& cache,
                  const Matrix& dout) const {
    const Eigen::Index dk = dim_ / heads_;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

    Matrix dctx = dout * store.value(wo_).transpose();
    store.grad(wo_) += cache.ctx.transpose() * dout;

    Matrix dq = Matrix::Zero(cache.q.rows(), dim_);
    Matrix dkm = Matrix::Zero(cache.k.rows(), dim_);
    Matrix dv = Matrix::Zero(cache.v.rows(), dim_);

    for (int b = 0; b < cache.lists; ++b) {
      const Eigen::Index row0 = static_cast<Eigen::Index>(b) * cache.list_len;
      for (int h = 0; h < heads_; ++h) {
        const Matrix& a = cache.attn[static_cast<std::size_t>(b) * heads_ + h];
        auto qb = cache.q.block(row0, h * dk, cache.list_len, dk);
        auto kb = cache.k.block(row0, h * dk, cache.list_len, dk);
        auto vb = cache.v.block(row0, h * dk, cache.list_len, dk);
        Matrix dcb = dctx.block(row0, h * dk, cache.list_len, dk);

        Matrix da = dcb * vb.transpose();
        dv.block(row0, h * dk, cache.list_len, dk) += a.transpose() * dcb;
        Vector rowdot = (da.array() * a.array()).rowwise().sum();
        Matrix ds = a.array() * (da.colwise() - rowdot).array();
        dq.block(row0, h * dk, cache.list_len, dk) += ds * kb * scale;
        dkm.block(row0, h * dk, cache.list_len, dk) +=
            ds.transpose() * qb * scale;
      }
    }

    store.grad(wq_) += cache.in.transpose() * dq;
    store.grad(wk_) += cache.in.transpose() * dkm;
    store.grad(wv_) += cache.in.transpose() * dv;
    return dq * store.value(wq_).transpose() +
           dkm * store.value(wk_).transpose() +
           dv * store.value(wv_).transpose();
  }

  Eigen::Index dim() const { return dim_; }
  int heads() const { return heads_; }

 private:
  ParamStore::Handle wq_ = 0, wk_ = 0, wv_ = 0, wo_ = 0;
  Eigen::Index dim_ = 0;
  int heads_ = 0;
};

// ---------------------------------------------------------------------------
// central finite-difference gradient checker

struct GradCheckReport {
  struct PerParam {
    std::string name;
    double max_rel_err = 0.0;
    Eigen::Index row = 0, col = 0;
    double analytic = 0.0, numeric = 0.0;
  };
  std::vector<PerParam> params;
  bool pass = true;
  double max_rel_err = 0.0;
  std::string worst_param;
};

// loss_fn evaluates the scalar loss at the current parameter values.
// grad_fn must zero the gradient buffers, run forward and backward, and
// leave dLoss/dParam in ParamStore::grad.
inline GradCheckReport grad_check(ParamStore& params,
                                  const std::function<double()>& loss_fn,
                                  const std::function<void()>& grad_fn,
                                  double step = 1e-5, double tolerance = 1e-4,
                                  double rel_floor = 1e-6) {
  if (step <= 0.0) throw ConfigError("grad_check: step must be positive");
  grad_fn();
  std::vector<Matrix> analytic;
  analytic.reserve(params.tensor_count());
  for (std::size_t t = 0; t < params.tensor_count(); ++t)
    analytic.push_back(params.grad(t));

  GradCheckReport report;
  for (std::size_t t = 0; t < params.tensor_count(); ++t) {
    GradCheckReport::PerParam pp;
    pp.name = params.entry(t).name;
    Matrix& value = params.value(t);
    for (Eigen::Index i = 0; i < value.rows(); ++i) {
      for (Eigen::Index j = 0; j < value.cols(); ++j) {
        const double saved = value(i, j);
        value(i, j) = saved + step;
        double lp = loss_fn();
        value(i, j) = saved - step;
        double lm = loss_fn();
        value(i, j) = saved;
        if (!std::isfinite(lp) || !std::isfinite(lm))
          throw CheckError("grad_check: non-finite loss probing " + pp.name);
        double numeric = (lp - lm) / (2.0 * step);
        double a = analytic[t](i, j);
        double denom = std::max({std::abs(a), std::abs(numeric), rel_floor});
        double rel = std::abs(a - numeric) / denom;
        if (rel > pp.max_rel_err) {
          pp.max_rel_err = rel;
          pp.row = i;
          pp.col = j;
          pp.analytic = a;
          pp.numeric = numeric;
        }
      }
    }
    if (pp.max_rel_err > report.max_rel_err) {
      report.max_rel_err = pp.max_rel_err;
      report.worst_param = pp.name;
    }
    report.params.push_back(std::move(pp));
  }
  report.pass = report.max_rel_err < tolerance;
  return report;
}

}  // namespace ultr::diff
