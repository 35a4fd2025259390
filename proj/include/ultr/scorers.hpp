#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "ultr/checkpoint.hpp"
#include "ultr/common.hpp"
#include "ultr/diff.hpp"

namespace ultr::scorers {

using diff::Matrix;
using diff::RowVector;
using diff::Vector;

enum class Kind { kUnivariateMlp, kSetAttention, kSequenceGru };

// Input order consumed by the recurrent scorer: the list as given, the
// reverse of it, or a seeded shuffle.
enum class OrderMode { kInit, kRever, kRand };

struct Arch {
  std::vector<int> mlp_hidden{64, 32};
  int attn_blocks = 2;
  int attn_heads = 4;
  int attn_dim = 64;
  int attn_ffn = 128;
  int gru_hidden = 64;
};

struct ScorerSpec {
  Kind kind = Kind::kUnivariateMlp;
  OrderMode order_mode = OrderMode::kInit;  // meaningful for kSequenceGru only
  Arch arch;
  int feature_dim = 0;
};

inline std::string kind_to_string(Kind kind, OrderMode mode) {
  switch (kind) {
    case Kind::kUnivariateMlp: return "univariate_mlp";
    case Kind::kSetAttention: return "set_attention";
    case Kind::kSequenceGru:
      switch (mode) {
        case OrderMode::kInit: return "sequence_gru:init";
        case OrderMode::kRever: return "sequence_gru:rever";
        case OrderMode::kRand: return "sequence_gru:rand";
      }
  }
  throw DomainError("unknown scorer kind");
}

inline std::pair<Kind, OrderMode> kind_from_string(const std::string& s) {
  if (s == "univariate_mlp") return {Kind::kUnivariateMlp, OrderMode::kInit};
  if (s == "set_attention") return {Kind::kSetAttention, OrderMode::kInit};
  if (s == "sequence_gru" || s == "sequence_gru:init")
    return {Kind::kSequenceGru, OrderMode::kInit};
  if (s == "sequence_gru:rever") return {Kind::kSequenceGru, OrderMode::kRever};
  if (s == "sequence_gru:rand") return {Kind::kSequenceGru, OrderMode::kRand};
  throw ConfigError("unknown scorer kind: " + s);
}

// A stack of `lists` ranked lists, `list_len` rows each; list b occupies
// rows [b*list_len, (b+1)*list_len). Rows at or past n_real[b] are padding.
struct ListBatch {
  Matrix x;
  int lists = 0;
  int list_len = 0;
  std::vector<int> n_real;

  static ListBatch single(const Matrix& features, int n_real = -1) {
    ListBatch b;
    b.x = features;
    b.lists = 1;
    b.list_len = static_cast<int>(features.rows());
    b.n_real = {n_real < 0 ? b.list_len : n_real};
    return b;
  }
};

struct AttnBlockTrace {
  diff::AttentionCache mha;
  diff::LayerNormCache ln1, ln2;
  diff::LinearCache ffn0, ffn1;
  Matrix in, ffn_pre, x1;
};

struct Trace {
  // univariate mlp
  std::vector<diff::LinearCache> mlp_lin;
  std::vector<Matrix> mlp_pre;
  // set attention
  diff::LinearCache attn_proj, attn_head;
  std::vector<AttnBlockTrace> attn_blocks;
  // sequence gru
  std::vector<std::vector<int>> gru_orders;                 // per list
  std::vector<std::vector<diff::GruStepCache>> gru_steps;   // per list per step
  std::vector<Matrix> gru_states;                           // per list, n x hidden
};

namespace detail {

struct AttnBlock {
  diff::MultiHeadAttention mha;
  diff::LayerNorm ln1, ln2;
  diff::Linear ffn0, ffn1;
};

}  // namespace detail

// A parameterized list-scoring function: one raw score per document.
// kUnivariateMlp scores each row independently; kSetAttention reads the
// whole list through self-attention with no positional signal;
// kSequenceGru consumes rows in its order mode and scores each document
// against the final recurrent state through a bilinear head.
class Scorer {
 public:
  Scorer() = default;

  static Scorer init(const ScorerSpec& spec, std::uint64_t seed) {
    if (spec.feature_dim < 1)
      throw ConfigError("scorer: feature_dim must be positive");
    Scorer s;
    s.spec_ = spec;
    Rng rng(derive_seed(seed, "scorer_init"));
    switch (spec.kind) {
      case Kind::kUnivariateMlp: {
        for (int h : spec.arch.mlp_hidden)
          if (h < 1) throw ConfigError("scorer: mlp hidden sizes must be positive");
        int in = spec.feature_dim;
        int layer = 0;
        for (int h : spec.arch.mlp_hidden) {
          s.mlp_.emplace_back(s.params_, "mlp." + std::to_string(layer++), in, h,
                              rng);
          in = h;
        }
        s.mlp_.emplace_back(s.params_, "mlp." + std::to_string(layer), in, 1, rng);
        break;
      }
      case Kind::kSetAttention: {
        const Arch& a = spec.arch;
        if (a.attn_blocks < 1 || a.attn_heads < 1 || a.attn_dim < 1 ||
            a.attn_ffn < 1)
          throw ConfigError("scorer: attention arch fields must be positive");
        if (a.attn_dim % a.attn_heads != 0)
          throw ConfigError("scorer: attention dim must divide by heads");
        s.attn_proj_ = diff::Linear(s.params_, "attn.proj", spec.feature_dim,
                                    a.attn_dim, rng);
        for (int b = 0; b < a.attn_blocks; ++b) {
          std::string base = "attn." + std::to_string(b);
          detail::AttnBlock blk;
          blk.mha = diff::MultiHeadAttention(s.params_, base + ".mha",
                                             a.attn_dim, a.attn_heads, rng);
          blk.ln1 = diff::LayerNorm(s.params_, base + ".ln1", a.attn_dim);
          blk.ffn0 =
              diff::Linear(s.params_, base + ".ffn0", a.attn_dim, a.attn_ffn, rng);
          blk.ffn1 =
              diff::Linear(s.params_, base + ".ffn1", a.attn_ffn, a.attn_dim, rng);
          blk.ln2 = diff::LayerNorm(s.params_, base + ".ln2", a.attn_dim);
          s.attn_blocks_.push_back(std::move(blk));
        }
        s.attn_head_ =
            diff::Linear(s.params_, "attn.out", a.attn_dim, 1, rng);
        break;
      }
      case Kind::kSequenceGru: {
        if (spec.arch.gru_hidden < 1)
          throw ConfigError("scorer: gru hidden size must be positive");
        s.gru_ = diff::GruCell(s.params_, "gru.cell", spec.feature_dim,
                               spec.arch.gru_hidden, rng);
        s.gru_bilinear_ = s.params_.add_glorot(
            "gru.bilinear", spec.arch.gru_hidden, spec.arch.gru_hidden, rng);
        break;
      }
    }
    return s;
  }

  const ScorerSpec& spec() const { return spec_; }
  int feature_dim() const { return spec_.feature_dim; }
  diff::ParamStore& params() { return params_; }
  const diff::ParamStore& params() const { return params_; }
  std::string name() const { return kind_to_string(spec_.kind, spec_.order_mode); }

  // Raw scores for a stacked batch, one row per list. Padded positions get
  // score 0 and are excluded from attention keys and recurrent context;
  // mask them before any softmax.
  Matrix forward(const ListBatch& batch, std::uint64_t order_seed,
                 Trace& trace) const {
    if (batch.lists < 1 || batch.list_len < 1)
      throw UsageError("scorer: empty list");
    if (batch.x.cols() != spec_.feature_dim)
      throw ShapeError("scorer: feature_dim mismatch");
    if (batch.x.rows() !=
        static_cast<Eigen::Index>(batch.lists) * batch.list_len)
      throw ShapeError("scorer: stacked rows do not match geometry");
    for (int nr : batch.n_real)
      if (nr < 1) throw UsageError("scorer: empty list");

    switch (spec_.kind) {
      case Kind::kUnivariateMlp: return forward_mlp(batch, trace);
      case Kind::kSetAttention: return forward_attention(batch, trace);
      case Kind::kSequenceGru: return forward_gru(batch, order_seed, trace);
    }
    throw DomainError("unknown scorer kind");
  }

  // Accumulates dLoss/dParams into params().grad. dscores is lists x
  // list_len; entries at padded positions must be zero.
  void backward(const ListBatch& batch, const Trace& trace,
                const Matrix& dscores) {
    if (dscores.rows() != batch.lists || dscores.cols() != batch.list_len)
      throw ShapeError("scorer backward: dscores shape mismatch");
    switch (spec_.kind) {
      case Kind::kUnivariateMlp: backward_mlp(batch, trace, dscores); return;
      case Kind::kSetAttention: backward_attention(batch, trace, dscores); return;
      case Kind::kSequenceGru: backward_gru(batch, trace, dscores); return;
    }
  }

  // Score one full list (no padding).
  Vector score(const Matrix& features, std::uint64_t order_seed = 0) const {
    Trace trace;
    return forward(ListBatch::single(features), order_seed, trace)
        .row(0)
        .transpose();
  }

  void save(std::ostream& out) const {
    std::map<std::string, std::string> meta;
    meta["kind"] = name();
    meta["feature_dim"] = std::to_string(spec_.feature_dim);
    std::string hidden;
    for (int h : spec_.arch.mlp_hidden)
      hidden += (hidden.empty() ? "" : ",") + std::to_string(h);
    meta["mlp_hidden"] = hidden;
    meta["attn_blocks"] = std::to_string(spec_.arch.attn_blocks);
    meta["attn_heads"] = std::to_string(spec_.arch.attn_heads);
    meta["attn_dim"] = std::to_string(spec_.arch.attn_dim);
    meta["attn_ffn"] = std::to_string(spec_.arch.attn_ffn);
    meta["gru_hidden"] = std::to_string(spec_.arch.gru_hidden);
    ckpt::save(out, params_, meta);
  }

  void save_file(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write scorer checkpoint: " + path);
    save(f);
  }

  static Scorer load(std::istream& in) {
    ckpt::Loaded loaded = ckpt::load(in);
    auto need = [&](const std::string& key) -> const std::string& {
      auto it = loaded.meta.find(key);
      if (it == loaded.meta.end())
        throw ParseError("scorer checkpoint: missing meta key " + key);
      return it->second;
    };
    ScorerSpec spec;
    std::tie(spec.kind, spec.order_mode) = kind_from_string(need("kind"));
    spec.feature_dim = std::stoi(need("feature_dim"));
    spec.arch.mlp_hidden.clear();
    std::istringstream hs(need("mlp_hidden"));
    std::string tok;
    while (std::getline(hs, tok, ','))
      if (!tok.empty()) spec.arch.mlp_hidden.push_back(std::stoi(tok));
    spec.arch.attn_blocks = std::stoi(need("attn_blocks"));
    spec.arch.attn_heads = std::stoi(need("attn_heads"));
    spec.arch.attn_dim = std::stoi(need("attn_dim"));
    spec.arch.attn_ffn = std::stoi(need("attn_ffn"));
    spec.arch.gru_hidden = std::stoi(need("gru_hidden"));
    Scorer s = init(spec, 0);
    ckpt::restore_values(s.params_, loaded.params);
    return s;
  }

  static Scorer load_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open scorer checkpoint: " + path);
    return load(f);
  }

  // Consumption order of one list for the recurrent scorer.
  std::vector<int> consumption_order(int n_real, int list_index,
                                     std::uint64_t order_seed) const {
    std::vector<int> order(static_cast<std::size_t>(n_real));
    std::iota(order.begin(), order.end(), 0);
    switch (spec_.order_mode) {
      case OrderMode::kInit: break;
      case OrderMode::kRever: std::reverse(order.begin(), order.end()); break;
      case OrderMode::kRand: {
        Rng rng(derive_seed(order_seed, static_cast<std::uint64_t>(list_index)));
        std::shuffle(order.begin(), order.end(), rng);
        break;
      }
    }
    return order;
  }

 private:
  Matrix forward_mlp(const ListBatch& batch, Trace& trace) const {
    trace.mlp_lin.assign(mlp_.size(), {});
    trace.mlp_pre.assign(mlp_.size(), {});
    Matrix a = batch.x;
    for (std::size_t l = 0; l < mlp_.size(); ++l) {
      Matrix pre = mlp_[l].forward(params_, a, trace.mlp_lin[l]);
      trace.mlp_pre[l] = pre;
      a = l + 1 < mlp_.size() ? diff::relu(pre) : pre;
    }
    return reshape_scores(a, batch);
  }

  void backward_mlp(const ListBatch& batch, const Trace& trace,
                    const Matrix& dscores) {
    Matrix d = flatten_dscores(dscores, batch);
    for (std::size_t l = mlp_.size(); l-- > 0;) {
      if (l + 1 < mlp_.size()) d = diff::relu_backward(trace.mlp_pre[l], d);
      d = mlp_[l].backward(params_, trace.mlp_lin[l], d);
    }
  }

  Matrix forward_attention(const ListBatch& batch, Trace& trace) const {
    trace.attn_blocks.assign(attn_blocks_.size(), {});
    Matrix a = attn_proj_.forward(params_, batch.x, trace.attn_proj);
    for (std::size_t b = 0; b < attn_blocks_.size(); ++b) {
      const auto& blk = attn_blocks_[b];
      AttnBlockTrace& t = trace.attn_blocks[b];
      t.in = a;
      Matrix attn_out = blk.mha.forward(params_, a, batch.lists, batch.list_len,
                                        batch.n_real, t.mha);
      Matrix x1 = blk.ln1.forward(params_, a + attn_out, t.ln1);
      t.x1 = x1;
      t.ffn_pre = blk.ffn0.forward(params_, x1, t.ffn0);
      Matrix f = blk.ffn1.forward(params_, diff::relu(t.ffn_pre), t.ffn1);
      a = blk.ln2.forward(params_, x1 + f, t.ln2);
    }
    Matrix s = attn_head_.forward(params_, a, trace.attn_head);
    return reshape_scores(s, batch);
  }

  void backward_attention(const ListBatch& batch, const Trace& trace,
                          const Matrix& dscores) {
    Matrix d = attn_head_.backward(params_, trace.attn_head,
                                   flatten_dscores(dscores, batch));
    for (std::size_t b = attn_blocks_.size(); b-- > 0;) {
      auto& blk = attn_blocks_[b];
      const AttnBlockTrace& t = trace.attn_blocks[b];
      Matrix dr2 = blk.ln2.backward(params_, t.ln2, d);
      Matrix dfact = blk.ffn1.backward(params_, t.ffn1, dr2);
      Matrix dx1 = dr2 + blk.ffn0.backward(params_, t.ffn0,
                                           diff::relu_backward(t.ffn_pre, dfact));
      Matrix dr1 = blk.ln1.backward(params_, t.ln1, dx1);
      d = dr1 + blk.mha.backward(params_, t.mha, dr1);
    }
    attn_proj_.backward(params_, trace.attn_proj, d);
  }

  Matrix forward_gru(const ListBatch& batch, std::uint64_t order_seed,
                     Trace& trace) const {
    const int hid = spec_.arch.gru_hidden;
    trace.gru_orders.assign(static_cast<std::size_t>(batch.lists), {});
    trace.gru_steps.assign(static_cast<std::size_t>(batch.lists), {});
    trace.gru_states.assign(static_cast<std::size_t>(batch.lists), {});
    Matrix scores = Matrix::Zero(batch.lists, batch.list_len);
    const Matrix& bilinear = params_.value(gru_bilinear_);

    for (int b = 0; b < batch.lists; ++b) {
      const int nr = batch.n_real[static_cast<std::size_t>(b)];
      const Eigen::Index row0 = static_cast<Eigen::Index>(b) * batch.list_len;
      auto order = consumption_order(nr, b, order_seed);
      auto& steps = trace.gru_steps[static_cast<std::size_t>(b)];
      Matrix& states = trace.gru_states[static_cast<std::size_t>(b)];
      steps.resize(static_cast<std::size_t>(nr));
      states.resize(nr, hid);

      RowVector h = RowVector::Zero(hid);
      for (int t = 0; t < nr; ++t) {
        RowVector x = batch.x.row(row0 + order[static_cast<std::size_t>(t)]);
        h = gru_.step(params_, x, h, steps[static_cast<std::size_t>(t)]);
        states.row(t) = h;
      }
      RowVector context = states.row(nr - 1);
      Vector projected = bilinear * context.transpose();
      for (int t = 0; t < nr; ++t)
        scores(b, order[static_cast<std::size_t>(t)]) =
            states.row(t).dot(projected.transpose());
      trace.gru_orders[static_cast<std::size_t>(b)] = std::move(order);
    }
    return scores;
  }

  void backward_gru(const ListBatch& batch, const Trace& trace,
                    const Matrix& dscores) {
    const int hid = spec_.arch.gru_hidden;
    const Matrix& bilinear = params_.value(gru_bilinear_);
    Matrix dbilinear = Matrix::Zero(hid, hid);

    for (int b = 0; b < batch.lists; ++b) {
      const auto& order = trace.gru_orders[static_cast<std::size_t>(b)];
      const auto& steps = trace.gru_steps[static_cast<std::size_t>(b)];
      const Matrix& states = trace.gru_states[static_cast<std::size_t>(b)];
      const int nr = static_cast<int>(order.size());
      const RowVector context = states.row(nr - 1);

      // score(t) = states(t) . B . context
      Matrix dstate = Matrix::Zero(nr, hid);
      RowVector dcontext = RowVector::Zero(hid);
      for (int t = 0; t < nr; ++t) {
        double ds = dscores(b, order[static_cast<std::size_t>(t)]);
        if (ds == 0.0) continue;
        dstate.row(t) += ds * (context * bilinear.transpose());
        dcontext += ds * (states.row(t) * bilinear);
        dbilinear += ds * states.row(t).transpose() * context;
      }
      dstate.row(nr - 1) += dcontext;

      RowVector dh = RowVector::Zero(hid);
      for (int t = nr - 1; t >= 0; --t) {
        dh += dstate.row(t);
        RowVector dx;
        dh = gru_.backward_step(params_, steps[static_cast<std::size_t>(t)], dh,
                                dx);
        // dLoss/dx is discarded: features are inputs, not parameters
      }
    }
    params_.grad(gru_bilinear_) += dbilinear;
  }

  Matrix reshape_scores(const Matrix& flat, const ListBatch& batch) const {
    Matrix out = Matrix::Zero(batch.lists, batch.list_len);
    for (int b = 0; b < batch.lists; ++b)
      for (int i = 0; i < batch.list_len; ++i)
        if (i < batch.n_real[static_cast<std::size_t>(b)])
          out(b, i) = flat(static_cast<Eigen::Index>(b) * batch.list_len + i, 0);
    return out;
  }

  Matrix flatten_dscores(const Matrix& dscores, const ListBatch& batch) const {
    Matrix d = Matrix::Zero(batch.x.rows(), 1);
    for (int b = 0; b < batch.lists; ++b)
      for (int i = 0; i < batch.n_real[static_cast<std::size_t>(b)]; ++i)
        d(static_cast<Eigen::Index>(b) * batch.list_len + i, 0) = dscores(b, i);
    return d;
  }

  ScorerSpec spec_;
  diff::ParamStore params_;

  std::vector<diff::Linear> mlp_;

  diff::Linear attn_proj_, attn_head_;
  std::vector<detail::AttnBlock> attn_blocks_;

  diff::GruCell gru_;
  diff::ParamStore::Handle gru_bilinear_ = 0;
};

}  // namespace ultr::scorers
