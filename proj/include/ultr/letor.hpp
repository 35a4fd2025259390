#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "ultr/common.hpp"

namespace ultr::letor {

struct Document {
  Eigen::VectorXd features;
  int label = 0;
};

struct Query {
  std::string qid;
  std::vector<Document> documents;
};

struct Dataset {
  std::vector<Query> queries;
  int feature_dim = 0;
  int max_label = 0;

  std::size_t total_documents() const {
    std::size_t n = 0;
    for (const auto& q : queries) n += q.documents.size();
    return n;
  }

  // N x H feature matrix of one query, rows in stored document order
  Eigen::MatrixXd feature_matrix(std::size_t query_index) const {
    const Query& q = queries.at(query_index);
    Eigen::MatrixXd x(static_cast<Eigen::Index>(q.documents.size()), feature_dim);
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      x.row(i) = q.documents[static_cast<std::size_t>(i)].features.transpose();
    return x;
  }
};

struct ParseOptions {
  int max_label = -1;        // >= 0: enforce labels in [0, max_label]
  bool clamp_labels = false; // clamp out-of-range labels instead of rejecting
};

namespace detail {

inline bool parse_double(std::string_view tok, double& out) {
  try {
    std::size_t pos = 0;
    out = std::stod(std::string(tok), &pos);
    return pos == tok.size();
  } catch (...) {
    return false;
  }
}

inline bool parse_int(std::string_view tok, long& out) {
  try {
    std::size_t pos = 0;
    out = std::stol(std::string(tok), &pos);
    return pos == tok.size();
  } catch (...) {
    return false;
  }
}

}  // namespace detail

// SVMlight/LETOR lines: `label qid:<id> <fid>:<val> ... [# comment]`.
// Feature ids are 1-based and may be sparse; gaps read as 0.0. Documents are
// grouped by consecutive qid runs.
inline Dataset parse_letor(std::istream& in, ParseOptions opts = {}) {
  Dataset ds;
  std::string line;
  long line_no = 0;
  int max_fid = 0;
  int max_label_seen = 0;
  std::vector<std::vector<std::pair<int, double>>> sparse_docs;
  std::vector<int> labels;
  std::vector<std::string> qids;

  auto fail = [&](const std::string& what) {
    throw ParseError("line " + std::to_string(line_no) + ": " + what);
  };

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (auto hash = line.find('#'); hash != std::string::npos)
      line.resize(hash);
    std::istringstream ls(line);
    std::string tok;
    if (!(ls >> tok)) continue;  // blank line

    double raw_label;
    if (!detail::parse_double(tok, raw_label)) fail("bad label token '" + tok + "'");
    double rounded = std::round(raw_label);
    if (std::abs(raw_label - rounded) > 1e-9) fail("non-integer label '" + tok + "'");
    int label = static_cast<int>(rounded);
    if (label < 0) {
      if (opts.clamp_labels)
        label = 0;
      else
        fail("negative label");
    }
    if (opts.max_label >= 0 && label > opts.max_label) {
      if (opts.clamp_labels)
        label = opts.max_label;
      else
        fail("label " + std::to_string(label) + " exceeds max_label " +
             std::to_string(opts.max_label));
    }

    if (!(ls >> tok)) fail("missing qid token");
    if (tok.rfind("qid:", 0) != 0 || tok.size() <= 4) fail("bad qid token '" + tok + "'");
    std::string qid = tok.substr(4);

    std::vector<std::pair<int, double>> feats;
    while (ls >> tok) {
      auto colon = tok.find(':');
      if (colon == std::string::npos || colon == 0 || colon + 1 >= tok.size())
        fail("bad feature token '" + tok + "'");
      long fid;
      double val;
      if (!detail::parse_int(tok.substr(0, colon), fid) || fid < 1)
        fail("bad feature id in '" + tok + "'");
      if (!detail::parse_double(tok.substr(colon + 1), val))
        fail("non-numeric value in '" + tok + "'");
      feats.emplace_back(static_cast<int>(fid), val);
      max_fid = std::max(max_fid, static_cast<int>(fid));
    }

    sparse_docs.push_back(std::move(feats));
    labels.push_back(label);
    qids.push_back(std::move(qid));
    max_label_seen = std::max(max_label_seen, label);
  }

  ds.feature_dim = max_fid;
  ds.max_label = opts.max_label >= 0 ? opts.max_label : max_label_seen;

  for (std::size_t i = 0; i < sparse_docs.size(); ++i) {
    if (ds.queries.empty() || ds.queries.back().qid != qids[i]) {
      ds.queries.push_back(Query{qids[i], {}});
    }
    Document doc;
    doc.label = labels[i];
    doc.features = Eigen::VectorXd::Zero(ds.feature_dim);
    for (auto [fid, val] : sparse_docs[i]) doc.features[fid - 1] = val;
    ds.queries.back().documents.push_back(std::move(doc));
  }
  return ds;
}

inline Dataset parse_letor_file(const std::string& path, ParseOptions opts = {}) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open dataset file: " + path);
  return parse_letor(f, opts);
}

// Canonical form: dense 1..H feature ids, exact doubles, no comments.
inline void serialize(const Dataset& ds, std::ostream& out) {
  for (const auto& q : ds.queries) {
    for (const auto& d : q.documents) {
      out << d.label << " qid:" << q.qid;
      for (int f = 0; f < ds.feature_dim; ++f)
        out << ' ' << (f + 1) << ':' << fmt_exact(d.features[f]);
      out << '\n';
    }
  }
}

inline std::string serialize(const Dataset& ds) {
  std::ostringstream os;
  serialize(ds, os);
  return os.str();
}

struct GenConfig {
  int queries = 1000;
  int docs_per_query = 10;
  int feature_dim = 16;
  int max_label = 4;
  // Weight of the cross-document term in the latent relevance score. 0 keeps
  // relevance a pure per-document function of features; > 0 makes it depend
  // on the list mean, which only list-aware scorers can model.
  double context_mix = 0.0;
};

// Latent relevance u = w.x + context_mix * x.(mean(X) - E[x]), binned into
// max_label+1 quantile bins over the whole dataset. Features are a per-query
// shift plus per-document noise so the list mean genuinely varies by query.
inline Dataset generate_synthetic(const GenConfig& cfg, std::uint64_t seed) {
  if (cfg.queries <= 0 || cfg.docs_per_query <= 0 || cfg.feature_dim <= 0)
    throw ConfigError("generate_synthetic: counts and feature_dim must be positive");
  if (cfg.max_label < 1)
    throw ConfigError("generate_synthetic: max_label must be >= 1");
  if (cfg.context_mix < 0.0 || cfg.context_mix > 1.0)
    throw ConfigError("generate_synthetic: context_mix must lie in [0,1]");

  Rng rng(derive_seed(seed, "synthetic"));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> wdist(0.2, 1.0);

  const int H = cfg.feature_dim;
  Eigen::VectorXd w(H);
  for (int f = 0; f < H; ++f) w[f] = wdist(rng);

  Dataset ds;
  ds.feature_dim = H;
  ds.max_label = cfg.max_label;
  ds.queries.resize(static_cast<std::size_t>(cfg.queries));

  std::vector<double> latent;
  latent.reserve(static_cast<std::size_t>(cfg.queries) * cfg.docs_per_query);

  for (int qi = 0; qi < cfg.queries; ++qi) {
    Query& q = ds.queries[static_cast<std::size_t>(qi)];
    q.qid = std::to_string(qi + 1);
    q.documents.resize(static_cast<std::size_t>(cfg.docs_per_query));

    Eigen::VectorXd shift(H);
    for (int f = 0; f < H; ++f) shift[f] = unit(rng);

    Eigen::MatrixXd x(cfg.docs_per_query, H);
    for (int i = 0; i < cfg.docs_per_query; ++i)
      for (int f = 0; f < H; ++f) x(i, f) = shift[f] + unit(rng);

    // E[x] = 1 componentwise for the shift+noise construction above
    Eigen::VectorXd centered_mean =
        x.colwise().mean().transpose() - Eigen::VectorXd::Ones(H);
    for (int i = 0; i < cfg.docs_per_query; ++i) {
      double u = x.row(i).dot(w) + cfg.context_mix * x.row(i).dot(centered_mean);
      latent.push_back(u);
      q.documents[static_cast<std::size_t>(i)].features = x.row(i).transpose();
    }
  }

  // quantile bin edges over the whole dataset
  std::vector<double> sorted = latent;
  std::sort(sorted.begin(), sorted.end());
  const int bins = cfg.max_label + 1;
  std::vector<double> edges;
  for (int b = 1; b < bins; ++b) {
    std::size_t idx = sorted.size() * static_cast<std::size_t>(b) / bins;
    edges.push_back(sorted[std::min(idx, sorted.size() - 1)]);
  }

  std::size_t pos = 0;
  for (auto& q : ds.queries)
    for (auto& d : q.documents) {
      double u = latent[pos++];
      int label = 0;
      for (double e : edges)
        if (u >= e) ++label;
      d.label = label;
    }
  return ds;
}

// Uniform sample of ceil(fraction * |queries|) whole queries, kept in
// original dataset order.
inline Dataset sample_fraction(const Dataset& ds, double fraction,
                               std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw ConfigError("sample_fraction: fraction must lie in (0, 1]");
  const std::size_t n = ds.queries.size();
  const auto k = static_cast<std::size_t>(
      std::ceil(fraction * static_cast<double>(n)));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(derive_seed(seed, "sample_fraction"));
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(std::min(k, n));
  std::sort(idx.begin(), idx.end());

  Dataset out;
  out.feature_dim = ds.feature_dim;
  out.max_label = ds.max_label;
  out.queries.reserve(idx.size());
  for (std::size_t i : idx) out.queries.push_back(ds.queries[i]);
  return out;
}

// Per-feature min-max scaling to [0,1]; constant features map to 0.
struct MinMaxScaler {
  Eigen::VectorXd lo, hi;

  static MinMaxScaler fit(const Dataset& ds) {
    MinMaxScaler s;
    s.lo = Eigen::VectorXd::Constant(ds.feature_dim,
                                     std::numeric_limits<double>::infinity());
    s.hi = Eigen::VectorXd::Constant(ds.feature_dim,
                                     -std::numeric_limits<double>::infinity());
    for (const auto& q : ds.queries)
      for (const auto& d : q.documents) {
        s.lo = s.lo.cwiseMin(d.features);
        s.hi = s.hi.cwiseMax(d.features);
      }
    if (ds.total_documents() == 0) {
      s.lo.setZero();
      s.hi.setOnes();
    }
    return s;
  }

  Dataset apply(const Dataset& ds) const {
    if (lo.size() != ds.feature_dim)
      throw ShapeError("MinMaxScaler: feature_dim mismatch");
    Dataset out = ds;
    Eigen::VectorXd range = hi - lo;
    for (auto& q : out.queries)
      for (auto& d : q.documents)
        for (int f = 0; f < out.feature_dim; ++f)
          d.features[f] = range[f] > 0.0 ? (d.features[f] - lo[f]) / range[f] : 0.0;
    return out;
  }
};

}  // namespace ultr::letor
