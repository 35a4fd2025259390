#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "ultr/common.hpp"
#include "ultr/letor.hpp"

namespace ultr::prod {

struct LinearRanker {
  Eigen::VectorXd weights;
  double bias = 0.0;

  double score_one(const Eigen::VectorXd& x) const {
    if (x.size() != weights.size())
      throw ShapeError("LinearRanker: feature dimension mismatch");
    return weights.dot(x) + bias;
  }

  Eigen::VectorXd score_matrix(const Eigen::MatrixXd& x) const {
    if (x.cols() != weights.size())
      throw ShapeError("LinearRanker: feature dimension mismatch");
    return (x * weights).array() + bias;
  }

  void save(std::ostream& out) const {
    out << weights.size() << '\n';
    for (Eigen::Index i = 0; i < weights.size(); ++i) {
      if (i) out << ' ';
      out << fmt_exact(weights[i]);
    }
    out << '\n' << fmt_exact(bias) << '\n';
  }

  void save_file(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write ranker file: " + path);
    save(f);
  }

  static LinearRanker load(std::istream& in) {
    LinearRanker r;
    Eigen::Index n = 0;
    if (!(in >> n) || n < 0) throw ParseError("ranker file: bad dimension");
    r.weights.resize(n);
    for (Eigen::Index i = 0; i < n; ++i)
      if (!(in >> r.weights[i])) throw ParseError("ranker file: truncated weights");
    if (!(in >> r.bias)) throw ParseError("ranker file: missing bias");
    return r;
  }

  static LinearRanker load_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open ranker file: " + path);
    return load(f);
  }
};

// A query's documents in display order. `order[i]` is the 0-based index of
// the document shown at position i in the source query.
struct RankedList {
  std::string qid;
  std::vector<int> order;
  Eigen::MatrixXd features;
  Eigen::VectorXi labels;

  int size() const { return static_cast<int>(order.size()); }
};

struct ProdTrainConfig {
  int epochs = 30;
  double learning_rate = 0.05;
  double regularization = 1e-4;
};

// Fraction of correctly ordered label-discordant pairs; ties count half.
inline double pairwise_accuracy(const LinearRanker& ranker,
                                const letor::Dataset& ds) {
  double correct = 0.0;
  long total = 0;
  for (std::size_t qi = 0; qi < ds.queries.size(); ++qi) {
    const auto& docs = ds.queries[qi].documents;
    Eigen::VectorXd s = ranker.score_matrix(ds.feature_matrix(qi));
    for (std::size_t a = 0; a < docs.size(); ++a)
      for (std::size_t b = 0; b < docs.size(); ++b) {
        if (docs[a].label <= docs[b].label) continue;
        ++total;
        double diff = s[static_cast<Eigen::Index>(a)] - s[static_cast<Eigen::Index>(b)];
        if (diff > 0)
          correct += 1.0;
        else if (diff == 0)
          correct += 0.5;
      }
  }
  return total ? correct / static_cast<double>(total) : 1.0;
}

// Pairwise hinge-loss linear ranker fit by stochastic subgradient descent
// over within-query label-discordant pairs. Zero epochs returns the zero
// ranker.
inline LinearRanker train_prod(const letor::Dataset& sample,
                               const ProdTrainConfig& cfg, std::uint64_t seed) {
  if (sample.queries.empty() || sample.total_documents() == 0)
    throw UsageError("train_prod: empty training sample");
  if (cfg.epochs < 0) throw ConfigError("train_prod: negative epochs");

  LinearRanker r;
  r.weights = Eigen::VectorXd::Zero(sample.feature_dim);

  struct Pair {
    std::size_t query, hi, lo;
  };
  std::vector<Pair> pairs;
  for (std::size_t qi = 0; qi < sample.queries.size(); ++qi) {
    const auto& docs = sample.queries[qi].documents;
    for (std::size_t a = 0; a < docs.size(); ++a)
      for (std::size_t b = 0; b < docs.size(); ++b)
        if (docs[a].label > docs[b].label) pairs.push_back({qi, a, b});
  }
  if (pairs.empty()) return r;  // all labels tied; nothing to separate

  Rng rng(derive_seed(seed, "prod_ranker"));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(pairs.begin(), pairs.end(), rng);
    for (const Pair& p : pairs) {
      const auto& hi = sample.queries[p.query].documents[p.hi].features;
      const auto& lo = sample.queries[p.query].documents[p.lo].features;
      double margin = r.weights.dot(hi - lo);
      r.weights *= 1.0 - cfg.learning_rate * cfg.regularization;
      if (margin < 1.0) r.weights += cfg.learning_rate * (hi - lo);
    }
  }
  return r;
}

// Sort by descending score; exact ties fall back to a seeded shuffle so the
// output is a reproducible function of (ranker, query, tie_seed).
inline RankedList rank(const LinearRanker& ranker, const letor::Query& query,
                       int feature_dim, std::uint64_t tie_seed) {
  const auto n = static_cast<int>(query.documents.size());
  if (n == 0) throw UsageError("rank: empty query");
  Eigen::MatrixXd x(n, feature_dim);
  Eigen::VectorXi labels(n);
  for (int i = 0; i < n; ++i) {
    if (query.documents[static_cast<std::size_t>(i)].features.size() != feature_dim)
      throw ShapeError("rank: document feature dimension mismatch");
    x.row(i) = query.documents[static_cast<std::size_t>(i)].features.transpose();
    labels[i] = query.documents[static_cast<std::size_t>(i)].label;
  }
  Eigen::VectorXd scores = ranker.score_matrix(x);

  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(tie_seed, query.qid));
  std::shuffle(order.begin(), order.end(), rng);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scores[a] > scores[b]; });

  RankedList out;
  out.qid = query.qid;
  out.order = order;
  out.features.resize(n, feature_dim);
  out.labels.resize(n);
  for (int i = 0; i < n; ++i) {
    out.features.row(i) = x.row(order[static_cast<std::size_t>(i)]);
    out.labels[i] = labels[order[static_cast<std::size_t>(i)]];
  }
  return out;
}

}  // namespace ultr::prod
