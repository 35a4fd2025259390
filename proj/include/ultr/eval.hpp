#pragma once

#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "ultr/common.hpp"

namespace ultr::eval {

// DCG@k with exponential gain (2^y - 1) and log2(i+1) discount.
inline double dcg_at_k(std::span<const int> labels, int k) {
  if (k < 1) throw DomainError("dcg_at_k: k must be >= 1");
  double dcg = 0.0;
  const int n = std::min<int>(k, static_cast<int>(labels.size()));
  for (int i = 0; i < n; ++i)
    dcg += (std::exp2(labels[static_cast<std::size_t>(i)]) - 1.0) /
           std::log2(static_cast<double>(i) + 2.0);
  return dcg;
}

// Normalized by the ideal ordering; all-zero labels score 1 by convention.
inline double ndcg_at_k(std::span<const int> ranked_labels, int k) {
  std::vector<int> ideal(ranked_labels.begin(), ranked_labels.end());
  std::sort(ideal.begin(), ideal.end(), std::greater<int>());
  double idcg = dcg_at_k(ideal, k);
  if (idcg == 0.0) return 1.0;
  return dcg_at_k(ranked_labels, k) / idcg;
}

// Expected Reciprocal Rank with stop probability R_i = (2^y - 1) / 2^y_max.
inline double err_at_k(std::span<const int> ranked_labels, int k, int y_max) {
  if (k < 1) throw DomainError("err_at_k: k must be >= 1");
  if (y_max < 1) throw DomainError("err_at_k: y_max must be >= 1");
  double err = 0.0;
  double continue_p = 1.0;
  const int n = std::min<int>(k, static_cast<int>(ranked_labels.size()));
  for (int i = 0; i < n; ++i) {
    int y = ranked_labels[static_cast<std::size_t>(i)];
    if (y < 0 || y > y_max) throw DomainError("err_at_k: label out of range");
    double stop = (std::exp2(y) - 1.0) / std::exp2(y_max);
    err += continue_p * stop / (static_cast<double>(i) + 1.0);
    continue_p *= 1.0 - stop;
  }
  return err;
}

// Mean squared difference between two inverse-propensity ratio sequences.
inline double mse_propen(std::span<const double> estimated,
                         std::span<const double> truth) {
  if (estimated.size() != truth.size())
    throw ShapeError("mse_propen: length mismatch");
  if (estimated.empty()) throw ShapeError("mse_propen: empty sequences");
  double sum = 0.0;
  for (std::size_t i = 0; i < estimated.size(); ++i) {
    double d = estimated[i] - truth[i];
    sum += d * d;
  }
  return sum / static_cast<double>(estimated.size());
}

// Two-tailed paired t-test over per-query metric values. Identical samples
// have no difference to test and return p = 1 (zero-variance convention);
// a constant nonzero difference returns p = 0.
inline double significance_test(std::span<const double> a,
                                std::span<const double> b) {
  if (a.size() != b.size()) throw DomainError("significance_test: length mismatch");
  const std::size_t n = a.size();
  if (n < 2) throw DomainError("significance_test: need at least two pairs");
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double d = (a[i] - b[i]) - mean;
    var += d * d;
  }
  var /= static_cast<double>(n - 1);
  if (var == 0.0) return mean == 0.0 ? 1.0 : 0.0;
  double t = mean / std::sqrt(var / static_cast<double>(n));
  boost::math::students_t dist(static_cast<double>(n - 1));
  return 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
}

struct PerQueryMetrics {
  std::string qid;
  double ndcg3 = 0.0, ndcg10 = 0.0, err3 = 0.0, err10 = 0.0;
};

struct MetricReport {
  std::string model;
  std::uint64_t seed = 0;
  std::vector<PerQueryMetrics> per_query;
  double mean_ndcg3 = 0.0, mean_ndcg10 = 0.0;
  double mean_err3 = 0.0, mean_err10 = 0.0;
  double mse_propen = -1.0;  // < 0 when no propensity model applies

  void finalize() {
    mean_ndcg3 = mean_ndcg10 = mean_err3 = mean_err10 = 0.0;
    if (per_query.empty()) return;
    for (const auto& q : per_query) {
      mean_ndcg3 += q.ndcg3;
      mean_ndcg10 += q.ndcg10;
      mean_err3 += q.err3;
      mean_err10 += q.err10;
    }
    const auto n = static_cast<double>(per_query.size());
    mean_ndcg3 /= n;
    mean_ndcg10 /= n;
    mean_err3 /= n;
    mean_err10 /= n;
  }
};

}  // namespace ultr::eval
