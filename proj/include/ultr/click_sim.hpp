#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include "ultr/common.hpp"
#include "ultr/prod_ranker.hpp"

namespace ultr::clicks {

// Observation probabilities by display position. probs[0] is position 1 and
// is pinned to 1; only the ratios rho_1/rho_i carry meaning.
struct PropensityCurve {
  Eigen::VectorXd probs;

  int size() const { return static_cast<int>(probs.size()); }
  double at(int pos) const { return probs[pos]; }  // 0-based position

  // rho_1/rho_i for the first n positions (n <= size)
  Eigen::VectorXd inverse_ratios(int n) const {
    Eigen::VectorXd r(n);
    for (int i = 0; i < n; ++i) r[i] = probs[0] / probs[i];
    return r;
  }

  static PropensityCurve inverse_power(double eta, int max_positions) {
    if (eta < 0.0) throw ConfigError("propensity curve: exponent must be >= 0");
    if (max_positions < 1) throw ConfigError("propensity curve: need >= 1 position");
    PropensityCurve c;
    c.probs.resize(max_positions);
    for (int i = 0; i < max_positions; ++i)
      c.probs[i] = std::pow(1.0 / static_cast<double>(i + 1), eta);
    return c;
  }

  static PropensityCurve from_values(const std::vector<double>& values) {
    if (values.empty()) throw ConfigError("propensity curve: no values");
    PropensityCurve c;
    c.probs.resize(static_cast<Eigen::Index>(values.size()));
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (!(values[i] > 0.0 && values[i] <= 1.0))
        throw ConfigError("propensity curve: values must lie in (0, 1]");
      c.probs[static_cast<Eigen::Index>(i)] = values[i];
    }
    if (c.probs[0] != 1.0)
      throw ConfigError("propensity curve: first position must be 1.0");
    return c;
  }

  static PropensityCurve from_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open propensity file: " + path);
    std::vector<double> values;
    double v;
    while (f >> v) values.push_back(v);
    return from_values(values);
  }
};

struct ClickNoiseConfig {
  double epsilon = 0.1;
  int y_max = 4;
};

// P(perceived relevant) = epsilon + (1-epsilon) * (2^y - 1) / (2^y_max - 1)
inline double perceived_relevance_prob(int label, const ClickNoiseConfig& cfg) {
  if (!(cfg.epsilon >= 0.0 && cfg.epsilon < 1.0))
    throw ConfigError("click noise: epsilon must lie in [0, 1)");
  if (label < 0 || label > cfg.y_max)
    throw DomainError("perceived_relevance_prob: label out of [0, y_max]");
  double gain = (std::exp2(label) - 1.0) / (std::exp2(cfg.y_max) - 1.0);
  return cfg.epsilon + (1.0 - cfg.epsilon) * gain;
}

struct ClickLog {
  std::string qid;
  std::vector<int> display_order;
  std::vector<std::uint8_t> clicks;
  long impression_id = 0;
};

// Core draw: one Bernoulli observation and one Bernoulli perceived-relevance
// per position; a click needs both. Positions >= n_real are padding and
// never clicked. Consumes exactly 2*n PRNG draws so streams stay aligned.
inline std::vector<std::uint8_t> sample_clicks_on(
    const Eigen::VectorXi& labels, int n_real, const PropensityCurve& curve,
    const ClickNoiseConfig& noise, Rng& rng) {
  const int n = static_cast<int>(labels.size());
  if (n > curve.size())
    throw ConfigError("sample_clicks: list longer than propensity curve");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::uint8_t> c(static_cast<std::size_t>(n), 0);
  for (int i = 0; i < n; ++i) {
    bool observed = u(rng) < curve.at(i);
    double p_rel =
        i < n_real ? perceived_relevance_prob(labels[i], noise) : 0.0;
    bool relevant = u(rng) < p_rel;
    c[static_cast<std::size_t>(i)] = observed && relevant ? 1 : 0;
  }
  return c;
}

inline ClickLog sample_clicks(const prod::RankedList& list,
                              const PropensityCurve& curve,
                              const ClickNoiseConfig& noise, Rng& rng,
                              long impression_id = 0) {
  ClickLog log;
  log.qid = list.qid;
  log.display_order = list.order;
  log.impression_id = impression_id;
  log.clicks = sample_clicks_on(list.labels, list.size(), curve, noise, rng);
  return log;
}

// One line per impression: qid<TAB>impression<TAB>order csv<TAB>clicks csv.
// Order entries are 0-based document indices.
inline void dump_click_log(std::ostream& out, const ClickLog& log) {
  out << log.qid << '\t' << log.impression_id << '\t';
  for (std::size_t i = 0; i < log.display_order.size(); ++i) {
    if (i) out << ',';
    out << log.display_order[i];
  }
  out << '\t';
  for (std::size_t i = 0; i < log.clicks.size(); ++i) {
    if (i) out << ',';
    out << static_cast<int>(log.clicks[i]);
  }
  out << '\n';
}

}  // namespace ultr::clicks
