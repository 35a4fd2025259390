#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <fstream>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "ultr/common.hpp"
#include "ultr/scorers.hpp"

namespace ultr::permcheck {

using diff::Matrix;
using diff::Vector;

// map[i] is the source index whose row lands at position i, so
// apply(X).row(i) == X.row(map[i]).
struct Permutation {
  std::vector<int> map;

  int size() const { return static_cast<int>(map.size()); }

  static Permutation identity(int n) {
    Permutation p;
    p.map.resize(static_cast<std::size_t>(n));
    std::iota(p.map.begin(), p.map.end(), 0);
    return p;
  }

  static Permutation random(int n, Rng& rng) {
    Permutation p = identity(n);
    std::shuffle(p.map.begin(), p.map.end(), rng);
    return p;
  }

  Permutation inverse() const {
    Permutation inv = identity(size());
    for (int i = 0; i < size(); ++i)
      inv.map[static_cast<std::size_t>(map[static_cast<std::size_t>(i)])] = i;
    return inv;
  }

  Matrix apply(const Matrix& x) const {
    if (x.rows() != size()) throw ShapeError("permutation: size mismatch");
    Matrix out(x.rows(), x.cols());
    for (int i = 0; i < size(); ++i)
      out.row(i) = x.row(map[static_cast<std::size_t>(i)]);
    return out;
  }
};

struct InvarianceVerdict {
  bool pass = true;
  long trials = 0;
  double max_violation = 0.0;
  // populated with the worst case when the check fails
  bool has_witness = false;
  Matrix witness_x;
  Permutation witness_perm;
  Vector witness_base_scores, witness_perm_scores;
};

struct CheckConfig {
  int list_length = 5;
  int n_inputs = 20;
  int n_perms = 100;   // sampled permutations per input (lists longer than 5)
  double tolerance = 1e-9;
  std::uint64_t seed = 1;
  std::uint64_t order_seed = 0;  // held fixed so gru(rand) is a function
};

namespace detail {

// Inputs mimic the synthetic feature range; half the draws duplicate one row
// because exact ties are where reordering bookkeeping slips.
inline Matrix sample_input(int n, int h, Rng& rng, bool near_duplicate) {
  std::uniform_real_distribution<double> u(0.0, 2.0);
  Matrix x(n, h);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < h; ++j) x(i, j) = u(rng);
  if (near_duplicate && n >= 2) {
    int src = static_cast<int>(rng() % static_cast<std::uint64_t>(n));
    int dst = static_cast<int>(rng() % static_cast<std::uint64_t>(n));
    if (src != dst) x.row(dst) = x.row(src);
  }
  return x;
}

}  // namespace detail

// Checks score(perm(X))[j] == score(X)[perm[j]] for sampled inputs. All
// list_length! permutations are enumerated when list_length <= 5; otherwise
// n_perms seeded samples per input.
inline InvarianceVerdict check_invariance(const scorers::Scorer& scorer,
                                          const CheckConfig& cfg) {
  if (cfg.tolerance <= 0.0)
    throw ConfigError("check_invariance: tolerance must be positive");
  if (cfg.list_length < 1 || cfg.n_inputs < 1 || cfg.n_perms < 1)
    throw ConfigError("check_invariance: counts must be positive");

  const bool exhaustive = cfg.list_length <= 5;
  Rng rng(derive_seed(cfg.seed, "permcheck"));
  InvarianceVerdict verdict;

  for (int input = 0; input < cfg.n_inputs; ++input) {
    Matrix x = detail::sample_input(cfg.list_length, scorer.feature_dim(), rng,
                                    input % 2 == 1);
    Vector base = scorer.score(x, cfg.order_seed);

    auto try_perm = [&](const Permutation& perm) {
      Vector moved = scorer.score(perm.apply(x), cfg.order_seed);
      ++verdict.trials;
      for (int j = 0; j < cfg.list_length; ++j) {
        double violation = std::abs(
            moved[j] - base[perm.map[static_cast<std::size_t>(j)]]);
        if (violation > verdict.max_violation) {
          verdict.max_violation = violation;
          if (violation >= cfg.tolerance) {
            verdict.has_witness = true;
            verdict.witness_x = x;
            verdict.witness_perm = perm;
            verdict.witness_base_scores = base;
            verdict.witness_perm_scores = moved;
          }
        }
      }
    };

    if (exhaustive) {
      Permutation perm = Permutation::identity(cfg.list_length);
      do {
        try_perm(perm);
      } while (std::next_permutation(perm.map.begin(), perm.map.end()));
    } else {
      try_perm(Permutation::identity(cfg.list_length));
      for (int p = 0; p < cfg.n_perms; ++p)
        try_perm(Permutation::random(cfg.list_length, rng));
    }
  }

  verdict.pass = verdict.max_violation < cfg.tolerance;
  return verdict;
}

// Re-evaluates a reported witness from scratch; the reproduced violation
// must not fall more than eps below the reported one.
inline double reproduce_witness(const scorers::Scorer& scorer,
                                const InvarianceVerdict& verdict,
                                std::uint64_t order_seed = 0) {
  if (!verdict.has_witness) throw UsageError("no witness to reproduce");
  Vector base = scorer.score(verdict.witness_x, order_seed);
  Vector moved = scorer.score(verdict.witness_perm.apply(verdict.witness_x),
                              order_seed);
  double worst = 0.0;
  for (int j = 0; j < verdict.witness_perm.size(); ++j)
    worst = std::max(worst,
                     std::abs(moved[j] -
                              base[verdict.witness_perm.map[static_cast<std::size_t>(j)]]));
  return worst;
}

inline void write_report(std::ostream& out, const std::string& scorer_name,
                         const InvarianceVerdict& v, const CheckConfig& cfg) {
  out << "scorer: " << scorer_name << '\n'
      << "list_length: " << cfg.list_length << '\n'
      << "trials: " << v.trials << '\n'
      << "tolerance: " << fmt_double(cfg.tolerance) << '\n'
      << "max_violation: " << fmt_double(v.max_violation) << '\n'
      << "verdict: " << (v.pass ? "PASS" : "FAIL") << '\n';
}

inline void write_witness(std::ostream& out, const InvarianceVerdict& v) {
  if (!v.has_witness) throw UsageError("no witness to write");
  out << "permutation:";
  for (int i : v.witness_perm.map) out << ' ' << i;
  out << "\nfeatures:\n";
  for (Eigen::Index i = 0; i < v.witness_x.rows(); ++i) {
    for (Eigen::Index j = 0; j < v.witness_x.cols(); ++j) {
      if (j) out << ' ';
      out << fmt_exact(v.witness_x(i, j));
    }
    out << '\n';
  }
  out << "base_scores:";
  for (Eigen::Index i = 0; i < v.witness_base_scores.size(); ++i)
    out << ' ' << fmt_exact(v.witness_base_scores[i]);
  out << "\npermuted_scores:";
  for (Eigen::Index i = 0; i < v.witness_perm_scores.size(); ++i)
    out << ' ' << fmt_exact(v.witness_perm_scores[i]);
  out << '\n';
}

// Distributional probe for gru(rand): order-averaged scores should agree
// across permutations when averaging washes the order dependence out. The
// threshold is a heuristic default, not a sharp bound.
struct DistributionalVerdict {
  bool pass = true;
  double max_mean_violation = 0.0;
  int order_draws = 0;
};

inline DistributionalVerdict check_distributional(
    const scorers::Scorer& scorer, const CheckConfig& cfg, int order_draws = 64,
    double threshold = 0.05) {
  Rng rng(derive_seed(cfg.seed, "permcheck_dist"));
  DistributionalVerdict verdict;
  verdict.order_draws = order_draws;
  for (int input = 0; input < cfg.n_inputs; ++input) {
    Matrix x = detail::sample_input(cfg.list_length, scorer.feature_dim(), rng,
                                    false);
    Permutation perm = Permutation::random(cfg.list_length, rng);
    Matrix moved_x = perm.apply(x);
    Vector mean_base = Vector::Zero(cfg.list_length);
    Vector mean_moved = Vector::Zero(cfg.list_length);
    for (int d = 0; d < order_draws; ++d) {
      std::uint64_t os = derive_seed(cfg.seed, "orders", static_cast<std::uint64_t>(d));
      mean_base += scorer.score(x, os);
      mean_moved += scorer.score(moved_x, os);
    }
    mean_base /= order_draws;
    mean_moved /= order_draws;
    for (int j = 0; j < cfg.list_length; ++j)
      verdict.max_mean_violation = std::max(
          verdict.max_mean_violation,
          std::abs(mean_moved[j] -
                   mean_base[perm.map[static_cast<std::size_t>(j)]]));
  }
  verdict.pass = verdict.max_mean_violation < threshold;
  return verdict;
}

}  // namespace ultr::permcheck
