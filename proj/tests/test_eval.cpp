#include <catch_amalgamated.hpp>

#include <algorithm>
#include <vector>

#include "ultr/eval.hpp"

using namespace ultr;
using namespace ultr::eval;

namespace {

// independent oracle: best DCG over every permutation of the labels
double brute_force_ideal_dcg(std::vector<int> labels, int k) {
  std::sort(labels.begin(), labels.end());
  double best = 0.0;
  do {
    best = std::max(best, dcg_at_k(labels, k));
  } while (std::next_permutation(labels.begin(), labels.end()));
  return best;
}

}  // namespace

TEST_CASE("hand-evaluated nDCG example") {
  std::vector<int> displayed{4, 0, 2};
  double dcg = 15.0 + 0.0 + 3.0 / 2.0;
  double idcg = 15.0 + 3.0 / std::log2(3.0) + 0.0;
  CHECK(dcg_at_k(displayed, 3) == Catch::Approx(dcg).margin(1e-12));
  CHECK(idcg == Catch::Approx(16.8927892607).margin(1e-9));
  CHECK(ndcg_at_k(displayed, 3) == Catch::Approx(dcg / idcg).margin(1e-10));
  CHECK(ndcg_at_k(displayed, 3) == Catch::Approx(0.97674811100451).margin(1e-10));
  CHECK(ndcg_at_k(displayed, 3) == Catch::Approx(0.9768).margin(1e-4));
}

TEST_CASE("ideally sorted labels score nDCG 1") {
  std::vector<int> sorted{4, 3, 3, 2, 0, 0};
  CHECK(ndcg_at_k(sorted, 6) == 1.0);
  CHECK(ndcg_at_k(sorted, 3) == 1.0);
}

TEST_CASE("all-zero labels score nDCG 1 by convention") {
  std::vector<int> zeros{0, 0, 0};
  CHECK(ndcg_at_k(zeros, 3) == 1.0);
}

TEST_CASE("nDCG against the brute-force permutation oracle") {
  // every label list of length <= 6 would repeat the acceptance suite; a
  // randomized slice keeps this fast while the acceptance test is exhaustive
  Rng rng(21);
  for (int trial = 0; trial < 300; ++trial) {
    int n = 1 + static_cast<int>(rng() % 6);
    std::vector<int> labels(static_cast<std::size_t>(n));
    for (auto& y : labels) y = static_cast<int>(rng() % 5);
    for (int k : {1, 3, n}) {
      double idcg = brute_force_ideal_dcg(labels, k);
      double ndcg = ndcg_at_k(labels, k);
      CHECK(ndcg <= 1.0 + 1e-12);
      if (idcg == 0.0)
        CHECK(ndcg == 1.0);
      else
        CHECK(ndcg == Catch::Approx(dcg_at_k(labels, k) / idcg).margin(1e-12));
    }
  }
}

TEST_CASE("hand-evaluated ERR examples") {
  std::vector<int> single{4};
  CHECK(err_at_k(single, 1, 4) == Catch::Approx(0.9375).margin(1e-12));
  std::vector<int> two{4, 0};
  CHECK(err_at_k(two, 2, 4) == Catch::Approx(0.9375).margin(1e-12));
  std::vector<int> zeros{0, 0, 0};
  CHECK(err_at_k(zeros, 3, 4) == 0.0);
  // second position contributes (1/2) * (1 - 15/16) * R(3)
  std::vector<int> pair{4, 3};
  double expect = 15.0 / 16.0 + 0.5 * (1.0 - 15.0 / 16.0) * (7.0 / 16.0);
  CHECK(err_at_k(pair, 2, 4) == Catch::Approx(expect).margin(1e-12));
}

TEST_CASE("ERR never improves when a worse document is swapped forward") {
  Rng rng(22);
  for (int trial = 0; trial < 200; ++trial) {
    int n = 2 + static_cast<int>(rng() % 5);
    std::vector<int> labels(static_cast<std::size_t>(n));
    for (auto& y : labels) y = static_cast<int>(rng() % 5);
    auto pos = static_cast<std::size_t>(rng() % static_cast<std::uint64_t>(n - 1));
    if (labels[pos] >= labels[pos + 1]) continue;
    double before = err_at_k(labels, n, 4);
    std::swap(labels[pos], labels[pos + 1]);  // higher label now first
    double after = err_at_k(labels, n, 4);
    CHECK(after >= before - 1e-12);
  }
}

TEST_CASE("mse_propen hand values and symmetry") {
  std::vector<double> t1{1.0, 2.0};
  std::vector<double> e1{1.0, 2.5};
  CHECK(mse_propen(e1, t1) == Catch::Approx(0.125).margin(1e-15));
  CHECK(mse_propen(t1, e1) == mse_propen(e1, t1));
  CHECK(mse_propen(t1, t1) == 0.0);

  // one of ten ratios off by 10
  std::vector<double> t2(10, 1.0), e2(10, 1.0);
  e2[7] += 10.0;
  CHECK(mse_propen(e2, t2) == Catch::Approx(10.0).margin(1e-12));

  std::vector<double> short_seq{1.0};
  CHECK_THROWS_AS(mse_propen(short_seq, t1), ShapeError);
}

TEST_CASE("paired t-test behaves at the edges") {
  std::vector<double> a{0.5, 0.6, 0.7, 0.4};
  CHECK(significance_test(a, a) == 1.0);

  std::vector<double> b = a;
  for (auto& v : b) v += 0.1;
  CHECK(significance_test(a, b) == 0.0);  // constant shift, zero variance

  CHECK_THROWS_AS(significance_test(a, std::vector<double>{1.0}), DomainError);
  std::vector<double> one{1.0};
  CHECK_THROWS_AS(significance_test(one, one), DomainError);
}

TEST_CASE("constant difference with noise is significant at n=100") {
  Rng rng(23);
  std::normal_distribution<double> noise(0.0, 0.05);
  std::vector<double> a(100), b(100);
  for (std::size_t i = 0; i < 100; ++i) {
    double base = 0.5 + noise(rng);
    a[i] = base + 0.1 + noise(rng);
    b[i] = base;
  }
  double p = significance_test(a, b);
  CHECK(p < 0.05);
  CHECK(p == significance_test(b, a));  // symmetric
}

TEST_CASE("indistinguishable noisy samples are not significant") {
  Rng rng(24);
  std::normal_distribution<double> noise(0.0, 0.1);
  std::vector<double> a(60), b(60);
  for (std::size_t i = 0; i < 60; ++i) {
    a[i] = noise(rng);
    b[i] = noise(rng);
  }
  CHECK(significance_test(a, b) > 0.05);
}

TEST_CASE("metric report means") {
  MetricReport r;
  r.per_query.push_back({"a", 1.0, 0.8, 0.5, 0.6});
  r.per_query.push_back({"b", 0.0, 0.4, 0.1, 0.2});
  r.finalize();
  CHECK(r.mean_ndcg3 == Catch::Approx(0.5));
  CHECK(r.mean_ndcg10 == Catch::Approx(0.6));
  CHECK(r.mean_err3 == Catch::Approx(0.3));
  CHECK(r.mean_err10 == Catch::Approx(0.4));
}

TEST_CASE("k below one is rejected") {
  std::vector<int> labels{1, 2};
  CHECK_THROWS_AS(ndcg_at_k(labels, 0), DomainError);
  CHECK_THROWS_AS(err_at_k(labels, 0, 4), DomainError);
}
