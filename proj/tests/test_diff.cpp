#include <catch_amalgamated.hpp>

#include "ultr/diff.hpp"

using namespace ultr;
using namespace ultr::diff;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = u(rng);
  return m;
}

}  // namespace

TEST_CASE("linear with identity weights and zero bias is the identity") {
  ParamStore store;
  Rng rng(0);
  Linear lin(store, "id", 4, 4, rng);
  store.value(0) = Matrix::Identity(4, 4);
  Matrix x = random_matrix(3, 4, rng);
  LinearCache cache;
  CHECK(lin.forward(store, x, cache).isApprox(x, 1e-15));
}

TEST_CASE("linear rejects mismatched input width") {
  ParamStore store;
  Rng rng(0);
  Linear lin(store, "l", 4, 2, rng);
  LinearCache cache;
  Matrix x = random_matrix(3, 5, rng);
  CHECK_THROWS_AS(lin.forward(store, x, cache), ShapeError);
}

TEST_CASE("softmax of all zeros is uniform") {
  Vector z = Vector::Zero(7);
  Vector p = softmax(z);
  for (int i = 0; i < 7; ++i) CHECK(p[i] == Catch::Approx(1.0 / 7.0));
}

TEST_CASE("softmax output is positive and sums to one") {
  Rng rng(5);
  for (int t = 0; t < 200; ++t) {
    Vector s = random_matrix(9, 1, rng, 20.0).col(0);
    int n_real = 1 + static_cast<int>(rng() % 9);
    Vector p = softmax_masked(s, n_real);
    double sum = 0.0;
    for (int i = 0; i < n_real; ++i) {
      CHECK(p[i] > 0.0);
      sum += p[i];
    }
    CHECK(std::abs(sum - 1.0) < 1e-12);
    for (int i = n_real; i < 9; ++i) CHECK(p[i] == 0.0);
  }
  CHECK_THROWS_AS(softmax_masked(Vector::Zero(3), 0), UsageError);
}

TEST_CASE("one gated-recurrent step with zero weights and state is zero") {
  ParamStore store;
  Rng rng(0);
  GruCell cell(store, "g", 3, 5, rng);
  for (std::size_t t = 0; t < store.tensor_count(); ++t) store.value(t).setZero();
  GruStepCache cache;
  RowVector x = RowVector::Ones(3);
  RowVector h = cell.step(store, x, RowVector::Zero(5), cache);
  CHECK(h.isZero(0.0));
}

TEST_CASE("softmax-cross-entropy gradient is softmax minus one-hot") {
  Rng rng(3);
  Vector logits = random_matrix(6, 1, rng).col(0);
  Vector onehot = Vector::Zero(6);
  onehot[2] = 1.0;
  auto [loss, grad] = softmax_xent(logits, onehot);
  Vector expected = softmax(logits) - onehot;
  CHECK(grad.isApprox(expected, 1e-12));
  CHECK(loss == Catch::Approx(-std::log(softmax(logits)[2])));
}

TEST_CASE("constant loss leaves all gradients at zero") {
  ParamStore store;
  Rng rng(0);
  Linear lin(store, "l", 3, 2, rng);
  auto report = grad_check(
      store, [] { return 1.5; }, [&] { store.zero_grads(); });
  CHECK(report.pass);
  CHECK(report.max_rel_err == 0.0);
}

TEST_CASE("forward is pure: repeated calls match exactly") {
  ParamStore store;
  Rng rng(8);
  MultiHeadAttention mha(store, "a", 8, 2, rng);
  Matrix x = random_matrix(6, 8, rng);
  AttentionCache c1, c2;
  Matrix y1 = mha.forward(store, x, 2, 3, {3, 2}, c1);
  Matrix y2 = mha.forward(store, x, 2, 3, {3, 2}, c2);
  CHECK(y1 == y2);
}

// ---------------------------------------------------------------------------
// finite-difference checks, one per kernel

namespace {

// loss = sum(W . f(x)) exercises every output coordinate
GradCheckReport check_kernel(ParamStore& store,
                             const std::function<Matrix()>& fwd,
                             const std::function<void(const Matrix&)>& bwd,
                             Rng& rng) {
  Matrix probe = random_matrix(fwd().rows(), fwd().cols(), rng);
  auto loss = [&] { return (probe.array() * fwd().array()).sum(); };
  auto grads = [&] {
    store.zero_grads();
    fwd();
    bwd(probe);
  };
  return grad_check(store, loss, grads, 1e-5, 1e-4);
}

}  // namespace

TEST_CASE("linear plus softmax-cross-entropy passes the gradient check") {
  ParamStore store;
  Rng rng(0);
  Linear lin(store, "l", 4, 5, rng);
  Matrix x = random_matrix(1, 4, rng);
  Vector onehot = Vector::Zero(5);
  onehot[3] = 1.0;
  LinearCache cache;
  auto loss = [&] {
    LinearCache c;
    Vector logits = lin.forward(store, x, c).row(0).transpose();
    return softmax_xent(logits, onehot).loss;
  };
  auto grads = [&] {
    store.zero_grads();
    Vector logits = lin.forward(store, x, cache).row(0).transpose();
    auto r = softmax_xent(logits, onehot);
    lin.backward(store, cache, r.grad.transpose());
  };
  auto report = grad_check(store, loss, grads, 1e-5, 1e-4);
  INFO(report.worst_param << " rel err " << report.max_rel_err);
  CHECK(report.pass);
}

TEST_CASE("every kernel matches central finite differences") {
  Rng rng(1);

  SECTION("linear") {
    ParamStore store;
    Linear lin(store, "l", 4, 3, rng);
    Matrix x = random_matrix(5, 4, rng);
    LinearCache cache;
    auto rep = check_kernel(
        store, [&] { LinearCache c; return lin.forward(store, x, c); },
        [&](const Matrix& d) {
          lin.forward(store, x, cache);
          lin.backward(store, cache, d);
        },
        rng);
    INFO(rep.worst_param << " rel err " << rep.max_rel_err);
    CHECK(rep.pass);
  }

  SECTION("layer norm") {
    ParamStore store;
    LayerNorm ln(store, "ln", 6);
    Rng prng(2);
    // perturb gain/shift away from the identity initialization
    store.value(0) += random_matrix(6, 1, prng, 0.3);
    store.value(1) += random_matrix(6, 1, prng, 0.3);
    Matrix x = random_matrix(4, 6, prng);
    LayerNormCache cache;
    auto rep = check_kernel(
        store, [&] { LayerNormCache c; return ln.forward(store, x, c); },
        [&](const Matrix& d) {
          ln.forward(store, x, cache);
          ln.backward(store, cache, d);
        },
        rng);
    INFO(rep.worst_param << " rel err " << rep.max_rel_err);
    CHECK(rep.pass);
  }

  SECTION("gru cell over three steps") {
    ParamStore store;
    GruCell cell(store, "g", 3, 4, rng);
    std::vector<RowVector> xs;
    Rng prng(3);
    for (int t = 0; t < 3; ++t) xs.push_back(random_matrix(1, 3, prng).row(0));
    Matrix probe = random_matrix(1, 4, prng);
    auto run = [&](std::vector<GruStepCache>* caches) {
      RowVector h = RowVector::Zero(4);
      for (int t = 0; t < 3; ++t) {
        GruStepCache c;
        h = cell.step(store, xs[static_cast<std::size_t>(t)], h, c);
        if (caches) caches->push_back(c);
      }
      return h;
    };
    auto loss = [&] { return run(nullptr).cwiseProduct(probe.row(0)).sum(); };
    auto grads = [&] {
      store.zero_grads();
      std::vector<GruStepCache> caches;
      run(&caches);
      RowVector dh = probe.row(0);
      for (int t = 2; t >= 0; --t) {
        RowVector dx;
        dh = cell.backward_step(store, caches[static_cast<std::size_t>(t)], dh, dx);
      }
    };
    auto rep = grad_check(store, loss, grads, 1e-5, 1e-4);
    INFO(rep.worst_param << " rel err " << rep.max_rel_err);
    CHECK(rep.pass);
  }

  SECTION("multi-head attention with two heads and a padded list") {
    ParamStore store;
    MultiHeadAttention mha(store, "a", 8, 2, rng);
    Rng prng(4);
    Matrix x = random_matrix(6, 8, prng);
    std::vector<int> n_real{3, 2};  // second list has one padded row
    AttentionCache cache;
    Matrix probe = random_matrix(6, 8, prng);
    // padded rows carry no loss
    probe.row(5).setZero();
    auto loss = [&] {
      AttentionCache c;
      return (probe.array() * mha.forward(store, x, 2, 3, n_real, c).array()).sum();
    };
    auto grads = [&] {
      store.zero_grads();
      mha.forward(store, x, 2, 3, n_real, cache);
      mha.backward(store, cache, probe);
    };
    auto rep = grad_check(store, loss, grads, 1e-5, 1e-4);
    INFO(rep.worst_param << " rel err " << rep.max_rel_err);
    CHECK(rep.pass);
  }

  SECTION("activations through a linear map") {
    ParamStore store;
    Linear lin(store, "l", 3, 3, rng);
    Matrix x = random_matrix(4, 3, rng);
    enum class Act { kRelu, kTanh, kSigmoid };
    for (Act act : {Act::kRelu, Act::kTanh, Act::kSigmoid}) {
      LinearCache cache;
      Matrix pre, out;
      auto fwd = [&]() -> Matrix {
        LinearCache c;
        Matrix p = lin.forward(store, x, c);
        switch (act) {
          case Act::kRelu: return relu(p);
          case Act::kTanh: return tanh_fwd(p);
          default: return sigmoid(p);
        }
      };
      auto rep = check_kernel(
          store, fwd,
          [&](const Matrix& d) {
            pre = lin.forward(store, x, cache);
            Matrix dpre;
            switch (act) {
              case Act::kRelu: dpre = relu_backward(pre, d); break;
              case Act::kTanh: dpre = tanh_backward(tanh_fwd(pre), d); break;
              default: dpre = sigmoid_backward(sigmoid(pre), d); break;
            }
            lin.backward(store, cache, dpre);
          },
          rng);
      INFO(rep.worst_param << " rel err " << rep.max_rel_err);
      CHECK(rep.pass);
    }
  }
}

TEST_CASE("a corrupted gradient is caught and attributed") {
  ParamStore store;
  Rng rng(0);
  Linear a(store, "alpha", 3, 3, rng);
  Linear b(store, "beta", 3, 2, rng);
  Matrix x = random_matrix(2, 3, rng);
  Matrix probe = random_matrix(2, 2, rng);
  LinearCache ca, cb;
  auto loss = [&] {
    LinearCache c1, c2;
    return (probe.array() *
            b.forward(store, relu(a.forward(store, x, c1)), c2).array())
        .sum();
  };
  auto grads = [&] {
    store.zero_grads();
    Matrix pre = a.forward(store, x, ca);
    b.forward(store, relu(pre), cb);
    Matrix dpre = relu_backward(pre, b.backward(store, cb, probe));
    a.backward(store, ca, dpre);
    store.grad(2)(0, 0) *= 2.0;  // corrupt beta.w
  };
  auto rep = grad_check(store, loss, grads, 1e-5, 1e-4);
  CHECK_FALSE(rep.pass);
  CHECK(rep.worst_param == "beta.w");
}

TEST_CASE("non-finite loss during probing names the parameter") {
  ParamStore store;
  Rng rng(0);
  store.add_zero("p", 1, 1);
  auto loss = [&] {
    return store.value(0)(0, 0) > 0.0
               ? std::numeric_limits<double>::quiet_NaN()
               : 0.0;
  };
  try {
    grad_check(store, loss, [&] { store.zero_grads(); }, 1e-5, 1e-4);
    FAIL("expected CheckError");
  } catch (const CheckError& e) {
    CHECK(std::string(e.what()).find("p") != std::string::npos);
  }
}

TEST_CASE("sgd step moves against the gradient") {
  ParamStore store;
  store.add_zero("w", 2, 1);
  store.grad(0) << 1.0, -2.0;
  store.sgd_step(0.1, 0.5);
  CHECK(store.value(0)(0, 0) == Catch::Approx(-0.05));
  CHECK(store.value(0)(1, 0) == Catch::Approx(0.1));
}
