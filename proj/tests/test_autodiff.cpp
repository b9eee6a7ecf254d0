#include <doctest.h>

#include <cmath>
#include <vector>

#include "sleepfusion/ad/adam.hpp"
#include "sleepfusion/ad/grad_check.hpp"
#include "sleepfusion/ad/ops.hpp"
#include "sleepfusion/ad/tape.hpp"

using namespace sleepfusion::ad;

namespace {

// Brute-force triple-loop product, independent of the matmul kernel.
std::vector<double> matmul_oracle(const std::vector<double>& a,
                                  const std::vector<double>& b, int m, int k, int n) {
  std::vector<double> c(static_cast<std::size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      for (int kk = 0; kk < k; ++kk)
        c[i * n + j] += a[i * k + kk] * b[kk * n + j];
  return c;
}

Tensor random_tensor(Shape shape, Rng& rng, bool rg = false) {
  return Tensor::randn(std::move(shape), rng, 1.0, rg);
}

}  // namespace

TEST_CASE("matmul: identity, hand arithmetic, oracle") {
  Tensor eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Rng rng(7);
  Tensor a = random_tensor({3, 3}, rng);
  Tensor ia = matmul(eye, a);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(ia.values()[i] == doctest::Approx(a.values()[i]));

  Tensor m1 = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor m2 = Tensor::from({2, 1}, {0, 1});
  Tensor prod = matmul(m1, m2);
  CHECK(prod.values()[0] == 2.0);
  CHECK(prod.values()[1] == 4.0);

  Tensor x = random_tensor({5, 7}, rng);
  Tensor y = random_tensor({7, 3}, rng);
  Tensor z = matmul(x, y);
  auto expect = matmul_oracle(x.values(), y.values(), 5, 7, 3);
  double max_diff = 0.0;
  for (std::size_t i = 0; i < expect.size(); ++i)
    max_diff = std::max(max_diff, std::abs(expect[i] - z.values()[i]));
  CHECK(max_diff < 1e-12);
}

TEST_CASE("matmul: batched forms and shape errors report both shapes") {
  Rng rng(3);
  Tensor a = random_tensor({4, 2, 3}, rng);
  Tensor w = random_tensor({3, 5}, rng);
  Tensor out = matmul(a, w);
  REQUIRE(out.shape() == Shape{4, 2, 5});
  // each batch slice equals the 2-D product
  for (int b = 0; b < 4; ++b) {
    std::vector<double> slice(a.values().begin() + b * 6, a.values().begin() + (b + 1) * 6);
    auto expect = matmul_oracle(slice, w.values(), 2, 3, 5);
    for (int i = 0; i < 10; ++i)
      CHECK(out.values()[b * 10 + i] == doctest::Approx(expect[i]).epsilon(1e-12));
  }

  Tensor bad = random_tensor({4, 5}, rng);
  try {
    matmul(a, bad);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[4,2,3]") != std::string::npos);
    CHECK(msg.find("[4,5]") != std::string::npos);
  }
}

TEST_CASE("matmul_nt matches transpose composition") {
  Rng rng(11);
  Tensor a = random_tensor({4, 6}, rng);
  Tensor b = random_tensor({5, 6}, rng);
  Tensor direct = matmul_nt(a, b);
  Tensor via_t = matmul(a, transpose(b));
  for (std::size_t i = 0; i < direct.size(); ++i)
    CHECK(direct.values()[i] == doctest::Approx(via_t.values()[i]).epsilon(1e-14));
}

TEST_CASE("softmax: symmetry, shift invariance, exp/sum oracle") {
  Tensor flat = softmax(Tensor::from({3}, {0, 0, 0}), 0);
  for (double v : flat.values()) CHECK(v == doctest::Approx(1.0 / 3));

  Rng rng(5);
  Tensor x = random_tensor({6}, rng);
  std::vector<double> shifted_vals = x.values();
  for (auto& v : shifted_vals) v += 17.5;
  Tensor s1 = softmax(x, 0);
  Tensor s2 = softmax(Tensor::from({6}, shifted_vals), 0);
  for (std::size_t i = 0; i < s1.size(); ++i)
    CHECK(s1.values()[i] == doctest::Approx(s2.values()[i]).epsilon(1e-12));

  Tensor t = softmax(Tensor::from({3}, {1, 2, 3}), 0);
  // direct exp/sum oracle
  double denom = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  CHECK(t.values()[0] == doctest::Approx(std::exp(1.0) / denom).epsilon(1e-12));
  CHECK(t.values()[1] == doctest::Approx(std::exp(2.0) / denom).epsilon(1e-12));
  CHECK(t.values()[2] == doctest::Approx(std::exp(3.0) / denom).epsilon(1e-12));
  CHECK(t.values()[0] == doctest::Approx(0.0900).epsilon(1e-3));
  CHECK(t.values()[1] == doctest::Approx(0.2447).epsilon(1e-3));
  CHECK(t.values()[2] == doctest::Approx(0.6652).epsilon(1e-3));
}

TEST_CASE("softmax rows sum to 1 for random shapes and axes") {
  Rng rng(13);
  const Shape shapes[] = {{7}, {4, 9}, {3, 5, 8}};
  for (const Shape& sh : shapes) {
    Tensor x = random_tensor(sh, rng);
    for (int axis = 0; axis < static_cast<int>(sh.size()); ++axis) {
      Tensor y = softmax(x, axis);
      // sum along the axis by brute force
      std::size_t outer = 1, inner = 1;
      for (int i = 0; i < axis; ++i) outer *= sh[i];
      for (std::size_t i = axis + 1; i < sh.size(); ++i) inner *= sh[i];
      const std::size_t lane = sh[axis];
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          double s = 0.0;
          for (std::size_t j = 0; j < lane; ++j) s += y.values()[(o * lane + j) * inner + in];
          CHECK(std::abs(s - 1.0) < 1e-12);
        }
      }
    }
  }
}

TEST_CASE("layernorm: constant vector, mean/variance, two-pass oracle") {
  Tensor gamma = Tensor::full({3}, 1.0);
  Tensor beta = Tensor::zeros({3});
  Tensor y = layernorm(Tensor::from({3}, {5, 5, 5}), gamma, beta);
  for (double v : y.values()) CHECK(v == doctest::Approx(0.0));

  Rng rng(17);
  Tensor g128 = Tensor::full({128}, 1.0);
  Tensor b128 = Tensor::zeros({128});
  Tensor x = random_tensor({4, 128}, rng);
  Tensor out = layernorm(x, g128, b128);
  for (int r = 0; r < 4; ++r) {
    double m = 0.0, v2 = 0.0;
    for (int j = 0; j < 128; ++j) m += out.values()[r * 128 + j];
    m /= 128;
    CHECK(std::abs(m) < 1e-6);
    for (int j = 0; j < 128; ++j) {
      double d = out.values()[r * 128 + j] - m;
      v2 += d * d;
    }
    CHECK(v2 / 128 == doctest::Approx(1.0).epsilon(1e-4));
  }

  // two-pass mean/variance oracle
  double max_diff = 0.0;
  for (int r = 0; r < 4; ++r) {
    double m = 0.0;
    for (int j = 0; j < 128; ++j) m += x.values()[r * 128 + j];
    m /= 128;
    double var = 0.0;
    for (int j = 0; j < 128; ++j) {
      double d = x.values()[r * 128 + j] - m;
      var += d * d;
    }
    var /= 128;
    for (int j = 0; j < 128; ++j) {
      double expect = (x.values()[r * 128 + j] - m) / std::sqrt(var + 1e-5);
      max_diff = std::max(max_diff, std::abs(expect - out.values()[r * 128 + j]));
    }
  }
  CHECK(max_diff < 1e-10);
}

TEST_CASE("relu: values, idempotence, subgradient") {
  Tensor y = relu(Tensor::from({3}, {-1, 0, 2}));
  CHECK(y.values() == std::vector<double>{0, 0, 2});

  Rng rng(23);
  Tensor x = random_tensor({50}, rng);
  Tensor r1 = relu(x);
  Tensor r2 = relu(r1);
  CHECK(r1.values() == r2.values());

  Tensor inp = Tensor::from({2}, {-1, 2}, true);
  {
    Tape tape;
    Tensor loss = sum(relu(inp));
    tape.backward(loss);
  }
  CHECK(inp.grad()[0] == 0.0);
  CHECK(inp.grad()[1] == 1.0);
}

TEST_CASE("dropout: identity cases and survivor fraction") {
  Rng rng(29);
  Tensor x = Tensor::full({10}, 2.0);
  Tensor same = dropout(x, 0.0, true, rng);
  CHECK(same.values() == x.values());
  Tensor eval_mode = dropout(x, 0.3, false, rng);
  CHECK(eval_mode.values() == x.values());
  CHECK_THROWS_AS(dropout(x, 1.0, true, rng), ConfigError);
  CHECK_THROWS_AS(dropout(x, -0.1, true, rng), ConfigError);

  Tensor big = Tensor::full({1000, 1000}, 1.0);
  Tensor dropped = dropout(big, 0.3, true, rng);
  std::size_t survivors = 0;
  for (double v : dropped.values()) {
    if (v != 0.0) {
      ++survivors;
      CHECK(v == doctest::Approx(1.0 / 0.7));
    }
  }
  const double frac = static_cast<double>(survivors) / 1e6;
  CHECK(frac > 0.69);
  CHECK(frac < 0.71);
}

TEST_CASE("cross_entropy: uniform, scaled one-hot limit, log-sum-exp oracle") {
  Tensor uniform = Tensor::zeros({1, 5});
  CHECK(cross_entropy(uniform, std::vector<int>{0}).scalar() ==
        doctest::Approx(std::log(5.0)).epsilon(1e-12));

  double prev = 1e30;
  for (double s : {1.0, 2.0, 5.0, 10.0, 30.0}) {
    Tensor hot = Tensor::from({1, 3}, {s, 0, 0});
    double loss = cross_entropy(hot, std::vector<int>{0}).scalar();
    CHECK(loss < prev);
    prev = loss;
  }
  CHECK(prev < 1e-10);

  Rng rng(31);
  Tensor logits = random_tensor({8, 5}, rng);
  std::vector<int> labels;
  for (int i = 0; i < 8; ++i) labels.push_back(static_cast<int>(rng.below(5)));
  double loss = cross_entropy(logits, labels).scalar();
  // independent log-sum-exp oracle
  double expect = 0.0;
  for (int i = 0; i < 8; ++i) {
    double mx = -1e300;
    for (int j = 0; j < 5; ++j) mx = std::max(mx, logits.values()[i * 5 + j]);
    double denom = 0.0;
    for (int j = 0; j < 5; ++j) denom += std::exp(logits.values()[i * 5 + j] - mx);
    expect += mx + std::log(denom) - logits.values()[i * 5 + labels[i]];
  }
  expect /= 8;
  CHECK(std::abs(loss - expect) < 1e-12);

  CHECK_THROWS_AS(cross_entropy(logits, std::vector<int>{0, 1, 2, 3, 4, 0, 1, 9}), DataError);
}

TEST_CASE("cross_entropy with distribution rows matches label form") {
  Rng rng(37);
  Tensor logits = random_tensor({4, 4}, rng);
  std::vector<double> target(16, 0.0);
  std::vector<int> labels = {2, 0, 3, 1};
  for (int i = 0; i < 4; ++i) target[i * 4 + labels[i]] = 1.0;
  double a = cross_entropy(logits, Tensor::from({4, 4}, target)).scalar();
  double b = cross_entropy(logits, labels).scalar();
  CHECK(a == doctest::Approx(b).epsilon(1e-14));
}

TEST_CASE("backward: all-ones, accumulation across reuse, scalar requirement") {
  Tensor x = Tensor::from({4}, {1, 2, 3, 4}, true);
  {
    Tape tape;
    Tensor loss = sum(x);
    tape.backward(loss);
  }
  for (double g : x.grad()) CHECK(g == 1.0);

  Tensor y = Tensor::from({1}, {3.0}, true);
  {
    Tape tape;
    Tensor loss = add(y, y);
    tape.backward(loss);
  }
  CHECK(y.grad()[0] == 2.0);

  Tensor z = Tensor::from({2}, {1, 2}, true);
  {
    Tape tape;
    Tensor nonscalar = add(z, z);
    CHECK_THROWS_AS(tape.backward(nonscalar), ShapeError);
  }
}

TEST_CASE("tape replay is deterministic: bitwise-equal gradients") {
  auto run = [](std::uint64_t seed) {
    Rng init(seed), drop(seed + 1);
    Tensor w = Tensor::randn({16, 16}, init, 0.5, true);
    Tensor x = Tensor::randn({8, 16}, init);
    Tape tape;
    Tensor h = dropout(relu(matmul(x, w)), 0.3, true, drop);
    Tensor loss = mean(mul(h, h));
    tape.backward(loss);
    return w.grad();
  };
  auto g1 = run(99);
  auto g2 = run(99);
  CHECK(g1 == g2);  // bitwise
}

TEST_CASE("adam: no-op cases and first-step magnitude") {
  Rng rng(41);
  ParameterStore store;
  store.add("w", Tensor::randn({3, 3}, rng, 1.0, true));
  auto before = store.get("w").values();

  AdamState state;
  AdamConfig cfg;
  cfg.weight_decay = 0.0;
  store.zero_grad();
  adam_step(store, state, cfg);  // zero gradient, zero decay
  CHECK(store.get("w").values() == before);

  // lr = 0 is a no-op on parameters even with gradients
  AdamState state2;
  AdamConfig zero_lr;
  zero_lr.lr = 0.0;
  auto& w = store.get("w");
  w.zero_grad();
  for (auto& g : w.mutable_grad()) g = 1.25;
  adam_step(store, state2, zero_lr);
  CHECK(store.get("w").values() == before);

  // single scalar parameter with constant gradient: first step ~ lr
  ParameterStore s2;
  s2.add("p", Tensor::from({1}, {0.5}, true));
  s2.get("p").zero_grad();
  s2.get("p").mutable_grad()[0] = 0.3;
  AdamState st;
  AdamConfig c;
  c.lr = 1e-3;
  c.weight_decay = 0.0;
  adam_step(s2, st, c);
  CHECK(std::abs(0.5 - s2.get("p").values()[0]) == doctest::Approx(1e-3).epsilon(1e-4));
}

TEST_CASE("adam: 10 steps on f(w)=w^2 matches scalar reference") {
  // scalar reference implementation, fully independent of adam_step
  double w_ref = 1.0, m = 0.0, v = 0.0;
  const double lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  std::vector<double> trace;
  for (int t = 1; t <= 10; ++t) {
    const double g = 2.0 * w_ref;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t));
    const double vh = v / (1 - std::pow(b2, t));
    w_ref -= lr * mh / (std::sqrt(vh) + eps);
    trace.push_back(w_ref);
  }

  ParameterStore store;
  store.add("w", Tensor::from({1}, {1.0}, true));
  AdamState state;
  AdamConfig cfg;
  cfg.lr = lr;
  cfg.weight_decay = 0.0;
  for (int t = 0; t < 10; ++t) {
    Tensor& w = store.get("w");
    store.zero_grad();
    {
      Tape tape;
      Tensor loss = mul(w, w);
      tape.backward(loss);
    }
    adam_step(store, state, cfg);
    CHECK(std::abs(store.get("w").values()[0] - trace[t]) < 1e-12);
  }
}

TEST_CASE("finite_diff_check: quadratic is exact, non-determinism flagged") {
  Rng rng(43);
  Tensor x = Tensor::randn({6}, rng, 1.0, true);
  std::vector<Tensor> params = {x};
  auto f = [&]() { return sum(mul(x, x)); };
  Rng sampler(44);
  double err = finite_diff_check(f, params, sampler, 6);
  CHECK(err < 1e-8);

  Rng noisy_rng(45);
  auto g = [&]() { return sum(dropout(mul(x, x), 0.5, true, noisy_rng)); };
  CHECK_THROWS_AS(finite_diff_check(g, params, sampler, 3), NumericError);
}

TEST_CASE("non-finite forward values raise a diagnostic error") {
  Tensor a = Tensor::from({2}, {1e308, 1e308});
  CHECK_THROWS_AS(add(a, a), NumericError);
}

TEST_CASE("composite ops pass finite-difference checks") {
  Rng rng(47);
  Tensor w1 = Tensor::glorot({6, 4}, rng);
  Tensor b1 = Tensor::zeros({4}, true);
  Tensor gamma = Tensor::full({4}, 1.0, true);
  Tensor beta = Tensor::zeros({4}, true);
  Tensor x = Tensor::randn({5, 6}, rng);
  std::vector<Tensor> params = {w1, b1, gamma, beta};
  auto f = [&]() {
    Tensor h = layernorm(relu(add_bias(matmul(x, w1), b1)), gamma, beta);
    Tensor sm = softmax(h, -1);
    return cross_entropy(sm, std::vector<int>{0, 1, 2, 3, 0});
  };
  Rng sampler(48);
  CHECK(finite_diff_check(f, params, sampler, 8) < 1e-6);
}
