#include <doctest.h>

#include <cmath>
#include <random>

#include "sliceqa/tensor.hpp"

using namespace sliceqa;

namespace {

Tensor random_tensor(Shape s, std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> dist(-scale, scale);
  Tensor t = Tensor::zeros(std::move(s));
  for (Index i = 0; i < t.numel(); ++i) t.values[i] = dist(rng);
  return t;
}

}  // namespace

TEST_SUITE_BEGIN("tensor");

TEST_CASE("matmul identity") {
  Tensor eye = Tensor::matrix({{1, 0}, {0, 1}});
  Tensor b = Tensor::matrix({{3, 4}, {5, 6}});
  Tape tape;
  Var out = matmul(tape.leaf(eye), tape.leaf(b));
  CHECK(tape.values(out.id).isApprox(b.values));
}

TEST_CASE("matmul hand value") {
  Tensor a = Tensor::matrix({{1, 2}});
  Tensor b = Tensor::matrix({{3}, {4}});
  Tape tape;
  Var out = matmul(tape.leaf(a), tape.leaf(b));
  CHECK(tape.values(out.id).size() == 1);
  CHECK(tape.values(out.id)[0] == doctest::Approx(11.0));
}

TEST_CASE("matmul zero-row operand") {
  Tensor a = Tensor::zeros({0, 3});
  Tensor b = Tensor::zeros({3, 4});
  Tape tape;
  Var out = matmul(tape.leaf(a), tape.leaf(b));
  CHECK(out.shape() == Shape{0, 4});
  CHECK(tape.values(out.id).size() == 0);
}

TEST_CASE("matmul dimension mismatch names both shapes") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 5});
  Tape tape;
  try {
    matmul(tape.leaf(a), tape.leaf(b));
    FAIL("expected shape error");
  } catch (const std::invalid_argument& e) {
    std::string msg = e.what();
    CHECK(msg.find("[2 x 3]") != std::string::npos);
    CHECK(msg.find("[4 x 5]") != std::string::npos);
  }
}

TEST_CASE("masked_softmax uniform over symmetric logits") {
  Tensor x = Tensor::row({0, 0, 0});
  Tape tape;
  Var y = masked_softmax(tape.leaf(x), {1, 1, 1});
  for (int i = 0; i < 3; ++i) CHECK(tape.values(y.id)[i] == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("masked_softmax respects mask") {
  Tensor x = Tensor::row({0, 0, 0});
  Tape tape;
  Var y = masked_softmax(tape.leaf(x), {1, 0, 1});
  CHECK(tape.values(y.id)[0] == doctest::Approx(0.5));
  CHECK(tape.values(y.id)[1] == 0.0);
  CHECK(tape.values(y.id)[2] == doctest::Approx(0.5));
}

TEST_CASE("masked_softmax hand value") {
  Tensor x = Tensor::row({1, 2});
  Tape tape;
  Var y = masked_softmax(tape.leaf(x), {1, 1});
  CHECK(tape.values(y.id)[0] == doctest::Approx(0.26894).epsilon(1e-4));
  CHECK(tape.values(y.id)[1] == doctest::Approx(0.73106).epsilon(1e-4));
}

TEST_CASE("masked_softmax rejects empty support") {
  Tensor x = Tensor::row({1, 2});
  Tape tape;
  CHECK_THROWS_WITH_AS(masked_softmax(tape.leaf(x), {0, 0}),
                       doctest::Contains("empty support"), std::invalid_argument);
}

TEST_CASE("masked_softmax rows sum to one over support") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = random_tensor({4, 6}, rng, 5.0);
    std::vector<std::uint8_t> mask(6);
    std::bernoulli_distribution coin(0.6);
    bool any = false;
    for (auto& m : mask) {
      m = coin(rng);
      any = any || m;
    }
    if (!any) mask[0] = 1;
    Tape tape;
    Var y = masked_softmax(tape.leaf(x), mask);
    ConstMatMap out = tape.mat(y.id);
    for (Index r = 0; r < 4; ++r) {
      double total = 0;
      for (Index c = 0; c < 6; ++c) {
        total += out(r, c);
        if (!mask[c]) CHECK(out(r, c) == 0.0);
      }
      CHECK(std::abs(total - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("backward of sum gives all-ones") {
  std::mt19937_64 rng(1);
  Tensor x = random_tensor({3, 4}, rng);
  Tape tape;
  Var loss = sum(tape.leaf(x));
  tape.backward(loss);
  for (Index i = 0; i < x.numel(); ++i) CHECK(x.grad[i] == 1.0);
}

TEST_CASE("backward of sum of squares") {
  Tensor x = Tensor::row({1, 2, 3});
  Tape tape;
  Var lx = tape.leaf(x);
  Var loss = sum(mul(lx, lx));
  tape.backward(loss);
  CHECK(x.grad[0] == doctest::Approx(2));
  CHECK(x.grad[1] == doctest::Approx(4));
  CHECK(x.grad[2] == doctest::Approx(6));
}

TEST_CASE("gradient accumulates across uses") {
  Tensor x = Tensor::row({5, -1});
  Tape tape;
  Var lx = tape.leaf(x);
  Var loss = sum(add(lx, lx));
  tape.backward(loss);
  CHECK(x.grad[0] == 2.0);
  CHECK(x.grad[1] == 2.0);
}

TEST_CASE("gradient accumulates across backward calls without explicit zeroing") {
  Tensor x = Tensor::row({1, 1});
  for (int pass = 0; pass < 2; ++pass) {
    Tape tape;
    tape.backward(sum(tape.leaf(x)));
  }
  CHECK(x.grad[0] == 2.0);
  x.zero_grad();
  CHECK(x.grad[0] == 0.0);
}

TEST_CASE("backward rejects non-scalar loss") {
  Tensor x = Tensor::row({1, 2});
  Tape tape;
  Var lx = tape.leaf(x);
  CHECK_THROWS_AS(tape.backward(lx), std::invalid_argument);
}

TEST_CASE("backward is deterministic bit-for-bit") {
  std::mt19937_64 rng(99);
  Tensor a = random_tensor({3, 5}, rng);
  Tensor b = random_tensor({5, 2}, rng);
  auto run = [&]() {
    a.grad.resize(0);
    b.grad.resize(0);
    Tape tape;
    Var out = tanh(matmul(tape.leaf(a), tape.leaf(b)));
    tape.backward(sum(mul(out, out)));
    return std::make_pair(a.grad, b.grad);
  };
  auto [ga1, gb1] = run();
  auto [ga2, gb2] = run();
  CHECK(ga1 == ga2);
  CHECK(gb1 == gb2);
}

TEST_CASE("grad_check sum of squares") {
  Tensor x = Tensor::row({1, 2});
  Tensor* params[] = {&x};
  double err = grad_check(
      [&](Tape& t) {
        Var lx = t.leaf(x);
        return sum(mul(lx, lx));
      },
      params, 1e-5);
  CHECK(err < 1e-6);
}

TEST_CASE("grad_check constant function") {
  Tensor x = Tensor::row({1, 2});
  Tensor* params[] = {&x};
  double err = grad_check([&](Tape& t) { return t.constant(Tensor::scalar(3.0)); }, params, 1e-5);
  CHECK(err <= 1e-9);
}

TEST_CASE("grad_check rejects bad epsilon") {
  Tensor x = Tensor::row({1});
  Tensor* params[] = {&x};
  CHECK_THROWS_AS(grad_check([&](Tape& t) { return sum(t.leaf(x)); }, params, 0.5),
                  std::invalid_argument);
  CHECK_THROWS_AS(grad_check([&](Tape& t) { return sum(t.leaf(x)); }, params, 0.0),
                  std::invalid_argument);
}

TEST_CASE("grad_check composite ops stay under 1e-4") {
  std::mt19937_64 rng(2024);
  Tensor a = random_tensor({3, 4}, rng, 0.8);
  Tensor b = random_tensor({4, 3}, rng, 0.8);
  Tensor c = random_tensor({3, 3}, rng, 0.8);
  Tensor* params[] = {&a, &b, &c};

  SUBCASE("matmul + tanh + mul") {
    double err = grad_check(
        [&](Tape& t) {
          Var out = tanh(matmul(t.leaf(a), t.leaf(b)));
          return sum(mul(out, t.leaf(c)));
        },
        params, 1e-5);
    CHECK(err < 1e-4);
  }
  SUBCASE("sigmoid + relu + sub") {
    double err = grad_check(
        [&](Tape& t) {
          Var out = sigmoid(matmul(t.leaf(a), t.leaf(b)));
          return sum(relu(sub(out, t.leaf(c))));
        },
        params, 1e-5);
    CHECK(err < 1e-4);
  }
  SUBCASE("exp + log + square + mean") {
    double err = grad_check(
        [&](Tape& t) {
          Var pos = add(sigmoid(t.leaf(c)), t.constant_full({3, 3}, 0.5));
          return mean(square(sliceqa::log(sliceqa::exp(pos))));
        },
        params, 1e-5);
    CHECK(err < 1e-4);
  }
  SUBCASE("concat + slice + transpose") {
    double err = grad_check(
        [&](Tape& t) {
          Var joined = concat({t.leaf(a), transpose(t.leaf(b))}, 1);
          Var part = slice(joined, 1, 1, 5);
          return sum(mul(part, part));
        },
        params, 1e-5);
    CHECK(err < 1e-4);
  }
  SUBCASE("masked_softmax") {
    Tensor weights = random_tensor({3, 4}, rng);
    double err = grad_check(
        [&](Tape& t) {
          Var probs = masked_softmax(t.leaf(a), {1, 0, 1, 1});
          return sum(mul(probs, t.constant(weights)));
        },
        params, 1e-5);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("slice forward values") {
  Tensor x = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
  Tape tape;
  Var rows = slice(tape.leaf(x), 0, 1, 2);
  CHECK(tape.values(rows.id)[0] == 4);
  CHECK(tape.values(rows.id)[2] == 6);
  Var cols = slice(tape.leaf(x), 1, 0, 2);
  CHECK(tape.values(cols.id)[0] == 1);
  CHECK(tape.values(cols.id)[3] == 5);
  CHECK_THROWS_AS(slice(tape.leaf(x), 0, 0, 5), std::invalid_argument);
}

TEST_CASE("concat along both axes") {
  Tensor a = Tensor::matrix({{1, 2}});
  Tensor b = Tensor::matrix({{3, 4}});
  Tape tape;
  Var v0 = concat({tape.leaf(a), tape.leaf(b)}, 0);
  CHECK(v0.shape() == Shape{2, 2});
  Var v1 = concat({tape.leaf(a), tape.leaf(b)}, 1);
  CHECK(v1.shape() == Shape{1, 4});
  CHECK(tape.values(v1.id)[2] == 3);
}

TEST_CASE("values and grads stay finite through a mixed pass") {
  std::mt19937_64 rng(5);
  Tensor a = random_tensor({4, 4}, rng);
  Tensor b = random_tensor({4, 4}, rng);
  Tape tape;
  Var out = masked_softmax(matmul(tanh(tape.leaf(a)), sigmoid(tape.leaf(b))), {1, 1, 1, 0});
  Var loss = mean(square(out));
  tape.backward(loss);
  CHECK(a.all_finite());
  CHECK(b.all_finite());
  CHECK(std::isfinite(tape.scalar_value(loss)));
}

TEST_CASE("row-major reshape is observable") {
  Tensor x = Tensor::zeros({2, 6});
  for (Index i = 0; i < 12; ++i) x.values[i] = static_cast<double>(i);
  Tensor y = x.reshaped({3, 4});
  for (Index r = 0; r < 3; ++r) {
    for (Index c = 0; c < 4; ++c) {
      CHECK(y.at(r, c) == x.values[r * 4 + c]);
    }
  }
  CHECK_THROWS_AS(x.reshaped({5, 5}), std::invalid_argument);
}

TEST_SUITE_END();
