#include <doctest.h>

#include "transfg/errors.hpp"
#include "transfg/ops.hpp"
#include "transfg/tensor.hpp"

using namespace transfg;

TEST_CASE("tensor shape and storage") {
  Tensor<double> t({2, 3});
  CHECK(t.numel() == 6);
  CHECK(t.rank() == 2);
  CHECK(shape_string(t.shape()) == "[2x3]");
  CHECK_FALSE(t.requires_grad());
  CHECK(t.grad().empty());

  t.set_requires_grad(true);
  CHECK(t.grad().size() == t.numel());

  auto alias = t;
  alias(1, 2) = 5.0;
  CHECK(t[5] == 5.0);
  auto copy = t.clone();
  copy[5] = 1.0;
  CHECK(t[5] == 5.0);
  CHECK_FALSE(copy.shares_storage(t));

  auto view = t.reshaped({3, 2});
  CHECK(view.shares_storage(t));
  CHECK_THROWS_AS(t.reshaped({4, 2}), DimensionError);
  CHECK_THROWS_AS(Tensor<double>({2, 0}), DimensionError);
  CHECK_THROWS_AS(Tensor<double>({2}, {1.0, 2.0, 3.0}), DimensionError);
}

TEST_CASE("backward of sum gives ones") {
  Tensor<double> w({3}, {0.5, -1.0, 2.0}, true);
  Tape<double> tape;
  auto loss = sum(tape, w);
  tape.backward(loss);
  for (double g : w.grad()) CHECK(g == 1.0);
}

TEST_CASE("backward of squared norm gives 2w") {
  Tensor<double> w({2}, {1.0, -2.0}, true);
  Tape<double> tape;
  auto loss = sum(tape, mul(tape, w, w));
  tape.backward(loss);
  CHECK(w.grad()[0] == 2.0);
  CHECK(w.grad()[1] == -4.0);
}

TEST_CASE("tape contract") {
  Tensor<double> w({2}, {1.0, 2.0}, true);
  SUBCASE("non-scalar loss") {
    Tape<double> tape;
    auto out = mul(tape, w, w);
    CHECK_THROWS_AS(tape.backward(out), ContractError);
  }
  SUBCASE("consumed once") {
    Tape<double> tape;
    auto loss = sum(tape, w);
    tape.backward(loss);
    CHECK(tape.consumed());
    CHECK_THROWS_AS(tape.backward(loss), ContractError);
  }
  SUBCASE("inference tape records nothing") {
    auto tape = Tape<double>::inference();
    auto loss = sum(tape, mul(tape, w, w));
    CHECK(tape.size() == 0);
    CHECK_FALSE(loss.requires_grad());
  }
  SUBCASE("constants are not tracked") {
    Tensor<double> c({2}, {3.0, 4.0});
    Tape<double> tape;
    auto out = mul(tape, c, c);
    CHECK_FALSE(out.requires_grad());
    CHECK(tape.size() == 0);
  }
}

TEST_CASE("gradients accumulate across uses") {
  Tensor<double> w({2}, {1.0, 3.0}, true);
  Tape<double> tape;
  auto loss = sum(tape, add(tape, w, add(tape, w, w)));
  tape.backward(loss);
  CHECK(w.grad()[0] == 3.0);
  CHECK(w.grad()[1] == 3.0);
  w.zero_grad();
  CHECK(w.grad()[0] == 0.0);
}

TEST_CASE("cast preserves values") {
  Tensor<double> d({2}, {0.25, -1.5});
  auto f = d.cast<float>();
  CHECK(f[0] == 0.25f);
  CHECK(f[1] == -1.5f);
}
