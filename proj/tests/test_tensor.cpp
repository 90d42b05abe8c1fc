#include <doctest.h>

#include "fg/layers.hpp"
#include "fg/tensor.hpp"
#include "support.hpp"

using namespace fg;

TEST_CASE("tensor shape/value buffer agreement is enforced") {
  CHECK_THROWS_AS(Tensor::constant({2, 3}, {1.0, 2.0}), ShapeError);
  CHECK_THROWS_AS(Tensor::constant({0}, {}), ShapeError);
  Tensor t = Tensor::constant({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.size() == 6);
  CHECK(t.dim(1) == 3);
}

TEST_CASE("backward requires a scalar loss") {
  Tensor x = Tensor::param({3}, {1.0, 2.0, 3.0});
  Tensor y = sum(x);
  CHECK_NOTHROW(backward(y));
  Tensor z = relu(x);
  CHECK_THROWS_AS(backward(z), ContractError);
}

TEST_CASE("loss = sum(x) gives unit gradients") {
  Tensor x = Tensor::param({2, 2}, {1.0, -2.0, 3.0, 0.5});
  backward(sum(x));
  for (double g : x.grad()) CHECK(g == doctest::Approx(1.0));
}

TEST_CASE("gradients accumulate across backward calls until zero_grad") {
  Tensor x = Tensor::param({3}, {1.0, 2.0, 3.0});
  backward(sum(x));
  backward(sum(x));
  for (double g : x.grad()) CHECK(g == doctest::Approx(2.0));
  x.zero_grad();
  backward(sum(x));
  for (double g : x.grad()) CHECK(g == doctest::Approx(1.0));
}

TEST_CASE("disconnected parameter keeps a zero gradient") {
  Tensor x = Tensor::param({2}, {1.0, 1.0});
  Tensor unused = Tensor::param({2}, {5.0, 5.0});
  backward(sum(x));
  REQUIRE(unused.grad().size() == 2);
  CHECK(unused.grad()[0] == 0.0);
  CHECK(unused.grad()[1] == 0.0);
}

TEST_CASE("reshape round-trips values and gradients") {
  Tensor x = Tensor::param({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor y = reshape(x, {3, 2});
  CHECK(y.shape() == Shape{3, 2});
  CHECK_THROWS_AS(reshape(x, {4, 2}), ShapeError);
  backward(sum(y));
  for (double g : x.grad()) CHECK(g == doctest::Approx(1.0));
}

TEST_CASE("pad2d and crop2d are inverse shapes and route gradients") {
  Tensor x = Tensor::param({1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor padded = pad2d(x, 1, 0, 0, 2);
  CHECK(padded.shape() == Shape{1, 1, 3, 4});
  CHECK(padded.values()[0] == 0.0);          // new top row
  CHECK(padded.values()[4] == 1.0);          // original row 0 starts
  Tensor back = crop2d(padded, 1, 0, 0, 2);
  CHECK(back.shape() == x.shape());
  for (int i = 0; i < 4; ++i) CHECK(back.values()[i] == x.values()[i]);
  backward(sum(back));
  for (double g : x.grad()) CHECK(g == doctest::Approx(1.0));
}

TEST_CASE("check_finite reports NaN") {
  Tensor x = Tensor::constant({2}, {1.0, std::nan("")});
  CHECK_THROWS_AS(check_finite(x, "input"), EngineError);
}

TEST_CASE("rng streams are deterministic and forks are independent") {
  fg::Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  fg::Rng c(42);
  fg::Rng f1 = c.fork("alpha");
  c.uniform();  // consuming the parent must not change fork streams
  fg::Rng f2 = fg::Rng(42).fork("alpha");
  for (int i = 0; i < 10; ++i) CHECK(f1.next_u64() == f2.next_u64());
}
