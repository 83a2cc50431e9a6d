#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>

#include "gdpnet/gradcheck.hpp"

using namespace gdpnet;

TEST_CASE("central differences are exact for a quadratic") {
  ParamTensor<double> theta("theta", {1});
  theta.value = {3.0};
  theta.grad = {3.0};  // d(theta^2/2)/dtheta at 3
  auto loss = [&]() { return 0.5 * theta.value[0] * theta.value[0]; };
  auto rep = finite_diff_check<double>(loss, {&theta});
  CHECK(rep.worst_rel_err <= 1e-10);
  CHECK(rep.coords_checked == 1);
}

TEST_CASE("a wrong analytic gradient is flagged") {
  ParamTensor<double> theta("theta", {2});
  theta.value = {1.0, -2.0};
  theta.grad = {2.0 * 1.0, 2.0 * -2.0};  // gradient of theta^2, not theta^2/2
  auto loss = [&]() {
    return 0.5 * (theta.value[0] * theta.value[0] +
                  theta.value[1] * theta.value[1]);
  };
  auto rep = finite_diff_check<double>(loss, {&theta});
  CHECK(rep.worst_rel_err > 0.3);
  CHECK(rep.worst_param == 0);
}

TEST_CASE("the worst coordinate is identified") {
  ParamTensor<double> a("a", {2});
  a.value = {1.0, 1.0};
  a.grad = {1.0, 5.0};  // second coordinate deliberately wrong
  auto loss = [&]() { return 0.5 * (a.value[0] * a.value[0] +
                                    a.value[1] * a.value[1]); };
  auto rep = finite_diff_check<double>(loss, {&a});
  CHECK(rep.worst_coord == 1);
  CHECK(rep.analytic == 5.0);
  CHECK(rep.numeric == Catch::Approx(1.0).margin(1e-9));
}

TEST_CASE("non-finite loss raises a numeric error") {
  ParamTensor<double> theta("theta", {1});
  theta.value = {0.0};
  auto loss = [&]() { return std::numeric_limits<double>::quiet_NaN(); };
  REQUIRE_THROWS_AS(finite_diff_check<double>(loss, {&theta}), Error);
  try {
    finite_diff_check<double>(loss, {&theta});
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::numeric);
  }
}

TEST_CASE("coordinate sampling cap limits work") {
  ParamTensor<double> theta("theta", {100});
  for (size_t i = 0; i < 100; ++i) {
    theta.value[i] = double(i) * 0.01;
    theta.grad[i] = double(i) * 0.01;
  }
  auto loss = [&]() {
    double acc = 0;
    for (double v : theta.value) acc += 0.5 * v * v;
    return acc;
  };
  auto rep = finite_diff_check<double>(loss, {&theta}, 1e-5, 10);
  CHECK(rep.coords_checked == 10);
  CHECK(rep.worst_rel_err <= 1e-8);
}
