#include "priorlens/optim.hpp"

#include <cmath>

#include "doctest.h"

using namespace priorlens;
using DTensor = TensorT<double>;

namespace {

// Scalar AdamW written out longhand, kept independent of the library code.
struct ScalarRef {
  double m = 0, v = 0;
  int t = 0;
  double step(double p, double g, const AdamWConfig& c) {
    ++t;
    m = c.beta1 * m + (1 - c.beta1) * g;
    v = c.beta2 * v + (1 - c.beta2) * g * g;
    const double mh = m / (1 - std::pow(c.beta1, t));
    const double vh = v / (1 - std::pow(c.beta2, t));
    return p - c.lr * (mh / (std::sqrt(vh) + c.eps) + c.weight_decay * p);
  }
};

void set_grad(DTensor& p, double g) {
  // Poke the gradient slot directly; tests drive the optimizer without a tape.
  auto node = p.node();
  node->ensure_grad();
  for (auto& x : node->grad) x = g;
}

}  // namespace

TEST_CASE("zero gradient and zero decay is a fixed point") {
  auto p = DTensor::from_data({3}, {1.0, -2.0, 0.5}, true);
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  AdamWT<double> opt({{"p", p}}, cfg);
  set_grad(p, 0.0);
  for (int i = 0; i < 5; ++i) opt.step();
  CHECK(p.data()[0] == 1.0);
  CHECK(p.data()[1] == -2.0);
  CHECK(p.data()[2] == 0.5);
}

TEST_CASE("first step against constant unit gradient moves by about minus lr") {
  auto p = DTensor::from_data({1}, {0.0}, true);
  AdamWConfig cfg;  // defaults: lr 1e-4, wd 0.01, betas 0.9/0.999, eps 1e-8
  AdamWT<double> opt({{"p", p}}, cfg);
  set_grad(p, 1.0);
  opt.step();
  CHECK(p.data()[0] < 0.0);
  CHECK(p.data()[0] == doctest::Approx(-cfg.lr).epsilon(1e-6));
}

TEST_CASE("three steps match the scalar reference trajectory") {
  AdamWConfig cfg;
  cfg.lr = 0.05;
  cfg.weight_decay = 0.1;
  auto p = DTensor::from_data({1}, {0.7}, true);
  AdamWT<double> opt({{"p", p}}, cfg);

  ScalarRef ref;
  double pref = 0.7;
  const double grads[3] = {0.3, -1.2, 0.45};
  for (int i = 0; i < 3; ++i) {
    set_grad(p, grads[i]);
    pref = ref.step(pref, grads[i], cfg);
    opt.step();
    CHECK(p.data()[0] == doctest::Approx(pref).epsilon(1e-12));
  }
  CHECK(opt.step_count() == 3);
}

TEST_CASE("decoupled decay shrinks weights even with zero gradient") {
  auto p = DTensor::from_data({1}, {2.0}, true);
  AdamWConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.5;
  AdamWT<double> opt({{"p", p}}, cfg);
  set_grad(p, 0.0);
  opt.step();
  // p <- p - lr*wd*p = 2 * (1 - 0.05)
  CHECK(p.data()[0] == doctest::Approx(1.9).epsilon(1e-12));
}

TEST_CASE("step without a gradient names the offending parameter") {
  auto a = DTensor::from_data({1}, {0.0}, true);
  auto b = DTensor::from_data({1}, {0.0}, true);
  AdamWT<double> opt({{"alpha", a}, {"beta", b}}, {});
  set_grad(a, 1.0);
  try {
    opt.step();
    FAIL("expected UsageError");
  } catch (const UsageError& e) {
    CHECK(std::string(e.what()).find("beta") != std::string::npos);
  }
}

TEST_CASE("constructor rejects non-trainable and empty parameter lists") {
  auto frozen = DTensor::from_data({1}, {0.0}, false);
  CHECK_THROWS_AS(AdamWT<double>({{"w", frozen}}, {}), UsageError);
  CHECK_THROWS_AS(AdamWT<double>({}, {}), UsageError);
}
