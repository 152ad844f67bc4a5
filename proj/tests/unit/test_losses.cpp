#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

#include "gradcheck.hpp"
#include "wkpnet/error.hpp"
#include "wkpnet/nn/losses.hpp"
#include "wkpnet/nn/optim.hpp"

using namespace wkpnet;
using namespace wkpnet::nn;
using wkpnet::testing::random_tensor;
using wkpnet::testing::rel_error;

namespace {

double entropy(const std::vector<double>& p) {
  double h = 0.0;
  for (double v : p) h -= v > 0 ? v * std::log(v) : 0.0;
  return h;
}

std::vector<int> random_labels(int n, int classes, std::mt19937_64& rng) {
  std::vector<int> labels(n);
  for (int& l : labels) l = std::uniform_int_distribution<int>(0, classes - 1)(rng);
  return labels;
}

// Max relative error between an analytic logit gradient and central differences of `loss`.
double loss_grad_error(Tensor<double> z, const Tensor<double>& analytic, const std::function<double(const Tensor<double>&)>& loss) {
  const double eps = 1e-3;
  double worst = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double base = z[i];
    z[i] = base + eps;
    const double up = loss(z);
    z[i] = base - eps;
    const double down = loss(z);
    z[i] = base;
    worst = std::max(worst, rel_error(analytic[i], (up - down) / (2 * eps)));
  }
  return worst;
}

}  // namespace

TEST_SUITE("losses") {
  TEST_CASE("softened softmax oracles") {
    const std::vector<double> z{2.0, 0.0};
    const auto p1 = softened_softmax(z, 1.0);
    const double e2 = std::exp(2.0);
    CHECK(std::abs(p1[0] - e2 / (e2 + 1.0)) < 1e-12);
    CHECK(std::abs(p1[0] - 0.8808) < 1e-4);
    CHECK(std::abs(p1[1] - 0.1192) < 1e-4);
    const auto p5 = softened_softmax(z, 5.0);
    CHECK(entropy(p5) > entropy(p1));

    const auto u = softened_softmax(std::vector<double>(7, 3.3), 2.0);
    for (double v : u) CHECK(std::abs(v - 1.0 / 7.0) < 1e-15);

    try {
      softened_softmax(z, 0.0);
      FAIL("expected a parameter error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Parameter);
    }
  }

  TEST_CASE("softened softmax properties over random logits") {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> d(0.0, 10.0);
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<double> z(1 + trial % 17);
      for (double& v : z) v = d(rng);
      const double t = 0.1 + 0.05 * trial;
      const auto p = softened_softmax(z, t);
      double sum = 0.0;
      for (double v : p) sum += v;
      CHECK(std::abs(sum - 1.0) < 1e-7);
      const auto arg_z = std::max_element(z.begin(), z.end()) - z.begin();
      const auto arg_p = std::max_element(p.begin(), p.end()) - p.begin();
      CHECK(arg_z == arg_p);
      std::vector<double> shifted(z);
      for (double& v : shifted) v += 123.4;
      const auto q = softened_softmax(shifted, t);
      for (std::size_t i = 0; i < p.size(); ++i) CHECK(std::abs(p[i] - q[i]) < 1e-6);
    }
  }

  TEST_CASE("cross entropy gradient") {
    std::mt19937_64 rng(8);
    for (auto [n, c] : {std::pair{1, 2}, std::pair{4, 5}, std::pair{7, 16}}) {
      const auto z = random_tensor({n, c, 1, 1}, rng, 2.0);
      const auto labels = random_labels(n, c, rng);
      const auto result = cross_entropy(z, labels);
      CHECK(result.ce >= 0.0);
      const double err = loss_grad_error(z, result.grad, [&](const Tensor<double>& t) { return cross_entropy(t, labels).total; });
      CHECK(err < 1e-4);
    }
    Tensor<double> z({1, 3, 1, 1});
    const std::vector<int> bad{3};
    CHECK_THROWS_AS(cross_entropy(z, bad), Error);
  }

  TEST_CASE("distillation loss gradient at T=5 and alpha=0.5") {
    std::mt19937_64 rng(9);
    for (auto [n, c] : {std::pair{2, 3}, std::pair{5, 8}, std::pair{10, 16}}) {
      for (bool t_squared : {false, true}) {
        const auto zs = random_tensor({n, c, 1, 1}, rng, 2.0);
        const auto zt = random_tensor({n, c, 1, 1}, rng, 4.0);
        const auto labels = random_labels(n, c, rng);
        const DistillSettings settings{5.0, 0.5, t_squared};
        const auto result = kd_loss(zs, zt, labels, settings);
        CHECK(result.kl >= 0.0);
        CHECK(result.ce >= 0.0);
        const double err = loss_grad_error(
            zs, result.grad, [&](const Tensor<double>& t) { return kd_loss(t, zt, labels, settings).total; });
        CAPTURE(n);
        CAPTURE(t_squared);
        CHECK(err < 1e-4);
      }
    }
  }

  TEST_CASE("distillation loss identities") {
    std::mt19937_64 rng(10);
    const auto z = random_tensor({6, 4, 1, 1}, rng);
    const auto labels = random_labels(6, 4, rng);
    const auto ce = cross_entropy(z, labels);

    const auto same = kd_loss(z, z, labels, {5.0, 0.3, false});
    CHECK(std::abs(same.kl) < 1e-12);
    CHECK(std::abs(same.total - 0.7 * ce.ce) < 1e-12);

    const auto zt = random_tensor({6, 4, 1, 1}, rng);
    const auto pure = kd_loss(z, zt, labels, {5.0, 0.0, false});
    for (std::size_t i = 0; i < z.size(); ++i) CHECK(pure.grad[i] == ce.grad[i]);
    CHECK(pure.total == ce.total);

    // KL term against a hand-computed value for one row.
    Tensor<double> s({1, 2, 1, 1}, std::vector<double>{0.0, 0.0});
    Tensor<double> t({1, 2, 1, 1}, std::vector<double>{10.0, 0.0});
    const std::vector<int> one{0};
    const auto r = kd_loss(s, t, one, {5.0, 1.0, false});
    const double qt0 = std::exp(2.0) / (std::exp(2.0) + 1.0);
    const double expected = qt0 * std::log(qt0 / 0.5) + (1 - qt0) * std::log((1 - qt0) / 0.5);
    CHECK(std::abs(r.kl - expected) < 1e-12);
    const auto r2 = kd_loss(s, t, one, {5.0, 1.0, true});
    CHECK(std::abs(r2.total - 25.0 * expected) < 1e-10);

    try {
      kd_loss(z, zt, labels, {5.0, 1.5, false});
      FAIL("expected a parameter error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Parameter);
    }
  }

  TEST_CASE("adamw identities") {
    Parameter<double> p(ParameterRole::Weight, 1, {1, 1, 1, 3});
    p.value[0] = 1.0;
    p.value[1] = -2.0;
    p.value[2] = 0.5;
    const auto before = p.value.values();
    const std::vector<double> start(before.begin(), before.end());

    AdamW<double> no_decay({&p}, {0.9, 0.999, 1e-8, 0.0});
    p.zero_grad();
    no_decay.step(1e-3);
    for (int i = 0; i < 3; ++i) CHECK(p.value[i] == start[i]);

    AdamW<double> decay({&p}, {0.9, 0.999, 1e-8, 0.01});
    decay.step(0.1);
    for (int i = 0; i < 3; ++i) CHECK(p.value[i] == doctest::Approx(start[i] * (1 - 0.1 * 0.01)).epsilon(1e-15));

    Parameter<double> q(ParameterRole::Weight, 1, {1, 1, 1, 2});
    AdamW<double> first({&q}, {0.9, 0.999, 1e-8, 0.0});
    q.grad[0] = 3.7;
    q.grad[1] = -0.02;
    first.step(1e-3);
    CHECK(q.value[0] == doctest::Approx(-1e-3).epsilon(1e-6));
    CHECK(q.value[1] == doctest::Approx(1e-3).epsilon(1e-5));
  }

  TEST_CASE("adamw matches a scalar reference over many steps") {
    const double lr = 2e-3;
    const AdamWSettings s{0.9, 0.999, 1e-8, 0.01};
    Parameter<double> p(ParameterRole::Weight, 1, {1, 1, 1, 1});
    p.value[0] = 0.7;
    AdamW<double> opt({&p}, s);
    double x = 0.7;
    double m = 0.0;
    double v = 0.0;
    for (int t = 1; t <= 50; ++t) {
      const double g = std::sin(0.3 * t) + 0.1 * x;
      p.grad[0] = g;
      opt.step(lr);
      x *= 1 - lr * s.weight_decay;
      m = s.beta1 * m + (1 - s.beta1) * g;
      v = s.beta2 * v + (1 - s.beta2) * g * g;
      const double mh = m / (1 - std::pow(s.beta1, t));
      const double vh = v / (1 - std::pow(s.beta2, t));
      x -= lr * mh / (std::sqrt(vh) + s.eps);
      CHECK(p.value[0] == doctest::Approx(x).epsilon(1e-12));
    }
    CHECK(opt.steps() == 50);
  }

  TEST_CASE("step decay schedule") {
    for (int epoch = 0; epoch < 20; ++epoch) {
      CHECK(step_decay_lr(1e-3, epoch, 2) == 1e-3 * std::pow(0.5, epoch / 2));
    }
    CHECK(step_decay_lr(1e-3, 0) == 1e-3);
    CHECK(step_decay_lr(1e-3, 1) == 1e-3);
    CHECK(step_decay_lr(1e-3, 2) == 5e-4);
    CHECK(step_decay_lr(1e-3, 3) == 5e-4);
    CHECK(step_decay_lr(1e-3, 18) == 1e-3 * std::pow(0.5, 9));
    CHECK(step_decay_lr(1e-3, 19) == 1e-3 * std::pow(0.5, 9));
  }
}
