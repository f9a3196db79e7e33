#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "kdl/kd_loss.hpp"
#include "kdl/rng.hpp"

using namespace kdl;

namespace {

// direct-summation KL oracle, kept separate from the implementation path
double kl_direct(const std::vector<double>& p, const std::vector<double>& q) {
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i] > 0) kl += p[i] * std::log(p[i] / q[i]);
  return kl;
}

std::vector<double> random_logits(Rng& rng, std::size_t n) {
  std::vector<double> z(n);
  for (double& v : z) v = rng.uniform(-4.0, 4.0);
  return z;
}

}  // namespace

TEST_CASE("tempered softmax basics") {
  auto p = tempered_softmax({0.0, 0.0}, 1.0);
  CHECK(p[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(p[1] == doctest::Approx(0.5).epsilon(1e-15));

  // softmax([2,0]/2) = softmax([1,0])
  auto q = tempered_softmax({2.0, 0.0}, 2.0);
  CHECK(q[0] == doctest::Approx(0.73106).epsilon(1e-4));
  CHECK(q[1] == doctest::Approx(0.26894).epsilon(1e-4));

  CHECK_THROWS_AS(tempered_softmax({1.0, 2.0}, 0.0), ValidationError);
  CHECK_THROWS_AS(tempered_softmax({1.0, 2.0}, -1.0), ValidationError);
}

TEST_CASE("tempered softmax sums to one and flattens at large T") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    auto z = random_logits(rng, 4);
    for (double T : {0.5, 1.0, 2.0, 10.0}) {
      auto p = tempered_softmax(z, T);
      double sum = 0.0, mn = 1.0, mx = 0.0;
      for (double v : p) {
        CHECK(v > 0.0);
        sum += v;
        mn = std::min(mn, v);
        mx = std::max(mx, v);
      }
      CHECK(std::abs(sum - 1.0) < 1e-12);
    }
    auto flat = tempered_softmax(z, 1e6);
    double mn = 1.0, mx = 0.0;
    for (double v : flat) {
      mn = std::min(mn, v);
      mx = std::max(mx, v);
    }
    CHECK(mx - mn < 1e-3);
  }
}

TEST_CASE("soft target loss: identity, hand-computed fixture, asymmetry") {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    auto z = random_logits(rng, 3);
    LogitPair same{z, z};
    for (double T : {1.0, 2.0, 5.0})
      CHECK(soft_target_loss(same, T) < 1e-12);
  }

  LogitPair pair{{2.0, 0.0}, {0.0, 0.0}};
  // 4 * KL([0.73106, 0.26894] || [0.5, 0.5]) computed by direct summation
  double expected = 4.0 * kl_direct(tempered_softmax(pair.teacher, 2.0),
                                    tempered_softmax(pair.student, 2.0));
  CHECK(expected == doctest::Approx(0.44376).epsilon(1e-3));
  CHECK(soft_target_loss(pair, 2.0) == doctest::Approx(0.44376).epsilon(2e-4));
  CHECK(soft_target_loss(pair, 2.0) == doctest::Approx(expected).epsilon(1e-12));

  // KL is not symmetric
  LogitPair swapped{pair.student, pair.teacher};
  CHECK(soft_target_loss(pair, 2.0) != soft_target_loss(swapped, 2.0));
}

TEST_CASE("soft target loss is non-negative") {
  Rng rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    LogitPair pair{random_logits(rng, 3), random_logits(rng, 3)};
    for (double T : {0.7, 1.0, 2.0, 8.0})
      CHECK(soft_target_loss(pair, T) >= 0.0);
  }
}

TEST_CASE("temperature scaling consistency") {
  // scaling logits by c and T by c leaves the tempered distributions alone,
  // so the loss only picks up the (cT)^2 / T^2 factor
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    LogitPair pair{random_logits(rng, 4), random_logits(rng, 4)};
    double T = 2.0, c = 3.0;
    LogitPair scaled;
    for (double z : pair.teacher) scaled.teacher.push_back(c * z);
    for (double z : pair.student) scaled.student.push_back(c * z);
    double base = soft_target_loss(pair, T);
    double got = soft_target_loss(scaled, c * T);
    CHECK(got == doctest::Approx(base * c * c).epsilon(1e-9));
  }
}

TEST_CASE("total loss: alpha endpoints and the composed fixture") {
  KDParams kd;
  kd.temperature = 2.0;

  LogitPair pair{{2.0, 0.0}, {0.0, 0.0}};
  kd.mix_alpha = 1.0;
  CHECK(total_loss(pair, 0, kd) ==
        doctest::Approx(cross_entropy(pair.student, 0)).epsilon(1e-15));
  CHECK(total_loss(pair, 1, kd) ==
        doctest::Approx(cross_entropy(pair.student, 1)).epsilon(1e-15));

  LogitPair same{{1.0, -1.0}, {1.0, -1.0}};
  kd.mix_alpha = 0.0;
  CHECK(total_loss(same, 0, kd) < 1e-12);

  kd.mix_alpha = 0.75;
  // 0.25 * 0.44376 + 0.75 * ln 2
  CHECK(total_loss(pair, 0, kd) == doctest::Approx(0.63080).epsilon(2e-4));

  CHECK_THROWS_AS(total_loss(pair, 2, kd), ValidationError);
  CHECK_THROWS_AS(total_loss(pair, -1, kd), ValidationError);
}

TEST_CASE("total loss is affine in alpha") {
  Rng rng(23);
  LogitPair pair{random_logits(rng, 3), random_logits(rng, 3)};
  KDParams kd;
  kd.temperature = 3.0;
  kd.mix_alpha = 0.0;
  double at0 = total_loss(pair, 1, kd);
  kd.mix_alpha = 1.0;
  double at1 = total_loss(pair, 1, kd);
  kd.mix_alpha = 0.5;
  CHECK(total_loss(pair, 1, kd) ==
        doctest::Approx(0.5 * (at0 + at1)).epsilon(1e-12));
}

TEST_CASE("total loss gradient: structure and finite differences") {
  KDParams kd;
  kd.temperature = 2.0;

  // z_t = z_s, alpha 0: gradient T (p_s - p_t) vanishes
  kd.mix_alpha = 0.0;
  LogitPair same{{0.4, -0.3, 1.1}, {0.4, -0.3, 1.1}};
  for (double g : total_loss_grad(same, 0, kd)) CHECK(std::abs(g) < 1e-15);

  // alpha 1: softmax(z_s) - onehot
  kd.mix_alpha = 1.0;
  LogitPair pair{{2.0, 0.0}, {0.0, 0.0}};
  auto g = total_loss_grad(pair, 0, kd);
  CHECK(g[0] == doctest::Approx(-0.5).epsilon(1e-12));
  CHECK(g[1] == doctest::Approx(0.5).epsilon(1e-12));

  // random fixtures against central differences
  Rng rng(29);
  for (int trial = 0; trial < 20; ++trial) {
    LogitPair p{random_logits(rng, 4), random_logits(rng, 4)};
    kd.temperature = rng.uniform(0.5, 4.0);
    kd.mix_alpha = rng.uniform();
    int label = static_cast<int>(rng.below(4));
    auto grad = total_loss_grad(p, label, kd);
    const double h = 1e-6;
    for (std::size_t i = 0; i < 4; ++i) {
      LogitPair plus = p, minus = p;
      plus.student[i] += h;
      minus.student[i] -= h;
      double fd =
          (total_loss(plus, label, kd) - total_loss(minus, label, kd)) /
          (2.0 * h);
      double denom = std::max({std::abs(fd), std::abs(grad[i]), 1e-6});
      CHECK(std::abs(fd - grad[i]) / denom < 1e-7);
    }
  }
}
