#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "oaif/losses.hpp"

using namespace oaif;

namespace {

PolicyParams random_params(int vocab, int order, std::int64_t features,
                           std::mt19937_64& rng, double scale = 1.0) {
  PolicyParams p = PolicyParams::zeros(vocab, order, features);
  std::normal_distribution<double> noise(0.0, scale);
  for (double& w : p.weights) w = noise(rng);
  return p;
}

TokenSeq random_seq(int vocab, int len, std::mt19937_64& rng, SeqRole role) {
  std::vector<TokenId> ids(len);
  for (int i = 0; i < len; ++i) ids[i] = static_cast<TokenId>(rng() % vocab);
  return TokenSeq{ids, role};
}

const LossKind kDpo01{LossVariant::kDpo, 0.1};
const LossKind kIpo1{LossVariant::kIpo, 1.0};
const LossKind kSlic002{LossVariant::kSlic, 0.002};

}  // namespace

TEST_CASE("loss values at the anchor points") {
  CHECK(loss(kDpo01, 0.0) == Catch::Approx(std::log(2.0)).margin(1e-12));
  CHECK(loss(kIpo1, 0.5) == Catch::Approx(0.0).margin(1e-12));
  CHECK(loss(kSlic002, 0.0) == Catch::Approx(1.0).margin(1e-12));
  CHECK(loss(kSlic002, 500.0) == Catch::Approx(0.0).margin(1e-12));
  // -ln(sigma(1)) = ln(1 + e^-1)
  CHECK(loss(kDpo01, 10.0) == Catch::Approx(std::log1p(std::exp(-1.0))).margin(1e-12));
  CHECK(loss(kDpo01, 10.0) == Catch::Approx(0.313262).margin(1e-6));
}

TEST_CASE("loss is nonnegative everywhere") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> hs(-100.0, 100.0);
  for (int i = 0; i < 1000; ++i) {
    const double h = hs(rng);
    CHECK(loss(kDpo01, h) >= 0.0);
    CHECK(loss(kIpo1, h) >= 0.0);
    CHECK(loss(kSlic002, h) >= 0.0);
  }
}

TEST_CASE("DPO and SLiC are non-increasing in h, IPO minimised at 1/(2 beta)") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> hs(-50.0, 50.0);
  for (int i = 0; i < 500; ++i) {
    double a = hs(rng), b = hs(rng);
    if (a > b) std::swap(a, b);
    CHECK(loss(kDpo01, a) >= loss(kDpo01, b));
    CHECK(loss(kSlic002, a) >= loss(kSlic002, b));
    CHECK(loss(kIpo1, hs(rng)) >= loss(kIpo1, 0.5));
  }
}

TEST_CASE("DPO convexity check: l(h) + l(-h) >= 2 ln 2 with equality at 0") {
  CHECK(loss(kDpo01, 0.0) + loss(kDpo01, -0.0) ==
        Catch::Approx(2.0 * std::log(2.0)).margin(1e-12));
  for (double h : {0.3, 1.7, 12.0, 44.0}) {
    CHECK(loss(kDpo01, h) + loss(kDpo01, -h) > 2.0 * std::log(2.0));
  }
}

TEST_CASE("DPO stays finite and equals softplus at |beta h| = 50") {
  const LossKind dpo{LossVariant::kDpo, 1.0};
  for (double h : {50.0, -50.0}) {
    const double l = loss(dpo, h);
    CHECK(std::isfinite(l));
    CHECK(l == Catch::Approx(softplus(-h)).margin(1e-12));
  }
  // Far beyond exp overflow range as well.
  CHECK(std::isfinite(loss(dpo, 1e6)));
  CHECK(std::isfinite(loss(dpo, -1e6)));
}

TEST_CASE("dloss anchor values") {
  CHECK(dloss_dh(kDpo01, 0.0) == Catch::Approx(-0.05).margin(1e-15));
  CHECK(dloss_dh(kIpo1, 0.5) == Catch::Approx(0.0).margin(1e-15));
  CHECK(dloss_dh(kSlic002, 0.0) == Catch::Approx(-0.002).margin(1e-15));
  CHECK(dloss_dh(kSlic002, 1.0 / 0.002) == 0.0);      // subgradient 0 at the kink
  CHECK(dloss_dh(kSlic002, 1.0 / 0.002 + 1.0) == 0.0);
}

TEST_CASE("dloss matches central finite differences") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> hs(-20.0, 20.0);
  const double step = 1e-6;
  for (const LossKind& kind : {kDpo01, kIpo1, kSlic002}) {
    for (int i = 0; i < 200; ++i) {
      double h = hs(rng);
      if (kind.variant == LossVariant::kSlic &&
          std::abs(h - 1.0 / kind.beta) < 1e-3) {
        continue;  // keep away from the kink
      }
      const double fd = (loss(kind, h + step) - loss(kind, h - step)) / (2.0 * step);
      const double d = dloss_dh(kind, h);
      const double denom = std::max(std::abs(fd), 1e-12);
      CHECK(std::abs(d - fd) / denom <= 1e-6);
    }
  }
}

TEST_CASE("margin is zero when theta equals the reference") {
  std::mt19937_64 rng(5);
  const auto p = random_params(6, 2, 64, rng);
  const PolicySnapshot ref = PolicySnapshot::of(p, "ref", 0);
  const auto m = margin(p, ref, make_prompt({0, 1}), make_response({2, 3}),
                        make_response({4, 5}));
  CHECK(m.h == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("margin is antisymmetric under response swap") {
  std::mt19937_64 rng(7);
  const auto theta = random_params(6, 2, 64, rng);
  const PolicySnapshot ref = PolicySnapshot::of(random_params(6, 2, 64, rng), "ref", 0);
  const auto yp = make_response({2, 3, 5});
  const auto ym = make_response({4, 1});
  const auto x = make_prompt({0});
  const auto m1 = margin(theta, ref, x, yp, ym);
  const auto m2 = margin(theta, ref, x, ym, yp);
  CHECK(m1.h == Catch::Approx(-m2.h).margin(1e-12));
}

TEST_CASE("margin recomposes from four sequence logprobs") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const auto theta = random_params(8, 2, 128, rng);
    const PolicySnapshot ref =
        PolicySnapshot::of(random_params(8, 2, 128, rng), "ref", 0);
    const auto x = random_seq(8, 2, rng, SeqRole::kPrompt);
    auto yp = random_seq(8, 3, rng, SeqRole::kResponse);
    auto ym = random_seq(8, 4, rng, SeqRole::kResponse);
    const auto m = margin(theta, ref, x, yp, ym);
    const double expected = (sequence_logprob(theta, x, yp) - sequence_logprob(theta, x, ym)) -
                            (sequence_logprob(ref.params, x, yp) -
                             sequence_logprob(ref.params, x, ym));
    CHECK(m.h == Catch::Approx(expected).margin(1e-12));
    CHECK(m.h == Catch::Approx((m.logprob_plus - m.logprob_minus) -
                               (m.ref_logprob_plus - m.ref_logprob_minus))
                     .margin(1e-12));
  }
}

TEST_CASE("identical responses are rejected") {
  std::mt19937_64 rng(13);
  const auto theta = random_params(6, 2, 64, rng);
  const PolicySnapshot ref = PolicySnapshot::of(theta, "ref", 0);
  CHECK_THROWS_AS(
      margin(theta, ref, make_prompt({0}), make_response({1, 2}), make_response({1, 2})),
      std::invalid_argument);
}

TEST_CASE("pair gradient matches finite differences of the scalar loss") {
  std::mt19937_64 rng(17);
  const double step = 1e-5;
  for (const LossKind& kind : {kDpo01, kIpo1, LossKind{LossVariant::kSlic, 0.5}}) {
    for (int trial = 0; trial < 10; ++trial) {
      auto theta = random_params(6, 2, 64, rng);
      const PolicySnapshot ref =
          PolicySnapshot::of(random_params(6, 2, 64, rng), "ref", 0);
      const auto x = random_seq(6, 2, rng, SeqRole::kPrompt);
      auto yp = random_seq(6, 3, rng, SeqRole::kResponse);
      auto ym = random_seq(6, 2, rng, SeqRole::kResponse);
      if (yp == ym) continue;
      if (kind.variant == LossVariant::kSlic) {
        const auto m = margin(theta, ref, x, yp, ym);
        if (std::abs(m.h - 1.0 / kind.beta) < 1e-3) continue;
      }
      const auto grad = pair_loss_gradient(kind, theta, ref, x, yp, ym);
      for (const auto& [idx, g] : grad.entries) {
        const double saved = theta.weights[idx];
        theta.weights[idx] = saved + step;
        const double up = loss(kind, margin(theta, ref, x, yp, ym).h);
        theta.weights[idx] = saved - step;
        const double down = loss(kind, margin(theta, ref, x, yp, ym).h);
        theta.weights[idx] = saved;
        const double fd = (up - down) / (2.0 * step);
        if (std::abs(fd) > 1e-7) {
          CHECK(std::abs(g - fd) / std::abs(fd) <= 1e-5);
        }
      }
    }
  }
}

TEST_CASE("IPO pair gradient negates under swap at the symmetric point") {
  std::mt19937_64 rng(19);
  const auto theta = random_params(6, 2, 64, rng);
  const PolicySnapshot ref = PolicySnapshot::of(theta, "ref", 0);  // h == 0
  const auto x = make_prompt({0, 1});
  const auto yp = make_response({2, 3});
  const auto ym = make_response({4, 5});
  const auto g1 = pair_loss_gradient(kIpo1, theta, ref, x, yp, ym);
  const auto g2 = pair_loss_gradient(kIpo1, theta, ref, x, ym, yp);
  for (const auto& [idx, v] : g1.entries) {
    CHECK(v == Catch::Approx(-g2.at(idx)).margin(1e-12));
  }
}

TEST_CASE("DPO gradient at h=0 is -(beta/2) times the logprob gradient gap") {
  std::mt19937_64 rng(23);
  const auto theta = random_params(6, 2, 64, rng);
  const PolicySnapshot ref = PolicySnapshot::of(theta, "ref", 0);  // h == 0
  const auto x = make_prompt({1});
  const auto yp = make_response({2, 0});
  const auto ym = make_response({3, 4});
  const auto grad = pair_loss_gradient(kDpo01, theta, ref, x, yp, ym);
  SparseGrad expected;
  expected.axpy(-kDpo01.beta / 2.0, logprob_gradient(theta, x, yp));
  expected.axpy(kDpo01.beta / 2.0, logprob_gradient(theta, x, ym));
  for (const auto& [idx, v] : grad.entries) {
    CHECK(v == Catch::Approx(expected.at(idx)).margin(1e-12));
  }
}

TEST_CASE("beta must be positive") {
  CHECK_THROWS_AS(LossKind(LossVariant::kDpo, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(LossKind(LossVariant::kIpo, -1.0), std::invalid_argument);
}
