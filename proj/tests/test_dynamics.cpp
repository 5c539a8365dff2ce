#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "mpcom/dynamics.hpp"
#include "support/test_helpers.hpp"

using namespace mpcom;
using namespace mpcom::dyn;
using geom::kPi;
using geom::Pose;
using test_support::Rng;

namespace {

Eigen::Vector3d as_vec(const Pose & p)
{
  return {p.position.x, p.position.y, p.heading};
}

}  // namespace

TEST_CASE("step_nonlinear basics")
{
  const Pose s(0, 0, 0);
  const Pose unchanged = step_nonlinear(s, {0, 0}, 0.1);
  CHECK(as_vec(unchanged).isApprox(as_vec(s), 1e-15));

  const Pose straight = step_nonlinear(s, {1, 0}, 0.1);
  CHECK(straight.position.x == Catch::Approx(0.1));
  CHECK(straight.position.y == Catch::Approx(0.0).margin(1e-15));

  const Pose spun = step_nonlinear(s, {0, kPi}, 1.0);
  CHECK(spun.heading == Catch::Approx(kPi));  // normalized into (-pi, pi]
}

TEST_CASE("step_nonlinear preserves heading normalization")
{
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    const Pose s(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-kPi, kPi));
    const Control u{rng.uniform(-1, 1), rng.uniform(-3, 3)};
    const Pose next = step_nonlinear(s, u, rng.uniform(0.01, 1.0));
    CHECK(next.heading > -kPi);
    CHECK(next.heading <= kPi + 1e-15);
  }
}

TEST_CASE("linearize is exact at the expansion point")
{
  Rng rng(17);
  for (int i = 0; i < 100; ++i) {
    const Pose s(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-2.0, 2.0));
    const Control u{rng.uniform(-1, 1), rng.uniform(-1, 1)};
    const double tau = rng.uniform(0.02, 0.2);
    const auto lin = linearize(s, u, tau);
    const Eigen::Vector3d predicted =
      lin.A * as_vec(s) + lin.B * Eigen::Vector2d(u.v, u.w) + lin.c;
    const Pose truth = step_nonlinear(s, u, tau);
    CHECK((predicted - as_vec(truth)).lpNorm<Eigen::Infinity>() <= 1e-12);
  }
}

TEST_CASE("linearize matches hand-computed coefficients")
{
  const auto lin = linearize(Pose(0, 0, 0), {1, 0}, 0.1);
  Eigen::Matrix3d a_expect;
  a_expect << 1, 0, 0, 0, 1, 0.1, 0, 0, 1;
  Eigen::Matrix<double, 3, 2> b_expect;
  b_expect << 0.1, 0, 0, 0, 0, 0.1;
  CHECK((lin.A - a_expect).lpNorm<Eigen::Infinity>() <= 1e-15);
  CHECK((lin.B - b_expect).lpNorm<Eigen::Infinity>() <= 1e-15);
}

TEST_CASE("linearization error is quadratic in the state perturbation")
{
  // Fit |error| ~ K * |delta|^2 over a range of scales; the fitted K must
  // bound every sample with slack.
  const Pose s_ref(0.3, -0.2, 0.4);
  const Control u_ref{0.7, 0.3};
  const double tau = 0.1;
  const auto lin = linearize(s_ref, u_ref, tau);
  Rng rng(23);
  double k_max = 0.0;
  std::vector<std::pair<double, double>> samples;  // (|delta|, error)
  for (double scale : {1e-4, 1e-3, 1e-2, 1e-1}) {
    for (int i = 0; i < 20; ++i) {
      Pose s = s_ref;
      const Eigen::Vector3d delta(rng.uniform(-scale, scale), rng.uniform(-scale, scale),
                                  rng.uniform(-scale, scale));
      s.position.x += delta(0);
      s.position.y += delta(1);
      s.heading += delta(2);
      const Eigen::Vector3d pred =
        lin.A * as_vec(s) + lin.B * Eigen::Vector2d(u_ref.v, u_ref.w) + lin.c;
      const double err = (pred - as_vec(step_nonlinear(s, u_ref, tau))).norm();
      const double d2 = delta.squaredNorm();
      if (d2 > 0) {
        samples.push_back({d2, err});
        k_max = std::max(k_max, err / d2);
      }
    }
  }
  // Quadratic scaling: the worst ratio must stay bounded (the model has
  // bounded second derivatives: K <= tau * (|v| + 1) ~ 0.2).
  CHECK(k_max <= 0.5);
  for (const auto & [d2, err] : samples) { CHECK(err <= k_max * d2 + 1e-15); }
}

TEST_CASE("half-slot linearization composed twice tracks the full nonlinear step")
{
  // The defect of composing the tau/2 linearization twice is
  // tau^2 |v w| / 4 per position axis (second order in the slot).
  Rng rng(29);
  for (int i = 0; i < 200; ++i) {
    const Pose s(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2));
    const Control u{rng.uniform(-0.2, 1.0), rng.uniform(-1, 1)};
    const double tau = rng.uniform(0.01, 0.1);
    const auto half = linearize(s, u, tau / 2);
    const Eigen::Vector2d uv(u.v, u.w);
    const Eigen::Vector3d mid = half.A * as_vec(s) + half.B * uv + half.c;
    const Eigen::Vector3d two = half.A * mid + half.B * uv + half.c;
    const Pose one = step_nonlinear(s, u, tau);
    const double err = (as_vec(one) - two).norm();
    CHECK(err <= 1.3 * tau * tau * std::abs(u.v * u.w) / 4.0 + 1e-12);
    if (std::abs(u.v * u.w) <= 0.4) { CHECK(err <= 1e-3); }  // cruise envelope
  }
}

TEST_CASE("linearize translation equivariance")
{
  const Pose s(0.5, 1.5, 0.7);
  const Control u{0.8, -0.2};
  const auto base = linearize(s, u, 0.1);
  const Pose shifted(s.position.x + 2.0, s.position.y - 3.0, s.heading);
  const auto moved = linearize(shifted, u, 0.1);
  CHECK((base.A - moved.A).lpNorm<Eigen::Infinity>() <= 1e-15);
  CHECK((base.B - moved.B).lpNorm<Eigen::Infinity>() <= 1e-15);
  // c absorbs the translation: c' = c + (I - A) t
  Eigen::Vector3d t(2.0, -3.0, 0.0);
  const Eigen::Vector3d expect = base.c + (Eigen::Matrix3d::Identity() - base.A) * t;
  CHECK((moved.c - expect).lpNorm<Eigen::Infinity>() <= 1e-12);
}

TEST_CASE("check_limits flags box and rate violations")
{
  Limits lim;
  lim.u_min = {-0.2, -1.0};
  lim.u_max = {1.0, 1.0};
  lim.a_min = {-0.5, -0.5};
  lim.a_max = {0.5, 0.5};

  const std::vector<Control> at_max{{1.0, 1.0}, {1.0, 1.0}, {1.0, 1.0}};
  CHECK(check_limits(at_max, lim).empty());

  const std::vector<Control> jump{{0.0, 0.0}, {0.9, 0.0}};
  const auto violations = check_limits(jump, lim);
  REQUIRE(violations.size() == 1);
  CHECK(violations[0].step == 1);
  CHECK(violations[0].kind == LimitViolation::Kind::Acceleration);

  Limits tight = lim;
  tight.u_min = {0.3, 0.1};
  tight.u_max = {0.3, 0.1};
  const std::vector<Control> exact{{0.3, 0.1}, {0.3, 0.1}};
  CHECK(check_limits(exact, tight).empty());
}
