#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>

#include "mpcom/comm.hpp"
#include "support/test_helpers.hpp"

using namespace mpcom;
using namespace mpcom::comm;
using geom::ConvexPolytope;
using geom::Pose;
using geom::Vec2;
using test_support::Rng;

namespace {

/// Single-zone sensor covering a large box; the workhorse for the
/// surrogate properties (zone of anchor and state always agree).
Sensor make_sensor(Vec2 position, double beta, double alpha, CommParams params,
                   double d_min = 0.5)
{
  radio::MultiZoneModel model;
  model.sensor = position;
  model.zones.push_back(ConvexPolytope::axis_aligned_box({-100, -100}, {100, 100}));
  model.beta = {beta};
  model.alpha = {alpha};
  model.d_min = d_min;
  Sensor s;
  s.position = position;
  s.params = params;
  s.model = std::move(model);
  return s;
}

double fd_gradient(const std::function<double(Vec2)> & f, Vec2 p, int axis, double h)
{
  Vec2 lo = p, hi = p;
  (axis == 0 ? lo.x : lo.y) -= h;
  (axis == 0 ? hi.x : hi.y) += h;
  return (f(hi) - f(lo)) / (2.0 * h);
}

double random_alpha(Rng & rng)
{
  // Zero ("no distance dependence") or the power-law regime; the
  // surrogate is concave for alpha >= 1, which the sampler respects.
  return rng.uniform() < 0.15 ? 0.0 : rng.uniform(1.0, 6.0);
}

}  // namespace

TEST_CASE("snr arithmetic")
{
  CommParams p;
  p.transmit_power = 2e-3;
  p.noise_power = 1e-8;
  CHECK(snr(p.noise_power / p.transmit_power, p) == Catch::Approx(1.0));
  CHECK(snr(5e-6, p) == Catch::Approx(1.0));  // -50 dBm noise, 2 mW transmit
  CHECK(snr(1e-5, p) == Catch::Approx(2.0));  // doubling the gain doubles the SNR
}

TEST_CASE("spectral efficiency")
{
  CommParams p;
  p.transmit_power = 1.0;
  p.noise_power = 1.0;
  CHECK(spectral_efficiency(1.0, p) == Catch::Approx(1.0));   // SNR 1
  CHECK(spectral_efficiency(3.0, p) == Catch::Approx(2.0));   // SNR 3
  CHECK(spectral_efficiency(1e-300, p) == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("comm_utility unit bookkeeping and limits")
{
  CommParams p;
  p.transmit_power = 2e-3;
  p.noise_power = 1e-8;
  p.bandwidth = 1e5;
  p.slot = 0.1;
  // Gain chosen so SNR = 1 -> R = 1 bps/Hz -> tau*B*R = 1e4 bits.
  const Sensor s = make_sensor({0, 0}, 5e-6, 0.0, p);
  const double bits = comm_utility(Pose(3, 0, 0), s);
  CHECK(bits == Catch::Approx(1e4));
  CHECK(bits / 8e6 == Catch::Approx(1.25e-3));  // megabytes

  const Sensor weak = make_sensor({0, 0}, 1e-280, 0.0, p);
  CHECK(comm_utility(Pose(3, 0, 0), weak) <= 1e-6);
}

TEST_CASE("comm_utility decreases with distance and ignores heading")
{
  CommParams p;
  const Sensor s = make_sensor({0, 0}, 1e-3, 2.2, p);
  double prev = 1e18;
  for (double d : {0.8, 1.5, 3.0, 5.0, 9.0, 20.0}) {
    const double u = comm_utility(Pose(d, 0, 0), s);
    CHECK(u < prev);
    prev = u;
  }
  Rng rng(4);
  for (int i = 0; i < 20; ++i) {
    const Vec2 pos{rng.uniform(-20, 20), rng.uniform(-20, 20)};
    const double a = comm_utility(Pose(pos, rng.uniform(-3, 3)), s);
    const double b = comm_utility(Pose(pos, rng.uniform(-3, 3)), s);
    CHECK(a == b);
  }
}

TEST_CASE("scalar minorant inequality behind the lower bound")
{
  Rng rng(8);
  for (int i = 0; i < 1000; ++i) {
    const double x = rng.uniform(1e-3, 1e3);
    const double y = rng.uniform(1e-3, 1e3);
    CHECK(1.0 / x >= 1.0 / y - (x - y) / (y * y) - 1e-12);
  }
}

TEST_CASE("surrogate is tight at the anchor")
{
  Rng rng(15);
  for (int i = 0; i < 200; ++i) {
    CommParams p;
    p.bandwidth = rng.uniform(10.0, 1e5);
    const Sensor s =
      make_sensor({rng.uniform(-2, 2), rng.uniform(-2, 2)}, std::pow(10.0, rng.uniform(-6, -2)),
                  random_alpha(rng), p);
    const Pose anchor(rng.uniform(-8, 8), rng.uniform(-8, 8), rng.uniform(-3, 3));
    const double util = comm_utility(anchor, s);
    const double sur = surrogate(anchor, anchor, s);
    CHECK(std::abs(sur - util) <= 1e-12 * std::abs(util) + 1e-300);
  }
}

TEST_CASE("surrogate lower-bounds the utility in its domain")
{
  Rng rng(16);
  int checked = 0;
  while (checked < 1000) {
    CommParams p;
    const Sensor s = make_sensor({0, 0}, std::pow(10.0, rng.uniform(-6, -2)),
                                 random_alpha(rng), p);
    const Pose anchor(rng.uniform(-8, 8), rng.uniform(-8, 8), 0);
    const Pose state(rng.uniform(-8, 8), rng.uniform(-8, 8), 0);
    double sur;
    try {
      sur = surrogate(state, anchor, s);
    } catch (const DomainViolation &) {
      continue;
    }
    ++checked;
    CHECK(sur <= comm_utility(state, s) + 1e-9);
  }
}

TEST_CASE("surrogate midpoint concavity")
{
  Rng rng(17);
  int checked = 0;
  while (checked < 500) {
    CommParams p;
    const Sensor s = make_sensor({0, 0}, std::pow(10.0, rng.uniform(-5, -2)),
                                 random_alpha(rng), p);
    const Pose anchor(rng.uniform(-6, 6), rng.uniform(-6, 6), 0);
    const Pose s1(rng.uniform(-6, 6), rng.uniform(-6, 6), 0);
    const Pose s2(rng.uniform(-6, 6), rng.uniform(-6, 6), 0);
    const Pose mid(0.5 * (s1.position.x + s2.position.x), 0.5 * (s1.position.y + s2.position.y),
                   0);
    double v1, v2, vm;
    try {
      v1 = surrogate(s1, anchor, s);
      v2 = surrogate(s2, anchor, s);
      vm = surrogate(mid, anchor, s);
    } catch (const DomainViolation &) {
      continue;
    }
    ++checked;
    CHECK(vm >= 0.5 * v1 + 0.5 * v2 - 1e-9);
  }
}

TEST_CASE("surrogate gradient matches finite differences of the utility at the anchor")
{
  Rng rng(18);
  int checked = 0;
  while (checked < 200) {
    CommParams p;
    const double alpha = random_alpha(rng);
    const Sensor s = make_sensor({0, 0}, std::pow(10.0, rng.uniform(-5, -2)), alpha, p);
    const Pose anchor(rng.uniform(-8, 8), rng.uniform(-8, 8), 0.3);
    const double d = (anchor.position - Vec2{0, 0}).norm();
    if (std::abs(d - 0.5) < 0.05) { continue; }  // keep clear of the clamp kink
    ++checked;
    const auto grad = surrogate_gradient(anchor, anchor, s);
    CHECK(grad[2] == 0.0);
    const auto util = [&](Vec2 pos) { return comm_utility(Pose(pos, 0), s); };
    for (int axis = 0; axis < 2; ++axis) {
      const double fd = fd_gradient(util, anchor.position, axis, 1e-5 * std::max(1.0, d));
      const double scale = std::max({std::abs(fd), std::abs(grad[axis]), 1e-9});
      CHECK(std::abs(grad[axis] - fd) <= 1e-5 * scale);
    }
  }
}

TEST_CASE("surrogate gradient matches finite differences of the surrogate away from the anchor")
{
  Rng rng(19);
  int checked = 0;
  while (checked < 200) {
    CommParams p;
    const Sensor s = make_sensor({0, 0}, std::pow(10.0, rng.uniform(-4, -2)),
                                 rng.uniform(1.0, 4.0), p);
    const Pose anchor(rng.uniform(2, 6), rng.uniform(-3, 3), 0);
    const Pose state(anchor.position.x + rng.uniform(-0.4, 0.4),
                     anchor.position.y + rng.uniform(-0.4, 0.4), 0);
    const double d = state.position.norm();
    if (d < 0.7) { continue; }
    double base;
    try {
      base = surrogate(state, anchor, s);
    } catch (const DomainViolation &) {
      continue;
    }
    (void)base;
    ++checked;
    const auto grad = surrogate_gradient(state, anchor, s);
    const auto f = [&](Vec2 pos) { return surrogate(Pose(pos, 0), anchor, s); };
    for (int axis = 0; axis < 2; ++axis) {
      const double fd = fd_gradient(f, state.position, axis, 1e-6 * std::max(1.0, d));
      const double scale = std::max({std::abs(fd), std::abs(grad[axis]), 1e-9});
      CHECK(std::abs(grad[axis] - fd) <= 1e-6 * scale * 10);
    }
  }
}

TEST_CASE("surrogate gradient flips sign under reflection through the sensor")
{
  CommParams p;
  const Sensor s = make_sensor({0, 0}, 1e-3, 2.0, p);
  const Pose anchor(2.0, 1.0, 0);
  const Pose mirrored(-2.0, -1.0, 0);
  const auto g1 = surrogate_gradient(anchor, anchor, s);
  const auto g2 = surrogate_gradient(mirrored, mirrored, s);
  CHECK(g1[0] == Catch::Approx(-g2[0]));
  CHECK(g1[1] == Catch::Approx(-g2[1]));
}

TEST_CASE("surrogate boundary case: bracket vanishes where d^a doubles")
{
  CommParams p;
  const double alpha = 2.0;
  const Sensor s = make_sensor({0, 0}, 1e-3, alpha, p);
  const Pose anchor(2.0, 0, 0);
  // d = sqrt(2) * d* gives d^alpha = 2 d*^alpha for alpha = 2: the
  // bracket vanishes, the log argument is exactly 1 and the value 0.
  const Pose state(std::sqrt(2.0) * 2.0, 0, 0);
  const double v = surrogate(state, anchor, s);
  CHECK(v == Catch::Approx(0.0).margin(1e-9));
  const auto eval = comm::detail::surrogate_core(
    state.position, anchor.position, s.position, *s.zone_at(anchor.position), p);
  CHECK(eval.log_argument == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("surrogate domain violation far from the anchor")
{
  CommParams p;
  const Sensor s = make_sensor({0, 0}, 1e-2, 4.0, p);
  const Pose anchor(1.0, 0, 0);
  CHECK_THROWS_AS(surrogate(Pose(50.0, 0, 0), anchor, s), DomainViolation);
}

TEST_CASE("surrogate and gradient reject uncovered anchors")
{
  CommParams p;
  radio::MultiZoneModel model;
  model.sensor = {0, 0};
  model.zones.push_back(ConvexPolytope::axis_aligned_box({-1, -1}, {1, 1}));
  model.beta = {1e-3};
  model.alpha = {2.0};
  Sensor s;
  s.position = {0, 0};
  s.params = p;
  s.model = model;
  CHECK_THROWS_AS(surrogate(Pose(0, 0, 0), Pose(5, 5, 0), s), radio::OutsideAllZones);
}

TEST_CASE("surrogate_domain_radius bounds the log argument")
{
  Rng rng(20);
  for (int i = 0; i < 200; ++i) {
    CommParams p;
    const double alpha = rng.uniform(1.0, 6.0);
    const ZoneParams zone{std::pow(10.0, rng.uniform(-6, -2)), alpha, 0.5, 0};
    const Vec2 sensor{0, 0};
    const Vec2 anchor{rng.uniform(0.6, 8.0), 0};
    const double r = surrogate_domain_radius(anchor, sensor, zone, p);
    const auto inside = comm::detail::surrogate_core({r * 0.999, 0}, anchor, sensor, zone, p);
    CHECK(inside.log_argument > kDomainGuard);
    CHECK_THROWS_AS(comm::detail::surrogate_core({r * 1.001, 0}, anchor, sensor, zone, p),
                    DomainViolation);
  }
}
