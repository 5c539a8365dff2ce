#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "mpcom/planner.hpp"
#include "support/test_helpers.hpp"

using namespace mpcom;
using namespace mpcom::plan;
using geom::ConvexPolytope;
using geom::Pose;
using geom::Vec2;
using test_support::Rng;

namespace {

ConvexPolytope default_body()
{
  // 0.8 m x 0.5 m footprint centered on the reference point.
  const Vec2 v[4] = {{-0.4, -0.25}, {0.4, -0.25}, {0.4, 0.25}, {-0.4, 0.25}};
  return ConvexPolytope::from_vertices(v);
}

std::vector<Pose> straight_path(double x0, double x1, double y, int n = 2)
{
  std::vector<Pose> path;
  for (int i = 0; i < n; ++i) {
    path.emplace_back(x0 + (x1 - x0) * i / (n - 1), y, 0.0);
  }
  return path;
}

comm::Sensor single_zone_sensor(Vec2 position, double beta, double alpha, double bandwidth)
{
  radio::MultiZoneModel model;
  model.sensor = position;
  model.zones.push_back(ConvexPolytope::axis_aligned_box({-100, -100}, {100, 100}));
  model.beta = {beta};
  model.alpha = {alpha};
  comm::Sensor s;
  s.position = position;
  s.params.bandwidth = bandwidth;
  s.model = std::move(model);
  return s;
}

ObstaclePrediction static_obstacle(const ConvexPolytope & shape, Pose pose, int horizon)
{
  ObstaclePrediction p;
  p.shape = shape;
  p.poses.assign(horizon + 1, pose);
  return p;
}

ObstaclePrediction static_circle(double radius, Pose pose, int horizon)
{
  ObstaclePrediction p;
  p.shape = radius;
  p.poses.assign(horizon + 1, pose);
  return p;
}

}  // namespace

TEST_CASE("extract_local_reference: spacing, clamping, nearest point")
{
  const auto path = straight_path(0, 10, 0);

  const auto win = extract_local_reference(path, Pose(0, 0, 0), 5, 0.2);
  REQUIRE(win.states.size() == 6);
  for (int i = 0; i <= 5; ++i) {
    CHECK(win.states[i].position.x == Catch::Approx(0.2 * i));
    CHECK(win.states[i].position.y == Catch::Approx(0.0).margin(1e-12));
  }

  const auto past_end = extract_local_reference(path, Pose(42, 1, 0), 5, 0.2);
  for (const auto & p : past_end.states) {
    CHECK(p.position.x == Catch::Approx(10.0));
  }

  CHECK_THROWS_AS(
    extract_local_reference(std::vector<Pose>{Pose(0, 0, 0)}, Pose(0, 0, 0), 5, 0.2), EmptyPath);
}

TEST_CASE("extract_local_reference nearest point matches dense sampling")
{
  Rng rng(55);
  std::vector<Pose> path;
  double x = 0, y = 0;
  path.emplace_back(x, y, 0.0);
  for (int i = 0; i < 6; ++i) {
    x += rng.uniform(0.5, 2.0);
    y += rng.uniform(-1.0, 1.0);
    path.emplace_back(x, y, 0.0);
  }
  for (int trial = 0; trial < 50; ++trial) {
    const Pose current(rng.uniform(-1, 9), rng.uniform(-3, 3), 0);
    const auto win = extract_local_reference(path, current, 3, 0.1);
    // Dense brute force along the polyline.
    double best_d = 1e18;
    Vec2 best_p;
    for (std::size_t i = 0; i + 1 < path.size(); ++i) {
      for (int k = 0; k <= 400; ++k) {
        const Vec2 p =
          path[i].position + (path[i + 1].position - path[i].position) * (k / 400.0);
        const double d = (current.position - p).norm();
        if (d < best_d) {
          best_d = d;
          best_p = p;
        }
      }
    }
    CHECK((win.states[0].position - best_p).norm() <= 0.02);
  }
}

TEST_CASE("tracking_cost basics and heading wrap")
{
  ReferenceWindow ref;
  ref.states = {Pose(0, 0, 0), Pose(1, 0, 0)};
  std::vector<Pose> same = ref.states;
  CHECK(tracking_cost(same, ref) == 0.0);

  std::vector<Pose> offset = {Pose(1, 0, 0), Pose(1, 0, 0)};
  CHECK(tracking_cost(offset, ref) == Catch::Approx(1.0));

  ReferenceWindow spin;
  spin.states = {Pose(0, 0, 0)};
  std::vector<Pose> wrapped = {Pose(0, 0, 2 * geom::kPi)};
  CHECK(tracking_cost(wrapped, spin) == Catch::Approx(0.0).margin(1e-18));

  std::vector<Pose> bad = {Pose(0, 0, 0)};
  CHECK_THROWS_AS(tracking_cost(bad, ref), LengthMismatch);
}

TEST_CASE("comm_regularizer scaling")
{
  const auto sensor = single_zone_sensor({0, 0}, 1e-3, 2.0, 1e5);
  const std::vector<comm::Sensor> sensors{sensor};
  const std::vector<Pose> states{Pose(2, 0, 0)};
  CHECK(comm_regularizer(states, sensors, 0.0) == 0.0);
  const double one = comm_regularizer(states, sensors, 1.0);
  CHECK(one == Catch::Approx(-comm_utility(states[0], sensor)));
  CHECK(comm_regularizer(states, sensors, 2.0) == Catch::Approx(2.0 * one));
}

TEST_CASE("convexify_collision: polytope support arithmetic")
{
  const Vec2 sq[4] = {{-0.5, -0.5}, {0.5, -0.5}, {0.5, 0.5}, {-0.5, 0.5}};
  const auto robot = ConvexPolytope::from_vertices(sq);
  const auto obstacle = ConvexPolytope::from_vertices(sq);
  const std::vector<Pose> ref{Pose(0, 0, 0), Pose(0, 0, 0)};
  const std::vector<ObstaclePrediction> obstacles{
    static_obstacle(obstacle, Pose(3, 0, 0), 1)};
  const auto constraints = convexify_collision(ref, robot, obstacles, 0.1,
                                               CollisionMode::Polytope);
  REQUIRE(constraints.size() == 1);
  CHECK(constraints[0].normal.x == Catch::Approx(1.0));
  CHECK(constraints[0].normal.y == Catch::Approx(0.0).margin(1e-12));
  CHECK(constraints[0].offset == Catch::Approx(1.9));
  CHECK(constraints[0].h == 1);
  // Inactive at the reference: slack 1.9 > 0.
  CHECK(constraints[0].normal.dot(ref[1].position) < constraints[0].offset);
}

TEST_CASE("convexify_collision: point-mass circles")
{
  const Vec2 tri[3] = {{-1.0, -1.0}, {1.0, -1.0}, {0.0, 1.0}};
  const auto robot = ConvexPolytope::from_vertices(tri);  // circumradius sqrt(2)
  const std::vector<Pose> ref{Pose(0, 0, 0), Pose(0, 0, 0)};
  const std::vector<ObstaclePrediction> obstacles{static_circle(1.0, Pose(5, 0, 0), 1)};
  const auto constraints =
    convexify_collision(ref, robot, obstacles, 0.1, CollisionMode::PointMass);
  REQUIRE(constraints.size() == 1);
  const double margin = 1.0 + std::sqrt(2.0) + 0.1;
  CHECK(constraints[0].offset == Catch::Approx(5.0 - margin));
}

TEST_CASE("convexify_collision flags reference collisions")
{
  const auto robot = default_body();
  const std::vector<Pose> ref{Pose(0, 0, 0), Pose(0, 0, 0)};
  const std::vector<ObstaclePrediction> obstacles{
    static_obstacle(default_body(), Pose(0.1, 0, 0), 1)};
  CHECK_THROWS_AS(convexify_collision(ref, robot, obstacles, 0.1, CollisionMode::Polytope),
                  ReferenceInCollision);
}

TEST_CASE("make_baseline presets")
{
  PlannerConfig base;
  base.rho = 0.7;

  const auto rda = make_baseline("rda", base);
  CHECK(rda.rho == 0.0);
  CHECK(rda.collision_mode == CollisionMode::Polytope);

  const auto pcamp = make_baseline("pcamp", base);
  CHECK(pcamp.rho > 0.0);
  CHECK(pcamp.comm_mode == CommMode::Distance);
  CHECK(pcamp.collision_mode == CollisionMode::PointMass);

  const auto sdcamp = make_baseline("sdcamp", base);
  const auto mpcom = make_baseline("mpcom", base);
  CHECK(sdcamp.collision_mode == mpcom.collision_mode);
  CHECK(sdcamp.rho == mpcom.rho);
  CHECK(sdcamp.comm_mode == CommMode::Distance);
  CHECK(mpcom.comm_mode == CommMode::Multizone);

  CHECK_THROWS_AS(make_baseline("nope", base), std::invalid_argument);
}

TEST_CASE("initialize: pure tracking when eta = 0, unchanged when the sensor term is "
          "already minimized on the window")
{
  PlannerConfig cfg;
  cfg.eta = 0.0;
  cfg.rho = 0.0;
  cfg.comm_mode = CommMode::None;
  const auto path = straight_path(0, 10, 0);
  const Pose start(0, 0, 0);
  const auto ref = extract_local_reference(path, start, cfg.horizon,
                                           cfg.limits.u_max.v * cfg.slot);

  MpcPlanner planner(cfg, default_body(), {});
  const auto base = planner.initialize(start, ref, {});
  // The reference is reachable at full speed; tracking should be tight.
  CHECK(tracking_cost(base.states, ref) <= 1e-2);

  // Parked on the goal with the sensor at that waypoint: the tracking
  // solution already minimizes the sensor-distance term, so a large eta
  // does not move it.
  const Pose at_goal(10.0, 0, 0);
  const auto clamped = extract_local_reference(path, at_goal, cfg.horizon, 10.0);
  const auto plain = planner.initialize(at_goal, clamped, {});
  PlannerConfig cfg_eta = cfg;
  cfg_eta.eta = 5.0;
  MpcPlanner with_sensor(cfg_eta, default_body(),
                         {single_zone_sensor({10.0, 0.0}, 1e-3, 2.0, 1e2)});
  const auto pulled = with_sensor.initialize(at_goal, clamped, {});
  for (std::size_t h = 0; h < plain.states.size(); ++h) {
    // Identical optima; solutions match to the solver's accuracy.
    CHECK((pulled.states[h].position - plain.states[h].position).norm() <= 1e-4);
  }

  // A sensor off the path does move the initialization.
  MpcPlanner off_path(cfg_eta, default_body(),
                      {single_zone_sensor({5.0, -2.0}, 1e-3, 2.0, 1e2)});
  const auto biased = off_path.initialize(start, ref, {});
  double max_shift = 0.0;
  for (std::size_t h = 0; h < base.states.size(); ++h) {
    max_shift = std::max(max_shift,
                         (biased.states[h].position - base.states[h].position).norm());
  }
  CHECK(max_shift > 1e-3);
}

TEST_CASE("initialize: start inside an inflated obstacle region is infeasible")
{
  PlannerConfig cfg;
  const auto path = straight_path(0, 10, 0);
  const Pose start(0, 0, 0);
  const auto ref = extract_local_reference(path, start, cfg.horizon,
                                           cfg.limits.u_max.v * cfg.slot);
  MpcPlanner planner(cfg, default_body(), {});
  const std::vector<ObstaclePrediction> obstacles{
    static_circle(0.5, Pose(0.6, 0, 0), cfg.horizon)};  // overlaps the inflated footprint
  CHECK_THROWS_AS(planner.initialize(start, ref, obstacles), Infeasible);
}

TEST_CASE("mm_solve: rho = 0 reduces to the communication-unaware baseline bit for bit")
{
  Rng rng(1001);
  for (int trial = 0; trial < 5; ++trial) {
    PlannerConfig cfg;
    cfg.rho = 0.0;  // multizone mode but zero weight
    const auto path = straight_path(0, 10, rng.uniform(-1, 1));
    const Pose start(0, rng.uniform(-0.5, 0.5), 0);
    const auto ref = extract_local_reference(path, start, cfg.horizon,
                                             cfg.limits.u_max.v * cfg.slot);
    std::vector<ObstaclePrediction> obstacles;
    if (trial % 2 == 1) {
      obstacles.push_back(static_circle(0.4, Pose(3, rng.uniform(-0.3, 0.3), 0), cfg.horizon));
    }
    const std::vector<comm::Sensor> sensors{single_zone_sensor({5, -2}, 1e-3, 2.0, 1e3)};

    const auto a = mm_solve(start, ref, sensors, obstacles, cfg, default_body());
    const auto b =
      mm_solve(start, ref, sensors, obstacles, make_baseline("rda", cfg), default_body());
    REQUIRE(a.states.size() == b.states.size());
    for (std::size_t h = 0; h < a.states.size(); ++h) {
      CHECK(std::abs(a.states[h].position.x - b.states[h].position.x) <= 1e-9);
      CHECK(std::abs(a.states[h].position.y - b.states[h].position.y) <= 1e-9);
      CHECK(std::abs(a.states[h].heading - b.states[h].heading) <= 1e-9);
    }
  }
}

TEST_CASE("mm_solve: objective trace is monotone and controls respect limits")
{
  Rng rng(2002);
  for (int trial = 0; trial < 8; ++trial) {
    PlannerConfig cfg;
    cfg.rho = rng.uniform(0.1, 2.0);
    const auto path = straight_path(0, 8, 0);
    const Pose start(0, rng.uniform(-0.3, 0.3), rng.uniform(-0.4, 0.4));
    const auto ref = extract_local_reference(path, start, cfg.horizon,
                                             cfg.limits.u_max.v * cfg.slot);
    std::vector<ObstaclePrediction> obstacles;
    for (int m = 0; m < trial % 3; ++m) {
      obstacles.push_back(static_circle(
        0.3, Pose(rng.uniform(2, 6), rng.uniform(-1.5, 1.5), 0), cfg.horizon));
    }
    const std::vector<comm::Sensor> sensors{
      single_zone_sensor({rng.uniform(2, 6), rng.uniform(-3, -1)}, 1e-3, 2.2, 50.0)};

    PlanResult result;
    try {
      result = mm_solve(start, ref, sensors, obstacles, cfg, default_body());
    } catch (const Infeasible &) {
      continue;  // random obstacle landed on the start pose
    }
    REQUIRE(result.objective_trace.size() >= 1);
    for (std::size_t i = 1; i < result.objective_trace.size(); ++i) {
      CHECK(result.objective_trace[i] <= result.objective_trace[i - 1] + 1e-8);
    }
    CHECK(dyn::check_limits(result.controls, cfg.limits).empty());
  }
}

TEST_CASE("mm_solve: communication weight pulls the plan toward the sensor")
{
  PlannerConfig cfg;
  cfg.rho = 0.0;
  const auto path = straight_path(0, 10, 0);
  const Pose start(2, 0, 0);
  const auto ref =
    extract_local_reference(path, start, cfg.horizon, cfg.limits.u_max.v * cfg.slot);
  const Vec2 sensor_pos{3.0, -1.5};
  const std::vector<comm::Sensor> sensors{single_zone_sensor(sensor_pos, 1e-3, 2.0, 60.0)};

  const auto plain = mm_solve(start, ref, sensors, {}, cfg, default_body());
  PlannerConfig cfg_comm = cfg;
  cfg_comm.rho = 1.0;
  const auto pulled = mm_solve(start, ref, sensors, {}, cfg_comm, default_body());

  const std::size_t mid = cfg.horizon / 2;
  const double d_plain = (plain.states[mid].position - sensor_pos).norm();
  const double d_pulled = (pulled.states[mid].position - sensor_pos).norm();
  CHECK(d_pulled < d_plain);
  CHECK(pulled.cost_breakdown.communication < 0.0);
}

TEST_CASE("mm_solve avoids an obstacle blocking the reference")
{
  PlannerConfig cfg;
  cfg.rho = 0.0;
  cfg.comm_mode = CommMode::None;
  const auto path = straight_path(0, 10, 0);
  const Pose start(1.4, 0, 0);
  const auto ref =
    extract_local_reference(path, start, cfg.horizon, cfg.limits.u_max.v * cfg.slot);
  // Obstacle square (body frame) centered right on the path ahead.
  const std::vector<ObstaclePrediction> obstacles{
    static_obstacle(ConvexPolytope::axis_aligned_box({-0.2, -0.2}, {0.2, 0.2}),
                    Pose(2.4, 0, 0), cfg.horizon)};
  const auto result = mm_solve(start, ref, {}, obstacles, cfg, default_body());
  // Every planned footprint stays clear of the obstacle.
  const auto world = ConvexPolytope::axis_aligned_box({2.2, -0.2}, {2.6, 0.2});
  for (std::size_t h = 1; h < result.states.size(); ++h) {
    const auto robot = geom::transform_polytope(default_body(), result.states[h]);
    CHECK(geom::polytope_distance(robot, world).distance >= cfg.d_safe - 5e-3);
  }
}

TEST_CASE("warm start keeps the fixed point of a converged solve")
{
  PlannerConfig cfg;
  cfg.rho = 0.0;
  cfg.comm_mode = CommMode::None;
  const auto path = straight_path(0, 10, 0);
  const Pose start(5, 0, 0);
  const auto ref =
    extract_local_reference(path, start, cfg.horizon, cfg.limits.u_max.v * cfg.slot);
  MpcPlanner planner(cfg, default_body(), {});
  const auto first = planner.solve(start, ref, {});
  const auto again = planner.solve(start, ref, {});
  // Warm-started resolve of the same problem settles within the
  // optimizer's own tolerance band.
  CHECK(std::abs(first.objective_trace.back() - again.objective_trace.back()) <=
        10 * cfg.mm_tol);
  CHECK(again.status == PlanStatus::Converged);
}

TEST_CASE("plan serialization round-trips through JSON")
{
  PlannerConfig cfg;
  cfg.rho = 0.5;
  const auto path = straight_path(0, 6, 0);
  const Pose start(0, 0, 0);
  const auto ref =
    extract_local_reference(path, start, cfg.horizon, cfg.limits.u_max.v * cfg.slot);
  const std::vector<comm::Sensor> sensors{single_zone_sensor({3, -1}, 1e-3, 2.0, 30.0)};
  const auto result = mm_solve(start, ref, sensors, {}, cfg, default_body());
  const auto j = result.to_json();
  CHECK(j.at("states").size() == result.states.size());
  CHECK(j.at("controls").size() == result.controls.size());
  CHECK(j.at("objective_trace").size() == result.objective_trace.size());
  CHECK(j.at("status").get<std::string>() == "converged");
  // Determinism of the serialized form.
  const auto again = mm_solve(start, ref, sensors, {}, cfg, default_body());
  CHECK(again.to_json().dump() == j.dump());
}
