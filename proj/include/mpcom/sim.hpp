#pragma once

// Episode execution: receding-horizon control loop over a scenario,
// scripted obstacle motion, exact collision checks, throughput
// accounting against the ground-truth radio map, and suite aggregation.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <json.hpp>

#include "mpcom/comm.hpp"
#include "mpcom/dynamics.hpp"
#include "mpcom/geometry.hpp"
#include "mpcom/planner.hpp"
#include "mpcom/radio.hpp"

namespace mpcom::sim {

struct PlannerFailure : std::runtime_error
{
  using std::runtime_error::runtime_error;
};

struct ScenarioError : std::runtime_error
{
  using std::runtime_error::runtime_error;
};

/// Scripted obstacle: body-frame shape plus linearly interpolated pose
/// knots. Beyond the last knot the obstacle holds its pose.
struct Obstacle
{
  struct Knot
  {
    double time = 0.0;
    geom::Pose pose;
  };

  std::variant<geom::ConvexPolytope, double> shape;  ///< polytope or circle radius
  std::vector<Knot> script;

  bool is_circle() const { return std::holds_alternative<double>(shape); }

  geom::Pose pose_at(double t) const
  {
    if (script.empty()) { return {}; }
    if (t <= script.front().time) { return script.front().pose; }
    if (t >= script.back().time) { return script.back().pose; }
    std::size_t i = 0;
    while (i + 2 < script.size() && script[i + 1].time <= t) { ++i; }
    const Knot & a = script[i];
    const Knot & b = script[i + 1];
    const double r = (t - a.time) / (b.time - a.time);
    geom::Pose p;
    p.position = a.pose.position + (b.pose.position - a.pose.position) * r;
    p.heading = a.pose.heading + geom::normalize_angle(b.pose.heading - a.pose.heading) * r;
    return p;
  }

  /// Pose rate on the script segment containing t (zero beyond the end).
  geom::Pose velocity_at(double t) const
  {
    if (script.size() < 2 || t >= script.back().time) { return {}; }
    std::size_t i = 0;
    while (i + 2 < script.size() && script[i + 1].time <= t) { ++i; }
    const Knot & a = script[i];
    const Knot & b = script[i + 1];
    const double dt = b.time - a.time;
    geom::Pose v;
    v.position = (b.pose.position - a.pose.position) * (1.0 / dt);
    v.heading = geom::normalize_angle(b.pose.heading - a.pose.heading) / dt;
    return v;
  }
};

struct TaskSpec
{
  double min_megabytes = 0.0;
  double time_limit_seconds = 30.0;
};

/// A sensor with its ground-truth map and both fitted models.
struct SensorSpec
{
  geom::Vec2 position;
  comm::CommParams params;
  double rho0 = 1e-3;
  double lambda = 2.0;
  double d_min = radio::kDefaultNearField;
  std::vector<geom::ConvexPolytope> zones;  ///< empty -> auto-segmented

  radio::RadioMapGrid map;
  radio::MultiZoneModel multizone;
  radio::DistanceModel distance;
  double multizone_rmse_db = 0.0;
  double distance_rmse_db = 0.0;
};

struct Scenario
{
  std::string name;
  geom::Vec2 workspace_min;
  geom::Vec2 workspace_max;
  std::vector<radio::WallSegment> walls;
  geom::ConvexPolytope robot_body;
  geom::Pose start;
  std::vector<geom::Pose> global_path;
  std::vector<Obstacle> obstacles;
  std::vector<SensorSpec> sensors;
  TaskSpec task;
  double goal_tolerance = 0.3;
  std::uint64_t seed = 0;
  double obstacle_jitter = 0.0;  ///< m, per-repeat script perturbation
  double map_resolution = 0.1;
  bool prepared = false;
};

struct EpisodeResult
{
  std::vector<std::pair<double, geom::Pose>> trajectory;  ///< (t, pose)
  std::vector<dyn::Control> controls;
  std::vector<std::vector<double>> per_step_bits;  ///< [step][sensor]
  double total_megabytes = 0.0;
  double navigation_time = 0.0;
  double rdg_efficiency = 0.0;
  double min_clearance = 1e9;
  bool collided = false;
  bool reached_goal = false;
  bool success = false;
  double latency_median = 0.0;  ///< s, around the planner solve only
  double latency_p95 = 0.0;

  nlohmann::json to_json() const
  {
    nlohmann::json j;
    auto traj = nlohmann::json::array();
    for (const auto & [t, p] : trajectory) {
      traj.push_back({t, p.position.x, p.position.y, p.heading});
    }
    auto ctrl = nlohmann::json::array();
    for (const auto & u : controls) { ctrl.push_back({u.v, u.w}); }
    j["trajectory"] = std::move(traj);
    j["controls"] = std::move(ctrl);
    j["per_step_bits"] = per_step_bits;
    j["total_megabytes"] = total_megabytes;
    j["navigation_time"] = navigation_time;
    j["rdg_efficiency"] = rdg_efficiency;
    j["min_clearance"] = min_clearance;
    j["collided"] = collided;
    j["reached_goal"] = reached_goal;
    j["success"] = success;
    j["latency_median"] = latency_median;
    j["latency_p95"] = latency_p95;
    return j;
  }
};

struct PlacedObstacle
{
  std::variant<geom::ConvexPolytope, double> shape;
  geom::Pose pose;
};

/// Minimum exact distance from the robot footprint to the obstacles;
/// 1e9 sentinel when there are none. Intersection clamps to zero.
inline double exact_clearance(
  const geom::Pose & pose, const geom::ConvexPolytope & robot_body,
  std::span<const PlacedObstacle> obstacles)
{
  if (obstacles.empty()) { return 1e9; }
  const geom::ConvexPolytope robot = geom::transform_polytope(robot_body, pose);
  double best = 1e9;
  for (const auto & obs : obstacles) {
    double d;
    if (const auto * r = std::get_if<double>(&obs.shape)) {
      d = std::max(0.0, geom::point_polytope_distance(obs.pose.position, robot).distance - *r);
    } else {
      d = geom::polytope_distance(
            robot, geom::transform_polytope(std::get<geom::ConvexPolytope>(obs.shape), obs.pose))
            .distance;
    }
    best = std::min(best, d);
  }
  return best;
}

namespace detail {

/// splitmix64; self-contained so suite seeds reproduce everywhere.
struct Rng
{
  std::uint64_t state;
  explicit Rng(std::uint64_t seed) : state(seed) {}
  std::uint64_t next()
  {
    state += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
};

}  // namespace detail

/// Generate the ground-truth map and fit both models for every sensor.
/// Idempotent.
inline void prepare_scenario(Scenario & sc)
{
  if (sc.prepared) { return; }
  const int width =
    std::max(1, static_cast<int>(std::ceil((sc.workspace_max.x - sc.workspace_min.x) /
                                           sc.map_resolution)));
  const int height =
    std::max(1, static_cast<int>(std::ceil((sc.workspace_max.y - sc.workspace_min.y) /
                                           sc.map_resolution)));
  for (auto & s : sc.sensors) {
    s.map = radio::generate_radio_map(sc.walls, s.position, sc.workspace_min, sc.map_resolution,
                                      width, height, s.rho0, s.lambda, s.d_min);
    std::vector<geom::ConvexPolytope> zones = s.zones;
    if (zones.empty()) { zones = radio::segment_zones(s.map, 6.0, 25); }
    if (zones.empty()) {
      zones.push_back(geom::ConvexPolytope::axis_aligned_box(sc.workspace_min, sc.workspace_max));
    }
    radio::MultiZoneFitConstraints c;
    c.rho0 = s.rho0;
    c.d_min = s.d_min;
    const auto mz = radio::fit_multizone(s.map, zones, c);
    s.multizone = mz.model;
    s.multizone_rmse_db = mz.total_rmse_db;
    const auto dm = radio::fit_distance_model(s.map, s.d_min);
    s.distance = dm.first;
    s.distance_rmse_db = dm.second;
  }
  sc.prepared = true;
}

/// Sensors as the planner sees them under a communication mode.
inline std::vector<comm::Sensor> planner_sensors(const Scenario & sc, plan::CommMode mode)
{
  std::vector<comm::Sensor> out;
  out.reserve(sc.sensors.size());
  for (const auto & s : sc.sensors) {
    comm::Sensor k;
    k.position = s.position;
    k.params = s.params;
    if (mode == plan::CommMode::Multizone) {
      k.model = s.multizone;
    } else {
      k.model = s.distance;
    }
    out.push_back(std::move(k));
  }
  return out;
}

/// Deterministic per-repeat variant: obstacle scripts jittered by the
/// scenario's obstacle_jitter, seeded from (scenario seed, repeat).
inline Scenario derive_repeat(const Scenario & base, int repeat)
{
  Scenario sc = base;
  if (sc.obstacle_jitter > 0.0) {
    detail::Rng rng(base.seed * 0x9e3779b97f4a7c15ull + static_cast<std::uint64_t>(repeat) + 1);
    for (auto & obs : sc.obstacles) {
      const double dx = rng.uniform(-sc.obstacle_jitter, sc.obstacle_jitter);
      const double dy = rng.uniform(-sc.obstacle_jitter, sc.obstacle_jitter);
      for (auto & knot : obs.script) {
        knot.pose.position.x += dx;
        knot.pose.position.y += dy;
      }
    }
  }
  return sc;
}

/// Closed-loop episode: plan, apply the first control, harvest bits at
/// the occupied pose from the ground-truth map, advance obstacles, check
/// exact collisions. Collisions set a flag and the episode continues.
inline EpisodeResult run_episode(const Scenario & scenario_in, const plan::PlannerConfig & config)
{
  Scenario scenario = scenario_in;
  prepare_scenario(scenario);
  if (scenario.global_path.size() < 2) {
    throw ScenarioError("scenario global_path needs at least 2 waypoints");
  }

  const int H = config.horizon;
  const double tau = config.slot;
  for (auto & s : scenario.sensors) { s.params.slot = tau; }
  plan::MpcPlanner planner(config, scenario.robot_body,
                           planner_sensors(scenario, config.comm_mode));

  const geom::Pose goal = scenario.global_path.back();
  // Window leads slightly so deferring motion always loses tracking ground.
  const double lookahead = 1.5 * config.limits.u_max.v * tau;

  EpisodeResult result;
  geom::Pose pose = scenario.start;
  double t = 0.0;
  result.trajectory.push_back({t, pose});
  dyn::Control u_prev{};
  std::vector<double> latencies;
  bool planner_down = false;

  const auto placed_at = [&](double time) {
    std::vector<PlacedObstacle> placed;
    placed.reserve(scenario.obstacles.size());
    for (const auto & obs : scenario.obstacles) {
      placed.push_back({obs.shape, obs.pose_at(time)});
    }
    return placed;
  };
  {
    const auto placed = placed_at(0.0);
    result.min_clearance = std::min(result.min_clearance,
                                    exact_clearance(pose, scenario.robot_body, placed));
    if (result.min_clearance <= 0.0) { result.collided = true; }
  }

  int step = 0;
  const int max_steps =
    static_cast<int>(std::ceil(scenario.task.time_limit_seconds / tau + 0.5));
  while (step < max_steps) {
    if ((pose.position - goal.position).norm() <= scenario.goal_tolerance) {
      result.reached_goal = true;
      break;
    }
    if (t >= scenario.task.time_limit_seconds - 1e-9) { break; }

    // Constant-velocity obstacle prediction over the horizon.
    std::vector<plan::ObstaclePrediction> preds;
    preds.reserve(scenario.obstacles.size());
    for (const auto & obs : scenario.obstacles) {
      plan::ObstaclePrediction p;
      p.shape = obs.shape;
      const geom::Pose now = obs.pose_at(t);
      const geom::Pose vel = obs.velocity_at(t);
      p.poses.reserve(H + 1);
      for (int h = 0; h <= H; ++h) {
        geom::Pose ph;
        ph.position = now.position + vel.position * (h * tau);
        ph.heading = now.heading + vel.heading * (h * tau);
        p.poses.push_back(ph);
      }
      preds.push_back(std::move(p));
    }

    dyn::Control u;
    const auto ref = plan::extract_local_reference(scenario.global_path, pose, H, lookahead);
    const auto t0 = std::chrono::steady_clock::now();
    try {
      const plan::PlanResult planned = planner.solve(pose, ref, preds, step == 0);
      const auto t1 = std::chrono::steady_clock::now();
      latencies.push_back(std::chrono::duration<double>(t1 - t0).count());
      u = planned.controls.front();
      planner_down = false;
    } catch (const std::runtime_error & e) {
      if (step == 0) { throw PlannerFailure(e.what()); }
      // Brake within the rate bounds and keep simulating.
      u.v = u_prev.v + std::clamp(-u_prev.v, config.limits.a_min.v, config.limits.a_max.v);
      u.w = u_prev.w + std::clamp(-u_prev.w, config.limits.a_min.w, config.limits.a_max.w);
      if (!planner_down) {
        log::warn(std::string("planner failed mid-episode; braking: ") + e.what());
        planner_down = true;
      }
      planner.reset_warm_start();
    }

    // Harvest during this slot at the occupied pose, from ground truth.
    std::vector<double> bits;
    bits.reserve(scenario.sensors.size());
    for (const auto & s : scenario.sensors) {
      const double gain = s.map.sample_gain(pose.position);
      bits.push_back(s.params.slot * s.params.bandwidth *
                     comm::spectral_efficiency(gain, s.params));
    }
    result.per_step_bits.push_back(std::move(bits));
    result.controls.push_back(u);

    pose = dyn::step_nonlinear(pose, u, tau);
    t += tau;
    ++step;
    u_prev = u;
    result.trajectory.push_back({t, pose});

    const auto placed = placed_at(t);
    const double clear = exact_clearance(pose, scenario.robot_body, placed);
    result.min_clearance = std::min(result.min_clearance, clear);
    if (clear <= 0.0) { result.collided = true; }
  }

  if (!result.reached_goal &&
      (pose.position - goal.position).norm() <= scenario.goal_tolerance) {
    result.reached_goal = true;
  }

  double total_bits = 0.0;
  for (const auto & row : result.per_step_bits) {
    for (double b : row) { total_bits += b; }
  }
  result.total_megabytes = total_bits / 8e6;
  result.navigation_time = t;
  result.rdg_efficiency =
    result.navigation_time > 0.0 ? result.total_megabytes / result.navigation_time : 0.0;
  result.success = result.total_megabytes >= scenario.task.min_megabytes &&
                   result.reached_goal && !result.collided &&
                   result.navigation_time <= scenario.task.time_limit_seconds + 1e-9;

  if (!latencies.empty()) {
    std::vector<double> sorted = latencies;
    std::sort(sorted.begin(), sorted.end());
    const auto pick = [&sorted](double p) {
      const std::size_t i = std::min(
        sorted.size() - 1, static_cast<std::size_t>(std::llround(p * (sorted.size() - 1))));
      return sorted[i];
    };
    result.latency_median = pick(0.5);
    result.latency_p95 = pick(0.95);
  }
  return result;
}

struct SuiteRow
{
  std::string scenario;
  std::string label;
  int repeats = 0;
  double rdg_efficiency = 0.0;   ///< mean over repeats
  double navigation_time = 0.0;
  double data_megabytes = 0.0;
  double min_clearance = 0.0;
  int collisions = 0;
  int successes = 0;
  double latency_median = 0.0;
  double efficiency_delta_pct = 0.0;  ///< vs the first config label
  bool failed = false;
  std::string error;
};

/// Runs every (scenario, config) pair `repeats` times on a bounded
/// worker pool and aggregates means. Row order is fixed by input order.
inline std::vector<SuiteRow> evaluate_suite(
  std::span<const Scenario> scenarios,
  std::span<const std::pair<std::string, plan::PlannerConfig>> configs, int repeats,
  int jobs = 1)
{
  if (scenarios.empty() || configs.empty() || repeats < 1) {
    throw ScenarioError("suite needs scenarios, configs and repeats >= 1");
  }
  // Maps and fits are repeat-invariant; prepare once per scenario.
  std::vector<Scenario> prepared(scenarios.begin(), scenarios.end());
  for (auto & sc : prepared) { prepare_scenario(sc); }

  struct Task { std::size_t si, ci; int rep; };
  std::vector<Task> tasks;
  for (std::size_t si = 0; si < scenarios.size(); ++si) {
    for (std::size_t ci = 0; ci < configs.size(); ++ci) {
      for (int r = 0; r < repeats; ++r) { tasks.push_back({si, ci, r}); }
    }
  }

  struct Outcome { bool ok = false; std::string error; EpisodeResult episode; };
  std::vector<Outcome> outcomes(tasks.size());
  std::atomic<std::size_t> next{0};
  const int workers = std::max(1, std::min<int>(jobs, static_cast<int>(tasks.size())));
  const auto work = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= tasks.size()) { return; }
      const Task & task = tasks[i];
      try {
        const Scenario sc = derive_repeat(prepared[task.si], task.rep);
        outcomes[i].episode = run_episode(sc, configs[task.ci].second);
        outcomes[i].ok = true;
      } catch (const std::exception & e) {
        outcomes[i].error = e.what();
      }
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int i = 0; i < workers; ++i) { pool.emplace_back(work); }
    for (auto & th : pool) { th.join(); }
  }

  std::vector<SuiteRow> rows;
  rows.reserve(scenarios.size() * configs.size());
  for (std::size_t si = 0; si < scenarios.size(); ++si) {
    double base_eff = 0.0;
    for (std::size_t ci = 0; ci < configs.size(); ++ci) {
      SuiteRow row;
      row.scenario = scenarios[si].name;
      row.label = configs[ci].first;
      row.repeats = repeats;
      double min_clear = 1e9;
      int count = 0;
      for (std::size_t i = 0; i < tasks.size(); ++i) {
        if (tasks[i].si != si || tasks[i].ci != ci) { continue; }
        const Outcome & oc = outcomes[i];
        if (!oc.ok) {
          row.failed = true;
          row.error = oc.error;
          continue;
        }
        ++count;
        row.rdg_efficiency += oc.episode.rdg_efficiency;
        row.navigation_time += oc.episode.navigation_time;
        row.data_megabytes += oc.episode.total_megabytes;
        row.latency_median += oc.episode.latency_median;
        min_clear = std::min(min_clear, oc.episode.min_clearance);
        row.collisions += oc.episode.collided ? 1 : 0;
        row.successes += oc.episode.success ? 1 : 0;
      }
      if (count > 0) {
        row.rdg_efficiency /= count;
        row.navigation_time /= count;
        row.data_megabytes /= count;
        row.latency_median /= count;
        row.min_clearance = min_clear;
      } else {
        row.failed = true;
      }
      if (ci == 0) {
        base_eff = row.rdg_efficiency;
      }
      row.efficiency_delta_pct =
        (ci == 0 || base_eff == 0.0 || row.failed)
          ? 0.0
          : (row.rdg_efficiency / base_eff - 1.0) * 100.0;
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

// ---------------------------------------------------------------------
// Scenario JSON (field names match the type, snake_case; lengths in
// meters, times in seconds, powers in watts, gains in dB for *_db keys).

namespace detail {

inline geom::Vec2 vec2_from(const nlohmann::json & j)
{
  return {j.at(0).get<double>(), j.at(1).get<double>()};
}

inline geom::Pose pose_from(const nlohmann::json & j)
{
  return geom::Pose(j.at(0).get<double>(), j.at(1).get<double>(),
                    j.size() > 2 ? j.at(2).get<double>() : 0.0);
}

inline geom::ConvexPolytope polytope_from(const nlohmann::json & j)
{
  std::vector<geom::Vec2> vertices;
  for (const auto & v : j.at("vertices")) { vertices.push_back(vec2_from(v)); }
  return geom::ConvexPolytope::from_vertices(vertices);
}

inline nlohmann::json polytope_to(const geom::ConvexPolytope & p)
{
  nlohmann::json out;
  auto arr = nlohmann::json::array();
  for (const auto & v : p.vertices()) { arr.push_back({v.x, v.y}); }
  out["vertices"] = std::move(arr);
  return out;
}

}  // namespace detail

inline Scenario scenario_from_json(const nlohmann::json & j)
{
  Scenario sc;
  sc.name = j.value("name", std::string("scenario"));
  sc.workspace_min = detail::vec2_from(j.at("workspace").at("min"));
  sc.workspace_max = detail::vec2_from(j.at("workspace").at("max"));
  for (const auto & w : j.value("walls", nlohmann::json::array())) {
    radio::WallSegment seg;
    seg.a = detail::vec2_from(w.at("a"));
    seg.b = detail::vec2_from(w.at("b"));
    seg.transmission = w.at("transmission").get<double>();
    if (!(seg.transmission > 0.0 && seg.transmission <= 1.0)) {
      throw ScenarioError("wall transmission must lie in (0, 1]");
    }
    sc.walls.push_back(seg);
  }
  sc.robot_body = detail::polytope_from(j.at("robot_body"));
  sc.start = detail::pose_from(j.at("start"));
  for (const auto & p : j.at("global_path")) { sc.global_path.push_back(detail::pose_from(p)); }
  for (const auto & o : j.value("obstacles", nlohmann::json::array())) {
    Obstacle obs;
    if (o.at("shape").contains("radius")) {
      obs.shape = o.at("shape").at("radius").get<double>();
    } else {
      obs.shape = detail::polytope_from(o.at("shape"));
    }
    for (const auto & k : o.at("script")) {
      obs.script.push_back({k.at("time").get<double>(), detail::pose_from(k.at("pose"))});
    }
    if (obs.script.empty() || obs.script.front().time != 0.0) {
      throw ScenarioError("obstacle script must start at time 0");
    }
    for (std::size_t i = 0; i + 1 < obs.script.size(); ++i) {
      if (obs.script[i + 1].time <= obs.script[i].time) {
        throw ScenarioError("obstacle script times must be strictly increasing");
      }
    }
    sc.obstacles.push_back(std::move(obs));
  }
  for (const auto & s : j.at("sensors")) {
    SensorSpec spec;
    spec.position = detail::vec2_from(s.at("position"));
    spec.params.transmit_power = s.value("transmit_power_w", 2e-3);
    spec.params.noise_power = s.value("noise_power_w", 1e-8);
    spec.params.bandwidth = s.value("bandwidth_hz", 1e5);
    spec.rho0 = s.value("rho0", 1e-3);
    spec.lambda = s.value("lambda", 2.0);
    spec.d_min = s.value("d_min", radio::kDefaultNearField);
    for (const auto & z : s.value("zones", nlohmann::json::array())) {
      spec.zones.push_back(detail::polytope_from(z));
    }
    sc.sensors.push_back(std::move(spec));
  }
  if (j.contains("task")) {
    sc.task.min_megabytes = j.at("task").value("min_megabytes", 0.0);
    sc.task.time_limit_seconds = j.at("task").value("time_limit_seconds", 30.0);
  }
  sc.goal_tolerance = j.value("goal_tolerance", 0.3);
  sc.seed = j.value("seed", std::uint64_t{0});
  sc.obstacle_jitter = j.value("obstacle_jitter", 0.0);
  sc.map_resolution = j.value("map_resolution", 0.1);
  if (sc.global_path.size() < 2) { throw ScenarioError("global_path needs >= 2 waypoints"); }
  if (sc.sensors.empty()) { throw ScenarioError("scenario needs at least one sensor"); }
  // slot is a planner parameter; sensor slots follow it at episode time.
  return sc;
}

inline Scenario load_scenario(const std::string & path)
{
  std::ifstream in(path);
  if (!in) { throw ScenarioError("cannot open scenario file: " + path); }
  nlohmann::json j;
  in >> j;
  return scenario_from_json(j);
}

}  // namespace mpcom::sim
