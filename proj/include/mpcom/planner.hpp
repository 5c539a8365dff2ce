#pragma once

// Receding-horizon trajectory optimizer: tracking cost plus a
// communication regularizer, solved by majorization-minimization over
// convex quadratic subproblems. Collision constraints are convexified
// with separating hyperplanes at the anchor trajectory; the concave log
// surrogate of the communication utility is further minorized by a
// quadratic whose curvature is certified by backtracking, so every
// subproblem is a QP. A monotone acceptance rule keeps the reported
// objective trace non-increasing.

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "mpcom/comm.hpp"
#include "mpcom/dynamics.hpp"
#include "mpcom/geometry.hpp"
#include "mpcom/log.hpp"
#include "mpcom/qp.hpp"

namespace mpcom::plan {

enum class CommMode { Multizone, Distance, None };
enum class CollisionMode { Polytope, PointMass };

struct PlannerConfig
{
  int horizon = 10;          ///< H
  double slot = 0.1;         ///< tau, s
  double rho = 0.5;          ///< communication regularizer weight
  double eta = 0.1;          ///< initialization sensor-distance weight
  double d_safe = 0.1;       ///< m
  dyn::Limits limits{};
  int mm_max_iters = 15;
  double mm_tol = 1e-4;
  CommMode comm_mode = CommMode::Multizone;
  CollisionMode collision_mode = CollisionMode::Polytope;
  double trust_radius = 0.5;  ///< m, per-step box on position deviation
  double qp_tol = 1e-6;
};

enum class PlanStatus { Converged, MaxIters, Infeasible };

inline const char * to_string(PlanStatus s)
{
  switch (s) {
    case PlanStatus::Converged: return "converged";
    case PlanStatus::MaxIters: return "max_iters";
    default: return "infeasible";
  }
}

struct ReferenceWindow
{
  std::vector<geom::Pose> states;  ///< H+1 local waypoints
};

struct CostBreakdown
{
  double tracking = 0.0;
  double communication = 0.0;
};

struct PlanResult
{
  std::vector<geom::Pose> states;      ///< H+1
  std::vector<dyn::Control> controls;  ///< H
  std::vector<double> objective_trace;
  CostBreakdown cost_breakdown;
  int mm_iterations = 0;
  PlanStatus status = PlanStatus::Converged;

  nlohmann::json to_json() const
  {
    nlohmann::json j;
    auto states_j = nlohmann::json::array();
    for (const auto & s : states) { states_j.push_back({s.position.x, s.position.y, s.heading}); }
    auto controls_j = nlohmann::json::array();
    for (const auto & u : controls) { controls_j.push_back({u.v, u.w}); }
    j["states"] = std::move(states_j);
    j["controls"] = std::move(controls_j);
    j["objective_trace"] = objective_trace;
    j["cost_breakdown"] = {{"tracking", cost_breakdown.tracking},
                           {"communication", cost_breakdown.communication}};
    j["mm_iterations"] = mm_iterations;
    j["status"] = to_string(status);
    return j;
  }
};

struct EmptyPath : std::runtime_error
{
  using std::runtime_error::runtime_error;
};
struct LengthMismatch : std::runtime_error
{
  using std::runtime_error::runtime_error;
};
struct Infeasible : std::runtime_error
{
  using std::runtime_error::runtime_error;
};
struct QPNumericalFailure : std::runtime_error
{
  using std::runtime_error::runtime_error;
};
struct ReferenceInCollision : std::runtime_error
{
  ReferenceInCollision(int obstacle, int step)
  : std::runtime_error("reference pose collides with obstacle " + std::to_string(obstacle) +
                       " at step " + std::to_string(step)),
    obstacle_index(obstacle), horizon_step(step) {}
  int obstacle_index;
  int horizon_step;
};

/// Obstacle as the planner sees it: a shape (body-frame polytope or
/// circle radius) and its predicted pose at every horizon step.
struct ObstaclePrediction
{
  std::variant<geom::ConvexPolytope, double> shape;
  std::vector<geom::Pose> poses;  ///< H+1 predicted poses

  bool is_circle() const { return std::holds_alternative<double>(shape); }
  double circle_radius() const { return std::get<double>(shape); }
  const geom::ConvexPolytope & polytope() const { return std::get<geom::ConvexPolytope>(shape); }
  double circumradius() const
  {
    return is_circle() ? circle_radius() : polytope().circumradius();
  }
};

/// Half-plane on the position of horizon step h: normal . (x, y) <= offset.
struct LinearConstraint2
{
  geom::Vec2 normal;
  double offset = 0.0;
  int h = 0;
};

/// Local waypoint window: nearest point on the path polyline to the
/// current pose, then H points spaced by `lookahead` along arc length,
/// clamped at the path end (repeating the final waypoint).
inline ReferenceWindow extract_local_reference(
  std::span<const geom::Pose> path, const geom::Pose & current, int horizon, double lookahead)
{
  if (path.size() < 2) { throw EmptyPath("reference path needs at least 2 waypoints"); }

  std::vector<double> cum{0.0};
  cum.reserve(path.size());
  for (std::size_t i = 0; i + 1 < path.size(); ++i) {
    cum.push_back(cum.back() + (path[i + 1].position - path[i].position).norm());
  }
  const double total = cum.back();

  double best_d = std::numeric_limits<double>::infinity();
  double best_s = 0.0;
  for (std::size_t i = 0; i + 1 < path.size(); ++i) {
    const geom::Vec2 c =
      geom::detail::closest_point_on_segment(current.position, path[i].position,
                                             path[i + 1].position);
    const double d = (current.position - c).norm();
    if (d < best_d) {
      best_d = d;
      best_s = cum[i] + (c - path[i].position).norm();
    }
  }

  const auto pose_at_arc = [&](double s) -> geom::Pose {
    if (s >= total) { return path.back(); }
    std::size_t i = 0;
    while (i + 2 < path.size() && cum[i + 1] <= s) { ++i; }
    const geom::Vec2 dir = path[i + 1].position - path[i].position;
    const double len = dir.norm();
    if (len <= 1e-12) { return path[i + 1]; }
    const double r = std::clamp((s - cum[i]) / len, 0.0, 1.0);
    return geom::Pose(path[i].position + dir * r, std::atan2(dir.y, dir.x));
  };

  ReferenceWindow win;
  win.states.reserve(horizon + 1);
  for (int i = 0; i <= horizon; ++i) { win.states.push_back(pose_at_arc(best_s + i * lookahead)); }
  return win;
}

/// Sum of squared state differences, heading taken as wrapped angular
/// distance.
inline double tracking_cost(std::span<const geom::Pose> states, const ReferenceWindow & ref)
{
  if (states.size() != ref.states.size()) {
    throw LengthMismatch("states and reference window differ in length");
  }
  double cost = 0.0;
  for (std::size_t i = 0; i < states.size(); ++i) {
    const geom::Vec2 dp = states[i].position - ref.states[i].position;
    const double dth = geom::normalize_angle(states[i].heading - ref.states[i].heading);
    cost += dp.squared_norm() + dth * dth;
  }
  return cost;
}

/// -rho sum_h sum_k utility. States outside every zone of a sensor
/// contribute zero (warned once).
inline double comm_regularizer(
  std::span<const geom::Pose> states, std::span<const comm::Sensor> sensors, double rho)
{
  if (rho == 0.0) { return 0.0; }
  double total = 0.0;
  static std::atomic<bool> warned{false};
  for (const auto & s : states) {
    for (const auto & k : sensors) {
      try {
        total += comm_utility(s, k);
      } catch (const radio::OutsideAllZones &) {
        if (!warned.exchange(true)) {
          log::warn("state outside all zones; utility counted as zero");
        }
      }
    }
  }
  return -rho * total;
}

namespace detail {

/// Support of the body footprint along a world direction, measured from
/// the body origin, maximized over a small heading range around the
/// anchor heading: the executed trajectory rotates away from the frozen
/// anchor within a slot, and the support must still cover it.
inline double footprint_support(
  const geom::ConvexPolytope & body, double heading, const geom::Vec2 & n,
  double heading_margin = 0.15)  // NOLINT
{
  double s = -std::numeric_limits<double>::infinity();
  for (int i = -2; i <= 2; ++i) {
    const double theta = heading + 0.5 * i * heading_margin;
    s = std::max(s, body.support(n.rotated(-theta)));
  }
  return s;
}

struct CollisionPlanes
{
  std::vector<LinearConstraint2> hard;      ///< separating half-planes
  std::vector<LinearConstraint2> push_out;  ///< slack-penalized escapes for
                                            ///< anchors already in collision
};

/// One (obstacle, step) half-plane. Pairs whose anchor already satisfies
/// the separation-plus-d_safe margin get a hard plane; anchors inside
/// the margin get the same plane slack-penalized (the solver escapes at
/// a cost instead of going infeasible), and anchors in actual collision
/// get a push-out plane toward `entry_side` (the last collision-free
/// anchor position). `allow_soft=false` is the strict contract: any
/// intersecting pair throws. Returns true when the anchor is
/// collision-free.
inline bool collision_halfplane(
  const geom::Pose & anchor, const geom::ConvexPolytope & body,
  const ObstaclePrediction & obs, int h, double d_safe, CollisionMode mode, bool allow_soft,
  int obstacle_index, const geom::Vec2 & entry_side, CollisionPlanes & out,
  double heading_margin = 0.0)
{
  const geom::Pose obs_pose = obs.poses[static_cast<std::size_t>(h)];
  const auto escape_plane = [&]() {
    geom::Vec2 away = entry_side - obs_pose.position;
    if (away.norm() <= 1e-9) { away = anchor.position - obs_pose.position; }
    if (away.norm() <= 1e-9) { away = {1.0, 0.0}; }
    const geom::Vec2 n = away.normalized();
    double required;
    if (mode == CollisionMode::PointMass) {
      required = n.dot(obs_pose.position) + obs.circumradius() + body.circumradius() + d_safe;
    } else if (obs.is_circle()) {
      required = n.dot(obs_pose.position) + obs.circle_radius() +
                 footprint_support(body, anchor.heading, -1.0 * n, heading_margin) + d_safe;
    } else {
      const geom::ConvexPolytope world = geom::transform_polytope(obs.polytope(), obs_pose);
      required = world.support(n) + footprint_support(body, anchor.heading, -1.0 * n, heading_margin) + d_safe;
    }
    // n . pos >= required, stored in <= form.
    out.push_out.push_back({-1.0 * n, -required, h});
  };
  const auto place = [&](const LinearConstraint2 & plane) {
    // Slackened when the anchor cannot satisfy it (braking distance).
    if (allow_soft && plane.normal.dot(anchor.position) > plane.offset - 1e-12) {
      out.push_out.push_back(plane);
    } else {
      out.hard.push_back(plane);
    }
  };

  if (mode == CollisionMode::PointMass) {
    const double r_sum = obs.circumradius() + body.circumradius();
    const geom::Vec2 delta = obs_pose.position - anchor.position;
    const double dist = delta.norm();
    if (dist <= r_sum) {  // centers closer than the summed radii: collision
      if (!allow_soft) { throw ReferenceInCollision(obstacle_index, h); }
      escape_plane();
      return false;
    }
    const geom::Vec2 n = delta.normalized();
    place({n, n.dot(obs_pose.position) - r_sum - d_safe, h});
    return dist > r_sum + d_safe;
  }

  const geom::ConvexPolytope robot = geom::transform_polytope(body, anchor);
  if (obs.is_circle()) {
    const double r = obs.circle_radius();
    const auto w = geom::point_polytope_distance(obs_pose.position, robot);
    if (w.distance <= r) {
      if (!allow_soft) { throw ReferenceInCollision(obstacle_index, h); }
      escape_plane();
      return false;
    }
    const geom::Vec2 n = (obs_pose.position - w.q).normalized();
    place({n,
           n.dot(obs_pose.position) - r - footprint_support(body, anchor.heading, n, heading_margin) - d_safe,
           h});
    return true;
  }

  const geom::ConvexPolytope world = geom::transform_polytope(obs.polytope(), obs_pose);
  const auto w = geom::polytope_distance(robot, world);
  if (w.distance <= 0.0) {
    if (!allow_soft) { throw ReferenceInCollision(obstacle_index, h); }
    escape_plane();
    return false;
  }
  const geom::Vec2 n = (w.q - w.p) * (1.0 / w.distance);
  double obs_min = std::numeric_limits<double>::infinity();
  for (const geom::Vec2 & v : world.vertices()) { obs_min = std::min(obs_min, n.dot(v)); }
  place({n, obs_min - footprint_support(body, anchor.heading, n, heading_margin) - d_safe, h});
  return true;
}

}  // namespace detail

/// Half-plane convexification of the exact-distance collision
/// constraints at a reference trajectory. Throws ReferenceInCollision if
/// a reference pose already intersects a predicted obstacle.
inline std::vector<LinearConstraint2> convexify_collision(
  std::span<const geom::Pose> ref_states, const geom::ConvexPolytope & robot_body,
  std::span<const ObstaclePrediction> obstacles, double d_safe, CollisionMode mode)
{
  detail::CollisionPlanes planes;
  for (std::size_t m = 0; m < obstacles.size(); ++m) {
    for (std::size_t h = 1; h < ref_states.size(); ++h) {
      detail::collision_halfplane(ref_states[h], robot_body, obstacles[m],
                                  static_cast<int>(h), d_safe, mode,
                                  /*allow_soft=*/false, static_cast<int>(m),
                                  ref_states[0].position, planes);
    }
  }
  return planes.hard;
}

/// Baseline planner configurations from the benchmark set.
inline PlannerConfig make_baseline(const std::string & kind, const PlannerConfig & base)
{
  PlannerConfig cfg = base;
  const double rho_on = base.rho > 0.0 ? base.rho : 0.5;
  if (kind == "rda") {
    cfg.rho = 0.0;
    cfg.comm_mode = CommMode::None;
    cfg.collision_mode = CollisionMode::Polytope;
  } else if (kind == "pcamp") {
    cfg.rho = rho_on;
    cfg.comm_mode = CommMode::Distance;
    cfg.collision_mode = CollisionMode::PointMass;
  } else if (kind == "sdcamp") {
    cfg.rho = rho_on;
    cfg.comm_mode = CommMode::Distance;
    cfg.collision_mode = CollisionMode::Polytope;
  } else if (kind == "mpcom") {
    cfg.rho = rho_on;
    cfg.comm_mode = CommMode::Multizone;
    cfg.collision_mode = CollisionMode::Polytope;
  } else {
    throw std::invalid_argument("unknown baseline kind: " + kind);
  }
  return cfg;
}

/// Stateful receding-horizon planner (warm-start cache). One instance is
/// single-threaded; use one instance per concurrent episode.
class MpcPlanner
{
public:
  MpcPlanner(PlannerConfig config, geom::ConvexPolytope robot_body,
             std::vector<comm::Sensor> sensors)
  : cfg_(std::move(config)), body_(std::move(robot_body)), sensors_(std::move(sensors))
  {
    if (cfg_.horizon < 1) { throw std::invalid_argument("horizon must be >= 1"); }
  }

  const PlannerConfig & config() const { return cfg_; }
  const geom::ConvexPolytope & body() const { return body_; }
  const std::vector<comm::Sensor> & sensors() const { return sensors_; }

  void reset_warm_start() { warm_.reset(); }

  /// Full MM solve. `strict_start` enforces the start-clearance check
  /// (step-0 semantics); recovery replans after a grazing pass relax it.
  PlanResult solve(
    const geom::Pose & current, const ReferenceWindow & ref_in,
    std::span<const ObstaclePrediction> obstacles, bool strict_start = true)
  {
    const int H = cfg_.horizon;
    if (static_cast<int>(ref_in.states.size()) != H + 1) {
      throw LengthMismatch("reference window must hold H+1 states");
    }
    for (const auto & obs : obstacles) {
      if (static_cast<int>(obs.poses.size()) != H + 1) {
        throw LengthMismatch("obstacle prediction must hold H+1 poses");
      }
    }
    const ReferenceWindow ref = unwrap_reference(ref_in, current);

    if (strict_start && start_violates_clearance(current, obstacles)) {
      throw Infeasible("start pose lies inside an inflated obstacle region");
    }

    // A stalled warm start (near-zero speed) linearizes with no
    // heading-to-position coupling and can pin the plan behind an
    // obstacle; fall back to the reference seed, which keeps it alive.
    Trajectory anchor;
    if (warm_) {
      anchor = shifted_warm_start(current);
      double v_peak = 0.0;
      for (const auto & u : anchor.controls) { v_peak = std::max(v_peak, std::abs(u.v)); }
      if (v_peak < 0.05) { anchor = seed_from_reference(current, ref, obstacles); }
    } else {
      anchor = seed_from_reference(current, ref, obstacles);
    }

    const bool comm_active =
      cfg_.rho > 0.0 && cfg_.comm_mode != CommMode::None && !sensors_.empty();

    // Distance-based initialization: eta-weighted sensor pull, no surrogate.
    Trajectory traj = initialize_trajectory(anchor, current, ref, obstacles);

    PlanResult result;
    result.status = PlanStatus::MaxIters;

    ZoneTable zones = freeze_zones(traj);
    result.objective_trace.push_back(frozen_objective(traj, ref, zones));
    anchor = traj;

    std::vector<std::vector<double>> mu(
      sensors_.size(), std::vector<double>(static_cast<std::size_t>(H) + 1, 0.0));

    double trust = cfg_.trust_radius;
    int accepted = 0;
    int attempts = 0;
    const int max_attempts = cfg_.mm_max_iters * 8;
    while (accepted < cfg_.mm_max_iters && attempts < max_attempts) {
      ++attempts;
      zones = freeze_zones(anchor);
      MinorantTable minorants;
      if (comm_active) {
        for (auto & row : mu) { std::fill(row.begin(), row.end(), 0.0); }
        minorants = build_minorants(anchor, zones, mu, trust);
      }

      Trajectory cand;
      bool solved = false;
      for (int bt = 0; bt < 40; ++bt) {
        try {
          cand = solve_convex(anchor, current, ref, obstacles, trust, /*eta=*/0.0,
                              comm_active ? &minorants : nullptr, &zones);
        } catch (const Infeasible &) {
          break;  // shrink trust below
        } catch (const QPNumericalFailure &) {
          break;
        }
        if (!comm_active || certify_minorants(cand, anchor, zones, minorants, mu)) {
          solved = true;
          break;
        }
        minorants = build_minorants(anchor, zones, mu, trust);
      }
      if (!solved) {
        trust *= 0.25;
        if (trust < 1e-5) { break; }
        continue;
      }

      const double f_cand = frozen_objective(cand, ref, zones);
      const double prev = result.objective_trace.back();
      if (log::level() >= log::Level::Debug) {
        char buf[120];
        std::snprintf(buf, sizeof(buf), "mm attempt %d: f_cand=%.6f prev=%.6f trust=%.4f",
                      attempts, f_cand, prev, trust);
        log::debug(buf);
      }
      if (f_cand <= prev + 1e-9) {
        anchor = cand;
        result.objective_trace.push_back(f_cand);
        ++accepted;
        if (prev - f_cand <= cfg_.mm_tol) {
          result.status = PlanStatus::Converged;
          break;
        }
      } else if (f_cand - prev <= 10.0 * cfg_.mm_tol) {
        // Ascent within the subproblem solver's noise floor: the iterate
        // is stationary. Keep the anchor; the trace stays monotone.
        result.status = PlanStatus::Converged;
        break;
      } else {
        trust *= 0.25;
        if (trust < 1e-5) { break; }
      }
    }

    result.states = anchor.states;
    result.controls = anchor.controls;
    result.mm_iterations = accepted;
    result.cost_breakdown.tracking = tracking_cost(result.states, ref);
    result.cost_breakdown.communication = comm_regularizer(result.states, sensors_, cfg_.rho);
    warm_ = anchor;
    return result;
  }

  /// The initialization subproblem alone (for inspection/tests).
  PlanResult initialize(
    const geom::Pose & current, const ReferenceWindow & ref_in,
    std::span<const ObstaclePrediction> obstacles)
  {
    const ReferenceWindow ref = unwrap_reference(ref_in, current);
    if (start_violates_clearance(current, obstacles)) {
      throw Infeasible("start pose lies inside an inflated obstacle region");
    }
    Trajectory anchor = seed_from_reference(current, ref, obstacles);
    Trajectory traj = initialize_trajectory(anchor, current, ref, obstacles);
    PlanResult result;
    result.states = traj.states;
    result.controls = traj.controls;
    const ZoneTable zones = freeze_zones(traj);
    result.objective_trace.push_back(frozen_objective(traj, ref, zones));
    result.cost_breakdown.tracking = tracking_cost(result.states, ref);
    result.cost_breakdown.communication = comm_regularizer(result.states, sensors_, cfg_.rho);
    result.mm_iterations = 0;
    result.status = PlanStatus::Converged;
    return result;
  }

private:
  struct Trajectory
  {
    std::vector<geom::Pose> states;      // H+1 (headings kept unwrapped)
    std::vector<dyn::Control> controls;  // H
  };

  /// Frozen zone parameters per (sensor, step); nullopt = uncovered.
  using ZoneTable = std::vector<std::vector<std::optional<comm::ZoneParams>>>;

  struct Minorant
  {
    double value = 0.0;      // utility at the anchor (tight)
    geom::Vec2 gradient{};   // surrogate gradient at the anchor
    geom::Vec2 anchor{};
    double mu = 0.0;         // quadratic curvature
    bool active = false;
  };
  using MinorantTable = std::vector<std::vector<Minorant>>;

  static ReferenceWindow unwrap_reference(const ReferenceWindow & ref, const geom::Pose & current)
  {
    ReferenceWindow out = ref;
    double prev = current.heading;
    for (auto & p : out.states) {
      const double th = prev + geom::normalize_angle(p.heading - prev);
      p = geom::Pose(p.position, 0.0);
      p.heading = th;  // keep the unwrapped branch
      prev = th;
    }
    return out;
  }

  /// Initialization solve with retries at shrinking trust; a failing
  /// first subproblem surfaces as Infeasible.
  Trajectory initialize_trajectory(
    const Trajectory & seed, const geom::Pose & current, const ReferenceWindow & ref,
    std::span<const ObstaclePrediction> obstacles) const
  {
    double trust = cfg_.trust_radius;
    for (int attempt = 0; attempt < 4; ++attempt) {
      try {
        return solve_convex(seed, current, ref, obstacles, trust, cfg_.eta, nullptr, nullptr);
      } catch (const Infeasible &) {
        trust *= 0.5;
      } catch (const QPNumericalFailure &) {
        trust *= 0.5;
      }
    }
    throw Infeasible("initialization subproblem failed");
  }

  /// Nonlinear rollout of a control sequence; every anchor trajectory is
  /// one of these, so relinearizing at an anchor never leaves it
  /// infeasible for its own dynamics constraints.
  Trajectory rollout(const geom::Pose & current, std::vector<dyn::Control> controls) const
  {
    Trajectory t;
    t.states.reserve(controls.size() + 1);
    t.states.push_back(current);
    double heading = current.heading;
    for (const dyn::Control & u : controls) {
      const geom::Pose & s = t.states.back();
      geom::Pose next;
      next.position.x = s.position.x + cfg_.slot * u.v * std::cos(heading);
      next.position.y = s.position.y + cfg_.slot * u.v * std::sin(heading);
      heading += cfg_.slot * u.w;  // unwrapped on purpose
      next.heading = heading;
      t.states.push_back(next);
    }
    t.controls = std::move(controls);
    return t;
  }

  bool start_violates_clearance(
    const geom::Pose & current, std::span<const ObstaclePrediction> obstacles) const
  {
    const geom::ConvexPolytope robot = geom::transform_polytope(body_, current);
    for (const auto & obs : obstacles) {
      const geom::Pose p0 = obs.poses.front();
      double d;
      if (obs.is_circle()) {
        d = geom::point_polytope_distance(p0.position, robot).distance - obs.circle_radius();
      } else {
        d = geom::polytope_distance(robot, geom::transform_polytope(obs.polytope(), p0)).distance;
      }
      if (d < cfg_.d_safe) { return true; }
    }
    return false;
  }

  Trajectory shifted_warm_start(const geom::Pose & current) const
  {
    const int H = cfg_.horizon;
    std::vector<dyn::Control> controls(H);
    for (int h = 0; h < H; ++h) {
      controls[h] = warm_->controls[std::min<std::size_t>(h + 1, H - 1)];
    }
    return rollout(current, std::move(controls));
  }

  /// Seed anchor: steer-toward-the-reference controls rolled out from
  /// the current pose, with a repulsive heading bias around nearby
  /// obstacles so the seed swerves rather than tunnels. The bias picks
  /// the side deterministically (left of the motion direction wins ties).
  Trajectory seed_from_reference(
    const geom::Pose & current, const ReferenceWindow & ref,
    std::span<const ObstaclePrediction> obstacles = {}) const
  {
    const int H = cfg_.horizon;
    const double influence = 3.0 * body_.circumradius();
    std::vector<dyn::Control> controls;
    controls.reserve(H);
    geom::Pose sim = current;
    double heading = current.heading;
    for (int h = 0; h < H; ++h) {
      const geom::Vec2 delta = ref.states[h + 1].position - sim.position;
      const double dist = delta.norm();
      double target_heading = dist > 1e-9 ? std::atan2(delta.y, delta.x) : heading;
      for (const auto & obs : obstacles) {
        const geom::Vec2 to_obs =
          obs.poses[static_cast<std::size_t>(h)].position - sim.position;
        const double gap = to_obs.norm() - obs.circumradius() - body_.circumradius();
        if (gap > influence || to_obs.norm() <= 1e-9) { continue; }
        const geom::Vec2 dir{std::cos(target_heading), std::sin(target_heading)};
        if (dir.dot(to_obs) <= 0.0) { continue; }  // already past it
        const double side = dir.cross(to_obs) >= 0.0 ? -1.0 : 1.0;
        target_heading += side * 1.2 * (influence - std::max(gap, 0.0)) / influence;
      }
      const double w = std::clamp(geom::normalize_angle(target_heading - heading) / cfg_.slot,
                                  cfg_.limits.u_min.w, cfg_.limits.u_max.w);
      double v = std::clamp(dist / cfg_.slot, cfg_.limits.u_min.v, cfg_.limits.u_max.v);
      // Wedged against an obstacle: back out while turning instead of
      // grinding forward into it.
      const auto min_gap = [&](const geom::Vec2 & p) {
        double g = std::numeric_limits<double>::infinity();
        for (const auto & obs : obstacles) {
          g = std::min(g, (obs.poses[static_cast<std::size_t>(h)].position - p).norm() -
                           obs.circumradius() - body_.circumradius());
        }
        return g;
      };
      if (!obstacles.empty() && v > 0.0) {
        const geom::Vec2 ahead{sim.position.x + cfg_.slot * v * std::cos(heading),
                               sim.position.y + cfg_.slot * v * std::sin(heading)};
        if (min_gap(ahead) < 0.02 && min_gap(ahead) < min_gap(sim.position)) {
          v = cfg_.limits.u_min.v;
        }
      }
      controls.push_back({v, w});
      sim.position.x += cfg_.slot * v * std::cos(heading);
      sim.position.y += cfg_.slot * v * std::sin(heading);
      heading += cfg_.slot * w;
    }
    return rollout(current, std::move(controls));
  }

  ZoneTable freeze_zones(const Trajectory & traj) const
  {
    ZoneTable zones(sensors_.size());
    for (std::size_t k = 0; k < sensors_.size(); ++k) {
      zones[k].resize(traj.states.size());
      for (std::size_t h = 0; h < traj.states.size(); ++h) {
        zones[k][h] = sensors_[k].zone_at(traj.states[h].position);
      }
    }
    return zones;
  }

  /// Tracking plus the frozen-zone communication regularizer.
  double frozen_objective(
    const Trajectory & traj, const ReferenceWindow & ref, const ZoneTable & zones) const
  {
    double obj = tracking_cost(traj.states, ref);
    if (cfg_.rho > 0.0 && cfg_.comm_mode != CommMode::None) {
      for (std::size_t k = 0; k < sensors_.size(); ++k) {
        for (std::size_t h = 0; h < traj.states.size(); ++h) {
          if (!zones[k][h]) { continue; }
          obj -= cfg_.rho * comm::utility_frozen(traj.states[h].position, sensors_[k].position,
                                                 *zones[k][h], sensors_[k].params);
        }
      }
    }
    return obj;
  }

  MinorantTable build_minorants(
    const Trajectory & anchor, const ZoneTable & zones,
    std::vector<std::vector<double>> & mu, double trust) const
  {
    MinorantTable table(sensors_.size());
    for (std::size_t k = 0; k < sensors_.size(); ++k) {
      table[k].resize(anchor.states.size());
      for (std::size_t h = 0; h < anchor.states.size(); ++h) {
        if (!zones[k][h]) { continue; }
        const comm::ZoneParams & zp = *zones[k][h];
        const geom::Vec2 a = anchor.states[h].position;
        Minorant m;
        m.active = true;
        m.anchor = a;
        m.value = comm::utility_frozen(a, sensors_[k].position, zp, sensors_[k].params);
        const auto eval =
          comm::detail::surrogate_core(a, a, sensors_[k].position, zp, sensors_[k].params);
        m.gradient = {eval.grad[0], eval.grad[1]};
        if (mu[k][h] <= 0.0) {
          mu[k][h] = secant_curvature(a, m.value, m.gradient, zp, sensors_[k], trust);
        }
        m.mu = zp.alpha == 0.0 ? 0.0 : mu[k][h];
        table[k][h] = m;
      }
    }
    return table;
  }

  /// Curvature of the quadratic minorant from secant deficits against the
  /// log surrogate at probes on the trust-box boundary. Minorization only
  /// has to hold where the subproblem can move; the acceptance
  /// certificate doubles the value if a probe pattern missed a spot.
  double secant_curvature(
    const geom::Vec2 & anchor, double value, const geom::Vec2 & gradient,
    const comm::ZoneParams & zp, const comm::Sensor & sensor, double trust) const
  {
    if (zp.alpha == 0.0) { return 0.0; }
    const double r = std::max(trust, 1e-3);
    const double diag = r / std::sqrt(2.0);
    const geom::Vec2 probes[8] = {{r, 0},     {-r, 0},    {0, r},      {0, -r},
                                  {diag, diag}, {diag, -diag}, {-diag, diag}, {-diag, -diag}};
    double mu = 1e-9;
    for (const geom::Vec2 & dp : probes) {
      const geom::Vec2 p = anchor + dp;
      double surr;
      try {
        surr = comm::detail::surrogate_core(p, anchor, sensor.position, zp, sensor.params)
                 .value;
      } catch (const comm::DomainViolation &) {
        continue;  // domain planes keep the subproblem away from there
      }
      const double tangent = value + gradient.dot(dp);
      mu = std::max(mu, 2.0 * (tangent - surr) / dp.squared_norm());
    }
    return 1.5 * mu;
  }

  /// Verifies quadratic <= log surrogate at the candidate. On violation
  /// the curvature jumps straight to what the violated point requires
  /// (plus margin), so backtracking needs one or two re-solves, not a
  /// doubling chain.
  bool certify_minorants(
    const Trajectory & cand, const Trajectory & anchor, const ZoneTable & zones,
    const MinorantTable & minorants, std::vector<std::vector<double>> & mu) const
  {
    bool ok = true;
    for (std::size_t k = 0; k < sensors_.size(); ++k) {
      for (std::size_t h = 0; h < cand.states.size(); ++h) {
        const Minorant & m = minorants[k][h];
        if (!m.active || m.mu == 0.0) { continue; }
        const geom::Vec2 p = cand.states[h].position;
        const geom::Vec2 dp = p - m.anchor;
        const double dist2 = dp.squared_norm();
        if (dist2 <= 1e-18) { continue; }
        const double tangent = m.value + m.gradient.dot(dp);
        const double quad = tangent - 0.5 * m.mu * dist2;
        double surr;
        try {
          surr = comm::detail::surrogate_core(p, anchor.states[h].position, sensors_[k].position,
                                              *zones[k][h], sensors_[k].params).value;
        } catch (const comm::DomainViolation &) {
          mu[k][h] = std::max(mu[k][h] * 8.0, 1e-6);
          ok = false;
          continue;
        }
        if (quad > surr + 1e-9) {
          const double needed = 2.0 * (tangent - surr) / dist2;
          mu[k][h] = std::max(mu[k][h] * 2.0, 1.2 * needed);
          ok = false;
        }
      }
    }
    return ok;
  }

  detail::CollisionPlanes build_collision(
    const Trajectory & anchor, std::span<const ObstaclePrediction> obstacles) const
  {
    detail::CollisionPlanes planes;
    for (std::size_t m = 0; m < obstacles.size(); ++m) {
      // Colliding anchors are pushed back toward the side the trajectory
      // entered from, so a blocked plan retreats instead of tunnelling.
      geom::Vec2 entry = anchor.states[0].position;
      for (std::size_t h = 1; h < anchor.states.size(); ++h) {
        const bool free = detail::collision_halfplane(
          anchor.states[h], body_, obstacles[m], static_cast<int>(h), cfg_.d_safe,
          cfg_.collision_mode, /*allow_soft=*/true, static_cast<int>(m), entry, planes,
          /*heading_margin=*/0.15);
        if (free) { entry = anchor.states[h].position; }
      }
    }
    return planes;
  }

  /// Half-planes keeping each step inside the log-surrogate domain; only
  /// emitted when the trust box could leave it. Inner 16-gon of the
  /// domain disk, so the constraint is conservative.
  std::vector<LinearConstraint2> build_domain_planes(
    const Trajectory & anchor, const ZoneTable & zones, double trust) const
  {
    std::vector<LinearConstraint2> out;
    constexpr int kSides = 16;
    const double apothem_factor = std::cos(geom::kPi / kSides);
    for (std::size_t k = 0; k < sensors_.size(); ++k) {
      for (std::size_t h = 1; h < anchor.states.size(); ++h) {
        if (!zones[k][h]) { continue; }
        const comm::ZoneParams & zp = *zones[k][h];
        if (zp.alpha == 0.0) { continue; }
        const geom::Vec2 a = anchor.states[h].position;
        const geom::Vec2 z = sensors_[k].position;
        const double r_dom =
          comm::surrogate_domain_radius(a, z, zp, sensors_[k].params) * apothem_factor;
        const double reach = (a - z).norm() + std::sqrt(2.0) * trust;
        if (reach <= r_dom) { continue; }
        for (int j = 0; j < kSides; ++j) {
          const double phi = 2.0 * geom::kPi * j / kSides;
          const geom::Vec2 n{std::cos(phi), std::sin(phi)};
          out.push_back({n, n.dot(z) + r_dom, static_cast<int>(h)});
        }
      }
    }
    return out;
  }

  /// Assemble and solve one convex subproblem around the anchor. The
  /// returned trajectory is the nonlinear rollout of the QP's controls.
  /// Push-out planes for anchors caught inside an obstacle carry slack
  /// variables with a linear penalty so the subproblem stays feasible.
  Trajectory solve_convex(
    const Trajectory & anchor, const geom::Pose & current, const ReferenceWindow & ref,
    std::span<const ObstaclePrediction> obstacles, double trust, double eta,
    const MinorantTable * minorants, const ZoneTable * zones) const
  {
    // Linear + quadratic slack penalty: dominates the tracking gradient
    // without the ill-conditioning a pure linear penalty causes.
    constexpr double kPushOutPenalty = 200.0;
    const int H = cfg_.horizon;

    const detail::CollisionPlanes collision = build_collision(anchor, obstacles);
    std::vector<LinearConstraint2> domain;
    if (minorants && zones) { domain = build_domain_planes(anchor, *zones, trust); }

    // Trust boxes are centered on the anchor; steps whose anchor must
    // escape an obstacle get exactly the extra room the escape needs,
    // otherwise the trust region would pin them inside.
    std::vector<double> trust_h(H + 1, trust);
    for (const auto & c : collision.push_out) {
      const double violation =
        c.normal.dot(anchor.states[static_cast<std::size_t>(c.h)].position) - c.offset;
      if (violation > 0.0) {
        trust_h[static_cast<std::size_t>(c.h)] =
          std::max(trust_h[static_cast<std::size_t>(c.h)], violation + 0.5 * trust);
      }
    }

    const int n_slack = static_cast<int>(collision.push_out.size());
    const int n_base = 3 * (H + 1) + 2 * H;
    const int n = n_base + n_slack;
    const auto sx = [](int h) { return 3 * h; };
    const auto su = [H](int h) { return 3 * (H + 1) + 2 * h; };

    qp::Problem prob;
    prob.P = Eigen::MatrixXd::Zero(n, n);
    prob.q = Eigen::VectorXd::Zero(n);

    // Tracking cost.
    for (int h = 0; h <= H; ++h) {
      const geom::Pose & r = ref.states[h];
      const double target[3] = {r.position.x, r.position.y, r.heading};
      for (int j = 0; j < 3; ++j) {
        prob.P(sx(h) + j, sx(h) + j) += 2.0;
        prob.q(sx(h) + j) -= 2.0 * target[j];
      }
    }
    // Tiny control regularization: breaks the near-degeneracy of the
    // first control (its tracking gradient is below solver noise, which
    // otherwise dithers the applied command between replans) and makes
    // the Hessian strictly convex in the controls.
    constexpr double kEffortWeight = 1e-4;
    constexpr double kSmoothWeight = 1e-3;
    for (int h = 0; h < H; ++h) {
      prob.P(su(h), su(h)) += 2.0 * kEffortWeight;
      prob.P(su(h) + 1, su(h) + 1) += 2.0 * kEffortWeight;
    }
    for (int h = 0; h + 1 < H; ++h) {
      for (int j = 0; j < 2; ++j) {
        const int a = su(h) + j;
        const int b = su(h + 1) + j;
        prob.P(a, a) += 2.0 * kSmoothWeight;
        prob.P(b, b) += 2.0 * kSmoothWeight;
        prob.P(a, b) -= 2.0 * kSmoothWeight;
        prob.P(b, a) -= 2.0 * kSmoothWeight;
      }
    }
    // Initialization pull toward sensors.
    if (eta > 0.0) {
      for (int h = 0; h <= H; ++h) {
        for (const auto & k : sensors_) {
          prob.P(sx(h), sx(h)) += 2.0 * eta;
          prob.P(sx(h) + 1, sx(h) + 1) += 2.0 * eta;
          prob.q(sx(h)) -= 2.0 * eta * k.position.x;
          prob.q(sx(h) + 1) -= 2.0 * eta * k.position.y;
        }
      }
    }
    // Quadratic minorants of the communication utility (negated, times rho).
    if (minorants) {
      for (std::size_t k = 0; k < sensors_.size(); ++k) {
        for (int h = 0; h <= H; ++h) {
          const Minorant & m = (*minorants)[k][static_cast<std::size_t>(h)];
          if (!m.active) { continue; }
          const double w = cfg_.rho;
          prob.P(sx(h), sx(h)) += w * m.mu;
          prob.P(sx(h) + 1, sx(h) + 1) += w * m.mu;
          prob.q(sx(h)) += w * (-m.gradient.x - m.mu * m.anchor.x);
          prob.q(sx(h) + 1) += w * (-m.gradient.y - m.mu * m.anchor.y);
        }
      }
    }

    // Equalities: pinned start and linearized dynamics along the anchor.
    const int me = 3 + 3 * H;
    prob.A = Eigen::MatrixXd::Zero(me, n);
    prob.b = Eigen::VectorXd::Zero(me);
    prob.A(0, 0) = prob.A(1, 1) = prob.A(2, 2) = 1.0;
    prob.b(0) = current.position.x;
    prob.b(1) = current.position.y;
    prob.b(2) = current.heading;
    for (int h = 0; h < H; ++h) {
      const auto lin =
        dyn::linearize(anchor.states[h], anchor.controls[h], cfg_.slot);
      const int row = 3 + 3 * h;
      for (int i = 0; i < 3; ++i) {
        prob.A(row + i, sx(h + 1) + i) = 1.0;
        for (int j = 0; j < 3; ++j) { prob.A(row + i, sx(h) + j) = -lin.A(i, j); }
        for (int j = 0; j < 2; ++j) { prob.A(row + i, su(h) + j) = -lin.B(i, j); }
        prob.b(row + i) = lin.c(i);
      }
    }

    // Inequalities.
    const int mi = 4 * H + 4 * (H - 1) + 6 * H + static_cast<int>(collision.hard.size()) +
                   static_cast<int>(domain.size()) + 2 * n_slack;
    prob.G = Eigen::MatrixXd::Zero(mi, n);
    prob.h = Eigen::VectorXd::Zero(mi);
    int row = 0;
    for (int h = 0; h < H; ++h) {  // control boxes
      prob.G(row, su(h)) = 1.0;  prob.h(row++) = cfg_.limits.u_max.v;
      prob.G(row, su(h)) = -1.0; prob.h(row++) = -cfg_.limits.u_min.v;
      prob.G(row, su(h) + 1) = 1.0;  prob.h(row++) = cfg_.limits.u_max.w;
      prob.G(row, su(h) + 1) = -1.0; prob.h(row++) = -cfg_.limits.u_min.w;
    }
    for (int h = 0; h + 1 < H; ++h) {  // acceleration boxes
      prob.G(row, su(h + 1)) = 1.0;  prob.G(row, su(h)) = -1.0; prob.h(row++) = cfg_.limits.a_max.v;
      prob.G(row, su(h + 1)) = -1.0; prob.G(row, su(h)) = 1.0;  prob.h(row++) = -cfg_.limits.a_min.v;
      prob.G(row, su(h + 1) + 1) = 1.0;  prob.G(row, su(h) + 1) = -1.0;
      prob.h(row++) = cfg_.limits.a_max.w;
      prob.G(row, su(h + 1) + 1) = -1.0; prob.G(row, su(h) + 1) = 1.0;
      prob.h(row++) = -cfg_.limits.a_min.w;
    }
    for (int h = 1; h <= H; ++h) {  // trust region on positions and heading
      const geom::Pose & a = anchor.states[h];
      const double r = trust_h[static_cast<std::size_t>(h)];
      const double r_th = 2.0 * r;
      prob.G(row, sx(h)) = 1.0;      prob.h(row++) = a.position.x + r;
      prob.G(row, sx(h)) = -1.0;     prob.h(row++) = -(a.position.x - r);
      prob.G(row, sx(h) + 1) = 1.0;  prob.h(row++) = a.position.y + r;
      prob.G(row, sx(h) + 1) = -1.0; prob.h(row++) = -(a.position.y - r);
      prob.G(row, sx(h) + 2) = 1.0;  prob.h(row++) = a.heading + r_th;
      prob.G(row, sx(h) + 2) = -1.0; prob.h(row++) = -(a.heading - r_th);
    }
    for (const auto & c : collision.hard) {
      prob.G(row, sx(c.h)) = c.normal.x;
      prob.G(row, sx(c.h) + 1) = c.normal.y;
      prob.h(row++) = c.offset;
    }
    for (const auto & c : domain) {
      prob.G(row, sx(c.h)) = c.normal.x;
      prob.G(row, sx(c.h) + 1) = c.normal.y;
      prob.h(row++) = c.offset;
    }
    for (int i = 0; i < n_slack; ++i) {
      const auto & c = collision.push_out[i];
      const int slack = n_base + i;
      prob.G(row, sx(c.h)) = c.normal.x;  // n.pos - s <= offset
      prob.G(row, sx(c.h) + 1) = c.normal.y;
      prob.G(row, slack) = -1.0;
      prob.h(row++) = c.offset;
      prob.G(row, slack) = -1.0;  // s >= 0
      prob.h(row++) = 0.0;
      prob.q(slack) = kPushOutPenalty;
      prob.P(slack, slack) = kPushOutPenalty;
    }

    qp::Settings settings;
    settings.tolerance = cfg_.qp_tol;
    const qp::Solution sol = qp::solve(prob, settings);
#ifdef MPCOM_QP_DUMP
    {
      static int dump_id = 0;
      nlohmann::json dj;
      const auto mat = [](const Eigen::MatrixXd & m) {
        std::vector<std::vector<double>> rows;
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
          rows.emplace_back(m.row(r).begin(), m.row(r).end());
        }
        return rows;
      };
      dj["P"] = mat(prob.P);
      dj["q"] = std::vector<double>(prob.q.begin(), prob.q.end());
      dj["A"] = mat(prob.A);
      dj["b"] = std::vector<double>(prob.b.begin(), prob.b.end());
      dj["G"] = mat(prob.G);
      dj["h"] = std::vector<double>(prob.h.begin(), prob.h.end());
      dj["x"] = std::vector<double>(sol.x.begin(), sol.x.end());
      std::ofstream out("/tmp/qp_dump_" + std::to_string(dump_id++) + ".json");
      out << dj.dump();
    }
#endif
    if (sol.status != qp::Status::Solved) {
      if (log::level() >= log::Level::Debug) {
        char buf[160];
        std::snprintf(buf, sizeof(buf),
                      "qp status=%d iters=%d primal=%.3g dual=%.3g gap=%.3g n=%d slack=%d",
                      static_cast<int>(sol.status), sol.iterations, sol.primal_residual,
                      sol.dual_residual, sol.gap, n, n_slack);
        log::debug(buf);
      }
      if (sol.primal_residual > 1e3 * cfg_.qp_tol) {
        throw Infeasible("convex subproblem infeasible");
      }
      throw QPNumericalFailure("QP did not reach the requested tolerance");
    }

    if (log::level() >= log::Level::Debug) {
      char buf[160];
      std::snprintf(buf, sizeof(buf), "qp ok obj=%.6g iters=%d slack_max=%.3g",
                    sol.objective(prob), sol.iterations,
                    n_slack > 0 ? sol.x.tail(n_slack).maxCoeff() : 0.0);
      log::debug(buf);
    }
    // The interior point satisfies the boxes to qp_tol; clamp the tail
    // error so the returned controls are exactly feasible.
    std::vector<dyn::Control> controls;
    controls.reserve(H);
    for (int h = 0; h < H; ++h) {
      dyn::Control u{sol.x(su(h)), sol.x(su(h) + 1)};
      u.v = std::clamp(u.v, cfg_.limits.u_min.v, cfg_.limits.u_max.v);
      u.w = std::clamp(u.w, cfg_.limits.u_min.w, cfg_.limits.u_max.w);
      if (h > 0) {
        const dyn::Control & prev = controls.back();
        u.v = std::clamp(u.v, prev.v + cfg_.limits.a_min.v, prev.v + cfg_.limits.a_max.v);
        u.w = std::clamp(u.w, prev.w + cfg_.limits.a_min.w, prev.w + cfg_.limits.a_max.w);
      }
      controls.push_back(u);
    }
    return rollout(current, std::move(controls));
  }

  PlannerConfig cfg_;
  geom::ConvexPolytope body_;
  std::vector<comm::Sensor> sensors_;
  std::optional<Trajectory> warm_;
};

/// One-shot MM solve (fresh planner, no warm start).
inline PlanResult mm_solve(
  const geom::Pose & current, const ReferenceWindow & ref,
  std::vector<comm::Sensor> sensors, std::span<const ObstaclePrediction> obstacles,
  const PlannerConfig & config, const geom::ConvexPolytope & robot_body)
{
  MpcPlanner planner(config, robot_body, std::move(sensors));
  return planner.solve(current, ref, obstacles);
}

/// One-shot initialization subproblem.
inline PlanResult initialize(
  const geom::Pose & current, const ReferenceWindow & ref, std::vector<comm::Sensor> sensors,
  const PlannerConfig & config, std::span<const ObstaclePrediction> obstacles,
  const geom::ConvexPolytope & robot_body)
{
  MpcPlanner planner(config, robot_body, std::move(sensors));
  return planner.initialize(current, ref, obstacles);
}

}  // namespace mpcom::plan
