#pragma once

// Per-slot communication utility (harvested bits) and its concave
// minorant around an anchor state, with analytic gradient. The minorant
// freezes the propagation zone at the anchor so it stays concave and
// tight inside one optimizer iteration.

#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <variant>

#include "mpcom/geometry.hpp"
#include "mpcom/radio.hpp"

namespace mpcom::comm {

inline constexpr double kDomainGuard = 1e-6;  // lower bound on the log argument

struct DomainViolation : std::runtime_error
{
  using std::runtime_error::runtime_error;
};

struct CommParams
{
  double transmit_power = 2e-3;  ///< W
  double noise_power = 1e-8;     ///< W (interference plus noise)
  double bandwidth = 1e5;        ///< Hz
  double slot = 0.1;             ///< s
};

/// One zone's power-law parameters as seen from a fixed model.
struct ZoneParams
{
  double beta = 0.0;
  double alpha = 0.0;
  double d_min = radio::kDefaultNearField;
  int zone_index = 0;
};

struct Sensor
{
  geom::Vec2 position;
  CommParams params;
  std::variant<radio::MultiZoneModel, radio::DistanceModel> model;

  double gain_at(const geom::Vec2 & p) const
  {
    if (const auto * mz = std::get_if<radio::MultiZoneModel>(&model)) {
      return radio::eval_multizone(*mz, p, position);
    }
    return radio::eval_los(std::get<radio::DistanceModel>(model), p, position);
  }

  /// Zone parameters at a point; nullopt when a multi-zone model does
  /// not cover it. A distance model covers the whole plane.
  std::optional<ZoneParams> zone_at(const geom::Vec2 & p) const
  {
    if (const auto * mz = std::get_if<radio::MultiZoneModel>(&model)) {
      const auto l = mz->find_zone(p);
      if (!l) { return std::nullopt; }
      return ZoneParams{mz->beta[*l], mz->alpha[*l], mz->d_min, *l};
    }
    const auto & dm = std::get<radio::DistanceModel>(model);
    return ZoneParams{dm.rho0, dm.lambda, dm.d_min, 0};
  }
};

inline double snr(double gain, const CommParams & p)
{
  return gain * p.transmit_power / p.noise_power;
}

/// Shannon spectral efficiency, bps/Hz.
inline double spectral_efficiency(double gain, const CommParams & p)
{
  return std::log2(1.0 + snr(gain, p));
}

/// Per-slot harvested bits from one sensor at a robot state. Heading
/// does not enter. Throws OutsideAllZones through the model evaluation.
inline double comm_utility(const geom::Pose & state, const Sensor & sensor)
{
  return sensor.params.slot * sensor.params.bandwidth *
         spectral_efficiency(sensor.gain_at(state.position), sensor.params);
}

/// Utility with the zone fixed explicitly (used along a frozen-zone
/// optimizer iteration, where the evaluation point may have drifted out
/// of the anchor's zone).
inline double utility_frozen(
  const geom::Vec2 & pos, const geom::Vec2 & sensor_pos, const ZoneParams & zone,
  const CommParams & p)
{
  const double d = std::max((pos - sensor_pos).norm(), zone.d_min);
  const double gain = zone.beta * std::pow(d, -zone.alpha);
  return p.slot * p.bandwidth * std::log2(1.0 + snr(gain, p));
}

namespace detail {

struct SurrogateEval
{
  double value = 0.0;               ///< bits
  double log_argument = 0.0;        ///< argument of the log2
  std::array<double, 2> grad{0, 0}; ///< d/dx, d/dy (heading derivative is 0)
};

/// Core of the minorant: with y = d*(anchor)^alpha and x = d(pos)^alpha
/// (both distances clamped at d_min),
///   value = tau B log2(1 + C (2/y - x/y^2)),  C = beta p / sigma^2.
/// The bracket is the 1/x >= 1/y - (x - y)/y^2 minorant of the pathloss,
/// so value <= utility, with equality and matching gradient at x = y.
inline SurrogateEval surrogate_core(
  const geom::Vec2 & pos, const geom::Vec2 & anchor_pos, const geom::Vec2 & sensor_pos,
  const ZoneParams & zone, const CommParams & p)
{
  const double c_snr = zone.beta * p.transmit_power / p.noise_power;
  const double d_star = std::max((anchor_pos - sensor_pos).norm(), zone.d_min);
  const double d_raw = (pos - sensor_pos).norm();
  const double d_eff = std::max(d_raw, zone.d_min);
  const double y = std::pow(d_star, zone.alpha);
  const double x = std::pow(d_eff, zone.alpha);

  SurrogateEval out;
  out.log_argument = 1.0 + c_snr * (2.0 - x / y) / y;
  if (out.log_argument <= kDomainGuard) {
    throw DomainViolation("surrogate log argument below domain guard");
  }
  const double tau_b = p.slot * p.bandwidth;
  out.value = tau_b * std::log2(out.log_argument);

  if (d_raw > zone.d_min && zone.alpha != 0.0) {
    // d(value)/dx = -tau B C / (ln2 * arg * y^2); dx/dpos = alpha d^(a-2) (pos - z)
    const double dv_dx = -tau_b * c_snr / (std::log(2.0) * out.log_argument * y * y);
    const double scale = dv_dx * zone.alpha * std::pow(d_raw, zone.alpha - 2.0);
    out.grad = {scale * (pos.x - sensor_pos.x), scale * (pos.y - sensor_pos.y)};
  }
  return out;
}

}  // namespace detail

/// Concave minorant of comm_utility around an anchor state, zone frozen
/// at the anchor. Throws OutsideAllZones if the anchor is uncovered and
/// DomainViolation if the evaluation point leaves the log domain.
inline double surrogate(const geom::Pose & state, const geom::Pose & anchor, const Sensor & sensor)
{
  const auto zone = sensor.zone_at(anchor.position);
  if (!zone) { throw radio::OutsideAllZones("anchor lies outside every zone"); }
  return detail::surrogate_core(state.position, anchor.position, sensor.position, *zone,
                                sensor.params).value;
}

/// Analytic gradient of the minorant w.r.t. (x, y, theta); the theta
/// component is identically zero.
inline std::array<double, 3> surrogate_gradient(
  const geom::Pose & state, const geom::Pose & anchor, const Sensor & sensor)
{
  const auto zone = sensor.zone_at(anchor.position);
  if (!zone) { throw radio::OutsideAllZones("anchor lies outside every zone"); }
  const auto eval = detail::surrogate_core(state.position, anchor.position, sensor.position,
                                           *zone, sensor.params);
  return {eval.grad[0], eval.grad[1], 0.0};
}

/// Largest sensor distance that keeps the minorant's log argument above
/// the domain guard for the given anchor; +inf when alpha = 0.
inline double surrogate_domain_radius(
  const geom::Vec2 & anchor_pos, const geom::Vec2 & sensor_pos, const ZoneParams & zone,
  const CommParams & p)
{
  if (zone.alpha == 0.0) { return std::numeric_limits<double>::infinity(); }
  const double c_snr = zone.beta * p.transmit_power / p.noise_power;
  const double d_star = std::max((anchor_pos - sensor_pos).norm(), zone.d_min);
  const double y = std::pow(d_star, zone.alpha);
  // arg > guard  <=>  x < y^2 (1 - guard) / C + 2 y
  const double x_max = y * y * (1.0 - kDomainGuard) / c_snr + 2.0 * y;
  return std::pow(x_max, 1.0 / zone.alpha);
}

}  // namespace mpcom::comm
