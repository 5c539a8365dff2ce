#pragma once

// Synthetic radio-map generation over a 2D workspace, the multi-zone
// propagation model and its per-zone nonlinear least squares fit (dB
// domain), the single distance-based model, and residual-band zone
// segmentation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mpcom/geometry.hpp"

namespace mpcom::radio {

inline constexpr double kDefaultNearField = 0.5;  // m, clamp below which gain flattens

struct InvalidGrid : std::runtime_error
{
  using std::runtime_error::runtime_error;
};

struct OutsideAllZones : std::runtime_error
{
  using std::runtime_error::runtime_error;
};

struct EmptyZone : std::runtime_error
{
  explicit EmptyZone(int zone, const std::string & what)
  : std::runtime_error(what), zone_index(zone) {}
  int zone_index;
};

/// Attenuating wall: crossing the open segment multiplies the gain by
/// `transmission` (linear factor in (0, 1]).
struct WallSegment
{
  geom::Vec2 a;
  geom::Vec2 b;
  double transmission = 1.0;
};

namespace detail {

/// Proper interior crossing of open segments; endpoint grazing and
/// collinear overlap do not count.
inline bool properly_crossed(
  const geom::Vec2 & a0, const geom::Vec2 & a1, const geom::Vec2 & b0, const geom::Vec2 & b1)
{
  const geom::Vec2 da = a1 - a0;
  const geom::Vec2 db = b1 - b0;
  const double denom = da.cross(db);
  if (std::abs(denom) <= 1e-15) { return false; }
  const double t = (b0 - a0).cross(db) / denom;
  const double u = (b0 - a0).cross(da) / denom;
  constexpr double eps = 1e-12;
  return t > eps && t < 1.0 - eps && u > eps && u < 1.0 - eps;
}

inline double clamped_distance(const geom::Vec2 & a, const geom::Vec2 & b, double d_min)
{
  return std::max((a - b).norm(), d_min);
}

}  // namespace detail

/// Rasterized linear channel gain field for one sensor. Row-major
/// storage, row = y index; cell centers at origin + (i + 0.5) * res.
struct RadioMapGrid
{
  geom::Vec2 origin;
  double resolution = 0.1;
  int width = 0;
  int height = 0;
  std::vector<double> gains;  // linear, strictly positive
  geom::Vec2 sensor;

  geom::Vec2 cell_center(int ix, int iy) const
  {
    return {origin.x + (ix + 0.5) * resolution, origin.y + (iy + 0.5) * resolution};
  }
  double gain_at(int ix, int iy) const { return gains[static_cast<std::size_t>(iy) * width + ix]; }
  double gain_db_at(int ix, int iy) const { return 10.0 * std::log10(gain_at(ix, iy)); }

  bool in_bounds(const geom::Vec2 & p) const
  {
    return p.x >= origin.x && p.y >= origin.y &&
           p.x <= origin.x + width * resolution && p.y <= origin.y + height * resolution;
  }

  /// Bilinear interpolation of the dB field at a world position; samples
  /// are clamped to the grid so queries just outside stay finite.
  double sample_db(const geom::Vec2 & p) const
  {
    const double u = (p.x - origin.x) / resolution - 0.5;
    const double v = (p.y - origin.y) / resolution - 0.5;
    const double cu = std::clamp(u, 0.0, static_cast<double>(width - 1));
    const double cv = std::clamp(v, 0.0, static_cast<double>(height - 1));
    const int ix0 = std::min(static_cast<int>(cu), width - 2 >= 0 ? width - 2 : 0);
    const int iy0 = std::min(static_cast<int>(cv), height - 2 >= 0 ? height - 2 : 0);
    const int ix1 = std::min(ix0 + 1, width - 1);
    const int iy1 = std::min(iy0 + 1, height - 1);
    const double fx = std::clamp(cu - ix0, 0.0, 1.0);
    const double fy = std::clamp(cv - iy0, 0.0, 1.0);
    const double g00 = gain_db_at(ix0, iy0);
    const double g10 = gain_db_at(ix1, iy0);
    const double g01 = gain_db_at(ix0, iy1);
    const double g11 = gain_db_at(ix1, iy1);
    return (1 - fx) * (1 - fy) * g00 + fx * (1 - fy) * g10 +
           (1 - fx) * fy * g01 + fx * fy * g11;
  }

  double sample_gain(const geom::Vec2 & p) const { return std::pow(10.0, sample_db(p) / 10.0); }

  nlohmann::json to_json() const
  {
    nlohmann::json j;
    j["origin"] = {origin.x, origin.y};
    j["resolution"] = resolution;
    j["width"] = width;
    j["height"] = height;
    j["sensor"] = {sensor.x, sensor.y};
    nlohmann::json arr = nlohmann::json::array();
    for (double g : gains) {
      const double db = 10.0 * std::log10(g);
      arr.push_back(std::round(db * 1e6) / 1e6);  // 6 decimal digits in dB
    }
    j["gains_db"] = std::move(arr);
    return j;
  }

  static RadioMapGrid from_json(const nlohmann::json & j)
  {
    RadioMapGrid g;
    g.origin = {j.at("origin").at(0).get<double>(), j.at("origin").at(1).get<double>()};
    g.resolution = j.at("resolution").get<double>();
    g.width = j.at("width").get<int>();
    g.height = j.at("height").get<int>();
    g.sensor = {j.at("sensor").at(0).get<double>(), j.at("sensor").at(1).get<double>()};
    const auto & arr = j.at("gains_db");
    if (static_cast<int>(arr.size()) != g.width * g.height) {
      throw InvalidGrid("gains_db length does not match width*height");
    }
    g.gains.reserve(arr.size());
    for (const auto & db : arr) {
      const double val = std::pow(10.0, db.get<double>() / 10.0);
      if (!(std::isfinite(val) && val > 0.0)) { throw InvalidGrid("non-finite gain"); }
      g.gains.push_back(val);
    }
    return g;
  }
};

/// Ground-truth generator: free-space power law with near-field clamp,
/// attenuated multiplicatively by every wall properly crossed by the
/// open sensor-to-cell segment. Deterministic.
inline RadioMapGrid generate_radio_map(
  std::span<const WallSegment> walls, const geom::Vec2 & sensor, const geom::Vec2 & origin,
  double resolution, int width, int height, double rho0, double lambda,
  double d_min = kDefaultNearField)
{
  if (width <= 0 || height <= 0) { throw InvalidGrid("width and height must be positive"); }
  if (!(resolution > 0.0)) { throw InvalidGrid("resolution must be positive"); }
  RadioMapGrid g;
  g.origin = origin;
  g.resolution = resolution;
  g.width = width;
  g.height = height;
  g.sensor = sensor;
  g.gains.resize(static_cast<std::size_t>(width) * height);
  for (int iy = 0; iy < height; ++iy) {
    for (int ix = 0; ix < width; ++ix) {
      const geom::Vec2 c = g.cell_center(ix, iy);
      double gain = rho0 * std::pow(detail::clamped_distance(c, sensor, d_min), -lambda);
      for (const WallSegment & w : walls) {
        if (detail::properly_crossed(sensor, c, w.a, w.b)) { gain *= w.transmission; }
      }
      g.gains[static_cast<std::size_t>(iy) * width + ix] = gain;
    }
  }
  return g;
}

/// Distance-based propagation model (single power law).
struct DistanceModel
{
  double rho0 = 1e-3;   ///< linear gain at 1 m
  double lambda = 2.0;  ///< pathloss exponent
  double d_min = kDefaultNearField;
};

inline double eval_los(const DistanceModel & m, const geom::Vec2 & robot, const geom::Vec2 & sensor)
{
  return m.rho0 * std::pow(detail::clamped_distance(robot, sensor, m.d_min), -m.lambda);
}

/// Multi-zone model: per-zone (beta, alpha) power laws over convex zones.
/// Overlaps resolve to the lowest zone index; zone 0 is the LOS zone.
struct MultiZoneModel
{
  std::vector<geom::ConvexPolytope> zones;
  std::vector<double> beta;
  std::vector<double> alpha;
  geom::Vec2 sensor;
  double d_min = kDefaultNearField;

  std::optional<int> find_zone(const geom::Vec2 & p) const
  {
    for (std::size_t l = 0; l < zones.size(); ++l) {
      if (zones[l].contains(p)) { return static_cast<int>(l); }
    }
    return std::nullopt;
  }
};

inline double eval_multizone(
  const MultiZoneModel & m, const geom::Vec2 & robot, const geom::Vec2 & sensor)
{
  const auto l = m.find_zone(robot);
  if (!l) { throw OutsideAllZones("position lies outside every zone"); }
  return m.beta[*l] * std::pow(detail::clamped_distance(robot, sensor, m.d_min), -m.alpha[*l]);
}

struct FitResult
{
  double beta = 0.0;
  double alpha = 0.0;
  double rmse_db = 0.0;
};

struct FitOptions
{
  std::pair<double, double> alpha_range{0.0, 8.0};
  std::pair<double, double> beta_range{1e-12, 1.0};
  std::optional<double> pinned_beta;  ///< fixes beta (LOS zone with known rho0)
  double d_min = kDefaultNearField;
  double alpha_step = 0.01;
};

namespace detail {

/// dB-domain least squares on y_i ~ b - alpha * x_i where
/// x_i = 10 log10(clamped distance), y_i = 10 log10(gain),
/// b = 10 log10(beta). For fixed alpha the optimal b is closed-form
/// (clamped to range), so the alpha search reduces to precomputed
/// moments: O(1) per candidate. Moments are centered to keep near-zero
/// residuals free of cancellation.
struct DbFit
{
  std::vector<double> xs, ys;
  double n = 0, mean_x = 0, mean_y = 0, cxx = 0, cxy = 0, cyy = 0;

  void add(double x, double y)
  {
    xs.push_back(x);
    ys.push_back(y);
  }

  void finalize()
  {
    n = static_cast<double>(xs.size());
    if (n == 0) { return; }
    for (std::size_t i = 0; i < xs.size(); ++i) {
      mean_x += xs[i];
      mean_y += ys[i];
    }
    mean_x /= n;
    mean_y /= n;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double dx = xs[i] - mean_x;
      const double dy = ys[i] - mean_y;
      cxx += dx * dx;
      cxy += dx * dy;
      cyy += dy * dy;
    }
  }

  double objective(double alpha, double b) const
  {
    // sum (y + alpha x - b)^2 with the mean split off
    const double offset = mean_y + alpha * mean_x - b;
    return cyy + alpha * alpha * cxx + 2.0 * alpha * cxy + n * offset * offset;
  }

  double best_b(double alpha, double b_lo, double b_hi) const
  {
    return std::clamp(mean_y + alpha * mean_x, b_lo, b_hi);
  }
};

inline FitResult fit_db_moments(const DbFit & m, const FitOptions & opt)
{
  const double b_lo = opt.pinned_beta ? 10.0 * std::log10(*opt.pinned_beta)
                                      : 10.0 * std::log10(opt.beta_range.first);
  const double b_hi = opt.pinned_beta ? 10.0 * std::log10(*opt.pinned_beta)
                                      : 10.0 * std::log10(opt.beta_range.second);
  const auto eval = [&](double alpha) {
    const double b = m.best_b(alpha, b_lo, b_hi);
    return std::pair<double, double>{m.objective(alpha, b), b};
  };

  const double lo = opt.alpha_range.first;
  const double hi = std::max(opt.alpha_range.second, lo);
  double best_alpha = lo;
  double best_obj = std::numeric_limits<double>::infinity();
  const int steps = static_cast<int>(std::ceil((hi - lo) / opt.alpha_step));
  for (int i = 0; i <= steps; ++i) {
    const double a = std::min(lo + i * opt.alpha_step, hi);
    const double obj = eval(a).first;
    if (obj < best_obj) { best_obj = obj; best_alpha = a; }
  }
  // Local refinement inside the bracketing grid cell.
  double a_lo = std::max(lo, best_alpha - opt.alpha_step);
  double a_hi = std::min(hi, best_alpha + opt.alpha_step);
  for (int it = 0; it < 80 && a_hi - a_lo > 1e-10; ++it) {
    const double m1 = a_lo + (a_hi - a_lo) / 3.0;
    const double m2 = a_hi - (a_hi - a_lo) / 3.0;
    if (eval(m1).first <= eval(m2).first) { a_hi = m2; } else { a_lo = m1; }
  }
  const double refined = 0.5 * (a_lo + a_hi);
  if (eval(refined).first < best_obj) { best_alpha = refined; }

  const auto [obj, b] = eval(best_alpha);
  FitResult r;
  r.alpha = best_alpha;
  r.beta = std::pow(10.0, b / 10.0);
  r.rmse_db = std::sqrt(std::max(obj, 0.0) / m.n);
  return r;
}

}  // namespace detail

/// Fit one zone's (beta, alpha) to the map cells whose centers lie in the
/// zone, minimizing squared dB error. Throws EmptyZone below 10 cells.
inline FitResult fit_zone(
  const RadioMapGrid & map, const geom::ConvexPolytope & zone, const FitOptions & opt = {})
{
  detail::DbFit m;
  for (int iy = 0; iy < map.height; ++iy) {
    for (int ix = 0; ix < map.width; ++ix) {
      const geom::Vec2 c = map.cell_center(ix, iy);
      if (!zone.contains(c)) { continue; }
      m.add(10.0 * std::log10(detail::clamped_distance(c, map.sensor, opt.d_min)),
            10.0 * std::log10(map.gain_at(ix, iy)));
    }
  }
  m.finalize();
  if (m.n < 10) {
    throw EmptyZone(-1, "zone contains " + std::to_string(static_cast<int>(m.n)) +
                          " cells, need at least 10");
  }
  return detail::fit_db_moments(m, opt);
}

inline FitResult fit_zone(
  const RadioMapGrid & map, const geom::ConvexPolytope & zone,
  std::pair<double, double> alpha_range, std::pair<double, double> beta_range)
{
  FitOptions opt;
  opt.alpha_range = alpha_range;
  opt.beta_range = beta_range;
  return fit_zone(map, zone, opt);
}

struct MultiZoneFitConstraints
{
  std::pair<double, double> alpha_los{2.0, 5.0};
  std::pair<double, double> alpha_nlos{0.0, 8.0};
  std::pair<double, double> beta_range{1e-12, 1.0};
  std::optional<double> rho0;  ///< pins beta of the LOS zone when known
  double d_min = kDefaultNearField;
};

struct MultiZoneFit
{
  MultiZoneModel model;
  std::vector<double> zone_rmse_db;
  double total_rmse_db = 0.0;
};

/// Independent per-zone fits; zone 0 is LOS (alpha in [2,5], beta pinned
/// to rho0 when provided). Total RMSE aggregates per-cell errors with
/// each cell assigned to its lowest containing zone.
inline MultiZoneFit fit_multizone(
  const RadioMapGrid & map, std::span<const geom::ConvexPolytope> zones,
  const MultiZoneFitConstraints & constraints = {})
{
  if (zones.empty()) { throw EmptyZone(0, "no zones supplied"); }
  MultiZoneFit out;
  out.model.sensor = map.sensor;
  out.model.d_min = constraints.d_min;
  for (std::size_t l = 0; l < zones.size(); ++l) {
    FitOptions opt;
    opt.alpha_range = (l == 0) ? constraints.alpha_los : constraints.alpha_nlos;
    opt.beta_range = constraints.beta_range;
    opt.d_min = constraints.d_min;
    if (l == 0 && constraints.rho0) { opt.pinned_beta = constraints.rho0; }
    FitResult fit;
    try {
      fit = fit_zone(map, zones[l], opt);
    } catch (const EmptyZone & e) {
      throw EmptyZone(static_cast<int>(l), e.what());
    }
    out.model.zones.push_back(zones[l]);
    out.model.beta.push_back(fit.beta);
    out.model.alpha.push_back(fit.alpha);
    out.zone_rmse_db.push_back(fit.rmse_db);
  }
  double sq = 0.0;
  std::size_t n = 0;
  for (int iy = 0; iy < map.height; ++iy) {
    for (int ix = 0; ix < map.width; ++ix) {
      const geom::Vec2 c = map.cell_center(ix, iy);
      const auto l = out.model.find_zone(c);
      if (!l) { continue; }
      const double model_db = 10.0 * std::log10(eval_multizone(out.model, c, map.sensor));
      const double err = map.gain_db_at(ix, iy) - model_db;
      sq += err * err;
      ++n;
    }
  }
  out.total_rmse_db = n > 0 ? std::sqrt(sq / n) : 0.0;
  return out;
}

/// Single power-law fit over every cell; lambda searched in [2, 5].
inline std::pair<DistanceModel, double> fit_distance_model(
  const RadioMapGrid & map, double d_min = kDefaultNearField)
{
  detail::DbFit m;
  for (int iy = 0; iy < map.height; ++iy) {
    for (int ix = 0; ix < map.width; ++ix) {
      const geom::Vec2 c = map.cell_center(ix, iy);
      m.add(10.0 * std::log10(detail::clamped_distance(c, map.sensor, d_min)),
            10.0 * std::log10(map.gain_at(ix, iy)));
    }
  }
  m.finalize();
  if (m.n < 1) { throw InvalidGrid("empty map"); }
  FitOptions opt;
  opt.alpha_range = {2.0, 5.0};
  opt.d_min = d_min;
  const FitResult fit = detail::fit_db_moments(m, opt);
  return {DistanceModel{fit.beta, fit.alpha, d_min}, fit.rmse_db};
}

/// Zone proposal by residual banding: quantize the dB residual of the
/// best single distance fit, flood-fill 4-connected bands, drop small
/// regions, and return axis-aligned bounding boxes largest-first with
/// the sensor's region promoted to the front (LOS zone).
inline std::vector<geom::ConvexPolytope> segment_zones(
  const RadioMapGrid & map, double level_width_db, int min_region_cells)
{
  if (!(level_width_db > 0.0)) { throw InvalidGrid("level_width_db must be positive"); }
  const auto [dm, rmse] = fit_distance_model(map);
  (void)rmse;
  const auto idx = [&](int ix, int iy) { return static_cast<std::size_t>(iy) * map.width + ix; };

  std::vector<long> band(map.gains.size());
  for (int iy = 0; iy < map.height; ++iy) {
    for (int ix = 0; ix < map.width; ++ix) {
      const geom::Vec2 c = map.cell_center(ix, iy);
      const double model_db = 10.0 * std::log10(eval_los(dm, c, map.sensor));
      // Half-level shift keeps zero-residual cells inside one band.
      band[idx(ix, iy)] = static_cast<long>(
        std::floor((map.gain_db_at(ix, iy) - model_db + 0.5 * level_width_db) /
                   level_width_db));
    }
  }

  struct Region { int min_x, min_y, max_x, max_y; int cells; std::size_t first; bool has_sensor; };
  std::vector<int> label(map.gains.size(), -1);
  std::vector<Region> regions;

  int sensor_ix = std::clamp(
    static_cast<int>((map.sensor.x - map.origin.x) / map.resolution), 0, map.width - 1);
  int sensor_iy = std::clamp(
    static_cast<int>((map.sensor.y - map.origin.y) / map.resolution), 0, map.height - 1);

  std::vector<std::pair<int, int>> stack;
  for (int iy = 0; iy < map.height; ++iy) {
    for (int ix = 0; ix < map.width; ++ix) {
      if (label[idx(ix, iy)] >= 0) { continue; }
      const int id = static_cast<int>(regions.size());
      const long b = band[idx(ix, iy)];
      Region r{ix, iy, ix, iy, 0, idx(ix, iy), false};
      stack.assign(1, {ix, iy});
      label[idx(ix, iy)] = id;
      while (!stack.empty()) {
        const auto [cx, cy] = stack.back();
        stack.pop_back();
        ++r.cells;
        r.min_x = std::min(r.min_x, cx); r.max_x = std::max(r.max_x, cx);
        r.min_y = std::min(r.min_y, cy); r.max_y = std::max(r.max_y, cy);
        if (cx == sensor_ix && cy == sensor_iy) { r.has_sensor = true; }
        const int nx[4] = {cx - 1, cx + 1, cx, cx};
        const int ny[4] = {cy, cy, cy - 1, cy + 1};
        for (int k = 0; k < 4; ++k) {
          if (nx[k] < 0 || nx[k] >= map.width || ny[k] < 0 || ny[k] >= map.height) { continue; }
          const std::size_t j = idx(nx[k], ny[k]);
          if (label[j] < 0 && band[j] == b) {
            label[j] = id;
            stack.push_back({nx[k], ny[k]});
          }
        }
      }
      regions.push_back(r);
    }
  }

  std::erase_if(regions, [&](const Region & r) { return r.cells < min_region_cells; });
  std::stable_sort(regions.begin(), regions.end(), [](const Region & a, const Region & b) {
    return a.cells > b.cells || (a.cells == b.cells && a.first < b.first);
  });
  const auto sensor_it = std::find_if(
    regions.begin(), regions.end(), [](const Region & r) { return r.has_sensor; });
  if (sensor_it != regions.end()) { std::rotate(regions.begin(), sensor_it, sensor_it + 1); }

  std::vector<geom::ConvexPolytope> zones;
  zones.reserve(regions.size());
  for (const Region & r : regions) {
    zones.push_back(geom::ConvexPolytope::axis_aligned_box(
      {map.origin.x + r.min_x * map.resolution, map.origin.y + r.min_y * map.resolution},
      {map.origin.x + (r.max_x + 1) * map.resolution,
       map.origin.y + (r.max_y + 1) * map.resolution}));
  }
  return zones;
}

}  // namespace mpcom::radio
