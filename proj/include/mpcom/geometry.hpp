#pragma once

// 2D vector/pose algebra and convex polytopes in half-space form,
// with exact set distances and separating hyperplanes used by the
// collision-avoidance convexification and the radio zone tests.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mpcom::geom {

inline constexpr double kPi = 3.14159265358979323846;

/// Wrap an angle to (-pi, pi].
inline double normalize_angle(double a)
{
  double r = std::fmod(a + kPi, 2.0 * kPi);
  if (r <= 0.0) { r += 2.0 * kPi; }
  return r - kPi;
}

struct Vec2
{
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(const Vec2 & o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(const Vec2 & o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  Vec2 operator-() const { return {-x, -y}; }
  Vec2 & operator+=(const Vec2 & o) { x += o.x; y += o.y; return *this; }

  double dot(const Vec2 & o) const { return x * o.x + y * o.y; }
  double cross(const Vec2 & o) const { return x * o.y - y * o.x; }
  double squared_norm() const { return x * x + y * y; }
  double norm() const { return std::hypot(x, y); }

  Vec2 normalized() const
  {
    const double n = norm();
    return n > 0.0 ? Vec2{x / n, y / n} : Vec2{0.0, 0.0};
  }
  /// Counterclockwise rotation by theta.
  Vec2 rotated(double theta) const
  {
    const double c = std::cos(theta), s = std::sin(theta);
    return {c * x - s * y, s * x + c * y};
  }
};

inline Vec2 operator*(double s, const Vec2 & v) { return v * s; }

struct Pose
{
  Vec2 position;
  double heading = 0.0;

  Pose() = default;
  Pose(Vec2 p, double theta) : position(p), heading(normalize_angle(theta)) {}
  Pose(double x, double y, double theta) : Pose(Vec2{x, y}, theta) {}
};

struct DegenerateInput : std::runtime_error
{
  using std::runtime_error::runtime_error;
};

struct NotSeparable : std::runtime_error
{
  using std::runtime_error::runtime_error;
};

namespace detail {

/// Closest points between two segments; returns squared distance.
struct SegmentWitness
{
  double distance = 0.0;
  Vec2 p;
  Vec2 q;
};

inline Vec2 closest_point_on_segment(const Vec2 & p, const Vec2 & a, const Vec2 & b)
{
  const Vec2 d = b - a;
  const double len2 = d.squared_norm();
  if (len2 <= 0.0) { return a; }
  const double t = std::clamp((p - a).dot(d) / len2, 0.0, 1.0);
  return a + d * t;
}

inline SegmentWitness segment_segment_distance(
  const Vec2 & a0, const Vec2 & a1, const Vec2 & b0, const Vec2 & b1)
{
  // Proper crossing means distance zero at the intersection point.
  const Vec2 da = a1 - a0, db = b1 - b0;
  const double denom = da.cross(db);
  if (std::abs(denom) > 0.0) {
    const double t = (b0 - a0).cross(db) / denom;
    const double u = (b0 - a0).cross(da) / denom;
    if (t >= 0.0 && t <= 1.0 && u >= 0.0 && u <= 1.0) {
      const Vec2 x = a0 + da * t;
      return {0.0, x, x};
    }
  }
  SegmentWitness best;
  best.distance = std::numeric_limits<double>::infinity();
  const auto consider = [&best](const Vec2 & p, const Vec2 & q) {
    const double d = (p - q).norm();
    if (d < best.distance) { best = {d, p, q}; }
  };
  consider(a0, closest_point_on_segment(a0, b0, b1));
  consider(a1, closest_point_on_segment(a1, b0, b1));
  consider(closest_point_on_segment(b0, a0, a1), b0);
  consider(closest_point_on_segment(b1, a0, a1), b1);
  return best;
}

}  // namespace detail

/// Bounded convex polygon {z : G z <= g} with unit-norm rows, plus the
/// equivalent counterclockwise vertex list kept alongside for distance
/// and support queries.
class ConvexPolytope
{
public:
  ConvexPolytope() = default;

  /// Minimal half-space form of the convex hull of the input points.
  /// Throws DegenerateInput if the hull has (near) zero area.
  static ConvexPolytope from_vertices(std::span<const Vec2> points)
  {
    if (points.size() < 3) { throw DegenerateInput("polytope needs at least 3 points"); }
    std::vector<Vec2> pts(points.begin(), points.end());
    std::sort(pts.begin(), pts.end(), [](const Vec2 & a, const Vec2 & b) {
      return a.x < b.x || (a.x == b.x && a.y < b.y);
    });
    pts.erase(std::unique(pts.begin(), pts.end(), [](const Vec2 & a, const Vec2 & b) {
                return a.x == b.x && a.y == b.y;
              }),
              pts.end());
    if (pts.size() < 3) { throw DegenerateInput("fewer than 3 distinct points"); }

    // Andrew monotone chain; strictly convex turns only, so collinear
    // points drop out and the half-space form is minimal.
    const auto turn = [](const Vec2 & o, const Vec2 & a, const Vec2 & b) {
      return (a - o).cross(b - o);
    };
    std::vector<Vec2> hull(2 * pts.size());
    std::size_t k = 0;
    for (const Vec2 & p : pts) {  // lower chain
      while (k >= 2 && turn(hull[k - 2], hull[k - 1], p) <= 0.0) { --k; }
      hull[k++] = p;
    }
    const std::size_t lower_end = k + 1;
    for (auto it = pts.rbegin() + 1; it != pts.rend(); ++it) {  // upper chain
      while (k >= lower_end && turn(hull[k - 2], hull[k - 1], *it) <= 0.0) { --k; }
      hull[k++] = *it;
    }
    hull.resize(k - 1);  // closing point repeats the start
    if (hull.size() < 3) { throw DegenerateInput("hull has zero area"); }

    ConvexPolytope poly;
    poly.vertices_ = std::move(hull);
    poly.rebuild_halfspaces();
    if (poly.area() < 1e-12) { throw DegenerateInput("hull has zero area"); }
    return poly;
  }

  static ConvexPolytope axis_aligned_box(const Vec2 & lo, const Vec2 & hi)
  {
    const Vec2 corners[4] = {{lo.x, lo.y}, {hi.x, lo.y}, {hi.x, hi.y}, {lo.x, hi.y}};
    return from_vertices(corners);
  }

  std::size_t edge_count() const { return normals_.size(); }
  const std::vector<Vec2> & normals() const { return normals_; }
  const std::vector<double> & offsets() const { return offsets_; }
  const std::vector<Vec2> & vertices() const { return vertices_; }

  /// Closed-set membership: G p <= g elementwise (boundary inside).
  bool contains(const Vec2 & p, double tol = 1e-9) const
  {
    for (std::size_t i = 0; i < normals_.size(); ++i) {
      if (normals_[i].dot(p) > offsets_[i] + tol) { return false; }
    }
    return true;
  }

  /// max_{z in P} dir . z
  double support(const Vec2 & dir) const
  {
    double best = -std::numeric_limits<double>::infinity();
    for (const Vec2 & v : vertices_) { best = std::max(best, dir.dot(v)); }
    return best;
  }

  Vec2 support_point(const Vec2 & dir) const
  {
    double best = -std::numeric_limits<double>::infinity();
    Vec2 arg = vertices_.front();
    for (const Vec2 & v : vertices_) {
      const double s = dir.dot(v);
      if (s > best) { best = s; arg = v; }
    }
    return arg;
  }

  double area() const
  {
    double twice = 0.0;
    for (std::size_t i = 0; i < vertices_.size(); ++i) {
      const Vec2 & a = vertices_[i];
      const Vec2 & b = vertices_[(i + 1) % vertices_.size()];
      twice += a.cross(b);
    }
    return 0.5 * std::abs(twice);
  }

  /// Radius of the smallest origin-centered disk containing the polytope.
  double circumradius() const
  {
    double r = 0.0;
    for (const Vec2 & v : vertices_) { r = std::max(r, v.norm()); }
    return r;
  }

  friend ConvexPolytope transform_polytope(const ConvexPolytope & body, const Pose & pose);

private:
  void rebuild_halfspaces()
  {
    normals_.clear();
    offsets_.clear();
    normals_.reserve(vertices_.size());
    offsets_.reserve(vertices_.size());
    for (std::size_t i = 0; i < vertices_.size(); ++i) {
      const Vec2 & a = vertices_[i];
      const Vec2 & b = vertices_[(i + 1) % vertices_.size()];
      // CCW edge a->b: outward normal points right of the edge direction.
      const Vec2 n = Vec2{(b - a).y, -(b - a).x}.normalized();
      normals_.push_back(n);
      offsets_.push_back(n.dot(a));
    }
  }

  std::vector<Vec2> vertices_;   // counterclockwise
  std::vector<Vec2> normals_;    // unit rows of G, edge i = (v_i, v_{i+1})
  std::vector<double> offsets_;  // g
};

/// Rigid transform of a body-frame polytope: normals rotate with heading,
/// offsets shift by the translation; row norms are preserved.
inline ConvexPolytope transform_polytope(const ConvexPolytope & body, const Pose & pose)
{
  ConvexPolytope out;
  out.vertices_.reserve(body.vertices_.size());
  for (const Vec2 & v : body.vertices_) {
    out.vertices_.push_back(pose.position + v.rotated(pose.heading));
  }
  out.normals_.reserve(body.normals_.size());
  out.offsets_.reserve(body.offsets_.size());
  for (std::size_t i = 0; i < body.normals_.size(); ++i) {
    const Vec2 n = body.normals_[i].rotated(pose.heading);
    out.normals_.push_back(n);
    out.offsets_.push_back(body.offsets_[i] + n.dot(pose.position));
  }
  return out;
}

inline bool contains(const ConvexPolytope & zone, const Vec2 & point)
{
  return zone.contains(point);
}

struct DistanceWitness
{
  double distance = 0.0;
  Vec2 p;  ///< closest point on the first set
  Vec2 q;  ///< closest point on the second set
};

/// Euclidean distance between two convex polygons with witness points;
/// zero (with coincident witnesses) when the sets intersect. Exact:
/// enumerates boundary edge pairs, then covers the nested case by
/// containment tests.
inline DistanceWitness polytope_distance(const ConvexPolytope & P, const ConvexPolytope & Q)
{
  for (const Vec2 & v : P.vertices()) {
    if (Q.contains(v, 0.0)) { return {0.0, v, v}; }
  }
  for (const Vec2 & v : Q.vertices()) {
    if (P.contains(v, 0.0)) { return {0.0, v, v}; }
  }
  DistanceWitness best;
  best.distance = std::numeric_limits<double>::infinity();
  const auto & pv = P.vertices();
  const auto & qv = Q.vertices();
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const Vec2 & a0 = pv[i];
    const Vec2 & a1 = pv[(i + 1) % pv.size()];
    for (std::size_t j = 0; j < qv.size(); ++j) {
      const auto w = detail::segment_segment_distance(a0, a1, qv[j], qv[(j + 1) % qv.size()]);
      if (w.distance < best.distance) { best = {w.distance, w.p, w.q}; }
    }
  }
  return best;
}

/// Exact distance from a point to a convex polygon (zero inside), with
/// the closest boundary/interior point as witness.
inline DistanceWitness point_polytope_distance(const Vec2 & p, const ConvexPolytope & P)
{
  if (P.contains(p, 0.0)) { return {0.0, p, p}; }
  DistanceWitness best;
  best.distance = std::numeric_limits<double>::infinity();
  const auto & v = P.vertices();
  for (std::size_t i = 0; i < v.size(); ++i) {
    const Vec2 c = detail::closest_point_on_segment(p, v[i], v[(i + 1) % v.size()]);
    const double d = (p - c).norm();
    if (d < best.distance) { best = {d, p, c}; }
  }
  return best;
}

struct Halfplane
{
  Vec2 normal;     ///< unit vector pointing from P toward Q
  double offset;   ///< supporting value of P: normal . z <= offset on P
};

/// Separating hyperplane for disjoint polytopes. P satisfies
/// normal . z <= offset; Q satisfies normal . z >= offset + distance.
inline Halfplane separating_hyperplane(const ConvexPolytope & P, const ConvexPolytope & Q)
{
  const DistanceWitness w = polytope_distance(P, Q);
  if (w.distance <= 0.0) { throw NotSeparable("polytopes intersect"); }
  const Vec2 n = (w.q - w.p) * (1.0 / w.distance);
  return {n, P.support(n)};
}

}  // namespace mpcom::geom
