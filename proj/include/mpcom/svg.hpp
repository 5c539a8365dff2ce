#pragma once

// Small SVG writer plus the three report renderers: radio-map heatmap
// (fixed dB color scale with legend), trajectory overview, and speed
// profile. Output is plain well-formed XML.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "mpcom/geometry.hpp"
#include "mpcom/radio.hpp"
#include "mpcom/sim.hpp"

namespace mpcom::svg {

inline std::string escape(std::string_view s)
{
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string fmt(double v)
{
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

struct Color
{
  int r = 0, g = 0, b = 0;
  std::string hex() const
  {
    char buf[8];
    std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", r, g, b);
    return buf;
  }
};

/// Perceptually ordered ramp (viridis control points), t in [0, 1].
inline Color ramp(double t)
{
  static const int anchors[9][3] = {
    {68, 1, 84},   {72, 40, 120},  {62, 74, 137},  {49, 104, 142}, {38, 130, 142},
    {31, 158, 137}, {53, 183, 121}, {109, 205, 89}, {253, 231, 37}};
  t = std::clamp(t, 0.0, 1.0) * 8.0;
  const int i = std::min(7, static_cast<int>(t));
  const double f = t - i;
  const auto mix = [&](int c) {
    return static_cast<int>(std::lround(anchors[i][c] + f * (anchors[i + 1][c] - anchors[i][c])));
  };
  return {mix(0), mix(1), mix(2)};
}

/// SVG document over a world-coordinate window (y axis flipped).
class Document
{
public:
  Document(geom::Vec2 world_min, geom::Vec2 world_max, double px_per_m = 60.0,
           double margin = 30.0)
  : min_(world_min), max_(world_max), ppm_(px_per_m), margin_(margin)
  {
    width_ = margin_ * 2.0 + (max_.x - min_.x) * ppm_;
    height_ = margin_ * 2.0 + (max_.y - min_.y) * ppm_;
  }

  double sx(double x) const { return margin_ + (x - min_.x) * ppm_; }
  double sy(double y) const { return margin_ + (max_.y - y) * ppm_; }
  double scale(double m) const { return m * ppm_; }
  double width() const { return width_; }
  double height() const { return height_; }

  void rect_world(const geom::Vec2 & lo, const geom::Vec2 & hi, const std::string & style)
  {
    body_ << "<rect x=\"" << fmt(sx(lo.x)) << "\" y=\"" << fmt(sy(hi.y)) << "\" width=\""
          << fmt(scale(hi.x - lo.x)) << "\" height=\"" << fmt(scale(hi.y - lo.y)) << "\" "
          << style << "/>\n";
  }

  void rect_screen(double x, double y, double w, double h, const std::string & style)
  {
    body_ << "<rect x=\"" << fmt(x) << "\" y=\"" << fmt(y) << "\" width=\"" << fmt(w)
          << "\" height=\"" << fmt(h) << "\" " << style << "/>\n";
  }

  void circle_world(const geom::Vec2 & c, double radius_m, const std::string & style)
  {
    body_ << "<circle cx=\"" << fmt(sx(c.x)) << "\" cy=\"" << fmt(sy(c.y)) << "\" r=\""
          << fmt(scale(radius_m)) << "\" " << style << "/>\n";
  }

  void line_world(const geom::Vec2 & a, const geom::Vec2 & b, const std::string & style)
  {
    body_ << "<line x1=\"" << fmt(sx(a.x)) << "\" y1=\"" << fmt(sy(a.y)) << "\" x2=\""
          << fmt(sx(b.x)) << "\" y2=\"" << fmt(sy(b.y)) << "\" " << style << "/>\n";
  }

  void polyline_world(std::span<const geom::Vec2> pts, const std::string & style)
  {
    body_ << "<polyline points=\"";
    for (const auto & p : pts) { body_ << fmt(sx(p.x)) << "," << fmt(sy(p.y)) << " "; }
    body_ << "\" " << style << "/>\n";
  }

  void polygon_world(std::span<const geom::Vec2> pts, const std::string & style)
  {
    body_ << "<polygon points=\"";
    for (const auto & p : pts) { body_ << fmt(sx(p.x)) << "," << fmt(sy(p.y)) << " "; }
    body_ << "\" " << style << "/>\n";
  }

  void text_screen(double x, double y, const std::string & content, int size = 12,
                   const std::string & fill = "#202020")
  {
    body_ << "<text x=\"" << fmt(x) << "\" y=\"" << fmt(y) << "\" font-size=\"" << size
          << "\" font-family=\"sans-serif\" fill=\"" << fill << "\">" << escape(content)
          << "</text>\n";
  }

  std::string str() const
  {
    std::ostringstream out;
    out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(width_) << "\" height=\""
        << fmt(height_) << "\" viewBox=\"0 0 " << fmt(width_) << " " << fmt(height_) << "\">\n";
    out << "<rect x=\"0\" y=\"0\" width=\"" << fmt(width_) << "\" height=\"" << fmt(height_)
        << "\" fill=\"#ffffff\"/>\n";
    out << body_.str();
    out << "</svg>\n";
    return out.str();
  }

private:
  geom::Vec2 min_, max_;
  double ppm_, margin_, width_, height_;
  std::ostringstream body_;
};

inline constexpr double kHeatmapDbMin = -120.0;
inline constexpr double kHeatmapDbMax = -20.0;

inline void draw_db_legend(Document & doc, double x, double y, double h)
{
  const int steps = 40;
  const double w = 14.0;
  for (int i = 0; i < steps; ++i) {
    const double t = (i + 0.5) / steps;
    doc.rect_screen(x, y + h * (1.0 - static_cast<double>(i + 1) / steps), w, h / steps + 0.5,
                    "fill=\"" + ramp(t).hex() + "\"");
  }
  for (int db = -120; db <= -20; db += 20) {
    const double t = (db - kHeatmapDbMin) / (kHeatmapDbMax - kHeatmapDbMin);
    doc.text_screen(x + w + 4.0, y + h * (1.0 - t) + 4.0, std::to_string(db) + " dB", 10);
  }
}

/// Radio-map heatmap on the fixed [-120, -20] dB scale, with legend.
inline std::string render_heatmap(const radio::RadioMapGrid & map)
{
  const geom::Vec2 lo = map.origin;
  const geom::Vec2 hi{map.origin.x + map.width * map.resolution,
                      map.origin.y + map.height * map.resolution};
  Document doc(lo, {hi.x + 1.2, hi.y}, 60.0, 30.0);
  for (int iy = 0; iy < map.height; ++iy) {
    for (int ix = 0; ix < map.width; ++ix) {
      const double t =
        (map.gain_db_at(ix, iy) - kHeatmapDbMin) / (kHeatmapDbMax - kHeatmapDbMin);
      const geom::Vec2 c0{map.origin.x + ix * map.resolution,
                          map.origin.y + iy * map.resolution};
      doc.rect_world(c0, {c0.x + map.resolution, c0.y + map.resolution},
                     "fill=\"" + ramp(t).hex() + "\"");
    }
  }
  doc.circle_world(map.sensor, 0.1, "fill=\"#ff2020\" stroke=\"#ffffff\" stroke-width=\"1\"");
  draw_db_legend(doc, doc.sx(hi.x + 0.2), doc.sy(hi.y), doc.scale(hi.y - lo.y));
  return doc.str();
}

/// Trajectory overview: optional radio underlay, walls, obstacle start
/// and end poses, reference path, executed path, sensors, goal.
inline std::string render_trajectory(
  const sim::Scenario & scenario, const sim::EpisodeResult & episode,
  const radio::RadioMapGrid * underlay = nullptr)
{
  Document doc(scenario.workspace_min, scenario.workspace_max, 60.0, 30.0);
  if (underlay != nullptr) {
    for (int iy = 0; iy < underlay->height; ++iy) {
      for (int ix = 0; ix < underlay->width; ++ix) {
        const double t =
          (underlay->gain_db_at(ix, iy) - kHeatmapDbMin) / (kHeatmapDbMax - kHeatmapDbMin);
        const geom::Vec2 c0{underlay->origin.x + ix * underlay->resolution,
                            underlay->origin.y + iy * underlay->resolution};
        doc.rect_world(c0, {c0.x + underlay->resolution, c0.y + underlay->resolution},
                       "fill=\"" + ramp(t).hex() + "\" opacity=\"0.35\"");
      }
    }
  }
  for (const auto & w : scenario.walls) {
    doc.line_world(w.a, w.b, "stroke=\"#404040\" stroke-width=\"4\" stroke-linecap=\"round\"");
  }
  const double t_end = episode.trajectory.empty() ? 0.0 : episode.trajectory.back().first;
  for (const auto & obs : scenario.obstacles) {
    for (const double t : {0.0, t_end}) {
      const geom::Pose p = obs.pose_at(t);
      const std::string style = t == 0.0
        ? "fill=\"#202020\" opacity=\"0.85\""
        : "fill=\"none\" stroke=\"#202020\" stroke-width=\"1.5\" stroke-dasharray=\"4 3\"";
      if (obs.is_circle()) {
        doc.circle_world(p.position, std::get<double>(obs.shape), style);
      } else {
        const auto world =
          geom::transform_polytope(std::get<geom::ConvexPolytope>(obs.shape), p);
        doc.polygon_world(world.vertices(), style);
      }
    }
  }
  {
    std::vector<geom::Vec2> pts;
    pts.reserve(scenario.global_path.size());
    for (const auto & p : scenario.global_path) { pts.push_back(p.position); }
    doc.polyline_world(pts, "fill=\"none\" stroke=\"#101010\" stroke-width=\"2\" "
                            "stroke-dasharray=\"7 4\"");
  }
  {
    std::vector<geom::Vec2> pts;
    pts.reserve(episode.trajectory.size());
    for (const auto & [t, p] : episode.trajectory) { pts.push_back(p.position); }
    doc.polyline_world(pts, "fill=\"none\" stroke=\"#d02020\" stroke-width=\"2.5\"");
    const std::size_t stride = std::max<std::size_t>(1, episode.trajectory.size() / 8);
    for (std::size_t i = 0; i < episode.trajectory.size(); i += stride) {
      const auto body = geom::transform_polytope(scenario.robot_body,
                                                 episode.trajectory[i].second);
      doc.polygon_world(body.vertices(),
                        "fill=\"#2050d0\" opacity=\"0.35\" stroke=\"#2050d0\"");
    }
  }
  for (const auto & s : scenario.sensors) {
    doc.circle_world(s.position, 0.12, "fill=\"#ff2020\" stroke=\"#801010\" stroke-width=\"1\"");
  }
  if (!scenario.global_path.empty()) {
    doc.circle_world(scenario.global_path.back().position, scenario.goal_tolerance,
                     "fill=\"none\" stroke=\"#208020\" stroke-width=\"2\"");
  }
  doc.text_screen(8.0, 16.0,
                  scenario.name + "  |  " + (episode.success ? "success" : "failure") +
                    "  |  " + fmt(episode.total_megabytes * 1e3) + " kB in " +
                    fmt(episode.navigation_time) + " s",
                  12);
  return doc.str();
}

/// Linear and angular speed profiles over episode time.
inline std::string render_speed_profile(const sim::EpisodeResult & episode, double tau)
{
  const double t_total = std::max(1e-9, episode.controls.size() * tau);
  double v_max = 0.1, v_min = -0.1;
  for (const auto & u : episode.controls) {
    v_max = std::max({v_max, u.v, u.w});
    v_min = std::min({v_min, u.v, u.w});
  }
  Document doc({0.0, v_min - 0.2}, {t_total, v_max + 0.2}, 700.0 / std::max(1.0, t_total), 40.0);
  doc.line_world({0.0, 0.0}, {t_total, 0.0}, "stroke=\"#a0a0a0\" stroke-width=\"1\"");
  std::vector<geom::Vec2> v_pts, w_pts;
  v_pts.reserve(episode.controls.size());
  w_pts.reserve(episode.controls.size());
  for (std::size_t i = 0; i < episode.controls.size(); ++i) {
    v_pts.push_back({i * tau, episode.controls[i].v});
    w_pts.push_back({i * tau, episode.controls[i].w});
  }
  if (!v_pts.empty()) {
    doc.polyline_world(v_pts, "fill=\"none\" stroke=\"#d02020\" stroke-width=\"2\"");
    doc.polyline_world(w_pts, "fill=\"none\" stroke=\"#2050d0\" stroke-width=\"2\"");
  }
  doc.text_screen(8.0, 16.0, "linear velocity (red, m/s), angular velocity (blue, rad/s) vs t (s)",
                  12);
  for (int i = 0; i <= 5; ++i) {
    const double t = t_total * i / 5.0;
    doc.text_screen(doc.sx(t) - 8.0, doc.height() - 8.0, fmt(t), 10);
  }
  return doc.str();
}

inline void write_file(const std::string & path, const std::string & content)
{
  std::ofstream out(path, std::ios::binary);
  if (!out) { throw std::runtime_error("cannot write file: " + path); }
  out << content;
}

}  // namespace mpcom::svg
