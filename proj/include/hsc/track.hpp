#pragma once

/**
 * @file
 * @brief Polyline centerlines, signed cross-track error and the bundled
 *        parametric tracks.
 */

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "hsc/error.hpp"

namespace hsc {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Vec2&) const = default;
};

/// Nearest point on a track for a query position.
struct Projection {
  double signed_distance = 0.0;  // positive left of travel direction
  double arc_length = 0.0;       // arc length of the foot point
  Vec2 foot;
  std::size_t segment = 0;
  double heading = 0.0;          // tangent direction of the foot segment
  /// Tangent direction blended linearly between vertex bisectors, continuous
  /// along the track, and its derivative with respect to arc length.
  double smooth_heading = 0.0;
  double smooth_heading_rate = 0.0;
};

class Track {
 public:
  Track() = default;

  explicit Track(std::vector<Vec2> waypoints, bool closed = false)
      : waypoints_(std::move(waypoints)), closed_(closed) {
    require(waypoints_.size() >= 2, "a track needs at least two waypoints");
    arc_.assign(waypoints_.size() + 1, 0.0);
    for (std::size_t i = 0; i < segment_count(); ++i) {
      const Vec2 a = waypoints_[i], b = waypoints_[(i + 1) % waypoints_.size()];
      require_finite(a.x, "waypoint x");
      require_finite(a.y, "waypoint y");
      const double len = std::hypot(b.x - a.x, b.y - a.y);
      require(len > 0.0, "consecutive waypoints must be distinct");
      arc_[i + 1] = arc_[i] + len;
    }
    if (!closed_) arc_.pop_back();
  }

  const std::vector<Vec2>& waypoints() const { return waypoints_; }
  /// Cumulative arc length at each waypoint; closed tracks carry one extra
  /// entry for the return to the first waypoint.
  const std::vector<double>& arc_length_table() const { return arc_; }
  bool closed() const { return closed_; }
  double length() const { return arc_.back(); }
  std::size_t segment_count() const { return closed_ ? waypoints_.size() : waypoints_.size() - 1; }

  Vec2 segment_start(std::size_t i) const { return waypoints_[i]; }
  Vec2 segment_end(std::size_t i) const { return waypoints_[(i + 1) % waypoints_.size()]; }
  double segment_heading(std::size_t i) const {
    const Vec2 a = segment_start(i), b = segment_end(i);
    return std::atan2(b.y - a.y, b.x - a.x);
  }

  /// Exhaustive nearest-point search; ties go to the lower arc length.
  Projection project(Vec2 p) const {
    Projection best;
    double best_d2 = INFINITY;
    for (std::size_t i = 0; i < segment_count(); ++i) consider(p, i, best, best_d2);
    return best;
  }

  /// Nearest-point search restricted to segments overlapping the arc-length
  /// window [hint - behind, hint + ahead] (wrapped on closed tracks).
  Projection project_near(Vec2 p, double hint, double behind, double ahead) const {
    Projection best;
    double best_d2 = INFINITY;
    for (std::size_t i : segments_in_window(hint - behind, hint + ahead)) consider(p, i, best, best_d2);
    if (!std::isfinite(best_d2)) return project(p);
    return best;
  }

  /// Nearest-point search over an explicit segment list, taken in order.
  Projection project_among(Vec2 p, const std::vector<std::size_t>& segments) const {
    Projection best;
    double best_d2 = INFINITY;
    for (std::size_t i : segments) consider(p, i, best, best_d2);
    if (!std::isfinite(best_d2)) return project(p);
    return best;
  }

  /// Segment indices whose arc span overlaps [lo, hi], in arc order.
  std::vector<std::size_t> segments_in_window(double lo, double hi) const {
    std::vector<std::size_t> out;
    const std::size_t n = segment_count();
    if (hi - lo >= length()) {
      for (std::size_t i = 0; i < n; ++i) out.push_back(i);
      return out;
    }
    if (closed_) {
      const double L = length();
      double start = std::fmod(lo, L);
      if (start < 0.0) start += L;
      std::size_t i = segment_at(start);
      double covered = -(start - arc_[i]);
      do {
        out.push_back(i);
        covered += arc_[i + 1] - arc_[i];
        i = (i + 1) % n;
      } while (covered < hi - lo && out.size() < n);
    } else {
      for (std::size_t i = segment_at(std::max(lo, 0.0)); i < n && arc_[i] <= hi; ++i) out.push_back(i);
    }
    return out;
  }

  /// Point on the centerline at arc length s (clamped on open tracks).
  Vec2 point_at(double s) const {
    const std::size_t i = segment_at(normalize(s));
    const double local = std::clamp(normalize(s) - arc_[i], 0.0, arc_[i + 1] - arc_[i]);
    const Vec2 a = segment_start(i), b = segment_end(i);
    const double t = local / (arc_[i + 1] - arc_[i]);
    return {a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)};
  }
  double heading_at(double s) const { return segment_heading(segment_at(normalize(s))); }

  /// Centerline shifted laterally by `offset` metres (positive = left).
  Track offset(double offset) const {
    std::vector<Vec2> shifted(waypoints_.size());
    const std::size_t n = waypoints_.size();
    for (std::size_t k = 0; k < n; ++k) {
      double nx = 0.0, ny = 0.0;
      const auto add_normal = [&](std::size_t seg) {
        const Vec2 a = segment_start(seg), b = segment_end(seg);
        const double len = std::hypot(b.x - a.x, b.y - a.y);
        nx += -(b.y - a.y) / len;
        ny += (b.x - a.x) / len;
      };
      if (closed_ || k > 0) add_normal((k + n - 1) % n);
      if (closed_ || k + 1 < n) add_normal(k);
      const double len = std::hypot(nx, ny);
      shifted[k] = {waypoints_[k].x + offset * nx / len, waypoints_[k].y + offset * ny / len};
    }
    return Track(std::move(shifted), closed_);
  }

 private:
  double normalize(double s) const {
    if (!closed_) return std::clamp(s, 0.0, length());
    double r = std::fmod(s, length());
    return r < 0.0 ? r + length() : r;
  }

  std::size_t segment_at(double s) const {
    const auto it = std::upper_bound(arc_.begin(), arc_.end(), s);
    const std::size_t idx = it == arc_.begin() ? 0 : static_cast<std::size_t>(it - arc_.begin()) - 1;
    return std::min(idx, segment_count() - 1);
  }

  void consider(Vec2 p, std::size_t i, Projection& best, double& best_d2) const {
    const Vec2 a = segment_start(i), b = segment_end(i);
    const double ex = b.x - a.x, ey = b.y - a.y;
    const double len2 = ex * ex + ey * ey;
    const double t = std::clamp(((p.x - a.x) * ex + (p.y - a.y) * ey) / len2, 0.0, 1.0);
    const Vec2 foot{a.x + t * ex, a.y + t * ey};
    const double dx = p.x - foot.x, dy = p.y - foot.y;
    const double d2 = dx * dx + dy * dy;
    if (d2 < best_d2) {
      best_d2 = d2;
      const double cross = ex * dy - ey * dx;
      best.signed_distance = cross >= 0.0 ? std::sqrt(d2) : -std::sqrt(d2);
      best.arc_length = arc_[i] + t * std::sqrt(len2);
      best.foot = foot;
      best.segment = i;
      best.heading = std::atan2(ey, ex);
      const double turn_in = has_prev(i) ? wrap(segment_heading(prev(i)) - best.heading) : 0.0;
      const double turn_out = has_next(i) ? wrap(segment_heading(next(i)) - best.heading) : 0.0;
      best.smooth_heading = best.heading + 0.5 * ((1.0 - t) * turn_in + t * turn_out);
      const bool interior = t > 0.0 && t < 1.0;
      best.smooth_heading_rate = interior ? 0.5 * (turn_out - turn_in) / std::sqrt(len2) : 0.0;
    }
  }

  static double wrap(double a) { return std::remainder(a, 2.0 * std::numbers::pi); }
  bool has_prev(std::size_t i) const { return closed_ || i > 0; }
  bool has_next(std::size_t i) const { return closed_ || i + 1 < segment_count(); }
  std::size_t prev(std::size_t i) const { return (i + segment_count() - 1) % segment_count(); }
  std::size_t next(std::size_t i) const { return (i + 1) % segment_count(); }

  std::vector<Vec2> waypoints_;
  std::vector<double> arc_;
  bool closed_ = false;
};

/// Signed perpendicular distance to the nearest track point, positive left.
inline double cross_track_error(const Track& track, double x, double y) {
  require_finite(x, "position x");
  require_finite(y, "position y");
  return track.project({x, y}).signed_distance;
}

inline double wrap_angle(double a) {
  a = std::remainder(a, 2.0 * std::numbers::pi);
  return a;
}

// --- file format: CSV with header "x,y", metres ------------------------------

inline Track read_track_csv(std::istream& in, bool closed = false) {
  std::string line;
  if (!std::getline(in, line)) throw Error("io", "track file is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "x,y") throw Error("io", "track file must start with the header 'x,y'");
  std::vector<Vec2> pts;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw Error("io", "track row " + std::to_string(row) + " lacks a comma");
    try {
      std::size_t used = 0;
      const double x = std::stod(line.substr(0, comma), &used);
      const double y = std::stod(line.substr(comma + 1));
      pts.push_back({x, y});
    } catch (const std::logic_error&) {
      throw Error("io", "track row " + std::to_string(row) + " is not numeric");
    }
  }
  return Track(std::move(pts), closed);
}

inline Track read_track_csv(const std::string& path, bool closed = false) {
  std::ifstream in(path);
  if (!in) throw Error("io", "cannot open track file " + path);
  return read_track_csv(in, closed);
}

inline void write_track_csv(std::ostream& out, const Track& track) {
  out << "x,y\n";
  char buf[64];
  for (const Vec2& p : track.waypoints()) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", p.x, p.y);
    out << buf;
  }
}

// --- bundled parametric tracks ----------------------------------------------

namespace tracks {

/// Incrementally builds a centerline from straight and arc pieces, starting
/// at the origin heading along +x.
class Builder {
 public:
  explicit Builder(double spacing = 1.0) : spacing_(spacing) { pts_.push_back({0.0, 0.0}); }

  Builder& straight(double length) {
    const int n = std::max(1, static_cast<int>(std::ceil(length / spacing_)));
    const Vec2 a = pts_.back();
    for (int i = 1; i <= n; ++i) {
      const double s = length * i / n;
      pts_.push_back({a.x + s * std::cos(heading_), a.y + s * std::sin(heading_)});
    }
    return *this;
  }

  /// Arc with signed radius (positive = left turn) sweeping `angle` radians.
  Builder& arc(double radius, double angle) {
    const double arc_len = std::abs(radius * angle);
    const int n = std::max(1, static_cast<int>(std::ceil(arc_len / spacing_)));
    const Vec2 a = pts_.back();
    const double cx = a.x - radius * std::sin(heading_), cy = a.y + radius * std::cos(heading_);
    const double sign = radius > 0.0 ? 1.0 : -1.0;
    for (int i = 1; i <= n; ++i) {
      const double h = heading_ + sign * angle * i / n;
      pts_.push_back({cx + radius * std::sin(h), cy - radius * std::cos(h)});
    }
    heading_ += sign * angle;
    return *this;
  }

  Track build() const { return Track(pts_, false); }

 private:
  std::vector<Vec2> pts_;
  double heading_ = 0.0;
  double spacing_;
};

inline Track straight(double length = 2500.0) { return Builder(2.0).straight(length).build(); }

/// Closed counter-clockwise circle through the origin, initial heading +x.
inline Track circle(double radius = 60.0, double spacing = 0.5) {
  const int n = static_cast<int>(std::ceil(2.0 * std::numbers::pi * radius / spacing));
  std::vector<Vec2> pts(n);
  for (int i = 0; i < n; ++i) {
    const double a = 2.0 * std::numbers::pi * i / n;
    pts[i] = {radius * std::sin(a), radius * (1.0 - std::cos(a))};
  }
  return Track(std::move(pts), true);
}

/// Alternating left/right arcs joined by short straights.
inline Track s_curve() {
  Builder b;
  b.straight(60.0);
  for (int i = 0; i < 7; ++i) {
    b.arc(80.0, std::numbers::pi / 3.0).straight(40.0).arc(-80.0, std::numbers::pi / 3.0).straight(40.0);
  }
  return b.straight(120.0).build();
}

/// Long straights, gentle sweepers and a few tighter bends.
inline Track mixed() {
  Builder b;
  b.straight(80.0)
      .arc(100.0, std::numbers::pi / 4.0)
      .straight(120.0)
      .arc(-60.0, std::numbers::pi / 2.0)
      .straight(60.0)
      .arc(150.0, std::numbers::pi / 3.0)
      .straight(150.0)
      .arc(-90.0, std::numbers::pi / 3.0)
      .straight(80.0)
      .arc(70.0, std::numbers::pi / 2.0)
      .straight(100.0)
      .arc(-120.0, std::numbers::pi / 4.0)
      .straight(140.0)
      .arc(80.0, std::numbers::pi / 3.0)
      .straight(100.0)
      .arc(-100.0, std::numbers::pi / 3.0)
      .straight(200.0);
  return b.build();
}

inline const std::vector<std::string>& bundled_ids() {
  static const std::vector<std::string> ids{"straight", "circle", "s_curve", "mixed"};
  return ids;
}

inline std::optional<Track> bundled(const std::string& id) {
  if (id == "straight") return straight();
  if (id == "circle") return circle();
  if (id == "s_curve") return s_curve();
  if (id == "mixed") return mixed();
  return std::nullopt;
}

}  // namespace tracks

/// Resolves a bundled track id or, failing that, a CSV path.
inline Track load_track(const std::string& id_or_path) {
  if (auto t = tracks::bundled(id_or_path)) return *t;
  return read_track_csv(id_or_path);
}

}  // namespace hsc
