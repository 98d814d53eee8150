#include "dmsd/labelkit.hpp"

#include <cmath>
#include <cstdio>

namespace dmsd {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kTwoPi = 2.0 * kPi;
constexpr double kTimeEps = 1e-9;
}  // namespace

std::string to_string(MotionLabel l) {
  switch (l) {
    case MotionLabel::up: return "up";
    case MotionLabel::down: return "down";
    case MotionLabel::left: return "left";
    case MotionLabel::right: return "right";
    case MotionLabel::middle: return "middle";
  }
  return "middle";
}

std::optional<MotionLabel> label_from_string(const std::string& s) {
  if (s == "up") return MotionLabel::up;
  if (s == "down") return MotionLabel::down;
  if (s == "left") return MotionLabel::left;
  if (s == "right") return MotionLabel::right;
  if (s == "middle") return MotionLabel::middle;
  return std::nullopt;
}

double compute_r(double image_width_px, const LabelRuleConfig& cfg) {
  if (!(image_width_px > 0.0)) throw std::invalid_argument("compute_r: image width must be positive");
  return cfg.r_fraction * image_width_px;
}

namespace {

// Position at time t by linear interpolation between the bracketing samples.
std::pair<double, double> interpolate(const std::vector<TrajectoryPoint>& traj, double t) {
  std::size_t lo = 0, hi = traj.size() - 1;
  while (hi - lo > 1) {
    std::size_t mid = (lo + hi) / 2;
    if (traj[mid].t <= t)
      lo = mid;
    else
      hi = mid;
  }
  const auto& a = traj[lo];
  const auto& b = traj[hi];
  if (t <= a.t) return {a.x, a.y};
  if (t >= b.t) return {b.x, b.y};
  double w = (t - a.t) / (b.t - a.t);
  return {a.x + w * (b.x - a.x), a.y + w * (b.y - a.y)};
}

}  // namespace

MotionVector displacement(const std::vector<TrajectoryPoint>& traj, double t0, double horizon) {
  if (traj.size() < 2) throw std::invalid_argument("displacement: trajectory needs at least 2 points");
  double t1 = t0 + horizon;
  if (t0 < traj.front().t - kTimeEps || t1 > traj.back().t + kTimeEps)
    throw std::out_of_range("displacement: window [" + std::to_string(t0) + ", " + std::to_string(t1) +
                            "] outside trajectory span");
  auto [x0, y0] = interpolate(traj, t0);
  auto [x1, y1] = interpolate(traj, t1);
  double dx = x1 - x0, dy = y1 - y0;
  MotionVector v;
  v.rho = std::sqrt(dx * dx + dy * dy);
  if (v.rho == 0.0) {
    v.theta = 0.0;
  } else {
    v.theta = std::atan2(dy, dx);
    if (v.theta < 0.0) v.theta += kTwoPi;
    if (v.theta >= kTwoPi) v.theta = 0.0;
  }
  return v;
}

MotionLabel assign_label(const MotionVector& v, double r, const LabelRuleConfig& cfg) {
  if (!(r > 0.0)) throw std::invalid_argument("assign_label: r must be positive");
  if (v.rho <= r) return MotionLabel::middle;

  double theta = v.theta;
  if (cfg.axis_convention == AxisConvention::screen_y_down) {
    theta = kTwoPi - theta;
  }
  // Canonicalize to [0, 2pi).
  theta = std::fmod(theta, kTwoPi);
  if (theta < 0.0) theta += kTwoPi;

  // Sector edges sit at odd multiples of pi/4. Work in units of pi/4 so the
  // edge test is a plain comparison against integers.
  double q = theta / (kPi / 4.0);
  double nearest = std::round(q);
  bool on_edge = std::abs(q - nearest) < 1e-12 && (static_cast<long long>(nearest) % 2 != 0);
  if (on_edge && cfg.boundary_policy == BoundaryPolicy::error)
    throw std::domain_error("assign_label: theta lies on a sector boundary");

  // With ccw-next, each sector is half-open [start, end): the edge angle
  // belongs to the sector that begins there going counterclockwise.
  if (on_edge) q = nearest;
  if (q >= 1.0 && q < 3.0) return MotionLabel::right;   // (pi/4, 3pi/4)
  if (q >= 3.0 && q < 5.0) return MotionLabel::up;      // (3pi/4, 5pi/4)
  if (q >= 5.0 && q < 7.0) return MotionLabel::left;    // (5pi/4, 7pi/4)
  return MotionLabel::down;                             // (7pi/4, 9pi/4) mod 2pi
}

int window_count(double duration, double horizon, double stride) {
  if (duration + kTimeEps < horizon) return 0;
  return static_cast<int>(std::floor((duration - horizon + kTimeEps) / stride)) + 1;
}

std::vector<WindowRecord> window_trajectory(const std::vector<TrajectoryPoint>& traj,
                                            const LabelRuleConfig& cfg, double stride,
                                            double image_width_px) {
  if (!(stride > 0.0)) throw std::invalid_argument("window_trajectory: stride must be positive");
  std::vector<WindowRecord> out;
  if (traj.size() < 2) return out;
  double r = compute_r(image_width_px, cfg);
  double duration = traj.back().t - traj.front().t;
  int n = window_count(duration, cfg.horizon_t, stride);
  out.reserve(static_cast<std::size_t>(std::max(0, n)));
  for (int i = 0; i < n; ++i) {
    WindowRecord rec;
    rec.t_start = traj.front().t + stride * i;
    rec.vector = displacement(traj, rec.t_start, cfg.horizon_t);
    rec.label = assign_label(rec.vector, r, cfg);
    out.push_back(rec);
  }
  return out;
}

std::string window_record_line(const WindowRecord& rec) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%.6f, %.9f, %.6f, %s", rec.t_start, rec.vector.theta, rec.vector.rho,
                to_string(rec.label).c_str());
  return std::string(buf);
}

}  // namespace dmsd
