#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dmsd/core.hpp"

namespace dmsd {

struct TrajectoryPoint {
  double t = 0.0;  // seconds, strictly increasing within a trajectory
  double x = 0.0;  // pixels
  double y = 0.0;  // pixels
};

// Displacement over the prediction horizon: counterclockwise angle from the
// image width axis, canonicalized to [0, 2pi), plus pixel magnitude.
struct MotionVector {
  double theta = 0.0;
  double rho = 0.0;
};

enum class MotionLabel { up = 0, down = 1, left = 2, right = 3, middle = 4 };
inline constexpr int kNumClasses = 5;

std::string to_string(MotionLabel l);
std::optional<MotionLabel> label_from_string(const std::string& s);

enum class BoundaryPolicy { ccw_next, error };
enum class AxisConvention { paper_verbatim, screen_y_down };

struct LabelRuleConfig {
  double horizon_t = 3.0;    // seconds
  double r_fraction = 0.1;   // of image pixel length (width)
  BoundaryPolicy boundary_policy = BoundaryPolicy::ccw_next;
  AxisConvention axis_convention = AxisConvention::paper_verbatim;
};

// r = r_fraction * image width.
double compute_r(double image_width_px, const LabelRuleConfig& cfg);

// Displacement of the interpolated position between t0 and t0 + horizon.
// theta is 0 by convention when rho == 0.
MotionVector displacement(const std::vector<TrajectoryPoint>& traj, double t0, double horizon);

// Sector lookup over the motion set: middle when rho <= r, otherwise the
// quarter-plane sector of theta with boundaries resolved per policy.
MotionLabel assign_label(const MotionVector& v, double r, const LabelRuleConfig& cfg);

struct WindowRecord {
  double t_start = 0.0;
  MotionVector vector;
  MotionLabel label = MotionLabel::middle;
};

// One record per window start t0 = first + k*stride while t0 + horizon fits.
// r is derived from image_width_px and cfg.
std::vector<WindowRecord> window_trajectory(const std::vector<TrajectoryPoint>& traj,
                                            const LabelRuleConfig& cfg, double stride,
                                            double image_width_px);

// Closed-form window count for a trajectory of the given duration.
int window_count(double duration, double horizon, double stride);

// Line record serialization: "t_start, theta, rho, label".
std::string window_record_line(const WindowRecord& rec);

}  // namespace dmsd
