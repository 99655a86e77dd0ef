#pragma once

/**
 * @file
 * @brief Planar single-track vehicle at fixed forward speed.
 *
 * States are global pose (x, y, yaw), body lateral velocity, yaw rate and the
 * road-wheel steering angle. The control input is the steering rate. Tire
 * lateral forces are linear in slip angle; rear vertical loads follow from a
 * quasi-static lateral load transfer.
 */

#include <array>
#include <cmath>

#include "hsc/error.hpp"

namespace hsc {

struct VehicleParams {
  double mass = 3000.0;                        // kg
  double yaw_inertia = 4500.0;                 // kg m^2
  double dist_front = 1.6;                     // CG to front axle [m]
  double dist_rear = 1.8;                      // CG to rear axle [m]
  double cornering_stiffness_front = 60000.0;  // N/rad
  double cornering_stiffness_rear = 60000.0;   // N/rad
  double cg_height = 0.9;                      // m
  double track_width = 1.8;                    // m
  double forward_speed = 6.7056;               // m/s (15 mph)
  double gravity = 9.81;                       // m/s^2

  double wheelbase() const { return dist_front + dist_rear; }
  double rear_share() const { return dist_front / wheelbase(); }
  /// Static load carried by the rear axle (both wheels).
  double static_rear_load() const { return mass * gravity * rear_share(); }

  void validate() const {
    const double positives[] = {mass,      yaw_inertia, dist_front,    dist_rear,
                                cornering_stiffness_front, cornering_stiffness_rear,
                                cg_height, track_width, forward_speed, gravity};
    for (double v : positives) {
      require_finite(v, "vehicle parameter");
      require(v > 0.0, "vehicle parameters must be strictly positive");
    }
  }
};

struct VehicleState {
  double x = 0.0;                 // m
  double y = 0.0;                 // m
  double yaw = 0.0;               // rad
  double lateral_velocity = 0.0;  // m/s
  double yaw_rate = 0.0;          // rad/s
  double steering_angle = 0.0;    // rad

  static constexpr std::size_t kDim = 6;

  std::array<double, kDim> as_array() const {
    return {x, y, yaw, lateral_velocity, yaw_rate, steering_angle};
  }
  static VehicleState from_array(const std::array<double, kDim>& a) {
    return {a[0], a[1], a[2], a[3], a[4], a[5]};
  }
  bool finite() const {
    for (double v : as_array())
      if (!std::isfinite(v)) return false;
    return true;
  }
  bool operator==(const VehicleState&) const = default;
};

/// Time derivative of every VehicleState field, in the same order.
struct VehicleStateDerivative {
  double x = 0.0;
  double y = 0.0;
  double yaw = 0.0;
  double lateral_velocity = 0.0;
  double yaw_rate = 0.0;
  double steering_angle = 0.0;

  std::array<double, VehicleState::kDim> as_array() const {
    return {x, y, yaw, lateral_velocity, yaw_rate, steering_angle};
  }
};

struct TireLoads {
  double rear_left = 0.0;   // N
  double rear_right = 0.0;  // N
};

namespace detail {

struct AxleForces {
  double front = 0.0;  // lateral force at the front tire, tire frame [N]
  double rear = 0.0;
};

inline AxleForces axle_forces(const VehicleState& s, const VehicleParams& p) {
  const double u = p.forward_speed;
  const double slip_front = s.steering_angle - (s.lateral_velocity + p.dist_front * s.yaw_rate) / u;
  const double slip_rear = -(s.lateral_velocity - p.dist_rear * s.yaw_rate) / u;
  return {p.cornering_stiffness_front * slip_front, p.cornering_stiffness_rear * slip_rear};
}

/// Lateral acceleration a_y = v_y' + u r, which reduces to the net body-frame
/// lateral force over mass.
inline double lateral_acceleration(const VehicleState& s, const VehicleParams& p) {
  const AxleForces f = axle_forces(s, p);
  return (f.front * std::cos(s.steering_angle) + f.rear) / p.mass;
}

/// Gradient of lateral_acceleration with respect to (v_y, r, delta).
inline std::array<double, 3> lateral_acceleration_gradient(const VehicleState& s,
                                                          const VehicleParams& p) {
  const double u = p.forward_speed;
  const double c = std::cos(s.steering_angle);
  const AxleForces f = axle_forces(s, p);
  const double cf = p.cornering_stiffness_front, cr = p.cornering_stiffness_rear;
  return {(-cf / u * c - cr / u) / p.mass,
          (-cf * p.dist_front / u * c + cr * p.dist_rear / u) / p.mass,
          (cf * c - f.front * std::sin(s.steering_angle)) / p.mass};
}

}  // namespace detail

inline VehicleStateDerivative derivatives(const VehicleState& s, const VehicleParams& p,
                                          double steering_rate) {
  if (!s.finite()) throw Error("non_finite", "vehicle state contains a non-finite field");
  require_finite(steering_rate, "steering rate");

  const double u = p.forward_speed;
  const detail::AxleForces f = detail::axle_forces(s, p);
  const double front_body = f.front * std::cos(s.steering_angle);
  const double cy = std::cos(s.yaw), sy = std::sin(s.yaw);

  VehicleStateDerivative d;
  d.x = u * cy - s.lateral_velocity * sy;
  d.y = u * sy + s.lateral_velocity * cy;
  d.yaw = s.yaw_rate;
  d.lateral_velocity = (front_body + f.rear) / p.mass - u * s.yaw_rate;
  d.yaw_rate = (p.dist_front * front_body - p.dist_rear * f.rear) / p.yaw_inertia;
  d.steering_angle = steering_rate;
  return d;
}

/// Jacobian of `derivatives` with respect to the state, row = derivative index.
/// The steering-rate column is the unit vector on the steering row.
inline std::array<std::array<double, 6>, 6> state_jacobian(const VehicleState& s,
                                                           const VehicleParams& p) {
  const double u = p.forward_speed;
  const double cf = p.cornering_stiffness_front, cr = p.cornering_stiffness_rear;
  const double ca = std::cos(s.steering_angle), sa = std::sin(s.steering_angle);
  const double cy = std::cos(s.yaw), sy = std::sin(s.yaw);
  const detail::AxleForces f = detail::axle_forces(s, p);

  // partials of the front body-frame force and of the rear force
  const double dff_dv = -cf / u * ca, dff_dr = -cf * p.dist_front / u * ca;
  const double dff_dd = cf * ca - f.front * sa;
  const double dfr_dv = -cr / u, dfr_dr = cr * p.dist_rear / u;

  std::array<std::array<double, 6>, 6> j{};
  j[0][2] = -u * sy - s.lateral_velocity * cy;
  j[0][3] = -sy;
  j[1][2] = u * cy - s.lateral_velocity * sy;
  j[1][3] = cy;
  j[2][4] = 1.0;
  j[3][3] = (dff_dv + dfr_dv) / p.mass;
  j[3][4] = (dff_dr + dfr_dr) / p.mass - u;
  j[3][5] = dff_dd / p.mass;
  j[4][3] = (p.dist_front * dff_dv - p.dist_rear * dfr_dv) / p.yaw_inertia;
  j[4][4] = (p.dist_front * dff_dr - p.dist_rear * dfr_dr) / p.yaw_inertia;
  j[4][5] = p.dist_front * dff_dd / p.yaw_inertia;
  return j;
}

inline constexpr double kMaxPlantStep = 0.02;  // s

/// One classical fourth-order Runge-Kutta step with the steering rate held.
inline VehicleState step(const VehicleState& s, const VehicleParams& p, double steering_rate,
                         double dt) {
  if (!(dt > 0.0 && dt <= kMaxPlantStep))
    throw Error("invalid_argument", "integration step must lie in (0, 0.02] s");
  using Vec = std::array<double, VehicleState::kDim>;
  const auto axpy = [](const Vec& x, double a, const Vec& k) {
    Vec r;
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = x[i] + a * k[i];
    return r;
  };
  const Vec x0 = s.as_array();
  const Vec k1 = derivatives(s, p, steering_rate).as_array();
  const Vec k2 = derivatives(VehicleState::from_array(axpy(x0, 0.5 * dt, k1)), p, steering_rate).as_array();
  const Vec k3 = derivatives(VehicleState::from_array(axpy(x0, 0.5 * dt, k2)), p, steering_rate).as_array();
  const Vec k4 = derivatives(VehicleState::from_array(axpy(x0, dt, k3)), p, steering_rate).as_array();
  Vec x1;
  for (std::size_t i = 0; i < x1.size(); ++i)
    x1[i] = x0[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
  return VehicleState::from_array(x1);
}

/// Rear vertical loads with quasi-static lateral transfer. A positive lateral
/// acceleration (left turn) unloads the left wheel.
inline TireLoads tire_vertical_loads(const VehicleState& s, const VehicleParams& p) {
  if (!s.finite()) throw Error("non_finite", "vehicle state contains a non-finite field");
  const double half = 0.5 * p.static_rear_load();
  const double transfer =
      p.mass * detail::lateral_acceleration(s, p) * p.cg_height / p.track_width * p.rear_share();
  return {half - transfer, half + transfer};
}

/// d(transfer)/d(a_y): rear_left = half - gain * a_y, rear_right = half + gain * a_y.
inline double load_transfer_gain(const VehicleParams& p) {
  return p.mass * p.cg_height / p.track_width * p.rear_share();
}

}  // namespace hsc
