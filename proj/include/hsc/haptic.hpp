#pragma once

/**
 * @file
 * @brief Haptic shared control: autonomy PID torque, adaptive assistance
 * level, torque blending, steering-wheel dynamics and the signal conditioning
 * applied to the workload and attention estimates.
 */

#include <algorithm>
#include <cmath>
#include <deque>
#include <vector>

#include "hsc/error.hpp"

namespace hsc {

// --- assistance level --------------------------------------------------------

/// Workload in [0, 100], eyes-on-road fraction and normalised human torque in
/// [0, 1]. Out-of-range values are clamped, never rejected.
struct AssistanceInputs {
  double workload = 50.0;
  double eyes_on_road = 1.0;
  double normalized_torque = 0.0;

  AssistanceInputs() = default;
  AssistanceInputs(double w, double e, double tau_hat)
      : workload(clamp_input(w, 0.0, 100.0)),
        eyes_on_road(clamp_input(e, 0.0, 1.0)),
        normalized_torque(clamp_input(tau_hat, 0.0, 1.0)) {}

 private:
  static double clamp_input(double v, double lo, double hi) {
    require_finite(v, "assistance input");
    return std::clamp(v, lo, hi);
  }
};

namespace detail {
inline double logistic(double q) {
  // e^q / (e^q + 1) without overflow for large |q|
  return q >= 0.0 ? 1.0 / (1.0 + std::exp(-q)) : std::exp(q) / (std::exp(q) + 1.0);
}
}  // namespace detail

/// Base assistance level beta-bar(w, tau_hat).
inline double base_assistance(double workload, double normalized_torque) {
  const double w = std::clamp(workload, 0.0, 100.0);
  const double t = std::clamp(normalized_torque, 0.0, 1.0);
  const double dev = std::abs(w - 50.0);
  const double r = w / 50.0 - 1.0;
  const double floor = 0.9 * detail::logistic(0.3 * (dev - 25.0)) + 0.1;
  const double q = (72.0 * t - 36.6 - 15.0 * r * r) / (5.9 - 2.5 * r * r);
  return 1.0 - (1.0 - floor) * detail::logistic(q);
}

/// Assistance increment delta-beta(w, e) driven by eyes-off-road time.
inline double assistance_increment(double workload, double eyes_on_road) {
  const double w = std::clamp(workload, 0.0, 100.0);
  const double e = std::clamp(eyes_on_road, 0.0, 1.0);
  return 0.1 * std::pow(0.1 * std::abs(w - 50.0) + 5.0, 1.0 - e) - 0.1;
}

enum class Scheme { adaptive, non_adaptive };

/// beta = beta-bar + delta-beta, optionally limited to [0, 1]. The
/// non-adaptive scheme always returns exactly 1.
inline double assistance_level(const AssistanceInputs& in, bool clamp = false,
                               Scheme scheme = Scheme::adaptive) {
  if (scheme == Scheme::non_adaptive) return 1.0;
  const double beta = base_assistance(in.workload, in.normalized_torque) +
                      assistance_increment(in.workload, in.eyes_on_road);
  return clamp ? std::clamp(beta, 0.0, 1.0) : beta;
}

/// Combined steering torque tau_c = tau_h + beta * tau_a.
inline double blend(double human_torque, double autonomy_torque, double beta) {
  require_finite(human_torque, "human torque");
  require_finite(autonomy_torque, "autonomy torque");
  require_finite(beta, "assistance level");
  return human_torque + beta * autonomy_torque;
}

/// |tau_h| / tau_max limited to [0, 1].
inline double normalize_torque(double human_torque, double max_torque) {
  if (!(max_torque > 0.0)) throw Error("invalid_argument", "maximum human torque must be positive");
  require_finite(human_torque, "human torque");
  return std::min(1.0, std::abs(human_torque) / max_torque);
}

// --- autonomy torque ---------------------------------------------------------

struct PidGains {
  double kp = 8.0;              // N m / rad
  double ki = 40.0;             // N m / (rad s)
  double kd = 0.8;              // N m s / rad
  double output_limit = 10.0;   // N m
  double integral_limit = 0.05; // rad s

  void validate() const {
    for (double v : {kp, ki, kd}) require(std::isfinite(v) && v >= 0.0, "PID gains must be non-negative");
    require(output_limit > 0.0, "PID output limit must be positive");
    require(integral_limit >= 0.0, "PID integral limit must be non-negative");
  }
};

struct PidState {
  PidGains gains;
  double integral = 0.0;        // rad s
  double previous_error = 0.0;  // rad
  bool primed = false;          // previous_error holds a real sample
};

/// One PID update on the steering-angle error. The integral uses the
/// trapezoidal rule and is clamped to +-integral_limit; the derivative acts on
/// the error and is zero on the first call; the output saturates at
/// +-output_limit.
inline double autonomy_torque(PidState& pid, double reference_angle, double measured_angle, double dt) {
  if (!(dt > 0.0)) throw Error("invalid_argument", "PID time step must be positive");
  require_finite(reference_angle, "reference angle");
  require_finite(measured_angle, "measured angle");
  const PidGains& k = pid.gains;
  const double e = reference_angle - measured_angle;
  const double prev = pid.primed ? pid.previous_error : e;
  pid.integral = std::clamp(pid.integral + 0.5 * dt * (e + prev), -k.integral_limit, k.integral_limit);
  const double derivative = pid.primed ? (e - prev) / dt : 0.0;
  pid.previous_error = e;
  pid.primed = true;
  const double u = k.kp * e + k.ki * pid.integral + k.kd * derivative;
  return std::clamp(u, -k.output_limit, k.output_limit);
}

// --- steering wheel ----------------------------------------------------------

struct SteeringWheelState {
  double angle = 0.0;           // rad, road-wheel equivalent
  double rate = 0.0;            // rad/s
  double inertia = 0.08;        // kg m^2
  double damping = 1.2;         // N m s / rad
  double stiffness = 4.0;       // N m / rad
  double steering_bound = 0.5;  // rad

  void validate() const {
    require(inertia > 0.0, "wheel inertia must be positive");
    require(damping >= 0.0 && stiffness >= 0.0, "wheel damping and stiffness must be non-negative");
    require(steering_bound > 0.0, "steering bound must be positive");
  }
};

/// Semi-implicit Euler step of I a + c w + k x = tau; the angle stops at the
/// steering bound with the rate zeroed.
inline SteeringWheelState wheel_step(SteeringWheelState w, double torque, double dt) {
  if (!(dt > 0.0 && dt <= 0.02)) throw Error("invalid_argument", "wheel step must lie in (0, 0.02] s");
  require_finite(torque, "wheel torque");
  const double acc = (torque - w.damping * w.rate - w.stiffness * w.angle) / w.inertia;
  w.rate += dt * acc;
  w.angle += dt * w.rate;
  if (std::abs(w.angle) >= w.steering_bound) {
    w.angle = std::copysign(w.steering_bound, w.angle);
    w.rate = 0.0;
  }
  return w;
}

// --- signal conditioning ------------------------------------------------------

struct TimedSample {
  double t = 0.0;
  double value = 0.0;
  bool operator==(const TimedSample&) const = default;
};

/// Trailing-window mean resampled at `out_rate`. Output instants are the
/// multiples of 1/out_rate from the first sample time to the last; each is
/// the mean of the inputs with t in (t_k - window, t_k]. An empty window
/// repeats the previous output, starting from the first sample's value.
inline std::vector<TimedSample> moving_average_downsample(const std::vector<TimedSample>& signal,
                                                          double window, double out_rate) {
  require(window > 0.0, "moving-average window must be positive");
  require(out_rate > 0.0, "output rate must be positive");
  std::vector<TimedSample> out;
  if (signal.empty()) return out;
  for (std::size_t i = 1; i < signal.size(); ++i)
    require(signal[i].t >= signal[i - 1].t, "signal timestamps must be non-decreasing");

  const double period = 1.0 / out_rate;
  const auto first_k = static_cast<long long>(std::ceil(signal.front().t / period - 1e-9));
  double last = signal.front().value;
  std::size_t lo = 0, hi = 0;  // window is [lo, hi)
  for (long long k = first_k;; ++k) {
    const double tk = static_cast<double>(k) * period;
    if (tk > signal.back().t + 1e-9) break;
    while (hi < signal.size() && signal[hi].t <= tk + 1e-9) ++hi;
    while (lo < hi && signal[lo].t <= tk - window + 1e-9) ++lo;
    if (hi > lo) {
      double sum = 0.0, mn = INFINITY, mx = -INFINITY;
      for (std::size_t i = lo; i < hi; ++i) {
        sum += signal[i].value;
        mn = std::min(mn, signal[i].value);
        mx = std::max(mx, signal[i].value);
      }
      last = std::clamp(sum / static_cast<double>(hi - lo), mn, mx);
    }
    out.push_back({tk, last});
  }
  return out;
}

/// Streaming counterpart of moving_average_downsample: push samples as they
/// arrive and read the trailing mean at any later instant.
class TrailingMean {
 public:
  explicit TrailingMean(double window) : window_(window) {
    require(window > 0.0, "moving-average window must be positive");
  }

  void push(double t, double value) {
    require(samples_.empty() || t >= samples_.back().t, "samples must arrive in time order");
    if (!have_value_) {
      last_ = value;
      have_value_ = true;
    }
    samples_.push_back({t, value});
  }

  /// Mean over (t - window, t]; holds the previous result when empty.
  double value(double t) {
    while (!samples_.empty() && samples_.front().t <= t - window_ + 1e-9) samples_.pop_front();
    double sum = 0.0;
    std::size_t n = 0;
    for (const TimedSample& s : samples_) {
      if (s.t > t + 1e-9) break;
      sum += s.value;
      ++n;
    }
    if (n > 0) last_ = sum / static_cast<double>(n);
    return last_;
  }

  bool empty() const { return !have_value_; }

 private:
  double window_;
  std::deque<TimedSample> samples_;
  double last_ = 0.0;
  bool have_value_ = false;
};

}  // namespace hsc
