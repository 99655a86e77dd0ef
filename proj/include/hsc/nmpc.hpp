#pragma once

/**
 * @file
 * @brief Receding-horizon path tracking on the single-track model.
 *
 * The optimal control problem penalises squared cross-track error, squared
 * steering rate and a saturating soft constraint on the rear vertical loads:
 *
 *   J = int w1 e^2 + w2 gamma^2 + w3 (tanh((a - Fz_rl)/b) + tanh((a - Fz_rr)/b)) dt
 *
 * over [t0, t0 + horizon]. The tracking error e is the signed cross-track
 * distance plus a lead term, lookahead * sin(course error), which damps the
 * approach to the line; it vanishes whenever the vehicle moves along the
 * track, so steady tracking of curves is unaffected. It is transcribed by single shooting: the horizon
 * is cut into `intervals` pieces with a constant steering rate each, states
 * are propagated with the RK4 plant, and the integral is evaluated with the
 * trapezoidal rule on the interval nodes. The steering-angle limit is a
 * quadratic penalty; the box on the steering rates is handled directly by a
 * projected BFGS iteration (variables held at a bound with the gradient
 * pointing outward are frozen for the step) with an Armijo backtracking line
 * search along the projection arc. Gradients come from the discrete adjoint
 * of the RK4 rollout.
 */

#include <algorithm>
#include <chrono>
#include <cmath>
#include <future>
#include <optional>
#include <vector>

#include "hsc/error.hpp"
#include "hsc/track.hpp"
#include "hsc/vehicle.hpp"

namespace hsc {

struct OcpConfig {
  double horizon = 6.5;            // s
  int intervals = 40;
  double weight_tracking = 10.0;   // w1
  double weight_steer_rate = 50.0; // w2
  double weight_load = 100.0;      // w3
  double tracking_lookahead = 5.0; // lead distance added to e along the course error [m]
  double load_threshold = 0.25 * 0.5 * VehicleParams{}.static_rear_load();  // a [N]
  double load_scale = 0.1 * 0.25 * 0.5 * VehicleParams{}.static_rear_load(); // b [N]
  double steering_bound = 0.5;     // rad
  double steer_rate_bound = 0.5;   // rad/s
  double execute_duration = 3.0;   // s
  double sample_period = 0.1;      // output sampling of the command series [s]
  double bound_penalty = 1.0e4;    // weight of the squared steering-limit violation
  int max_iterations = 200;
  double gradient_tolerance = 1e-6;

  /// Load threshold and scale derived from the vehicle's static rear load.
  static OcpConfig defaults_for(const VehicleParams& p) {
    OcpConfig c;
    c.load_threshold = 0.25 * 0.5 * p.static_rear_load();
    c.load_scale = 0.1 * c.load_threshold;
    return c;
  }

  double node_step() const { return horizon / intervals; }

  void validate() const {
    require(horizon > execute_duration && execute_duration > 0.0,
            "planner horizon must exceed the executed duration, which must be positive");
    require(intervals >= 10, "planner needs at least 10 intervals");
    require(load_scale > 0.0, "load scale must be positive");
    require(tracking_lookahead >= 0.0, "tracking look-ahead must be non-negative");
    require(weight_tracking >= 0.0 && weight_steer_rate >= 0.0 && weight_load >= 0.0,
            "cost weights must be non-negative");
    require(steering_bound > 0.0 && steer_rate_bound > 0.0, "steering bounds must be positive");
    require(sample_period > 0.0, "sample period must be positive");
    require(max_iterations > 0, "iteration cap must be positive");
  }
};

struct CommandSample {
  double t_offset = 0.0;        // s since start_time
  double steering_angle = 0.0;  // rad
  bool operator==(const CommandSample&) const = default;
};

struct CommandSeries {
  double start_time = 0.0;
  std::vector<CommandSample> samples;
  bool converged = true;
  int iterations = 0;
  double cost = 0.0;

  /// Linear interpolation; clamps to the first/last sample outside the span.
  double at(double t_offset) const {
    if (samples.empty()) return 0.0;
    if (t_offset <= samples.front().t_offset) return samples.front().steering_angle;
    if (t_offset >= samples.back().t_offset) return samples.back().steering_angle;
    const auto it = std::upper_bound(samples.begin(), samples.end(), t_offset,
                                     [](double t, const CommandSample& s) { return t < s.t_offset; });
    const CommandSample& b = *it;
    const CommandSample& a = *(it - 1);
    const double w = (t_offset - a.t_offset) / (b.t_offset - a.t_offset);
    return a.steering_angle + w * (b.steering_angle - a.steering_angle);
  }

  bool operator==(const CommandSeries&) const = default;
};

namespace detail {

struct Grid {
  int intervals;
  double node_step;
  int substeps;
  double sub_dt;
};

inline Grid make_grid(const OcpConfig& c) {
  const double h = c.node_step();
  const int m = static_cast<int>(std::ceil(h / kMaxPlantStep - 1e-12));
  return {c.intervals, h, m, h / m};
}

/// State-dependent part of the running cost and its gradient.
struct NodeCost {
  double value = 0.0;
  std::array<double, 6> gradient{};
};

inline NodeCost node_cost(const VehicleState& s, const VehicleParams& p, const OcpConfig& c,
                          const Track& track, const std::vector<std::size_t>& window) {
  NodeCost out;
  const Projection proj = track.project_among({s.x, s.y}, window);
  // lead term: look-ahead distance times the sine of the course error
  const double u = p.forward_speed;
  const double course_err =
      wrap_angle(s.yaw + std::atan2(s.lateral_velocity, u) - proj.smooth_heading);
  const double lead = c.tracking_lookahead * std::sin(course_err);
  const double e = proj.signed_distance + lead;
  out.value = c.weight_tracking * e * e;
  const double de = 2.0 * c.weight_tracking * e;
  const double dlead = de * c.tracking_lookahead * std::cos(course_err);
  const double ch = std::cos(proj.heading), sh = std::sin(proj.heading);
  const double dist = proj.signed_distance;
  const double nx = dist != 0.0 ? (s.x - proj.foot.x) / dist : -sh;
  const double ny = dist != 0.0 ? (s.y - proj.foot.y) / dist : ch;
  // the blended heading moves with the foot point along the segment tangent
  const double along = -dlead * proj.smooth_heading_rate;
  out.gradient[0] = de * nx + along * ch;
  out.gradient[1] = de * ny + along * sh;
  out.gradient[2] = dlead;
  out.gradient[3] = dlead * u / (u * u + s.lateral_velocity * s.lateral_velocity);

  if (c.weight_load != 0.0) {
    const TireLoads loads = tire_vertical_loads(s, p);
    const double zl = (c.load_threshold - loads.rear_left) / c.load_scale;
    const double zr = (c.load_threshold - loads.rear_right) / c.load_scale;
    const double tl = std::tanh(zl), tr = std::tanh(zr);
    out.value += c.weight_load * (tl + tr);
    const double dcost_day =
        c.weight_load * load_transfer_gain(p) / c.load_scale * ((1.0 - tl * tl) - (1.0 - tr * tr));
    if (dcost_day != 0.0) {
      const auto g = lateral_acceleration_gradient(s, p);
      out.gradient[3] += dcost_day * g[0];
      out.gradient[4] += dcost_day * g[1];
      out.gradient[5] += dcost_day * g[2];
    }
  }
  return out;
}

using Vec6 = std::array<double, 6>;

inline Vec6 rhs(const Vec6& x, const VehicleParams& p, double gamma) {
  return derivatives(VehicleState::from_array(x), p, gamma).as_array();
}

inline Vec6 transpose_times(const std::array<std::array<double, 6>, 6>& a, const Vec6& v) {
  Vec6 r{};
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j) r[j] += a[i][j] * v[i];
  return r;
}

/// Shooting problem for a fixed initial state and track window.
class ShootingProblem {
 public:
  ShootingProblem(const VehicleState& x0, const Track& track, const VehicleParams& params,
                  const OcpConfig& config)
      : x0_(x0), track_(track), params_(params), config_(config), grid_(make_grid(config)) {
    const Projection start = track.project({x0.x, x0.y});
    const double reach = params.forward_speed * config.horizon;
    window_ = track.segments_in_window(start.arc_length - 20.0, start.arc_length + 1.5 * reach + 20.0);
  }

  const Grid& grid() const { return grid_; }

  /// Forward rollout, returning node states (intervals + 1).
  std::vector<VehicleState> rollout(const std::vector<double>& gamma) const {
    std::vector<VehicleState> nodes;
    nodes.reserve(gamma.size() + 1);
    VehicleState x = x0_;
    nodes.push_back(x);
    for (int k = 0; k < grid_.intervals; ++k) {
      for (int j = 0; j < grid_.substeps; ++j) x = step(x, params_, gamma[k], grid_.sub_dt);
      nodes.push_back(x);
    }
    return nodes;
  }

  double penalty(const std::vector<VehicleState>& nodes) const {
    double pen = 0.0;
    for (std::size_t k = 1; k < nodes.size(); ++k) {
      const double excess = std::abs(nodes[k].steering_angle) - config_.steering_bound;
      if (excess > 0.0) pen += excess * excess;
    }
    return config_.bound_penalty * grid_.node_step * pen;
  }

  /// Objective: quadrature cost plus steering-limit penalty.
  double value(const std::vector<double>& gamma) const {
    const auto nodes = rollout(gamma);
    return quadrature(nodes, gamma) + penalty(nodes);
  }

  double quadrature(const std::vector<VehicleState>& nodes, const std::vector<double>& gamma) const {
    const double h = grid_.node_step;
    double total = 0.0;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      const double w = (k == 0 || k + 1 == nodes.size()) ? 0.5 * h : h;
      total += w * node_cost(nodes[k], params_, config_, track_, window_).value;
    }
    for (double g : gamma) total += h * config_.weight_steer_rate * g * g;
    return total;
  }

  /// Objective and its gradient with respect to the steering rates.
  double value_and_gradient(const std::vector<double>& gamma, std::vector<double>& grad) const {
    const Grid& g = grid_;
    const double h = g.node_step, dt = g.sub_dt;
    // forward pass storing every substep start state
    std::vector<Vec6> xs;
    xs.reserve(static_cast<std::size_t>(g.intervals * g.substeps + 1));
    VehicleState x = x0_;
    xs.push_back(x.as_array());
    for (int k = 0; k < g.intervals; ++k)
      for (int j = 0; j < g.substeps; ++j) {
        x = step(x, params_, gamma[k], dt);
        xs.push_back(x.as_array());
      }

    double total = 0.0;
    std::vector<Vec6> node_grad(static_cast<std::size_t>(g.intervals + 1));
    for (int k = 0; k <= g.intervals; ++k) {
      const VehicleState s = VehicleState::from_array(xs[static_cast<std::size_t>(k * g.substeps)]);
      const double w = (k == 0 || k == g.intervals) ? 0.5 * h : h;
      const NodeCost nc = node_cost(s, params_, config_, track_, window_);
      total += w * nc.value;
      Vec6& ng = node_grad[static_cast<std::size_t>(k)];
      for (std::size_t i = 0; i < 6; ++i) ng[i] = w * nc.gradient[i];
      if (k > 0) {
        const double excess = std::abs(s.steering_angle) - config_.steering_bound;
        if (excess > 0.0) {
          total += config_.bound_penalty * h * excess * excess;
          ng[5] += config_.bound_penalty * h * 2.0 * excess * (s.steering_angle > 0.0 ? 1.0 : -1.0);
        }
      }
    }
    grad.assign(gamma.size(), 0.0);
    for (std::size_t k = 0; k < gamma.size(); ++k) {
      total += h * config_.weight_steer_rate * gamma[k] * gamma[k];
      grad[k] = 2.0 * h * config_.weight_steer_rate * gamma[k];
    }

    // reverse pass through the RK4 substeps
    Vec6 lambda = node_grad.back();
    for (int k = g.intervals - 1; k >= 0; --k) {
      const double u = gamma[static_cast<std::size_t>(k)];
      double gbar = 0.0;
      for (int j = g.substeps - 1; j >= 0; --j) {
        const Vec6& x0 = xs[static_cast<std::size_t>(k * g.substeps + j)];
        gbar += rk4_adjoint(x0, u, dt, lambda);
      }
      grad[static_cast<std::size_t>(k)] += gbar;
      const Vec6& ng = node_grad[static_cast<std::size_t>(k)];
      for (std::size_t i = 0; i < 6; ++i) lambda[i] += ng[i];
    }
    return total;
  }

 private:
  /// Pulls `lambda` (adjoint of the step output) back to the step input in
  /// place; returns the contribution to d(objective)/d(gamma).
  double rk4_adjoint(const Vec6& x, double u, double dt, Vec6& lambda) const {
    Vec6 z2, z3, z4;
    const Vec6 k1 = rhs(x, params_, u);
    for (std::size_t i = 0; i < 6; ++i) z2[i] = x[i] + 0.5 * dt * k1[i];
    const Vec6 k2 = rhs(z2, params_, u);
    for (std::size_t i = 0; i < 6; ++i) z3[i] = x[i] + 0.5 * dt * k2[i];
    const Vec6 k3 = rhs(z3, params_, u);
    for (std::size_t i = 0; i < 6; ++i) z4[i] = x[i] + dt * k3[i];

    Vec6 xb = lambda, kb1, kb2, kb3, kb4;
    for (std::size_t i = 0; i < 6; ++i) {
      kb1[i] = dt / 6.0 * lambda[i];
      kb2[i] = dt / 3.0 * lambda[i];
      kb3[i] = dt / 3.0 * lambda[i];
      kb4[i] = dt / 6.0 * lambda[i];
    }
    double ub = 0.0;
    const auto stage = [&](const Vec6& z, const Vec6& kb, Vec6* upstream, double scale) {
      const Vec6 zb = transpose_times(state_jacobian(VehicleState::from_array(z), params_), kb);
      ub += kb[5];
      for (std::size_t i = 0; i < 6; ++i) {
        xb[i] += zb[i];
        if (upstream) (*upstream)[i] += scale * zb[i];
      }
    };
    stage(z4, kb4, &kb3, dt);
    stage(z3, kb3, &kb2, 0.5 * dt);
    stage(z2, kb2, &kb1, 0.5 * dt);
    stage(x, kb1, nullptr, 0.0);
    lambda = xb;
    return ub;
  }

  VehicleState x0_;
  const Track& track_;
  VehicleParams params_;
  OcpConfig config_;
  Grid grid_;
  std::vector<std::size_t> window_;
};

}  // namespace detail

/// Trapezoidal quadrature of the running cost on the transcription nodes.
/// `states` holds the node states (intervals + 1) and `controls` the
/// piecewise-constant steering rates (intervals).
inline double trajectory_cost(const std::vector<VehicleState>& states,
                              const std::vector<double>& controls, const OcpConfig& config,
                              const Track& track, const VehicleParams& params) {
  if (controls.size() != static_cast<std::size_t>(config.intervals) ||
      states.size() != controls.size() + 1)
    throw Error("invalid_argument", "states/controls do not match the transcription grid");
  const double h = config.node_step();
  std::vector<std::size_t> all(track.segment_count());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const auto running = [&](const VehicleState& s, double gamma) {
    return detail::node_cost(s, params, config, track, all).value +
           config.weight_steer_rate * gamma * gamma;
  };
  double total = 0.0;
  for (std::size_t k = 0; k < controls.size(); ++k)
    total += 0.5 * h * (running(states[k], controls[k]) + running(states[k + 1], controls[k]));
  return total;
}

/// Full solver output; `plan` returns only the command series.
struct PlanResult {
  CommandSeries commands;
  std::vector<double> steering_rates;
  std::vector<VehicleState> node_states;
  std::vector<double> cost_history;  // objective after each accepted iterate
  double scaled_gradient = 0.0;
};

inline PlanResult solve_ocp(const VehicleState& initial, const Track& track,
                            const VehicleParams& params, const OcpConfig& config,
                            const std::vector<double>* warm_start = nullptr) {
  params.validate();
  config.validate();
  if (!initial.finite()) throw Error("non_finite", "initial state contains a non-finite field");
  if (std::abs(initial.steering_angle) > config.steering_bound)
    throw Error("invalid_argument", "initial steering angle lies outside the steering bound");

  const detail::ShootingProblem problem(initial, track, params, config);
  const std::size_t n = static_cast<std::size_t>(config.intervals);
  const double gmax = config.steer_rate_bound;
  const auto project = [&](double v) { return std::clamp(v, -gmax, gmax); };

  std::vector<double> x(n, 0.0);
  if (warm_start && warm_start->size() == n)
    for (std::size_t i = 0; i < n; ++i) x[i] = project((*warm_start)[i]);

  PlanResult result;
  std::vector<double> g(n);
  double f = problem.value_and_gradient(x, g);
  result.cost_history.push_back(f);

  // infinity norm of the projected-gradient step, relative to the cost
  const auto stationarity = [&](const std::vector<double>& xv, const std::vector<double>& gv, double fv) {
    double m = 0.0;
    for (std::size_t i = 0; i < n; ++i) m = std::max(m, std::abs(project(xv[i] - gv[i]) - xv[i]));
    return m / std::max(1.0, std::abs(fv));
  };
  // variables within eps of a bound with the gradient pointing outward are
  // sent to that bound instead of taking the quasi-Newton step
  const auto near_bound = [&](std::size_t i, double eps) {
    return (x[i] <= -gmax + eps && g[i] > 0.0) || (x[i] >= gmax - eps && g[i] < 0.0);
  };

  // Hessian approximation B (row-major); steps solve the free block of B
  std::vector<double> B(n * n, 0.0);
  bool scaled_identity = false;
  const auto reset_hessian = [&] {
    std::fill(B.begin(), B.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) B[i * n + i] = 1.0;
    scaled_identity = false;
  };
  reset_hessian();

  std::vector<std::size_t> free_idx;
  std::vector<double> chol;
  // d_F = -B_FF^{-1} g_F, d_A = 0; false when B_FF is not positive definite
  const auto newton_direction = [&](std::vector<double>& d) {
    const std::size_t m = free_idx.size();
    chol.assign(m * m, 0.0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j <= i; ++j) {
        double acc = B[free_idx[i] * n + free_idx[j]];
        for (std::size_t k = 0; k < j; ++k) acc -= chol[i * m + k] * chol[j * m + k];
        if (i == j) {
          if (!(acc > 0.0)) return false;
          chol[i * m + i] = std::sqrt(acc);
        } else {
          chol[i * m + j] = acc / chol[j * m + j];
        }
      }
    std::vector<double> w(m);
    for (std::size_t i = 0; i < m; ++i) {
      double acc = -g[free_idx[i]];
      for (std::size_t k = 0; k < i; ++k) acc -= chol[i * m + k] * w[k];
      w[i] = acc / chol[i * m + i];
    }
    for (std::size_t i = m; i-- > 0;) {
      double acc = w[i];
      for (std::size_t k = i + 1; k < m; ++k) acc -= chol[k * m + i] * w[k];
      w[i] = acc / chol[i * m + i];
    }
    std::fill(d.begin(), d.end(), 0.0);
    for (std::size_t i = 0; i < m; ++i) d[free_idx[i]] = w[i];
    return true;
  };

  bool converged = stationarity(x, g, f) <= config.gradient_tolerance;
  int iter = 0;
  std::vector<double> d(n), x_new(n), g_new(n), s(n), y(n), bs(n);
  while (!converged && iter < config.max_iterations) {
    ++iter;
    double raw = 0.0;
    for (std::size_t i = 0; i < n; ++i) raw = std::max(raw, std::abs(project(x[i] - g[i]) - x[i]));
    const double eps = std::min(0.1 * gmax, raw);
    free_idx.clear();
    for (std::size_t i = 0; i < n; ++i)
      if (!near_bound(i, eps)) free_idx.push_back(i);
    const auto direction = [&] {
      if (!newton_direction(d)) return 0.0;
      for (std::size_t i = 0; i < n; ++i)
        if (near_bound(i, eps)) d[i] = (g[i] > 0.0 ? -gmax : gmax) - x[i];
      double sl = 0.0;
      for (std::size_t i = 0; i < n; ++i) sl += d[i] * g[i];
      return sl;
    };
    if (!(direction() < 0.0)) {
      reset_hessian();
      direction();
    }
    double alpha = 1.0;
    if (!scaled_identity) {
      double dmax = 0.0;
      for (double v : d) dmax = std::max(dmax, std::abs(v));
      alpha = std::min(1.0, 0.1 * gmax / dmax);
    }
    double f_new = f;
    bool accepted = false;
    for (int ls = 0; ls < 40; ++ls) {
      double decrease = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        x_new[i] = project(x[i] + alpha * d[i]);
        decrease += g[i] * (x_new[i] - x[i]);
      }
      f_new = problem.value(x_new);
      if (std::isfinite(f_new) && f_new <= f + 1e-4 * decrease) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) break;
    f_new = problem.value_and_gradient(x_new, g_new);
    double sy = 0.0, yy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = x_new[i] - x[i];
      y[i] = g_new[i] - g[i];
      sy += s[i] * y[i];
      yy += y[i] * y[i];
    }
    if (sy > 1e-14 * std::sqrt(yy)) {
      if (!scaled_identity) {
        std::fill(B.begin(), B.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) B[i * n + i] = yy / sy;
        scaled_identity = true;
      }
      double sbs = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += B[i * n + j] * s[j];
        bs[i] = acc;
        sbs += s[i] * acc;
      }
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          B[i * n + j] += y[i] * y[j] / sy - bs[i] * bs[j] / sbs;
    }
    x.swap(x_new);
    g.swap(g_new);
    f = f_new;
    result.cost_history.push_back(f);
    converged = stationarity(x, g, f) <= config.gradient_tolerance;
  }

  const std::vector<double>& gamma = x;
  result.steering_rates = gamma;
  result.node_states = problem.rollout(gamma);
  result.scaled_gradient = stationarity(x, g, f);

  CommandSeries& cs = result.commands;
  cs.converged = converged;
  cs.iterations = iter;
  cs.cost = f;
  // steering angle is piecewise linear in time between nodes
  const double h = config.node_step();
  const int n_samples = static_cast<int>(std::floor(config.horizon / config.sample_period + 1e-9));
  for (int i = 0; i <= n_samples; ++i) {
    const double t = i * config.sample_period;
    const std::size_t k = std::min(n - 1, static_cast<std::size_t>(std::floor(t / h + 1e-12)));
    const double delta = result.node_states[k].steering_angle + gamma[k] * (t - k * h);
    cs.samples.push_back({t, std::clamp(delta, -config.steering_bound, config.steering_bound)});
  }
  return result;
}

inline CommandSeries plan(const VehicleState& initial, const Track& track, const VehicleParams& params,
                          const OcpConfig& config, const std::vector<double>* warm_start = nullptr) {
  return solve_ocp(initial, track, params, config, warm_start).commands;
}

/// Re-plans every `execute_duration` seconds and serves the interpolated
/// steering reference. A new series takes effect `latency` seconds after it
/// was requested; in asynchronous mode it takes effect once the solver
/// finishes, and never earlier than the modelled latency.
class RecedingHorizon {
 public:
  RecedingHorizon(Track track, VehicleParams params, OcpConfig config, double latency = 0.0,
                  bool asynchronous = false)
      : track_(std::move(track)),
        params_(params),
        config_(config),
        latency_(latency),
        asynchronous_(asynchronous) {
    config_.validate();
    require(latency_ >= 0.0, "planner latency must be non-negative");
  }

  RecedingHorizon(const RecedingHorizon&) = delete;
  RecedingHorizon& operator=(const RecedingHorizon&) = delete;

  /// Call once per control tick. Returns the new series when a plan was
  /// triggered at this tick. With a non-zero latency the plan starts from the
  /// state predicted at its activation time under the current reference, so
  /// the hand-over is continuous.
  std::optional<CommandSeries> tick(double clock, const VehicleState& state) {
    constexpr double eps = 1e-9;
    if (!have_fallback_) {
      fallback_ = state.steering_angle;
      have_fallback_ = true;
    }
    std::optional<CommandSeries> issued;
    if (clock + eps >= next_plan_time_) {
      const double start_time = clock + latency_;
      std::vector<double> warm = shifted_warm_start(start_time);
      const VehicleState start = predict(state, clock, start_time);
      plan_times_.push_back(clock);
      if (asynchronous_) {
        in_flight_ = std::async(std::launch::async, [this, start, warm, start_time] {
          PlanResult r = solve_ocp(start, track_, params_, config_, warm.empty() ? nullptr : &warm);
          r.commands.start_time = start_time;
          return r;
        });
        in_flight_activation_ = start_time;
      } else {
        PlanResult r = solve_ocp(start, track_, params_, config_, warm.empty() ? nullptr : &warm);
        r.commands.start_time = start_time;
        issued = r.commands;
        pending_ = std::move(r);
        pending_activation_ = start_time;
      }
      next_plan_time_ += config_.execute_duration;
    }
    if (asynchronous_ && in_flight_.valid() && clock + eps >= in_flight_activation_ &&
        in_flight_.wait_for(std::chrono::seconds(0)) == std::future_status::ready) {
      pending_ = in_flight_.get();
      pending_activation_ = clock;
      issued = pending_->commands;
    }
    if (pending_ && clock + eps >= pending_activation_) {
      active_ = std::move(pending_);
      pending_.reset();
    }
    return issued;
  }

  /// Blocks until an in-flight asynchronous plan, if any, has finished.
  void wait() const {
    if (in_flight_.valid()) in_flight_.wait();
  }

  /// Steering reference at `clock` from the active series.
  double reference(double clock) const {
    if (!active_) return fallback_;
    return active_->commands.at(clock - active_->commands.start_time);
  }

  const std::vector<double>& plan_times() const { return plan_times_; }
  const CommandSeries* active() const { return active_ ? &active_->commands : nullptr; }
  const Track& track() const { return track_; }

 private:
  // Integrates the plant from `from` to `to` following the active reference.
  VehicleState predict(VehicleState s, double from, double to) const {
    const double h = 0.01;
    double t = from;
    while (t + 1e-12 < to) {
      const double dt = std::min(h, to - t);
      s = step(s, params_, (reference(t + dt) - reference(t)) / dt, dt);
      s.steering_angle = std::clamp(s.steering_angle, -config_.steering_bound, config_.steering_bound);
      t += dt;
    }
    return s;
  }

  std::vector<double> shifted_warm_start(double clock) const {
    const PlanResult* prev = pending_ ? &*pending_ : (active_ ? &*active_ : nullptr);
    if (!prev) return {};
    const double h = config_.node_step();
    const double shift = clock - prev->commands.start_time;
    std::vector<double> warm(prev->steering_rates.size(), 0.0);
    for (std::size_t j = 0; j < warm.size(); ++j) {
      const double t = static_cast<double>(j) * h + shift;
      const auto k = static_cast<std::size_t>(std::floor(t / h + 1e-9));
      if (k < prev->steering_rates.size()) warm[j] = prev->steering_rates[k];
    }
    return warm;
  }

  Track track_;
  VehicleParams params_;
  OcpConfig config_;
  double latency_;
  bool asynchronous_;
  double next_plan_time_ = 0.0;
  std::optional<PlanResult> active_;
  std::optional<PlanResult> pending_;
  double pending_activation_ = 0.0;
  std::future<PlanResult> in_flight_;
  double in_flight_activation_ = 0.0;
  double fallback_ = 0.0;
  bool have_fallback_ = false;
  std::vector<double> plan_times_;
};

}  // namespace hsc
