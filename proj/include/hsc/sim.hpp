#pragma once

/**
 * @file
 * @brief Closed-loop scenario runner: plant at 100 Hz, gaze at 30 Hz,
 * workload estimation and assistance level at 10 Hz, re-planning every 3 s.
 */

#include <cstdio>
#include <deque>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "hsc/error.hpp"
#include "hsc/haptic.hpp"
#include "hsc/hmm.hpp"
#include "hsc/nmpc.hpp"
#include "hsc/operator_model.hpp"
#include "hsc/track.hpp"
#include "hsc/vehicle.hpp"

#ifndef HSC_DATA_DIR
#define HSC_DATA_DIR "data"
#endif

namespace hsc {

inline std::string default_model_path() { return std::string(HSC_DATA_DIR) + "/hmm_models.json"; }

inline const char* to_string(Scheme s) { return s == Scheme::adaptive ? "adaptive" : "non-adaptive"; }

inline Scheme scheme_from_string(const std::string& s) {
  if (s == "adaptive") return Scheme::adaptive;
  if (s == "non-adaptive" || s == "non_adaptive") return Scheme::non_adaptive;
  throw Error("invalid_argument", "scheme must be 'adaptive' or 'non-adaptive', got '" + s + "'");
}

struct EstimatorConfig {
  double update_period = 0.1;     // s
  double smoothing_window = 1.0;  // s, moving average of w and e
  double prior_workload = 50.0;   // used until the first full gaze window

  void validate() const {
    require(update_period > 0.0 && smoothing_window > 0.0, "estimator periods must be positive");
    require(prior_workload >= 0.0 && prior_workload <= 100.0, "prior workload must lie in [0, 100]");
  }
};

struct ScenarioConfig {
  std::string track_id = "straight";
  Scheme scheme = Scheme::adaptive;
  std::vector<UrgencySegment> urgency_schedule{{0.0, 6.5}};
  double duration = 180.0;           // s
  double localization_offset = 1.0;  // m, positive = left of the centerline
  std::uint64_t seed = 0;
  bool clamp_beta = false;
  std::optional<double> forced_beta;  // replaces the computed level when set
  bool operator_enabled = true;       // false: the operator never applies torque
  double planner_latency = 0.0;       // s

  VehicleParams vehicle;
  OcpConfig planner = OcpConfig::defaults_for(VehicleParams{});
  PidGains pid;
  SteeringWheelState wheel;
  OperatorConfig operator_config;
  EstimatorConfig estimator;

  void validate() const {
    require(duration > 0.0, "duration must be positive");
    require(std::abs(duration * 100.0 - std::round(duration * 100.0)) < 1e-6, "duration must be a whole number of ticks");
    require(!urgency_schedule.empty() && urgency_schedule.front().start == 0.0, "urgency schedule must start at 0");
    for (std::size_t i = 0; i < urgency_schedule.size(); ++i) {
      require(urgency_schedule[i].interval > 0.0, "urgency intervals must be positive");
      if (i > 0) require(urgency_schedule[i].start > urgency_schedule[i - 1].start, "urgency segments must not overlap");
      require(urgency_schedule[i].start < duration, "urgency segments must start inside the run");
    }
    require_finite(localization_offset, "localization offset");
    require(planner_latency >= 0.0, "planner latency must be non-negative");
    if (forced_beta) require_finite(*forced_beta, "forced assistance level");
    vehicle.validate();
    planner.validate();
    pid.validate();
    wheel.validate();
    operator_config.validate();
    estimator.validate();
    require(std::abs(wheel.steering_bound - planner.steering_bound) < 1e-12,
            "wheel and planner steering bounds must agree");
  }

  /// Index of the urgency segment in force at `t`.
  std::size_t segment_at(double t) const {
    std::size_t s = 0;
    while (s + 1 < urgency_schedule.size() && urgency_schedule[s + 1].start <= t + 1e-9) ++s;
    return s;
  }
};

struct TickRecord {
  double t = 0.0;
  VehicleState state;
  double delta_ref = 0.0;
  double tau_h = 0.0;
  double tau_a = 0.0;
  double beta = 1.0;
  double tau_c = 0.0;
  double workload = 50.0;
  double eyes_on_road = 1.0;
  Focus focus = Focus::on_road;
  GazePoint gaze;  // most recent 30 Hz sample, held between samples
  double cross_track_error = 0.0;
  TireLoads loads;
  double interval = 0.0;
  int segment = 0;
};

struct PlanEvent {
  double t = 0.0;
  bool converged = true;
  int iterations = 0;
  double cost = 0.0;
};

struct Metrics {
  double lane_keeping_error = 0.0;    // m
  double mean_operator_torque = 0.0;  // N m
  std::optional<double> detection_accuracy;
  int stimuli = 0;
  double min_tire_load = 0.0;         // N
  double converged_plans = 1.0;       // fraction
  double mean_beta = 1.0;
  double mean_workload = 0.0;
  double mean_eyes_on_road = 0.0;
  double duration = 0.0;              // s covered
};

struct SegmentMetrics {
  double start = 0.0;
  double interval = 0.0;
  Metrics metrics;
};

struct RunResult {
  std::vector<TickRecord> ticks;
  std::vector<Stimulus> stimuli;
  std::vector<PlanEvent> plans;
  std::size_t gaze_samples = 0;
  std::size_t assistance_updates = 0;
  Metrics metrics;
  std::vector<SegmentMetrics> segments;
};

namespace detail {

inline void check_tick(const TickRecord& r, long long k) {
  const double values[] = {r.state.x,   r.state.y,    r.state.yaw, r.state.lateral_velocity, r.state.yaw_rate,
                           r.state.steering_angle, r.delta_ref, r.tau_h, r.tau_a, r.beta, r.tau_c,
                           r.workload, r.eyes_on_road};
  for (double v : values)
    if (!std::isfinite(v)) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "non-finite value at tick %lld (t = %.2f s)", k, r.t);
      throw Error("numeric", buf);
    }
}

}  // namespace detail

/// Metrics over the ticks with index in [first, last) and the given stimuli.
inline Metrics compute_metrics(const std::vector<TickRecord>& ticks, std::size_t first, std::size_t last,
                               const std::vector<const Stimulus*>& stimuli, const std::vector<PlanEvent>& plans) {
  Metrics m;
  require(first < last && last <= ticks.size(), "metrics need at least one tick");
  double lke = 0.0, tau = 0.0, beta = 0.0, w = 0.0, e = 0.0;
  m.min_tire_load = INFINITY;
  for (std::size_t i = first; i < last; ++i) {
    const TickRecord& r = ticks[i];
    lke += std::abs(r.cross_track_error);
    tau += std::abs(r.tau_h);
    beta += r.beta;
    w += r.workload;
    e += r.eyes_on_road;
    m.min_tire_load = std::min({m.min_tire_load, r.loads.rear_left, r.loads.rear_right});
  }
  const double n = static_cast<double>(last - first);
  m.lane_keeping_error = lke / n;
  m.mean_operator_torque = tau / n;
  m.mean_beta = beta / n;
  m.mean_workload = w / n;
  m.mean_eyes_on_road = e / n;
  m.duration = n * kPlantDt;
  int correct = 0;
  for (const Stimulus* s : stimuli) correct += s->correct;
  m.stimuli = static_cast<int>(stimuli.size());
  if (!stimuli.empty()) m.detection_accuracy = static_cast<double>(correct) / static_cast<double>(stimuli.size());
  if (!plans.empty()) {
    int ok = 0;
    for (const PlanEvent& p : plans) ok += p.converged;
    m.converged_plans = static_cast<double>(ok) / static_cast<double>(plans.size());
  }
  return m;
}

inline void fill_metrics(RunResult& r, const ScenarioConfig& c) {
  std::vector<const Stimulus*> all;
  for (const Stimulus& s : r.stimuli)
    if (s.evaluated) all.push_back(&s);
  r.metrics = compute_metrics(r.ticks, 0, r.ticks.size(), all, r.plans);
  r.segments.clear();
  for (std::size_t s = 0; s < c.urgency_schedule.size(); ++s) {
    std::size_t first = r.ticks.size(), last = 0;
    for (std::size_t i = 0; i < r.ticks.size(); ++i)
      if (r.ticks[i].segment == static_cast<int>(s)) {
        first = std::min(first, i);
        last = i + 1;
      }
    if (first >= last) continue;
    std::vector<const Stimulus*> seg;
    for (const Stimulus* st : all)
      if (st->segment == static_cast<int>(s)) seg.push_back(st);
    std::vector<PlanEvent> plans;
    for (const PlanEvent& p : r.plans)
      if (c.segment_at(p.t) == s) plans.push_back(p);
    r.segments.push_back({c.urgency_schedule[s].start, c.urgency_schedule[s].interval,
                          compute_metrics(r.ticks, first, last, seg, plans)});
  }
}

/// Runs one closed-loop scenario with the given workload models, which the
/// estimator evaluates in both schemes.
inline RunResult run_scenario(const ScenarioConfig& c, const ModelPair& models) {
  c.validate();
  const Track centerline = load_track(c.track_id);
  const Track reference_line = c.localization_offset == 0.0 ? centerline : centerline.offset(c.localization_offset);
  RecedingHorizon planner(reference_line, c.vehicle, c.planner, c.planner_latency);

  OperatorConfig oc = c.operator_config;
  oc.seed = c.seed;
  Operator op(oc, stimulus_schedule(c.urgency_schedule, c.duration), c.urgency_schedule.front().interval);

  PidState pid{c.pid};
  SteeringWheelState wheel = c.wheel;
  VehicleState state;
  const Projection start = centerline.project(centerline.point_at(0.0));
  state.x = start.foot.x;
  state.y = start.foot.y;
  state.yaw = start.smooth_heading;

  RunResult out;
  const auto ticks = static_cast<long long>(std::llround(c.duration / kPlantDt));
  out.ticks.reserve(static_cast<std::size_t>(ticks));
  const auto update_every = static_cast<long long>(std::llround(c.estimator.update_period / kPlantDt));
  require(update_every >= 1, "estimator update period must be at least one tick");

  std::deque<GazePoint> gaze;
  GazePoint last_gaze;
  TrailingMean w_mean(c.estimator.smoothing_window), e_mean(c.estimator.smoothing_window);
  double beta = 1.0, w_t = c.estimator.prior_workload, e_t = 1.0;
  double torque_sum = 0.0;
  int torque_count = 0;

  for (long long k = 0; k < ticks; ++k) {
    const double t = static_cast<double>(k) * kPlantDt;
    if (auto issued = planner.tick(t, state))
      out.plans.push_back({t, issued->converged, issued->iterations, issued->cost});

    if (gaze_tick(k)) {
      last_gaze = op.gaze(t);
      gaze.push_back(last_gaze);
      if (gaze.size() > kWindowLength) gaze.pop_front();
      ++out.gaze_samples;
    }

    const double tau_h = c.operator_enabled ? op.torque(state, centerline) : 0.0;
    torque_sum += std::abs(tau_h);
    ++torque_count;

    if (k % update_every == 0) {
      double w_raw = c.estimator.prior_workload, e_raw = 1.0;
      if (gaze.size() == kWindowLength) {
        const GazeWindow window(std::vector<GazePoint>(gaze.begin(), gaze.end()));
        w_raw = workload_value(classify(window, models.moderate, models.high));
        e_raw = eyes_on_road(window);
      } else if (!gaze.empty()) {
        std::size_t on = 0;
        for (const GazePoint& g : gaze) on += g.screen == Screen::driving;
        e_raw = static_cast<double>(on) / static_cast<double>(gaze.size());
      }
      w_mean.push(t, w_raw);
      e_mean.push(t, e_raw);
      w_t = w_mean.value(t);
      e_t = e_mean.value(t);
      const double tau_hat = normalize_torque(torque_sum / torque_count, oc.max_torque);
      torque_sum = 0.0;
      torque_count = 0;
      beta = c.forced_beta ? *c.forced_beta
                           : assistance_level(AssistanceInputs(w_t, e_t, tau_hat), c.clamp_beta, c.scheme);
      ++out.assistance_updates;
    }

    TickRecord rec;
    rec.t = t;
    rec.state = state;
    rec.delta_ref = planner.reference(t);
    rec.tau_h = tau_h;
    rec.tau_a = autonomy_torque(pid, rec.delta_ref, wheel.angle, kPlantDt);
    rec.beta = beta;
    rec.tau_c = blend(tau_h, rec.tau_a, beta);
    rec.workload = w_t;
    rec.eyes_on_road = e_t;
    rec.focus = op.attention().focus;
    rec.gaze = last_gaze;
    rec.cross_track_error = centerline.project({state.x, state.y}).signed_distance;
    rec.loads = tire_vertical_loads(state, c.vehicle);
    rec.segment = static_cast<int>(c.segment_at(t));
    rec.interval = c.urgency_schedule[static_cast<std::size_t>(rec.segment)].interval;
    detail::check_tick(rec, k);
    out.ticks.push_back(rec);

    wheel = wheel_step(wheel, rec.tau_c, kPlantDt);
    const double gamma = (wheel.angle - state.steering_angle) / kPlantDt;
    state = step(state, c.vehicle, gamma, kPlantDt);
    state.steering_angle = wheel.angle;
    op.step_attention(t, kPlantDt);
  }
  out.stimuli = op.stream().stimuli;
  fill_metrics(out, c);
  return out;
}

// --- output ------------------------------------------------------------------

/// Column order of run.csv.
inline const std::vector<std::string>& run_csv_columns() {
  static const std::vector<std::string> cols{
      "t",     "x",     "y",        "yaw",          "lateral_velocity", "yaw_rate",   "steering_angle",
      "delta_ref", "tau_h", "tau_a", "beta", "tau_c", "workload", "eyes_on_road", "attention",
      "gaze_x", "gaze_y", "gaze_screen", "cross_track_error", "rear_load_left", "rear_load_right",
      "urgency_interval"};
  return cols;
}

inline void write_run_csv(std::ostream& out, const RunResult& r) {
  const auto& cols = run_csv_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << '\n';
  char buf[64];
  const auto put = [&](double v, bool last = false) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out << buf << (last ? '\n' : ',');
  };
  for (const TickRecord& k : r.ticks) {
    std::snprintf(buf, sizeof buf, "%.2f", k.t);
    out << buf << ',';
    put(k.state.x);
    put(k.state.y);
    put(k.state.yaw);
    put(k.state.lateral_velocity);
    put(k.state.yaw_rate);
    put(k.state.steering_angle);
    put(k.delta_ref);
    put(k.tau_h);
    put(k.tau_a);
    put(k.beta);
    put(k.tau_c);
    put(k.workload);
    put(k.eyes_on_road);
    out << to_string(k.focus) << ',';
    put(k.gaze.x);
    put(k.gaze.y);
    out << to_string(k.gaze.screen) << ',';
    put(k.cross_track_error);
    put(k.loads.rear_left);
    put(k.loads.rear_right);
    put(k.interval, true);
  }
}

namespace detail {
inline std::string json_number(double v) {
  if (!std::isfinite(v)) return "null";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string metrics_object(const Metrics& m, const std::string& pad) {
  std::ostringstream o;
  o << "{\n"
    << pad << "  \"lane_keeping_error\": " << json_number(m.lane_keeping_error) << ",\n"
    << pad << "  \"mean_operator_torque\": " << json_number(m.mean_operator_torque) << ",\n"
    << pad << "  \"detection_accuracy\": "
    << (m.detection_accuracy ? json_number(*m.detection_accuracy) : std::string("null")) << ",\n"
    << pad << "  \"stimuli\": " << m.stimuli << ",\n"
    << pad << "  \"min_tire_load\": " << json_number(m.min_tire_load) << ",\n"
    << pad << "  \"converged_plans\": " << json_number(m.converged_plans) << ",\n"
    << pad << "  \"mean_beta\": " << json_number(m.mean_beta) << ",\n"
    << pad << "  \"mean_workload\": " << json_number(m.mean_workload) << ",\n"
    << pad << "  \"mean_eyes_on_road\": " << json_number(m.mean_eyes_on_road) << ",\n"
    << pad << "  \"duration\": " << json_number(m.duration) << "\n"
    << pad << "}";
  return o.str();
}
}  // namespace detail

inline std::string metrics_json(const RunResult& r) {
  std::ostringstream o;
  o << "{\n  \"overall\": " << detail::metrics_object(r.metrics, "  ") << ",\n  \"segments\": [";
  for (std::size_t i = 0; i < r.segments.size(); ++i) {
    const SegmentMetrics& s = r.segments[i];
    o << (i ? ",\n" : "\n") << "    {\n      \"start\": " << detail::json_number(s.start)
      << ",\n      \"interval\": " << detail::json_number(s.interval)
      << ",\n      \"metrics\": " << detail::metrics_object(s.metrics, "      ") << "\n    }";
  }
  int converged = 0;
  for (const PlanEvent& p : r.plans) converged += p.converged;
  o << (r.segments.empty() ? "" : "\n  ") << "],\n  \"ticks\": " << r.ticks.size()
    << ",\n  \"gaze_samples\": " << r.gaze_samples << ",\n  \"assistance_updates\": " << r.assistance_updates
    << ",\n  \"plans\": " << r.plans.size() << ",\n  \"converged_plans\": " << converged << "\n}\n";
  return o.str();
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("io", "cannot write " + path);
  out << text;
  if (!out) throw Error("io", "failed writing " + path);
}

}  // namespace hsc
