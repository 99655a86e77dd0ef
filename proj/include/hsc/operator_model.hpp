#pragma once

/**
 * @file
 * @brief Scripted operator: attention switching between the driving and
 * surveillance screens, PD steering torque toward the true centerline, gaze
 * samples consistent with the attention state, and surveillance detections.
 *
 * Stimuli arrive at the start of every urgency interval. A stimulus that has
 * waited reaction_delay while the operator looks at the road pulls the gaze
 * to the surveillance screen; otherwise both screens are held for
 * exponentially distributed dwell times.
 */

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "hsc/error.hpp"
#include "hsc/hmm.hpp"
#include "hsc/track.hpp"
#include "hsc/vehicle.hpp"

namespace hsc {

struct OperatorConfig {
  double pd_gain_offset = 1.0;                // N m / m
  double pd_gain_heading = 3.0;               // N m / rad
  double torque_noise_std = 0.05;             // N m
  double reaction_delay = 0.3;                // s
  double glance_mean_on_road = 4.5;           // s
  double glance_mean_surveillance_base = 1.1; // s, at a 6.5 s interval
  double gaze_cluster_std = 0.05;
  double detection_base_prob = 0.4;
  double detection_dwell_gain = 0.25;         // 1/s
  double max_torque = 10.0;                   // N m
  std::uint64_t seed = 0;

  void validate() const {
    require(pd_gain_offset >= 0.0 && pd_gain_heading >= 0.0, "operator gains must be non-negative");
    require(torque_noise_std >= 0.0 && gaze_cluster_std >= 0.0, "noise levels must be non-negative");
    require(reaction_delay >= 0.0, "reaction delay must be non-negative");
    require(glance_mean_on_road > 0.0 && glance_mean_surveillance_base > 0.0, "glance means must be positive");
    require(detection_base_prob >= 0.0 && detection_base_prob <= 1.0, "detection probability must lie in [0, 1]");
    require(detection_dwell_gain >= 0.0, "detection dwell gain must be non-negative");
    require(max_torque > 0.0, "maximum torque must be positive");
  }
};

inline constexpr double kReferenceInterval = 6.5;  // s
inline constexpr Vec2 kDrivingCenter{0.75, 0.5};
inline constexpr Vec2 kSurveillanceCenter{0.25, 0.5};

enum class Focus { on_road, on_surveillance };

inline const char* to_string(Focus f) { return f == Focus::on_road ? "road" : "surveillance"; }

struct AttentionState {
  Focus focus = Focus::on_road;
  double time_in_state = 0.0;  // s
  double dwell = 0.0;          // s, drawn on entry
};

/// One surveillance stimulus: shown at `onset`, answered by `deadline`.
struct Stimulus {
  double onset = 0.0;
  double deadline = 0.0;
  double interval = 0.0;
  int segment = 0;       // index into the urgency schedule
  double dwell = 0.0;    // time spent on the surveillance screen while shown
  bool evaluated = false;
  bool correct = false;
};

struct UrgencySegment {
  double start = 0.0;     // s
  double interval = 6.5;  // s between stimuli
};

/// Stimuli at start + k * interval within each segment; a stimulus whose
/// answer window would cross the segment end is not shown.
inline std::vector<Stimulus> stimulus_schedule(const std::vector<UrgencySegment>& schedule, double duration) {
  require(!schedule.empty() && schedule.front().start == 0.0, "the urgency schedule must start at 0");
  require(duration > 0.0, "duration must be positive");
  std::vector<Stimulus> out;
  for (std::size_t s = 0; s < schedule.size(); ++s) {
    require(schedule[s].interval > 0.0, "stimulus intervals must be positive");
    if (s > 0) require(schedule[s].start > schedule[s - 1].start, "urgency segments must be strictly ordered");
    const double end = s + 1 < schedule.size() ? schedule[s + 1].start : duration;
    for (int k = 0;; ++k) {
      const double onset = schedule[s].start + k * schedule[s].interval;
      const double deadline = onset + schedule[s].interval;
      if (deadline > end + 1e-9 || !std::isfinite(deadline)) break;
      out.push_back({onset, deadline, schedule[s].interval, static_cast<int>(s)});
    }
  }
  return out;
}

/// Stimulus bookkeeping seen by the attention process.
struct SurveillanceStream {
  std::vector<Stimulus> stimuli;
  double interval = kReferenceInterval;  // urgency currently in force
  std::size_t next = 0;                  // first stimulus not yet shown
  bool pending = false;                  // a shown stimulus has not been looked at yet
  double pending_since = 0.0;

  SurveillanceStream() = default;
  explicit SurveillanceStream(std::vector<Stimulus> s, double initial_interval)
      : stimuli(std::move(s)), interval(initial_interval) {
    require(interval > 0.0, "stimulus interval must be positive");
  }
};

/// Mean surveillance dwell grows with stimulus pressure.
inline double surveillance_glance_mean(const OperatorConfig& c, double interval) {
  return c.glance_mean_surveillance_base * kReferenceInterval / interval;
}

template <class Rng>
double draw_dwell(Focus f, const OperatorConfig& c, double interval, Rng& rng) {
  const double mean = f == Focus::on_road ? c.glance_mean_on_road : surveillance_glance_mean(c, interval);
  return std::exponential_distribution<double>(1.0 / mean)(rng);
}

template <class Rng>
AttentionState initial_attention(const OperatorConfig& c, double interval, Rng& rng) {
  AttentionState a;
  a.dwell = draw_dwell(Focus::on_road, c, interval, rng);
  return a;
}

/// Probability that a stimulus is answered correctly after `dwell` seconds of
/// looking at it; zero dwell means it was missed.
inline double detection_probability(double dwell, const OperatorConfig& c) {
  if (!(dwell > 0.0)) return 0.0;
  return std::min(1.0, c.detection_base_prob + c.detection_dwell_gain * dwell);
}

template <class Rng>
bool surveillance_response(const Stimulus& s, const OperatorConfig& c, Rng& rng) {
  const double p = detection_probability(s.dwell, c);
  if (p <= 0.0) return false;
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p;
}

/// Advances the attention process over [now, now + dt). Dwell on a shown
/// stimulus is credited for the part of the step spent on the surveillance
/// screen; stimuli whose deadline has passed are scored with `detect_rng`.
template <class Rng>
AttentionState attention_step(AttentionState a, SurveillanceStream& stream, double now, double dt,
                              const OperatorConfig& c, Rng& rng, Rng& detect_rng) {
  require(dt > 0.0, "attention step must be positive");
  const double t1 = now + dt;
  constexpr double eps = 1e-9;

  // show stimuli whose onset falls inside the step
  while (stream.next < stream.stimuli.size() && stream.stimuli[stream.next].onset < t1 - eps) {
    const Stimulus& s = stream.stimuli[stream.next];
    stream.interval = s.interval;
    stream.pending = true;
    stream.pending_since = s.onset;
    ++stream.next;
  }
  // credit dwell for the step just spent
  if (a.focus == Focus::on_surveillance)
    for (std::size_t k = stream.next; k-- > 0;) {
      Stimulus& s = stream.stimuli[k];
      if (s.evaluated) break;
      const double lo = std::max(now, s.onset), hi = std::min(t1, s.deadline);
      if (hi > lo) s.dwell += hi - lo;
    }
  // score expired stimuli
  for (std::size_t k = 0; k < stream.next; ++k) {
    Stimulus& s = stream.stimuli[k];
    if (!s.evaluated && s.deadline <= t1 + eps) {
      s.correct = surveillance_response(s, c, detect_rng);
      s.evaluated = true;
    }
  }

  // renewal in continuous time: the remainder of an expired dwell carries over
  a.time_in_state += dt;
  while (a.time_in_state >= a.dwell) {
    a.time_in_state -= a.dwell;
    a.focus = a.focus == Focus::on_road ? Focus::on_surveillance : Focus::on_road;
    a.dwell = draw_dwell(a.focus, c, stream.interval, rng);
  }
  if (a.focus == Focus::on_road && stream.pending && t1 - stream.pending_since >= c.reaction_delay - eps) {
    a.focus = Focus::on_surveillance;
    a.time_in_state = 0.0;
    a.dwell = draw_dwell(a.focus, c, stream.interval, rng);
  }
  if (a.focus == Focus::on_surveillance) stream.pending = false;
  return a;
}

/// PD torque toward the true centerline while looking at the road, zero
/// while looking at the surveillance screen.
template <class Rng>
double operator_torque(const VehicleState& v, const Track& track, const AttentionState& a, const OperatorConfig& c,
                       Rng& rng) {
  if (a.focus == Focus::on_surveillance) return 0.0;
  require_finite(v.x, "vehicle x");
  require_finite(v.y, "vehicle y");
  const Projection p = track.project({v.x, v.y});
  const double heading_error = wrap_angle(v.yaw - p.smooth_heading);
  double tau = -c.pd_gain_offset * p.signed_distance - c.pd_gain_heading * heading_error;
  if (c.torque_noise_std > 0.0) tau += std::normal_distribution<double>(0.0, c.torque_noise_std)(rng);
  return std::clamp(tau, -c.max_torque, c.max_torque);
}

/// Gaze point around the attended screen's centre; the screen tag follows the
/// half-plane the point lands in.
template <class Rng>
GazePoint gaze_sample(double t, const AttentionState& a, const OperatorConfig& c, Rng& rng) {
  const Vec2 center = a.focus == Focus::on_road ? kDrivingCenter : kSurveillanceCenter;
  GazePoint g{t, center.x, center.y, Screen::driving};
  if (c.gaze_cluster_std > 0.0) {
    std::normal_distribution<double> z(0.0, c.gaze_cluster_std);
    g.x += z(rng);
    g.y += z(rng);
  }
  g.screen = screen_of(g.x);
  return g;
}

/// Operator with one generator per channel, so that e.g. the number of torque
/// noise draws never shifts the gaze stream.
class Operator {
 public:
  Operator(OperatorConfig config, std::vector<Stimulus> stimuli, double initial_interval)
      : config_(config),
        stream_(std::move(stimuli), initial_interval),
        attention_rng_(channel_seed(0)),
        torque_rng_(channel_seed(1)),
        gaze_rng_(channel_seed(2)),
        detection_rng_(channel_seed(3)) {
    config_.validate();
    attention_ = initial_attention(config_, stream_.interval, attention_rng_);
  }

  void step_attention(double now, double dt) {
    attention_ = attention_step(attention_, stream_, now, dt, config_, attention_rng_, detection_rng_);
  }
  double torque(const VehicleState& v, const Track& true_centerline) {
    return operator_torque(v, true_centerline, attention_, config_, torque_rng_);
  }
  GazePoint gaze(double t) { return gaze_sample(t, attention_, config_, gaze_rng_); }

  const AttentionState& attention() const { return attention_; }
  const SurveillanceStream& stream() const { return stream_; }
  const OperatorConfig& config() const { return config_; }

 private:
  std::uint64_t channel_seed(std::uint32_t channel) const {
    std::seed_seq seq{static_cast<std::uint32_t>(config_.seed), static_cast<std::uint32_t>(config_.seed >> 32), channel};
    std::uint32_t words[2];
    seq.generate(words, words + 2);
    return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
  }

  OperatorConfig config_;
  SurveillanceStream stream_;
  AttentionState attention_;
  std::mt19937_64 attention_rng_;
  std::mt19937_64 torque_rng_;
  std::mt19937_64 gaze_rng_;
  std::mt19937_64 detection_rng_;
};

/// True when plant tick k (at 100 Hz) carries a 30 Hz gaze sample: exactly 30
/// of every 100 ticks, spaced 3 or 4 ticks apart.
inline bool gaze_tick(long long k) { return k == 0 || (k * 3) / 10 != ((k - 1) * 3) / 10; }

inline constexpr double kPlantDt = 0.01;  // s

/// Gaze log of an operator following `schedule`, without a vehicle in the loop.
inline std::vector<GazePoint> simulate_gaze(const OperatorConfig& config, const std::vector<UrgencySegment>& schedule,
                                            double duration) {
  Operator op(config, stimulus_schedule(schedule, duration), schedule.front().interval);
  std::vector<GazePoint> out;
  const auto ticks = static_cast<long long>(std::llround(duration / kPlantDt));
  for (long long k = 0; k < ticks; ++k) {
    const double t = static_cast<double>(k) * kPlantDt;
    if (gaze_tick(k)) out.push_back(op.gaze(t));
    op.step_attention(t, kPlantDt);
  }
  return out;
}

}  // namespace hsc
