#pragma once

/**
 * @file
 * @brief Harness configuration: an INI file with one section per module.
 *
 * Sections and keys:
 *
 *   [vehicle]   mass, yaw_inertia, dist_front, dist_rear,
 *               cornering_stiffness_front, cornering_stiffness_rear,
 *               cg_height, track_width, forward_speed, gravity
 *   [planner]   horizon, intervals, weight_tracking, weight_steer_rate,
 *               weight_load, tracking_lookahead, load_threshold, load_scale,
 *               steering_bound, steer_rate_bound, execute_duration,
 *               sample_period, bound_penalty, max_iterations,
 *               gradient_tolerance, latency
 *   [haptic]    kp, ki, kd, output_limit, integral_limit, wheel_inertia,
 *               wheel_damping, wheel_stiffness, clamp_beta, forced_beta
 *   [workload]  models, update_period, smoothing_window, prior_workload,
 *               min_states, max_states, max_iter, tol, covariance_floor,
 *               participants, windows_per_track, session_duration,
 *               participant_spread, holdout_runs, holdout_size,
 *               holdout_states
 *   [operator]  enabled, pd_gain_offset, pd_gain_heading, torque_noise_std,
 *               reaction_delay, glance_mean_on_road,
 *               glance_mean_surveillance_base, gaze_cluster_std,
 *               detection_base_prob, detection_dwell_gain, max_torque
 *   [sim]       track, scheme, urgency, duration, localization_offset, seed,
 *               threads, experiment_track, experiment_seeds,
 *               experiment_duration
 *
 * `urgency` is a comma-separated list of start:interval pairs, for example
 * `0:1.5, 90:6.5`. Unknown sections or keys and malformed values are errors.
 * Missing planner load_threshold / load_scale follow the vehicle's static
 * rear load.
 */

#include <charconv>
#include <fstream>
#include <cstdint>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "hsc/error.hpp"
#include "hsc/experiment.hpp"
#include "hsc/hmm.hpp"
#include "hsc/sim.hpp"

namespace hsc {

struct HarnessConfig {
  ScenarioConfig scenario;
  std::string experiment_track = experiment_base().track_id;
  int experiment_seeds = 10;
  double experiment_duration = 180.0;
  unsigned threads = default_threads();
  TrainingConfig training;
  HoldoutOptions holdout;
  std::string models_path = default_model_path();
  std::uint64_t seed = 0;

  /// Applies one seed to every stochastic component.
  void set_seed(std::uint64_t s) {
    seed = s;
    scenario.seed = s;
    training.corpus.seed = s;
    training.em.seed = s;
    holdout.seed = s;
    holdout.em.seed = s;
  }

  ExperimentConfig experiment() const {
    ExperimentConfig e;
    e.base = scenario;
    e.base.track_id = experiment_track;
    e.seeds = experiment_seeds;
    e.seed = seed;
    e.duration = experiment_duration;
    e.threads = threads;
    return e;
  }

  void validate() const {
    scenario.validate();
    training.validate();
    experiment().validate();
    require(threads >= 1, "thread count must be at least one");
    require(holdout.n_runs >= 1 && holdout.holdout_size >= 1, "holdout needs a positive run count and size");
    require(holdout.n_states >= 1 && holdout.n_states <= 10, "holdout state count must lie in [1, 10]");
  }
};

namespace detail {

[[noreturn]] inline void config_error(const std::string& msg) { throw Error("config", msg); }

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& key, const std::string& raw) {
  const std::string s = trim(raw);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v))
    config_error("key " + key + ": expected a finite number, got '" + raw + "'");
  return v;
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& raw) {
  const std::string s = trim(raw);
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size())
    config_error("key " + key + ": expected a non-negative integer, got '" + raw + "'");
  return v;
}

inline int parse_int(const std::string& key, const std::string& raw) {
  const std::uint64_t v = parse_u64(key, raw);
  if (v > 1000000000ULL) config_error("key " + key + ": value too large");
  return static_cast<int>(v);
}

inline bool parse_bool(const std::string& key, const std::string& raw) {
  const std::string s = trim(raw);
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  config_error("key " + key + ": expected true or false, got '" + raw + "'");
}

inline std::vector<UrgencySegment> parse_schedule(const std::string& key, const std::string& raw) {
  std::vector<UrgencySegment> out;
  std::stringstream ss(raw);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) config_error("key " + key + ": expected start:interval pairs, got '" + raw + "'");
    out.push_back({parse_double(key, item.substr(0, colon)), parse_double(key, item.substr(colon + 1))});
  }
  if (out.empty()) config_error("key " + key + ": empty urgency schedule");
  return out;
}

using Setter = std::function<void(const std::string&)>;
using SectionTable = std::map<std::string, std::map<std::string, Setter>>;

inline SectionTable config_table(HarnessConfig& c, bool& load_threshold_set, bool& load_scale_set) {
  SectionTable t;
  const auto num = [](double& field, const std::string& k) {
    return Setter([&field, k](const std::string& v) { field = parse_double(k, v); });
  };
  const auto integer = [](int& field, const std::string& k) {
    return Setter([&field, k](const std::string& v) { field = parse_int(k, v); });
  };
  const auto flag = [](bool& field, const std::string& k) {
    return Setter([&field, k](const std::string& v) { field = parse_bool(k, v); });
  };

  ScenarioConfig& s = c.scenario;
  VehicleParams& v = s.vehicle;
  t["vehicle"] = {{"mass", num(v.mass, "vehicle.mass")},
                  {"yaw_inertia", num(v.yaw_inertia, "vehicle.yaw_inertia")},
                  {"dist_front", num(v.dist_front, "vehicle.dist_front")},
                  {"dist_rear", num(v.dist_rear, "vehicle.dist_rear")},
                  {"cornering_stiffness_front", num(v.cornering_stiffness_front, "vehicle.cornering_stiffness_front")},
                  {"cornering_stiffness_rear", num(v.cornering_stiffness_rear, "vehicle.cornering_stiffness_rear")},
                  {"cg_height", num(v.cg_height, "vehicle.cg_height")},
                  {"track_width", num(v.track_width, "vehicle.track_width")},
                  {"forward_speed", num(v.forward_speed, "vehicle.forward_speed")},
                  {"gravity", num(v.gravity, "vehicle.gravity")}};

  OcpConfig& p = s.planner;
  t["planner"] = {
      {"horizon", num(p.horizon, "planner.horizon")},
      {"intervals", integer(p.intervals, "planner.intervals")},
      {"weight_tracking", num(p.weight_tracking, "planner.weight_tracking")},
      {"weight_steer_rate", num(p.weight_steer_rate, "planner.weight_steer_rate")},
      {"weight_load", num(p.weight_load, "planner.weight_load")},
      {"tracking_lookahead", num(p.tracking_lookahead, "planner.tracking_lookahead")},
      {"load_threshold",
       [&p, &load_threshold_set](const std::string& x) {
         p.load_threshold = parse_double("planner.load_threshold", x);
         load_threshold_set = true;
       }},
      {"load_scale",
       [&p, &load_scale_set](const std::string& x) {
         p.load_scale = parse_double("planner.load_scale", x);
         load_scale_set = true;
       }},
      {"steering_bound",
       [&p, &s](const std::string& x) {
         p.steering_bound = s.wheel.steering_bound = parse_double("planner.steering_bound", x);
       }},
      {"steer_rate_bound", num(p.steer_rate_bound, "planner.steer_rate_bound")},
      {"execute_duration", num(p.execute_duration, "planner.execute_duration")},
      {"sample_period", num(p.sample_period, "planner.sample_period")},
      {"bound_penalty", num(p.bound_penalty, "planner.bound_penalty")},
      {"max_iterations", integer(p.max_iterations, "planner.max_iterations")},
      {"gradient_tolerance", num(p.gradient_tolerance, "planner.gradient_tolerance")},
      {"latency", num(s.planner_latency, "planner.latency")}};

  t["haptic"] = {{"kp", num(s.pid.kp, "haptic.kp")},
                 {"ki", num(s.pid.ki, "haptic.ki")},
                 {"kd", num(s.pid.kd, "haptic.kd")},
                 {"output_limit", num(s.pid.output_limit, "haptic.output_limit")},
                 {"integral_limit", num(s.pid.integral_limit, "haptic.integral_limit")},
                 {"wheel_inertia", num(s.wheel.inertia, "haptic.wheel_inertia")},
                 {"wheel_damping", num(s.wheel.damping, "haptic.wheel_damping")},
                 {"wheel_stiffness", num(s.wheel.stiffness, "haptic.wheel_stiffness")},
                 {"clamp_beta", flag(s.clamp_beta, "haptic.clamp_beta")},
                 {"forced_beta", [&s](const std::string& x) {
                    if (trim(x) == "none") s.forced_beta.reset();
                    else s.forced_beta = parse_double("haptic.forced_beta", x);
                  }}};

  TrainingConfig& tr = c.training;
  t["workload"] = {
      {"models", [&c](const std::string& x) { c.models_path = trim(x); }},
      {"update_period", num(s.estimator.update_period, "workload.update_period")},
      {"smoothing_window", num(s.estimator.smoothing_window, "workload.smoothing_window")},
      {"prior_workload", num(s.estimator.prior_workload, "workload.prior_workload")},
      {"min_states", integer(tr.min_states, "workload.min_states")},
      {"max_states", integer(tr.max_states, "workload.max_states")},
      {"max_iter",
       [&tr, &c](const std::string& x) { tr.em.max_iter = c.holdout.em.max_iter = parse_int("workload.max_iter", x); }},
      {"tol", [&tr, &c](const std::string& x) { tr.em.tol = c.holdout.em.tol = parse_double("workload.tol", x); }},
      {"covariance_floor",
       [&tr, &c](const std::string& x) {
         tr.em.covariance_floor = c.holdout.em.covariance_floor = parse_double("workload.covariance_floor", x);
       }},
      {"participants", integer(tr.corpus.participants, "workload.participants")},
      {"windows_per_track", integer(tr.corpus.windows_per_track, "workload.windows_per_track")},
      {"session_duration", num(tr.corpus.session_duration, "workload.session_duration")},
      {"participant_spread", num(tr.corpus.participant_spread, "workload.participant_spread")},
      {"holdout_runs", integer(c.holdout.n_runs, "workload.holdout_runs")},
      {"holdout_size", integer(c.holdout.holdout_size, "workload.holdout_size")},
      {"holdout_states", integer(c.holdout.n_states, "workload.holdout_states")}};

  OperatorConfig& o = s.operator_config;
  t["operator"] = {{"enabled", flag(s.operator_enabled, "operator.enabled")},
                   {"pd_gain_offset", num(o.pd_gain_offset, "operator.pd_gain_offset")},
                   {"pd_gain_heading", num(o.pd_gain_heading, "operator.pd_gain_heading")},
                   {"torque_noise_std", num(o.torque_noise_std, "operator.torque_noise_std")},
                   {"reaction_delay", num(o.reaction_delay, "operator.reaction_delay")},
                   {"glance_mean_on_road", num(o.glance_mean_on_road, "operator.glance_mean_on_road")},
                   {"glance_mean_surveillance_base",
                    num(o.glance_mean_surveillance_base, "operator.glance_mean_surveillance_base")},
                   {"gaze_cluster_std", num(o.gaze_cluster_std, "operator.gaze_cluster_std")},
                   {"detection_base_prob", num(o.detection_base_prob, "operator.detection_base_prob")},
                   {"detection_dwell_gain", num(o.detection_dwell_gain, "operator.detection_dwell_gain")},
                   {"max_torque", num(o.max_torque, "operator.max_torque")}};

  t["sim"] = {{"track", [&s](const std::string& x) { s.track_id = trim(x); }},
              {"scheme",
               [&s](const std::string& x) {
                 try {
                   s.scheme = scheme_from_string(trim(x));
                 } catch (const Error& e) {
                   config_error(std::string("key sim.scheme: ") + e.what());
                 }
               }},
              {"urgency", [&s](const std::string& x) { s.urgency_schedule = parse_schedule("sim.urgency", x); }},
              {"duration", num(s.duration, "sim.duration")},
              {"localization_offset", num(s.localization_offset, "sim.localization_offset")},
              {"seed", [&c](const std::string& x) { c.set_seed(parse_u64("sim.seed", x)); }},
              {"threads", [&c](const std::string& x) { c.threads = static_cast<unsigned>(parse_int("sim.threads", x)); }},
              {"experiment_track", [&c](const std::string& x) { c.experiment_track = trim(x); }},
              {"experiment_seeds", integer(c.experiment_seeds, "sim.experiment_seeds")},
              {"experiment_duration", num(c.experiment_duration, "sim.experiment_duration")}};
  return t;
}

}  // namespace detail

/// Parses INI text on top of the defaults.
inline HarnessConfig parse_config(const std::string& text) {
  boost::property_tree::ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    detail::config_error("line " + std::to_string(e.line()) + ": " + e.message());
  }
  HarnessConfig c;
  bool threshold_set = false, scale_set = false;
  auto table = detail::config_table(c, threshold_set, scale_set);
  for (const auto& [section, body] : tree) {
    const auto sec = table.find(section);
    if (sec == table.end()) {
      if (body.empty()) detail::config_error("key '" + section + "' outside any section");
      detail::config_error("unknown section [" + section + "]");
    }
    for (const auto& [key, value] : body) {
      const auto set = sec->second.find(key);
      if (set == sec->second.end()) detail::config_error("unknown key '" + key + "' in section [" + section + "]");
      if (!value.empty()) detail::config_error("nested key under " + section + "." + key);
      set->second(value.data());
    }
  }
  if (!threshold_set || !scale_set) {
    const OcpConfig derived = OcpConfig::defaults_for(c.scenario.vehicle);
    if (!threshold_set) c.scenario.planner.load_threshold = derived.load_threshold;
    if (!scale_set) c.scenario.planner.load_scale = derived.load_scale;
  }
  try {
    c.validate();
  } catch (const Error& e) {
    if (e.code() == "config") throw;
    detail::config_error(e.what());
  }
  return c;
}

inline HarnessConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("io", "cannot read config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

}  // namespace hsc
