#pragma once

/**
 * @file
 * @brief Synthetic gaze corpus and HMM training, and the 2 x 2 condition grid
 * {adaptive, non-adaptive} x {1.5 s then 6.5 s, 6.5 s then 1.5 s} run over
 * seeds with per-cell mean and standard error.
 */

#include <algorithm>
#include <atomic>
#include <map>
#include <mutex>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "hsc/hmm.hpp"
#include "hsc/operator_model.hpp"
#include "hsc/sim.hpp"

namespace hsc {

inline constexpr double kHighUrgency = 1.5;      // s between stimuli
inline constexpr double kModerateUrgency = 6.5;  // s between stimuli

/// Runs `count` independent jobs on up to `threads` workers; results are
/// stored by index so the gather order never depends on completion order.
template <class Result, class Job>
std::vector<Result> parallel_map(std::size_t count, unsigned threads, Job job) {
  std::vector<Result> out(count);
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < count;) {
      try {
        out[i] = job(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const unsigned n = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(count)));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned k = 0; k < n; ++k) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

inline unsigned default_threads() { return std::max(1u, std::thread::hardware_concurrency()); }

/// Deterministic 64-bit seed from a base seed and a list of indices.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint32_t> indices) {
  std::vector<std::uint32_t> v{static_cast<std::uint32_t>(base), static_cast<std::uint32_t>(base >> 32)};
  v.insert(v.end(), indices.begin(), indices.end());
  std::seed_seq seq(v.begin(), v.end());
  std::uint32_t w[2];
  seq.generate(w, w + 2);
  return (static_cast<std::uint64_t>(w[0]) << 32) | w[1];
}

// --- gaze corpus and HMM training --------------------------------------------

struct CorpusConfig {
  int participants = 12;
  std::vector<std::string> tracks = tracks::bundled_ids();
  int windows_per_track = 5;
  double session_duration = 60.0;   // s of gaze per participant, track and urgency
  double participant_spread = 0.10; // log-normal spread of individual glance means
  std::uint64_t seed = 0;
  OperatorConfig operator_config;

  void validate() const {
    require(participants >= 1, "corpus needs at least one participant");
    require(!tracks.empty(), "corpus needs at least one track");
    require(windows_per_track >= 1, "corpus needs at least one window per track");
    require(session_duration * kGazeRate >= windows_per_track * static_cast<double>(kWindowLength),
            "session too short for the requested number of windows");
    require(participant_spread >= 0.0, "participant spread must be non-negative");
    operator_config.validate();
  }
};

/// Labelled windows per simulated participant: for every track and both
/// urgencies, a gaze session is simulated and `windows_per_track` of its
/// non-overlapping 4 s windows are drawn at random.
inline std::vector<Participant> generate_corpus(const CorpusConfig& c) {
  c.validate();
  std::vector<Participant> out;
  for (int p = 0; p < c.participants; ++p) {
    std::mt19937_64 person_rng(derive_seed(c.seed, {0u, static_cast<std::uint32_t>(p)}));
    std::lognormal_distribution<double> spread(0.0, c.participant_spread);
    OperatorConfig oc = c.operator_config;
    if (c.participant_spread > 0.0) {
      oc.glance_mean_on_road *= spread(person_rng);
      oc.glance_mean_surveillance_base *= spread(person_rng);
    }
    Participant part;
    char id[16];
    std::snprintf(id, sizeof id, "P%02d", p + 1);
    part.id = id;
    for (std::size_t j = 0; j < c.tracks.size(); ++j)
      for (int cls = 0; cls < 2; ++cls) {
        const double interval = cls == 0 ? kModerateUrgency : kHighUrgency;
        oc.seed = derive_seed(c.seed, {1u, static_cast<std::uint32_t>(p), static_cast<std::uint32_t>(j),
                                       static_cast<std::uint32_t>(cls)});
        const auto windows = split_windows(simulate_gaze(oc, {{0.0, interval}}, c.session_duration));
        std::vector<std::size_t> idx(windows.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        std::mt19937_64 pick(oc.seed ^ 0x9e3779b97f4a7c15ULL);
        std::shuffle(idx.begin(), idx.end(), pick);
        idx.resize(static_cast<std::size_t>(c.windows_per_track));
        std::sort(idx.begin(), idx.end());
        for (std::size_t i : idx)
          part.windows.push_back({windows[i], cls == 0 ? WorkloadLabel::moderate : WorkloadLabel::high});
      }
    out.push_back(std::move(part));
  }
  return out;
}

inline std::vector<std::vector<Vec2>> class_features(const std::vector<Participant>& corpus, WorkloadLabel label) {
  std::vector<std::vector<Vec2>> out;
  for (const Participant& p : corpus)
    for (const LabeledWindow& w : p.windows)
      if (w.label == label) out.push_back(w.window.features());
  return out;
}

struct TrainingConfig {
  CorpusConfig corpus;
  int min_states = 2;
  int max_states = 10;
  EmOptions em;
  unsigned threads = default_threads();

  void validate() const {
    corpus.validate();
    require(min_states >= 1 && max_states >= min_states && max_states <= 10, "state-count sweep must lie in [1, 10]");
  }
};

struct TrainingReport {
  ModelPair models;
  StateCountSweep moderate_sweep;
  StateCountSweep high_sweep;
  std::size_t windows = 0;
};

/// Sweeps the state count for each class in parallel (one job per class and
/// count) and keeps the BIC minimiser of each.
inline TrainingReport train_and_bundle_hmms(const TrainingConfig& c) {
  c.validate();
  const std::vector<Participant> corpus = generate_corpus(c.corpus);
  const std::vector<std::vector<Vec2>> data[2] = {class_features(corpus, WorkloadLabel::moderate),
                                                  class_features(corpus, WorkloadLabel::high)};
  const int span = c.max_states - c.min_states + 1;
  const auto fits = parallel_map<EmResult>(static_cast<std::size_t>(2 * span), c.threads, [&](std::size_t i) {
    return em_train(data[i / span], c.min_states + static_cast<int>(i % span), c.em);
  });
  TrainingReport rep;
  for (int cls = 0; cls < 2; ++cls) {
    StateCountSweep& sw = cls == 0 ? rep.moderate_sweep : rep.high_sweep;
    double best = INFINITY;
    for (int k = 0; k < span; ++k) {
      const EmResult& r = fits[static_cast<std::size_t>(cls * span + k)];
      const double b = bic(r.model, data[cls]);
      sw.n_states.push_back(c.min_states + k);
      sw.bic.push_back(b);
      if (b < best) {
        best = b;
        sw.best = c.min_states + k;
        sw.best_fit = r;
      }
    }
  }
  rep.models = {rep.moderate_sweep.best_fit.model, rep.high_sweep.best_fit.model};
  rep.windows = data[0].size() + data[1].size();
  return rep;
}

// --- experiment grid ---------------------------------------------------------

/// Scenario template of the condition grid: the mixed track, which has both
/// straights and curves of either hand.
inline ScenarioConfig experiment_base() {
  ScenarioConfig s;
  s.track_id = "mixed";
  return s;
}

struct ExperimentConfig {
  ScenarioConfig base = experiment_base();  // scheme, urgency schedule and seed are set per run
  int seeds = 10;
  std::uint64_t seed = 0;
  double duration = 180.0;
  unsigned threads = default_threads();

  void validate() const {
    require(seeds >= 1, "experiment needs at least one seed");
    require(duration > 0.0, "experiment duration must be positive");
    base.validate();
  }
};

struct Condition {
  Scheme scheme;
  double first_interval;   // urgency in the first half
  double second_interval;  // urgency in the second half
  std::string order() const {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f->%.1f", first_interval, second_interval);
    return buf;
  }
};

inline std::vector<Condition> experiment_conditions() {
  return {{Scheme::adaptive, kHighUrgency, kModerateUrgency},
          {Scheme::adaptive, kModerateUrgency, kHighUrgency},
          {Scheme::non_adaptive, kHighUrgency, kModerateUrgency},
          {Scheme::non_adaptive, kModerateUrgency, kHighUrgency}};
}

inline const std::vector<std::string>& experiment_metric_names() {
  static const std::vector<std::string> names{"lane_keeping_error", "mean_operator_torque", "detection_accuracy",
                                              "min_tire_load",      "mean_beta",            "mean_workload",
                                              "mean_eyes_on_road",  "converged_plans"};
  return names;
}

inline std::optional<double> metric_value(const Metrics& m, const std::string& name) {
  if (name == "lane_keeping_error") return m.lane_keeping_error;
  if (name == "mean_operator_torque") return m.mean_operator_torque;
  if (name == "detection_accuracy") return m.detection_accuracy;
  if (name == "min_tire_load") return m.min_tire_load;
  if (name == "mean_beta") return m.mean_beta;
  if (name == "mean_workload") return m.mean_workload;
  if (name == "mean_eyes_on_road") return m.mean_eyes_on_road;
  if (name == "converged_plans") return m.converged_plans;
  throw Error("invalid_argument", "unknown metric " + name);
}

struct CellStat {
  std::string scheme;
  std::string order;  // "pooled" for summaries over both orders
  double urgency = 0.0;
  std::string metric;
  int n = 0;
  double mean = 0.0;
  double se = 0.0;
};

struct ExperimentResult {
  std::vector<Condition> conditions;
  std::vector<std::vector<RunResult>> runs;  // [condition][seed]
  std::vector<CellStat> cells;               // condition x half x metric
  std::vector<CellStat> summary;             // scheme x urgency x metric, both orders pooled
};

inline ScenarioConfig condition_scenario(const ExperimentConfig& c, const Condition& cond, int seed_index) {
  ScenarioConfig s = c.base;
  s.scheme = cond.scheme;
  s.duration = c.duration;
  s.urgency_schedule = {{0.0, cond.first_interval}, {0.5 * c.duration, cond.second_interval}};
  s.seed = c.seed + static_cast<std::uint64_t>(seed_index);
  return s;
}

/// Runs every condition over `seeds` seeds. Seed i is shared by all four
/// conditions so that schemes are compared on the same operator draws.
inline ExperimentResult experiment2(const ExperimentConfig& c, const ModelPair& models) {
  c.validate();
  ExperimentResult res;
  res.conditions = experiment_conditions();
  const std::size_t nc = res.conditions.size(), ns = static_cast<std::size_t>(c.seeds);
  auto flat = parallel_map<RunResult>(nc * ns, c.threads, [&](std::size_t i) {
    return run_scenario(condition_scenario(c, res.conditions[i / ns], static_cast<int>(i % ns)), models);
  });
  res.runs.resize(nc);
  for (std::size_t i = 0; i < flat.size(); ++i) res.runs[i / ns].push_back(std::move(flat[i]));

  const auto stat = [](const std::vector<double>& v) { return mean_se(v); };
  for (std::size_t ci = 0; ci < nc; ++ci)
    for (int half = 0; half < 2; ++half) {
      const double urgency = half == 0 ? res.conditions[ci].first_interval : res.conditions[ci].second_interval;
      for (const std::string& name : experiment_metric_names()) {
        std::vector<double> v;
        for (const RunResult& r : res.runs[ci])
          if (r.segments.size() == 2)
            if (auto x = metric_value(r.segments[static_cast<std::size_t>(half)].metrics, name)) v.push_back(*x);
        const MeanSe m = stat(v);
        res.cells.push_back({to_string(res.conditions[ci].scheme), res.conditions[ci].order(), urgency, name,
                             static_cast<int>(v.size()), m.mean, m.se});
      }
    }
  for (Scheme scheme : {Scheme::adaptive, Scheme::non_adaptive})
    for (double urgency : {kHighUrgency, kModerateUrgency})
      for (const std::string& name : experiment_metric_names()) {
        std::vector<double> v;
        for (std::size_t ci = 0; ci < nc; ++ci) {
          if (res.conditions[ci].scheme != scheme) continue;
          const std::size_t half = res.conditions[ci].first_interval == urgency ? 0 : 1;
          for (const RunResult& r : res.runs[ci])
            if (r.segments.size() == 2)
              if (auto x = metric_value(r.segments[half].metrics, name)) v.push_back(*x);
        }
        const MeanSe m = stat(v);
        res.summary.push_back({to_string(scheme), "pooled", urgency, name, static_cast<int>(v.size()), m.mean, m.se});
      }
  return res;
}

/// Summary statistic for a scheme, urgency and metric.
inline const CellStat& summary_stat(const ExperimentResult& r, Scheme scheme, double urgency, const std::string& metric) {
  for (const CellStat& s : r.summary)
    if (s.scheme == to_string(scheme) && s.urgency == urgency && s.metric == metric) return s;
  throw Error("invalid_argument", "no summary cell for " + metric);
}

inline std::string experiment_csv(const ExperimentResult& r) {
  std::ostringstream o;
  o << "scheme,order,urgency,metric,n,mean,se\n";
  char buf[160];
  for (const auto* list : {&r.cells, &r.summary})
    for (const CellStat& s : *list) {
      std::snprintf(buf, sizeof buf, "%s,%s,%.1f,%s,%d,%.17g,%.17g\n", s.scheme.c_str(), s.order.c_str(), s.urgency,
                    s.metric.c_str(), s.n, s.mean, s.se);
      o << buf;
    }
  return o.str();
}

inline std::string experiment_json(const ExperimentResult& r) {
  std::ostringstream o;
  const auto cells = [&](const std::vector<CellStat>& v) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      const CellStat& s = v[i];
      char buf[96];
      std::snprintf(buf, sizeof buf, "%.1f", s.urgency);
      o << (i ? ",\n" : "\n") << "    {\"scheme\": \"" << s.scheme << "\", \"order\": \"" << s.order
        << "\", \"urgency\": " << buf << ", \"metric\": \"" << s.metric << "\", \"n\": " << s.n
        << ", \"mean\": " << detail::json_number(s.mean) << ", \"se\": " << detail::json_number(s.se) << "}";
    }
  };
  std::size_t runs = 0;
  for (const auto& v : r.runs) runs += v.size();
  o << "{\n  \"runs\": " << runs << ",\n  \"cells\": [";
  cells(r.cells);
  o << "\n  ],\n  \"summary\": [";
  cells(r.summary);
  o << "\n  ]\n}\n";
  return o.str();
}

}  // namespace hsc
