#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "hsc/hsc.hpp"

namespace {

using nlohmann::ordered_json;

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  std::string scheme;
  bool clamp_beta = false;
  std::string models;
  std::string track;
  std::optional<unsigned> threads;
};

void add_common(CLI::App* sub, CommonOptions& o) {
  sub->add_option("--config", o.config, "INI configuration file")->check(CLI::ExistingFile);
  sub->add_option("--seed", o.seed, "seed applied to every stochastic component");
  sub->add_option("--out", o.out, "output directory (created if missing)");
  sub->add_option("--scheme", o.scheme, "assistance scheme")->check(CLI::IsMember({"adaptive", "non-adaptive"}));
  sub->add_flag("--clamp-beta", o.clamp_beta, "limit the assistance level to [0, 1]");
  sub->add_option("--models", o.models, "HMM model pair (JSON)");
  sub->add_option("--track", o.track, "bundled track id or path to an x,y CSV");
  sub->add_option("--threads", o.threads, "worker threads")->check(CLI::PositiveNumber);
}

hsc::HarnessConfig resolve(const CommonOptions& o) {
  hsc::HarnessConfig c = o.config.empty() ? hsc::HarnessConfig{} : hsc::load_config(o.config);
  if (o.seed) c.set_seed(*o.seed);
  if (!o.scheme.empty()) c.scenario.scheme = hsc::scheme_from_string(o.scheme);
  if (o.clamp_beta) c.scenario.clamp_beta = true;
  if (!o.models.empty()) c.models_path = o.models;
  if (!o.track.empty()) c.scenario.track_id = c.experiment_track = o.track;
  if (o.threads) c.threads = c.training.threads = *o.threads;
  c.training.threads = c.threads;
  c.validate();
  return c;
}

std::string output_path(const CommonOptions& o, const std::string& name) {
  std::error_code ec;
  std::filesystem::create_directories(o.out, ec);
  if (ec) throw hsc::Error("io", "cannot create output directory " + o.out + ": " + ec.message());
  return (std::filesystem::path(o.out) / name).string();
}

std::string dump(const ordered_json& j) { return j.dump(2) + "\n"; }

ordered_json mean_se_json(const hsc::MeanSe& m) { return {{"mean", m.mean}, {"se", m.se}}; }

ordered_json sweep_json(const hsc::StateCountSweep& s) {
  ordered_json rows = ordered_json::array();
  for (std::size_t i = 0; i < s.n_states.size(); ++i) rows.push_back({{"n_states", s.n_states[i]}, {"bic", s.bic[i]}});
  return {{"selected", s.best}, {"sweep", rows}};
}

void train_hmm(const CommonOptions& o) {
  const hsc::HarnessConfig c = resolve(o);
  const hsc::TrainingReport rep = hsc::train_and_bundle_hmms(c.training);
  hsc::write_model_pair(output_path(o, "hmm_models.json"), rep.models);
  ordered_json j;
  j["seed"] = c.seed;
  j["windows"] = rep.windows;
  j["moderate"] = sweep_json(rep.moderate_sweep);
  j["high"] = sweep_json(rep.high_sweep);
  hsc::write_text_file(output_path(o, "training.json"), dump(j));
}

void eval_hmm(const CommonOptions& o, const std::string& gaze_path) {
  const hsc::HarnessConfig c = resolve(o);
  if (gaze_path.empty()) {
    const auto corpus = hsc::generate_corpus(c.training.corpus);
    const hsc::HoldoutReport rep = hsc::holdout_evaluate(corpus, c.holdout);
    ordered_json j;
    j["seed"] = c.seed;
    j["participants"] = corpus.size();
    j["runs"] = rep.runs.size();
    j["holdout_size"] = c.holdout.holdout_size;
    j["n_states"] = c.holdout.n_states;
    j["precision"] = mean_se_json(rep.precision);
    j["recall"] = mean_se_json(rep.recall);
    j["f1"] = mean_se_json(rep.f1);
    hsc::write_text_file(output_path(o, "eval.json"), dump(j));
    return;
  }
  const hsc::ModelPair models = hsc::read_model_pair(c.models_path);
  std::ifstream in(gaze_path, std::ios::binary);
  if (!in) throw hsc::Error("io", "cannot read gaze file " + gaze_path);
  const auto windows = hsc::split_windows(hsc::read_gaze_csv(in));
  std::ostringstream csv;
  csv << "window,start,end,log_likelihood_moderate,log_likelihood_high,label,workload,eyes_on_road\n";
  int high = 0;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const auto& w = windows[i];
    const double lm = hsc::log_likelihood(models.moderate, w), lh = hsc::log_likelihood(models.high, w);
    const hsc::WorkloadLabel label = hsc::classify_log_likelihoods(lm, lh);
    high += label == hsc::WorkloadLabel::high;
    char buf[320];
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%s,%g,%.17g\n", i, w.points().front().timestamp,
                  w.points().back().timestamp, lm, lh, hsc::to_string(label), hsc::workload_value(label),
                  hsc::eyes_on_road(w));
    csv << buf;
  }
  hsc::write_text_file(output_path(o, "windows.csv"), csv.str());
  ordered_json j;
  j["windows"] = windows.size();
  j["high"] = high;
  j["moderate"] = static_cast<int>(windows.size()) - high;
  hsc::write_text_file(output_path(o, "eval.json"), dump(j));
}

void plan(const CommonOptions& o) {
  const hsc::HarnessConfig c = resolve(o);
  const hsc::ScenarioConfig& s = c.scenario;
  const hsc::Track centerline = hsc::load_track(s.track_id);
  const hsc::Track reference = s.localization_offset == 0.0 ? centerline : centerline.offset(s.localization_offset);
  const hsc::Projection start = centerline.project(centerline.point_at(0.0));
  hsc::VehicleState x0;
  x0.x = start.foot.x;
  x0.y = start.foot.y;
  x0.yaw = start.smooth_heading;
  const hsc::PlanResult r = hsc::solve_ocp(x0, reference, s.vehicle, s.planner);
  std::ostringstream csv;
  csv << "t,steering_angle\n";
  for (const auto& sample : r.commands.samples) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%.2f,%.17g\n", sample.t_offset, sample.steering_angle);
    csv << buf;
  }
  hsc::write_text_file(output_path(o, "plan.csv"), csv.str());
  ordered_json nodes = ordered_json::array();
  for (const auto& n : r.node_states) nodes.push_back({n.x, n.y, n.yaw, n.steering_angle});
  ordered_json j;
  j["track"] = s.track_id;
  j["localization_offset"] = s.localization_offset;
  j["converged"] = r.commands.converged;
  j["iterations"] = r.commands.iterations;
  j["cost"] = r.commands.cost;
  j["node_states"] = nodes;
  hsc::write_text_file(output_path(o, "plan.json"), dump(j));
}

void simulate(const CommonOptions& o) {
  const hsc::HarnessConfig c = resolve(o);
  const hsc::ModelPair models = hsc::read_model_pair(c.models_path);
  const hsc::RunResult r = hsc::run_scenario(c.scenario, models);
  std::ostringstream csv;
  hsc::write_run_csv(csv, r);
  hsc::write_text_file(output_path(o, "run.csv"), csv.str());
  hsc::write_text_file(output_path(o, "metrics.json"), hsc::metrics_json(r));
}

void experiment(const CommonOptions& o) {
  const hsc::HarnessConfig c = resolve(o);
  const hsc::ModelPair models = hsc::read_model_pair(c.models_path);
  const hsc::ExperimentResult r = hsc::experiment2(c.experiment(), models);
  hsc::write_text_file(output_path(o, "experiment.csv"), hsc::experiment_csv(r));
  hsc::write_text_file(output_path(o, "experiment.json"), hsc::experiment_json(r));
}

int report(const std::string& code, const std::string& message, int status) {
  const ordered_json j = {{"error", {{"code", code}, {"message", message}}}};
  std::cerr << j.dump() << std::endl;
  return status;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Workload-adaptive haptic shared control simulator"};
  app.require_subcommand(1);
  CommonOptions opts;
  std::string gaze;

  auto* train = app.add_subcommand("train-hmm", "generate a synthetic gaze corpus and train the HMM pair");
  auto* eval = app.add_subcommand("eval-hmm", "holdout evaluation, or classify the windows of a gaze log");
  auto* pl = app.add_subcommand("plan", "solve one planning horizon from the track start");
  auto* sim = app.add_subcommand("simulate", "run one closed-loop scenario");
  auto* exp = app.add_subcommand("experiment", "run the scheme x urgency-order condition grid");
  for (auto* sub : {train, eval, pl, sim, exp}) add_common(sub, opts);
  eval->add_option("--gaze", gaze, "gaze CSV (timestamp,x,y,screen) to classify")->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report("usage", e.what(), 2);
  }

  try {
    if (*train) train_hmm(opts);
    else if (*eval) eval_hmm(opts, gaze);
    else if (*pl) plan(opts);
    else if (*sim) simulate(opts);
    else if (*exp) experiment(opts);
  } catch (const hsc::Error& e) {
    return report(e.code(), e.what(), 1);
  } catch (const std::exception& e) {
    return report("internal", e.what(), 1);
  }
  return 0;
}
