#include <gtest/gtest.h>

#include <cmath>
#include <future>
#include <numbers>
#include <random>
#include <sstream>

#include "hsc/hmm.hpp"

namespace {

using hsc::Cov2;
using hsc::GaussianHmm;
using hsc::GazePoint;
using hsc::GazeWindow;
using hsc::Vec2;
using hsc::WorkloadLabel;

double density(Vec2 p, Vec2 mu, const Cov2& c) {
  const double det = c[0] * c[2] - c[1] * c[1];
  const double dx = p.x - mu.x, dy = p.y - mu.y;
  const double q = (c[2] * dx * dx - 2 * c[1] * dx * dy + c[0] * dy * dy) / det;
  return std::exp(-0.5 * q) / (2 * std::numbers::pi * std::sqrt(det));
}

// Sum over every hidden path of p(path) p(x | path).
double brute_force_likelihood(const GaussianHmm& h, const std::vector<Vec2>& x) {
  const int n = h.n_states;
  const int T = static_cast<int>(x.size());
  long long paths = 1;
  for (int t = 0; t < T; ++t) paths *= n;
  double total = 0.0;
  for (long long code = 0; code < paths; ++code) {
    long long c = code;
    double p = 1.0;
    int prev = -1;
    for (int t = 0; t < T; ++t) {
      const int s = static_cast<int>(c % n);
      c /= n;
      p *= prev < 0 ? h.initial[s] : h.transition[prev][s];
      p *= density(x[t], h.means[s], h.covariances[s]);
      prev = s;
    }
    total += p;
  }
  return total;
}

std::vector<double> random_simplex(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  std::vector<double> v(n);
  double s = 0.0;
  for (double& x : v) s += (x = u(rng));
  for (double& x : v) x /= s;
  return v;
}

GaussianHmm random_model(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> pos(0.0, 1.0), var(0.01, 0.05), corr(-0.8, 0.8);
  GaussianHmm h;
  h.n_states = n;
  h.initial = random_simplex(rng, n);
  for (int i = 0; i < n; ++i) {
    h.transition.push_back(random_simplex(rng, n));
    h.means.push_back({pos(rng), pos(rng)});
    const double sx = var(rng), sy = var(rng), r = corr(rng);
    h.covariances.push_back({sx, r * std::sqrt(sx * sy), sy});
  }
  return h;
}

// Two-state gaze model: driving and surveillance fixation centres.
GaussianHmm two_screen_model(double stay) {
  GaussianHmm h;
  h.n_states = 2;
  h.initial = {0.5, 0.5};
  h.transition = {{stay, 1 - stay}, {1 - stay, stay}};
  h.means = {{0.75, 0.5}, {0.25, 0.5}};
  h.covariances = {Cov2{0.004, 0.0, 0.004}, Cov2{0.004, 0.0, 0.004}};
  return h;
}

GazeWindow window_from(const std::vector<Vec2>& f, double t0 = 0.0) {
  std::vector<GazePoint> pts;
  for (std::size_t i = 0; i < f.size(); ++i)
    pts.push_back({t0 + static_cast<double>(i) / 30.0, f[i].x, f[i].y, hsc::screen_of(f[i].x)});
  return GazeWindow(pts);
}

std::vector<std::vector<Vec2>> sample_set(const GaussianHmm& h, int count, std::size_t T, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::vector<Vec2>> out;
  for (int i = 0; i < count; ++i) out.push_back(hsc::sample_sequence(h, T, rng));
  return out;
}

TEST(Forward, MatchesPathEnumeration) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> pos(-0.2, 1.2);
  for (int n = 1; n <= 3; ++n)
    for (int T = 1; T <= 6; ++T)
      for (int trial = 0; trial < 5; ++trial) {
        const GaussianHmm h = random_model(rng, n);
        std::vector<Vec2> x(T);
        for (Vec2& p : x) p = {pos(rng), pos(rng)};
        const double expected = std::log(brute_force_likelihood(h, x));
        EXPECT_NEAR(hsc::log_likelihood(h, x), expected, 1e-9 * std::abs(expected)) << n << " " << T;
      }
}

TEST(Forward, SingleStateIsSumOfLogDensities) {
  std::mt19937_64 rng(5);
  const GaussianHmm h = random_model(rng, 1);
  const auto x = hsc::sample_sequence(h, 120, rng);
  double expected = 0.0;
  for (const Vec2& p : x) expected += std::log(density(p, h.means[0], h.covariances[0]));
  EXPECT_NEAR(hsc::log_likelihood(h, x), expected, 1e-9 * std::abs(expected));
}

TEST(Forward, ImprobablePointLowersLikelihood) {
  const GaussianHmm h = two_screen_model(0.95);
  std::mt19937_64 rng(2);
  auto x = hsc::sample_sequence(h, 50, rng);
  const double before = hsc::log_likelihood(h, x);
  x.push_back({5.0, -5.0});
  EXPECT_LT(hsc::log_likelihood(h, x), before);
}

TEST(Forward, LongSequencesStayFinite) {
  const GaussianHmm h = two_screen_model(0.95);
  std::mt19937_64 rng(2);
  const auto x = hsc::sample_sequence(h, 20000, rng);
  EXPECT_TRUE(std::isfinite(hsc::log_likelihood(h, x)));
}

TEST(EmTrain, LogLikelihoodNonDecreasing) {
  const auto data = sample_set(two_screen_model(0.9), 20, 120, 3);
  for (int n : {2, 3, 5}) {
    hsc::EmOptions opt;
    opt.tol = 0.0;
    opt.max_iter = 60;
    const auto r = hsc::em_train(data, n, opt);
    ASSERT_GE(r.log_likelihood_history.size(), 2u);
    for (std::size_t i = 1; i < r.log_likelihood_history.size(); ++i)
      EXPECT_GE(r.log_likelihood_history[i] - r.log_likelihood_history[i - 1], -1e-8) << "n " << n << " it " << i;
  }
}

TEST(EmTrain, ParametersStayOnSimplexEveryIteration) {
  const auto data = sample_set(two_screen_model(0.8), 10, 120, 4);
  for (int iters = 0; iters <= 15; ++iters) {
    hsc::EmOptions opt;
    opt.tol = 0.0;
    opt.max_iter = iters;
    const GaussianHmm h = hsc::em_train(data, 3, opt).model;
    EXPECT_NO_THROW(h.validate()) << iters;
    for (const Cov2& c : h.covariances) {
      const double tr = c[0] + c[2], det = c[0] * c[2] - c[1] * c[1];
      const double lmin = 0.5 * tr - std::sqrt(std::max(0.0, 0.25 * tr * tr - det));
      EXPECT_GE(lmin, 1e-6 * (1 - 1e-9));
    }
  }
}

TEST(EmTrain, RecoversWellSeparatedMeans) {
  GaussianHmm truth = two_screen_model(0.9);
  // distance 0.5 against sigma 0.063: about 8 sigma
  const auto data = sample_set(truth, 30, 120, 9);
  const GaussianHmm h = hsc::em_train(data, 2, {}).model;
  const bool swapped = h.means[0].x < h.means[1].x;
  for (int j = 0; j < 2; ++j) {
    const Vec2 got = h.means[swapped ? 1 - j : j];
    EXPECT_NEAR(got.x, truth.means[j].x, 0.05);
    EXPECT_NEAR(got.y, truth.means[j].y, 0.05);
  }
  EXPECT_NEAR(h.transition[0][0], 0.9, 0.05);
}

TEST(EmTrain, SingleStateIsSampleMeanAndCovariance) {
  const auto data = sample_set(two_screen_model(0.7), 5, 120, 1);
  const GaussianHmm h = hsc::em_train(data, 1, {}).model;
  double n = 0, mx = 0, my = 0;
  for (const auto& s : data)
    for (const Vec2& p : s) {
      mx += p.x;
      my += p.y;
      ++n;
    }
  mx /= n;
  my /= n;
  double cxx = 0, cxy = 0, cyy = 0;
  for (const auto& s : data)
    for (const Vec2& p : s) {
      cxx += (p.x - mx) * (p.x - mx);
      cxy += (p.x - mx) * (p.y - my);
      cyy += (p.y - my) * (p.y - my);
    }
  EXPECT_NEAR(h.means[0].x, mx, 1e-12);
  EXPECT_NEAR(h.means[0].y, my, 1e-12);
  EXPECT_NEAR(h.covariances[0][0], cxx / n, 1e-12);
  EXPECT_NEAR(h.covariances[0][1], cxy / n, 1e-12);
  EXPECT_NEAR(h.covariances[0][2], cyy / n, 1e-12);
  EXPECT_DOUBLE_EQ(h.transition[0][0], 1.0);
}

TEST(EmTrain, DeterministicForFixedSeed) {
  const auto data = sample_set(two_screen_model(0.9), 10, 120, 21);
  hsc::EmOptions opt;
  opt.seed = 77;
  EXPECT_EQ(hsc::em_train(data, 3, opt).model, hsc::em_train(data, 3, opt).model);
}

TEST(EmTrain, DegenerateDataNamesTheDimension) {
  const auto expect_message = [](const std::vector<std::vector<Vec2>>& data, const std::string& needle) {
    try {
      hsc::em_train(data, 2, {});
      ADD_FAILURE() << "no error";
    } catch (const hsc::Error& e) {
      EXPECT_EQ(e.code(), "degenerate_data");
      EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    }
  };
  expect_message({std::vector<Vec2>(50, Vec2{0.3, 0.4})}, "x and y");
  std::vector<Vec2> const_x, const_y;
  for (int i = 0; i < 50; ++i) {
    const_x.push_back({0.3, 0.01 * i});
    const_y.push_back({0.01 * i, 0.4});
  }
  expect_message({const_x}, "dimension x");
  expect_message({const_y}, "dimension y");
}

TEST(EmTrain, RejectsBadArguments) {
  const auto data = sample_set(two_screen_model(0.9), 2, 120, 1);
  EXPECT_THROW(hsc::em_train({}, 2, {}), hsc::Error);
  EXPECT_THROW(hsc::em_train(data, 0, {}), hsc::Error);
  EXPECT_THROW(hsc::em_train(data, 11, {}), hsc::Error);
}

TEST(Bic, ParameterCount) {
  EXPECT_EQ(hsc::free_parameters(2), 13);
  EXPECT_EQ(hsc::free_parameters(1), 5);
  EXPECT_EQ(hsc::free_parameters(3), 2 + 6 + 15);
}

TEST(Bic, EqualLikelihoodPrefersFewerStates) {
  const GaussianHmm two = two_screen_model(0.9);
  // the same process with state 1 split into two identical copies
  GaussianHmm three;
  three.n_states = 3;
  three.initial = {0.5, 0.25, 0.25};
  three.transition = {{0.9, 0.05, 0.05}, {0.1, 0.45, 0.45}, {0.1, 0.45, 0.45}};
  three.means = {two.means[0], two.means[1], two.means[1]};
  three.covariances = {two.covariances[0], two.covariances[1], two.covariances[1]};
  const auto data = sample_set(two, 5, 120, 8);
  double l2 = 0, l3 = 0;
  for (const auto& s : data) {
    l2 += hsc::log_likelihood(two, s);
    l3 += hsc::log_likelihood(three, s);
  }
  ASSERT_NEAR(l2, l3, 1e-8 * std::abs(l2));
  EXPECT_LT(hsc::bic(two, data), hsc::bic(three, data));
  EXPECT_NEAR(hsc::bic(two, data), -2 * l2 + 13 * std::log(600.0), 1e-8 * std::abs(l2));
}

TEST(Bic, SweepSelectsTwoStatesOnTwoClusterData) {
  const GaussianHmm truth = two_screen_model(0.9);
  std::vector<std::future<int>> jobs;
  for (int seed = 0; seed < 50; ++seed)
    jobs.push_back(std::async(std::launch::async, [&truth, seed] {
      const auto data = sample_set(truth, 8, 120, 1000 + seed);
      hsc::EmOptions opt;
      opt.seed = static_cast<std::uint64_t>(seed);
      return hsc::select_state_count(data, 2, 10, opt).best;
    }));
  int hits = 0;
  for (auto& j : jobs) hits += j.get() == 2;
  EXPECT_GE(hits, 45);
}

TEST(Classify, WindowsFromHighModelAreHigh) {
  const GaussianHmm moderate = two_screen_model(0.99);
  const GaussianHmm high = two_screen_model(0.9);
  std::mt19937_64 rng(123);
  int hits = 0;
  for (int i = 0; i < 1000; ++i)
    hits += hsc::classify(window_from(hsc::sample_sequence(high, 120, rng)), moderate, high) == WorkloadLabel::high;
  EXPECT_GE(hits, 950);
}

TEST(Classify, IdenticalModelsGiveModerate) {
  const GaussianHmm m = two_screen_model(0.9);
  std::mt19937_64 rng(4);
  for (int i = 0; i < 50; ++i)
    EXPECT_EQ(hsc::classify(window_from(hsc::sample_sequence(m, 120, rng)), m, m), WorkloadLabel::moderate);
}

TEST(Classify, SwappingModelsFlipsDecisions) {
  const GaussianHmm a = two_screen_model(0.97), b = two_screen_model(0.85);
  std::mt19937_64 rng(6);
  for (int i = 0; i < 200; ++i) {
    const GazeWindow w = window_from(hsc::sample_sequence(i % 2 ? a : b, 120, rng));
    if (hsc::log_likelihood(a, w) == hsc::log_likelihood(b, w)) continue;
    EXPECT_NE(hsc::classify(w, a, b), hsc::classify(w, b, a));
  }
}

TEST(Classify, InvariantUnderMonotoneTransform) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-500.0, -100.0);
  const auto f = [](double v) { return std::atan(v / 1000.0) * 3.0 + 7.0; };
  for (int i = 0; i < 1000; ++i) {
    const double a = u(rng), b = (i % 10 ? u(rng) : a);
    EXPECT_EQ(hsc::classify_log_likelihoods(a, b), hsc::classify_log_likelihoods(f(a), f(b)));
  }
}

TEST(Workload, ValueMapping) {
  EXPECT_EQ(hsc::workload_value(WorkloadLabel::moderate), 50.0);
  EXPECT_EQ(hsc::workload_value(WorkloadLabel::high), 100.0);
}

TEST(Workload, EyesOnRoadCountsDrivingTags) {
  std::vector<GazePoint> pts(120);
  for (int i = 0; i < 120; ++i) pts[i] = {i / 30.0, 0.8, 0.5, hsc::Screen::driving};
  EXPECT_EQ(hsc::eyes_on_road(GazeWindow(pts)), 1.0);
  for (int i = 0; i < 60; ++i) pts[i].screen = hsc::Screen::surveillance;
  EXPECT_EQ(hsc::eyes_on_road(GazeWindow(pts)), 0.5);
  // only the tags matter
  auto moved = pts;
  for (auto& p : moved) p.x = p.y = 0.1;
  EXPECT_EQ(hsc::eyes_on_road(GazeWindow(moved)), 0.5);
  for (auto& p : pts) p.screen = hsc::Screen::surveillance;
  EXPECT_EQ(hsc::eyes_on_road(GazeWindow(pts)), 0.0);
}

TEST(GazeWindowType, ValidatesLengthAndSpacing) {
  std::vector<GazePoint> pts(119);
  for (int i = 0; i < 119; ++i) pts[i].timestamp = i / 30.0;
  EXPECT_THROW(GazeWindow{pts}, hsc::Error);
  pts.push_back({119 / 30.0, 0, 0, hsc::Screen::driving});
  EXPECT_NO_THROW(GazeWindow{pts});
  pts[50].timestamp = pts[49].timestamp;
  EXPECT_THROW(GazeWindow{pts}, hsc::Error);
}

TEST(Metrics, ConfusionArithmetic) {
  const auto s = hsc::class_scores({2, 1, 1});
  EXPECT_DOUBLE_EQ(s.precision, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(s.recall, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(s.f1, 2.0 / 3.0);
  const auto z = hsc::class_scores({0, 0, 0});
  EXPECT_EQ(z.precision, 0.0);
  EXPECT_EQ(z.f1, 0.0);
}

TEST(Metrics, MacroAverages) {
  using L = WorkloadLabel;
  // moderate: tp 2 fp 1 fn 1; high: tp 1 fp 1 fn 1
  const std::vector<L> truth{L::moderate, L::moderate, L::moderate, L::high, L::high};
  const std::vector<L> pred{L::moderate, L::moderate, L::high, L::moderate, L::high};
  const auto s = hsc::macro_scores(truth, pred);
  EXPECT_DOUBLE_EQ(s.precision, 0.5 * (2.0 / 3.0 + 0.5));
  EXPECT_DOUBLE_EQ(s.recall, 0.5 * (2.0 / 3.0 + 0.5));
  EXPECT_DOUBLE_EQ(s.f1, s.precision);
}

TEST(Metrics, MeanAndStandardError) {
  const auto m = hsc::mean_se({1.0, 2.0, 3.0, 4.0});
  EXPECT_DOUBLE_EQ(m.mean, 2.5);
  EXPECT_NEAR(m.se, std::sqrt(5.0 / 3.0) / 2.0, 1e-15);
}

std::vector<hsc::Participant> participants(const GaussianHmm& mod, const GaussianHmm& high, int n_part, int per_class,
                                           std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<hsc::Participant> out;
  for (int p = 0; p < n_part; ++p) {
    hsc::Participant part{"p" + std::to_string(p), {}};
    for (int k = 0; k < per_class; ++k) {
      part.windows.push_back({window_from(hsc::sample_sequence(mod, 120, rng)), WorkloadLabel::moderate});
      part.windows.push_back({window_from(hsc::sample_sequence(high, 120, rng)), WorkloadLabel::high});
    }
    out.push_back(std::move(part));
  }
  return out;
}

TEST(Holdout, SeparableParticipantsScorePerfectly) {
  GaussianHmm mod = two_screen_model(0.9), high = two_screen_model(0.9);
  high.means = {{0.75, 0.9}, {0.25, 0.9}};
  mod.means = {{0.75, 0.1}, {0.25, 0.1}};
  hsc::HoldoutOptions opt;
  opt.n_runs = 10;
  const auto rep = hsc::holdout_evaluate(participants(mod, high, 6, 3, 1), opt);
  EXPECT_EQ(rep.f1.mean, 1.0);
  EXPECT_EQ(rep.f1.se, 0.0);
  EXPECT_EQ(rep.precision.mean, 1.0);
  EXPECT_EQ(rep.recall.mean, 1.0);
}

TEST(Holdout, ShuffledLabelsScoreChance) {
  // every run draws a fresh permutation of the labels, so the spread across
  // runs covers label randomness as well as the choice of held-out groups
  const GaussianHmm m = two_screen_model(0.95);
  auto parts = participants(m, m, 6, 4, 2);
  std::mt19937_64 rng(3);
  std::bernoulli_distribution coin(0.5);
  std::vector<double> f1;
  for (int run = 0; run < 100; ++run) {
    for (auto& p : parts)
      for (auto& w : p.windows) w.label = coin(rng) ? WorkloadLabel::high : WorkloadLabel::moderate;
    hsc::HoldoutOptions opt;
    opt.n_runs = 1;
    opt.holdout_size = 2;
    opt.seed = static_cast<std::uint64_t>(run);
    opt.em.max_iter = 50;
    f1.push_back(hsc::holdout_evaluate(parts, opt).f1.mean);
  }
  const auto s = hsc::mean_se(f1);
  EXPECT_NEAR(s.mean, 0.5, 3.0 * s.se) << s.mean << " +- " << s.se;
}

TEST(Holdout, RejectsTooFewGroups) {
  const GaussianHmm m = two_screen_model(0.95);
  hsc::HoldoutOptions opt;
  opt.holdout_size = 3;
  EXPECT_THROW(hsc::holdout_evaluate(participants(m, m, 3, 1, 1), opt), hsc::Error);
}

TEST(Serialization, JsonRoundTripIsExact) {
  std::mt19937_64 rng(17);
  const hsc::ModelPair pair{random_model(rng, 2), random_model(rng, 3)};
  const auto j = nlohmann::json::parse(hsc::to_json(pair));
  EXPECT_EQ(hsc::hmm_from_json(j.at("moderate")), pair.moderate);
  EXPECT_EQ(hsc::hmm_from_json(j.at("high")), pair.high);
  EXPECT_EQ(j.at("high").at("n_states").get<int>(), 3);
}

TEST(Serialization, RejectsInvalidModel) {
  auto j = nlohmann::json::parse(hsc::to_json(two_screen_model(0.9)));
  j["initial"] = {0.7, 0.7};
  EXPECT_THROW(hsc::hmm_from_json(j), hsc::Error);
  j.erase("initial");
  EXPECT_THROW(hsc::hmm_from_json(j), hsc::Error);
}

TEST(Serialization, MissingModelFilePointsAtTraining) {
  try {
    hsc::read_model_pair("/nonexistent/models.json");
    ADD_FAILURE();
  } catch (const hsc::Error& e) {
    EXPECT_EQ(e.code(), "missing_models");
    EXPECT_NE(std::string(e.what()).find("train-hmm"), std::string::npos);
  }
}

TEST(Serialization, GazeCsvRoundTrip) {
  std::vector<GazePoint> pts{{0.0, 0.75, 0.5, hsc::Screen::driving},
                             {1.0 / 30.0, 0.1234567890123456789, 0.3, hsc::Screen::surveillance}};
  std::stringstream ss;
  hsc::write_gaze_csv(ss, pts);
  EXPECT_EQ(ss.str().substr(0, 21), "timestamp,x,y,screen\n");
  EXPECT_EQ(hsc::read_gaze_csv(ss), pts);
}

TEST(Serialization, GazeCsvRejectsMalformedInput) {
  std::stringstream bad_header("t,x,y,screen\n0,0,0,driving\n");
  EXPECT_THROW(hsc::read_gaze_csv(bad_header), hsc::Error);
  std::stringstream bad_screen("timestamp,x,y,screen\n0,0,0,dashboard\n");
  EXPECT_THROW(hsc::read_gaze_csv(bad_screen), hsc::Error);
  std::stringstream short_row("timestamp,x,y,screen\n0,0,driving\n");
  EXPECT_THROW(hsc::read_gaze_csv(short_row), hsc::Error);
}

TEST(Serialization, SplitWindowsDropsTail) {
  std::vector<GazePoint> pts(250);
  for (int i = 0; i < 250; ++i) pts[i] = {i / 30.0, 0.8, 0.5, hsc::Screen::driving};
  const auto w = hsc::split_windows(pts);
  ASSERT_EQ(w.size(), 2u);
  EXPECT_EQ(w[1].points().front().timestamp, 120 / 30.0);
}

}  // namespace
