#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "hsc/nmpc.hpp"

namespace {

using hsc::CommandSeries;
using hsc::OcpConfig;
using hsc::Track;
using hsc::VehicleParams;
using hsc::VehicleState;

// Steering angle that holds a steady yaw rate r on the linear-tire model:
// the axle forces follow from the moment and lateral balances, the rear slip
// fixes v_y, and the front slip equation is solved for delta by bisection.
double steady_state_steering(const VehicleParams& p, double r) {
  const double L = p.dist_front + p.dist_rear, u = p.forward_speed;
  const double fr = p.mass * u * r * p.dist_front / L;
  const double ff_body = p.mass * u * r * p.dist_rear / L;
  const double vy = p.dist_rear * r - fr * u / p.cornering_stiffness_rear;
  double lo = -0.5, hi = 0.5;
  const auto residual = [&](double d) {
    return p.cornering_stiffness_front * (d - (vy + p.dist_front * r) / u) * std::cos(d) - ff_body;
  };
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (residual(mid) < 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

struct Trace {
  std::vector<double> time, error, steering;
  std::vector<double> plan_times;
};

// Closed loop in which the road wheel follows the planner's reference
// exactly; the steering rate applied over each tick is the one that lands on
// the next reference value.
Trace closed_loop(const Track& track, VehicleState s, double duration, double latency = 0.0) {
  const VehicleParams p;
  const OcpConfig c = OcpConfig::defaults_for(p);
  hsc::RecedingHorizon rh(track, p, c, latency);
  Trace tr;
  const double dt = 0.01;
  const int n = static_cast<int>(std::lround(duration / dt));
  for (int i = 0; i < n; ++i) {
    const double clock = i * dt;
    rh.tick(clock, s);
    const double ref = rh.reference(clock + dt);
    s = hsc::step(s, p, (ref - s.steering_angle) / dt, dt);
    s.steering_angle = ref;
    tr.time.push_back(clock + dt);
    tr.error.push_back(hsc::cross_track_error(track, s.x, s.y));
    tr.steering.push_back(s.steering_angle);
  }
  tr.plan_times = rh.plan_times();
  return tr;
}

std::vector<VehicleState> straight_nodes(const OcpConfig& c, const VehicleParams& p) {
  std::vector<VehicleState> nodes(static_cast<std::size_t>(c.intervals + 1));
  for (std::size_t k = 0; k < nodes.size(); ++k) nodes[k].x = p.forward_speed * c.node_step() * k;
  return nodes;
}

TEST(TrajectoryCost, SaturatedBaselineOnStraight) {
  const VehicleParams p;
  const OcpConfig c = OcpConfig::defaults_for(p);
  const Track t = hsc::tracks::straight();
  const auto nodes = straight_nodes(c, p);
  const std::vector<double> gamma(static_cast<std::size_t>(c.intervals), 0.0);
  const double cost = hsc::trajectory_cost(nodes, gamma, c, t, p);

  // independent midpoint quadrature of the load term at the static split
  const double half = 0.5 * p.mass * p.gravity * p.dist_front / (p.dist_front + p.dist_rear);
  const double a = 0.25 * half, b = 0.1 * a;
  const int m = 100000;
  double integral = 0.0;
  for (int i = 0; i < m; ++i) integral += 2.0 * c.weight_load * std::tanh((a - half) / b) * (c.horizon / m);
  EXPECT_NEAR(cost, integral, 1e-9);
  EXPECT_NEAR(cost, -2.0 * c.weight_load * c.horizon, 1e-9);
}

TEST(TrajectoryCost, ZeroWeightsGiveZero) {
  const VehicleParams p;
  OcpConfig c = OcpConfig::defaults_for(p);
  c.weight_tracking = c.weight_steer_rate = c.weight_load = 0.0;
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  std::vector<VehicleState> nodes(static_cast<std::size_t>(c.intervals + 1));
  for (auto& s : nodes) s = {10 * u(rng), u(rng), u(rng), u(rng), u(rng), u(rng)};
  std::vector<double> gamma(static_cast<std::size_t>(c.intervals));
  for (double& g : gamma) g = u(rng);
  EXPECT_EQ(hsc::trajectory_cost(nodes, gamma, c, hsc::tracks::straight(), p), 0.0);
}

TEST(TrajectoryCost, LinearInSteerRateWeight) {
  const VehicleParams p;
  OcpConfig c = OcpConfig::defaults_for(p);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-0.2, 0.2);
  auto nodes = straight_nodes(c, p);
  for (auto& s : nodes) s.y = u(rng);
  std::vector<double> gamma(static_cast<std::size_t>(c.intervals));
  for (double& g : gamma) g = u(rng);
  const Track t = hsc::tracks::straight();
  const double base = hsc::trajectory_cost(nodes, gamma, c, t, p);
  c.weight_steer_rate *= 2.0;
  const double doubled = hsc::trajectory_cost(nodes, gamma, c, t, p);
  c.weight_steer_rate = 0.0;
  const double without = hsc::trajectory_cost(nodes, gamma, c, t, p);
  EXPECT_NEAR(doubled - without, 2.0 * (base - without), 1e-9 * std::abs(base));
  EXPECT_GT(base - without, 0.0);
}

TEST(TrajectoryCost, RejectsGridMismatch) {
  const VehicleParams p;
  const OcpConfig c = OcpConfig::defaults_for(p);
  const auto nodes = straight_nodes(c, p);
  const std::vector<double> short_controls(static_cast<std::size_t>(c.intervals - 1), 0.0);
  EXPECT_THROW(hsc::trajectory_cost(nodes, short_controls, c, hsc::tracks::straight(), p), hsc::Error);
  const std::vector<VehicleState> few(3);
  const std::vector<double> controls(static_cast<std::size_t>(c.intervals), 0.0);
  EXPECT_THROW(hsc::trajectory_cost(few, controls, c, hsc::tracks::straight(), p), hsc::Error);
}

TEST(Transcription, AdjointGradientMatchesFiniteDifferences) {
  const VehicleParams p;
  const OcpConfig c = OcpConfig::defaults_for(p);
  for (const char* id : {"straight", "circle", "mixed"}) {
    VehicleState s;
    s.y = 0.8;
    s.yaw = -0.04;
    s.steering_angle = 0.03;
    const Track track = *hsc::tracks::bundled(id);
    const hsc::detail::ShootingProblem prob(s, track, p, c);
    std::vector<double> gamma(static_cast<std::size_t>(c.intervals)), grad;
    for (std::size_t i = 0; i < gamma.size(); ++i) gamma[i] = 0.05 * std::sin(0.3 * i);
    prob.value_and_gradient(gamma, grad);
    for (std::size_t i = 0; i < gamma.size(); ++i) {
      auto up = gamma, dn = gamma;
      up[i] += 1e-6;
      dn[i] -= 1e-6;
      const double fd = (prob.value(up) - prob.value(dn)) / 2e-6;
      EXPECT_NEAR(grad[i], fd, 1e-5 * std::max(1.0, std::abs(fd))) << id << " interval " << i;
    }
  }
}

TEST(Plan, ZeroIsOptimalOnStraightCenterline) {
  const VehicleParams p;
  const OcpConfig c = OcpConfig::defaults_for(p);
  const auto r = hsc::solve_ocp(VehicleState{}, hsc::tracks::straight(), p, c);
  double worst = 0.0;
  for (const auto& smp : r.commands.samples) worst = std::max(worst, std::abs(smp.steering_angle));
  EXPECT_LE(worst, 1e-3);
  EXPECT_NEAR(r.commands.cost, -2.0 * c.weight_load * c.horizon, 1e-6);
  EXPECT_TRUE(r.commands.converged);
}

TEST(Plan, SamplesCoverHorizonAtTenHertz) {
  const VehicleParams p;
  const OcpConfig c = OcpConfig::defaults_for(p);
  VehicleState s;
  s.y = 0.5;
  const CommandSeries cs = hsc::plan(s, hsc::tracks::straight(), p, c);
  ASSERT_EQ(cs.samples.size(), 66u);
  for (std::size_t i = 1; i < cs.samples.size(); ++i) {
    EXPECT_GT(cs.samples[i].t_offset, cs.samples[i - 1].t_offset);
    EXPECT_LE(std::abs(cs.samples[i].steering_angle - cs.samples[i - 1].steering_angle),
              c.steer_rate_bound * c.sample_period + 1e-12);
  }
  EXPECT_GE(cs.samples.back().t_offset, c.execute_duration);
  for (const auto& smp : cs.samples) EXPECT_LE(std::abs(smp.steering_angle), c.steering_bound);
}

TEST(Plan, CostHistoryIsNonIncreasing) {
  const VehicleParams p;
  const OcpConfig c = OcpConfig::defaults_for(p);
  for (double y0 : {0.3, 1.0, -2.0}) {
    VehicleState s;
    s.y = y0;
    s.yaw = 0.05;
    const auto r = hsc::solve_ocp(s, hsc::tracks::mixed(), p, c);
    for (std::size_t i = 1; i < r.cost_history.size(); ++i)
      EXPECT_LE(r.cost_history[i], r.cost_history[i - 1]) << "iteration " << i;
    EXPECT_TRUE(r.commands.converged);
    EXPECT_LE(r.scaled_gradient, c.gradient_tolerance);
  }
}

TEST(Plan, SteeringRateBoxIsRespectedWhenActive) {
  const VehicleParams p;
  const OcpConfig c = OcpConfig::defaults_for(p);
  VehicleState s;
  s.y = 3.0;
  const auto r = hsc::solve_ocp(s, hsc::tracks::straight(), p, c);
  double worst = 0.0;
  for (double g : r.steering_rates) worst = std::max(worst, std::abs(g));
  EXPECT_LE(worst, c.steer_rate_bound);
  EXPECT_EQ(worst, c.steer_rate_bound);
  EXPECT_TRUE(r.commands.converged);
}

TEST(Plan, Deterministic) {
  const VehicleParams p;
  const OcpConfig c = OcpConfig::defaults_for(p);
  VehicleState s;
  s.y = -0.7;
  s.lateral_velocity = 0.1;
  EXPECT_EQ(hsc::plan(s, hsc::tracks::s_curve(), p, c), hsc::plan(s, hsc::tracks::s_curve(), p, c));
}

TEST(Plan, RejectsInfeasibleInitialSteering) {
  const VehicleParams p;
  const OcpConfig c = OcpConfig::defaults_for(p);
  VehicleState s;
  s.steering_angle = c.steering_bound + 0.01;
  EXPECT_THROW(hsc::plan(s, hsc::tracks::straight(), p, c), hsc::Error);
}

TEST(Plan, IterationCapFlagsNonConvergence) {
  const VehicleParams p;
  OcpConfig c = OcpConfig::defaults_for(p);
  c.max_iterations = 2;
  VehicleState s;
  s.y = 1.0;
  const CommandSeries cs = hsc::plan(s, hsc::tracks::straight(), p, c);
  EXPECT_FALSE(cs.converged);
  EXPECT_EQ(cs.iterations, 2);
  EXPECT_TRUE(std::isfinite(cs.cost));
}

TEST(Plan, CircleSteadySteeringMatchesOracle) {
  const VehicleParams p;
  const double R = 60.0;
  const Trace tr = closed_loop(hsc::tracks::circle(R), VehicleState{}, 60.0);
  double sum = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < tr.time.size(); ++i)
    if (tr.time[i] >= 30.0) {
      sum += tr.steering[i];
      ++n;
    }
  const double oracle = steady_state_steering(p, p.forward_speed / R);
  EXPECT_NEAR(sum / n, oracle, 0.15 * oracle);
}

TEST(Plan, LateralOffsetDecaysMonotonically) {
  VehicleState s;
  s.y = 1.0;
  const Trace tr = closed_loop(hsc::tracks::straight(), s, 12.0);
  double prev = INFINITY;
  for (std::size_t i = 0; i < tr.time.size(); ++i) {
    const double e = std::abs(tr.error[i]);
    if (tr.time[i] > 1.0) EXPECT_LE(e, prev + 1e-5) << "t = " << tr.time[i];
    prev = e;
    if (std::abs(tr.time[i] - 10.0) < 1e-9) EXPECT_LT(e, 0.1);
  }
}

TEST(CommandSeriesInterp, LinearBetweenSamplesAndClampedOutside) {
  CommandSeries cs;
  cs.samples = {{0.0, 0.0}, {0.1, 0.2}, {0.2, -0.1}};
  EXPECT_DOUBLE_EQ(cs.at(0.05), 0.1);
  EXPECT_NEAR(cs.at(0.175), 0.2 + 0.75 * (-0.3), 1e-12);
  EXPECT_DOUBLE_EQ(cs.at(-1.0), 0.0);
  EXPECT_DOUBLE_EQ(cs.at(5.0), -0.1);
}

TEST(RecedingHorizon, PlansEveryExecuteDuration) {
  VehicleState s;
  s.y = 0.2;
  const Trace tr = closed_loop(hsc::tracks::straight(), s, 10.0);
  ASSERT_EQ(tr.plan_times.size(), 4u);
  for (std::size_t i = 0; i < tr.plan_times.size(); ++i) EXPECT_NEAR(tr.plan_times[i], 3.0 * i, 1e-9);
}

TEST(RecedingHorizon, ReferenceInterpolatesActiveSeries) {
  const VehicleParams p;
  const OcpConfig c = OcpConfig::defaults_for(p);
  hsc::RecedingHorizon rh(hsc::tracks::straight(), p, c);
  VehicleState s;
  s.y = 1.0;
  const auto cs = rh.tick(0.0, s);
  ASSERT_TRUE(cs.has_value());
  const double a = cs->samples[4].steering_angle, b = cs->samples[5].steering_angle;
  EXPECT_NEAR(rh.reference(0.43), a + 0.3 * (b - a), 1e-12);
}

TEST(RecedingHorizon, LatencyKeepsTraceContinuous) {
  VehicleState s;
  s.y = 1.0;
  const OcpConfig c = OcpConfig::defaults_for(VehicleParams{});
  const Trace tr = closed_loop(hsc::tracks::straight(), s, 10.0, 0.5);
  // each 10 ms tick must stay within what one 0.1 s interpolation step allows
  for (std::size_t i = 1; i < tr.steering.size(); ++i)
    EXPECT_LE(std::abs(tr.steering[i] - tr.steering[i - 1]), c.steer_rate_bound * c.sample_period)
        << "t = " << tr.time[i];
}

TEST(RecedingHorizon, AsynchronousModeMatchesSynchronous) {
  const VehicleParams p;
  const OcpConfig c = OcpConfig::defaults_for(p);
  hsc::RecedingHorizon rh(hsc::tracks::straight(), p, c, 0.0, true);
  VehicleState s;
  s.y = 0.5;
  EXPECT_FALSE(rh.tick(0.0, s).has_value());
  rh.wait();
  const auto got = rh.tick(0.01, s);
  ASSERT_TRUE(got.has_value());
  EXPECT_EQ(*got, hsc::plan(s, hsc::tracks::straight(), p, c));
  EXPECT_EQ(rh.active()->start_time, 0.0);
}

TEST(OcpConfig, Validation) {
  OcpConfig c;
  c.execute_duration = c.horizon;
  EXPECT_THROW(c.validate(), hsc::Error);
  c = OcpConfig{};
  c.intervals = 5;
  EXPECT_THROW(c.validate(), hsc::Error);
  c = OcpConfig{};
  c.weight_steer_rate = -1;
  EXPECT_THROW(c.validate(), hsc::Error);
  EXPECT_NO_THROW(OcpConfig{}.validate());
}

}  // namespace
