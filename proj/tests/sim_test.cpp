#include "clfmpc/sim.hpp"

#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "clfmpc/errors.hpp"

namespace clfmpc {
namespace {

const SegwayParams kParams{};

ControllerSpec spec_for(const char* name, int N, const State& target) {
  ExperimentSettings settings;
  return make_controller(settings, Formulation::parse(name), N, ReferenceSignal::fixed_point(target));
}

TEST(AvgInputNorm, HandValues) {
  Trajectory t;
  t.inputs = {0.0, 0.0, 0.0};
  EXPECT_EQ(avg_input_norm(t), 0.0);
  t.inputs = {1.0, -3.0};
  EXPECT_EQ(avg_input_norm(t), 2.0);
  EXPECT_EQ(peak_input_norm(t), 3.0);
  EXPECT_THROW(avg_input_norm(Trajectory{}), EmptyTrajectory);
  EXPECT_THROW(peak_input_norm(Trajectory{}), EmptyTrajectory);
}

TEST(ClosedLoop, RejectsNonPositiveTimes) {
  const ControllerSpec spec = spec_for("clf-qp", 1, equilibrium(kParams));
  EXPECT_THROW(closed_loop(spec, equilibrium(kParams), 0.0, 0.01), InvalidConfig);
  EXPECT_THROW(closed_loop(spec, equilibrium(kParams), 1.0, -0.01), InvalidConfig);
}

TEST(ClosedLoop, EquilibriumHolds) {
  const State xe = equilibrium(kParams);
  for (const char* name : {"clf-qp", "clf-0", "clf-all", "nmpc-1", "nmpc-10"}) {
    const Trajectory t = closed_loop(spec_for(name, 10, xe), xe, 2.0, 0.01);
    ASSERT_FALSE(t.failed) << name;
    for (const State& x : t.states) EXPECT_LE((x - xe).cwiseAbs().maxCoeff(), 1e-6) << name;
  }
}

// The level-set funnel collapses to a point when V(x_hat) = 0, so roundoff
// in the equilibrium is amplified before the first-node CLF row damps it.
TEST(ClosedLoop, LlsEquilibriumHoldsLoosely) {
  const State xe = equilibrium(kParams);
  const Trajectory t = closed_loop(spec_for("lls-all", 10, xe), xe, 2.0, 0.01);
  ASSERT_FALSE(t.failed);
  for (const State& x : t.states) EXPECT_LE((x - xe).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(ClosedLoop, ArraysConsistentAndUniformTime) {
  const Trajectory t = closed_loop(spec_for("clf-all", 10, equilibrium(kParams)), kTiltedState, 0.5, 0.01);
  ASSERT_EQ(t.size(), 50u);
  EXPECT_EQ(t.states.size(), t.size());
  EXPECT_EQ(t.inputs.size(), t.size());
  EXPECT_EQ(t.clf_values.size(), t.size());
  EXPECT_EQ(t.h_clf_values.size(), t.size());
  EXPECT_EQ(t.stats.size(), t.size());
  for (std::size_t i = 1; i < t.size(); ++i) EXPECT_NEAR(t.times[i] - t.times[i - 1], 0.01, 1e-12);
}

TEST(ClosedLoop, Clf0Stabilizes) {
  const State xe = equilibrium(kParams);
  const Trajectory t = closed_loop(spec_for("clf-0", 30, xe), kTiltedState, 2.0, 0.01);
  ASSERT_FALSE(t.failed);
  EXPECT_LE(std::abs(t.final_state(kPitch) - xe(kPitch)), 0.1);
  EXPECT_LT(t.clf_values.back(), 0.1 * t.clf_values.front());
}

TEST(ClosedLoop, PredictionMatchesPlant) {
  const State xe = equilibrium(kParams);
  const ControllerSpec spec = spec_for("clf-all", 10, xe);
  const HorizonProblem prob = build(spec.formulation, spec.N, spec.dt, spec.clf, spec.params, spec.ref, spec.nlp);
  const NlpParameters p{kTiltedState, 0.0};
  SqpConfig cfg = spec.sqp;
  const SqpResult res = sqp_solve(prob, p, constant_guess(prob, p), cfg);
  ASSERT_EQ(res.status, SqpStatus::Converged);
  const double u0 = res.state.w(prob.layout.input(0));
  const State predicted = res.state.w.segment<4>(prob.layout.state(1));
  const State simulated = discrete_step<double>(kParams, kTiltedState, u0, {0.01, Integrator::ForwardEuler});
  EXPECT_LE((predicted - simulated).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(ClosedLoop, ClfQpMatchesClf0) {
  const State xe = equilibrium(kParams);
  const Trajectory a = closed_loop(spec_for("clf-qp", 1, xe), kTiltedState, 2.0, 0.01);
  const Trajectory b = closed_loop(spec_for("clf-0", 10, xe), kTiltedState, 2.0, 0.01);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a.inputs[i], b.inputs[i], 1e-6) << "step " << i;
}

TEST(ClosedLoop, ShiftingSavesQpIterations) {
  const State xe = equilibrium(kParams);
  const ControllerSpec spec = spec_for("lls-all", 20, xe);
  const Trajectory warm = closed_loop(spec, kTiltedState, 1.0, 0.01);
  ASSERT_FALSE(warm.failed);
  const HorizonProblem prob = build(spec.formulation, spec.N, spec.dt, spec.clf, spec.params, spec.ref, spec.nlp);
  SqpConfig cfg = spec.sqp;
  cfg.hessian_mode = spec.formulation.hessian;
  long warm_total = 0;
  long cold_total = 0;
  for (std::size_t i = 1; i < warm.size(); ++i) {
    warm_total += warm.stats[i].qp_iterations;
    const NlpParameters p{warm.states[i], warm.times[i]};
    cold_total += rti_controller_step(prob, p, constant_guess(prob, p), cfg).diagnostics.qp_iterations;
  }
  EXPECT_LT(warm_total, cold_total);
}

TEST(Experiments, StabilizeMetricsDeterministic) {
  ExperimentSettings settings;
  settings.duration = 0.5;
  const std::vector<Formulation> fs{Formulation::parse("clf-all"), Formulation::parse("nmpc-1")};
  std::ostringstream a;
  std::ostringstream b;
  write_results_csv(a, experiment_stabilize(fs, {10}, settings));
  write_results_csv(b, experiment_stabilize(fs, {10}, settings));
  EXPECT_EQ(a.str(), b.str());
}

TEST(Experiments, ZeroVelocityProfileIsRegulation) {
  ExperimentSettings settings;
  settings.tracking_duration = 1.0;
  settings.velocity_profile = VelocityProfile({{0.0, 0.0}});
  const auto r = experiment_tracking({Formulation::parse("clf-qp")}, 1, settings);
  ASSERT_EQ(r.size(), 1u);
  const State xe = equilibrium(kParams);
  for (const State& x : r[0].trajectory.states) EXPECT_LE((x - xe).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Experiments, TrackingKeepsPitchErrorBounded) {
  ExperimentSettings settings;
  for (const char* name : {"clf-qp", "clf-all"}) {
    const auto r = experiment_tracking({Formulation::parse(name)}, 20, settings);
    ASSERT_EQ(r.size(), 1u);
    const Trajectory& t = r[0].trajectory;
    ASSERT_FALSE(t.failed);
    const ReferenceSignal ref = ReferenceSignal::velocity_tracking(equilibrium(kParams)(kPitch),
                                                                   settings.velocity_profile, settings.kv);
    for (std::size_t i = 0; i < t.size(); ++i) {
      EXPECT_LT(std::abs(t.states[i](kPitch) - ref.desired_pitch(t.states[i], t.times[i])), M_PI / 4) << name;
    }
  }
}

TEST(Experiments, TrackingFollowsCommandedVelocity) {
  ExperimentSettings settings;
  settings.tracking_duration = 3.5;
  const auto r = experiment_tracking({Formulation::parse("clf-qp")}, 1, settings);
  const Trajectory& t = r[0].trajectory;
  ASSERT_FALSE(t.failed);
  EXPECT_GT(t.final_state(kVelocity), 0.1);
  EXPECT_LT(t.final_state(kVelocity), 0.6);
}

// Under the drift-only output the closed loop at x_e is unstable for kv = 0.3.
TEST(Experiments, LargeVelocityGainDiverges) {
  ExperimentSettings settings;
  settings.kv = 0.3;
  settings.tracking_duration = 3.0;
  const auto r = experiment_tracking({Formulation::parse("clf-qp")}, 1, settings);
  EXPECT_GT(r[0].tracking_rms, 10.0 * experiment_tracking({Formulation::parse("clf-qp")}, 1, ExperimentSettings{})[0].tracking_rms);
}

TEST(Csv, TrajectoryHeader) {
  const Trajectory t = closed_loop(spec_for("clf-qp", 1, equilibrium(kParams)), kTiltedState, 0.05, 0.01);
  std::ostringstream os;
  t.write_csv(os);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "t,r,theta,r_dot,theta_dot,u,V,h_clf,qp_iters,wall_time");
  int rows = 0;
  while (std::getline(is, line)) ++rows;
  EXPECT_EQ(rows, 5);
}

}  // namespace
}  // namespace clfmpc
