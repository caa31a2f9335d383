#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "clfmpc/clf.hpp"
#include "clfmpc/model.hpp"
#include "clfmpc/nlp.hpp"
#include "clfmpc/sqp.hpp"

namespace clfmpc {

/// Everything needed to run one controller in closed loop.
struct ControllerSpec {
  Formulation formulation;
  int N = 30;
  double dt = 0.01;
  ClfData clf;
  SegwayParams params;
  ReferenceSignal ref;
  NlpConfig nlp;
  SqpConfig sqp;
  bool shift_warm_start = true;
  bool initial_full_solve = true;  // converge the first instance before switching to RTI
};

struct StepStats {
  int qp_iterations = 0;
  double wall_time_s = 0.0;
  bool fallback = false;  // QP failed and the previous input was held
};

/// Closed-loop record. Entry i holds the state measured at times[i], the
/// input applied over [times[i], times[i] + dt), and V and h_CLF evaluated
/// at that state and input.
struct Trajectory {
  std::vector<double> times;
  std::vector<State> states;
  std::vector<double> inputs;
  std::vector<double> clf_values;
  std::vector<double> h_clf_values;
  std::vector<double> first_slacks;
  std::vector<StepStats> stats;
  State final_state = State::Zero();
  double final_time = 0.0;
  bool failed = false;
  std::string failure;

  std::size_t size() const { return times.size(); }

  /// Columns: t,r,theta,r_dot,theta_dot,u,V,h_clf,qp_iters,wall_time.
  void write_csv(std::ostream& os) const;
};

/// Simulates `spec` from x0 for `duration` seconds with zero-order-hold
/// inputs applied every control_dt through the `truth` integrator.
Trajectory closed_loop(const ControllerSpec& spec, const State& x0, double duration, double control_dt,
                       Integrator truth = Integrator::ForwardEuler);

/// Mean of |u| over control steps. Throws EmptyTrajectory.
double avg_input_norm(const Trajectory& traj);

/// Largest |u| over control steps. Throws EmptyTrajectory.
double peak_input_norm(const Trajectory& traj);

struct ExperimentSettings {
  SegwayParams params;
  PdGains gains;
  Eigen::Matrix2d Q = Eigen::Matrix2d::Identity();
  NlpConfig nlp;
  SqpConfig sqp;
  double dt = 0.01;
  double duration = 2.0;
  double tracking_duration = 6.0;
  Integrator truth = Integrator::ForwardEuler;
  double kv = 0.025;
  VelocityProfile velocity_profile = default_velocity_profile();
  double failure_threshold = 0.1;
  std::uint64_t seed = 0;
  std::string config_hash;

  static VelocityProfile default_velocity_profile();
};

struct ExperimentResult {
  std::string formulation;
  int N = 0;
  Trajectory trajectory;
  double avg_input_norm = 0.0;
  double peak_input_norm = 0.0;
  bool converged = false;
  State steady_state_error = State::Zero();  // |x(T) - target|, elementwise
  double output_error = 0.0;                 // max(|e|, |e_dot|) at the final time
  double tracking_rms = 0.0;                 // RMS of e over the run
  double peak_pitch = 0.0;
  std::uint64_t seed = 0;
  std::string config_hash;
};

/// Builds the controller for one formulation under the experiment settings.
ControllerSpec make_controller(const ExperimentSettings& settings, const Formulation& formulation, int N,
                               const ReferenceSignal& ref);

/// From [0, pi/8, 0, 0] to the unforced equilibrium.
std::vector<ExperimentResult> experiment_stabilize(const std::vector<Formulation>& formulations,
                                                   const std::vector<int>& horizons,
                                                   const ExperimentSettings& settings);

/// From the unforced equilibrium to the forced equilibrium [0, pi/8, 0, 0].
std::vector<ExperimentResult> experiment_reverse(const std::vector<Formulation>& formulations, int N,
                                                 const ExperimentSettings& settings);

struct ConvergenceResult {
  std::string formulation;
  SqpStatus status = SqpStatus::MaxIter;
  IterationLog log;
  bool qp_failed = false;
};

/// Cold-started full SQP at x_hat = [0, pi/8, 0, 0] regulating to the same point.
std::vector<ConvergenceResult> experiment_convergence(const std::vector<Formulation>& formulations, int N,
                                                      const ExperimentSettings& settings);

/// Velocity tracking about the unforced equilibrium with the settings' profile.
std::vector<ExperimentResult> experiment_tracking(const std::vector<Formulation>& formulations, int N,
                                                  const ExperimentSettings& settings);

/// Columns: formulation,N,avg_input_norm,peak_input_norm,converged,err_r,err_theta,err_r_dot,
/// err_theta_dot,output_error,tracking_rms,peak_theta,seed,config_hash.
void write_results_csv(std::ostream& os, const std::vector<ExperimentResult>& results);

/// The pitch the forced-equilibrium experiments regulate to.
inline const State kTiltedState{0.0, 0.39269908169872414, 0.0, 0.0};

}  // namespace clfmpc
