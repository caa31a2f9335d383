#include "clfmpc/sim.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <optional>
#include <ostream>

#include "clfmpc/errors.hpp"

namespace clfmpc {

namespace {

using Clock = std::chrono::steady_clock;

// Stateful wrapper around one formulation: point-wise QP or RTI with warm starts.
class Controller {
 public:
  explicit Controller(const ControllerSpec& spec) : spec_(spec) {
    if (spec.formulation.kind != FormulationKind::ClfQp) {
      prob_ = build(spec.formulation, spec.N, spec.dt, spec.clf, spec.params, spec.ref, spec.nlp);
      cfg_ = spec.sqp;
      cfg_.hessian_mode = spec.formulation.hessian;
    }
  }

  struct Output {
    double u = 0.0;
    double slack = 0.0;
    int qp_iterations = 0;
    bool fallback = false;
  };

  Output step(const State& x, double t) {
    Output out;
    if (!prob_) {
      const ClfQpResult r = clf_qp_pointwise(spec_.clf, x, t, spec_.ref, spec_.params, spec_.nlp.slack,
                                             spec_.nlp.u_bounds, spec_.sqp.qp);
      out.u = spec_.nlp.u_bounds.clamp(r.u);
      out.slack = r.slack;
      out.qp_iterations = r.qp.iterations;
      return out;
    }

    const NlpParameters p{x, t};
    try {
      if (!state_) {
        SqpState init = constant_guess(*prob_, p);
        if (spec_.initial_full_solve) {
          SqpResult res = sqp_solve(*prob_, p, init, cfg_);
          for (const auto& rec : res.log.records) out.qp_iterations += rec.qp_iterations;
          state_ = std::move(res.state);
          out.u = prob_->u_bounds.clamp(state_->w(prob_->layout.input(0)));
          if (!prob_->soft_rows.empty()) out.slack = state_->w(prob_->layout.slack(0));
          last_u_ = out.u;
          return out;
        }
        state_ = std::move(init);
      } else if (spec_.shift_warm_start) {
        state_ = shift_warm_start(*state_, *prob_);
      }
      RtiStep r = rti_controller_step(*prob_, p, *state_, cfg_);
      out.u = r.u0;
      out.slack = r.diagnostics.first_slack;
      out.qp_iterations = r.diagnostics.qp_iterations;
      state_ = std::move(r.next);
    } catch (const QpFailure&) {
      // Hold the previous input; the shifted warm start stays in place.
      out.u = last_u_;
      out.fallback = true;
    }
    last_u_ = out.u;
    return out;
  }

 private:
  ControllerSpec spec_;
  std::optional<HorizonProblem> prob_;
  SqpConfig cfg_;
  std::optional<SqpState> state_;
  double last_u_ = 0.0;
};

State target_of(const ReferenceSignal& ref) { return ref.target; }

ReferenceSignal fixed_point_reference(const State& target) { return ReferenceSignal::fixed_point(target); }

ExperimentResult summarize(const ExperimentSettings& settings, const ControllerSpec& spec, Trajectory traj) {
  ExperimentResult r;
  r.formulation = spec.formulation.name();
  r.N = spec.N;
  r.seed = settings.seed;
  r.config_hash = settings.config_hash;
  r.avg_input_norm = traj.size() > 0 ? avg_input_norm(traj) : 0.0;
  r.peak_input_norm = traj.size() > 0 ? peak_input_norm(traj) : 0.0;
  const State target = target_of(spec.ref);
  r.steady_state_error = (traj.final_state - target).cwiseAbs();
  const Vector2<double> eta_final = error_state<double>(spec.params, traj.final_state, traj.final_time, spec.ref);
  r.output_error = eta_final.cwiseAbs().maxCoeff();
  double sq = 0.0;
  r.peak_pitch = -INFINITY;
  for (std::size_t i = 0; i < traj.size(); ++i) {
    const double e = error_state<double>(spec.params, traj.states[i], traj.times[i], spec.ref)(0);
    sq += e * e;
    r.peak_pitch = std::max(r.peak_pitch, traj.states[i](kPitch));
  }
  r.peak_pitch = std::max(r.peak_pitch, traj.final_state(kPitch));
  r.tracking_rms = traj.size() > 0 ? std::sqrt(sq / static_cast<double>(traj.size())) : 0.0;
  r.converged = !traj.failed && traj.final_state.allFinite() && r.output_error <= settings.failure_threshold;
  r.trajectory = std::move(traj);
  return r;
}

ExperimentResult run_one(const ExperimentSettings& settings, const Formulation& f, int N, const ReferenceSignal& ref,
                         const State& x0, double duration) {
  const ControllerSpec spec = make_controller(settings, f, N, ref);
  return summarize(settings, spec, closed_loop(spec, x0, duration, settings.dt, settings.truth));
}

}  // namespace

void Trajectory::write_csv(std::ostream& os) const {
  const auto old = os.precision(17);
  os << "t,r,theta,r_dot,theta_dot,u,V,h_clf,qp_iters,wall_time\n";
  for (std::size_t i = 0; i < size(); ++i) {
    const State& x = states[i];
    os << times[i] << ',' << x(0) << ',' << x(1) << ',' << x(2) << ',' << x(3) << ',' << inputs[i] << ','
       << clf_values[i] << ',' << h_clf_values[i] << ',' << stats[i].qp_iterations << ',' << stats[i].wall_time_s
       << '\n';
  }
  os.precision(old);
}

Trajectory closed_loop(const ControllerSpec& spec, const State& x0, double duration, double control_dt,
                       Integrator truth) {
  if (!(duration > 0.0) || !(control_dt > 0.0)) throw InvalidConfig("duration and control_dt must be positive");
  Controller controller(spec);
  Trajectory traj;
  const int steps = static_cast<int>(std::llround(duration / control_dt));
  const DiscretizationConfig plant{control_dt, truth};
  State x = x0;
  for (int i = 0; i < steps; ++i) {
    const double t = i * control_dt;
    const auto start = Clock::now();
    Controller::Output out;
    try {
      out = controller.step(x, t);
    } catch (const Error& e) {
      traj.failed = true;
      traj.failure = e.what();
      break;
    }
    const double wall = std::chrono::duration<double>(Clock::now() - start).count();

    traj.times.push_back(t);
    traj.states.push_back(x);
    traj.inputs.push_back(out.u);
    traj.clf_values.push_back(lyapunov_value<double>(spec.clf, spec.params, x, t, spec.ref));
    traj.h_clf_values.push_back(h_clf<double>(spec.clf, x, t, out.u, spec.ref, spec.params));
    traj.first_slacks.push_back(out.slack);
    traj.stats.push_back({out.qp_iterations, wall, out.fallback});

    x = discrete_step<double>(spec.params, x, out.u, plant);
    if (!x.allFinite()) {
      traj.failed = true;
      traj.failure = "state became non-finite";
      break;
    }
  }
  traj.final_state = x;
  traj.final_time = traj.times.empty() ? 0.0 : traj.times.back() + control_dt;
  return traj;
}

double avg_input_norm(const Trajectory& traj) {
  if (traj.inputs.empty()) throw EmptyTrajectory("average input norm of an empty trajectory");
  double sum = 0.0;
  for (double u : traj.inputs) sum += std::abs(u);
  return sum / static_cast<double>(traj.inputs.size());
}

double peak_input_norm(const Trajectory& traj) {
  if (traj.inputs.empty()) throw EmptyTrajectory("peak input norm of an empty trajectory");
  double peak = 0.0;
  for (double u : traj.inputs) peak = std::max(peak, std::abs(u));
  return peak;
}

VelocityProfile ExperimentSettings::default_velocity_profile() {
  return VelocityProfile({{0.5, 0.3}, {1.5, 0.6}, {3.5, 0.0}});
}

ControllerSpec make_controller(const ExperimentSettings& settings, const Formulation& formulation, int N,
                               const ReferenceSignal& ref) {
  ControllerSpec spec;
  spec.formulation = formulation;
  spec.N = N;
  spec.dt = settings.dt;
  spec.clf = synthesize_clf(settings.gains, settings.Q);
  spec.params = settings.params;
  spec.ref = ref;
  spec.nlp = settings.nlp;
  spec.sqp = settings.sqp;
  return spec;
}

std::vector<ExperimentResult> experiment_stabilize(const std::vector<Formulation>& formulations,
                                                   const std::vector<int>& horizons,
                                                   const ExperimentSettings& settings) {
  const ReferenceSignal ref = fixed_point_reference(equilibrium(settings.params));
  std::vector<ExperimentResult> out;
  for (const Formulation& f : formulations) {
    for (int N : horizons) out.push_back(run_one(settings, f, N, ref, kTiltedState, settings.duration));
  }
  return out;
}

std::vector<ExperimentResult> experiment_reverse(const std::vector<Formulation>& formulations, int N,
                                                 const ExperimentSettings& settings) {
  const ReferenceSignal ref = fixed_point_reference(kTiltedState);
  const State x0 = equilibrium(settings.params);
  std::vector<ExperimentResult> out;
  for (const Formulation& f : formulations) out.push_back(run_one(settings, f, N, ref, x0, settings.duration));
  return out;
}

std::vector<ConvergenceResult> experiment_convergence(const std::vector<Formulation>& formulations, int N,
                                                      const ExperimentSettings& settings) {
  const ReferenceSignal ref = fixed_point_reference(kTiltedState);
  const NlpParameters p{kTiltedState, 0.0};
  std::vector<ConvergenceResult> out;
  for (const Formulation& f : formulations) {
    ConvergenceResult r;
    r.formulation = f.name();
    const ControllerSpec spec = make_controller(settings, f, N, ref);
    const HorizonProblem prob = build(f, N, spec.dt, spec.clf, spec.params, spec.ref, spec.nlp);
    SqpConfig cfg = spec.sqp;
    cfg.hessian_mode = f.hessian;
    try {
      SqpResult res = sqp_solve(prob, p, zero_state(prob), cfg);
      r.status = res.status;
      r.log = std::move(res.log);
    } catch (const QpFailure&) {
      r.qp_failed = true;
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<ExperimentResult> experiment_tracking(const std::vector<Formulation>& formulations, int N,
                                                  const ExperimentSettings& settings) {
  const State xe = equilibrium(settings.params);
  const ReferenceSignal ref =
      ReferenceSignal::velocity_tracking(xe(kPitch), settings.velocity_profile, settings.kv);
  std::vector<ExperimentResult> out;
  for (const Formulation& f : formulations) {
    out.push_back(run_one(settings, f, N, ref, xe, settings.tracking_duration));
  }
  return out;
}

void write_results_csv(std::ostream& os, const std::vector<ExperimentResult>& results) {
  const auto old = os.precision(17);
  os << "formulation,N,avg_input_norm,peak_input_norm,converged,err_r,err_theta,err_r_dot,err_theta_dot,"
        "output_error,tracking_rms,peak_theta,seed,config_hash\n";
  for (const ExperimentResult& r : results) {
    os << r.formulation << ',' << r.N << ',' << r.avg_input_norm << ',' << r.peak_input_norm << ','
       << (r.converged ? 1 : 0);
    for (int i = 0; i < 4; ++i) os << ',' << r.steady_state_error(i);
    os << ',' << r.output_error << ',' << r.tracking_rms << ',' << r.peak_pitch << ',' << r.seed << ','
       << r.config_hash << '\n';
  }
  os.precision(old);
}

}  // namespace clfmpc
