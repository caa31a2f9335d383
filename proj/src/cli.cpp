#include "clfmpc/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

namespace clfmpc {

namespace {

namespace fs = std::filesystem;

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double parse_double(const std::string& s) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw InvalidConfig("expected a number, got '" + s + "'");
  return v;
}

long long parse_integer(const std::string& s) {
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw InvalidConfig("expected an integer, got '" + s + "'");
  return v;
}

int parse_int(const std::string& s) { return static_cast<int>(parse_integer(s)); }

bool parse_bool(const std::string& s) {
  if (s == "true") return true;
  if (s == "false") return false;
  throw InvalidConfig("expected true or false, got '" + s + "'");
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_bool(bool b) { return b ? "true" : "false"; }

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? ", " : "") + items[i];
  return out;
}

Integrator parse_integrator(const std::string& s) {
  if (s == "forward-euler") return Integrator::ForwardEuler;
  if (s == "rk4") return Integrator::RK4;
  throw InvalidConfig("expected forward-euler or rk4, got '" + s + "'");
}

std::string integrator_name(Integrator m) { return m == Integrator::RK4 ? "rk4" : "forward-euler"; }

HessianOverride parse_hessian(const std::string& s) {
  if (s == "auto") return HessianOverride::Auto;
  if (s == "gauss-newton") return HessianOverride::GaussNewton;
  if (s == "gauss-newton-lls") return HessianOverride::GaussNewtonPlusLls;
  throw InvalidConfig("expected auto, gauss-newton or gauss-newton-lls, got '" + s + "'");
}

std::string hessian_name(HessianOverride h) {
  switch (h) {
    case HessianOverride::GaussNewton:
      return "gauss-newton";
    case HessianOverride::GaussNewtonPlusLls:
      return "gauss-newton-lls";
    default:
      return "auto";
  }
}

VelocityProfile parse_profile(const std::string& s) {
  std::vector<std::pair<double, double>> segments;
  for (const std::string& item : split_list(s)) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw InvalidConfig("velocity profile entries are time:velocity");
    segments.emplace_back(parse_double(trim(item.substr(0, colon))), parse_double(trim(item.substr(colon + 1))));
  }
  return VelocityProfile(std::move(segments));
}

std::string profile_text(const VelocityProfile& p) {
  std::vector<std::string> items;
  for (const auto& [t, v] : p.segments()) items.push_back(fmt(t) + ":" + fmt(v));
  return join(items);
}

struct Field {
  std::string section;
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename Ref>
Field real(const char* section, const char* key, Ref ref) {
  return {section, key, [ref](RunConfig& c, const std::string& v) { ref(c) = parse_double(v); },
          [ref](const RunConfig& c) { return fmt(ref(c)); }};
}

template <typename Ref>
Field integer(const char* section, const char* key, Ref ref) {
  return {section, key, [ref](RunConfig& c, const std::string& v) { ref(c) = parse_int(v); },
          [ref](const RunConfig& c) { return std::to_string(ref(c)); }};
}

template <typename Ref>
Field boolean(const char* section, const char* key, Ref ref) {
  return {section, key, [ref](RunConfig& c, const std::string& v) { ref(c) = parse_bool(v); },
          [ref](const RunConfig& c) { return fmt_bool(ref(c)); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back({"experiment", "name",
                 [](RunConfig& c, const std::string& v) { c.experiment = parse_experiment(v); },
                 [](const RunConfig& c) { return to_string(c.experiment); }});
    f.push_back({"experiment", "formulations",
                 [](RunConfig& c, const std::string& v) { c.formulations = split_list(v); },
                 [](const RunConfig& c) { return join(c.formulations); }});
    f.push_back({"experiment", "horizons",
                 [](RunConfig& c, const std::string& v) {
                   c.horizons.clear();
                   for (const std::string& s : split_list(v)) c.horizons.push_back(parse_int(s));
                 },
                 [](const RunConfig& c) {
                   std::vector<std::string> items;
                   for (int N : c.horizons) items.push_back(std::to_string(N));
                   return join(items);
                 }});
    f.push_back({"experiment", "out", [](RunConfig& c, const std::string& v) { c.out_dir = v; },
                 [](const RunConfig& c) { return c.out_dir; }});
    f.push_back({"experiment", "seed",
                 [](RunConfig& c, const std::string& v) {
                   const long long s = parse_integer(v);
                   if (s < 0) throw InvalidConfig("seed must be non-negative");
                   c.settings.seed = static_cast<std::uint64_t>(s);
                 },
                 [](const RunConfig& c) { return std::to_string(c.settings.seed); }});
    f.push_back(real("experiment", "dt", [](auto& c) -> auto& { return c.settings.dt; }));
    f.push_back(real("experiment", "duration", [](auto& c) -> auto& { return c.settings.duration; }));
    f.push_back(real("experiment", "tracking_duration",
                     [](auto& c) -> auto& { return c.settings.tracking_duration; }));
    f.push_back({"experiment", "truth",
                 [](RunConfig& c, const std::string& v) { c.settings.truth = parse_integrator(v); },
                 [](const RunConfig& c) { return integrator_name(c.settings.truth); }});
    f.push_back(real("experiment", "failure_threshold",
                     [](auto& c) -> auto& { return c.settings.failure_threshold; }));
    f.push_back(real("experiment", "kv", [](auto& c) -> auto& { return c.settings.kv; }));
    f.push_back({"experiment", "velocity_profile",
                 [](RunConfig& c, const std::string& v) { c.settings.velocity_profile = parse_profile(v); },
                 [](const RunConfig& c) { return profile_text(c.settings.velocity_profile); }});

    f.push_back(real("model", "wheel_mass", [](auto& c) -> auto& { return c.settings.params.wheel_mass; }));
    f.push_back(real("model", "body_mass", [](auto& c) -> auto& { return c.settings.params.body_mass; }));
    f.push_back(
        real("model", "body_inertia", [](auto& c) -> auto& { return c.settings.params.body_inertia; }));
    f.push_back(
        real("model", "wheel_radius", [](auto& c) -> auto& { return c.settings.params.wheel_radius; }));
    f.push_back(
        real("model", "com_distance", [](auto& c) -> auto& { return c.settings.params.com_distance; }));
    f.push_back(real("model", "com_angle_offset",
                     [](auto& c) -> auto& { return c.settings.params.com_angle_offset; }));
    f.push_back(real("model", "motor_torque_constant",
                     [](auto& c) -> auto& { return c.settings.params.motor_torque_constant; }));
    f.push_back(real("model", "gravity", [](auto& c) -> auto& { return c.settings.params.gravity; }));
    f.push_back(
        real("model", "friction_coeff", [](auto& c) -> auto& { return c.settings.params.friction_coeff; }));

    f.push_back(real("clf", "kp", [](auto& c) -> auto& { return c.settings.gains.kp; }));
    f.push_back(real("clf", "kd", [](auto& c) -> auto& { return c.settings.gains.kd; }));
    f.push_back(real("clf", "q11", [](auto& c) -> auto& { return c.settings.Q(0, 0); }));
    f.push_back({"clf", "q12",
                 [](RunConfig& c, const std::string& v) { c.settings.Q(0, 1) = c.settings.Q(1, 0) = parse_double(v); },
                 [](const RunConfig& c) { return fmt(c.settings.Q(0, 1)); }});
    f.push_back(real("clf", "q22", [](auto& c) -> auto& { return c.settings.Q(1, 1); }));

    f.push_back(
        real("nlp", "slack_linear", [](auto& c) -> auto& { return c.settings.nlp.slack.linear; }));
    f.push_back(
        real("nlp", "slack_quadratic", [](auto& c) -> auto& { return c.settings.nlp.slack.quadratic; }));
    f.push_back(real("nlp", "u_min", [](auto& c) -> auto& { return c.settings.nlp.u_bounds.lo; }));
    f.push_back(real("nlp", "u_max", [](auto& c) -> auto& { return c.settings.nlp.u_bounds.hi; }));
    f.push_back({"nlp", "integrator",
                 [](RunConfig& c, const std::string& v) { c.settings.nlp.method = parse_integrator(v); },
                 [](const RunConfig& c) { return integrator_name(c.settings.nlp.method); }});

    f.push_back({"sqp", "hessian_mode", [](RunConfig& c, const std::string& v) { c.hessian = parse_hessian(v); },
                 [](const RunConfig& c) { return hessian_name(c.hessian); }});
    f.push_back(
        real("sqp", "tol_constraint", [](auto& c) -> auto& { return c.settings.sqp.tol_constraint; }));
    f.push_back(real("sqp", "tol_cost", [](auto& c) -> auto& { return c.settings.sqp.tol_cost; }));
    f.push_back(
        real("sqp", "tol_stationarity", [](auto& c) -> auto& { return c.settings.sqp.tol_stationarity; }));
    f.push_back(
        integer("sqp", "max_iterations", [](auto& c) -> auto& { return c.settings.sqp.max_iterations; }));
    f.push_back(real("sqp", "step_scale", [](auto& c) -> auto& { return c.settings.sqp.step_scale; }));

    f.push_back(real("qp", "rho", [](auto& c) -> auto& { return c.settings.sqp.qp.rho; }));
    f.push_back(real("qp", "rho_eq", [](auto& c) -> auto& { return c.settings.sqp.qp.rho_eq; }));
    f.push_back(real("qp", "sigma", [](auto& c) -> auto& { return c.settings.sqp.qp.sigma; }));
    f.push_back(real("qp", "alpha", [](auto& c) -> auto& { return c.settings.sqp.qp.alpha; }));
    f.push_back(real("qp", "eps_abs", [](auto& c) -> auto& { return c.settings.sqp.qp.eps_abs; }));
    f.push_back(real("qp", "eps_rel", [](auto& c) -> auto& { return c.settings.sqp.qp.eps_rel; }));
    f.push_back(real("qp", "eps_prim_inf", [](auto& c) -> auto& { return c.settings.sqp.qp.eps_prim_inf; }));
    f.push_back(real("qp", "eps_dual_inf", [](auto& c) -> auto& { return c.settings.sqp.qp.eps_dual_inf; }));
    f.push_back(integer("qp", "max_iter", [](auto& c) -> auto& { return c.settings.sqp.qp.max_iter; }));
    f.push_back(integer("qp", "scaling_iterations",
                        [](auto& c) -> auto& { return c.settings.sqp.qp.scaling_iterations; }));
    f.push_back(boolean("qp", "adaptive_rho", [](auto& c) -> auto& { return c.settings.sqp.qp.adaptive_rho; }));
    f.push_back(integer("qp", "adaptive_rho_interval",
                        [](auto& c) -> auto& { return c.settings.sqp.qp.adaptive_rho_interval; }));
    f.push_back(boolean("qp", "polish", [](auto& c) -> auto& { return c.settings.sqp.qp.polish; }));
    f.push_back(integer("qp", "polish_refine_iterations",
                        [](auto& c) -> auto& { return c.settings.sqp.qp.polish_refine_iterations; }));
    return f;
  }();
  return table;
}

std::vector<std::string> default_formulations(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::Convergence:
      return {"clf-0", "nmpc-10", "clf-all", "lls-n", "lls-all", "lls-n-gn", "lls-all-gn"};
    case ExperimentKind::Tracking:
      return {"clf-qp", "clf-all", "lls-n", "lls-all", "nmpc-1", "nmpc-10"};
    case ExperimentKind::Single:
      return {"clf-0"};
    default:
      return {"clf-qp", "clf-0", "clf-all", "lls-n", "lls-all", "nmpc-1", "nmpc-10"};
  }
}

std::vector<int> default_horizons(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::Stabilize:
      return {1, 10, 20, 30, 40, 50};
    case ExperimentKind::Tracking:
      return {20};
    default:
      return {30};
  }
}

std::string header_of(const std::function<void(std::ostream&)>& write_empty) {
  std::ostringstream os;
  write_empty(os);
  std::string line = os.str();
  return line.substr(0, line.find('\n'));
}

std::string results_header() {
  return header_of([](std::ostream& os) { write_results_csv(os, {}); });
}

std::string trajectory_header() {
  return header_of([](std::ostream& os) { Trajectory{}.write_csv(os); });
}

std::string log_header() {
  return header_of([](std::ostream& os) { IterationLog{}.write_csv(os); });
}

const char* kConvergenceHeader = "formulation,status,iterations,constraint_violation,stationarity,qp_failed,config_hash";

struct Output {
  fs::path path;
  std::string header;
  std::vector<int> text_columns;
};

class Writer {
 public:
  explicit Writer(fs::path dir) : dir_(std::move(dir)) {}

  void write_text(const std::string& name, const std::function<void(std::ostream&)>& body) {
    const fs::path path = dir_ / name;
    fs::create_directories(path.parent_path());
    std::ofstream os(path);
    if (!os) throw InvalidConfig("cannot write " + path.string());
    body(os);
  }

  void write(const std::string& name, const std::string& header, std::vector<int> text_columns,
             const std::function<void(std::ostream&)>& body) {
    write_text(name, body);
    outputs_.push_back({dir_ / name, header, std::move(text_columns)});
  }

  /// Empty when every written CSV parses back.
  std::string validate() const {
    for (const Output& o : outputs_) {
      std::ifstream in(o.path);
      const std::string err = validate_csv(in, o.header, o.text_columns);
      if (!err.empty()) return o.path.string() + ": " + err;
    }
    return "";
  }

 private:
  fs::path dir_;
  std::vector<Output> outputs_;
};

std::string trajectory_name(const ExperimentResult& r) {
  return "trajectories/" + r.formulation + "_N" + std::to_string(r.N) + ".csv";
}

bool write_closed_loop(Writer& w, const std::string& stem, const std::vector<ExperimentResult>& results,
                       bool table) {
  bool failed = false;
  w.write(stem + ".csv", results_header(), {0, 13}, [&](std::ostream& os) { write_results_csv(os, results); });
  for (const ExperimentResult& r : results) {
    w.write(trajectory_name(r), trajectory_header(), {}, [&](std::ostream& os) { r.trajectory.write_csv(os); });
    if (r.trajectory.failed) {
      failed = true;
      std::cerr << r.formulation << " N=" << r.N << ": " << r.trajectory.failure << '\n';
    }
  }
  std::ostringstream text;
  std::ostringstream csv;
  emit_summary_table(text, csv, results);
  if (table) {
    const std::string header = csv.str().substr(0, csv.str().find('\n'));
    std::vector<int> text_columns{0};
    w.write(stem + "_table.csv", header, text_columns, [&](std::ostream& os) { os << csv.str(); });
  }
  std::cout << text.str();
  return failed;
}

bool run_convergence(Writer& w, const std::vector<Formulation>& fs, int N, const ExperimentSettings& settings) {
  const std::vector<ConvergenceResult> results = experiment_convergence(fs, N, settings);
  bool failed = false;
  for (const ConvergenceResult& r : results) {
    w.write("convergence_" + r.formulation + "_N" + std::to_string(N) + ".csv", log_header(), {},
            [&](std::ostream& os) { r.log.write_csv(os); });
    failed = failed || r.qp_failed;
  }
  w.write("convergence_N" + std::to_string(N) + ".csv", kConvergenceHeader, {0, 1, 6}, [&](std::ostream& os) {
    os.precision(17);
    os << kConvergenceHeader << '\n';
    for (const ConvergenceResult& r : results) {
      const bool any = !r.log.records.empty();
      os << r.formulation << ',' << (r.status == SqpStatus::Converged ? "converged" : "max_iter") << ','
         << r.log.records.size() << ',' << (any ? r.log.records.back().constraint_violation : 0.0) << ','
         << (any ? r.log.records.back().stationarity : 0.0) << ',' << (r.qp_failed ? 1 : 0) << ','
         << settings.config_hash << '\n';
    }
  });
  std::printf("%-12s %-10s %6s %14s %14s\n", "formulation", "status", "iters", "||c||_1", "||grad L||_1");
  for (const ConvergenceResult& r : results) {
    const bool any = !r.log.records.empty();
    std::printf("%-12s %-10s %6zu %14.3e %14.3e\n", r.formulation.c_str(),
                r.qp_failed ? "qp-failed" : (r.status == SqpStatus::Converged ? "converged" : "max_iter"),
                r.log.records.size(), any ? r.log.records.back().constraint_violation : 0.0,
                any ? r.log.records.back().stationarity : 0.0);
  }
  return failed;
}

}  // namespace

std::string to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::Stabilize:
      return "stabilize";
    case ExperimentKind::Reverse:
      return "reverse";
    case ExperimentKind::Convergence:
      return "convergence";
    case ExperimentKind::Tracking:
      return "tracking";
    case ExperimentKind::Single:
      return "single";
  }
  return "unknown";
}

ExperimentKind parse_experiment(const std::string& name) {
  for (ExperimentKind k : {ExperimentKind::Stabilize, ExperimentKind::Reverse, ExperimentKind::Convergence,
                           ExperimentKind::Tracking, ExperimentKind::Single}) {
    if (to_string(k) == name) return k;
  }
  throw InvalidConfig("unknown experiment '" + name + "'");
}

void RunConfig::validate() const {
  for (const Formulation& f : resolve_formulations(*this)) {
    if (experiment == ExperimentKind::Convergence && f.kind == FormulationKind::ClfQp) {
      throw InvalidConfig("clf-qp has no horizon to converge");
    }
  }
  for (int N : horizons) {
    if (N < 1) throw InvalidConfig("horizons must be at least 1");
  }
  const ExperimentSettings& s = settings;
  s.params.validate();
  synthesize_clf(s.gains, s.Q);
  if (!(s.dt > 0.0) || !(s.duration > 0.0) || !(s.tracking_duration > 0.0)) {
    throw InvalidConfig("dt and durations must be positive");
  }
  if (!(s.failure_threshold > 0.0)) throw InvalidConfig("failure_threshold must be positive");
  if (!(s.kv >= 0.0)) throw InvalidConfig("kv must be non-negative");
  if (!(s.nlp.slack.linear >= 0.0) || !(s.nlp.slack.quadratic >= 0.0)) {
    throw InvalidConfig("slack weights must be non-negative");
  }
  if (!(s.nlp.u_bounds.lo < s.nlp.u_bounds.hi)) throw InvalidConfig("u_min must be below u_max");
  if (!(s.sqp.tol_constraint > 0.0) || !(s.sqp.tol_cost > 0.0) || !(s.sqp.tol_stationarity > 0.0)) {
    throw InvalidConfig("SQP tolerances must be positive");
  }
  if (s.sqp.max_iterations < 1) throw InvalidConfig("max_iterations must be at least 1");
  if (!(s.sqp.step_scale > 0.0) || s.sqp.step_scale > 1.0) throw InvalidConfig("step_scale must be in (0, 1]");
  const QpSettings& q = s.sqp.qp;
  if (!(q.rho > 0.0) || !(q.rho_eq > 0.0) || !(q.sigma > 0.0)) throw InvalidConfig("QP penalties must be positive");
  if (!(q.alpha > 0.0) || !(q.alpha < 2.0)) throw InvalidConfig("QP alpha must be in (0, 2)");
  if (!(q.eps_abs >= 0.0) || !(q.eps_rel >= 0.0) || !(q.eps_prim_inf > 0.0) || !(q.eps_dual_inf > 0.0)) {
    throw InvalidConfig("QP tolerances must be non-negative");
  }
  if (q.max_iter < 1 || q.scaling_iterations < 0 || q.adaptive_rho_interval < 1 || q.polish_refine_iterations < 0) {
    throw InvalidConfig("QP iteration counts out of range");
  }
}

RunConfig load_config(std::istream& in) {
  std::map<std::string, const Field*> index;
  std::set<std::string> sections;
  for (const Field& f : fields()) {
    index[f.section + "." + f.key] = &f;
    sections.insert(f.section);
  }
  RunConfig cfg;
  std::set<std::string> seen;
  std::string section;
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto comment = raw.find_first_of("#;");
    const std::string text = trim(comment == std::string::npos ? raw : raw.substr(0, comment));
    if (text.empty()) continue;
    if (text.front() == '[') {
      if (text.back() != ']') throw ConfigError("line " + std::to_string(line) + ": malformed section", line, "");
      section = trim(text.substr(1, text.size() - 2));
      if (!sections.count(section)) {
        throw ConfigError("line " + std::to_string(line) + ": unknown section [" + section + "]", line, section);
      }
      continue;
    }
    const auto eq = text.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line) + ": expected key = value", line, text);
    }
    const std::string key = trim(text.substr(0, eq));
    const std::string value = trim(text.substr(eq + 1));
    if (section.empty()) {
      throw ConfigError("line " + std::to_string(line) + ": key '" + key + "' outside a section", line, key);
    }
    const std::string full = section + "." + key;
    const auto it = index.find(full);
    if (it == index.end()) {
      throw ConfigError("line " + std::to_string(line) + ": unknown key '" + key + "' in [" + section + "]", line,
                        key);
    }
    if (!seen.insert(full).second) {
      throw ConfigError("line " + std::to_string(line) + ": duplicate key '" + key + "'", line, key);
    }
    try {
      it->second->set(cfg, value);
    } catch (const InvalidConfig& e) {
      throw ConfigError("line " + std::to_string(line) + ": key '" + key + "': " + e.what(), line, key);
    }
  }
  try {
    cfg.validate();
  } catch (const Error& e) {
    throw ConfigError(e.what(), 0, "");
  }
  return cfg;
}

RunConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path, 0, "");
  return load_config(in);
}

void dump_config(std::ostream& os, const RunConfig& cfg) {
  std::string section;
  for (const Field& f : fields()) {
    if (f.section != section) {
      os << (section.empty() ? "" : "\n") << '[' << f.section << "]\n";
      section = f.section;
    }
    os << f.key << " = " << f.get(cfg) << '\n';
  }
}

std::string dump_config(const RunConfig& cfg) {
  std::ostringstream os;
  dump_config(os, cfg);
  return os.str();
}

std::string config_hash(const RunConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : dump_config(cfg)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<Formulation> resolve_formulations(const RunConfig& cfg) {
  const std::vector<std::string> names =
      cfg.formulations.empty() ? default_formulations(cfg.experiment) : cfg.formulations;
  std::vector<Formulation> out;
  for (const std::string& n : names) {
    Formulation f = Formulation::parse(n);
    if (cfg.hessian == HessianOverride::GaussNewton) f.hessian = HessianMode::GaussNewton;
    if (cfg.hessian == HessianOverride::GaussNewtonPlusLls) f.hessian = HessianMode::GaussNewtonPlusLls;
    out.push_back(f);
  }
  return out;
}

std::vector<int> resolve_horizons(const RunConfig& cfg) {
  return cfg.horizons.empty() ? default_horizons(cfg.experiment) : cfg.horizons;
}

void emit_summary_table(std::ostream& text, std::ostream& csv, const std::vector<ExperimentResult>& results) {
  std::vector<std::string> rows;
  std::set<int> columns;
  std::map<std::pair<std::string, int>, const ExperimentResult*> cell;
  for (const ExperimentResult& r : results) {
    if (std::find(rows.begin(), rows.end(), r.formulation) == rows.end()) rows.push_back(r.formulation);
    columns.insert(r.N);
    cell[{r.formulation, r.N}] = &r;
  }
  char buf[64];
  text << "formulation ";
  csv << "formulation";
  for (int N : columns) {
    std::snprintf(buf, sizeof buf, " %9s", ("N=" + std::to_string(N)).c_str());
    text << buf;
    csv << ",N=" << N;
  }
  text << '\n';
  csv << '\n';
  const auto old = csv.precision(17);
  for (const std::string& row : rows) {
    std::snprintf(buf, sizeof buf, "%-12s", row.c_str());
    text << buf;
    csv << row;
    for (int N : columns) {
      const auto it = cell.find({row, N});
      const bool ok = it != cell.end() && it->second->converged;
      if (ok) {
        std::snprintf(buf, sizeof buf, " %9.4f", it->second->avg_input_norm);
        csv << ',' << it->second->avg_input_norm;
      } else {
        std::snprintf(buf, sizeof buf, " %9s", "-");
        csv << ",-";
      }
      text << buf;
    }
    text << '\n';
    csv << '\n';
  }
  csv.precision(old);
}

std::string validate_csv(std::istream& in, const std::string& header, const std::vector<int>& text_columns) {
  std::string line;
  if (!std::getline(in, line)) return "missing header";
  if (line != header) return "header mismatch: '" + line + "'";
  const auto width = std::count(header.begin(), header.end(), ',') + 1;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cells.push_back(c);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (static_cast<long>(cells.size()) != width) return "row " + std::to_string(row) + " has the wrong field count";
    for (int i = 0; i < static_cast<int>(cells.size()); ++i) {
      if (std::find(text_columns.begin(), text_columns.end(), i) != text_columns.end()) continue;
      if (cells[i] == "-") continue;
      try {
        parse_double(cells[i]);
      } catch (const InvalidConfig&) {
        if (cells[i] != "inf" && cells[i] != "-inf" && cells[i] != "nan") {
          return "row " + std::to_string(row) + " column " + std::to_string(i) + " is not numeric";
        }
      }
    }
  }
  return "";
}

int run(int argc, char** argv) {
  CLI::App app{"CLF-constrained NMPC experiments on a planar Segway"};
  std::string experiment;
  std::vector<std::string> formulations;
  std::vector<int> horizons;
  std::string config_path;
  std::string out_dir;
  long long seed = -1;
  bool dump = false;
  app.add_option("--experiment", experiment, "stabilize, reverse, convergence, tracking or single");
  app.add_option("--formulation", formulations, "clf-qp, clf-0, clf-all, lls-n, lls-all, nmpc-<beta>, lls-*-gn");
  app.add_option("--horizon", horizons, "Horizon length N");
  app.add_option("--config", config_path, "Config file");
  app.add_option("--out", out_dir, "Output directory");
  app.add_option("--seed", seed, "Seed recorded with every result");
  app.add_flag("--dump-config", dump, "Print the effective config and exit");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  RunConfig cfg;
  try {
    if (!config_path.empty()) cfg = load_config_file(config_path);
    if (!experiment.empty()) cfg.experiment = parse_experiment(experiment);
    if (!formulations.empty()) cfg.formulations = formulations;
    if (!horizons.empty()) cfg.horizons = horizons;
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (seed >= 0) cfg.settings.seed = static_cast<std::uint64_t>(seed);
    cfg.validate();
  } catch (const Error& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  }
  if (dump) {
    dump_config(std::cout, cfg);
    return 0;
  }

  ExperimentSettings settings = cfg.settings;
  settings.config_hash = config_hash(cfg);
  const std::vector<Formulation> fs = resolve_formulations(cfg);
  const std::vector<int> Ns = resolve_horizons(cfg);
  Writer w(cfg.out_dir);
  bool failed = false;
  try {
    w.write_text("config.ini", [&](std::ostream& os) { dump_config(os, cfg); });
    switch (cfg.experiment) {
      case ExperimentKind::Stabilize:
        failed = write_closed_loop(w, "stabilize", experiment_stabilize(fs, Ns, settings), true);
        break;
      case ExperimentKind::Single:
        failed = write_closed_loop(w, "single", experiment_stabilize({fs.front()}, {Ns.front()}, settings), false);
        break;
      case ExperimentKind::Reverse:
      case ExperimentKind::Tracking: {
        const bool reverse = cfg.experiment == ExperimentKind::Reverse;
        std::vector<ExperimentResult> all;
        for (int N : Ns) {
          auto part = reverse ? experiment_reverse(fs, N, settings) : experiment_tracking(fs, N, settings);
          for (auto& r : part) all.push_back(std::move(r));
        }
        failed = write_closed_loop(w, to_string(cfg.experiment), all, true);
        break;
      }
      case ExperimentKind::Convergence:
        for (int N : Ns) failed = run_convergence(w, fs, N, settings) || failed;
        break;
    }
  } catch (const InvalidConfig& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const Error& e) {
    std::cerr << "controller failure: " << e.what() << '\n';
    return 2;
  }
  const std::string bad = w.validate();
  if (!bad.empty()) {
    std::cerr << "CSV self-check failed: " << bad << '\n';
    return 2;
  }
  std::cout << "config_hash " << settings.config_hash << ", results in " << cfg.out_dir << '\n';
  return failed ? 2 : 0;
}

}  // namespace clfmpc
