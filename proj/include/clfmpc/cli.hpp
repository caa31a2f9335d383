#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "clfmpc/errors.hpp"
#include "clfmpc/sim.hpp"

namespace clfmpc {

/// Config file problem, tagged with the 1-based line (0 when not line-bound).
class ConfigError : public InvalidConfig {
 public:
  ConfigError(const std::string& what, int line, std::string key)
      : InvalidConfig(what), line_(line), key_(std::move(key)) {}
  int line() const { return line_; }
  const std::string& key() const { return key_; }

 private:
  int line_;
  std::string key_;
};

enum class ExperimentKind { Stabilize, Reverse, Convergence, Tracking, Single };

std::string to_string(ExperimentKind kind);
ExperimentKind parse_experiment(const std::string& name);

/// Hessian choice applied on top of each formulation's own.
enum class HessianOverride { Auto, GaussNewton, GaussNewtonPlusLls };

struct RunConfig {
  ExperimentKind experiment = ExperimentKind::Stabilize;
  std::vector<std::string> formulations;  // empty selects the experiment's default set
  std::vector<int> horizons;              // empty selects the experiment's default set
  HessianOverride hessian = HessianOverride::Auto;
  std::string out_dir = "results";
  ExperimentSettings settings;

  /// Throws InvalidConfig on unknown formulations, non-positive horizons or
  /// bad numeric settings.
  void validate() const;
};

/// Sectioned `key = value` text. `#` and `;` start comments.
/// Throws ConfigError naming the line and key.
RunConfig load_config(std::istream& in);
RunConfig load_config_file(const std::string& path);

/// Every key with its current value; doubles are written with %.17g.
void dump_config(std::ostream& os, const RunConfig& cfg);
std::string dump_config(const RunConfig& cfg);

/// 64-bit FNV-1a of the dumped config as 16 hex digits.
std::string config_hash(const RunConfig& cfg);

std::vector<Formulation> resolve_formulations(const RunConfig& cfg);
std::vector<int> resolve_horizons(const RunConfig& cfg);

/// Rows are formulations in first-seen order, columns are horizons in
/// ascending order. Runs that did not converge print as "-".
void emit_summary_table(std::ostream& text, std::ostream& csv, const std::vector<ExperimentResult>& results);

/// Checks the header and that every row has the same field count and
/// numeric values outside `text_columns`. Returns an empty string when valid.
std::string validate_csv(std::istream& in, const std::string& header, const std::vector<int>& text_columns);

/// Exit codes: 0 success, 1 configuration error, 2 controller failure.
int run(int argc, char** argv);

}  // namespace clfmpc
