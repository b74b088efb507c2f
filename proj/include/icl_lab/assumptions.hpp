#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "icl_lab/hmm.hpp"
#include "icl_lab/operators.hpp"

namespace icl {

struct GeneratorSpec {
  int num_tasks = 3;
  int d_per_task = 3;
  int m = 12;
  int num_labels = 2;
  double epsilon_r_target = 0.05;
  double epsilon_d_target = 0.05;
  /// In [0, 1): share of each non-start state's emission, label and successor
  /// mass concentrated on its designated token / label / successor.
  double separation_target = 0.97;
  /// Fraction of a non-start state's non-delimiter emission mass on labels.
  double label_mass = 0.4;
  /// Extra transition mass from every state back to its own task's start,
  /// on top of epsilon_r_target to every start. Makes the task persist
  /// across demonstrations.
  double persistence = 0.2;

  bool operator==(const GeneratorSpec&) const = default;
};

/// Token layout used by the generator: delimiter first, then one anchor per
/// task, then the labels, then content tokens.
struct GeneratorLayout {
  Token delimiter = 0;
  std::vector<Token> anchors;
  std::vector<Token> labels;
  std::vector<Token> content;
};
GeneratorLayout generator_layout(const GeneratorSpec& spec);

/// Builds a model satisfying recurrence, anchor, delimiter and
/// distinguishability by construction. Error(Validation) names the violated
/// budget when the requested targets are infeasible.
Hmm generate_compliant_hmm(const GeneratorSpec& spec, std::uint64_t seed);

/// min over prefixes (length 1..horizon, positive probability under the task)
/// of P(s_l = s_theta | prefix, theta). Exact enumeration.
double epsilon_r(const Hmm& hmm, int task, std::size_t horizon,
                 std::uint64_t cap = kDefaultEnumerationCap);

/// Sampled min-tracking variant: the minimum over the prefixes of `samples`
/// sampled sequences. Only an upper bound on the true value.
double epsilon_r_sampled(const Hmm& hmm, int task, std::size_t horizon,
                         std::size_t samples, std::uint64_t seed);

bool check_anchor(const Hmm& hmm);
double epsilon_d(const Hmm& hmm);

struct KlMode {
  bool exact = true;
  std::size_t samples = 0;
  std::uint64_t seed = 0;

  static KlMode exact_mode() { return {}; }
  static KlMode monte_carlo(std::size_t n, std::uint64_t seed) {
    return {false, n, seed};
  }
};

struct KlEstimate {
  double value = std::numeric_limits<double>::infinity();
  double std_error = 0.0;
  std::size_t length = 0;
  bool exact = true;
  std::size_t samples = 0;
  /// Minimizing ordered pair (from, to); -1 for single-task models.
  int from_task = -1;
  int to_task = -1;
};

/// KL(P(o_[0:l] | from) || P(o_[0:l] | to)), +inf when `from` puts mass on a
/// sequence `to` cannot emit. Monte-Carlo estimates carry a standard error.
KlEstimate kl_between_tasks(const Hmm& hmm, int from, int to, std::size_t l,
                            const KlMode& mode,
                            std::uint64_t cap = kDefaultEnumerationCap);

/// min over ordered task pairs; +inf by convention for a single task.
KlEstimate epsilon_kl(const Hmm& hmm, std::size_t l, const KlMode& mode,
                      std::uint64_t cap = kDefaultEnumerationCap);

/// True when some sequence has positive probability from `from` but zero from
/// `to` within `l` tokens. Decided on state-support sets, no enumeration.
bool support_escapes(const Hmm& hmm, int from, int to, std::size_t l);

/// Gap between the two largest entries of P(y | x_test, theta) over labels.
double margin_delta(const Hmm& hmm, int task, TokenSpan x_test);

struct ThresholdInputs {
  double epsilon_kl = 0.0;
  double epsilon_r = 0.0;
  double epsilon_d = 0.0;
  double epsilon_theta = 0.0;
  double eta = 0.0;
  double margin = 0.0;
};

/// Demonstration count beyond which posterior and kernel predictions share
/// their argmax with probability 1 - delta_prob. Error(Precondition) when the
/// distinguishability or the deviation condition fails.
std::size_t n_threshold(const ThresholdInputs& in, double delta_prob, int m,
                        double p0_min);

struct AssumptionConfig {
  std::size_t demo_length = 6;
  std::size_t recurrence_horizon = 6;
  std::size_t kl_length = 6;
  std::size_t eta_max_length = 6;
  std::vector<std::size_t> l_grid{6};
  Ridge ridge;
  double delta_prob = 0.1;
  std::size_t margin_samples = 200;
  std::uint64_t seed = 1;
  std::uint64_t enumeration_cap = kDefaultEnumerationCap;
  bool kl_exact = true;
  std::size_t kl_samples = 20000;
};

struct TaskAssumptions {
  int task = 0;
  double epsilon_r = 0.0;
  EpsilonTheta epsilon_theta;
  double margin_min = 0.0;
  double margin_quantile = 0.0;  // lower delta_prob quantile over sampled x_test
  std::vector<double> margins;   // one per sampled x_test
  bool assumption5_ok = false;
  std::optional<std::size_t> n_threshold;
  std::string n_threshold_error;
};

struct AssumptionReport {
  int num_tasks = 0;
  int num_obs = 0;
  double epsilon_r = 0.0;  // min over tasks
  double epsilon_d = 0.0;
  KlEstimate epsilon_kl;
  double eta = 0.0;
  double p0_min = 0.0;
  double delta_prob = 0.1;
  bool recurrence_ok = false;
  bool anchor_ok = false;
  bool delimiter_ok = false;
  bool kl_ok = false;
  bool assumption5_ok = false;
  std::optional<std::size_t> n_delta;  // max over tasks when every task admits one
  std::vector<TaskAssumptions> tasks;

  // provenance
  std::size_t recurrence_horizon = 0;
  std::size_t eta_max_length = 0;
  std::size_t demo_length = 0;
  std::vector<std::size_t> l_grid;
  double ridge = 0.0;
  bool ridge_relative = true;
  std::size_t margin_samples = 0;
  std::uint64_t seed = 0;

  /// Recurrence, anchor, delimiter and distinguishability: the structural
  /// conditions a generated model meets by construction. Experiments gate on
  /// these.
  bool structural_ok() const {
    return recurrence_ok && anchor_ok && delimiter_ok && kl_ok;
  }
  bool compliant() const {
    return recurrence_ok && anchor_ok && delimiter_ok && kl_ok &&
           assumption5_ok;
  }
};

AssumptionReport check_assumptions(const Hmm& hmm,
                                   const AssumptionConfig& config);

nlohmann::json to_json(const AssumptionReport& report);
AssumptionReport report_from_json(const nlohmann::json& doc);
std::string report_table(const AssumptionReport& report);

}  // namespace icl
