#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "icl_lab/assumptions.hpp"
#include "icl_lab/errors.hpp"
#include "icl_lab/hmm.hpp"
#include "icl_lab/operators.hpp"
#include "icl_lab/predictors.hpp"

namespace icl {

struct HmmSource {
  GeneratorSpec generate;
  std::uint64_t generator_seed = 7;
  std::string path;  // when nonempty, the model is loaded instead

  bool operator==(const HmmSource&) const = default;
};

enum class AblationKind { None, Retrieval, LabelPermute, Ood };

struct AblationConfig {
  AblationKind kind = AblationKind::None;
  int source_task = -1;         // ood: -1 picks (test task + 1) mod K
  std::size_t n = 4;            // retrieval / label_permute demonstrations
  std::size_t ood_n = 32;
  std::size_t pool_factor = 5;  // retrieval pool = pool_factor * n

  bool operator==(const AblationConfig&) const = default;
};

struct IdentityConfig {
  std::vector<std::size_t> ladder{1000, 10000, 100000};
  std::size_t seeds = 10;
  std::size_t length = 4;
  int task = 0;

  bool operator==(const IdentityConfig&) const = default;
};

/// Forward-vs-operator likelihood comparison over random models.
struct Eq2Config {
  std::size_t models = 200;
  int max_states = 8;
  int max_obs = 10;
  std::size_t max_length = 12;
  std::size_t sequences_per_model = 5;
  /// Models with m^l at most this size also get a total-mass check.
  std::uint64_t mass_check_cap = 20000;

  bool operator==(const Eq2Config&) const = default;
};

struct ExperimentConfig {
  HmmSource hmm;
  std::vector<std::size_t> n_grid{1, 2, 4, 8, 16, 32, 64};
  std::size_t trials = 500;
  double delta = 0.1;
  DemoLengthPolicy demo_length = DemoLengthPolicy::fixed(6);
  Ridge ridge;
  std::vector<std::size_t> l_grid{6};
  std::uint64_t seed = 1;
  AblationConfig ablation;
  IdentityConfig identity;
  Eq2Config eq2;
  bool allow_noncompliant = false;
  std::uint64_t enumeration_cap = 5'000'000;
  std::size_t kl_length = 6;
  bool kl_exact = true;
  std::size_t kl_samples = 20000;
  std::size_t recurrence_horizon = 6;
  std::size_t eta_max_length = 6;
  std::size_t margin_samples = 200;
  ScoreDomain score_domain = ScoreDomain::Labels;

  bool operator==(const ExperimentConfig& other) const;
  void validate() const;
  AssumptionConfig assumption_config() const;
};

/// Strict parse: unknown keys, type mismatches and invalid values raise
/// Error(Schema) naming the JSON pointer of the offending field.
ExperimentConfig parse_config(const nlohmann::json& doc);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Every field, defaults included.
nlohmann::json config_to_json(const ExperimentConfig& config);
/// SHA-256 of the canonical JSON dump of config_to_json.
std::string config_hash(const ExperimentConfig& config);
/// Lowercase hex SHA-256 digest.
std::string sha256_hex(std::string_view data);

Hmm resolve_hmm(const ExperimentConfig& config);

/// Thrown when a suite refuses a model that fails a structural assumption.
class AssumptionRefused : public Error {
 public:
  explicit AssumptionRefused(AssumptionReport report);
  const AssumptionReport& report() const { return report_; }

 private:
  AssumptionReport report_;
};

/// Output of one suite: a CSV body and a JSON summary.
struct Artifacts {
  std::string name;
  std::string csv;
  nlohmann::json summary;
};

struct AgreementRow {
  std::size_t n = 0;
  std::size_t trials = 0;
  std::size_t agree = 0;
  std::size_t bayes_correct = 0;
  std::size_t kernel_correct = 0;
  std::size_t bayes_ties = 0;
  std::size_t kernel_ties = 0;
  std::size_t degenerate = 0;
  double mean_abs_weight = 0.0;
  double mean_weight_sum = 0.0;

  double agreement() const;
  double bayes_accuracy() const;
  double kernel_accuracy() const;
};

struct TrendTest {
  std::string name = "two-proportion z (one-sided)";
  std::size_t n_low = 0;
  std::size_t n_high = 0;
  double z = 0.0;
  double p_value = 1.0;
  std::size_t isotonic_violations = 0;
};

struct AgreementCurve {
  std::vector<AgreementRow> rows;
  AssumptionReport report;
  TrendTest trend;
  Artifacts artifacts;
};

AgreementCurve run_agreement(const ExperimentConfig& config);

struct IdentityReport {
  std::vector<std::size_t> ladder;
  std::vector<std::vector<double>> errors;  // [seed][ladder step]
  std::size_t monotone_seeds = 0;
  double max_error_at_top = 0.0;
  double mean_error_at_top = 0.0;
  std::size_t dim = 0;
  Artifacts artifacts;
};

IdentityReport run_identity_check(const ExperimentConfig& config);

struct HoeffdingRow {
  std::size_t n = 0;
  std::size_t trials = 0;
  std::size_t covered = 0;
  std::size_t covered_sampling_only = 0;
  double sampling_term = 0.0;   // sqrt(ln(4m/delta) / (2n))
  double deviation_term = 0.0;  // eta^2 * epsilon_theta, worst task
  double median_error = 0.0;
  double required = 0.0;        // 1 - delta/2 - 2 SE

  double coverage() const;
  double coverage_sampling_only() const;
};

struct HoeffdingReport {
  std::vector<HoeffdingRow> rows;
  AssumptionReport report;
  bool median_error_decreasing = false;
  Artifacts artifacts;
};

HoeffdingReport run_hoeffding_check(const ExperimentConfig& config);

struct ConcentrationRow {
  std::size_t n = 0;
  std::size_t trials = 0;
  std::size_t violations = 0;
  double mean_mass = 0.0;
  double min_mass = 1.0;
  double bound = 0.0;
  double allowed = 0.0;  // delta/2 + 2 SE
  bool at_or_above_threshold = false;

  double violation_rate() const;
};

struct ConcentrationReport {
  std::vector<ConcentrationRow> rows;
  AssumptionReport report;
  std::optional<std::size_t> onset_n;  // first n with a positive bound
  Artifacts artifacts;
};

ConcentrationReport run_concentration_check(const ExperimentConfig& config);

/// Lower bound on the posterior mass of the true task after n demonstrations,
/// 1 - exp(-n eps_kl + sqrt(ln(4/delta)/n) + n ln(1/eps_d)
///         + (n+1) ln(1/eps_r) + ln(1/p0_min)).
double concentration_bound(std::size_t n, double eps_kl, double eps_d,
                           double eps_r, double p0_min, double delta);
/// Smallest n >= 1 with a positive bound, searched up to `limit`.
std::optional<std::size_t> concentration_onset(double eps_kl, double eps_d,
                                               double eps_r, double p0_min,
                                               double delta,
                                               std::size_t limit = 1000000);

struct PairedComparison {
  std::string test = "sign test (one-sided)";
  std::size_t trials = 0;
  std::size_t base_correct = 0;
  std::size_t arm_correct = 0;
  std::size_t arm_only = 0;   // arm right, base wrong
  std::size_t base_only = 0;  // base right, arm wrong
  double difference = 0.0;    // arm - base accuracy
  double ci_low = 0.0;
  double ci_high = 0.0;
  double p_arm_better = 1.0;
  double p_arm_worse = 1.0;
};

struct RetrievalReport {
  std::size_t n = 0;
  std::size_t pool = 0;
  PairedComparison kernel;  // base = random, arm = similarity
  PairedComparison bayes;
  std::size_t degenerate = 0;
  Artifacts artifacts;
};

struct LabelPermutationReport {
  std::size_t n = 0;
  std::vector<Token> permutation;  // image of label_set[i]
  PairedComparison kernel;         // base = original labels, arm = permuted
  PairedComparison bayes;
  std::size_t structural_checked = 0;
  std::size_t structural_violations = 0;
  std::size_t degenerate = 0;
  Artifacts artifacts;
};

struct OodReport {
  std::size_t n = 0;
  int source_task = -1;
  PairedComparison agreement;  // base = in-distribution, arm = OOD
  PairedComparison kernel_accuracy;
  std::size_t degenerate_in = 0;
  std::size_t degenerate_ood = 0;
  std::size_t impossible_ood = 0;
  std::vector<double> epsilon_theta_pretrain;  // per test task
  std::vector<double> epsilon_theta_ood;       // rho(inv(S_ood) - inv(S_test))
  Artifacts artifacts;
};

struct Eq2Report {
  std::size_t models = 0;
  std::size_t sequences = 0;
  double max_relative_deviation = 0.0;
  std::size_t mass_checked = 0;
  double max_mass_deviation = 0.0;
  Artifacts artifacts;
};

/// Compares operator_likelihood with forward_likelihood on random models and
/// sequences (including zero-probability ones).
Eq2Report run_eq2_check(const ExperimentConfig& config);

RetrievalReport run_retrieval_ablation(const ExperimentConfig& config);
LabelPermutationReport run_label_permutation(
    const ExperimentConfig& config, std::vector<Token> permutation = {});
OodReport run_ood_ablation(const ExperimentConfig& config);

/// Writes <dir>/<name>.csv and <dir>/<name>.json and returns both paths.
std::vector<std::filesystem::path> write_artifacts(
    const std::filesystem::path& dir, const Artifacts& artifacts);

/// Thread count from ICL_LAB_THREADS (default: hardware concurrency).
std::size_t worker_threads();

}  // namespace icl
