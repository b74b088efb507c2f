#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fixtures.hpp"
#include "icl_lab/errors.hpp"
#include "icl_lab/experiments.hpp"
#include "icl_lab/serialization.hpp"

using namespace icl;
namespace fs = std::filesystem;

namespace {

// Generated default model with cheap assumption settings.
ExperimentConfig quick() {
  ExperimentConfig c;
  c.demo_length = DemoLengthPolicy::fixed(4);
  c.recurrence_horizon = 3;
  c.kl_length = 3;
  c.eta_max_length = 3;
  c.l_grid = {3};
  c.margin_samples = 20;
  return c;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("icl_lab_unit_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string model_file(const std::string& name, const Hmm& hmm) {
  const fs::path path = scratch_dir(name) / "model.txt";
  save_hmm(path, hmm);
  return path.string();
}

std::vector<std::vector<std::string>> csv_rows(const std::string& csv) {
  std::vector<std::vector<std::string>> out;
  std::istringstream in(csv);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    out.push_back(cells);
  }
  return out;
}

class ThreadOverride {
 public:
  explicit ThreadOverride(const char* value) { setenv("ICL_LAB_THREADS", value, 1); }
  ~ThreadOverride() { unsetenv("ICL_LAB_THREADS"); }
};

}  // namespace

TEST_CASE("single trial agreement row") {
  ExperimentConfig c = quick();
  c.n_grid = {1};
  c.trials = 1;
  const AgreementCurve curve = run_agreement(c);
  REQUIRE(curve.rows.size() == 1);
  CHECK(curve.rows[0].trials == 1);
  CHECK((curve.rows[0].agreement() == 0.0 || curve.rows[0].agreement() == 1.0));
  CHECK(curve.artifacts.summary["config_hash"] == config_hash(c));
  CHECK(curve.artifacts.summary.contains("assumptions"));
  CHECK(curve.artifacts.csv.rfind("n,trials,agree,agreement,", 0) == 0);
}

TEST_CASE("suites are pure functions of config and seed, serial or parallel") {
  ExperimentConfig c = quick();
  c.n_grid = {1, 4};
  c.trials = 24;
  std::string serial_csv, serial_json;
  {
    ThreadOverride threads("1");
    CHECK(worker_threads() == 1);
    const AgreementCurve a = run_agreement(c);
    serial_csv = a.artifacts.csv;
    serial_json = a.artifacts.summary.dump(2);
  }
  {
    ThreadOverride threads("3");
    CHECK(worker_threads() == 3);
    const AgreementCurve b = run_agreement(c);
    CHECK(b.artifacts.csv == serial_csv);
    CHECK(b.artifacts.summary.dump(2) == serial_json);
  }
  c.seed = 2;
  CHECK(run_agreement(c).artifacts.csv != serial_csv);
}

TEST_CASE("non-compliant models are refused unless allowed") {
  Hmm::Parts parts = generate_compliant_hmm(GeneratorSpec{}, 1).parts();
  parts.emission(4, 0) = 0.0;
  parts.emission.row(4) /= parts.emission.row(4).sum();
  ExperimentConfig c = quick();
  c.hmm.path = model_file("refuse", Hmm::create(parts));
  c.n_grid = {1};
  c.trials = 3;
  try {
    run_agreement(c);
    FAIL("model accepted");
  } catch (const AssumptionRefused& e) {
    CHECK(e.kind() == ErrorKind::AssumptionRefusal);
    CHECK_FALSE(e.report().delimiter_ok);
    CHECK(e.report().epsilon_d == 0.0);
  }
  c.allow_noncompliant = true;
  const AgreementCurve curve = run_agreement(c);
  CHECK_FALSE(curve.report.delimiter_ok);
  CHECK(curve.rows.size() == 1);
}

TEST_CASE("expectation identity is exact for a constant-operator chain") {
  const Hmm flat = fixture::make(fixture::rows({{1.0}}), Matrix::Constant(1, 4, 0.25), {0}, fixture::vec({1.0}),
                                 0, {3});
  ExperimentConfig c = quick();
  c.hmm.path = model_file("identity", flat);
  c.ridge = Ridge{0.0, false};
  c.identity.ladder = {10, 100, 1000};
  c.identity.seeds = 2;
  c.identity.length = 3;
  const IdentityReport r = run_identity_check(c);
  CHECK(r.dim == 1);
  REQUIRE(r.errors.size() == 2);
  for (const auto& row : r.errors) {
    for (double e : row) CHECK(e < 1e-12);
  }
}

TEST_CASE("coverage check with a vacuous confidence level") {
  ExperimentConfig c = quick();
  c.n_grid = {2, 8};
  c.trials = 40;
  c.delta = 1.0;
  const HoeffdingReport r = run_hoeffding_check(c);
  REQUIRE(r.rows.size() == 2);
  for (const auto& row : r.rows) {
    CHECK(row.sampling_term == doctest::Approx(std::sqrt(std::log(4.0 * 12) / (2.0 * row.n))));
    CHECK(row.coverage() >= 0.5);
    CHECK(row.required < 0.5);
  }
}

TEST_CASE("a single task keeps all posterior mass") {
  ExperimentConfig c = quick();
  c.hmm.generate.num_tasks = 1;
  c.n_grid = {1, 4};
  c.trials = 20;
  const ConcentrationReport r = run_concentration_check(c);
  for (const auto& row : r.rows) {
    CHECK(row.violations == 0);
    CHECK(row.min_mass == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK(r.onset_n == std::optional<std::size_t>(1));
}

TEST_CASE("bound onset matches the root of the exponent") {
  const double eps_kl = 8.0, eps_d = 0.5, eps_r = 0.5, p0 = 1.0 / 3.0, delta = 0.1;
  auto exponent = [&](double n) {
    return -n * eps_kl + std::sqrt(std::log(4.0 / delta) / n) + n * std::log(1 / eps_d) +
           (n + 1) * std::log(1 / eps_r) + std::log(1 / p0);
  };
  double lo = 1e-6, hi = 1e6;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (exponent(mid) > 0 ? lo : hi) = mid;
  }
  const auto expected = static_cast<std::size_t>(std::max(1.0, std::floor(lo) + 1.0));
  CHECK(concentration_onset(eps_kl, eps_d, eps_r, p0, delta) == std::optional<std::size_t>(expected));
  CHECK(concentration_bound(2, eps_kl, eps_d, eps_r, p0, delta) ==
        doctest::Approx(1.0 - std::exp(exponent(2.0))));
  CHECK(concentration_onset(INFINITY, eps_d, eps_r, p0, delta) == std::optional<std::size_t>(1));
  CHECK(concentration_bound(5, INFINITY, eps_d, eps_r, p0, delta) == 1.0);
  CHECK_FALSE(concentration_onset(1.0, eps_d, eps_r, p0, delta, 1000).has_value());
}

TEST_CASE("retrieval from a pool of exactly n demonstrations changes nothing") {
  ExperimentConfig c = quick();
  c.trials = 30;
  c.ablation.kind = AblationKind::Retrieval;
  c.ablation.n = 4;
  c.ablation.pool_factor = 1;
  const RetrievalReport r = run_retrieval_ablation(c);
  CHECK(r.pool == 4);
  CHECK(r.kernel.difference == 0.0);
  CHECK(r.kernel.arm_only == 0);
  CHECK(r.kernel.base_only == 0);
  CHECK(r.bayes.difference == 0.0);
}

TEST_CASE("label permutations") {
  ExperimentConfig c = quick();
  c.trials = 30;
  c.ablation.kind = AblationKind::LabelPermute;
  const Hmm hmm = resolve_hmm(c);
  const LabelPermutationReport same = run_label_permutation(c, hmm.label_set());
  CHECK(same.kernel.difference == 0.0);
  CHECK(same.bayes.difference == 0.0);

  const LabelPermutationReport swapped = run_label_permutation(c);
  CHECK(swapped.permutation.size() == 2);
  CHECK(swapped.permutation[0] == hmm.label_set()[1]);
  CHECK(swapped.structural_violations == 0);
  CHECK(swapped.structural_checked > 0);
  CHECK_THROWS_AS(run_label_permutation(c, {4, 4}), Error);
}

TEST_CASE("out-of-distribution demonstrations from the test task match the baseline") {
  ExperimentConfig c = quick();
  c.trials = 30;
  c.ablation.kind = AblationKind::Ood;
  c.ablation.source_task = 0;
  c.ablation.ood_n = 4;
  const OodReport r = run_ood_ablation(c);
  const auto rows = csv_rows(r.artifacts.csv);
  REQUIRE(rows.size() == 31);
  const auto& header = rows[0];
  auto col = [&](const std::string& name) {
    return static_cast<std::size_t>(std::find(header.begin(), header.end(), name) - header.begin());
  };
  int checked = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i][col("task")] != "0") continue;
    CHECK(rows[i][col("agree_in")] == rows[i][col("agree_ood")]);
    CHECK(rows[i][col("kernel_in")] == rows[i][col("kernel_ood")]);
    ++checked;
  }
  CHECK(checked == 10);
  REQUIRE(r.epsilon_theta_ood.size() == 3);
  CHECK(r.epsilon_theta_ood[0] < 1e-9);
}

TEST_CASE("operator and forward likelihoods agree across the random suite") {
  ExperimentConfig c = quick();
  c.eq2.models = 25;
  const Eq2Report r = run_eq2_check(c);
  CHECK(r.models == 25);
  CHECK(r.max_relative_deviation <= 1e-10);
  CHECK(r.mass_checked > 0);
  CHECK(r.max_mass_deviation <= 1e-10);
}

TEST_CASE("artifacts land on disk") {
  const fs::path dir = scratch_dir("artifacts");
  const Artifacts a{"demo", "x,y\n1,2\n", {{"k", 1}}};
  const auto paths = write_artifacts(dir, a);
  REQUIRE(paths.size() == 2);
  std::ifstream csv(dir / "demo.csv");
  std::stringstream body;
  body << csv.rdbuf();
  CHECK(body.str() == a.csv);
  CHECK(fs::exists(dir / "demo.json"));
}
