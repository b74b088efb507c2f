// Runs every acceptance criterion at its stated tolerance and prints one
// PASS/FAIL line each. Exit status is the number of failed criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "icl_lab/assumptions.hpp"
#include "icl_lab/errors.hpp"
#include "icl_lab/experiments.hpp"
#include "icl_lab/rng.hpp"
#include "oracles.hpp"

using namespace icl;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* format, double a = 0, double b = 0, double c = 0, double d = 0) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, a, b, c, d);
  return buf;
}

std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (const auto& p : parts) out += (out.empty() ? "" : "; ") + p;
  return out;
}

// Criterion 1
Outcome operator_equivalence() {
  const Eq2Report r = run_eq2_check(ExperimentConfig{});
  return {r.models == 200 && r.max_relative_deviation <= 1e-10,
          fmt("%.0f models, %.0f sequences, max relative deviation %.3g", static_cast<double>(r.models),
              static_cast<double>(r.sequences), r.max_relative_deviation)};
}

// Criterion 2
Outcome total_mass() {
  Rng rng(2);
  double worst = 0.0;
  int models = 0;
  for (int d = 1; d <= 4; ++d) {
    for (int m = 2; m <= 5; ++m) {
      for (std::size_t l = 1; l <= 6; ++l) {
        const Hmm hmm = random_hmm(d, m, 1 + static_cast<int>(rng.below(static_cast<std::size_t>(d))), rng);
        double total = 0.0;
        oracle::for_each_sequence(m, l, [&](const TokenSeq& s) {
          total += forward_likelihood(hmm, hmm.pretrain_init(), s);
        });
        worst = std::max(worst, std::abs(total - 1.0));
        ++models;
      }
    }
  }
  return {worst <= 1e-10, fmt("%.0f (d, m, l) cells, max |sum - 1| = %.3g", models, worst)};
}

ExperimentConfig identity_config() {
  ExperimentConfig c;
  c.hmm.generate.num_tasks = 1;
  c.identity.ladder = {1000, 10000, 100000};
  c.identity.seeds = 10;
  c.identity.length = 4;
  return c;
}

// Criterion 3
Outcome expectation_identity() {
  const IdentityReport r = run_identity_check(identity_config());
  const bool accurate = r.max_error_at_top <= 0.05;
  const bool monotone = r.monotone_seeds >= 8;
  return {accurate && monotone,
          fmt("d = %.0f, relative error at N = 1e5 max %.4f mean %.4f (limit 0.05 on every seed), ",
              std::sqrt(static_cast<double>(r.dim)), r.max_error_at_top, r.mean_error_at_top) +
              fmt("monotone on %.0f/10 seeds (need 8)", static_cast<double>(r.monotone_seeds))};
}

// Criterion 4
Outcome hoeffding_envelope() {
  ExperimentConfig c;
  c.n_grid = {8, 32};
  c.trials = 2000;
  c.delta = 0.1;
  const HoeffdingReport r = run_hoeffding_check(c);
  bool pass = r.rows.size() == 2;
  std::vector<std::string> parts;
  for (const auto& row : r.rows) {
    pass = pass && row.coverage() >= row.required;
    parts.push_back(fmt("n=%.0f coverage %.4f >= %.4f (sampling-only %.4f)", static_cast<double>(row.n),
                        row.coverage(), row.required, row.coverage_sampling_only()));
  }
  return {pass, join(parts)};
}

// Criterion 5
Outcome posterior_concentration() {
  ExperimentConfig c;
  c.trials = 200;
  const ConcentrationReport r = run_concentration_check(c);
  std::vector<std::string> parts;
  if (!r.report.n_delta) parts.push_back("n_threshold undefined on the default model");
  std::size_t evaluated = 0;
  bool rates_ok = true;
  double worst_rate = 0.0;
  double allowed = 1.0;
  for (const auto& row : r.rows) {
    rates_ok = rates_ok && row.violation_rate() <= row.allowed;
    if (row.violation_rate() >= worst_rate) {
      worst_rate = row.violation_rate();
      allowed = row.allowed;
    }
    if (row.at_or_above_threshold) ++evaluated;
  }
  parts.push_back(fmt("worst violation rate %.4f (allowed %.4f), rows at or above n_threshold: %.0f",
                      worst_rate, allowed, static_cast<double>(evaluated)));
  return {r.report.n_delta.has_value() && evaluated > 0 && rates_ok, join(parts)};
}

// Criterion 6
Outcome kernel_agreement() {
  const AgreementCurve r = run_agreement(ExperimentConfig{});
  const AgreementRow& last = r.rows.back();
  const bool high = last.agreement() >= 0.95;
  const bool increasing = r.trend.p_value < 0.01;
  const bool beyond = r.report.n_delta && last.n >= *r.report.n_delta;
  std::vector<std::string> parts{
      fmt("agreement at n=%.0f is %.4f over %.0f trials", static_cast<double>(last.n), last.agreement(),
          static_cast<double>(last.trials)),
      fmt("trend z = %.2f, p = %.3g", r.trend.z, r.trend.p_value),
      r.report.n_delta ? fmt("n_threshold %.0f", static_cast<double>(*r.report.n_delta))
                       : std::string("n_threshold undefined on the default model")};
  return {high && increasing && beyond, join(parts)};
}

// Criterion 7
Outcome machinery_exactness() {
  std::vector<std::string> parts;
  bool pass = true;

  Rng rng(7);
  double worst_r = 0.0;
  bool delim = true;
  for (int k = 0; k < 20; ++k) {
    const Hmm hmm = random_hmm(3, 3, 1 + static_cast<int>(rng.below(3)), rng);
    double col_min = 1.0;
    for (int s = 0; s < hmm.num_states(); ++s) col_min = std::min(col_min, hmm.emission()(s, hmm.delimiter()));
    delim = delim && epsilon_d(hmm) == col_min;
    for (int task = 0; task < hmm.num_tasks(); ++task) {
      const double want = oracle::brute_recurrence(hmm, hmm.task_start(task), 4);
      worst_r = std::max(worst_r, std::abs(epsilon_r(hmm, task, 4) - want));
    }
  }
  pass = pass && delim && worst_r <= 1e-10;
  parts.push_back(std::string("epsilon_d column minimum ") + (delim ? "exact" : "MISMATCH"));
  parts.push_back(fmt("epsilon_r max deviation %.3g", worst_r));

  Matrix b(2, 3);
  b << 0.5, 0.5, 0.0, 0.25, 0.25, 0.5;
  const Hmm pair = Hmm::create({Matrix::Identity(2, 2), b, {0, 1}, Vector::Constant(2, 0.5), 0, {2}});
  const double forward = kl_between_tasks(pair, 0, 1, 3, KlMode::exact_mode()).value;
  const double backward = kl_between_tasks(pair, 1, 0, 3, KlMode::exact_mode()).value;
  const bool kl_ok = std::abs(forward - 3.0 * std::log(2.0)) <= 1e-12 && std::isinf(backward);
  pass = pass && kl_ok;
  parts.push_back(fmt("KL = %.15f (3 ln 2 = %.15f), reverse ", forward, 3.0 * std::log(2.0)) +
                  (std::isinf(backward) ? "inf" : "finite"));

  auto message = [](const ThresholdInputs& in) -> std::string {
    try {
      n_threshold(in, 0.1, 12, 0.5);
    } catch (const Error& e) {
      return e.kind() == ErrorKind::Precondition ? e.what() : "";
    }
    return "";
  };
  const bool first = message({std::log(4.0), 0.5, 0.5, 0.0, 1.0, 0.5})
                         .rfind("distinguishability condition violated", 0) == 0;
  const bool second = message({std::log(4.0) + 1.0, 0.5, 0.5, 0.25, 1.0, 0.5})
                          .rfind("deviation condition violated", 0) == 0;
  const bool inside = message({std::log(4.0) + 1e-9, 0.5, 0.5, 0.25 - 1e-9, 1.0, 0.5}).empty();
  pass = pass && first && second && inside;
  parts.push_back(std::string("threshold boundaries ") + (first && second && inside ? "exact" : "WRONG"));
  return {pass, join(parts)};
}

// Criterion 8
Outcome ablations() {
  std::vector<std::string> parts;
  ExperimentConfig c;
  c.ablation.kind = AblationKind::Retrieval;
  const RetrievalReport retrieval = run_retrieval_ablation(c);
  const bool r_ok = retrieval.kernel.p_arm_better < 0.05;
  parts.push_back(fmt("retrieval: similarity %.0f vs random %.0f correct, p = %.3g",
                      static_cast<double>(retrieval.kernel.arm_correct),
                      static_cast<double>(retrieval.kernel.base_correct), retrieval.kernel.p_arm_better));

  c.ablation.kind = AblationKind::LabelPermute;
  const LabelPermutationReport perm = run_label_permutation(c);
  const bool p_ok = perm.structural_violations == 0 && perm.structural_checked > 0 &&
                    perm.kernel.p_arm_worse < 0.05;
  parts.push_back(fmt("derangement: %.0f/%.0f structural violations, kernel %.0f -> %.0f correct",
                      static_cast<double>(perm.structural_violations),
                      static_cast<double>(perm.structural_checked),
                      static_cast<double>(perm.kernel.base_correct), static_cast<double>(perm.kernel.arm_correct)) +
                  fmt(", p = %.3g", perm.kernel.p_arm_worse));

  c.ablation.kind = AblationKind::Ood;
  const OodReport ood = run_ood_ablation(c);
  const bool o_ok = ood.n == 32 && ood.agreement.p_arm_worse < 0.05;
  parts.push_back(fmt("OOD at n=%.0f: agreement %.0f -> %.0f, p = %.3g", static_cast<double>(ood.n),
                      static_cast<double>(ood.agreement.base_correct),
                      static_cast<double>(ood.agreement.arm_correct), ood.agreement.p_arm_worse));
  return {r_ok && p_ok && o_ok, join(parts)};
}

// Criterion 9
Outcome determinism() {
  ExperimentConfig c;
  c.trials = 60;
  c.n_grid = {1, 8};
  c.identity.ladder = {100, 1000};
  c.identity.seeds = 2;
  c.eq2.models = 20;
  std::vector<std::pair<std::string, std::function<Artifacts()>>> suites{
      {"agreement", [&] { return run_agreement(c).artifacts; }},
      {"identity", [&] { return run_identity_check(identity_config()).artifacts; }},
      {"hoeffding", [&] { return run_hoeffding_check(c).artifacts; }},
      {"concentration", [&] { return run_concentration_check(c).artifacts; }},
      {"retrieval", [&] { return run_retrieval_ablation(c).artifacts; }},
      {"label_permute", [&] { return run_label_permutation(c).artifacts; }},
      {"ood", [&] { return run_ood_ablation(c).artifacts; }},
      {"eq2", [&] { return run_eq2_check(c).artifacts; }},
  };
  std::vector<std::string> differing;
  for (auto& [name, run] : suites) {
    const Artifacts a = run();
    const Artifacts b = run();
    if (a.csv != b.csv || a.summary.dump(2) != b.summary.dump(2)) differing.push_back(name);
  }
  return {differing.empty(), differing.empty() ? fmt("%.0f suites byte-identical on re-run",
                                                     static_cast<double>(suites.size()))
                                               : "differs: " + join(differing)};
}

struct Criterion {
  int id;
  const char* name;
  double budget_seconds;
  Outcome (*run)();
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {1, "operator likelihood equals forward likelihood", 10, operator_equivalence},
      {2, "sequence probabilities sum to one", 30, total_mass},
      {3, "expectation identity by Monte Carlo", 120, expectation_identity},
      {4, "Hoeffding envelope coverage", 300, hoeffding_envelope},
      {5, "task-posterior concentration", 300, posterior_concentration},
      {6, "kernel / posterior argmax agreement", 600, kernel_agreement},
      {7, "assumption machinery exactness", 60, machinery_exactness},
      {8, "retrieval, label and OOD ablations", 900, ablations},
      {9, "determinism of artifacts", std::numeric_limits<double>::infinity(), determinism},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out = {false, std::string("error: ") + e.what()};
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = seconds < c.budget_seconds;
    const bool pass = out.pass && in_time;
    failed += pass ? 0 : 1;
    std::printf("%s %d %s: %s [%.1f s%s]\n", pass ? "PASS" : "FAIL", c.id, c.name, out.detail.c_str(), seconds,
                in_time ? "" : ", over budget");
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed;
}
