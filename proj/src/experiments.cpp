#include "icl_lab/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <memory>
#include <numeric>
#include <sstream>
#include <thread>

#include "icl_lab/parallel.hpp"
#include "icl_lab/rng.hpp"
#include "icl_lab/serialization.hpp"
#include "icl_lab/stats.hpp"

namespace icl {
namespace {

using nlohmann::json;

// Stream tags for derive_seed, one per suite and arm.
enum Tag : std::uint64_t {
  kAgreement = 0x61677265,
  kIdentity = 0x6964656e,
  kHoeffding = 0x686f6566,
  kConcentration = 0x636f6e63,
  kRetrieval = 0x72657472,
  kPermutation = 0x7065726d,
  kOod = 0x6f6f6421,
  kEq2 = 0x65713221,
  kDemos = 0x64656d6f,
  kTest = 0x74657374,
};

struct Prepared {
  Hmm hmm;
  AssumptionReport report;
};

Prepared prepare(const ExperimentConfig& config) {
  config.validate();
  Hmm hmm = resolve_hmm(config);
  AssumptionReport report = check_assumptions(hmm, config.assumption_config());
  if (!report.structural_ok() && !config.allow_noncompliant) {
    throw AssumptionRefused(std::move(report));
  }
  return {std::move(hmm), std::move(report)};
}

json summary_header(const std::string& suite, const ExperimentConfig& config) {
  return {{"suite", suite},
          {"config_hash", config_hash(config)},
          {"config", config_to_json(config)},
          {"seed", config.seed}};
}

std::string csv_line(std::initializer_list<std::string> cells) {
  std::string out;
  for (const auto& c : cells) {
    if (!out.empty()) out += ",";
    out += c;
  }
  return out + "\n";
}

std::string num(double v) { return format_real(v); }
std::string num(std::size_t v) { return std::to_string(v); }
std::string num(int v) { return std::to_string(v); }

double rate(std::size_t k, std::size_t n) {
  return n == 0 ? 0.0 : static_cast<double>(k) / static_cast<double>(n);
}

int truth_index(const Hmm& hmm, int task, TokenSpan x_test) {
  const Vector p = label_distribution(hmm, hmm.task_init(task), x_test);
  Eigen::Index best = 0;
  p.maxCoeff(&best);
  return static_cast<int>(best);
}

int trial_task(const Hmm& hmm, std::size_t trial) {
  return static_cast<int>(trial % static_cast<std::size_t>(hmm.num_tasks()));
}

SigmaInverseCache pretrain_cache(const Hmm& hmm, const ExperimentConfig& config) {
  return SigmaInverseCache(hmm, hmm.pretrain_init(), "pretrain", MomentEstimator::exact(),
                           config.ridge, config.enumeration_cap);
}

void warm(const SigmaInverseCache& cache, const DemoLengthPolicy& policy) {
  for (std::size_t l = policy.min_len; l <= policy.max_len; ++l) cache.inverse(l);
}

SigmaInverseProvider provider(const SigmaInverseCache& cache) {
  return [&cache](std::size_t l) -> const Matrix& { return cache.inverse(l); };
}

IclPrompt prompt_with_demos(const Hmm& hmm, int demo_task, std::size_t n,
                            const DemoLengthPolicy& policy, std::uint64_t demo_seed,
                            const TokenSeq& x_test, int test_task) {
  Rng rng(demo_seed);
  IclPrompt prompt;
  prompt.delimiter = hmm.delimiter();
  prompt.task_id = test_task;
  for (std::size_t i = 0; i < n; ++i) {
    prompt.demos.push_back(sample_demo(hmm, demo_task, policy.draw(rng), rng));
  }
  prompt.test_input = x_test;
  return prompt;
}

json paired_json(const PairedComparison& p) {
  return {{"test", p.test},
          {"trials", p.trials},
          {"base_correct", p.base_correct},
          {"arm_correct", p.arm_correct},
          {"arm_only", p.arm_only},
          {"base_only", p.base_only},
          {"difference", p.difference},
          {"ci95", {p.ci_low, p.ci_high}},
          {"p_arm_better", p.p_arm_better},
          {"p_arm_worse", p.p_arm_worse}};
}

PairedComparison compare(const std::vector<char>& base, const std::vector<char>& arm) {
  PairedComparison p;
  p.trials = base.size();
  double sum = 0.0;
  double sum_sq = 0.0;
  for (std::size_t i = 0; i < base.size(); ++i) {
    p.base_correct += base[i] ? 1 : 0;
    p.arm_correct += arm[i] ? 1 : 0;
    if (arm[i] && !base[i]) ++p.arm_only;
    if (base[i] && !arm[i]) ++p.base_only;
    const double d = static_cast<double>(arm[i] ? 1 : 0) - static_cast<double>(base[i] ? 1 : 0);
    sum += d;
    sum_sq += d * d;
  }
  if (p.trials == 0) return p;
  const auto n = static_cast<double>(p.trials);
  p.difference = sum / n;
  const double var = p.trials > 1 ? (sum_sq - n * p.difference * p.difference) / (n - 1.0) : 0.0;
  const double half = 1.959963984540054 * std::sqrt(std::max(0.0, var) / n);
  p.ci_low = p.difference - half;
  p.ci_high = p.difference + half;
  const std::size_t discordant = p.arm_only + p.base_only;
  p.p_arm_better = stats::sign_test_upper(p.arm_only, discordant);
  p.p_arm_worse = stats::sign_test_upper(p.base_only, discordant);
  return p;
}

}  // namespace

std::size_t worker_threads() {
  if (const char* env = std::getenv("ICL_LAB_THREADS")) {
    char* end = nullptr;
    const unsigned long v = std::strtoul(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return v;
  }
  return std::max(1U, std::thread::hardware_concurrency());
}

double AgreementRow::agreement() const { return rate(agree, trials); }
double AgreementRow::bayes_accuracy() const { return rate(bayes_correct, trials); }
double AgreementRow::kernel_accuracy() const { return rate(kernel_correct, trials); }
double HoeffdingRow::coverage() const { return rate(covered, trials); }
double HoeffdingRow::coverage_sampling_only() const {
  return rate(covered_sampling_only, trials);
}
double ConcentrationRow::violation_rate() const { return rate(violations, trials); }

AgreementCurve run_agreement(const ExperimentConfig& config) {
  Prepared prep = prepare(config);
  const Hmm& hmm = prep.hmm;
  const SigmaInverseCache cache = pretrain_cache(hmm, config);
  warm(cache, config.demo_length);

  struct Trial {
    bool agree = false;
    bool bayes_correct = false;
    bool kernel_correct = false;
    bool bayes_tie = false;
    bool kernel_tie = false;
    bool degenerate = false;
    double mean_abs_weight = 0.0;
    double weight_sum = 0.0;
  };

  AgreementCurve curve;
  curve.report = prep.report;
  for (std::size_t n : config.n_grid) {
    std::vector<Trial> trials(config.trials);
    parallel_for(config.trials, worker_threads(), [&](std::size_t t) {
      const int task = trial_task(hmm, t);
      const IclPrompt prompt =
          build_prompt(hmm, task, n, config.demo_length, derive_seed(config.seed, {kAgreement, n, t}));
      Trial& out = trials[t];
      const int truth = truth_index(hmm, task, prompt.test_input);
      const PredictionOutcome bayes = bayes_predict(hmm, prompt, config.score_domain);
      out.bayes_correct = bayes.argmax_index == truth;
      out.bayes_tie = bayes.tie;
      const std::vector<double> w = kernel_weights(hmm, prompt, provider(cache));
      for (double x : w) {
        out.weight_sum += x;
        out.mean_abs_weight += std::abs(x);
      }
      out.mean_abs_weight /= static_cast<double>(w.size());
      std::vector<Token> labels;
      for (const auto& d : prompt.demos) labels.push_back(d.label);
      try {
        const PredictionOutcome kernel = kernel_from_weights(hmm, w, labels);
        out.kernel_correct = kernel.argmax_index == truth;
        out.kernel_tie = kernel.tie;
        out.agree = kernel.argmax_index == bayes.argmax_index;
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::DegenerateKernel) throw;
        out.degenerate = true;
      }
    });
    AgreementRow row;
    row.n = n;
    row.trials = config.trials;
    for (const Trial& t : trials) {
      row.agree += t.agree;
      row.bayes_correct += t.bayes_correct;
      row.kernel_correct += t.kernel_correct;
      row.bayes_ties += t.bayes_tie;
      row.kernel_ties += t.kernel_tie;
      row.degenerate += t.degenerate;
      row.mean_abs_weight += t.mean_abs_weight;
      row.mean_weight_sum += t.weight_sum;
    }
    row.mean_abs_weight /= static_cast<double>(config.trials);
    row.mean_weight_sum /= static_cast<double>(config.trials);
    curve.rows.push_back(row);
  }

  const AgreementRow& low = curve.rows.front();
  const AgreementRow& high = curve.rows.back();
  curve.trend.n_low = low.n;
  curve.trend.n_high = high.n;
  curve.trend.p_value =
      stats::two_proportion_greater(high.agree, high.trials, low.agree, low.trials, &curve.trend.z);
  for (std::size_t i = 1; i < curve.rows.size(); ++i) {
    if (curve.rows[i].agreement() < curve.rows[i - 1].agreement()) ++curve.trend.isotonic_violations;
  }

  std::string csv =
      "n,trials,agree,agreement,bayes_correct,bayes_accuracy,kernel_correct,kernel_accuracy,"
      "bayes_ties,kernel_ties,degenerate,mean_abs_weight,mean_weight_sum\n";
  json rows = json::array();
  for (const auto& r : curve.rows) {
    csv += csv_line({num(r.n), num(r.trials), num(r.agree), num(r.agreement()),
                     num(r.bayes_correct), num(r.bayes_accuracy()), num(r.kernel_correct),
                     num(r.kernel_accuracy()), num(r.bayes_ties), num(r.kernel_ties),
                     num(r.degenerate), num(r.mean_abs_weight), num(r.mean_weight_sum)});
    rows.push_back({{"n", r.n},
                    {"trials", r.trials},
                    {"agreement", r.agreement()},
                    {"bayes_accuracy", r.bayes_accuracy()},
                    {"kernel_accuracy", r.kernel_accuracy()},
                    {"bayes_ties", r.bayes_ties},
                    {"kernel_ties", r.kernel_ties},
                    {"degenerate", r.degenerate}});
  }
  const auto& n_delta = curve.report.n_delta;
  json summary = summary_header("agreement", config);
  summary["assumptions"] = to_json(curve.report);
  summary["rows"] = rows;
  summary["tests"] = {{"trend",
                       {{"test", curve.trend.name},
                        {"n_low", curve.trend.n_low},
                        {"n_high", curve.trend.n_high},
                        {"trials_per_n", config.trials},
                        {"z", curve.trend.z},
                        {"p_value", curve.trend.p_value},
                        {"isotonic_violations", curve.trend.isotonic_violations}}}};
  summary["verdicts"] = {
      {"agreement_at_max_n", high.agreement()},
      {"agreement_at_max_n_ge_1_minus_delta", high.agreement() >= 1.0 - config.delta},
      {"trend_significant_at_0.01", curve.trend.p_value < 0.01},
      {"n_threshold", n_delta ? json(*n_delta) : json()},
      {"max_n_at_or_above_threshold", n_delta ? json(high.n >= *n_delta) : json()}};
  curve.artifacts = {"agreement", csv, summary};
  return curve;
}

IdentityReport run_identity_check(const ExperimentConfig& config) {
  config.validate();
  const Hmm hmm = resolve_hmm(config);
  const IdentityConfig& id = config.identity;
  const Vector init = hmm.pretrain_init();
  const MomentMatrix moment = moment_matrix(hmm, init, "pretrain", id.length,
                                            MomentEstimator::exact(), config.enumeration_cap);
  const Matrix inverse = ridge_inverse(moment, config.ridge.absolute(moment.sigma));

  IdentityReport report;
  report.ladder = id.ladder;
  report.dim = static_cast<std::size_t>(moment.sigma.rows());
  report.errors.assign(id.seeds, std::vector<double>(id.ladder.size(), 0.0));
  parallel_for(id.seeds, worker_threads(), [&](std::size_t s) {
    Rng rng(derive_seed(config.seed, {kIdentity, s}));
    const TokenSeq x_test = sample_sequence(hmm, hmm.task_init(id.task), id.length, rng);
    const Vector target = flatten(operator_of(hmm, x_test));
    const Vector projected = inverse * target;
    Vector sum = Vector::Zero(target.size());
    std::size_t drawn = 0;
    for (std::size_t step = 0; step < id.ladder.size(); ++step) {
      for (; drawn < id.ladder[step]; ++drawn) {
        const Vector v = flatten(operator_of(hmm, sample_sequence(hmm, init, id.length, rng)));
        sum += projected.dot(v) * v;
      }
      const Vector mean = sum / static_cast<double>(drawn);
      report.errors[s][step] = (mean - target).norm() / target.norm();
    }
  });

  std::string csv = "seed,samples,relative_error\n";
  double top_sum = 0.0;
  for (std::size_t s = 0; s < id.seeds; ++s) {
    bool monotone = true;
    for (std::size_t k = 0; k < id.ladder.size(); ++k) {
      csv += csv_line({num(s), num(id.ladder[k]), num(report.errors[s][k])});
      if (k > 0 && report.errors[s][k] >= report.errors[s][k - 1]) monotone = false;
    }
    report.monotone_seeds += monotone;
    report.max_error_at_top = std::max(report.max_error_at_top, report.errors[s].back());
    top_sum += report.errors[s].back();
  }
  report.mean_error_at_top = top_sum / static_cast<double>(id.seeds);

  json summary = summary_header("identity", config);
  summary["dimension"] = report.dim;
  summary["ridge_absolute"] = config.ridge.absolute(moment.sigma);
  summary["ladder"] = id.ladder;
  summary["errors"] = report.errors;
  summary["verdicts"] = {{"monotone_seeds", report.monotone_seeds},
                         {"seeds", id.seeds},
                         {"max_error_at_top", report.max_error_at_top},
                         {"mean_error_at_top", report.mean_error_at_top}};
  report.artifacts = {"identity", csv, summary};
  return report;
}

HoeffdingReport run_hoeffding_check(const ExperimentConfig& config) {
  Prepared prep = prepare(config);
  const Hmm& hmm = prep.hmm;
  const int K = hmm.num_tasks();
  std::vector<std::unique_ptr<SigmaInverseCache>> caches;
  for (int k = 0; k < K; ++k) {
    caches.push_back(std::make_unique<SigmaInverseCache>(
        hmm, hmm.task_init(k), "task", MomentEstimator::exact(), config.ridge,
        config.enumeration_cap));
    warm(*caches.back(), config.demo_length);
  }
  double worst_theta = 0.0;
  for (const auto& t : prep.report.tasks) worst_theta = std::max(worst_theta, t.epsilon_theta.value);
  const double eta = prep.report.eta;
  const auto m = static_cast<double>(hmm.num_obs());

  HoeffdingReport report;
  report.report = prep.report;
  for (std::size_t n : config.n_grid) {
    std::vector<double> errors(config.trials);
    parallel_for(config.trials, worker_threads(), [&](std::size_t t) {
      const int task = trial_task(hmm, t);
      const IclPrompt prompt =
          build_prompt(hmm, task, n, config.demo_length, derive_seed(config.seed, {kHoeffding, n, t}));
      const std::vector<double> w = kernel_weights(hmm, prompt, provider(*caches[task]));
      Vector y_hat = Vector::Zero(static_cast<Eigen::Index>(hmm.label_set().size()));
      for (std::size_t i = 0; i < w.size(); ++i) {
        y_hat(hmm.label_index(prompt.demos[i].label)) += w[i];
      }
      y_hat /= static_cast<double>(n);
      const Vector target = label_distribution(hmm, hmm.task_init(task), prompt.test_input);
      errors[t] = (y_hat - target).cwiseAbs().maxCoeff();
    });
    HoeffdingRow row;
    row.n = n;
    row.trials = config.trials;
    row.sampling_term = std::sqrt(std::log(4.0 * m / config.delta) / (2.0 * static_cast<double>(n)));
    row.deviation_term = eta * eta * worst_theta;
    for (double e : errors) {
      row.covered += e <= row.sampling_term + row.deviation_term;
      row.covered_sampling_only += e <= row.sampling_term;
    }
    std::vector<double> sorted = errors;
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() / 2),
                     sorted.end());
    row.median_error = sorted[sorted.size() / 2];
    const double target_rate = 1.0 - config.delta / 2.0;
    row.required = target_rate - 2.0 * stats::binomial_se(target_rate, config.trials);
    report.rows.push_back(row);
  }
  report.median_error_decreasing = true;
  for (std::size_t i = 1; i < report.rows.size(); ++i) {
    if (!(report.rows[i].median_error < report.rows[i - 1].median_error)) {
      report.median_error_decreasing = false;
    }
  }

  std::string csv =
      "n,trials,covered,coverage,covered_sampling_only,coverage_sampling_only,sampling_term,"
      "deviation_term,median_error,required\n";
  json rows = json::array();
  for (const auto& r : report.rows) {
    csv += csv_line({num(r.n), num(r.trials), num(r.covered), num(r.coverage()),
                     num(r.covered_sampling_only), num(r.coverage_sampling_only()),
                     num(r.sampling_term), num(r.deviation_term), num(r.median_error),
                     num(r.required)});
    rows.push_back({{"n", r.n},
                    {"coverage", r.coverage()},
                    {"coverage_sampling_only", r.coverage_sampling_only()},
                    {"sampling_term", r.sampling_term},
                    {"deviation_term", r.deviation_term},
                    {"median_error", r.median_error},
                    {"required", r.required},
                    {"covered_ok", r.coverage() >= r.required}});
  }
  json summary = summary_header("hoeffding", config);
  summary["assumptions"] = to_json(report.report);
  summary["rows"] = rows;
  summary["verdicts"] = {{"median_error_decreasing", report.median_error_decreasing}};
  report.artifacts = {"hoeffding", csv, summary};
  return report;
}

double concentration_bound(std::size_t n, double eps_kl, double eps_d, double eps_r,
                           double p0_min, double delta) {
  const auto nn = static_cast<double>(n);
  const double exponent = -nn * eps_kl + std::sqrt(std::log(4.0 / delta) / nn) +
                          nn * std::log(1.0 / eps_d) + (nn + 1.0) * std::log(1.0 / eps_r) +
                          std::log(1.0 / p0_min);
  return 1.0 - std::exp(exponent);
}

std::optional<std::size_t> concentration_onset(double eps_kl, double eps_d, double eps_r,
                                               double p0_min, double delta, std::size_t limit) {
  for (std::size_t n = 1; n <= limit; ++n) {
    if (concentration_bound(n, eps_kl, eps_d, eps_r, p0_min, delta) > 0.0) return n;
  }
  return std::nullopt;
}

ConcentrationReport run_concentration_check(const ExperimentConfig& config) {
  Prepared prep = prepare(config);
  const Hmm& hmm = prep.hmm;
  const AssumptionReport& a = prep.report;
  ConcentrationReport report;
  report.report = a;
  report.onset_n = concentration_onset(a.epsilon_kl.value, a.epsilon_d, a.epsilon_r, a.p0_min,
                                       config.delta);
  for (std::size_t n : config.n_grid) {
    std::vector<double> mass(config.trials);
    parallel_for(config.trials, worker_threads(), [&](std::size_t t) {
      const int task = trial_task(hmm, t);
      const IclPrompt prompt = build_prompt(hmm, task, n, config.demo_length,
                                            derive_seed(config.seed, {kConcentration, n, t}));
      mass[t] = task_posterior(hmm, prompt)(task);
    });
    ConcentrationRow row;
    row.n = n;
    row.trials = config.trials;
    row.bound = concentration_bound(n, a.epsilon_kl.value, a.epsilon_d, a.epsilon_r, a.p0_min,
                                    config.delta);
    for (double v : mass) {
      row.violations += v < row.bound - kTieTolerance;
      row.mean_mass += v;
      row.min_mass = std::min(row.min_mass, v);
    }
    row.mean_mass /= static_cast<double>(config.trials);
    row.allowed = config.delta / 2.0 + 2.0 * stats::binomial_se(config.delta / 2.0, config.trials);
    row.at_or_above_threshold = a.n_delta.has_value() && n >= *a.n_delta;
    report.rows.push_back(row);
  }

  std::string csv =
      "n,trials,violations,violation_rate,mean_mass,min_mass,bound,allowed,"
      "at_or_above_threshold\n";
  json rows = json::array();
  for (const auto& r : report.rows) {
    csv += csv_line({num(r.n), num(r.trials), num(r.violations), num(r.violation_rate()),
                     num(r.mean_mass), num(r.min_mass), num(r.bound), num(r.allowed),
                     r.at_or_above_threshold ? "1" : "0"});
    rows.push_back({{"n", r.n},
                    {"violation_rate", r.violation_rate()},
                    {"mean_mass", r.mean_mass},
                    {"min_mass", r.min_mass},
                    {"bound", r.bound},
                    {"allowed", r.allowed},
                    {"rate_ok", r.violation_rate() <= r.allowed},
                    {"at_or_above_threshold", r.at_or_above_threshold}});
  }
  json summary = summary_header("concentration", config);
  summary["assumptions"] = to_json(a);
  summary["rows"] = rows;
  summary["onset_n"] = report.onset_n ? json(*report.onset_n) : json();
  report.artifacts = {"concentration", csv, summary};
  return report;
}

Eq2Report run_eq2_check(const ExperimentConfig& config) {
  config.validate();
  const Eq2Config& e = config.eq2;
  struct Model {
    int d = 0;
    int m = 0;
    double deviation = 0.0;
    std::size_t max_length = 0;
    bool mass_checked = false;
    double mass_deviation = 0.0;
  };
  std::vector<Model> models(e.models);
  parallel_for(e.models, worker_threads(), [&](std::size_t i) {
    Rng rng(derive_seed(config.seed, {kEq2, i}));
    Model& out = models[i];
    out.d = 1 + static_cast<int>(rng.below(static_cast<std::size_t>(e.max_states)));
    out.m = 2 + static_cast<int>(rng.below(static_cast<std::size_t>(e.max_obs - 1)));
    const int tasks = 1 + static_cast<int>(rng.below(static_cast<std::size_t>(out.d)));
    const Hmm hmm = random_hmm(out.d, out.m, tasks, rng);
    const Vector& init = hmm.pretrain_init();
    for (std::size_t s = 0; s < e.sequences_per_model; ++s) {
      const std::size_t len = 1 + rng.below(e.max_length);
      out.max_length = std::max(out.max_length, len);
      TokenSeq seq;
      // Alternate sampled and uniformly random sequences; the latter are often impossible.
      if (s % 2 == 0) {
        seq = sample_sequence(hmm, init, len, rng);
      } else {
        for (std::size_t k = 0; k < len; ++k) seq.push_back(static_cast<Token>(rng.below(static_cast<std::size_t>(out.m))));
      }
      const double f = forward_likelihood(hmm, init, seq);
      const double o = operator_likelihood(hmm, init, seq);
      const double scale = std::max(std::abs(f), std::abs(o));
      const double dev = scale > 0.0 ? std::abs(f - o) / scale : 0.0;
      out.deviation = std::max(out.deviation, dev);
    }
    const std::size_t l = 1 + (i % 6);
    if (count_sequences(out.m, l) <= e.mass_check_cap) {
      double total = 0.0;
      enumerate_sequences(hmm, init, l, e.mass_check_cap,
                          [&](TokenSpan, double p, const Matrix&) { total += p; });
      out.mass_checked = true;
      out.mass_deviation = std::abs(total - 1.0);
    }
  });

  Eq2Report report;
  report.models = e.models;
  report.sequences = e.models * e.sequences_per_model;
  std::string csv = "model,num_states,num_obs,max_length,max_relative_deviation,mass_deviation\n";
  for (std::size_t i = 0; i < models.size(); ++i) {
    const Model& m = models[i];
    report.max_relative_deviation = std::max(report.max_relative_deviation, m.deviation);
    if (m.mass_checked) {
      ++report.mass_checked;
      report.max_mass_deviation = std::max(report.max_mass_deviation, m.mass_deviation);
    }
    csv += csv_line({num(i), num(m.d), num(m.m), num(m.max_length), num(m.deviation),
                     m.mass_checked ? num(m.mass_deviation) : std::string("")});
  }
  json summary = summary_header("eq2", config);
  summary["verdicts"] = {{"models", report.models},
                         {"sequences", report.sequences},
                         {"max_relative_deviation", report.max_relative_deviation},
                         {"within_1e-10", report.max_relative_deviation <= 1e-10},
                         {"mass_checked", report.mass_checked},
                         {"max_mass_deviation", report.max_mass_deviation}};
  report.artifacts = {"eq2", csv, summary};
  return report;
}

RetrievalReport run_retrieval_ablation(const ExperimentConfig& config) {
  Prepared prep = prepare(config);
  const Hmm& hmm = prep.hmm;
  const SigmaInverseCache cache = pretrain_cache(hmm, config);
  warm(cache, config.demo_length);
  const std::size_t n = config.ablation.n;
  const std::size_t pool = config.ablation.pool_factor * n;

  struct Trial {
    char kernel_random = 0, kernel_similar = 0, bayes_random = 0, bayes_similar = 0;
    bool degenerate = false;
  };
  std::vector<Trial> trials(config.trials);
  parallel_for(config.trials, worker_threads(), [&](std::size_t t) {
    const int task = trial_task(hmm, t);
    Rng rng(derive_seed(config.seed, {kRetrieval, t}));
    std::vector<Demo> demos;
    for (std::size_t i = 0; i < pool; ++i) {
      demos.push_back(sample_demo(hmm, task, config.demo_length.draw(rng), rng));
    }
    const TokenSeq x_test =
        sample_sequence(hmm, hmm.task_init(task), config.demo_length.draw(rng), rng);
    const int truth = truth_index(hmm, task, x_test);

    std::vector<std::size_t> order(pool);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = 0; i < n; ++i) std::swap(order[i], order[i + rng.below(pool - i)]);
    std::vector<std::size_t> random_pick(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n));

    std::vector<double> sim(pool);
    for (std::size_t i = 0; i < pool; ++i) sim[i] = prediction_similarity(hmm, demos[i].input, x_test);
    std::vector<std::size_t> ranked(pool);
    std::iota(ranked.begin(), ranked.end(), 0);
    std::stable_sort(ranked.begin(), ranked.end(),
                     [&](std::size_t a, std::size_t b) { return sim[a] > sim[b]; });
    std::vector<std::size_t> similar_pick(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(n));

    Trial& out = trials[t];
    auto evaluate = [&](std::vector<std::size_t> pick, char& kernel_ok, char& bayes_ok) {
      std::sort(pick.begin(), pick.end());
      IclPrompt prompt;
      prompt.delimiter = hmm.delimiter();
      prompt.task_id = task;
      prompt.test_input = x_test;
      for (std::size_t i : pick) prompt.demos.push_back(demos[i]);
      bayes_ok = bayes_predict(hmm, prompt, config.score_domain).argmax_index == truth;
      try {
        kernel_ok = kernel_predict(hmm, prompt, provider(cache)).argmax_index == truth;
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::DegenerateKernel) throw;
        out.degenerate = true;
      }
    };
    evaluate(random_pick, out.kernel_random, out.bayes_random);
    evaluate(similar_pick, out.kernel_similar, out.bayes_similar);
  });

  std::vector<char> kr, ks, br, bs;
  RetrievalReport report;
  report.n = n;
  report.pool = pool;
  std::string csv = "trial,task,kernel_random,kernel_similar,bayes_random,bayes_similar,degenerate\n";
  for (std::size_t t = 0; t < trials.size(); ++t) {
    const Trial& tr = trials[t];
    kr.push_back(tr.kernel_random);
    ks.push_back(tr.kernel_similar);
    br.push_back(tr.bayes_random);
    bs.push_back(tr.bayes_similar);
    report.degenerate += tr.degenerate;
    csv += csv_line({num(t), num(trial_task(hmm, t)), num(int{tr.kernel_random}),
                     num(int{tr.kernel_similar}), num(int{tr.bayes_random}),
                     num(int{tr.bayes_similar}), tr.degenerate ? "1" : "0"});
  }
  report.kernel = compare(kr, ks);
  report.bayes = compare(br, bs);
  json summary = summary_header("retrieval", config);
  summary["assumptions"] = to_json(prep.report);
  summary["n"] = n;
  summary["pool"] = pool;
  summary["kernel"] = paired_json(report.kernel);
  summary["bayes"] = paired_json(report.bayes);
  summary["degenerate"] = report.degenerate;
  summary["verdicts"] = {{"similarity_beats_random_kernel_p_lt_0.05", report.kernel.p_arm_better < 0.05}};
  report.artifacts = {"retrieval", csv, summary};
  return report;
}

LabelPermutationReport run_label_permutation(const ExperimentConfig& config,
                                             std::vector<Token> permutation) {
  Prepared prep = prepare(config);
  const Hmm& hmm = prep.hmm;
  const auto& labels = hmm.label_set();
  if (labels.size() < 2) fail(ErrorKind::Precondition, "label permutation needs at least two labels");
  if (permutation.empty()) {
    // Random derangement: shuffle until no label maps to itself.
    Rng rng(derive_seed(config.seed, {kPermutation}));
    permutation = labels;
    for (;;) {
      for (std::size_t i = permutation.size() - 1; i > 0; --i) {
        std::swap(permutation[i], permutation[rng.below(i + 1)]);
      }
      bool fixed_point = false;
      for (std::size_t i = 0; i < labels.size(); ++i) fixed_point = fixed_point || permutation[i] == labels[i];
      if (!fixed_point) break;
    }
  }
  if (permutation.size() != labels.size() ||
      !std::is_permutation(permutation.begin(), permutation.end(), labels.begin())) {
    fail(ErrorKind::Validation, "label permutation must be a permutation of label_set");
  }
  auto apply = [&](Token y) { return permutation[static_cast<std::size_t>(hmm.label_index(y))]; };

  const SigmaInverseCache cache = pretrain_cache(hmm, config);
  warm(cache, config.demo_length);
  const std::size_t n = config.ablation.n;
  struct Trial {
    char kernel_base = 0, kernel_arm = 0, bayes_base = 0, bayes_arm = 0;
    bool checked = false, violation = false, degenerate = false;
  };
  std::vector<Trial> trials(config.trials);
  parallel_for(config.trials, worker_threads(), [&](std::size_t t) {
    const int task = trial_task(hmm, t);
    const IclPrompt prompt = build_prompt(hmm, task, n, config.demo_length,
                                          derive_seed(config.seed, {kPermutation, t}));
    IclPrompt permuted = prompt;
    for (auto& d : permuted.demos) d.label = apply(d.label);
    const int truth = truth_index(hmm, task, prompt.test_input);
    Trial& out = trials[t];
    out.bayes_base = bayes_predict(hmm, prompt, config.score_domain).argmax_index == truth;
    out.bayes_arm = bayes_predict(hmm, permuted, config.score_domain).argmax_index == truth;
    const std::vector<double> w = kernel_weights(hmm, prompt, provider(cache));
    std::vector<Token> base_labels, arm_labels;
    for (std::size_t i = 0; i < n; ++i) {
      base_labels.push_back(prompt.demos[i].label);
      arm_labels.push_back(permuted.demos[i].label);
    }
    try {
      const PredictionOutcome base = kernel_from_weights(hmm, w, base_labels);
      const PredictionOutcome arm = kernel_from_weights(hmm, w, arm_labels);
      out.kernel_base = base.argmax_index == truth;
      out.kernel_arm = arm.argmax_index == truth;
      if (!base.tie && !arm.tie) {
        out.checked = true;
        out.violation = arm.argmax_label != apply(base.argmax_label);
      }
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::DegenerateKernel) throw;
      out.degenerate = true;
    }
  });

  LabelPermutationReport report;
  report.n = n;
  report.permutation = permutation;
  std::vector<char> kb, ka, bb, ba;
  std::string csv = "trial,task,kernel_base,kernel_permuted,bayes_base,bayes_permuted,structural_checked,structural_violation,degenerate\n";
  for (std::size_t t = 0; t < trials.size(); ++t) {
    const Trial& tr = trials[t];
    kb.push_back(tr.kernel_base);
    ka.push_back(tr.kernel_arm);
    bb.push_back(tr.bayes_base);
    ba.push_back(tr.bayes_arm);
    report.structural_checked += tr.checked;
    report.structural_violations += tr.violation;
    report.degenerate += tr.degenerate;
    csv += csv_line({num(t), num(trial_task(hmm, t)), num(int{tr.kernel_base}),
                     num(int{tr.kernel_arm}), num(int{tr.bayes_base}), num(int{tr.bayes_arm}),
                     tr.checked ? "1" : "0", tr.violation ? "1" : "0", tr.degenerate ? "1" : "0"});
  }
  report.kernel = compare(kb, ka);
  report.bayes = compare(bb, ba);
  json summary = summary_header("label_permute", config);
  summary["assumptions"] = to_json(prep.report);
  summary["n"] = n;
  summary["permutation"] = permutation;
  summary["kernel"] = paired_json(report.kernel);
  summary["bayes"] = paired_json(report.bayes);
  summary["structural_checked"] = report.structural_checked;
  summary["structural_violations"] = report.structural_violations;
  summary["degenerate"] = report.degenerate;
  summary["verdicts"] = {{"kernel_argmax_permuted_exactly", report.structural_violations == 0},
                         {"kernel_accuracy_drop_p_lt_0.05", report.kernel.p_arm_worse < 0.05}};
  report.artifacts = {"label_permute", csv, summary};
  return report;
}

OodReport run_ood_ablation(const ExperimentConfig& config) {
  Prepared prep = prepare(config);
  const Hmm& hmm = prep.hmm;
  const int K = hmm.num_tasks();
  if (K < 2) fail(ErrorKind::Precondition, "the OOD ablation needs at least two tasks");
  const int fixed_source = config.ablation.source_task;
  if (fixed_source >= K) fail(ErrorKind::Validation, "ablation.source_task out of range");
  auto source_of = [&](int task) { return fixed_source >= 0 ? fixed_source : (task + 1) % K; };

  const SigmaInverseCache cache = pretrain_cache(hmm, config);
  warm(cache, config.demo_length);
  const std::size_t n = config.ablation.ood_n;
  struct Arm {
    char agree = 0, kernel_ok = 0;
    bool degenerate = false, impossible = false;
  };
  struct Trial {
    Arm in, ood;
  };
  std::vector<Trial> trials(config.trials);
  parallel_for(config.trials, worker_threads(), [&](std::size_t t) {
    const int task = trial_task(hmm, t);
    Rng test_rng(derive_seed(config.seed, {kOod, kTest, t}));
    const TokenSeq x_test =
        sample_sequence(hmm, hmm.task_init(task), config.demo_length.draw(test_rng), test_rng);
    const int truth = truth_index(hmm, task, x_test);
    const std::uint64_t demo_seed = derive_seed(config.seed, {kOod, kDemos, t});
    auto run = [&](int demo_task, Arm& arm) {
      const IclPrompt prompt =
          prompt_with_demos(hmm, demo_task, n, config.demo_length, demo_seed, x_test, task);
      PredictionOutcome bayes;
      try {
        bayes = bayes_predict(hmm, prompt, config.score_domain);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::ImpossiblePrompt) throw;
        arm.impossible = true;
        return;
      }
      try {
        const PredictionOutcome kernel = kernel_predict(hmm, prompt, provider(cache));
        arm.kernel_ok = kernel.argmax_index == truth;
        arm.agree = kernel.argmax_index == bayes.argmax_index;
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::DegenerateKernel) throw;
        arm.degenerate = true;
      }
    };
    run(task, trials[t].in);
    run(source_of(task), trials[t].ood);
  });

  OodReport report;
  report.n = n;
  report.source_task = fixed_source;
  std::vector<char> ai, ao, ki, ko;
  std::string csv = "trial,task,source_task,agree_in,agree_ood,kernel_in,kernel_ood,degenerate_in,degenerate_ood,impossible_ood\n";
  for (std::size_t t = 0; t < trials.size(); ++t) {
    const Trial& tr = trials[t];
    ai.push_back(tr.in.agree);
    ao.push_back(tr.ood.agree);
    ki.push_back(tr.in.kernel_ok);
    ko.push_back(tr.ood.kernel_ok);
    report.degenerate_in += tr.in.degenerate;
    report.degenerate_ood += tr.ood.degenerate;
    report.impossible_ood += tr.ood.impossible;
    const int task = trial_task(hmm, t);
    csv += csv_line({num(t), num(task), num(source_of(task)), num(int{tr.in.agree}),
                     num(int{tr.ood.agree}), num(int{tr.in.kernel_ok}), num(int{tr.ood.kernel_ok}),
                     tr.in.degenerate ? "1" : "0", tr.ood.degenerate ? "1" : "0",
                     tr.ood.impossible ? "1" : "0"});
  }
  report.agreement = compare(ai, ao);
  report.kernel_accuracy = compare(ki, ko);
  for (int task = 0; task < K; ++task) {
    report.epsilon_theta_pretrain.push_back(
        prep.report.tasks[static_cast<std::size_t>(task)].epsilon_theta.value);
    report.epsilon_theta_ood.push_back(
        epsilon_theta_between(hmm, hmm.task_init(source_of(task)), hmm.task_init(task),
                              config.l_grid, config.ridge, config.enumeration_cap)
            .value);
  }
  json summary = summary_header("ood", config);
  summary["assumptions"] = to_json(prep.report);
  summary["n"] = n;
  summary["source_task"] = fixed_source;
  summary["agreement"] = paired_json(report.agreement);
  summary["kernel_accuracy"] = paired_json(report.kernel_accuracy);
  summary["degenerate_in"] = report.degenerate_in;
  summary["degenerate_ood"] = report.degenerate_ood;
  summary["impossible_ood"] = report.impossible_ood;
  summary["epsilon_theta_pretrain"] = report.epsilon_theta_pretrain;
  summary["epsilon_theta_ood"] = report.epsilon_theta_ood;
  summary["verdicts"] = {{"ood_reduces_agreement_p_lt_0.05", report.agreement.p_arm_worse < 0.05}};
  report.artifacts = {"ood", csv, summary};
  return report;
}

std::vector<std::filesystem::path> write_artifacts(const std::filesystem::path& dir,
                                                   const Artifacts& artifacts) {
  std::filesystem::create_directories(dir);
  const auto csv_path = dir / (artifacts.name + ".csv");
  const auto json_path = dir / (artifacts.name + ".json");
  {
    std::ofstream out(csv_path, std::ios::binary);
    out << artifacts.csv;
    if (!out) fail(ErrorKind::Io, "cannot write " + csv_path.string());
  }
  {
    std::ofstream out(json_path, std::ios::binary);
    out << artifacts.summary.dump(2) << "\n";
    if (!out) fail(ErrorKind::Io, "cannot write " + json_path.string());
  }
  return {csv_path, json_path};
}

}  // namespace icl
