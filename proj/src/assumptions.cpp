#include "icl_lab/assumptions.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <set>
#include <sstream>
#include <utility>

#include "icl_lab/errors.hpp"
#include "icl_lab/rng.hpp"
#include "icl_lab/serialization.hpp"

namespace icl {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Positive weights in [0.5, 1.5), normalized to `total`.
Vector random_share(Rng& rng, Eigen::Index n, double total) {
  Vector w(n);
  for (Eigen::Index i = 0; i < n; ++i) w(i) = 0.5 + rng.uniform();
  return w * (total / w.sum());
}

void check_generator_spec(const GeneratorSpec& s) {
  auto bad = [](const std::string& what) {
    fail(ErrorKind::Validation, "infeasible generator spec: " + what);
  };
  if (s.num_tasks < 1) bad("num_tasks must be >= 1");
  if (s.d_per_task < 2) bad("d_per_task must be >= 2 (each task needs a label-emitting state)");
  if (s.num_labels < 1) bad("num_labels must be >= 1");
  if (s.m < 1 + s.num_tasks + s.num_labels) {
    bad("alphabet budget: m = " + std::to_string(s.m) + " < 1 delimiter + " +
        std::to_string(s.num_tasks) + " anchors + " + std::to_string(s.num_labels) + " labels");
  }
  if (!(s.epsilon_d_target > 0.0 && s.epsilon_d_target < 1.0)) {
    bad("delimiter budget: epsilon_d_target must lie in (0, 1)");
  }
  if (!(s.persistence >= 0.0)) bad("persistence must be nonnegative");
  if (!(s.epsilon_r_target > 0.0) ||
      !(s.num_tasks * s.epsilon_r_target + s.persistence < 1.0)) {
    bad("recurrence budget: num_tasks * epsilon_r_target + persistence must lie in (0, 1)");
  }
  if (!(s.separation_target >= 0.0 && s.separation_target < 1.0)) {
    bad("separation_target must lie in [0, 1)");
  }
  if (!(s.label_mass > 0.0 && s.label_mass <= 1.0)) bad("label_mass must lie in (0, 1]");
}

}  // namespace

GeneratorLayout generator_layout(const GeneratorSpec& spec) {
  GeneratorLayout layout;
  layout.delimiter = 0;
  Token next = 1;
  for (int t = 0; t < spec.num_tasks; ++t) layout.anchors.push_back(next++);
  for (int y = 0; y < spec.num_labels; ++y) layout.labels.push_back(next++);
  while (next < spec.m) layout.content.push_back(next++);
  return layout;
}

Hmm generate_compliant_hmm(const GeneratorSpec& spec, std::uint64_t seed) {
  check_generator_spec(spec);
  const GeneratorLayout layout = generator_layout(spec);
  const int K = spec.num_tasks;
  const int D = spec.d_per_task;
  const int d = K * D;
  const int L = spec.num_labels;
  const auto C = static_cast<int>(layout.content.size());
  const double sep = spec.separation_target;
  const double eps_d = spec.epsilon_d_target;
  Rng rng(derive_seed(seed, {0x67656e}));

  auto start_of = [&](int task) { return task * D; };

  Hmm::Parts parts;
  parts.transition = Matrix::Zero(d, d);
  parts.emission = Matrix::Zero(d, spec.m);

  for (int task = 0; task < K; ++task) {
    for (int k = 0; k < D; ++k) {
      const int s = start_of(task) + k;
      // Recurrence: every state re-enters every task's start state.
      for (int other = 0; other < K; ++other) {
        parts.transition(s, start_of(other)) = spec.epsilon_r_target;
      }
      parts.transition(s, start_of(task)) += spec.persistence;
      const double rest = 1.0 - K * spec.epsilon_r_target - spec.persistence;
      const int successor = k == 0 ? 1 : (k % (D - 1)) + 1;
      const Vector spread = random_share(rng, D - 1, (1.0 - sep) * rest);
      for (int j = 1; j < D; ++j) parts.transition(s, start_of(task) + j) += spread(j - 1);
      parts.transition(s, start_of(task) + successor) += sep * rest;

      parts.emission(s, layout.delimiter) = eps_d;
      if (k == 0) {
        parts.emission(s, layout.anchors[static_cast<std::size_t>(task)]) = 1.0 - eps_d;
        continue;
      }
      const double body = 1.0 - eps_d;
      const double label_mass = C == 0 ? 1.0 : spec.label_mass;
      const int preferred = (task + k - 1) % L;
      const Vector label_spread = random_share(rng, L, (1.0 - sep) * body * label_mass);
      for (int y = 0; y < L; ++y) {
        parts.emission(s, layout.labels[static_cast<std::size_t>(y)]) = label_spread(y);
      }
      parts.emission(s, layout.labels[static_cast<std::size_t>(preferred)]) += sep * body * label_mass;
      if (C > 0) {
        const int signature = (task * (D - 1) + k - 1) % C;
        const double content_mass = body * (1.0 - label_mass);
        const Vector content_spread = random_share(rng, C, (1.0 - sep) * content_mass);
        for (int c = 0; c < C; ++c) {
          parts.emission(s, layout.content[static_cast<std::size_t>(c)]) = content_spread(c);
        }
        parts.emission(s, layout.content[static_cast<std::size_t>(signature)]) += sep * content_mass;
      }
    }
  }
  // Re-normalize to remove accumulated rounding before validation.
  for (int s = 0; s < d; ++s) {
    parts.transition.row(s) /= parts.transition.row(s).sum();
    parts.emission.row(s) /= parts.emission.row(s).sum();
  }
  for (int task = 0; task < K; ++task) parts.task_starts.push_back(start_of(task));
  parts.pretrain_init = Vector::Zero(d);
  for (int task = 0; task < K; ++task) parts.pretrain_init(start_of(task)) = 1.0 / K;
  parts.delimiter = layout.delimiter;
  parts.label_set = layout.labels;
  return Hmm::create(std::move(parts));
}

namespace {

class RecurrenceSearch {
 public:
  RecurrenceSearch(const Hmm& hmm, int start, std::size_t horizon)
      : hmm_(hmm), start_(start), horizon_(horizon) {}

  double run(const Vector& init) {
    descend(init, 0);
    return best_;
  }

 private:
  // `predictive` is the distribution of s_depth given the current prefix.
  void descend(const Vector& predictive, std::size_t depth) {
    if (depth == horizon_) return;
    for (int o = 0; o < hmm_.num_obs(); ++o) {
      Vector alpha = predictive.cwiseProduct(hmm_.emission().col(o));
      const double c = alpha.sum();
      if (!(c > 0.0)) continue;
      Vector next = hmm_.transition().transpose() * (alpha / c);
      best_ = std::min(best_, next(start_));
      descend(next, depth + 1);
    }
  }

  const Hmm& hmm_;
  int start_;
  std::size_t horizon_;
  double best_ = 1.0;
};

}  // namespace

double epsilon_r(const Hmm& hmm, int task, std::size_t horizon, std::uint64_t cap) {
  const int start = hmm.task_start(task);
  if (count_sequences(hmm.num_obs(), horizon) > cap) {
    fail(ErrorKind::EnumerationCap,
         "epsilon_r: m^L exceeds the enumeration cap; use the sampled "
         "min-tracking mode (reports an upper bound on epsilon_r)");
  }
  return RecurrenceSearch(hmm, start, horizon).run(hmm.task_init(task));
}

double epsilon_r_sampled(const Hmm& hmm, int task, std::size_t horizon,
                         std::size_t samples, std::uint64_t seed) {
  const int start = hmm.task_start(task);
  const Vector init = hmm.task_init(task);
  if (horizon == 0) return 1.0;
  Rng rng(seed);
  double best = 1.0;
  for (std::size_t i = 0; i < samples; ++i) {
    const TokenSeq seq = sample_sequence(hmm, init, horizon, rng);
    Vector predictive = init;
    for (Token o : seq) {
      Vector alpha = predictive.cwiseProduct(hmm.emission().col(o));
      predictive = hmm.transition().transpose() * (alpha / alpha.sum());
      best = std::min(best, predictive(start));
    }
  }
  return best;
}

bool check_anchor(const Hmm& hmm) {
  const Matrix& B = hmm.emission();
  for (int o = 0; o < hmm.num_obs(); ++o) {
    // The delimiter condition forces every state to emit the delimiter, so the
    // delimiter is exempt from the first-token rule.
    if (o == hmm.delimiter()) continue;
    bool first_token = false;
    for (int s : hmm.task_starts()) first_token = first_token || B(s, o) > 0.0;
    if (!first_token) continue;
    for (int s = 0; s < hmm.num_states(); ++s) {
      if (!hmm.is_start_state(s) && B(s, o) > 0.0) return false;
    }
  }
  return true;
}

double epsilon_d(const Hmm& hmm) { return hmm.emission().col(hmm.delimiter()).minCoeff(); }

bool support_escapes(const Hmm& hmm, int from, int to, std::size_t l) {
  const int d = hmm.num_states();
  if (d > 64) fail(ErrorKind::Validation, "support_escapes: at most 64 states supported");
  using Set = std::uint64_t;
  const Matrix& B = hmm.emission();
  const Matrix& T = hmm.transition();
  std::vector<Set> successors(static_cast<std::size_t>(d), 0);
  for (int s = 0; s < d; ++s) {
    for (int t = 0; t < d; ++t) {
      if (T(s, t) > 0.0) successors[static_cast<std::size_t>(s)] |= Set{1} << t;
    }
  }
  auto emitting = [&](Set states, int o) {
    Set out = 0;
    for (int s = 0; s < d; ++s) {
      if ((states >> s & 1U) && B(s, o) > 0.0) out |= Set{1} << s;
    }
    return out;
  };
  auto advance = [&](Set states) {
    Set out = 0;
    for (int s = 0; s < d; ++s) {
      if (states >> s & 1U) out |= successors[static_cast<std::size_t>(s)];
    }
    return out;
  };
  std::set<std::pair<Set, Set>> frontier{{Set{1} << hmm.task_start(from),
                                          Set{1} << hmm.task_start(to)}};
  for (std::size_t depth = 0; depth < l && !frontier.empty(); ++depth) {
    std::set<std::pair<Set, Set>> next;
    for (const auto& [p, q] : frontier) {
      for (int o = 0; o < hmm.num_obs(); ++o) {
        const Set ep = emitting(p, o);
        if (ep == 0) continue;
        const Set eq = emitting(q, o);
        if (eq == 0) return true;
        next.emplace(advance(ep), advance(eq));
      }
    }
    frontier = std::move(next);
  }
  return false;
}

namespace {

class DivergenceSum {
 public:
  DivergenceSum(const Hmm& hmm, std::size_t length) : hmm_(hmm), length_(length) {}

  double run(const Vector& from, const Vector& to) {
    descend(from.transpose(), to.transpose(), 0);
    return sum_;
  }

 private:
  void descend(const Eigen::RowVectorXd& p, const Eigen::RowVectorXd& q, std::size_t depth) {
    for (int o = 0; o < hmm_.num_obs(); ++o) {
      Eigen::RowVectorXd np = p.cwiseProduct(hmm_.emission().col(o).transpose());
      if (!(np.sum() > 0.0)) continue;
      Eigen::RowVectorXd nq = q.cwiseProduct(hmm_.emission().col(o).transpose());
      if (depth + 1 == length_) {
        const double pf = np.sum();
        const double pt = nq.sum();
        if (!(pt > 0.0)) {
          sum_ = kInf;
          return;
        }
        sum_ += pf * (std::log(pf) - std::log(pt));
      } else {
        descend(np * hmm_.transition(), nq * hmm_.transition(), depth + 1);
      }
      if (std::isinf(sum_)) return;
    }
  }

  const Hmm& hmm_;
  std::size_t length_;
  double sum_ = 0.0;
};

}  // namespace

KlEstimate kl_between_tasks(const Hmm& hmm, int from, int to, std::size_t l,
                            const KlMode& mode, std::uint64_t cap) {
  if (l == 0) fail(ErrorKind::Validation, "epsilon_kl: length must be positive");
  KlEstimate out;
  out.length = l;
  out.exact = mode.exact;
  out.samples = mode.samples;
  out.from_task = from;
  out.to_task = to;
  if (support_escapes(hmm, from, to, l)) {
    out.value = kInf;
    return out;
  }
  const Vector pf = hmm.task_init(from);
  const Vector pt = hmm.task_init(to);
  if (mode.exact) {
    if (count_sequences(hmm.num_obs(), l) > cap) {
      fail(ErrorKind::EnumerationCap,
           "epsilon_kl: m^l exceeds the enumeration cap; use Monte-Carlo mode");
    }
    out.value = std::max(0.0, DivergenceSum(hmm, l).run(pf, pt));
    return out;
  }
  if (mode.samples < 2) fail(ErrorKind::Validation, "epsilon_kl: Monte-Carlo mode needs N >= 2");
  Rng rng(mode.seed);
  double mean = 0.0;
  double m2 = 0.0;
  for (std::size_t i = 0; i < mode.samples; ++i) {
    const TokenSeq seq = sample_sequence(hmm, pf, l, rng);
    const double lt = forward_log_likelihood(hmm, pt, seq);
    if (std::isinf(lt)) {
      out.value = kInf;
      out.std_error = 0.0;
      return out;
    }
    const double x = forward_log_likelihood(hmm, pf, seq) - lt;
    const double delta = x - mean;
    mean += delta / static_cast<double>(i + 1);
    m2 += delta * (x - mean);
  }
  const auto n = static_cast<double>(mode.samples);
  out.value = mean;
  out.std_error = std::sqrt(m2 / (n - 1.0) / n);
  return out;
}

KlEstimate epsilon_kl(const Hmm& hmm, std::size_t l, const KlMode& mode, std::uint64_t cap) {
  KlEstimate best;
  best.length = l;
  best.exact = mode.exact;
  best.samples = mode.samples;
  for (int from = 0; from < hmm.num_tasks(); ++from) {
    for (int to = 0; to < hmm.num_tasks(); ++to) {
      if (from == to) continue;
      KlMode pair_mode = mode;
      if (!mode.exact) {
        pair_mode.seed = derive_seed(mode.seed, {static_cast<std::uint64_t>(from),
                                                 static_cast<std::uint64_t>(to)});
      }
      const KlEstimate e = kl_between_tasks(hmm, from, to, l, pair_mode, cap);
      if (best.from_task < 0 || e.value < best.value) best = e;
    }
  }
  return best;
}

double margin_delta(const Hmm& hmm, int task, TokenSpan x_test) {
  Vector p = label_distribution(hmm, hmm.task_init(task), x_test);
  std::sort(p.data(), p.data() + p.size(), std::greater<>());
  return p.size() == 1 ? p(0) : p(0) - p(1);
}

std::size_t n_threshold(const ThresholdInputs& in, double delta_prob, int m, double p0_min) {
  if (!(delta_prob > 0.0 && delta_prob <= 1.0)) {
    fail(ErrorKind::Precondition, "n_threshold: delta must lie in (0, 1]");
  }
  if (m < 1) fail(ErrorKind::Precondition, "n_threshold: m must be positive");
  if (!(p0_min > 0.0 && p0_min <= 1.0)) {
    fail(ErrorKind::Precondition, "n_threshold: p0_min must lie in (0, 1]");
  }
  const double floor_kl = std::log(1.0 / (in.epsilon_d * in.epsilon_r));
  if (!(in.epsilon_kl > floor_kl)) {
    std::ostringstream msg;
    msg.precision(17);
    msg << "distinguishability condition violated: epsilon_kl = " << in.epsilon_kl
        << " <= ln(1/(epsilon_d epsilon_r)) = " << floor_kl;
    fail(ErrorKind::Precondition, msg.str());
  }
  const double gap = in.margin / 2.0 - in.epsilon_theta * in.eta * in.eta;
  if (!(gap > 0.0)) {
    std::ostringstream msg;
    msg.precision(17);
    msg << "deviation condition violated: margin/2 = " << in.margin / 2.0
        << " <= epsilon_theta * eta^2 = " << in.epsilon_theta * in.eta * in.eta;
    fail(ErrorKind::Precondition, msg.str());
  }
  const double hoeffding = std::log(4.0 * m / delta_prob) / (2.0 * gap * gap);
  double posterior = 0.0;
  if (std::isfinite(in.epsilon_kl)) {
    posterior = (std::log(2.0 / gap) +
                 std::log(1.0 / (in.epsilon_d * in.epsilon_r * p0_min)) + 1.0) /
                (in.epsilon_kl - floor_kl);
  }
  const double n = std::ceil(std::max(hoeffding, posterior));
  if (!std::isfinite(n)) fail(ErrorKind::Precondition, "n_threshold: threshold is not finite");
  return static_cast<std::size_t>(std::max(1.0, n));
}

AssumptionReport check_assumptions(const Hmm& hmm, const AssumptionConfig& config) {
  AssumptionReport r;
  r.num_tasks = hmm.num_tasks();
  r.num_obs = hmm.num_obs();
  r.delta_prob = config.delta_prob;
  r.p0_min = hmm.min_pretrain_mass();
  r.recurrence_horizon = config.recurrence_horizon;
  r.eta_max_length = config.eta_max_length;
  r.demo_length = config.demo_length;
  r.l_grid = config.l_grid;
  r.ridge = config.ridge.value;
  r.ridge_relative = config.ridge.relative;
  r.margin_samples = config.margin_samples;
  r.seed = config.seed;

  r.epsilon_d = epsilon_d(hmm);
  r.anchor_ok = check_anchor(hmm);
  r.delimiter_ok = r.epsilon_d > 0.0;
  const KlMode kl_mode = config.kl_exact
                             ? KlMode::exact_mode()
                             : KlMode::monte_carlo(config.kl_samples,
                                                   derive_seed(config.seed, {0x6b6c}));
  r.epsilon_kl = epsilon_kl(hmm, config.kl_length, kl_mode, config.enumeration_cap);
  r.eta = eta_bound(hmm, config.eta_max_length, EtaMode::Exact, config.enumeration_cap);

  // Pre-training moments are shared by every task's epsilon_theta.
  std::vector<MomentMatrix> pretrain;
  for (std::size_t l : config.l_grid) {
    pretrain.push_back(moment_matrix(hmm, hmm.pretrain_init(), "pretrain", l,
                                     MomentEstimator::exact(), config.enumeration_cap));
  }

  r.epsilon_r = 1.0;
  bool all_thresholds = true;
  std::size_t n_delta = 0;
  r.assumption5_ok = true;
  for (int task = 0; task < hmm.num_tasks(); ++task) {
    TaskAssumptions t;
    t.task = task;
    t.epsilon_r = epsilon_r(hmm, task, config.recurrence_horizon, config.enumeration_cap);
    r.epsilon_r = std::min(r.epsilon_r, t.epsilon_r);

    t.epsilon_theta.grid = config.l_grid;
    t.epsilon_theta.value = kInf;
    for (std::size_t i = 0; i < config.l_grid.size(); ++i) {
      const std::size_t l = config.l_grid[i];
      const MomentMatrix own = moment_matrix(hmm, hmm.task_init(task), "task", l,
                                             MomentEstimator::exact(), config.enumeration_cap);
      const double lambda = config.ridge.absolute(pretrain[i].sigma);
      const Matrix diff = ridge_inverse(pretrain[i].sigma, lambda) - ridge_inverse(own.sigma, lambda);
      const double rho = spectral_radius_sym(0.5 * (diff + diff.transpose()));
      t.epsilon_theta.per_length.push_back(rho);
      if (rho < t.epsilon_theta.value) {
        t.epsilon_theta.value = rho;
        t.epsilon_theta.best_length = l;
      }
    }

    Rng rng(derive_seed(config.seed, {0x6d617267, static_cast<std::uint64_t>(task)}));
    for (std::size_t i = 0; i < config.margin_samples; ++i) {
      const TokenSeq x = sample_sequence(hmm, hmm.task_init(task), config.demo_length, rng);
      t.margins.push_back(margin_delta(hmm, task, x));
    }
    if (!t.margins.empty()) {
      std::vector<double> sorted = t.margins;
      std::sort(sorted.begin(), sorted.end());
      t.margin_min = sorted.front();
      const auto q = static_cast<std::size_t>(
          std::floor(config.delta_prob * static_cast<double>(sorted.size())));
      t.margin_quantile = sorted[std::min(q, sorted.size() - 1)];
    }
    t.assumption5_ok = t.epsilon_theta.value < t.margin_quantile / (2.0 * r.eta * r.eta);
    r.assumption5_ok = r.assumption5_ok && t.assumption5_ok;
    r.tasks.push_back(std::move(t));
  }
  r.recurrence_ok = r.epsilon_r > 0.0;
  r.kl_ok = r.epsilon_kl.value > std::log(1.0 / (r.epsilon_d * r.epsilon_r));

  for (auto& t : r.tasks) {
    try {
      ThresholdInputs in{r.epsilon_kl.value, r.epsilon_r, r.epsilon_d,
                         t.epsilon_theta.value, r.eta, t.margin_quantile};
      t.n_threshold = n_threshold(in, config.delta_prob, hmm.num_obs(), r.p0_min);
      n_delta = std::max(n_delta, *t.n_threshold);
    } catch (const Error& e) {
      all_thresholds = false;
      t.n_threshold_error = e.what();
    }
  }
  if (all_thresholds && r.kl_ok && r.assumption5_ok) r.n_delta = n_delta;
  return r;
}

namespace {

nlohmann::json real_json(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  return v;
}

double real_from(const nlohmann::json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return kInf;
    if (s == "-inf") return -kInf;
    return std::numeric_limits<double>::quiet_NaN();
  }
  return j.get<double>();
}

}  // namespace

nlohmann::json to_json(const AssumptionReport& r) {
  nlohmann::json tasks = nlohmann::json::array();
  for (const auto& t : r.tasks) {
    nlohmann::json margins = nlohmann::json::array();
    tasks.push_back({
        {"task", t.task},
        {"epsilon_r", real_json(t.epsilon_r)},
        {"epsilon_theta", real_json(t.epsilon_theta.value)},
        {"epsilon_theta_best_length", t.epsilon_theta.best_length},
        {"epsilon_theta_grid", t.epsilon_theta.grid},
        {"epsilon_theta_per_length", t.epsilon_theta.per_length},
        {"margin_min", real_json(t.margin_min)},
        {"margin_quantile", real_json(t.margin_quantile)},
        {"assumption5_ok", t.assumption5_ok},
        {"n_threshold", t.n_threshold ? nlohmann::json(*t.n_threshold) : nlohmann::json()},
        {"n_threshold_error", t.n_threshold_error},
    });
  }
  return {
      {"num_tasks", r.num_tasks},
      {"num_obs", r.num_obs},
      {"epsilon_r", real_json(r.epsilon_r)},
      {"epsilon_d", real_json(r.epsilon_d)},
      {"epsilon_kl",
       {{"value", real_json(r.epsilon_kl.value)},
        {"std_error", real_json(r.epsilon_kl.std_error)},
        {"length", r.epsilon_kl.length},
        {"estimator", r.epsilon_kl.exact ? "exact" : "mc"},
        {"samples", r.epsilon_kl.samples},
        {"from_task", r.epsilon_kl.from_task},
        {"to_task", r.epsilon_kl.to_task}}},
      {"eta", real_json(r.eta)},
      {"p0_min", real_json(r.p0_min)},
      {"delta_prob", r.delta_prob},
      {"verdicts",
       {{"recurrence", r.recurrence_ok},
        {"anchor", r.anchor_ok},
        {"delimiter", r.delimiter_ok},
        {"distinguishability", r.kl_ok},
        {"bounded_deviation", r.assumption5_ok},
        {"compliant", r.compliant()}}},
      {"n_delta", r.n_delta ? nlohmann::json(*r.n_delta) : nlohmann::json()},
      {"tasks", tasks},
      {"provenance",
       {{"epsilon_r", "exact enumeration"},
        {"eta", "exact enumeration (branch and bound)"},
        {"epsilon_theta", "exact moments, finite length grid (upper bound on the infimum)"},
        {"margin", "sampled test inputs"},
        {"recurrence_horizon", r.recurrence_horizon},
        {"eta_max_length", r.eta_max_length},
        {"demo_length", r.demo_length},
        {"l_grid", r.l_grid},
        {"ridge", r.ridge},
        {"ridge_relative", r.ridge_relative},
        {"margin_samples", r.margin_samples},
        {"seed", r.seed}}},
  };
}

AssumptionReport report_from_json(const nlohmann::json& j) {
  AssumptionReport r;
  r.num_tasks = j.at("num_tasks").get<int>();
  r.num_obs = j.at("num_obs").get<int>();
  r.epsilon_r = real_from(j.at("epsilon_r"));
  r.epsilon_d = real_from(j.at("epsilon_d"));
  const auto& kl = j.at("epsilon_kl");
  r.epsilon_kl.value = real_from(kl.at("value"));
  r.epsilon_kl.std_error = real_from(kl.at("std_error"));
  r.epsilon_kl.length = kl.at("length").get<std::size_t>();
  r.epsilon_kl.exact = kl.at("estimator").get<std::string>() == "exact";
  r.epsilon_kl.samples = kl.at("samples").get<std::size_t>();
  r.epsilon_kl.from_task = kl.at("from_task").get<int>();
  r.epsilon_kl.to_task = kl.at("to_task").get<int>();
  r.eta = real_from(j.at("eta"));
  r.p0_min = real_from(j.at("p0_min"));
  r.delta_prob = j.at("delta_prob").get<double>();
  const auto& v = j.at("verdicts");
  r.recurrence_ok = v.at("recurrence").get<bool>();
  r.anchor_ok = v.at("anchor").get<bool>();
  r.delimiter_ok = v.at("delimiter").get<bool>();
  r.kl_ok = v.at("distinguishability").get<bool>();
  r.assumption5_ok = v.at("bounded_deviation").get<bool>();
  if (!j.at("n_delta").is_null()) r.n_delta = j.at("n_delta").get<std::size_t>();
  for (const auto& tj : j.at("tasks")) {
    TaskAssumptions t;
    t.task = tj.at("task").get<int>();
    t.epsilon_r = real_from(tj.at("epsilon_r"));
    t.epsilon_theta.value = real_from(tj.at("epsilon_theta"));
    t.epsilon_theta.best_length = tj.at("epsilon_theta_best_length").get<std::size_t>();
    t.epsilon_theta.grid = tj.at("epsilon_theta_grid").get<std::vector<std::size_t>>();
    t.epsilon_theta.per_length = tj.at("epsilon_theta_per_length").get<std::vector<double>>();
    t.margin_min = real_from(tj.at("margin_min"));
    t.margin_quantile = real_from(tj.at("margin_quantile"));
    t.assumption5_ok = tj.at("assumption5_ok").get<bool>();
    if (!tj.at("n_threshold").is_null()) t.n_threshold = tj.at("n_threshold").get<std::size_t>();
    t.n_threshold_error = tj.at("n_threshold_error").get<std::string>();
    r.tasks.push_back(std::move(t));
  }
  const auto& p = j.at("provenance");
  r.recurrence_horizon = p.at("recurrence_horizon").get<std::size_t>();
  r.eta_max_length = p.at("eta_max_length").get<std::size_t>();
  r.demo_length = p.at("demo_length").get<std::size_t>();
  r.l_grid = p.at("l_grid").get<std::vector<std::size_t>>();
  r.ridge = p.at("ridge").get<double>();
  r.ridge_relative = p.at("ridge_relative").get<bool>();
  r.margin_samples = p.at("margin_samples").get<std::size_t>();
  r.seed = p.at("seed").get<std::uint64_t>();
  return r;
}

std::string report_table(const AssumptionReport& r) {
  std::ostringstream out;
  auto row = [&](const std::string& name, const std::string& value, const std::string& note) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-28s %-26s %s\n", name.c_str(), value.c_str(), note.c_str());
    out << buf;
  };
  auto ok = [](bool b) { return std::string(b ? "ok" : "VIOLATED"); };
  row("quantity", "value", "verdict / provenance");
  row("epsilon_r", format_real(r.epsilon_r),
      ok(r.recurrence_ok) + " (exact, horizon " + std::to_string(r.recurrence_horizon) + ")");
  row("anchor words", r.anchor_ok ? "true" : "false", ok(r.anchor_ok));
  row("epsilon_d", format_real(r.epsilon_d), ok(r.delimiter_ok));
  row("epsilon_kl", format_real(r.epsilon_kl.value),
      ok(r.kl_ok) + " (" + (r.epsilon_kl.exact ? "exact" : "mc") + ", l = " +
          std::to_string(r.epsilon_kl.length) + ")");
  row("ln(1/(eps_r eps_d))", format_real(std::log(1.0 / (r.epsilon_r * r.epsilon_d))), "");
  row("eta", format_real(r.eta), "exact, lengths 1.." + std::to_string(r.eta_max_length));
  row("p0_min", format_real(r.p0_min), "");
  for (const auto& t : r.tasks) {
    const std::string tag = "task " + std::to_string(t.task);
    row(tag + " epsilon_theta", format_real(t.epsilon_theta.value),
        "best l = " + std::to_string(t.epsilon_theta.best_length));
    row(tag + " margin (q=delta)", format_real(t.margin_quantile),
        "min " + format_real(t.margin_min));
    row(tag + " bounded deviation", t.assumption5_ok ? "true" : "false", ok(t.assumption5_ok));
    row(tag + " n_threshold", t.n_threshold ? std::to_string(*t.n_threshold) : "undefined",
        t.n_threshold_error);
  }
  row("compliant", r.compliant() ? "true" : "false", "");
  row("n_delta", r.n_delta ? std::to_string(*r.n_delta) : "undefined", "");
  return out.str();
}

}  // namespace icl
