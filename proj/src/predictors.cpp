#include "icl_lab/predictors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>

#include "icl_lab/errors.hpp"
#include "icl_lab/operators.hpp"
#include "icl_lab/serialization.hpp"

namespace icl {
namespace {

const char* method_name(PredictionMethod m) {
  return m == PredictionMethod::Bayes ? "bayes" : "kernel";
}

Vector pretrain_next_tokens(const Hmm& hmm, TokenSpan seq) {
  try {
    return next_token_distribution(hmm, hmm.pretrain_init(), seq);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::ImpossiblePrompt) throw;
    fail(ErrorKind::ImpossiblePrompt, std::string("impossible prompt: ") + e.what());
  }
}

}  // namespace

void finalize_scores(const Hmm& hmm, PredictionOutcome& outcome) {
  const Vector& s = outcome.label_scores;
  if (s.size() == 0) fail(ErrorKind::Validation, "empty label scores");
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < s.size(); ++i) {
    if (s(i) > s(best)) best = i;
  }
  double second = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (i != best) second = std::max(second, s(i));
  }
  outcome.argmax_index = static_cast<int>(best);
  outcome.argmax_label = hmm.label_set()[static_cast<std::size_t>(best)];
  outcome.tie = s.size() > 1 && s(best) - second < kTieTolerance;
}

std::string PredictionOutcome::record_header() {
  return "method,n,argmax,tie,top1,top2,w_mean,w_min,w_max";
}

std::string PredictionOutcome::record() const {
  std::vector<double> sorted(label_scores.data(), label_scores.data() + label_scores.size());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  const double top1 = sorted.empty() ? 0.0 : sorted[0];
  const double top2 = sorted.size() < 2 ? 0.0 : sorted[1];
  double w_mean = 0.0;
  double w_min = 0.0;
  double w_max = 0.0;
  if (!weights.empty()) {
    w_min = *std::min_element(weights.begin(), weights.end());
    w_max = *std::max_element(weights.begin(), weights.end());
    for (double w : weights) w_mean += w;
    w_mean /= static_cast<double>(weights.size());
  }
  std::string out = method_name(method);
  out += "," + std::to_string(n) + "," + std::to_string(argmax_label) + "," +
         (tie ? "1" : "0");
  for (double v : {top1, top2, w_mean, w_min, w_max}) out += "," + format_real(v);
  return out;
}

PredictionOutcome bayes_predict(const Hmm& hmm, const IclPrompt& prompt, ScoreDomain domain) {
  const TokenSeq flat = prompt.flatten();
  const Vector next = pretrain_next_tokens(hmm, flat);
  const auto& labels = hmm.label_set();
  PredictionOutcome out;
  out.method = PredictionMethod::Bayes;
  out.n = prompt.size();
  out.label_scores.resize(static_cast<Eigen::Index>(labels.size()));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    out.label_scores(static_cast<Eigen::Index>(i)) = next(labels[i]);
  }
  if (domain == ScoreDomain::Labels) {
    const double total = out.label_scores.sum();
    if (!(total > 0.0)) {
      fail(ErrorKind::Unlabelable, "unlabelable input: no label has positive probability");
    }
    out.label_scores /= total;
  }
  finalize_scores(hmm, out);
  return out;
}

std::vector<double> kernel_weights(const Hmm& hmm, const IclPrompt& prompt,
                                   const SigmaInverseProvider& sigma_inverse) {
  validate_sequence(hmm, prompt.test_input);
  const Vector test = flatten(operator_of(hmm, prompt.test_input));
  // Sigma^{-1} is symmetric, so one product per length serves every demo.
  std::map<std::size_t, Vector> projected;
  std::vector<double> weights;
  weights.reserve(prompt.size());
  for (const auto& demo : prompt.demos) {
    validate_sequence(hmm, demo.input);
    const std::size_t len = demo.input.size();
    auto it = projected.find(len);
    if (it == projected.end()) it = projected.emplace(len, sigma_inverse(len) * test).first;
    weights.push_back(it->second.dot(flatten(operator_of(hmm, demo.input))));
  }
  return weights;
}

PredictionOutcome kernel_from_weights(const Hmm& hmm, const std::vector<double>& weights,
                                      const std::vector<Token>& labels) {
  if (weights.empty()) {
    fail(ErrorKind::Precondition, "kernel prediction needs at least one demonstration");
  }
  if (weights.size() != labels.size()) {
    fail(ErrorKind::Validation, "kernel prediction: weights and labels differ in length");
  }
  const auto k = static_cast<Eigen::Index>(hmm.label_set().size());
  PredictionOutcome out;
  out.method = PredictionMethod::Kernel;
  out.n = weights.size();
  out.weights = weights;
  out.raw_scores = Vector::Zero(k);
  double mass = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const int idx = hmm.label_index(labels[i]);
    if (idx < 0) {
      fail(ErrorKind::Validation,
           "demonstration label " + std::to_string(labels[i]) + " is not in label_set");
    }
    out.raw_scores(idx) += weights[i];
    mass += weights[i];
  }
  if (!(std::abs(mass) >= kDegenerateKernelMass)) {
    fail(ErrorKind::DegenerateKernel,
         "degenerate kernel mass: |sum of weights| = " + format_real(std::abs(mass)));
  }
  out.label_scores = out.raw_scores / mass;
  out.raw_scores /= static_cast<double>(weights.size());
  finalize_scores(hmm, out);
  return out;
}

PredictionOutcome kernel_predict(const Hmm& hmm, const IclPrompt& prompt,
                                 const SigmaInverseProvider& sigma_inverse) {
  if (prompt.demos.empty()) {
    fail(ErrorKind::Precondition, "kernel prediction needs at least one demonstration");
  }
  std::vector<Token> labels;
  for (const auto& demo : prompt.demos) labels.push_back(demo.label);
  return kernel_from_weights(hmm, kernel_weights(hmm, prompt, sigma_inverse), labels);
}

Vector task_posterior(const Hmm& hmm, const IclPrompt& prompt) {
  if (prompt.test_input.empty()) fail(ErrorKind::Precondition, "task posterior needs a test input");
  const TokenSeq flat = prompt.flatten();
  validate_sequence(hmm, flat);
  const std::size_t at = prompt.test_offset();
  const Matrix& T = hmm.transition();
  const Matrix& B = hmm.emission();

  // Filtered state distribution at the first test token.
  Vector alpha = hmm.pretrain_init();
  for (std::size_t t = 0;; ++t) {
    alpha = alpha.cwiseProduct(B.col(flat[t]));
    const double c = alpha.sum();
    if (!(c > 0.0)) {
      fail(ErrorKind::ImpossiblePrompt,
           "impossible prompt: zero probability at position " + std::to_string(t));
    }
    alpha /= c;
    if (t == at) break;
    alpha = T.transpose() * alpha;
  }
  // Backward messages over the rest of the test input.
  Vector beta = Vector::Ones(hmm.num_states());
  for (std::size_t t = flat.size() - 1; t > at; --t) {
    beta = T * beta.cwiseProduct(B.col(flat[t]));
    const double c = beta.sum();
    if (!(c > 0.0)) {
      fail(ErrorKind::ImpossiblePrompt,
           "impossible prompt: zero probability at position " + std::to_string(t));
    }
    beta /= c;
  }
  const Vector joint = alpha.cwiseProduct(beta);
  Vector probs(hmm.num_tasks());
  for (int k = 0; k < hmm.num_tasks(); ++k) probs(k) = joint(hmm.task_start(k));
  const double total = probs.sum();
  if (!(total > 0.0)) {
    fail(ErrorKind::ImpossiblePrompt,
         "impossible prompt: the first test token cannot come from a start state");
  }
  return probs / total;
}

double prediction_similarity(const Hmm& hmm, TokenSpan x1, TokenSpan x2) {
  return pretrain_next_tokens(hmm, x1).dot(pretrain_next_tokens(hmm, x2));
}

}  // namespace icl
