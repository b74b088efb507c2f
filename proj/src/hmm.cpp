#include "icl_lab/hmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "icl_lab/errors.hpp"
#include "icl_lab/operators.hpp"
#include "icl_lab/rng.hpp"

namespace icl {
namespace {

void check_stochastic_rows(const Matrix& m, const std::string& what) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    if ((m.row(r).array() < 0.0).any() || !m.row(r).allFinite()) {
      fail(ErrorKind::Validation,
           what + " row " + std::to_string(r) + " has a negative or non-finite entry");
    }
    const double sum = m.row(r).sum();
    if (std::abs(sum - 1.0) > kStochasticTolerance) {
      std::ostringstream msg;
      msg.precision(17);
      msg << what << " row " << r << " sums to " << sum;
      fail(ErrorKind::Validation, msg.str());
    }
  }
}

}  // namespace

void validate_distribution(const Vector& p, int size, const std::string& what) {
  if (p.size() != size) {
    fail(ErrorKind::Validation, what + ": expected " + std::to_string(size) +
                                    " entries, got " + std::to_string(p.size()));
  }
  if (!p.allFinite() || (p.array() < 0.0).any()) {
    fail(ErrorKind::Validation, what + ": entries must be finite and nonnegative");
  }
  if (std::abs(p.sum() - 1.0) > kStochasticTolerance) {
    std::ostringstream msg;
    msg.precision(17);
    msg << what << ": sums to " << p.sum();
    fail(ErrorKind::Validation, msg.str());
  }
}

void validate_sequence(const Hmm& hmm, TokenSpan seq) {
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (seq[i] < 0 || seq[i] >= hmm.num_obs()) {
      fail(ErrorKind::Validation, "token " + std::to_string(seq[i]) + " at position " +
                                      std::to_string(i) + " is outside the alphabet");
    }
  }
}

Hmm Hmm::create(Parts parts) {
  const auto d = parts.transition.rows();
  if (d <= 0) fail(ErrorKind::Validation, "hmm: num_states must be positive");
  if (parts.transition.cols() != d) fail(ErrorKind::Validation, "hmm: transition must be square");
  if (parts.emission.rows() != d) {
    fail(ErrorKind::Validation, "hmm: emission must have one row per state");
  }
  const auto m = parts.emission.cols();
  if (m <= 0) fail(ErrorKind::Validation, "hmm: num_obs must be positive");
  check_stochastic_rows(parts.transition, "transition");
  check_stochastic_rows(parts.emission, "emission");

  if (parts.task_starts.empty()) fail(ErrorKind::Validation, "hmm: task_starts is empty");
  std::set<int> starts;
  for (int s : parts.task_starts) {
    if (s < 0 || s >= d) fail(ErrorKind::Validation, "hmm: task start out of range");
    if (!starts.insert(s).second) {
      fail(ErrorKind::Validation, "hmm: task_starts entries must be distinct");
    }
  }
  validate_distribution(parts.pretrain_init, static_cast<int>(d), "pretrain_init");
  for (Eigen::Index s = 0; s < d; ++s) {
    const bool is_start = starts.count(static_cast<int>(s)) > 0;
    if (!is_start && parts.pretrain_init(s) != 0.0) {
      fail(ErrorKind::Validation,
           "pretrain_init puts mass on non-start state " + std::to_string(s));
    }
    if (is_start && !(parts.pretrain_init(s) > 0.0)) {
      fail(ErrorKind::Validation,
           "pretrain_init has no mass on start state " + std::to_string(s));
    }
  }
  if (parts.delimiter < 0 || parts.delimiter >= m) {
    fail(ErrorKind::Validation, "hmm: delimiter outside the alphabet");
  }
  if (parts.label_set.empty()) fail(ErrorKind::Validation, "hmm: label_set is empty");
  std::set<Token> labels;
  for (Token y : parts.label_set) {
    if (y < 0 || y >= m) fail(ErrorKind::Validation, "hmm: label outside the alphabet");
    if (y == parts.delimiter) fail(ErrorKind::Validation, "hmm: label_set contains the delimiter");
    if (!labels.insert(y).second) fail(ErrorKind::Validation, "hmm: duplicate label");
  }
  return Hmm(std::move(parts));
}

int Hmm::task_start(int task) const {
  if (task < 0 || task >= num_tasks()) {
    fail(ErrorKind::Validation, "task id " + std::to_string(task) + " out of range");
  }
  return parts_.task_starts[static_cast<std::size_t>(task)];
}

bool Hmm::is_start_state(int state) const {
  return std::find(parts_.task_starts.begin(), parts_.task_starts.end(), state) !=
         parts_.task_starts.end();
}

bool Hmm::is_label(Token o) const { return label_index(o) >= 0; }

int Hmm::label_index(Token o) const {
  const auto it = std::find(parts_.label_set.begin(), parts_.label_set.end(), o);
  return it == parts_.label_set.end() ? -1
                                      : static_cast<int>(it - parts_.label_set.begin());
}

Vector Hmm::task_init(int task) const {
  Vector v = Vector::Zero(num_states());
  v(task_start(task)) = 1.0;
  return v;
}

double Hmm::min_pretrain_mass() const {
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index s = 0; s < parts_.pretrain_init.size(); ++s) {
    if (parts_.pretrain_init(s) > 0.0) best = std::min(best, parts_.pretrain_init(s));
  }
  return best;
}

TokenSeq sample_sequence(const Hmm& hmm, const Vector& init, std::size_t length,
                         Rng& rng) {
  validate_distribution(init, hmm.num_states(), "init");
  if (length == 0) fail(ErrorKind::Validation, "sample_sequence: length must be positive");
  TokenSeq out;
  out.reserve(length);
  Eigen::Index state = rng.categorical(init);
  for (std::size_t t = 0; t < length; ++t) {
    if (t > 0) state = rng.categorical(hmm.transition().row(state).transpose());
    out.push_back(static_cast<Token>(rng.categorical(hmm.emission().row(state).transpose())));
  }
  return out;
}

TokenSeq sample_sequence(const Hmm& hmm, const Vector& init, std::size_t length,
                         std::uint64_t seed) {
  Rng rng(seed);
  return sample_sequence(hmm, init, length, rng);
}

double forward_likelihood(const Hmm& hmm, const Vector& init, TokenSpan seq) {
  validate_distribution(init, hmm.num_states(), "init");
  validate_sequence(hmm, seq);
  if (seq.empty()) return 1.0;
  const Matrix& T = hmm.transition();
  const Matrix& B = hmm.emission();
  Vector alpha = init.cwiseProduct(B.col(seq[0]));
  for (std::size_t t = 1; t < seq.size(); ++t) {
    alpha = (T.transpose() * alpha).cwiseProduct(B.col(seq[t]));
  }
  return alpha.sum();
}

double forward_log_likelihood(const Hmm& hmm, const Vector& init, TokenSpan seq) {
  validate_distribution(init, hmm.num_states(), "init");
  validate_sequence(hmm, seq);
  const Matrix& T = hmm.transition();
  const Matrix& B = hmm.emission();
  double log_l = 0.0;
  Vector predictive = init;
  for (std::size_t t = 0; t < seq.size(); ++t) {
    Vector alpha = predictive.cwiseProduct(B.col(seq[t]));
    const double c = alpha.sum();
    if (!(c > 0.0)) return -std::numeric_limits<double>::infinity();
    log_l += std::log(c);
    predictive = T.transpose() * (alpha / c);
  }
  return log_l;
}

double operator_likelihood(const Hmm& hmm, const Vector& init, TokenSpan seq) {
  validate_distribution(init, hmm.num_states(), "init");
  validate_sequence(hmm, seq);
  if (seq.empty()) return 1.0;
  const Matrix prefix = operator_of(hmm, seq.first(seq.size() - 1));
  const Vector last = hmm.emission().col(seq.back());
  return init.dot(prefix * last);
}

double operator_log_likelihood(const Hmm& hmm, const Vector& init, TokenSpan seq) {
  validate_distribution(init, hmm.num_states(), "init");
  validate_sequence(hmm, seq);
  if (seq.empty()) return 0.0;
  const Matrix& T = hmm.transition();
  const Matrix& B = hmm.emission();
  // Row vector v^T multiplied by one factor diag(p_o) T at a time, rescaled.
  Eigen::RowVectorXd row = init.transpose();
  double log_scale = 0.0;
  for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
    row = row.cwiseProduct(B.col(seq[i]).transpose()) * T;
    const double s = row.sum();
    if (!(s > 0.0)) return -std::numeric_limits<double>::infinity();
    log_scale += std::log(s);
    row /= s;
  }
  const double tail = row.dot(B.col(seq.back()).transpose());
  if (!(tail > 0.0)) return -std::numeric_limits<double>::infinity();
  return log_scale + std::log(tail);
}

Vector next_state_distribution(const Hmm& hmm, const Vector& init, TokenSpan seq) {
  validate_distribution(init, hmm.num_states(), "init");
  validate_sequence(hmm, seq);
  const Matrix& T = hmm.transition();
  const Matrix& B = hmm.emission();
  Vector predictive = init;
  for (std::size_t t = 0; t < seq.size(); ++t) {
    Vector alpha = predictive.cwiseProduct(B.col(seq[t]));
    const double c = alpha.sum();
    if (!(c > 0.0)) {
      fail(ErrorKind::ImpossiblePrompt,
           "sequence has zero probability at position " + std::to_string(t));
    }
    predictive = T.transpose() * (alpha / c);
  }
  return predictive;
}

Vector next_token_distribution(const Hmm& hmm, const Vector& init, TokenSpan seq) {
  return hmm.emission().transpose() * next_state_distribution(hmm, init, seq);
}

Vector label_distribution(const Hmm& hmm, const Vector& init, TokenSpan seq) {
  const Vector next = next_token_distribution(hmm, init, seq);
  const auto& labels = hmm.label_set();
  Vector out(static_cast<Eigen::Index>(labels.size()));
  for (std::size_t i = 0; i < labels.size(); ++i) out(static_cast<Eigen::Index>(i)) = next(labels[i]);
  const double total = out.sum();
  if (!(total > 0.0)) {
    fail(ErrorKind::Unlabelable, "unlabelable input: no label has positive probability");
  }
  return out / total;
}

namespace {

Matrix random_stochastic(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Matrix out(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      out(r, c) = rng.uniform() < 0.15 ? 0.0 : rng.uniform();
    }
    if (!(out.row(r).sum() > 0.0)) {
      out(r, static_cast<Eigen::Index>(rng.below(static_cast<std::size_t>(cols)))) = 1.0;
    }
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

}  // namespace

Hmm random_hmm(int num_states, int num_obs, int num_tasks, Rng& rng) {
  if (num_states < 1 || num_tasks < 1 || num_tasks > num_states) {
    fail(ErrorKind::Validation, "random_hmm: need 1 <= num_tasks <= num_states");
  }
  if (num_obs < 2) fail(ErrorKind::Validation, "random_hmm: need at least two observations");
  Hmm::Parts parts;
  parts.transition = random_stochastic(num_states, num_states, rng);
  parts.emission = random_stochastic(num_states, num_obs, rng);
  parts.pretrain_init = Vector::Zero(num_states);
  for (int k = 0; k < num_tasks; ++k) {
    parts.task_starts.push_back(k);
    parts.pretrain_init(k) = 1.0 / num_tasks;
  }
  parts.delimiter = 0;
  parts.label_set = {num_obs - 1};
  return Hmm::create(std::move(parts));
}

std::size_t DemoLengthPolicy::draw(Rng& rng) const {
  if (is_fixed()) return min_len;
  return min_len + rng.below(max_len - min_len + 1);
}

void DemoLengthPolicy::validate() const {
  if (min_len == 0) fail(ErrorKind::Validation, "demo length must be at least 1");
  if (min_len > max_len) fail(ErrorKind::Validation, "demo length range is empty");
}

TokenSeq IclPrompt::flatten() const {
  TokenSeq out;
  for (const auto& demo : demos) {
    out.insert(out.end(), demo.input.begin(), demo.input.end());
    out.push_back(demo.label);
    out.push_back(delimiter);
  }
  out.insert(out.end(), test_input.begin(), test_input.end());
  return out;
}

std::size_t IclPrompt::test_offset() const {
  std::size_t offset = 0;
  for (const auto& demo : demos) offset += demo.input.size() + 2;
  return offset;
}

Demo sample_demo(const Hmm& hmm, int task, std::size_t length, Rng& rng) {
  const Vector init = hmm.task_init(task);
  Demo demo;
  demo.input = sample_sequence(hmm, init, length, rng);
  const Vector labels = label_distribution(hmm, init, demo.input);
  demo.label = hmm.label_set()[static_cast<std::size_t>(rng.categorical(labels))];
  return demo;
}

IclPrompt build_prompt_mixed(const Hmm& hmm, int test_task, int demo_task,
                             std::size_t n, const DemoLengthPolicy& policy,
                             std::uint64_t seed) {
  policy.validate();
  hmm.task_start(test_task);
  hmm.task_start(demo_task);
  Rng rng(seed);
  IclPrompt prompt;
  prompt.delimiter = hmm.delimiter();
  prompt.task_id = test_task;
  prompt.demos.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    prompt.demos.push_back(sample_demo(hmm, demo_task, policy.draw(rng), rng));
  }
  prompt.test_input = sample_sequence(hmm, hmm.task_init(test_task), policy.draw(rng), rng);
  return prompt;
}

IclPrompt build_prompt(const Hmm& hmm, int task_id, std::size_t n,
                       const DemoLengthPolicy& policy, std::uint64_t seed) {
  return build_prompt_mixed(hmm, task_id, task_id, n, policy, seed);
}

}  // namespace icl
