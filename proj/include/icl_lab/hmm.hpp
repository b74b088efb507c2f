#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace icl {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Token = int;
using TokenSeq = std::vector<Token>;
using TokenSpan = std::span<const Token>;

inline constexpr double kStochasticTolerance = 1e-12;

/// Unified task-mixture HMM. Every task owns a distinct start state; the
/// pre-training initial distribution is supported exactly on those states.
/// Immutable after construction.
class Hmm {
 public:
  struct Parts {
    Matrix transition;             // d x d, T(s, s') = P(s' | s)
    Matrix emission;               // d x m, B(s, o) = P(o | s)
    std::vector<int> task_starts;  // s_theta per task
    Vector pretrain_init;          // over states
    Token delimiter = 0;
    std::vector<Token> label_set;
  };

  /// Validates every invariant and throws Error(Validation) naming the first
  /// one that fails.
  static Hmm create(Parts parts);

  int num_states() const { return static_cast<int>(parts_.transition.rows()); }
  int num_obs() const { return static_cast<int>(parts_.emission.cols()); }
  int num_tasks() const { return static_cast<int>(parts_.task_starts.size()); }

  const Matrix& transition() const { return parts_.transition; }
  const Matrix& emission() const { return parts_.emission; }
  const std::vector<int>& task_starts() const { return parts_.task_starts; }
  const Vector& pretrain_init() const { return parts_.pretrain_init; }
  Token delimiter() const { return parts_.delimiter; }
  const std::vector<Token>& label_set() const { return parts_.label_set; }
  const Parts& parts() const { return parts_; }

  int task_start(int task) const;
  bool is_start_state(int state) const;
  bool is_label(Token o) const;
  /// Position of `o` inside label_set, or -1.
  int label_index(Token o) const;
  /// Point mass on the start state of `task`.
  Vector task_init(int task) const;
  /// Smallest positive entry of the pre-training distribution.
  double min_pretrain_mass() const;

 private:
  explicit Hmm(Parts parts) : parts_(std::move(parts)) {}
  Parts parts_;
};

/// Throws Error(Validation) unless `p` is a probability vector of length `size`.
void validate_distribution(const Vector& p, int size, const std::string& what);
void validate_sequence(const Hmm& hmm, TokenSpan seq);

TokenSeq sample_sequence(const Hmm& hmm, const Vector& init,
                         std::size_t length, std::uint64_t seed);

class Rng;
TokenSeq sample_sequence(const Hmm& hmm, const Vector& init,
                         std::size_t length, Rng& rng);

/// P(seq | init) by the classical forward recursion (unscaled).
double forward_likelihood(const Hmm& hmm, const Vector& init, TokenSpan seq);
/// log P(seq | init) with per-step rescaling; -inf for impossible sequences.
double forward_log_likelihood(const Hmm& hmm, const Vector& init,
                              TokenSpan seq);

/// v_init^T (prod diag(p_o) T) diag(p_last) 1, evaluated literally as a
/// product of observable operators. The empty sequence has likelihood 1.
double operator_likelihood(const Hmm& hmm, const Vector& init, TokenSpan seq);
/// Same product with the running row vector renormalized at every factor.
double operator_log_likelihood(const Hmm& hmm, const Vector& init,
                               TokenSpan seq);

/// Distribution of the hidden state at the step after `seq`. Throws
/// Error(ImpossiblePrompt) when seq has zero probability under init.
Vector next_state_distribution(const Hmm& hmm, const Vector& init,
                               TokenSpan seq);

/// Next-token distribution over all m observations after `seq`.
Vector next_token_distribution(const Hmm& hmm, const Vector& init,
                               TokenSpan seq);

/// Next-token distribution renormalized over label_set (ordered as
/// label_set). Throws Error(Unlabelable) when no label has positive mass.
Vector label_distribution(const Hmm& hmm, const Vector& init, TokenSpan seq);

/// Random valid model: dense rows with occasional exact zeros, start states
/// 0..num_tasks-1, uniform pre-training mass over them, delimiter 0 and a
/// single-label set {num_obs - 1}.
Hmm random_hmm(int num_states, int num_obs, int num_tasks, Rng& rng);

/// Demonstration input length: fixed, or uniform over [min_len, max_len].
struct DemoLengthPolicy {
  std::size_t min_len = 6;
  std::size_t max_len = 6;

  static DemoLengthPolicy fixed(std::size_t length) { return {length, length}; }
  static DemoLengthPolicy uniform(std::size_t lo, std::size_t hi) {
    return {lo, hi};
  }
  bool is_fixed() const { return min_len == max_len; }
  std::size_t draw(Rng& rng) const;
  void validate() const;
  bool operator==(const DemoLengthPolicy&) const = default;
};

struct Demo {
  TokenSeq input;
  Token label = 0;
};

struct IclPrompt {
  std::vector<Demo> demos;
  Token delimiter = 0;
  TokenSeq test_input;
  int task_id = 0;

  /// [x_1, y_1, delim, ..., x_n, y_n, delim, x_test]
  TokenSeq flatten() const;
  /// Offset of x_test inside flatten().
  std::size_t test_offset() const;
  std::size_t size() const { return demos.size(); }
};

/// n i.i.d. demonstrations from `task_id`: inputs are sampled from the task's
/// start state, labels are the next emission renormalized over label_set.
IclPrompt build_prompt(const Hmm& hmm, int task_id, std::size_t n,
                       const DemoLengthPolicy& policy, std::uint64_t seed);

/// Like build_prompt, but demonstration inputs and their labels come from
/// `demo_task` while x_test is drawn from `test_task`.
IclPrompt build_prompt_mixed(const Hmm& hmm, int test_task, int demo_task,
                             std::size_t n, const DemoLengthPolicy& policy,
                             std::uint64_t seed);

/// One demonstration (input and label) drawn from `task`.
Demo sample_demo(const Hmm& hmm, int task, std::size_t length, Rng& rng);

}  // namespace icl
