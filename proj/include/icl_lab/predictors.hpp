#pragma once

#include <functional>
#include <string>
#include <vector>

#include "icl_lab/hmm.hpp"

namespace icl {

enum class PredictionMethod { Bayes, Kernel };

/// Domain over which Bayes scores are normalized.
enum class ScoreDomain { Labels, AllObservations };

inline constexpr double kTieTolerance = 1e-12;
inline constexpr double kDegenerateKernelMass = 1e-12;

struct PredictionOutcome {
  PredictionMethod method = PredictionMethod::Bayes;
  Vector label_scores;       // ordered as label_set
  Token argmax_label = 0;    // observation index
  int argmax_index = 0;      // position in label_set
  bool tie = false;
  std::vector<double> weights;  // kernel only
  Vector raw_scores;            // kernel only: (1/n) sum_i w_i e(y_i)
  std::size_t n = 0;

  /// method,n,argmax,tie,top1,top2,w_mean,w_min,w_max
  std::string record() const;
  static std::string record_header();
};

/// argmax_y P(y | [S_n, x_test], p_pretrain) from one scaled forward pass over
/// the flattened prompt. Error(ImpossiblePrompt) on zero probability.
PredictionOutcome bayes_predict(const Hmm& hmm, const IclPrompt& prompt,
                                ScoreDomain domain = ScoreDomain::Labels);

/// Maps a demonstration length to the matching regularized inverse moment.
using SigmaInverseProvider = std::function<const Matrix&(std::size_t)>;

/// Kernel-regression prediction with signed weights
/// w_i = <vec(T_test), Sigma^{-1}_{|x_i|} vec(T_{x_i})>.
PredictionOutcome kernel_predict(const Hmm& hmm, const IclPrompt& prompt,
                                 const SigmaInverseProvider& sigma_inverse);

/// Kernel prediction from precomputed weights; shared with ablations that
/// reuse weights across label perturbations.
PredictionOutcome kernel_from_weights(const Hmm& hmm,
                                      const std::vector<double>& weights,
                                      const std::vector<Token>& labels);

std::vector<double> kernel_weights(const Hmm& hmm, const IclPrompt& prompt,
                                   const SigmaInverseProvider& sigma_inverse);

/// P(s_test = s_theta | [S_n, x_test], p_pretrain) over tasks, where s_test is
/// the state emitting x_test's first token, renormalized over start states.
Vector task_posterior(const Hmm& hmm, const IclPrompt& prompt);

/// P(o | x1)^T P(o | x2) under the pre-training distribution.
double prediction_similarity(const Hmm& hmm, TokenSpan x1, TokenSpan x2);

/// Sets argmax / tie fields from label_scores.
void finalize_scores(const Hmm& hmm, PredictionOutcome& outcome);

}  // namespace icl
