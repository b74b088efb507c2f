#pragma once

// Depth-first enumeration of positive-probability sequences shared by the
// moment, recurrence and divergence computations.

#include <vector>

#include "icl_lab/hmm.hpp"

namespace icl::detail {

/// Visits every length-`length` sequence with positive probability under
/// `init`. `alpha` is the unnormalized forward row v^T T_seq (its sum is the
/// sequence probability). When `with_operator` is set, T_seq is tracked too.
template <class Visitor>
class SequenceWalker {
 public:
  SequenceWalker(const Hmm& hmm, const Vector& init, std::size_t length,
                 bool with_operator, Visitor& visit)
      : hmm_(hmm), length_(length), with_operator_(with_operator), visit_(visit) {
    const int m = hmm.num_obs();
    steps_.reserve(static_cast<std::size_t>(m));
    for (int o = 0; o < m; ++o) {
      steps_.push_back(hmm.emission().col(o).asDiagonal() * hmm.transition());
    }
    alphas_.assign(length + 1, Eigen::RowVectorXd());
    ops_.assign(with_operator ? length + 1 : 0, Matrix());
    alphas_[0] = init.transpose();
    if (with_operator) ops_[0] = Matrix::Identity(hmm.num_states(), hmm.num_states());
    seq_.assign(length, 0);
  }

  void run() {
    if (length_ == 0) {
      visit_(TokenSpan(seq_), 1.0, alphas_[0], with_operator_ ? ops_[0] : empty_);
      return;
    }
    descend(0);
  }

 private:
  void descend(std::size_t depth) {
    const int m = hmm_.num_obs();
    for (int o = 0; o < m; ++o) {
      // Prefix probability is v^T T_prefix 1 because the rows of T sum to 1.
      Eigen::RowVectorXd next = alphas_[depth].cwiseProduct(
          hmm_.emission().col(o).transpose());
      if (!(next.sum() > 0.0)) continue;
      next = next * hmm_.transition();
      alphas_[depth + 1] = std::move(next);
      if (with_operator_) ops_[depth + 1].noalias() = ops_[depth] * steps_[static_cast<std::size_t>(o)];
      seq_[depth] = o;
      if (depth + 1 == length_) {
        visit_(TokenSpan(seq_), alphas_[depth + 1].sum(), alphas_[depth + 1],
               with_operator_ ? ops_[depth + 1] : empty_);
      } else {
        descend(depth + 1);
      }
    }
  }

  const Hmm& hmm_;
  std::size_t length_;
  bool with_operator_;
  Visitor& visit_;
  std::vector<Matrix> steps_;
  std::vector<Eigen::RowVectorXd> alphas_;
  std::vector<Matrix> ops_;
  TokenSeq seq_;
  Matrix empty_;
};

template <class Visitor>
void walk_sequences(const Hmm& hmm, const Vector& init, std::size_t length,
                    bool with_operator, Visitor&& visit) {
  SequenceWalker<std::remove_reference_t<Visitor>> walker(hmm, init, length,
                                                          with_operator, visit);
  walker.run();
}

}  // namespace icl::detail
