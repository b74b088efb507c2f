#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <shared_mutex>
#include <string>
#include <vector>

#include "icl_lab/hmm.hpp"

namespace icl {

inline constexpr std::uint64_t kDefaultEnumerationCap = 1'000'000;

/// T_x = prod_i diag(p_{o_i}) T. The empty sequence maps to the identity.
Matrix operator_of(const Hmm& hmm, TokenSpan seq);

/// Column-stacking vec(): entry (r, c) lands at index c * rows + r.
Vector flatten(const Matrix& op);

/// Calls visit(seq, probability, operator) for every length-`length` sequence
/// with positive probability under `init`. Prefixes with zero probability are
/// pruned. Throws Error(EnumerationCap) when m^length exceeds `cap`.
using SequenceVisitor =
    std::function<void(TokenSpan seq, double probability, const Matrix& op)>;
void enumerate_sequences(const Hmm& hmm, const Vector& init,
                         std::size_t length, std::uint64_t cap,
                         const SequenceVisitor& visit);

/// m^length saturated at UINT64_MAX.
std::uint64_t count_sequences(int num_obs, std::size_t length);

struct MomentEstimator {
  enum class Kind { Exact, MonteCarlo };
  Kind kind = Kind::Exact;
  std::size_t samples = 0;
  std::uint64_t seed = 0;

  static MomentEstimator exact() { return {}; }
  static MomentEstimator monte_carlo(std::size_t n, std::uint64_t seed) {
    return {Kind::MonteCarlo, n, seed};
  }
  bool operator==(const MomentEstimator&) const = default;
};

/// Uncentered second moment E[vec(T_x) vec(T_x)^T] over length-l sequences
/// drawn from `init`.
struct MomentMatrix {
  Matrix sigma;
  std::string init_label;
  std::size_t length = 0;
  MomentEstimator estimator;
  double ridge = 0.0;
};

MomentMatrix moment_matrix(const Hmm& hmm, const Vector& init,
                           std::string init_label, std::size_t length,
                           const MomentEstimator& estimator,
                           std::uint64_t cap = kDefaultEnumerationCap);

/// Ridge strength either absolute or relative to trace(sigma) / dim^2.
struct Ridge {
  double value = 1e-6;
  bool relative = true;

  double absolute(const Matrix& sigma) const;
  bool operator==(const Ridge&) const = default;
};

/// Largest condition number accepted for an unregularized inverse.
inline constexpr double kMaxConditionNumber = 1e12;

/// (sigma + lambda I)^{-1}, exactly symmetric. lambda == 0 requires a
/// numerically nonsingular sigma, otherwise Error(Singular).
Matrix ridge_inverse(const Matrix& sigma, double lambda);
Matrix ridge_inverse(const MomentMatrix& moment, double lambda);

/// max |eigenvalue| of a symmetric matrix. Error(Validation) if M is not
/// symmetric within 1e-8 (relative to its largest entry).
double spectral_radius_sym(const Matrix& m);

enum class EtaMode { Exact, Upper };

/// Bound on ||T_seq||_F over sequences of length 1..l_max.
double eta_bound(const Hmm& hmm, std::size_t l_max, EtaMode mode,
                 std::uint64_t cap = kDefaultEnumerationCap);

struct EpsilonTheta {
  double value = 0.0;
  std::size_t best_length = 0;
  std::vector<std::size_t> grid;
  std::vector<double> per_length;
};

/// min over l in grid of rho(inv(Sigma_pretrain,l) - inv(Sigma_task,l)),
/// with exact moments and one absolute ridge derived from Sigma_pretrain.
EpsilonTheta epsilon_theta(const Hmm& hmm, int task,
                           const std::vector<std::size_t>& l_grid,
                           const Ridge& ridge,
                           std::uint64_t cap = kDefaultEnumerationCap);

/// Same quantity between two arbitrary initial distributions.
EpsilonTheta epsilon_theta_between(const Hmm& hmm, const Vector& reference,
                                   const Vector& other,
                                   const std::vector<std::size_t>& l_grid,
                                   const Ridge& ridge, std::uint64_t cap);

/// Per-length cache of regularized inverse moment matrices. Reads may run
/// concurrently; a miss computes outside the lock and inserts exclusively.
class SigmaInverseCache {
 public:
  SigmaInverseCache(const Hmm& hmm, Vector init, std::string init_label,
                    MomentEstimator estimator, Ridge ridge,
                    std::uint64_t cap = kDefaultEnumerationCap);

  const Matrix& inverse(std::size_t length) const;
  const MomentMatrix& moment(std::size_t length) const;

 private:
  struct Entry {
    MomentMatrix moment;
    Matrix inverse;
  };
  const Entry& entry(std::size_t length) const;

  const Hmm* hmm_;
  Vector init_;
  std::string init_label_;
  MomentEstimator estimator_;
  Ridge ridge_;
  std::uint64_t cap_;
  mutable std::shared_mutex mutex_;
  mutable std::map<std::size_t, std::unique_ptr<Entry>> entries_;
};

}  // namespace icl
