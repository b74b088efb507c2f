#include "icl_lab/operators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "enumerate.hpp"
#include "icl_lab/errors.hpp"
#include "icl_lab/rng.hpp"

namespace icl {
namespace {

void require_cap(int num_obs, std::size_t length, std::uint64_t cap,
                 const std::string& what) {
  const std::uint64_t count = count_sequences(num_obs, length);
  if (count > cap) {
    fail(ErrorKind::EnumerationCap,
         what + ": exact enumeration of m^l = " + std::to_string(num_obs) + "^" +
             std::to_string(length) + " sequences exceeds the cap of " +
             std::to_string(cap) + "; use the Monte-Carlo estimator instead");
  }
}

// Adds weight * f f^T to the upper triangle of `acc`, touching only the
// nonzero entries of f.
void accumulate_outer(Matrix& acc, const Vector& f, double weight,
                      std::vector<Eigen::Index>& nz) {
  nz.clear();
  for (Eigen::Index i = 0; i < f.size(); ++i) {
    if (f(i) != 0.0) nz.push_back(i);
  }
  for (std::size_t a = 0; a < nz.size(); ++a) {
    const double wa = weight * f(nz[a]);
    for (std::size_t b = a; b < nz.size(); ++b) acc(nz[a], nz[b]) += wa * f(nz[b]);
  }
}

Matrix symmetrize_upper(const Matrix& upper) {
  Matrix full = upper.triangularView<Eigen::Upper>();
  full.triangularView<Eigen::StrictlyLower>() = upper.transpose().triangularView<Eigen::StrictlyLower>();
  return full;
}

}  // namespace

std::uint64_t count_sequences(int num_obs, std::size_t length) {
  std::uint64_t count = 1;
  const auto m = static_cast<std::uint64_t>(num_obs);
  for (std::size_t i = 0; i < length; ++i) {
    if (m != 0 && count > std::numeric_limits<std::uint64_t>::max() / m) {
      return std::numeric_limits<std::uint64_t>::max();
    }
    count *= m;
  }
  return count;
}

Matrix operator_of(const Hmm& hmm, TokenSpan seq) {
  validate_sequence(hmm, seq);
  const int d = hmm.num_states();
  Matrix op = Matrix::Identity(d, d);
  for (Token o : seq) {
    op = op * (hmm.emission().col(o).asDiagonal() * hmm.transition());
  }
  return op;
}

Vector flatten(const Matrix& op) {
  return Eigen::Map<const Vector>(op.data(), op.size());
}

void enumerate_sequences(const Hmm& hmm, const Vector& init, std::size_t length,
                         std::uint64_t cap, const SequenceVisitor& visit) {
  validate_distribution(init, hmm.num_states(), "init");
  require_cap(hmm.num_obs(), length, cap, "enumerate_sequences");
  detail::walk_sequences(hmm, init, length, true,
                         [&](TokenSpan seq, double p, const Eigen::RowVectorXd&,
                             const Matrix& op) { visit(seq, p, op); });
}

MomentMatrix moment_matrix(const Hmm& hmm, const Vector& init,
                           std::string init_label, std::size_t length,
                           const MomentEstimator& estimator, std::uint64_t cap) {
  validate_distribution(init, hmm.num_states(), "init");
  if (length == 0) fail(ErrorKind::Validation, "moment_matrix: length must be positive");
  const Eigen::Index dim = static_cast<Eigen::Index>(hmm.num_states()) * hmm.num_states();
  Matrix acc = Matrix::Zero(dim, dim);
  std::vector<Eigen::Index> nz;
  nz.reserve(static_cast<std::size_t>(dim));

  if (estimator.kind == MomentEstimator::Kind::Exact) {
    require_cap(hmm.num_obs(), length, cap, "moment_matrix");
    detail::walk_sequences(hmm, init, length, true,
                           [&](TokenSpan, double p, const Eigen::RowVectorXd&,
                               const Matrix& op) {
                             accumulate_outer(acc, flatten(op), p, nz);
                           });
  } else {
    if (estimator.samples == 0) {
      fail(ErrorKind::Validation, "moment_matrix: Monte-Carlo mode needs N >= 1");
    }
    Rng rng(estimator.seed);
    const double w = 1.0 / static_cast<double>(estimator.samples);
    for (std::size_t i = 0; i < estimator.samples; ++i) {
      const TokenSeq seq = sample_sequence(hmm, init, length, rng);
      accumulate_outer(acc, flatten(operator_of(hmm, seq)), w, nz);
    }
  }
  MomentMatrix out;
  out.sigma = symmetrize_upper(acc);
  out.init_label = std::move(init_label);
  out.length = length;
  out.estimator = estimator;
  return out;
}

double Ridge::absolute(const Matrix& sigma) const {
  if (!(value >= 0.0)) fail(ErrorKind::Validation, "ridge must be nonnegative");
  if (!relative) return value;
  const double n = static_cast<double>(sigma.rows());
  return value * sigma.trace() / (n * n);
}

Matrix ridge_inverse(const Matrix& sigma, double lambda) {
  if (sigma.rows() != sigma.cols() || sigma.rows() == 0) {
    fail(ErrorKind::Validation, "ridge_inverse: matrix must be square and nonempty");
  }
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    fail(ErrorKind::Validation, "ridge_inverse: lambda must be finite and >= 0");
  }
  const Matrix sym = 0.5 * (sigma + sigma.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
  if (eig.info() != Eigen::Success) {
    fail(ErrorKind::Singular, "ridge_inverse: eigendecomposition failed");
  }
  const Vector shifted = eig.eigenvalues().array() + lambda;
  const double smallest = eig.eigenvalues().minCoeff();
  const double largest = shifted.cwiseAbs().maxCoeff();
  const bool singular = lambda == 0.0
                            ? !(smallest > largest / kMaxConditionNumber)
                            : !(shifted.minCoeff() > 0.0);
  if (singular) {
    std::ostringstream msg;
    msg.precision(17);
    msg << "ridge_inverse: matrix is singular (smallest eigenvalue " << smallest
        << ", lambda " << lambda << ")";
    fail(ErrorKind::Singular, msg.str());
  }
  const Matrix& v = eig.eigenvectors();
  Matrix inv = v * shifted.cwiseInverse().asDiagonal() * v.transpose();
  return 0.5 * (inv + inv.transpose());
}

Matrix ridge_inverse(const MomentMatrix& moment, double lambda) {
  return ridge_inverse(moment.sigma, lambda);
}

double spectral_radius_sym(const Matrix& m) {
  if (m.rows() != m.cols() || m.rows() == 0) {
    fail(ErrorKind::Validation, "spectral_radius_sym: matrix must be square and nonempty");
  }
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-8 * scale) {
    fail(ErrorKind::Validation, "spectral_radius_sym: matrix is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (m + m.transpose()),
                                            Eigen::EigenvaluesOnly);
  if (eig.info() != Eigen::Success) {
    fail(ErrorKind::Validation, "spectral_radius_sym: eigenvalue iteration failed");
  }
  return eig.eigenvalues().cwiseAbs().maxCoeff();
}

namespace {

class EtaSearch {
 public:
  EtaSearch(const Hmm& hmm, std::size_t l_max) : hmm_(hmm), l_max_(l_max) {
    for (int o = 0; o < hmm.num_obs(); ++o) {
      steps_.push_back(hmm.emission().col(o).asDiagonal() * hmm.transition());
      Eigen::JacobiSVD<Matrix> svd(steps_.back());
      growth_ = std::max(growth_, svd.singularValues()(0));
    }
  }

  double run() {
    const int d = hmm_.num_states();
    descend(Matrix::Identity(d, d), 0);
    return best_;
  }

 private:
  // ||P S_1 ... S_j||_F <= ||P||_F * growth^j for every extension.
  double extension_bound(double norm, std::size_t depth) const {
    const std::size_t left = l_max_ - depth;
    if (left == 0) return 0.0;
    const double g = growth_ <= 1.0 ? growth_ : std::pow(growth_, static_cast<double>(left));
    return norm * g;
  }

  void descend(const Matrix& prefix, std::size_t depth) {
    for (const Matrix& step : steps_) {
      Matrix next = prefix * step;
      const double norm = next.norm();
      if (norm == 0.0) continue;
      best_ = std::max(best_, norm);
      if (depth + 1 < l_max_ && extension_bound(norm, depth + 1) > best_) {
        descend(next, depth + 1);
      }
    }
  }

  const Hmm& hmm_;
  std::size_t l_max_;
  std::vector<Matrix> steps_;
  double growth_ = 0.0;
  double best_ = 0.0;
};

}  // namespace

double eta_bound(const Hmm& hmm, std::size_t l_max, EtaMode mode, std::uint64_t cap) {
  if (l_max == 0) fail(ErrorKind::Validation, "eta_bound: l_max must be positive");
  if (mode == EtaMode::Upper) {
    double base = 0.0;
    for (int o = 0; o < hmm.num_obs(); ++o) {
      base = std::max(base, (hmm.emission().col(o).asDiagonal() * hmm.transition()).norm());
    }
    return base <= 1.0 ? base : std::pow(base, static_cast<double>(l_max));
  }
  require_cap(hmm.num_obs(), l_max, cap, "eta_bound");
  return EtaSearch(hmm, l_max).run();
}

EpsilonTheta epsilon_theta_between(const Hmm& hmm, const Vector& reference,
                                   const Vector& other,
                                   const std::vector<std::size_t>& l_grid,
                                   const Ridge& ridge, std::uint64_t cap) {
  if (l_grid.empty()) fail(ErrorKind::Validation, "epsilon_theta: l_grid is empty");
  EpsilonTheta out;
  out.grid = l_grid;
  out.value = std::numeric_limits<double>::infinity();
  for (std::size_t l : l_grid) {
    const MomentMatrix ref = moment_matrix(hmm, reference, "reference", l,
                                           MomentEstimator::exact(), cap);
    const MomentMatrix oth = moment_matrix(hmm, other, "other", l,
                                           MomentEstimator::exact(), cap);
    const double lambda = ridge.absolute(ref.sigma);
    const Matrix diff = ridge_inverse(ref.sigma, lambda) - ridge_inverse(oth.sigma, lambda);
    const double rho = spectral_radius_sym(0.5 * (diff + diff.transpose()));
    out.per_length.push_back(rho);
    if (rho < out.value || (rho == out.value && l < out.best_length)) {
      out.value = rho;
      out.best_length = l;
    }
  }
  return out;
}

EpsilonTheta epsilon_theta(const Hmm& hmm, int task,
                           const std::vector<std::size_t>& l_grid,
                           const Ridge& ridge, std::uint64_t cap) {
  return epsilon_theta_between(hmm, hmm.pretrain_init(), hmm.task_init(task), l_grid,
                               ridge, cap);
}

SigmaInverseCache::SigmaInverseCache(const Hmm& hmm, Vector init, std::string init_label,
                                     MomentEstimator estimator, Ridge ridge,
                                     std::uint64_t cap)
    : hmm_(&hmm),
      init_(std::move(init)),
      init_label_(std::move(init_label)),
      estimator_(estimator),
      ridge_(ridge),
      cap_(cap) {
  validate_distribution(init_, hmm.num_states(), "init");
}

const SigmaInverseCache::Entry& SigmaInverseCache::entry(std::size_t length) const {
  {
    std::shared_lock lock(mutex_);
    if (auto it = entries_.find(length); it != entries_.end()) return *it->second;
  }
  auto fresh = std::make_unique<Entry>();
  MomentEstimator est = estimator_;
  if (est.kind == MomentEstimator::Kind::MonteCarlo) est.seed = derive_seed(est.seed, {length});
  fresh->moment = moment_matrix(*hmm_, init_, init_label_, length, est, cap_);
  fresh->moment.ridge = ridge_.absolute(fresh->moment.sigma);
  fresh->inverse = ridge_inverse(fresh->moment.sigma, fresh->moment.ridge);
  std::unique_lock lock(mutex_);
  auto [it, inserted] = entries_.emplace(length, std::move(fresh));
  return *it->second;
}

const Matrix& SigmaInverseCache::inverse(std::size_t length) const {
  return entry(length).inverse;
}

const MomentMatrix& SigmaInverseCache::moment(std::size_t length) const {
  return entry(length).moment;
}

}  // namespace icl
