#include <doctest.h>

#include <cmath>

#include "fixtures.hpp"
#include "icl_lab/errors.hpp"
#include "icl_lab/operators.hpp"
#include "icl_lab/rng.hpp"
#include "oracles.hpp"

using namespace icl;
using fixture::rows;
using fixture::vec;

namespace {

Matrix random_symmetric(int n, std::uint64_t seed) {
  Rng rng(seed);
  Matrix a(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) a(i, j) = 2.0 * rng.uniform() - 1.0;
  }
  return 0.5 * (a + a.transpose());
}

Matrix random_psd(int n, std::uint64_t seed) {
  const Matrix a = random_symmetric(n, seed);
  return a * a.transpose() / n;
}

double max_abs(const Matrix& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace

TEST_CASE("empty operator is the identity and vec stacks columns") {
  const Hmm hmm = fixture::random_model(3, 4, 1, 1);
  CHECK(operator_of(hmm, TokenSeq{}) == Matrix::Identity(3, 3));
  const Matrix m = rows({{1, 2}, {3, 4}});
  CHECK(flatten(m) == vec({1, 3, 2, 4}));
}

TEST_CASE("operators compose by concatenation") {
  Rng rng(5);
  for (int k = 0; k < 40; ++k) {
    const Hmm hmm = random_hmm(1 + static_cast<int>(rng.below(5)), 2 + static_cast<int>(rng.below(5)), 1, rng);
    TokenSeq u, v;
    for (std::size_t i = rng.below(6); i > 0; --i) u.push_back(static_cast<Token>(rng.below(static_cast<std::size_t>(hmm.num_obs()))));
    for (std::size_t i = rng.below(6); i > 0; --i) v.push_back(static_cast<Token>(rng.below(static_cast<std::size_t>(hmm.num_obs()))));
    TokenSeq uv = u;
    uv.insert(uv.end(), v.begin(), v.end());
    CHECK(max_abs(operator_of(hmm, uv) - operator_of(hmm, u) * operator_of(hmm, v)) <= 1e-12);
    CHECK(max_abs(operator_of(hmm, uv) - oracle::operator_product(hmm, uv)) <= 1e-12);
  }
}

TEST_CASE("likelihood reassembles from the prefix operator") {
  Rng rng(6);
  for (int k = 0; k < 30; ++k) {
    const Hmm hmm = random_hmm(1 + static_cast<int>(rng.below(6)), 2 + static_cast<int>(rng.below(6)), 1, rng);
    const TokenSeq s = sample_sequence(hmm, hmm.pretrain_init(), 1 + rng.below(8), rng);
    const TokenSpan prefix(s.data(), s.size() - 1);
    const Vector last = hmm.emission().col(s.back());
    const double assembled = hmm.pretrain_init().transpose() * operator_of(hmm, prefix) * last;
    CHECK(assembled == doctest::Approx(forward_likelihood(hmm, hmm.pretrain_init(), s)).epsilon(1e-12));
    CHECK(assembled == doctest::Approx(operator_likelihood(hmm, hmm.pretrain_init(), s)).epsilon(1e-12));
  }
}

TEST_CASE("sequence enumeration and its cap") {
  const Hmm hmm = fixture::random_model(2, 3, 1, 9);
  double mass = 0.0;
  std::size_t visits = 0;
  enumerate_sequences(hmm, hmm.pretrain_init(), 4, 1000, [&](TokenSpan seq, double p, const Matrix& op) {
    CHECK(p > 0.0);
    CHECK(max_abs(op - oracle::operator_product(hmm, TokenSeq(seq.begin(), seq.end()))) < 1e-14);
    mass += p;
    ++visits;
  });
  CHECK(visits <= 81);
  CHECK(mass == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(count_sequences(3, 4) == 81);
  CHECK(count_sequences(10, 40) == UINT64_MAX);
  CHECK_THROWS_AS(enumerate_sequences(hmm, hmm.pretrain_init(), 4, 80, [](TokenSpan, double, const Matrix&) {}),
                  Error);
}

TEST_CASE("moment of a deterministic chain is rank one") {
  const Hmm det = fixture::make(rows({{0.0, 1.0}, {1.0, 0.0}}), rows({{0.0, 1.0, 0.0}, {0.0, 0.0, 1.0}}),
                                {0}, vec({1.0, 0.0}), 0, {2});
  const MomentMatrix mm = moment_matrix(det, det.task_init(0), "task0", 3, MomentEstimator::exact());
  const Vector v = flatten(operator_of(det, TokenSeq{1, 2, 1}));
  CHECK(max_abs(mm.sigma - v * v.transpose()) < 1e-15);
  Eigen::FullPivLU<Matrix> lu(mm.sigma);
  CHECK(lu.rank() == 1);
}

TEST_CASE("scalar moment for one state and two symbols") {
  const double a = 0.3;
  const double b = 0.7;
  const Hmm hmm = fixture::make(rows({{1.0}}), rows({{a, b}}), {0}, vec({1.0}), 0, {1});
  const MomentMatrix mm = moment_matrix(hmm, hmm.task_init(0), "task0", 2, MomentEstimator::exact());
  // sum over {aa, ab, ba, bb} of P(x) * (p_x0 p_x1)^2
  const double hand = a * a * std::pow(a * a, 2) + 2 * a * b * std::pow(a * b, 2) + b * b * std::pow(b * b, 2);
  REQUIRE(mm.sigma.rows() == 1);
  CHECK(mm.sigma(0, 0) == doctest::Approx(hand).epsilon(1e-14));
}

TEST_CASE("exact moment matches brute-force enumeration") {
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    const Hmm hmm = fixture::random_model(2 + static_cast<int>(seed % 2), 3, 2, seed);
    const MomentMatrix mm = moment_matrix(hmm, hmm.pretrain_init(), "pretrain", 4, MomentEstimator::exact());
    CHECK(max_abs(mm.sigma - oracle::brute_moment(hmm, hmm.pretrain_init(), 4)) < 1e-14);
  }
}

TEST_CASE("Monte-Carlo moment lies within three standard errors of the exact value") {
  for (int d : {2, 3}) {
    const Hmm hmm = fixture::random_model(d, 3, 1, 40 + static_cast<std::uint64_t>(d));
    const std::size_t len = 3;
    const std::size_t n = 100000;
    const Vector init = hmm.pretrain_init();
    const Eigen::Index dim = d * d;
    Matrix mean = Matrix::Zero(dim, dim);
    Matrix second = Matrix::Zero(dim, dim);
    oracle::for_each_sequence(hmm.num_obs(), len, [&](const TokenSeq& s) {
      const double p = oracle::path_likelihood(hmm, init, s);
      const Vector v = oracle::column_stack(oracle::operator_product(hmm, s));
      const Matrix outer = v * v.transpose();
      mean += p * outer;
      second += p * outer.cwiseProduct(outer);
    });
    const Matrix se = ((second - mean.cwiseProduct(mean)).cwiseMax(0.0) / static_cast<double>(n)).cwiseSqrt();
    const MomentMatrix mc = moment_matrix(hmm, init, "pretrain", len, MomentEstimator::monte_carlo(n, 77));
    for (Eigen::Index i = 0; i < dim; ++i) {
      for (Eigen::Index j = 0; j < dim; ++j) {
        CHECK(std::abs(mc.sigma(i, j) - mean(i, j)) <= 3.0 * se(i, j) + 1e-13);
      }
    }
  }
}

TEST_CASE("ridge inverse") {
  CHECK(max_abs(ridge_inverse(Matrix::Identity(5, 5), 0.0) - Matrix::Identity(5, 5)) < 1e-15);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Matrix s = random_psd(9, seed);
    const Matrix inv = ridge_inverse(s, 1e-3);
    const Matrix shifted = s + 1e-3 * Matrix::Identity(9, 9);
    CHECK(max_abs(inv * shifted - Matrix::Identity(9, 9)) < 1e-8);
    CHECK(max_abs(inv - inv.transpose()) == 0.0);
    CHECK(max_abs(inv - oracle::gauss_inverse(shifted)) < 1e-9);
  }
  Matrix singular = Matrix::Zero(3, 3);
  singular(0, 0) = 1.0;
  try {
    ridge_inverse(singular, 0.0);
    FAIL("singular matrix accepted");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Singular);
  }
  CHECK_NOTHROW(ridge_inverse(singular, 1e-6));
}

TEST_CASE("relative ridge scales with the mean diagonal") {
  const Matrix s = 2.0 * Matrix::Identity(4, 4);
  CHECK(Ridge{0.5, true}.absolute(s) == doctest::Approx(0.5 * 8.0 / 16.0));
  CHECK(Ridge{0.5, false}.absolute(s) == 0.5);
}

TEST_CASE("spectral radius of symmetric matrices") {
  Matrix diag = Matrix::Zero(3, 3);
  diag.diagonal() = vec({0.5, -4.0, 2.0});
  CHECK(spectral_radius_sym(diag) == doctest::Approx(4.0));
  CHECK(spectral_radius_sym(Matrix::Identity(6, 6)) == doctest::Approx(1.0));
  for (std::uint64_t seed = 10; seed < 15; ++seed) {
    const Matrix a = random_symmetric(16, seed);
    CHECK(std::abs(spectral_radius_sym(a) - oracle::jacobi_spectral_radius(a)) < 1e-8);
  }
  CHECK_THROWS_AS(spectral_radius_sym(rows({{1, 2}, {0, 1}})), Error);
}

TEST_CASE("eta bound") {
  const Hmm single = fixture::make(rows({{1.0}}), rows({{0.2, 0.5, 0.3}}), {0}, vec({1.0}), 0, {2});
  CHECK(eta_bound(single, 4, EtaMode::Exact) == doctest::Approx(0.5));

  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    const int d = 1 + static_cast<int>(seed % 3);
    const int m = 2 + static_cast<int>(seed % 3);
    const Hmm hmm = fixture::random_model(d, m, 1, seed);
    double prev = 0.0;
    for (std::size_t l = 1; l <= 5; ++l) {
      double brute = 0.0;
      for (std::size_t len = 1; len <= l; ++len) {
        oracle::for_each_sequence(m, len, [&](const TokenSeq& s) {
          brute = std::max(brute, oracle::operator_product(hmm, s).norm());
        });
      }
      const double exact = eta_bound(hmm, l, EtaMode::Exact);
      CHECK(exact == doctest::Approx(brute).epsilon(1e-12));
      CHECK(exact >= prev);
      CHECK(eta_bound(hmm, l, EtaMode::Upper) >= exact - 1e-12);
      prev = exact;
    }
  }
}

TEST_CASE("task deviation vanishes for a single task and ignores grid order") {
  const Hmm single = fixture::random_model(3, 3, 1, 3);
  CHECK(epsilon_theta(single, 0, {2, 3}, Ridge{}).value < 1e-9);

  const Hmm hmm = fixture::random_model(3, 3, 2, 4);
  const EpsilonTheta a = epsilon_theta(hmm, 1, {2, 3, 4}, Ridge{});
  const EpsilonTheta b = epsilon_theta(hmm, 1, {4, 2, 3}, Ridge{});
  CHECK(a.value == b.value);
  CHECK(a.best_length == b.best_length);
}

TEST_CASE("task deviation matches an independent pipeline") {
  const Hmm hmm = fixture::random_model(2, 3, 2, 12);
  const Ridge ridge{1e-4, true};
  for (int task = 0; task < 2; ++task) {
    double want = std::numeric_limits<double>::infinity();
    for (std::size_t l : {2u, 3u}) {
      const Matrix pre = oracle::brute_moment(hmm, hmm.pretrain_init(), l);
      const Matrix own = oracle::brute_moment(hmm, hmm.task_init(task), l);
      const double lambda = ridge.value * pre.trace() / static_cast<double>(pre.rows() * pre.rows());
      const Matrix id = Matrix::Identity(pre.rows(), pre.rows());
      const Matrix diff = oracle::gauss_inverse(pre + lambda * id) - oracle::gauss_inverse(own + lambda * id);
      want = std::min(want, oracle::jacobi_spectral_radius(0.5 * (diff + diff.transpose())));
    }
    const double got = epsilon_theta(hmm, task, {2, 3}, ridge).value;
    CHECK(got == doctest::Approx(want).epsilon(1e-6));
  }
}

TEST_CASE("inverse cache reproduces a direct computation") {
  const Hmm hmm = fixture::random_model(3, 4, 2, 2);
  const SigmaInverseCache cache(hmm, hmm.pretrain_init(), "pretrain", MomentEstimator::exact(), Ridge{});
  const MomentMatrix mm = moment_matrix(hmm, hmm.pretrain_init(), "pretrain", 3, MomentEstimator::exact());
  const Matrix direct = ridge_inverse(mm.sigma, Ridge{}.absolute(mm.sigma));
  CHECK(max_abs(cache.inverse(3) - direct) == 0.0);
  CHECK(&cache.inverse(3) == &cache.inverse(3));
  CHECK(cache.moment(3).ridge == Ridge{}.absolute(mm.sigma));
}
