#include <doctest.h>

#include <cmath>
#include <numeric>

#include "fixtures.hpp"
#include "icl_lab/errors.hpp"
#include "icl_lab/hmm.hpp"
#include "icl_lab/rng.hpp"
#include "oracles.hpp"

using namespace icl;
using fixture::rows;
using fixture::vec;

namespace {

Hmm two_state() {
  return fixture::make(rows({{0.9, 0.1}, {0.3, 0.7}}),
                       rows({{0.6, 0.3, 0.1}, {0.1, 0.3, 0.6}}), {0, 1}, vec({0.5, 0.5}), 0, {2});
}

void expect_kind(ErrorKind kind, const std::function<void()>& f) {
  try {
    f();
    FAIL("no error thrown");
  } catch (const Error& e) {
    CHECK(e.kind() == kind);
  }
}

}  // namespace

TEST_CASE("model construction rejects broken invariants") {
  const Matrix t = rows({{0.5, 0.5}, {0.5, 0.5}});
  const Matrix b = rows({{0.5, 0.5, 0.0}, {0.2, 0.3, 0.5}});
  expect_kind(ErrorKind::Validation, [&] {
    fixture::make(rows({{0.5, 0.6}, {0.5, 0.5}}), b, {0}, vec({1, 0}), 0, {2});
  });
  expect_kind(ErrorKind::Validation, [&] {
    fixture::make(t, rows({{0.5, 0.4, 0.0}, {0.2, 0.3, 0.5}}), {0}, vec({1, 0}), 0, {2});
  });
  expect_kind(ErrorKind::Validation, [&] { fixture::make(t, b, {0}, vec({0.5, 0.5}), 0, {2}); });
  expect_kind(ErrorKind::Validation, [&] { fixture::make(t, b, {0, 0}, vec({1, 0}), 0, {2}); });
  expect_kind(ErrorKind::Validation, [&] { fixture::make(t, b, {0}, vec({1, 0}), 0, {0}); });
  expect_kind(ErrorKind::Validation, [&] { fixture::make(t, b, {0}, vec({1, 0}), 0, {}); });
  expect_kind(ErrorKind::Validation, [&] { fixture::make(t, b, {0}, vec({1, 0}), 3, {2}); });
  CHECK_NOTHROW(fixture::make(t, b, {0}, vec({1, 0}), 0, {2}));
}

TEST_CASE("sampling a one-state chain repeats its only token") {
  const Hmm hmm = fixture::make(rows({{1.0}}), rows({{0.0, 1.0, 0.0}}), {0}, vec({1.0}), 0, {2});
  CHECK(sample_sequence(hmm, hmm.task_init(0), 3, 5u) == TokenSeq{1, 1, 1});
}

TEST_CASE("sampling is a pure function of the seed") {
  const Hmm hmm = fixture::random_model(5, 6, 2, 3);
  const TokenSeq a = sample_sequence(hmm, hmm.pretrain_init(), 50, 99u);
  CHECK(a == sample_sequence(hmm, hmm.pretrain_init(), 50, 99u));
  CHECK(a != sample_sequence(hmm, hmm.pretrain_init(), 50, 100u));
}

TEST_CASE("long-run token frequencies match the stationary emission mixture") {
  const Hmm hmm = two_state();
  const Vector pi = oracle::stationary(hmm.transition());
  const Vector expected = hmm.emission().transpose() * pi;
  const TokenSeq seq = sample_sequence(hmm, pi, 100000, 17u);
  Vector freq = Vector::Zero(3);
  for (Token o : seq) freq(o) += 1.0;
  freq /= static_cast<double>(seq.size());
  for (int o = 0; o < 3; ++o) CHECK(std::abs(freq(o) - expected(o)) < 0.01);

  // chi-squared goodness of fit on the first-token marginal over independent draws
  Vector counts = Vector::Zero(3);
  Rng rng(4);
  const int draws = 20000;
  for (int i = 0; i < draws; ++i) counts(sample_sequence(hmm, pi, 1, rng)[0]) += 1.0;
  double chi2 = 0.0;
  for (int o = 0; o < 3; ++o) {
    const double e = draws * expected(o);
    chi2 += (counts(o) - e) * (counts(o) - e) / e;
  }
  CHECK(chi2 < 13.8);  // 99.9% quantile, 2 degrees of freedom
}

TEST_CASE("forward likelihood edge cases") {
  const Hmm det = fixture::make(rows({{0.0, 1.0}, {1.0, 0.0}}), rows({{0.0, 1.0, 0.0}, {0.0, 0.0, 1.0}}),
                                {0}, vec({1.0, 0.0}), 0, {2});
  CHECK(forward_likelihood(det, det.task_init(0), TokenSeq{1, 2, 1, 2}) == 1.0);
  CHECK(forward_likelihood(det, det.task_init(0), TokenSeq{1, 0}) == 0.0);
  CHECK(std::isinf(forward_log_likelihood(det, det.task_init(0), TokenSeq{1, 0})));
  CHECK(forward_likelihood(det, det.task_init(0), TokenSeq{}) == 1.0);
  expect_kind(ErrorKind::Validation, [&] { forward_likelihood(det, det.task_init(0), TokenSeq{3}); });
}

TEST_CASE("forward likelihood matches hidden-path enumeration and sums to one") {
  for (std::uint64_t seed = 1; seed <= 12; ++seed) {
    const int d = 1 + static_cast<int>(seed % 4);
    const int m = 2 + static_cast<int>(seed % 4);
    const std::size_t len = 1 + seed % 5;
    const Hmm hmm = fixture::random_model(d, m, 1, seed);
    const Vector init = hmm.pretrain_init();
    double total = 0.0;
    oracle::for_each_sequence(m, len, [&](const TokenSeq& s) {
      const double p = forward_likelihood(hmm, init, s);
      CHECK(p == doctest::Approx(oracle::path_likelihood(hmm, init, s)).epsilon(1e-12));
      total += p;
    });
    CHECK(std::abs(total - 1.0) <= 1e-10);
  }
}

TEST_CASE("operator likelihood closed forms") {
  const Hmm hmm = two_state();
  const Vector init = vec({0.3, 0.7});
  const double expect1 = 0.3 * hmm.emission()(0, 1) + 0.7 * hmm.emission()(1, 1);
  CHECK(operator_likelihood(hmm, init, TokenSeq{1}) == doctest::Approx(expect1).epsilon(1e-15));

  const Hmm single = fixture::make(rows({{1.0}}), rows({{0.2, 0.5, 0.3}}), {0}, vec({1.0}), 0, {2});
  CHECK(operator_likelihood(single, single.task_init(0), TokenSeq{1, 2, 1, 0}) ==
        doctest::Approx(0.5 * 0.3 * 0.5 * 0.2).epsilon(1e-15));
  CHECK(operator_likelihood(single, single.task_init(0), TokenSeq{}) == 1.0);
}

TEST_CASE("operator and forward likelihoods agree on random models") {
  Rng rng(2024);
  for (int k = 0; k < 60; ++k) {
    const int d = 1 + static_cast<int>(rng.below(8));
    const int m = 2 + static_cast<int>(rng.below(9));
    const Hmm hmm = random_hmm(d, m, 1 + static_cast<int>(rng.below(static_cast<std::size_t>(d))), rng);
    const std::size_t len = 1 + rng.below(12);
    const TokenSeq s = sample_sequence(hmm, hmm.pretrain_init(), len, rng);
    const double f = forward_likelihood(hmm, hmm.pretrain_init(), s);
    const double o = operator_likelihood(hmm, hmm.pretrain_init(), s);
    CHECK(std::abs(o - f) <= 1e-10 * std::max(f, 1e-300));
    CHECK(operator_log_likelihood(hmm, hmm.pretrain_init(), s) ==
          doctest::Approx(forward_log_likelihood(hmm, hmm.pretrain_init(), s)).epsilon(1e-12));
  }
}

TEST_CASE("next-state and label distributions follow path enumeration") {
  const Hmm hmm = fixture::random_model(3, 4, 2, 8);
  const TokenSeq s = sample_sequence(hmm, hmm.pretrain_init(), 4, 21u);
  const Vector got = next_state_distribution(hmm, hmm.pretrain_init(), s);
  const Vector want = oracle::next_state_posterior(hmm, hmm.pretrain_init(), s);
  CHECK((got - want).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(label_distribution(hmm, hmm.pretrain_init(), s).sum() == doctest::Approx(1.0));

  const Hmm det = fixture::make(rows({{1.0}}), rows({{0.5, 0.5, 0.0}}), {0}, vec({1.0}), 0, {2});
  expect_kind(ErrorKind::Unlabelable, [&] { label_distribution(det, det.task_init(0), TokenSeq{1}); });
  expect_kind(ErrorKind::ImpossiblePrompt,
              [&] { next_state_distribution(det, det.task_init(0), TokenSeq{2}); });
}

TEST_CASE("prompt flattening order") {
  IclPrompt p;
  p.delimiter = 0;
  p.test_input = {7, 8};
  CHECK(p.flatten() == TokenSeq{7, 8});
  CHECK(p.test_offset() == 0);
  p.demos = {{{1, 2}, 5}, {{3}, 6}};
  CHECK(p.flatten() == TokenSeq{1, 2, 5, 0, 3, 6, 0, 7, 8});
  CHECK(p.test_offset() == 7);
}

TEST_CASE("built prompts carry labels from the label set and are seed-deterministic") {
  const Hmm hmm = fixture::random_model(4, 6, 2, 11);
  const auto policy = DemoLengthPolicy::uniform(2, 5);
  const IclPrompt a = build_prompt(hmm, 1, 8, policy, 5);
  CHECK(a.size() == 8);
  CHECK(a.task_id == 1);
  for (const Demo& demo : a.demos) {
    CHECK(hmm.is_label(demo.label));
    CHECK(demo.input.size() >= 2);
    CHECK(demo.input.size() <= 5);
  }
  CHECK(a.flatten() == build_prompt(hmm, 1, 8, policy, 5).flatten());
  CHECK(a.flatten() != build_prompt(hmm, 1, 8, policy, 6).flatten());
  CHECK(build_prompt(hmm, 0, 0, policy, 5).flatten() == build_prompt(hmm, 0, 0, policy, 5).test_input);
  expect_kind(ErrorKind::Validation, [&] { build_prompt(hmm, 2, 1, policy, 5); });
  expect_kind(ErrorKind::Validation,
              [&] { build_prompt(hmm, 0, 1, DemoLengthPolicy::uniform(4, 3), 5); });
}
