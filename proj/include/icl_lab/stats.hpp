#pragma once

#include <cstddef>

namespace icl::stats {

double normal_cdf(double z);

/// sqrt(p (1 - p) / n)
double binomial_se(double p, std::size_t n);

/// One-sided z test of H1: p_high > p_low, pooled variance. Returns the
/// p-value and writes the statistic to *z when given.
double two_proportion_greater(std::size_t success_high, std::size_t n_high,
                              std::size_t success_low, std::size_t n_low,
                              double* z = nullptr);

/// P(X >= k) for X ~ Binomial(n, 1/2): exact one-sided sign test on the
/// discordant pairs of a paired comparison.
double sign_test_upper(std::size_t k, std::size_t n);

}  // namespace icl::stats
