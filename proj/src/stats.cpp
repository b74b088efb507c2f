#include "icl_lab/stats.hpp"

#include <algorithm>
#include <cmath>

namespace icl::stats {

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

double binomial_se(double p, std::size_t n) {
  if (n == 0) return 0.0;
  return std::sqrt(std::max(0.0, p * (1.0 - p)) / static_cast<double>(n));
}

double two_proportion_greater(std::size_t success_high, std::size_t n_high,
                              std::size_t success_low, std::size_t n_low, double* z) {
  if (n_high == 0 || n_low == 0) {
    if (z) *z = 0.0;
    return 1.0;
  }
  const double p1 = static_cast<double>(success_high) / static_cast<double>(n_high);
  const double p2 = static_cast<double>(success_low) / static_cast<double>(n_low);
  const double pooled = static_cast<double>(success_high + success_low) /
                        static_cast<double>(n_high + n_low);
  const double se = std::sqrt(pooled * (1.0 - pooled) *
                              (1.0 / static_cast<double>(n_high) + 1.0 / static_cast<double>(n_low)));
  double stat = 0.0;
  if (se > 0.0) {
    stat = (p1 - p2) / se;
  } else if (p1 != p2) {
    stat = p1 > p2 ? INFINITY : -INFINITY;
  }
  if (z) *z = stat;
  return normal_cdf(-stat);
}

double sign_test_upper(std::size_t k, std::size_t n) {
  if (k == 0) return 1.0;
  if (k > n) return 0.0;
  // Sum of binomial pmf terms in log space.
  double total = 0.0;
  const double log_half_n = static_cast<double>(n) * std::log(0.5);
  for (std::size_t i = k; i <= n; ++i) {
    const double log_choose = std::lgamma(static_cast<double>(n) + 1.0) -
                              std::lgamma(static_cast<double>(i) + 1.0) -
                              std::lgamma(static_cast<double>(n - i) + 1.0);
    total += std::exp(log_choose + log_half_n);
  }
  return std::min(1.0, total);
}

}  // namespace icl::stats
