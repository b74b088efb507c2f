#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

#include <Eigen/Dense>

namespace icl {

/// Mixes a root seed with a list of stream tags (trial index, n, arm, ...)
/// into an independent child seed. Stable across platforms and runs.
std::uint64_t derive_seed(std::uint64_t root,
                          std::initializer_list<std::uint64_t> tags);

/// Thin wrapper over mt19937_64 that draws doubles with a fixed bit recipe so
/// sampled sequences are reproducible independently of the standard library's
/// distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  std::uint64_t next() { return engine_(); }

  /// Index in [0, bound).
  std::size_t below(std::size_t bound);

  /// Draws an index with probability proportional to weights(i). The weights
  /// must be nonnegative with a positive sum.
  Eigen::Index categorical(const Eigen::Ref<const Eigen::VectorXd>& weights);

 private:
  std::mt19937_64 engine_;
};

}  // namespace icl
