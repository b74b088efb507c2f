#pragma once

#include <vector>

#include "icl_lab/hmm.hpp"
#include "icl_lab/rng.hpp"

namespace fixture {

using icl::Hmm;
using icl::Matrix;
using icl::Token;
using icl::Vector;

inline Matrix rows(std::initializer_list<std::initializer_list<double>> values) {
  Matrix out(static_cast<Eigen::Index>(values.size()),
             static_cast<Eigen::Index>(values.begin()->size()));
  Eigen::Index r = 0;
  for (const auto& row : values) {
    Eigen::Index c = 0;
    for (double v : row) out(r, c++) = v;
    ++r;
  }
  return out;
}

inline Vector vec(std::initializer_list<double> values) {
  Vector out(static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (double v : values) out(i++) = v;
  return out;
}

inline Hmm make(Matrix t, Matrix b, std::vector<int> starts, Vector init,
                Token delimiter, std::vector<Token> labels) {
  return Hmm::create({std::move(t), std::move(b), std::move(starts), std::move(init),
                      delimiter, std::move(labels)});
}

/// Two single-state tasks that emit i.i.d. tokens from p and q respectively.
inline Hmm iid_pair(const Vector& p, const Vector& q) {
  Matrix b(2, p.size());
  b.row(0) = p.transpose();
  b.row(1) = q.transpose();
  return make(Matrix::Identity(2, 2), b, {0, 1}, vec({0.5, 0.5}), 0,
              {static_cast<Token>(p.size() - 1)});
}

inline Hmm random_model(int d, int m, int tasks, std::uint64_t seed) {
  icl::Rng rng(seed);
  return icl::random_hmm(d, m, tasks, rng);
}

}  // namespace fixture
