#pragma once

#include <random>
#include <vector>

#include "cedar/linalg.hpp"

// Shared helpers for the test suites.
namespace testsup {

inline cedar::Matrix random_matrix(cedar::Index rows, cedar::Index cols,
                                   std::uint64_t seed, double lo = -1.0,
                                   double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  cedar::Matrix m(rows, cols);
  for (cedar::Index i = 0; i < rows; ++i)
    for (cedar::Index j = 0; j < cols; ++j) m(i, j) = dist(rng);
  return m;
}

inline cedar::Vector random_vector(cedar::Index n, std::uint64_t seed,
                                   double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  cedar::Vector v(n);
  for (cedar::Index i = 0; i < n; ++i) v(i) = dist(rng);
  return v;
}

inline cedar::Matrix random_skew(cedar::Index n, std::uint64_t seed) {
  return cedar::skew_from(random_matrix(n, n, seed));
}

inline double max_abs_diff(const cedar::Matrix& a, const cedar::Matrix& b) {
  return (a - b).cwiseAbs().maxCoeff();
}

// Greedy one-to-one assignment between learned axes (rows of u) and
// reference axes (rows of q) by |cosine|, largest first. Returns, per
// learned axis, the matched reference index and the signed cosine.
struct AxisMatch {
  cedar::Index ref = -1;
  double cosine = 0.0;  // signed
};

inline std::vector<AxisMatch> align_axes(const cedar::Matrix& u,
                                         const cedar::Matrix& q) {
  const cedar::Index d = u.rows();
  const cedar::Matrix cos = u * q.transpose();  // rows are unit vectors
  std::vector<AxisMatch> match(static_cast<std::size_t>(d));
  std::vector<bool> used_row(static_cast<std::size_t>(d), false);
  std::vector<bool> used_ref(static_cast<std::size_t>(d), false);
  for (cedar::Index step = 0; step < d; ++step) {
    cedar::Index bi = -1, bj = -1;
    double best = -1.0;
    for (cedar::Index i = 0; i < d; ++i) {
      if (used_row[static_cast<std::size_t>(i)]) continue;
      for (cedar::Index j = 0; j < d; ++j) {
        if (used_ref[static_cast<std::size_t>(j)]) continue;
        if (std::abs(cos(i, j)) > best) {
          best = std::abs(cos(i, j));
          bi = i;
          bj = j;
        }
      }
    }
    used_row[static_cast<std::size_t>(bi)] = true;
    used_ref[static_cast<std::size_t>(bj)] = true;
    match[static_cast<std::size_t>(bi)] = AxisMatch{bj, cos(bi, bj)};
  }
  return match;
}

}  // namespace testsup
