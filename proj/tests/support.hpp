#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>

#include "tolo/gradcheck.hpp"
#include "tolo/grid.hpp"
#include "tolo/ops.hpp"

namespace tolo::testing {

using Rng = std::mt19937_64;

inline MatrixXd random_matrix(Rng& rng, Index rows, Index cols, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  MatrixXd m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

inline Index random_index(Rng& rng, Index lo, Index hi) {
  return std::uniform_int_distribution<Index>(lo, hi)(rng);
}

inline MatrixXd random_mask(Rng& rng, Index rows, Index cols, double p) {
  std::bernoulli_distribution b(p);
  MatrixXd m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = b(rng) ? 1.0 : 0.0;
  return m;
}

using GridFn = std::function<Grid<double>(const Grid<double>&)>;

/// Relative error between the tape gradient of sum(f(x) ⊙ w) and central
/// differences of the same functional evaluated off the tape.
inline double op_gradient_error(const GridFn& f, const MatrixXd& x, const MatrixXd& w,
                                double step = 1e-3) {
  Tape<double> tape;
  const auto leaf = tape.leaf(x);
  const auto loss = sum(hadamard(f(leaf), Grid<double>(w)));
  const MatrixXd analytic = tape.backward(loss)[leaf];
  const auto functional = [&](const MatrixXd& v) {
    return (f(Grid<double>(v)).value().array() * w.array()).sum();
  };
  return max_relative_error(analytic, finite_difference_gradient(functional, x, step));
}

}  // namespace tolo::testing
