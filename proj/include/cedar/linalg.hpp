#pragma once

#include <Eigen/Dense>

namespace cedar {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// X = A - A^T, computed entrywise so X + X^T = 0 exactly.
Matrix skew_from(const Matrix& a);

/// Dense matrix exponential, Pade-13 scaling and squaring.
Matrix expm(const Matrix& x);

/// Frechet derivative L(X, E) of expm at X in direction E, via the block
/// identity expm([[X, E], [0, X]]) = [[expm(X), L(X, E)], [0, expm(X)]].
Matrix expm_frechet(const Matrix& x, const Matrix& e);

/// Adjoint of the Frechet derivative: d<G, expm(X)>/dX = L(X^T, G).
/// To chain onto A with X = A - A^T, form M - M^T from the result M.
Matrix expm_grad_adjoint(const Matrix& x, const Matrix& g);

}  // namespace cedar
