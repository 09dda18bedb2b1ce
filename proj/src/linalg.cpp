#include "cedar/linalg.hpp"

#include <cmath>

#include "cedar/errors.hpp"

namespace cedar {

namespace {

void require_square(const Matrix& m, const char* op) {
  if (m.rows() != m.cols()) {
    throw DimensionError(std::string(op) + ": matrix must be square, got " +
                         std::to_string(m.rows()) + "x" +
                         std::to_string(m.cols()));
  }
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " +
                         std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()));
  }
}

// Pade order-13 numerator/denominator split: exp(X) ~ (V - U)^{-1} (V + U).
void pade13(const Matrix& x, Matrix& u, Matrix& v) {
  static const double b[] = {
      64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
      1187353796428800.0,  129060195264000.0,   10559470521600.0,
      670442572800.0,      33522128640.0,       1323241920.0,
      40840800.0,          960960.0,            16380.0,
      182.0,               1.0};
  const Index n = x.rows();
  const Matrix x2 = x * x;
  const Matrix x4 = x2 * x2;
  const Matrix x6 = x4 * x2;
  Matrix tmp = x6 * (b[13] * x6 + b[11] * x4 + b[9] * x2);
  tmp += b[7] * x6 + b[5] * x4 + b[3] * x2 +
         b[1] * Matrix::Identity(n, n);
  u.noalias() = x * tmp;
  v.noalias() = x6 * (b[12] * x6 + b[10] * x4 + b[8] * x2);
  v += b[6] * x6 + b[4] * x4 + b[2] * x2 + b[0] * Matrix::Identity(n, n);
}

}  // namespace

Matrix skew_from(const Matrix& a) {
  require_square(a, "skew_from");
  return a - a.transpose();
}

Matrix expm(const Matrix& x) {
  require_square(x, "expm");
  if (!x.allFinite()) {
    throw NumericError("expm: input contains non-finite entries");
  }
  // Scale so the 1-norm falls under the order-13 accuracy bound, then undo
  // the scaling by repeated squaring.
  const double theta13 = 5.371920351148152;
  const double norm1 =
      x.size() == 0 ? 0.0 : x.cwiseAbs().colwise().sum().maxCoeff();
  if (norm1 == 0.0) return Matrix::Identity(x.rows(), x.cols());
  int squarings = 0;
  if (norm1 > theta13) {
    std::frexp(norm1 / theta13, &squarings);
    if (squarings < 0) squarings = 0;
  }
  const Matrix xs = x * std::ldexp(1.0, -squarings);
  Matrix u, v;
  pade13(xs, u, v);
  Matrix result = (v - u).partialPivLu().solve(v + u);
  for (int i = 0; i < squarings; ++i) {
    result = result * result;
  }
  return result;
}

Matrix expm_frechet(const Matrix& x, const Matrix& e) {
  require_square(x, "expm_frechet");
  require_same_shape(x, e, "expm_frechet");
  const Index n = x.rows();
  Matrix block = Matrix::Zero(2 * n, 2 * n);
  block.topLeftCorner(n, n) = x;
  block.topRightCorner(n, n) = e;
  block.bottomRightCorner(n, n) = x;
  return expm(block).topRightCorner(n, n);
}

Matrix expm_grad_adjoint(const Matrix& x, const Matrix& g) {
  require_square(x, "expm_grad_adjoint");
  require_same_shape(x, g, "expm_grad_adjoint");
  return expm_frechet(x.transpose(), g);
}

}  // namespace cedar
