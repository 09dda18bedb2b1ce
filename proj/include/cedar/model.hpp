#pragma once

#include <string>
#include <vector>

#include "cedar/linalg.hpp"

namespace cedar {

/// Sparse form of a transformed embedding: z~ = sum_{i in S} alpha_i e_i.
/// Support indices are strictly increasing; values are aligned with them.
struct SparseCode {
  Index dim = 0;
  std::vector<Index> support;
  std::vector<double> values;
  Index k = 0;  // requested sparsity, |support| <= min(k, dim)
};

/// The learned reparameterization z~ = U (z - b) with U = expm(A - A^T).
/// U is a cache derived from A; construct through make_model so the two
/// never drift apart.
struct CedarModel {
  Matrix a;  // skew generator parameters, D x D
  Matrix u;  // cached expm(a - a^T)
  Vector b;  // training-set mean embedding

  Index dim() const { return b.size(); }
};

CedarModel make_model(Matrix a, Vector b);

/// Keeps the k coordinates of largest |v_i|, zeroes the rest. Ties break
/// toward the lower index; k is clamped to [0, D].
Vector topk(const Vector& v, Index k);

/// Row-wise topk.
Matrix topk_rows(const Matrix& y, Index k);

SparseCode encode(const CedarModel& m, const Vector& z, Index k);
Vector dense(const SparseCode& c);
Vector decode(const CedarModel& m, const SparseCode& c);

/// Rows of U (Z - b): the transformed (code-space) batch.
Matrix transform_batch(const CedarModel& m, const Matrix& z);

/// Maps code-space rows back: U^T h + b per row.
Matrix inverse_batch(const CedarModel& m, const Matrix& h);

/// decode(encode(.)) applied row-wise.
Matrix reconstruct_batch(const CedarModel& m, const Matrix& z, Index k);

/// Unit direction in the original space generated by coordinate d:
/// c_d = decode(e_d) - b = row d of U.
Vector semantic_axis(const CedarModel& m, Index d);

// Binary serialization: magic "CEDM", version, D, then A (row-major) and b
// as little-endian f64. U is recomputed on load, never stored.
void save_model(const CedarModel& m, const std::string& path);
CedarModel load_model(const std::string& path);

}  // namespace cedar
