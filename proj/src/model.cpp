#include "cedar/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "binio.hpp"
#include "cedar/errors.hpp"

namespace cedar {

namespace {

constexpr char kModelMagic[4] = {'C', 'E', 'D', 'M'};
constexpr std::uint32_t kModelVersion = 1;

void require_dim(Index got, Index want, const char* op) {
  if (got != want) {
    throw DimensionError(std::string(op) + ": dimension mismatch, got " +
                         std::to_string(got) + ", model has " +
                         std::to_string(want));
  }
}

}  // namespace

CedarModel make_model(Matrix a, Vector b) {
  if (a.rows() != a.cols()) {
    throw DimensionError("make_model: A must be square");
  }
  if (a.rows() != b.size()) {
    throw DimensionError("make_model: A is " + std::to_string(a.rows()) +
                         "x" + std::to_string(a.cols()) + " but b has dim " +
                         std::to_string(b.size()));
  }
  if (!b.allFinite()) {
    throw NumericError("make_model: b contains non-finite entries");
  }
  CedarModel m;
  m.u = expm(skew_from(a));
  m.a = std::move(a);
  m.b = std::move(b);
  return m;
}

Vector topk(const Vector& v, Index k) {
  const Index d = v.size();
  k = std::clamp<Index>(k, 0, d);
  if (k == d) return v;
  Vector out = Vector::Zero(d);
  if (k == 0) return out;
  std::vector<Index> idx(static_cast<std::size_t>(d));
  std::iota(idx.begin(), idx.end(), Index{0});
  // Largest |v_i| first; equal magnitudes keep the lower index.
  auto by_magnitude = [&](Index i, Index j) {
    const double ai = std::abs(v(i)), aj = std::abs(v(j));
    if (ai != aj) return ai > aj;
    return i < j;
  };
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), by_magnitude);
  for (Index r = 0; r < k; ++r) out(idx[static_cast<std::size_t>(r)]) = v(idx[static_cast<std::size_t>(r)]);
  return out;
}

Matrix topk_rows(const Matrix& y, Index k) {
  Matrix out(y.rows(), y.cols());
  for (Index i = 0; i < y.rows(); ++i) {
    out.row(i) = topk(y.row(i).transpose(), k).transpose();
  }
  return out;
}

SparseCode encode(const CedarModel& m, const Vector& z, Index k) {
  require_dim(z.size(), m.dim(), "encode");
  const Vector y = topk(m.u * (z - m.b), k);
  SparseCode c;
  c.dim = m.dim();
  c.k = std::clamp<Index>(k, 0, m.dim());
  for (Index i = 0; i < y.size(); ++i) {
    if (y(i) != 0.0) {
      c.support.push_back(i);
      c.values.push_back(y(i));
    }
  }
  return c;
}

Vector dense(const SparseCode& c) {
  Vector v = Vector::Zero(c.dim);
  for (std::size_t i = 0; i < c.support.size(); ++i) {
    const Index d = c.support[i];
    if (d < 0 || d >= c.dim) {
      throw IndexError("dense: support index " + std::to_string(d) +
                       " out of range [0, " + std::to_string(c.dim) + ")");
    }
    v(d) = c.values[i];
  }
  return v;
}

Vector decode(const CedarModel& m, const SparseCode& c) {
  require_dim(c.dim, m.dim(), "decode");
  // U^T dense(c) + b, accumulated over the support only.
  Vector out = m.b;
  for (std::size_t i = 0; i < c.support.size(); ++i) {
    const Index d = c.support[i];
    if (d < 0 || d >= c.dim) {
      throw IndexError("decode: support index out of range");
    }
    out += c.values[i] * m.u.row(d).transpose();
  }
  return out;
}

Matrix transform_batch(const CedarModel& m, const Matrix& z) {
  require_dim(z.cols(), m.dim(), "transform_batch");
  return (z.rowwise() - m.b.transpose()) * m.u.transpose();
}

Matrix inverse_batch(const CedarModel& m, const Matrix& h) {
  require_dim(h.cols(), m.dim(), "inverse_batch");
  return (h * m.u).rowwise() + m.b.transpose();
}

Matrix reconstruct_batch(const CedarModel& m, const Matrix& z, Index k) {
  return inverse_batch(m, topk_rows(transform_batch(m, z), k));
}

Vector semantic_axis(const CedarModel& m, Index d) {
  if (d < 0 || d >= m.dim()) {
    throw IndexError("semantic_axis: axis " + std::to_string(d) +
                     " out of range [0, " + std::to_string(m.dim()) + ")");
  }
  return m.u.row(d).transpose();
}

void save_model(const CedarModel& m, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("save_model: cannot open " + path + " for writing");
  binio::write_magic(os, kModelMagic);
  binio::write_u32(os, kModelVersion);
  binio::write_u32(os, static_cast<std::uint32_t>(m.dim()));
  binio::write_matrix(os, m.a);
  binio::write_vector(os, m.b);
  if (!os) throw IoError("save_model: write failed for " + path);
}

CedarModel load_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("load_model: cannot open " + path);
  binio::expect_magic(is, kModelMagic, "CEDM model");
  const auto version = binio::read_u32(is, "version");
  if (version != kModelVersion) {
    throw FormatError("load_model: unsupported version " +
                      std::to_string(version));
  }
  const auto d = static_cast<Index>(binio::read_u32(is, "dimension"));
  Matrix a = binio::read_matrix(is, d, d, "A payload");
  Vector b = binio::read_vector(is, d, "b payload");
  if (!a.allFinite() || !b.allFinite()) {
    throw FormatError("load_model: non-finite parameter payload");
  }
  return make_model(std::move(a), std::move(b));
}

}  // namespace cedar
