#include "cedar/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <vector>

#include "binio.hpp"
#include "cedar/errors.hpp"

namespace cedar {

namespace {

constexpr char kEmbMagic[4] = {'E', 'M', 'B', '1'};
constexpr char kLabelMagic[4] = {'L', 'B', 'L', '1'};
constexpr std::uint32_t kFormatVersion = 1;
constexpr std::uint32_t kTagF32 = 0;
constexpr std::uint32_t kTagF64 = 1;

}  // namespace

void save_embeddings(const Matrix& z, const std::string& path, Dtype dtype) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("save_embeddings: cannot open " + path);
  binio::write_magic(os, kEmbMagic);
  binio::write_u32(os, kFormatVersion);
  binio::write_u64(os, static_cast<std::uint64_t>(z.rows()));
  binio::write_u32(os, static_cast<std::uint32_t>(z.cols()));
  binio::write_u32(os, dtype == Dtype::f32 ? kTagF32 : kTagF64);
  for (Index i = 0; i < z.rows(); ++i) {
    for (Index j = 0; j < z.cols(); ++j) {
      if (dtype == Dtype::f32) {
        binio::write_f32(os, static_cast<float>(z(i, j)));
      } else {
        binio::write_f64(os, z(i, j));
      }
    }
  }
  if (!os) throw IoError("save_embeddings: write failed for " + path);
}

Matrix load_embeddings(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("load_embeddings: cannot open " + path);
  binio::expect_magic(is, kEmbMagic, "EMB1 embedding");
  const auto version = binio::read_u32(is, "version");
  if (version != kFormatVersion) {
    throw FormatError("load_embeddings: unsupported version " +
                      std::to_string(version));
  }
  const auto n = static_cast<Index>(binio::read_u64(is, "row count"));
  const auto d = static_cast<Index>(binio::read_u32(is, "dimension"));
  const auto tag = binio::read_u32(is, "dtype tag");
  if (tag != kTagF32 && tag != kTagF64) {
    throw FormatError("load_embeddings: unknown dtype tag " +
                      std::to_string(tag));
  }
  Matrix z(n, d);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < d; ++j) {
      z(i, j) = (tag == kTagF32)
                    ? static_cast<double>(binio::read_f32(is, "payload"))
                    : binio::read_f64(is, "payload");
    }
  }
  if (n > 0 && !z.allFinite()) {
    throw FormatError("load_embeddings: non-finite payload in " + path);
  }
  return z;
}

void save_labels(const Eigen::VectorXi& labels, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("save_labels: cannot open " + path);
  binio::write_magic(os, kLabelMagic);
  binio::write_u32(os, kFormatVersion);
  binio::write_u64(os, static_cast<std::uint64_t>(labels.size()));
  for (Index i = 0; i < labels.size(); ++i) {
    if (labels(i) < 0) throw DataError("save_labels: negative label");
    binio::write_u32(os, static_cast<std::uint32_t>(labels(i)));
  }
  if (!os) throw IoError("save_labels: write failed for " + path);
}

Eigen::VectorXi load_labels(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("load_labels: cannot open " + path);
  binio::expect_magic(is, kLabelMagic, "LBL1 label");
  const auto version = binio::read_u32(is, "version");
  if (version != kFormatVersion) {
    throw FormatError("load_labels: unsupported version " +
                      std::to_string(version));
  }
  const auto n = static_cast<Index>(binio::read_u64(is, "row count"));
  Eigen::VectorXi labels(n);
  for (Index i = 0; i < n; ++i) {
    labels(i) = static_cast<int>(binio::read_u32(is, "labels"));
  }
  return labels;
}

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  if (spec.dim < 1 || spec.n < 0 || spec.k_true < 1 || spec.k_true > spec.dim) {
    throw ArgumentError("generate_synthetic: need 1 <= k_true <= D and N >= 0");
  }
  if (spec.noise_sigma < 0.0) {
    throw ArgumentError("generate_synthetic: noise_sigma must be >= 0");
  }
  if (spec.value_min <= 0.0 || spec.value_max < spec.value_min) {
    throw ArgumentError("generate_synthetic: bad coefficient value range");
  }
  const Index d = spec.dim;
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(-0.5, 0.5);

  Matrix g(d, d);
  for (Index i = 0; i < d; ++i)
    for (Index j = 0; j < d; ++j) g(i, j) = unit(rng);
  const Matrix q = expm(skew_from(g));

  Vector b0(d);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (Index i = 0; i < d; ++i) b0(i) = gauss(rng);

  std::uniform_real_distribution<double> coef(spec.value_min, spec.value_max);
  std::uniform_int_distribution<int> flip(0, 1);
  std::vector<Index> coords(static_cast<std::size_t>(d));

  Matrix codes = Matrix::Zero(spec.n, d);
  Matrix z(spec.n, d);
  for (Index row = 0; row < spec.n; ++row) {
    std::iota(coords.begin(), coords.end(), Index{0});
    // Partial Fisher-Yates: first k_true entries are a uniform support draw.
    for (Index i = 0; i < spec.k_true; ++i) {
      std::uniform_int_distribution<Index> pick(i, d - 1);
      std::swap(coords[static_cast<std::size_t>(i)],
                coords[static_cast<std::size_t>(pick(rng))]);
      const double magnitude = coef(rng);
      codes(row, coords[static_cast<std::size_t>(i)]) =
          flip(rng) ? magnitude : -magnitude;
    }
    z.row(row) = codes.row(row) * q + b0.transpose();
    if (spec.noise_sigma > 0.0) {
      for (Index j = 0; j < d; ++j) z(row, j) += spec.noise_sigma * gauss(rng);
    }
  }
  return SyntheticData{std::move(z), q, std::move(g), std::move(b0),
                       std::move(codes)};
}

Split split(const Matrix& z, const Eigen::VectorXi* labels, double fraction,
            std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw ArgumentError("split: fraction must be in (0, 1)");
  }
  if (labels && labels->size() != z.rows()) {
    throw DimensionError("split: labels length does not match data rows");
  }
  const Index n = z.rows();
  const auto n_train = static_cast<Index>(
      std::llround(fraction * static_cast<double>(n)));
  if (n_train <= 0 || n_train >= n) {
    throw ArgumentError("split: fraction produces an empty side");
  }
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  Split out;
  out.train.resize(n_train, z.cols());
  out.val.resize(n - n_train, z.cols());
  if (labels) {
    out.train_labels.resize(n_train);
    out.val_labels.resize(n - n_train);
  }
  for (Index i = 0; i < n; ++i) {
    const Index src = order[static_cast<std::size_t>(i)];
    if (i < n_train) {
      out.train.row(i) = z.row(src);
      if (labels) out.train_labels(i) = (*labels)(src);
    } else {
      out.val.row(i - n_train) = z.row(src);
      if (labels) out.val_labels(i - n_train) = (*labels)(src);
    }
  }
  return out;
}

}  // namespace cedar
