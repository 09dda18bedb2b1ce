#pragma once

#include <cstdint>
#include <string>
#include <utility>

#include "cedar/linalg.hpp"

namespace cedar {

enum class Dtype { f32, f64 };

// EMB1 file: magic, version (u32), N (u64), D (u32), dtype tag (u32),
// row-major little-endian payload. f32 payloads widen to f64 on load.
void save_embeddings(const Matrix& z, const std::string& path,
                     Dtype dtype = Dtype::f64);
Matrix load_embeddings(const std::string& path);

// LBL1 file: magic, version (u32), N (u64), u32 label per row.
void save_labels(const Eigen::VectorXi& labels, const std::string& path);
Eigen::VectorXi load_labels(const std::string& path);

struct SyntheticSpec {
  Index dim = 16;
  Index n = 5000;
  Index k_true = 3;
  double noise_sigma = 0.01;
  std::uint64_t seed = 0;
  // Magnitude range for nonzero coefficients; bounded away from zero so
  // the ground-truth support stays identifiable.
  double value_min = 0.5;
  double value_max = 2.0;
};

struct SyntheticData {
  Matrix z;      // N x D observations z = Q^T s + b0 + noise
  Matrix q;      // ground-truth rotation (the true U)
  Matrix g;      // generator with expm(skew_from(g)) = q, the true A
  Vector b0;     // ground-truth offset
  Matrix codes;  // N x D sparse sources s
};

SyntheticData generate_synthetic(const SyntheticSpec& spec);

struct Split {
  Matrix train;
  Matrix val;
  Eigen::VectorXi train_labels;  // empty when no labels were given
  Eigen::VectorXi val_labels;
};

/// Seeded shuffle then split; pass labels = nullptr when there are none.
Split split(const Matrix& z, const Eigen::VectorXi* labels, double fraction,
            std::uint64_t seed);

}  // namespace cedar
