#pragma once

#include <string>
#include <utility>

#include "cedar/linalg.hpp"
#include "cedar/train.hpp"

namespace cedar {

enum class SaeVariant { relu, topk, batchtopk };

std::string to_string(SaeVariant v);
SaeVariant sae_variant_from_string(const std::string& s);

struct SaeConfig {
  Index input_dim = 0;
  Index expansion = 8;  // latent m = expansion * D
  SaeVariant variant = SaeVariant::topk;
  Index k = 64;          // topk default 64, batchtopk default 32
  double lambda = 0.01;  // relu L1 penalty
  TrainConfig train;
};

/// Affine standardization x = s (z - mu), scaled so the mean row norm of
/// the standardized training set is sqrt(D).
struct Standardizer {
  Vector mu;
  double scale = 1.0;

  Matrix apply(const Matrix& z) const;
  Matrix inverse(const Matrix& x) const;
};

Standardizer standardize_fit(const Matrix& z);

struct SaeModel {
  Matrix w_enc;  // m x D
  Vector b_enc;  // m
  Matrix w_dec;  // D x m, unit-norm columns
  Vector b_pre;  // D, subtracted before encoding, added back after decoding
  SaeVariant variant = SaeVariant::topk;
  Index k = 64;
  double lambda = 0.01;

  Index input_dim() const { return w_dec.rows(); }
  Index latent_dim() const { return w_dec.cols(); }
};

struct SaeForward {
  Matrix h;     // N x m sparse codes
  Matrix xhat;  // N x D reconstruction (standardized space)
};

SaeForward sae_forward(const SaeModel& m, const Matrix& x);

/// Mean per-row squared reconstruction error, plus lambda * mean row L1 of
/// H for the relu variant.
double sae_loss(const SaeModel& m, const Matrix& x, const Matrix& h,
                const Matrix& xhat);

struct SaeFitResult {
  SaeModel model;
  Standardizer standardizer;
  TrainHistory history;
};

SaeFitResult train_sae(const Matrix& z, const SaeConfig& cfg);

// Binary serialization: magic "CSAE", version, variant tag, dims, then
// parameter blocks (including the standardizer) as little-endian f64.
void save_sae(const SaeModel& m, const Standardizer& s,
              const std::string& path);
std::pair<SaeModel, Standardizer> load_sae(const std::string& path);

}  // namespace cedar
