#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "cedar/model.hpp"

namespace cedar {

/// Dense-to-sparse homotopy on k over the first tau steps, then k drawn
/// uniformly from {1, ..., k_max}; k_max = 2*k_target - 1 keeps E[k] at
/// k_target.
struct CurriculumSchedule {
  Index dim = 0;
  long tau = 1;
  Index k_target = 10;
  Index k_max = 19;
};

/// k(t) = round(D + (t/tau)(k_target - D)) clamped to [k_target, D],
/// valid for 0 <= t <= tau. Round-half-up.
Index k_of_t(const CurriculumSchedule& s, long t);

/// Uniform draw from {1, ..., k_max}; the random-k regime for t > tau.
Index sample_k(const CurriculumSchedule& s, std::mt19937_64& rng);

struct TrainConfig {
  double learning_rate = 1e-3;
  Index batch_size = 256;
  long total_steps = 20000;
  long tau = -1;  // -1: 30% of total_steps
  std::uint64_t seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
};

struct TrainRecord {
  long step = 0;  // 1-based
  Index k = 0;
  double loss = 0.0;
  double orth_residual = 0.0;  // NaN for SAE history
  Index dead_latents = -1;     // SAE only, -1 otherwise
};

struct TrainHistory {
  std::vector<TrainRecord> records;
};

/// Newline-delimited JSON, one record per step.
void write_history_ndjson(const TrainHistory& h, const std::string& path);

/// Mean over rows of the per-row L1 norm of Z - Zhat.
double l1_batch_loss(const Matrix& z, const Matrix& zhat);

/// Gradient of the batch L1 reconstruction loss with respect to A.
/// L1 subgradient is sign(.) with 0 at zero residuals; the top-k mask is a
/// constant selector; the chain runs through both occurrences of U and the
/// expm adjoint, ending in the skew projection M - M^T.
Matrix loss_grad_A(const CedarModel& m, const Matrix& z, Index k);

struct FitResult {
  CedarModel model;
  TrainHistory history;
};

FitResult fit(const Matrix& z_train, const TrainConfig& cfg,
              CurriculumSchedule sched);

/// Schedule with defaults resolved against a config and data dimension.
CurriculumSchedule default_schedule(Index dim, const TrainConfig& cfg,
                                    Index k_target = 10, Index k_max = -1);

}  // namespace cedar
