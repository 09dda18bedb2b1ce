#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cedar/linalg.hpp"

namespace cedar {

/// Fraction of variance unexplained: sum ||z - zhat||^2 over the variance
/// of mean-centered inputs. 0 = perfect, 1 = mean predictor.
double fvu(const Matrix& z, const Matrix& zhat);

/// Mean over rows of #{j : |h_ij| > threshold}.
double active_count(const Matrix& h, double threshold);

/// Mean over rows of ln C(n_latent, k_i), k_i the row's active count at the
/// given threshold. Natural log, via log-gamma.
double ic(Index n_latent, const Matrix& h, double threshold);

/// Mean row-wise cosine similarity; an all-zero reconstruction row
/// contributes 0.
double cosine_mean(const Matrix& z, const Matrix& zhat);

/// Centered-kernel alignment restricted to mutual k-nearest-neighbor pairs
/// of the two inner-product kernels.
double cknna(const Matrix& z, const Matrix& zhat, Index k_nn = 10);

struct ProbeModel {
  Matrix w;     // C x D
  Vector bias;  // C
};

struct ProbeConfig {
  double learning_rate = 0.05;
  long epochs = 200;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
};

/// Linear softmax classifier fitted on original embeddings (full-batch).
ProbeModel probe_train(const Matrix& z, const Eigen::VectorXi& labels,
                       const ProbeConfig& cfg = {});

/// Mean cross-entropy (nats) of a frozen probe on (reconstructed) inputs.
double probe_eval(const ProbeModel& p, const Matrix& zhat,
                  const Eigen::VectorXi& labels);

struct FvuSearchResult {
  double threshold = 0.0;
  double fvu = 0.0;
  int iterations = 0;
  bool reached = false;  // |fvu - target| <= tol
};

/// Binary search for the activation threshold whose reconstruction hits the
/// target FVU. recon_at(theta) must decode after zeroing |h| <= theta.
/// Throws ReachabilityError when the target lies outside [fvu(0), fvu(max)].
FvuSearchResult threshold_for_fvu(
    const std::function<Matrix(double)>& recon_at, const Matrix& z,
    double target_fvu, double tol, double max_threshold,
    int max_iterations = 60);

/// One evaluated (method, FVU target) pair: the columns of the comparison
/// table plus the search bookkeeping.
struct MetricsReport {
  std::string method;
  double target_fvu = 0.0;
  double threshold = 0.0;
  double fvu = 0.0;
  double k_mean = 0.0;
  double ic_nats = 0.0;
  double cs_mean = 0.0;
  std::optional<double> lp_ce;
  std::optional<double> cknna;
  Index n_latent = 0;
  std::optional<std::string> error;  // set when the target was unreachable
};

/// CSV with the fixed column order: model,K,IC,CS,LP,CKNNA.
std::string reports_to_csv(const std::vector<MetricsReport>& reports);

/// JSON array, one object per report, with full bookkeeping.
std::string reports_to_json(const std::vector<MetricsReport>& reports);

}  // namespace cedar
