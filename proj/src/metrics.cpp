#include "cedar/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <vector>

#include <nlohmann/json.hpp>

#include "cedar/errors.hpp"
#include "cedar/optim.hpp"

namespace cedar {

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch");
  }
}

double log_choose(Index n, Index k) {
  return std::lgamma(static_cast<double>(n) + 1.0) -
         std::lgamma(static_cast<double>(k) + 1.0) -
         std::lgamma(static_cast<double>(n - k) + 1.0);
}

// Row-wise top-k neighbor mask of a kernel matrix, diagonal excluded. Ties
// resolve toward the lower column index.
std::vector<char> kernel_neighbor_mask(const Matrix& k, Index k_nn) {
  const Index n = k.rows();
  std::vector<char> mask(static_cast<std::size_t>(n * n), 0);
  std::vector<Index> idx;
  for (Index i = 0; i < n; ++i) {
    idx.clear();
    for (Index j = 0; j < n; ++j) {
      if (j != i) idx.push_back(j);
    }
    auto by_similarity = [&](Index a, Index b) {
      if (k(i, a) != k(i, b)) return k(i, a) > k(i, b);
      return a < b;
    };
    std::partial_sort(idx.begin(), idx.begin() + k_nn, idx.end(), by_similarity);
    for (Index r = 0; r < k_nn; ++r) {
      mask[static_cast<std::size_t>(i * n + idx[static_cast<std::size_t>(r)])] = 1;
    }
  }
  return mask;
}

Matrix double_center(const Matrix& k) {
  const Index n = k.rows();
  const Vector row_mean = k.rowwise().mean();
  const double total_mean = k.mean();
  Matrix out = k;
  out.colwise() -= row_mean;
  out.rowwise() -= row_mean.transpose();
  out.array() += total_mean;
  return out;
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    p.row(i) = (logits.row(i).array() - mx).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

double cross_entropy(const Matrix& logits, const Eigen::VectorXi& labels) {
  double total = 0.0;
  for (Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    const double lse =
        mx + std::log((logits.row(i).array() - mx).exp().sum());
    total += lse - logits(i, labels(i));
  }
  return total / static_cast<double>(logits.rows());
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

double fvu(const Matrix& z, const Matrix& zhat) {
  require_same_shape(z, zhat, "fvu");
  if (z.rows() < 2) throw DataError("fvu: need at least two rows");
  const Vector mean = z.colwise().mean();
  // Residuals are materialized so both reductions run the same kernel and
  // the mean predictor scores exactly 1.
  const Matrix centered = z.rowwise() - mean.transpose();
  const Matrix resid = z - zhat;
  const double denom = centered.squaredNorm();
  if (!(denom > 0.0)) {
    throw DataError("fvu: constant dataset, zero variance");
  }
  return resid.squaredNorm() / denom;
}

double active_count(const Matrix& h, double threshold) {
  if (threshold < 0.0) throw ArgumentError("active_count: threshold must be >= 0");
  double total = 0.0;
  for (Index i = 0; i < h.rows(); ++i) {
    total += static_cast<double>(
        (h.row(i).cwiseAbs().array() > threshold).count());
  }
  return h.rows() == 0 ? 0.0 : total / static_cast<double>(h.rows());
}

double ic(Index n_latent, const Matrix& h, double threshold) {
  if (threshold < 0.0) throw ArgumentError("ic: threshold must be >= 0");
  double total = 0.0;
  for (Index i = 0; i < h.rows(); ++i) {
    const auto k = static_cast<Index>(
        (h.row(i).cwiseAbs().array() > threshold).count());
    if (k > n_latent) {
      throw ArgumentError("ic: active count exceeds n_latent");
    }
    total += log_choose(n_latent, k);
  }
  return h.rows() == 0 ? 0.0 : total / static_cast<double>(h.rows());
}

double cosine_mean(const Matrix& z, const Matrix& zhat) {
  require_same_shape(z, zhat, "cosine_mean");
  double total = 0.0;
  for (Index i = 0; i < z.rows(); ++i) {
    const double nz = z.row(i).norm();
    if (!(nz > 0.0)) throw DataError("cosine_mean: zero row in reference");
    const double nh = zhat.row(i).norm();
    if (nh > 0.0) total += z.row(i).dot(zhat.row(i)) / (nz * nh);
  }
  return z.rows() == 0 ? 0.0 : total / static_cast<double>(z.rows());
}

double cknna(const Matrix& z, const Matrix& zhat, Index k_nn) {
  if (z.rows() != zhat.rows()) {
    throw DimensionError("cknna: row counts differ");
  }
  const Index n = z.rows();
  if (k_nn < 1 || n <= k_nn) {
    throw ArgumentError("cknna: need N > k_nn >= 1");
  }
  const Matrix zc = z.rowwise() - z.colwise().mean();
  const Matrix hc = zhat.rowwise() - zhat.colwise().mean();
  const Matrix k = zc * zc.transpose();
  const Matrix l = hc * hc.transpose();
  const auto nn_k = kernel_neighbor_mask(k, k_nn);
  const auto nn_l = kernel_neighbor_mask(l, k_nn);
  const Matrix kc = double_center(k);
  const Matrix lc = double_center(l);

  // Alignment is the correlation of the double-centered kernel entries over
  // the mutual-neighbor pairs; centering within the mask keeps independent
  // representations near zero.
  double mean_k = 0.0, mean_l = 0.0;
  long pairs = 0;
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      const auto flat = static_cast<std::size_t>(i * n + j);
      if (!nn_k[flat] || !nn_l[flat]) continue;
      mean_k += kc(i, j);
      mean_l += lc(i, j);
      ++pairs;
    }
  }
  if (pairs == 0) {
    throw DataError("cknna: empty mutual-neighbor mask, metric undefined");
  }
  mean_k /= static_cast<double>(pairs);
  mean_l /= static_cast<double>(pairs);

  double skl = 0.0, skk = 0.0, sll = 0.0;
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      const auto flat = static_cast<std::size_t>(i * n + j);
      if (!nn_k[flat] || !nn_l[flat]) continue;
      const double dk = kc(i, j) - mean_k;
      const double dl = lc(i, j) - mean_l;
      skl += dk * dl;
      skk += dk * dk;
      sll += dl * dl;
    }
  }
  if (!(skk > 0.0) || !(sll > 0.0)) {
    throw DataError("cknna: degenerate kernel values on the neighbor mask");
  }
  return skl / std::sqrt(skk * sll);
}

ProbeModel probe_train(const Matrix& z, const Eigen::VectorXi& labels,
                       const ProbeConfig& cfg) {
  if (labels.size() != z.rows()) {
    throw DimensionError("probe_train: labels length does not match rows");
  }
  if (z.rows() == 0) throw DataError("probe_train: empty dataset");
  const int c = labels.maxCoeff() + 1;
  if (labels.minCoeff() < 0) throw DataError("probe_train: negative label");
  std::vector<Index> counts(static_cast<std::size_t>(c), 0);
  for (Index i = 0; i < labels.size(); ++i) ++counts[static_cast<std::size_t>(labels(i))];
  for (int j = 0; j < c; ++j) {
    if (counts[static_cast<std::size_t>(j)] == 0) {
      throw DataError("probe_train: class " + std::to_string(j) +
                      " has no training samples");
    }
  }

  const Index d = z.cols();
  const Index n = z.rows();
  ProbeModel p{Matrix::Zero(c, d), Vector::Zero(c)};

  Matrix onehot = Matrix::Zero(n, c);
  for (Index i = 0; i < n; ++i) onehot(i, labels(i)) = 1.0;

  Adam opt_w(p.w.size(), cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2,
             cfg.adam_eps);
  Adam opt_b(c, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2,
             cfg.adam_eps);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (long epoch = 0; epoch < cfg.epochs; ++epoch) {
    const Matrix logits = (z * p.w.transpose()).rowwise() + p.bias.transpose();
    const Matrix delta = (softmax_rows(logits) - onehot) * inv_n;
    const Matrix g_w = delta.transpose() * z;
    const Vector g_b = delta.colwise().sum().transpose();
    Eigen::Map<Eigen::ArrayXd> pw(p.w.data(), p.w.size());
    Eigen::Map<const Eigen::ArrayXd> gw(g_w.data(), g_w.size());
    opt_w.step(pw, gw);
    Eigen::Map<Eigen::ArrayXd> pb(p.bias.data(), p.bias.size());
    opt_b.step(pb, g_b.array());
  }
  return p;
}

double probe_eval(const ProbeModel& p, const Matrix& zhat,
                  const Eigen::VectorXi& labels) {
  if (labels.size() != zhat.rows()) {
    throw DimensionError("probe_eval: labels length does not match rows");
  }
  if (zhat.cols() != p.w.cols()) {
    throw DimensionError("probe_eval: embedding dimension mismatch");
  }
  if (labels.size() == 0) throw DataError("probe_eval: empty dataset");
  if (labels.maxCoeff() >= p.w.rows() || labels.minCoeff() < 0) {
    throw DataError("probe_eval: label outside the probe's class range");
  }
  const Matrix logits =
      (zhat * p.w.transpose()).rowwise() + p.bias.transpose();
  return cross_entropy(logits, labels);
}

FvuSearchResult threshold_for_fvu(
    const std::function<Matrix(double)>& recon_at, const Matrix& z,
    double target_fvu, double tol, double max_threshold, int max_iterations) {
  if (!(tol > 0.0)) throw ArgumentError("threshold_for_fvu: tol must be > 0");
  if (max_threshold < 0.0) {
    throw ArgumentError("threshold_for_fvu: max_threshold must be >= 0");
  }
  const double fvu_lo = fvu(z, recon_at(0.0));
  if (std::abs(fvu_lo - target_fvu) <= tol) {
    return FvuSearchResult{0.0, fvu_lo, 0, true};
  }
  if (target_fvu < fvu_lo) {
    throw ReachabilityError(
        "threshold_for_fvu: target " + std::to_string(target_fvu) +
            " lies below the achievable floor " + std::to_string(fvu_lo),
        fvu_lo);
  }
  double hi = max_threshold;
  double fvu_hi = fvu(z, recon_at(hi));
  if (std::abs(fvu_hi - target_fvu) <= tol) {
    return FvuSearchResult{hi, fvu_hi, 0, true};
  }
  if (target_fvu > fvu_hi) {
    throw ReachabilityError(
        "threshold_for_fvu: target " + std::to_string(target_fvu) +
            " exceeds the FVU of the empty code " + std::to_string(fvu_hi),
        fvu_hi);
  }

  double lo = 0.0;
  double best_threshold = lo;
  double best_fvu = fvu_lo;
  for (int it = 1; it <= max_iterations; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double f = fvu(z, recon_at(mid));
    if (std::abs(f - target_fvu) < std::abs(best_fvu - target_fvu)) {
      best_threshold = mid;
      best_fvu = f;
    }
    if (std::abs(f - target_fvu) <= tol) {
      return FvuSearchResult{mid, f, it, true};
    }
    if (f < target_fvu) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  // Local non-monotonicity kept the bracket from closing; report the best
  // endpoint seen with the flag down.
  return FvuSearchResult{best_threshold, best_fvu, max_iterations, false};
}

std::string reports_to_csv(const std::vector<MetricsReport>& reports) {
  std::string out = "model,K,IC,CS,LP,CKNNA\n";
  for (const auto& r : reports) {
    out += r.method;
    out += ',';
    if (r.error) {
      out += ",,,,\n";
      continue;
    }
    out += format_double(r.k_mean);
    out += ',';
    out += format_double(r.ic_nats);
    out += ',';
    out += format_double(r.cs_mean);
    out += ',';
    if (r.lp_ce) out += format_double(*r.lp_ce);
    out += ',';
    if (r.cknna) out += format_double(*r.cknna);
    out += '\n';
  }
  return out;
}

std::string reports_to_json(const std::vector<MetricsReport>& reports) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : reports) {
    nlohmann::json j;
    j["model"] = r.method;
    j["target_fvu"] = r.target_fvu;
    if (r.error) {
      j["error"] = *r.error;
      arr.push_back(j);
      continue;
    }
    j["threshold"] = r.threshold;
    j["fvu"] = r.fvu;
    j["K"] = r.k_mean;
    j["IC"] = r.ic_nats;
    j["CS"] = r.cs_mean;
    j["LP"] = r.lp_ce ? nlohmann::json(*r.lp_ce) : nlohmann::json(nullptr);
    j["CKNNA"] = r.cknna ? nlohmann::json(*r.cknna) : nlohmann::json(nullptr);
    j["n_latent"] = r.n_latent;
    arr.push_back(j);
  }
  return arr.dump(2) + "\n";
}

}  // namespace cedar
