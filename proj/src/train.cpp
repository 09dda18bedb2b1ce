#include "cedar/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "cedar/errors.hpp"
#include "cedar/optim.hpp"

namespace cedar {

namespace {

void validate(const CurriculumSchedule& s) {
  if (s.dim < 1 || s.k_target < 1 || s.k_target > s.k_max ||
      s.k_max > s.dim || s.tau < 1) {
    throw ArgumentError(
        "curriculum schedule requires 1 <= k_target <= k_max <= D and tau >= 1");
  }
}

void validate(const TrainConfig& cfg, const CurriculumSchedule& sched) {
  if (cfg.learning_rate <= 0.0) throw ArgumentError("learning_rate must be > 0");
  if (cfg.batch_size < 1) throw ArgumentError("batch_size must be >= 1");
  if (cfg.total_steps < sched.tau) {
    throw ArgumentError("total_steps must be >= tau");
  }
}

Matrix sign_of(const Matrix& r) {
  return r.unaryExpr([](double x) {
    if (x > 0.0) return 1.0;
    if (x < 0.0) return -1.0;
    return 0.0;
  });
}

}  // namespace

Index k_of_t(const CurriculumSchedule& s, long t) {
  if (t < 0) throw ArgumentError("k_of_t: t must be >= 0");
  const double frac = static_cast<double>(t) / static_cast<double>(s.tau);
  const double raw = static_cast<double>(s.dim) +
                     frac * static_cast<double>(s.k_target - s.dim);
  const auto rounded = static_cast<Index>(std::floor(raw + 0.5));
  return std::clamp(rounded, s.k_target, s.dim);
}

Index sample_k(const CurriculumSchedule& s, std::mt19937_64& rng) {
  std::uniform_int_distribution<Index> dist(1, s.k_max);
  return dist(rng);
}

double l1_batch_loss(const Matrix& z, const Matrix& zhat) {
  if (z.rows() != zhat.rows() || z.cols() != zhat.cols()) {
    throw DimensionError("l1_batch_loss: shape mismatch");
  }
  return (z - zhat).cwiseAbs().rowwise().sum().mean();
}

Matrix loss_grad_A(const CedarModel& m, const Matrix& z, Index k) {
  if (z.cols() != m.dim()) {
    throw DimensionError("loss_grad_A: data dimension mismatch");
  }
  const double n = static_cast<double>(z.rows());
  const Matrix c = z.rowwise() - m.b.transpose();
  const Matrix y = c * m.u.transpose();
  const Matrix h = topk_rows(y, k);
  const Matrix mask = h.unaryExpr([](double x) { return x != 0.0 ? 1.0 : 0.0; });
  // Residual in centered coordinates: the mean offsets cancel, and the
  // lossless regime (U = I, k = D) stays exactly zero.
  const Matrix g = sign_of(h * m.u - c) / n;
  // dL/dU, accumulated over both occurrences of U in U^T Pi_k(U c).
  const Matrix gu =
      h.transpose() * g + (mask.cwiseProduct(g * m.u.transpose())).transpose() * c;
  const Matrix mgrad = expm_grad_adjoint(skew_from(m.a), gu);
  return mgrad - mgrad.transpose();
}

CurriculumSchedule default_schedule(Index dim, const TrainConfig& cfg,
                                    Index k_target, Index k_max) {
  CurriculumSchedule s;
  s.dim = dim;
  s.k_target = std::min(k_target, dim);
  s.k_max = (k_max < 0) ? std::min<Index>(2 * s.k_target - 1, dim) : k_max;
  s.tau = (cfg.tau < 0) ? std::max(1L, (cfg.total_steps * 3L) / 10L) : cfg.tau;
  return s;
}

FitResult fit(const Matrix& z_train, const TrainConfig& cfg,
              CurriculumSchedule sched) {
  if (z_train.rows() == 0) throw DataError("fit: empty training set");
  if (sched.dim == 0) sched.dim = z_train.cols();
  if (sched.dim != z_train.cols()) {
    throw DimensionError("fit: schedule dimension does not match data");
  }
  if (sched.tau < 1) {
    sched.tau = (cfg.tau >= 1) ? cfg.tau
                               : std::max(1L, (cfg.total_steps * 3L) / 10L);
  }
  validate(sched);
  validate(cfg, sched);

  const Index n = z_train.rows();
  const Index d = z_train.cols();
  const Index batch = std::min(cfg.batch_size, n);

  CedarModel model = make_model(Matrix::Zero(d, d), z_train.colwise().mean());

  std::mt19937_64 rng(cfg.seed);
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::size_t cursor = order.size();  // forces a shuffle on first use

  Adam opt(d * d, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2,
           cfg.adam_eps);
  Matrix batch_z(batch, d);
  TrainHistory history;
  history.records.reserve(static_cast<std::size_t>(cfg.total_steps));

  for (long t = 0; t < cfg.total_steps; ++t) {
    for (Index r = 0; r < batch; ++r) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch_z.row(r) = z_train.row(order[cursor++]);
    }
    const Index k = (t <= sched.tau) ? k_of_t(sched, t) : sample_k(sched, rng);

    const Matrix centered = batch_z.rowwise() - model.b.transpose();
    const Matrix code = topk_rows(centered * model.u.transpose(), k);
    const double loss =
        (code * model.u - centered).cwiseAbs().rowwise().sum().mean();
    if (!std::isfinite(loss)) {
      throw NumericError("fit: non-finite loss at step " + std::to_string(t + 1));
    }
    const Matrix grad = loss_grad_A(model, batch_z, k);

    Eigen::Map<Eigen::ArrayXd> param(model.a.data(), model.a.size());
    Eigen::Map<const Eigen::ArrayXd> g(grad.data(), grad.size());
    opt.step(param, g);
    model.u = expm(skew_from(model.a));

    TrainRecord rec;
    rec.step = t + 1;
    rec.k = k;
    rec.loss = loss;
    rec.orth_residual =
        (model.u.transpose() * model.u - Matrix::Identity(d, d))
            .cwiseAbs()
            .maxCoeff();
    history.records.push_back(rec);
  }
  return FitResult{std::move(model), std::move(history)};
}

void write_history_ndjson(const TrainHistory& h, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open history log " + path);
  for (const auto& r : h.records) {
    nlohmann::json j;
    j["step"] = r.step;
    j["k"] = r.k;
    j["loss"] = r.loss;
    if (!std::isnan(r.orth_residual)) j["orth_residual"] = r.orth_residual;
    if (r.dead_latents >= 0) j["dead_latents"] = r.dead_latents;
    os << j.dump() << "\n";
  }
  if (!os) throw IoError("write failed for history log " + path);
}

}  // namespace cedar
