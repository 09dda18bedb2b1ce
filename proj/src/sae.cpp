#include "cedar/sae.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include "binio.hpp"
#include "cedar/errors.hpp"
#include "cedar/optim.hpp"

namespace cedar {

namespace {

constexpr char kSaeMagic[4] = {'C', 'S', 'A', 'E'};
constexpr std::uint32_t kSaeVersion = 1;

Matrix relu(const Matrix& p) { return p.cwiseMax(0.0); }

// Keep the top (k * N) entries of the batch; remaining entries go to zero.
// Ties resolve toward the lower row-major flat index.
Matrix batch_topk_mask_apply(const Matrix& a, Index k) {
  const auto budget = static_cast<std::size_t>(k) *
                      static_cast<std::size_t>(a.rows());
  std::vector<std::pair<double, Index>> entries;
  entries.reserve(static_cast<std::size_t>(a.size()));
  for (Index i = 0; i < a.rows(); ++i) {
    for (Index j = 0; j < a.cols(); ++j) {
      if (a(i, j) > 0.0) entries.emplace_back(a(i, j), i * a.cols() + j);
    }
  }
  auto better = [](const std::pair<double, Index>& lhs,
                   const std::pair<double, Index>& rhs) {
    if (lhs.first != rhs.first) return lhs.first > rhs.first;
    return lhs.second < rhs.second;
  };
  if (entries.size() > budget) {
    std::nth_element(entries.begin(), entries.begin() + budget, entries.end(),
                     better);
    entries.resize(budget);
  }
  Matrix h = Matrix::Zero(a.rows(), a.cols());
  for (const auto& [value, flat] : entries) {
    h(flat / a.cols(), flat % a.cols()) = value;
  }
  return h;
}

void renormalize_decoder(Matrix& w_dec) {
  for (Index j = 0; j < w_dec.cols(); ++j) {
    const double norm = w_dec.col(j).norm();
    if (norm > 0.0) w_dec.col(j) /= norm;
  }
}

}  // namespace

std::string to_string(SaeVariant v) {
  switch (v) {
    case SaeVariant::relu: return "relu";
    case SaeVariant::topk: return "topk";
    case SaeVariant::batchtopk: return "batchtopk";
  }
  return "unknown";
}

SaeVariant sae_variant_from_string(const std::string& s) {
  if (s == "relu") return SaeVariant::relu;
  if (s == "topk") return SaeVariant::topk;
  if (s == "batchtopk") return SaeVariant::batchtopk;
  throw ArgumentError("unknown SAE variant: " + s);
}

Matrix Standardizer::apply(const Matrix& z) const {
  if (z.cols() != mu.size()) {
    throw DimensionError("Standardizer::apply: dimension mismatch");
  }
  return scale * (z.rowwise() - mu.transpose());
}

Matrix Standardizer::inverse(const Matrix& x) const {
  if (x.cols() != mu.size()) {
    throw DimensionError("Standardizer::inverse: dimension mismatch");
  }
  return (x / scale).rowwise() + mu.transpose();
}

Standardizer standardize_fit(const Matrix& z) {
  if (z.rows() < 1) throw DataError("standardize_fit: empty dataset");
  Standardizer s;
  s.mu = z.colwise().mean();
  const double mean_norm =
      (z.rowwise() - s.mu.transpose()).rowwise().norm().mean();
  if (!(mean_norm > 0.0)) {
    throw DataError("standardize_fit: degenerate dataset (all rows equal)");
  }
  s.scale = std::sqrt(static_cast<double>(z.cols())) / mean_norm;
  return s;
}

SaeForward sae_forward(const SaeModel& m, const Matrix& x) {
  if (x.cols() != m.input_dim()) {
    throw DimensionError("sae_forward: input dimension mismatch");
  }
  const Matrix xc = x.rowwise() - m.b_pre.transpose();
  const Matrix pre = (xc * m.w_enc.transpose()).rowwise() + m.b_enc.transpose();
  Matrix h = relu(pre);
  switch (m.variant) {
    case SaeVariant::relu:
      break;
    case SaeVariant::topk:
      h = topk_rows(h, m.k);
      break;
    case SaeVariant::batchtopk:
      h = batch_topk_mask_apply(h, m.k);
      break;
  }
  Matrix xhat = (h * m.w_dec.transpose()).rowwise() + m.b_pre.transpose();
  return SaeForward{std::move(h), std::move(xhat)};
}

double sae_loss(const SaeModel& m, const Matrix& x, const Matrix& h,
                const Matrix& xhat) {
  if (x.rows() != xhat.rows() || x.cols() != xhat.cols() ||
      h.rows() != x.rows()) {
    throw DimensionError("sae_loss: shape mismatch");
  }
  double loss = (x - xhat).rowwise().squaredNorm().mean();
  if (m.variant == SaeVariant::relu) {
    loss += m.lambda * h.cwiseAbs().rowwise().sum().mean();
  }
  return loss;
}

SaeFitResult train_sae(const Matrix& z, const SaeConfig& cfg) {
  if (z.rows() == 0) throw DataError("train_sae: empty training set");
  const Index d = z.cols();
  if (cfg.input_dim != 0 && cfg.input_dim != d) {
    throw DimensionError("train_sae: config input_dim does not match data");
  }
  if (cfg.expansion < 1) throw ArgumentError("train_sae: expansion must be >= 1");
  const Index m_latent = cfg.expansion * d;
  if (cfg.variant != SaeVariant::relu &&
      (cfg.k < 1 || cfg.k > m_latent)) {
    throw ArgumentError("train_sae: k must be in [1, latent dim]");
  }
  if (cfg.variant == SaeVariant::relu && cfg.lambda < 0.0) {
    throw ArgumentError("train_sae: lambda must be >= 0");
  }

  const Standardizer standardizer = standardize_fit(z);
  const Matrix x_all = standardizer.apply(z);
  const Index n = x_all.rows();
  const Index batch = std::min(cfg.train.batch_size, n);

  SaeModel model;
  model.variant = cfg.variant;
  model.k = cfg.k;
  model.lambda = cfg.lambda;

  std::mt19937_64 rng(cfg.train.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  model.w_dec.resize(d, m_latent);
  for (Index i = 0; i < d; ++i)
    for (Index j = 0; j < m_latent; ++j) model.w_dec(i, j) = gauss(rng);
  renormalize_decoder(model.w_dec);
  model.w_enc = model.w_dec.transpose();
  model.b_enc = Vector::Zero(m_latent);
  model.b_pre = Vector::Zero(d);

  const auto& tc = cfg.train;
  Adam opt_wenc(model.w_enc.size(), tc.learning_rate, tc.adam_beta1,
                tc.adam_beta2, tc.adam_eps);
  Adam opt_benc(m_latent, tc.learning_rate, tc.adam_beta1, tc.adam_beta2,
                tc.adam_eps);
  Adam opt_wdec(model.w_dec.size(), tc.learning_rate, tc.adam_beta1,
                tc.adam_beta2, tc.adam_eps);
  Adam opt_bpre(d, tc.learning_rate, tc.adam_beta1, tc.adam_beta2, tc.adam_eps);

  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::size_t cursor = order.size();

  Matrix batch_x(batch, d);
  TrainHistory history;
  history.records.reserve(static_cast<std::size_t>(tc.total_steps));

  for (long t = 0; t < tc.total_steps; ++t) {
    for (Index r = 0; r < batch; ++r) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch_x.row(r) = x_all.row(order[cursor++]);
    }

    const Matrix xc = batch_x.rowwise() - model.b_pre.transpose();
    const auto [h, xhat] = sae_forward(model, batch_x);
    const double loss = sae_loss(model, batch_x, h, xhat);
    if (!std::isfinite(loss)) {
      throw NumericError("train_sae: non-finite loss at step " +
                         std::to_string(t + 1));
    }

    const double inv_n = 1.0 / static_cast<double>(batch);
    const Matrix d_xhat = 2.0 * inv_n * (xhat - batch_x);
    Matrix d_h = d_xhat * model.w_dec;
    if (model.variant == SaeVariant::relu && model.lambda > 0.0) {
      d_h += (model.lambda * inv_n) *
             h.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; });
    }
    // Straight-through the sparsity mask; ReLU gates the rest.
    const Matrix d_pre =
        d_h.cwiseProduct(h.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; }));

    const Matrix g_wdec = d_xhat.transpose() * h;
    const Matrix g_wenc = d_pre.transpose() * xc;
    const Vector g_benc = d_pre.colwise().sum().transpose();
    const Vector g_bpre = d_xhat.colwise().sum().transpose() -
                          (d_pre * model.w_enc).colwise().sum().transpose();

    Eigen::Map<Eigen::ArrayXd> p_wenc(model.w_enc.data(), model.w_enc.size());
    Eigen::Map<const Eigen::ArrayXd> gm_wenc(g_wenc.data(), g_wenc.size());
    opt_wenc.step(p_wenc, gm_wenc);
    Eigen::Map<Eigen::ArrayXd> p_benc(model.b_enc.data(), model.b_enc.size());
    opt_benc.step(p_benc, g_benc.array());
    Eigen::Map<Eigen::ArrayXd> p_wdec(model.w_dec.data(), model.w_dec.size());
    Eigen::Map<const Eigen::ArrayXd> gm_wdec(g_wdec.data(), g_wdec.size());
    opt_wdec.step(p_wdec, gm_wdec);
    Eigen::Map<Eigen::ArrayXd> p_bpre(model.b_pre.data(), model.b_pre.size());
    opt_bpre.step(p_bpre, g_bpre.array());

    renormalize_decoder(model.w_dec);

    Index dead = 0;
    for (Index j = 0; j < m_latent; ++j) {
      if ((h.col(j).array() == 0.0).all()) ++dead;
    }

    TrainRecord rec;
    rec.step = t + 1;
    rec.k = (model.variant == SaeVariant::relu) ? 0 : model.k;
    rec.loss = loss;
    rec.orth_residual = std::numeric_limits<double>::quiet_NaN();
    rec.dead_latents = dead;
    history.records.push_back(rec);
  }
  return SaeFitResult{std::move(model), standardizer, std::move(history)};
}

void save_sae(const SaeModel& m, const Standardizer& s,
              const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("save_sae: cannot open " + path);
  binio::write_magic(os, kSaeMagic);
  binio::write_u32(os, kSaeVersion);
  binio::write_u32(os, static_cast<std::uint32_t>(m.variant));
  binio::write_u32(os, static_cast<std::uint32_t>(m.input_dim()));
  binio::write_u32(os, static_cast<std::uint32_t>(m.latent_dim()));
  binio::write_u32(os, static_cast<std::uint32_t>(m.k));
  binio::write_f64(os, m.lambda);
  binio::write_matrix(os, m.w_enc);
  binio::write_vector(os, m.b_enc);
  binio::write_matrix(os, m.w_dec);
  binio::write_vector(os, m.b_pre);
  binio::write_vector(os, s.mu);
  binio::write_f64(os, s.scale);
  if (!os) throw IoError("save_sae: write failed for " + path);
}

std::pair<SaeModel, Standardizer> load_sae(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("load_sae: cannot open " + path);
  binio::expect_magic(is, kSaeMagic, "CSAE model");
  const auto version = binio::read_u32(is, "version");
  if (version != kSaeVersion) {
    throw FormatError("load_sae: unsupported version " + std::to_string(version));
  }
  const auto variant_tag = binio::read_u32(is, "variant tag");
  if (variant_tag > 2) {
    throw FormatError("load_sae: unknown variant tag " +
                      std::to_string(variant_tag));
  }
  SaeModel m;
  m.variant = static_cast<SaeVariant>(variant_tag);
  const auto d = static_cast<Index>(binio::read_u32(is, "input dim"));
  const auto latent = static_cast<Index>(binio::read_u32(is, "latent dim"));
  m.k = static_cast<Index>(binio::read_u32(is, "k"));
  m.lambda = binio::read_f64(is, "lambda");
  m.w_enc = binio::read_matrix(is, latent, d, "W_enc payload");
  m.b_enc = binio::read_vector(is, latent, "b_enc payload");
  m.w_dec = binio::read_matrix(is, d, latent, "W_dec payload");
  m.b_pre = binio::read_vector(is, d, "b_pre payload");
  Standardizer s;
  s.mu = binio::read_vector(is, d, "mu payload");
  s.scale = binio::read_f64(is, "scale");
  if (!(s.scale > 0.0) || !std::isfinite(s.scale)) {
    throw FormatError("load_sae: invalid standardizer scale");
  }
  return {std::move(m), std::move(s)};
}

}  // namespace cedar
