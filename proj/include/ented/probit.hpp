#pragma once

// Probit GP tensor factorization trained by plain stochastic gradients
// (the gptf-probit baseline). q(u) = N(mu, L L') is stored in moment form.

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <span>

#include "ented/factors.hpp"
#include "ented/kernels.hpp"
#include "ented/svgp.hpp"
#include "ented/vgauss.hpp"

namespace ented {

struct ProbitState {
  RbfKernel kernel;
  Matrix B;
  Vector mean;
  Matrix chol;   // lower triangular, S = chol chol'

  Matrix cov() const { return chol * chol.transpose(); }
  double logdet_cov() const {
    double s = 0.0;
    for (Eigen::Index i = 0; i < chol.rows(); ++i) s += std::log(std::abs(chol(i, i)));
    return 2.0 * s;
  }
};

/// log Phi(z), accurate far into the lower tail.
inline double log_ndtr(double z) {
  if (z > -20.0) return std::log(0.5 * std::erfc(-z / std::numbers::sqrt2));
  // Asymptotic expansion of the Mills ratio.
  const double r = 1.0 / (z * z);
  const double series =
      1.0 - r * (1.0 - 3.0 * r * (1.0 - 5.0 * r * (1.0 - 7.0 * r * (1.0 - 9.0 * r))));
  return -0.5 * z * z - std::log(-z) - 0.5 * std::log(2.0 * std::numbers::pi) +
         std::log(series);
}

/// phi(z) / Phi(z).
inline double inv_mills(double z) {
  const double log_phi = -0.5 * z * z - 0.5 * std::log(2.0 * std::numbers::pi);
  return std::exp(log_phi - log_ndtr(z));
}

inline double ndtr(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

/// Stochastic lower bound of the probit model:
/// scale * sum_n [x log Phi(m_n / sqrt 2) + (1 - x) log Phi(-m_n / sqrt 2) - ktilde_n / 2
/// - kappa_n' S kappa_n / 2] - KL(q(u) || p(u)) - |Z|^2 / 2, with m_n = kappa_n' mu.
/// Fills gradients for Z, B, mu, L (and log bandwidth) when `grad` is non-null.
inline ElboValue probit_elbo_eval(const ProbitState& state, const SvgpGeometry& g,
                                  const FactorSet& factors, std::span<const std::int64_t> indices,
                                  std::span<const std::int64_t> values, double scale,
                                  ModelGradient* grad) {
  const Eigen::Index s = g.M.rows();
  if (static_cast<Eigen::Index>(values.size()) != s)
    throw ConfigError("probit_elbo: value/batch length mismatch");
  const MomentGaussian q{state.mean, state.cov()};
  const Vector m = g.kappa * q.mean;
  const Vector quad = detail::rowwise_quad(g.kappa, q.cov);

  ElboValue v;
  double acc = 0.0;
  for (Eigen::Index n = 0; n < s; ++n) {
    const auto x = values[static_cast<std::size_t>(n)];
    if (x != 0 && x != 1) throw DataError("probit model needs binary observations");
    const double z = m(n) / std::numbers::sqrt2;
    acc += (x == 1 ? log_ndtr(z) : log_ndtr(-z)) - 0.5 * g.ktilde(n) - 0.5 * quad(n);
  }
  v.data = scale * acc;
  v.kl_u = kl_to_prior(q, state.logdet_cov(), g.Kbb_factor, &g.Kbb_inv);
  v.log_prior = factors.log_prior();
  if (!grad) return v;

  Vector gm(s);
  for (Eigen::Index n = 0; n < s; ++n) {
    const double z = m(n) / std::numbers::sqrt2;
    const double d = values[static_cast<std::size_t>(n)] == 1 ? inv_mills(z) : -inv_mills(-z);
    gm(n) = scale * d / std::numbers::sqrt2;
  }
  const Vector gq = Vector::Constant(s, -0.5 * scale);

  Matrix gKmb = Matrix::Zero(g.Kmb.rows(), g.Kmb.cols());
  Matrix gKbb = Matrix::Zero(g.Kbb.rows(), g.Kbb.cols());
  detail::svgp_marginal_backward(g, q, gm, gq, gq, gKmb, gKbb);
  detail::neg_kl_prior_backward(q, g.Kbb_inv, gKbb);

  grad->probit_mean = g.kappa.transpose() * gm - g.Kbb_inv * q.mean;
  // dELBO/dS without the log|S| term, which is handled through diag(L) below.
  Matrix gS = -0.5 * scale * (g.kappa.transpose() * g.kappa) - 0.5 * g.Kbb_inv;
  Matrix gL = (2.0 * gS * state.chol).triangularView<Eigen::Lower>();
  for (Eigen::Index i = 0; i < gL.rows(); ++i) gL(i, i) += 1.0 / state.chol(i, i);
  grad->probit_chol = std::move(gL);

  grad->factors = factors.zeros_like();
  grad->B = Matrix::Zero(state.B.rows(), state.B.cols());
  grad->H.resize(0, state.B.cols());
  grad->log_bandwidth = 0.0;
  Matrix gM = Matrix::Zero(g.M.rows(), g.M.cols());
  gram_backward(state.kernel, g.M, state.B, g.Kmb, gKmb, gM, grad->B, &grad->log_bandwidth);
  gram_backward(state.kernel, state.B, state.B, g.Kbb, gKbb, grad->B, grad->B,
                &grad->log_bandwidth);
  scatter_input_grad(gM, indices, grad->factors);
  for (std::size_t d = 0; d < factors.order(); ++d) grad->factors.modes[d] -= factors.modes[d];
  return v;
}

inline ElboValue probit_elbo_terms(const ProbitState& state, const FactorSet& factors,
                                   const EntryBatch& batch, ModelGradient* grad = nullptr) {
  const Matrix M = assemble_inputs(factors, batch.indices);
  const auto g = svgp_geometry(state.kernel, state.B, M);
  return probit_elbo_eval(state, g, factors, batch.indices, batch.values, batch.scale, grad);
}

inline double probit_elbo(const ProbitState& state, const FactorSet& factors,
                          const EntryBatch& batch) {
  return probit_elbo_terms(state, factors, batch).total();
}

}  // namespace ented
