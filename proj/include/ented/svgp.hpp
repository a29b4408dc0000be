#pragma once

// Sparse variational GP tensor factorization with Polya-Gamma augmentation
// (the gptf-pg model): geometry, closed-form local updates, the stochastic
// ELBO with gradients for Z and B, and natural-gradient targets for q(u).

#include <Eigen/Dense>

#include <span>

#include "ented/factors.hpp"
#include "ented/kernels.hpp"
#include "ented/vgauss.hpp"

namespace ented {

struct SvgpState {
  RbfKernel kernel;
  Matrix B;             // p x (D R) inducing inputs
  NaturalGaussian qu;   // q(u)
  LikelihoodConfig lik;
};

/// Kernel quantities for one batch of inputs M against inducing inputs B.
struct SvgpGeometry {
  Matrix M;
  Matrix Kmb;
  Matrix Kbb;
  PsdFactor Kbb_factor;
  Matrix Kbb_inv;
  Matrix kappa;                       // rows kappa_n = (K_MB K_BB^-1)_n
  Vector ktilde;                      // diag(K_MM - K_MB K_BB^-1 K_BM), clamped at 0
  Eigen::Array<bool, Eigen::Dynamic, 1> ktilde_active;  // false where clamped
};

inline SvgpGeometry svgp_geometry(const RbfKernel& kernel, const Matrix& B, const Matrix& M) {
  SvgpGeometry g;
  g.M = M;
  g.Kmb = gram(kernel, M, B);
  g.Kbb = gram(kernel, B, B);
  g.Kbb_factor = chol_psd(g.Kbb);
  g.Kbb_inv = g.Kbb_factor.inverse();
  detail::symmetrize(g.Kbb_inv);
  g.kappa = g.Kbb_factor.solve(g.Kmb.transpose()).transpose();
  const Vector raw = Vector::Ones(M.rows()) - detail::rowwise_dot(g.kappa, g.Kmb);
  g.ktilde_active = raw.array() > 0.0;
  g.ktilde = detail::clamp_nonneg(raw);
  return g;
}

/// c_n = sqrt(ktilde_n + kappa_n' S kappa_n + (kappa_n' mu)^2).
inline Vector pg_local_update(const SvgpGeometry& g, const MomentGaussian& qu) {
  const Vector m = g.kappa * qu.mean;
  const Vector s = detail::rowwise_quad(g.kappa, qu.cov);
  return (g.ktilde + s + m.cwiseProduct(m)).cwiseMax(0.0).cwiseSqrt();
}

inline Vector pg_local_update(const SvgpState& state, const SvgpGeometry& g) {
  return pg_local_update(g, to_moment(state.qu));
}

namespace detail {

// sum over the batch of chi m - theta A / 2 + c^2 theta / 2 - b log cosh(c / 2), with
// A = ktilde + s + m^2 the second moment of f_n.
inline double pg_data_term(const PGSites& sites, const Vector& mean_f, const Vector& second_moment) {
  double acc = 0.0;
  for (Eigen::Index n = 0; n < sites.size(); ++n) {
    const double c = sites.c(n), th = sites.theta(n);
    acc += sites.chi(n) * mean_f(n) - 0.5 * th * second_moment(n) + 0.5 * c * c * th -
           sites.b(n) * log_cosh(0.5 * c);
  }
  return acc;
}

// Adjoint of the SVGP marginal q(f_n) = N(kappa_n' mu, ktilde_n + kappa_n' S kappa_n)
// with respect to K_MB and K_BB, given per-entry adjoints of the mean (gm), the
// quadratic term (gs) and ktilde (gk).
inline void svgp_marginal_backward(const SvgpGeometry& g, const MomentGaussian& q,
                                   const Vector& gm, const Vector& gs, const Vector& gk,
                                   Matrix& gKmb, Matrix& gKbb,
                                   const Matrix* extra_g_kappa = nullptr) {
  const Vector gk_act = g.ktilde_active.select(gk, Vector::Zero(gk.size()));
  Matrix g_kappa = gm * q.mean.transpose();
  if (extra_g_kappa) g_kappa += *extra_g_kappa;
  g_kappa.noalias() += 2.0 * gs.asDiagonal() * (g.kappa * q.cov);
  g_kappa.noalias() -= gk_act.asDiagonal() * g.Kmb;
  gKmb.noalias() -= gk_act.asDiagonal() * g.kappa;
  gKmb.noalias() += g_kappa * g.Kbb_inv;
  gKbb.noalias() -= (g.kappa.transpose() * g_kappa) * g.Kbb_inv;
}

// Adds the adjoint of -KL(q || N(0, K)) with respect to K, given K^-1.
inline void neg_kl_prior_backward(const MomentGaussian& q, const Matrix& Kinv, Matrix& gK) {
  const Vector w = Kinv * q.mean;
  gK.noalias() -= 0.5 * Kinv;
  gK.noalias() += 0.5 * (Kinv * q.cov * Kinv);
  gK.noalias() += 0.5 * w * w.transpose();
}

}  // namespace detail

/// Stochastic ELBO of the gptf-pg model for one batch, using precomputed
/// geometry and moment-form q(u). Fills `grad` (w.r.t. Z, B and log bandwidth)
/// when non-null; q(u) and the sites are held fixed.
inline ElboValue pg_elbo_eval(const SvgpState& state, const SvgpGeometry& g,
                              const MomentGaussian& qu, double logdet_cov_u,
                              const FactorSet& factors, std::span<const std::int64_t> indices,
                              double scale, const PGSites& sites, ModelGradient* grad) {
  if (sites.size() != g.M.rows()) throw ConfigError("pg_elbo: site/batch length mismatch");
  const Vector m = g.kappa * qu.mean;
  const Vector s = detail::rowwise_quad(g.kappa, qu.cov);
  const Vector second = g.ktilde + s + m.cwiseProduct(m);

  ElboValue v;
  v.data = scale * detail::pg_data_term(sites, m, second);
  v.kl_u = kl_to_prior(qu, logdet_cov_u, g.Kbb_factor, &g.Kbb_inv);
  v.log_prior = factors.log_prior();
  if (!grad) return v;

  const Vector gm = scale * (sites.chi - sites.theta.cwiseProduct(m));
  const Vector gq = -0.5 * scale * sites.theta;
  Matrix gKmb = Matrix::Zero(g.Kmb.rows(), g.Kmb.cols());
  Matrix gKbb = Matrix::Zero(g.Kbb.rows(), g.Kbb.cols());
  detail::svgp_marginal_backward(g, qu, gm, gq, gq, gKmb, gKbb);
  detail::neg_kl_prior_backward(qu, g.Kbb_inv, gKbb);

  grad->factors = factors.zeros_like();
  grad->B = Matrix::Zero(state.B.rows(), state.B.cols());
  grad->log_bandwidth = 0.0;
  Matrix gM = Matrix::Zero(g.M.rows(), g.M.cols());
  gram_backward(state.kernel, g.M, state.B, g.Kmb, gKmb, gM, grad->B, &grad->log_bandwidth);
  gram_backward(state.kernel, state.B, state.B, g.Kbb, gKbb, grad->B, grad->B,
                &grad->log_bandwidth);
  scatter_input_grad(gM, indices, grad->factors);
  for (std::size_t d = 0; d < factors.order(); ++d) grad->factors.modes[d] -= factors.modes[d];
  return v;
}

/// Full-information convenience form: builds geometry and moments, returns the ELBO.
inline ElboValue pg_elbo_terms(const SvgpState& state, const FactorSet& factors,
                               const EntryBatch& batch, const PGSites& sites,
                               ModelGradient* grad = nullptr) {
  const Matrix M = assemble_inputs(factors, batch.indices);
  const auto g = svgp_geometry(state.kernel, state.B, M);
  const auto qu = to_moment(state.qu);
  return pg_elbo_eval(state, g, qu, natural_logdet_cov(state.qu), factors, batch.indices,
                      batch.scale, sites, grad);
}

inline double pg_elbo(const SvgpState& state, const FactorSet& factors, const EntryBatch& batch,
                      const PGSites& sites) {
  return pg_elbo_terms(state, factors, batch, sites).total();
}

/// NG fixed point for q(u): eta1 = (N/s) sum chi_n kappa_n,
/// eta2 = -1/2 (K_BB^-1 + (N/s) sum theta_n kappa_n kappa_n').
inline NaturalGaussian pg_ng_targets(const SvgpGeometry& g, double scale, const PGSites& sites) {
  NaturalGaussian t;
  t.eta1 = scale * (g.kappa.transpose() * sites.chi);
  Matrix prec = g.Kbb_inv;
  prec.noalias() += scale * (g.kappa.transpose() * sites.theta.asDiagonal() * g.kappa);
  detail::symmetrize(prec);
  t.eta2 = -0.5 * prec;
  return t;
}

inline NaturalGaussian pg_ng_targets(const SvgpState& state, const SvgpGeometry& g,
                                     const EntryBatch& batch, const PGSites& sites) {
  (void)state;
  return pg_ng_targets(g, batch.scale, sites);
}

}  // namespace ented
