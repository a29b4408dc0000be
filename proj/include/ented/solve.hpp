#pragma once

// Orthogonally decoupled sparse variational GP tensor factorization (the
// ented model). f = K_MB K_BB^-1 u + f_perp, where f_perp lives in the
// orthogonal complement of span{k(B, .)} and is summarized by a second set of
// inducing points v at inputs H.
//
// Notation used below, for a batch of inputs M:
//   C_MH = K_MH - K_MB K_BB^-1 K_BH,   C_HH = K_HH - K_HB K_BB^-1 K_BH,
//   kappa_u = K_MB K_BB^-1,            kappa_v = C_MH C_HH^-1,
//   mean(f_perp) = kappa_v mu_v,
//   var(f_perp)  = ktilde + diag(kappa_v (S_v - C_HH) kappa_v').
// The prior of v is N(0, C_HH), the marginal of f_perp at H.

#include <Eigen/Dense>

#include <span>
#include <utility>

#include "ented/factors.hpp"
#include "ented/kernels.hpp"
#include "ented/svgp.hpp"
#include "ented/vgauss.hpp"

namespace ented {

struct SolveState {
  RbfKernel kernel;
  Matrix B;             // p_u x (D R)
  Matrix H;             // p_v x (D R); p_v = 0 reduces to the gptf-pg model
  NaturalGaussian qu;
  NaturalGaussian qv;
  LikelihoodConfig lik;
};

struct SolveGeometry {
  SvgpGeometry u;
  Matrix Kmh;
  Matrix Khh;
  Matrix Kbh;
  Matrix P;           // K_BB^-1 K_BH
  Matrix Chh;
  PsdFactor Chh_factor;
  Matrix Chh_inv;
  Matrix Cmh;
  Matrix kappa_v;
};

/// Batch moments of q(f_perp): mean, diagonal variance (clamped at 0).
struct FperpMoments {
  Vector mean;
  Vector var;
  Eigen::Array<bool, Eigen::Dynamic, 1> active;
};

inline SolveGeometry solve_geometry(const RbfKernel& kernel, const Matrix& B, const Matrix& H,
                                    const Matrix& M) {
  SolveGeometry g;
  g.u = svgp_geometry(kernel, B, M);
  g.Kmh = gram(kernel, M, H);
  g.Khh = gram(kernel, H, H);
  g.Kbh = gram(kernel, B, H);
  g.P = g.u.Kbb_factor.solve(g.Kbh);
  g.Chh = g.Khh - g.Kbh.transpose() * g.P;
  detail::symmetrize(g.Chh);
  // C_HH is a Schur complement and may be near zero; jitter relative to the
  // unit kernel amplitude rather than its own trace.
  g.Chh_factor = chol_psd(g.Chh, 1.0);
  g.Chh_inv = g.Chh_factor.inverse();
  detail::symmetrize(g.Chh_inv);
  g.Cmh = g.Kmh - g.u.kappa * g.Kbh;
  g.kappa_v = g.Chh_factor.solve(g.Cmh.transpose()).transpose();
  return g;
}

inline FperpMoments fperp_moments(const SolveGeometry& g, const MomentGaussian& qv) {
  FperpMoments f;
  f.mean = g.kappa_v * qv.mean;
  const Vector raw = g.u.ktilde + detail::rowwise_quad(g.kappa_v, qv.cov) -
                     detail::rowwise_dot(g.kappa_v, g.Cmh);
  f.active = raw.array() > 0.0;
  f.var = detail::clamp_nonneg(raw);
  return f;
}

/// c_n = sqrt(mu_f,n^2 + var(f_perp)_n + kappa_u,n' S_u kappa_u,n), mu_f = mean(f_perp) + kappa_u mu_u.
inline Vector solve_local_update(const SolveGeometry& g, const FperpMoments& fp,
                                 const MomentGaussian& qu) {
  const Vector mean_f = fp.mean + g.u.kappa * qu.mean;
  const Vector su = detail::rowwise_quad(g.u.kappa, qu.cov);
  return (mean_f.cwiseProduct(mean_f) + fp.var + su).cwiseMax(0.0).cwiseSqrt();
}

inline Vector solve_local_update(const SolveState& state, const SolveGeometry& g) {
  return solve_local_update(g, fperp_moments(g, to_moment(state.qv)), to_moment(state.qu));
}

/// Stochastic ELBO of the ented model for one batch; fills `grad` (Z, B, H,
/// log bandwidth) when non-null with q(u), q(v) and the sites held fixed.
inline ElboValue solve_elbo_eval(const SolveState& state, const SolveGeometry& g,
                                 const MomentGaussian& qu, double logdet_cov_u,
                                 const MomentGaussian& qv, double logdet_cov_v,
                                 const FperpMoments& fp, const FactorSet& factors,
                                 std::span<const std::int64_t> indices, double scale,
                                 const PGSites& sites, ModelGradient* grad) {
  const SvgpGeometry& gu = g.u;
  if (sites.size() != gu.M.rows()) throw ConfigError("solve_elbo: site/batch length mismatch");
  const Vector mu = gu.kappa * qu.mean;
  const Vector su = detail::rowwise_quad(gu.kappa, qu.cov);
  const Vector mean_f = fp.mean + mu;
  const Vector second = mean_f.cwiseProduct(mean_f) + fp.var + su;

  ElboValue v;
  v.data = scale * detail::pg_data_term(sites, mean_f, second);
  v.kl_u = kl_to_prior(qu, logdet_cov_u, gu.Kbb_factor, &gu.Kbb_inv);
  v.kl_v = kl_to_prior(qv, logdet_cov_v, g.Chh_factor, &g.Chh_inv);
  v.log_prior = factors.log_prior();
  if (!grad) return v;

  const Eigen::Index s = gu.M.rows();
  const Vector g_mean = scale * (sites.chi - sites.theta.cwiseProduct(mean_f));
  const Vector g_quad = -0.5 * scale * sites.theta;
  const Vector g_var = fp.active.select(g_quad, Vector::Zero(s));

  // var(f_perp) = ktilde + rowquad(kappa_v, S_v) - rowdot(kappa_v, C_MH); mean = kappa_v mu_v.
  Matrix g_kv = g_mean * qv.mean.transpose();
  g_kv.noalias() += 2.0 * g_var.asDiagonal() * (g.kappa_v * qv.cov);
  g_kv.noalias() -= g_var.asDiagonal() * g.Cmh;
  Matrix g_Cmh = -(g_var.asDiagonal() * g.kappa_v);

  // kappa_v = C_MH C_HH^-1
  g_Cmh.noalias() += g_kv * g.Chh_inv;
  Matrix g_Chh = -(g.kappa_v.transpose() * g_kv) * g.Chh_inv;
  detail::neg_kl_prior_backward(qv, g.Chh_inv, g_Chh);

  // C_HH = K_HH - K_BH' K_BB^-1 K_BH
  const Matrix& g_Khh = g_Chh;
  Matrix g_Kbh = -(g.P * (g_Chh + g_Chh.transpose()));
  Matrix g_Kbb = g.P * g_Chh * g.P.transpose();

  // C_MH = K_MH - kappa_u K_BH
  const Matrix& g_Kmh = g_Cmh;
  const Matrix g_ku_extra = -(g_Cmh * g.Kbh.transpose());
  g_Kbh.noalias() -= gu.kappa.transpose() * g_Cmh;

  Matrix g_Kmb = Matrix::Zero(gu.Kmb.rows(), gu.Kmb.cols());
  detail::svgp_marginal_backward(gu, qu, g_mean, g_quad, g_var, g_Kmb, g_Kbb, &g_ku_extra);
  detail::neg_kl_prior_backward(qu, gu.Kbb_inv, g_Kbb);

  grad->factors = factors.zeros_like();
  grad->B = Matrix::Zero(state.B.rows(), state.B.cols());
  grad->H = Matrix::Zero(state.H.rows(), state.H.cols());
  grad->log_bandwidth = 0.0;
  double* glb = &grad->log_bandwidth;
  Matrix gM = Matrix::Zero(gu.M.rows(), gu.M.cols());
  gram_backward(state.kernel, gu.M, state.B, gu.Kmb, g_Kmb, gM, grad->B, glb);
  gram_backward(state.kernel, state.B, state.B, gu.Kbb, g_Kbb, grad->B, grad->B, glb);
  gram_backward(state.kernel, gu.M, state.H, g.Kmh, g_Kmh, gM, grad->H, glb);
  gram_backward(state.kernel, state.H, state.H, g.Khh, g_Khh, grad->H, grad->H, glb);
  gram_backward(state.kernel, state.B, state.H, g.Kbh, g_Kbh, grad->B, grad->H, glb);
  scatter_input_grad(gM, indices, grad->factors);
  for (std::size_t d = 0; d < factors.order(); ++d) grad->factors.modes[d] -= factors.modes[d];
  return v;
}

inline ElboValue solve_elbo_terms(const SolveState& state, const FactorSet& factors,
                                  const EntryBatch& batch, const PGSites& sites,
                                  ModelGradient* grad = nullptr) {
  const Matrix M = assemble_inputs(factors, batch.indices);
  const auto g = solve_geometry(state.kernel, state.B, state.H, M);
  const auto qu = to_moment(state.qu);
  const auto qv = to_moment(state.qv);
  const auto fp = fperp_moments(g, qv);
  const double ldv = state.qv.dim() ? natural_logdet_cov(state.qv) : 0.0;
  return solve_elbo_eval(state, g, qu, natural_logdet_cov(state.qu), qv, ldv, fp, factors,
                         batch.indices, batch.scale, sites, grad);
}

inline double solve_elbo(const SolveState& state, const FactorSet& factors,
                         const EntryBatch& batch, const PGSites& sites) {
  return solve_elbo_terms(state, factors, batch, sites).total();
}

/// q(u) target: eta1 = (N/s) sum (chi_n - theta_n mean(f_perp)_n) kappa_u,n,
/// eta2 = -1/2 (K_BB^-1 + (N/s) sum theta_n kappa_u,n kappa_u,n').
inline NaturalGaussian solve_ng_target_u(const SolveGeometry& g, const FperpMoments& fp,
                                         double scale, const PGSites& sites) {
  NaturalGaussian t;
  t.eta1 = scale * (g.u.kappa.transpose() * (sites.chi - sites.theta.cwiseProduct(fp.mean)));
  Matrix prec = g.u.Kbb_inv;
  prec.noalias() += scale * (g.u.kappa.transpose() * sites.theta.asDiagonal() * g.u.kappa);
  detail::symmetrize(prec);
  t.eta2 = -0.5 * prec;
  return t;
}

/// q(v) target: eta1 = (N/s) sum (chi_n - theta_n kappa_u,n' mu_u) kappa_v,n,
/// eta2 = -1/2 (C_HH^-1 + (N/s) sum theta_n kappa_v,n kappa_v,n').
inline NaturalGaussian solve_ng_target_v(const SolveGeometry& g, const MomentGaussian& qu,
                                         double scale, const PGSites& sites) {
  NaturalGaussian t;
  const Vector mu = g.u.kappa * qu.mean;
  t.eta1 = scale * (g.kappa_v.transpose() * (sites.chi - sites.theta.cwiseProduct(mu)));
  Matrix prec = g.Chh_inv;
  prec.noalias() += scale * (g.kappa_v.transpose() * sites.theta.asDiagonal() * g.kappa_v);
  detail::symmetrize(prec);
  t.eta2 = -0.5 * prec;
  return t;
}

/// Both targets evaluated at the current state.
inline std::pair<NaturalGaussian, NaturalGaussian> solve_ng_targets(const SolveState& state,
                                                                    const SolveGeometry& g,
                                                                    const EntryBatch& batch,
                                                                    const PGSites& sites) {
  const auto qu = to_moment(state.qu);
  const auto fp = fperp_moments(g, to_moment(state.qv));
  return {solve_ng_target_u(g, fp, batch.scale, sites),
          solve_ng_target_v(g, qu, batch.scale, sites)};
}

}  // namespace ented
