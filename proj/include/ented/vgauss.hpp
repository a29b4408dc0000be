#pragma once

// Multivariate Gaussians in natural (eta1 = S^-1 mu, eta2 = -S^-1 / 2) and
// moment form, KL to a zero-mean prior, and natural-gradient steps.

#include <Eigen/Dense>

#include <cmath>
#include <string>

#include "ented/errors.hpp"
#include "ented/kernels.hpp"

namespace ented {

struct MomentGaussian {
  Vector mean;
  Matrix cov;

  Eigen::Index dim() const { return mean.size(); }
};

struct NaturalGaussian {
  Vector eta1;
  Matrix eta2;

  Eigen::Index dim() const { return eta1.size(); }
};

namespace detail {

inline void symmetrize(Matrix& m) { m = 0.5 * (m + m.transpose()).eval(); }

// Cholesky without jitter; throws if the matrix is not positive definite.
inline Eigen::LLT<Matrix> strict_chol(const Matrix& m, const char* what) {
  Eigen::LLT<Matrix> llt(m);
  bool ok = llt.info() == Eigen::Success;
  for (Eigen::Index i = 0; ok && i < m.rows(); ++i) {
    const double d = llt.matrixLLT()(i, i);
    ok = d > 0.0 && std::isfinite(d);
  }
  if (!ok) throw NumericalError(std::string(what) + ": matrix is not positive definite");
  return llt;
}

}  // namespace detail

inline NaturalGaussian from_moment(const MomentGaussian& m) {
  if (m.cov.rows() != m.dim() || m.cov.cols() != m.dim())
    throw ConfigError("from_moment: dimension mismatch");
  auto llt = detail::strict_chol(m.cov, "from_moment");
  const Eigen::Index p = m.dim();
  Matrix prec = llt.solve(Matrix::Identity(p, p));
  detail::symmetrize(prec);
  return NaturalGaussian{prec * m.mean, -0.5 * prec};
}

inline NaturalGaussian from_moment(const Vector& mean, const Matrix& cov) {
  return from_moment(MomentGaussian{mean, cov});
}

inline MomentGaussian to_moment(const NaturalGaussian& ng) {
  if (ng.eta2.rows() != ng.dim() || ng.eta2.cols() != ng.dim())
    throw ConfigError("to_moment: dimension mismatch");
  const Eigen::Index p = ng.dim();
  auto llt = detail::strict_chol(-2.0 * ng.eta2, "to_moment");
  Matrix cov = llt.solve(Matrix::Identity(p, p));
  detail::symmetrize(cov);
  return MomentGaussian{llt.solve(ng.eta1), std::move(cov)};
}

/// log |S| of the covariance implied by natural parameters.
inline double natural_logdet_cov(const NaturalGaussian& ng) {
  auto llt = detail::strict_chol(-2.0 * ng.eta2, "natural_logdet_cov");
  double s = 0.0;
  for (Eigen::Index i = 0; i < ng.dim(); ++i) s += std::log(llt.matrixLLT()(i, i));
  return -2.0 * s;
}

/// KL(N(mu, S) || N(0, K)) with all constants:
/// 1/2 [log|K| - log|S| - p + tr(K^-1 S) + mu' K^-1 mu].
///
/// `logdet_cov` is log|S|, and `prior_inv` (optional) is K^-1 when the caller
/// already has it.
inline double kl_to_prior(const MomentGaussian& q, double logdet_cov, const PsdFactor& prior,
                          const Matrix* prior_inv = nullptr) {
  if (prior.dim() != q.dim()) throw ConfigError("kl_to_prior: dimension mismatch");
  const auto p = static_cast<double>(q.dim());
  if (q.dim() == 0) return 0.0;
  double trace;
  double maha;
  if (prior_inv) {
    trace = prior_inv->cwiseProduct(q.cov).sum();
    maha = q.mean.dot(*prior_inv * q.mean);
  } else {
    trace = prior.solve(q.cov).trace();
    maha = q.mean.dot(prior.solve(q.mean).col(0));
  }
  return 0.5 * (prior.logdet() - logdet_cov - p + trace + maha);
}

inline double kl_to_prior(const MomentGaussian& q, const PsdFactor& prior) {
  if (q.dim() == 0) return 0.0;
  auto llt = detail::strict_chol(q.cov, "kl_to_prior");
  double logdet = 0.0;
  for (Eigen::Index i = 0; i < q.dim(); ++i) logdet += 2.0 * std::log(llt.matrixLLT()(i, i));
  return kl_to_prior(q, logdet, prior);
}

inline double kl_to_prior(const NaturalGaussian& q, const PsdFactor& prior) {
  if (q.dim() == 0) return 0.0;
  return kl_to_prior(to_moment(q), natural_logdet_cov(q), prior);
}

/// eta <- eta + rho * (target - eta), i.e. a natural-gradient step whose
/// gradient is (target - eta). rho = 1 jumps to the target.
inline NaturalGaussian ng_step(const NaturalGaussian& current, const NaturalGaussian& target,
                               double rho) {
  if (!(rho > 0.0 && rho <= 1.0)) throw ConfigError("ng_step: rate must lie in (0, 1]");
  if (current.dim() != target.dim() || target.eta2.rows() != target.dim())
    throw ConfigError("ng_step: dimension mismatch");
  if ((target.eta2 - target.eta2.transpose()).cwiseAbs().maxCoeff() >
      1e-10 * std::max(1.0, target.eta2.cwiseAbs().maxCoeff()))
    throw NumericalError("ng_step: target eta2 is not symmetric");
  detail::strict_chol(-2.0 * target.eta2, "ng_step target");
  if (rho == 1.0) return target;
  NaturalGaussian out{(1.0 - rho) * current.eta1 + rho * target.eta1,
                      (1.0 - rho) * current.eta2 + rho * target.eta2};
  detail::symmetrize(out.eta2);
  return out;
}

}  // namespace ented
