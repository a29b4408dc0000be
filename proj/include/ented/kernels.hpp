#pragma once

// RBF kernel, Gram matrices and their adjoints, and jittered Cholesky solves.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <optional>
#include <string>

#include "ented/errors.hpp"

namespace ented {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// k(x, y) = exp(-|x - y|^2 / (2 l^2)) with unit amplitude.
struct RbfKernel {
  double bandwidth = 1.0;

  RbfKernel() = default;
  explicit RbfKernel(double l) : bandwidth(l) {
    if (!(l > 0.0) || !std::isfinite(l))
      throw ConfigError("RBF bandwidth must be positive and finite");
  }

  template <typename A, typename B>
  double operator()(const Eigen::MatrixBase<A>& x, const Eigen::MatrixBase<B>& y) const {
    return std::exp(-(x - y).squaredNorm() / (2.0 * bandwidth * bandwidth));
  }
};

/// Cross-covariance k(X, Y) between the rows of X (n x q) and Y (m x q).
inline Matrix gram(const RbfKernel& kernel, const Matrix& X, const Matrix& Y) {
  if (X.cols() != Y.cols())
    throw ConfigError("gram: column mismatch (" + std::to_string(X.cols()) + " vs " +
                      std::to_string(Y.cols()) + ")");
  const Matrix xt = X.transpose();
  const Matrix yt = Y.transpose();
  const double inv2l2 = 1.0 / (2.0 * kernel.bandwidth * kernel.bandwidth);
  Matrix K(X.rows(), Y.rows());
  for (Eigen::Index j = 0; j < Y.rows(); ++j)
    for (Eigen::Index i = 0; i < X.rows(); ++i)
      K(i, j) = std::exp(-(xt.col(i) - yt.col(j)).squaredNorm() * inv2l2);
  return K;
}

/// Backpropagates an adjoint G = dL/dK through K = gram(kernel, X, Y).
///
/// Accumulates into gX, gY and (optionally) the log-bandwidth gradient. For a
/// self-Gram k(X, X) pass the same matrix as gX and gY.
inline void gram_backward(const RbfKernel& kernel, const Matrix& X, const Matrix& Y,
                          const Matrix& K, const Matrix& G, Matrix& gX, Matrix& gY,
                          double* g_log_bandwidth = nullptr) {
  const double inv_l2 = 1.0 / (kernel.bandwidth * kernel.bandwidth);
  const Matrix xt = X.transpose();
  const Matrix yt = Y.transpose();
  Matrix gxt = Matrix::Zero(X.cols(), X.rows());
  Matrix gyt = Matrix::Zero(Y.cols(), Y.rows());
  const Eigen::Index q = X.cols();
  double glb = 0.0;
  for (Eigen::Index j = 0; j < Y.rows(); ++j) {
    const double* y = yt.col(j).data();
    double* gy = gyt.col(j).data();
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      const double w = G(i, j) * K(i, j) * inv_l2;
      if (w == 0.0) continue;
      const double* x = xt.col(i).data();
      double* gx = gxt.col(i).data();
      double d2 = 0.0;
      for (Eigen::Index c = 0; c < q; ++c) {
        const double diff = x[c] - y[c];
        gx[c] -= w * diff;
        gy[c] += w * diff;
        d2 += diff * diff;
      }
      glb += w * d2;
    }
  }
  gX += gxt.transpose();
  gY += gyt.transpose();
  if (g_log_bandwidth) *g_log_bandwidth += glb;
}

/// Cholesky factor of K + jitter * I.
class PsdFactor {
 public:
  PsdFactor() = default;
  PsdFactor(Eigen::LLT<Matrix> llt, double jitter) : llt_(std::move(llt)), jitter_(jitter) {}

  Eigen::Index dim() const { return llt_.rows(); }
  double jitter() const { return jitter_; }
  Matrix lower() const { return llt_.matrixL(); }

  /// X with (K + jitter I) X = B.
  template <typename Rhs>
  Matrix solve(const Eigen::MatrixBase<Rhs>& B) const {
    if (B.rows() != dim()) throw ConfigError("solve_psd: dimension mismatch");
    return llt_.solve(B);
  }

  Matrix inverse() const { return solve(Matrix::Identity(dim(), dim())); }

  double logdet() const {
    const auto& L = llt_.matrixLLT();
    double s = 0.0;
    for (Eigen::Index i = 0; i < L.rows(); ++i) s += std::log(L(i, i));
    return 2.0 * s;
  }

  /// The factored matrix K + jitter I.
  Matrix reconstruct() const { return llt_.reconstructedMatrix(); }

 private:
  Eigen::LLT<Matrix> llt_;
  double jitter_ = 0.0;
};

/// Factors K, escalating jitter through {0, 1e-8, 1e-6, 1e-4} * scale until the
/// Cholesky succeeds. scale defaults to trace(K) / p.
inline PsdFactor chol_psd(const Matrix& K, std::optional<double> scale = std::nullopt) {
  if (K.rows() != K.cols()) throw ConfigError("chol_psd: matrix is not square");
  const Eigen::Index p = K.rows();
  if (p == 0) return PsdFactor(Eigen::LLT<Matrix>(K), 0.0);
  const double max_abs = K.cwiseAbs().maxCoeff();
  if (!std::isfinite(max_abs)) throw NumericalError("chol_psd: non-finite matrix entries");
  if ((K - K.transpose()).cwiseAbs().maxCoeff() > 1e-8 * std::max(max_abs, 1e-300))
    throw ConfigError("chol_psd: matrix is not symmetric");
  double ref = scale.value_or(K.trace() / static_cast<double>(p));
  if (!(ref > 0.0)) ref = 1.0;
  static constexpr std::array<double, 4> ladder{0.0, 1e-8, 1e-6, 1e-4};
  for (double step : ladder) {
    const double jitter = step * ref;
    Matrix Kj = K;
    Kj.diagonal().array() += jitter;
    Eigen::LLT<Matrix> llt(Kj);
    if (llt.info() != Eigen::Success) continue;
    const auto& L = llt.matrixLLT();
    bool ok = true;
    for (Eigen::Index i = 0; i < p && ok; ++i) ok = L(i, i) > 0.0 && std::isfinite(L(i, i));
    if (ok) return PsdFactor(std::move(llt), jitter);
  }
  throw NumericalError("chol_psd: Cholesky failed at maximum jitter (p=" + std::to_string(p) + ")");
}

template <typename Rhs>
Matrix solve_psd(const PsdFactor& factor, const Eigen::MatrixBase<Rhs>& B) {
  return factor.solve(B);
}

inline double logdet(const PsdFactor& factor) { return factor.logdet(); }

}  // namespace ented
