#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ented/errors.hpp"
#include "ented/kernels.hpp"
#include "ented/pg.hpp"
#include "ented/tensordata.hpp"

namespace ented {

/// Latent factor matrices Z^(d) (I_d x R), one per mode, with an i.i.d.
/// standard-normal prior.
struct FactorSet {
  std::vector<Matrix> modes;

  std::size_t order() const { return modes.size(); }
  Eigen::Index rank() const { return modes.empty() ? 0 : modes.front().cols(); }
  /// Width D * R of the concatenated GP input.
  Eigen::Index input_dim() const { return static_cast<Eigen::Index>(order()) * rank(); }

  /// -1/2 sum_d |Z^(d)|_F^2 (up to the additive normalizer).
  double log_prior() const {
    double s = 0.0;
    for (const auto& z : modes) s += z.squaredNorm();
    return -0.5 * s;
  }

  static FactorSet random(std::span<const std::int64_t> shape, Eigen::Index rank,
                          std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    FactorSet f;
    for (auto s : shape) {
      Matrix z(s, rank);
      // Column-major fill order is part of the seeded contract.
      for (Eigen::Index j = 0; j < z.cols(); ++j)
        for (Eigen::Index i = 0; i < z.rows(); ++i) z(i, j) = normal(rng);
      f.modes.push_back(std::move(z));
    }
    return f;
  }

  FactorSet zeros_like() const {
    FactorSet f;
    for (const auto& z : modes) f.modes.push_back(Matrix::Zero(z.rows(), z.cols()));
    return f;
  }
};

/// Row n is the mode-ordered concatenation [Z^(1)[i_1], ..., Z^(D)[i_D]] of
/// the factor rows selected by the n-th index tuple (`indices` is s x D).
inline Matrix assemble_inputs(const FactorSet& factors, std::span<const std::int64_t> indices) {
  const std::size_t order = factors.order();
  if (order == 0) throw ConfigError("assemble_inputs: empty factor set");
  if (indices.size() % order != 0)
    throw ConfigError("assemble_inputs: index array is not a multiple of the order");
  const Eigen::Index R = factors.rank();
  const auto s = static_cast<Eigen::Index>(indices.size() / order);
  Matrix M(s, factors.input_dim());
  for (Eigen::Index n = 0; n < s; ++n) {
    for (std::size_t d = 0; d < order; ++d) {
      const auto i = indices[static_cast<std::size_t>(n) * order + d];
      if (i < 0 || i >= factors.modes[d].rows())
        throw DataError("assemble_inputs: index " + std::to_string(i) +
                        " out of range for mode " + std::to_string(d));
      M.block(n, static_cast<Eigen::Index>(d) * R, 1, R) = factors.modes[d].row(i);
    }
  }
  return M;
}

/// Adjoint of assemble_inputs: scatter-adds rows of gM into the factor gradients.
inline void scatter_input_grad(const Matrix& gM, std::span<const std::int64_t> indices,
                               FactorSet& grads) {
  const std::size_t order = grads.order();
  const Eigen::Index R = grads.rank();
  for (Eigen::Index n = 0; n < gM.rows(); ++n)
    for (std::size_t d = 0; d < order; ++d) {
      const auto i = indices[static_cast<std::size_t>(n) * order + d];
      grads.modes[d].row(i) += gM.block(n, static_cast<Eigen::Index>(d) * R, 1, R);
    }
}

enum class Likelihood { bernoulli, negbin, probit };

inline std::string to_string(Likelihood l) {
  switch (l) {
    case Likelihood::bernoulli: return "bernoulli";
    case Likelihood::negbin: return "negbin";
    case Likelihood::probit: return "probit";
  }
  return "?";
}

inline Likelihood parse_likelihood(const std::string& s) {
  if (s == "bernoulli") return Likelihood::bernoulli;
  if (s == "negbin") return Likelihood::negbin;
  if (s == "probit") return Likelihood::probit;
  throw ConfigError("unknown likelihood '" + s + "'");
}

struct LikelihoodConfig {
  Likelihood kind = Likelihood::bernoulli;
  double zeta = 20.0;

  ValueKind data_kind() const {
    return kind == Likelihood::negbin ? ValueKind::count : ValueKind::binary;
  }
};

/// Per-entry PG parameters for a batch, stored column-wise.
struct PGSites {
  Vector b, chi, c, theta;

  Eigen::Index size() const { return b.size(); }

  PGSite operator[](Eigen::Index n) const { return {b(n), chi(n), c(n), theta(n)}; }
};

/// Builds sites from observations and local parameters c (theta follows from b, c).
inline PGSites make_sites(std::span<const std::int64_t> values, const LikelihoodConfig& lik,
                          const Vector& c) {
  if (static_cast<Eigen::Index>(values.size()) != c.size())
    throw ConfigError("make_sites: value/parameter length mismatch");
  if (lik.kind == Likelihood::probit)
    throw ConfigError("the probit likelihood has no Polya-Gamma sites");
  const auto s = c.size();
  PGSites out{Vector(s), Vector(s), c, Vector(s)};
  for (Eigen::Index n = 0; n < s; ++n) {
    auto [b, chi] = site_params(values[static_cast<std::size_t>(n)], lik.data_kind(), lik.zeta);
    out.b(n) = b;
    out.chi(n) = chi;
    out.theta(n) = pg_mean(b, c(n));
  }
  return out;
}

/// Gradients of an ELBO with respect to the optimized (non-variational) parameters.
struct ModelGradient {
  FactorSet factors;
  Matrix B;
  Matrix H;
  Vector probit_mean;
  Matrix probit_chol;
  double log_bandwidth = 0.0;
};

struct ElboValue {
  double data = 0.0;       // scaled expected log-likelihood minus scaled KL(q(omega) || p(omega))
  double kl_u = 0.0;
  double kl_v = 0.0;
  double log_prior = 0.0;  // -1/2 sum |Z|^2

  double total() const { return data - kl_u - kl_v + log_prior; }
};

namespace detail {

inline Vector rowwise_dot(const Matrix& a, const Matrix& b) {
  return a.cwiseProduct(b).rowwise().sum();
}

// diag(a S a') for each row of a.
inline Vector rowwise_quad(const Matrix& a, const Matrix& S) {
  return (a * S).cwiseProduct(a).rowwise().sum();
}

inline Vector clamp_nonneg(Vector v) { return v.cwiseMax(0.0); }

}  // namespace detail

}  // namespace ented
