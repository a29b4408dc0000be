#pragma once

// Polya-Gamma utilities: likelihood-to-site mapping, the tilted mean theta,
// KL(PG(b, c) || PG(b, 0)), and a truncated-series sampler for tests.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "ented/errors.hpp"
#include "ented/tensordata.hpp"

namespace ented {

/// Local variational parameters of q(omega_n) = PG(b, c) and the
/// likelihood-dependent linear coefficient chi.
struct PGSite {
  double b = 1.0;
  double chi = 0.0;
  double c = 0.0;
  double theta = 0.25;
};

/// (b, chi) for an observation. Binary: (1, x - 1/2). Count: (x + zeta, (x - zeta)/2).
inline std::pair<double, double> site_params(std::int64_t x, ValueKind kind, double zeta) {
  if (kind == ValueKind::binary) {
    if (x != 0 && x != 1) throw DataError("binary observation must be 0 or 1");
    return {1.0, static_cast<double>(x) - 0.5};
  }
  if (!(zeta > 0)) throw ConfigError("zeta must be positive");
  if (x < 0) throw DataError("count observation must be nonnegative");
  const double xd = static_cast<double>(x);
  return {xd + zeta, 0.5 * (xd - zeta)};
}

/// E[omega] for omega ~ PG(b, c), i.e. (b / 2c) tanh(c / 2).
inline double pg_mean(double b, double c) {
  c = std::abs(c);
  if (c < 1e-4) return b / 4.0 - b * c * c / 48.0;
  return b * std::tanh(0.5 * c) / (2.0 * c);
}

/// log cosh(x) without overflow.
inline double log_cosh(double x) {
  x = std::abs(x);
  return x + std::log1p(std::exp(-2.0 * x)) - std::numbers::ln2;
}

/// KL(PG(b, c) || PG(b, 0)) = b log cosh(c/2) - (b c / 4) tanh(c/2).
inline double pg_kl(double b, double c) {
  const double x = 0.5 * std::abs(c);
  if (x < 1e-2) {
    // Series of log cosh x - (x/2) tanh x; the direct form cancels badly here.
    const double x2 = x * x;
    const double x4 = x2 * x2;
    return b * (x4 / 12.0 - 2.0 * x4 * x2 / 45.0 + 17.0 * x4 * x4 / 840.0);
  }
  return b * (log_cosh(x) - 0.5 * x * std::tanh(x));
}

inline PGSite make_site(std::int64_t x, ValueKind kind, double zeta, double c) {
  auto [b, chi] = site_params(x, kind, zeta);
  return PGSite{b, chi, c, pg_mean(b, c)};
}

/// One approximate draw of PG(b, c) from the first `terms` summands of the
/// infinite gamma series, plus the exact mean of the discarded tail.
template <typename Rng>
double pg_sample_truncated(double b, double c, int terms, Rng& rng) {
  if (terms < 1) throw ConfigError("pg_sample_truncated needs at least one term");
  const double pi = std::numbers::pi;
  const double a2 = c * c / (4.0 * pi * pi);
  std::gamma_distribution<double> gamma(b, 1.0);
  double acc = 0.0;
  double head = 0.0;
  for (int k = 1; k <= terms; ++k) {
    const double h = k - 0.5;
    const double denom = h * h + a2;
    acc += gamma(rng) / denom;
    head += 1.0 / denom;
  }
  // sum_{k>=1} 1 / ((k - 1/2)^2 + a^2) = pi tanh(pi a) / (2a), -> pi^2 / 2 as a -> 0.
  const double a = std::sqrt(a2);
  const double full = a < 1e-8 ? 0.5 * pi * pi : pi * std::tanh(pi * a) / (2.0 * a);
  const double tail = std::max(0.0, full - head);
  return (acc + b * tail) / (2.0 * pi * pi);
}

struct IdentityCheck {
  double lhs = 0.0;
  double rhs = 0.0;
  double std_err = 0.0;
};

/// Compares exp(a t) / (1 + exp(t))^b with 2^-b exp((a - b/2) t) E[exp(-omega t^2 / 2)],
/// omega ~ PG(b, 0), the expectation estimated from the supplied draws.
inline IdentityCheck pg_identity_check(double a, double b, double t,
                                       std::span<const double> pg_draws) {
  if (pg_draws.size() < 2) throw ConfigError("pg_identity_check needs at least two draws");
  IdentityCheck out;
  out.lhs = std::exp(a * t - b * std::log1p(std::exp(t)));
  const double pref = std::exp(-b * std::numbers::ln2 + (a - 0.5 * b) * t);
  double sum = 0.0, sum2 = 0.0;
  for (double w : pg_draws) {
    const double e = std::exp(-0.5 * w * t * t);
    sum += e;
    sum2 += e * e;
  }
  const double n = static_cast<double>(pg_draws.size());
  const double mean = sum / n;
  const double var = std::max(0.0, (sum2 - n * mean * mean) / (n - 1.0));
  out.rhs = pref * mean;
  out.std_err = pref * std::sqrt(var / n);
  return out;
}

template <typename Rng>
IdentityCheck pg_identity_check(double a, double b, double t, std::size_t samples, Rng& rng,
                                int terms = 1000) {
  std::vector<double> draws(samples);
  for (auto& w : draws) w = pg_sample_truncated(b, 0.0, terms, rng);
  return pg_identity_check(a, b, t, draws);
}

}  // namespace ented
