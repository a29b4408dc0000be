#pragma once

// Evaluation metrics: AUC, relative RMSE, MAPE and negative log-likelihoods.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "ented/errors.hpp"

namespace ented {

struct EvalResult {
  std::string name;
  double value = 0.0;
  std::size_t n = 0;
};

inline constexpr double kProbClamp = 1e-12;

/// Mann-Whitney AUC; ties between a positive and a negative score count 1/2.
inline double auc(std::span<const double> scores, std::span<const std::int64_t> labels) {
  if (scores.size() != labels.size()) throw ConfigError("auc: length mismatch");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos = 0.0, rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      const auto y = labels[order[k]];
      if (y != 0 && y != 1) throw DataError("auc: labels must be 0 or 1");
      if (y == 1) {
        pos += 1.0;
        rank_sum += avg_rank;
      }
    }
    i = j;
  }
  const double neg = static_cast<double>(n) - pos;
  if (pos == 0.0 || neg == 0.0) throw DataError("auc: both classes must be present");
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

/// sqrt(sum (x - xhat)^2) / sqrt(sum x^2).
inline double rmse_rel(std::span<const double> x, std::span<const double> xhat) {
  if (x.size() != xhat.size()) throw ConfigError("rmse_rel: length mismatch");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    num += (x[i] - xhat[i]) * (x[i] - xhat[i]);
    den += x[i] * x[i];
  }
  if (!(den > 0.0)) throw DataError("rmse_rel: ground truth is all zero");
  return std::sqrt(num) / std::sqrt(den);
}

/// (1/N) sum |x - xhat| / |x + 1|.
inline double mape(std::span<const double> x, std::span<const double> xhat) {
  if (x.size() != xhat.size()) throw ConfigError("mape: length mismatch");
  if (x.empty()) throw DataError("mape: empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += std::abs(x[i] - xhat[i]) / std::abs(x[i] + 1.0);
  return acc / static_cast<double>(x.size());
}

inline double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

/// log(1 + e^x) without overflow.
inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

/// log NB(x | zeta, p) with p = sigmoid(f):
/// log Gamma(zeta + x) - log x! - log Gamma(zeta) + x log p + zeta log(1 - p).
inline double negbin_logpmf(std::int64_t x, double zeta, double f) {
  if (!(zeta > 0.0)) throw ConfigError("negbin_logpmf: zeta must be positive");
  if (x < 0) throw DataError("negbin_logpmf: negative count");
  const double xd = static_cast<double>(x);
  return std::lgamma(zeta + xd) - std::lgamma(xd + 1.0) - std::lgamma(zeta) -
         xd * softplus(-f) - zeta * softplus(f);
}

/// Same PMF parameterized by the success probability p in (0, 1).
inline double negbin_logpmf_prob(std::int64_t x, double zeta, double p) {
  if (!(p > 0.0 && p < 1.0)) throw ConfigError("negbin_logpmf_prob: p must lie in (0, 1)");
  return negbin_logpmf(x, zeta, std::log(p) - std::log1p(-p));
}

/// Mean of -log p over entries; p = P(x = 1) clamped to [1e-12, 1 - 1e-12].
inline double bernoulli_nll(std::span<const double> probs, std::span<const std::int64_t> x) {
  if (probs.size() != x.size()) throw ConfigError("bernoulli_nll: length mismatch");
  if (x.empty()) throw DataError("bernoulli_nll: empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] != 0 && x[i] != 1) throw DataError("bernoulli_nll: labels must be 0 or 1");
    const double p = clamp_prob(probs[i]);
    acc -= x[i] == 1 ? std::log(p) : std::log1p(-p);
  }
  return acc / static_cast<double>(x.size());
}

/// Mean of -log NB(x | zeta, p_n).
inline double negbin_nll(std::span<const double> probs, std::span<const std::int64_t> x,
                         double zeta) {
  if (probs.size() != x.size()) throw ConfigError("negbin_nll: length mismatch");
  if (x.empty()) throw DataError("negbin_nll: empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
    acc -= negbin_logpmf_prob(x[i], zeta, clamp_prob(probs[i]));
  return acc / static_cast<double>(x.size());
}

/// Mean of the supplied per-entry negative log predictive probabilities.
inline double mean_nll(std::span<const double> log_probs) {
  if (log_probs.empty()) throw DataError("nll: empty input");
  double acc = 0.0;
  for (double lp : log_probs) acc -= lp;
  return acc / static_cast<double>(log_probs.size());
}

}  // namespace ented
