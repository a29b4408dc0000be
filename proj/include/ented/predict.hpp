#pragma once

// Posterior of f at new index tuples, point predictions and predictive
// log-likelihoods, and metric evaluation of a model on a tensor.

#include <boost/math/distributions/normal.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ented/metrics.hpp"
#include "ented/model.hpp"

namespace ented {

struct Posterior {
  Vector mean;
  Vector var;
};

inline Posterior posterior_f(const SvgpState& state, const Matrix& M) {
  const auto g = svgp_geometry(state.kernel, state.B, M);
  const auto q = to_moment(state.qu);
  return {g.kappa * q.mean, g.ktilde + detail::rowwise_quad(g.kappa, q.cov)};
}

inline Posterior posterior_f(const ProbitState& state, const Matrix& M) {
  const auto g = svgp_geometry(state.kernel, state.B, M);
  return {g.kappa * state.mean, g.ktilde + detail::rowwise_quad(g.kappa, state.cov())};
}

inline Posterior posterior_f(const SolveState& state, const Matrix& M) {
  const auto g = solve_geometry(state.kernel, state.B, state.H, M);
  const auto qu = to_moment(state.qu);
  const auto fp = fperp_moments(g, to_moment(state.qv));
  return {fp.mean + g.u.kappa * qu.mean, fp.var + detail::rowwise_quad(g.u.kappa, qu.cov)};
}

/// Posterior moments of f at the given index tuples (s x D, row-major),
/// evaluated in chunks to bound memory.
inline Posterior posterior_f(const Model& model, std::span<const std::int64_t> indices,
                             std::size_t chunk = 4096) {
  const std::size_t D = model.factors.order();
  const std::size_t s = indices.size() / D;
  Posterior out{Vector(static_cast<Eigen::Index>(s)), Vector(static_cast<Eigen::Index>(s))};
  for (std::size_t start = 0; start < s; start += chunk) {
    const std::size_t len = std::min(chunk, s - start);
    const Matrix M = assemble_inputs(model.factors, indices.subspan(start * D, len * D));
    const Posterior part = std::visit([&](const auto& st) { return posterior_f(st, M); },
                                      model.state);
    out.mean.segment(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(len)) = part.mean;
    out.var.segment(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(len)) = part.var;
  }
  return out;
}

/// How point predictions and predictive likelihoods treat the posterior of f.
enum class PredictMode {
  posterior,  // average over q(f) (deterministic normal-quantile nodes; analytic where exact)
  plugin,     // evaluate at the posterior mean
};

inline constexpr int kPredictNodes = 32;

/// Standard-normal quantiles at (k + 1/2) / S, k = 0..S-1. Symmetric about 0.
inline const std::vector<double>& normal_nodes() {
  static const std::vector<double> nodes = [] {
    boost::math::normal_distribution<double> n01;
    std::vector<double> z(kPredictNodes);
    for (int k = 0; k < kPredictNodes; ++k)
      z[static_cast<std::size_t>(k)] = boost::math::quantile(n01, (k + 0.5) / kPredictNodes);
    for (int k = 0; k < kPredictNodes / 2; ++k)
      z[static_cast<std::size_t>(kPredictNodes - 1 - k)] = -z[static_cast<std::size_t>(k)];
    return z;
  }();
  return nodes;
}

struct Prediction {
  std::vector<double> value;    // P(x = 1) for binary likelihoods, E[x] for negbin
  std::vector<double> log_lik;  // log predictive probability of the observed value (if given)
};

namespace detail {

inline double log_mean_exp(std::span<const double> v) {
  const double mx = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(mx)) return mx;
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - mx);
  return mx + std::log(acc / static_cast<double>(v.size()));
}

}  // namespace detail

/// Per-entry predictions from posterior moments. `observed` (optional) enables
/// predictive log-likelihoods.
inline Prediction predict_from_posterior(const Posterior& post, const LikelihoodConfig& lik,
                                         PredictMode mode,
                                         std::optional<std::span<const std::int64_t>> observed) {
  const auto s = static_cast<std::size_t>(post.mean.size());
  if (observed && observed->size() != s) throw ConfigError("predict: value/index count mismatch");
  Prediction out;
  out.value.resize(s);
  if (observed) out.log_lik.resize(s);
  const auto& nodes = normal_nodes();
  std::vector<double> lp(nodes.size());
  for (std::size_t n = 0; n < s; ++n) {
    const double m = post.mean(static_cast<Eigen::Index>(n));
    const double v = mode == PredictMode::plugin ? 0.0 : std::max(0.0, post.var(static_cast<Eigen::Index>(n)));
    const double sd = std::sqrt(v);
    switch (lik.kind) {
      case Likelihood::probit: {
        // P(x = 1) = E[Phi(omega)], omega ~ N(f, 1), f ~ N(m, v).
        const double p = ndtr(m / std::sqrt(2.0 + v));
        out.value[n] = p;
        if (observed) {
          const double pc = clamp_prob(p);
          out.log_lik[n] = (*observed)[n] == 1 ? std::log(pc) : std::log1p(-pc);
        }
        break;
      }
      case Likelihood::bernoulli: {
        double p = 0.0;
        if (mode == PredictMode::plugin) {
          p = sigmoid(m);
        } else {
          for (double z : nodes) p += sigmoid(m + sd * z);
          p /= static_cast<double>(nodes.size());
        }
        out.value[n] = p;
        if (observed) {
          const double pc = clamp_prob(p);
          out.log_lik[n] = (*observed)[n] == 1 ? std::log(pc) : std::log1p(-pc);
        }
        break;
      }
      case Likelihood::negbin: {
        out.value[n] = lik.zeta * std::exp(m + 0.5 * v);
        if (observed) {
          const auto x = (*observed)[n];
          if (mode == PredictMode::plugin) {
            out.log_lik[n] = negbin_logpmf(x, lik.zeta, m);
          } else {
            for (std::size_t k = 0; k < nodes.size(); ++k)
              lp[k] = negbin_logpmf(x, lik.zeta, m + sd * nodes[k]);
            out.log_lik[n] = detail::log_mean_exp(lp);
          }
        }
        break;
      }
    }
  }
  return out;
}

inline Prediction predict(const Model& model, std::span<const std::int64_t> indices,
                          PredictMode mode = PredictMode::posterior,
                          std::optional<std::span<const std::int64_t>> observed = std::nullopt) {
  return predict_from_posterior(posterior_f(model, indices), model.lik, mode, observed);
}

/// Metrics supported for a likelihood: binary -> auc, nll; count -> rmse, mape, nll.
inline std::vector<std::string> default_metrics(const LikelihoodConfig& lik) {
  if (lik.data_kind() == ValueKind::binary) return {"auc", "nll"};
  return {"rmse", "mape", "nll"};
}

/// Evaluates `metrics` for `model` on every entry of `t`.
inline std::vector<EvalResult> evaluate(const Model& model, const SparseTensor& t,
                                        const std::vector<std::string>& metrics,
                                        PredictMode mode = PredictMode::posterior) {
  if (t.kind() != model.lik.data_kind())
    throw ConfigError("evaluate: tensor kind '" + to_string(t.kind()) +
                      "' does not match likelihood '" + to_string(model.lik.kind) + "'");
  if (t.order() != model.factors.order()) throw ConfigError("evaluate: tensor order mismatch");
  for (std::size_t d = 0; d < t.order(); ++d)
    if (t.shape()[d] != model.factors.modes[d].rows())
      throw ConfigError("evaluate: tensor shape does not match the model");
  const bool binary = t.kind() == ValueKind::binary;
  for (const auto& name : metrics) {
    const bool ok = name == "nll" || (binary && name == "auc") ||
                    (!binary && (name == "rmse" || name == "mape"));
    if (!ok)
      throw ConfigError("metric '" + name + "' is not defined for " + to_string(t.kind()) +
                        " data");
  }
  const auto pred = predict(model, t.indices(), mode, t.values());
  std::vector<double> truth(t.values().begin(), t.values().end());
  std::vector<EvalResult> out;
  for (const auto& name : metrics) {
    double v = 0.0;
    if (name == "auc") v = auc(pred.value, t.values());
    else if (name == "rmse") v = rmse_rel(truth, pred.value);
    else if (name == "mape") v = mape(truth, pred.value);
    else v = mean_nll(pred.log_lik);
    out.push_back({name, v, t.size()});
  }
  return out;
}

}  // namespace ented
