#pragma once

// The training loop: per minibatch, closed-form local updates, natural-gradient
// steps on q(u) (and q(v)), then one Adam step on Z, B, H with the variational
// Gaussians frozen.

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ented/model.hpp"
#include "ented/tensordata.hpp"

namespace ented {

struct TrainConfig {
  ModelKind model = ModelKind::ented;
  Eigen::Index rank = 5;
  Eigen::Index inducing_u = 50;
  Eigen::Index inducing_v = 50;   // ented only
  std::size_t batch_size = 128;
  std::size_t epochs = 200;
  double lr = 1e-3;
  double ng_rate = 0.3;
  Likelihood likelihood = Likelihood::bernoulli;
  double zeta = 20.0;
  std::uint64_t seed = 0;
  double bandwidth = 1.0;
  bool learn_bandwidth = false;
  bool early_stop = false;

  /// Likelihood actually used: the probit model always uses the probit link.
  LikelihoodConfig likelihood_config() const {
    LikelihoodConfig l;
    l.kind = model == ModelKind::gptf_probit ? Likelihood::probit : likelihood;
    l.zeta = zeta;
    return l;
  }

  void validate() const {
    if (rank < 1) throw ConfigError("rank must be at least 1");
    if (inducing_u < 1) throw ConfigError("inducing-u must be at least 1");
    if (model == ModelKind::ented && inducing_v < 1)
      throw ConfigError("the ented model needs inducing-v >= 1");
    if (batch_size < 1) throw ConfigError("batch size must be at least 1");
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be >= 0");
    if (!(ng_rate > 0.0 && ng_rate <= 1.0)) throw ConfigError("ng-rate must lie in (0, 1]");
    if (!(zeta > 0.0) || !std::isfinite(zeta)) throw ConfigError("zeta must be positive");
    if (!(bandwidth > 0.0) || !std::isfinite(bandwidth))
      throw ConfigError("bandwidth must be positive");
    if (model == ModelKind::gptf_probit && likelihood == Likelihood::negbin)
      throw ConfigError("the gptf-probit model only supports binary data");
    if (model != ModelKind::gptf_probit && likelihood == Likelihood::probit)
      throw ConfigError("the probit likelihood requires --model gptf-probit");
  }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double elbo = 0.0;      // mean of the minibatch ELBO estimates over the epoch
  double seconds = 0.0;
  double norm_z = 0.0;
  double norm_b = 0.0;
  double norm_h = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  bool early_stopped = false;
  Model model;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::uint64_t epoch_seed(std::uint64_t seed, std::size_t epoch) {
  return splitmix64(splitmix64(seed) ^ static_cast<std::uint64_t>(epoch));
}

inline Matrix inducing_from_rows(const FactorSet& factors, const SparseTensor& t,
                                 std::span<const std::size_t> rows, std::mt19937_64& rng) {
  std::vector<std::int64_t> idx;
  for (auto r : rows) {
    auto i = t.index(r);
    idx.insert(idx.end(), i.begin(), i.end());
  }
  Matrix X = assemble_inputs(factors, idx);
  std::normal_distribution<double> noise(0.0, 0.1);
  for (Eigen::Index j = 0; j < X.cols(); ++j)
    for (Eigen::Index i = 0; i < X.rows(); ++i) X(i, j) += noise(rng);
  return X;
}

}  // namespace detail

/// Random initialization: Z ~ N(0, 1); B (and H) are inputs of training
/// entries drawn without replacement plus N(0, 0.01) noise; q(u), q(v) at
/// their priors.
inline Model init_state(const TrainConfig& config, const SparseTensor& train) {
  config.validate();
  const auto lik = config.likelihood_config();
  if (train.kind() != lik.data_kind())
    throw ConfigError("data kind '" + to_string(train.kind()) + "' does not match likelihood '" +
                      to_string(lik.kind) + "'");
  const auto N = static_cast<Eigen::Index>(train.size());
  if (config.inducing_u > N) throw ConfigError("inducing-u exceeds the number of entries");
  const bool ented = config.model == ModelKind::ented;
  if (ented && config.inducing_v > N)
    throw ConfigError("inducing-v exceeds the number of entries");

  std::mt19937_64 rng(config.seed);
  Model model;
  model.lik = lik;
  model.factors = FactorSet::random(train.shape(), config.rank, rng);
  const auto perm = detail::permutation(train.size(), rng);
  const auto pu = static_cast<std::size_t>(config.inducing_u);
  std::vector<std::size_t> rows_b(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(pu));
  Matrix B = detail::inducing_from_rows(model.factors, train, rows_b, rng);
  const RbfKernel kernel(config.bandwidth);
  const Matrix empty(0, B.cols());

  switch (config.model) {
    case ModelKind::gptf_probit: {
      const auto g = svgp_geometry(kernel, B, empty);
      ProbitState s{kernel, B, Vector::Zero(B.rows()), g.Kbb_factor.lower()};
      model.state = std::move(s);
      break;
    }
    case ModelKind::gptf_pg: {
      const auto g = svgp_geometry(kernel, B, empty);
      SvgpState s{kernel, B, NaturalGaussian{Vector::Zero(B.rows()), -0.5 * g.Kbb_inv}, lik};
      model.state = std::move(s);
      break;
    }
    case ModelKind::ented: {
      const auto pv = static_cast<std::size_t>(config.inducing_v);
      std::vector<std::size_t> rows_h(pv);
      for (std::size_t i = 0; i < pv; ++i) rows_h[i] = perm[(pu + i) % perm.size()];
      Matrix H = detail::inducing_from_rows(model.factors, train, rows_h, rng);
      const auto g = solve_geometry(kernel, B, H, empty);
      SolveState s{kernel, B, H, NaturalGaussian{Vector::Zero(B.rows()), -0.5 * g.u.Kbb_inv},
                   NaturalGaussian{Vector::Zero(H.rows()), -0.5 * g.Chh_inv}, lik};
      model.state = std::move(s);
      break;
    }
  }
  return model;
}

/// Adam ascent over a fixed list of parameter blocks.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

  void begin_step() { ++t_; }

  /// Moves block `slot` along the ascent direction of `grad`.
  void apply(std::size_t slot, double* param, const double* grad, std::size_t size) {
    if (slot >= m_.size()) {
      m_.resize(slot + 1);
      v_.resize(slot + 1);
    }
    auto& m = m_[slot];
    auto& v = v_[slot];
    if (m.size() != size) {
      m.assign(size, 0.0);
      v.assign(size, 0.0);
    }
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < size; ++i) {
      m[i] = b1_ * m[i] + (1.0 - b1_) * grad[i];
      v[i] = b2_ * v[i] + (1.0 - b2_) * grad[i] * grad[i];
      param[i] += lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }

  template <typename Derived>
  void apply(std::size_t slot, Eigen::MatrixBase<Derived>& param, const Eigen::MatrixBase<Derived>& grad) {
    apply(slot, param.derived().data(), grad.derived().data(),
          static_cast<std::size_t>(param.size()));
  }

 private:
  double lr_, b1_, b2_, eps_;
  std::uint64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// Local update and NG step(s) for one batch of the gptf-pg model, then the
/// ELBO (and gradients) at the updated q(u).
inline ElboValue pg_train_step(SvgpState& st, const FactorSet& factors, const EntryBatch& batch,
                               double rho, ModelGradient* grad) {
  const Matrix M = assemble_inputs(factors, batch.indices);
  const auto g = svgp_geometry(st.kernel, st.B, M);
  const auto sites = make_sites(batch.values, st.lik, pg_local_update(g, to_moment(st.qu)));
  st.qu = ng_step(st.qu, pg_ng_targets(g, batch.scale, sites), rho);
  return pg_elbo_eval(st, g, to_moment(st.qu), natural_logdet_cov(st.qu), factors,
                      batch.indices, batch.scale, sites, grad);
}

/// Same for the ented model; q(v) is updated after, and against, the new q(u).
inline ElboValue solve_train_step(SolveState& st, const FactorSet& factors,
                                  const EntryBatch& batch, double rho, ModelGradient* grad) {
  const Matrix M = assemble_inputs(factors, batch.indices);
  const auto g = solve_geometry(st.kernel, st.B, st.H, M);
  auto qv = to_moment(st.qv);
  auto fp = fperp_moments(g, qv);
  const auto sites = make_sites(batch.values, st.lik, solve_local_update(g, fp, to_moment(st.qu)));
  st.qu = ng_step(st.qu, solve_ng_target_u(g, fp, batch.scale, sites), rho);
  const auto qu = to_moment(st.qu);
  st.qv = ng_step(st.qv, solve_ng_target_v(g, qu, batch.scale, sites), rho);
  qv = to_moment(st.qv);
  fp = fperp_moments(g, qv);
  const double ldv = st.qv.dim() ? natural_logdet_cov(st.qv) : 0.0;
  return solve_elbo_eval(st, g, qu, natural_logdet_cov(st.qu), qv, ldv, fp, factors,
                         batch.indices, batch.scale, sites, grad);
}

namespace detail {

inline bool all_finite(const ModelGradient& g) {
  for (const auto& z : g.factors.modes)
    if (!z.allFinite()) return false;
  return g.B.allFinite() && g.H.allFinite() && g.probit_mean.allFinite() &&
         g.probit_chol.allFinite() && std::isfinite(g.log_bandwidth);
}

}  // namespace detail

/// One minibatch of training. Returns the ELBO estimate of the batch.
inline double train_batch(Model& model, const EntryBatch& batch, const TrainConfig& config,
                          Adam& adam) {
  ModelGradient grad;
  ElboValue elbo;
  std::visit(
      [&](auto& st) {
        using S = std::decay_t<decltype(st)>;
        if constexpr (std::is_same_v<S, SvgpState>)
          elbo = pg_train_step(st, model.factors, batch, config.ng_rate, &grad);
        else if constexpr (std::is_same_v<S, SolveState>)
          elbo = solve_train_step(st, model.factors, batch, config.ng_rate, &grad);
        else
          elbo = probit_elbo_terms(st, model.factors, batch, &grad);
      },
      model.state);
  if (!std::isfinite(elbo.total()) || !detail::all_finite(grad))
    throw NumericalError("non-finite ELBO or gradient (data " + std::to_string(elbo.data) +
                         ", kl_u " + std::to_string(elbo.kl_u) + ", kl_v " +
                         std::to_string(elbo.kl_v) + ")");

  adam.begin_step();
  std::size_t slot = 0;
  for (std::size_t d = 0; d < model.factors.order(); ++d)
    adam.apply(slot++, model.factors.modes[d], grad.factors.modes[d]);
  std::visit(
      [&](auto& st) {
        using S = std::decay_t<decltype(st)>;
        adam.apply(slot++, st.B, grad.B);
        if constexpr (std::is_same_v<S, SolveState>) adam.apply(slot++, st.H, grad.H);
        if constexpr (std::is_same_v<S, ProbitState>) {
          adam.apply(slot++, st.mean, grad.probit_mean);
          adam.apply(slot++, st.chol, grad.probit_chol);
        }
        if (config.learn_bandwidth) {
          double log_l = std::log(st.kernel.bandwidth);
          adam.apply(slot++, &log_l, &grad.log_bandwidth, 1);
          st.kernel = RbfKernel(std::exp(log_l));
        }
      },
      model.state);
  return elbo.total();
}

using EpochCallback = std::function<void(const EpochRecord&)>;

namespace detail {

inline EpochRecord norms(const Model& model) {
  EpochRecord r;
  double z = 0.0;
  for (const auto& m : model.factors.modes) z += m.squaredNorm();
  r.norm_z = std::sqrt(z);
  std::visit(
      [&](const auto& st) {
        r.norm_b = st.B.norm();
        if constexpr (std::is_same_v<std::decay_t<decltype(st)>, SolveState>)
          r.norm_h = st.H.norm();
      },
      model.state);
  return r;
}

}  // namespace detail

/// Runs the training loop from `model` for config.epochs epochs.
inline TrainReport fit(const TrainConfig& config, const SparseTensor& train, Model model,
                       const EpochCallback& on_epoch = {}) {
  config.validate();
  if (train.kind() != model.lik.data_kind())
    throw ConfigError("data kind does not match the model likelihood");
  TrainReport report;
  Adam adam(config.lr);
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto batches = minibatches(train, config.batch_size, detail::epoch_seed(config.seed, epoch));
    double sum = 0.0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      try {
        sum += train_batch(model, batches[b], config, adam);
      } catch (const NumericalError& e) {
        throw NumericalError("epoch " + std::to_string(epoch) + ", batch " + std::to_string(b) +
                             ": " + e.what());
      }
    }
    EpochRecord rec = detail::norms(model);
    rec.epoch = epoch;
    rec.elbo = sum / static_cast<double>(batches.size());
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (config.early_stop && report.epochs.size() > 10) {
      const double prev = report.epochs[report.epochs.size() - 11].elbo;
      if (std::abs(rec.elbo - prev) <= 1e-6 * std::abs(prev)) {
        report.early_stopped = true;
        break;
      }
    }
  }
  report.model = std::move(model);
  return report;
}

inline TrainReport fit(const TrainConfig& config, const SparseTensor& train,
                       const EpochCallback& on_epoch = {}) {
  return fit(config, train, init_state(config, train), on_epoch);
}

}  // namespace ented
