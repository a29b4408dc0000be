#pragma once

// Numerical checks shared by the unit tests and the acceptance runner. Each
// returns an error measure; callers compare it against their tolerance.

#include <algorithm>
#include <limits>
#include <random>
#include <vector>

#include "test_util.hpp"

namespace checks {

using namespace ented;
using namespace testutil;

// ------------------------------------------------------------- gradients

/// Relative errors of each analytic gradient block against central differences.
struct GradErrors {
  double factors = 0.0, B = 0.0, H = 0.0, mean = 0.0, chol = 0.0, bandwidth = 0.0;
  double max() const { return std::max({factors, B, H, mean, chol, bandwidth}); }
};

namespace detail {

inline double factor_err(FactorSet& f, const FactorSet& analytic, const std::function<double()>& fn) {
  double num = 0.0, den = 0.0;
  for (std::size_t d = 0; d < f.order(); ++d) {
    const Matrix g = fd_gradient(f.modes[d], fn);
    num += (analytic.modes[d] - g).squaredNorm();
    den += g.squaredNorm();
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-12);
}

inline double bandwidth_err(RbfKernel& k, double analytic, const std::function<double()>& fn) {
  const double l0 = k.bandwidth, h = 1e-5;
  k.bandwidth = l0 * std::exp(h);
  const double fp = fn();
  k.bandwidth = l0 * std::exp(-h);
  const double fm = fn();
  k.bandwidth = l0;
  return rel_err(analytic, (fp - fm) / (2.0 * h));
}

}  // namespace detail

inline GradErrors grad_check_pg(std::uint64_t seed, Likelihood lik) {
  auto in = make_instance(seed, lik);
  std::mt19937_64 rng(seed ^ 0xabcdefull);
  const auto sites = random_sites(in, rng);
  auto st = svgp_state(in);
  auto factors = in.factors;
  const auto batch = in.batch();
  ModelGradient g;
  pg_elbo_terms(st, factors, batch, sites, &g);
  auto fn = [&] { return pg_elbo_terms(st, factors, batch, sites).total(); };
  GradErrors e;
  e.factors = detail::factor_err(factors, g.factors, fn);
  e.B = rel_err(g.B, fd_gradient(st.B, fn));
  e.bandwidth = detail::bandwidth_err(st.kernel, g.log_bandwidth, fn);
  return e;
}

inline GradErrors grad_check_solve(std::uint64_t seed, Likelihood lik) {
  auto in = make_instance(seed, lik);
  std::mt19937_64 rng(seed ^ 0x123457ull);
  const auto sites = random_sites(in, rng);
  auto st = solve_state(in);
  auto factors = in.factors;
  const auto batch = in.batch();
  ModelGradient g;
  solve_elbo_terms(st, factors, batch, sites, &g);
  auto fn = [&] { return solve_elbo_terms(st, factors, batch, sites).total(); };
  GradErrors e;
  e.factors = detail::factor_err(factors, g.factors, fn);
  e.B = rel_err(g.B, fd_gradient(st.B, fn));
  e.H = rel_err(g.H, fd_gradient(st.H, fn));
  e.bandwidth = detail::bandwidth_err(st.kernel, g.log_bandwidth, fn);
  return e;
}

inline GradErrors grad_check_probit(std::uint64_t seed) {
  auto in = make_instance(seed, Likelihood::probit);
  auto st = probit_state(in);
  auto factors = in.factors;
  const auto batch = in.batch();
  ModelGradient g;
  probit_elbo_terms(st, factors, batch, &g);
  auto fn = [&] { return probit_elbo_terms(st, factors, batch).total(); };
  GradErrors e;
  e.factors = detail::factor_err(factors, g.factors, fn);
  e.B = rel_err(g.B, fd_gradient(st.B, fn));
  Matrix mean = st.mean;
  auto fn_mean = [&] {
    st.mean = mean.col(0);
    return fn();
  };
  const Matrix gm = fd_gradient(mean, fn_mean);
  st.mean = mean.col(0);
  e.mean = rel_err(Matrix(g.probit_mean), gm);
  const Matrix gl = Matrix(fd_gradient(st.chol, fn).triangularView<Eigen::Lower>());
  e.chol = rel_err(g.probit_chol, gl);
  e.bandwidth = detail::bandwidth_err(st.kernel, g.log_bandwidth, fn);
  return e;
}

// ------------------------------------------------- transcription oracles

struct OracleErrors {
  double probit_elbo = 0.0, pg_elbo = 0.0, pg_targets = 0.0;
  double solve_geometry = 0.0, solve_elbo = 0.0, solve_targets = 0.0;
  double max() const {
    return std::max({probit_elbo, pg_elbo, pg_targets, solve_geometry, solve_elbo, solve_targets});
  }
};

inline OracleErrors transcription_check(std::uint64_t seed, Likelihood lik) {
  OracleErrors e;
  const double l = 1.0;
  {
    auto in = make_instance(seed, Likelihood::probit);
    const auto st = probit_state(in);
    const double ours = probit_elbo(st, in.factors, in.batch());
    const double ref = oracle::probit_bound(in.Z(), in.indices, in.values, in.B, st.mean, st.cov(),
                                            l, in.scale);
    e.probit_elbo = rel_err(ours, ref);
  }
  auto in = make_instance(seed, lik);
  std::mt19937_64 rng(seed ^ 0x5151ull);
  const auto sites = random_sites(in, rng);
  const auto osites = oracle_sites(sites);
  const Matrix M = assemble_inputs(in.factors, in.indices);
  {
    const auto st = svgp_state(in);
    const double ours = pg_elbo(st, in.factors, in.batch(), sites);
    const double ref = oracle::pg_elbo(in.Z(), in.indices, osites, in.B, in.qu.mean, in.qu.cov, l,
                                       in.scale);
    e.pg_elbo = rel_err(ours, ref);
    const auto g = svgp_geometry(st.kernel, st.B, M);
    const auto t = pg_ng_targets(st, g, in.batch(), sites);
    const auto [r1, r2] = oracle::pg_targets(M, osites, in.B, l, in.scale);
    e.pg_targets = std::max(rel_err(Matrix(t.eta1), Matrix(r1)), rel_err(t.eta2, r2));
  }
  {
    const auto st = solve_state(in);
    const auto g = solve_geometry(st.kernel, st.B, st.H, M);
    const auto fp = fperp_moments(g, to_moment(st.qv));
    const auto ref = oracle::solve_geometry(M, in.B, in.H, in.qv.mean, in.qv.cov, l);
    e.solve_geometry = std::max({rel_err(g.Cmh, ref.Cmh), rel_err(g.Chh, ref.Chh),
                                 rel_err(g.kappa_v, ref.kappa_v), rel_err(g.u.kappa, ref.kappa_u),
                                 rel_err(Matrix(fp.mean), Matrix(ref.mean_perp)),
                                 rel_err(Matrix(fp.var), Matrix(ref.var_perp))});
    const double ours = solve_elbo(st, in.factors, in.batch(), sites);
    const double oref = oracle::solve_elbo(in.Z(), in.indices, osites, in.B, in.H, in.qu.mean,
                                           in.qu.cov, in.qv.mean, in.qv.cov, l, in.scale);
    e.solve_elbo = rel_err(ours, oref);
    const auto [tu, tv] = solve_ng_targets(st, g, in.batch(), sites);
    const auto tr = oracle::solve_targets(M, osites, in.B, in.H, in.qu.mean, in.qv.mean, in.qv.cov,
                                          l, in.scale);
    e.solve_targets = std::max({rel_err(Matrix(tu.eta1), Matrix(tr.eta1_u)), rel_err(tu.eta2, tr.eta2_u),
                                rel_err(Matrix(tv.eta1), Matrix(tr.eta1_v)), rel_err(tv.eta2, tr.eta2_v)});
  }
  return e;
}

// ------------------------------------------------ coordinate ascent

/// Largest per-sweep ELBO decrease over `sweeps` sweeps of (c, q(u)[, q(v)])
/// updates with rho = 1 on the full batch; non-positive means monotone.
inline double worst_decrease(ModelKind kind, Likelihood lik, std::uint64_t seed, int sweeps = 50) {
  auto in = make_instance(seed, lik, 40, 6, 6, 2, 3, 0.8);
  in.scale = 1.0;
  const auto batch = in.batch();
  const Matrix M = assemble_inputs(in.factors, in.indices);
  double worst = -std::numeric_limits<double>::infinity();
  if (kind == ModelKind::gptf_pg) {
    auto st = svgp_state(in);
    const auto g = svgp_geometry(st.kernel, st.B, M);
    auto sites = make_sites(batch.values, st.lik, pg_local_update(g, to_moment(st.qu)));
    double prev = pg_elbo(st, in.factors, batch, sites);
    for (int s = 0; s < sweeps; ++s) {
      sites = make_sites(batch.values, st.lik, pg_local_update(g, to_moment(st.qu)));
      st.qu = ng_step(st.qu, pg_ng_targets(g, 1.0, sites), 1.0);
      const double cur = pg_elbo(st, in.factors, batch, sites);
      worst = std::max(worst, prev - cur);
      prev = cur;
    }
  } else {
    auto st = solve_state(in);
    const auto g = solve_geometry(st.kernel, st.B, st.H, M);
    auto sites = make_sites(batch.values, st.lik, solve_local_update(st, g));
    double prev = solve_elbo(st, in.factors, batch, sites);
    for (int s = 0; s < sweeps; ++s) {
      sites = make_sites(batch.values, st.lik, solve_local_update(st, g));
      const auto fp = fperp_moments(g, to_moment(st.qv));
      st.qu = ng_step(st.qu, solve_ng_target_u(g, fp, 1.0, sites), 1.0);
      st.qv = ng_step(st.qv, solve_ng_target_v(g, to_moment(st.qu), 1.0, sites), 1.0);
      const double cur = solve_elbo(st, in.factors, batch, sites);
      worst = std::max(worst, prev - cur);
      prev = cur;
    }
  }
  return worst;
}

// ------------------------------------------------ degenerate reductions

struct Degenerate {
  double elbo_err = 0.0;     // ented with p_v = 0 vs gptf-pg
  double target_err = 0.0;
  double local_err = 0.0;
  double cmh_inf = 0.0;      // |C_MH|_inf with H = B
};

inline Degenerate degenerate_check(std::uint64_t seed, Likelihood lik) {
  Degenerate d;
  auto in = make_instance(seed, lik);
  std::mt19937_64 rng(seed ^ 0x77ull);
  const auto sites = random_sites(in, rng);
  const auto batch = in.batch();
  const Matrix M = assemble_inputs(in.factors, in.indices);
  const auto pg = svgp_state(in);
  SolveState so{in.kernel, in.B, Matrix(0, in.B.cols()), from_moment(in.qu),
                NaturalGaussian{Vector(0), Matrix(0, 0)}, in.lik};
  d.elbo_err = rel_err(solve_elbo(so, in.factors, batch, sites), pg_elbo(pg, in.factors, batch, sites));
  const auto gs = solve_geometry(so.kernel, so.B, so.H, M);
  const auto gp = svgp_geometry(pg.kernel, pg.B, M);
  const auto [tu, tv] = solve_ng_targets(so, gs, batch, sites);
  const auto tp = pg_ng_targets(pg, gp, batch, sites);
  d.target_err = std::max(rel_err(Matrix(tu.eta1), Matrix(tp.eta1)), rel_err(tu.eta2, tp.eta2));
  d.local_err = rel_err(Matrix(solve_local_update(so, gs)), Matrix(pg_local_update(pg, gp)));
  const auto gh = solve_geometry(in.kernel, in.B, in.B, M);
  d.cmh_inf = gh.Cmh.cwiseAbs().rowwise().sum().maxCoeff();
  return d;
}

}  // namespace checks
