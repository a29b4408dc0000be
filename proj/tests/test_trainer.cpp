#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ented/ented.hpp"

using namespace ented;

namespace {

TrainConfig small_config(ModelKind kind, Likelihood lik) {
  TrainConfig c;
  c.model = kind;
  c.likelihood = lik;
  c.rank = 2;
  c.inducing_u = 8;
  c.inducing_v = 8;
  c.batch_size = 32;
  c.epochs = 3;
  c.lr = 1e-2;
  c.seed = 17;
  return c;
}

SparseTensor small_data(Likelihood lik, std::uint64_t seed = 5) {
  const std::vector<std::int64_t> shape{6, 6, 6};
  return lik == Likelihood::negbin ? synth_count(shape, 2, 20.0, seed).tensor
                                   : synth_binary(shape, 2, seed).tensor;
}

bool negative_definite(const Matrix& eta2) {
  Eigen::LLT<Matrix> llt(-eta2);
  return llt.info() == Eigen::Success;
}

}  // namespace

TEST(InitState, PriorKlIsZero) {
  const auto data = small_data(Likelihood::bernoulli);
  for (auto kind : {ModelKind::gptf_pg, ModelKind::ented, ModelKind::gptf_probit}) {
    const auto cfg = small_config(kind, Likelihood::bernoulli);
    const auto model = init_state(cfg, data);
    const Matrix empty(0, model.factors.input_dim());
    std::visit(
        [&](const auto& st) {
          using S = std::decay_t<decltype(st)>;
          const auto g = svgp_geometry(st.kernel, st.B, empty);
          if constexpr (std::is_same_v<S, ProbitState>) {
            EXPECT_NEAR(kl_to_prior(MomentGaussian{st.mean, st.cov()}, g.Kbb_factor), 0.0, 1e-8);
          } else {
            EXPECT_NEAR(kl_to_prior(st.qu, g.Kbb_factor), 0.0, 1e-8);
          }
          if constexpr (std::is_same_v<S, SolveState>) {
            const auto gs = solve_geometry(st.kernel, st.B, st.H, empty);
            EXPECT_NEAR(kl_to_prior(st.qv, gs.Chh_factor), 0.0, 1e-8);
          }
        },
        model.state);
  }
}

TEST(InitState, DeterministicAndValidated) {
  const auto data = small_data(Likelihood::bernoulli);
  auto cfg = small_config(ModelKind::ented, Likelihood::bernoulli);
  EXPECT_EQ(checkpoint_bytes(init_state(cfg, data), cfg), checkpoint_bytes(init_state(cfg, data), cfg));
  cfg.inducing_u = static_cast<Eigen::Index>(data.size()) + 1;
  EXPECT_THROW(init_state(cfg, data), ConfigError);
  cfg = small_config(ModelKind::ented, Likelihood::negbin);
  EXPECT_THROW(init_state(cfg, data), ConfigError);
  cfg = small_config(ModelKind::ented, Likelihood::bernoulli);
  cfg.inducing_v = 0;
  EXPECT_THROW(init_state(cfg, data), ConfigError);
}

TEST(Fit, ZeroEpochsReturnsInit) {
  const auto data = small_data(Likelihood::negbin);
  auto cfg = small_config(ModelKind::ented, Likelihood::negbin);
  cfg.epochs = 0;
  const auto report = fit(cfg, data);
  EXPECT_TRUE(report.epochs.empty());
  EXPECT_EQ(checkpoint_bytes(report.model, cfg), checkpoint_bytes(init_state(cfg, data), cfg));
}

TEST(Fit, FullBatchCoordinateAscentIsMonotone) {
  for (auto kind : {ModelKind::gptf_pg, ModelKind::ented})
    for (auto lik : {Likelihood::bernoulli, Likelihood::negbin}) {
      const auto data = small_data(lik);
      auto cfg = small_config(kind, lik);
      cfg.batch_size = data.size();
      cfg.ng_rate = 1.0;
      cfg.lr = 0.0;
      cfg.epochs = 30;
      const auto report = fit(cfg, data);
      ASSERT_EQ(report.epochs.size(), 30u);
      for (std::size_t e = 1; e < report.epochs.size(); ++e) {
        const double prev = report.epochs[e - 1].elbo, cur = report.epochs[e].elbo;
        EXPECT_GE(cur - prev, -1e-8 * std::max(1.0, std::abs(prev)))
            << to_string(kind) << " " << to_string(lik) << " epoch " << e + 1;
      }
    }
}

TEST(Fit, DeterministicTrace) {
  const auto data = small_data(Likelihood::bernoulli);
  for (auto kind : {ModelKind::gptf_probit, ModelKind::gptf_pg, ModelKind::ented}) {
    const auto cfg = small_config(kind, Likelihood::bernoulli);
    const auto a = fit(cfg, data), b = fit(cfg, data);
    ASSERT_EQ(a.epochs.size(), b.epochs.size());
    for (std::size_t e = 0; e < a.epochs.size(); ++e) EXPECT_EQ(a.epochs[e].elbo, b.epochs[e].elbo);
    EXPECT_EQ(checkpoint_bytes(a.model, cfg), checkpoint_bytes(b.model, cfg));
  }
}

TEST(Fit, KindMismatchIsAnError) {
  const auto data = small_data(Likelihood::negbin);
  EXPECT_THROW(fit(small_config(ModelKind::gptf_pg, Likelihood::bernoulli), data), ConfigError);
  EXPECT_THROW(fit(small_config(ModelKind::gptf_probit, Likelihood::bernoulli), data), ConfigError);
}

TEST(Fit, NaturalParametersStayNegativeDefinite) {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int rep = 0; rep < 100; ++rep) {
    const auto lik = rep % 2 ? Likelihood::negbin : Likelihood::bernoulli;
    const auto kind = rep % 4 < 2 ? ModelKind::ented : ModelKind::gptf_pg;
    const auto data = small_data(lik, static_cast<std::uint64_t>(rep));
    TrainConfig cfg = small_config(kind, lik);
    cfg.seed = static_cast<std::uint64_t>(rep);
    cfg.rank = 1 + static_cast<Eigen::Index>(rng() % 3);
    cfg.inducing_u = 2 + static_cast<Eigen::Index>(rng() % 12);
    cfg.inducing_v = 1 + static_cast<Eigen::Index>(rng() % 12);
    cfg.batch_size = 4 + rng() % 100;
    cfg.ng_rate = 0.05 + 0.95 * unit(rng);
    cfg.lr = std::pow(10.0, -4.0 + 3.0 * unit(rng));
    cfg.bandwidth = 0.5 + 1.5 * unit(rng);
    cfg.learn_bandwidth = rep % 3 == 0;
    cfg.epochs = 2;
    const auto report = fit(cfg, data);
    std::visit(
        [&](const auto& st) {
          using S = std::decay_t<decltype(st)>;
          if constexpr (!std::is_same_v<S, ProbitState>) EXPECT_TRUE(negative_definite(st.qu.eta2)) << rep;
          if constexpr (std::is_same_v<S, SolveState>) EXPECT_TRUE(negative_definite(st.qv.eta2)) << rep;
        },
        report.model.state);
  }
}

TEST(Fit, LearnsBetterThanPermutationNull) {
  const auto syn = synth_binary(std::vector<std::int64_t>{20, 20, 20}, 3, 21);
  TrainConfig cfg;
  cfg.model = ModelKind::ented;
  cfg.rank = 3;
  cfg.inducing_u = 16;
  cfg.inducing_v = 16;
  cfg.epochs = 100;
  cfg.seed = 3;
  const auto report = fit(cfg, syn.tensor);
  const auto pred = predict(report.model, syn.tensor.indices());
  const double a = auc(pred.value, syn.tensor.values());
  double n1 = 0.0;
  for (auto v : syn.tensor.values()) n1 += static_cast<double>(v);
  const double n0 = static_cast<double>(syn.tensor.size()) - n1;
  const double sigma = std::sqrt((n0 + n1 + 1.0) / (12.0 * n0 * n1));
  EXPECT_GT(a, 0.5 + 5.0 * sigma) << "auc " << a;
}

TEST(EpochSeed, MixesSeedAndEpoch) {
  EXPECT_NE(detail::epoch_seed(1, 1), detail::epoch_seed(1, 2));
  EXPECT_NE(detail::epoch_seed(1, 1), detail::epoch_seed(2, 1));
  EXPECT_EQ(detail::epoch_seed(5, 3), detail::epoch_seed(5, 3));
}
