#pragma once

#include <string>
#include <variant>

#include "ented/factors.hpp"
#include "ented/probit.hpp"
#include "ented/solve.hpp"
#include "ented/svgp.hpp"

namespace ented {

enum class ModelKind { gptf_probit, gptf_pg, ented };

inline std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::gptf_probit: return "gptf-probit";
    case ModelKind::gptf_pg: return "gptf-pg";
    case ModelKind::ented: return "ented";
  }
  return "?";
}

inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "gptf-probit") return ModelKind::gptf_probit;
  if (s == "gptf-pg") return ModelKind::gptf_pg;
  if (s == "ented") return ModelKind::ented;
  throw ConfigError("unknown model '" + s + "'");
}

using ModelState = std::variant<ProbitState, SvgpState, SolveState>;

/// A complete fitted (or initialized) model: latent factors plus GP state.
struct Model {
  FactorSet factors;
  ModelState state;
  LikelihoodConfig lik;

  ModelKind kind() const {
    if (std::holds_alternative<ProbitState>(state)) return ModelKind::gptf_probit;
    if (std::holds_alternative<SvgpState>(state)) return ModelKind::gptf_pg;
    return ModelKind::ented;
  }

  const RbfKernel& kernel() const {
    return std::visit([](const auto& s) -> const RbfKernel& { return s.kernel; }, state);
  }
};

}  // namespace ented
