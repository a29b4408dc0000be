// ented: fit, evaluate and query GP tensor factorization models.
//
// Exit codes: 0 success, 1 invalid input or configuration, 2 numerical failure.

#include <charconv>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "ented/ented.hpp"

namespace {

using namespace ented;

constexpr int kExitOk = 0;
constexpr int kExitInvalid = 1;
constexpr int kExitNumerical = 2;

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct SynthArgs {
  std::vector<std::int64_t> shape;
  std::size_t rank = 3;
  std::string kind = "binary";
  double zeta = 20.0;
  double logit_scale = 1.0;
  std::uint64_t seed = 0;
  std::string meta, data;
  double test_fraction = 0.0;
  std::string test_data;
  bool balanced = false;
};

int cmd_synth(const SynthArgs& a) {
  const auto kind = parse_value_kind(a.kind);
  const auto syn = kind == ValueKind::binary
                       ? synth_binary(a.shape, a.rank, a.seed, a.logit_scale)
                       : synth_count(a.shape, a.rank, a.zeta, a.seed, a.logit_scale);
  if (a.test_fraction > 0.0) {
    if (a.test_data.empty()) throw ConfigError("--test-fraction needs --test-data");
    SplitSpec spec{a.test_fraction, a.seed, a.balanced};
    auto [train, test] = train_test_split(syn.tensor, spec);
    save_coo(train, a.meta, a.data);
    save_coo(test, a.meta, a.test_data);
  } else {
    save_coo(syn.tensor, a.meta, a.data);
  }
  return kExitOk;
}

struct FitArgs {
  std::string data, meta, checkpoint, log;
  std::string model = "ented";
  std::string likelihood;
  TrainConfig config;
};

int cmd_fit(FitArgs& a) {
  auto& c = a.config;
  c.model = parse_model_kind(a.model);
  const auto train = load_coo(a.meta, a.data);
  if (a.likelihood.empty()) {
    c.likelihood = c.model == ModelKind::gptf_probit ? Likelihood::probit
                   : train.kind() == ValueKind::binary ? Likelihood::bernoulli
                                                       : Likelihood::negbin;
  } else {
    c.likelihood = parse_likelihood(a.likelihood);
  }
  // --likelihood bernoulli with the probit model means "binary data".
  if (c.model == ModelKind::gptf_probit && c.likelihood == Likelihood::bernoulli)
    c.likelihood = Likelihood::probit;
  c.validate();
  if (train.kind() != c.likelihood_config().data_kind())
    throw ConfigError("data kind '" + to_string(train.kind()) + "' does not match likelihood '" +
                      to_string(c.likelihood) + "'");

  std::ofstream log;
  if (!a.log.empty()) {
    log.open(a.log, std::ios::trunc);
    if (!log) throw ConfigError("cannot open log file '" + a.log + "'");
  }
  auto on_epoch = [&](const EpochRecord& r) {
    if (!log) return;
    nlohmann::ordered_json j;
    j["epoch"] = r.epoch;
    j["elbo"] = r.elbo;
    j["seconds"] = r.seconds;
    j["norm_z"] = r.norm_z;
    j["norm_b"] = r.norm_b;
    j["norm_h"] = r.norm_h;
    log << j.dump() << '\n' << std::flush;
  };
  try {
    auto report = fit(c, train, on_epoch);
    save_checkpoint(report.model, c, a.checkpoint);
  } catch (const NumericalError& e) {
    if (log) {
      nlohmann::ordered_json j;
      j["error"] = "numerical";
      j["message"] = e.what();
      log << j.dump() << '\n';
    }
    throw;
  }
  return kExitOk;
}

struct EvalArgs {
  std::string checkpoint, data, meta, metrics;
  bool plugin = false;
};

int cmd_eval(const EvalArgs& a) {
  const auto ck = load_checkpoint(a.checkpoint);
  const auto t = load_coo(a.meta, a.data);
  const auto names = a.metrics.empty() ? default_metrics(ck.model.lik) : split_list(a.metrics);
  const auto res =
      evaluate(ck.model, t, names, a.plugin ? PredictMode::plugin : PredictMode::posterior);
  nlohmann::ordered_json j;
  for (const auto& r : res) j[r.name] = r.value;
  j["n"] = t.size();
  std::cout << j.dump() << '\n';
  return kExitOk;
}

struct PredictArgs {
  std::string checkpoint, indices, out;
  bool plugin = false;
};

// Index file: one tuple per line, D tab-separated integers; a trailing value
// column, if present, is ignored.
std::vector<std::int64_t> read_index_file(const std::string& path, std::size_t D) {
  const auto lines = detail::read_lines(path);
  std::vector<std::int64_t> idx;
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    const auto& line = lines[ln];
    if (line.empty()) continue;
    std::vector<std::int64_t> fields;
    std::size_t pos = 0;
    while (pos <= line.size()) {
      auto tab = line.find('\t', pos);
      if (tab == std::string::npos) tab = line.size();
      std::int64_t v = 0;
      const char* b = line.data() + pos;
      const char* e = line.data() + tab;
      auto [p, ec] = std::from_chars(b, e, v);
      if (ec != std::errc() || p != e)
        throw DataError(path + ":" + std::to_string(ln + 1) + ": malformed integer");
      fields.push_back(v);
      pos = tab + 1;
    }
    if (fields.size() != D && fields.size() != D + 1)
      throw DataError(path + ":" + std::to_string(ln + 1) + ": expected " + std::to_string(D) +
                      " indices");
    idx.insert(idx.end(), fields.begin(), fields.begin() + static_cast<std::ptrdiff_t>(D));
  }
  return idx;
}

int cmd_predict(const PredictArgs& a) {
  const auto ck = load_checkpoint(a.checkpoint);
  const std::size_t D = ck.model.factors.order();
  const auto idx = read_index_file(a.indices, D);
  const auto pred =
      predict(ck.model, idx, a.plugin ? PredictMode::plugin : PredictMode::posterior);
  std::string out;
  for (std::size_t n = 0; n < pred.value.size(); ++n) {
    for (std::size_t d = 0; d < D; ++d) out += std::to_string(idx[n * D + d]) + '\t';
    out += fmt(pred.value[n]) + '\n';
  }
  detail::write_text(a.out, out);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GP tensor factorization with Polya-Gamma augmentation"};
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "generate a synthetic CP tensor");
  synth->add_option("--shape", sa.shape, "mode sizes, e.g. 20,20,20")->required()->delimiter(',');
  synth->add_option("--rank", sa.rank, "CP rank of the generator");
  synth->add_option("--kind", sa.kind, "binary or count");
  synth->add_option("--zeta", sa.zeta, "NB number of successes (count)");
  synth->add_option("--logit-scale", sa.logit_scale, "standard deviation of the logits");
  synth->add_option("--seed", sa.seed)->envname("ENTD_SEED");
  synth->add_option("--meta", sa.meta)->required();
  synth->add_option("--data", sa.data)->required();
  synth->add_option("--test-fraction", sa.test_fraction, "hold out this fraction");
  synth->add_option("--test-data", sa.test_data, "where to write held-out entries");
  synth->add_flag("--balanced", sa.balanced, "class-balanced held-out set (binary)");

  FitArgs fa;
  auto& c = fa.config;
  std::uint64_t fit_seed = 0;
  auto* fitc = app.add_subcommand("fit", "train a model");
  fitc->set_config("--config", "", "read options from a TOML/INI file");
  fitc->add_option("--data", fa.data)->required();
  fitc->add_option("--meta", fa.meta)->required();
  fitc->add_option("--checkpoint", fa.checkpoint)->required();
  fitc->add_option("--log", fa.log, "JSON-lines training log");
  fitc->add_option("--model", fa.model, "gptf-probit, gptf-pg or ented");
  fitc->add_option("--likelihood", fa.likelihood, "bernoulli, negbin or probit");
  fitc->add_option("--rank", c.rank);
  fitc->add_option("--inducing-u", c.inducing_u);
  fitc->add_option("--inducing-v", c.inducing_v);
  fitc->add_option("--batch-size", c.batch_size);
  fitc->add_option("--lr", c.lr);
  fitc->add_option("--epochs", c.epochs);
  fitc->add_option("--ng-rate", c.ng_rate);
  fitc->add_option("--zeta", c.zeta);
  fitc->add_option("--bandwidth", c.bandwidth);
  fitc->add_flag("--learn-bandwidth", c.learn_bandwidth);
  fitc->add_flag("--early-stop", c.early_stop);
  fitc->add_option("--seed", fit_seed)->envname("ENTD_SEED");

  EvalArgs ea;
  auto* evalc = app.add_subcommand("eval", "evaluate a checkpoint on a tensor");
  evalc->add_option("--checkpoint", ea.checkpoint)->required();
  evalc->add_option("--data", ea.data)->required();
  evalc->add_option("--meta", ea.meta)->required();
  evalc->add_option("--metrics", ea.metrics, "comma list: auc,nll or rmse,mape,nll");
  evalc->add_flag("--plugin", ea.plugin, "predict at the posterior mean");

  PredictArgs pa;
  auto* predc = app.add_subcommand("predict", "predict entries listed in an index file");
  predc->add_option("--checkpoint", pa.checkpoint)->required();
  predc->add_option("--indices", pa.indices)->required();
  predc->add_option("--out", pa.out)->required();
  predc->add_flag("--plugin", pa.plugin, "predict at the posterior mean");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitInvalid;
  }

  try {
    if (*synth) return cmd_synth(sa);
    if (*fitc) {
      c.seed = fit_seed;
      return cmd_fit(fa);
    }
    if (*evalc) return cmd_eval(ea);
    if (*predc) return cmd_predict(pa);
  } catch (const NumericalError& e) {
    std::cerr << "ented: numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "ented: " << e.what() << '\n';
    return kExitInvalid;
  }
  return kExitInvalid;
}
