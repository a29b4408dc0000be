#pragma once

// Checkpoint file: a one-line JSON manifest, a newline, then the raw
// little-endian float64 payload of every array (row-major, in manifest order).

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "ented/trainer.hpp"

namespace ented {

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  Model model;
  TrainConfig config;
};

namespace detail {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

struct NamedArray {
  std::string name;
  Matrix data;
};

inline nlohmann::ordered_json config_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["model"] = to_string(c.model);
  j["rank"] = c.rank;
  j["inducing_u"] = c.inducing_u;
  j["inducing_v"] = c.inducing_v;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["lr"] = c.lr;
  j["ng_rate"] = c.ng_rate;
  j["likelihood"] = to_string(c.likelihood);
  j["zeta"] = c.zeta;
  j["seed"] = c.seed;
  j["bandwidth"] = c.bandwidth;
  j["learn_bandwidth"] = c.learn_bandwidth;
  j["early_stop"] = c.early_stop;
  return j;
}

inline TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.model = parse_model_kind(j.at("model").get<std::string>());
  c.rank = j.at("rank").get<Eigen::Index>();
  c.inducing_u = j.at("inducing_u").get<Eigen::Index>();
  c.inducing_v = j.at("inducing_v").get<Eigen::Index>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.lr = j.at("lr").get<double>();
  c.ng_rate = j.at("ng_rate").get<double>();
  c.likelihood = parse_likelihood(j.at("likelihood").get<std::string>());
  c.zeta = j.at("zeta").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.bandwidth = j.at("bandwidth").get<double>();
  c.learn_bandwidth = j.at("learn_bandwidth").get<bool>();
  c.early_stop = j.at("early_stop").get<bool>();
  return c;
}

inline Matrix column(const Vector& v) { return Matrix(v); }

inline std::vector<NamedArray> model_arrays(const Model& model) {
  std::vector<NamedArray> out;
  for (std::size_t d = 0; d < model.factors.order(); ++d)
    out.push_back({"Z" + std::to_string(d), model.factors.modes[d]});
  std::visit(
      [&](const auto& st) {
        using S = std::decay_t<decltype(st)>;
        out.push_back({"B", st.B});
        if constexpr (std::is_same_v<S, ProbitState>) {
          out.push_back({"probit.mean", column(st.mean)});
          out.push_back({"probit.chol", st.chol});
        } else {
          out.push_back({"qu.eta1", column(st.qu.eta1)});
          out.push_back({"qu.eta2", st.qu.eta2});
        }
        if constexpr (std::is_same_v<S, SolveState>) {
          out.push_back({"H", st.H});
          out.push_back({"qv.eta1", column(st.qv.eta1)});
          out.push_back({"qv.eta2", st.qv.eta2});
        }
        out.push_back({"bandwidth", Matrix::Constant(1, 1, st.kernel.bandwidth)});
      },
      model.state);
  return out;
}

}  // namespace detail

/// Serializes a model and its training configuration. Output bytes depend
/// only on the arguments.
inline std::string checkpoint_bytes(const Model& model, const TrainConfig& config) {
  const auto arrays = detail::model_arrays(model);
  nlohmann::ordered_json manifest;
  manifest["format_version"] = kCheckpointVersion;
  manifest["model"] = to_string(model.kind());
  manifest["config"] = detail::config_json(config);
  std::vector<std::int64_t> shape;
  for (const auto& z : model.factors.modes) shape.push_back(z.rows());
  manifest["shape"] = shape;
  manifest["layout"] = "row-major float64 little-endian";
  nlohmann::ordered_json list = nlohmann::ordered_json::array();
  std::uint64_t offset = 0;
  for (const auto& a : arrays) {
    nlohmann::ordered_json e;
    e["name"] = a.name;
    e["shape"] = {a.data.rows(), a.data.cols()};
    e["offset"] = offset;
    list.push_back(e);
    offset += static_cast<std::uint64_t>(a.data.size()) * sizeof(double);
  }
  manifest["arrays"] = list;
  manifest["payload_bytes"] = offset;

  std::string out = manifest.dump();
  out.push_back('\n');
  const std::size_t head = out.size();
  out.resize(head + offset);
  char* p = out.data() + head;
  for (const auto& a : arrays) {
    for (Eigen::Index i = 0; i < a.data.rows(); ++i)
      for (Eigen::Index j = 0; j < a.data.cols(); ++j) {
        const double v = a.data(i, j);
        std::memcpy(p, &v, sizeof(double));
        p += sizeof(double);
      }
  }
  return out;
}

inline void save_checkpoint(const Model& model, const TrainConfig& config,
                            const std::string& path) {
  const std::string bytes = checkpoint_bytes(model, config);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot open '" + path + "' for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error("failed writing '" + path + "'");
}

inline Checkpoint parse_checkpoint(const std::string& bytes, const std::string& where = "checkpoint") {
  const auto nl = bytes.find('\n');
  if (nl == std::string::npos) throw DataError(where + ": missing manifest line");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(0, nl));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(where + ": bad manifest: " + e.what());
  }
  try {
    const int version = manifest.at("format_version").get<int>();
    if (version != kCheckpointVersion)
      throw DataError(where + ": unsupported format version " + std::to_string(version));
    const auto payload_bytes = manifest.at("payload_bytes").get<std::uint64_t>();
    const std::uint64_t have = bytes.size() - nl - 1;
    if (have != payload_bytes)
      throw DataError(where + ": payload is " + std::to_string(have) + " bytes, manifest says " +
                      std::to_string(payload_bytes));
    const char* payload = bytes.data() + nl + 1;

    std::map<std::string, Matrix> arrays;
    for (const auto& e : manifest.at("arrays")) {
      const auto name = e.at("name").get<std::string>();
      const auto rows = e.at("shape").at(0).get<Eigen::Index>();
      const auto cols = e.at("shape").at(1).get<Eigen::Index>();
      const auto offset = e.at("offset").get<std::uint64_t>();
      if (rows < 0 || cols < 0) throw DataError(where + ": negative array shape");
      const std::uint64_t size = static_cast<std::uint64_t>(rows) * static_cast<std::uint64_t>(cols);
      if (offset > payload_bytes || size * sizeof(double) > payload_bytes - offset)
        throw DataError(where + ": array '" + name + "' exceeds the payload");
      Matrix m(rows, cols);
      const char* p = payload + offset;
      for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) {
          std::memcpy(&m(i, j), p, sizeof(double));
          p += sizeof(double);
        }
      if (!arrays.emplace(name, std::move(m)).second)
        throw DataError(where + ": duplicate array '" + name + "'");
    }
    auto take = [&](const std::string& name) {
      auto it = arrays.find(name);
      if (it == arrays.end()) throw DataError(where + ": missing array '" + name + "'");
      return it->second;
    };

    Checkpoint ck;
    ck.config = detail::config_from_json(manifest.at("config"));
    const auto kind = parse_model_kind(manifest.at("model").get<std::string>());
    ck.config.model = kind;
    ck.model.lik = ck.config.likelihood_config();
    const auto shape = manifest.at("shape").get<std::vector<std::int64_t>>();
    for (std::size_t d = 0; d < shape.size(); ++d) {
      Matrix z = take("Z" + std::to_string(d));
      if (z.rows() != shape[d]) throw DataError(where + ": factor/shape mismatch");
      ck.model.factors.modes.push_back(std::move(z));
    }
    const RbfKernel kernel(take("bandwidth")(0, 0));
    Matrix B = take("B");
    switch (kind) {
      case ModelKind::gptf_probit:
        ck.model.state = ProbitState{kernel, std::move(B), take("probit.mean").col(0),
                                     take("probit.chol")};
        break;
      case ModelKind::gptf_pg:
        ck.model.state = SvgpState{kernel, std::move(B),
                                   NaturalGaussian{take("qu.eta1").col(0), take("qu.eta2")},
                                   ck.model.lik};
        break;
      case ModelKind::ented:
        ck.model.state = SolveState{kernel, std::move(B), take("H"),
                                    NaturalGaussian{take("qu.eta1").col(0), take("qu.eta2")},
                                    NaturalGaussian{take("qv.eta1").col(0), take("qv.eta2")},
                                    ck.model.lik};
        break;
    }
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(where + ": bad manifest: " + e.what());
  }
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_checkpoint(ss.str(), path);
}

}  // namespace ented
