#pragma once

// Sparse COO tensors of binary or count observations: file I/O, negative
// sampling, train/test splitting, minibatching and synthetic generators.

#include <zlib.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "json.hpp"

#include "ented/errors.hpp"

namespace ented {

enum class ValueKind { binary, count };

inline std::string to_string(ValueKind kind) {
  return kind == ValueKind::binary ? "binary" : "count";
}

inline ValueKind parse_value_kind(std::string_view s) {
  if (s == "binary") return ValueKind::binary;
  if (s == "count") return ValueKind::count;
  throw DataError("unknown value kind '" + std::string(s) + "'");
}

namespace detail {

// Product of the mode sizes; throws if it does not fit in 64 bits.
inline std::uint64_t cell_count(std::span<const std::int64_t> shape) {
  std::uint64_t total = 1;
  for (auto s : shape) {
    auto u = static_cast<std::uint64_t>(s);
    if (u != 0 && total > std::numeric_limits<std::uint64_t>::max() / u)
      throw DataError("tensor has more than 2^64 cells");
    total *= u;
  }
  return total;
}

inline std::uint64_t linear_index(std::span<const std::int64_t> shape,
                                  std::span<const std::int64_t> idx) {
  std::uint64_t lin = 0;
  for (std::size_t d = 0; d < shape.size(); ++d)
    lin = lin * static_cast<std::uint64_t>(shape[d]) +
          static_cast<std::uint64_t>(idx[d]);
  return lin;
}

inline void unravel(std::span<const std::int64_t> shape, std::uint64_t lin,
                    std::span<std::int64_t> out) {
  for (std::size_t d = shape.size(); d-- > 0;) {
    auto s = static_cast<std::uint64_t>(shape[d]);
    out[d] = static_cast<std::int64_t>(lin % s);
    lin /= s;
  }
}

inline bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() &&
         s.substr(s.size() - suffix.size()) == suffix;
}

}  // namespace detail

/// Observed entries of an order-D tensor in coordinate format.
///
/// Immutable after construction. The constructor enforces that coordinates
/// are in range, index tuples are unique and values match the kind.
class SparseTensor {
 public:
  SparseTensor() = default;

  SparseTensor(std::vector<std::int64_t> shape, std::vector<std::int64_t> indices,
               std::vector<std::int64_t> values, ValueKind kind)
      : shape_(std::move(shape)),
        indices_(std::move(indices)),
        values_(std::move(values)),
        kind_(kind) {
    validate();
  }

  std::size_t order() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }
  ValueKind kind() const { return kind_; }
  std::span<const std::int64_t> shape() const { return shape_; }
  std::span<const std::int64_t> indices() const { return indices_; }
  std::span<const std::int64_t> values() const { return values_; }

  std::span<const std::int64_t> index(std::size_t n) const {
    return std::span<const std::int64_t>(indices_).subspan(n * order(), order());
  }
  std::int64_t value(std::size_t n) const { return values_[n]; }

  /// Entries at the given row positions, in the given order.
  SparseTensor subset(std::span<const std::size_t> rows) const {
    std::vector<std::int64_t> idx;
    std::vector<std::int64_t> val;
    idx.reserve(rows.size() * order());
    val.reserve(rows.size());
    for (auto r : rows) {
      auto i = index(r);
      idx.insert(idx.end(), i.begin(), i.end());
      val.push_back(values_[r]);
    }
    return SparseTensor(shape_, std::move(idx), std::move(val), kind_);
  }

  friend bool operator==(const SparseTensor&, const SparseTensor&) = default;

 private:
  void validate() const {
    if (shape_.empty()) throw DataError("tensor shape must have at least one mode");
    for (auto s : shape_)
      if (s <= 0) throw DataError("tensor mode sizes must be positive");
    if (indices_.size() != values_.size() * shape_.size())
      throw DataError("index array does not match value count times order");
    std::unordered_set<std::uint64_t> seen;
    seen.reserve(values_.size() * 2);
    detail::cell_count(shape_);
    for (std::size_t n = 0; n < values_.size(); ++n) {
      auto idx = index(n);
      for (std::size_t d = 0; d < order(); ++d)
        if (idx[d] < 0 || idx[d] >= shape_[d])
          throw DataError("entry " + std::to_string(n) + ": coordinate " +
                          std::to_string(idx[d]) + " out of range for mode " +
                          std::to_string(d));
      if (!seen.insert(detail::linear_index(shape_, idx)).second)
        throw DataError("entry " + std::to_string(n) + ": duplicate index");
      check_value(values_[n], kind_, "entry " + std::to_string(n));
    }
  }

 public:
  static void check_value(std::int64_t v, ValueKind kind, const std::string& where) {
    if (kind == ValueKind::binary && v != 0 && v != 1)
      throw DataError(where + ": value " + std::to_string(v) +
                      " does not match kind binary");
    if (kind == ValueKind::count && v < 0)
      throw DataError(where + ": value " + std::to_string(v) +
                      " does not match kind count");
  }

 private:
  std::vector<std::int64_t> shape_;
  std::vector<std::int64_t> indices_;
  std::vector<std::int64_t> values_;
  ValueKind kind_ = ValueKind::binary;
};

/// A minibatch of entries with its unbiasedness weight N/s.
struct EntryBatch {
  std::vector<std::size_t> rows;        // positions in the source tensor
  std::vector<std::int64_t> indices;    // s x D, row-major
  std::vector<std::int64_t> values;
  double scale = 1.0;

  std::size_t size() const { return values.size(); }
};

struct SplitSpec {
  double test_fraction = 0.2;
  std::uint64_t seed = 0;
  // Draw a test set with equal numbers of zeros and ones (binary only).
  bool balanced_negatives = false;
};

// ---------------------------------------------------------------- file I/O

namespace detail {

inline std::vector<std::string> read_lines(const std::string& path) {
  std::vector<std::string> lines;
  if (ends_with(path, ".gz")) {
    gzFile f = gzopen(path.c_str(), "rb");
    if (!f) throw DataError("cannot open " + path);
    std::string current;
    char buf[1 << 16];
    int got;
    while ((got = gzread(f, buf, sizeof(buf))) > 0) {
      for (int i = 0; i < got; ++i) {
        if (buf[i] == '\n') {
          lines.push_back(std::move(current));
          current.clear();
        } else {
          current.push_back(buf[i]);
        }
      }
    }
    int err = 0;
    const char* msg = gzerror(f, &err);
    gzclose(f);
    if (got < 0 || (err != Z_OK && err != Z_STREAM_END))
      throw DataError("gzip read error in " + path + ": " + msg);
    if (!current.empty()) lines.push_back(std::move(current));
  } else {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    std::string line;
    while (std::getline(in, line)) lines.push_back(std::move(line));
  }
  return lines;
}

inline void write_text(const std::string& path, const std::string& text) {
  if (ends_with(path, ".gz")) {
    // mtime and name are not stored by gzwrite, so output is reproducible.
    gzFile f = gzopen(path.c_str(), "wb");
    if (!f) throw DataError("cannot write " + path);
    if (!text.empty() &&
        gzwrite(f, text.data(), static_cast<unsigned>(text.size())) == 0) {
      gzclose(f);
      throw DataError("gzip write error in " + path);
    }
    gzclose(f);
  } else {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    out << text;
    if (!out) throw DataError("write error in " + path);
  }
}

}  // namespace detail

/// Reads a JSON meta file {"shape":[...],"kind":...} and a TSV body with one
/// entry per line: D coordinates followed by the value.
inline SparseTensor load_coo(const std::string& meta_path, const std::string& data_path) {
  std::ifstream meta_in(meta_path);
  if (!meta_in) throw DataError("cannot open " + meta_path);
  nlohmann::json meta;
  try {
    meta_in >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(meta_path + ": invalid JSON: " + e.what());
  }
  if (!meta.is_object() || !meta.contains("shape") || !meta.contains("kind") ||
      !meta["shape"].is_array() || !meta["kind"].is_string())
    throw DataError(meta_path + ": expected {\"shape\":[...],\"kind\":\"binary\"|\"count\"}");
  std::vector<std::int64_t> shape;
  for (const auto& s : meta["shape"]) {
    if (!s.is_number_integer() || s.get<std::int64_t>() <= 0)
      throw DataError(meta_path + ": shape entries must be positive integers");
    shape.push_back(s.get<std::int64_t>());
  }
  if (shape.empty()) throw DataError(meta_path + ": empty shape");
  const ValueKind kind = parse_value_kind(meta["kind"].get<std::string>());
  const std::size_t order = shape.size();

  std::vector<std::int64_t> indices;
  std::vector<std::int64_t> values;
  std::unordered_set<std::uint64_t> seen;
  detail::cell_count(shape);

  const auto lines = detail::read_lines(data_path);
  std::vector<std::int64_t> fields;
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    std::string_view line = lines[ln];
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    const std::string where = data_path + ":" + std::to_string(ln + 1);
    fields.clear();
    std::size_t pos = 0;
    while (true) {
      auto tab = line.find('\t', pos);
      auto tok = line.substr(pos, tab == std::string_view::npos ? line.npos : tab - pos);
      std::int64_t v = 0;
      auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (tok.empty() || ec != std::errc() || ptr != tok.data() + tok.size())
        throw DataError(where + ": malformed field '" + std::string(tok) + "'");
      fields.push_back(v);
      if (tab == std::string_view::npos) break;
      pos = tab + 1;
    }
    if (fields.size() != order + 1)
      throw DataError(where + ": expected " + std::to_string(order + 1) +
                      " tab-separated fields, got " + std::to_string(fields.size()));
    for (std::size_t d = 0; d < order; ++d)
      if (fields[d] < 0 || fields[d] >= shape[d])
        throw DataError(where + ": coordinate " + std::to_string(fields[d]) +
                        " out of range for mode " + std::to_string(d) + " (size " +
                        std::to_string(shape[d]) + ")");
    SparseTensor::check_value(fields[order], kind, where);
    std::span<const std::int64_t> idx(fields.data(), order);
    if (!seen.insert(detail::linear_index(shape, idx)).second)
      throw DataError(where + ": duplicate index");
    indices.insert(indices.end(), fields.begin(), fields.begin() + static_cast<std::ptrdiff_t>(order));
    values.push_back(fields[order]);
  }
  return SparseTensor(std::move(shape), std::move(indices), std::move(values), kind);
}

inline std::string meta_json(const SparseTensor& t) {
  nlohmann::json meta;
  meta["shape"] = std::vector<std::int64_t>(t.shape().begin(), t.shape().end());
  meta["kind"] = to_string(t.kind());
  return meta.dump() + "\n";
}

inline void save_coo(const SparseTensor& t, const std::string& meta_path,
                     const std::string& data_path) {
  detail::write_text(meta_path, meta_json(t));
  std::string body;
  body.reserve(t.size() * (t.order() + 1) * 4);
  for (std::size_t n = 0; n < t.size(); ++n) {
    for (auto i : t.index(n)) {
      body += std::to_string(i);
      body += '\t';
    }
    body += std::to_string(t.value(n));
    body += '\n';
  }
  detail::write_text(data_path, body);
}

// ------------------------------------------------------- sampling utilities

/// Adds as many zero entries as there are positives, drawn uniformly without
/// replacement from the unobserved cells.
inline SparseTensor balanced_negative_sample(const SparseTensor& t, std::uint64_t seed) {
  if (t.kind() != ValueKind::binary)
    throw DataError("balanced negative sampling needs a binary tensor");
  for (auto v : t.values())
    if (v != 1) throw DataError("balanced negative sampling expects only nonzero entries");
  const std::size_t n1 = t.size();
  const std::uint64_t total = detail::cell_count(t.shape());
  if (total - n1 < n1)
    throw DataError("not enough unobserved cells to draw " + std::to_string(n1) +
                    " negatives");

  std::unordered_set<std::uint64_t> observed;
  observed.reserve(n1 * 2);
  for (std::size_t n = 0; n < n1; ++n)
    observed.insert(detail::linear_index(t.shape(), t.index(n)));

  std::mt19937_64 rng(seed);
  std::vector<std::uint64_t> picked;
  picked.reserve(n1);
  const std::uint64_t free_cells = total - n1;
  if (free_cells <= 4 * n1 || total <= (1u << 20)) {
    // Dense regime: enumerate the complement and partially shuffle it.
    std::vector<std::uint64_t> pool;
    pool.reserve(free_cells);
    for (std::uint64_t c = 0; c < total; ++c)
      if (!observed.contains(c)) pool.push_back(c);
    for (std::size_t k = 0; k < n1; ++k) {
      std::uniform_int_distribution<std::uint64_t> pick(k, pool.size() - 1);
      std::swap(pool[k], pool[pick(rng)]);
      picked.push_back(pool[k]);
    }
  } else {
    std::uniform_int_distribution<std::uint64_t> cell(0, total - 1);
    std::unordered_set<std::uint64_t> taken;
    taken.reserve(n1 * 2);
    while (picked.size() < n1) {
      auto c = cell(rng);
      if (observed.contains(c) || !taken.insert(c).second) continue;
      picked.push_back(c);
    }
  }

  std::vector<std::int64_t> indices(t.indices().begin(), t.indices().end());
  std::vector<std::int64_t> values(t.values().begin(), t.values().end());
  std::vector<std::int64_t> idx(t.order());
  for (auto c : picked) {
    detail::unravel(t.shape(), c, idx);
    indices.insert(indices.end(), idx.begin(), idx.end());
    values.push_back(0);
  }
  return SparseTensor(std::vector<std::int64_t>(t.shape().begin(), t.shape().end()),
                      std::move(indices), std::move(values), ValueKind::binary);
}

namespace detail {

inline std::vector<std::size_t> permutation(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(p[i - 1], p[pick(rng)]);
  }
  return p;
}

}  // namespace detail

/// Splits into (train, test). Both keep the relative order of the source.
inline std::pair<SparseTensor, SparseTensor> train_test_split(const SparseTensor& t,
                                                              const SplitSpec& spec) {
  if (!(spec.test_fraction > 0.0 && spec.test_fraction < 1.0))
    throw ConfigError("test fraction must lie in (0, 1)");
  const std::size_t n = t.size();
  const auto n_test = static_cast<std::size_t>(std::llround(static_cast<double>(n) * spec.test_fraction));
  if (n_test < 1 || n_test >= n)
    throw ConfigError("split leaves an empty train or test set (N=" + std::to_string(n) + ")");

  std::mt19937_64 rng(spec.seed);
  std::vector<char> is_test(n, 0);
  if (spec.balanced_negatives) {
    if (t.kind() != ValueKind::binary)
      throw ConfigError("balanced test split needs a binary tensor");
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < n; ++i) (t.value(i) ? pos : neg).push_back(i);
    const std::size_t want_pos = n_test / 2, want_neg = n_test - n_test / 2;
    if (pos.size() <= want_pos || neg.size() <= want_neg)
      throw ConfigError("not enough entries of each class for a balanced test split");
    auto pp = detail::permutation(pos.size(), rng);
    auto pn = detail::permutation(neg.size(), rng);
    for (std::size_t k = 0; k < want_pos; ++k) is_test[pos[pp[k]]] = 1;
    for (std::size_t k = 0; k < want_neg; ++k) is_test[neg[pn[k]]] = 1;
  } else {
    auto perm = detail::permutation(n, rng);
    for (std::size_t k = 0; k < n_test; ++k) is_test[perm[k]] = 1;
  }
  std::vector<std::size_t> train_rows, test_rows;
  for (std::size_t i = 0; i < n; ++i) (is_test[i] ? test_rows : train_rows).push_back(i);
  return {t.subset(train_rows), t.subset(test_rows)};
}

/// One shuffled pass over all entries. The last batch may be short; every
/// batch carries scale N/s for its own length s.
inline std::vector<EntryBatch> minibatches(const SparseTensor& t, std::size_t batch_size,
                                           std::uint64_t epoch_seed) {
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  std::mt19937_64 rng(epoch_seed);
  const auto order = detail::permutation(t.size(), rng);
  const double n = static_cast<double>(t.size());
  std::vector<EntryBatch> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t stop = std::min(order.size(), start + batch_size);
    EntryBatch b;
    b.rows.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                  order.begin() + static_cast<std::ptrdiff_t>(stop));
    for (auto r : b.rows) {
      auto idx = t.index(r);
      b.indices.insert(b.indices.end(), idx.begin(), idx.end());
      b.values.push_back(t.value(r));
    }
    b.scale = n / static_cast<double>(b.rows.size());
    out.push_back(std::move(b));
  }
  return out;
}

/// The whole tensor as a single batch with scale 1.
inline EntryBatch full_batch(const SparseTensor& t) {
  EntryBatch b;
  b.rows.resize(t.size());
  std::iota(b.rows.begin(), b.rows.end(), std::size_t{0});
  b.indices.assign(t.indices().begin(), t.indices().end());
  b.values.assign(t.values().begin(), t.values().end());
  b.scale = 1.0;
  return b;
}

// ------------------------------------------------------ synthetic generators

/// Fully observed synthetic tensor plus the latent function that produced it
/// (entry order is row-major over the shape).
struct SynthTensor {
  SparseTensor tensor;
  std::vector<double> latent;
};

/// Logistic sigmoid, evaluated without overflow.
inline double sigmoid(double f) {
  if (f >= 0) return 1.0 / (1.0 + std::exp(-f));
  const double e = std::exp(f);
  return e / (1.0 + e);
}

namespace detail {

// Draw x ~ NB(zeta, p) as a gamma-Poisson mixture with mean zeta * p / (1 - p).
inline std::int64_t draw_negbin(double zeta, double f, std::mt19937_64& rng) {
  const double odds = std::exp(f);
  std::gamma_distribution<double> gamma(zeta, odds);
  const double rate = gamma(rng);
  if (rate <= 0.0) return 0;
  std::poisson_distribution<std::int64_t> pois(rate);
  return pois(rng);
}

}  // namespace detail

/// Samples every cell from latent CP factors: f = scale / sqrt(R) * sum_r prod_d Z^(d)[i_d, r].
///
/// factors[d] is I_d x R in row-major order. kind=count uses NB(zeta, sigmoid(f)).
inline SynthTensor synth_from_factors(std::span<const std::int64_t> shape,
                                      const std::vector<std::vector<double>>& factors,
                                      std::size_t rank, ValueKind kind, double zeta,
                                      double scale, std::uint64_t seed) {
  if (rank < 1) throw ConfigError("rank must be at least 1");
  if (factors.size() != shape.size()) throw ConfigError("one factor matrix per mode");
  for (std::size_t d = 0; d < shape.size(); ++d)
    if (factors[d].size() != static_cast<std::size_t>(shape[d]) * rank)
      throw ConfigError("factor matrix " + std::to_string(d) + " has the wrong size");
  if (kind == ValueKind::count && !(zeta > 0)) throw ConfigError("zeta must be positive");

  const std::uint64_t total = detail::cell_count(shape);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double norm = scale / std::sqrt(static_cast<double>(rank));
  std::vector<std::int64_t> indices;
  std::vector<std::int64_t> values;
  std::vector<double> latent;
  indices.reserve(total * shape.size());
  values.reserve(total);
  latent.reserve(total);
  std::vector<std::int64_t> idx(shape.size());
  for (std::uint64_t c = 0; c < total; ++c) {
    detail::unravel(shape, c, idx);
    double f = 0.0;
    for (std::size_t r = 0; r < rank; ++r) {
      double prod = 1.0;
      for (std::size_t d = 0; d < shape.size(); ++d)
        prod *= factors[d][static_cast<std::size_t>(idx[d]) * rank + r];
      f += prod;
    }
    f *= norm;
    latent.push_back(f);
    indices.insert(indices.end(), idx.begin(), idx.end());
    if (kind == ValueKind::binary)
      values.push_back(unif(rng) < sigmoid(f) ? 1 : 0);
    else
      values.push_back(detail::draw_negbin(zeta, f, rng));
  }
  return {SparseTensor(std::vector<std::int64_t>(shape.begin(), shape.end()),
                       std::move(indices), std::move(values), kind),
          std::move(latent)};
}

namespace detail {

inline std::vector<std::vector<double>> normal_factors(std::span<const std::int64_t> shape,
                                                       std::size_t rank,
                                                       std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<double>> factors;
  for (auto s : shape) {
    std::vector<double> z(static_cast<std::size_t>(s) * rank);
    for (auto& v : z) v = normal(rng);
    factors.push_back(std::move(z));
  }
  return factors;
}

}  // namespace detail

/// Binary tensor from standard-normal CP factors; logits have standard
/// deviation `logit_scale` (1 by default).
inline SynthTensor synth_binary(std::span<const std::int64_t> shape, std::size_t rank,
                                std::uint64_t seed, double logit_scale = 1.0) {
  if (rank < 1) throw ConfigError("rank must be at least 1");
  std::mt19937_64 rng(seed);
  auto factors = detail::normal_factors(shape, rank, rng);
  return synth_from_factors(shape, factors, rank, ValueKind::binary, 0.0, logit_scale, rng());
}

/// Count tensor from standard-normal CP factors with NB(zeta, sigmoid(f)) observations.
inline SynthTensor synth_count(std::span<const std::int64_t> shape, std::size_t rank,
                               double zeta, std::uint64_t seed, double logit_scale = 1.0) {
  if (rank < 1) throw ConfigError("rank must be at least 1");
  if (!(zeta > 0)) throw ConfigError("zeta must be positive");
  std::mt19937_64 rng(seed);
  auto factors = detail::normal_factors(shape, rank, rng);
  return synth_from_factors(shape, factors, rank, ValueKind::count, zeta, logit_scale, rng());
}

}  // namespace ented
