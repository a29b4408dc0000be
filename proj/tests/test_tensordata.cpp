#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "ented/tensordata.hpp"

using namespace ented;
namespace fs = std::filesystem;

namespace {

fs::path tmpdir() {
  auto p = fs::temp_directory_path() / "ented_tensordata_test";
  fs::create_directories(p);
  return p;
}

void write(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

SparseTensor positives_10x10(std::size_t n1) {
  std::vector<std::int64_t> idx, val;
  for (std::size_t i = 0; i < n1; ++i) {
    idx.push_back(static_cast<std::int64_t>(i % 10));
    idx.push_back(static_cast<std::int64_t>((i / 10 + 3 * (i % 10)) % 10));
    val.push_back(1);
  }
  return SparseTensor({10, 10}, idx, val, ValueKind::binary);
}

}  // namespace

TEST(LoadCoo, ParsesTwoEntries) {
  const auto d = tmpdir();
  write(d / "m.json", R"({"shape":[2,2],"kind":"binary"})");
  write(d / "d.tsv", "0\t0\t1\n1\t1\t0\n");
  const auto t = load_coo((d / "m.json").string(), (d / "d.tsv").string());
  EXPECT_EQ(t.size(), 2u);
  EXPECT_EQ(t.order(), 2u);
  EXPECT_EQ(t.value(0), 1);
  EXPECT_EQ(t.value(1), 0);
  EXPECT_EQ(t.index(1)[0], 1);
}

TEST(LoadCoo, RejectsOutOfRange) {
  const auto d = tmpdir();
  write(d / "m.json", R"({"shape":[2,2],"kind":"binary"})");
  write(d / "d.tsv", "2\t0\t1\n");
  EXPECT_THROW(load_coo((d / "m.json").string(), (d / "d.tsv").string()), DataError);
}

TEST(LoadCoo, RejectsNegativeCount) {
  const auto d = tmpdir();
  write(d / "m.json", R"({"shape":[2,2],"kind":"count"})");
  write(d / "d.tsv", "0\t0\t-1\n");
  EXPECT_THROW(load_coo((d / "m.json").string(), (d / "d.tsv").string()), DataError);
}

TEST(LoadCoo, RejectsDuplicatesAndReportsLine) {
  const auto d = tmpdir();
  write(d / "m.json", R"({"shape":[2,2],"kind":"binary"})");
  write(d / "d.tsv", "0\t0\t1\n0\t0\t0\n");
  EXPECT_THROW(load_coo((d / "m.json").string(), (d / "d.tsv").string()), DataError);
  write(d / "d.tsv", "0\t0\t1\n0\tx\t0\n");
  try {
    load_coo((d / "m.json").string(), (d / "d.tsv").string());
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find(":2"), std::string::npos) << e.what();
  }
}

TEST(LoadCoo, RoundTripPlainAndGzip) {
  const auto d = tmpdir();
  const auto syn = synth_count(std::vector<std::int64_t>{3, 4, 2}, 2, 20.0, 5);
  save_coo(syn.tensor, (d / "m.json").string(), (d / "d.tsv").string());
  const auto back = load_coo((d / "m.json").string(), (d / "d.tsv").string());
  EXPECT_EQ(back, syn.tensor);
  save_coo(back, (d / "m2.json").string(), (d / "d2.tsv").string());
  std::ifstream a(d / "d.tsv"), b(d / "d2.tsv");
  std::string sa((std::istreambuf_iterator<char>(a)), {}), sb((std::istreambuf_iterator<char>(b)), {});
  EXPECT_EQ(sa, sb);

  save_coo(syn.tensor, (d / "m.json").string(), (d / "d.tsv.gz").string());
  EXPECT_EQ(load_coo((d / "m.json").string(), (d / "d.tsv.gz").string()), syn.tensor);
}

TEST(BalancedNegatives, CardinalityAndNoCollisions) {
  const auto t = positives_10x10(5);
  const auto out = balanced_negative_sample(t, 3);
  ASSERT_EQ(out.size(), 10u);
  std::set<std::pair<std::int64_t, std::int64_t>> cells;
  std::size_t zeros = 0;
  for (std::size_t n = 0; n < out.size(); ++n) {
    cells.insert({out.index(n)[0], out.index(n)[1]});
    zeros += out.value(n) == 0;
  }
  EXPECT_EQ(cells.size(), 10u);
  EXPECT_EQ(zeros, 5u);
  EXPECT_EQ(balanced_negative_sample(t, 3), out);
}

TEST(BalancedNegatives, BruteForceNeverDuplicates) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto t = positives_10x10(40);
    const auto out = balanced_negative_sample(t, seed);
    std::set<std::pair<std::int64_t, std::int64_t>> cells;
    for (std::size_t n = 0; n < out.size(); ++n) cells.insert({out.index(n)[0], out.index(n)[1]});
    EXPECT_EQ(cells.size(), out.size());
  }
}

TEST(BalancedNegatives, FullTensorIsAnError) {
  std::vector<std::int64_t> idx, val;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      idx.insert(idx.end(), {i, j});
      val.push_back(1);
    }
  const SparseTensor t({2, 2}, idx, val, ValueKind::binary);
  EXPECT_THROW(balanced_negative_sample(t, 0), DataError);
}

TEST(Split, SizesUnionAndDeterminism) {
  const auto syn = synth_binary(std::vector<std::int64_t>{10}, 1, 1);
  const auto& t = syn.tensor;
  SplitSpec spec{0.2, 9, false};
  const auto [train, test] = train_test_split(t, spec);
  EXPECT_EQ(test.size(), 2u);
  EXPECT_EQ(train.size(), 8u);
  std::set<std::int64_t> seen;
  for (std::size_t n = 0; n < train.size(); ++n) seen.insert(train.index(n)[0]);
  for (std::size_t n = 0; n < test.size(); ++n) EXPECT_TRUE(seen.insert(test.index(n)[0]).second);
  EXPECT_EQ(seen.size(), 10u);
  const auto again = train_test_split(t, spec);
  EXPECT_EQ(again.first, train);
  EXPECT_EQ(again.second, test);
  EXPECT_THROW(train_test_split(t, SplitSpec{0.0, 1, false}), ConfigError);
  EXPECT_THROW(train_test_split(t, SplitSpec{1.0, 1, false}), ConfigError);
}

TEST(Split, BalancedTestSetHasEqualClasses) {
  const auto syn = synth_binary(std::vector<std::int64_t>{12, 12, 12}, 2, 4);
  const auto [train, test] = train_test_split(syn.tensor, SplitSpec{0.2, 4, true});
  std::size_t ones = 0;
  for (auto v : test.values()) ones += v == 1;
  EXPECT_EQ(2 * ones, test.size());
  EXPECT_EQ(train.size() + test.size(), syn.tensor.size());
}

TEST(Minibatches, SizesAndScales) {
  const auto syn = synth_binary(std::vector<std::int64_t>{5}, 1, 2);
  const auto b = minibatches(syn.tensor, 2, 7);
  ASSERT_EQ(b.size(), 3u);
  EXPECT_EQ(b[0].size(), 2u);
  EXPECT_EQ(b[2].size(), 1u);
  EXPECT_DOUBLE_EQ(b[0].scale, 2.5);
  EXPECT_DOUBLE_EQ(b[1].scale, 2.5);
  EXPECT_DOUBLE_EQ(b[2].scale, 5.0);
  std::set<std::size_t> rows;
  for (const auto& x : b) rows.insert(x.rows.begin(), x.rows.end());
  EXPECT_EQ(rows.size(), 5u);

  const auto one = minibatches(syn.tensor, 10, 7);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_DOUBLE_EQ(one[0].scale, 1.0);
  EXPECT_EQ(minibatches(syn.tensor, 2, 7)[0].rows, b[0].rows);
  EXPECT_THROW(minibatches(syn.tensor, 0, 1), ConfigError);
}

TEST(Synth, BinaryShapeAndValues) {
  const auto syn = synth_binary(std::vector<std::int64_t>{4, 4, 4}, 2, 11);
  EXPECT_EQ(syn.tensor.size(), 64u);
  for (auto v : syn.tensor.values()) EXPECT_TRUE(v == 0 || v == 1);
  EXPECT_EQ(synth_binary(std::vector<std::int64_t>{4, 4, 4}, 2, 11).tensor, syn.tensor);
}

TEST(Synth, ZeroFactorsGiveFairCoin) {
  const std::vector<std::int64_t> shape{40, 40, 40};
  std::vector<std::vector<double>> zeros;
  for (auto s : shape) zeros.emplace_back(static_cast<std::size_t>(s) * 2, 0.0);
  const auto syn = synth_from_factors(shape, zeros, 2, ValueKind::binary, 0.0, 1.0, 3);
  double mean = 0.0;
  for (auto v : syn.tensor.values()) mean += static_cast<double>(v);
  const double n = static_cast<double>(syn.tensor.size());
  mean /= n;
  EXPECT_NEAR(mean, 0.5, 4.0 * std::sqrt(0.25 / n));
}

TEST(Synth, ZeroFactorsNegbinMeanIsZeta) {
  const std::vector<std::int64_t> shape{30, 30, 30};
  std::vector<std::vector<double>> zeros;
  for (auto s : shape) zeros.emplace_back(static_cast<std::size_t>(s), 0.0);
  const auto syn = synth_from_factors(shape, zeros, 1, ValueKind::count, 20.0, 1.0, 8);
  const double n = static_cast<double>(syn.tensor.size());
  double mean = 0.0, sq = 0.0;
  for (auto v : syn.tensor.values()) {
    mean += static_cast<double>(v);
    sq += static_cast<double>(v) * static_cast<double>(v);
  }
  mean /= n;
  const double var = sq / n - mean * mean;
  // NB(20, 1/2): mean zeta p / (1 - p) = 20, variance mean / (1 - p) = 40.
  EXPECT_NEAR(var, 40.0, 4.0);
  EXPECT_NEAR(mean, 20.0, 4.0 * std::sqrt(var / n));
}
