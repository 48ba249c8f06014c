#include <doctest.h>

#include <fstream>
#include <random>
#include <sstream>

#include "dpn/embeddings.hpp"
#include "dpn/error.hpp"
#include "dpn/optim.hpp"

using namespace dpn;

TEST_CASE("hash_id basics") {
  CHECK(hash_id("anything", 1) == 0);
  CHECK(hash_id(12345, 1) == 0);
  CHECK(hash_id("abc", 1000) == hash_id("abc", 1000));
  CHECK(hash_id(42, 977) == hash_id("42", 977));
  CHECK_THROWS_AS(hash_id("x", 0), ConfigError);
}

TEST_CASE("hash_id golden file") {
  std::ifstream in(DPN_TEST_DATA_DIR "/hash_golden.tsv");
  REQUIRE(in);
  std::string line;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (line.rfind("# ", 0) == 0) continue;
    const auto t1 = line.find('\t');
    const auto t2 = line.find('\t', t1 + 1);
    const std::string key = line.substr(0, t1);
    const std::size_t buckets = std::stoull(line.substr(t1 + 1, t2 - t1 - 1));
    const std::size_t want = std::stoull(line.substr(t2 + 1));
    INFO("key=\"" << key << "\" buckets=" << buckets);
    CHECK(hash_id(key, buckets) == want);
    ++rows;
  }
  CHECK(rows == 100);
}

TEST_CASE("hash_id spreads keys evenly") {
  const std::size_t buckets = 1 << 16, keys = 100000;
  std::vector<std::size_t> load(buckets, 0);
  for (std::size_t k = 0; k < keys; ++k) ++load[hash_id("key" + std::to_string(k), buckets)];
  const double mean = static_cast<double>(keys) / buckets;
  const auto mx = *std::max_element(load.begin(), load.end());
  CHECK(static_cast<double>(mx) < 4 * mean + 4);  // mean is ~1.5, so allow the +4 floor on tiny counts
}

TEST_CASE("schema rejects duplicate names and looks up fields") {
  FieldSchema s({{"user", 10, false}, {"movie", 20, false}});
  CHECK(s.index_of("movie") == 1);
  CHECK_THROWS_AS(s.add({"user", 5, true}), ConfigError);
  CHECK_THROWS_AS(s.index_of("tag"), ConfigError);
}

TEST_CASE("lookup of identity table returns unit rows") {
  std::mt19937_64 rng(1);
  EmbeddingTable t("f", 4, 4, rng);
  t.weights.value.fill(0.0);
  for (std::size_t i = 0; i < 4; ++i) t.weights.value[i * 4 + i] = 1.0;
  Graph g;
  const std::vector<std::int64_t> ids{2, 0};
  Var y = t.lookup(g, ids);
  CHECK(y.value().at({0, 2}) == 1.0);
  CHECK(y.value().at({1, 0}) == 1.0);
  CHECK(sum_all(y).value().item() == 2.0);
}

TEST_CASE("gather/scatter equals dense one-hot matmul") {
  std::mt19937_64 rng(3);
  const std::size_t v = 7, e = 3;
  EmbeddingTable t("item", v, e, rng);
  const std::vector<std::int64_t> ids{4, 1, 4, 6, 0};
  Tensor onehot({ids.size(), v});
  for (std::size_t b = 0; b < ids.size(); ++b) onehot[b * v + ids[b]] = 1.0;
  Tensor upstream({ids.size(), e});
  std::normal_distribution<double> nd;
  for (double& x : upstream.data()) x = nd(rng);

  Graph g;
  Var y = t.lookup(g, ids);
  g.backward(sum_all(mul(y, g.constant(upstream))));

  Graph gd;
  Var W = gd.leaf(t.weights.value);
  Var yd = matmul(gd.constant(onehot), W);
  gd.backward(sum_all(mul(yd, gd.constant(upstream))));

  CHECK(y.value() == yd.value());
  CHECK(t.weights.grad == gd.grad(W));
  // row 4 appears twice: its gradient is the sum of both upstream rows
  for (std::size_t k = 0; k < e; ++k) CHECK(t.weights.grad[4 * e + k] == upstream[0 * e + k] + upstream[2 * e + k]);
  std::vector<std::size_t> touched = t.weights.touched_rows;
  std::sort(touched.begin(), touched.end());
  CHECK(touched == std::vector<std::size_t>{0, 1, 4, 6});
}

TEST_CASE("out of range id names the field") {
  std::mt19937_64 rng(1);
  EmbeddingTable t("movie", 5, 2, rng);
  Graph g;
  const std::vector<std::int64_t> bad{5};
  try {
    t.lookup(g, bad);
    FAIL("expected IndexError");
  } catch (const IndexError& e) {
    CHECK(std::string(e.what()).find("movie") != std::string::npos);
  }
}

TEST_CASE("concat_fields and stack_fields") {
  std::mt19937_64 rng(5);
  std::vector<EmbeddingTable> tables;
  for (const char* f : {"user", "movie", "tag"}) tables.emplace_back(f, 6, 10, rng);
  Graph g;
  const std::vector<std::int64_t> ids{1, 2};
  std::vector<Var> parts;
  for (auto& t : tables) parts.push_back(t.lookup(g, ids));
  CHECK(concat_fields(parts).shape() == Shape{2, 30});
  CHECK(stack_fields(parts).shape() == Shape{2, 3, 10});
  CHECK(concat_fields({parts[0]}).value() == parts[0].value());
  // reversed order reverses the blocks
  Tensor fwd = concat_fields(parts).value();
  Tensor rev = concat_fields({parts[2], parts[1], parts[0]}).value();
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t k = 0; k < 10; ++k) CHECK(fwd[b * 30 + k] == rev[b * 30 + 20 + k]);
}

TEST_CASE("lazy Adam leaves untouched rows and their moments frozen") {
  std::mt19937_64 rng(9);
  EmbeddingTable t("f", 5, 2, rng);
  Adam adam(t.parameters(), {0.1});
  const Tensor before = t.weights.value;
  for (int step = 0; step < 3; ++step) {
    adam.zero_grad();
    Graph g;
    const std::vector<std::int64_t> ids{1, 3};
    g.backward(sum_all(t.lookup(g, ids)));
    adam.step();
  }
  for (std::size_t r : {0, 2, 4})
    for (std::size_t k = 0; k < 2; ++k) {
      CHECK(t.weights.value[r * 2 + k] == before[r * 2 + k]);
      CHECK(adam.first_moments()[0][r * 2 + k] == 0.0);
    }
  for (std::size_t r : {1, 3}) CHECK(t.weights.value[r * 2] != before[r * 2]);

  // dense-gradient run over the same rows gives the same values on those rows
  std::mt19937_64 rng2(9);
  EmbeddingTable d("f", 5, 2, rng2);
  d.weights.sparse = false;
  Adam dense(d.parameters(), {0.1});
  for (int step = 0; step < 3; ++step) {
    dense.zero_grad();
    Graph g;
    const std::vector<std::int64_t> ids{1, 3};
    g.backward(sum_all(d.lookup(g, ids)));
    dense.step();
  }
  for (std::size_t r : {1, 3})
    for (std::size_t k = 0; k < 2; ++k) CHECK(d.weights.value[r * 2 + k] == t.weights.value[r * 2 + k]);
}
