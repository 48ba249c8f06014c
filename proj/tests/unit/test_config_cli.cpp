#include <doctest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>

#include "dpn/config.hpp"
#include "dpn/error.hpp"
#include "dpn/metrics.hpp"

using namespace dpn;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& n) const { return (path / n).string(); }
};

std::string read_all(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

void write(const std::string& path, const std::string& text) { std::ofstream(path) << text; }

struct Run {
  int code = -1;
  std::string out;  // stdout and stderr together
};

Run cli(const std::string& args) {
  const std::string cmd = std::string(DPN_BIN) + " " + args + " 2>&1";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  std::array<char, 512> buf{};
  while (fgets(buf.data(), buf.size(), p)) r.out += buf.data();
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

json toy_config(const std::string& out) {
  return json{{"name", "toy"},
              {"data",
               {{"source", "synth_multiplicative"},
                {"multiplicative", {{"rows", 600}, {"users", 10}, {"items", 10}, {"dim", 4}, {"scale", 3.0}}}}},
              {"model",
               {{"family", "feature_dpn"},
                {"embed_dim", 4},
                {"layers", json::array({{{"kind", "feature_dpo"}, {"units", 4}, {"context", "x:user"}},
                                        {{"kind", "dense"}, {"units", 4}}})}}},
              {"train", {{"lr", 0.01}, {"batch_size", 64}, {"epochs", 3}}},
              {"slices", json::array({"user:50"})},
              {"out", out}};
}

}  // namespace

TEST_CASE("unknown keys are rejected at every level") {
  const json base = toy_config("/tmp/unused");
  CHECK_NOTHROW(parse_run_config(base));

  auto top = base;
  top["learning_rate"] = 0.1;
  CHECK_THROWS_AS(parse_run_config(top), ConfigError);

  auto layer = base;
  layer["model"]["layers"][0]["untis"] = 3;
  CHECK_THROWS_WITH_AS(parse_run_config(layer), doctest::Contains("untis"), ConfigError);

  auto gen = base;
  gen["model"]["layers"][0]["generator"] = {{"kind", "mok"}, {"rnak", 4}};
  CHECK_THROWS_AS(parse_run_config(gen), ConfigError);

  auto train = base;
  train["train"]["momentum"] = 0.9;
  CHECK_THROWS_AS(parse_run_config(train), ConfigError);

  auto kind = base;
  kind["model"]["layers"][0]["kind"] = "conv";
  CHECK_THROWS_AS(parse_run_config(kind), ConfigError);

  auto act = base;
  act["model"]["layers"][1]["activation"] = "gelu";
  CHECK_THROWS_AS(parse_run_config(act), ConfigError);
}

TEST_CASE("resolved config round-trips") {
  const RunConfig c = parse_run_config(toy_config("/tmp/x"));
  const json j = to_json(c);
  CHECK(to_json(parse_run_config(j)) == j);

  auto seeded = toy_config("/tmp/x");
  seeded["seed"] = 42;
  CHECK(parse_run_config(seeded).train.seed == 42);
}

TEST_CASE("every committed config parses and round-trips") {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(DPN_CONFIG_DIR)) {
    if (e.path().extension() != ".json") continue;
    CAPTURE(e.path().filename().string());
    RunConfig c;
    REQUIRE_NOTHROW(c = load_run_config(e.path().string()));
    CHECK(to_json(parse_run_config(to_json(c))) == to_json(c));
    ++n;
  }
  CHECK(n >= 20);
}

TEST_CASE("slice strings") {
  CHECK(parse_slice("user:20").first == "user");
  CHECK(parse_slice("user:20").second == 20.0);
  CHECK(std::isinf(parse_slice("user:inf").second));
  CHECK_THROWS_AS(parse_slice("user"), ConfigError);
  CHECK_THROWS_AS(parse_slice("inf"), ConfigError);
  CHECK_THROWS_AS(parse_slice("user:abc"), ConfigError);
}

TEST_CASE("cli train is reproducible and eval agrees with it") {
  TempDir tmp("dpn_cli_train");
  write(tmp.file("toy.json"), toy_config(tmp.file("run")).dump());

  const auto a = cli("train " + tmp.file("toy.json") + " --seed 1 --out " + tmp.file("a"));
  REQUIRE_MESSAGE(a.code == 0, a.out);
  const auto b = cli("train " + tmp.file("toy.json") + " --seed 1 --out " + tmp.file("b"));
  REQUIRE(b.code == 0);
  const std::string ckpt_a = read_all(tmp.file("a/model.ckpt"));
  for (const char* f : {"metrics.json", "metrics.txt", "timing.json", "config.resolved.json", "model.ckpt"}) {
    CHECK(fs::exists(tmp.path / "a" / f));
  }
  const std::string ma = read_all(tmp.file("a/metrics.json"));
  CHECK(ma == read_all(tmp.file("b/metrics.json")));
  // Same output directory too, so the embedded config matches.
  REQUIRE(cli("train " + tmp.file("toy.json") + " --seed 1 --out " + tmp.file("a")).code == 0);
  CHECK(read_all(tmp.file("a/model.ckpt")) == ckpt_a);

  const auto c = cli("train " + tmp.file("toy.json") + " --seed 2 --out " + tmp.file("c"));
  REQUIRE(c.code == 0);
  CHECK(ma != read_all(tmp.file("c/metrics.json")));

  const json trained = json::parse(ma)["test"];
  const auto e = cli("eval " + tmp.file("a/model.ckpt") + " --out " + tmp.file("eval.json"));
  REQUIRE_MESSAGE(e.code == 0, e.out);
  const EvalReport ev = EvalReport::from_json(json::parse(read_all(tmp.file("eval.json"))));
  CHECK(ev.auc == doctest::Approx(trained["auc"].get<double>()).epsilon(1e-12));
  CHECK(ev.logloss == doctest::Approx(trained["logloss"].get<double>()).epsilon(1e-12));
  REQUIRE(ev.slices.count("user<50") == 1);

  const auto s = cli("eval " + tmp.file("a/model.ckpt") + " --slice user:inf --out " + tmp.file("inf.json"));
  REQUIRE(s.code == 0);
  const EvalReport si = EvalReport::from_json(json::parse(read_all(tmp.file("inf.json"))));
  REQUIRE(si.slices.size() == 2);
  for (const auto& [name, m] : si.slices) {
    if (name == "user<50") continue;
    CHECK(m.n == si.n);
    CHECK(m.auc == si.auc);
    CHECK(m.logloss == si.logloss);
  }
}

TEST_CASE("cli error exits") {
  TempDir tmp("dpn_cli_errors");
  json cfg = toy_config(tmp.file("run"));
  cfg["data"] = {{"source", "csv"}, {"path", tmp.file("nowhere/data.csv")}};
  write(tmp.file("missing.json"), cfg.dump());
  const auto m = cli("train " + tmp.file("missing.json"));
  CHECK(m.code == 2);
  CHECK(m.out.find(tmp.file("nowhere/data.csv")) != std::string::npos);

  auto bad = toy_config(tmp.file("run"));
  bad["model"]["layers"][0]["context"] = "y_prev";
  write(tmp.file("bad.json"), bad.dump());
  CHECK(cli("train " + tmp.file("bad.json")).code == 2);

  CHECK(cli("frobnicate").code == 2);
  CHECK(cli("train").code == 2);
  CHECK(cli("verify --suite everything").code == 2);

  write(tmp.file("junk.ckpt"), "not a checkpoint");
  CHECK(cli("eval " + tmp.file("junk.ckpt")).code == 1);
}

TEST_CASE("cli verify and fault injection") {
  const auto ok = cli("verify --suite identities");
  CHECK_MESSAGE(ok.code == 0, ok.out);
  CHECK(ok.out.find("all passed") != std::string::npos);
  const auto bad = cli("verify --suite identities --inject-fault");
  CHECK(bad.code == 1);
  CHECK(bad.out.find("FAIL") != std::string::npos);
}

TEST_CASE("cli bench") {
  TempDir tmp("dpn_cli_bench");
  auto empty = toy_config(tmp.file("run"));
  empty["bench"] = {{"models", json::array()}};
  write(tmp.file("empty.json"), empty.dump());
  const auto e = cli("bench " + tmp.file("empty.json") + " --out " + tmp.file("empty_rows.json"));
  REQUIRE(e.code == 0);
  CHECK(json::parse(read_all(tmp.file("empty_rows.json"))).empty());
  CHECK(e.out.find("params") != std::string::npos);

  auto two = toy_config(tmp.file("run"));
  two["bench"] = {{"repeats", 1},
                  {"models",
                   json::array({{{"name", "mlp"}, {"model", {{"family", "mlp"}, {"embed_dim", 4}, {"layers", json::array({{{"kind", "dense"}, {"units", 5}}})}}}},
                                {{"name", "dpn"}, {"model", toy_config("")["model"]}}})}};
  write(tmp.file("two.json"), two.dump());
  const auto t = cli("bench " + tmp.file("two.json") + " --out " + tmp.file("rows.json"));
  REQUIRE_MESSAGE(t.code == 0, t.out);
  const json rows = json::parse(read_all(tmp.file("rows.json")));
  REQUIRE(rows.size() == 2);
  // 8*5+5 + BN 10 + classifier 6
  CHECK(rows[0]["params"] == 61);
  for (const auto& r : rows) CHECK(r["params"] == r["analytic_params"]);
}

TEST_CASE("cli ingest then train on the processed directory") {
  TempDir tmp("dpn_cli_ingest");
  std::string csv = "user,movie,tag\n";
  for (int i = 0; i < 200; ++i) {
    csv += "u" + std::to_string(i % 13) + ",m" + std::to_string(i % 7) + ",t" + std::to_string((i * 5) % 37) + "\n";
  }
  write(tmp.file("tags.csv"), csv);
  const auto r = cli("ingest " + tmp.file("tags.csv") + " --out " + tmp.file("proc") +
                     " --columns user,movie,tag --label '' --negatives 1 --user-field user --target-field tag --seed 3");
  REQUIRE_MESSAGE(r.code == 0, r.out);
  CHECK(r.out.find("ingested 400 rows") != std::string::npos);

  json cfg = toy_config(tmp.file("run"));
  cfg["data"] = {{"source", "dataset"}, {"path", tmp.file("proc")}};
  cfg["model"]["layers"][0]["context"] = "z:tag";
  write(tmp.file("proc.json"), cfg.dump());
  const auto t = cli("train " + tmp.file("proc.json") + " --epochs 1");
  CHECK_MESSAGE(t.code == 0, t.out);

  const auto missing = cli("ingest " + tmp.file("absent.csv") + " --out " + tmp.file("p2") + " --columns user");
  CHECK(missing.code == 2);
  const auto badsplit = cli("ingest " + tmp.file("tags.csv") + " --out " + tmp.file("p3") + " --columns user --label '' --split 7-2-1");
  CHECK(badsplit.code == 2);
}
