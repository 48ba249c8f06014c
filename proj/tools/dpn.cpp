// dpn: train, eval, verify, bench and ingest front end.

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include "dpn/config.hpp"
#include "dpn/error.hpp"
#include "dpn/experiment.hpp"
#include "dpn/oracles.hpp"

namespace fs = std::filesystem;
using namespace dpn;

namespace {

constexpr int kOk = 0, kFail = 1, kUsage = 2;

void write_json(const std::string& path, const nlohmann::json& j) {
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot write " + path);
  f << j.dump(2) << '\n';
}

int cmd_train(const std::string& config, std::optional<std::uint64_t> seed, std::string out, std::optional<std::size_t> threads,
              std::optional<std::size_t> epochs) {
  RunConfig cfg = load_run_config(config);
  if (seed) cfg.train.seed = *seed;
  if (threads) cfg.train.threads = *threads;
  if (epochs) cfg.train.epochs = *epochs;
  if (out.empty()) out = cfg.out;
  cfg.out = out;
  const Dataset data = load_data(cfg.data);
  const auto o = run_experiment(cfg, data, out, [](const EpochReport& e) {
    std::cout << "epoch " << e.epoch << "  loss " << std::fixed << std::setprecision(5) << e.train_loss << "  val_auc "
              << e.val.auc << "  " << std::setprecision(2) << e.wall_time_s << "s" << std::endl;
  });
  std::cout << "\nbest epoch " << o.train.best_epoch << ", test\n" << o.test.to_text();
  if (!std::isnan(o.oracle_auc)) std::cout << "oracle auc " << std::setprecision(4) << o.oracle_auc << '\n';
  std::cout << "wrote " << out << "/{metrics.json,metrics.txt,timing.json,config.resolved.json,model.ckpt}\n";
  return kOk;
}

int cmd_eval(const std::string& ckpt, const std::string& config, const std::string& data_dir,
             const std::vector<std::string>& slices, const std::string& split_s, const std::string& out) {
  const auto header = read_checkpoint_header(ckpt);
  if (!header.contains("config") || header["config"].is_null()) {
    throw CheckpointError("checkpoint " + ckpt + " carries no run config");
  }
  RunConfig saved = parse_run_config(header["config"]);
  RunConfig cfg = config.empty() ? saved : load_run_config(config);
  if (!data_dir.empty()) {
    cfg.data.source = "dataset";
    cfg.data.path = data_dir;
  }
  const Dataset data = load_data(cfg.data);
  const auto& want = saved.model.schema;
  if (!(data.schema == want)) {
    std::string why = "field count " + std::to_string(data.schema.size()) + " vs " + std::to_string(want.size());
    for (std::size_t f = 0; f < std::min(want.size(), data.schema.size()); ++f) {
      if (!(data.schema[f] == want[f])) {
        why = "field " + std::to_string(f) + " is '" + data.schema[f].name + "' (vocab " +
              std::to_string(data.schema[f].vocab) + "), checkpoint expects '" + want[f].name + "' (vocab " +
              std::to_string(want[f].vocab) + ")";
        break;
      }
    }
    throw ConfigError("schema mismatch between dataset and checkpoint: " + why);
  }
  std::mt19937_64 rng(0);  // values come from the checkpoint
  Model model(saved.model, rng);
  load_checkpoint(ckpt, model);
  Split split = Split::Test;
  if (split_s == "train") split = Split::Train;
  else if (split_s == "val") split = Split::Val;
  else if (split_s != "test") throw UsageError("--split must be train, val or test");
  std::vector<std::string> all = cfg.slices;
  all.insert(all.end(), slices.begin(), slices.end());
  auto masks = build_slices(data, all);
  if (split != Split::Test && !masks.empty()) throw UsageError("slices apply to the test split only");
  const EvalReport r = evaluate(model, data, split, saved.train, masks);
  std::cout << r.to_text();
  if (!out.empty()) write_json(out, r.to_json());
  return kOk;
}

int cmd_verify(const std::string& suite, bool inject, std::uint64_t seed, const std::string& out) {
  OracleOptions opt;
  opt.inject_fault = inject;
  if (seed) opt.seed = seed;
  const auto results = run_suite(suite, opt);
  bool ok = true;
  nlohmann::json j = nlohmann::json::array();
  std::cout << std::left << std::setw(40) << "property" << std::right << std::setw(14) << "max_error" << std::setw(12)
            << "threshold" << std::setw(8) << "result" << '\n';
  for (const auto& r : results) {
    ok = ok && r.passed;
    std::cout << std::left << std::setw(40) << r.name << std::right << std::scientific << std::setprecision(3) << std::setw(14)
              << r.max_error << std::setw(12) << r.threshold << std::setw(8) << (r.passed ? "PASS" : "FAIL") << '\n';
    j.push_back({{"name", r.name},
                 {"max_error", r.max_error},
                 {"threshold", r.threshold},
                 {"passed", r.passed},
                 {"instances", r.instances},
                 {"detail", r.detail}});
  }
  if (!out.empty()) write_json(out, j);
  std::cout << (ok ? "all passed" : "FAILURES") << '\n';
  return ok ? kOk : kFail;
}

int cmd_bench(const std::string& config, const std::string& out) {
  const RunConfig cfg = load_run_config(config);
  std::vector<BenchRow> rows;
  if (!cfg.bench.models.empty()) {
    const Dataset data = load_data(cfg.data);
    rows = run_bench(cfg, data);
  }
  std::cout << bench_table(rows);
  if (!out.empty()) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : rows) {
      j.push_back({{"name", r.name}, {"params", r.params}, {"analytic_params", r.analytic_params},
                   {"seconds_per_epoch", r.seconds_per_epoch}});
    }
    write_json(out, j);
  }
  return kOk;
}

int cmd_ingest(const std::string& input, const std::string& out, const std::vector<std::string>& columns,
               const std::string& label, const std::string& split, std::uint64_t seed, std::size_t negatives,
               const std::string& user, const std::string& target, const std::string& history, std::size_t max_history) {
  IngestOptions o;
  for (const auto& c : columns) {
    ColumnSpec cs;
    // name, name=buckets or name:numeric
    if (auto eq = c.find('='); eq != std::string::npos) {
      cs.name = c.substr(0, eq);
      cs.buckets = std::stoull(c.substr(eq + 1));
    } else if (auto colon = c.find(':'); colon != std::string::npos && c.substr(colon + 1) == "numeric") {
      cs.name = c.substr(0, colon);
      cs.numeric = true;
    } else {
      cs.name = c;
    }
    o.columns.push_back(cs);
  }
  o.label_column = label;
  unsigned a = 0, b = 0, c = 0;
  char x = 0, y = 0;
  std::istringstream ss(split);
  if (!(ss >> a >> x >> b >> y >> c) || x != ':' || y != ':') throw UsageError("--split must look like 7:2:1");
  o.split = {a, b, c};
  o.seed = seed;
  o.negatives = negatives;
  o.user_field = user;
  o.target_field = target;
  o.history_column = history;
  o.max_history = max_history;
  const std::string path = resolve_data_path(input);
  if (!fs::exists(path)) throw ConfigError("input not found: " + path);
  const Dataset d = ingest_csv(path, o);
  save_dataset(d, out);
  std::cout << "ingested " << d.rows << " rows, " << d.schema.size() << " fields -> " << out << '\n';
  for (const auto& f : d.schema.fields()) std::cout << "  " << f.name << ": vocab " << f.vocab << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dynamic parameterized operations for CTR prediction"};
  app.require_subcommand(1);

  auto* train = app.add_subcommand("train", "train a model from a config file");
  std::string t_config, t_out;
  std::optional<std::uint64_t> t_seed;
  std::optional<std::size_t> t_threads, t_epochs;
  train->add_option("config,--config", t_config, "run config (JSON)")->required();
  train->add_option("--seed", t_seed, "run seed (overrides train.seed)");
  train->add_option("--out", t_out, "output directory (overrides out)");
  train->add_option("--threads", t_threads, "evaluation threads");
  train->add_option("--epochs", t_epochs, "epoch budget");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string e_ckpt, e_config, e_data, e_split = "test", e_out;
  std::vector<std::string> e_slices;
  eval->add_option("checkpoint,--checkpoint", e_ckpt, "checkpoint file")->required();
  eval->add_option("--config", e_config, "config whose data section replaces the checkpoint's");
  eval->add_option("--data", e_data, "processed dataset directory");
  eval->add_option("--slice", e_slices, "field:threshold, repeatable");
  eval->add_option("--split", e_split, "train, val or test");
  eval->add_option("--out", e_out, "write the report as JSON");

  auto* verify = app.add_subcommand("verify", "run the oracle and identity suites");
  std::string v_suite = "all", v_out;
  bool v_fault = false;
  std::uint64_t v_seed = 0;
  verify->add_option("--suite", v_suite, "identities, gradcheck, oracles or all")
      ->check(CLI::IsMember({"identities", "gradcheck", "oracles", "all"}));
  verify->add_flag("--inject-fault", v_fault, "perturb the layers under test");
  verify->add_option("--seed", v_seed, "instance seed");
  verify->add_option("--out", v_out, "write results as JSON");

  auto* bench = app.add_subcommand("bench", "parameter counts and seconds per epoch");
  std::string b_config, b_out;
  bench->add_option("config,--config", b_config, "config with a bench section")->required();
  bench->add_option("--out", b_out, "write the table as JSON");

  auto* ingest = app.add_subcommand("ingest", "CSV to a processed dataset directory");
  std::string i_input, i_out, i_label = "label", i_split = "7:2:1", i_user, i_target, i_history;
  std::vector<std::string> i_columns;
  std::uint64_t i_seed = 1;
  std::size_t i_neg = 0, i_maxhist = 0;
  ingest->add_option("input,--input", i_input, "CSV or CSV.gz")->required();
  ingest->add_option("--out", i_out, "output directory")->required();
  ingest->add_option("--columns", i_columns, "name | name=buckets | name:numeric")->required()->delimiter(',');
  ingest->add_option("--label", i_label, "label column; empty for positives-only files");
  ingest->add_option("--split", i_split, "train:val:test ratio");
  ingest->add_option("--seed", i_seed, "split and negative sampling seed");
  ingest->add_option("--negatives", i_neg, "negatives per positive");
  ingest->add_option("--user-field", i_user, "grouping field for negative sampling");
  ingest->add_option("--target-field", i_target, "field resampled for negatives");
  ingest->add_option("--history", i_history, "'|'-separated history column");
  ingest->add_option("--max-history", i_maxhist, "history length");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*train) return cmd_train(t_config, t_seed, t_out, t_threads, t_epochs);
    if (*eval) return cmd_eval(e_ckpt, e_config, e_data, e_slices, e_split, e_out);
    if (*verify) return cmd_verify(v_suite, v_fault, v_seed, v_out);
    if (*bench) return cmd_bench(b_config, b_out);
    if (*ingest) {
      return cmd_ingest(i_input, i_out, i_columns, i_label, i_split, i_seed, i_neg, i_user, i_target, i_history, i_maxhist);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFail;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFail;
  }
  return kUsage;
}
