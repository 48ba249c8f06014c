// Python bindings. Configs and reports cross the boundary as JSON text; the
// package wrapper converts them to and from dicts.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cmath>
#include <random>

#include "dpn/config.hpp"
#include "dpn/error.hpp"
#include "dpn/experiment.hpp"
#include "dpn/metrics.hpp"
#include "dpn/oracles.hpp"

namespace py = pybind11;
using nlohmann::json;

namespace {

std::string resolve_config(const std::string& text) { return dpn::to_json(dpn::parse_run_config(json::parse(text))).dump(); }

std::string train(const std::string& text, const std::string& out) {
  const dpn::RunConfig cfg = dpn::parse_run_config(json::parse(text));
  const dpn::Dataset data = dpn::load_data(cfg.data);
  dpn::RunOutcome o;
  {
    py::gil_scoped_release release;
    o = dpn::run_experiment(cfg, data, out);
  }
  json j = o.metrics;
  j["timing"] = o.timing;
  return j.dump();
}

std::string param_counts(const std::string& model, const std::vector<std::pair<std::string, std::size_t>>& fields) {
  dpn::ModelSpec spec = dpn::parse_model_spec(json::parse(model));
  std::vector<dpn::FieldSpec> fs;
  for (const auto& [name, vocab] : fields) fs.push_back({name, vocab, false});
  spec.schema = dpn::FieldSchema(fs);
  std::mt19937_64 rng(0);
  dpn::Model m(spec, rng);
  return json{{"dense", m.dense_param_count()}, {"analytic", m.analytic_param_count()}, {"embedding", m.embedding_param_count()}}
      .dump();
}

std::string verify(const std::string& suite, std::uint64_t seed, bool inject_fault) {
  dpn::OracleOptions opt;
  if (seed) opt.seed = seed;
  opt.inject_fault = inject_fault;
  json out = json::array();
  for (const auto& r : dpn::run_suite(suite, opt)) {
    out.push_back({{"name", r.name}, {"max_error", r.max_error}, {"threshold", r.threshold}, {"passed", r.passed},
                   {"instances", r.instances}});
  }
  return out.dump();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "dynamic parameterized operations for CTR prediction";

  auto base = py::register_exception<dpn::Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<dpn::ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<dpn::DimensionError>(m, "DimensionError", base.ptr());
  // Out-of-range ids surface as the builtin IndexError.
  py::register_exception<dpn::IndexError>(m, "IndexError", PyExc_IndexError);
  py::register_exception<dpn::UsageError>(m, "UsageError", base.ptr());
  py::register_exception<dpn::DataError>(m, "DataError", base.ptr());
  py::register_exception<dpn::CheckpointError>(m, "CheckpointError", base.ptr());
  py::register_exception<dpn::MetricError>(m, "MetricError", base.ptr());
  py::register_exception<dpn::DivergenceError>(m, "DivergenceError", base.ptr());

  m.def("auc", [](const std::vector<double>& s, const std::vector<double>& y) { return dpn::auc(s, y); },
        py::arg("scores"), py::arg("labels"));
  m.def("logloss", [](const std::vector<double>& p, const std::vector<double>& y) { return dpn::logloss(p, y); },
        py::arg("probs"), py::arg("labels"));
  m.def("_resolve_config", &resolve_config);
  m.def("_train", &train, py::arg("config"), py::arg("out") = "");
  m.def("_param_counts", &param_counts);
  m.def("_verify", &verify, py::arg("suite"), py::arg("seed") = 0, py::arg("inject_fault") = false);
}
