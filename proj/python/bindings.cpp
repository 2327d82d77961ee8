#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <random>
#include <sstream>

#include "marvin/cli.hpp"
#include "marvin/datapath.hpp"
#include "marvin/dse.hpp"
#include "marvin/error.hpp"
#include "marvin/isa.hpp"
#include "marvin/kernels.hpp"
#include "marvin/power.hpp"

namespace py = pybind11;
using namespace marvin;
namespace fs = std::filesystem;

namespace {

py::dict decode_dict(std::uint32_t word) {
  const auto in = isa::decode(word);
  py::dict d;
  d["op"] = std::string(isa::mnemonic(in.op));
  d["rd"] = in.rd;
  d["rs1"] = in.rs1;
  d["rs2"] = in.rs2;
  d["imm"] = in.imm;
  if (in.op == isa::Op::NnMac) d["config"] = in.cfg.name();
  return d;
}

std::vector<dse::ParetoPoint> to_points(const std::vector<std::pair<double, std::uint64_t>>& pts) {
  std::vector<dse::ParetoPoint> out(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    out[i].accuracy = pts[i].first;
    out[i].total_cycles = pts[i].second;
  }
  return out;
}

py::dict report_dict(const sim::ExecutionReport& r) {
  py::dict d;
  d["total_cycles"] = r.total_cycles;
  d["instruction_count"] = r.instruction_count;
  d["load_count"] = r.load_count;
  d["store_count"] = r.store_count;
  d["stall_cycles"] = r.stall_cycles;
  d["mac_count"] = r.mac_count;
  d["effective_mac_count"] = r.effective_mac_count;
  return d;
}

// Cycles and loads of one conv layer, scalar baseline against packed.
py::dict layer_speedup(int in_c, int out_c, int h, int w, int k, const std::string& config, std::uint32_t seed) {
  const auto cfg = isa::PrecisionConfig::parse(config);
  const auto L = kernels::conv2d(in_c, out_c, h, w, k, 1, k / 2, kernels::Activation::ReLU);
  L.validate();
  std::mt19937 rng(seed);
  kernels::LayerParams p;
  const int lo = -(1 << (cfg.weight_bits - 1));
  for (std::size_t i = 0; i < L.weight_count(); ++i)
    p.weights.push_back(lo + static_cast<int>(rng() % (1u << cfg.weight_bits)));
  p.bias.assign(static_cast<std::size_t>(out_c), 0);
  p.shift = 6;
  std::vector<std::int32_t> in(L.input_size());
  for (auto& x : in) x = static_cast<std::int32_t>(rng() % (1u << cfg.activation_bits));
  auto go = [&](kernels::Variant v) {
    const auto lp = kernels::build_layer_program(L, p, v, cfg, {false, 8}, in);
    auto st = sim::initial_state(lp.program);
    return sim::run(lp.program, st);
  };
  const auto b = go(kernels::Variant::Baseline), q = go(kernels::Variant::Packed);
  py::dict d;
  d["baseline"] = report_dict(b);
  d["packed"] = report_dict(q);
  d["speedup"] = static_cast<double>(b.total_cycles) / static_cast<double>(q.total_cycles);
  d["load_ratio"] = static_cast<double>(b.load_count) / static_cast<double>(q.load_count);
  return d;
}

py::dict run(const fs::path& manifest, const fs::path& out_csv) {
  std::ostringstream log;
  const auto r = cli::cmd_run(cli::read_manifest(manifest), out_csv, log);
  py::dict d;
  if (r.baseline) d["baseline"] = report_dict(*r.baseline);
  if (r.packed) d["packed"] = report_dict(*r.packed);
  d["logits"] = r.logits;
  d["predicted"] = r.predicted;
  d["label"] = r.label;
  d["host_match"] = r.host_match;
  py::list rows;
  for (const auto& row : r.rows) {
    py::dict x;
    x["layer"] = row.layer;
    x["name"] = row.name;
    x["config"] = row.config;
    x["baseline_cycles"] = row.baseline_cycles;
    x["packed_cycles"] = row.packed_cycles;
    x["baseline_loads"] = row.baseline_loads;
    x["packed_loads"] = row.packed_loads;
    rows.append(x);
  }
  d["rows"] = rows;
  return d;
}

py::dict run_dse(const fs::path& model, const fs::path& dataset, std::uint64_t seed, double threshold,
                 double granularity, double p_max, std::size_t iterations, bool exhaustive, bool per_layer_pruning,
                 const fs::path& out_dir) {
  cli::DseOptions o;
  o.params.threshold = threshold;
  o.params.granularity = granularity;
  o.params.p_max = p_max;
  o.params.iterations = iterations;
  o.params.per_layer_pruning = per_layer_pruning;
  o.exhaustive = exhaustive;
  std::ostringstream log;
  const auto s = cli::cmd_dse(model, dataset, seed, o, {}, out_dir, log);
  py::dict d;
  d["baseline_accuracy"] = s.greedy.baseline_accuracy;
  d["evaluations"] = s.greedy.evaluations;
  d["hypervolume"] = s.hypervolume;
  py::list front;
  for (const auto& p : s.greedy.front)
    front.append(py::make_tuple(dse::config_string(p.configs), p.accuracy, p.total_cycles));
  d["front"] = front;
  if (s.exhaustive) {
    d["exhaustive_evaluations"] = s.exhaustive->evaluations;
    d["exhaustive_hypervolume"] = s.exhaustive_hypervolume;
  }
  if (s.best) {
    d["best"] = dse::config_string(s.best->configs);
    d["best_accuracy"] = s.best->accuracy;
    d["best_cycles"] = s.best_simulated_cycles;
    d["scalar_baseline_cycles"] = s.scalar_baseline_cycles;
    d["cycle_reduction"] = s.cycle_reduction;
  }
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Mixed-precision RISC-V extension simulator";

  static py::exception<Error> exc(m, "MarvinError");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      exc(e.what());
    }
  });

  py::class_<isa::PrecisionConfig>(m, "PrecisionConfig")
      .def(py::init<int, int>(), py::arg("weight_bits"), py::arg("activation_bits"))
      .def_readonly("weight_bits", &isa::PrecisionConfig::weight_bits)
      .def_readonly("activation_bits", &isa::PrecisionConfig::activation_bits)
      .def("products", &isa::PrecisionConfig::products)
      .def("mode", [](const isa::PrecisionConfig& c) { return static_cast<int>(isa::mode_of(c)); })
      .def("funct7", [](const isa::PrecisionConfig& c) { return isa::nn_mac_funct7(c); })
      .def_property_readonly("name", &isa::PrecisionConfig::name)
      .def_static("parse", [](const std::string& s) { return isa::PrecisionConfig::parse(s); })
      .def("__eq__", [](const isa::PrecisionConfig& a, const isa::PrecisionConfig& b) { return a == b; })
      .def("__repr__", [](const isa::PrecisionConfig& c) { return "PrecisionConfig('" + c.name() + "')"; });

  m.def("all_configs", [] {
    const auto& a = isa::all_configs();
    return std::vector<isa::PrecisionConfig>(a.begin(), a.end());
  });
  m.def(
      "encode_nn_mac",
      [](const std::string& cfg, int rd, int rs1, int rs2) {
        return isa::encode(isa::nn_mac(isa::PrecisionConfig::parse(cfg), rd, rs1, rs2));
      },
      py::arg("config"), py::arg("rd"), py::arg("rs1"), py::arg("rs2"));
  m.def("decode", &decode_dict, py::arg("word"));
  m.def("disassemble", &isa::disassemble, py::arg("word"));

  m.def("mul32_partial_products", &datapath::mul32_partial_products, py::arg("a"), py::arg("b"));
  m.def(
      "nn_mac",
      [](std::int32_t acc, std::uint32_t weights, std::uint32_t activations, const std::string& cfg) {
        return datapath::nn_mac_raw(acc, weights, activations, isa::PrecisionConfig::parse(cfg));
      },
      py::arg("acc"), py::arg("weights"), py::arg("activations"), py::arg("config"));
  m.def("layer_speedup", &layer_speedup, py::arg("in_c"), py::arg("out_c"), py::arg("h"), py::arg("w"),
        py::arg("k"), py::arg("config"), py::arg("seed") = 7);

  m.def(
      "pareto_front",
      [](const std::vector<std::pair<double, std::uint64_t>>& pts) {
        std::vector<std::pair<double, std::uint64_t>> out;
        for (const auto& p : dse::pareto_front(to_points(pts))) out.emplace_back(p.accuracy, p.total_cycles);
        return out;
      },
      py::arg("points"), "(accuracy, cycles) pairs in, non-dominated pairs out, fastest first.");
  m.def(
      "hypervolume",
      [](const std::vector<std::pair<double, std::uint64_t>>& front, double ref_accuracy, double ref_cycles) {
        const auto pts = to_points(front);
        return dse::hypervolume(dse::pareto_front(pts), ref_accuracy, ref_cycles);
      },
      py::arg("points"), py::arg("ref_accuracy"), py::arg("ref_cycles"));

  m.def(
      "dynamic_power", [](double v) { return power::dynamic_power(power::default_power_params(), v); },
      py::arg("voltage"));
  m.def(
      "total_power", [](double v) { return power::total_power(power::default_power_params(), v); },
      py::arg("voltage"));
  m.def("default_slack_table", [] { return power::default_slack_table().points; });
  m.def(
      "min_valid_voltage",
      [](const std::vector<std::pair<double, double>>& points) {
        return power::min_valid_voltage(points.empty() ? power::default_slack_table() : power::SlackTable{points});
      },
      py::arg("slack") = std::vector<std::pair<double, double>>{});

  m.def(
      "fixtures",
      [](const fs::path& out_dir, const fs::path& dataset, int epochs, std::uint64_t seed) {
        std::ostringstream log;
        const auto s = cli::cmd_fixtures(seed, dataset, out_dir, epochs, log);
        py::dict d;
        d["mlp_val"] = s.mlp_val;
        d["mlp_test"] = s.mlp_test;
        d["cnn_val"] = s.cnn_val;
        d["cnn_test"] = s.cnn_test;
        return d;
      },
      py::arg("out_dir"), py::arg("dataset"), py::arg("epochs") = 40, py::arg("seed") = 42);
  m.def("run", &run, py::arg("manifest"), py::arg("out_csv") = fs::path());
  m.def("dse", &run_dse, py::arg("model"), py::arg("dataset"), py::arg("seed") = 42, py::arg("threshold") = 1.0,
        py::arg("granularity") = 0.25, py::arg("p_max") = 0.5, py::arg("iterations") = 500,
        py::arg("exhaustive") = false, py::arg("per_layer_pruning") = false, py::arg("out_dir") = fs::path());
  m.def(
      "power_sweep",
      [](const fs::path& run_csv, const fs::path& params, double step) {
        std::ostringstream log;
        py::list out;
        for (const auto& s : cli::cmd_power(run_csv, params, step, {}, log)) {
          py::dict d;
          d["voltage"] = s.voltage;
          d["p_total_mw"] = s.p_total_mw;
          d["gops"] = s.gops;
          d["gops_per_watt"] = s.gops_per_watt;
          d["valid"] = s.valid;
          d["min_valid"] = s.min_valid;
          out.append(d);
        }
        return out;
      },
      py::arg("run_csv"), py::arg("params") = fs::path(), py::arg("step") = 0.05);
}
