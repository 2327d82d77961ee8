#include "marvin/cli.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <ostream>
#include <sstream>

#include "marvin/error.hpp"
#include "marvin/fileio.hpp"

namespace marvin::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

[[noreturn]] void manifest_error(const std::string& m) { throw Error(ErrorCode::ManifestError, m); }

isa::PrecisionConfig parse_precision(const std::string& s) {
  for (const auto& c : isa::all_configs())
    if (c.name() == s) return c;
  throw Error(ErrorCode::ConfigError, "unknown precision '" + s + "' (expected w8a8 ... w2a2)");
}

net::Dataset calibration_of(const net::Dataset& train) {
  std::vector<std::size_t> idx(std::max<std::size_t>(train.size() / 10, 1));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return train.subset(idx);
}

std::string rate_text(double r) {
  std::ostringstream os;
  os << r;
  return os.str();
}

}  // namespace

std::vector<LayerQuantConfig> parse_configs(const std::string& text, std::size_t layers) {
  std::vector<LayerQuantConfig> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    item.erase(std::remove_if(item.begin(), item.end(), [](unsigned char c) { return std::isspace(c); }), item.end());
    if (item.empty()) throw Error(ErrorCode::ConfigError, "empty entry in config list '" + text + "'");
    LayerQuantConfig c;
    const auto at = item.find('@');
    c.cfg = parse_precision(item.substr(0, at));
    if (at != std::string::npos) {
      const std::string r = item.substr(at + 1);
      std::size_t used = 0;
      try {
        c.pruning_rate = std::stod(r, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != r.size() || c.pruning_rate < 0.0 || c.pruning_rate > 1.0)
        throw Error(ErrorCode::ConfigError, "bad pruning rate '" + r + "'");
    }
    out.push_back(c);
  }
  if (out.size() == 1 && layers > 1) out.assign(layers, out[0]);
  if (out.size() != layers)
    throw Error(ErrorCode::ConfigError, "got " + std::to_string(out.size()) + " configs for " +
                                            std::to_string(layers) + " weighted layers");
  return out;
}

Experiment load_experiment(const fs::path& topology, const fs::path& weights, const fs::path& dataset,
                           std::uint64_t seed) {
  Experiment e;
  e.net = net::load_float_network(topology, weights);
  e.net.validate();
  const auto data = net::read_dataset(dataset);
  if (static_cast<std::size_t>(data.height) * data.width != e.net.input_size())
    throw Error(ErrorCode::ShapeError, "dataset images do not match the network input");
  e.split = net::split_dataset(data, seed);
  e.calibration = calibration_of(e.split.train);
  return e;
}

Experiment load_experiment(const fs::path& model_stem, const fs::path& dataset, std::uint64_t seed) {
  return load_experiment(fs::path(model_stem).concat(".json"), fs::path(model_stem).concat(".mrvw"), dataset, seed);
}

// Manifest

RunManifest parse_manifest(const std::string& text, const fs::path& base_dir, const sim::CycleModel& base_model) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    manifest_error(std::string("not valid JSON: ") + e.what());
  }
  if (!j.is_object()) manifest_error("manifest must be a JSON object");
  static const std::set<std::string> known = {"version", "network", "weights", "dataset", "configs", "cycle_model",
                                              "seed",    "variant", "sample",  "program_out"};
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) manifest_error("unknown key '" + k + "'");
  if (!j.contains("version") || !j["version"].is_number_integer() || j["version"].get<int>() != kManifestVersion)
    manifest_error("manifest version must be " + std::to_string(kManifestVersion));

  RunManifest m;
  m.cycle_model = base_model;
  auto path_field = [&](const char* key, bool must_exist) -> fs::path {
    if (!j.contains(key) || !j[key].is_string()) manifest_error(std::string("'") + key + "' must be a path string");
    fs::path p = j[key].get<std::string>();
    if (p.is_relative()) p = base_dir / p;
    if (must_exist && !fs::exists(p)) manifest_error(std::string("'") + key + "' file not found: " + p.string());
    return p;
  };
  m.network = path_field("network", true);
  m.weights = path_field("weights", true);
  m.dataset = path_field("dataset", true);
  if (j.contains("program_out")) m.program_out = path_field("program_out", false);
  try {
    if (j.contains("configs")) {
      const auto& c = j["configs"];
      if (c.is_string()) {
        m.configs = c.get<std::string>();
      } else if (c.is_array()) {
        std::string joined;
        for (const auto& e : c) {
          if (!e.is_string()) manifest_error("'configs' entries must be strings like \"w4a8@0.25\"");
          joined += (joined.empty() ? "" : ",") + e.get<std::string>();
        }
        m.configs = joined;
      } else {
        manifest_error("'configs' must be a string or an array of strings");
      }
    }
    if (j.contains("seed")) {
      if (!j["seed"].is_number_unsigned()) manifest_error("'seed' must be a non-negative integer");
      m.seed = j["seed"].get<std::uint64_t>();
    }
    if (j.contains("sample")) {
      if (!j["sample"].is_number_unsigned()) manifest_error("'sample' must be a non-negative integer");
      m.sample = j["sample"].get<std::size_t>();
    }
    if (j.contains("variant")) {
      if (!j["variant"].is_string()) manifest_error("'variant' must be a string");
      m.variant = j["variant"].get<std::string>();
      if (m.variant != "both" && m.variant != "packed" && m.variant != "baseline")
        manifest_error("'variant' must be both, packed or baseline");
    }
    if (j.contains("cycle_model")) {
      const auto& cm = j["cycle_model"];
      if (!cm.is_object()) manifest_error("'cycle_model' must be an object");
      std::map<std::string, std::uint32_t*> fields = {
          {"alu", &m.cycle_model.alu},     {"mul", &m.cycle_model.mul},
          {"nn_mac", &m.cycle_model.nn_mac}, {"load", &m.cycle_model.load},
          {"store", &m.cycle_model.store}, {"branch_taken", &m.cycle_model.branch_taken},
          {"branch_not_taken", &m.cycle_model.branch_not_taken}, {"nop", &m.cycle_model.nop}};
      for (const auto& [k, v] : cm.items()) {
        auto it = fields.find(k);
        if (it == fields.end()) manifest_error("unknown cycle_model key '" + k + "'");
        if (!v.is_number_unsigned() || v.get<std::uint64_t>() == 0 || v.get<std::uint64_t>() > 1000)
          manifest_error("cycle_model." + k + " must be an integer in [1, 1000]");
        *it->second = v.get<std::uint32_t>();
      }
    }
  } catch (const json::exception& e) {
    manifest_error(e.what());
  }
  return m;
}

RunManifest read_manifest(const fs::path& path, const sim::CycleModel& base_model) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const Error& e) {
    manifest_error(e.what());
  }
  return parse_manifest(text, path.parent_path(), base_model);
}

// fixtures

FixtureSummary cmd_fixtures(std::uint64_t seed, const fs::path& dataset, const fs::path& out_dir, int epochs,
                            std::ostream& log) {
  if (epochs < 1) throw Error(ErrorCode::ConfigError, "epochs must be at least 1");
  const auto data = net::read_dataset(dataset);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + out_dir.string() + ": " + ec.message());
  net::write_dataset(data, out_dir / "digits.mrvd");
  const auto split = net::split_dataset(data, seed);

  FixtureSummary s;
  json meta;
  meta["version"] = kManifestVersion;
  meta["seed"] = seed;
  meta["epochs"] = epochs;
  meta["split"] = {{"train", split.train.size()}, {"val", split.val.size()}, {"test", split.test.size()}};
  for (auto [name, make] : {std::pair{"mlp", &net::make_mlp}, std::pair{"cnn", &net::make_cnn}}) {
    auto n = make();
    net::init_weights(n, seed);
    net::TrainOptions opt;
    opt.epochs = epochs;
    opt.seed = seed;
    net::train(n, split.train, opt);
    const double val = net::float_accuracy(n, split.val), test = net::float_accuracy(n, split.test);
    net::save_float_network(n, out_dir / name);
    meta["models"][name] = {{"val_accuracy", val}, {"test_accuracy", test}, {"macs", n.mac_count()}};
    log << fmt("%s: float accuracy val %.4f test %.4f (%llu MACs)\n", name, val, test,
               static_cast<unsigned long long>(n.mac_count()));
    if (std::string(name) == "mlp") {
      s.mlp_val = val;
      s.mlp_test = test;
    } else {
      s.cnn_val = val;
      s.cnn_test = test;
    }
  }
  write_file_atomic(out_dir / "fixtures.json", meta.dump(2) + "\n");
  return s;
}

// quantize

QuantizeSummary cmd_quantize(const fs::path& model_stem, const fs::path& dataset, std::uint64_t seed,
                             const std::string& configs, const fs::path& out_stem, std::ostream& log) {
  const auto e = load_experiment(model_stem, dataset, seed);
  const auto cfgs = parse_configs(configs, e.net.weighted_layers().size());
  const auto qn = quant::quantize_network(e.net, cfgs, e.calibration);
  QuantizeSummary s;
  s.val_accuracy = quant::quantized_accuracy(qn, e.split.val);
  s.test_accuracy = quant::quantized_accuracy(qn, e.split.test);
  s.float_val_accuracy = net::float_accuracy(e.net, e.split.val);
  log << "layer  kind         cfg     rate  w_exp  in_exp  out_exp  out_bits\n";
  for (std::size_t i = 0; i < qn.layers.size(); ++i) {
    const auto& L = qn.layers[i];
    log << fmt("%-6zu %-12s %-7s %-5.2f %-6d %-7d %-8d %d\n", i, kernels::to_string(L.spec.kind).c_str(),
               L.spec.has_weights() ? L.cfg.name().c_str() : "-", L.pruning_rate, L.weight_exp, L.in_exp, L.out_exp,
               L.out_bits);
  }
  log << fmt("accuracy: float val %.4f, quantized val %.4f, test %.4f\n", s.float_val_accuracy, s.val_accuracy,
             s.test_accuracy);
  if (!out_stem.empty()) quant::save_quantized_network(qn, out_stem);
  return s;
}

// run

RunResult cmd_run(const RunManifest& m, const fs::path& out_csv, std::ostream& log) {
  const auto e = load_experiment(m.network, m.weights, m.dataset, m.seed);
  if (m.sample >= e.split.test.size())
    throw Error(ErrorCode::ManifestError, "sample index beyond the test split (" +
                                              std::to_string(e.split.test.size()) + " images)");
  const auto cfgs = parse_configs(m.configs, e.net.weighted_layers().size());
  const auto qn = quant::quantize_network(e.net, cfgs, e.calibration);
  const auto input = quant::quantize_input(qn, e.split.test.image(m.sample));

  RunResult r;
  r.label = e.split.test.labels[m.sample];
  const auto host = quant::quantized_forward(qn, input);
  if (m.variant != "packed") {
    const auto np = quant::build_network_program(qn, kernels::Variant::Baseline);
    auto run = quant::run_network(np, input, m.cycle_model);
    r.logits = run.logits;
    r.baseline = std::move(run.report);
  }
  if (m.variant != "baseline") {
    const auto np = quant::build_network_program(qn, kernels::Variant::Packed);
    if (m.program_out) save_program(np.program, *m.program_out);
    auto run = quant::run_network(np, input, m.cycle_model);
    if (r.baseline && run.logits != r.logits)
      throw Error(ErrorCode::WorkloadMismatch, "packed and baseline logits differ");
    r.logits = run.logits;
    r.packed = std::move(run.report);
  }
  r.host_match = r.logits == host;
  r.predicted = net::argmax(std::span<const std::int32_t>(r.logits));

  // Per-layer rows keyed by layer index; both runs carry the same markers.
  const auto& any = r.packed ? *r.packed : *r.baseline;
  std::vector<int> weighted_pos(qn.layers.size(), -1);
  {
    int k = 0;
    for (std::size_t i = 0; i < qn.layers.size(); ++i)
      if (qn.layers[i].spec.has_weights()) weighted_pos[i] = k++;
  }
  for (std::size_t li = 0; li < any.layers.size(); ++li) {
    const auto& lr = any.layers[li];
    LayerRow row;
    row.layer = lr.layer_index;
    row.name = lr.name;
    row.mac_count = lr.mac_count;
    row.effective_mac_count = lr.effective_mac_count;
    const auto& Q = qn.layers.at(static_cast<std::size_t>(lr.layer_index));
    const int k = weighted_pos[static_cast<std::size_t>(lr.layer_index)];
    row.config = k >= 0 ? Q.cfg.name() : "a" + std::to_string(Q.in_bits);
    row.pruning_rate = k >= 0 ? cfgs[static_cast<std::size_t>(k)].pruning_rate : 0.0;
    if (r.baseline) {
      row.baseline_cycles = r.baseline->layers[li].counters.cycles;
      row.baseline_loads = r.baseline->layers[li].counters.loads;
    }
    if (r.packed) {
      row.packed_cycles = r.packed->layers[li].counters.cycles;
      row.packed_loads = r.packed->layers[li].counters.loads;
    }
    r.rows.push_back(row);
  }
  LayerRow glue, total;
  glue.layer = total.layer = -1;
  glue.name = "glue";
  total.name = "total";
  glue.config = total.config = "-";
  if (r.baseline) {
    glue.baseline_cycles = r.baseline->glue.cycles;
    glue.baseline_loads = r.baseline->glue.loads;
    total.baseline_cycles = r.baseline->total_cycles;
    total.baseline_loads = r.baseline->load_count;
  }
  if (r.packed) {
    glue.packed_cycles = r.packed->glue.cycles;
    glue.packed_loads = r.packed->glue.loads;
    total.packed_cycles = r.packed->total_cycles;
    total.packed_loads = r.packed->load_count;
  }
  total.mac_count = any.mac_count;
  total.effective_mac_count = any.effective_mac_count;
  r.rows.push_back(glue);
  r.rows.push_back(total);

  auto ratio = [](std::uint64_t a, std::uint64_t b) { return a && b ? static_cast<double>(a) / b : 0.0; };
  log << "layer  name          config  rate   MACs      baseline     packed    speedup  load ratio\n";
  for (const auto& row : r.rows)
    log << fmt("%-6s %-13s %-7s %-6.2f %-9llu %-12llu %-9llu %-8.2f %.2f\n",
               row.layer >= 0 ? std::to_string(row.layer).c_str() : "", row.name.c_str(), row.config.c_str(),
               row.pruning_rate, static_cast<unsigned long long>(row.mac_count),
               static_cast<unsigned long long>(row.baseline_cycles), static_cast<unsigned long long>(row.packed_cycles),
               ratio(row.baseline_cycles, row.packed_cycles), ratio(row.baseline_loads, row.packed_loads));
  log << fmt("label %d, predicted %d, host logits %s\n", r.label, r.predicted, r.host_match ? "match" : "DIFFER");

  if (!out_csv.empty()) {
    std::ostringstream os;
    os << "layer,name,config,pruning_rate,mac_count,effective_mac_count,baseline_cycles,packed_cycles,speedup,"
          "baseline_loads,packed_loads,load_ratio\n";
    for (const auto& row : r.rows)
      os << (row.layer >= 0 ? std::to_string(row.layer) : row.name) << ',' << row.name << ',' << row.config << ','
         << rate_text(row.pruning_rate) << ',' << row.mac_count << ',' << row.effective_mac_count << ','
         << row.baseline_cycles << ',' << row.packed_cycles << ','
         << fmt("%.4f", ratio(row.baseline_cycles, row.packed_cycles)) << ',' << row.baseline_loads << ','
         << row.packed_loads << ',' << fmt("%.4f", ratio(row.baseline_loads, row.packed_loads)) << '\n';
    write_file_atomic(out_csv, os.str());
  }
  return r;
}

// dse

namespace {

json point_json(const dse::ParetoPoint& p) {
  return {{"configs", dse::config_string(p.configs)},
          {"accuracy", p.accuracy},
          {"estimated_cycles", p.total_cycles},
          {"source", p.source}};
}

}  // namespace

DseSummary cmd_dse(const fs::path& model_stem, const fs::path& dataset, std::uint64_t seed, const DseOptions& o,
                   const sim::CycleModel& model, const fs::path& out_dir, std::ostream& log) {
  o.params.validate();
  const auto e = load_experiment(model_stem, dataset, seed);
  const auto rates = o.params.rates();
  const auto table = dse::layer_latency_table(e.net, rates, e.calibration, model);
  dse::Evaluator ev(e.net, e.calibration, e.split.val, o.refine_shifts);
  const double base = ev.float_accuracy();

  DseSummary s;
  s.greedy = dse::greedy_dse(table, o.params, base, ev.fn());
  s.ref_accuracy = base - o.params.threshold / 100.0;
  s.ref_cycles = static_cast<double>(table.max_cycles());
  const bool feasible = !s.greedy.infeasible;
  if (feasible) s.hypervolume = dse::hypervolume(s.greedy.front, s.ref_accuracy, s.ref_cycles);
  if (o.exhaustive) {
    dse::Evaluator ex(e.net, e.calibration, e.split.val, o.refine_shifts);
    s.exhaustive = dse::exhaustive_dse(table, o.params, base, ex.fn(), o.exhaustive_limit);
    s.exhaustive_hypervolume = dse::hypervolume(s.exhaustive->front, s.ref_accuracy, s.ref_cycles);
  }

  // Scalar baseline and the fastest acceptable point, both simulated in full.
  const auto image = e.split.val.image(0);
  {
    const auto qn = quant::quantize_network(e.net, quant::uniform_configs(e.net, {8, 8}), e.calibration);
    const auto np = quant::build_network_program(qn, kernels::Variant::Baseline);
    s.scalar_baseline_cycles = quant::run_network(np, quant::quantize_input(qn, image), model).report.total_cycles;
  }
  if (feasible && !s.greedy.front.empty()) {
    s.best = s.greedy.front.front();
    const auto qn = quant::quantize_network(e.net, s.best->configs, e.calibration);
    const auto np = quant::build_network_program(qn, kernels::Variant::Packed);
    s.best_simulated_cycles = quant::run_network(np, quant::quantize_input(qn, image), model).report.total_cycles;
    s.cycle_reduction = 1.0 - static_cast<double>(s.best_simulated_cycles) / static_cast<double>(s.scalar_baseline_cycles);
  }

  log << fmt("float val accuracy %.4f, threshold %.2f points, %zu evaluations%s\n", base, o.params.threshold,
             s.greedy.evaluations, s.greedy.infeasible ? " (INFEASIBLE)" : "");
  log << "pareto front (greedy):\n";
  for (const auto& p : s.greedy.front)
    log << fmt("  %.4f  %10llu  %s\n", p.accuracy, static_cast<unsigned long long>(p.total_cycles),
               dse::config_string(p.configs).c_str());
  log << fmt("hypervolume %.4f (ref accuracy %.4f, ref cycles %.0f)\n", s.hypervolume, s.ref_accuracy, s.ref_cycles);
  if (s.best)
    log << fmt("best: %llu cycles vs scalar %llu -> %.1f%% reduction (%.2fx)\n",
               static_cast<unsigned long long>(s.best_simulated_cycles),
               static_cast<unsigned long long>(s.scalar_baseline_cycles), 100.0 * s.cycle_reduction,
               static_cast<double>(s.scalar_baseline_cycles) / static_cast<double>(s.best_simulated_cycles));
  if (s.exhaustive)
    log << fmt("exhaustive: %zu evaluations, hypervolume %.4f, greedy/exhaustive %.3f\n", s.exhaustive->evaluations,
               s.exhaustive_hypervolume, s.exhaustive_hypervolume > 0 ? s.hypervolume / s.exhaustive_hypervolume : 0.0);

  if (!out_dir.empty()) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw Error(ErrorCode::IoError, "cannot create " + out_dir.string() + ": " + ec.message());
    dse::write_points_csv(out_dir / "points.csv", s.greedy.evaluated);
    dse::write_points_csv(out_dir / "pareto.csv", s.greedy.front);
    json j;
    j["version"] = kManifestVersion;
    j["seed"] = seed;
    j["params"] = {{"threshold", o.params.threshold}, {"granularity", o.params.granularity},
                   {"p_max", o.params.p_max},         {"iterations", o.params.iterations},
                   {"per_layer_pruning", o.params.per_layer_pruning}, {"refine_shifts", o.refine_shifts}};
    j["baseline_accuracy"] = base;
    j["evaluations"] = s.greedy.evaluations;
    j["infeasible"] = s.greedy.infeasible;
    j["front_size"] = s.greedy.front.size();
    j["hypervolume"] = s.hypervolume;
    j["reference"] = {{"accuracy", s.ref_accuracy}, {"cycles", s.ref_cycles}};
    j["scalar_baseline_cycles"] = s.scalar_baseline_cycles;
    if (s.best) {
      j["best"] = point_json(*s.best);
      j["best"]["simulated_cycles"] = s.best_simulated_cycles;
      j["cycle_reduction"] = s.cycle_reduction;
    }
    if (s.exhaustive) {
      dse::write_points_csv(out_dir / "exhaustive_points.csv", s.exhaustive->evaluated);
      dse::write_points_csv(out_dir / "exhaustive_pareto.csv", s.exhaustive->front);
      j["exhaustive"] = {{"evaluations", s.exhaustive->evaluations},
                         {"hypervolume", s.exhaustive_hypervolume},
                         {"front_size", s.exhaustive->front.size()}};
    }
    write_file_atomic(out_dir / "summary.json", j.dump(2) + "\n");
  }
  return s;
}

// power

sim::ExecutionReport read_run_totals(const fs::path& run_csv) {
  std::istringstream in(read_file(run_csv));
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::ParseError, run_csv.string() + ": empty report");
  std::vector<std::string> head;
  {
    std::stringstream hs(line);
    for (std::string c; std::getline(hs, c, ',');) head.push_back(c);
  }
  auto col = [&](const std::string& name) {
    const auto it = std::find(head.begin(), head.end(), name);
    if (it == head.end()) throw Error(ErrorCode::ParseError, run_csv.string() + ": missing column " + name);
    return static_cast<std::size_t>(it - head.begin());
  };
  const std::size_t c_name = col("name"), c_mac = col("mac_count"), c_base = col("baseline_cycles"),
                    c_packed = col("packed_cycles");
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    std::vector<std::string> f;
    std::stringstream ls(line);
    for (std::string c; std::getline(ls, c, ',');) f.push_back(c);
    if (f.size() != head.size())
      throw Error(ErrorCode::ParseError, run_csv.string() + ": line " + std::to_string(lineno) + " has " +
                                             std::to_string(f.size()) + " fields");
    if (f[c_name] != "total") continue;
    auto num = [&](const std::string& s) {
      try {
        std::size_t used = 0;
        const auto v = std::stoull(s, &used);
        if (used == s.size()) return static_cast<std::uint64_t>(v);
      } catch (const std::exception&) {
      }
      throw Error(ErrorCode::ParseError, run_csv.string() + ": line " + std::to_string(lineno) + ": bad number '" +
                                             s + "'");
    };
    sim::ExecutionReport r;
    r.mac_count = num(f[c_mac]);
    const auto packed = num(f[c_packed]);
    r.total_cycles = packed ? packed : num(f[c_base]);
    return r;
  }
  throw Error(ErrorCode::ParseError, run_csv.string() + ": no total row");
}

std::vector<power::SweepPoint> cmd_power(const fs::path& run_csv, const fs::path& params_file, double step,
                                         const fs::path& out_csv, std::ostream& log) {
  const auto report = read_run_totals(run_csv);
  power::PowerConfig cfg;
  if (params_file.empty()) {
    cfg.params = power::default_power_params();
    cfg.slack = power::default_slack_table();
  } else {
    try {
      cfg = power::read_power_config(params_file);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::ParseError) throw;
      throw Error(ErrorCode::ParseError, params_file.string() + ": " + e.what());
    }
  }
  const auto sweep = power::voltage_sweep(report, cfg.params, cfg.slack, step, true);
  const double vmin = power::min_valid_voltage(cfg.slack);
  log << fmt("minimum valid voltage %.2f V\n", vmin);
  log << "   V    P_total mW   GOPs     GOPs/W   valid\n";
  for (const auto& s : sweep)
    log << fmt("%5.2f  %9.4f  %8.4f  %9.2f  %s\n", s.voltage, s.p_total_mw, s.gops, s.gops_per_watt,
               s.min_valid ? "minimum" : s.valid ? "yes" : "no");
  if (!out_csv.empty()) power::write_sweep_csv(out_csv, sweep);
  return sweep;
}

// disasm

void cmd_disasm(const fs::path& program_stem, std::ostream& out) {
  const auto p = sim::load_program(program_stem);
  std::size_t next = 0;
  auto markers = p.layers;
  std::sort(markers.begin(), markers.end(), [](const auto& a, const auto& b) { return a.begin_pc < b.begin_pc; });
  for (std::size_t i = 0; i < p.code.size(); ++i) {
    const auto pc = static_cast<std::uint32_t>(4 * i);
    while (next < markers.size() && markers[next].begin_pc == pc) {
      out << fmt("# layer %d %s (%llu MACs)\n", markers[next].layer_index, markers[next].name.c_str(),
                 static_cast<unsigned long long>(markers[next].mac_count));
      ++next;
    }
    out << fmt("%08x:  %08x  ", pc, p.code[i]) << isa::disassemble(p.code[i]) << '\n';
  }
}

}  // namespace marvin::cli
