#include <CLI11.hpp>

#include <iostream>

#include "marvin/cli.hpp"
#include "marvin/error.hpp"

#ifndef MARVIN_DEFAULT_DATASET
#define MARVIN_DEFAULT_DATASET "data/digits.mrvd"
#endif

using namespace marvin;

int main(int argc, char** argv) {
  CLI::App app{"Mixed-precision RISC-V extension simulator and co-design toolkit"};
  app.require_subcommand(1);

  std::uint64_t seed = 42;
  std::string dataset = MARVIN_DEFAULT_DATASET;
  std::string model, config = "w8a8", out;

  auto* fixtures = app.add_subcommand("fixtures", "Train the MLP and CNN fixtures and write them with the dataset");
  int epochs = 40;
  fixtures->add_option("--seed", seed, "Split, init and shuffle seed");
  fixtures->add_option("--dataset", dataset, "Source dataset (.mrvd)");
  fixtures->add_option("--out", out, "Output directory")->default_val("fixtures");
  fixtures->add_option("--epochs", epochs, "Training epochs")->check(CLI::PositiveNumber);

  auto* quantize = app.add_subcommand("quantize", "Quantize a float fixture and report its accuracy");
  quantize->add_option("--model", model, "Float model stem (<stem>.json + <stem>.mrvw)")->required();
  quantize->add_option("--dataset", dataset, "Dataset (.mrvd)");
  quantize->add_option("--seed", seed, "Split seed");
  quantize->add_option("--config", config, "Per-layer configs, e.g. w4a8@0.25,w8a8,w8a8");
  quantize->add_option("--out", out, "Output stem for the quantized network");

  auto* run = app.add_subcommand("run", "Simulate a network from a run manifest");
  std::string manifest;
  run->add_option("manifest", manifest, "Run manifest (JSON)")->required();
  run->add_option("--out", out, "Per-layer CSV report");

  auto* dse = app.add_subcommand("dse", "Greedy mixed-precision and pruning exploration");
  cli::DseOptions dopt;
  dse->add_option("--model", model, "Float model stem")->required();
  dse->add_option("--dataset", dataset, "Dataset (.mrvd)");
  dse->add_option("--seed", seed, "Split seed");
  dse->add_option("--threshold", dopt.params.threshold, "Accuracy-loss threshold, percentage points");
  dse->add_option("--granularity", dopt.params.granularity, "Pruning granularity");
  dse->add_option("--pmax", dopt.params.p_max, "Maximum pruning rate");
  dse->add_option("--iters", dopt.params.iterations, "Accuracy-evaluation budget");
  dse->add_flag("--exhaustive", dopt.exhaustive, "Also run the exhaustive search");
  dse->add_flag("--per-layer-pruning", dopt.params.per_layer_pruning, "Extra pass with per-layer pruning rates");
  dse->add_flag("--prune-classifier", dopt.params.prune_classifier, "Let the sweeps prune the last layer");
  dse->add_flag("--refine-shifts", dopt.refine_shifts, "Calibrate requantization shifts per evaluation");
  dse->add_option("--out", out, "Output directory")->default_val("dse_out");

  auto* pw = app.add_subcommand("power", "Voltage sweep for a run report");
  std::string report, params;
  double step = 0.05;
  pw->add_option("report", report, "CSV written by `run --out`")->required();
  pw->add_option("--config", params, "Power parameter file (key = value)");
  pw->add_option("--step", step, "Voltage step")->check(CLI::PositiveNumber);
  pw->add_option("--out", out, "Sweep CSV");

  auto* disasm = app.add_subcommand("disasm", "Disassemble a saved program");
  std::string program;
  disasm->add_option("program", program, "Program stem (<stem>.bin/.data/.json)")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*fixtures) {
      cli::cmd_fixtures(seed, dataset, out, epochs, std::cout);
    } else if (*quantize) {
      cli::cmd_quantize(model, dataset, seed, config, out, std::cout);
    } else if (*run) {
      const auto m = cli::read_manifest(manifest, sim::CycleModel::from_env());
      const auto r = cli::cmd_run(m, out, std::cout);
      if (!r.host_match) return 3;
    } else if (*dse) {
      cli::cmd_dse(model, dataset, seed, dopt, sim::CycleModel::from_env(), out, std::cout);
    } else if (*pw) {
      cli::cmd_power(report, params, step, out, std::cout);
    } else if (*disasm) {
      cli::cmd_disasm(program, std::cout);
    }
  } catch (const Error& e) {
    std::cerr << "marvin: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "marvin: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
