#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "marvin/dse.hpp"
#include "marvin/power.hpp"
#include "marvin/quantizer.hpp"
#include "marvin/simulator.hpp"

namespace marvin::cli {

using quant::LayerQuantConfig;

inline constexpr int kManifestVersion = 1;

/// "w4a8@0.25,w8a8" style: one entry per weighted layer, or a single entry
/// applied to all of them. A missing "@rate" means no pruning. Throws ConfigError.
std::vector<LayerQuantConfig> parse_configs(const std::string& text, std::size_t layers);

/// Seeded split of a dataset plus the calibration sample (first 10% of train).
struct Experiment {
  net::FloatNetwork net;
  net::DatasetSplit split;
  net::Dataset calibration;
};
Experiment load_experiment(const std::filesystem::path& topology, const std::filesystem::path& weights,
                           const std::filesystem::path& dataset, std::uint64_t seed);
/// `<stem>.json` + `<stem>.mrvw`.
Experiment load_experiment(const std::filesystem::path& model_stem, const std::filesystem::path& dataset,
                           std::uint64_t seed);

struct RunManifest {
  std::filesystem::path network;
  std::filesystem::path weights;
  std::filesystem::path dataset;
  std::string configs = "w8a8";
  sim::CycleModel cycle_model;
  std::uint64_t seed = 42;
  /// "both", "packed" or "baseline".
  std::string variant = "both";
  /// Test-split image fed to the network.
  std::size_t sample = 0;
  /// When set, the packed program is saved there for `disasm`.
  std::optional<std::filesystem::path> program_out;
};

/// JSON object with "version": 1. Unknown keys, a wrong version or missing
/// files raise ManifestError. Relative paths resolve against `base_dir`;
/// cycle_model entries override `base_model`.
RunManifest parse_manifest(const std::string& text, const std::filesystem::path& base_dir,
                           const sim::CycleModel& base_model = {});
RunManifest read_manifest(const std::filesystem::path& path, const sim::CycleModel& base_model = {});

struct FixtureSummary {
  double mlp_val = 0.0;
  double mlp_test = 0.0;
  double cnn_val = 0.0;
  double cnn_test = 0.0;
};

/// Trains both fixture networks and writes digits.mrvd, mlp.*, cnn.* and
/// fixtures.json into `out_dir`. Same seed, same bytes.
FixtureSummary cmd_fixtures(std::uint64_t seed, const std::filesystem::path& dataset,
                            const std::filesystem::path& out_dir, int epochs, std::ostream& log);

struct QuantizeSummary {
  double val_accuracy = 0.0;
  double test_accuracy = 0.0;
  double float_val_accuracy = 0.0;
};

QuantizeSummary cmd_quantize(const std::filesystem::path& model_stem, const std::filesystem::path& dataset,
                             std::uint64_t seed, const std::string& configs, const std::filesystem::path& out_stem,
                             std::ostream& log);

struct LayerRow {
  int layer = 0;
  std::string name;
  std::string config;
  double pruning_rate = 0.0;
  std::uint64_t mac_count = 0;
  std::uint64_t effective_mac_count = 0;
  std::uint64_t baseline_cycles = 0;
  std::uint64_t packed_cycles = 0;
  std::uint64_t baseline_loads = 0;
  std::uint64_t packed_loads = 0;
};

struct RunResult {
  std::optional<sim::ExecutionReport> baseline;
  std::optional<sim::ExecutionReport> packed;
  /// Per layer, then "glue", then "total".
  std::vector<LayerRow> rows;
  std::vector<std::int32_t> logits;
  int predicted = -1;
  int label = -1;
  /// Host integer inference produced the same logits.
  bool host_match = false;
};

/// Writes the per-layer CSV to `out_csv` when it is non-empty.
RunResult cmd_run(const RunManifest& manifest, const std::filesystem::path& out_csv, std::ostream& log);

struct DseOptions {
  dse::DseParams params;
  bool exhaustive = false;
  bool refine_shifts = false;
  std::uint64_t exhaustive_limit = 50000;
};

struct DseSummary {
  dse::DseResult greedy;
  std::optional<dse::DseResult> exhaustive;
  double hypervolume = 0.0;
  double exhaustive_hypervolume = 0.0;
  double ref_accuracy = 0.0;
  double ref_cycles = 0.0;
  /// Fastest acceptable point, simulated end to end.
  std::optional<dse::ParetoPoint> best;
  std::uint64_t best_simulated_cycles = 0;
  std::uint64_t scalar_baseline_cycles = 0;
  double cycle_reduction = 0.0;
};

/// Writes points.csv, pareto.csv and summary.json (plus exhaustive_*.csv)
/// into `out_dir` when it is non-empty.
DseSummary cmd_dse(const std::filesystem::path& model_stem, const std::filesystem::path& dataset, std::uint64_t seed,
                   const DseOptions& options, const sim::CycleModel& model, const std::filesystem::path& out_dir,
                   std::ostream& log);

/// Reads the "total" row of a run CSV (packed cycles when present).
sim::ExecutionReport read_run_totals(const std::filesystem::path& run_csv);

/// `params_file` may be empty for the defaults.
std::vector<power::SweepPoint> cmd_power(const std::filesystem::path& run_csv, const std::filesystem::path& params_file,
                                         double step, const std::filesystem::path& out_csv, std::ostream& log);

/// One line per instruction with layer markers.
void cmd_disasm(const std::filesystem::path& program_stem, std::ostream& out);

}  // namespace marvin::cli
