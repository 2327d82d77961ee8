#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "marvin/quantizer.hpp"
#include "marvin/simulator.hpp"

namespace marvin::dse {

using isa::PrecisionConfig;
using quant::LayerQuantConfig;

struct DseParams {
  /// Accuracy-loss threshold in percentage points.
  double threshold = 1.0;
  double granularity = 0.25;
  double p_max = 0.5;
  /// Accuracy evaluations allowed for the whole run.
  int iterations = 500;
  /// The logits layer keeps all its channels unless this is set.
  bool prune_classifier = false;
  /// Labeled extra pass that raises single-layer pruning rates on accepted points.
  bool per_layer_pruning = false;

  /// Throws InvalidConfig.
  void validate() const;
  /// {0, g, 2g, ..., p_max}.
  std::vector<double> rates() const;
};

struct ParetoPoint {
  std::vector<LayerQuantConfig> configs;
  double accuracy = 0.0;
  std::uint64_t total_cycles = 0;
  std::uint64_t loads = 0;
  /// "greedy", "per-layer", "exhaustive".
  std::string source;
  bool acceptable = false;
};

/// Index of `cfg` in isa::all_configs().
int config_index(const PrecisionConfig& cfg);

/// Per-layer cycle and load estimates from single-layer simulator runs.
struct LatencyTable {
  struct Entry {
    std::uint64_t cycles = 0;
    std::uint64_t loads = 0;
  };
  std::vector<double> rates;
  /// Network layer index of each weighted layer.
  std::vector<int> weighted;
  /// weighted_entries[k][rate][config].
  std::vector<std::vector<std::array<Entry, 9>>> weighted_entries;
  /// Layers without weights, by input lane width 2/4/8 (index 0/1/2).
  std::vector<int> other;
  std::vector<std::array<Entry, 3>> other_entries;
  /// Lane width of each layer's input tensor follows its consumer; kinds decide that.
  std::vector<bool> layer_has_weights;

  std::size_t rate_index(double rate) const;
  const Entry& entry(std::size_t k, const LayerQuantConfig& c) const;
  /// Sum over all layers for one configuration vector.
  Entry network(std::span<const LayerQuantConfig> configs) const;
  /// Upper bound on network() over the whole space.
  std::uint64_t max_cycles() const;
};

/// Throws ShapeError / ConfigError.
LatencyTable layer_latency_table(const net::FloatNetwork& net, std::span<const double> rates,
                                 const net::Dataset& calibration, const sim::CycleModel& model = {});

using AccuracyFn = std::function<double(std::span<const LayerQuantConfig>)>;

/// Accuracy of quantized fixtures on a held-out split, with prepared
/// (pruned and calibrated) networks cached per pruning vector.
class Evaluator {
 public:
  Evaluator(net::FloatNetwork net, net::Dataset calibration, net::Dataset eval, bool refine_shifts = false);

  double operator()(std::span<const LayerQuantConfig> configs);
  double float_accuracy() const;
  quant::QuantizedNetwork quantize(std::span<const LayerQuantConfig> configs);
  std::size_t evaluations() const { return evaluations_; }
  AccuracyFn fn() {
    return [this](std::span<const LayerQuantConfig> c) { return (*this)(c); };
  }

 private:
  const quant::PreparedNetwork& prepared(std::span<const LayerQuantConfig> configs);

  net::FloatNetwork net_;
  net::Dataset calibration_;
  net::Dataset eval_;
  bool refine_;
  std::size_t evaluations_ = 0;
  std::map<std::vector<double>, quant::PreparedNetwork> cache_;
};

struct DseResult {
  double baseline_accuracy = 0.0;
  /// Every evaluated point in evaluation order.
  std::vector<ParetoPoint> evaluated;
  /// pareto_front of the acceptable points.
  std::vector<ParetoPoint> front;
  std::size_t evaluations = 0;
  /// No sweep met the threshold; `front` then holds the full-precision point.
  bool infeasible = false;
  std::vector<ParetoPoint> acceptable() const;
};

/// Greedy mixed-precision and pruning exploration. `baseline_accuracy` is the
/// unquantized model's accuracy; a point is acceptable when its accuracy is at
/// least baseline - threshold / 100.
DseResult greedy_dse(const LatencyTable& table, const DseParams& params, double baseline_accuracy,
                     const AccuracyFn& accuracy);

/// Every configuration vector over the pruning grid. Throws BudgetExceeded
/// when that is more than `max_evaluations` or the net has over four weighted layers.
DseResult exhaustive_dse(const LatencyTable& table, const DseParams& params, double baseline_accuracy,
                         const AccuracyFn& accuracy, std::uint64_t max_evaluations = 50000);

/// Non-dominated subset under (accuracy up, cycles down), sorted by cycles
/// then accuracy; duplicates of a (accuracy, cycles) pair keep the first.
std::vector<ParetoPoint> pareto_front(std::span<const ParetoPoint> points);

/// Area between the front's staircase and the reference. Throws
/// InvalidReference unless every point has accuracy >= ref_accuracy and
/// cycles <= ref_cycles.
double hypervolume(std::span<const ParetoPoint> front, double ref_accuracy, double ref_cycles);

/// "w4a8@0.25;w8a8@0" style.
std::string config_string(std::span<const LayerQuantConfig> configs);

void write_points_csv(const std::filesystem::path& path, std::span<const ParetoPoint> points);

}  // namespace marvin::dse
