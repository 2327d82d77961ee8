#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "marvin/simulator.hpp"

namespace marvin::power {

inline constexpr double kMinVoltage = 0.60;
inline constexpr double kMaxVoltage = 1.00;

struct PowerParams {
  double p_static_ref_mw = 0.0;
  double activity = 0.15;
  /// Effective switched capacitance, farads.
  double capacitance_f = 0.0;
  double frequency_hz = 250e6;
  double v_ref = 1.0;
  double static_exponent = 0.0;

  /// Throws InvalidConfig unless every field is positive.
  void validate() const;
};

/// Exponent e with s * v_low^e + (1 - s) * v_low^2 == target_ratio, where s is
/// the static share of total power at v_ref = 1. Throws InvalidConfig when no
/// positive exponent exists.
double calibrate_static_exponent(double static_fraction, double v_low, double target_ratio);

/// 20% static at 1.0 V, total drops to 42% at 0.7 V, 2.03 mW at 0.8 V and 250 MHz.
PowerParams default_power_params();

double static_power(const PowerParams& p, double v);
double dynamic_power(const PowerParams& p, double v);
/// milliwatts. Throws VoltageOutOfRange outside [0.60, 1.00] V.
double total_power(const PowerParams& p, double v);

/// (volts, slack ps) samples, ascending in voltage, interpolated linearly.
struct SlackTable {
  std::vector<std::pair<double, double>> points;

  /// Throws InvalidConfig unless voltages ascend and slack does not decrease.
  void validate() const;
  double slack(double v) const;
};

/// 0.05 V profile from +1048 ps at 1.00 V down to -121 ps at 0.60 V.
SlackTable default_slack_table();

/// Zero-slack voltage rounded up to the 0.01 V grid. Throws NoSignChange.
double min_valid_voltage(const SlackTable& table);

struct Efficiency {
  double gops = 0.0;
  double gops_per_watt = 0.0;
  double power_mw = 0.0;
};

/// GOPs counts a MAC as two operations at the params' clock. Throws
/// InvalidVoltage below min_valid_voltage(table).
Efficiency efficiency(const sim::ExecutionReport& report, const PowerParams& p, double v,
                      const SlackTable& table = default_slack_table());

struct SweepPoint {
  double voltage = 0.0;
  double p_static_mw = 0.0;
  double p_dynamic_mw = 0.0;
  double p_total_mw = 0.0;
  double gops = 0.0;
  double gops_per_watt = 0.0;
  bool valid = false;
  /// This sample sits at min_valid_voltage().
  bool min_valid = false;
};

/// Samples [0.60, 1.00] V; points below the minimum valid voltage are kept
/// but flagged. `include_min_valid` inserts that voltage when it falls
/// between grid points.
std::vector<SweepPoint> voltage_sweep(const sim::ExecutionReport& report, const PowerParams& p,
                                      const SlackTable& table, double step = 0.05, bool include_min_valid = false);

struct PowerConfig {
  PowerParams params;
  SlackTable slack;
};

/// Plain `key = value` lines, `#` comments, and `slack <volts> <ps>` rows.
/// Missing keys keep their defaults; no slack rows means the default table.
/// Throws ParseError naming the line.
PowerConfig parse_power_config(const std::string& text);
PowerConfig read_power_config(const std::filesystem::path& path);

void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepPoint>& sweep);

}  // namespace marvin::power
