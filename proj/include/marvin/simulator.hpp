#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "marvin/isa.hpp"
#include "marvin/program.hpp"

namespace marvin::sim {

/// Byte-addressable flat memory with 32-bit little-endian word accesses.
class Memory {
 public:
  Memory() = default;
  explicit Memory(std::size_t bytes) : bytes_(bytes, 0) {}

  std::size_t size() const { return bytes_.size(); }
  std::uint32_t load32(std::uint32_t addr) const;
  void store32(std::uint32_t addr, std::uint32_t value);
  /// Copies `words` starting at `addr`.
  void write_words(std::uint32_t addr, std::span<const std::uint32_t> words);
  std::vector<std::uint32_t> read_words(std::uint32_t addr, std::size_t count) const;

  friend bool operator==(const Memory&, const Memory&) = default;

 private:
  void check(std::uint32_t addr) const;
  std::vector<std::uint8_t> bytes_;
};

struct MachineState {
  std::array<std::uint32_t, 32> regs{};
  Memory memory;
  std::uint32_t pc = 0;

  /// x0 always reads zero.
  std::uint32_t reg(int r) const { return r == 0 ? 0 : regs[r]; }
  void set_reg(int r, std::uint32_t v) {
    if (r != 0) regs[r] = v;
  }
  friend bool operator==(const MachineState&, const MachineState&) = default;
};

/// Memory sized and initialized from the program's data segments, pc at entry.
MachineState initial_state(const Program& program);

inline constexpr std::size_t kClassCount = 7;

inline std::size_t class_index(isa::InstrClass c) { return static_cast<std::size_t>(c); }

/// Core-cycle cost per instruction class. Loads and taken branches cost more
/// than one cycle; the excess is what the report calls stall cycles.
struct CycleModel {
  std::uint32_t alu = 1;
  std::uint32_t mul = 1;
  std::uint32_t nn_mac = 1;
  std::uint32_t load = 2;
  std::uint32_t store = 1;
  std::uint32_t branch_taken = 2;
  std::uint32_t branch_not_taken = 1;
  std::uint32_t nop = 1;

  /// `key = value` lines, `#` comments. Unknown keys and bad values raise
  /// ParseError naming `source` and the line number.
  static CycleModel parse(std::string_view text, const std::string& source = "<string>");
  static CycleModel from_file(const std::filesystem::path& path);
  /// Defaults, overridden by the file named in MARVIN_CYCLE_MODEL if set.
  static CycleModel from_env();

  friend bool operator==(const CycleModel&, const CycleModel&) = default;
};

struct Counters {
  std::uint64_t cycles = 0;
  std::uint64_t instructions = 0;
  std::uint64_t loads = 0;
  std::uint64_t stores = 0;
  std::uint64_t stall_cycles = 0;
  std::uint64_t nn_macs = 0;
  /// Loads tagged as weight / activation fetches by the kernel generator.
  std::uint64_t weight_loads = 0;
  std::uint64_t activation_loads = 0;
  /// Issue cycles per class (excluding stalls), indexed by class_index().
  std::array<std::uint64_t, kClassCount> class_cycles{};

  Counters& operator+=(const Counters& o);
  friend bool operator==(const Counters&, const Counters&) = default;
};

struct LayerReport {
  std::string name;
  int layer_index = 0;
  std::uint64_t mac_count = 0;
  std::uint64_t effective_mac_count = 0;
  Counters counters;
};

struct ExecutionReport {
  std::uint64_t total_cycles = 0;
  std::uint64_t instruction_count = 0;
  std::uint64_t load_count = 0;
  std::uint64_t store_count = 0;
  std::uint64_t stall_cycles = 0;
  std::uint64_t mac_count = 0;
  std::uint64_t effective_mac_count = 0;
  Counters totals;
  std::vector<LayerReport> layers;
  /// Work outside any layer marker.
  Counters glue;
};

inline constexpr std::uint64_t kDefaultBudget = 2'000'000'000ULL;

/// Executes until pc reaches the end of the code. Deterministic.
/// Throws BudgetExceeded, MemoryOutOfBounds or UnknownInstruction.
ExecutionReport run(const Program& program, MachineState& state, const CycleModel& model = {},
                    std::uint64_t budget = kDefaultBudget);

struct LayerSpeedup {
  std::string name;
  double cycle_ratio = 1.0;
  double load_ratio = 1.0;
};

struct SpeedupReport {
  double cycle_ratio = 1.0;
  double load_ratio = 1.0;
  double store_ratio = 1.0;
  std::vector<LayerSpeedup> layers;
};

/// baseline / optimized ratios. Throws WorkloadMismatch if mac counts differ.
SpeedupReport compare_runs(const ExecutionReport& baseline, const ExecutionReport& optimized);

double stall_fraction(const ExecutionReport& report);

}  // namespace marvin::sim
