#include "marvin/simulator.hpp"

#include <charconv>
#include <limits>
#include <cstdlib>
#include <cstring>
#include <sstream>

#include "marvin/datapath.hpp"
#include "marvin/error.hpp"
#include "marvin/fileio.hpp"

namespace marvin::sim {

using isa::InstrClass;
using isa::Op;

namespace {

std::string hex(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "0x%08x", v);
  return buf;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

struct Decoded {
  Op op = Op::Nop;
  std::uint8_t rd = 0, rs1 = 0, rs2 = 0;
  bool valid = true;
  std::int32_t imm = 0;
  isa::PrecisionConfig cfg{};
};

}  // namespace

void Memory::check(std::uint32_t addr) const {
  if (addr % 4 != 0 || static_cast<std::uint64_t>(addr) + 4 > bytes_.size())
    throw Error(ErrorCode::MemoryOutOfBounds,
                "word access at " + hex(addr) + " (memory is " + std::to_string(bytes_.size()) + " bytes)");
}

std::uint32_t Memory::load32(std::uint32_t addr) const {
  check(addr);
  const std::uint8_t* p = bytes_.data() + addr;
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void Memory::store32(std::uint32_t addr, std::uint32_t value) {
  check(addr);
  std::uint8_t* p = bytes_.data() + addr;
  p[0] = static_cast<std::uint8_t>(value);
  p[1] = static_cast<std::uint8_t>(value >> 8);
  p[2] = static_cast<std::uint8_t>(value >> 16);
  p[3] = static_cast<std::uint8_t>(value >> 24);
}

void Memory::write_words(std::uint32_t addr, std::span<const std::uint32_t> words) {
  for (std::size_t i = 0; i < words.size(); ++i) store32(addr + static_cast<std::uint32_t>(4 * i), words[i]);
}

std::vector<std::uint32_t> Memory::read_words(std::uint32_t addr, std::size_t count) const {
  std::vector<std::uint32_t> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = load32(addr + static_cast<std::uint32_t>(4 * i));
  return out;
}

MachineState initial_state(const Program& program) {
  MachineState s;
  s.memory = Memory(program.memory_size);
  for (const DataSegment& seg : program.data) s.memory.write_words(seg.address, seg.words);
  s.pc = program.entry;
  return s;
}

CycleModel CycleModel::parse(std::string_view text, const std::string& source) {
  CycleModel m;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    auto fail = [&](const std::string& msg) {
      throw Error(ErrorCode::ParseError, source + ":" + std::to_string(lineno) + ": " + msg);
    };
    const auto eq = body.find('=');
    if (eq == std::string::npos) fail("expected key = value");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string val = trim(std::string_view(body).substr(eq + 1));
    std::uint32_t v = 0;
    const auto [ptr, ec] = std::from_chars(val.data(), val.data() + val.size(), v);
    if (ec != std::errc() || ptr != val.data() + val.size() || v < 1 || v > 1000)
      fail("'" + val + "' is not a cycle count in [1, 1000]");
    if (key == "alu") m.alu = v;
    else if (key == "mul") m.mul = v;
    else if (key == "nn_mac") m.nn_mac = v;
    else if (key == "load") m.load = v;
    else if (key == "store") m.store = v;
    else if (key == "branch_taken") m.branch_taken = v;
    else if (key == "branch_not_taken") m.branch_not_taken = v;
    else if (key == "nop") m.nop = v;
    else fail("unknown key '" + key + "'");
  }
  return m;
}

CycleModel CycleModel::from_file(const std::filesystem::path& path) {
  return parse(read_file(path), path.string());
}

CycleModel CycleModel::from_env() {
  const char* path = std::getenv("MARVIN_CYCLE_MODEL");
  if (path == nullptr || *path == '\0') return {};
  return from_file(path);
}

Counters& Counters::operator+=(const Counters& o) {
  cycles += o.cycles;
  instructions += o.instructions;
  loads += o.loads;
  stores += o.stores;
  stall_cycles += o.stall_cycles;
  nn_macs += o.nn_macs;
  weight_loads += o.weight_loads;
  activation_loads += o.activation_loads;
  for (std::size_t i = 0; i < kClassCount; ++i) class_cycles[i] += o.class_cycles[i];
  return *this;
}

ExecutionReport run(const Program& program, MachineState& state, const CycleModel& model,
                    std::uint64_t budget) {
  const std::size_t n = program.code.size();
  std::vector<Decoded> code(n);
  for (std::size_t i = 0; i < n; ++i) {
    try {
      const isa::Instruction in = isa::decode(program.code[i]);
      code[i] = {in.op, in.rd, in.rs1, in.rs2, true, in.imm, in.cfg};
    } catch (const Error&) {
      code[i].valid = false;  // only an error if executed
    }
  }

  std::vector<std::uint64_t> exec(n, 0);
  std::vector<std::uint64_t> taken(n, 0);
  auto& r = state.regs;
  const std::uint64_t end_pc = static_cast<std::uint64_t>(n) * 4;
  std::uint64_t steps = 0;
  std::uint32_t pc = state.pc;

  while (pc != end_pc) {
    if (pc % 4 != 0 || pc > end_pc)
      throw Error(ErrorCode::MemoryOutOfBounds, "instruction fetch at " + hex(pc));
    const std::size_t idx = pc / 4;
    const Decoded& d = code[idx];
    if (!d.valid) {
      state.pc = pc;
      throw Error(ErrorCode::UnknownInstruction, hex(program.code[idx]) + " at pc " + hex(pc));
    }
    if (++steps > budget) {
      state.pc = pc;
      throw Error(ErrorCode::BudgetExceeded, "more than " + std::to_string(budget) + " instructions");
    }
    ++exec[idx];
    const std::uint32_t a = r[d.rs1];
    const std::uint32_t b = r[d.rs2];
    const auto imm = static_cast<std::uint32_t>(d.imm);
    std::uint32_t next = pc + 4;
    std::uint32_t out = 0;
    bool write = true;
    switch (d.op) {
      case Op::Add: out = a + b; break;
      case Op::Sub: out = a - b; break;
      case Op::Sll: out = a << (b & 31); break;
      case Op::Slt: out = static_cast<std::int32_t>(a) < static_cast<std::int32_t>(b); break;
      case Op::Sltu: out = a < b; break;
      case Op::Xor: out = a ^ b; break;
      case Op::Srl: out = a >> (b & 31); break;
      case Op::Sra: out = static_cast<std::uint32_t>(static_cast<std::int32_t>(a) >> (b & 31)); break;
      case Op::Or: out = a | b; break;
      case Op::And: out = a & b; break;
      case Op::Mul: out = a * b; break;
      case Op::Addi: out = a + imm; break;
      case Op::Slti: out = static_cast<std::int32_t>(a) < d.imm; break;
      case Op::Sltiu: out = a < imm; break;
      case Op::Xori: out = a ^ imm; break;
      case Op::Ori: out = a | imm; break;
      case Op::Andi: out = a & imm; break;
      case Op::Slli: out = a << (imm & 31); break;
      case Op::Srli: out = a >> (imm & 31); break;
      case Op::Srai: out = static_cast<std::uint32_t>(static_cast<std::int32_t>(a) >> (imm & 31)); break;
      case Op::Lui: out = imm; break;
      case Op::Lw:
        try {
          out = state.memory.load32(a + imm);
        } catch (const Error&) {
          state.pc = pc;
          throw;
        }
        break;
      case Op::Sw:
        write = false;
        try {
          state.memory.store32(a + imm, b);
        } catch (const Error&) {
          state.pc = pc;
          throw;
        }
        break;
      case Op::Beq: case Op::Bne: case Op::Blt: case Op::Bge: case Op::Bltu: case Op::Bgeu: {
        write = false;
        bool t = false;
        switch (d.op) {
          case Op::Beq: t = a == b; break;
          case Op::Bne: t = a != b; break;
          case Op::Blt: t = static_cast<std::int32_t>(a) < static_cast<std::int32_t>(b); break;
          case Op::Bge: t = static_cast<std::int32_t>(a) >= static_cast<std::int32_t>(b); break;
          case Op::Bltu: t = a < b; break;
          default: t = a >= b; break;
        }
        if (t) {
          ++taken[idx];
          next = pc + imm;
        }
        break;
      }
      case Op::Jal:
        out = pc + 4;
        ++taken[idx];
        next = pc + imm;
        break;
      case Op::Nop: write = false; break;
      case Op::NnMac:
        out = static_cast<std::uint32_t>(
            datapath::nn_mac_raw(static_cast<std::int32_t>(r[d.rd]), b, a, d.cfg));
        break;
    }
    if (write && d.rd != 0) r[d.rd] = out;
    pc = next;
  }
  state.pc = pc;
  r[0] = 0;

  // Attribute per-pc counts to layers.
  std::vector<int> owner(n, -1);
  for (std::size_t k = 0; k < program.layers.size(); ++k) {
    const LayerMarker& m = program.layers[k];
    for (std::uint32_t p = m.begin_pc; p < m.end_pc && p / 4 < n; p += 4) owner[p / 4] = static_cast<int>(k);
  }
  ExecutionReport rep;
  std::vector<Counters> per_layer(program.layers.size());
  std::vector<bool> touched(program.layers.size(), false);
  for (std::size_t i = 0; i < n; ++i) {
    if (exec[i] == 0) continue;
    Counters& c = owner[i] >= 0 ? per_layer[owner[i]] : rep.glue;
    if (owner[i] >= 0) touched[owner[i]] = true;
    const Decoded& d = code[i];
    const InstrClass cls = isa::class_of(d.op);
    const std::uint64_t e = exec[i];
    std::uint64_t issue = 0;
    std::uint64_t stall = 0;
    switch (cls) {
      case InstrClass::Alu: issue = e * model.alu; break;
      case InstrClass::Mul: issue = e * model.mul; break;
      case InstrClass::NnMac: issue = e * model.nn_mac; c.nn_macs += e; break;
      case InstrClass::Store: issue = e * model.store; c.stores += e; break;
      case InstrClass::Nop: issue = e * model.nop; break;
      case InstrClass::Load: {
        issue = e;
        stall = e * (model.load - 1);
        c.loads += e;
        if (!program.load_tags.empty()) {
          if (program.load_tags[i] == LoadTag::Weight) c.weight_loads += e;
          if (program.load_tags[i] == LoadTag::Activation) c.activation_loads += e;
        }
        break;
      }
      case InstrClass::Branch: {
        const std::uint64_t t = taken[i];
        const std::uint64_t nt = e - t;
        issue = e;
        stall = t * (model.branch_taken - 1) + nt * (model.branch_not_taken - 1);
        break;
      }
    }
    c.instructions += e;
    c.class_cycles[class_index(cls)] += issue;
    c.stall_cycles += stall;
    c.cycles += issue + stall;
  }
  for (std::size_t k = 0; k < program.layers.size(); ++k) {
    const LayerMarker& m = program.layers[k];
    rep.layers.push_back({m.name, m.layer_index, m.mac_count, m.effective_mac_count, per_layer[k]});
    rep.totals += per_layer[k];
    if (touched[k]) {
      rep.mac_count += m.mac_count;
      rep.effective_mac_count += m.effective_mac_count;
    }
  }
  rep.totals += rep.glue;
  rep.total_cycles = rep.totals.cycles;
  rep.instruction_count = rep.totals.instructions;
  rep.load_count = rep.totals.loads;
  rep.store_count = rep.totals.stores;
  rep.stall_cycles = rep.totals.stall_cycles;
  return rep;
}

SpeedupReport compare_runs(const ExecutionReport& baseline, const ExecutionReport& optimized) {
  if (baseline.mac_count != optimized.mac_count)
    throw Error(ErrorCode::WorkloadMismatch, "mac counts differ: " + std::to_string(baseline.mac_count) +
                                                 " vs " + std::to_string(optimized.mac_count));
  auto ratio = [](std::uint64_t num, std::uint64_t den) {
    if (den == 0) return num == 0 ? 1.0 : std::numeric_limits<double>::infinity();
    return static_cast<double>(num) / static_cast<double>(den);
  };
  SpeedupReport s;
  s.cycle_ratio = ratio(baseline.total_cycles, optimized.total_cycles);
  s.load_ratio = ratio(baseline.load_count, optimized.load_count);
  s.store_ratio = ratio(baseline.store_count, optimized.store_count);
  for (const LayerReport& b : baseline.layers) {
    for (const LayerReport& o : optimized.layers) {
      if (o.layer_index != b.layer_index) continue;
      s.layers.push_back({b.name, ratio(b.counters.cycles, o.counters.cycles),
                          ratio(b.counters.loads, o.counters.loads)});
      break;
    }
  }
  return s;
}

double stall_fraction(const ExecutionReport& report) {
  if (report.total_cycles == 0) return 0.0;
  return static_cast<double>(report.stall_cycles) / static_cast<double>(report.total_cycles);
}

}  // namespace marvin::sim
