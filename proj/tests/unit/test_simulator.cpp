#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <random>

#include "marvin/datapath.hpp"
#include "marvin/error.hpp"
#include "marvin/kernels.hpp"
#include "marvin/simulator.hpp"

using namespace marvin;
using namespace marvin::sim;
using isa::Op;

namespace {

Program straight(const std::vector<isa::Instruction>& instrs, std::uint32_t mem = 256) {
  Program p;
  for (const auto& i : instrs) p.code.push_back(isa::encode(i));
  p.memory_size = mem;
  return p;
}

// Independent interpreter for ALU/MUL/load/store straight-line code.
void interpret(const std::vector<isa::Instruction>& prog, std::array<std::uint32_t, 32>& r,
               std::vector<std::uint32_t>& mem) {
  auto R = [&](int i) { return i == 0 ? 0u : r[i]; };
  auto W = [&](int i, std::uint32_t v) {
    if (i) r[i] = v;
  };
  for (const auto& in : prog) {
    const std::uint32_t a = R(in.rs1), b = R(in.rs2);
    const std::uint32_t imm = static_cast<std::uint32_t>(in.imm);
    switch (in.op) {
      case Op::Add: W(in.rd, a + b); break;
      case Op::Sub: W(in.rd, a - b); break;
      case Op::Xor: W(in.rd, a ^ b); break;
      case Op::Or: W(in.rd, a | b); break;
      case Op::And: W(in.rd, a & b); break;
      case Op::Sll: W(in.rd, a << (b & 31)); break;
      case Op::Srl: W(in.rd, a >> (b & 31)); break;
      case Op::Sra: W(in.rd, static_cast<std::uint32_t>(static_cast<std::int32_t>(a) >> (b & 31))); break;
      case Op::Slt: W(in.rd, static_cast<std::int32_t>(a) < static_cast<std::int32_t>(b)); break;
      case Op::Sltu: W(in.rd, a < b); break;
      case Op::Mul: W(in.rd, a * b); break;
      case Op::Addi: W(in.rd, a + imm); break;
      case Op::Andi: W(in.rd, a & imm); break;
      case Op::Ori: W(in.rd, a | imm); break;
      case Op::Xori: W(in.rd, a ^ imm); break;
      case Op::Slli: W(in.rd, a << (imm & 31)); break;
      case Op::Srli: W(in.rd, a >> (imm & 31)); break;
      case Op::Srai: W(in.rd, static_cast<std::uint32_t>(static_cast<std::int32_t>(a) >> (imm & 31))); break;
      case Op::Lw: W(in.rd, mem[(a + imm) / 4]); break;
      case Op::Sw: mem[(a + imm) / 4] = b; break;
      default: FAIL("unexpected op");
    }
  }
}

}  // namespace

TEST_CASE("empty program costs nothing and leaves state unchanged") {
  Program p;
  p.memory_size = 64;
  MachineState st = initial_state(p);
  st.set_reg(5, 77);
  const MachineState before = st;
  const auto rep = run(p, st);
  CHECK(rep.total_cycles == 0);
  CHECK(rep.instruction_count == 0);
  CHECK(st == before);
}

TEST_CASE("x0 ignores writes") {
  Program p = straight({isa::i_type(Op::Addi, 0, 0, 5), isa::r_type(Op::Add, 1, 0, 0)});
  MachineState st = initial_state(p);
  run(p, st);
  CHECK(st.reg(0) == 0);
  CHECK(st.reg(1) == 0);
}

TEST_CASE("single nn_mac matches the functional datapath in one core cycle") {
  std::mt19937 rng(1);
  for (const auto& cfg : isa::all_configs()) {
    Program p = straight({isa::nn_mac(cfg, 10, 11, 12)});
    MachineState st = initial_state(p);
    const std::uint32_t acc = rng(), act = rng(), wgt = rng();
    st.set_reg(10, acc);
    st.set_reg(11, act);
    st.set_reg(12, wgt);
    const auto rep = run(p, st);
    CHECK(rep.total_cycles == 1);
    CHECK(rep.totals.nn_macs == 1);
    CHECK(st.reg(10) == datapath::nn_mac_raw(acc, wgt, act, cfg));
  }
}

TEST_CASE("random straight-line programs match an independent interpreter") {
  std::mt19937 rng(21);
  const Op rr[] = {Op::Add, Op::Sub, Op::Xor, Op::Or, Op::And, Op::Sll, Op::Srl, Op::Sra, Op::Slt, Op::Sltu, Op::Mul};
  const Op ri[] = {Op::Addi, Op::Andi, Op::Ori, Op::Xori, Op::Slli, Op::Srli, Op::Srai};
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<isa::Instruction> prog;
    // x31 holds a valid word-aligned base for memory traffic.
    prog.push_back(isa::i_type(Op::Addi, 31, 0, 64));
    for (int k = 0; k < 60; ++k) {
      const int rd = 1 + static_cast<int>(rng() % 30);
      const int rs1 = static_cast<int>(rng() % 32), rs2 = static_cast<int>(rng() % 32);
      switch (rng() % 4) {
        case 0: prog.push_back(isa::r_type(rr[rng() % std::size(rr)], rd, rs1, rs2)); break;
        case 1: {
          const Op op = ri[rng() % std::size(ri)];
          const bool sh = op == Op::Slli || op == Op::Srli || op == Op::Srai;
          prog.push_back(isa::i_type(op, rd, rs1, sh ? static_cast<int>(rng() % 32)
                                                     : static_cast<int>(rng() % 4096) - 2048));
          break;
        }
        case 2: prog.push_back(isa::lw(rd, 31, 4 * static_cast<int>(rng() % 32))); break;
        default: prog.push_back(isa::sw(rs2, 31, 4 * static_cast<int>(rng() % 32))); break;
      }
    }
    Program p = straight(prog, 256);
    MachineState st = initial_state(p);
    std::array<std::uint32_t, 32> regs{};
    std::vector<std::uint32_t> mem(64, 0);
    for (int i = 1; i < 31; ++i) {
      const std::uint32_t v = rng();
      st.set_reg(i, v);
      regs[i] = v;
    }
    run(p, st);
    interpret(prog, regs, mem);
    for (int i = 0; i < 32; ++i) CHECK(st.reg(i) == regs[i]);
    CHECK(st.memory.read_words(0, 64) == mem);
  }
}

TEST_CASE("counter accounting and load stalls") {
  Program p = straight({isa::lw(1, 0, 0), isa::lw(2, 0, 4), isa::r_type(Op::Mul, 3, 1, 2),
                        isa::r_type(Op::Add, 4, 4, 3), isa::sw(4, 0, 8)});
  MachineState st = initial_state(p);
  const auto rep = run(p, st);
  std::uint64_t issue = 0;
  for (auto c : rep.totals.class_cycles) issue += c;
  CHECK(rep.total_cycles == issue + rep.stall_cycles);
  CHECK(rep.stall_cycles == 2);
  CHECK(rep.total_cycles == 7);
  CHECK(rep.load_count == 2);
  CHECK(rep.store_count == 1);
}

TEST_CASE("scalar MAC loop costs at least seven cycles per MAC") {
  const kernels::LayerSpec L = kernels::dense(64, 1, 1, 1, kernels::Activation::None);
  kernels::LayerParams prm;
  prm.weights.assign(64, 3);
  prm.bias = {0};
  const std::vector<std::int32_t> in(64, 2);
  const auto lp = kernels::gen_dense(L, prm, kernels::Variant::Baseline, {8, 8}, {true, 8}, in);
  MachineState st = initial_state(lp.program);
  const auto rep = run(lp.program, st);
  CHECK(kernels::read_output(lp, st) == std::vector<std::int32_t>{384});
  CHECK(static_cast<double>(rep.total_cycles) / 64.0 >= 7.0);
}

TEST_CASE("taken and not-taken branch costs") {
  sim::Builder b;
  const auto top = b.new_label();
  b.li(1, 3);
  b.bind(top);
  b.emit(isa::i_type(Op::Addi, 1, 1, -1));
  b.branch(Op::Bne, 1, 0, top);
  Program p;
  p.code = b.finish();
  MachineState st = initial_state(p);
  const auto rep = run(p, st);
  // li(1) + 3 addi + 2 taken (2 each) + 1 not taken (1)
  CHECK(rep.total_cycles == 1 + 3 + 4 + 1);
  CHECK(rep.stall_cycles == 2);
}

TEST_CASE("long backward branches are relaxed through jal") {
  sim::Builder b;
  const auto top = b.new_label();
  b.li(1, 2);
  b.bind(top);
  for (int i = 0; i < 1500; ++i) b.emit(isa::i_type(Op::Addi, 2, 2, 1));
  b.emit(isa::i_type(Op::Addi, 1, 1, -1));
  b.branch(Op::Bne, 1, 0, top);
  Program p;
  p.code = b.finish();
  MachineState st = initial_state(p);
  run(p, st);
  CHECK(st.reg(2) == 3000);
  CHECK(st.reg(1) == 0);
}

TEST_CASE("run errors") {
  SUBCASE("budget") {
    sim::Builder b;
    const auto top = b.new_label();
    b.bind(top);
    b.jump(top);
    Program p;
    p.code = b.finish();
    MachineState st = initial_state(p);
    try {
      run(p, st, {}, 1000);
      FAIL("expected BudgetExceeded");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::BudgetExceeded);
    }
  }
  SUBCASE("memory bounds") {
    Program p = straight({isa::lw(1, 0, 64)}, 64);
    MachineState st = initial_state(p);
    try {
      run(p, st);
      FAIL("expected MemoryOutOfBounds");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::MemoryOutOfBounds);
    }
  }
  SUBCASE("misaligned") {
    Program p = straight({isa::lw(1, 0, 2)}, 64);
    MachineState st = initial_state(p);
    CHECK_THROWS_AS(run(p, st), Error);
  }
  SUBCASE("unknown instruction") {
    Program p;
    p.code = {0xFFFFFFFFu};
    p.memory_size = 16;
    MachineState st = initial_state(p);
    try {
      run(p, st);
      FAIL("expected UnknownInstruction");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::UnknownInstruction);
    }
  }
}

TEST_CASE("compare_runs") {
  ExecutionReport a;
  a.total_cycles = 100;
  a.load_count = 10;
  a.store_count = 4;
  a.mac_count = 50;
  const auto same = compare_runs(a, a);
  CHECK(same.cycle_ratio == doctest::Approx(1.0));
  CHECK(same.load_ratio == doctest::Approx(1.0));
  ExecutionReport b = a;
  b.mac_count = 49;
  try {
    compare_runs(a, b);
    FAIL("expected WorkloadMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::WorkloadMismatch);
  }
}

TEST_CASE("stall fraction") {
  Program p = straight({isa::r_type(Op::Add, 1, 2, 3)});
  MachineState st = initial_state(p);
  CHECK(stall_fraction(run(p, st)) == 0.0);
}

namespace {

struct LayerRuns {
  ExecutionReport baseline;
  std::vector<ExecutionReport> packed;  // w8a8, w4a4, w2a2
};

LayerRuns conv_runs() {
  using namespace kernels;
  const LayerSpec L = conv2d(32, 16, 8, 8, 3, 1, 1, Activation::ReLU);
  std::mt19937 rng(3);
  LayerRuns out;
  std::vector<std::int32_t> in(L.input_size());
  for (auto& v : in) v = static_cast<std::int32_t>(rng() % 4);
  LayerParams prm;
  for (std::size_t i = 0; i < L.weight_count(); ++i) prm.weights.push_back(static_cast<int>(rng() % 4) - 2);
  prm.bias.assign(16, 1);
  prm.shift = 4;
  std::vector<std::int32_t> ref;
  {
    const auto lp = build_layer_program(L, prm, Variant::Baseline, {8, 8}, {false, 8}, in);
    MachineState st = initial_state(lp.program);
    out.baseline = run(lp.program, st);
    ref = read_output(lp, st);
  }
  for (int bits : {8, 4, 2}) {
    const auto lp = build_layer_program(L, prm, Variant::Packed, {bits, bits}, {false, 2}, in);
    MachineState st = initial_state(lp.program);
    out.packed.push_back(run(lp.program, st));
  }
  return out;
}

}  // namespace

TEST_CASE("packed convolution reduces loads and stalls monotonically") {
  const LayerRuns r = conv_runs();
  CHECK(r.packed[2].load_count < r.packed[1].load_count);
  CHECK(r.packed[1].load_count < r.packed[0].load_count);
  CHECK(r.packed[0].load_count < r.baseline.load_count);
  const double w2a2 = compare_runs(r.baseline, r.packed[2]).load_ratio;
  CHECK(w2a2 >= 13.0);
  CHECK(w2a2 <= 30.0);
  CHECK(r.baseline.stall_cycles > r.packed[0].stall_cycles);
  CHECK(r.packed[0].stall_cycles > r.packed[1].stall_cycles);
  CHECK(r.packed[1].stall_cycles > r.packed[2].stall_cycles);
  CHECK(stall_fraction(r.packed[0]) >= stall_fraction(r.packed[1]));
  CHECK(stall_fraction(r.packed[1]) >= stall_fraction(r.packed[2]));
  MESSAGE("stall fraction baseline ", stall_fraction(r.baseline), " w8a8 ", stall_fraction(r.packed[0]),
          " w2a2 ", stall_fraction(r.packed[2]), ", W2A2 load ratio ", w2a2);
}

TEST_CASE("runs are deterministic") {
  using namespace kernels;
  const LayerSpec L = depthwise(8, 5, 5, 3, 1, 1, Activation::ReLU);
  LayerParams prm;
  prm.weights.assign(L.weight_count(), 1);
  prm.bias.assign(8, 0);
  const std::vector<std::int32_t> in(L.input_size(), 3);
  const auto lp = build_layer_program(L, prm, Variant::Packed, {4, 4}, {false, 4}, in);
  MachineState s1 = initial_state(lp.program), s2 = initial_state(lp.program);
  const auto r1 = run(lp.program, s1), r2 = run(lp.program, s2);
  CHECK(s1 == s2);
  CHECK(r1.totals == r2.totals);
  CHECK(r1.total_cycles == r2.total_cycles);
}

TEST_CASE("cycle model text format") {
  const CycleModel m = CycleModel::parse("# core\nload = 3\n\nbranch_taken=4  # penalty\n");
  CHECK(m.load == 3);
  CHECK(m.branch_taken == 4);
  CHECK(m.alu == 1);
  try {
    CycleModel::parse("alu = 1\nbogus = 2\n", "m.txt");
    FAIL("expected ParseError");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ParseError);
    CHECK(std::string(e.what()).find("2") != std::string::npos);
  }
  CHECK_THROWS_AS(CycleModel::parse("load = x\n"), Error);
}

TEST_CASE("program save/load round-trip") {
  using namespace kernels;
  const LayerSpec L = conv2d(3, 4, 4, 4, 3, 1, 1, Activation::ReLU);
  LayerParams prm;
  prm.weights.assign(L.weight_count(), -1);
  prm.bias.assign(4, 50);
  const std::vector<std::int32_t> in(L.input_size(), 7);
  const auto lp = build_layer_program(L, prm, Variant::Packed, {4, 8}, {false, 8}, in);
  const auto dir = std::filesystem::temp_directory_path() / "marvin_prog_test";
  std::filesystem::create_directories(dir);
  save_program(lp.program, dir / "conv");
  const Program back = load_program(dir / "conv");
  CHECK(back.code == lp.program.code);
  CHECK(back.memory_size == lp.program.memory_size);
  CHECK(back.load_tags == lp.program.load_tags);
  REQUIRE(back.layers.size() == lp.program.layers.size());
  MachineState a = initial_state(lp.program), b = initial_state(back);
  CHECK(run(lp.program, a).totals == run(back, b).totals);
  CHECK(a == b);
  std::filesystem::remove(dir / "conv.json");
  CHECK_THROWS_AS(load_program(dir / "conv"), Error);
  std::filesystem::remove_all(dir);
}
