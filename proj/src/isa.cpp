#include "marvin/isa.hpp"

#include <cctype>
#include <cstdio>

#include "marvin/error.hpp"

namespace marvin::isa {

namespace {

constexpr std::uint32_t kOpcodeOp = 0b0110011;
constexpr std::uint32_t kOpcodeOpImm = 0b0010011;
constexpr std::uint32_t kOpcodeLui = 0b0110111;
constexpr std::uint32_t kOpcodeLoad = 0b0000011;
constexpr std::uint32_t kOpcodeStore = 0b0100011;
constexpr std::uint32_t kOpcodeBranch = 0b1100011;
constexpr std::uint32_t kOpcodeJal = 0b1101111;

std::uint32_t width_code(int bits) {
  switch (bits) {
    case 8: return 0b10;
    case 4: return 0b01;
    case 2: return 0b00;
    default: throw Error(ErrorCode::InvalidConfig, "lane width " + std::to_string(bits));
  }
}

std::optional<int> width_from_code(std::uint32_t code) {
  switch (code) {
    case 0b10: return 8;
    case 0b01: return 4;
    case 0b00: return 2;
    default: return std::nullopt;
  }
}

struct AluEncoding {
  std::uint32_t funct3;
  std::uint32_t funct7;
};

AluEncoding op_encoding(Op op) {
  switch (op) {
    case Op::Add: return {0, 0x00};
    case Op::Sub: return {0, 0x20};
    case Op::Sll: return {1, 0x00};
    case Op::Slt: return {2, 0x00};
    case Op::Sltu: return {3, 0x00};
    case Op::Xor: return {4, 0x00};
    case Op::Srl: return {5, 0x00};
    case Op::Sra: return {5, 0x20};
    case Op::Or: return {6, 0x00};
    case Op::And: return {7, 0x00};
    case Op::Mul: return {0, 0x01};
    case Op::Addi: return {0, 0};
    case Op::Slli: return {1, 0x00};
    case Op::Slti: return {2, 0};
    case Op::Sltiu: return {3, 0};
    case Op::Xori: return {4, 0};
    case Op::Srli: return {5, 0x00};
    case Op::Srai: return {5, 0x20};
    case Op::Ori: return {6, 0};
    case Op::Andi: return {7, 0};
    case Op::Beq: return {0, 0};
    case Op::Bne: return {1, 0};
    case Op::Blt: return {4, 0};
    case Op::Bge: return {5, 0};
    case Op::Bltu: return {6, 0};
    case Op::Bgeu: return {7, 0};
    default: return {0, 0};
  }
}

void check_reg(int r) {
  if (r < 0 || r > 31) throw Error(ErrorCode::InvalidRegister, "x" + std::to_string(r));
}

std::int32_t sext(std::uint32_t value, int bits) {
  const std::uint32_t m = 1u << (bits - 1);
  value &= (bits == 32) ? 0xFFFFFFFFu : ((1u << bits) - 1);
  return static_cast<std::int32_t>((value ^ m) - m);
}

[[noreturn]] void unknown(std::uint32_t word) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "0x%08x", word);
  throw Error(ErrorCode::UnknownInstruction, buf);
}

}  // namespace

std::string PrecisionConfig::name() const {
  return "w" + std::to_string(weight_bits) + "a" + std::to_string(activation_bits);
}

PrecisionConfig PrecisionConfig::parse(std::string_view text) {
  if (text.size() == 4 && std::tolower(text[0]) == 'w' && std::tolower(text[2]) == 'a' &&
      std::isdigit(text[1]) && std::isdigit(text[3])) {
    PrecisionConfig cfg{text[1] - '0', text[3] - '0'};
    if (cfg.valid()) return cfg;
  }
  throw Error(ErrorCode::InvalidConfig, "'" + std::string(text) + "' is not one of the nine configs");
}

const std::array<PrecisionConfig, 9>& all_configs() {
  static const std::array<PrecisionConfig, 9> configs = {{
      {8, 8}, {8, 4}, {8, 2},
      {4, 8}, {4, 4}, {4, 2},
      {2, 8}, {2, 4}, {2, 2},
  }};
  return configs;
}

Mode mode_of(const PrecisionConfig& cfg) {
  switch (cfg.weight_bits) {
    case 8: return Mode::Mode1;
    case 4: return Mode::Mode2;
    case 2: return Mode::Mode3;
    default: throw Error(ErrorCode::InvalidConfig, cfg.name());
  }
}

std::uint32_t nn_mac_funct7(const PrecisionConfig& cfg) {
  return (width_code(cfg.activation_bits) << 2) | width_code(cfg.weight_bits);
}

std::optional<PrecisionConfig> config_from_funct7(std::uint32_t funct7) {
  if ((funct7 & ~0b1111u) != 0) return std::nullopt;
  const auto w = width_from_code(funct7 & 0b11);
  const auto a = width_from_code((funct7 >> 2) & 0b11);
  if (!w || !a) return std::nullopt;
  return PrecisionConfig{*w, *a};
}

InstrClass class_of(Op op) {
  switch (op) {
    case Op::NnMac: return InstrClass::NnMac;
    case Op::Lw: return InstrClass::Load;
    case Op::Sw: return InstrClass::Store;
    case Op::Mul: return InstrClass::Mul;
    case Op::Beq: case Op::Bne: case Op::Blt: case Op::Bge: case Op::Bltu: case Op::Bgeu:
    case Op::Jal:
      return InstrClass::Branch;
    case Op::Nop: return InstrClass::Nop;
    default: return InstrClass::Alu;
  }
}

std::string_view mnemonic(Op op) {
  switch (op) {
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Sll: return "sll";
    case Op::Slt: return "slt";
    case Op::Sltu: return "sltu";
    case Op::Xor: return "xor";
    case Op::Srl: return "srl";
    case Op::Sra: return "sra";
    case Op::Or: return "or";
    case Op::And: return "and";
    case Op::Mul: return "mul";
    case Op::Addi: return "addi";
    case Op::Slti: return "slti";
    case Op::Sltiu: return "sltiu";
    case Op::Xori: return "xori";
    case Op::Ori: return "ori";
    case Op::Andi: return "andi";
    case Op::Slli: return "slli";
    case Op::Srli: return "srli";
    case Op::Srai: return "srai";
    case Op::Lui: return "lui";
    case Op::Lw: return "lw";
    case Op::Sw: return "sw";
    case Op::Beq: return "beq";
    case Op::Bne: return "bne";
    case Op::Blt: return "blt";
    case Op::Bge: return "bge";
    case Op::Bltu: return "bltu";
    case Op::Bgeu: return "bgeu";
    case Op::Jal: return "jal";
    case Op::Nop: return "nop";
    case Op::NnMac: return "nn_mac";
  }
  return "?";
}

bool fits_imm12(std::int64_t value) { return value >= -2048 && value <= 2047; }

Instruction nn_mac(const PrecisionConfig& cfg, int rd, int rs1, int rs2) {
  Instruction i;
  i.op = Op::NnMac;
  i.rd = static_cast<std::uint8_t>(rd);
  i.rs1 = static_cast<std::uint8_t>(rs1);
  i.rs2 = static_cast<std::uint8_t>(rs2);
  i.cfg = cfg;
  return i;
}

Instruction r_type(Op op, int rd, int rs1, int rs2) {
  Instruction i;
  i.op = op;
  i.rd = static_cast<std::uint8_t>(rd);
  i.rs1 = static_cast<std::uint8_t>(rs1);
  i.rs2 = static_cast<std::uint8_t>(rs2);
  return i;
}

Instruction i_type(Op op, int rd, int rs1, std::int32_t imm) {
  Instruction i;
  i.op = op;
  i.rd = static_cast<std::uint8_t>(rd);
  i.rs1 = static_cast<std::uint8_t>(rs1);
  i.imm = imm;
  return i;
}

Instruction lui(int rd, std::int32_t upper) {
  Instruction i;
  i.op = Op::Lui;
  i.rd = static_cast<std::uint8_t>(rd);
  i.imm = upper;
  return i;
}

Instruction lw(int rd, int base, std::int32_t offset) { return i_type(Op::Lw, rd, base, offset); }

Instruction sw(int src, int base, std::int32_t offset) {
  Instruction i;
  i.op = Op::Sw;
  i.rs1 = static_cast<std::uint8_t>(base);
  i.rs2 = static_cast<std::uint8_t>(src);
  i.imm = offset;
  return i;
}

Instruction branch(Op op, int rs1, int rs2, std::int32_t offset) {
  Instruction i;
  i.op = op;
  i.rs1 = static_cast<std::uint8_t>(rs1);
  i.rs2 = static_cast<std::uint8_t>(rs2);
  i.imm = offset;
  return i;
}

Instruction jal(int rd, std::int32_t offset) {
  Instruction i;
  i.op = Op::Jal;
  i.rd = static_cast<std::uint8_t>(rd);
  i.imm = offset;
  return i;
}

Instruction nop() { return Instruction{}; }

std::uint32_t encode(const Instruction& in) {
  check_reg(in.rd);
  check_reg(in.rs1);
  check_reg(in.rs2);
  const auto rd = static_cast<std::uint32_t>(in.rd);
  const auto rs1 = static_cast<std::uint32_t>(in.rs1);
  const auto rs2 = static_cast<std::uint32_t>(in.rs2);
  const auto imm = static_cast<std::uint32_t>(in.imm);
  const auto enc = op_encoding(in.op);

  auto r = [&](std::uint32_t opcode, std::uint32_t f3, std::uint32_t f7) {
    return (f7 << 25) | (rs2 << 20) | (rs1 << 15) | (f3 << 12) | (rd << 7) | opcode;
  };
  auto need_imm12 = [&] {
    if (!fits_imm12(in.imm))
      throw Error(ErrorCode::InvalidConfig, "immediate " + std::to_string(in.imm) + " out of range");
  };

  switch (in.op) {
    case Op::NnMac:
      if (!in.cfg.valid()) throw Error(ErrorCode::InvalidConfig, in.cfg.name());
      return r(kOpcodeCustom0, kNnMacFunct3, nn_mac_funct7(in.cfg));
    case Op::Add: case Op::Sub: case Op::Sll: case Op::Slt: case Op::Sltu: case Op::Xor:
    case Op::Srl: case Op::Sra: case Op::Or: case Op::And: case Op::Mul:
      return r(kOpcodeOp, enc.funct3, enc.funct7);
    case Op::Slli: case Op::Srli: case Op::Srai:
      if (in.imm < 0 || in.imm > 31)
        throw Error(ErrorCode::InvalidConfig, "shift amount " + std::to_string(in.imm));
      return (enc.funct7 << 25) | ((imm & 31) << 20) | (rs1 << 15) | (enc.funct3 << 12) | (rd << 7) |
             kOpcodeOpImm;
    case Op::Addi: case Op::Slti: case Op::Sltiu: case Op::Xori: case Op::Ori: case Op::Andi:
      need_imm12();
      return ((imm & 0xFFF) << 20) | (rs1 << 15) | (enc.funct3 << 12) | (rd << 7) | kOpcodeOpImm;
    case Op::Nop:
      return 0x00000013;
    case Op::Lui:
      if ((imm & 0xFFF) != 0) throw Error(ErrorCode::InvalidConfig, "lui immediate has low bits set");
      return (imm & 0xFFFFF000u) | (rd << 7) | kOpcodeLui;
    case Op::Lw:
      need_imm12();
      return ((imm & 0xFFF) << 20) | (rs1 << 15) | (0b010u << 12) | (rd << 7) | kOpcodeLoad;
    case Op::Sw:
      need_imm12();
      return (((imm >> 5) & 0x7F) << 25) | (rs2 << 20) | (rs1 << 15) | (0b010u << 12) |
             ((imm & 0x1F) << 7) | kOpcodeStore;
    case Op::Beq: case Op::Bne: case Op::Blt: case Op::Bge: case Op::Bltu: case Op::Bgeu:
      if (in.imm < -4096 || in.imm > 4094 || (in.imm & 1))
        throw Error(ErrorCode::InvalidConfig, "branch offset " + std::to_string(in.imm));
      return (((imm >> 12) & 1) << 31) | (((imm >> 5) & 0x3F) << 25) | (rs2 << 20) | (rs1 << 15) |
             (enc.funct3 << 12) | (((imm >> 1) & 0xF) << 8) | (((imm >> 11) & 1) << 7) |
             kOpcodeBranch;
    case Op::Jal:
      if (in.imm < -(1 << 20) || in.imm >= (1 << 20) || (in.imm & 1))
        throw Error(ErrorCode::InvalidConfig, "jump offset " + std::to_string(in.imm));
      return (((imm >> 20) & 1) << 31) | (((imm >> 1) & 0x3FF) << 21) | (((imm >> 11) & 1) << 20) |
             (((imm >> 12) & 0xFF) << 12) | (rd << 7) | kOpcodeJal;
  }
  throw Error(ErrorCode::InvalidConfig, "unencodable op");
}

Instruction decode(std::uint32_t w) {
  const std::uint32_t opcode = w & 0x7F;
  const int rd = static_cast<int>((w >> 7) & 31);
  const std::uint32_t f3 = (w >> 12) & 7;
  const int rs1 = static_cast<int>((w >> 15) & 31);
  const int rs2 = static_cast<int>((w >> 20) & 31);
  const std::uint32_t f7 = w >> 25;

  Instruction out;
  switch (opcode) {
    case kOpcodeCustom0: {
      const auto cfg = config_from_funct7(f7);
      if (f3 != kNnMacFunct3 || !cfg) unknown(w);
      out = nn_mac(*cfg, rd, rs1, rs2);
      break;
    }
    case kOpcodeOp: {
      static constexpr Op base[8] = {Op::Add, Op::Sll, Op::Slt, Op::Sltu,
                                     Op::Xor, Op::Srl, Op::Or, Op::And};
      Op op;
      if (f7 == 0x00) op = base[f3];
      else if (f7 == 0x20 && f3 == 0) op = Op::Sub;
      else if (f7 == 0x20 && f3 == 5) op = Op::Sra;
      else if (f7 == 0x01 && f3 == 0) op = Op::Mul;
      else unknown(w);
      out = r_type(op, rd, rs1, rs2);
      break;
    }
    case kOpcodeOpImm: {
      const std::int32_t imm = sext(w >> 20, 12);
      switch (f3) {
        case 0:
          out = (w == 0x00000013) ? nop() : i_type(Op::Addi, rd, rs1, imm);
          break;
        case 2: out = i_type(Op::Slti, rd, rs1, imm); break;
        case 3: out = i_type(Op::Sltiu, rd, rs1, imm); break;
        case 4: out = i_type(Op::Xori, rd, rs1, imm); break;
        case 6: out = i_type(Op::Ori, rd, rs1, imm); break;
        case 7: out = i_type(Op::Andi, rd, rs1, imm); break;
        case 1:
          if (f7 != 0) unknown(w);
          out = i_type(Op::Slli, rd, rs1, rs2);
          break;
        case 5:
          if (f7 == 0x00) out = i_type(Op::Srli, rd, rs1, rs2);
          else if (f7 == 0x20) out = i_type(Op::Srai, rd, rs1, rs2);
          else unknown(w);
          break;
      }
      break;
    }
    case kOpcodeLui:
      out = lui(rd, static_cast<std::int32_t>(w & 0xFFFFF000u));
      break;
    case kOpcodeLoad:
      if (f3 != 0b010) unknown(w);
      out = lw(rd, rs1, sext(w >> 20, 12));
      break;
    case kOpcodeStore:
      if (f3 != 0b010) unknown(w);
      out = sw(rs2, rs1, sext(((w >> 25) << 5) | ((w >> 7) & 0x1F), 12));
      break;
    case kOpcodeBranch: {
      static constexpr std::optional<Op> ops[8] = {Op::Beq, Op::Bne, std::nullopt, std::nullopt,
                                                   Op::Blt, Op::Bge, Op::Bltu, Op::Bgeu};
      if (!ops[f3]) unknown(w);
      const std::uint32_t imm = (((w >> 31) & 1) << 12) | (((w >> 7) & 1) << 11) |
                                (((w >> 25) & 0x3F) << 5) | (((w >> 8) & 0xF) << 1);
      out = branch(*ops[f3], rs1, rs2, sext(imm, 13));
      break;
    }
    case kOpcodeJal: {
      const std::uint32_t imm = (((w >> 31) & 1) << 20) | (((w >> 12) & 0xFF) << 12) |
                                (((w >> 20) & 1) << 11) | (((w >> 21) & 0x3FF) << 1);
      out = jal(rd, sext(imm, 21));
      break;
    }
    default:
      unknown(w);
  }
  out.raw = w;
  return out;
}

std::string disassemble(std::uint32_t word) {
  Instruction in;
  try {
    in = decode(word);
  } catch (const Error&) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), ".word 0x%08x", word);
    return buf;
  }
  auto x = [](int r) { return "x" + std::to_string(r); };
  const std::string m(mnemonic(in.op));
  switch (in.kind()) {
    case InstrClass::NnMac:
      return "nn_mac_" + in.cfg.name() + " " + x(in.rd) + ", " + x(in.rs1) + ", " + x(in.rs2);
    case InstrClass::Load:
      return m + " " + x(in.rd) + ", " + std::to_string(in.imm) + "(" + x(in.rs1) + ")";
    case InstrClass::Store:
      return m + " " + x(in.rs2) + ", " + std::to_string(in.imm) + "(" + x(in.rs1) + ")";
    case InstrClass::Branch:
      if (in.op == Op::Jal) return m + " " + x(in.rd) + ", " + std::to_string(in.imm);
      return m + " " + x(in.rs1) + ", " + x(in.rs2) + ", " + std::to_string(in.imm);
    case InstrClass::Nop:
      return "nop";
    case InstrClass::Mul:
      return m + " " + x(in.rd) + ", " + x(in.rs1) + ", " + x(in.rs2);
    case InstrClass::Alu:
      break;
  }
  switch (in.op) {
    case Op::Lui: {
      char buf[16];
      std::snprintf(buf, sizeof(buf), "0x%x", static_cast<std::uint32_t>(in.imm) >> 12);
      return m + " " + x(in.rd) + ", " + buf;
    }
    case Op::Addi: case Op::Slti: case Op::Sltiu: case Op::Xori: case Op::Ori: case Op::Andi:
    case Op::Slli: case Op::Srli: case Op::Srai:
      return m + " " + x(in.rd) + ", " + x(in.rs1) + ", " + std::to_string(in.imm);
    default:
      return m + " " + x(in.rd) + ", " + x(in.rs1) + ", " + x(in.rs2);
  }
}

}  // namespace marvin::isa
