#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace marvin::isa {

/// Operand precision of one nn_mac instruction. Only the nine combinations of
/// {2,4,8}-bit weights and activations exist.
struct PrecisionConfig {
  int weight_bits = 8;
  int activation_bits = 8;

  static bool valid_width(int bits) { return bits == 2 || bits == 4 || bits == 8; }
  bool valid() const { return valid_width(weight_bits) && valid_width(activation_bits); }

  int weight_lanes() const { return 32 / weight_bits; }
  int activation_lanes() const { return 32 / activation_bits; }

  /// Products computed by one instruction: lane k of the weights pairs with
  /// lane k of the activations, so the narrower lane count bounds it.
  int products() const {
    return weight_lanes() < activation_lanes() ? weight_lanes() : activation_lanes();
  }

  /// Canonical mnemonic suffix, e.g. "w4a8".
  std::string name() const;
  /// Parses "w4a8" (or "W4A8"); throws InvalidConfig.
  static PrecisionConfig parse(std::string_view text);

  friend bool operator==(const PrecisionConfig&, const PrecisionConfig&) = default;
};

/// The nine configurations in Table order: w8a8, w8a4, w8a2, w4a8, ... w2a2.
const std::array<PrecisionConfig, 9>& all_configs();

enum class Mode { Mode1 = 1, Mode2 = 2, Mode3 = 3 };

/// Mode is fixed by the weight width: 8 -> Mode1, 4 -> Mode2, 2 -> Mode3.
Mode mode_of(const PrecisionConfig& cfg);

/// funct7 for an nn_mac config: bits[1:0] weight width, bits[3:2] activation
/// width, each coded 8 -> 0b10, 4 -> 0b01, 2 -> 0b00.
std::uint32_t nn_mac_funct7(const PrecisionConfig& cfg);
std::optional<PrecisionConfig> config_from_funct7(std::uint32_t funct7);

inline constexpr std::uint32_t kOpcodeCustom0 = 0b0001011;
inline constexpr std::uint32_t kNnMacFunct3 = 0b010;

enum class Op : std::uint8_t {
  // OP
  Add, Sub, Sll, Slt, Sltu, Xor, Srl, Sra, Or, And,
  Mul,
  // OP-IMM
  Addi, Slti, Sltiu, Xori, Ori, Andi, Slli, Srli, Srai,
  Lui,
  Lw,
  Sw,
  Beq, Bne, Blt, Bge, Bltu, Bgeu,
  Jal,
  Nop,
  NnMac,
};

enum class InstrClass : std::uint8_t { NnMac, Load, Store, Alu, Mul, Branch, Nop };

InstrClass class_of(Op op);
std::string_view mnemonic(Op op);

/// A decoded instruction. `imm` is the sign-extended immediate (I/S/B types),
/// the byte offset for branches, or the upper 20 bits already shifted for LUI.
struct Instruction {
  Op op = Op::Nop;
  std::uint8_t rd = 0;
  std::uint8_t rs1 = 0;
  std::uint8_t rs2 = 0;
  std::int32_t imm = 0;
  PrecisionConfig cfg{};  // meaningful only for NnMac
  std::uint32_t raw = 0;  // set by decode(); ignored by encode() and ==

  InstrClass kind() const { return class_of(op); }

  friend bool operator==(const Instruction& a, const Instruction& b) {
    return a.op == b.op && a.rd == b.rd && a.rs1 == b.rs1 && a.rs2 == b.rs2 && a.imm == b.imm &&
           (a.op != Op::NnMac || a.cfg == b.cfg);
  }
};

// Builders. They do not validate; encode() does.
Instruction nn_mac(const PrecisionConfig& cfg, int rd, int rs1, int rs2);
Instruction r_type(Op op, int rd, int rs1, int rs2);
Instruction i_type(Op op, int rd, int rs1, std::int32_t imm);
Instruction lui(int rd, std::int32_t upper);  // upper = value with low 12 bits zero
Instruction lw(int rd, int base, std::int32_t offset);
Instruction sw(int src, int base, std::int32_t offset);
Instruction branch(Op op, int rs1, int rs2, std::int32_t offset);
Instruction jal(int rd, std::int32_t offset);
Instruction nop();

/// Bit-exact 32-bit word. Throws InvalidRegister or InvalidConfig.
std::uint32_t encode(const Instruction& instr);
/// Throws UnknownInstruction for anything outside the supported subset.
Instruction decode(std::uint32_t word);
/// Never throws; unknown words render as ".word 0x...".
std::string disassemble(std::uint32_t word);

bool fits_imm12(std::int64_t value);

}  // namespace marvin::isa
