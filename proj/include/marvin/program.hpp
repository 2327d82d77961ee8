#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "marvin/isa.hpp"

namespace marvin::sim {

/// What a load fetches, as declared by the kernel generator. Lets reports
/// split weight traffic from activation traffic without tracing addresses.
enum class LoadTag : std::uint8_t { None = 0, Weight = 1, Activation = 2 };

struct DataSegment {
  std::uint32_t address = 0;
  std::vector<std::uint32_t> words;
};

/// Marks the code range [begin_pc, end_pc) that belongs to one network layer,
/// so cycles can be attributed per layer.
struct LayerMarker {
  std::string name;
  int layer_index = 0;
  std::uint32_t begin_pc = 0;
  std::uint32_t end_pc = 0;
  /// Nominal MACs of the dense (unpruned) layer.
  std::uint64_t mac_count = 0;
  /// MACs left after structured pruning.
  std::uint64_t effective_mac_count = 0;
};

/// An instruction stream plus the data image it expects. Code lives in its own
/// address space starting at 0; pc == 4 * code.size() halts.
struct Program {
  std::vector<std::uint32_t> code;
  std::uint32_t entry = 0;
  std::uint32_t memory_size = 0;
  std::vector<DataSegment> data;
  std::vector<LayerMarker> layers;
  /// Empty, or one tag per code word.
  std::vector<LoadTag> load_tags;
};

/// Writes `<stem>.bin` (little-endian instruction words), `<stem>.data`
/// (concatenated data segment words) and `<stem>.json` (sidecar manifest).
void save_program(const Program& program, const std::filesystem::path& stem);
Program load_program(const std::filesystem::path& stem);

/// Small assembler used by the kernel generators: labels with fixups, large
/// immediates, counted loops and layer markers.
class Builder {
 public:
  using Label = int;

  Label new_label();
  void bind(Label label);

  void emit(const isa::Instruction& instr);
  void load(int rd, int base, std::int32_t offset, LoadTag tag);
  void branch(isa::Op op, int rs1, int rs2, Label target);
  void jump(Label target);

  /// rd = value (1 or 2 instructions).
  void li(int rd, std::int32_t value);
  /// rd = rs + imm; uses `scratch` when imm does not fit 12 bits. No-op when
  /// imm == 0 and rd == rs.
  void addi(int rd, int rs, std::int64_t imm, int scratch);

  /// Emits body() `count` times as a counted loop on `counter`. count == 1
  /// emits the body once without loop overhead.
  template <class Body>
  void loop(int counter, int count, Body&& body) {
    if (count <= 0) return;
    if (count == 1) {
      body();
      return;
    }
    li(counter, count);
    const Label top = new_label();
    bind(top);
    body();
    emit(isa::i_type(isa::Op::Addi, counter, counter, -1));
    branch(isa::Op::Bne, counter, 0, top);
  }

  void begin_layer(std::string name, int layer_index, std::uint64_t macs,
                   std::uint64_t effective_macs);
  void end_layer();

  std::uint32_t pc() const { return static_cast<std::uint32_t>(instrs_.size() * 4); }
  std::size_t size() const { return instrs_.size(); }

  /// Resolves labels and encodes. Long backward/forward branches are rewritten
  /// as an inverted branch over a jal.
  std::vector<std::uint32_t> finish();
  const std::vector<LayerMarker>& markers() const { return markers_; }
  const std::vector<LoadTag>& load_tags() const { return tags_; }

 private:
  struct Fixup {
    std::size_t index;
    Label label;
  };
  std::vector<isa::Instruction> instrs_;
  std::vector<LoadTag> tags_;
  std::vector<std::int64_t> label_pos_;
  std::vector<Fixup> fixups_;
  std::vector<LayerMarker> markers_;
  bool in_layer_ = false;
};

}  // namespace marvin::sim
