#include "marvin/program.hpp"

#include <json.hpp>

#include "marvin/error.hpp"
#include "marvin/fileio.hpp"

namespace marvin::sim {

using isa::Instruction;
using isa::Op;

namespace {

std::string words_to_bytes(const std::vector<std::uint32_t>& words) {
  std::string out(words.size() * 4, '\0');
  for (std::size_t i = 0; i < words.size(); ++i)
    for (int b = 0; b < 4; ++b) out[i * 4 + b] = static_cast<char>((words[i] >> (8 * b)) & 0xFF);
  return out;
}

std::vector<std::uint32_t> bytes_to_words(const std::string& bytes, std::size_t offset,
                                          std::size_t count) {
  std::vector<std::uint32_t> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t w = 0;
    for (int b = 0; b < 4; ++b)
      w |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[offset + i * 4 + b])) << (8 * b);
    out[i] = w;
  }
  return out;
}

Op invert(Op op) {
  switch (op) {
    case Op::Beq: return Op::Bne;
    case Op::Bne: return Op::Beq;
    case Op::Blt: return Op::Bge;
    case Op::Bge: return Op::Blt;
    case Op::Bltu: return Op::Bgeu;
    case Op::Bgeu: return Op::Bltu;
    default: throw Error(ErrorCode::InvalidConfig, "not a conditional branch");
  }
}

bool branch_reach(std::int64_t offset) { return offset >= -4096 && offset <= 4094; }

}  // namespace

Builder::Label Builder::new_label() {
  label_pos_.push_back(-1);
  return static_cast<Label>(label_pos_.size() - 1);
}

void Builder::bind(Label label) { label_pos_.at(label) = static_cast<std::int64_t>(instrs_.size()); }

void Builder::emit(const Instruction& instr) {
  instrs_.push_back(instr);
  tags_.push_back(LoadTag::None);
}

void Builder::load(int rd, int base, std::int32_t offset, LoadTag tag) {
  emit(isa::lw(rd, base, offset));
  tags_.back() = tag;
}

void Builder::branch(Op op, int rs1, int rs2, Label target) {
  const std::int64_t pos = label_pos_.at(target);
  if (pos >= 0) {
    const std::int64_t offset = (pos - static_cast<std::int64_t>(instrs_.size())) * 4;
    if (branch_reach(offset)) {
      emit(isa::branch(op, rs1, rs2, static_cast<std::int32_t>(offset)));
    } else {
      emit(isa::branch(invert(op), rs1, rs2, 8));
      emit(isa::jal(0, static_cast<std::int32_t>(offset - 4)));
    }
    return;
  }
  fixups_.push_back({instrs_.size(), target});
  emit(isa::branch(op, rs1, rs2, 0));
}

void Builder::jump(Label target) {
  fixups_.push_back({instrs_.size(), target});
  emit(isa::jal(0, 0));
}

void Builder::li(int rd, std::int32_t value) {
  if (isa::fits_imm12(value)) {
    emit(isa::i_type(Op::Addi, rd, 0, value));
    return;
  }
  const auto upper = static_cast<std::int32_t>(
      static_cast<std::uint32_t>(static_cast<std::int64_t>(value) + 0x800) & 0xFFFFF000u);
  const auto low = static_cast<std::int32_t>(static_cast<std::uint32_t>(value) -
                                             static_cast<std::uint32_t>(upper));
  emit(isa::lui(rd, upper));
  if (low != 0) emit(isa::i_type(Op::Addi, rd, rd, low));
}

void Builder::addi(int rd, int rs, std::int64_t imm, int scratch) {
  if (imm == 0 && rd == rs) return;
  if (isa::fits_imm12(imm)) {
    emit(isa::i_type(Op::Addi, rd, rs, static_cast<std::int32_t>(imm)));
    return;
  }
  if (imm < INT32_MIN || imm > INT32_MAX)
    throw Error(ErrorCode::InvalidConfig, "immediate " + std::to_string(imm) + " exceeds 32 bits");
  li(scratch, static_cast<std::int32_t>(imm));
  emit(isa::r_type(Op::Add, rd, rs, scratch));
}

void Builder::begin_layer(std::string name, int layer_index, std::uint64_t macs,
                          std::uint64_t effective_macs) {
  if (in_layer_) end_layer();
  markers_.push_back({std::move(name), layer_index, pc(), pc(), macs, effective_macs});
  in_layer_ = true;
}

void Builder::end_layer() {
  if (!in_layer_) return;
  markers_.back().end_pc = pc();
  in_layer_ = false;
}

std::vector<std::uint32_t> Builder::finish() {
  end_layer();
  for (const Fixup& f : fixups_) {
    const std::int64_t pos = label_pos_.at(f.label);
    if (pos < 0) throw Error(ErrorCode::InvalidConfig, "unbound label");
    const std::int64_t offset = (pos - static_cast<std::int64_t>(f.index)) * 4;
    Instruction& in = instrs_[f.index];
    if (in.op != Op::Jal && !branch_reach(offset))
      throw Error(ErrorCode::InvalidConfig, "forward branch out of range");
    in.imm = static_cast<std::int32_t>(offset);
  }
  fixups_.clear();
  std::vector<std::uint32_t> words;
  words.reserve(instrs_.size());
  for (const Instruction& in : instrs_) words.push_back(isa::encode(in));
  return words;
}

void save_program(const Program& program, const std::filesystem::path& stem) {
  nlohmann::json j;
  j["format"] = "marvin-program";
  j["version"] = 1;
  j["entry"] = program.entry;
  j["memory_size"] = program.memory_size;
  j["code_words"] = program.code.size();
  std::vector<std::uint32_t> blob;
  nlohmann::json segs = nlohmann::json::array();
  for (const DataSegment& seg : program.data) {
    segs.push_back({{"address", seg.address}, {"offset", blob.size()}, {"words", seg.words.size()}});
    blob.insert(blob.end(), seg.words.begin(), seg.words.end());
  }
  j["data"] = segs;
  nlohmann::json layers = nlohmann::json::array();
  for (const LayerMarker& m : program.layers) {
    layers.push_back({{"name", m.name},
                      {"layer_index", m.layer_index},
                      {"begin_pc", m.begin_pc},
                      {"end_pc", m.end_pc},
                      {"mac_count", m.mac_count},
                      {"effective_mac_count", m.effective_mac_count}});
  }
  j["layers"] = layers;
  nlohmann::json tags = nlohmann::json::array();
  for (std::size_t i = 0; i < program.load_tags.size(); ++i)
    if (program.load_tags[i] != LoadTag::None)
      tags.push_back({i * 4, static_cast<int>(program.load_tags[i])});
  j["load_tags"] = tags;

  auto with_ext = [&](const char* ext) {
    std::filesystem::path p = stem;
    p += ext;
    return p;
  };
  write_file_atomic(with_ext(".bin"), words_to_bytes(program.code));
  write_file_atomic(with_ext(".data"), words_to_bytes(blob));
  write_file_atomic(with_ext(".json"), j.dump(2) + "\n");
}

Program load_program(const std::filesystem::path& stem) {
  auto with_ext = [&](const char* ext) {
    std::filesystem::path p = stem;
    p += ext;
    return p;
  };
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(with_ext(".json")));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ManifestError, with_ext(".json").string() + ": " + e.what());
  }
  Program p;
  try {
    if (j.at("format").get<std::string>() != "marvin-program")
      throw Error(ErrorCode::ManifestError, "not a program manifest");
    p.entry = j.at("entry").get<std::uint32_t>();
    p.memory_size = j.at("memory_size").get<std::uint32_t>();
    const auto code_words = j.at("code_words").get<std::size_t>();
    const std::string code = read_file(with_ext(".bin"));
    if (code.size() != code_words * 4)
      throw Error(ErrorCode::ManifestError, "code size does not match manifest");
    p.code = bytes_to_words(code, 0, code_words);
    const std::string blob = read_file(with_ext(".data"));
    for (const auto& s : j.at("data")) {
      const auto offset = s.at("offset").get<std::size_t>();
      const auto words = s.at("words").get<std::size_t>();
      if ((offset + words) * 4 > blob.size())
        throw Error(ErrorCode::ManifestError, "data segment exceeds data file");
      p.data.push_back({s.at("address").get<std::uint32_t>(), bytes_to_words(blob, offset * 4, words)});
    }
    for (const auto& l : j.at("layers")) {
      p.layers.push_back({l.at("name").get<std::string>(), l.at("layer_index").get<int>(),
                          l.at("begin_pc").get<std::uint32_t>(), l.at("end_pc").get<std::uint32_t>(),
                          l.at("mac_count").get<std::uint64_t>(),
                          l.at("effective_mac_count").get<std::uint64_t>()});
    }
    if (j.contains("load_tags") && !j["load_tags"].empty()) {
      p.load_tags.assign(p.code.size(), LoadTag::None);
      for (const auto& t : j["load_tags"]) {
        const auto pc = t.at(0).get<std::size_t>();
        const int tag = t.at(1).get<int>();
        if (pc % 4 != 0 || pc / 4 >= p.code.size() || tag < 0 || tag > 2)
          throw Error(ErrorCode::ManifestError, "bad load tag entry");
        p.load_tags[pc / 4] = static_cast<LoadTag>(tag);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ManifestError, with_ext(".json").string() + ": " + e.what());
  }
  return p;
}

}  // namespace marvin::sim
