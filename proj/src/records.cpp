#include "marvin/records.hpp"

#include <bit>
#include <cstring>
#include <string>

#include "marvin/error.hpp"
#include "marvin/fileio.hpp"

namespace marvin {

namespace {

constexpr std::uint8_t kVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  std::uint8_t u8() {
    need(1);
    return b_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  bool done() const { return pos_ == b_.size(); }
  std::size_t remaining() const { return b_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n)
      throw Error(ErrorCode::ParseError, "weight file truncated at byte " + std::to_string(pos_));
  }
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint32_t float_bits(float f) { return std::bit_cast<std::uint32_t>(f); }
float bits_float(std::uint32_t w) { return std::bit_cast<float>(w); }

std::vector<std::uint8_t> encode_records(std::span<const TensorRecord> records) {
  std::vector<std::uint8_t> out = {'M', 'R', 'V', 'W', kVersion};
  put_u32(out, static_cast<std::uint32_t>(records.size()));
  for (const auto& r : records) {
    if (r.shape.size() > 255) throw Error(ErrorCode::ShapeError, "tensor rank too large");
    put_u32(out, r.layer);
    out.push_back(r.role);
    out.push_back(r.type);
    out.push_back(r.lane_width);
    out.push_back(static_cast<std::uint8_t>(r.scale_shift));
    out.push_back(static_cast<std::uint8_t>(r.shape.size()));
    for (auto d : r.shape) put_u32(out, d);
    put_u32(out, static_cast<std::uint32_t>(r.words.size()));
    for (auto w : r.words) put_u32(out, w);
  }
  return out;
}

std::vector<TensorRecord> decode_records(std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  if (bytes.size() < 5 || std::memcmp(bytes.data(), "MRVW", 4) != 0)
    throw Error(ErrorCode::ParseError, "not an MRVW weight file");
  for (int i = 0; i < 4; ++i) in.u8();
  const std::uint8_t version = in.u8();
  if (version != kVersion) throw Error(ErrorCode::ParseError, "unsupported MRVW version " + std::to_string(version));
  const std::uint32_t n = in.u32();
  std::vector<TensorRecord> out;
  for (std::uint32_t k = 0; k < n; ++k) {
    TensorRecord r;
    r.layer = in.u32();
    const std::uint8_t role = in.u8(), type = in.u8();
    if (role > TensorRecord::Bias || type > TensorRecord::Float32)
      throw Error(ErrorCode::ParseError, "record " + std::to_string(k) + ": bad role/type");
    r.role = static_cast<TensorRecord::Role>(role);
    r.type = static_cast<TensorRecord::Type>(type);
    r.lane_width = in.u8();
    r.scale_shift = static_cast<std::int8_t>(in.u8());
    const std::uint8_t rank = in.u8();
    for (int d = 0; d < rank; ++d) r.shape.push_back(in.u32());
    const std::uint32_t words = in.u32();
    if (words > in.remaining() / 4) throw Error(ErrorCode::ParseError, "record " + std::to_string(k) + " truncated");
    r.words.reserve(words);
    for (std::uint32_t i = 0; i < words; ++i) r.words.push_back(in.u32());
    out.push_back(std::move(r));
  }
  if (!in.done()) throw Error(ErrorCode::ParseError, "trailing bytes after the last record");
  return out;
}

void write_records(std::span<const TensorRecord> records, const std::filesystem::path& path) {
  const auto bytes = encode_records(records);
  write_file_atomic(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

std::vector<TensorRecord> read_records(const std::filesystem::path& path) {
  const std::string s = read_file(path);
  return decode_records(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

}  // namespace marvin
