#include <algorithm>

#include "marvin/error.hpp"
#include "marvin/kernels.hpp"
#include "marvin/layers_internal.hpp"

namespace marvin::kernels {

using isa::Op;
using sim::Builder;
using sim::LoadTag;

namespace {

// Register map shared by all generators.
constexpr int kOut = 1;
constexpr int kWBase = 2;
constexpr int kWin = 3;
constexpr int kBias = 4;
constexpr int kAcc0 = 5;  // 5..8
constexpr int kAct0 = 9;  // 9..12, window registers of avgpool go up to 17
constexpr int kWgt = 13;
constexpr int kTmp = 14;
constexpr int kPa = 15;
constexpr int kPw = 16;
constexpr int kEnd = 17;
constexpr int kHo = 18;
constexpr int kWo = 19;
constexpr int kKh = 20;
constexpr int kKw = 21;
constexpr int kCi = 22;
constexpr int kCo = 23;
constexpr int kT = 24;
constexpr int kR = 25;
constexpr int kScratch = 26;
constexpr int kQmax = 27;
constexpr int kOutWord = 28;
constexpr int kMaskA = 29;
constexpr int kMaskB = 30;
constexpr int kAux = 31;

constexpr int kMaxWindowRegs = 9;

[[noreturn]] void shape_error(const std::string& m) { throw Error(ErrorCode::ShapeError, m); }
[[noreturn]] void config_error(const std::string& m) { throw Error(ErrorCode::ConfigError, m); }

std::int32_t imm32(std::int64_t v) {
  if (v < INT32_MIN || v > INT32_MAX) shape_error("address arithmetic exceeds 32 bits");
  return static_cast<std::int32_t>(v);
}

void add_imm(Builder& b, int rd, int rs, std::int64_t imm) { b.addi(rd, rs, imm, kScratch); }

void load(Builder& b, int rd, int base, std::int64_t off, LoadTag tag) {
  if (isa::fits_imm12(off)) {
    b.load(rd, base, static_cast<std::int32_t>(off), tag);
    return;
  }
  add_imm(b, kScratch, base, off);
  b.load(rd, kScratch, 0, tag);
}

void store(Builder& b, int src, int base, std::int64_t off) {
  if (isa::fits_imm12(off)) {
    b.emit(isa::sw(src, base, static_cast<std::int32_t>(off)));
    return;
  }
  add_imm(b, kScratch, base, off);
  b.emit(isa::sw(src, kScratch, 0));
}

void alu(Builder& b, Op op, int rd, int rs1, int rs2) { b.emit(isa::r_type(op, rd, rs1, rs2)); }
void alui(Builder& b, Op op, int rd, int rs1, int imm) { b.emit(isa::i_type(op, rd, rs1, imm)); }

/// kT = min(max(v, 0), kQmax) where v rounds `acc` by `shift` (half away from
/// zero coincides with half up once negatives clamp to zero).
void emit_requantize(Builder& b, int acc, int shift) {
  if (shift > 0) {
    alui(b, Op::Srai, kT, acc, shift);
    alui(b, Op::Srai, kR, acc, shift - 1);
    alui(b, Op::Andi, kR, kR, 1);
    alu(b, Op::Add, kT, kT, kR);
  } else {
    alui(b, Op::Addi, kT, acc, 0);
  }
  const auto non_negative = b.new_label();
  b.branch(Op::Bge, kT, 0, non_negative);
  alui(b, Op::Addi, kT, 0, 0);
  b.bind(non_negative);
  const auto in_range = b.new_label();
  b.branch(Op::Bge, kQmax, kT, in_range);
  alui(b, Op::Addi, kT, kQmax, 0);
  b.bind(in_range);
}

void emit_qmax(Builder& b, int bits) { b.li(kQmax, (1 << bits) - 1); }

/// Collects lane values of consecutive channels into output words held in
/// kOutWord and stores each word once it is complete.
class OutPacker {
 public:
  OutPacker(Builder& b, int bits) : b_(b), bits_(bits), lanes_(32 / bits) {}

  void put(int channel, int value_reg) {
    const int word = channel / lanes_;
    const int lane = channel % lanes_;
    if (word != cur_) {
      flush();
      cur_ = word;
      if (lane == 0) alui(b_, Op::Addi, kOutWord, value_reg, 0);
      else alui(b_, Op::Slli, kOutWord, value_reg, lane * bits_);
      return;
    }
    alui(b_, Op::Slli, value_reg, value_reg, lane * bits_);
    alu(b_, Op::Or, kOutWord, kOutWord, value_reg);
  }

  void flush() {
    if (cur_ >= 0) store(b_, kOutWord, kOut, cur_ * 4);
    cur_ = -1;
  }

 private:
  Builder& b_;
  int bits_;
  int lanes_;
  int cur_ = -1;
};

int input_offset(const LayerSpec& L, const TensorLayout& in) {
  const int off = in.pad - L.pad;
  if (off < 0) shape_error("input buffer border is smaller than the layer padding");
  return off;
}

void check_tensor(const TensorLayout& t, int c, int h, int w, Variant v, const char* what) {
  if (t.c != c || t.h != h || t.w != w) shape_error(std::string(what) + " buffer does not match the layer shape");
  if (t.variant != v) config_error(std::string(what) + " buffer layout does not match the kernel variant");
}

// ---------------------------------------------------------------------------
// Scalar 32-bit baseline kernels (CHW, one element per word).

void emit_scalar_mac_row(Builder& b) {
  const auto top = b.new_label();
  b.bind(top);
  b.load(kWgt, kPw, 0, LoadTag::Weight);
  b.load(kAct0, kPa, 0, LoadTag::Activation);
  alu(b, Op::Mul, kTmp, kWgt, kAct0);
  alu(b, Op::Add, kAcc0, kAcc0, kTmp);
  alui(b, Op::Addi, kPw, kPw, 4);
  alui(b, Op::Addi, kPa, kPa, 4);
  b.branch(Op::Bne, kPa, kEnd, top);
}

void emit_scalar_store(Builder& b, const LayerParams& P, const Epilogue& epi) {
  if (epi.raw) {
    b.emit(isa::sw(kAcc0, kOut, 0));
  } else {
    emit_requantize(b, kAcc0, P.shift);
    b.emit(isa::sw(kT, kOut, 0));
  }
  alui(b, Op::Addi, kOut, kOut, 4);
}

void emit_conv_baseline(Builder& b, const LayerSpec& L, const LayerParams& P, const LayerBinding& bind,
                        const Epilogue& epi) {
  const TensorLayout& in = bind.in;
  const TensorLayout& out = bind.out;
  const int off = input_offset(L, in);
  const int hp = in.hp(), wp = in.wp();
  const int ho = L.out_h(), wo = L.out_w(), s = L.stride;
  const int kh = L.kernel_h, kw = L.kernel_w, ci = L.in_c;
  const bool depthwise = L.kind == LayerKind::DepthwiseConv2d;
  const int reduce_c = depthwise ? 1 : ci;
  // Whole padded planes as the window: the reduction is one contiguous run.
  const bool contiguous = !depthwise && kh == hp && kw == wp;

  b.li(kWBase, imm32(bind.weight_addr));
  b.li(kBias, imm32(bind.bias_addr));
  b.li(kOut, imm32(out.scalar_addr(0, out.pad, out.pad)));
  b.li(kAux, imm32(in.scalar_addr(0, off, off)));
  if (!epi.raw) emit_qmax(b, epi.out_bits);

  b.loop(kCo, L.out_c, [&] {
    alui(b, Op::Addi, kWin, kAux, 0);
    b.loop(kHo, ho, [&] {
      b.loop(kWo, wo, [&] {
        b.emit(isa::lw(kAcc0, kBias, 0));
        alui(b, Op::Addi, kPw, kWBase, 0);
        alui(b, Op::Addi, kPa, kWin, 0);
        if (contiguous) {
          add_imm(b, kEnd, kPa, static_cast<std::int64_t>(ci) * kh * kw * 4);
          emit_scalar_mac_row(b);
        } else {
          b.loop(kCi, reduce_c, [&] {
            b.loop(kKh, kh, [&] {
              add_imm(b, kEnd, kPa, kw * 4);
              emit_scalar_mac_row(b);
              add_imm(b, kPa, kPa, static_cast<std::int64_t>(wp - kw) * 4);
            });
            add_imm(b, kPa, kPa, static_cast<std::int64_t>(hp - kh) * wp * 4);
          });
        }
        emit_scalar_store(b, P, epi);
        alui(b, Op::Addi, kWin, kWin, s * 4);
      });
      add_imm(b, kWin, kWin, static_cast<std::int64_t>(s * wp - wo * s) * 4);
      add_imm(b, kOut, kOut, static_cast<std::int64_t>(2 * out.pad) * 4);
    });
    add_imm(b, kWBase, kWBase, static_cast<std::int64_t>(reduce_c) * kh * kw * 4);
    alui(b, Op::Addi, kBias, kBias, 4);
    add_imm(b, kOut, kOut, static_cast<std::int64_t>(out.hp() - ho) * out.wp() * 4);
    // Depthwise: the next output channel reads the next input plane.
    if (depthwise) add_imm(b, kAux, kAux, static_cast<std::int64_t>(hp) * wp * 4);
  });
}

void emit_pool_baseline(Builder& b, const LayerSpec& L, const LayerBinding& bind, int bits) {
  const TensorLayout& in = bind.in;
  const TensorLayout& out = bind.out;
  const int off = input_offset(L, in);
  const int hp = in.hp(), wp = in.wp();
  const int ho = L.out_h(), wo = L.out_w(), s = L.stride;
  const bool avg = L.kind == LayerKind::AvgPool;

  b.li(kOut, imm32(out.scalar_addr(0, out.pad, out.pad)));
  b.li(kAux, imm32(in.scalar_addr(0, off, off)));
  if (avg) {
    emit_qmax(b, bits);
    b.li(kMaskA, avgpool_multiplier(L.kernel_h * L.kernel_w));
    b.li(kMaskB, 1 << 15);
  }
  b.loop(kCo, L.in_c, [&] {
    alui(b, Op::Addi, kWin, kAux, 0);
    b.loop(kHo, ho, [&] {
      b.loop(kWo, wo, [&] {
        bool first = true;
        for (int ky = 0; ky < L.kernel_h; ++ky)
          for (int kx = 0; kx < L.kernel_w; ++kx) {
            const std::int64_t o = (static_cast<std::int64_t>(ky) * wp + kx) * 4;
            if (first) {
              load(b, kT, kWin, o, LoadTag::Activation);
              first = false;
              continue;
            }
            load(b, kR, kWin, o, LoadTag::Activation);
            if (avg) {
              alu(b, Op::Add, kT, kT, kR);
            } else {
              const auto keep = b.new_label();
              b.branch(Op::Bge, kT, kR, keep);
              alui(b, Op::Addi, kT, kR, 0);
              b.bind(keep);
            }
          }
        if (avg) {
          alu(b, Op::Mul, kT, kT, kMaskA);
          alu(b, Op::Add, kT, kT, kMaskB);
          alui(b, Op::Srai, kT, kT, 16);
          const auto in_range = b.new_label();
          b.branch(Op::Bge, kQmax, kT, in_range);
          alui(b, Op::Addi, kT, kQmax, 0);
          b.bind(in_range);
        }
        b.emit(isa::sw(kT, kOut, 0));
        alui(b, Op::Addi, kOut, kOut, 4);
        alui(b, Op::Addi, kWin, kWin, s * 4);
      });
      add_imm(b, kWin, kWin, static_cast<std::int64_t>(s * wp - wo * s) * 4);
      add_imm(b, kOut, kOut, static_cast<std::int64_t>(2 * out.pad) * 4);
    });
    add_imm(b, kAux, kAux, static_cast<std::int64_t>(hp) * wp * 4);
    add_imm(b, kOut, kOut, static_cast<std::int64_t>(out.hp() - ho) * out.wp() * 4);
  });
}

void emit_residual_baseline(Builder& b, const LayerSpec& L, const LayerParams& P, const LayerBinding& bind,
                            const Epilogue& epi) {
  const TensorLayout& x = bind.in;
  const TensorLayout& y = bind.rhs;
  const TensorLayout& out = bind.out;
  b.li(kPa, imm32(x.scalar_addr(0, x.pad, x.pad)));
  b.li(kPw, imm32(y.scalar_addr(0, y.pad, y.pad)));
  b.li(kOut, imm32(out.scalar_addr(0, out.pad, out.pad)));
  if (!epi.raw) emit_qmax(b, epi.out_bits);
  b.loop(kCo, L.in_c, [&] {
    b.loop(kHo, L.in_h, [&] {
      b.loop(kWo, L.in_w, [&] {
        b.load(kAct0, kPa, 0, LoadTag::Activation);
        b.load(kAct0 + 1, kPw, 0, LoadTag::Activation);
        if (P.lhs_shift) alui(b, Op::Slli, kAct0, kAct0, P.lhs_shift);
        if (P.rhs_shift) alui(b, Op::Slli, kAct0 + 1, kAct0 + 1, P.rhs_shift);
        alu(b, Op::Add, kAcc0, kAct0, kAct0 + 1);
        emit_scalar_store(b, P, epi);
        alui(b, Op::Addi, kPa, kPa, 4);
        alui(b, Op::Addi, kPw, kPw, 4);
      });
      add_imm(b, kPa, kPa, 2 * x.pad * 4);
      add_imm(b, kPw, kPw, 2 * y.pad * 4);
      add_imm(b, kOut, kOut, 2 * out.pad * 4);
    });
    add_imm(b, kPa, kPa, static_cast<std::int64_t>(2 * x.pad) * x.wp() * 4);
    add_imm(b, kPw, kPw, static_cast<std::int64_t>(2 * y.pad) * y.wp() * 4);
    add_imm(b, kOut, kOut, static_cast<std::int64_t>(2 * out.pad) * out.wp() * 4);
  });
}

// ---------------------------------------------------------------------------
// Packed kernels (HWC, channel lanes packed, output-stationary).

/// Walks output pixels of a packed layer: kWin at the input window origin,
/// kOut at the output pixel.
template <class Body>
void packed_pixel_loops(Builder& b, const LayerSpec& L, const TensorLayout& in, const TensorLayout& out,
                        Body&& body) {
  const int off = input_offset(L, in);
  const int wp = in.wp();
  const int ho = L.out_h(), wo = L.out_w(), s = L.stride;
  b.li(kWin, imm32(in.pixel_addr(off, off)));
  b.li(kOut, imm32(out.pixel_addr(out.pad, out.pad)));
  b.loop(kHo, ho, [&] {
    b.loop(kWo, wo, [&] {
      body();
      add_imm(b, kOut, kOut, static_cast<std::int64_t>(out.words_per_pixel) * 4);
      add_imm(b, kWin, kWin, static_cast<std::int64_t>(s) * in.words_per_pixel * 4);
    });
    add_imm(b, kWin, kWin, static_cast<std::int64_t>(s * wp - wo * s) * in.words_per_pixel * 4);
    add_imm(b, kOut, kOut, static_cast<std::int64_t>(2 * out.pad) * out.words_per_pixel * 4);
  });
}

/// Kernel-window loops over (kh, kw) with kPa/kPw advanced per position.
template <class Body>
void packed_window_loops(Builder& b, const LayerSpec& L, const TensorLayout& in, std::int64_t weight_step,
                         Body&& body) {
  const int kh = L.kernel_h, kw = L.kernel_w;
  const std::int64_t pix = static_cast<std::int64_t>(in.words_per_pixel) * 4;
  b.loop(kKh, kh, [&] {
    b.loop(kKw, kw, [&] {
      body();
      if (kh * kw > 1) {
        add_imm(b, kPa, kPa, pix);
        add_imm(b, kPw, kPw, weight_step);
      }
    });
    if (kh > 1) add_imm(b, kPa, kPa, static_cast<std::int64_t>(in.wp() - kw) * pix);
  });
}

void emit_block_epilogue(Builder& b, const std::vector<int>& blk, const LayerParams& P, const Epilogue& epi,
                         OutPacker& packer) {
  for (std::size_t i = 0; i < blk.size(); ++i) {
    const int acc = kAcc0 + static_cast<int>(i);
    if (epi.raw) {
      store(b, acc, kOut, static_cast<std::int64_t>(blk[i]) * 4);
      continue;
    }
    emit_requantize(b, acc, P.shift);
    packer.put(blk[i], kT);
  }
}

/// Single-channel input in row lanes: one activation word and one weight word
/// per output channel cover a whole kernel row.
void emit_conv_row_lanes(Builder& b, const LayerSpec& L, const LayerParams& P, const PrecisionConfig& cfg,
                         const LayerBinding& bind, const Epilogue& epi) {
  const TensorLayout& in = bind.in;
  const TensorLayout& out = bind.out;
  if (!row_lane_eligible(L, cfg)) config_error("layer cannot use row lanes under " + cfg.name());
  if (in.bits != cfg.activation_bits) config_error("input lanes do not match " + cfg.name());
  const auto blocks = channel_blocks(P, L.out_c, false);
  std::vector<std::uint32_t> block_addr;
  std::uint32_t addr = bind.weight_addr;
  for (const auto& blk : blocks) {
    block_addr.push_back(addr);
    addr += static_cast<std::uint32_t>(L.kernel_h * blk.size() * 4);
  }

  b.li(kBias, imm32(bind.bias_addr));
  if (!epi.raw) emit_qmax(b, epi.out_bits);
  packed_pixel_loops(b, L, in, out, [&] {
    OutPacker packer(b, epi.raw ? 32 : epi.out_bits);
    for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
      const auto& blk = blocks[bi];
      const int nb = static_cast<int>(blk.size());
      for (int i = 0; i < nb; ++i) load(b, kAcc0 + i, kBias, static_cast<std::int64_t>(blk[i]) * 4, LoadTag::None);
      b.li(kPw, imm32(block_addr[bi]));
      alui(b, Op::Addi, kPa, kWin, 0);
      b.loop(kKh, L.kernel_h, [&] {
        load(b, kAct0, kPa, 0, LoadTag::Activation);
        for (int i = 0; i < nb; ++i) {
          load(b, kWgt, kPw, static_cast<std::int64_t>(i) * 4, LoadTag::Weight);
          b.emit(isa::nn_mac(cfg, kAcc0 + i, kAct0, kWgt));
        }
        if (L.kernel_h > 1) {
          add_imm(b, kPa, kPa, static_cast<std::int64_t>(in.wp()) * 4);
          add_imm(b, kPw, kPw, static_cast<std::int64_t>(nb) * 4);
        }
      });
      emit_block_epilogue(b, blk, P, epi, packer);
    }
    packer.flush();
  });
}

void emit_conv_packed(Builder& b, const LayerSpec& L, const LayerParams& P, const PrecisionConfig& cfg,
                      const LayerBinding& bind, const Epilogue& epi) {
  if (bind.in.row_lanes) {
    emit_conv_row_lanes(b, L, P, cfg, bind, epi);
    return;
  }
  const TensorLayout& in = bind.in;
  const TensorLayout& out = bind.out;
  const PackedGeometry g = packed_geometry(cfg);
  const int groups = (L.in_c + g.group - 1) / g.group;
  if (in.bits != cfg.activation_bits) config_error("input lanes do not match " + cfg.name());
  if (in.words_per_pixel < groups * g.act_words) shape_error("input buffer has too few words per pixel");
  const auto blocks = channel_blocks(P, L.out_c, false);
  const std::int64_t window = static_cast<std::int64_t>(L.kernel_h) * L.kernel_w;

  std::vector<std::uint32_t> block_addr;
  std::uint32_t addr = bind.weight_addr;
  for (const auto& blk : blocks) {
    block_addr.push_back(addr);
    addr += static_cast<std::uint32_t>(window * groups * blk.size() * g.weight_words * 4);
  }

  b.li(kBias, imm32(bind.bias_addr));
  if (!epi.raw) emit_qmax(b, epi.out_bits);
  packed_pixel_loops(b, L, in, out, [&] {
    OutPacker packer(b, epi.raw ? 32 : epi.out_bits);
    for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
      const auto& blk = blocks[bi];
      const int nb = static_cast<int>(blk.size());
      for (int i = 0; i < nb; ++i) load(b, kAcc0 + i, kBias, static_cast<std::int64_t>(blk[i]) * 4, LoadTag::None);
      b.li(kPw, imm32(block_addr[bi]));
      alui(b, Op::Addi, kPa, kWin, 0);
      const std::int64_t step = static_cast<std::int64_t>(groups) * nb * g.weight_words * 4;
      packed_window_loops(b, L, in, step, [&] {
        for (int gi = 0; gi < groups; ++gi) {
          const std::int64_t act_off = static_cast<std::int64_t>(gi) * g.act_words * 4;
          if (g.act_words > 1) {
            // Narrow weight lanes: several activation words per weight word.
            for (int j = 0; j < g.act_words; ++j) load(b, kAct0 + j, kPa, act_off + j * 4, LoadTag::Activation);
            for (int i = 0; i < nb; ++i) {
              load(b, kWgt, kPw, (static_cast<std::int64_t>(gi) * nb + i) * 4, LoadTag::Weight);
              for (int j = 0; j < g.act_words; ++j) {
                int w = kWgt;
                if (j > 0) {
                  alui(b, Op::Srli, kTmp, kWgt, j * g.p * cfg.weight_bits);
                  w = kTmp;
                }
                b.emit(isa::nn_mac(cfg, kAcc0 + i, kAct0 + j, w));
              }
            }
          } else {
            load(b, kAct0, kPa, act_off, LoadTag::Activation);
            for (int u = 1; u < g.weight_words; ++u)
              alui(b, Op::Srli, kAct0 + u, kAct0, u * g.p * cfg.activation_bits);
            for (int i = 0; i < nb; ++i)
              for (int u = 0; u < g.weight_words; ++u) {
                const std::int64_t w_off = ((static_cast<std::int64_t>(gi) * nb + i) * g.weight_words + u) * 4;
                load(b, kWgt, kPw, w_off, LoadTag::Weight);
                b.emit(isa::nn_mac(cfg, kAcc0 + i, kAct0 + u, kWgt));
              }
          }
        }
      });
      emit_block_epilogue(b, blk, P, epi, packer);
    }
    packer.flush();
  });
}

void emit_depthwise_packed(Builder& b, const LayerSpec& L, const LayerParams& P, const PrecisionConfig& cfg,
                           const LayerBinding& bind, const Epilogue& epi) {
  const TensorLayout& in = bind.in;
  const TensorLayout& out = bind.out;
  if (in.bits != cfg.activation_bits) config_error("input lanes do not match " + cfg.name());
  const int la = cfg.activation_lanes();
  const int p = cfg.products();
  const auto blocks = channel_blocks(P, L.in_c, true);
  const std::int64_t window = static_cast<std::int64_t>(L.kernel_h) * L.kernel_w;
  std::vector<std::uint32_t> block_addr;
  std::uint32_t addr = bind.weight_addr;
  for (const auto& blk : blocks) {
    block_addr.push_back(addr);
    addr += static_cast<std::uint32_t>(window * blk.size() * 4);
  }

  b.li(kBias, imm32(bind.bias_addr));
  if (!epi.raw) emit_qmax(b, epi.out_bits);
  packed_pixel_loops(b, L, in, out, [&] {
    OutPacker packer(b, epi.raw ? 32 : epi.out_bits);
    for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
      const auto& blk = blocks[bi];
      const int nb = static_cast<int>(blk.size());
      const int c0 = blk[0] & ~3;
      const int word = c0 / la;
      const int shift = ((c0 % la) / p) * p * cfg.activation_bits;
      for (int i = 0; i < nb; ++i) load(b, kAcc0 + i, kBias, static_cast<std::int64_t>(blk[i]) * 4, LoadTag::None);
      b.li(kPw, imm32(block_addr[bi]));
      add_imm(b, kPa, kWin, static_cast<std::int64_t>(word) * 4);
      packed_window_loops(b, L, in, static_cast<std::int64_t>(nb) * 4, [&] {
        b.load(kAct0, kPa, 0, LoadTag::Activation);
        if (shift) alui(b, Op::Srli, kAct0, kAct0, shift);
        for (int i = 0; i < nb; ++i) {
          b.load(kWgt, kPw, i * 4, LoadTag::Weight);
          b.emit(isa::nn_mac(cfg, kAcc0 + i, kAct0, kWgt));
        }
      });
      emit_block_epilogue(b, blk, P, epi, packer);
    }
    packer.flush();
  });
}

/// SWAR lane-wise unsigned max of kT and kR into kT. Even and odd lanes are
/// handled separately so every lane has a spare guard bit above it.
void emit_swar_max(Builder& b, int bits) {
  auto half = [&](int x, int y, int result) {
    // x, y: lanes in the even positions, guard bits clear.
    alu(b, Op::Or, kTmp, x, kMaskB);
    alu(b, Op::Sub, kTmp, kTmp, y);
    alu(b, Op::And, kTmp, kTmp, kMaskB);
    alui(b, Op::Srli, kTmp, kTmp, bits);
    alui(b, Op::Slli, kEnd, kTmp, bits);
    alu(b, Op::Sub, kEnd, kEnd, kTmp);  // all-ones lanes where x >= y
    alu(b, Op::Xor, result, x, y);
    alu(b, Op::And, result, result, kEnd);
    alu(b, Op::Xor, result, result, y);
  };
  alu(b, Op::And, kAct0, kT, kMaskA);
  alu(b, Op::And, kAct0 + 1, kR, kMaskA);
  half(kAct0, kAct0 + 1, kAct0 + 2);
  alui(b, Op::Srli, kAct0, kT, bits);
  alu(b, Op::And, kAct0, kAct0, kMaskA);
  alui(b, Op::Srli, kAct0 + 1, kR, bits);
  alu(b, Op::And, kAct0 + 1, kAct0 + 1, kMaskA);
  half(kAct0, kAct0 + 1, kAct0 + 3);
  alui(b, Op::Slli, kAct0 + 3, kAct0 + 3, bits);
  alu(b, Op::Or, kT, kAct0 + 2, kAct0 + 3);
}

std::uint32_t even_lane_mask(int bits) {
  std::uint32_t m = 0;
  for (int k = 0; k < 32 / bits; k += 2) m |= ((1u << bits) - 1u) << (k * bits);
  return m;
}

std::uint32_t guard_mask(int bits) {
  std::uint32_t m = 0;
  for (int k = 0; k < 32 / bits; k += 2) m |= 1u << ((k + 1) * bits);
  return m;
}

void emit_pool_packed(Builder& b, const LayerSpec& L, const LayerBinding& bind) {
  const TensorLayout& in = bind.in;
  const TensorLayout& out = bind.out;
  const int bits = in.bits;
  if (bits == 32 || out.bits != bits) config_error("packed pooling keeps the input lane width");
  const int lanes = 32 / bits;
  const int words = (L.in_c + lanes - 1) / lanes;
  if (in.words_per_pixel < words || out.words_per_pixel < words) shape_error("pool buffers too narrow");
  const int wp = in.wp();
  const int window = L.kernel_h * L.kernel_w;
  auto elem_off = [&](int e, int j) {
    const int ky = e / L.kernel_w, kx = e % L.kernel_w;
    return ((static_cast<std::int64_t>(ky) * wp + kx) * in.words_per_pixel + j) * 4;
  };

  if (L.kind == LayerKind::MaxPool) {
    b.li(kMaskA, static_cast<std::int32_t>(even_lane_mask(bits)));
    b.li(kMaskB, static_cast<std::int32_t>(guard_mask(bits)));
    packed_pixel_loops(b, L, in, out, [&] {
      for (int j = 0; j < words; ++j) {
        load(b, kT, kWin, elem_off(0, j), LoadTag::Activation);
        for (int e = 1; e < window; ++e) {
          load(b, kR, kWin, elem_off(e, j), LoadTag::Activation);
          emit_swar_max(b, bits);
        }
        store(b, kT, kOut, j * 4);
      }
    });
    return;
  }

  emit_qmax(b, bits);
  b.li(kMaskA, avgpool_multiplier(window));
  b.li(kMaskB, 1 << 15);
  const bool in_regs = window <= kMaxWindowRegs;
  const std::int32_t lane_mask = (1 << bits) - 1;
  packed_pixel_loops(b, L, in, out, [&] {
    OutPacker packer(b, bits);
    for (int j = 0; j < words; ++j) {
      if (in_regs)
        for (int e = 0; e < window; ++e) load(b, kAct0 + e, kWin, elem_off(e, j), LoadTag::Activation);
      for (int k = 0; k < lanes && j * lanes + k < L.in_c; ++k) {
        for (int e = 0; e < window; ++e) {
          int src = kAct0 + e;
          if (!in_regs) {
            load(b, kR, kWin, elem_off(e, j), LoadTag::Activation);
            src = kR;
          }
          const int dst = e == 0 ? kT : kAux;
          if (k == 0) {
            alui(b, Op::Andi, dst, src, lane_mask);
          } else {
            alui(b, Op::Srli, dst, src, k * bits);
            if (k + 1 < lanes) alui(b, Op::Andi, dst, dst, lane_mask);
          }
          if (e > 0) alu(b, Op::Add, kT, kT, kAux);
        }
        alu(b, Op::Mul, kT, kT, kMaskA);
        alu(b, Op::Add, kT, kT, kMaskB);
        alui(b, Op::Srai, kT, kT, 16);
        const auto in_range = b.new_label();
        b.branch(Op::Bge, kQmax, kT, in_range);
        alui(b, Op::Addi, kT, kQmax, 0);
        b.bind(in_range);
        packer.put(j * lanes + k, kT);
      }
    }
    packer.flush();
  });
}

void emit_residual_packed(Builder& b, const LayerSpec& L, const LayerParams& P, const LayerBinding& bind,
                          const Epilogue& epi) {
  const TensorLayout& x = bind.in;
  const TensorLayout& y = bind.rhs;
  const TensorLayout& out = bind.out;
  if (x.bits == 32 || y.bits == 32) config_error("packed residual inputs must be lane-packed");
  b.li(kWin, imm32(x.pixel_addr(x.pad, x.pad)));
  b.li(kAux, imm32(y.pixel_addr(y.pad, y.pad)));
  b.li(kOut, imm32(out.pixel_addr(out.pad, out.pad)));
  if (!epi.raw) emit_qmax(b, epi.out_bits);
  auto extract = [&](int src, int dst, const TensorLayout& t, int c, int lshift) {
    const int lane = c % t.lanes();
    if (lane == 0) {
      alui(b, Op::Andi, dst, src, (1 << t.bits) - 1);
    } else {
      alui(b, Op::Srli, dst, src, lane * t.bits);
      if (lane + 1 < t.lanes()) alui(b, Op::Andi, dst, dst, (1 << t.bits) - 1);
    }
    if (lshift) alui(b, Op::Slli, dst, dst, lshift);
  };
  b.loop(kHo, L.in_h, [&] {
    b.loop(kWo, L.in_w, [&] {
      OutPacker packer(b, epi.raw ? 32 : epi.out_bits);
      int x_word = -1, y_word = -1;
      for (int c = 0; c < L.in_c; ++c) {
        const int xw = c / x.lanes(), yw = c / y.lanes();
        if (xw != x_word) {
          load(b, kAct0, kWin, xw * 4, LoadTag::Activation);
          x_word = xw;
        }
        if (yw != y_word) {
          load(b, kAct0 + 1, kAux, yw * 4, LoadTag::Activation);
          y_word = yw;
        }
        extract(kAct0, kAct0 + 2, x, c, P.lhs_shift);
        extract(kAct0 + 1, kAct0 + 3, y, c, P.rhs_shift);
        alu(b, Op::Add, kAcc0, kAct0 + 2, kAct0 + 3);
        if (epi.raw) {
          store(b, kAcc0, kOut, static_cast<std::int64_t>(c) * 4);
        } else {
          emit_requantize(b, kAcc0, P.shift);
          packer.put(c, kT);
        }
      }
      packer.flush();
      add_imm(b, kWin, kWin, static_cast<std::int64_t>(x.words_per_pixel) * 4);
      add_imm(b, kAux, kAux, static_cast<std::int64_t>(y.words_per_pixel) * 4);
      add_imm(b, kOut, kOut, static_cast<std::int64_t>(out.words_per_pixel) * 4);
    });
    add_imm(b, kWin, kWin, static_cast<std::int64_t>(2 * x.pad) * x.words_per_pixel * 4);
    add_imm(b, kAux, kAux, static_cast<std::int64_t>(2 * y.pad) * y.words_per_pixel * 4);
    add_imm(b, kOut, kOut, static_cast<std::int64_t>(2 * out.pad) * out.words_per_pixel * 4);
  });
}

std::uint64_t effective_macs(const LayerSpec& L, const LayerParams& P) {
  if (!L.has_weights()) return 0;
  const std::uint64_t active = static_cast<std::uint64_t>(P.active_channels(L.out_c));
  return L.mac_count() / static_cast<std::uint64_t>(L.out_c) * active;
}

}  // namespace

void emit_layer(Builder& b, const LayerSpec& L, const LayerParams& P, Variant variant, const PrecisionConfig& cfg,
                const LayerBinding& bind, const Epilogue& epi) {
  validate_params(L, P);
  if (variant == Variant::Packed && !cfg.valid()) config_error("invalid config " + cfg.name());
  if (!epi.raw && !PrecisionConfig::valid_width(epi.out_bits))
    config_error("output lane width " + std::to_string(epi.out_bits));
  check_tensor(bind.in, L.in_c, L.in_h, L.in_w, variant, "input");
  check_tensor(bind.out, L.out_c, L.out_h(), L.out_w(), variant, "output");
  const bool pool = L.kind == LayerKind::MaxPool || L.kind == LayerKind::AvgPool;
  if (variant == Variant::Packed) {
    const int want_bits = epi.raw ? 32 : pool ? bind.in.bits : epi.out_bits;
    if (bind.out.bits != want_bits) config_error("output buffer lane width does not match the epilogue");
    const int lanes = 32 / want_bits;
    if (bind.out.words_per_pixel * lanes < L.out_c) shape_error("output buffer too narrow");
  }
  if (pool && epi.raw) config_error("pooling layers cannot emit raw accumulators");
  if ((bind.in.row_lanes && (L.kind != LayerKind::Conv2d || variant != Variant::Packed)) || bind.rhs.row_lanes ||
      bind.out.row_lanes)
    config_error("only packed convolutions read row-lane tensors");
  if (L.kind == LayerKind::ResidualAdd) {
    check_tensor(bind.rhs, L.in_c, L.in_h, L.in_w, variant, "residual");
  }

  switch (L.kind) {
    case LayerKind::Conv2d:
    case LayerKind::Dense:
      if (variant == Variant::Baseline) emit_conv_baseline(b, L, P, bind, epi);
      else emit_conv_packed(b, L, P, cfg, bind, epi);
      break;
    case LayerKind::DepthwiseConv2d:
      if (variant == Variant::Baseline) emit_conv_baseline(b, L, P, bind, epi);
      else emit_depthwise_packed(b, L, P, cfg, bind, epi);
      break;
    case LayerKind::MaxPool:
    case LayerKind::AvgPool:
      if (variant == Variant::Baseline) emit_pool_baseline(b, L, bind, epi.out_bits);
      else emit_pool_packed(b, L, bind);
      break;
    case LayerKind::ResidualAdd:
      if (variant == Variant::Baseline) emit_residual_baseline(b, L, P, bind, epi);
      else emit_residual_packed(b, L, P, bind, epi);
      break;
  }
}

namespace {

std::uint32_t align16(std::uint64_t v) {
  const std::uint64_t a = (v + 15) & ~std::uint64_t{15};
  if (a > 0xFFFFFFF0ull) shape_error("program data exceeds the 32-bit address space");
  return static_cast<std::uint32_t>(a);
}

TensorLayout make_layout(Variant v, int c, int h, int w, int pad, int bits, int min_words) {
  TensorLayout t;
  t.variant = v;
  t.c = c;
  t.h = h;
  t.w = w;
  t.pad = pad;
  if (v == Variant::Packed) {
    t.bits = bits;
    t.words_per_pixel = std::max(min_words, (c + t.lanes() - 1) / t.lanes());
  }
  return t;
}

}  // namespace

LayerProgram build_layer_program(const LayerSpec& L, const LayerParams& P, Variant variant,
                                 const PrecisionConfig& cfg, const Epilogue& epi,
                                 std::span<const std::int32_t> input, std::span<const std::int32_t> rhs) {
  validate_params(L, P);
  if (variant == Variant::Packed && !cfg.valid()) config_error("invalid config " + cfg.name());
  const bool pool = L.kind == LayerKind::MaxPool || L.kind == LayerKind::AvgPool;
  const int act_bits = cfg.activation_bits;
  LayerProgram lp;
  LayerBinding& bind = lp.binding;
  const bool row_lanes = variant == Variant::Packed && row_lane_eligible(L, cfg);
  const int in_words = variant == Variant::Packed && !row_lanes ? packed_input_words(L, cfg, act_bits) : 1;
  bind.in = make_layout(variant, L.in_c, L.in_h, L.in_w, L.pad, act_bits, in_words);
  bind.in.row_lanes = row_lanes;
  if (L.kind == LayerKind::ResidualAdd) bind.rhs = make_layout(variant, L.in_c, L.in_h, L.in_w, 0, act_bits, 1);
  const int out_bits = epi.raw ? 32 : pool ? act_bits : epi.out_bits;
  bind.out = make_layout(variant, L.out_c, L.out_h(), L.out_w(), 0, out_bits, epi.raw ? L.out_c : 1);
  Epilogue e = epi;
  if (pool) e = Epilogue{false, variant == Variant::Packed ? act_bits : epi.out_bits};

  const WeightImage img = build_weight_image(L, P, variant, cfg, row_lanes);
  std::uint64_t cursor = 0;
  bind.weight_addr = 0;
  cursor = align16(img.weights.size() * 4);
  bind.bias_addr = static_cast<std::uint32_t>(cursor);
  cursor = align16(cursor + img.bias.size() * 4);
  bind.in.base = static_cast<std::uint32_t>(cursor);
  cursor = align16(cursor + bind.in.byte_size());
  if (L.kind == LayerKind::ResidualAdd) {
    bind.rhs.base = static_cast<std::uint32_t>(cursor);
    cursor = align16(cursor + bind.rhs.byte_size());
  }
  bind.out.base = static_cast<std::uint32_t>(cursor);
  cursor = align16(cursor + bind.out.byte_size());

  sim::Program& prog = lp.program;
  prog.memory_size = static_cast<std::uint32_t>(cursor);
  if (!img.weights.empty()) prog.data.push_back({bind.weight_addr, img.weights});
  if (!img.bias.empty()) prog.data.push_back({bind.bias_addr, img.bias});
  prog.data.push_back({bind.in.base, encode_tensor(bind.in, input)});
  if (L.kind == LayerKind::ResidualAdd) prog.data.push_back({bind.rhs.base, encode_tensor(bind.rhs, rhs)});

  Builder b;
  b.begin_layer(to_string(L.kind), 0, L.mac_count(), effective_macs(L, P));
  emit_layer(b, L, P, variant, cfg, bind, e);
  b.end_layer();
  prog.code = b.finish();
  prog.layers = b.markers();
  prog.load_tags = b.load_tags();
  return lp;
}

std::vector<std::int32_t> read_output(const LayerProgram& lp, const sim::MachineState& state) {
  const TensorLayout& out = lp.binding.out;
  return decode_tensor(out, state.memory.read_words(out.base, out.word_count()));
}

namespace {

void require_kind(const LayerSpec& L, std::initializer_list<LayerKind> kinds, const char* gen) {
  for (LayerKind k : kinds)
    if (L.kind == k) return;
  shape_error(std::string(gen) + " cannot generate a " + to_string(L.kind) + " layer");
}

}  // namespace

LayerProgram gen_conv2d_baseline(const LayerSpec& L, const LayerParams& P, const Epilogue& epi,
                                 std::span<const std::int32_t> input) {
  require_kind(L, {LayerKind::Conv2d, LayerKind::Dense}, "gen_conv2d_baseline");
  return build_layer_program(L, P, Variant::Baseline, {8, 8}, epi, input);
}

LayerProgram gen_conv2d_packed(const LayerSpec& L, const LayerParams& P, const PrecisionConfig& cfg,
                               const Epilogue& epi, std::span<const std::int32_t> input) {
  require_kind(L, {LayerKind::Conv2d, LayerKind::Dense}, "gen_conv2d_packed");
  return build_layer_program(L, P, Variant::Packed, cfg, epi, input);
}

LayerProgram gen_depthwise(const LayerSpec& L, const LayerParams& P, Variant variant, const PrecisionConfig& cfg,
                           const Epilogue& epi, std::span<const std::int32_t> input) {
  require_kind(L, {LayerKind::DepthwiseConv2d}, "gen_depthwise");
  return build_layer_program(L, P, variant, cfg, epi, input);
}

LayerProgram gen_dense(const LayerSpec& L, const LayerParams& P, Variant variant, const PrecisionConfig& cfg,
                       const Epilogue& epi, std::span<const std::int32_t> input) {
  require_kind(L, {LayerKind::Dense}, "gen_dense");
  return build_layer_program(L, P, variant, cfg, epi, input);
}

LayerProgram gen_pool(const LayerSpec& L, Variant variant, const PrecisionConfig& cfg,
                      std::span<const std::int32_t> input) {
  require_kind(L, {LayerKind::MaxPool, LayerKind::AvgPool}, "gen_pool");
  return build_layer_program(L, {}, variant, cfg, Epilogue{false, cfg.activation_bits}, input);
}

LayerProgram gen_residual(const LayerSpec& L, const LayerParams& P, Variant variant, const PrecisionConfig& cfg,
                          const Epilogue& epi, std::span<const std::int32_t> lhs,
                          std::span<const std::int32_t> rhs) {
  require_kind(L, {LayerKind::ResidualAdd}, "gen_residual");
  return build_layer_program(L, P, variant, cfg, epi, lhs, rhs);
}

}  // namespace marvin::kernels
