#include "marvin/network.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <json.hpp>

#include "marvin/error.hpp"
#include "marvin/fileio.hpp"
#include "marvin/records.hpp"

namespace marvin::net {

using kernels::Activation;
using kernels::LayerKind;
using json = nlohmann::json;

namespace {

[[noreturn]] void shape_error(const std::string& msg) { throw Error(ErrorCode::ShapeError, msg); }

constexpr std::uint8_t kDatasetVersion = 1;

}  // namespace

// Datasets

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.height = height;
  out.width = width;
  out.classes = classes;
  out.pixels.reserve(indices.size() * image_size());
  for (std::size_t i : indices) {
    const auto img = image(i);
    out.pixels.insert(out.pixels.end(), img.begin(), img.end());
    out.labels.push_back(labels[i]);
  }
  return out;
}

std::vector<std::uint8_t> encode_dataset(const Dataset& d) {
  std::vector<std::uint8_t> out = {'M', 'R', 'V', 'D', kDatasetVersion};
  for (std::uint32_t v : {static_cast<std::uint32_t>(d.size()), static_cast<std::uint32_t>(d.height),
                          static_cast<std::uint32_t>(d.width), static_cast<std::uint32_t>(d.classes)})
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  out.insert(out.end(), d.pixels.begin(), d.pixels.end());
  out.insert(out.end(), d.labels.begin(), d.labels.end());
  return out;
}

void write_dataset(const Dataset& d, const std::filesystem::path& path) {
  if (d.pixels.size() != d.size() * d.image_size()) shape_error("dataset pixel count does not match labels");
  const auto bytes = encode_dataset(d);
  write_file_atomic(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

Dataset read_dataset(const std::filesystem::path& path) {
  const std::string s = read_file(path);
  auto fail = [&](const std::string& why) { throw Error(ErrorCode::ParseError, path.string() + ": " + why); };
  if (s.size() < 21 || std::memcmp(s.data(), "MRVD", 4) != 0) fail("not an MRVD dataset");
  if (static_cast<std::uint8_t>(s[4]) != kDatasetVersion) fail("unsupported dataset version");
  auto u32 = [&](std::size_t at) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(s[at + i])) << (8 * i);
    return v;
  };
  const std::uint32_t count = u32(5), h = u32(9), w = u32(13), classes = u32(17);
  if (h == 0 || w == 0 || classes == 0 || classes > 256) fail("bad header");
  const std::uint64_t record = static_cast<std::uint64_t>(h) * w + 1;
  if (s.size() - 21 != count * record) fail("header count does not match the payload size");
  Dataset d;
  d.height = static_cast<int>(h);
  d.width = static_cast<int>(w);
  d.classes = static_cast<int>(classes);
  const auto* p = reinterpret_cast<const std::uint8_t*>(s.data()) + 21;
  d.pixels.assign(p, p + static_cast<std::size_t>(count) * h * w);
  d.labels.assign(p + d.pixels.size(), p + d.pixels.size() + count);
  for (auto l : d.labels)
    if (l >= classes) fail("label out of range");
  return d;
}

DatasetSplit split_dataset(const Dataset& data, std::uint64_t seed) {
  std::vector<std::size_t> idx(data.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(seed);
  rng.shuffle(idx);
  const std::size_t n_train = idx.size() * 6 / 10, n_val = idx.size() * 2 / 10;
  const std::span<const std::size_t> all(idx);
  return {data.subset(all.subspan(0, n_train)), data.subset(all.subspan(n_train, n_val)),
          data.subset(all.subspan(n_train + n_val))};
}

// Random numbers

double Rng::uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

std::size_t Rng::below(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)); }

// Network structure

void FloatNetwork::validate() const {
  if (layers.empty()) shape_error(name + ": network has no layers");
  int c = in_c, h = in_h, w = in_w;
  auto out_shape = [&](int i) -> std::array<int, 3> {
    if (i < 0) return {in_c, in_h, in_w};
    const auto& s = layers[static_cast<std::size_t>(i)].spec;
    return {s.out_c, s.out_h(), s.out_w()};
  };
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const FloatLayer& L = layers[i];
    const std::string where = name + " layer " + std::to_string(i);
    L.spec.validate();
    if (L.spec.in_c != c || L.spec.in_h != h || L.spec.in_w != w) shape_error(where + ": input shape does not chain");
    if (L.weights.size() != L.spec.weight_count()) shape_error(where + ": weight tensor has the wrong size");
    const std::size_t nb = L.spec.has_weights() ? static_cast<std::size_t>(L.spec.out_c) : 0;
    if (L.bias.size() != nb) shape_error(where + ": bias has the wrong size");
    if (L.spec.kind == LayerKind::ResidualAdd) {
      if (L.rhs_from < -1 || L.rhs_from >= static_cast<int>(i)) shape_error(where + ": bad residual source");
      if (out_shape(L.rhs_from) != std::array<int, 3>{c, h, w}) shape_error(where + ": residual shapes differ");
    }
    c = L.spec.out_c;
    h = L.spec.out_h();
    w = L.spec.out_w();
  }
}

std::vector<int> FloatNetwork::weighted_layers() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i].spec.has_weights()) out.push_back(static_cast<int>(i));
  return out;
}

std::uint64_t FloatNetwork::mac_count() const {
  std::uint64_t n = 0;
  for (const auto& L : layers) n += L.spec.mac_count();
  return n;
}

std::vector<float> input_tensor(std::span<const std::uint8_t> pixels) {
  std::vector<float> x(pixels.size());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<float>(pixels[i]) / 256.0f;
  return x;
}

// Forward and backward passes

namespace {

struct Geometry {
  int ci, h, w, co, ho, wo, kh, kw, s, pad;
  explicit Geometry(const LayerSpec& L)
      : ci(L.in_c), h(L.in_h), w(L.in_w), co(L.out_c), ho(L.out_h()), wo(L.out_w()), kh(L.kernel_h),
        kw(L.kernel_w), s(L.stride), pad(L.pad) {}
  std::size_t in(int c, int y, int x) const { return (static_cast<std::size_t>(c) * h + y) * w + x; }
  std::size_t out(int c, int y, int x) const { return (static_cast<std::size_t>(c) * ho + y) * wo + x; }
  bool inside(int y, int x) const { return y >= 0 && y < h && x >= 0 && x < w; }
};

void forward_layer(const FloatLayer& L, std::span<const float> in, std::span<const float> rhs,
                   std::vector<float>& out) {
  const LayerSpec& S = L.spec;
  const Geometry g(S);
  out.assign(S.output_size(), 0.0f);
  switch (S.kind) {
    case LayerKind::Conv2d:
    case LayerKind::Dense:
      for (int co = 0; co < g.co; ++co)
        for (int oy = 0; oy < g.ho; ++oy)
          for (int ox = 0; ox < g.wo; ++ox) {
            float acc = L.bias[co];
            const float* wp = &L.weights[static_cast<std::size_t>(co) * g.ci * g.kh * g.kw];
            for (int ci = 0; ci < g.ci; ++ci)
              for (int ky = 0; ky < g.kh; ++ky)
                for (int kx = 0; kx < g.kw; ++kx, ++wp) {
                  const int y = oy * g.s - g.pad + ky, x = ox * g.s - g.pad + kx;
                  if (g.inside(y, x)) acc += *wp * in[g.in(ci, y, x)];
                }
            out[g.out(co, oy, ox)] = acc;
          }
      break;
    case LayerKind::DepthwiseConv2d:
      for (int c = 0; c < g.ci; ++c)
        for (int oy = 0; oy < g.ho; ++oy)
          for (int ox = 0; ox < g.wo; ++ox) {
            float acc = L.bias[c];
            for (int ky = 0; ky < g.kh; ++ky)
              for (int kx = 0; kx < g.kw; ++kx) {
                const int y = oy * g.s - g.pad + ky, x = ox * g.s - g.pad + kx;
                if (g.inside(y, x))
                  acc += L.weights[(static_cast<std::size_t>(c) * g.kh + ky) * g.kw + kx] * in[g.in(c, y, x)];
              }
            out[g.out(c, oy, ox)] = acc;
          }
      break;
    case LayerKind::MaxPool:
    case LayerKind::AvgPool: {
      const bool avg = S.kind == LayerKind::AvgPool;
      for (int c = 0; c < g.ci; ++c)
        for (int oy = 0; oy < g.ho; ++oy)
          for (int ox = 0; ox < g.wo; ++ox) {
            // Padding counts as zero, matching the integer kernels.
            float best = -INFINITY, sum = 0.0f;
            for (int ky = 0; ky < g.kh; ++ky)
              for (int kx = 0; kx < g.kw; ++kx) {
                const int y = oy * g.s - g.pad + ky, x = ox * g.s - g.pad + kx;
                const float v = g.inside(y, x) ? in[g.in(c, y, x)] : 0.0f;
                best = std::max(best, v);
                sum += v;
              }
            out[g.out(c, oy, ox)] = avg ? sum / static_cast<float>(g.kh * g.kw) : best;
          }
      return;  // no activation on pools
    }
    case LayerKind::ResidualAdd:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] + rhs[i];
      break;
  }
  if (S.activation == Activation::ReLU)
    for (auto& v : out) v = std::max(v, 0.0f);
}

struct Grads {
  std::vector<float> w, b;
};

/// dout holds the gradient w.r.t. the layer output; din / drhs are accumulated.
void backward_layer(const FloatLayer& L, std::span<const float> in, std::span<const float> out,
                    std::vector<float> dout, Grads& grad, std::span<float> din, std::span<float> drhs) {
  const LayerSpec& S = L.spec;
  const Geometry g(S);
  if (S.activation == Activation::ReLU && S.kind != LayerKind::MaxPool && S.kind != LayerKind::AvgPool)
    for (std::size_t i = 0; i < dout.size(); ++i)
      if (out[i] <= 0.0f) dout[i] = 0.0f;
  switch (S.kind) {
    case LayerKind::Conv2d:
    case LayerKind::Dense:
      for (int co = 0; co < g.co; ++co)
        for (int oy = 0; oy < g.ho; ++oy)
          for (int ox = 0; ox < g.wo; ++ox) {
            const float d = dout[g.out(co, oy, ox)];
            if (d == 0.0f) continue;
            grad.b[co] += d;
            const std::size_t base = static_cast<std::size_t>(co) * g.ci * g.kh * g.kw;
            std::size_t k = base;
            for (int ci = 0; ci < g.ci; ++ci)
              for (int ky = 0; ky < g.kh; ++ky)
                for (int kx = 0; kx < g.kw; ++kx, ++k) {
                  const int y = oy * g.s - g.pad + ky, x = ox * g.s - g.pad + kx;
                  if (!g.inside(y, x)) continue;
                  grad.w[k] += d * in[g.in(ci, y, x)];
                  if (!din.empty()) din[g.in(ci, y, x)] += d * L.weights[k];
                }
          }
      break;
    case LayerKind::DepthwiseConv2d:
      for (int c = 0; c < g.ci; ++c)
        for (int oy = 0; oy < g.ho; ++oy)
          for (int ox = 0; ox < g.wo; ++ox) {
            const float d = dout[g.out(c, oy, ox)];
            if (d == 0.0f) continue;
            grad.b[c] += d;
            for (int ky = 0; ky < g.kh; ++ky)
              for (int kx = 0; kx < g.kw; ++kx) {
                const int y = oy * g.s - g.pad + ky, x = ox * g.s - g.pad + kx;
                if (!g.inside(y, x)) continue;
                const std::size_t k = (static_cast<std::size_t>(c) * g.kh + ky) * g.kw + kx;
                grad.w[k] += d * in[g.in(c, y, x)];
                if (!din.empty()) din[g.in(c, y, x)] += d * L.weights[k];
              }
          }
      break;
    case LayerKind::MaxPool:
    case LayerKind::AvgPool: {
      if (din.empty()) break;
      const bool avg = S.kind == LayerKind::AvgPool;
      const float inv = 1.0f / static_cast<float>(g.kh * g.kw);
      for (int c = 0; c < g.ci; ++c)
        for (int oy = 0; oy < g.ho; ++oy)
          for (int ox = 0; ox < g.wo; ++ox) {
            const float d = dout[g.out(c, oy, ox)];
            int by = -1, bx = -1;
            float best = -INFINITY;
            for (int ky = 0; ky < g.kh; ++ky)
              for (int kx = 0; kx < g.kw; ++kx) {
                const int y = oy * g.s - g.pad + ky, x = ox * g.s - g.pad + kx;
                const bool ok = g.inside(y, x);
                if (avg) {
                  if (ok) din[g.in(c, y, x)] += d * inv;
                  continue;
                }
                const float v = ok ? in[g.in(c, y, x)] : 0.0f;
                if (v > best) {
                  best = v;
                  by = ok ? y : -1;
                  bx = x;
                }
              }
            if (!avg && by >= 0) din[g.in(c, by, bx)] += d;
          }
      break;
    }
    case LayerKind::ResidualAdd:
      for (std::size_t i = 0; i < dout.size(); ++i) {
        if (!din.empty()) din[i] += dout[i];
        if (!drhs.empty()) drhs[i] += dout[i];
      }
      break;
  }
}

}  // namespace

std::vector<std::vector<float>> float_forward_all(const FloatNetwork& net, std::span<const float> input) {
  if (input.size() != net.input_size()) shape_error("input has the wrong size");
  std::vector<std::vector<float>> acts(net.layers.size());
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const FloatLayer& L = net.layers[i];
    std::span<const float> in = i == 0 ? input : std::span<const float>(acts[i - 1]);
    std::span<const float> rhs;
    if (L.spec.kind == LayerKind::ResidualAdd)
      rhs = L.rhs_from < 0 ? input : std::span<const float>(acts[static_cast<std::size_t>(L.rhs_from)]);
    forward_layer(L, in, rhs, acts[i]);
  }
  return acts;
}

std::vector<float> float_forward(const FloatNetwork& net, std::span<const float> input) {
  auto acts = float_forward_all(net, input);
  return std::move(acts.back());
}

double float_accuracy(const FloatNetwork& net, const Dataset& data) {
  if (data.size() == 0) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto out = float_forward(net, input_tensor(data.image(i)));
    if (argmax(std::span<const float>(out)) == data.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

void init_weights(FloatNetwork& net, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& L : net.layers) {
    L.weights.assign(L.spec.weight_count(), 0.0f);
    L.bias.assign(L.spec.has_weights() ? static_cast<std::size_t>(L.spec.out_c) : 0, 0.0f);
    if (!L.spec.has_weights()) continue;
    const double fan_in = static_cast<double>(L.spec.weight_count()) /
                          (L.spec.kind == LayerKind::DepthwiseConv2d ? L.spec.in_c : L.spec.out_c);
    const double bound = std::sqrt(6.0 / fan_in);
    for (auto& w : L.weights) w = static_cast<float>((2.0 * rng.uniform() - 1.0) * bound);
  }
}

void train(FloatNetwork& net, const Dataset& data, const TrainOptions& opt) {
  net.validate();
  if (data.size() == 0) throw Error(ErrorCode::EmptySample, "training set is empty");
  if (opt.epochs < 0 || opt.batch < 1 || !(opt.learning_rate > 0.0))
    throw Error(ErrorCode::ConfigError, "bad training options");
  Rng rng(opt.seed);
  const std::size_t n_layers = net.layers.size();
  std::vector<Grads> grads(n_layers);
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(opt.batch)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(opt.batch));
      for (std::size_t l = 0; l < n_layers; ++l) {
        grads[l].w.assign(net.layers[l].weights.size(), 0.0f);
        grads[l].b.assign(net.layers[l].bias.size(), 0.0f);
      }
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t idx = order[k];
        const auto x = input_tensor(data.image(idx));
        const auto acts = float_forward_all(net, x);
        // Softmax cross-entropy gradient on the logits.
        const auto& logits = acts.back();
        const float mx = *std::max_element(logits.begin(), logits.end());
        std::vector<float> d(logits.size());
        float z = 0.0f;
        for (std::size_t c = 0; c < d.size(); ++c) z += (d[c] = std::exp(logits[c] - mx));
        for (auto& v : d) v /= z;
        d[data.labels[idx]] -= 1.0f;

        std::vector<std::vector<float>> dacts(n_layers);
        std::vector<float> dinput;
        dacts[n_layers - 1] = std::move(d);
        for (std::size_t l = n_layers; l-- > 0;) {
          const FloatLayer& L = net.layers[l];
          std::span<const float> in = l == 0 ? std::span<const float>(x) : std::span<const float>(acts[l - 1]);
          std::span<float> din;
          if (l > 0) {
            dacts[l - 1].resize(acts[l - 1].size(), 0.0f);
            din = dacts[l - 1];
          }
          std::span<float> drhs;
          if (L.spec.kind == LayerKind::ResidualAdd && L.rhs_from >= 0) {
            auto& t = dacts[static_cast<std::size_t>(L.rhs_from)];
            t.resize(acts[static_cast<std::size_t>(L.rhs_from)].size(), 0.0f);
            drhs = t;
          }
          if (dacts[l].empty()) continue;
          backward_layer(L, in, acts[l], std::move(dacts[l]), grads[l], din, drhs);
        }
      }
      const float scale = static_cast<float>(opt.learning_rate / static_cast<double>(end - start));
      for (std::size_t l = 0; l < n_layers; ++l) {
        auto& L = net.layers[l];
        for (std::size_t i = 0; i < L.weights.size(); ++i) L.weights[i] -= scale * grads[l].w[i];
        for (std::size_t i = 0; i < L.bias.size(); ++i) L.bias[i] -= scale * grads[l].b[i];
      }
    }
  }
}

// Fixtures

namespace {

FloatLayer layer(LayerSpec spec) {
  FloatLayer L;
  L.spec = spec;
  L.weights.assign(spec.weight_count(), 0.0f);
  L.bias.assign(spec.has_weights() ? static_cast<std::size_t>(spec.out_c) : 0, 0.0f);
  return L;
}

}  // namespace

FloatNetwork make_mlp() {
  // The 8x8 image is read as 64 channels of a 1x1 plane (same CHW order).
  FloatNetwork net;
  net.name = "mlp";
  net.in_c = 64;
  net.layers.push_back(layer(kernels::dense(64, 1, 1, 32, Activation::ReLU)));
  net.layers.push_back(layer(kernels::dense(32, 1, 1, 16, Activation::ReLU)));
  net.layers.push_back(layer(kernels::dense(16, 1, 1, 10, Activation::None)));
  return net;
}

FloatNetwork make_cnn() {
  FloatNetwork net;
  net.name = "cnn";
  net.in_c = 1;
  net.in_h = 8;
  net.in_w = 8;
  net.layers.push_back(layer(kernels::conv2d(1, 16, 8, 8, 3, 1, 1, Activation::ReLU)));
  net.layers.push_back(layer(kernels::maxpool(16, 8, 8, 2, 2)));
  net.layers.push_back(layer(kernels::conv2d(16, 64, 4, 4, 3, 1, 1, Activation::ReLU)));
  net.layers.push_back(layer(kernels::maxpool(64, 4, 4, 2, 2)));
  net.layers.push_back(layer(kernels::dense(64, 2, 2, 10, Activation::None)));
  return net;
}

// Serialization

std::string topology_json(const FloatNetwork& net) {
  json layers = json::array();
  for (const auto& L : net.layers) {
    const LayerSpec& s = L.spec;
    json j = {{"kind", kernels::to_string(s.kind)},
              {"in_c", s.in_c},
              {"out_c", s.out_c},
              {"in_h", s.in_h},
              {"in_w", s.in_w},
              {"kernel_h", s.kernel_h},
              {"kernel_w", s.kernel_w},
              {"stride", s.stride},
              {"pad", s.pad},
              {"activation", s.activation == Activation::ReLU ? "relu" : "none"}};
    if (s.kind == LayerKind::ResidualAdd) j["rhs_from"] = L.rhs_from;
    layers.push_back(std::move(j));
  }
  json top = {{"format", "marvin-network"},
              {"version", 1},
              {"name", net.name},
              {"input", {net.in_c, net.in_h, net.in_w}},
              {"layers", std::move(layers)}};
  return top.dump(2) + "\n";
}

namespace {

[[noreturn]] void manifest_error(const std::string& msg) { throw Error(ErrorCode::ManifestError, msg); }

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) manifest_error(where + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) manifest_error(where + ": unknown key '" + key + "'");
  }
}

int get_int(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key) || !j[key].is_number_integer()) manifest_error(where + ": missing integer '" + key + "'");
  return j[key].get<int>();
}

}  // namespace

FloatNetwork topology_from_json(const std::string& text) {
  json top;
  try {
    top = json::parse(text);
  } catch (const json::exception& e) {
    manifest_error(std::string("network topology: ") + e.what());
  }
  check_keys(top, {"format", "version", "name", "input", "layers"}, "network");
  if (top.value("format", "") != "marvin-network") manifest_error("network: format must be 'marvin-network'");
  if (get_int(top, "version", "network") != 1) manifest_error("network: unsupported version");
  FloatNetwork net;
  net.name = top.value("name", "");
  const json& in = top["input"];
  if (!in.is_array() || in.size() != 3) manifest_error("network: input must be [c, h, w]");
  net.in_c = in[0].get<int>();
  net.in_h = in[1].get<int>();
  net.in_w = in[2].get<int>();
  if (!top["layers"].is_array()) manifest_error("network: layers must be an array");
  int i = 0;
  for (const json& j : top["layers"]) {
    const std::string where = "network layer " + std::to_string(i++);
    check_keys(j,
               {"kind", "in_c", "out_c", "in_h", "in_w", "kernel_h", "kernel_w", "stride", "pad", "activation",
                "rhs_from"},
               where);
    LayerSpec s;
    try {
      s.kind = kernels::layer_kind_from_string(j.value("kind", ""));
    } catch (const Error& e) {
      manifest_error(where + ": " + e.what());
    }
    s.in_c = get_int(j, "in_c", where);
    s.out_c = get_int(j, "out_c", where);
    s.in_h = get_int(j, "in_h", where);
    s.in_w = get_int(j, "in_w", where);
    s.kernel_h = get_int(j, "kernel_h", where);
    s.kernel_w = get_int(j, "kernel_w", where);
    s.stride = get_int(j, "stride", where);
    s.pad = get_int(j, "pad", where);
    const std::string act = j.value("activation", "none");
    if (act != "relu" && act != "none") manifest_error(where + ": activation must be relu or none");
    s.activation = act == "relu" ? Activation::ReLU : Activation::None;
    FloatLayer L = layer(s);
    if (j.contains("rhs_from")) L.rhs_from = get_int(j, "rhs_from", where);
    net.layers.push_back(std::move(L));
  }
  net.validate();
  return net;
}

void save_float_network(const FloatNetwork& net, const std::filesystem::path& stem) {
  net.validate();
  std::vector<TensorRecord> recs;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const FloatLayer& L = net.layers[i];
    if (!L.spec.has_weights()) continue;
    TensorRecord w;
    w.layer = static_cast<std::uint32_t>(i);
    w.type = TensorRecord::Float32;
    w.shape = {static_cast<std::uint32_t>(L.weights.size())};
    for (float f : L.weights) w.words.push_back(float_bits(f));
    TensorRecord b = w;
    b.role = TensorRecord::Bias;
    b.shape = {static_cast<std::uint32_t>(L.bias.size())};
    b.words.clear();
    for (float f : L.bias) b.words.push_back(float_bits(f));
    recs.push_back(std::move(w));
    recs.push_back(std::move(b));
  }
  write_file_atomic(std::filesystem::path(stem).concat(".json"), topology_json(net));
  write_records(recs, std::filesystem::path(stem).concat(".mrvw"));
}

FloatNetwork load_float_network(const std::filesystem::path& stem) {
  return load_float_network(std::filesystem::path(stem).concat(".json"), std::filesystem::path(stem).concat(".mrvw"));
}

FloatNetwork load_float_network(const std::filesystem::path& topology, const std::filesystem::path& weights) {
  FloatNetwork net = topology_from_json(read_file(topology));
  const auto recs = read_records(weights);
  for (const auto& r : recs) {
    if (r.layer >= net.layers.size() || r.type != TensorRecord::Float32)
      throw Error(ErrorCode::ParseError, "float weight record does not match the topology");
    auto& dst = r.role == TensorRecord::Weights ? net.layers[r.layer].weights : net.layers[r.layer].bias;
    if (dst.size() != r.words.size()) throw Error(ErrorCode::ParseError, "float tensor size mismatch");
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = bits_float(r.words[i]);
  }
  return net;
}

}  // namespace marvin::net
