#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "marvin/kernels.hpp"

namespace marvin::net {

using kernels::LayerSpec;

/// Grayscale image classification samples, one byte per pixel.
struct Dataset {
  int height = 0;
  int width = 0;
  int classes = 0;
  std::vector<std::uint8_t> pixels;  // count * height * width
  std::vector<std::uint8_t> labels;  // count

  std::size_t size() const { return labels.size(); }
  std::size_t image_size() const { return static_cast<std::size_t>(height) * width; }
  std::span<const std::uint8_t> image(std::size_t i) const {
    return std::span<const std::uint8_t>(pixels).subspan(i * image_size(), image_size());
  }
  Dataset subset(std::span<const std::size_t> indices) const;
};

/// "MRVD" files. Throws IoError / ParseError.
Dataset read_dataset(const std::filesystem::path& path);
void write_dataset(const Dataset& data, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_dataset(const Dataset& data);

struct DatasetSplit {
  Dataset train;
  Dataset val;
  Dataset test;
};

/// Seeded shuffle, then 60/20/20.
DatasetSplit split_dataset(const Dataset& data, std::uint64_t seed);

struct FloatLayer {
  LayerSpec spec;
  std::vector<float> weights;  // same order as kernels::LayerParams
  std::vector<float> bias;
  /// Residual adds: second operand is the output of this layer (-1 = network input).
  int rhs_from = -1;
};

struct FloatNetwork {
  std::string name;
  int in_c = 1;
  int in_h = 1;
  int in_w = 1;
  std::vector<FloatLayer> layers;

  /// Throws ShapeError when shapes do not chain or tensors have the wrong size.
  void validate() const;
  int classes() const { return layers.empty() ? 0 : layers.back().spec.out_c; }
  std::size_t input_size() const { return static_cast<std::size_t>(in_c) * in_h * in_w; }
  /// Indices of layers that carry weights (the per-layer precision choices).
  std::vector<int> weighted_layers() const;
  std::uint64_t mac_count() const;
};

/// Pixel p becomes p / 256, so an 8-bit quantized input is the raw byte.
std::vector<float> input_tensor(std::span<const std::uint8_t> pixels);

/// Output of every layer, in order.
std::vector<std::vector<float>> float_forward_all(const FloatNetwork& net, std::span<const float> input);
std::vector<float> float_forward(const FloatNetwork& net, std::span<const float> input);

template <class T>
int argmax(std::span<const T> v) {
  int best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  return best;
}

double float_accuracy(const FloatNetwork& net, const Dataset& data);

/// Deterministic generator shared by weight init, shuffles and splits so that
/// fixtures are byte-identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  std::uint64_t next() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform();
  /// Uniform in [0, n).
  std::size_t below(std::size_t n);
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

 private:
  std::mt19937_64 engine_;
};

/// He-uniform weights, zero bias.
void init_weights(FloatNetwork& net, std::uint64_t seed);

struct TrainOptions {
  int epochs = 40;
  double learning_rate = 0.05;
  int batch = 16;
  std::uint64_t seed = 42;
};

/// Plain minibatch SGD on softmax cross-entropy.
void train(FloatNetwork& net, const Dataset& data, const TrainOptions& opt);

/// Fixture architectures for 8x8 single-channel inputs, untrained.
FloatNetwork make_mlp();
FloatNetwork make_cnn();

/// Architecture description as JSON text (no weights).
std::string topology_json(const FloatNetwork& net);
/// Layers from JSON text; weights sized and zeroed. Throws ManifestError.
FloatNetwork topology_from_json(const std::string& text);

/// Topology `<stem>.json` plus float records in `<stem>.mrvw`.
void save_float_network(const FloatNetwork& net, const std::filesystem::path& stem);
FloatNetwork load_float_network(const std::filesystem::path& stem);
FloatNetwork load_float_network(const std::filesystem::path& topology, const std::filesystem::path& weights);

}  // namespace marvin::net
