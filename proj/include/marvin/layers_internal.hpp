#pragma once

// Shared between the layer utilities and the stream generators.

#include <vector>

#include "marvin/kernels.hpp"

namespace marvin::kernels {

/// Lane bookkeeping of packed conv/dense kernels. One channel group of
/// `group` input channels spans `act_words` activation words and
/// `weight_words` weight words; each nn_mac covers `p` of them.
struct PackedGeometry {
  int la = 4;
  int lw = 4;
  int p = 4;
  int group = 4;
  int act_words = 1;
  int weight_words = 1;
};

PackedGeometry packed_geometry(const PrecisionConfig& cfg);

/// Throws ShapeError / ConfigError.
void validate_params(const LayerSpec& layer, const LayerParams& params);

/// Unpruned channels in blocks of at most four. `aligned` keeps each block
/// inside one group of four consecutive channel indices (depthwise).
std::vector<std::vector<int>> channel_blocks(const LayerParams& params, int channels, bool aligned);

}  // namespace marvin::kernels
