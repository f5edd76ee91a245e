#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "atfs/nn/network.hpp"

namespace atfs::harness {

// mlp:            [Dense(hidden) relu] x depth, Dense(feature_dim) relu
// small-cnn:      conv3x3/2 (width) relu, conv3x3/2 (2 width) relu,
//                 Dense(feature_dim) relu
// resnet18-shape: conv3x3 (base_width), four stages of two residual blocks
//                 with widths base_width x {1, 2, 4, 8}, global average pool;
//                 the feature dimension is 8 * base_width. No normalization
//                 layers.
// Every architecture ends in a linear head on the feature vector.
struct ModelSpec {
  std::string architecture = "mlp";
  std::size_t hidden = 32;
  std::size_t depth = 2;
  std::size_t width = 16;
  std::size_t base_width = 64;
  // 0 picks the architecture default (8 for mlp, 64 for small-cnn,
  // 8 * base_width for resnet18-shape).
  std::size_t feature_dim = 0;

  void validate() const;
  std::size_t resolved_feature_dim() const;
};

std::unique_ptr<nn::Network> build_model(const ModelSpec& spec, const Shape& input_shape,
                                         std::size_t num_classes, std::uint64_t seed);

}  // namespace atfs::harness
