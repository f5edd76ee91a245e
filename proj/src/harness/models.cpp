#include "atfs/harness/models.hpp"

#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

#include "atfs/nn/layers.hpp"

namespace atfs::harness {

void ModelSpec::validate() const {
  if (architecture == "mlp") {
    if (hidden == 0 || depth == 0) throw std::invalid_argument("mlp needs hidden, depth >= 1");
  } else if (architecture == "small-cnn") {
    if (width == 0) throw std::invalid_argument("small-cnn needs width >= 1");
  } else if (architecture == "resnet18-shape") {
    if (base_width == 0) throw std::invalid_argument("resnet18-shape needs base_width >= 1");
    if (feature_dim != 0 && feature_dim != 8 * base_width) {
      throw std::invalid_argument("resnet18-shape feature_dim is fixed at 8 * base_width = " +
                                  std::to_string(8 * base_width));
    }
  } else {
    throw std::invalid_argument("unknown architecture '" + architecture + "'");
  }
}

std::size_t ModelSpec::resolved_feature_dim() const {
  if (architecture == "resnet18-shape") return 8 * base_width;
  if (feature_dim != 0) return feature_dim;
  return architecture == "small-cnn" ? 64 : 8;
}

std::unique_ptr<nn::Network> build_model(const ModelSpec& spec, const Shape& input_shape,
                                         std::size_t num_classes, std::uint64_t seed) {
  spec.validate();
  if (input_shape.empty() || num_classes < 2) {
    throw std::invalid_argument("build_model: need an input shape and >= 2 classes");
  }
  std::mt19937_64 rng(seed);
  const std::size_t features = spec.resolved_feature_dim();
  std::vector<nn::LayerPtr> trunk;
  Shape shape = input_shape;
  auto push = [&](nn::LayerPtr layer) {
    shape = layer->output_shape(shape);
    trunk.push_back(std::move(layer));
  };
  auto flat = [&] {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  };

  if (spec.architecture == "mlp") {
    if (shape.size() > 1) push(std::make_unique<nn::Flatten>());
    for (std::size_t i = 0; i < spec.depth; ++i) {
      push(std::make_unique<nn::Dense>(flat(), spec.hidden, rng));
      push(std::make_unique<nn::Relu>());
    }
    push(std::make_unique<nn::Dense>(flat(), features, rng));
    push(std::make_unique<nn::Relu>());
  } else {
    if (shape.size() != 3) {
      throw std::invalid_argument(spec.architecture + " needs [C, H, W] inputs");
    }
    if (spec.architecture == "small-cnn") {
      push(std::make_unique<nn::Conv2d>(shape[0], spec.width, 3, 2, 1, rng));
      push(std::make_unique<nn::Relu>());
      push(std::make_unique<nn::Conv2d>(spec.width, 2 * spec.width, 3, 2, 1, rng));
      push(std::make_unique<nn::Relu>());
      push(std::make_unique<nn::Flatten>());
      push(std::make_unique<nn::Dense>(flat(), features, rng));
      push(std::make_unique<nn::Relu>());
    } else {
      const std::size_t w = spec.base_width;
      push(std::make_unique<nn::Conv2d>(shape[0], w, 3, 1, 1, rng));
      push(std::make_unique<nn::Relu>());
      std::size_t in = w;
      for (std::size_t stage = 0; stage < 4; ++stage) {
        const std::size_t out = w << stage;
        push(std::make_unique<nn::ResidualBlock>(in, out, stage == 0 ? 1 : 2, rng));
        push(std::make_unique<nn::ResidualBlock>(out, out, 1, rng));
        in = out;
      }
      push(std::make_unique<nn::GlobalAvgPool>());
    }
  }
  if (flat() != features) throw std::logic_error("build_model: feature width mismatch");
  auto head = std::make_unique<nn::Dense>(features, num_classes, rng, 1.0);
  return std::make_unique<nn::Network>(input_shape, std::move(trunk), std::move(head));
}

}  // namespace atfs::harness
