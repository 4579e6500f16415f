#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dhi/nn.hpp"

namespace dhi {

// Weight file layout (all integers little-endian):
//   magic "DHI1" | version u32 (=1) | tensor count u32
//   per tensor: name length u32 | UTF-8 name | rank u32 | extents u64 x rank | float64 x numel
// See docs/weights_format.md.
inline constexpr char kWeightsMagic[4] = {'D', 'H', 'I', '1'};
inline constexpr std::uint32_t kWeightsVersion = 1;

struct StoredTensor {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

void write_weights(const std::filesystem::path& path, const std::vector<StoredTensor>& tensors);
std::vector<StoredTensor> read_weights(const std::filesystem::path& path);

std::vector<StoredTensor> snapshot(const ParamRegistry& reg);
// Copies values into the registry's tensors by name. Every registry entry must
// be present with a matching shape; extra stored tensors are returned unused.
std::vector<StoredTensor> restore(const ParamRegistry& reg, std::vector<StoredTensor> stored);

}  // namespace dhi
