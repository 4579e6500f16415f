#include "dhi/serialize.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include "dhi/error.hpp"

namespace dhi {
namespace {

template <typename T>
void put(std::ostream& os, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::filesystem::path& path) {
  unsigned char bytes[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
    throw DataError("truncated weights file: " + path.string());
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

}  // namespace

void write_weights(const std::filesystem::path& path, const std::vector<StoredTensor>& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open weights file for writing: " + path.string());
  os.write(kWeightsMagic, 4);
  put<std::uint32_t>(os, kWeightsVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    if (t.values.size() != numel(t.shape)) throw InvalidArgument("stored tensor size mismatch: " + t.name);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t.name.size()));
    os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t.shape.size()));
    for (auto e : t.shape) put<std::uint64_t>(os, e);
    for (double v : t.values) put<double>(os, v);
  }
  if (!os) throw DataError("failed writing weights file: " + path.string());
}

std::vector<StoredTensor> read_weights(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open weights file: " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kWeightsMagic, 4) != 0) {
    throw DataError("not a DHI1 weights file: " + path.string());
  }
  const auto version = get<std::uint32_t>(is, path);
  if (version != kWeightsVersion) {
    throw DataError("unsupported weights version " + std::to_string(version));
  }
  const auto count = get<std::uint32_t>(is, path);
  std::vector<StoredTensor> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    StoredTensor t;
    const auto name_len = get<std::uint32_t>(is, path);
    t.name.resize(name_len);
    if (!is.read(t.name.data(), name_len)) throw DataError("truncated weights file: " + path.string());
    const auto rank = get<std::uint32_t>(is, path);
    for (std::uint32_t r = 0; r < rank; ++r) t.shape.push_back(get<std::uint64_t>(is, path));
    t.values.resize(numel(t.shape));
    for (auto& v : t.values) v = get<double>(is, path);
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<StoredTensor> snapshot(const ParamRegistry& reg) {
  std::vector<StoredTensor> out;
  for (const auto& e : reg.entries()) {
    const auto d = e.tensor.data();
    out.push_back(StoredTensor{e.name, e.tensor.shape(), std::vector<double>(d.begin(), d.end())});
  }
  return out;
}

std::vector<StoredTensor> restore(const ParamRegistry& reg, std::vector<StoredTensor> stored) {
  std::vector<bool> used(stored.size(), false);
  for (const auto& e : reg.entries()) {
    bool found = false;
    for (std::size_t i = 0; i < stored.size(); ++i) {
      if (stored[i].name != e.name) continue;
      if (stored[i].shape != e.tensor.shape()) {
        throw DataError("shape mismatch for " + e.name + ": stored " + shape_str(stored[i].shape) +
                        ", model " + shape_str(e.tensor.shape()));
      }
      Tensor t = e.tensor;
      std::copy(stored[i].values.begin(), stored[i].values.end(), t.data().begin());
      used[i] = found = true;
      break;
    }
    if (!found) throw DataError("weights file is missing tensor " + e.name);
  }
  std::vector<StoredTensor> rest;
  for (std::size_t i = 0; i < stored.size(); ++i)
    if (!used[i]) rest.push_back(std::move(stored[i]));
  return rest;
}

}  // namespace dhi
