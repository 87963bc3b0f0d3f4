#include "cgiqa/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "cgiqa/error.hpp"

namespace cgiqa {
namespace {

constexpr char kMagic[4] = {'C', 'G', 'Q', 'W'};
constexpr std::uint8_t kDtypeF64 = 1;

template <typename T>
void put(std::ofstream& out, T value) {
  static_assert(std::is_integral_v<T> || std::is_floating_point_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes, bytes + sizeof(T));
  }
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const std::filesystem::path& path) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
    throw IoError("truncated checkpoint: " + path.string());
  }
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes, bytes + sizeof(T));
  }
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

}  // namespace

void save_tensors(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint: " + path.string());
  out.write(kMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));

  nlohmann::json manifest;
  manifest["format"] = "cgiqa-weights";
  manifest["version"] = kCheckpointVersion;
  manifest["tensors"] = nlohmann::json::array();
  for (const NamedTensor& nt : tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(nt.name.size()));
    out.write(nt.name.data(), static_cast<std::streamsize>(nt.name.size()));
    put<std::uint8_t>(out, kDtypeF64);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(nt.tensor.rank()));
    for (std::size_t d : nt.tensor.shape()) put<std::uint64_t>(out, d);
    const auto offset = static_cast<std::uint64_t>(out.tellp());
    for (double v : nt.tensor.data()) put<double>(out, v);
    manifest["tensors"].push_back({{"name", nt.name},
                                   {"shape", nt.tensor.shape()},
                                   {"dtype", "f64"},
                                   {"offset", offset},
                                   {"bytes", nt.tensor.size() * sizeof(double)}});
  }
  if (!out) throw IoError("failed writing checkpoint: " + path.string());
  out.close();

  std::ofstream mf(path.string() + ".json", std::ios::trunc);
  if (!mf) throw IoError("cannot write checkpoint manifest for " + path.string());
  mf << manifest.dump(2) << "\n";
}

std::vector<NamedTensor> load_tensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw IoError("not a weight checkpoint (bad magic): " + path.string());
  }
  const auto version = get<std::uint32_t>(in, path);
  if (version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = get<std::uint32_t>(in, path);
  std::vector<NamedTensor> tensors;
  tensors.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = get<std::uint32_t>(in, path);
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw IoError("truncated checkpoint name");
    if (get<std::uint8_t>(in, path) != kDtypeF64) {
      throw IoError("unsupported dtype for tensor " + name);
    }
    const auto rank = get<std::uint32_t>(in, path);
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(get<std::uint64_t>(in, path));
    std::vector<double> data(shape_size(shape));
    for (double& v : data) v = get<double>(in, path);
    tensors.push_back({std::move(name), Tensor(std::move(shape), std::move(data))});
  }
  return tensors;
}

void save_params(const std::filesystem::path& path, const ParamStore& store) {
  std::vector<NamedTensor> tensors;
  tensors.reserve(store.size());
  for (ParamId id = 0; id < store.size(); ++id) {
    tensors.push_back({store.name(id), store.value(id)});
  }
  save_tensors(path, tensors);
}

std::size_t load_params(const std::filesystem::path& path, ParamStore& store,
                        const std::string& prefix, const std::string& source_prefix) {
  const auto tensors = load_tensors(path);
  std::unordered_map<std::string, const Tensor*> by_name;
  for (const NamedTensor& nt : tensors) by_name[nt.name] = &nt.tensor;
  std::size_t loaded = 0;
  for (ParamId id = 0; id < store.size(); ++id) {
    const std::string& name = store.name(id);
    if (name.rfind(prefix, 0) != 0) continue;
    auto it = by_name.find(source_prefix + name.substr(prefix.size()));
    if (it == by_name.end()) {
      throw IoError("checkpoint " + path.string() + " lacks parameter " + name);
    }
    if (it->second->shape() != store.value(id).shape()) {
      throw IoError("checkpoint shape mismatch for " + name + ": " +
                    shape_string(it->second->shape()) + " vs " +
                    shape_string(store.value(id).shape()));
    }
    store[id].value = *it->second;
    ++loaded;
  }
  return loaded;
}

}  // namespace cgiqa
