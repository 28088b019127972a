#include "u2pl/checkpoint.hpp"

#include <fstream>

namespace u2pl {

void write_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  require(os.is_open(), "cannot open checkpoint " + path.string() + " for writing");
  write_u32(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    require(name.size() <= 0xFFFF, "checkpoint: tensor name too long");
    write_u16(os, static_cast<std::uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tensor(os, t);
  }
  require(os.good(), "checkpoint: write failed for " + path.string());
}

NamedTensors read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  require(is.is_open(), "cannot open checkpoint " + path.string());
  const std::uint32_t count = read_u32(is);
  NamedTensors out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t len = read_u16(is);
    std::string name(len, '\0');
    is.read(name.data(), len);
    require(is.good(), "checkpoint: truncated tensor name");
    out.emplace_back(std::move(name), read_tensor(is));
  }
  return out;
}

const AnyTensor& find_tensor(const NamedTensors& tensors, const std::string& name) {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw ContractError("checkpoint: missing tensor '" + name + "'");
}

bool has_tensor(const NamedTensors& tensors, const std::string& name) {
  for (const auto& [n, t] : tensors) {
    if (n == name) return true;
  }
  return false;
}

}  // namespace u2pl
