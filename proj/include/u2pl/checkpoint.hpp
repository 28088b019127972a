#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "u2pl/tensor_io.hpp"

namespace u2pl {

using NamedTensors = std::vector<std::pair<std::string, AnyTensor>>;

/// u32 tensor count, then per tensor: u16 name length · UTF-8 name · tensor
/// container.
void write_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors);
NamedTensors read_checkpoint(const std::filesystem::path& path);

/// Looks a tensor up by name; throws ContractError when missing.
const AnyTensor& find_tensor(const NamedTensors& tensors, const std::string& name);
bool has_tensor(const NamedTensors& tensors, const std::string& name);

}  // namespace u2pl
