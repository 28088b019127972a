#pragma once

#include <filesystem>
#include <iosfwd>
#include <variant>

#include "u2pl/numerics.hpp"

namespace u2pl {

/// On-disk element types of the "U2TN" container.
enum class DType : std::uint8_t { f64 = 0, f32 = 1, i32 = 2, u8 = 3 };

using AnyTensor = std::variant<FloatTensor, Tensor<float>, IntTensor, ByteTensor>;

inline constexpr std::uint16_t kContainerVersion = 1;

/// Layout: "U2TN" · u16 version · u8 dtype · u8 ndim · u32 dims · payload,
/// all little-endian.
void write_tensor(std::ostream& os, const AnyTensor& t);
AnyTensor read_tensor(std::istream& is);

void save_tensor(const std::filesystem::path& path, const AnyTensor& t);
AnyTensor load_tensor(const std::filesystem::path& path);

/// Typed accessors; throw ContractError when the stored dtype differs.
template <typename T>
Tensor<T> tensor_as(AnyTensor t) {
  auto* p = std::get_if<Tensor<T>>(&t);
  require(p != nullptr, "tensor container: unexpected dtype");
  return std::move(*p);
}

// Little-endian primitives, shared with the checkpoint format.
void write_u16(std::ostream& os, std::uint16_t v);
void write_u32(std::ostream& os, std::uint32_t v);
std::uint16_t read_u16(std::istream& is);
std::uint32_t read_u32(std::istream& is);

}  // namespace u2pl
