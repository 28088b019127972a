#include "u2pl/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace u2pl {
namespace {

constexpr std::array<char, 4> kMagic{'U', '2', 'T', 'N'};

template <typename U>
void write_le(std::ostream& os, U v) {
  std::array<char, sizeof(U)> buf;
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(buf.data(), buf.size());
}

template <typename U>
U read_le(std::istream& is) {
  std::array<unsigned char, sizeof(U)> buf;
  is.read(reinterpret_cast<char*>(buf.data()), buf.size());
  require(is.good(), "tensor container: truncated stream");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
  return v;
}

template <typename T>
void write_payload(std::ostream& os, const Tensor<T>& t) {
  for (const T& v : t.data) {
    if constexpr (std::is_same_v<T, double>) {
      write_le(os, std::bit_cast<std::uint64_t>(v));
    } else if constexpr (std::is_same_v<T, float>) {
      write_le(os, std::bit_cast<std::uint32_t>(v));
    } else if constexpr (std::is_same_v<T, std::int32_t>) {
      write_le(os, static_cast<std::uint32_t>(v));
    } else {
      write_le(os, static_cast<std::uint8_t>(v));
    }
  }
}

template <typename T>
Tensor<T> read_payload(std::istream& is, std::vector<std::size_t> dims) {
  Tensor<T> t(std::move(dims));
  for (T& v : t.data) {
    if constexpr (std::is_same_v<T, double>) {
      v = std::bit_cast<double>(read_le<std::uint64_t>(is));
    } else if constexpr (std::is_same_v<T, float>) {
      v = std::bit_cast<float>(read_le<std::uint32_t>(is));
    } else if constexpr (std::is_same_v<T, std::int32_t>) {
      v = static_cast<std::int32_t>(read_le<std::uint32_t>(is));
    } else {
      v = read_le<std::uint8_t>(is);
    }
  }
  return t;
}

template <typename T>
constexpr DType dtype_of() {
  if constexpr (std::is_same_v<T, double>) return DType::f64;
  if constexpr (std::is_same_v<T, float>) return DType::f32;
  if constexpr (std::is_same_v<T, std::int32_t>) return DType::i32;
  return DType::u8;
}

}  // namespace

void write_u16(std::ostream& os, std::uint16_t v) { write_le(os, v); }
void write_u32(std::ostream& os, std::uint32_t v) { write_le(os, v); }
std::uint16_t read_u16(std::istream& is) { return read_le<std::uint16_t>(is); }
std::uint32_t read_u32(std::istream& is) { return read_le<std::uint32_t>(is); }

void write_tensor(std::ostream& os, const AnyTensor& any) {
  std::visit(
      [&](const auto& t) {
        using Elem = std::decay_t<decltype(t.data[0])>;
        require(t.dims.size() <= 255, "tensor container: too many dimensions");
        require(t.size() == Tensor<Elem>::element_count(t.dims),
                "tensor container: dims do not match payload");
        os.write(kMagic.data(), kMagic.size());
        write_le(os, kContainerVersion);
        write_le(os, static_cast<std::uint8_t>(dtype_of<Elem>()));
        write_le(os, static_cast<std::uint8_t>(t.dims.size()));
        for (std::size_t d : t.dims) {
          require(d <= 0xFFFFFFFFu, "tensor container: dimension exceeds u32");
          write_le(os, static_cast<std::uint32_t>(d));
        }
        write_payload(os, t);
      },
      any);
  require(os.good(), "tensor container: write failed");
}

AnyTensor read_tensor(std::istream& is) {
  std::array<char, 4> magic{};
  is.read(magic.data(), magic.size());
  require(is.good() && magic == kMagic, "tensor container: bad magic");
  const auto version = read_le<std::uint16_t>(is);
  require(version == kContainerVersion, "tensor container: unsupported version");
  const auto dtype = read_le<std::uint8_t>(is);
  const auto ndim = read_le<std::uint8_t>(is);
  std::vector<std::size_t> dims(ndim);
  for (auto& d : dims) d = read_le<std::uint32_t>(is);
  switch (static_cast<DType>(dtype)) {
    case DType::f64: return read_payload<double>(is, std::move(dims));
    case DType::f32: return read_payload<float>(is, std::move(dims));
    case DType::i32: return read_payload<std::int32_t>(is, std::move(dims));
    case DType::u8: return read_payload<std::uint8_t>(is, std::move(dims));
  }
  throw ContractError("tensor container: unknown dtype " + std::to_string(dtype));
}

void save_tensor(const std::filesystem::path& path, const AnyTensor& t) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  require(os.is_open(), "cannot open " + path.string() + " for writing");
  write_tensor(os, t);
}

AnyTensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  require(is.is_open(), "cannot open " + path.string());
  return read_tensor(is);
}

}  // namespace u2pl
