#include <bit>
#include <cstring>
#include <fstream>

#include "merv/encoders.hpp"
#include "merv/errors.hpp"

namespace merv {

namespace {

constexpr std::uint8_t kDtypeF32 = 1;
constexpr std::uint8_t kDtypeF64 = 2;

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
}

template <typename U>
U get_le(const std::uint8_t* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
  return v;
}

template <typename T, std::uint8_t Code>
std::vector<std::uint8_t> encode_impl(const BasicTensor<T>& tensor) {
  if (tensor.rank() == 0 || tensor.rank() > 255) throw FormatError("container rank must be 1..255");
  using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  std::vector<std::uint8_t> out;
  out.reserve(10 + 4 * tensor.rank() + sizeof(T) * tensor.numel());
  for (char c : kFeatureMagic) out.push_back(static_cast<std::uint8_t>(c));
  out.push_back(Code);
  out.push_back(static_cast<std::uint8_t>(tensor.rank()));
  for (auto e : tensor.shape()) {
    if (e > 0xffffffffu) throw FormatError("extent does not fit in u32");
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e));
  }
  for (T v : tensor.data()) put_le<Bits>(out, std::bit_cast<Bits>(v));
  return out;
}

struct Header {
  std::uint8_t dtype;
  Shape shape;
  std::size_t payload_offset;
};

Header parse_header(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 10) throw FormatError("feature container truncated in header");
  if (std::memcmp(bytes.data(), kFeatureMagic, 8) != 0) throw FormatError("bad feature container magic");
  Header h;
  h.dtype = bytes[8];
  if (h.dtype != kDtypeF32 && h.dtype != kDtypeF64) {
    throw FormatError("unsupported dtype code " + std::to_string(h.dtype));
  }
  const std::size_t rank = bytes[9];
  if (rank == 0) throw FormatError("feature container rank must be >= 1");
  if (bytes.size() < 10 + 4 * rank) throw FormatError("feature container truncated in extents");
  for (std::size_t i = 0; i < rank; ++i) {
    const auto e = get_le<std::uint32_t>(bytes.data() + 10 + 4 * i);
    if (e == 0) throw FormatError("feature container has a zero extent");
    h.shape.push_back(e);
  }
  h.payload_offset = 10 + 4 * rank;
  const std::size_t width = h.dtype == kDtypeF32 ? 4 : 8;
  const std::size_t expected = h.payload_offset + width * shape_numel(h.shape);
  if (bytes.size() < expected) throw FormatError("feature container truncated in payload");
  if (bytes.size() > expected) throw FormatError("feature container has trailing bytes");
  return h;
}

template <typename T>
BasicTensor<T> decode_payload(std::span<const std::uint8_t> bytes, const Header& h) {
  const std::size_t n = shape_numel(h.shape);
  std::vector<T> data(n);
  const std::uint8_t* p = bytes.data() + h.payload_offset;
  if (h.dtype == kDtypeF32) {
    for (std::size_t i = 0; i < n; ++i)
      data[i] = static_cast<T>(std::bit_cast<float>(get_le<std::uint32_t>(p + 4 * i)));
  } else {
    for (std::size_t i = 0; i < n; ++i)
      data[i] = static_cast<T>(std::bit_cast<double>(get_le<std::uint64_t>(p + 8 * i)));
  }
  return BasicTensor<T>(h.shape, std::move(data));
}

}  // namespace

std::vector<std::uint8_t> encode_feature(const Tensor& tensor) {
  return encode_impl<float, kDtypeF32>(tensor);
}

std::vector<std::uint8_t> encode_feature(const Tensor64& tensor) {
  return encode_impl<double, kDtypeF64>(tensor);
}

Tensor decode_feature(std::span<const std::uint8_t> bytes) {
  const Header h = parse_header(bytes);
  if (h.dtype != kDtypeF32) throw FormatError("expected an f32 feature container");
  return decode_payload<float>(bytes, h);
}

Tensor64 decode_feature64(std::span<const std::uint8_t> bytes) {
  const Header h = parse_header(bytes);
  return decode_payload<double>(bytes, h);
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("short write to " + path.string());
}

void write_feature(const std::filesystem::path& path, const Tensor& tensor) {
  write_file_bytes(path, encode_feature(tensor));
}

void write_feature(const std::filesystem::path& path, const Tensor64& tensor) {
  write_file_bytes(path, encode_feature(tensor));
}

Tensor read_feature(const std::filesystem::path& path) { return decode_feature(read_file_bytes(path)); }

Tensor64 read_feature64(const std::filesystem::path& path) {
  return decode_feature64(read_file_bytes(path));
}

}  // namespace merv
