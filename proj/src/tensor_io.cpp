#include "condseg/tensor_io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include "condseg/error.hpp"

namespace condseg {

namespace io {

namespace {

template <typename U>
void write_le(std::ostream& os, U v) {
  unsigned char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(buf), sizeof(U));
}

template <typename U>
U read_le(std::istream& is, const char* what) {
  unsigned char buf[sizeof(U)];
  read_exact(is, reinterpret_cast<char*>(buf), sizeof(U), what);
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
  return v;
}

}  // namespace

void read_exact(std::istream& is, char* dst, std::size_t n, const char* what) {
  is.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) {
    throw FormatError(std::string("truncated data while reading ") + what);
  }
}

void write_u16(std::ostream& os, std::uint16_t v) { write_le(os, v); }
void write_u32(std::ostream& os, std::uint32_t v) { write_le(os, v); }
void write_u64(std::ostream& os, std::uint64_t v) { write_le(os, v); }
void write_f32(std::ostream& os, float v) { write_le(os, std::bit_cast<std::uint32_t>(v)); }
std::uint16_t read_u16(std::istream& is) { return read_le<std::uint16_t>(is, "u16"); }
std::uint32_t read_u32(std::istream& is) { return read_le<std::uint32_t>(is, "u32"); }
std::uint64_t read_u64(std::istream& is) { return read_le<std::uint64_t>(is, "u64"); }
float read_f32(std::istream& is) { return std::bit_cast<float>(read_le<std::uint32_t>(is, "f32")); }

}  // namespace io

void write_tensor(std::ostream& os, const Tensor& t, DType dtype) {
  os.write("CSEG", 4);
  io::write_u16(os, kTensorFormatVersion);
  os.put(static_cast<char>(dtype));
  os.put(static_cast<char>(t.rank()));
  for (auto d : t.shape()) io::write_u64(os, d);
  for (float v : t.data()) {
    switch (dtype) {
      case DType::F32: io::write_f32(os, v); break;
      case DType::F64: io::write_u64(os, std::bit_cast<std::uint64_t>(static_cast<double>(v))); break;
      case DType::U8:
        if (v != 0.0f && v != 1.0f) throw ValidationError("write_tensor: U8 payload accepts only 0/1 values");
        os.put(static_cast<char>(v == 1.0f));
        break;
    }
  }
}

Tensor read_tensor(std::istream& is) {
  char magic[4];
  io::read_exact(is, magic, 4, "tensor magic");
  if (std::memcmp(magic, "CSEG", 4) != 0) throw FormatError("not a CSEG tensor (bad magic)");
  const auto version = io::read_u16(is);
  if (version != kTensorFormatVersion) {
    throw FormatError("unsupported CSEG version " + std::to_string(version) + " (expected " +
                      std::to_string(kTensorFormatVersion) + ")");
  }
  char header[2];
  io::read_exact(is, header, 2, "tensor header");
  const auto dtype = static_cast<DType>(static_cast<unsigned char>(header[0]));
  const auto rank = static_cast<std::size_t>(static_cast<unsigned char>(header[1]));
  if (dtype != DType::F32 && dtype != DType::F64 && dtype != DType::U8) throw FormatError("unknown CSEG dtype tag");
  Shape shape(rank);
  for (auto& d : shape) {
    d = io::read_u64(is);
    if (d > (std::size_t{1} << 32)) throw FormatError("implausible CSEG extent");
  }
  Tensor t(shape);
  for (auto& v : t.data()) {
    switch (dtype) {
      case DType::F32: v = io::read_f32(is); break;
      case DType::F64: v = static_cast<float>(std::bit_cast<double>(io::read_u64(is))); break;
      case DType::U8: {
        char c;
        io::read_exact(is, &c, 1, "tensor payload");
        v = static_cast<float>(static_cast<unsigned char>(c));
        break;
      }
    }
  }
  return t;
}

void save_tensor(const std::filesystem::path& path, const Tensor& t, DType dtype) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  write_tensor(os, t, dtype);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  return read_tensor(is);
}

void write_pgm(const std::filesystem::path& path, std::span<const float> pixels, std::size_t height, std::size_t width) {
  if (pixels.size() != height * width) throw ShapeError("write_pgm: pixel count does not match height*width");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  os << "P5\n" << width << ' ' << height << "\n255\n";
  for (float v : pixels) {
    const float c = std::clamp(v, 0.0f, 1.0f);
    os.put(static_cast<char>(static_cast<unsigned char>(c * 255.0f + 0.5f)));
  }
}

}  // namespace condseg
