#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>

#include "condseg/tensor.hpp"

namespace condseg {

/// Scalar tags of the "CSEG" container.
enum class DType : std::uint8_t { F32 = 1, F64 = 2, U8 = 3 };

inline constexpr std::uint16_t kTensorFormatVersion = 1;

/// Layout: "CSEG", u16 format version, u8 dtype, u8 rank, rank x u64 extents,
/// little-endian payload. U8 payloads hold masks (values 0/1).
void write_tensor(std::ostream& os, const Tensor& t, DType dtype = DType::F32);
Tensor read_tensor(std::istream& is);

void save_tensor(const std::filesystem::path& path, const Tensor& t, DType dtype = DType::F32);
Tensor load_tensor(const std::filesystem::path& path);

/// 8-bit binary PGM; values are clamped to [0,1] and scaled to 0..255.
void write_pgm(const std::filesystem::path& path, std::span<const float> pixels, std::size_t height, std::size_t width);

namespace io {

void write_u16(std::ostream& os, std::uint16_t v);
void write_u32(std::ostream& os, std::uint32_t v);
void write_u64(std::ostream& os, std::uint64_t v);
void write_f32(std::ostream& os, float v);
std::uint16_t read_u16(std::istream& is);
std::uint32_t read_u32(std::istream& is);
std::uint64_t read_u64(std::istream& is);
float read_f32(std::istream& is);
void read_exact(std::istream& is, char* dst, std::size_t n, const char* what);

}  // namespace io

}  // namespace condseg
