#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <ostream>

#include "reid/tensor.hpp"

namespace reid {

// RTEN raw tensor file: magic "RTEN", version byte (1), dtype byte
// (0 = float32, 1 = float64), rank byte, rank x u32 little-endian dims,
// then the row-major little-endian payload.
inline constexpr char kRtenMagic[4] = {'R', 'T', 'E', 'N'};
inline constexpr std::uint8_t kRtenVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 0;
inline constexpr std::uint8_t kDtypeF64 = 1;

// Little-endian primitives shared by all binary formats.
void write_u8(std::ostream& os, std::uint8_t v);
void write_u16_le(std::ostream& os, std::uint16_t v);
void write_u32_le(std::ostream& os, std::uint32_t v);
void write_i32_le(std::ostream& os, std::int32_t v);
void write_u64_le(std::ostream& os, std::uint64_t v);
std::uint8_t read_u8(std::istream& is, const char* what);
std::uint16_t read_u16_le(std::istream& is, const char* what);
std::uint32_t read_u32_le(std::istream& is, const char* what);
std::int32_t read_i32_le(std::istream& is, const char* what);
std::uint64_t read_u64_le(std::istream& is, const char* what);

void write_f32_le(std::ostream& os, const float* values, std::size_t count);
void write_f64_le(std::ostream& os, const double* values, std::size_t count);
void read_f32_le(std::istream& is, float* values, std::size_t count,
                 const char* what);
void read_f64_le(std::istream& is, double* values, std::size_t count,
                 const char* what);

template <typename T>
void write_rten(std::ostream& os, const Tensor<T>& t);
template <typename T>
void write_rten(const std::filesystem::path& path, const Tensor<T>& t);

// Reads an RTEN tensor. A stored dtype that differs from T is converted
// elementwise; same-dtype round trips are bit-exact.
template <typename T>
Tensor<T> read_rten(std::istream& is);
template <typename T>
Tensor<T> read_rten(const std::filesystem::path& path);

}  // namespace reid
