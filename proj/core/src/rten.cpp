#include "reid/rten.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <limits>

namespace reid {

namespace {

void put_bytes(std::ostream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  if (!os) throw IoError("write failed");
}

void get_bytes(std::istream& is, void* p, std::size_t n, const char* what) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) {
    throw IoError(std::string("truncated ") + what);
  }
}

template <typename U>
void write_le(std::ostream& os, U v) {
  std::array<unsigned char, sizeof(U)> b;
  for (std::size_t i = 0; i < sizeof(U); ++i)
    b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  put_bytes(os, b.data(), b.size());
}

template <typename U>
U read_le(std::istream& is, const char* what) {
  std::array<unsigned char, sizeof(U)> b;
  get_bytes(is, b.data(), b.size(), what);
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i)
    v |= static_cast<U>(b[i]) << (8 * i);
  return v;
}

template <typename T>
struct dtype_of;
template <>
struct dtype_of<float> {
  static constexpr std::uint8_t value = kDtypeF32;
};
template <>
struct dtype_of<double> {
  static constexpr std::uint8_t value = kDtypeF64;
};

}  // namespace

void write_u8(std::ostream& os, std::uint8_t v) { write_le<std::uint8_t>(os, v); }
void write_u16_le(std::ostream& os, std::uint16_t v) { write_le(os, v); }
void write_u32_le(std::ostream& os, std::uint32_t v) { write_le(os, v); }
void write_i32_le(std::ostream& os, std::int32_t v) {
  write_le(os, static_cast<std::uint32_t>(v));
}
void write_u64_le(std::ostream& os, std::uint64_t v) { write_le(os, v); }

std::uint8_t read_u8(std::istream& is, const char* what) {
  return read_le<std::uint8_t>(is, what);
}
std::uint16_t read_u16_le(std::istream& is, const char* what) {
  return read_le<std::uint16_t>(is, what);
}
std::uint32_t read_u32_le(std::istream& is, const char* what) {
  return read_le<std::uint32_t>(is, what);
}
std::int32_t read_i32_le(std::istream& is, const char* what) {
  return static_cast<std::int32_t>(read_le<std::uint32_t>(is, what));
}
std::uint64_t read_u64_le(std::istream& is, const char* what) {
  return read_le<std::uint64_t>(is, what);
}

void write_f32_le(std::ostream& os, const float* values, std::size_t count) {
  if constexpr (std::endian::native == std::endian::little) {
    put_bytes(os, values, count * sizeof(float));
  } else {
    for (std::size_t i = 0; i < count; ++i)
      write_le(os, std::bit_cast<std::uint32_t>(values[i]));
  }
}

void write_f64_le(std::ostream& os, const double* values, std::size_t count) {
  if constexpr (std::endian::native == std::endian::little) {
    put_bytes(os, values, count * sizeof(double));
  } else {
    for (std::size_t i = 0; i < count; ++i)
      write_le(os, std::bit_cast<std::uint64_t>(values[i]));
  }
}

void read_f32_le(std::istream& is, float* values, std::size_t count,
                 const char* what) {
  if constexpr (std::endian::native == std::endian::little) {
    get_bytes(is, values, count * sizeof(float), what);
  } else {
    for (std::size_t i = 0; i < count; ++i)
      values[i] = std::bit_cast<float>(read_le<std::uint32_t>(is, what));
  }
}

void read_f64_le(std::istream& is, double* values, std::size_t count,
                 const char* what) {
  if constexpr (std::endian::native == std::endian::little) {
    get_bytes(is, values, count * sizeof(double), what);
  } else {
    for (std::size_t i = 0; i < count; ++i)
      values[i] = std::bit_cast<double>(read_le<std::uint64_t>(is, what));
  }
}

template <typename T>
void write_rten(std::ostream& os, const Tensor<T>& t) {
  if (t.rank() == 0 || t.rank() > 255) {
    throw IoError("RTEN rank out of range: " + std::to_string(t.rank()));
  }
  put_bytes(os, kRtenMagic, 4);
  write_u8(os, kRtenVersion);
  write_u8(os, dtype_of<T>::value);
  write_u8(os, static_cast<std::uint8_t>(t.rank()));
  for (auto d : t.dims()) {
    if (d > std::numeric_limits<std::uint32_t>::max())
      throw IoError("RTEN extent too large");
    write_u32_le(os, static_cast<std::uint32_t>(d));
  }
  if constexpr (std::is_same_v<T, float>) {
    write_f32_le(os, t.data(), t.size());
  } else {
    write_f64_le(os, t.data(), t.size());
  }
}

template <typename T>
Tensor<T> read_rten(std::istream& is) {
  char magic[4];
  get_bytes(is, magic, 4, "RTEN header");
  if (std::memcmp(magic, kRtenMagic, 4) != 0) {
    throw IoError("bad RTEN magic");
  }
  const auto version = read_u8(is, "RTEN header");
  if (version != kRtenVersion) {
    throw IoError("unsupported RTEN version " + std::to_string(version));
  }
  const auto dtype = read_u8(is, "RTEN header");
  if (dtype != kDtypeF32 && dtype != kDtypeF64) {
    throw IoError("unknown RTEN dtype " + std::to_string(dtype));
  }
  const auto rank = read_u8(is, "RTEN header");
  if (rank == 0) throw IoError("RTEN rank 0");
  std::vector<std::size_t> dims(rank);
  std::size_t count = 1;
  for (auto& d : dims) {
    d = read_u32_le(is, "RTEN dims");
    if (d == 0) throw IoError("RTEN zero extent");
    count *= d;
  }
  if (dtype == kDtypeF32) {
    std::vector<float> raw(count);
    read_f32_le(is, raw.data(), count, "RTEN payload");
    if constexpr (std::is_same_v<T, float>) {
      return Tensor<float>(std::move(dims), std::move(raw));
    } else {
      std::vector<double> out(count);
      for (std::size_t i = 0; i < count; ++i) out[i] = raw[i];
      return Tensor<double>(std::move(dims), std::move(out));
    }
  }
  std::vector<double> raw(count);
  read_f64_le(is, raw.data(), count, "RTEN payload");
  if constexpr (std::is_same_v<T, double>) {
    return Tensor<double>(std::move(dims), std::move(raw));
  } else {
    std::vector<float> out(count);
    for (std::size_t i = 0; i < count; ++i) out[i] = static_cast<float>(raw[i]);
    return Tensor<float>(std::move(dims), std::move(out));
  }
}

template <typename T>
void write_rten(const std::filesystem::path& path, const Tensor<T>& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for write: " + path.string());
  write_rten(os, t);
  os.flush();
  if (!os) throw IoError("write failed: " + path.string());
}

template <typename T>
Tensor<T> read_rten(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path.string());
  try {
    return read_rten<T>(is);
  } catch (const IoError& e) {
    throw IoError(std::string(e.what()) + " in " + path.string());
  }
}

template void write_rten<float>(std::ostream&, const Tensor<float>&);
template void write_rten<double>(std::ostream&, const Tensor<double>&);
template void write_rten<float>(const std::filesystem::path&,
                                const Tensor<float>&);
template void write_rten<double>(const std::filesystem::path&,
                                 const Tensor<double>&);
template Tensor<float> read_rten<float>(std::istream&);
template Tensor<double> read_rten<double>(std::istream&);
template Tensor<float> read_rten<float>(const std::filesystem::path&);
template Tensor<double> read_rten<double>(const std::filesystem::path&);

}  // namespace reid
