#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "cedar/errors.hpp"
#include "cedar/linalg.hpp"

// Little-endian fixed-layout binary helpers shared by the file formats.
namespace cedar::binio {

inline void write_bytes_le(std::ostream& os, std::uint64_t v, int nbytes) {
  char buf[8];
  for (int i = 0; i < nbytes; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(buf, nbytes);
}

inline std::uint64_t read_bytes_le(std::istream& is, int nbytes,
                                   const char* field) {
  char buf[8];
  is.read(buf, nbytes);
  if (is.gcount() != nbytes) {
    throw FormatError(std::string("truncated file while reading ") + field);
  }
  std::uint64_t v = 0;
  for (int i = 0; i < nbytes; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[i])) << (8 * i);
  }
  return v;
}

inline void write_u32(std::ostream& os, std::uint32_t v) { write_bytes_le(os, v, 4); }
inline void write_u64(std::ostream& os, std::uint64_t v) { write_bytes_le(os, v, 8); }

inline std::uint32_t read_u32(std::istream& is, const char* field) {
  return static_cast<std::uint32_t>(read_bytes_le(is, 4, field));
}
inline std::uint64_t read_u64(std::istream& is, const char* field) {
  return read_bytes_le(is, 8, field);
}

inline void write_f64(std::ostream& os, double v) {
  write_bytes_le(os, std::bit_cast<std::uint64_t>(v), 8);
}
inline void write_f32(std::ostream& os, float v) {
  write_bytes_le(os, std::bit_cast<std::uint32_t>(v), 4);
}

inline double read_f64(std::istream& is, const char* field) {
  return std::bit_cast<double>(read_bytes_le(is, 8, field));
}
inline float read_f32(std::istream& is, const char* field) {
  return std::bit_cast<float>(
      static_cast<std::uint32_t>(read_bytes_le(is, 4, field)));
}

inline void write_magic(std::ostream& os, const char magic[4]) {
  os.write(magic, 4);
}

inline void expect_magic(std::istream& is, const char magic[4],
                         const char* format_name) {
  char buf[4];
  is.read(buf, 4);
  if (is.gcount() != 4 || std::memcmp(buf, magic, 4) != 0) {
    throw FormatError(std::string("bad magic: not a ") + format_name + " file");
  }
}

// Row-major f64 payloads for matrices and vectors.
inline void write_matrix(std::ostream& os, const Matrix& m) {
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) write_f64(os, m(i, j));
}

inline Matrix read_matrix(std::istream& is, Index rows, Index cols,
                          const char* field) {
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = read_f64(is, field);
  return m;
}

inline void write_vector(std::ostream& os, const Vector& v) {
  for (Index i = 0; i < v.size(); ++i) write_f64(os, v(i));
}

inline Vector read_vector(std::istream& is, Index n, const char* field) {
  Vector v(n);
  for (Index i = 0; i < n; ++i) v(i) = read_f64(is, field);
  return v;
}

}  // namespace cedar::binio
