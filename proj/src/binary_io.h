#pragma once

// Little-endian binary record helpers shared by trajectory and checkpoint
// files. Reads throw FormatError on short input.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>

#include "koi/common.h"

namespace koi::detail {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

class BinaryWriter {
 public:
  explicit BinaryWriter(std::ostream& out) : out_(out) {}

  template <typename T>
    requires std::is_arithmetic_v<T>
  void put(T value) {
    out_.write(reinterpret_cast<const char*>(&value), sizeof(T));
  }

  void put_string(const std::string& s) {
    put<std::uint64_t>(s.size());
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }

  void put_doubles(const double* data, std::size_t n) {
    out_.write(reinterpret_cast<const char*>(data),
               static_cast<std::streamsize>(n * sizeof(double)));
  }

  template <typename Derived>
  void put_matrix(const Eigen::DenseBase<Derived>& m) {
    put<std::uint64_t>(m.rows());
    put<std::uint64_t>(m.cols());
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) put<double>(m(r, c));
  }

  bool ok() const { return static_cast<bool>(out_); }

 private:
  std::ostream& out_;
};

class BinaryReader {
 public:
  explicit BinaryReader(std::istream& in) : in_(in) {}

  template <typename T>
    requires std::is_arithmetic_v<T>
  T get() {
    T value{};
    read_raw(reinterpret_cast<char*>(&value), sizeof(T));
    return value;
  }

  std::string get_string(std::uint64_t max_len = 1 << 20) {
    auto n = get<std::uint64_t>();
    if (n > max_len) throw FormatError("string length out of range");
    std::string s(n, '\0');
    read_raw(s.data(), n);
    return s;
  }

  void get_doubles(double* data, std::size_t n) {
    read_raw(reinterpret_cast<char*>(data), n * sizeof(double));
  }

  Matrix get_matrix(std::uint64_t max_elems = std::uint64_t{1} << 32) {
    auto rows = get<std::uint64_t>();
    auto cols = get<std::uint64_t>();
    if (cols != 0 && rows > max_elems / cols)
      throw FormatError("matrix size out of range");
    Matrix m(rows, cols);
    for (std::uint64_t r = 0; r < rows; ++r)
      for (std::uint64_t c = 0; c < cols; ++c) m(r, c) = get<double>();
    return m;
  }

  // True when the stream has no bytes left.
  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

 private:
  void read_raw(char* dst, std::size_t n) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n)
      throw FormatError("unexpected end of file");
  }

  std::istream& in_;
};

}  // namespace koi::detail
