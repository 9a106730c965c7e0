#pragma once

// Little-endian binary encoding helpers shared by the checkpoint and dataset
// bundle writers. Writers append to a std::string; Reader walks an in-memory
// buffer with bounds checks and throws ParseError naming the field.

#include <cstdint>
#include <cstring>
#include <string>

#include "mlrn/errors.hpp"

namespace mlrn {
namespace io {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  put_u64(out, bits);
}

class Reader {
 public:
  Reader(const char* data, std::size_t size) : data_(data), size_(size) {}
  explicit Reader(const std::string& buf) : Reader(buf.data(), buf.size()) {}

  std::size_t offset() const { return off_; }
  std::size_t remaining() const { return size_ - off_; }
  bool done() const { return off_ == size_; }

  const char* take(std::size_t n, const std::string& field) {
    if (n > remaining()) {
      throw ParseError(field + ": unexpected end of data at byte " +
                       std::to_string(off_));
    }
    const char* p = data_ + off_;
    off_ += n;
    return p;
  }

  std::uint32_t u32(const std::string& field) {
    const unsigned char* p =
        reinterpret_cast<const unsigned char*>(take(4, field));
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return v;
  }

  std::uint64_t u64(const std::string& field) {
    const unsigned char* p =
        reinterpret_cast<const unsigned char*>(take(8, field));
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
  }

  double f64(const std::string& field) {
    std::uint64_t bits = u64(field);
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
  }

  std::string bytes(std::size_t n, const std::string& field) {
    const char* p = take(n, field);
    return std::string(p, n);
  }

 private:
  const char* data_;
  std::size_t size_;
  std::size_t off_ = 0;
};

}  // namespace io
}  // namespace mlrn
