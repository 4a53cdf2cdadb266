#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "npr/core/common.hpp"

namespace npr {

// Little-endian binary IO. The build targets LE hosts; a static check keeps
// the file formats honest.
inline void require_little_endian() {
  uint16_t probe = 1;
  uint8_t b;
  std::memcpy(&b, &probe, 1);
  if (b != 1) throw DataError("big-endian hosts are not supported by the file formats");
}

class BinWriter {
 public:
  explicit BinWriter(const std::string& path)
      : f_(path, std::ios::binary | std::ios::trunc) {
    require_little_endian();
    if (!f_) throw DataError("cannot open for writing: " + path);
  }
  void raw(const void* p, size_t n) { f_.write(static_cast<const char*>(p), std::streamsize(n)); }
  template <typename T>
  void pod(const T& v) { raw(&v, sizeof(T)); }
  void u32(uint32_t v) { pod(v); }
  void u64(uint64_t v) { pod(v); }
  void i32(int32_t v) { pod(v); }
  void f64(double v) { pod(v); }
  void str(const std::string& s) {
    u64(s.size());
    raw(s.data(), s.size());
  }
  template <typename T>
  void vec(const std::vector<T>& v) {
    u64(v.size());
    raw(v.data(), v.size() * sizeof(T));
  }
  void close() {
    f_.close();
    if (!f_) throw DataError("write failed");
  }

 private:
  std::ofstream f_;
};

class BinReader {
 public:
  explicit BinReader(const std::string& path) : f_(path, std::ios::binary) {
    require_little_endian();
    if (!f_) throw DataError("cannot open for reading: " + path);
  }
  void raw(void* p, size_t n) {
    f_.read(static_cast<char*>(p), std::streamsize(n));
    if (size_t(f_.gcount()) != n) throw DataError("truncated file");
  }
  template <typename T>
  T pod() {
    T v;
    raw(&v, sizeof(T));
    return v;
  }
  uint32_t u32() { return pod<uint32_t>(); }
  uint64_t u64() { return pod<uint64_t>(); }
  int32_t i32() { return pod<int32_t>(); }
  double f64() { return pod<double>(); }
  std::string str() {
    uint64_t n = u64();
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }
  template <typename T>
  std::vector<T> vec() {
    uint64_t n = u64();
    std::vector<T> v(n);
    raw(v.data(), n * sizeof(T));
    return v;
  }
  bool eof() { return f_.peek() == EOF; }

 private:
  std::ifstream f_;
};

}  // namespace npr
