#pragma once

// Little-endian-on-disk helpers shared by the dataset cache and checkpoints.
// Values are written in native byte order; every supported target is
// little-endian, which the magic header check would expose otherwise.

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "nvhcf/autodiff.hpp"
#include "nvhcf/errors.hpp"

namespace nvhcf::detail {

class BinaryWriter {
 public:
  explicit BinaryWriter(const std::filesystem::path& path) : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw IoError("cannot open " + path.string() + " for writing");
  }

  template <typename T>
    requires std::is_trivially_copyable_v<T>
  void pod(const T& v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }

  void u32(std::uint32_t v) { pod(v); }
  void u64(std::uint64_t v) { pod(v); }
  void f64(double v) { pod(v); }

  void bytes(std::string_view s) { out_.write(s.data(), static_cast<std::streamsize>(s.size())); }

  void string(std::string_view s) {
    u64(s.size());
    bytes(s);
  }

  template <typename T>
    requires std::is_trivially_copyable_v<T>
  void vector(const std::vector<T>& v) {
    u64(v.size());
    if (!v.empty()) out_.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(T)));
  }

  void strings(const std::vector<std::string>& v) {
    u64(v.size());
    for (const auto& s : v) string(s);
  }

  void matrix(const autodiff::Matrix& m) {
    u64(static_cast<std::uint64_t>(m.rows()));
    u64(static_cast<std::uint64_t>(m.cols()));
    out_.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  }

  void vec(const autodiff::Vector& v) {
    u64(static_cast<std::uint64_t>(v.size()));
    out_.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  }

  void finish() {
    out_.flush();
    if (!out_) throw IoError("write failed for " + path_.string());
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

class BinaryReader {
 public:
  explicit BinaryReader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw IoError("cannot open " + path.string());
  }

  template <typename T>
    requires std::is_trivially_copyable_v<T>
  T pod() {
    T v{};
    read(reinterpret_cast<char*>(&v), sizeof(T));
    return v;
  }

  std::uint32_t u32() { return pod<std::uint32_t>(); }
  std::uint64_t u64() { return pod<std::uint64_t>(); }
  double f64() { return pod<double>(); }

  void expect(std::string_view magic) {
    std::string got(magic.size(), '\0');
    read(got.data(), got.size());
    if (got != magic) throw IoError(path_.string() + ": bad magic header (not a " + std::string(magic.substr(0, 5)) + " file)");
  }

  std::string string() {
    const auto n = length(1);
    std::string s(n, '\0');
    read(s.data(), n);
    return s;
  }

  template <typename T>
    requires std::is_trivially_copyable_v<T>
  std::vector<T> vector() {
    const auto n = length(sizeof(T));
    std::vector<T> v(n);
    if (n != 0) read(reinterpret_cast<char*>(v.data()), n * sizeof(T));
    return v;
  }

  std::vector<std::string> strings() {
    const auto n = length(8);
    std::vector<std::string> v;
    v.reserve(n);
    for (std::size_t k = 0; k < n; ++k) v.push_back(string());
    return v;
  }

  autodiff::Matrix matrix() {
    const auto rows = u64();
    const auto cols = u64();
    if (cols != 0 && rows > remaining() / sizeof(double) / cols) throw IoError(path_.string() + ": truncated matrix");
    autodiff::Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    read(reinterpret_cast<char*>(m.data()), static_cast<std::size_t>(m.size()) * sizeof(double));
    return m;
  }

  autodiff::Vector vec() {
    const auto n = length(sizeof(double));
    autodiff::Vector v(static_cast<Eigen::Index>(n));
    read(reinterpret_cast<char*>(v.data()), n * sizeof(double));
    return v;
  }

  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

 private:
  std::size_t remaining() {
    const auto here = in_.tellg();
    in_.seekg(0, std::ios::end);
    const auto end = in_.tellg();
    in_.seekg(here);
    return static_cast<std::size_t>(end - here);
  }

  std::size_t length(std::size_t element_size) {
    const auto n = u64();
    if (n > remaining() / element_size) throw IoError(path_.string() + ": truncated or corrupt length field");
    return static_cast<std::size_t>(n);
  }

  void read(char* dst, std::size_t n) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) throw IoError(path_.string() + ": unexpected end of file");
  }

  std::filesystem::path path_;
  std::ifstream in_;
};

}  // namespace nvhcf::detail
