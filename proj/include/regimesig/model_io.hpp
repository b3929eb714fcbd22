#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "regimesig/error.hpp"

namespace regimesig::io {

// Shared model file layout:
//   magic "RGSIGMDL" | u32 format version | string type tag | payload
// Integers are u64 and reals are IEEE-754 binary64, both little-endian.
// Strings are a u64 byte count followed by the bytes.
inline constexpr std::array<char, 8> kMagic{'R', 'G', 'S', 'I', 'G', 'M', 'D', 'L'};
inline constexpr std::uint32_t kFormatVersion = 1;

class ModelWriter {
 public:
  ModelWriter(std::ostream& out, const std::string& type_tag) : out_(out) {
    out_.write(kMagic.data(), kMagic.size());
    write_le(kFormatVersion);
    str(type_tag);
  }

  void u64(std::uint64_t v) { write_le(v); }
  void f64(double v) { write_le(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u64(s.size());
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void f64s(std::span<const double> v) {
    u64(v.size());
    for (double x : v) f64(x);
  }
  void u64s(std::span<const std::uint64_t> v) {
    u64(v.size());
    for (auto x : v) u64(x);
  }

 private:
  template <class T>
  void write_le(T v) {
    unsigned char buf[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
    out_.write(reinterpret_cast<const char*>(buf), sizeof(T));
  }
  std::ostream& out_;
};

class ModelReader {
 public:
  ModelReader(std::istream& in, const std::string& expected_tag) : in_(in) {
    std::array<char, 8> magic{};
    in_.read(magic.data(), magic.size());
    require(in_.good() && magic == kMagic, Errc::Io, "not a model file (bad magic)");
    const auto version = read_le<std::uint32_t>();
    require(version == kFormatVersion, Errc::Io,
            "unsupported model format version " + std::to_string(version));
    const auto tag = str();
    require(tag == expected_tag, Errc::Io, "model type '" + tag + "' but expected '" + expected_tag + "'");
  }

  std::uint64_t u64() { return read_le<std::uint64_t>(); }
  double f64() { return std::bit_cast<double>(read_le<std::uint64_t>()); }
  std::string str() {
    const auto n = u64();
    require(n < (1u << 20), Errc::Io, "string too long");
    std::string s(n, '\0');
    in_.read(s.data(), static_cast<std::streamsize>(n));
    require(in_.good(), Errc::Io, "truncated model file");
    return s;
  }
  std::vector<double> f64s() {
    const auto n = u64();
    require(n < (std::uint64_t{1} << 32), Errc::Io, "array too long");
    std::vector<double> v(n);
    for (auto& x : v) x = f64();
    return v;
  }
  std::vector<std::uint64_t> u64s() {
    const auto n = u64();
    require(n < (std::uint64_t{1} << 32), Errc::Io, "array too long");
    std::vector<std::uint64_t> v(n);
    for (auto& x : v) x = u64();
    return v;
  }

 private:
  template <class T>
  T read_le() {
    unsigned char buf[sizeof(T)];
    in_.read(reinterpret_cast<char*>(buf), sizeof(T));
    require(in_.good(), Errc::Io, "truncated model file");
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(buf[i]) << (8 * i);
    return v;
  }
  std::istream& in_;
};

/// Saves any model exposing `save(std::ostream&) const`.
template <class Model>
void save_model_file(const std::string& path, const Model& m) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), Errc::Io, "cannot write " + path);
  m.save(out);
}

}  // namespace regimesig::io
