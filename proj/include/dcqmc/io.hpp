#pragma once

// File plumbing shared by the artifact formats: whole-file text/JSON
// reading and writing, and a little-endian binary reader/writer pair.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "dcqmc/errors.hpp"
#include "json.hpp"

namespace dcqmc {

using Json = nlohmann::json;

static_assert(std::endian::native == std::endian::little, "binary artifact formats assume a little-endian host");

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::vector<std::uint8_t> read_binary_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidArgument("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  write_file(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

inline Json read_json_file(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what(), e.byte);
  }
}

inline void write_json_file(const std::filesystem::path& path, const Json& j) { write_file(path, j.dump(1) + "\n"); }

class BinaryWriter {
 public:
  template <class T>
  void put(T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }

  template <class T>
  void put_span(std::span<const T> values) {
    for (const T& v : values) put(v);
  }

  void put_bytes(std::span<const std::uint8_t> b) { bytes_.insert(bytes_.end(), b.begin(), b.end()); }

  void put_magic(const char (&magic)[5]) { put_bytes({reinterpret_cast<const std::uint8_t*>(magic), 4}); }

  const std::vector<std::uint8_t>& bytes() const noexcept { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class BinaryReader {
 public:
  BinaryReader(std::span<const std::uint8_t> bytes, std::string name) : bytes_(bytes), name_(std::move(name)) {}

  template <class T>
  T get() {
    static_assert(std::is_trivially_copyable_v<T>);
    require(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  template <class T>
  std::vector<T> get_vector(std::size_t count) {
    require(count * sizeof(T));
    std::vector<T> out(count);
    if (count) std::memcpy(out.data(), bytes_.data() + pos_, count * sizeof(T));
    pos_ += count * sizeof(T);
    return out;
  }

  void expect_magic(const char (&magic)[5]) {
    require(4);
    if (std::memcmp(bytes_.data() + pos_, magic, 4) != 0)
      throw FormatError(name_ + ": bad magic, expected '" + std::string(magic) + "'", pos_);
    pos_ += 4;
  }

  void require(std::size_t count) const {
    if (pos_ + count > bytes_.size())
      throw FormatError(name_ + ": truncated, need " + std::to_string(pos_ + count) + " bytes, have " +
                            std::to_string(bytes_.size()),
                        pos_);
  }

  std::size_t position() const noexcept { return pos_; }
  bool at_end() const noexcept { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::string name_;
  std::size_t pos_ = 0;
};

/// 64-bit FNV-1a, used for content hashes in run manifests.
inline std::uint64_t fnv1a(std::span<const std::uint8_t> bytes, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()}, h);
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << v;
  return os.str();
}

}  // namespace dcqmc
