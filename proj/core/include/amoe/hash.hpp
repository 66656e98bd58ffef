#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace amoe {

/// SHA-1 of "blob <size>\0<bytes>", i.e. the id git assigns to a file.
std::string git_blob_sha1(std::string_view bytes);
std::string git_blob_sha1_file(const std::filesystem::path& path);

/// 64-bit FNV-1a, hex encoded; for cheap in-memory fingerprints.
class Fnv1a {
 public:
  void update(const void* data, std::size_t size);
  template <typename T>
  void update_value(const T& v) { update(&v, sizeof(T)); }
  std::string hex() const;

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

}  // namespace amoe
