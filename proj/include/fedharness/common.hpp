#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace fedharness {

// Ordered JSON everywhere serialization reaches disk, so byte-identical
// output is a function of content alone.
using Json = nlohmann::ordered_json;

namespace fs = std::filesystem;

class HarnessError : public std::runtime_error {
 public:
  explicit HarnessError(const std::string& what) : std::runtime_error(what) {}
};

// FNV-1a 64-bit. Stable across platforms; used for content hashes,
// substream derivation, and split assignment.
inline std::uint64_t fnv1a64(const void* data, std::size_t len,
                             std::uint64_t seed = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a64(std::string_view s,
                             std::uint64_t seed = 0xcbf29ce484222325ull) {
  return fnv1a64(s.data(), s.size(), seed);
}

std::string hex64(std::uint64_t v);

std::vector<std::uint8_t> read_file_bytes(const fs::path& path);
std::string read_file_text(const fs::path& path);
void write_file_bytes(const fs::path& path, const void* data, std::size_t len);
void write_file_text(const fs::path& path, std::string_view text);

// Directory listings sorted by name. Filesystem iteration order is
// unspecified, and every consumer here needs determinism.
std::vector<fs::path> sorted_dir_entries(const fs::path& dir);
std::vector<fs::path> sorted_recursive_files(const fs::path& dir);

std::uint64_t hash_file(const fs::path& path);
std::uint64_t hash_tree(const fs::path& root);  // names + contents

void copy_tree(const fs::path& from, const fs::path& to);

Json load_json_file(const fs::path& path);
void save_json_file(const fs::path& path, const Json& j);

std::string lowercase(std::string s);

}  // namespace fedharness
