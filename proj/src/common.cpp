#include "fedharness/common.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

namespace fedharness {

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

std::vector<std::uint8_t> read_file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw HarnessError("cannot open file: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

std::string read_file_text(const fs::path& path) {
  auto bytes = read_file_bytes(path);
  return std::string(bytes.begin(), bytes.end());
}

void write_file_bytes(const fs::path& path, const void* data, std::size_t len) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw HarnessError("cannot write file: " + path.string());
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(len));
  if (!out) throw HarnessError("short write: " + path.string());
}

void write_file_text(const fs::path& path, std::string_view text) {
  write_file_bytes(path, text.data(), text.size());
}

std::vector<fs::path> sorted_dir_entries(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<fs::path> sorted_recursive_files(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::uint64_t hash_file(const fs::path& path) {
  auto bytes = read_file_bytes(path);
  return fnv1a64(bytes.data(), bytes.size());
}

std::uint64_t hash_tree(const fs::path& root) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& p : sorted_recursive_files(root)) {
    std::string rel = fs::relative(p, root).generic_string();
    h = fnv1a64(rel, h);
    auto bytes = read_file_bytes(p);
    h = fnv1a64(bytes.data(), bytes.size(), h);
  }
  return h;
}

void copy_tree(const fs::path& from, const fs::path& to) {
  fs::create_directories(to);
  fs::copy(from, to, fs::copy_options::recursive);
}

Json load_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw HarnessError("cannot open file: " + path.string());
  Json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw HarnessError("parse error in " + path.string() + ": " + e.what());
  }
  return j;
}

void save_json_file(const fs::path& path, const Json& j) {
  write_file_text(path, j.dump(2) + "\n");
}

std::string lowercase(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

}  // namespace fedharness
