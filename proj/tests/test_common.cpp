#include "doctest.h"

#include "fedharness/common.hpp"

using namespace fedharness;

namespace {

fs::path make_temp_dir(const std::string& tag) {
  fs::path dir = fs::temp_directory_path() / ("fh_common_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("fnv1a64 matches published vectors") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ull);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cull);
  CHECK(fnv1a64("foobar") == 0x85944171f73967e8ull);
}

TEST_CASE("hex64 pads to 16 digits") {
  CHECK(hex64(0) == "0000000000000000");
  CHECK(hex64(0xdeadbeefull) == "00000000deadbeef");
  CHECK(hex64(0xffffffffffffffffull) == "ffffffffffffffff");
}

TEST_CASE("file io roundtrips binary content") {
  auto dir = make_temp_dir("io");
  fs::path f = dir / "blob.bin";
  std::vector<std::uint8_t> data{0, 1, 2, 255, 128, 10, 13, 0};
  write_file_bytes(f, data.data(), data.size());
  CHECK(read_file_bytes(f) == data);
  write_file_text(f, "hello\nworld");
  CHECK(read_file_text(f) == "hello\nworld");
  fs::remove_all(dir);
}

TEST_CASE("read of missing file throws") {
  CHECK_THROWS_AS(read_file_bytes("/nonexistent/nowhere.bin"), HarnessError);
}

TEST_CASE("sorted listings are name-ordered") {
  auto dir = make_temp_dir("sorted");
  write_file_text(dir / "b.txt", "b");
  write_file_text(dir / "a.txt", "a");
  fs::create_directories(dir / "sub");
  write_file_text(dir / "sub" / "c.txt", "c");

  auto entries = sorted_dir_entries(dir);
  REQUIRE(entries.size() == 3);
  CHECK(entries[0].filename() == "a.txt");
  CHECK(entries[1].filename() == "b.txt");
  CHECK(entries[2].filename() == "sub");

  auto files = sorted_recursive_files(dir);
  REQUIRE(files.size() == 3);
  CHECK(files[0].filename() == "a.txt");
  CHECK(files[2].filename() == "c.txt");
  fs::remove_all(dir);
}

TEST_CASE("hash_tree covers names and contents") {
  auto a = make_temp_dir("tree_a");
  auto b = make_temp_dir("tree_b");
  for (const auto& dir : {a, b}) {
    write_file_text(dir / "x.txt", "same");
    fs::create_directories(dir / "d");
    write_file_text(dir / "d" / "y.txt", "also same");
  }
  CHECK(hash_tree(a) == hash_tree(b));

  SUBCASE("content change moves the hash") {
    write_file_text(b / "x.txt", "different");
    CHECK(hash_tree(a) != hash_tree(b));
  }
  SUBCASE("rename moves the hash") {
    fs::rename(b / "x.txt", b / "z.txt");
    CHECK(hash_tree(a) != hash_tree(b));
  }
  SUBCASE("copy_tree reproduces the hash") {
    auto c = fs::temp_directory_path() / "fh_common_tree_c";
    fs::remove_all(c);
    copy_tree(a, c);
    CHECK(hash_tree(a) == hash_tree(c));
    fs::remove_all(c);
  }
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("json files keep insertion order") {
  auto dir = make_temp_dir("json");
  Json j;
  j["zulu"] = 1;
  j["alpha"] = Json{{"nested", true}};
  j["mike"] = Json::array({1, 2, 3});
  fs::path f = dir / "doc.json";
  save_json_file(f, j);

  std::string text = read_file_text(f);
  CHECK(text.find("zulu") < text.find("alpha"));
  CHECK(text.find("alpha") < text.find("mike"));
  CHECK(text.back() == '\n');

  Json back = load_json_file(f);
  CHECK(back == j);
  fs::remove_all(dir);
}

TEST_CASE("load_json_file rejects malformed input") {
  auto dir = make_temp_dir("badjson");
  fs::path f = dir / "bad.json";
  write_file_text(f, "{not json");
  CHECK_THROWS_AS(load_json_file(f), HarnessError);
  fs::remove_all(dir);
}

TEST_CASE("lowercase") {
  CHECK(lowercase("FedAvg") == "fedavg");
  CHECK(lowercase("already lower 42") == "already lower 42");
}
