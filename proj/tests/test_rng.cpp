#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <set>

#include "fedharness/rng.hpp"

using namespace fedharness;

TEST_CASE("same seed gives the same stream") {
  RngStream a(42), b(42);
  for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("derive separates labels and never yields zero") {
  auto s1 = RngStream::derive(7, "corruption");
  auto s2 = RngStream::derive(7, "perturbation");
  auto s3 = RngStream::derive(8, "corruption");
  CHECK(s1 != s2);
  CHECK(s1 != s3);
  CHECK(RngStream::derive(0, "") != 0);
}

TEST_CASE("below stays in range and hits every residue") {
  RngStream r(1);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 2000; ++i) {
    auto v = r.below(7);
    CHECK(v < 7);
    seen.insert(v);
  }
  CHECK(seen.size() == 7);
  CHECK(r.below(0) == 0);
  CHECK(r.below(1) == 0);
}

TEST_CASE("int_in is inclusive on both ends") {
  RngStream r(2);
  bool lo_hit = false, hi_hit = false;
  for (int i = 0; i < 2000; ++i) {
    int v = r.int_in(2, 5);
    CHECK(v >= 2);
    CHECK(v <= 5);
    lo_hit |= (v == 2);
    hi_hit |= (v == 5);
  }
  CHECK(lo_hit);
  CHECK(hi_hit);
  CHECK(r.int_in(3, 3) == 3);
}

TEST_CASE("unit is in the half-open interval") {
  RngStream r(3);
  for (int i = 0; i < 10000; ++i) {
    double u = r.unit();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
}

TEST_CASE("gaussian has near-standard moments") {
  RngStream r(4);
  const int n = 200000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    double g = r.gaussian();
    sum += g;
    sq += g * g;
  }
  double mean = sum / n;
  double var = sq / n - mean * mean;
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::abs(var - 1.0) < 0.03);
}

TEST_CASE("shuffle permutes in place") {
  RngStream r(5);
  std::vector<int> v{1, 2, 3, 4, 5, 6, 7, 8};
  auto orig = v;
  r.shuffle(v);
  auto sorted = v;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == orig);
}

TEST_CASE("sample_indices draws k distinct values below n") {
  RngStream r(6);
  auto idx = r.sample_indices(10, 4);
  REQUIRE(idx.size() == 4);
  std::set<std::size_t> s(idx.begin(), idx.end());
  CHECK(s.size() == 4);
  for (auto i : idx) CHECK(i < 10);

  auto all = r.sample_indices(3, 3);
  std::sort(all.begin(), all.end());
  CHECK(all == std::vector<std::size_t>{0, 1, 2});
}

TEST_CASE("chance respects extremes") {
  RngStream r(7);
  for (int i = 0; i < 100; ++i) {
    CHECK_FALSE(r.chance(0.0));
    CHECK(r.chance(1.0));
  }
}
