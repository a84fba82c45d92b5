#pragma once

#include <chrono>
#include <fstream>
#include <mutex>
#include <vector>

#include "fedharness/common.hpp"

namespace fedharness {

struct TraceEvent {
  std::uint64_t seq = 0;
  double t = 0.0;
  std::string type;
  Json data;

  Json to_json() const;
  static TraceEvent from_json(const Json& j);
};

// Append-only episode log. In deterministic mode (the default) timestamps
// come from a logical tick counter so identical runs serialize to identical
// bytes; wall-clock mode is opt-in for live measurements.
class TraceLog {
 public:
  TraceLog() = default;

  void open(const fs::path& file);
  void set_wall_clock(bool enabled);
  bool wall_clock() const { return wall_clock_; }

  void record(const std::string& type, Json data);

  // Last issued timestamp; does not advance the clock.
  double now() const;

  const std::vector<TraceEvent>& events() const { return events_; }
  std::string full_text() const;

  static std::vector<TraceEvent> load(const fs::path& file);

 private:
  mutable std::mutex mu_;
  std::vector<TraceEvent> events_;
  std::ofstream sink_;
  bool wall_clock_ = false;
  std::uint64_t ticks_ = 0;
  std::chrono::steady_clock::time_point epoch_ = std::chrono::steady_clock::now();
};

}  // namespace fedharness
