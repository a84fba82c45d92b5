#include "fedharness/trace.hpp"

#include <chrono>
#include <sstream>

namespace fedharness {

Json TraceEvent::to_json() const {
  return Json{{"seq", seq}, {"t", t}, {"type", type}, {"data", data}};
}

TraceEvent TraceEvent::from_json(const Json& j) {
  TraceEvent e;
  e.seq = j.at("seq").get<std::uint64_t>();
  e.t = j.at("t").get<double>();
  e.type = j.at("type").get<std::string>();
  e.data = j.at("data");
  return e;
}

void TraceLog::open(const fs::path& file) {
  std::lock_guard<std::mutex> lock(mu_);
  fs::create_directories(file.parent_path());
  sink_.open(file, std::ios::trunc);
  if (!sink_) throw HarnessError("cannot open trace file: " + file.string());
  for (const auto& e : events_) sink_ << e.to_json().dump() << "\n";
  sink_.flush();
}

void TraceLog::set_wall_clock(bool enabled) {
  std::lock_guard<std::mutex> lock(mu_);
  wall_clock_ = enabled;
}

void TraceLog::record(const std::string& type, Json data) {
  std::lock_guard<std::mutex> lock(mu_);
  TraceEvent e;
  e.seq = events_.size() + 1;
  ++ticks_;
  if (wall_clock_) {
    e.t = std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_).count();
  } else {
    e.t = static_cast<double>(ticks_) * 0.001;
  }
  e.type = type;
  e.data = std::move(data);
  events_.push_back(e);
  if (sink_.is_open()) {
    sink_ << events_.back().to_json().dump() << "\n";
    sink_.flush();
  }
}

double TraceLog::now() const {
  std::lock_guard<std::mutex> lock(mu_);
  if (wall_clock_)
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_).count();
  return static_cast<double>(ticks_) * 0.001;
}

std::string TraceLog::full_text() const {
  std::lock_guard<std::mutex> lock(mu_);
  std::string out;
  for (const auto& e : events_) {
    out += e.to_json().dump();
    out += "\n";
  }
  return out;
}

std::vector<TraceEvent> TraceLog::load(const fs::path& file) {
  std::vector<TraceEvent> out;
  std::istringstream lines(read_file_text(file));
  std::string line;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    out.push_back(TraceEvent::from_json(Json::parse(line)));
  }
  return out;
}

}  // namespace fedharness
