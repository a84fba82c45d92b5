#pragma once

#include <cstdint>
#include <filesystem>
#include <mutex>
#include <string>
#include <vector>

#include "fedharness/common.hpp"
#include "fedharness/protocol.hpp"
#include "fedharness/trace.hpp"

namespace fedharness {

struct ToolCall {
  std::string tool_name;
  Json arguments;  // flat record; array/object values only where a schema declares them
  RoleId caller;
};

struct ToolResult {
  bool ok = false;
  std::string summary;
  Json data = Json::object();
  std::string error_kind;  // schema_violation | access_denied | missing_path |
                           // unknown_tool | role_not_assigned | not_text |
                           // config_invalid | execution_error

  Json to_json() const;
  static ToolResult failure(const std::string& kind, const std::string& summary);
};

struct ToolArgSpec {
  std::string name;
  std::string type;  // string | int | number | bool | string_array | string_map | object
  bool required = true;
};

struct ToolSpec {
  std::string name;
  std::vector<std::string> roles;  // role kinds ("C1", "S4", ...)
  std::vector<ToolArgSpec> args;
  std::string description;
};

const std::vector<ToolSpec>& tool_specs();
const ToolSpec* find_tool(const std::string& name);
bool tool_assigned_to(const ToolSpec& spec, Role role);
Json tool_manifest_json();

// Append-only record of every workspace mutation. Tools route all effects
// through apply_change_op, so replaying the log against a pristine copy of
// the workspace reproduces the final tree byte for byte.
struct ChangeRecord {
  std::uint64_t seq = 0;
  std::string tool;
  std::string role;
  Json op;

  Json to_json() const;
  static ChangeRecord from_json(const Json& j);
};

class ChangeLog {
 public:
  void open(const fs::path& path);
  void append(const std::string& tool, const std::string& role, Json op);
  const std::vector<ChangeRecord>& records() const { return records_; }
  static std::vector<ChangeRecord> load(const fs::path& path);

 private:
  mutable std::mutex mu_;
  std::vector<ChangeRecord> records_;
  fs::path path_;
};

void apply_change_op(const fs::path& workspace_root, const Json& op);
void replay_change_log(const fs::path& workspace_root, const std::vector<ChangeRecord>& records);

// Executes tool calls for agents. Errors come back as ok=false results and
// are never thrown past invoke(). Paths in arguments are workspace-relative
// and must pass the caller's view; launch_training feeds the trainer channel
// directly, so only aggregate numbers ever surface in its result.
class Toolkit {
 public:
  Toolkit(fs::path workspace_root, TraceLog* trace = nullptr, ChangeLog* changes = nullptr);

  ToolResult invoke(const ToolCall& call);

  const fs::path& root() const { return root_; }

 private:
  ToolResult dispatch(const ToolCall& call, const WorkspaceView& view);

  fs::path root_;
  TraceLog* trace_ = nullptr;
  ChangeLog* changes_ = nullptr;
};

}  // namespace fedharness
