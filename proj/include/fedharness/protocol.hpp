#pragma once

#include <compare>
#include <deque>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "fedharness/common.hpp"
#include "fedharness/modality.hpp"

namespace fedharness {

class TraceLog;

enum class TaskKind { Classification, Segmentation, Detection, Regression };
std::string task_kind_name(TaskKind k);
std::optional<TaskKind> task_kind_from_name(const std::string& name);

enum class GuidanceMode { FineGrained, GoalOriented };
std::string guidance_mode_name(GuidanceMode m);
std::optional<GuidanceMode> guidance_mode_from_name(const std::string& name);

enum class Phase { ClientSelection, DataPreprocessing, LabelHarmonization, FederatedTraining };
constexpr int kPhaseCount = 4;
std::string phase_name(Phase p);

// The user-defined task. Written next to the workspace at generation time;
// agents read it through their views, the evaluator through the manifest echo.
struct TaskSpec {
  Modality modality = Modality::Dermatoscopy;
  TaskKind task_kind = TaskKind::Classification;
  std::string objective;
  std::vector<std::string> target_schema;  // ordered coarse class names
  GuidanceMode guidance_mode = GuidanceMode::FineGrained;
  std::string fl_preferences;

  void validate() const;  // classification needs >= 2 target classes
  Json to_json() const;
  static TaskSpec from_json(const Json& j);
};

enum class Role { User, S1, S2, S3, S4, C1, C2, C3 };

// A role instance. Server roles and the user carry no client id; client
// roles are bound to exactly one client.
struct RoleId {
  Role kind = Role::User;
  std::string client_id;

  bool is_client() const { return kind == Role::C1 || kind == Role::C2 || kind == Role::C3; }
  bool is_server() const {
    return kind == Role::S1 || kind == Role::S2 || kind == Role::S3 || kind == Role::S4;
  }
  std::string str() const;  // "S1", "C2@c3", "user"
  static std::optional<RoleId> parse(const std::string& text);

  auto operator<=>(const RoleId&) const = default;
};

inline RoleId server_role(Role kind) { return RoleId{kind, ""}; }
inline RoleId client_role(Role kind, const std::string& client_id) {
  return RoleId{kind, client_id};
}
inline RoleId user_role() { return RoleId{Role::User, ""}; }

enum class MessageKind { Query, DatasetOffer, Approval, Config, Status, Error };
std::string message_kind_name(MessageKind k);
std::optional<MessageKind> message_kind_from_name(const std::string& name);

struct AgentMessage {
  RoleId sender;
  RoleId recipient;
  MessageKind kind = MessageKind::Status;
  Json payload;  // scalars, strings, path tokens, nested records thereof
  std::uint64_t sequence_number = 0;

  Json to_json() const;
  static AgentMessage from_json(const Json& j);
};

struct GuardVerdict {
  bool ok = true;
  std::string reason;
};

// Enforces the orchestration-layer contract: payloads limited to small
// structured records (no blobs, no parameter vectors, no image bytes) and
// routes limited to the server/client plane.
class PrivacyGuard {
 public:
  GuardVerdict check_payload(const Json& payload) const;
  GuardVerdict check_route(const RoleId& sender, const RoleId& recipient) const;

  static constexpr std::size_t kMaxStringBytes = 2048;
  static constexpr std::size_t kMaxNumericArray = 64;
  static constexpr int kMaxDepth = 16;
  static constexpr std::size_t kMaxNodes = 4096;
};

// Ordered in-process message bus. Accepted messages get strictly increasing
// sequence numbers and are logged in full; rejected messages are logged
// without their payload so forbidden bytes never reach the trace.
class MessageBus {
 public:
  explicit MessageBus(TraceLog* trace = nullptr) : trace_(trace) {}

  GuardVerdict send(AgentMessage msg);
  std::optional<AgentMessage> poll(const RoleId& recipient);
  std::size_t pending(const RoleId& recipient) const;
  std::uint64_t accepted_count() const;

 private:
  mutable std::mutex mu_;
  std::map<RoleId, std::deque<AgentMessage>> inboxes_;
  std::uint64_t seq_ = 0;
  PrivacyGuard guard_;
  TraceLog* trace_;
};

// Filesystem scope of one role: servers see only the task file and the
// server directory, client roles only their own client directory.
struct WorkspaceView {
  RoleId role;
  fs::path root;  // workspace root
  std::vector<fs::path> readable_roots;
  std::vector<fs::path> writable_roots;

  static WorkspaceView for_role(const RoleId& role, const fs::path& workspace_root);
};

enum class AccessMode { Read, Write };

// Lexical containment check. Paths may be workspace-relative or absolute;
// traversal escapes and the manifest are denied and audited.
bool check_access(const WorkspaceView& view, const fs::path& path, AccessMode mode,
                  TraceLog* audit = nullptr);

// Resolves a workspace-relative or absolute path to its normalized absolute
// form without consulting access rules.
fs::path resolve_in_workspace(const fs::path& root, const fs::path& path);

}  // namespace fedharness
