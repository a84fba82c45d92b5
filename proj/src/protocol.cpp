#include "fedharness/protocol.hpp"

#include <algorithm>

#include "fedharness/image.hpp"
#include "fedharness/trace.hpp"

namespace fedharness {

std::string task_kind_name(TaskKind k) {
  switch (k) {
    case TaskKind::Classification: return "classification";
    case TaskKind::Segmentation: return "segmentation";
    case TaskKind::Detection: return "detection";
    case TaskKind::Regression: return "regression";
  }
  return "classification";
}

std::optional<TaskKind> task_kind_from_name(const std::string& name) {
  if (name == "classification") return TaskKind::Classification;
  if (name == "segmentation") return TaskKind::Segmentation;
  if (name == "detection") return TaskKind::Detection;
  if (name == "regression") return TaskKind::Regression;
  return std::nullopt;
}

std::string guidance_mode_name(GuidanceMode m) {
  return m == GuidanceMode::FineGrained ? "fine_grained" : "goal_oriented";
}

std::optional<GuidanceMode> guidance_mode_from_name(const std::string& name) {
  if (name == "fine_grained") return GuidanceMode::FineGrained;
  if (name == "goal_oriented") return GuidanceMode::GoalOriented;
  return std::nullopt;
}

std::string phase_name(Phase p) {
  switch (p) {
    case Phase::ClientSelection: return "client_selection";
    case Phase::DataPreprocessing: return "data_preprocessing";
    case Phase::LabelHarmonization: return "label_harmonization";
    case Phase::FederatedTraining: return "federated_training";
  }
  return "client_selection";
}

void TaskSpec::validate() const {
  if (task_kind == TaskKind::Classification && target_schema.size() < 2)
    throw HarnessError("classification task needs at least 2 target classes");
  if (objective.empty()) throw HarnessError("task objective is empty");
}

Json TaskSpec::to_json() const {
  return Json{{"modality", modality_name(modality)},
              {"task_kind", task_kind_name(task_kind)},
              {"objective", objective},
              {"target_schema", target_schema},
              {"guidance_mode", guidance_mode_name(guidance_mode)},
              {"fl_preferences", fl_preferences}};
}

TaskSpec TaskSpec::from_json(const Json& j) {
  TaskSpec t;
  auto m = modality_from_name(j.at("modality").get<std::string>());
  if (!m) throw HarnessError("unknown modality in task spec");
  t.modality = *m;
  auto k = task_kind_from_name(j.at("task_kind").get<std::string>());
  if (!k) throw HarnessError("unknown task kind in task spec");
  t.task_kind = *k;
  t.objective = j.at("objective").get<std::string>();
  t.target_schema = j.at("target_schema").get<std::vector<std::string>>();
  auto g = guidance_mode_from_name(j.at("guidance_mode").get<std::string>());
  if (!g) throw HarnessError("unknown guidance mode in task spec");
  t.guidance_mode = *g;
  t.fl_preferences = j.value("fl_preferences", std::string{});
  return t;
}

std::string RoleId::str() const {
  switch (kind) {
    case Role::User: return "user";
    case Role::S1: return "S1";
    case Role::S2: return "S2";
    case Role::S3: return "S3";
    case Role::S4: return "S4";
    case Role::C1: return "C1@" + client_id;
    case Role::C2: return "C2@" + client_id;
    case Role::C3: return "C3@" + client_id;
  }
  return "user";
}

std::optional<RoleId> RoleId::parse(const std::string& text) {
  if (text == "user") return user_role();
  if (text == "S1") return server_role(Role::S1);
  if (text == "S2") return server_role(Role::S2);
  if (text == "S3") return server_role(Role::S3);
  if (text == "S4") return server_role(Role::S4);
  if (text.size() >= 4 && text[0] == 'C' && text[2] == '@') {
    std::string cid = text.substr(3);
    if (text[1] == '1') return client_role(Role::C1, cid);
    if (text[1] == '2') return client_role(Role::C2, cid);
    if (text[1] == '3') return client_role(Role::C3, cid);
  }
  return std::nullopt;
}

std::string message_kind_name(MessageKind k) {
  switch (k) {
    case MessageKind::Query: return "query";
    case MessageKind::DatasetOffer: return "dataset_offer";
    case MessageKind::Approval: return "approval";
    case MessageKind::Config: return "config";
    case MessageKind::Status: return "status";
    case MessageKind::Error: return "error";
  }
  return "status";
}

std::optional<MessageKind> message_kind_from_name(const std::string& name) {
  if (name == "query") return MessageKind::Query;
  if (name == "dataset_offer") return MessageKind::DatasetOffer;
  if (name == "approval") return MessageKind::Approval;
  if (name == "config") return MessageKind::Config;
  if (name == "status") return MessageKind::Status;
  if (name == "error") return MessageKind::Error;
  return std::nullopt;
}

Json AgentMessage::to_json() const {
  return Json{{"seq", sequence_number},
              {"sender", sender.str()},
              {"recipient", recipient.str()},
              {"kind", message_kind_name(kind)},
              {"payload", payload}};
}

AgentMessage AgentMessage::from_json(const Json& j) {
  AgentMessage m;
  m.sequence_number = j.at("seq").get<std::uint64_t>();
  auto s = RoleId::parse(j.at("sender").get<std::string>());
  auto r = RoleId::parse(j.at("recipient").get<std::string>());
  auto k = message_kind_from_name(j.at("kind").get<std::string>());
  if (!s || !r || !k) throw HarnessError("malformed agent message");
  m.sender = *s;
  m.recipient = *r;
  m.kind = *k;
  m.payload = j.at("payload");
  return m;
}

namespace {

GuardVerdict scan_payload(const Json& node, int depth, std::size_t& nodes) {
  if (depth > PrivacyGuard::kMaxDepth) return {false, "payload nesting too deep"};
  if (++nodes > PrivacyGuard::kMaxNodes) return {false, "payload too large"};

  if (node.is_binary()) return {false, "binary blob in payload"};
  if (node.is_string()) {
    const auto& s = node.get_ref<const std::string&>();
    if (s.size() > PrivacyGuard::kMaxStringBytes) return {false, "oversized string in payload"};
    for (unsigned char c : s) {
      if (c < 0x20 && c != '\n' && c != '\r' && c != '\t')
        return {false, "control bytes in payload string"};
    }
    if (contains_image_magic(s)) return {false, "image bytes in payload"};
    return {};
  }
  if (node.is_array()) {
    if (node.size() > PrivacyGuard::kMaxNumericArray) {
      bool all_numeric = std::all_of(node.begin(), node.end(),
                                     [](const Json& e) { return e.is_number(); });
      if (all_numeric) return {false, "numeric vector in payload"};
    }
    for (const auto& e : node) {
      auto v = scan_payload(e, depth + 1, nodes);
      if (!v.ok) return v;
    }
    return {};
  }
  if (node.is_object()) {
    for (const auto& [key, value] : node.items()) {
      if (key.size() > PrivacyGuard::kMaxStringBytes) return {false, "oversized key in payload"};
      auto v = scan_payload(value, depth + 1, nodes);
      if (!v.ok) return v;
    }
    return {};
  }
  return {};
}

}  // namespace

GuardVerdict PrivacyGuard::check_payload(const Json& payload) const {
  std::size_t nodes = 0;
  return scan_payload(payload, 0, nodes);
}

GuardVerdict PrivacyGuard::check_route(const RoleId& sender, const RoleId& recipient) const {
  if (sender == recipient) return {false, "self-addressed message"};
  if (sender.is_client() && recipient.is_client()) return {false, "client-to-client route"};
  bool user_involved = sender.kind == Role::User || recipient.kind == Role::User;
  bool client_involved = sender.is_client() || recipient.is_client();
  if (user_involved && client_involved) return {false, "user-to-client route"};
  if (sender.is_client() && sender.client_id.empty()) return {false, "client role without id"};
  if (recipient.is_client() && recipient.client_id.empty())
    return {false, "client role without id"};
  return {};
}

GuardVerdict MessageBus::send(AgentMessage msg) {
  std::lock_guard<std::mutex> lock(mu_);
  auto route = guard_.check_route(msg.sender, msg.recipient);
  auto verdict = route.ok ? guard_.check_payload(msg.payload) : route;
  if (!verdict.ok) {
    // Payload deliberately omitted: rejected bytes must never reach the log.
    if (trace_)
      trace_->record("guard_denied", Json{{"sender", msg.sender.str()},
                                          {"recipient", msg.recipient.str()},
                                          {"kind", message_kind_name(msg.kind)},
                                          {"reason", verdict.reason}});
    return verdict;
  }
  msg.sequence_number = ++seq_;
  if (trace_) trace_->record("message", msg.to_json());
  inboxes_[msg.recipient].push_back(std::move(msg));
  return verdict;
}

std::optional<AgentMessage> MessageBus::poll(const RoleId& recipient) {
  std::lock_guard<std::mutex> lock(mu_);
  auto it = inboxes_.find(recipient);
  if (it == inboxes_.end() || it->second.empty()) return std::nullopt;
  AgentMessage m = std::move(it->second.front());
  it->second.pop_front();
  return m;
}

std::size_t MessageBus::pending(const RoleId& recipient) const {
  std::lock_guard<std::mutex> lock(mu_);
  auto it = inboxes_.find(recipient);
  return it == inboxes_.end() ? 0 : it->second.size();
}

std::uint64_t MessageBus::accepted_count() const {
  std::lock_guard<std::mutex> lock(mu_);
  return seq_;
}

WorkspaceView WorkspaceView::for_role(const RoleId& role, const fs::path& workspace_root) {
  WorkspaceView v;
  v.role = role;
  v.root = fs::absolute(workspace_root).lexically_normal();
  if (role.is_client()) {
    fs::path client_dir = v.root / "clients" / role.client_id;
    v.readable_roots = {client_dir, v.root / "task.json"};
    v.writable_roots = {client_dir};
  } else {
    v.readable_roots = {v.root / "server", v.root / "task.json"};
    v.writable_roots = {v.root / "server"};
  }
  return v;
}

fs::path resolve_in_workspace(const fs::path& root, const fs::path& path) {
  fs::path abs = path.is_absolute() ? path : root / path;
  return abs.lexically_normal();
}

namespace {

bool path_under(const fs::path& path, const fs::path& base) {
  auto p = path.begin();
  for (auto b = base.begin(); b != base.end(); ++b, ++p) {
    if (p == path.end() || *p != *b) return false;
  }
  return true;
}

}  // namespace

bool check_access(const WorkspaceView& view, const fs::path& path, AccessMode mode,
                  TraceLog* audit) {
  fs::path target = resolve_in_workspace(view.root, path);
  bool escape = false;
  for (const auto& part : target) {
    if (part == "..") escape = true;
  }
  bool allowed = false;
  if (!escape && target.filename() != "manifest.json") {
    const auto& roots = mode == AccessMode::Read ? view.readable_roots : view.writable_roots;
    for (const auto& r : roots) {
      if (path_under(target, r.lexically_normal())) {
        allowed = true;
        break;
      }
    }
  }
  if (!allowed && audit)
    audit->record("access_denied",
                  Json{{"role", view.role.str()},
                       {"path", path.generic_string()},
                       {"mode", mode == AccessMode::Read ? "read" : "write"}});
  return allowed;
}

}  // namespace fedharness
