#pragma once

#include <atomic>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "fedharness/agent.hpp"
#include "fedharness/protocol.hpp"
#include "fedharness/toolkit.hpp"
#include "fedharness/trace.hpp"

namespace fedharness {

struct PhaseOutcome {
  Phase phase = Phase::ClientSelection;
  // Mechanical completion only; quality scoring fills `success` later and
  // never comes from the cores themselves.
  bool completed = false;
  bool success = false;
  std::string failure_reason;  // budget_exhausted | transport | core_error | no_clients_selected
  Json artifacts;
  double elapsed_seconds = 0.0;
  std::int64_t tokens = 0;
  int tool_calls = 0;

  Json to_json() const;
  static PhaseOutcome from_json(const Json& j);
};

struct EpisodeOptions {
  CoreBudget budget;
  int jobs = 1;  // >1 parallelizes per-client work in the two client phases
  std::uint64_t seed = 1;
  int training_rounds = 20;
  bool wall_clock = false;
};

using CoreFactory = std::function<std::unique_ptr<AgentCore>(const RoleId&)>;

struct EpisodeResult {
  TaskSpec task;
  std::vector<PhaseOutcome> outcomes;
  std::vector<std::string> selected_clients;
  std::int64_t total_tokens = 0;
  int total_tool_calls = 0;
  std::string core_kind;

  Json to_json() const;
  static EpisodeResult from_json(const Json& j);
};

// Drives one episode over an already generated workspace: the four phases in
// fixed order, each a set of role conversations wired through the message
// bus and the toolkit. Artifacts (trace, change log, episode record) land in
// artifacts_dir, outside the workspace tree.
class EpisodeRunner {
 public:
  EpisodeRunner(fs::path workspace, fs::path artifacts_dir, CoreFactory factory,
                EpisodeOptions options = {});

  EpisodeResult run(const TaskSpec& task);

  TraceLog& trace() { return trace_; }
  const fs::path& artifacts_dir() const { return artifacts_dir_; }

 private:
  struct ConversationOutcome {
    RoleId role;
    bool finished = false;
    std::string reason;
    Json final_body = Json::object();
    int tool_calls = 0;
    TokenUsage tokens;
  };

  ConversationOutcome run_conversation(const RoleId& role, const PhaseContext& ctx);
  PhaseOutcome run_phase(Phase phase, const TaskSpec& task);
  std::vector<ConversationOutcome> run_client_wave(Role kind,
                                                   const std::vector<std::string>& clients,
                                                   const PhaseContext& base_ctx);

  fs::path workspace_;
  fs::path artifacts_dir_;
  CoreFactory factory_;
  EpisodeOptions options_;
  TraceLog trace_;
  ChangeLog changes_;
  Toolkit toolkit_;
  MessageBus bus_;
  std::vector<std::string> client_ids_;
  std::vector<std::string> selected_clients_;
  bool selection_completed_ = false;
  std::atomic<std::int64_t> episode_tokens_{0};
  std::string core_kind_;
};

}  // namespace fedharness
