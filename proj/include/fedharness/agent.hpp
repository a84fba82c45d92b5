#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fedharness/common.hpp"
#include "fedharness/protocol.hpp"

namespace fedharness {

struct TokenUsage {
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;

  std::int64_t total() const { return prompt_tokens + completion_tokens; }
  TokenUsage& operator+=(const TokenUsage& o) {
    prompt_tokens += o.prompt_tokens;
    completion_tokens += o.completion_tokens;
    return *this;
  }
};

struct CoreBudget {
  int max_tool_calls_per_phase = 40;
  std::int64_t max_tokens_per_episode = 200000;
};

struct ConversationTurn {
  enum class Speaker { Core, Feedback };
  Speaker speaker = Speaker::Core;
  std::string text;
};

struct Conversation {
  RoleId role;
  std::string system_prompt;
  std::vector<ConversationTurn> turns;
  TokenUsage tokens;  // stays zero for scripted cores
};

// Everything a core may know beyond the conversation itself. Mirrors the
// rendered prompt so scripted cores need not parse their own prompt text.
struct PhaseContext {
  Phase phase = Phase::ClientSelection;
  TaskSpec task;
  RoleId role;
  std::vector<std::string> client_ids;
  std::vector<std::string> selected_clients;
  std::uint64_t episode_seed = 1;
  int training_rounds = 20;
};

struct CoreReply {
  std::string text;
  TokenUsage usage;
};

// A core is a pure function of (conversation so far, phase context, and for
// the noisy variant its seed); all workspace effects go through tools.
class AgentCore {
 public:
  virtual ~AgentCore() = default;
  virtual std::string kind() const = 0;
  virtual std::string name() const = 0;
  virtual CoreReply respond(const Conversation& conv, const PhaseContext& ctx) = 0;

  CoreBudget budget;
};

struct TransportError : HarnessError {
  using HarnessError::HarnessError;
};

// One fenced block per turn: tool, message, or final.
struct ParsedAction {
  enum class Kind { Tool, Message, Final, Malformed };
  Kind kind = Kind::Malformed;
  std::string tool;
  Json args;
  RoleId to;
  MessageKind message_kind = MessageKind::Status;
  Json payload;
  Json body;
  std::string error;
};

ParsedAction parse_core_output(const std::string& text);
std::string tool_block(const std::string& tool, const Json& args);
std::string message_block(const RoleId& to, MessageKind kind, const Json& payload);
std::string final_block(const Json& body);

class OracleCore : public AgentCore {
 public:
  std::string kind() const override { return "scripted_oracle"; }
  std::string name() const override { return "oracle"; }
  CoreReply respond(const Conversation& conv, const PhaseContext& ctx) override;
};

// Replays the oracle plan but flips each atomic decision with probability p.
// Flips are keyed by (seed, decision site), so raising p only adds flips and
// measured quality degrades monotonically along that coupling.
class NoisyCore : public AgentCore {
 public:
  NoisyCore(double flip_probability, std::uint64_t seed)
      : p_(flip_probability), seed_(seed) {}
  std::string kind() const override { return "scripted_noisy"; }
  std::string name() const override { return "noisy"; }
  CoreReply respond(const Conversation& conv, const PhaseContext& ctx) override;

 private:
  double p_;
  std::uint64_t seed_;
};

// Chat-style text-generation endpoint speaking role-tagged message lists.
class RemoteCore : public AgentCore {
 public:
  struct Endpoint {
    std::string url;
    std::string key;
    std::string model = "default";
    int timeout_secs = 60;

    // ENDPOINT_URL, ENDPOINT_KEY, MODEL_NAME, REQUEST_TIMEOUT_SECS
    static std::optional<Endpoint> from_environment();
  };

  explicit RemoteCore(Endpoint endpoint) : endpoint_(std::move(endpoint)) {}
  std::string kind() const override { return "remote_llm"; }
  std::string name() const override { return endpoint_.model; }
  CoreReply respond(const Conversation& conv, const PhaseContext& ctx) override;

 private:
  Endpoint endpoint_;
};

// kind_name: scripted_oracle | scripted_noisy | remote_llm
std::unique_ptr<AgentCore> make_core(const std::string& kind_name, double noise = 0.0,
                                     std::uint64_t seed = 1);

}  // namespace fedharness
