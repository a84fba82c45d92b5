#include "fedharness/runtime.hpp"

#include <algorithm>
#include <thread>

#include "fedharness/prompts.hpp"

namespace fedharness {

namespace {

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string out;
  for (const auto& p : parts) {
    if (!out.empty()) out += sep;
    out += p;
  }
  return out;
}

std::string feedback_text(Json j) { return j.dump(); }

}  // namespace

Json PhaseOutcome::to_json() const {
  return Json{{"phase", phase_name(phase)},
              {"completed", completed},
              {"success", success},
              {"failure_reason", failure_reason},
              {"artifacts", artifacts},
              {"elapsed_seconds", elapsed_seconds},
              {"tokens", tokens},
              {"tool_calls", tool_calls}};
}

PhaseOutcome PhaseOutcome::from_json(const Json& j) {
  PhaseOutcome o;
  const std::string name = j.value("phase", "client_selection");
  for (int i = 0; i < kPhaseCount; ++i)
    if (phase_name(static_cast<Phase>(i)) == name) o.phase = static_cast<Phase>(i);
  o.completed = j.value("completed", false);
  o.success = j.value("success", false);
  o.failure_reason = j.value("failure_reason", "");
  o.artifacts = j.value("artifacts", Json::object());
  o.elapsed_seconds = j.value("elapsed_seconds", 0.0);
  o.tokens = j.value("tokens", std::int64_t{0});
  o.tool_calls = j.value("tool_calls", 0);
  return o;
}

Json EpisodeResult::to_json() const {
  Json phases = Json::array();
  for (const auto& o : outcomes) phases.push_back(o.to_json());
  return Json{{"task", task.to_json()},
              {"phases", phases},
              {"selected_clients", selected_clients},
              {"total_tokens", total_tokens},
              {"total_tool_calls", total_tool_calls},
              {"core_kind", core_kind}};
}

EpisodeResult EpisodeResult::from_json(const Json& j) {
  EpisodeResult r;
  r.task = TaskSpec::from_json(j.at("task"));
  for (const auto& p : j.value("phases", Json::array()))
    r.outcomes.push_back(PhaseOutcome::from_json(p));
  r.selected_clients = j.value("selected_clients", std::vector<std::string>{});
  r.total_tokens = j.value("total_tokens", std::int64_t{0});
  r.total_tool_calls = j.value("total_tool_calls", 0);
  r.core_kind = j.value("core_kind", "");
  return r;
}

EpisodeRunner::EpisodeRunner(fs::path workspace, fs::path artifacts_dir, CoreFactory factory,
                             EpisodeOptions options)
    : workspace_(std::move(workspace)),
      artifacts_dir_(std::move(artifacts_dir)),
      factory_(std::move(factory)),
      options_(options),
      toolkit_(workspace_, &trace_, &changes_),
      bus_(&trace_) {
  fs::create_directories(artifacts_dir_);
  trace_.set_wall_clock(options_.wall_clock);
  trace_.open(artifacts_dir_ / "trace.ndjson");
  changes_.open(artifacts_dir_ / "changes.ndjson");
  for (const auto& entry : sorted_dir_entries(workspace_ / "clients"))
    if (fs::is_directory(entry)) client_ids_.push_back(entry.filename().string());
}

EpisodeRunner::ConversationOutcome EpisodeRunner::run_conversation(const RoleId& role,
                                                                   const PhaseContext& ctx) {
  ConversationOutcome out;
  out.role = role;
  auto core = factory_(role);
  core->budget = options_.budget;
  if (core_kind_.empty()) core_kind_ = core->kind();

  Conversation conv;
  conv.role = role;
  conv.system_prompt = render_template(
      prompt_template(role.kind, ctx.phase, ctx.task.guidance_mode),
      {{"role", role.str()},
       {"objective", ctx.task.objective},
       {"modality", modality_name(ctx.task.modality)},
       {"task_kind", task_kind_name(ctx.task.task_kind)},
       {"target_schema", join(ctx.task.target_schema, ", ")},
       {"fl_preferences", ctx.task.fl_preferences},
       {"tool_budget", std::to_string(options_.budget.max_tool_calls_per_phase)}});

  trace_.record("conversation_start", Json{{"role", role.str()}, {"phase", phase_name(ctx.phase)}});
  while (auto msg = bus_.poll(role)) {
    conv.turns.push_back({ConversationTurn::Speaker::Feedback,
                          feedback_text(Json{{"type", "message"},
                                             {"from", msg->sender.str()},
                                             {"kind", message_kind_name(msg->kind)},
                                             {"payload", msg->payload}})});
  }

  const int max_turns = std::max(8, 2 * options_.budget.max_tool_calls_per_phase + 16);
  std::string reason = "budget_exhausted";
  for (int turn = 0; turn < max_turns; ++turn) {
    if (episode_tokens_.load() >= options_.budget.max_tokens_per_episode) {
      reason = "budget_exhausted";
      break;
    }
    CoreReply reply;
    try {
      reply = core->respond(conv, ctx);
    } catch (const TransportError& e) {
      trace_.record("core_error", Json{{"role", role.str()}, {"error", e.what()}});
      reason = "transport";
      break;
    } catch (const std::exception& e) {
      trace_.record("core_error", Json{{"role", role.str()}, {"error", e.what()}});
      reason = "core_error";
      break;
    }
    conv.tokens += reply.usage;
    out.tokens += reply.usage;
    episode_tokens_.fetch_add(reply.usage.total());
    conv.turns.push_back({ConversationTurn::Speaker::Core, reply.text});

    ParsedAction action = parse_core_output(reply.text);
    switch (action.kind) {
      case ParsedAction::Kind::Final:
        trace_.record("core_turn", Json{{"role", role.str()}, {"kind", "final"}});
        out.finished = true;
        out.final_body = action.body;
        break;
      case ParsedAction::Kind::Tool: {
        trace_.record("core_turn",
                      Json{{"role", role.str()}, {"kind", "tool"}, {"tool", action.tool}});
        if (out.tool_calls >= options_.budget.max_tool_calls_per_phase) {
          reason = "budget_exhausted";
          out.finished = false;
          trace_.record("budget_exhausted", Json{{"role", role.str()}, {"kind", "tool_calls"}});
          break;
        }
        ++out.tool_calls;
        ToolResult result = toolkit_.invoke({action.tool, action.args, role});
        conv.turns.push_back(
            {ConversationTurn::Speaker::Feedback,
             feedback_text(
                 Json{{"type", "tool_result"}, {"tool", action.tool}, {"result", result.to_json()}})});
        continue;
      }
      case ParsedAction::Kind::Message: {
        trace_.record("core_turn", Json{{"role", role.str()}, {"kind", "message"}});
        GuardVerdict verdict =
            bus_.send({role, action.to, action.message_kind, action.payload, 0});
        conv.turns.push_back(
            {ConversationTurn::Speaker::Feedback,
             feedback_text(verdict.ok ? Json{{"type", "sent"}}
                                      : Json{{"type", "send_denied"}, {"reason", verdict.reason}})});
        continue;
      }
      case ParsedAction::Kind::Malformed: {
        trace_.record("core_turn",
                      Json{{"role", role.str()}, {"kind", "parse_error"}, {"error", action.error}});
        // counts against the tool budget so a babbling core cannot loop forever
        if (out.tool_calls >= options_.budget.max_tool_calls_per_phase) {
          reason = "budget_exhausted";
          break;
        }
        ++out.tool_calls;
        conv.turns.push_back({ConversationTurn::Speaker::Feedback,
                              feedback_text(Json{{"type", "parse_error"}, {"error", action.error}})});
        continue;
      }
    }
    break;
  }
  if (out.finished) reason.clear();
  out.reason = reason;
  trace_.record("conversation_end", Json{{"role", role.str()},
                                         {"finished", out.finished},
                                         {"reason", out.reason},
                                         {"tool_calls", out.tool_calls}});
  return out;
}

std::vector<EpisodeRunner::ConversationOutcome> EpisodeRunner::run_client_wave(
    Role kind, const std::vector<std::string>& clients, const PhaseContext& base_ctx) {
  std::vector<ConversationOutcome> outcomes(clients.size());
  auto work = [&](std::size_t i) {
    PhaseContext ctx = base_ctx;
    ctx.role = client_role(kind, clients[i]);
    outcomes[i] = run_conversation(ctx.role, ctx);
  };
  if (options_.jobs <= 1 || clients.size() <= 1) {
    for (std::size_t i = 0; i < clients.size(); ++i) work(i);
    return outcomes;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  const std::size_t n_threads =
      std::min<std::size_t>(static_cast<std::size_t>(options_.jobs), clients.size());
  for (std::size_t t = 0; t < n_threads; ++t)
    pool.emplace_back([&] {
      for (std::size_t i = next.fetch_add(1); i < clients.size(); i = next.fetch_add(1)) work(i);
    });
  for (auto& th : pool) th.join();
  return outcomes;
}

PhaseOutcome EpisodeRunner::run_phase(Phase phase, const TaskSpec& task) {
  PhaseOutcome outcome;
  outcome.phase = phase;
  trace_.record("phase_start", Json{{"phase", phase_name(phase)}});
  const double t0 = trace_.now();

  PhaseContext ctx;
  ctx.phase = phase;
  ctx.task = task;
  ctx.client_ids = client_ids_;
  ctx.selected_clients = selected_clients_;
  ctx.episode_seed = options_.seed;
  ctx.training_rounds = options_.training_rounds;

  auto absorb = [&](const ConversationOutcome& c) {
    outcome.tokens += c.tokens.total();
    outcome.tool_calls += c.tool_calls;
    if (!c.finished && outcome.failure_reason.empty())
      outcome.failure_reason = c.reason.empty() ? "core_error" : c.reason;
  };

  // A mechanically failed selection falls back to every client so later
  // phases still attempt work; a completed-but-empty selection stays empty.
  const std::vector<std::string>& wave =
      !selected_clients_.empty() ? selected_clients_
      : selection_completed_    ? selected_clients_
                                : client_ids_;

  switch (phase) {
    case Phase::ClientSelection: {
      bus_.send({user_role(), server_role(Role::S1), MessageKind::Query,
                 Json{{"objective", task.objective},
                      {"modality", modality_name(task.modality)},
                      {"task_kind", task_kind_name(task.task_kind)},
                      {"target_schema", task.target_schema},
                      {"fl_preferences", task.fl_preferences}},
                 0});
      ctx.role = server_role(Role::S1);
      auto s1 = run_conversation(ctx.role, ctx);
      absorb(s1);
      for (const auto& cid : client_ids_) {
        PhaseContext cctx = ctx;
        cctx.role = client_role(Role::C1, cid);
        absorb(run_conversation(cctx.role, cctx));
      }
      ctx.role = server_role(Role::S2);
      auto s2 = run_conversation(ctx.role, ctx);
      absorb(s2);
      // drain the approval notice sent to the user
      while (bus_.poll(user_role())) {
      }
      if (s2.finished && s2.final_body.contains("selected")) {
        selected_clients_.clear();
        for (const auto& c : s2.final_body.at("selected"))
          selected_clients_.push_back(c.get<std::string>());
        std::sort(selected_clients_.begin(), selected_clients_.end());
      }
      outcome.artifacts = Json{{"selected", selected_clients_},
                               {"justifications", s2.final_body.value("justifications", Json::object())},
                               {"queried", s1.final_body.value("queried", Json::array())}};
      outcome.completed = outcome.failure_reason.empty() && s2.finished;
      selection_completed_ = outcome.completed;
      break;
    }
    case Phase::DataPreprocessing: {
      auto waves = run_client_wave(Role::C2, wave, ctx);
      Json per_client = Json::object();
      for (std::size_t i = 0; i < wave.size(); ++i) {
        absorb(waves[i]);
        per_client[wave[i]] = waves[i].final_body;
      }
      outcome.artifacts = Json{{"clients", per_client},
                               {"change_records", changes_.records().size()},
                               {"selection_fallback", selected_clients_.empty()}};
      outcome.completed = outcome.failure_reason.empty() && !wave.empty();
      if (wave.empty()) outcome.failure_reason = "no_clients_selected";
      break;
    }
    case Phase::LabelHarmonization: {
      auto waves = run_client_wave(Role::C3, wave, ctx);
      Json per_client = Json::object();
      for (std::size_t i = 0; i < wave.size(); ++i) {
        absorb(waves[i]);
        per_client[wave[i]] = waves[i].final_body;
      }
      outcome.artifacts = Json{{"clients", per_client},
                               {"selection_fallback", selected_clients_.empty()}};
      outcome.completed = outcome.failure_reason.empty() && !wave.empty();
      if (wave.empty()) outcome.failure_reason = "no_clients_selected";
      break;
    }
    case Phase::FederatedTraining: {
      ctx.selected_clients = wave;
      ctx.role = server_role(Role::S3);
      auto s3 = run_conversation(ctx.role, ctx);
      absorb(s3);
      ctx.role = server_role(Role::S4);
      auto s4 = run_conversation(ctx.role, ctx);
      absorb(s4);
      outcome.artifacts = Json{{"algorithm", s3.final_body.value("algorithm", "")},
                               {"rationale", s3.final_body.value("rationale", "")},
                               {"launch", s4.final_body.value("launch", Json::object())},
                               {"clients", wave}};
      outcome.completed = outcome.failure_reason.empty() && s3.finished && s4.finished;
      break;
    }
  }

  outcome.elapsed_seconds = trace_.now() - t0;
  trace_.record("phase_end", Json{{"phase", phase_name(phase)},
                                  {"completed", outcome.completed},
                                  {"failure_reason", outcome.failure_reason},
                                  {"tool_calls", outcome.tool_calls},
                                  {"tokens", outcome.tokens}});
  return outcome;
}

EpisodeResult EpisodeRunner::run(const TaskSpec& task) {
  EpisodeResult result;
  result.task = task;
  trace_.record("episode_start",
                Json{{"task", task.to_json()},
                     {"clients", client_ids_},
                     {"budget", Json{{"tool_calls_per_phase", options_.budget.max_tool_calls_per_phase},
                                     {"tokens_per_episode", options_.budget.max_tokens_per_episode}}},
                     {"jobs", options_.jobs},
                     {"seed", options_.seed}});
  for (int i = 0; i < kPhaseCount; ++i)
    result.outcomes.push_back(run_phase(static_cast<Phase>(i), task));
  result.selected_clients = selected_clients_;
  for (const auto& o : result.outcomes) {
    result.total_tokens += o.tokens;
    result.total_tool_calls += o.tool_calls;
  }
  result.core_kind = core_kind_;
  trace_.record("episode_end", Json{{"total_tokens", result.total_tokens},
                                    {"total_tool_calls", result.total_tool_calls}});
  save_json_file(artifacts_dir_ / "episode.json", result.to_json());
  return result;
}

}  // namespace fedharness
