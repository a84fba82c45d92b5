#include "fedharness/agent.hpp"

#include <algorithm>
#include <cstdlib>
#include <deque>
#include <map>
#include <set>
#include <utility>

#include "fedharness/fedcore.hpp"
#include "fedharness/image.hpp"
#include "fedharness/modality.hpp"
#include "fedharness/registry.hpp"

#include "httplib.h"

namespace fedharness {

namespace {

std::string fenced(const std::string& tag, const Json& body) {
  return "```" + tag + "\n" + body.dump() + "\n```\n";
}

}  // namespace

std::string tool_block(const std::string& tool, const Json& args) {
  return fenced("tool", Json{{"tool", tool}, {"args", args}});
}

std::string message_block(const RoleId& to, MessageKind kind, const Json& payload) {
  return fenced("message",
                Json{{"to", to.str()}, {"kind", message_kind_name(kind)}, {"payload", payload}});
}

std::string final_block(const Json& body) { return fenced("final", body); }

ParsedAction parse_core_output(const std::string& text) {
  ParsedAction out;
  auto fail = [&](const std::string& why) {
    out.kind = ParsedAction::Kind::Malformed;
    out.error = why;
    return out;
  };

  auto open = text.find("```");
  if (open == std::string::npos) return fail("no fenced block");
  auto tag_end = text.find('\n', open);
  if (tag_end == std::string::npos) return fail("unterminated fence tag");
  std::string tag = text.substr(open + 3, tag_end - open - 3);
  while (!tag.empty() && (tag.back() == ' ' || tag.back() == '\r')) tag.pop_back();
  auto close = text.find("```", tag_end + 1);
  if (close == std::string::npos) return fail("unterminated fenced block");
  if (text.find("```", close + 3) != std::string::npos)
    return fail("more than one fenced block");
  std::string content = text.substr(tag_end + 1, close - tag_end - 1);

  Json body = Json::parse(content, nullptr, false);
  if (body.is_discarded()) return fail("block is not valid structured text");

  if (tag == "tool") {
    if (!body.is_object() || !body.contains("tool") || !body.at("tool").is_string())
      return fail("tool block needs a tool name");
    out.kind = ParsedAction::Kind::Tool;
    out.tool = body.at("tool").get<std::string>();
    out.args = body.value("args", Json::object());
    if (!out.args.is_object()) return fail("tool args must be a record");
    return out;
  }
  if (tag == "message") {
    if (!body.is_object() || !body.contains("to") || !body.at("to").is_string())
      return fail("message block needs a recipient");
    auto to = RoleId::parse(body.at("to").get<std::string>());
    if (!to) return fail("unknown recipient role");
    auto kind = message_kind_from_name(body.value("kind", "status"));
    if (!kind) return fail("unknown message kind");
    out.kind = ParsedAction::Kind::Message;
    out.to = *to;
    out.message_kind = *kind;
    out.payload = body.value("payload", Json::object());
    return out;
  }
  if (tag == "final") {
    out.kind = ParsedAction::Kind::Final;
    out.body = std::move(body);
    return out;
  }
  return fail("unknown block tag: " + tag);
}

namespace {

// One executed step: the action the core emitted and the feedback it got.
struct ActionRecord {
  ParsedAction action;
  Json feedback;
};

struct Digest {
  std::vector<Json> inbox;  // messages delivered before the first core turn
  std::vector<ActionRecord> done;
};

Digest digest_conversation(const Conversation& conv) {
  Digest d;
  bool seen_core = false;
  for (std::size_t i = 0; i < conv.turns.size(); ++i) {
    const auto& turn = conv.turns[i];
    if (turn.speaker == ConversationTurn::Speaker::Feedback) {
      if (!seen_core) {
        Json j = Json::parse(turn.text, nullptr, false);
        if (!j.is_discarded() && j.value("type", "") == "message") d.inbox.push_back(j);
      }
      continue;
    }
    seen_core = true;
    ActionRecord rec;
    rec.action = parse_core_output(turn.text);
    if (i + 1 < conv.turns.size() &&
        conv.turns[i + 1].speaker == ConversationTurn::Speaker::Feedback) {
      Json j = Json::parse(conv.turns[i + 1].text, nullptr, false);
      if (!j.is_discarded()) rec.feedback = std::move(j);
    }
    d.done.push_back(std::move(rec));
  }
  return d;
}

// Deterministic replay: walking the plan over the recorded steps either
// consumes a recorded result or stages the first not-yet-executed action.
class PlanCursor {
 public:
  explicit PlanCursor(const Digest& d) : d_(d) {}

  // Returned pointers stay valid for the whole respond() call.
  const Json* tool(const std::string& name, Json args) {
    if (staged_) return nullptr;
    if (i_ < d_.done.size()) {
      results_.push_back(d_.done[i_++].feedback.value("result", Json::object()));
      return &results_.back();
    }
    staged_ = tool_block(name, args);
    return nullptr;
  }

  bool message(const RoleId& to, MessageKind kind, Json payload) {
    if (staged_) return false;
    if (i_ < d_.done.size()) {
      ++i_;
      return true;
    }
    staged_ = message_block(to, kind, payload);
    return false;
  }

  void final(Json body) {
    if (!staged_) staged_ = final_block(body);
  }

  std::string take() {
    if (!staged_) return final_block(Json{{"note", "nothing left to do"}});
    return *staged_;
  }

 private:
  const Digest& d_;
  std::size_t i_ = 0;
  std::deque<Json> results_;
  std::optional<std::string> staged_;
};

bool result_ok(const Json& r) { return r.value("ok", false); }

// Atomic decision hooks. The oracle takes every decision straight; the noisy
// policy flips them site by site.
class DecisionPolicy {
 public:
  virtual ~DecisionPolicy() = default;
  virtual bool include_client(const std::string&, bool matches) { return matches; }
  virtual bool remove_file(const std::string&, bool flagged) { return flagged; }
  virtual bool normalize_dataset(const std::string&) { return true; }
  virtual std::vector<std::pair<std::string, std::string>> map_label(
      const std::string&, const std::string& fine, const std::string& truth,
      const std::vector<std::string>&) {
    if (truth.empty()) return {};
    return {{fine, truth}};
  }
  virtual std::string pick_algorithm(const std::string& truth) { return truth; }
  virtual int training_rounds(int rounds) { return rounds; }
};

class FlipPolicy : public DecisionPolicy {
 public:
  FlipPolicy(double p, std::uint64_t seed) : p_(p), seed_(seed) {}

  bool include_client(const std::string& cid, bool matches) override {
    return flip("select/" + cid) ? !matches : matches;
  }
  bool remove_file(const std::string& rel, bool flagged) override {
    return flip("file/" + rel) ? !flagged : flagged;
  }
  bool normalize_dataset(const std::string& ds) override { return !flip("normalize/" + ds); }
  std::vector<std::pair<std::string, std::string>> map_label(
      const std::string& ds, const std::string& fine, const std::string& truth,
      const std::vector<std::string>& schema) override {
    const std::string site = "label/" + ds + "/" + fine;
    if (!flip(site) || schema.empty())
      return DecisionPolicy::map_label(ds, fine, truth, schema);
    const std::uint64_t h = fnv1a64(site + "/mode#" + std::to_string(seed_));
    const std::string wrong = schema[h % schema.size()];
    switch (h % 3) {
      case 0: return {{fine, wrong}};
      case 1: return {};
      default: {
        const std::string base = truth.empty() ? wrong : truth;
        std::string other = schema[(h + 1) % schema.size()];
        if (other == base && schema.size() > 1) other = schema[(h + 2) % schema.size()];
        return {{fine, base}, {fine, other}};
      }
    }
  }
  std::string pick_algorithm(const std::string& truth) override {
    if (!flip("algorithm")) return truth;
    const auto& reg = algorithm_registry();
    return reg[fnv1a64("algorithm/pick#" + std::to_string(seed_)) % reg.size()].id;
  }
  int training_rounds(int rounds) override { return flip("config/rounds") ? 0 : rounds; }

 private:
  bool flip(const std::string& site) const {
    const std::uint64_t h = fnv1a64(site + "#" + std::to_string(seed_));
    return static_cast<double>(h >> 11) * 0x1.0p-53 < p_;
  }

  double p_;
  std::uint64_t seed_;
};

bool is_image_name(const std::string& name) {
  return is_image_extension(lowercase(fs::path(name).extension().string()));
}

void plan_selection_s1(PlanCursor& cur, const PhaseContext& ctx) {
  for (const auto& cid : ctx.client_ids) {
    Json payload{{"modality", modality_name(ctx.task.modality)},
                 {"task_kind", task_kind_name(ctx.task.task_kind)},
                 {"target_schema", ctx.task.target_schema},
                 {"objective", ctx.task.objective}};
    if (!cur.message(client_role(Role::C1, cid), MessageKind::Query, payload)) return;
  }
  cur.final(Json{{"queried", ctx.client_ids}});
}

void plan_selection_c1(PlanCursor& cur, const PhaseContext& ctx, const Digest& d) {
  Json query;
  for (const auto& m : d.inbox)
    if (m.value("kind", "") == "query") query = m.value("payload", Json::object());
  const std::string cid = ctx.role.client_id;
  const Json* card = cur.tool("read_datacard", Json{{"client", cid}});
  if (!card) return;
  Json offers = Json::array();
  if (result_ok(*card)) {
    for (const auto& ds : card->at("data").value("datasets", Json::array())) {
      if (ds.value("modality", "") != query.value("modality", "")) continue;
      if (ds.value("task_kind", "") != query.value("task_kind", "")) continue;
      int samples = 0;
      const Json counts = ds.value("sample_counts", Json::object());
      for (const auto& [cls, n] : counts.items()) samples += n.get<int>();
      offers.push_back(Json{{"name", ds.value("dataset_name", "")},
                            {"modality", ds.value("modality", "")},
                            {"classes", ds.value("label_set", Json::array())},
                            {"samples", samples}});
    }
  }
  const bool match = !offers.empty();
  Json payload{{"client_id", cid}, {"match", match}, {"datasets", offers}};
  if (!cur.message(server_role(Role::S2), MessageKind::DatasetOffer, payload)) return;
  cur.final(Json{{"match", match}});
}

void plan_selection_s2(PlanCursor& cur, const PhaseContext& ctx, const Digest& d,
                       DecisionPolicy& policy) {
  std::map<std::string, Json> offers;
  for (const auto& m : d.inbox)
    if (m.value("kind", "") == "dataset_offer") {
      Json p = m.value("payload", Json::object());
      offers[p.value("client_id", "")] = p;
    }
  std::vector<std::string> selected;
  Json justifications = Json::object();
  for (const auto& [cid, offer] : offers) {
    if (cid.empty()) continue;
    const bool matches = offer.value("match", false);
    const bool include = policy.include_client(cid, matches);
    std::string names;
    for (const auto& ds : offer.value("datasets", Json::array())) {
      if (!names.empty()) names += ", ";
      names += ds.value("name", "");
    }
    if (include)
      justifications[cid] = matches
                                ? "offered matching data (" + names + ") for the task modality"
                                : "included despite an empty offer";
    else
      justifications[cid] = matches ? "matching offer set aside" : "no dataset matches the task";
    if (include) selected.push_back(cid);
  }
  std::sort(selected.begin(), selected.end());
  (void)ctx;
  if (!cur.message(user_role(), MessageKind::Approval, Json{{"selected", selected}})) return;
  cur.final(Json{{"selected", selected}, {"justifications", justifications}});
}

void plan_preprocessing_c2(PlanCursor& cur, const PhaseContext& ctx, DecisionPolicy& policy) {
  const std::string cid = ctx.role.client_id;
  const std::string croot = "clients/" + cid;
  const Json* top = cur.tool("list_dir", Json{{"path", croot}});
  if (!top) return;
  if (!result_ok(*top)) {
    cur.final(Json{{"aborted", "cannot list client directory"}});
    return;
  }
  std::vector<std::string> datasets;
  for (const auto& e : top->at("data").at("entries"))
    if (e.value("kind", "") == "dir") datasets.push_back(e.value("name", ""));

  Json per_dataset = Json::array();
  for (const auto& ds : datasets) {
    const std::string rel = croot + "/" + ds;
    const Json* listing = cur.tool("list_dir", Json{{"path", rel}});
    if (!listing) return;
    bool flat = false;
    for (const auto& e : listing->at("data").at("entries")) {
      const std::string name = e.value("name", "");
      if (e.value("kind", "") == "file" && is_image_name(name) &&
          name.find("__") != std::string::npos)
        flat = true;
    }
    if (flat) {
      const Json* moved = cur.tool("restructure_by_class", Json{{"dataset", rel}});
      if (!moved) return;
      listing = cur.tool("list_dir", Json{{"path", rel}});
      if (!listing) return;
    }

    std::set<std::string> flagged;
    std::vector<std::string> images;
    for (const auto& e : listing->at("data").at("entries")) {
      const std::string name = e.value("name", "");
      if (e.value("kind", "") == "file") {
        if (is_image_name(name))
          images.push_back(rel + "/" + name);
        else
          flagged.insert(rel + "/" + name);
        continue;
      }
      const Json* sub = cur.tool("list_dir", Json{{"path", rel + "/" + name}});
      if (!sub) return;
      for (const auto& f : sub->at("data").at("entries")) {
        const std::string fname = f.value("name", "");
        if (f.value("kind", "") != "file") continue;
        if (is_image_name(fname))
          images.push_back(rel + "/" + name + "/" + fname);
        else
          flagged.insert(rel + "/" + name + "/" + fname);
      }
    }

    const Json* dup = cur.tool("detect_duplicates", Json{{"dataset", rel}});
    if (!dup) return;
    if (result_ok(*dup))
      for (const auto& group : dup->at("data").at("groups"))
        for (std::size_t i = 1; i < group.size(); ++i)
          flagged.insert(group[i].get<std::string>());
    const Json* outliers = cur.tool("detect_outliers", Json{{"dataset", rel}});
    if (!outliers) return;
    if (result_ok(*outliers)) {
      for (const auto& p : outliers->at("data").at("off_modality"))
        flagged.insert(p.get<std::string>());
      for (const auto& p : outliers->at("data").at("suspect_labels"))
        flagged.insert(p.get<std::string>());
    }

    std::vector<std::string> doomed;
    for (const auto& p : flagged)
      if (policy.remove_file(p, true)) doomed.push_back(p);
    for (const auto& p : images)
      if (!flagged.count(p) && policy.remove_file(p, false)) doomed.push_back(p);
    std::sort(doomed.begin(), doomed.end());
    if (!doomed.empty()) {
      const Json* removed = cur.tool("remove_files", Json{{"paths", doomed}});
      if (!removed) return;
    }
    bool normalized = policy.normalize_dataset(rel);
    if (normalized) {
      const Json* norm = cur.tool("normalize_images", Json{{"dataset", rel}});
      if (!norm) return;
    }
    per_dataset.push_back(Json{{"dataset", ds},
                               {"removed", doomed.size()},
                               {"normalized", normalized}});
  }
  cur.final(Json{{"client", cid}, {"datasets", per_dataset}});
}

void plan_harmonization_c3(PlanCursor& cur, const PhaseContext& ctx, DecisionPolicy& policy) {
  const std::string cid = ctx.role.client_id;
  const std::string croot = "clients/" + cid;
  const Json* top = cur.tool("list_dir", Json{{"path", croot}});
  if (!top) return;
  if (!result_ok(*top)) {
    cur.final(Json{{"aborted", "cannot list client directory"}});
    return;
  }
  std::vector<std::string> datasets;
  for (const auto& e : top->at("data").at("entries"))
    if (e.value("kind", "") == "dir") datasets.push_back(e.value("name", ""));

  const auto& schema = ctx.task.target_schema;
  Json table = Json::array();
  for (const auto& ds : datasets) {
    const std::string rel = croot + "/" + ds;
    const Json* labels = cur.tool("enumerate_labels", Json{{"dataset", rel}});
    if (!labels) return;
    if (!result_ok(*labels)) continue;
    Json mapping = Json::object();
    for (const auto& l : labels->at("data").at("labels")) {
      const std::string fine = l.get<std::string>();
      std::string truth;
      if (std::find(schema.begin(), schema.end(), fine) != schema.end()) {
        truth = fine;
      } else if (auto coarse = coarse_class_of(ctx.task.modality, fine);
                 coarse && std::find(schema.begin(), schema.end(), *coarse) != schema.end()) {
        truth = *coarse;
      }
      for (const auto& [f, c] : policy.map_label(rel, fine, truth, schema)) {
        table.push_back(Json{{"dataset", ds}, {"fine", f}, {"coarse", c}});
        if (!mapping.contains(f)) mapping[f] = c;
      }
    }
    if (!mapping.empty()) {
      const Json* applied =
          cur.tool("apply_label_mapping", Json{{"dataset", rel}, {"mapping", mapping}});
      if (!applied) return;
    }
  }
  cur.final(Json{{"client", cid}, {"mapping", table}});
}

void plan_training_s3(PlanCursor& cur, const PhaseContext& ctx, DecisionPolicy& policy) {
  const Json* reg =
      cur.tool("query_algorithm_registry", Json{{"filter", ctx.task.fl_preferences}});
  if (!reg) return;
  std::string truth = "fedavg";
  std::string because = "default aggregation baseline";
  if (result_ok(*reg)) {
    const auto& data = reg->at("data");
    std::map<std::string, bool> executable;
    for (const auto& row : data.value("algorithms", Json::array()))
      executable[row.value("id", "")] = row.value("executable", false);
    const auto suggested = data.value("suggested", std::vector<std::string>{});
    for (const auto& id : suggested)
      if (executable[id]) {
        truth = id;
        because = "matches the stated preferences and ships an executable engine";
        break;
      }
    if (truth == "fedavg" && !suggested.empty() && suggested[0] != "fedavg") {
      truth = suggested[0];
      because = "matches the stated preferences; descriptor only";
    }
  }
  const std::string algo = policy.pick_algorithm(truth);
  const std::string rationale = algo == truth ? because : "chosen over the suggested set";
  Json payload{{"algorithm", algo}, {"rationale", rationale}};
  if (!cur.message(server_role(Role::S4), MessageKind::Config, payload)) return;
  cur.final(payload);
}

void plan_training_s4(PlanCursor& cur, const PhaseContext& ctx, const Digest& d,
                      DecisionPolicy& policy) {
  std::string algo = "fedavg";
  for (const auto& m : d.inbox)
    if (m.value("kind", "") == "config")
      algo = m.value("payload", Json::object()).value("algorithm", algo);

  TrainingConfig cfg;
  cfg.algorithm = algo;
  cfg.rounds = policy.training_rounds(ctx.training_rounds);
  cfg.model.num_classes = static_cast<int>(ctx.task.target_schema.size());
  cfg.seed = ctx.episode_seed;
  const Json* launched = cur.tool(
      "launch_training", Json{{"config", cfg.to_json()}, {"clients", ctx.selected_clients}});
  if (!launched) return;
  cur.final(Json{{"launch", *launched}});
}

std::string scripted_step(const Conversation& conv, const PhaseContext& ctx,
                          DecisionPolicy& policy) {
  Digest d = digest_conversation(conv);
  PlanCursor cur(d);
  switch (ctx.phase) {
    case Phase::ClientSelection:
      if (ctx.role.kind == Role::S1) plan_selection_s1(cur, ctx);
      if (ctx.role.kind == Role::C1) plan_selection_c1(cur, ctx, d);
      if (ctx.role.kind == Role::S2) plan_selection_s2(cur, ctx, d, policy);
      break;
    case Phase::DataPreprocessing:
      if (ctx.role.kind == Role::C2) plan_preprocessing_c2(cur, ctx, policy);
      break;
    case Phase::LabelHarmonization:
      if (ctx.role.kind == Role::C3) plan_harmonization_c3(cur, ctx, policy);
      break;
    case Phase::FederatedTraining:
      if (ctx.role.kind == Role::S3) plan_training_s3(cur, ctx, policy);
      if (ctx.role.kind == Role::S4) plan_training_s4(cur, ctx, d, policy);
      break;
  }
  return cur.take();
}

}  // namespace

CoreReply OracleCore::respond(const Conversation& conv, const PhaseContext& ctx) {
  DecisionPolicy straight;
  return {scripted_step(conv, ctx, straight), {}};
}

CoreReply NoisyCore::respond(const Conversation& conv, const PhaseContext& ctx) {
  FlipPolicy policy(p_, seed_);
  return {scripted_step(conv, ctx, policy), {}};
}

std::optional<RemoteCore::Endpoint> RemoteCore::Endpoint::from_environment() {
  const char* url = std::getenv("ENDPOINT_URL");
  if (!url || !*url) return std::nullopt;
  Endpoint e;
  e.url = url;
  if (const char* key = std::getenv("ENDPOINT_KEY")) e.key = key;
  if (const char* model = std::getenv("MODEL_NAME"); model && *model) e.model = model;
  if (const char* t = std::getenv("REQUEST_TIMEOUT_SECS"); t && *t)
    e.timeout_secs = std::max(1, std::atoi(t));
  return e;
}

CoreReply RemoteCore::respond(const Conversation& conv, const PhaseContext& ctx) {
  (void)ctx;
  Json messages = Json::array();
  messages.push_back(Json{{"role", "system"}, {"content", conv.system_prompt}});
  for (const auto& turn : conv.turns)
    messages.push_back(
        Json{{"role", turn.speaker == ConversationTurn::Speaker::Core ? "assistant" : "user"},
             {"content", turn.text}});
  if (conv.turns.empty()) messages.push_back(Json{{"role", "user"}, {"content", "Begin."}});

  Json body{{"model", endpoint_.model},
            {"messages", messages},
            {"temperature", 0.0},
            {"stream", false}};

  auto scheme_end = endpoint_.url.find("://");
  if (scheme_end == std::string::npos) throw TransportError("endpoint url lacks a scheme");
  const std::string scheme = endpoint_.url.substr(0, scheme_end);
  auto path_start = endpoint_.url.find('/', scheme_end + 3);
  const std::string host_port = path_start == std::string::npos
                                    ? endpoint_.url.substr(scheme_end + 3)
                                    : endpoint_.url.substr(scheme_end + 3,
                                                           path_start - scheme_end - 3);
  const std::string path =
      path_start == std::string::npos ? "/" : endpoint_.url.substr(path_start);
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
  if (scheme == "https")
    throw TransportError("https endpoints need a TLS-enabled build");
#endif

  httplib::Client client((scheme + "://" + host_port).c_str());
  client.set_connection_timeout(endpoint_.timeout_secs, 0);
  client.set_read_timeout(endpoint_.timeout_secs, 0);
  httplib::Headers headers;
  if (!endpoint_.key.empty()) headers.emplace("Authorization", "Bearer " + endpoint_.key);

  auto res = client.Post(path.c_str(), headers, body.dump(), "application/json");
  if (!res) throw TransportError("endpoint unreachable: " + endpoint_.url);
  if (res->status != 200)
    throw TransportError("endpoint returned status " + std::to_string(res->status));
  Json reply = Json::parse(res->body, nullptr, false);
  if (reply.is_discarded()) throw TransportError("endpoint reply is not structured text");

  CoreReply out;
  try {
    out.text = reply.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const Json::exception&) {
    throw TransportError("endpoint reply lacks message content");
  }
  if (reply.contains("usage")) {
    out.usage.prompt_tokens = reply["usage"].value("prompt_tokens", std::int64_t{0});
    out.usage.completion_tokens = reply["usage"].value("completion_tokens", std::int64_t{0});
  } else {
    out.usage.completion_tokens = static_cast<std::int64_t>(out.text.size() / 4 + 1);
  }
  return out;
}

std::unique_ptr<AgentCore> make_core(const std::string& kind_name, double noise,
                                     std::uint64_t seed) {
  if (kind_name == "scripted_oracle") return std::make_unique<OracleCore>();
  if (kind_name == "scripted_noisy") return std::make_unique<NoisyCore>(noise, seed);
  if (kind_name == "remote_llm") {
    auto endpoint = RemoteCore::Endpoint::from_environment();
    if (!endpoint) throw HarnessError("remote core needs ENDPOINT_URL set");
    return std::make_unique<RemoteCore>(*endpoint);
  }
  throw HarnessError("unknown core kind: " + kind_name);
}

}  // namespace fedharness
