#include "doctest.h"

#include "fedharness/protocol.hpp"
#include "fedharness/trace.hpp"

using namespace fedharness;

TEST_CASE("role ids roundtrip through text") {
  for (const auto& text : {"user", "S1", "S2", "S3", "S4", "C1@c1", "C2@c3", "C3@c12"}) {
    auto r = RoleId::parse(text);
    REQUIRE(r.has_value());
    CHECK(r->str() == text);
  }
  CHECK_FALSE(RoleId::parse("C4@c1").has_value());
  CHECK_FALSE(RoleId::parse("S5").has_value());
  CHECK_FALSE(RoleId::parse("").has_value());
  CHECK(client_role(Role::C1, "c2").is_client());
  CHECK(server_role(Role::S2).is_server());
  CHECK_FALSE(user_role().is_client());
}

TEST_CASE("route rules confine traffic to the server-client plane") {
  PrivacyGuard g;
  auto ok = [&](RoleId a, RoleId b) { return g.check_route(a, b).ok; };

  CHECK(ok(server_role(Role::S1), client_role(Role::C1, "c1")));
  CHECK(ok(client_role(Role::C1, "c1"), server_role(Role::S2)));
  CHECK(ok(user_role(), server_role(Role::S1)));
  CHECK(ok(server_role(Role::S2), user_role()));
  CHECK(ok(server_role(Role::S1), server_role(Role::S2)));

  CHECK_FALSE(ok(client_role(Role::C1, "c1"), client_role(Role::C1, "c2")));
  CHECK_FALSE(ok(client_role(Role::C1, "c1"), client_role(Role::C2, "c1")));
  CHECK_FALSE(ok(user_role(), client_role(Role::C1, "c1")));
  CHECK_FALSE(ok(client_role(Role::C2, "c1"), user_role()));
  CHECK_FALSE(ok(server_role(Role::S1), server_role(Role::S1)));
}

TEST_CASE("payload guard accepts orchestration records") {
  PrivacyGuard g;
  Json config = {{"algorithm", "fedavg"},
                 {"rounds", 20},
                 {"lr", 0.1},
                 {"clients", {"c1", "c2"}},
                 {"paths", {{"data", "clients/c1/derm01"}}}};
  CHECK(g.check_payload(config).ok);

  Json many_strings = Json::array();
  for (int i = 0; i < 100; ++i) many_strings.push_back("clients/c1/file_" + std::to_string(i));
  CHECK(g.check_payload(many_strings).ok);

  Json small_numbers = Json::array();
  for (int i = 0; i < 32; ++i) small_numbers.push_back(i * 0.5);
  CHECK(g.check_payload(Json{{"histogram", small_numbers}}).ok);
}

TEST_CASE("payload guard rejects data-plane smuggling") {
  PrivacyGuard g;

  Json vec = Json::array();
  for (int i = 0; i < 100; ++i) vec.push_back(i * 0.25);
  CHECK_FALSE(g.check_payload(Json{{"weights", vec}}).ok);

  CHECK_FALSE(g.check_payload(Json{{"img", "SGB1 raw bytes follow"}}).ok);
  CHECK_FALSE(g.check_payload(Json{{"img", "header P5\n64 64"}}).ok);

  std::string big(4096, 'x');
  CHECK_FALSE(g.check_payload(Json{{"blob", big}}).ok);

  std::string control = "ab";
  control.push_back('\x01');
  CHECK_FALSE(g.check_payload(Json{{"s", control}}).ok);
  CHECK(g.check_payload(Json{{"s", "line1\nline2\ttabbed"}}).ok);

  CHECK_FALSE(g.check_payload(Json::binary({1, 2, 3})).ok);

  Json deep = 1;
  for (int i = 0; i < 20; ++i) deep = Json{{"n", deep}};
  CHECK_FALSE(g.check_payload(deep).ok);
}

TEST_CASE("bus delivers in order with strictly increasing sequence numbers") {
  TraceLog trace;
  MessageBus bus(&trace);
  RoleId s1 = server_role(Role::S1);
  RoleId c1 = client_role(Role::C1, "c1");

  for (int i = 0; i < 3; ++i) {
    AgentMessage m;
    m.sender = s1;
    m.recipient = c1;
    m.kind = MessageKind::Query;
    m.payload = Json{{"n", i}};
    CHECK(bus.send(m).ok);
  }
  CHECK(bus.pending(c1) == 3);
  std::uint64_t last = 0;
  for (int i = 0; i < 3; ++i) {
    auto m = bus.poll(c1);
    REQUIRE(m.has_value());
    CHECK(m->payload.at("n").get<int>() == i);
    CHECK(m->sequence_number > last);
    last = m->sequence_number;
  }
  CHECK_FALSE(bus.poll(c1).has_value());
  CHECK(bus.accepted_count() == 3);
}

TEST_CASE("rejected messages are not delivered and their payload never hits the trace") {
  TraceLog trace;
  MessageBus bus(&trace);
  AgentMessage m;
  m.sender = client_role(Role::C1, "c1");
  m.recipient = client_role(Role::C1, "c2");
  m.kind = MessageKind::Status;
  m.payload = Json{{"secret", "SGT1 encoded pixels"}};
  auto v = bus.send(m);
  CHECK_FALSE(v.ok);
  CHECK(bus.pending(client_role(Role::C1, "c2")) == 0);
  CHECK(bus.accepted_count() == 0);

  bool denied_logged = false;
  for (const auto& e : trace.events()) {
    if (e.type == "guard_denied") denied_logged = true;
    CHECK(e.data.dump().find("SGT1") == std::string::npos);
  }
  CHECK(denied_logged);
}

TEST_CASE("workspace views confine roles") {
  fs::path root = "/ws";
  auto s2 = WorkspaceView::for_role(server_role(Role::S2), root);
  auto c2_of_c3 = WorkspaceView::for_role(client_role(Role::C2, "c3"), root);

  TraceLog audit;
  CHECK_FALSE(check_access(s2, "clients/c3/derm01/melanoma/img_004.pgm", AccessMode::Read));
  CHECK(check_access(s2, "server/registry.json", AccessMode::Read));
  CHECK(check_access(s2, "task.json", AccessMode::Read));
  CHECK_FALSE(check_access(s2, "task.json", AccessMode::Write));

  CHECK(check_access(c2_of_c3, "clients/c3/derm01/nevus/img_001.pgm", AccessMode::Write));
  CHECK(check_access(c2_of_c3, "task.json", AccessMode::Read));
  CHECK_FALSE(check_access(c2_of_c3, "clients/c5/derm01/img.pgm", AccessMode::Read, &audit));
  CHECK(audit.events().size() == 1);
  CHECK(audit.events()[0].type == "access_denied");

  CHECK_FALSE(check_access(c2_of_c3, "clients/c3/../c5/x.pgm", AccessMode::Read, &audit));
  CHECK_FALSE(check_access(c2_of_c3, "../../etc/passwd", AccessMode::Read, &audit));
  CHECK_FALSE(check_access(c2_of_c3, "manifest.json", AccessMode::Read));
  CHECK_FALSE(check_access(s2, "manifest.json", AccessMode::Read));
  CHECK_FALSE(check_access(s2, "/ws/manifest.json", AccessMode::Read));
}

TEST_CASE("task spec serialization and validation") {
  TaskSpec t;
  t.modality = Modality::Fundus;
  t.task_kind = TaskKind::Classification;
  t.objective = "Train a federated referral classifier.";
  t.target_schema = {"non_referable", "referable"};
  t.guidance_mode = GuidanceMode::GoalOriented;
  t.fl_preferences = "baseline aggregation";
  t.validate();

  auto back = TaskSpec::from_json(t.to_json());
  CHECK(back.modality == t.modality);
  CHECK(back.target_schema == t.target_schema);
  CHECK(back.guidance_mode == GuidanceMode::GoalOriented);
  CHECK(back.fl_preferences == t.fl_preferences);

  TaskSpec bad = t;
  bad.target_schema = {"single"};
  CHECK_THROWS_AS(bad.validate(), HarnessError);
}

TEST_CASE("trace log is deterministic and replayable") {
  auto run_once = [](const fs::path& file) {
    TraceLog log;
    log.open(file);
    log.record("phase_start", Json{{"phase", "client_selection"}});
    log.record("message", Json{{"seq", 1}});
    log.record("phase_end", Json{{"phase", "client_selection"}});
    return log.full_text();
  };
  fs::path dir = fs::temp_directory_path() / "fh_trace_test";
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto a = run_once(dir / "a.ndjson");
  auto b = run_once(dir / "b.ndjson");
  CHECK(a == b);
  CHECK(read_file_text(dir / "a.ndjson") == a);

  auto events = TraceLog::load(dir / "a.ndjson");
  REQUIRE(events.size() == 3);
  CHECK(events[0].type == "phase_start");
  CHECK(events[0].seq == 1);
  CHECK(events[2].seq == 3);
  CHECK(events[0].t < events[2].t);
  fs::remove_all(dir);
}
