#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "doctest.h"
#include "fedharness/envgen.hpp"
#include "fedharness/evaluator.hpp"
#include "fedharness/image.hpp"
#include "fedharness/modality.hpp"
#include "fedharness/rng.hpp"
#include "fedharness/runtime.hpp"

using namespace fedharness;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// One eligible client, one dataset, a synthetic fine -> coarse map.
GroundTruthManifest tiny_manifest(int fine_classes) {
  GroundTruthManifest m;
  m.eligible_clients = {"c1"};
  m.canonical_profile = canonical_profile(Modality::Dermatoscopy);
  ClientRecord cr;
  cr.client_id = "c1";
  cr.modality = "dermatoscopy";
  cr.eligible = true;
  DatasetRecord dr;
  dr.name = "d1";
  dr.modality = "dermatoscopy";
  for (int i = 1; i <= fine_classes; ++i) {
    const std::string fine = "f" + std::to_string(i);
    m.canonical_label_map[fine] = i % 2 == 0 ? "malignant" : "benign";
    dr.classes.push_back(fine);
    dr.expected[fine] = {"s" + std::to_string(i)};
  }
  cr.datasets.push_back(dr);
  m.clients.push_back(cr);
  return m;
}

EpisodeResult episode_with_mapping(const Json& mapping_rows) {
  EpisodeResult ep;
  ep.selected_clients = {"c1"};
  PhaseOutcome sel;
  sel.phase = Phase::ClientSelection;
  sel.completed = true;
  ep.outcomes.push_back(sel);
  PhaseOutcome harm;
  harm.phase = Phase::LabelHarmonization;
  harm.completed = true;
  harm.artifacts =
      Json{{"clients", Json{{"c1", Json{{"client", "c1"}, {"mapping", mapping_rows}}}}}};
  ep.outcomes.push_back(harm);
  return ep;
}

void put_file(const fs::path& p, const std::string& bytes = "x") {
  fs::create_directories(p.parent_path());
  write_file_text(p, bytes);
}

TraceEvent ev(const std::string& type, Json data) {
  TraceEvent e;
  e.type = type;
  e.data = std::move(data);
  return e;
}

EnvironmentConfig small_env(std::uint64_t seed) {
  EnvironmentConfig cfg;
  cfg.seed = seed;
  cfg.num_clients = 3;
  cfg.datasets_per_client = {1, 1};
  cfg.classes_per_dataset = {2, 3};
  cfg.samples_per_class = {5, 7};
  cfg.eligible_fraction = 0.7;
  cfg.perturbation_fraction = 0.3;
  cfg.flat_layout_probability = 0.5;
  return cfg;
}

}  // namespace

TEST_CASE("selection triples and the f1 identity") {
  auto exact = score_client_selection({"a", "b"}, {"a", "b"});
  CHECK(exact.precision == 1.0);
  CHECK(exact.recall == 1.0);
  CHECK(exact.f1 == 1.0);
  CHECK_FALSE(exact.vacuous);

  auto mixed = score_client_selection({"c1", "c2", "c3"}, {"c1", "c2", "c4"});
  CHECK(mixed.precision == doctest::Approx(2.0 / 3));
  CHECK(mixed.recall == doctest::Approx(2.0 / 3));
  CHECK(mixed.f1 == doctest::Approx(2.0 / 3));

  auto both_empty = score_client_selection({}, {});
  CHECK(both_empty.vacuous);
  CHECK(both_empty.precision == 1.0);
  CHECK(both_empty.recall == 1.0);
  CHECK(both_empty.f1 == 1.0);

  auto nothing_picked = score_client_selection({}, {"a"});
  CHECK_FALSE(nothing_picked.vacuous);
  CHECK(nothing_picked.precision == 0.0);
  CHECK(nothing_picked.recall == 0.0);
  CHECK(nothing_picked.f1 == 0.0);

  auto greedy = score_client_selection({"a", "b", "c", "d"}, {"a", "b"});
  CHECK(greedy.precision == doctest::Approx(0.5));
  CHECK(greedy.recall == doctest::Approx(1.0));
  CHECK(greedy.f1 == doctest::Approx(2.0 * greedy.precision * greedy.recall /
                                     (greedy.precision + greedy.recall)));
  CHECK(greedy.f1 == doctest::Approx(2.0 / 3));
}

TEST_CASE("harmonization counts exact, covered and conflicted classes") {
  auto ws = fresh_dir("fh_eval_harm_ws");
  auto m = tiny_manifest(7);

  // five exact entries, one double mapping, one class left out
  Json rows = Json::array();
  for (int i = 1; i <= 5; ++i) {
    const std::string fine = "f" + std::to_string(i);
    rows.push_back(Json{{"dataset", "d1"}, {"fine", fine}, {"coarse", m.canonical_label_map[fine]}});
  }
  rows.push_back(Json{{"dataset", "d1"}, {"fine", "f6"}, {"coarse", "malignant"}});
  rows.push_back(Json{{"dataset", "d1"}, {"fine", "f6"}, {"coarse", "benign"}});

  auto h = score_harmonization(ws, m, episode_with_mapping(rows));
  CHECK_FALSE(h.vacuous);
  CHECK(h.exact_match == doctest::Approx(5.0 / 7));
  CHECK(h.coverage == doctest::Approx(6.0 / 7));
  CHECK(h.conflict == doctest::Approx(1.0 / 7));
  CHECK(std::abs(h.exact_match - 0.714) < 0.001);
  CHECK(std::abs(h.coverage - 0.857) < 0.001);
  CHECK(std::abs(h.conflict - 0.143) < 0.001);
}

TEST_CASE("files split across target directories count as a conflict") {
  auto ws = fresh_dir("fh_eval_split_ws");
  auto m = tiny_manifest(1);
  m.clients[0].datasets[0].expected["f1"] = {"a", "b"};
  put_file(ws / "clients/c1/d1/benign/f1__a.pgm");
  put_file(ws / "clients/c1/d1/malignant/f1__b.pgm");

  Json rows = Json::array({Json{{"dataset", "d1"}, {"fine", "f1"}, {"coarse", "benign"}}});
  auto h = score_harmonization(ws, m, episode_with_mapping(rows));
  CHECK(h.coverage == 1.0);
  CHECK(h.exact_match == 1.0);  // the table itself is right; the tree is not
  CHECK(h.conflict == 1.0);

  auto ep = episode_with_mapping(rows);
  ep.selected_clients = {};  // completed selection that picked nobody
  auto vac = score_harmonization(ws, m, ep);
  CHECK(vac.vacuous);
  CHECK(vac.exact_match == 1.0);
  CHECK(vac.conflict == 0.0);
}

TEST_CASE("schema compliance counts placement against expected plus clutter") {
  auto ws = fresh_dir("fh_eval_schema_ws");
  auto m = tiny_manifest(2);
  m.clients[0].datasets[0].expected = {{"f1", {"a", "b"}}, {"f2", {"c"}}};
  put_file(ws / "clients/c1/d1/f1/a.pgm");
  put_file(ws / "clients/c1/d1/f1/b.pgm");
  put_file(ws / "clients/c1/d1/f2/c.pgm");

  auto clean = score_preprocessing(ws, m);
  CHECK(clean.schema_compliance == 1.0);
  CHECK(clean.duplicate_removal == 1.0);
  CHECK(clean.duplicates_vacuous);
  CHECK(clean.format_normalization == 1.0);
  CHECK(clean.normalization_vacuous);
  CHECK_FALSE(clean.schema_vacuous);

  put_file(ws / "clients/c1/d1/notes.txt", "junk");
  auto cluttered = score_preprocessing(ws, m);
  CHECK(cluttered.schema_compliance == doctest::Approx(3.0 / 4));

  // a stray flat copy of an expected identity is neither placed nor clutter
  put_file(ws / "clients/c1/d1/f1__a.pgm");
  CHECK(score_preprocessing(ws, m).schema_compliance == doctest::Approx(3.0 / 4));

  // harmonized placement earns the same credit as the class directory
  auto ws2 = fresh_dir("fh_eval_schema_ws2");
  auto m2 = tiny_manifest(1);
  put_file(ws2 / "clients/c1/d1/benign/f1__s1.pgm");
  CHECK(score_preprocessing(ws2, m2).schema_compliance == 1.0);
}

TEST_CASE("duplicate removal is the fraction of ledgered copies gone") {
  auto ws = fresh_dir("fh_eval_dup_ws");
  auto m = tiny_manifest(1);
  auto& dr = m.clients[0].datasets[0];
  dr.expected.clear();
  for (int i = 1; i <= 5; ++i)
    dr.duplicates.push_back({"d1/f1/dup" + std::to_string(i) + ".pgm", "f1", "src",
                             "dup" + std::to_string(i), "00"});
  put_file(ws / "clients/c1/d1/f1/dup4.pgm");
  put_file(ws / "clients/c1/d1/f1/dup5.pgm");

  auto s = score_preprocessing(ws, m);
  CHECK_FALSE(s.duplicates_vacuous);
  CHECK(s.duplicate_removal == doctest::Approx(0.6));
}

TEST_CASE("format normalization needs the canonical container and profile") {
  auto ws = fresh_dir("fh_eval_fmt_ws");
  auto m = tiny_manifest(1);
  auto& dr = m.clients[0].datasets[0];
  dr.expected = {{"f1", {"p1", "p2"}}};
  PerturbationEntry pe;
  pe.cls = "f1";
  pe.kind = "format";
  pe.stem = "p1";
  dr.perturbations.push_back(pe);
  pe.stem = "p2";
  dr.perturbations.push_back(pe);

  RngStream rng(7);
  Image img = render_class_image(rng, Modality::Dermatoscopy, 0);
  REQUIRE(image_conforms(img, ImageFormat::Pgm, m.canonical_profile));
  fs::create_directories(ws / "clients/c1/d1/f1");
  write_image_file(ws / "clients/c1/d1/f1/p1.pgm", img, ImageFormat::Pgm);
  write_image_file(ws / "clients/c1/d1/f1/p2.bmp", img, ImageFormat::Sgb);

  auto s = score_preprocessing(ws, m);
  CHECK_FALSE(s.normalization_vacuous);
  CHECK(s.format_normalization == doctest::Approx(0.5));
  CHECK(s.schema_compliance == 1.0);  // placement is format-blind
}

TEST_CASE("agent cell chips reproduce the published arithmetic") {
  const double a = overall_from_cells({5, 4, 5, 5, 5, 4, 5}, 5);
  CHECK(a == doctest::Approx(33.0 / 35).epsilon(1e-12));
  CHECK(std::abs(a - 0.9429) < 5e-5);

  const double b = overall_from_cells({5, 0, 5, 0, 0, 0, 5}, 5);
  CHECK(b == doctest::Approx(15.0 / 35).epsilon(1e-12));
  CHECK(std::abs(b - 0.4286) < 5e-5);

  CHECK(overall_from_cells({0, 0, 0, 0, 0, 0, 0}, 0) == 0.0);
}

TEST_CASE("training starts aggregate as a plain mean") {
  std::vector<RunScore> runs(5);
  for (int i = 0; i < 3; ++i) {
    runs[static_cast<std::size_t>(i)].training.config_valid = true;
    runs[static_cast<std::size_t>(i)].training.initialized = true;
    runs[static_cast<std::size_t>(i)].training.start_signal_logged = true;
    runs[static_cast<std::size_t>(i)].phase_success[3] = true;
    runs[static_cast<std::size_t>(i)].agent_cells[3] = true;
  }
  auto rep = aggregate_runs(runs);
  CHECK(rep.runs == 5);
  CHECK(rep.training_mean == doctest::Approx(0.6));
  CHECK(rep.phase_success_rate[3] == doctest::Approx(0.6));
  CHECK(rep.cell_successes[3] == 3);
  CHECK(rep.overall_score == doctest::Approx(3.0 / 35));

  auto round_trip = MetricsReport::from_json(rep.to_json());
  CHECK(round_trip.to_json().dump() == rep.to_json().dump());

  const std::string md = rep.to_markdown();
  CHECK(md.find("3/5") != std::string::npos);
  const std::string csv = rep.to_csv();
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 7);  // header + 5 runs + mean
}

TEST_CASE("failure signatures fire on rule breaking traces") {
  auto m = tiny_manifest(1);
  EpisodeResult ep;

  SUBCASE("removal without detector probes") {
    std::vector<TraceEvent> t{
        ev("phase_start", Json{{"phase", "data_preprocessing"}}),
        ev("tool_call", Json{{"role", "C2@c1"}, {"tool", "remove_files"}, {"arguments", Json::object()}}),
    };
    CHECK(classify_failures(t, ep, m, {}).planning == 2);

    std::vector<TraceEvent> probed{
        ev("phase_start", Json{{"phase", "data_preprocessing"}}),
        ev("tool_call", Json{{"role", "C2@c1"}, {"tool", "detect_duplicates"}}),
        ev("tool_call", Json{{"role", "C2@c1"}, {"tool", "detect_outliers"}}),
        ev("tool_call", Json{{"role", "C2@c1"}, {"tool", "remove_files"}}),
    };
    CHECK(classify_failures(probed, ep, m, {}).planning == 0);
  }

  SUBCASE("mapping without enumerating labels") {
    std::vector<TraceEvent> t{
        ev("phase_start", Json{{"phase", "label_harmonization"}}),
        ev("tool_call", Json{{"role", "C3@c1"}, {"tool", "apply_label_mapping"}}),
    };
    CHECK(classify_failures(t, ep, m, {}).shortcutting == 1);

    std::vector<TraceEvent> probed{
        ev("phase_start", Json{{"phase", "label_harmonization"}}),
        ev("tool_call", Json{{"role", "C3@c1"}, {"tool", "enumerate_labels"}}),
        ev("tool_call", Json{{"role", "C3@c1"}, {"tool", "apply_label_mapping"}}),
    };
    CHECK(classify_failures(probed, ep, m, {}).shortcutting == 0);
  }

  SUBCASE("unparseable output, ghost tools and denied routes") {
    std::vector<TraceEvent> t{
        ev("core_turn", Json{{"role", "S1"}, {"kind", "parse_error"}, {"error", "no block"}}),
        ev("tool_result", Json{{"role", "S1"}, {"tool", "warp"}, {"ok", false},
                               {"error_kind", "unknown_tool"}, {"summary", ""}}),
        ev("guard_denied", Json{{"sender", "C1@c1"}, {"recipient", "C1@c2"},
                                {"kind", "query"}, {"reason", "client to client"}}),
    };
    CHECK(classify_failures(t, ep, m, {}).hallucination == 3);
  }

  SUBCASE("long tool free streaks read as overthinking") {
    std::vector<TraceEvent> t{ev("phase_start", Json{{"phase", "client_selection"}})};
    for (int i = 0; i < 10; ++i)
      t.push_back(ev("core_turn", Json{{"role", "S1"}, {"kind", "message"}}));
    CHECK(classify_failures(t, ep, m, {}).overthinking == 1);

    std::vector<TraceEvent> shorter{ev("phase_start", Json{{"phase", "client_selection"}})};
    for (int i = 0; i < 9; ++i)
      shorter.push_back(ev("core_turn", Json{{"role", "S1"}, {"kind", "message"}}));
    CHECK(classify_failures(shorter, ep, m, {}).overthinking == 0);
  }

  SUBCASE("ineligible selections count as modality mismatch") {
    EpisodeResult picked;
    picked.selected_clients = {"c1", "cx", "cy"};
    CHECK(classify_failures({}, picked, m, {}).modality_mismatch == 2);
  }

  SUBCASE("wrong single target after probing is a domain error") {
    auto wrong = episode_with_mapping(
        Json::array({Json{{"dataset", "d1"}, {"fine", "f1"}, {"coarse", "malignant"}}}));
    std::vector<TraceEvent> t{
        ev("phase_start", Json{{"phase", "label_harmonization"}}),
        ev("tool_call", Json{{"role", "C3@c1"}, {"tool", "enumerate_labels"}}),
        ev("tool_call", Json{{"role", "C3@c1"}, {"tool", "apply_label_mapping"}}),
    };
    CHECK(classify_failures(t, wrong, m, {}).domain_reasoning == 1);
    // without the probe the same mistake reads as shortcutting, not domain
    CHECK(classify_failures({}, wrong, m, {}).domain_reasoning == 0);
  }
}

TEST_CASE("an oracle run scores the exact ceiling and rescoring is stable") {
  auto run_dir = fresh_dir("fh_eval_oracle_run");
  auto manifest = generate_environment(small_env(61), run_dir / "workspace");
  auto task = TaskSpec::from_json(load_json_file(run_dir / "workspace" / "task.json"));

  EpisodeOptions opt;
  opt.training_rounds = 3;
  opt.seed = 7;
  EpisodeRunner runner(run_dir / "workspace", run_dir,
                       [](const RoleId&) { return std::make_unique<OracleCore>(); }, opt);
  runner.run(task);

  auto rs = score_run(run_dir, manifest);
  CHECK(rs.selection.precision == 1.0);
  CHECK(rs.selection.recall == 1.0);
  CHECK(rs.selection.f1 == 1.0);
  CHECK(rs.preprocessing.schema_compliance == 1.0);
  CHECK(rs.preprocessing.duplicate_removal == 1.0);
  CHECK(rs.preprocessing.format_normalization == 1.0);
  CHECK(rs.harmonization.exact_match == 1.0);
  CHECK(rs.harmonization.coverage == 1.0);
  CHECK(rs.harmonization.conflict == 0.0);
  CHECK(rs.training.value() == 1.0);
  for (bool phase_ok : rs.phase_success) CHECK(phase_ok);
  for (bool cell : rs.agent_cells) CHECK(cell);
  CHECK(rs.failures.total() == 0);

  auto rep = aggregate_runs({rs});
  CHECK(rep.overall_score == 1.0);
  CHECK(rep.to_markdown().find("100.00%") != std::string::npos);

  // metrics are a pure function of what is on disk
  CHECK(score_run(run_dir, manifest).to_json().dump() == rs.to_json().dump());
}

TEST_CASE("a noisy core drags the overall score below the ceiling") {
  auto run_dir = fresh_dir("fh_eval_noisy_run");
  auto manifest = generate_environment(small_env(61), run_dir / "workspace");
  auto task = TaskSpec::from_json(load_json_file(run_dir / "workspace" / "task.json"));

  EpisodeOptions opt;
  opt.training_rounds = 3;
  opt.seed = 7;
  EpisodeRunner runner(run_dir / "workspace", run_dir,
                       [](const RoleId&) { return std::make_unique<NoisyCore>(0.5, 9); }, opt);
  runner.run(task);

  auto rep = aggregate_runs({score_run(run_dir, manifest)});
  CHECK(rep.overall_score < 1.0);
}
