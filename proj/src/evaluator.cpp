#include "fedharness/evaluator.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <utility>

#include "fedharness/image.hpp"
#include "fedharness/modality.hpp"
#include "fedharness/protocol.hpp"
#include "fedharness/trace.hpp"

namespace fedharness {

namespace {

// (class, stem) pair that survives restructuring, renaming, and harmonization.
struct Identity {
  std::string cls;
  std::string stem;
  auto operator<=>(const Identity&) const = default;
};

std::string stem_of(const std::string& filename) {
  const auto dot = filename.rfind('.');
  return dot == std::string::npos ? filename : filename.substr(0, dot);
}

// One file inside a dataset directory, classified by layout:
//   flat         <cls>__<stem>.<ext> at the dataset root
//   structured   <cls>/<stem>.<ext>
//   harmonized   <coarse>/<cls>__<stem>.<ext>
struct PlacedFile {
  fs::path abs;
  std::string top;  // first path component, empty for root-level files
  int depth = 0;    // directory levels above the file
  bool prefixed = false;  // filename carries the class__ prefix
  std::optional<Identity> id;
};

std::vector<PlacedFile> scan_dataset(const fs::path& ds_root) {
  std::vector<PlacedFile> out;
  if (!fs::exists(ds_root)) return out;
  for (const auto& f : sorted_recursive_files(ds_root)) {
    PlacedFile p;
    p.abs = f;
    const std::string rel = f.lexically_relative(ds_root).generic_string();
    p.depth = static_cast<int>(std::count(rel.begin(), rel.end(), '/'));
    if (p.depth > 0) p.top = rel.substr(0, rel.find('/'));
    const std::string stem = stem_of(f.filename().string());
    const auto sep = stem.find("__");
    p.prefixed = sep != std::string::npos && sep > 0;
    if (p.prefixed)
      p.id = Identity{stem.substr(0, sep), stem.substr(sep + 2)};
    else if (p.depth > 0)
      p.id = Identity{f.parent_path().filename().string(), stem};
    out.push_back(std::move(p));
  }
  return out;
}

// Correct placement for an expected identity: its own class directory, or
// the canonical coarse directory with the class prefix kept on the name.
bool correctly_placed(const PlacedFile& f, const std::map<std::string, std::string>& label_map) {
  if (!f.id || f.depth != 1) return false;
  if (!f.prefixed) return f.top == f.id->cls;
  const auto it = label_map.find(f.id->cls);
  return it != label_map.end() && f.top == it->second;
}

const PhaseOutcome* find_outcome(const EpisodeResult& episode, Phase p) {
  for (const auto& o : episode.outcomes)
    if (o.phase == p) return &o;
  return nullptr;
}

// The cohort later phases actually worked on: the selected clients, every
// client when selection failed mechanically, nobody when a completed
// selection picked nobody.
std::vector<std::string> working_cohort(const EpisodeResult& episode,
                                        const GroundTruthManifest& manifest) {
  if (!episode.selected_clients.empty()) return episode.selected_clients;
  const PhaseOutcome* sel = find_outcome(episode, Phase::ClientSelection);
  if (sel && sel->completed) return {};
  std::vector<std::string> all;
  for (const auto& cr : manifest.clients) all.push_back(cr.client_id);
  return all;
}

// Mapping-table targets per (dataset, fine class) from one client's
// harmonization report.
std::map<std::pair<std::string, std::string>, std::set<std::string>> mapping_targets(
    const Json& client_final) {
  std::map<std::pair<std::string, std::string>, std::set<std::string>> targets;
  for (const auto& row : client_final.value("mapping", Json::array())) {
    if (!row.is_object()) continue;
    targets[{row.value("dataset", ""), row.value("fine", "")}].insert(row.value("coarse", ""));
  }
  return targets;
}

std::string fmt_rate(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

std::string fmt_percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f%%", v * 100.0);
  return buf;
}

}  // namespace

Json Thresholds::to_json() const {
  return Json{{"higher_better", higher_better},
              {"conflict", conflict},
              {"overthinking_turns", overthinking_turns}};
}

Thresholds Thresholds::from_json(const Json& j) {
  Thresholds t;
  t.higher_better = j.value("higher_better", 0.95);
  t.conflict = j.value("conflict", 0.05);
  t.overthinking_turns = j.value("overthinking_turns", 10);
  return t;
}

Json SelectionScore::to_json() const {
  return Json{{"precision", precision}, {"recall", recall}, {"f1", f1}, {"vacuous", vacuous}};
}

Json PreprocessingScore::to_json() const {
  return Json{{"schema_compliance", schema_compliance},
              {"duplicate_removal", duplicate_removal},
              {"format_normalization", format_normalization},
              {"schema_vacuous", schema_vacuous},
              {"duplicates_vacuous", duplicates_vacuous},
              {"normalization_vacuous", normalization_vacuous}};
}

Json HarmonizationScore::to_json() const {
  return Json{{"exact_match", exact_match},
              {"coverage", coverage},
              {"conflict", conflict},
              {"vacuous", vacuous}};
}

Json TrainingScore::to_json() const {
  return Json{{"config_valid", config_valid},
              {"initialized", initialized},
              {"start_signal_logged", start_signal_logged},
              {"value", value()},
              {"reason", reason}};
}

int FailureCounts::total() const {
  return domain_reasoning + planning + shortcutting + hallucination + modality_mismatch +
         overthinking;
}

Json FailureCounts::to_json() const {
  return Json{{"domain_reasoning", domain_reasoning},
              {"planning", planning},
              {"shortcutting", shortcutting},
              {"hallucination", hallucination},
              {"modality_mismatch", modality_mismatch},
              {"overthinking", overthinking}};
}

FailureCounts FailureCounts::from_json(const Json& j) {
  FailureCounts f;
  f.domain_reasoning = j.value("domain_reasoning", 0);
  f.planning = j.value("planning", 0);
  f.shortcutting = j.value("shortcutting", 0);
  f.hallucination = j.value("hallucination", 0);
  f.modality_mismatch = j.value("modality_mismatch", 0);
  f.overthinking = j.value("overthinking", 0);
  return f;
}

Json RunScore::to_json() const {
  Json phases = Json::object();
  for (int i = 0; i < kPhaseCount; ++i)
    phases[phase_name(static_cast<Phase>(i))] = phase_success[static_cast<std::size_t>(i)];
  Json cells = Json::object();
  for (std::size_t i = 0; i < agent_cells.size(); ++i) cells[kAgentCellNames[i]] = agent_cells[i];
  return Json{{"selection", selection.to_json()},
              {"preprocessing", preprocessing.to_json()},
              {"harmonization", harmonization.to_json()},
              {"training", training.to_json()},
              {"phase_success", phases},
              {"agent_cells", cells},
              {"failures", failures.to_json()},
              {"elapsed_seconds", elapsed_seconds},
              {"tokens", tokens}};
}

SelectionScore score_client_selection(const std::vector<std::string>& selected,
                                      const std::vector<std::string>& eligible) {
  const std::set<std::string> sel(selected.begin(), selected.end());
  const std::set<std::string> elig(eligible.begin(), eligible.end());
  SelectionScore s;
  if (sel.empty() && elig.empty()) {
    s.precision = s.recall = s.f1 = 1.0;
    s.vacuous = true;
    return s;
  }
  std::size_t hits = 0;
  for (const auto& c : sel) hits += elig.count(c);
  s.precision = sel.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(sel.size());
  s.recall = elig.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(elig.size());
  s.f1 = s.precision + s.recall > 0.0
             ? 2.0 * s.precision * s.recall / (s.precision + s.recall)
             : 0.0;
  return s;
}

PreprocessingScore score_preprocessing(const fs::path& workspace,
                                       const GroundTruthManifest& manifest) {
  std::size_t placed = 0, expected_total = 0, undesired = 0;
  std::size_t dup_total = 0, dup_gone = 0;
  std::size_t pert_total = 0, pert_ok = 0;

  for (const auto& cr : manifest.clients) {
    if (!cr.eligible) continue;
    for (const auto& dr : cr.datasets) {
      const fs::path ds_root = workspace / "clients" / cr.client_id / dr.name;
      const auto files = scan_dataset(ds_root);

      std::set<Identity> expected;
      for (const auto& [cls, stems] : dr.expected)
        for (const auto& stem : stems) expected.insert({cls, stem});
      expected_total += expected.size();

      std::set<Identity> placed_ids;
      std::map<Identity, const PlacedFile*> by_id;
      for (const auto& f : files) {
        if (f.id && !by_id.count(*f.id)) by_id[*f.id] = &f;
        if (!f.id || !expected.count(*f.id)) {
          ++undesired;
          continue;
        }
        if (correctly_placed(f, manifest.canonical_label_map)) placed_ids.insert(*f.id);
      }
      placed += placed_ids.size();

      dup_total += dr.duplicates.size();
      for (const auto& dup : dr.duplicates)
        if (!by_id.count({dup.cls, dup.stem})) ++dup_gone;

      pert_total += dr.perturbations.size();
      for (const auto& pert : dr.perturbations) {
        const auto it = by_id.find({pert.cls, pert.stem});
        if (it == by_id.end()) continue;
        const auto bytes = read_file_bytes(it->second->abs);
        const auto fmt = sniff_format(bytes);
        const auto img = decode_image(bytes);
        if (fmt && img && image_conforms(*img, *fmt, manifest.canonical_profile)) ++pert_ok;
      }
    }
  }

  PreprocessingScore s;
  const std::size_t denom = expected_total + undesired;
  s.schema_vacuous = denom == 0;
  s.schema_compliance = s.schema_vacuous ? 1.0 : static_cast<double>(placed) / denom;
  s.duplicates_vacuous = dup_total == 0;
  s.duplicate_removal = s.duplicates_vacuous ? 1.0 : static_cast<double>(dup_gone) / dup_total;
  s.normalization_vacuous = pert_total == 0;
  s.format_normalization =
      s.normalization_vacuous ? 1.0 : static_cast<double>(pert_ok) / pert_total;
  return s;
}

HarmonizationScore score_harmonization(const fs::path& workspace,
                                       const GroundTruthManifest& manifest,
                                       const EpisodeResult& episode) {
  const PhaseOutcome* harm = find_outcome(episode, Phase::LabelHarmonization);
  const Json clients_final =
      harm ? harm->artifacts.value("clients", Json::object()) : Json::object();

  std::size_t universe = 0, covered = 0, exact = 0, conflicted = 0;
  for (const auto& cid : working_cohort(episode, manifest)) {
    const ClientRecord* cr = manifest.find_client(cid);
    if (!cr) continue;
    const auto targets = mapping_targets(clients_final.value(cid, Json::object()));
    for (const auto& dr : cr->datasets) {
      const auto files = scan_dataset(workspace / "clients" / cid / dr.name);
      for (const auto& [fine, stems] : dr.expected) {
        if (stems.empty()) continue;  // nothing survived; there is no label to map
        ++universe;
        const auto it = targets.find({dr.name, fine});
        const bool is_covered = it != targets.end() && !it->second.empty();
        if (is_covered) ++covered;
        const auto truth = manifest.canonical_label_map.find(fine);
        if (is_covered && truth != manifest.canonical_label_map.end() &&
            it->second == std::set<std::string>{truth->second})
          ++exact;
        bool is_conflicted = is_covered && it->second.size() >= 2;
        if (!is_conflicted) {
          // physical split: surviving files of one class scattered over
          // two or more target directories
          std::set<std::string> dirs;
          for (const auto& f : files)
            if (f.prefixed && f.depth == 1 && f.id && f.id->cls == fine) dirs.insert(f.top);
          is_conflicted = dirs.size() >= 2;
        }
        if (is_conflicted) ++conflicted;
      }
    }
  }

  HarmonizationScore h;
  if (universe == 0) {
    h.exact_match = h.coverage = 1.0;
    h.conflict = 0.0;
    h.vacuous = true;
    return h;
  }
  h.exact_match = static_cast<double>(exact) / universe;
  h.coverage = static_cast<double>(covered) / universe;
  h.conflict = static_cast<double>(conflicted) / universe;
  return h;
}

TrainingScore score_training_start(const EpisodeResult& episode,
                                   const std::vector<TraceEvent>& trace) {
  TrainingScore t;
  const PhaseOutcome* training = find_outcome(episode, Phase::FederatedTraining);
  const Json launch = training ? training->artifacts.value("launch", Json::object()) : Json::object();
  if (launch.empty()) {
    t.reason = "no launch receipt";
    return t;
  }
  const Json data = launch.value("data", Json::object());
  t.config_valid = data.value("config_valid", false);
  t.initialized = data.value("initialized", false);
  const bool receipt = data.value("start_signal_logged", false);
  const bool traced = std::any_of(trace.begin(), trace.end(), [](const TraceEvent& e) {
    return e.type == "training_start";
  });
  t.start_signal_logged = receipt && traced;
  if (!t.config_valid)
    t.reason = "config rejected";
  else if (!t.initialized)
    t.reason = "trainer failed to initialize";
  else if (!receipt)
    t.reason = "no start signal in the launch receipt";
  else if (!traced)
    t.reason = "start signal missing from the trace";
  return t;
}

FailureCounts classify_failures(const std::vector<TraceEvent>& trace,
                                const EpisodeResult& episode,
                                const GroundTruthManifest& manifest,
                                const Thresholds& thresholds) {
  FailureCounts fc;

  const std::set<std::string> eligible(manifest.eligible_clients.begin(),
                                       manifest.eligible_clients.end());
  for (const auto& cid : std::set<std::string>(episode.selected_clients.begin(),
                                               episode.selected_clients.end()))
    if (!eligible.count(cid)) ++fc.modality_mismatch;

  // Per (phase, role) buckets. Phases never overlap, so the current phase
  // marker plus the per-event role keys one conversation per bucket even
  // when client conversations interleave.
  struct Bucket {
    bool saw_dup = false, saw_out = false, saw_enum = false;
    bool planning_dup = false, planning_out = false, shortcut = false;
    int streak = 0;
    bool overthought = false;
  };
  std::map<std::pair<std::string, std::string>, Bucket> buckets;
  std::set<std::string> probed_clients;  // C3 conversations that enumerated labels

  std::string phase;
  for (const auto& e : trace) {
    if (e.type == "phase_start") {
      phase = e.data.value("phase", "");
      continue;
    }
    if (e.type == "guard_denied") {
      ++fc.hallucination;
      continue;
    }
    const std::string role = e.data.value("role", "");
    if (e.type == "core_turn") {
      Bucket& b = buckets[{phase, role}];
      const std::string kind = e.data.value("kind", "");
      if (kind == "parse_error") ++fc.hallucination;
      if (kind == "tool" || kind == "final") {
        b.streak = 0;
      } else if (++b.streak >= thresholds.overthinking_turns) {
        b.overthought = true;
      }
      continue;
    }
    if (e.type == "tool_result") {
      if (!e.data.value("ok", true)) {
        const std::string kind = e.data.value("error_kind", "");
        if (kind == "unknown_tool" || kind == "role_not_assigned" || kind == "schema_violation")
          ++fc.hallucination;
      }
      continue;
    }
    if (e.type != "tool_call") continue;
    Bucket& b = buckets[{phase, role}];
    const std::string tool = e.data.value("tool", "");
    if (tool == "detect_duplicates") b.saw_dup = true;
    if (tool == "detect_outliers") b.saw_out = true;
    if (tool == "enumerate_labels") {
      b.saw_enum = true;
      if (role.rfind("C3@", 0) == 0) probed_clients.insert(role.substr(3));
    }
    if (tool == "remove_files" && role.rfind("C2@", 0) == 0) {
      if (!b.saw_dup) b.planning_dup = true;
      if (!b.saw_out) b.planning_out = true;
    }
    if (tool == "apply_label_mapping" && role.rfind("C3@", 0) == 0 && !b.saw_enum)
      b.shortcut = true;
  }

  for (const auto& [key, b] : buckets) {
    fc.planning += static_cast<int>(b.planning_dup) + static_cast<int>(b.planning_out);
    fc.shortcutting += b.shortcut;
    fc.overthinking += b.overthought;
  }

  // Wrong single-target mappings despite having enumerated the labels first.
  const PhaseOutcome* harm = find_outcome(episode, Phase::LabelHarmonization);
  const Json clients_final =
      harm ? harm->artifacts.value("clients", Json::object()) : Json::object();
  for (const auto& cid : working_cohort(episode, manifest)) {
    if (!probed_clients.count(cid)) continue;
    const ClientRecord* cr = manifest.find_client(cid);
    if (!cr) continue;
    const auto targets = mapping_targets(clients_final.value(cid, Json::object()));
    for (const auto& dr : cr->datasets) {
      for (const auto& [fine, stems] : dr.expected) {
        if (stems.empty()) continue;
        const auto it = targets.find({dr.name, fine});
        if (it == targets.end() || it->second.size() != 1) continue;
        const auto truth = manifest.canonical_label_map.find(fine);
        if (truth != manifest.canonical_label_map.end() && *it->second.begin() != truth->second)
          ++fc.domain_reasoning;
      }
    }
  }

  return fc;
}

RunScore score_run(const fs::path& run_dir, const GroundTruthManifest& manifest,
                   const Thresholds& thresholds) {
  const EpisodeResult episode = EpisodeResult::from_json(load_json_file(run_dir / "episode.json"));
  const auto trace = TraceLog::load(run_dir / "trace.ndjson");
  const fs::path workspace = run_dir / "workspace";

  RunScore r;
  r.selection = score_client_selection(episode.selected_clients, manifest.eligible_clients);
  r.preprocessing = score_preprocessing(workspace, manifest);
  r.harmonization = score_harmonization(workspace, manifest, episode);
  r.training = score_training_start(episode, trace);
  r.failures = classify_failures(trace, episode, manifest, thresholds);
  r.tokens = episode.total_tokens;
  for (const auto& o : episode.outcomes) r.elapsed_seconds += o.elapsed_seconds;

  const double th = thresholds.higher_better;
  r.phase_success[0] = r.selection.f1 >= th;
  r.phase_success[1] = std::min({r.preprocessing.schema_compliance,
                                 r.preprocessing.duplicate_removal,
                                 r.preprocessing.format_normalization}) >= th;
  r.phase_success[2] = r.harmonization.vacuous
                           ? manifest.eligible_clients.empty()
                           : r.harmonization.exact_match >= th &&
                                 r.harmonization.coverage >= th &&
                                 r.harmonization.conflict <= thresholds.conflict;
  r.phase_success[3] = r.training.value() == 1.0;

  std::set<std::string> all_clients;
  for (const auto& cr : manifest.clients) all_clients.insert(cr.client_id);

  const PhaseOutcome* sel = find_outcome(episode, Phase::ClientSelection);
  std::set<std::string> queried;
  if (sel)
    for (const auto& q : sel->artifacts.value("queried", Json::array()))
      if (q.is_string()) queried.insert(q.get<std::string>());
  r.agent_cells[0] = !all_clients.empty() && queried == all_clients;  // S1
  r.agent_cells[1] = r.phase_success[0];                              // S2

  const PhaseOutcome* training = find_outcome(episode, Phase::FederatedTraining);
  const std::string algorithm = training ? training->artifacts.value("algorithm", "") : "";
  r.agent_cells[2] = std::find(manifest.suitable_algorithms.begin(),          // S3
                               manifest.suitable_algorithms.end(),
                               algorithm) != manifest.suitable_algorithms.end();
  r.agent_cells[3] = r.phase_success[3];  // S4

  // C1: every client reported an offer whose match flag tells the truth.
  const std::set<std::string> eligible(manifest.eligible_clients.begin(),
                                       manifest.eligible_clients.end());
  std::map<std::string, bool> offers;  // cid -> every offer correct
  for (const auto& e : trace) {
    if (e.type != "message" || e.data.value("kind", "") != "dataset_offer") continue;
    const std::string sender = e.data.value("sender", "");
    if (sender.rfind("C1@", 0) != 0) continue;
    const std::string cid = sender.substr(3);
    const Json payload = e.data.value("payload", Json::object());
    const bool correct = payload.value("match", false) == (eligible.count(cid) > 0);
    auto [it, fresh] = offers.try_emplace(cid, correct);
    if (!fresh) it->second = it->second && correct;
  }
  bool c1_ok = !all_clients.empty();
  for (const auto& cid : all_clients) {
    const auto it = offers.find(cid);
    c1_ok = c1_ok && it != offers.end() && it->second;
  }
  r.agent_cells[4] = c1_ok;               // C1
  r.agent_cells[5] = r.phase_success[1];  // C2
  r.agent_cells[6] = r.phase_success[2];  // C3
  return r;
}

double overall_from_cells(const std::array<int, 7>& cells, int runs) {
  if (runs <= 0) return 0.0;
  int sum = 0;
  for (int c : cells) sum += c;
  return static_cast<double>(sum) / (7.0 * runs);
}

MetricsReport aggregate_runs(const std::vector<RunScore>& runs, const Thresholds& thresholds) {
  MetricsReport rep;
  rep.runs = static_cast<int>(runs.size());
  rep.thresholds = thresholds;
  if (runs.empty()) return rep;

  const double n = static_cast<double>(runs.size());
  for (const auto& r : runs) {
    for (std::size_t i = 0; i < 4; ++i)
      rep.phase_success_rate[i] += r.phase_success[i] ? 1.0 / n : 0.0;
    rep.selection_mean.precision += r.selection.precision / n;
    rep.selection_mean.recall += r.selection.recall / n;
    rep.selection_mean.f1 += r.selection.f1 / n;
    rep.selection_mean.vacuous = rep.selection_mean.vacuous || r.selection.vacuous;
    rep.preprocessing_mean.schema_compliance += r.preprocessing.schema_compliance / n;
    rep.preprocessing_mean.duplicate_removal += r.preprocessing.duplicate_removal / n;
    rep.preprocessing_mean.format_normalization += r.preprocessing.format_normalization / n;
    rep.preprocessing_mean.schema_vacuous |= r.preprocessing.schema_vacuous;
    rep.preprocessing_mean.duplicates_vacuous |= r.preprocessing.duplicates_vacuous;
    rep.preprocessing_mean.normalization_vacuous |= r.preprocessing.normalization_vacuous;
    rep.harmonization_mean.exact_match += r.harmonization.exact_match / n;
    rep.harmonization_mean.coverage += r.harmonization.coverage / n;
    rep.harmonization_mean.conflict += r.harmonization.conflict / n;
    rep.harmonization_mean.vacuous = rep.harmonization_mean.vacuous || r.harmonization.vacuous;
    rep.training_mean += r.training.value() / n;
    for (std::size_t i = 0; i < rep.cell_successes.size(); ++i)
      rep.cell_successes[i] += r.agent_cells[i] ? 1 : 0;
    rep.mean_elapsed_seconds += r.elapsed_seconds / n;
    rep.mean_tokens += static_cast<double>(r.tokens) / n;
    rep.failure_totals.domain_reasoning += r.failures.domain_reasoning;
    rep.failure_totals.planning += r.failures.planning;
    rep.failure_totals.shortcutting += r.failures.shortcutting;
    rep.failure_totals.hallucination += r.failures.hallucination;
    rep.failure_totals.modality_mismatch += r.failures.modality_mismatch;
    rep.failure_totals.overthinking += r.failures.overthinking;
    rep.run_rows.push_back(r.to_json());
  }
  rep.overall_score = overall_from_cells(rep.cell_successes, rep.runs);
  return rep;
}

Json MetricsReport::to_json() const {
  Json rates = Json::object();
  for (int i = 0; i < kPhaseCount; ++i)
    rates[phase_name(static_cast<Phase>(i))] = phase_success_rate[static_cast<std::size_t>(i)];
  Json cells = Json::object();
  for (std::size_t i = 0; i < cell_successes.size(); ++i)
    cells[kAgentCellNames[i]] = cell_successes[i];
  return Json{{"runs", runs},
              {"thresholds", thresholds.to_json()},
              {"phase_success_rate", rates},
              {"selection", selection_mean.to_json()},
              {"preprocessing", preprocessing_mean.to_json()},
              {"harmonization", harmonization_mean.to_json()},
              {"training_mean", training_mean},
              {"agent_cells", cells},
              {"overall_score", overall_score},
              {"failures", failure_totals.to_json()},
              {"mean_elapsed_seconds", mean_elapsed_seconds},
              {"mean_tokens", mean_tokens},
              {"run_rows", run_rows}};
}

MetricsReport MetricsReport::from_json(const Json& j) {
  MetricsReport rep;
  rep.runs = j.value("runs", 0);
  rep.thresholds = Thresholds::from_json(j.value("thresholds", Json::object()));
  const Json rates = j.value("phase_success_rate", Json::object());
  for (int i = 0; i < kPhaseCount; ++i)
    rep.phase_success_rate[static_cast<std::size_t>(i)] =
        rates.value(phase_name(static_cast<Phase>(i)), 0.0);
  const Json sel = j.value("selection", Json::object());
  rep.selection_mean.precision = sel.value("precision", 0.0);
  rep.selection_mean.recall = sel.value("recall", 0.0);
  rep.selection_mean.f1 = sel.value("f1", 0.0);
  rep.selection_mean.vacuous = sel.value("vacuous", false);
  const Json pre = j.value("preprocessing", Json::object());
  rep.preprocessing_mean.schema_compliance = pre.value("schema_compliance", 0.0);
  rep.preprocessing_mean.duplicate_removal = pre.value("duplicate_removal", 0.0);
  rep.preprocessing_mean.format_normalization = pre.value("format_normalization", 0.0);
  rep.preprocessing_mean.schema_vacuous = pre.value("schema_vacuous", false);
  rep.preprocessing_mean.duplicates_vacuous = pre.value("duplicates_vacuous", false);
  rep.preprocessing_mean.normalization_vacuous = pre.value("normalization_vacuous", false);
  const Json harm = j.value("harmonization", Json::object());
  rep.harmonization_mean.exact_match = harm.value("exact_match", 0.0);
  rep.harmonization_mean.coverage = harm.value("coverage", 0.0);
  rep.harmonization_mean.conflict = harm.value("conflict", 0.0);
  rep.harmonization_mean.vacuous = harm.value("vacuous", false);
  rep.training_mean = j.value("training_mean", 0.0);
  const Json cells = j.value("agent_cells", Json::object());
  for (std::size_t i = 0; i < rep.cell_successes.size(); ++i)
    rep.cell_successes[i] = cells.value(kAgentCellNames[i], 0);
  rep.overall_score = j.value("overall_score", 0.0);
  rep.failure_totals = FailureCounts::from_json(j.value("failures", Json::object()));
  rep.mean_elapsed_seconds = j.value("mean_elapsed_seconds", 0.0);
  rep.mean_tokens = j.value("mean_tokens", 0.0);
  for (const auto& row : j.value("run_rows", Json::array())) rep.run_rows.push_back(row);
  return rep;
}

std::string MetricsReport::to_csv() const {
  std::ostringstream out;
  out << "run,precision,recall,f1,schema_compliance,duplicate_removal,format_normalization,"
         "exact_match,coverage,conflict,training_start,S1,S2,S3,S4,C1,C2,C3,"
         "elapsed_seconds,tokens\n";
  auto row = [&](const std::string& label, const Json& r) {
    const Json sel = r.value("selection", Json::object());
    const Json pre = r.value("preprocessing", Json::object());
    const Json harm = r.value("harmonization", Json::object());
    const Json train = r.value("training", Json::object());
    const Json cells = r.value("agent_cells", Json::object());
    out << label << ',' << fmt_rate(sel.value("precision", 0.0)) << ','
        << fmt_rate(sel.value("recall", 0.0)) << ',' << fmt_rate(sel.value("f1", 0.0)) << ','
        << fmt_rate(pre.value("schema_compliance", 0.0)) << ','
        << fmt_rate(pre.value("duplicate_removal", 0.0)) << ','
        << fmt_rate(pre.value("format_normalization", 0.0)) << ','
        << fmt_rate(harm.value("exact_match", 0.0)) << ','
        << fmt_rate(harm.value("coverage", 0.0)) << ','
        << fmt_rate(harm.value("conflict", 0.0)) << ','
        << fmt_rate(train.value("value", 0.0));
    for (const char* name : kAgentCellNames) out << ',' << (cells.value(name, false) ? 1 : 0);
    out << ',' << fmt_rate(r.value("elapsed_seconds", 0.0)) << ','
        << r.value("tokens", std::int64_t{0}) << '\n';
  };
  for (std::size_t i = 0; i < run_rows.size(); ++i) row(std::to_string(i + 1), run_rows[i]);
  out << "mean," << fmt_rate(selection_mean.precision) << ',' << fmt_rate(selection_mean.recall)
      << ',' << fmt_rate(selection_mean.f1) << ',' << fmt_rate(preprocessing_mean.schema_compliance)
      << ',' << fmt_rate(preprocessing_mean.duplicate_removal) << ','
      << fmt_rate(preprocessing_mean.format_normalization) << ','
      << fmt_rate(harmonization_mean.exact_match) << ',' << fmt_rate(harmonization_mean.coverage)
      << ',' << fmt_rate(harmonization_mean.conflict) << ',' << fmt_rate(training_mean);
  for (std::size_t i = 0; i < cell_successes.size(); ++i)
    out << ',' << fmt_rate(runs > 0 ? static_cast<double>(cell_successes[i]) / runs : 0.0);
  out << ',' << fmt_rate(mean_elapsed_seconds) << ',' << fmt_rate(mean_tokens) << '\n';
  return out.str();
}

std::string MetricsReport::to_markdown() const {
  std::ostringstream out;
  out << "# Evaluation report\n\n";
  out << runs << " run" << (runs == 1 ? "" : "s") << ", overall score **"
      << fmt_percent(overall_score) << "**.\n\n";

  out << "| Phase | Metrics | Success rate |\n| --- | --- | --- |\n";
  out << "| Client selection | P " << fmt_rate(selection_mean.precision) << " / R "
      << fmt_rate(selection_mean.recall) << " / F1 " << fmt_rate(selection_mean.f1) << " | "
      << fmt_percent(phase_success_rate[0]) << " |\n";
  out << "| Data preprocessing | S " << fmt_rate(preprocessing_mean.schema_compliance) << " / D "
      << fmt_rate(preprocessing_mean.duplicate_removal) << " / F "
      << fmt_rate(preprocessing_mean.format_normalization) << " | "
      << fmt_percent(phase_success_rate[1]) << " |\n";
  out << "| Label harmonization | E " << fmt_rate(harmonization_mean.exact_match) << " / C "
      << fmt_rate(harmonization_mean.coverage) << " / Co "
      << fmt_rate(harmonization_mean.conflict) << " | " << fmt_percent(phase_success_rate[2])
      << " |\n";
  out << "| Training start | T " << fmt_rate(training_mean) << " | "
      << fmt_percent(phase_success_rate[3]) << " |\n\n";

  out << "|";
  for (const char* name : kAgentCellNames) out << ' ' << name << " |";
  out << " Overall |\n|";
  for (std::size_t i = 0; i < cell_successes.size() + 1; ++i) out << " --- |";
  out << "\n|";
  for (std::size_t i = 0; i < cell_successes.size(); ++i)
    out << ' ' << cell_successes[i] << '/' << runs << " |";
  out << ' ' << fmt_percent(overall_score) << " |\n\n";

  out << "| Failure signature | Count |\n| --- | --- |\n";
  const Json f = failure_totals.to_json();
  for (const auto& [key, value] : f.items())
    out << "| " << key << " | " << value.get<int>() << " |\n";
  out << "\nMean elapsed: " << fmt_rate(mean_elapsed_seconds)
      << " s. Mean tokens: " << fmt_rate(mean_tokens) << ".\n";
  return out.str();
}

}  // namespace fedharness
