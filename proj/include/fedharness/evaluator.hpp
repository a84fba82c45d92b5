#pragma once

#include <array>
#include <string>
#include <vector>

#include "fedharness/common.hpp"
#include "fedharness/manifest.hpp"
#include "fedharness/runtime.hpp"

namespace fedharness {

// Success thresholds: a phase succeeds when its higher-is-better rates reach
// `higher_better` and conflict stays at or under `conflict`.
struct Thresholds {
  double higher_better = 0.95;
  double conflict = 0.05;
  int overthinking_turns = 10;

  Json to_json() const;
  static Thresholds from_json(const Json& j);
};

struct SelectionScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool vacuous = false;

  Json to_json() const;
};

struct PreprocessingScore {
  double schema_compliance = 0.0;
  double duplicate_removal = 0.0;
  double format_normalization = 0.0;
  bool schema_vacuous = false;
  bool duplicates_vacuous = false;
  bool normalization_vacuous = false;

  Json to_json() const;
};

struct HarmonizationScore {
  double exact_match = 0.0;
  double coverage = 0.0;
  double conflict = 0.0;
  bool vacuous = false;

  Json to_json() const;
};

struct TrainingScore {
  bool config_valid = false;
  bool initialized = false;
  bool start_signal_logged = false;
  std::string reason;

  double value() const { return config_valid && initialized && start_signal_logged ? 1.0 : 0.0; }
  Json to_json() const;
};

struct FailureCounts {
  int domain_reasoning = 0;     // mapped wrong despite probing the labels first
  int planning = 0;             // removal without the mandatory detector probes
  int shortcutting = 0;         // mapping emitted with no enumeration probe
  int hallucination = 0;        // unparseable output, unknown tools, denied routes
  int modality_mismatch = 0;    // clients selected against the task's data
  int overthinking = 0;         // long tool-free turn streaks

  int total() const;
  Json to_json() const;
  static FailureCounts from_json(const Json& j);
};

constexpr std::array<const char*, 7> kAgentCellNames = {"S1", "S2", "S3", "S4",
                                                        "C1", "C2", "C3"};

struct RunScore {
  SelectionScore selection;
  PreprocessingScore preprocessing;
  HarmonizationScore harmonization;
  TrainingScore training;
  std::array<bool, 4> phase_success{};
  std::array<bool, 7> agent_cells{};  // order matches kAgentCellNames
  FailureCounts failures;
  double elapsed_seconds = 0.0;
  std::int64_t tokens = 0;

  Json to_json() const;
};

SelectionScore score_client_selection(const std::vector<std::string>& selected,
                                      const std::vector<std::string>& eligible);

// Scored against the canonical cohort: every eligible client's datasets count,
// so skipping a client hurts the same as cleaning it badly.
PreprocessingScore score_preprocessing(const fs::path& workspace,
                                       const GroundTruthManifest& manifest);

// Universe: classes of the selected clients' datasets (the cohort the episode
// actually harmonized); empty selection scores vacuously.
HarmonizationScore score_harmonization(const fs::path& workspace,
                                       const GroundTruthManifest& manifest,
                                       const EpisodeResult& episode);

TrainingScore score_training_start(const EpisodeResult& episode,
                                   const std::vector<TraceEvent>& trace);

FailureCounts classify_failures(const std::vector<TraceEvent>& trace,
                                const EpisodeResult& episode,
                                const GroundTruthManifest& manifest,
                                const Thresholds& thresholds);

// Scores one run directory: workspace/, episode.json, trace.ndjson.
RunScore score_run(const fs::path& run_dir, const GroundTruthManifest& manifest,
                   const Thresholds& thresholds = {});

struct MetricsReport {
  int runs = 0;
  Thresholds thresholds;
  std::array<double, 4> phase_success_rate{};
  SelectionScore selection_mean;
  PreprocessingScore preprocessing_mean;
  HarmonizationScore harmonization_mean;
  double training_mean = 0.0;
  std::array<int, 7> cell_successes{};
  double overall_score = 0.0;  // sum of cell successes / (7 * runs)
  FailureCounts failure_totals;
  double mean_elapsed_seconds = 0.0;
  double mean_tokens = 0.0;
  std::vector<Json> run_rows;

  Json to_json() const;
  static MetricsReport from_json(const Json& j);
  std::string to_csv() const;
  std::string to_markdown() const;
};

MetricsReport aggregate_runs(const std::vector<RunScore>& runs,
                             const Thresholds& thresholds = {});

// The chips arithmetic on its own: cells hold per-agent success counts.
double overall_from_cells(const std::array<int, 7>& cells, int runs);

}  // namespace fedharness
