#include <algorithm>
#include <atomic>
#include <cstdio>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "fedharness/agent.hpp"
#include "fedharness/envgen.hpp"
#include "fedharness/evaluator.hpp"
#include "fedharness/runtime.hpp"

using namespace fedharness;

namespace {

// Exit codes are part of the scripting surface; keep them stable.
constexpr int kExitConfigParse = 2;
constexpr int kExitDestination = 3;
constexpr int kExitNoRunCompleted = 4;
constexpr int kExitMismatch = 5;
constexpr int kExitNoReports = 6;

struct RunConfig {
  fs::path workspace;  // existing environment, or empty when generating inline
  std::optional<EnvironmentConfig> environment;
  fs::path output_dir = "runs";
  int runs = 5;
  std::vector<std::uint64_t> seeds;
  std::string guidance_mode;  // empty keeps the task file's setting
  std::string core_kind = "scripted_oracle";
  double noise = 0.0;
  std::uint64_t noise_seed = 1;
  std::optional<RemoteCore::Endpoint> endpoint;  // overrides environment variables
  CoreBudget budget;
  int training_rounds = 20;
  int jobs = 1;          // concurrent runs
  int episode_jobs = 1;  // client-wave concurrency inside one episode
  bool wall_clock = false;

  static RunConfig from_json(const Json& j) {
    RunConfig c;
    c.workspace = j.value("workspace", std::string{});
    if (j.contains("environment"))
      c.environment = EnvironmentConfig::from_json(j.at("environment"));
    c.output_dir = j.value("output_dir", std::string{"runs"});
    c.runs = j.value("runs", 5);
    for (const auto& s : j.value("seeds", Json::array()))
      c.seeds.push_back(s.get<std::uint64_t>());
    c.guidance_mode = j.value("guidance_mode", std::string{});
    const Json core = j.value("core", Json::object());
    c.core_kind = core.value("kind", std::string{"scripted_oracle"});
    c.noise = core.value("noise", 0.0);
    c.noise_seed = core.value("noise_seed", std::uint64_t{1});
    if (core.contains("endpoint")) {
      const Json& e = core.at("endpoint");
      RemoteCore::Endpoint ep;
      ep.url = e.value("url", std::string{});
      ep.key = e.value("key", std::string{});
      ep.model = e.value("model", std::string{"default"});
      ep.timeout_secs = e.value("timeout_secs", 60);
      c.endpoint = ep;
    }
    const Json budget = j.value("budget", Json::object());
    c.budget.max_tool_calls_per_phase =
        budget.value("tool_calls_per_phase", c.budget.max_tool_calls_per_phase);
    c.budget.max_tokens_per_episode =
        budget.value("tokens_per_episode", c.budget.max_tokens_per_episode);
    c.training_rounds = j.value("training_rounds", 20);
    c.jobs = j.value("jobs", 1);
    c.episode_jobs = j.value("episode_jobs", 1);
    c.wall_clock = j.value("wall_clock", false);
    return c;
  }
};

CoreFactory build_factory(const RunConfig& cfg) {
  if (cfg.core_kind == "remote_llm" && cfg.endpoint) {
    auto ep = *cfg.endpoint;
    if (ep.url.empty()) throw HarnessError("remote endpoint has no url");
    return [ep](const RoleId&) { return std::make_unique<RemoteCore>(ep); };
  }
  const std::string kind = cfg.core_kind;
  const double noise = cfg.noise;
  const std::uint64_t seed = cfg.noise_seed;
  make_core(kind, noise, seed);  // resolve once up front so bad configs fail before any run
  return [kind, noise, seed](const RoleId&) { return make_core(kind, noise, seed); };
}

int cmd_generate(const std::string& config_path, const std::string& out_flag) {
  EnvironmentConfig cfg;
  fs::path out;
  try {
    const Json j = load_json_file(config_path);
    cfg = EnvironmentConfig::from_json(j);
    cfg.validate();
    out = out_flag.empty() ? fs::path(j.value("out_dir", std::string{})) : fs::path(out_flag);
    if (out.empty())
      throw HarnessError("no destination: set out_dir in the config or pass --out");
  } catch (const std::exception& e) {
    std::fprintf(stderr, "config error in %s: %s\n", config_path.c_str(), e.what());
    return kExitConfigParse;
  }
  if (fs::exists(out) && !fs::is_empty(out)) {
    std::fprintf(stderr, "destination %s already holds content\n", out.string().c_str());
    return kExitDestination;
  }
  GroundTruthManifest manifest;
  try {
    manifest = generate_environment(cfg, out);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "generation failed: %s\n", e.what());
    return kExitDestination;
  }
  std::size_t datasets = 0, expected = 0, duplicates = 0, off_modality = 0, mislabeled = 0,
              junk = 0, perturbed = 0;
  for (const auto& cr : manifest.clients)
    for (const auto& dr : cr.datasets) {
      ++datasets;
      expected += dr.expected_total();
      duplicates += dr.duplicates.size();
      off_modality += dr.off_modality.size();
      mislabeled += dr.mislabeled.size();
      junk += dr.junk.size();
      perturbed += dr.perturbations.size();
    }
  std::printf("workspace %s\n", out.string().c_str());
  std::printf("clients %zu (%zu eligible), datasets %zu, clean files %zu\n",
              manifest.clients.size(), manifest.eligible_clients.size(), datasets, expected);
  std::printf("injected: %zu duplicates, %zu off-modality, %zu mislabeled, %zu junk, %zu perturbed\n",
              duplicates, off_modality, mislabeled, junk, perturbed);
  std::printf("manifest_hash %s\n", hex64(hash_file(out / "manifest.json")).c_str());
  return 0;
}

int cmd_run(const std::string& config_path, int runs_flag, const std::string& out_flag,
            const std::string& core_flag, double noise_flag, std::int64_t seed_flag,
            const std::string& guidance_flag, int jobs_flag) {
  RunConfig cfg;
  try {
    cfg = RunConfig::from_json(load_json_file(config_path));
    if (runs_flag > 0) cfg.runs = runs_flag;
    if (!out_flag.empty()) cfg.output_dir = out_flag;
    if (!core_flag.empty()) cfg.core_kind = core_flag;
    if (noise_flag >= 0.0) cfg.noise = noise_flag;
    if (!guidance_flag.empty()) cfg.guidance_mode = guidance_flag;
    if (jobs_flag > 0) cfg.jobs = jobs_flag;
    if (seed_flag >= 0) {
      cfg.seeds.clear();
      for (int i = 0; i < cfg.runs; ++i)
        cfg.seeds.push_back(static_cast<std::uint64_t>(seed_flag) + static_cast<std::uint64_t>(i));
    }
    if (cfg.runs < 1) throw HarnessError("runs must be at least 1");
    if (!cfg.guidance_mode.empty() && !guidance_mode_from_name(cfg.guidance_mode))
      throw HarnessError("unknown guidance mode: " + cfg.guidance_mode);
    if (!cfg.environment && cfg.workspace.empty())
      throw HarnessError("config needs either a workspace path or an environment section");
  } catch (const std::exception& e) {
    std::fprintf(stderr, "config error in %s: %s\n", config_path.c_str(), e.what());
    return kExitConfigParse;
  }

  CoreFactory factory;
  try {
    factory = build_factory(cfg);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "core setup failed: %s\n", e.what());
    return kExitConfigParse;
  }

  fs::path workspace = cfg.workspace;
  try {
    if (cfg.environment) {
      workspace = cfg.output_dir / "base";
      if (fs::exists(workspace) && !fs::is_empty(workspace)) {
        std::fprintf(stderr, "destination %s already holds content\n",
                     workspace.string().c_str());
        return kExitDestination;
      }
      generate_environment(*cfg.environment, workspace);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "generation failed: %s\n", e.what());
    return kExitDestination;
  }
  if (!fs::exists(workspace / "task.json")) {
    std::fprintf(stderr, "workspace %s is missing or not a generated environment\n",
                 workspace.string().c_str());
    return kExitDestination;
  }

  TaskSpec task;
  try {
    task = TaskSpec::from_json(load_json_file(workspace / "task.json"));
    if (!cfg.guidance_mode.empty()) task.guidance_mode = *guidance_mode_from_name(cfg.guidance_mode);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "cannot read task file: %s\n", e.what());
    return kExitDestination;
  }

  fs::create_directories(cfg.output_dir);
  std::vector<fs::path> run_dirs;
  char name[16];
  for (int i = 0; i < cfg.runs; ++i) {
    std::snprintf(name, sizeof(name), "run_%02d", i + 1);
    run_dirs.emplace_back(cfg.output_dir / name);
    if (fs::exists(run_dirs.back())) {
      std::fprintf(stderr, "destination %s already holds content\n",
                   run_dirs.back().string().c_str());
      return kExitDestination;
    }
  }

  std::vector<std::string> lines(static_cast<std::size_t>(cfg.runs));
  std::vector<char> completed(static_cast<std::size_t>(cfg.runs), 0);
  auto one_run = [&](int i) {
    const auto idx = static_cast<std::size_t>(i);
    EpisodeOptions opt;
    opt.budget = cfg.budget;
    opt.jobs = cfg.episode_jobs;
    opt.seed = idx < cfg.seeds.size() ? cfg.seeds[idx] : static_cast<std::uint64_t>(i) + 1;
    opt.training_rounds = cfg.training_rounds;
    opt.wall_clock = cfg.wall_clock;
    try {
      copy_tree(workspace, run_dirs[idx] / "workspace");
      EpisodeRunner runner(run_dirs[idx] / "workspace", run_dirs[idx], factory, opt);
      const EpisodeResult result = runner.run(task);
      int done = 0;
      for (const auto& o : result.outcomes) done += o.completed ? 1 : 0;
      lines[idx] = "run " + std::to_string(i + 1) + ": " + std::to_string(done) +
                   "/4 phases completed, " + std::to_string(result.total_tool_calls) +
                   " tool calls, " + std::to_string(result.total_tokens) + " tokens";
      completed[idx] = 1;
    } catch (const std::exception& e) {
      write_file_text(run_dirs[idx] / "error.txt", std::string(e.what()) + "\n");
      lines[idx] = "run " + std::to_string(i + 1) + " failed: " + e.what();
    }
  };

  if (cfg.jobs <= 1) {
    for (int i = 0; i < cfg.runs; ++i) one_run(i);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    const int width = std::min(cfg.jobs, cfg.runs);
    for (int w = 0; w < width; ++w)
      pool.emplace_back([&] {
        for (int i = next.fetch_add(1); i < cfg.runs; i = next.fetch_add(1)) one_run(i);
      });
    for (auto& t : pool) t.join();
  }

  int ok = 0;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::printf("%s\n", lines[i].c_str());
    ok += completed[i];
  }
  std::printf("%d/%d runs completed under %s\n", ok, cfg.runs,
              cfg.output_dir.string().c_str());
  return ok >= 1 ? 0 : kExitNoRunCompleted;
}

int cmd_evaluate(const std::string& runs_dir, std::string label, double higher_better,
                 double conflict) {
  Thresholds th;
  th.higher_better = higher_better;
  th.conflict = conflict;

  std::vector<fs::path> run_dirs;
  if (fs::exists(runs_dir))
    for (const auto& entry : sorted_dir_entries(runs_dir))
      if (fs::is_directory(entry) && fs::exists(entry / "episode.json"))
        run_dirs.push_back(entry);
  if (run_dirs.empty()) {
    std::fprintf(stderr, "no completed runs under %s\n", runs_dir.c_str());
    return kExitMismatch;
  }

  GroundTruthManifest manifest;
  std::vector<RunScore> scores;
  try {
    manifest = GroundTruthManifest::load(run_dirs.front() / "workspace" / "manifest.json");
    for (const auto& rd : run_dirs) {
      const EpisodeResult episode =
          EpisodeResult::from_json(load_json_file(rd / "episode.json"));
      if (label.empty()) label = episode.core_kind;
      // the episode must describe the same task the manifest scores against
      if (modality_name(episode.task.modality) != manifest.task.value("modality", "") ||
          episode.task.target_schema !=
              manifest.task.value("target_schema", std::vector<std::string>{}))
        throw HarnessError(rd.string() + " was produced for a different task");
      scores.push_back(score_run(rd, manifest, th));
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "evaluation failed: %s\n", e.what());
    return kExitMismatch;
  }

  MetricsReport report = aggregate_runs(scores, th);
  Json j = report.to_json();
  j["label"] = label.empty() ? std::string{"unnamed"} : label;
  save_json_file(fs::path(runs_dir) / "report.json", j);
  write_file_text(fs::path(runs_dir) / "report.csv", report.to_csv());
  write_file_text(fs::path(runs_dir) / "report.md", report.to_markdown());
  std::printf("%s", report.to_markdown().c_str());
  return 0;
}

void collect_reports(const fs::path& dir, std::vector<fs::path>& out) {
  if (fs::exists(dir / "report.json")) out.push_back(dir / "report.json");
  for (const auto& entry : sorted_dir_entries(dir))
    if (fs::is_directory(entry)) collect_reports(entry, out);
}

int cmd_report(const std::string& reports_dir) {
  std::vector<fs::path> files;
  if (fs::exists(reports_dir)) collect_reports(reports_dir, files);
  if (files.empty()) {
    std::fprintf(stderr, "no report.json found under %s\n", reports_dir.c_str());
    return kExitNoReports;
  }

  struct Row {
    std::string label;
    MetricsReport report;
  };
  std::vector<Row> rows;
  for (const auto& f : files) {
    const Json j = load_json_file(f);
    rows.push_back({j.value("label", f.parent_path().filename().string()),
                    MetricsReport::from_json(j)});
  }
  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    return a.report.overall_score > b.report.overall_score;
  });

  std::string board = "| Model | Runs | Overall | Selection F1 | Preprocessing | "
                      "Harmonization E | Training | Mean tokens |\n"
                      "| --- | --- | --- | --- | --- | --- | --- | --- |\n";
  std::string board_csv =
      "label,runs,overall_score,selection_f1,preprocessing_min,harmonization_exact,"
      "training_mean,mean_tokens\n";
  std::string series = "label,run,tokens,score\n";
  char buf[256];
  for (const auto& r : rows) {
    const auto& m = r.report;
    const double pre_min = std::min({m.preprocessing_mean.schema_compliance,
                                     m.preprocessing_mean.duplicate_removal,
                                     m.preprocessing_mean.format_normalization});
    std::snprintf(buf, sizeof(buf),
                  "| %s | %d | %.2f%% | %.4f | %.4f | %.4f | %.4f | %.0f |\n",
                  r.label.c_str(), m.runs, m.overall_score * 100.0, m.selection_mean.f1,
                  pre_min, m.harmonization_mean.exact_match, m.training_mean, m.mean_tokens);
    board += buf;
    std::snprintf(buf, sizeof(buf), "%s,%d,%.6f,%.4f,%.4f,%.4f,%.4f,%.1f\n", r.label.c_str(),
                  m.runs, m.overall_score, m.selection_mean.f1, pre_min,
                  m.harmonization_mean.exact_match, m.training_mean, m.mean_tokens);
    board_csv += buf;
    for (std::size_t i = 0; i < m.run_rows.size(); ++i) {
      const Json& row = m.run_rows[i];
      const Json cell_map = row.value("agent_cells", Json::object());
      int cells = 0;
      for (const auto& [key, value] : cell_map.items())
        cells += value.get<bool>() ? 1 : 0;
      std::snprintf(buf, sizeof(buf), "%s,%zu,%lld,%.6f\n", r.label.c_str(), i + 1,
                    static_cast<long long>(row.value("tokens", std::int64_t{0})),
                    cells / 7.0);
      series += buf;
    }
  }
  write_file_text(fs::path(reports_dir) / "leaderboard.md", board);
  write_file_text(fs::path(reports_dir) / "leaderboard.csv", board_csv);
  write_file_text(fs::path(reports_dir) / "tokens_vs_score.csv", series);
  std::printf("%s", board.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"benchmark harness for agent-run federated learning over messy medical imaging workspaces"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("generate", "build a synthetic multi-client workspace");
  std::string gen_config, gen_out;
  gen->add_option("config", gen_config, "environment config file")->required();
  gen->add_option("--out", gen_out, "destination directory (overrides out_dir)");

  auto* run = app.add_subcommand("run", "execute benchmark episodes");
  std::string run_config, run_out, run_core, run_guidance;
  int run_runs = 0, run_jobs = 0;
  double run_noise = -1.0;
  std::int64_t run_seed = -1;
  run->add_option("config", run_config, "run config file")->required();
  run->add_option("--runs", run_runs, "number of runs (overrides config)");
  run->add_option("--out", run_out, "output directory (overrides config)");
  run->add_option("--core", run_core, "agent core kind (overrides config)");
  run->add_option("--noise", run_noise, "flip probability for the noisy core");
  run->add_option("--seed", run_seed, "base episode seed; run i uses seed+i");
  run->add_option("--guidance", run_guidance, "fine_grained or goal_oriented");
  run->add_option("--jobs", run_jobs, "concurrent runs (default 1, deterministic)");

  auto* eval = app.add_subcommand("evaluate", "score finished runs against ground truth");
  std::string eval_dir, eval_label;
  double eval_threshold = 0.95, eval_conflict = 0.05;
  eval->add_option("runs_dir", eval_dir, "directory produced by the run command")->required();
  eval->add_option("--label", eval_label, "model label for the report");
  eval->add_option("--threshold", eval_threshold, "success threshold for higher-is-better rates");
  eval->add_option("--conflict", eval_conflict, "tolerated conflict rate");

  auto* rep = app.add_subcommand("report", "merge evaluation reports into a leaderboard");
  std::string rep_dir;
  rep->add_option("reports_dir", rep_dir, "directory tree holding report.json files")->required();

  CLI11_PARSE(app, argc, argv);

  if (gen->parsed()) return cmd_generate(gen_config, gen_out);
  if (run->parsed())
    return cmd_run(run_config, run_runs, run_out, run_core, run_noise, run_seed, run_guidance,
                   run_jobs);
  if (eval->parsed()) return cmd_evaluate(eval_dir, eval_label, eval_threshold, eval_conflict);
  if (rep->parsed()) return cmd_report(rep_dir);
  return 0;
}
