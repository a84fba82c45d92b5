// Acceptance gate: property checks and arithmetic cross-checks over the whole
// harness. Each criterion prints exactly one PASS/FAIL line; the binary exits
// nonzero when any required criterion fails.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <map>
#include <memory>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "fedharness/agent.hpp"
#include "fedharness/envgen.hpp"
#include "fedharness/evaluator.hpp"
#include "fedharness/fedcore.hpp"
#include "fedharness/image.hpp"
#include "fedharness/modality.hpp"
#include "fedharness/registry.hpp"
#include "fedharness/runtime.hpp"
#include "fedharness/toolkit.hpp"

using namespace fedharness;

namespace {

fs::path g_scratch;
fs::path g_episode_trace;  // an end-to-end run's trace, scanned again by the fuzz check

std::string strf(const char* fmt, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, fmt);
  std::vsnprintf(buf, sizeof(buf), fmt, ap);
  va_end(ap);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct Outcome {
  enum class Status { Pass, Fail, Skip };
  Status status = Status::Fail;
  std::string detail;
};

Outcome pass(std::string detail) { return {Outcome::Status::Pass, std::move(detail)}; }
Outcome fail(std::string detail) { return {Outcome::Status::Fail, std::move(detail)}; }
Outcome skip(std::string detail) { return {Outcome::Status::Skip, std::move(detail)}; }

CoreFactory oracle_factory() {
  return [](const RoleId&) -> std::unique_ptr<AgentCore> { return std::make_unique<OracleCore>(); };
}

EpisodeResult run_episode(const fs::path& run_dir, CoreFactory factory, std::uint64_t seed) {
  EpisodeOptions opt;
  opt.seed = seed;
  const TaskSpec task = TaskSpec::from_json(load_json_file(run_dir / "workspace" / "task.json"));
  EpisodeRunner runner(run_dir / "workspace", run_dir, std::move(factory), opt);
  return runner.run(task);
}

// Empty when the run hit the scoring ceiling everywhere; else the first miss.
std::string imperfection(const RunScore& s) {
  auto off = [](double v, double want) { return std::abs(v - want) > 0.0; };
  if (off(s.selection.precision, 1) || off(s.selection.recall, 1) || off(s.selection.f1, 1))
    return "selection " + s.selection.to_json().dump();
  if (off(s.preprocessing.schema_compliance, 1) || off(s.preprocessing.duplicate_removal, 1) ||
      off(s.preprocessing.format_normalization, 1))
    return "preprocessing " + s.preprocessing.to_json().dump();
  if (off(s.harmonization.exact_match, 1) || off(s.harmonization.coverage, 1) ||
      off(s.harmonization.conflict, 0))
    return "harmonization " + s.harmonization.to_json().dump();
  if (s.training.value() != 1.0) return "training " + s.training.reason;
  for (int i = 0; i < 4; ++i)
    if (!s.phase_success[i]) return strf("phase %d not successful", i);
  for (std::size_t i = 0; i < s.agent_cells.size(); ++i)
    if (!s.agent_cells[i]) return std::string("agent cell ") + kAgentCellNames[i] + " failed";
  if (s.failures.total() != 0) return "failure signatures " + s.failures.to_json().dump();
  return {};
}

Outcome oracle_perfect_scores() {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<RunScore> scores;
  for (int m = 0; m < kModalityCount; ++m) {
    for (int seed = 1; seed <= 50; ++seed) {
      EnvironmentConfig cfg;
      cfg.seed = static_cast<std::uint64_t>(100 * m + seed);
      cfg.modality = static_cast<Modality>(m);
      const fs::path dir =
          g_scratch / "ceiling" / (modality_prefix(cfg.modality) + "_" + std::to_string(seed));
      const GroundTruthManifest manifest = generate_environment(cfg, dir / "workspace");
      run_episode(dir, oracle_factory(), static_cast<std::uint64_t>(seed));
      RunScore s = score_run(dir, manifest);
      const std::string miss = imperfection(s);
      if (!miss.empty())
        return fail(modality_name(cfg.modality) + " seed " + std::to_string(seed) + ": " + miss +
                    " (kept " + dir.string() + ")");
      scores.push_back(std::move(s));
      fs::remove_all(dir);
    }
  }
  const MetricsReport report = aggregate_runs(scores);
  if (report.overall_score != 1.0)
    return fail(strf("aggregate overall %.6f, expected exactly 1", report.overall_score));
  const double elapsed = seconds_since(t0);
  if (elapsed >= 300.0) return fail(strf("300 runs perfect but took %.1fs (budget 300s)", elapsed));
  return pass(strf("300 runs across 6 modality environments all at ceiling, %.1fs", elapsed));
}

Outcome corruption_count_bounds() {
  int datasets = 0, envs = 0;
  for (std::uint64_t i = 0; datasets < 200; ++i) {
    EnvironmentConfig cfg;
    cfg.seed = 7000 + i;
    cfg.modality = static_cast<Modality>(i % kModalityCount);
    cfg.num_clients = 4;
    const fs::path dir = g_scratch / "counts" / ("env_" + std::to_string(i));
    const GroundTruthManifest manifest = generate_environment(cfg, dir);
    ++envs;
    for (const auto& cr : manifest.clients) {
      for (const auto& dr : cr.datasets) {
        ++datasets;
        const auto in_bounds = [](std::size_t n) { return n >= 2 && n <= 5; };
        if (!in_bounds(dr.duplicates.size()) || !in_bounds(dr.off_modality.size()) ||
            !in_bounds(dr.mislabeled.size()))
          return fail(strf("seed %llu client %s dataset %s: dup=%zu off=%zu mis=%zu outside [2,5]",
                           static_cast<unsigned long long>(cfg.seed), cr.client_id.c_str(),
                           dr.name.c_str(), dr.duplicates.size(), dr.off_modality.size(),
                           dr.mislabeled.size()));
      }
    }
    fs::remove_all(dir);
  }
  return pass(strf("%d datasets over %d environments, every corruption count within [2,5]",
                   datasets, envs));
}

Outcome score_table_arithmetic() {
  const double a = overall_from_cells({5, 4, 5, 5, 5, 4, 5}, 5) * 100.0;
  const double b = overall_from_cells({5, 0, 5, 0, 0, 0, 5}, 5) * 100.0;
  if (std::abs(a - 94.29) > 0.005)
    return fail(strf("33/35 cells gave %.4f%%, expected 94.29 within 0.005", a));
  if (std::abs(b - 42.86) > 0.005)
    return fail(strf("15/35 cells gave %.4f%%, expected 42.86 within 0.005", b));
  return pass(strf("33/35 -> %.4f%% and 15/35 -> %.4f%%, both within 0.005 points", a, b));
}

// Counts memberships with plain loops so the comparison does not share set
// machinery with the evaluator.
Outcome metric_brute_force_parity() {
  std::mt19937_64 gen(424242);
  const auto coin = [&gen](double p) {
    return static_cast<double>(gen() >> 11) * 0x1.0p-53 < p;
  };

  std::vector<std::string> ids;
  for (int i = 1; i <= 10; ++i) ids.push_back("c" + std::to_string(i));
  for (int t = 0; t < 1000; ++t) {
    std::vector<std::string> selected, eligible;
    for (const auto& id : ids) {
      if (coin(0.4)) selected.push_back(id);
      if (coin(0.4)) eligible.push_back(id);
    }
    if (!selected.empty() && coin(0.3)) selected.push_back(selected[gen() % selected.size()]);

    std::vector<std::string> su, eu;
    for (const auto& c : selected)
      if (std::find(su.begin(), su.end(), c) == su.end()) su.push_back(c);
    for (const auto& c : eligible)
      if (std::find(eu.begin(), eu.end(), c) == eu.end()) eu.push_back(c);
    std::size_t hits = 0;
    for (const auto& a : su)
      for (const auto& b : eu)
        if (a == b) ++hits;
    double bp, br, bf;
    bool bvac = false;
    if (su.empty() && eu.empty()) {
      bp = br = bf = 1.0;
      bvac = true;
    } else {
      bp = su.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(su.size());
      br = eu.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(eu.size());
      bf = bp + br > 0.0 ? 2.0 * bp * br / (bp + br) : 0.0;
    }

    const SelectionScore s = score_client_selection(selected, eligible);
    if (s.precision != bp || s.recall != br || s.f1 != bf || s.vacuous != bvac)
      return fail(strf("selection pair %d: evaluator (%.17g, %.17g, %.17g) vs counter "
                       "(%.17g, %.17g, %.17g)",
                       t, s.precision, s.recall, s.f1, bp, br, bf));
  }

  // Fixed six-class workspace; the mapping table and one physical split vary
  // per trial.
  const fs::path ws = g_scratch / "bforce" / "ws";
  const std::vector<std::string> fines = {"f1", "f2", "f3", "f4", "f5", "f6"};
  const std::vector<std::string> pool = {"benign", "malignant", "indeterminate", ""};
  GroundTruthManifest manifest;
  ClientRecord client;
  client.client_id = "c1";
  client.eligible = true;
  DatasetRecord ds;
  ds.name = "d1";
  for (std::size_t i = 0; i < fines.size(); ++i) {
    ds.expected[fines[i]] = {"s1", "s2"};
    manifest.canonical_label_map[fines[i]] = pool[i % 2];
    fs::create_directories(ws / "clients/c1/d1" / fines[i]);
    write_file_text(ws / "clients/c1/d1" / fines[i] / "s1.pgm", "x");
    write_file_text(ws / "clients/c1/d1" / fines[i] / "s2.pgm", "x");
  }
  client.datasets.push_back(ds);
  manifest.clients.push_back(client);
  manifest.eligible_clients = {"c1"};

  EpisodeResult episode;
  episode.selected_clients = {"c1"};
  PhaseOutcome sel;
  sel.phase = Phase::ClientSelection;
  sel.completed = true;
  PhaseOutcome harm;
  harm.phase = Phase::LabelHarmonization;
  harm.completed = true;
  episode.outcomes = {sel, harm};

  const fs::path split_a = ws / "clients/c1/d1/benign/f6__z1.pgm";
  const fs::path split_b = ws / "clients/c1/d1/malignant/f6__z2.pgm";
  fs::create_directories(ws / "clients/c1/d1/benign");
  fs::create_directories(ws / "clients/c1/d1/malignant");

  for (int t = 0; t < 1000; ++t) {
    const bool split = coin(0.3);
    fs::remove(split_a);
    fs::remove(split_b);
    if (split) {
      write_file_text(split_a, "x");
      write_file_text(split_b, "x");
    }

    Json rows = Json::array();
    std::map<std::string, std::set<std::string>> table;
    for (const auto& fine : fines) {
      const auto r = gen() % 100;
      std::size_t n = r < 25 ? 0 : r < 70 ? 1 : 2 + gen() % 2;
      while (table[fine].size() < n) {
        const std::string target =
            coin(0.6) ? manifest.canonical_label_map[fine] : pool[gen() % pool.size()];
        table[fine].insert(target);
      }
      for (const auto& target : table[fine])
        rows.push_back(Json{{"dataset", "d1"}, {"fine", fine}, {"coarse", target}});
    }
    episode.outcomes[1].artifacts = Json{{"clients", Json{{"c1", Json{{"mapping", rows}}}}}};

    std::size_t covered = 0, exact = 0, conflicted = 0;
    for (const auto& fine : fines) {
      const auto& targets = table[fine];
      if (!targets.empty()) ++covered;
      if (targets.size() == 1 && *targets.begin() == manifest.canonical_label_map[fine]) ++exact;
      bool conflict = targets.size() >= 2;
      if (fine == "f6" && split) conflict = true;
      if (conflict) ++conflicted;
    }
    const double bc = static_cast<double>(covered) / 6.0;
    const double be = static_cast<double>(exact) / 6.0;
    const double bx = static_cast<double>(conflicted) / 6.0;

    const HarmonizationScore h = score_harmonization(ws, manifest, episode);
    if (h.exact_match != be || h.coverage != bc || h.conflict != bx || h.vacuous)
      return fail(strf("mapping table %d: evaluator (%.17g, %.17g, %.17g) vs counter "
                       "(%.17g, %.17g, %.17g)",
                       t, h.exact_match, h.coverage, h.conflict, be, bc, bx));
  }
  return pass("1000 selection pairs and 1000 mapping tables match the independent counters exactly");
}

DataShard synthetic_shard(const std::string& id, std::uint64_t seed, int per_class) {
  RngStream rng(seed);
  DataShard shard;
  shard.client_id = id;
  for (int cls = 0; cls < 2; ++cls) {
    for (int i = 0; i < per_class + 4; ++i) {
      const Image img = resize_to(render_class_image(rng, Modality::Dermatoscopy, cls), 8, 8);
      Example ex;
      ex.label = cls;
      ex.features.reserve(img.pixels.size());
      for (std::uint8_t px : img.pixels) ex.features.push_back(static_cast<float>(px) / 255.0f);
      (i < per_class ? shard.train : shard.heldout).push_back(std::move(ex));
    }
  }
  return shard;
}

double max_abs_diff(const ParamVector& a, const ParamVector& b) {
  if (a.size() != b.size()) return HUGE_VAL;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double rel_err(const ParamVector& got, const ParamVector& want) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < want.size(); ++i) {
    num += (got[i] - want[i]) * (got[i] - want[i]);
    den += want[i] * want[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-12);
}

ParamVector fd_gradient(const ModelSpec& spec, ParamVector theta,
                        const std::vector<Example>& data, double mu, const ParamVector* center) {
  const auto energy = [&]() {
    double l = model_loss(spec, theta, data);
    if (center)
      for (std::size_t i = 0; i < theta.size(); ++i)
        l += 0.5 * mu * (theta[i] - (*center)[i]) * (theta[i] - (*center)[i]);
    return l;
  };
  const double h = 1e-5;
  ParamVector g(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    theta[i] += h;
    const double fp = energy();
    theta[i] -= 2 * h;
    const double fm = energy();
    theta[i] += h;
    g[i] = (fp - fm) / (2 * h);
  }
  return g;
}

Outcome trainer_reductions() {
  std::vector<DataShard> shards;
  for (int k = 0; k < 3; ++k)
    shards.push_back(synthetic_shard("s" + std::to_string(k + 1), 50 + k, 12));

  TrainingConfig base;
  base.model = ModelSpec{8, 2, 0};
  base.seed = 7;

  // Parameter trajectories: rounds 1..20 re-run from scratch land on the same
  // per-round states because every random stream derives from (seed, round).
  for (int r = 1; r <= 20; ++r) {
    TrainingConfig avg = base;
    avg.rounds = r;
    const ParamVector theta = run_federated_training(avg, shards).theta;

    TrainingConfig prox = avg;
    prox.algorithm = "fedprox";
    prox.mu = 0.0;
    const double d_prox = max_abs_diff(run_federated_training(prox, shards).theta, theta);
    if (d_prox > 1e-9) return fail(strf("fedprox(mu=0) departs from fedavg by %g at round %d", d_prox, r));

    TrainingConfig nova = avg;
    nova.algorithm = "fednova";
    const double d_nova = max_abs_diff(run_federated_training(nova, shards).theta, theta);
    if (d_nova > 1e-9)
      return fail(strf("fednova with equal local steps departs from fedavg by %g at round %d",
                       d_nova, r));
  }

  const DataShard merged = merge_shards(shards, "site");
  TrainingConfig solo = base;
  solo.rounds = 20;
  const TrainingResult fed_one = run_federated_training(solo, {merged});
  const TrainingResult cen = run_centralized_training(solo, merged);
  if (fed_one.rounds.size() != cen.rounds.size())
    return fail("single-shard run and centralized baseline differ in round count");
  for (std::size_t i = 0; i < cen.rounds.size(); ++i)
    if (std::abs(fed_one.rounds[i].global_loss - cen.rounds[i].global_loss) > 1e-9)
      return fail(strf("single-client loss departs from centralized at round %zu", i + 1));
  const double d_solo = max_abs_diff(fed_one.theta, cen.theta);
  if (d_solo > 1e-9) return fail(strf("single-client parameters depart from centralized by %g", d_solo));

  // Server variate must equal the client-variate mean after every round,
  // never-sampled clients counting as zero.
  for (const double fraction : {1.0, 0.5}) {
    for (int r = 1; r <= 12; ++r) {
      TrainingConfig sc = base;
      sc.algorithm = "scaffold";
      sc.rounds = r;
      sc.sampling_fraction = fraction;
      const TrainingResult res = run_federated_training(sc, shards);
      ParamVector mean(res.server_variate.size(), 0.0);
      for (const auto& sh : shards) {
        const auto it = res.control_variates.find(sh.client_id);
        if (it == res.control_variates.end()) continue;
        for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += it->second[i];
      }
      for (double& v : mean) v /= static_cast<double>(shards.size());
      const double d = max_abs_diff(mean, res.server_variate);
      if (d > 1e-9)
        return fail(strf("scaffold variate mean off by %g (round %d, sampling %.1f)", d, r,
                         fraction));
    }
  }

  // Gradients against central finite differences.
  RngStream rng(99);
  const auto random_data = [&rng](int n, int dim, int classes) {
    std::vector<Example> data;
    for (int i = 0; i < n; ++i) {
      Example ex;
      ex.label = static_cast<int>(rng.below(static_cast<std::uint64_t>(classes)));
      for (int d = 0; d < dim; ++d) ex.features.push_back(static_cast<float>(rng.unit()));
      data.push_back(std::move(ex));
    }
    return data;
  };
  for (const ModelSpec spec : {ModelSpec{4, 3, 0}, ModelSpec{4, 2, 8}}) {
    const auto data = random_data(10, spec.input_dim(), spec.num_classes);
    const ParamVector theta = init_params(spec, rng);
    const double e = rel_err(model_gradient(spec, theta, data), fd_gradient(spec, theta, data, 0, nullptr));
    if (e > 1e-5)
      return fail(strf("loss gradient off finite differences by %g (hidden width %d)", e,
                       spec.hidden_width));
  }

  const ModelSpec spec{4, 3, 0};
  const auto data = random_data(12, spec.input_dim(), spec.num_classes);
  ParamVector theta = init_params(spec, rng);
  ParamVector center = init_params(spec, rng);
  const double mu = 0.37, eta = 0.05;
  {
    LocalOptions opt;
    opt.prox_mu = mu;
    opt.prox_center = &center;
    RngStream r1(5);
    const ParamVector after = local_sgd(spec, theta, data, 1, 64, eta, r1, opt).theta;
    ParamVector step(theta.size());
    for (std::size_t i = 0; i < step.size(); ++i) step[i] = (theta[i] - after[i]) / eta;
    const double e = rel_err(step, fd_gradient(spec, theta, data, mu, &center));
    if (e > 1e-5) return fail(strf("proximal step gradient off finite differences by %g", e));
  }
  {
    RngStream vs(6);
    ParamVector variate(theta.size());
    for (double& v : variate) v = vs.gaussian() * 0.1;
    LocalOptions opt;
    opt.correction = &variate;
    RngStream r2(5);
    const ParamVector after = local_sgd(spec, theta, data, 1, 64, eta, r2, opt).theta;
    ParamVector step(theta.size());
    for (std::size_t i = 0; i < step.size(); ++i)
      step[i] = (theta[i] - after[i]) / eta - variate[i];
    const double e = rel_err(step, fd_gradient(spec, theta, data, 0, nullptr));
    if (e > 1e-5) return fail(strf("corrected step gradient off finite differences by %g", e));
  }

  return pass("fedprox(0)/fednova/single-client reductions within 1e-9 over 20 rounds, "
              "scaffold variate identity holds, gradients within 1e-5 of finite differences");
}

Outcome end_to_end_learning() {
  const auto t0 = std::chrono::steady_clock::now();

  // Probe seeds until the task preferences steer the scripted plan to plain
  // weighted averaging.
  fs::path dir;
  GroundTruthManifest manifest;
  for (std::uint64_t seed = 900;; ++seed) {
    if (seed == 960) return fail("no seed in [900,960) yields a fedavg preference");
    EnvironmentConfig cfg;
    cfg.seed = seed;
    cfg.modality = Modality::Dermatoscopy;
    cfg.num_clients = 3;
    cfg.eligible_fraction = 1.0;
    cfg.samples_per_class = {10, 14};
    dir = g_scratch / "e2e" / ("env_" + std::to_string(seed));
    manifest = generate_environment(cfg, dir / "workspace");
    if (select_algorithm(manifest.task.value("fl_preferences", std::string{})).id == "fedavg")
      break;
    fs::remove_all(dir);
  }

  const EpisodeResult episode = run_episode(dir, oracle_factory(), 1);
  g_episode_trace = dir / "trace.ndjson";
  for (const auto& o : episode.outcomes)
    if (!o.completed) return fail("phase " + phase_name(o.phase) + " did not complete: " + o.failure_reason);

  const PhaseOutcome* training = nullptr;
  for (const auto& o : episode.outcomes)
    if (o.phase == Phase::FederatedTraining) training = &o;
  if (!training) return fail("no training outcome recorded");

  TrainingConfig cfg;
  bool found = false;
  for (const auto& rec : ChangeLog::load(dir / "changes.ndjson")) {
    if (rec.op.value("op", "") != "train") continue;
    cfg = TrainingConfig::from_json(rec.op.at("config"));
    found = true;
  }
  if (!found) return fail("no train op in the change log");
  if (cfg.algorithm != "fedavg" || cfg.rounds != 20 || cfg.model.hidden_width != 0)
    return fail("expected a 20-round fedavg logistic run, got " + cfg.to_json().dump());

  // Baseline first: the merged-data model must already separate the classes,
  // otherwise a federated score would prove nothing.
  std::vector<std::string> labels = manifest.task.value("target_schema", std::vector<std::string>{});
  std::sort(labels.begin(), labels.end());
  labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
  auto shards = load_client_shards(dir / "workspace", manifest.eligible_clients, labels, cfg.model);
  const TrainingResult baseline = run_centralized_training(cfg, merge_shards(shards, "all"));
  const double acc_base = baseline.rounds.back().global_accuracy;
  if (acc_base < 0.90) return fail(strf("centralized baseline held-out accuracy %.3f < 0.90", acc_base));

  const double acc_fed =
      training->artifacts.value("launch", Json::object()).value("data", Json::object())
          .value("final_global_accuracy", 0.0);
  if (acc_fed < 0.90) return fail(strf("federated held-out accuracy %.3f < 0.90 (baseline %.3f)",
                                       acc_fed, acc_base));

  const double elapsed = seconds_since(t0);
  if (elapsed >= 60.0) return fail(strf("accuracy fine but took %.1fs (budget 60s)", elapsed));
  return pass(strf("centralized %.3f then federated %.3f held-out accuracy, 20 fedavg rounds, %.1fs",
                   acc_base, acc_fed, elapsed));
}

// Independent reading of the documented bus contract. Generated cases stay
// far from the numeric limits so both judges must agree.
bool route_allowed(const RoleId& s, const RoleId& r) {
  if (s == r) return false;
  if (s.is_client() && r.is_client()) return false;
  const bool user = s.kind == Role::User || r.kind == Role::User;
  if (user && (s.is_client() || r.is_client())) return false;
  if ((s.is_client() && s.client_id.empty()) || (r.is_client() && r.client_id.empty()))
    return false;
  return true;
}

bool payload_clean(const Json& node, int depth, std::size_t& nodes) {
  if (depth > 16 || ++nodes > 4096) return false;
  if (node.is_binary()) return false;
  if (node.is_string()) {
    const auto& s = node.get_ref<const std::string&>();
    if (s.size() > 2048) return false;
    for (unsigned char c : s)
      if (c < 0x20 && c != '\n' && c != '\r' && c != '\t') return false;
    for (const char* magic : {"P5\n", "SGB1", "SGT1", "SGJ1"})
      if (s.find(magic) != std::string::npos) return false;
    return true;
  }
  if (node.is_array()) {
    bool numeric = true;
    for (const auto& e : node) numeric = numeric && e.is_number();
    if (numeric && node.size() > 64) return false;
    for (const auto& e : node)
      if (!payload_clean(e, depth + 1, nodes)) return false;
    return true;
  }
  if (node.is_object()) {
    for (const auto& el : node.items()) {
      if (el.key().size() > 2048) return false;
      if (!payload_clean(el.value(), depth + 1, nodes)) return false;
    }
    return true;
  }
  return true;
}

Outcome privacy_guard_fuzz() {
  EnvironmentConfig cfg;
  cfg.seed = 31337;
  cfg.num_clients = 2;
  const fs::path ws = g_scratch / "fuzz" / "ws";
  generate_environment(cfg, ws);
  const std::uint64_t tree_before = hash_tree(ws);

  std::mt19937_64 gen(777);
  const auto pick = [&gen](std::size_t n) { return gen() % n; };
  int bypasses = 0, denied = 0, misblocked = 0;
  std::string first_bypass;
  const fs::path trace_path = g_scratch / "fuzz" / "trace.ndjson";

  {
    TraceLog trace;
    trace.open(trace_path);
    MessageBus bus(&trace);
    Toolkit kit(ws, &trace, nullptr);

    const RoleId s1 = server_role(Role::S1), s2 = server_role(Role::S2);
    const RoleId s3 = server_role(Role::S3), s4 = server_role(Role::S4);
    const RoleId usr = user_role();
    const RoleId c1a = client_role(Role::C1, "c1"), c2a = client_role(Role::C2, "c1");
    const RoleId c3b = client_role(Role::C3, "c2");

    const auto magic = [&pick]() {
      const std::array<std::string, 4> magics = {"P5\n", "SGB1", "SGT1", "SGJ1"};
      return "chunk " + magics[pick(4)] + " tail";
    };
    std::vector<std::function<AgentMessage()>> adversarial = {
        [&] { return AgentMessage{c2a, client_role(Role::C3, "c1"), MessageKind::Status, Json{{"hi", 1}}}; },
        [&] { return AgentMessage{c1a, c1a, MessageKind::Status, Json{{"hi", 1}}}; },
        [&] { return AgentMessage{usr, c1a, MessageKind::Query, Json{{"q", "x"}}}; },
        [&] { return AgentMessage{c3b, usr, MessageKind::Status, Json{{"done", true}}}; },
        [&] { return AgentMessage{client_role(Role::C1, ""), s1, MessageKind::Status, Json{{"x", 1}}}; },
        [&] { return AgentMessage{s1, s2, MessageKind::Status, Json{{"s", std::string(3000, 'a')}}}; },
        [&] { return AgentMessage{s2, s1, MessageKind::Status, Json{{"s", std::string("ok\x01ok")}}}; },
        [&] { return AgentMessage{c1a, s1, MessageKind::DatasetOffer, Json{{"img", magic()}}}; },
        [&] { return AgentMessage{s2, usr, MessageKind::Status, Json{{"deep", Json{{"blob", magic()}}}}}; },
        [&] {
          return AgentMessage{c2a, s2, MessageKind::Status,
                              Json{{"raw", Json::binary({0x50, 0x35, 0x0a, 0x00})}}};
        },
        [&] {
          Json xs = Json::array();
          for (int i = 0; i < 100; ++i) xs.push_back(0.5 * i);
          return AgentMessage{s4, s3, MessageKind::Config, Json{{"theta", xs}}};
        },
        [&] {
          Json j = Json{{"v", 0}};
          for (int i = 0; i < 24; ++i) j = Json{{"d", j}};
          return AgentMessage{s1, usr, MessageKind::Status, j};
        },
        [&] {
          Json j = Json::object();
          for (int i = 0; i < 4700; ++i) j["k" + std::to_string(i)] = i;
          return AgentMessage{s2, s4, MessageKind::Status, j};
        },
        [&] { return AgentMessage{s3, s1, MessageKind::Status, Json{{std::string(3000, 'k'), 1}}}; },
    };
    std::vector<std::function<AgentMessage()>> benign = {
        [&] { return AgentMessage{s1, s2, MessageKind::Status, Json{{"note", "ready"}}}; },
        [&] { return AgentMessage{usr, s1, MessageKind::Query, Json{{"want", Json::array({"derm"})}}}; },
        [&] {
          return AgentMessage{c1a, s2, MessageKind::DatasetOffer,
                              Json{{"match", true}, {"count", 12}}};
        },
        [&] { return AgentMessage{s3, s4, MessageKind::Config, Json{{"algorithm", "fedavg"}}}; },
        [&] {
          Json xs = Json::array();
          for (int i = 0; i < 100; ++i) i % 7 ? xs.push_back(i) : xs.push_back("t");
          return AgentMessage{s2, s1, MessageKind::Status, Json{{"mixed", xs}}};
        },
        [&] {
          Json j = Json{{"leaf", "v"}};
          for (int i = 0; i < 8; ++i) j = Json{{"d", j}};
          return AgentMessage{s4, usr, MessageKind::Status, j};
        },
    };

    for (int i = 0; i < 5000; ++i) {
      const bool want_bad = pick(100) < 60;
      const AgentMessage msg =
          want_bad ? adversarial[pick(adversarial.size())]() : benign[pick(benign.size())]();
      std::size_t nodes = 0;
      const bool legal =
          route_allowed(msg.sender, msg.recipient) && payload_clean(msg.payload, 0, nodes);
      const GuardVerdict v = bus.send(msg);
      if (!legal && v.ok) {
        if (++bypasses == 1)
          first_bypass = "message " + msg.sender.str() + "->" + msg.recipient.str();
      }
      if (!v.ok) ++denied;
      if (legal && !v.ok) ++misblocked;
    }

    const RoleId callers[] = {c1a, c2a, client_role(Role::C3, "c1"), c3b, s3, s4, usr};
    std::vector<std::function<ToolCall()>> calls = {
        [&] { return ToolCall{"read_text_file", Json{{"path", "../manifest.json"}}, c1a}; },
        [&] { return ToolCall{"read_text_file", Json{{"path", "manifest.json"}}, c2a}; },
        [&] { return ToolCall{"read_text_file", Json{{"path", "/etc/hostname"}}, c1a}; },
        [&] { return ToolCall{"list_dir", Json{{"path", "../../"}}, c2a}; },
        [&] { return ToolCall{"list_dir", Json{{"path", "clients/c2"}}, c1a}; },
        [&] { return ToolCall{"list_dir", Json{{"path", "server"}}, c1a}; },
        [&] { return ToolCall{"read_datacard", Json{{"client", "c2"}}, c1a}; },
        [&] {
          return ToolCall{"move_file",
                          Json{{"src", "clients/c1/datacard.json"}, {"dst", "../loot.json"}}, c2a};
        },
        [&] { return ToolCall{"move_file", Json{{"src", "task.json"}, {"dst", "task2.json"}}, c2a}; },
        [&] { return ToolCall{"remove_files", Json{{"paths", Json::array({"../manifest.json"})}}, c2a}; },
        [&] { return ToolCall{"make_dir", Json{{"path", "../../intruder"}}, c2a}; },
        [&] { return ToolCall{"make_dir", Json{{"path", "server/intruder"}}, c2a}; },
        [&] { return ToolCall{"stat_dataset", Json{{"dataset", "../server"}}, c2a}; },
        [&] { return ToolCall{"detect_duplicates", Json{{"dataset", "/"}}, c2a}; },
        [&] { return ToolCall{"launch_training", Json{{"config", Json::object()}, {"clients", Json::array()}}, c2a}; },
        [&] { return ToolCall{"exfiltrate_data", Json{{"to", "remote"}}, callers[pick(7)]}; },
        [&] { return ToolCall{"list_dir", Json{{"path", 42}}, c1a}; },
        [&] { return ToolCall{"detect_outliers", Json::object(), c2a}; },
        [&] { return ToolCall{"apply_label_mapping", Json{{"dataset", "../../x"}, {"mapping", Json::object()}}, client_role(Role::C3, "c1")}; },
        [&] { return ToolCall{"hash_files", Json{{"dataset", "clients/c2/anything"}}, c2a}; },
    };
    for (int i = 0; i < 5000; ++i) {
      const ToolResult r = kit.invoke(calls[pick(calls.size())]());
      if (r.ok) {
        if (++bypasses == 1) first_bypass = "tool call accepted";
      } else {
        ++denied;
        if (r.error_kind.empty() && ++bypasses == 1) first_bypass = "denial without error kind";
      }
    }
  }

  if (bypasses > 0) return fail(strf("%d bypasses (first: %s)", bypasses, first_bypass.c_str()));
  if (misblocked > 0) return fail(strf("%d well-formed messages wrongly blocked", misblocked));
  if (hash_tree(ws) != tree_before) return fail("adversarial tool calls changed the workspace");
  if (contains_image_magic(read_file_text(trace_path)))
    return fail("image magic bytes leaked into the fuzz trace");
  if (!g_episode_trace.empty() && contains_image_magic(read_file_text(g_episode_trace)))
    return fail("image magic bytes leaked into the end-to-end episode trace");
  return pass(strf("10000 sends, 0 bypasses, %d denials audited, workspace unchanged, traces "
                   "free of image magic",
                   denied));
}

Outcome noise_monotonicity() {
  const std::array<double, 4> ps = {0.0, 0.1, 0.3, 0.5};
  // precision recall f1 schema dup format exact coverage training overall; conflict last
  std::array<std::array<double, 11>, 4> sums{};
  const int seeds = 20;

  for (int i = 0; i < seeds; ++i) {
    EnvironmentConfig cfg;
    cfg.seed = 400 + static_cast<std::uint64_t>(i);
    cfg.modality = static_cast<Modality>(i % kModalityCount);
    const fs::path src = g_scratch / "noise" / ("env_" + std::to_string(i));
    const GroundTruthManifest manifest = generate_environment(cfg, src);
    for (std::size_t pi = 0; pi < ps.size(); ++pi) {
      const fs::path rd = g_scratch / "noise" / strf("run_%d_%zu", i, pi);
      copy_tree(src, rd / "workspace");
      const double p = ps[pi];
      const std::uint64_t core_seed = 1000 + static_cast<std::uint64_t>(i);
      run_episode(rd, [p, core_seed](const RoleId&) { return make_core("scripted_noisy", p, core_seed); }, 1);
      const RunScore s = score_run(rd, manifest);
      int cells = 0;
      for (bool c : s.agent_cells) cells += c ? 1 : 0;
      const std::array<double, 11> v = {
          s.selection.precision,           s.selection.recall,
          s.selection.f1,                  s.preprocessing.schema_compliance,
          s.preprocessing.duplicate_removal, s.preprocessing.format_normalization,
          s.harmonization.exact_match,     s.harmonization.coverage,
          s.training.value(),              cells / 7.0,
          s.harmonization.conflict};
      for (std::size_t k = 0; k < v.size(); ++k) sums[pi][k] += v[k];
      fs::remove_all(rd);
    }
    fs::remove_all(src);
  }

  const char* names[] = {"precision", "recall",   "f1",       "schema",  "dedup", "format",
                         "exact",     "coverage", "training", "overall", "conflict"};
  for (std::size_t k = 0; k < 10; ++k)
    for (std::size_t pi = 1; pi < ps.size(); ++pi)
      if (sums[pi][k] > sums[pi - 1][k] + 1e-9)
        return fail(strf("mean %s rises from %.4f to %.4f between p=%.1f and p=%.1f", names[k],
                         sums[pi - 1][k] / seeds, sums[pi][k] / seeds, ps[pi - 1], ps[pi]));
  for (std::size_t pi = 1; pi < ps.size(); ++pi)
    if (sums[pi][10] < sums[pi - 1][10] - 1e-9)
      return fail(strf("mean conflict falls from %.4f to %.4f between p=%.1f and p=%.1f",
                       sums[pi - 1][10] / seeds, sums[pi][10] / seeds, ps[pi - 1], ps[pi]));
  return pass(strf("20 seeds: mean f1 %.3f/%.3f/%.3f/%.3f never rises, conflict %.3f..%.3f never "
                   "falls across p=0,0.1,0.3,0.5",
                   sums[0][2] / seeds, sums[1][2] / seeds, sums[2][2] / seeds, sums[3][2] / seeds,
                   sums[0][10] / seeds, sums[3][10] / seeds));
}

void pipeline(const fs::path& root) {
  EnvironmentConfig cfg;
  cfg.seed = 777;
  const fs::path env = root / "env";
  generate_environment(cfg, env);
  const GroundTruthManifest manifest = GroundTruthManifest::load(env / "manifest.json");
  std::vector<RunScore> scores;
  for (int i = 0; i < 3; ++i) {
    const fs::path rd = root / ("run_0" + std::to_string(i + 1));
    copy_tree(env, rd / "workspace");
    run_episode(rd, oracle_factory(), static_cast<std::uint64_t>(i + 1));
    scores.push_back(score_run(rd, manifest));
  }
  const MetricsReport report = aggregate_runs(scores);
  save_json_file(root / "report.json", report.to_json());
  write_file_text(root / "report.csv", report.to_csv());
  write_file_text(root / "report.md", report.to_markdown());
}

Outcome deterministic_reports() {
  const fs::path a = g_scratch / "det" / "a";
  const fs::path b = g_scratch / "det" / "b";
  pipeline(a);
  pipeline(b);
  for (const char* name : {"report.json", "report.csv", "report.md"})
    if (read_file_text(a / name) != read_file_text(b / name))
      return fail(std::string(name) + " differs between identical pipelines");
  for (int i = 1; i <= 3; ++i) {
    const std::string rd = "run_0" + std::to_string(i);
    if (read_file_text(a / rd / "trace.ndjson") != read_file_text(b / rd / "trace.ndjson"))
      return fail(rd + "/trace.ndjson differs between identical pipelines");
  }
  return pass("repeated generate/run/evaluate pipelines agree byte for byte (reports and traces)");
}

Outcome live_endpoint_smoke() {
  const auto endpoint = RemoteCore::Endpoint::from_environment();
  if (!endpoint) return skip("ENDPOINT_URL not set");
  EnvironmentConfig cfg;
  cfg.seed = 4242;
  cfg.num_clients = 2;
  const fs::path dir = g_scratch / "smoke";
  generate_environment(cfg, dir / "workspace");
  const auto ep = *endpoint;
  const EpisodeResult episode =
      run_episode(dir, [ep](const RoleId&) { return std::make_unique<RemoteCore>(ep); }, 1);
  std::string phases;
  for (const auto& o : episode.outcomes) {
    if (!phases.empty()) phases += ", ";
    phases += phase_name(o.phase) + (o.completed ? ": completed" : ": " + o.failure_reason);
  }
  if (episode.total_tokens <= 0)
    return fail("episode finished without token accounting (" + phases + ")");
  return pass(strf("%s; %lld tokens", phases.c_str(),
                   static_cast<long long>(episode.total_tokens)));
}

}  // namespace

int main(int argc, char** argv) {
  std::string filter;
  bool keep = false;
  g_scratch = fs::temp_directory_path() / "fedharness-acceptance";
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--filter" && i + 1 < argc) filter = argv[++i];
    else if (a == "--scratch" && i + 1 < argc) g_scratch = argv[++i];
    else if (a == "--keep") keep = true;
    else {
      std::fprintf(stderr, "usage: %s [--filter substring] [--scratch dir] [--keep]\n", argv[0]);
      return 2;
    }
  }
  fs::remove_all(g_scratch);
  fs::create_directories(g_scratch);

  const std::pair<const char*, Outcome (*)()> checks[] = {
      {"oracle_perfect_scores", oracle_perfect_scores},
      {"corruption_count_bounds", corruption_count_bounds},
      {"score_table_arithmetic", score_table_arithmetic},
      {"metric_brute_force_parity", metric_brute_force_parity},
      {"trainer_reductions", trainer_reductions},
      {"end_to_end_learning", end_to_end_learning},
      {"privacy_guard_fuzz", privacy_guard_fuzz},
      {"noise_monotonicity", noise_monotonicity},
      {"deterministic_reports", deterministic_reports},
      {"live_endpoint_smoke", live_endpoint_smoke},
  };

  int failed = 0;
  for (const auto& [name, fn] : checks) {
    if (!filter.empty() && std::string(name).find(filter) == std::string::npos) continue;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = fail(std::string("unexpected error: ") + e.what());
    }
    const char* tag = o.status == Outcome::Status::Pass ? "PASS"
                      : o.status == Outcome::Status::Skip ? "SKIP"
                                                          : "FAIL";
    if (o.status == Outcome::Status::Fail) ++failed;
    std::printf("%s %-26s %s\n", tag, name, o.detail.c_str());
    std::fflush(stdout);
  }
  if (failed == 0 && !keep) fs::remove_all(g_scratch);
  if (failed > 0) std::printf("%d criterion(s) failed; scratch kept at %s\n", failed, g_scratch.c_str());
  return failed == 0 ? 0 : 1;
}
