#include <algorithm>
#include <cmath>
#include <filesystem>
#include <vector>

#include "doctest.h"
#include "fedharness/fedcore.hpp"
#include "fedharness/image.hpp"
#include "fedharness/modality.hpp"

using namespace fedharness;

namespace {

ModelSpec tiny_spec(int classes = 3, int hidden = 0) {
  ModelSpec spec;
  spec.input_side = 4;
  spec.num_classes = classes;
  spec.hidden_width = hidden;
  return spec;
}

std::vector<Example> random_examples(const ModelSpec& spec, std::size_t n, std::uint64_t seed) {
  RngStream rng(seed);
  std::vector<Example> out;
  for (std::size_t i = 0; i < n; ++i) {
    Example ex;
    ex.label = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.num_classes)));
    ex.features.resize(static_cast<std::size_t>(spec.input_dim()));
    for (auto& f : ex.features) f = static_cast<float>(rng.unit());
    out.push_back(std::move(ex));
  }
  return out;
}

ParamVector random_params(const ModelSpec& spec, std::uint64_t seed) {
  RngStream rng(seed);
  ParamVector theta(ModelLayout::for_spec(spec).total);
  for (auto& v : theta) v = 0.5 * rng.gaussian();
  return theta;
}

// Two linearly separable clusters in feature space.
std::vector<Example> separable_examples(const ModelSpec& spec, std::size_t n, std::uint64_t seed) {
  RngStream rng(seed);
  std::vector<Example> out;
  for (std::size_t i = 0; i < n; ++i) {
    Example ex;
    ex.label = static_cast<int>(i % 2);
    ex.features.assign(static_cast<std::size_t>(spec.input_dim()), 0.0f);
    for (auto& f : ex.features) f = static_cast<float>(0.05 * rng.unit());
    ex.features[static_cast<std::size_t>(ex.label)] += 0.9f;
    out.push_back(std::move(ex));
  }
  return out;
}

double max_abs_diff(const ParamVector& a, const ParamVector& b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double norm_diff(const ParamVector& a, const ParamVector& b) {
  REQUIRE(a.size() == b.size());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

TrainingConfig base_config(const std::string& alg, const ModelSpec& spec) {
  TrainingConfig cfg;
  cfg.algorithm = alg;
  cfg.rounds = 3;
  cfg.local_epochs = 1;
  cfg.batch_size = 4;
  cfg.learning_rate = 0.1;
  cfg.sampling_fraction = 1.0;
  cfg.mu = 0.01;
  cfg.lambda = 1.0;
  cfg.model = spec;
  cfg.seed = 77;
  return cfg;
}

std::vector<DataShard> two_shards(const ModelSpec& spec) {
  DataShard a{"c1", separable_examples(spec, 12, 5), separable_examples(spec, 4, 6)};
  DataShard b{"c2", separable_examples(spec, 10, 7), separable_examples(spec, 4, 8)};
  return {a, b};
}

}  // namespace

TEST_CASE("model layout totals") {
  ModelSpec logistic;
  logistic.input_side = 16;
  logistic.num_classes = 2;
  auto l1 = ModelLayout::for_spec(logistic);
  CHECK(l1.total == 2u * 256u + 2u);
  CHECK(l1.segments.size() == 2);
  CHECK(l1.segments[1].offset == 512u);

  ModelSpec hidden = logistic;
  hidden.hidden_width = 8;
  auto l2 = ModelLayout::for_spec(hidden);
  CHECK(l2.total == 8u * 256u + 8u + 2u * 8u + 2u);
  CHECK(l2.segments.size() == 4);
}

TEST_CASE("fedavg aggregation closed forms") {
  ParamVector t1{1.0, 3.0}, t2{3.0, 5.0};
  auto equal = aggregate_fedavg({t1, t2}, {4, 4});
  CHECK(equal[0] == doctest::Approx(2.0));
  CHECK(equal[1] == doctest::Approx(4.0));

  auto weighted = aggregate_fedavg({{0.0, 0.0}, {4.0, 8.0}}, {1, 3});
  CHECK(weighted[0] == doctest::Approx(3.0));
  CHECK(weighted[1] == doctest::Approx(6.0));

  auto single = aggregate_fedavg({t1}, {9});
  CHECK(single == t1);

  CHECK_THROWS_AS(aggregate_fedavg({t1, {1.0}}, {1, 1}), HarnessError);
  CHECK_THROWS_AS(aggregate_fedavg({t1, t2}, {0, 3}), HarnessError);
  CHECK_THROWS_AS(aggregate_fedavg({}, {}), HarnessError);
}

TEST_CASE("fednova closed form and identities") {
  ParamVector init{0.0, 0.0};
  // p = (0.25, 0.75), d_1 = (0.5, 0), d_2 = (0, 0.5), tau_eff = 3.5
  auto out = aggregate_fednova(init, {{1.0, 0.0}, {0.0, 2.0}}, {2, 4}, {1, 3});
  CHECK(out[0] == doctest::Approx(0.4375));
  CHECK(out[1] == doctest::Approx(1.3125));

  ParamVector d1{0.2, -0.4};
  auto solo = aggregate_fednova({1.0, 1.0}, {d1}, {3}, {5});
  CHECK(solo[0] == doctest::Approx(1.2).epsilon(1e-9));
  CHECK(solo[1] == doctest::Approx(0.6).epsilon(1e-9));

  // equal tau reduces to fedavg
  ParamVector a{0.5, 1.0}, b{-0.3, 0.2};
  auto nova = aggregate_fednova(init, {a, b}, {4, 4}, {2, 6});
  ParamVector ta{a[0], a[1]}, tb{b[0], b[1]};
  auto avg = aggregate_fedavg({ta, tb}, {2, 6});
  CHECK(max_abs_diff(nova, avg) < 1e-9);

  CHECK_THROWS_AS(aggregate_fednova(init, {a}, {0}, {2}), HarnessError);
}

TEST_CASE("aggregation weights sum to one") {
  auto spec = tiny_spec(2);
  auto cfg = base_config("fedavg", spec);
  auto result = run_federated_training(cfg, two_shards(spec));
  for (const auto& log : result.rounds) {
    double sum = 0.0;
    for (const auto& c : log.clients) sum += c.weight;
    CHECK(std::abs(sum - 1.0) < 1e-12);
  }
}

TEST_CASE("analytic gradient matches central finite differences") {
  for (int hidden : {0, 5}) {
    ModelSpec spec = tiny_spec(3, hidden);
    auto data = random_examples(spec, 6, 11);
    auto theta = random_params(spec, 12);
    auto grad = model_gradient(spec, theta, data);
    const double h = 1e-5;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      ParamVector plus = theta, minus = theta;
      plus[i] += h;
      minus[i] -= h;
      double fd = (model_loss(spec, plus, data) - model_loss(spec, minus, data)) / (2 * h);
      double denom = std::max({1.0, std::abs(fd), std::abs(grad[i])});
      CHECK(std::abs(grad[i] - fd) / denom < 1e-5);
    }
  }
}

TEST_CASE("proximal term gradient") {
  ModelSpec spec = tiny_spec(2);
  auto data = random_examples(spec, 4, 21);
  auto center = random_params(spec, 22);
  auto theta = random_params(spec, 23);
  const double mu = 0.37;

  // analytic vs finite differences of the full proximal objective
  auto grad = model_gradient(spec, theta, data);
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += mu * (theta[i] - center[i]);
  const double h = 1e-5;
  auto prox_loss = [&](const ParamVector& t) {
    double reg = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) reg += (t[i] - center[i]) * (t[i] - center[i]);
    return model_loss(spec, t, data) + 0.5 * mu * reg;
  };
  for (std::size_t i = 0; i < theta.size(); i += 3) {
    ParamVector plus = theta, minus = theta;
    plus[i] += h;
    minus[i] -= h;
    double fd = (prox_loss(plus) - prox_loss(minus)) / (2 * h);
    double denom = std::max({1.0, std::abs(fd), std::abs(grad[i])});
    CHECK(std::abs(grad[i] - fd) / denom < 1e-5);
  }

  // proximal gradient vanishes at the center: the step equals the plain step
  RngStream r1(9), r2(9);
  LocalOptions opt;
  opt.prox_mu = mu;
  opt.prox_center = &center;
  auto prox_step =
      local_sgd(spec, center, data, 1, static_cast<int>(data.size()), 0.1, r1, opt);
  auto plain_step = local_sgd(spec, center, data, 1, static_cast<int>(data.size()), 0.1, r2);
  CHECK(max_abs_diff(prox_step.theta, plain_step.theta) < 1e-12);
}

TEST_CASE("fedprox with mu zero is bit-identical to fedavg") {
  auto spec = tiny_spec(2);
  auto shards = two_shards(spec);
  auto cfg_prox = base_config("fedprox", spec);
  cfg_prox.mu = 0.0;
  auto cfg_avg = base_config("fedavg", spec);
  auto a = run_federated_training(cfg_prox, shards);
  auto b = run_federated_training(cfg_avg, shards);
  CHECK(a.theta == b.theta);
  REQUIRE(a.rounds.size() == b.rounds.size());
  for (std::size_t r = 0; r < a.rounds.size(); ++r)
    CHECK(a.rounds[r].to_json() == b.rounds[r].to_json());
}

TEST_CASE("fedprox with nonzero mu diverges from fedavg") {
  auto spec = tiny_spec(2);
  auto shards = two_shards(spec);
  auto cfg_prox = base_config("fedprox", spec);
  cfg_prox.mu = 1.0;
  cfg_prox.rounds = 2;
  cfg_prox.local_epochs = 3;
  auto cfg_avg = base_config("fedavg", spec);
  cfg_avg.rounds = 2;
  cfg_avg.local_epochs = 3;
  auto a = run_federated_training(cfg_prox, shards);
  auto b = run_federated_training(cfg_avg, shards);
  CHECK(max_abs_diff(a.theta, b.theta) > 0.0);
}

TEST_CASE("scaffold first round equals fedavg with zero variates") {
  auto spec = tiny_spec(2);
  auto shards = two_shards(spec);
  auto cfg_sc = base_config("scaffold", spec);
  cfg_sc.rounds = 1;
  auto cfg_avg = base_config("fedavg", spec);
  cfg_avg.rounds = 1;
  auto a = run_federated_training(cfg_sc, shards);
  auto b = run_federated_training(cfg_avg, shards);
  CHECK(max_abs_diff(a.theta, b.theta) < 1e-9);
}

TEST_CASE("scaffold server variate equals mean of client variates") {
  auto spec = tiny_spec(2);
  auto shards = two_shards(spec);
  for (int rounds : {1, 3}) {
    auto cfg = base_config("scaffold", spec);
    cfg.rounds = rounds;
    auto result = run_federated_training(cfg, shards);
    REQUIRE(result.control_variates.size() == shards.size());
    ParamVector mean(result.layout.total, 0.0);
    for (const auto& [id, ci] : result.control_variates)
      for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += ci[i];
    for (auto& v : mean) v /= static_cast<double>(result.control_variates.size());
    CHECK(norm_diff(mean, result.server_variate) < 1e-9);
  }
}

TEST_CASE("scaffold variate identity holds under partial participation") {
  auto spec = tiny_spec(2);
  std::vector<DataShard> shards = two_shards(spec);
  shards.push_back({"c3", separable_examples(spec, 8, 31), {}});
  shards.push_back({"c4", separable_examples(spec, 8, 32), {}});
  auto cfg = base_config("scaffold", spec);
  cfg.rounds = 4;
  cfg.sampling_fraction = 0.5;
  auto result = run_federated_training(cfg, shards);
  ParamVector mean(result.layout.total, 0.0);
  for (const auto& [id, ci] : result.control_variates)
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += ci[i];
  // clients never sampled hold zero variates and still count in the mean
  for (auto& v : mean) v /= static_cast<double>(shards.size());
  CHECK(norm_diff(mean, result.server_variate) < 1e-9);
}

TEST_CASE("fednova engine with equal local steps matches fedavg") {
  auto spec = tiny_spec(2);
  // equal shard sizes give equal step counts
  DataShard a{"c1", separable_examples(spec, 8, 41), {}};
  DataShard b{"c2", separable_examples(spec, 8, 42), {}};
  auto cfg_nova = base_config("fednova", spec);
  auto cfg_avg = base_config("fedavg", spec);
  auto ra = run_federated_training(cfg_nova, {a, b});
  auto rb = run_federated_training(cfg_avg, {a, b});
  CHECK(max_abs_diff(ra.theta, rb.theta) < 1e-9);
}

TEST_CASE("ditto personalization") {
  auto spec = tiny_spec(2);
  auto shards = two_shards(spec);

  SUBCASE("lambda does not touch the global trajectory") {
    auto c0 = base_config("ditto", spec);
    c0.lambda = 0.0;
    auto c1 = base_config("ditto", spec);
    c1.lambda = 10.0;
    auto r0 = run_federated_training(c0, shards);
    auto r1 = run_federated_training(c1, shards);
    CHECK(r0.theta == r1.theta);
    CHECK(r0.personalized.size() == 2);
    CHECK(r1.personalized.size() == 2);
  }

  SUBCASE("regularizer pull is monotone in lambda on a fixed shard") {
    auto data = separable_examples(spec, 10, 53);
    auto theta_global = random_params(spec, 54);
    ParamVector v0 = random_params(spec, 55);
    std::vector<double> gaps;
    for (double lambda : {0.0, 0.1, 1.0, 10.0}) {
      RngStream rng(17);
      LocalOptions opt;
      opt.prox_mu = lambda;
      opt.prox_center = &theta_global;
      auto out = local_sgd(spec, v0, data, 3, static_cast<int>(data.size()), 0.1, rng, opt);
      gaps.push_back(norm_diff(out.theta, theta_global));
    }
    for (std::size_t i = 1; i < gaps.size(); ++i) CHECK(gaps[i] < gaps[i - 1]);
  }

  SUBCASE("first personal step from the global point is lambda-free") {
    auto data = separable_examples(spec, 6, 51);
    auto theta = random_params(spec, 52);
    RngStream r1(3), r2(3);
    LocalOptions opt;
    opt.prox_mu = 5.0;
    opt.prox_center = &theta;
    auto with_reg = local_sgd(spec, theta, data, 1, static_cast<int>(data.size()), 0.1, r1, opt);
    auto without = local_sgd(spec, theta, data, 1, static_cast<int>(data.size()), 0.1, r2);
    CHECK(max_abs_diff(with_reg.theta, without.theta) < 1e-12);
  }
}

TEST_CASE("single client full participation equals the centralized path") {
  auto spec = tiny_spec(2);
  DataShard shard{"solo", separable_examples(spec, 14, 61), separable_examples(spec, 4, 62)};
  auto cfg = base_config("fedavg", spec);
  auto fed = run_federated_training(cfg, {shard});
  auto central = run_centralized_training(cfg, shard);
  CHECK(fed.theta == central.theta);
  REQUIRE(fed.rounds.size() == central.rounds.size());
  for (std::size_t r = 0; r < fed.rounds.size(); ++r)
    CHECK(fed.rounds[r].to_json() == central.rounds[r].to_json());
}

TEST_CASE("training is deterministic for a fixed config") {
  auto spec = tiny_spec(2);
  auto shards = two_shards(spec);
  for (const char* alg : {"fedavg", "fedprox", "scaffold", "fednova", "ditto"}) {
    auto cfg = base_config(alg, spec);
    auto a = run_federated_training(cfg, shards);
    auto b = run_federated_training(cfg, shards);
    CHECK(a.theta == b.theta);
    CHECK(a.summary_json() == b.summary_json());
  }
}

TEST_CASE("empty shards are skipped; all-empty aborts before the start signal") {
  auto spec = tiny_spec(2);
  DataShard full{"c1", separable_examples(spec, 8, 71), {}};
  DataShard empty{"c2", {}, {}};
  auto cfg = base_config("fedavg", spec);

  auto result = run_federated_training(cfg, {full, empty});
  REQUIRE(result.warnings.size() >= 1);
  CHECK(result.warnings.front().find("c2") != std::string::npos);
  CHECK(result.rounds.front().clients.size() == 1);

  auto tmp = std::filesystem::temp_directory_path() / "fh_fedcore_abort";
  std::filesystem::remove_all(tmp);
  std::filesystem::create_directories(tmp);
  {
    TraceLog trace;
    trace.open(tmp / "trace.ndjson");
    CHECK_THROWS_AS(run_federated_training(cfg, {empty}, &trace), HarnessError);
    CHECK(trace.full_text().find("training_start") == std::string::npos);
    CHECK(trace.full_text().find("training_abort") != std::string::npos);
  }
  std::filesystem::remove_all(tmp);
}

TEST_CASE("start signal precedes every round event") {
  auto spec = tiny_spec(2);
  auto tmp = std::filesystem::temp_directory_path() / "fh_fedcore_trace";
  std::filesystem::remove_all(tmp);
  std::filesystem::create_directories(tmp);
  {
    TraceLog trace;
    trace.open(tmp / "trace.ndjson");
    auto cfg = base_config("fedavg", spec);
    run_federated_training(cfg, two_shards(spec), &trace);
    auto events = TraceLog::load(tmp / "trace.ndjson");
    std::size_t start_seq = 0, first_round_seq = 0;
    for (const auto& ev : events) {
      if (ev.type == "training_start" && start_seq == 0) start_seq = ev.seq;
      if (ev.type == "training_round" && first_round_seq == 0) first_round_seq = ev.seq;
    }
    REQUIRE(start_seq > 0);
    REQUIRE(first_round_seq > 0);
    CHECK(start_seq < first_round_seq);
  }
  std::filesystem::remove_all(tmp);
}

TEST_CASE("config validation and strict parsing") {
  auto spec = tiny_spec(2);
  auto good = base_config("fedavg", spec);
  CHECK_NOTHROW(good.validate());

  auto bad = good;
  bad.rounds = 0;
  CHECK_THROWS_AS(bad.validate(), HarnessError);
  bad = good;
  bad.learning_rate = 0.0;
  CHECK_THROWS_AS(bad.validate(), HarnessError);
  bad = good;
  bad.mu = -0.1;
  CHECK_THROWS_AS(bad.validate(), HarnessError);
  bad = good;
  bad.lambda = -1.0;
  CHECK_THROWS_AS(bad.validate(), HarnessError);
  bad = good;
  bad.sampling_fraction = 0.0;
  CHECK_THROWS_AS(bad.validate(), HarnessError);
  bad = good;
  bad.sampling_fraction = 1.5;
  CHECK_THROWS_AS(bad.validate(), HarnessError);
  bad = good;
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), HarnessError);
  bad = good;
  bad.algorithm = "feddf";  // descriptor only, no engine
  CHECK_THROWS_AS(bad.validate(), HarnessError);
  bad = good;
  bad.model.num_classes = 1;
  CHECK_THROWS_AS(bad.validate(), HarnessError);

  auto j = good.to_json();
  auto parsed = TrainingConfig::from_json(j);
  CHECK(parsed.to_json() == j);

  j.erase("mu");
  CHECK_THROWS_AS(TrainingConfig::from_json(j), HarnessError);
  Json j2 = good.to_json();
  j2.erase("model");
  CHECK_THROWS_AS(TrainingConfig::from_json(j2), HarnessError);
}

TEST_CASE("shard loading from a harmonized layout") {
  namespace fs = std::filesystem;
  auto tmp = fs::temp_directory_path() / "fh_fedcore_shards";
  fs::remove_all(tmp);

  std::vector<std::string> coarse = {"benign", "malignant"};
  auto place = [&](const std::string& cid, const std::string& ds, const std::string& coarse_name,
                   const std::string& name, int pattern) {
    auto dir = tmp / "clients" / cid / ds / coarse_name;
    fs::create_directories(dir);
    RngStream rng(fnv1a64(name));
    Image img = render_class_image(rng, Modality::Dermatoscopy, pattern);
    write_image_file(dir / (name + ".pgm"), img, ImageFormat::Pgm);
  };

  int placed = 0;
  for (int i = 0; i < 10; ++i) {
    int nevus = *fine_class_pattern(Modality::Dermatoscopy, "nevus");
    int melanoma = *fine_class_pattern(Modality::Dermatoscopy, "melanoma");
    place("c1", "ds_01", "benign", "nevus__img_" + std::to_string(100 + i), nevus);
    place("c1", "ds_01", "malignant", "melanoma__img_" + std::to_string(200 + i), melanoma);
    placed += 2;
  }
  // stray files the loader must ignore
  write_file_text(tmp / "clients" / "c1" / "ds_01" / "notes.txt", "junk\n");
  place("c1", "ds_01", "unmapped_label", "stray__img_999", 1);
  write_file_text(tmp / "clients" / "c1" / "ds_01" / "benign" / "broken.pgm", "P5 nonsense");

  ModelSpec spec;
  spec.input_side = 16;
  spec.num_classes = 2;
  std::vector<std::string> warnings;
  auto shards = load_client_shards(tmp, {"c1", "c2"}, coarse, spec, &warnings);
  REQUIRE(shards.size() == 2);
  CHECK(shards[1].train.empty());  // c2 has no workspace

  const auto& s = shards[0];
  CHECK(s.train.size() + s.heldout.size() == static_cast<std::size_t>(placed));
  CHECK(!s.heldout.empty());
  CHECK(s.heldout.size() < s.train.size());
  for (const auto& ex : s.train) {
    CHECK(ex.features.size() == 256u);
    CHECK((ex.label == 0 || ex.label == 1));
  }
  // the undecodable file and the missing client produce warnings
  CHECK(warnings.size() >= 2);

  // deterministic reload
  auto again = load_client_shards(tmp, {"c1", "c2"}, coarse, spec);
  REQUIRE(again[0].train.size() == s.train.size());
  bool same = true;
  for (std::size_t i = 0; i < s.train.size(); ++i)
    same = same && again[0].train[i].features == s.train[i].features &&
           again[0].train[i].label == s.train[i].label;
  CHECK(same);

  // training on the loaded shards separates the two classes
  auto cfg = base_config("fedavg", spec);
  cfg.rounds = 20;
  auto result = run_federated_training(cfg, {shards[0]});
  CHECK(result.rounds.back().global_accuracy >= 0.9);

  fs::remove_all(tmp);
}

TEST_CASE("checkpoint roundtrip and corruption handling") {
  namespace fs = std::filesystem;
  auto tmp = fs::temp_directory_path() / "fh_fedcore_ckpt";
  fs::remove_all(tmp);
  fs::create_directories(tmp);

  auto spec = tiny_spec(3, 4);
  auto layout = ModelLayout::for_spec(spec);
  auto theta = random_params(spec, 91);
  save_checkpoint(tmp / "model.bin", layout, theta);
  auto [loaded_layout, loaded_theta] = load_checkpoint(tmp / "model.bin");
  CHECK(loaded_theta == theta);
  REQUIRE(loaded_layout.segments.size() == layout.segments.size());
  for (std::size_t i = 0; i < layout.segments.size(); ++i) {
    CHECK(loaded_layout.segments[i].name == layout.segments[i].name);
    CHECK(loaded_layout.segments[i].rows == layout.segments[i].rows);
    CHECK(loaded_layout.segments[i].cols == layout.segments[i].cols);
  }

  write_file_text(tmp / "bad.bin", "NOPE");
  CHECK_THROWS_AS(load_checkpoint(tmp / "bad.bin"), HarnessError);
  auto bytes = read_file_text(tmp / "model.bin");
  write_file_text(tmp / "short.bin", bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(load_checkpoint(tmp / "short.bin"), HarnessError);

  CHECK_THROWS_AS(save_checkpoint(tmp / "m.bin", layout, ParamVector(3, 0.0)), HarnessError);
  fs::remove_all(tmp);
}
