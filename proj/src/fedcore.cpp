#include "fedharness/fedcore.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>

#include "fedharness/image.hpp"

namespace fedharness {

namespace {

const std::set<std::string>& executable_algorithms() {
  static const std::set<std::string> ids = {"fedavg", "fedprox", "scaffold", "fednova", "ditto"};
  return ids;
}

bool all_finite(const ParamVector& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

double require_number(const Json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_number())
    throw HarnessError(std::string("training config: missing or non-numeric field '") + key + "'");
  return j.at(key).get<double>();
}

int require_int(const Json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_number_integer())
    throw HarnessError(std::string("training config: missing or non-integer field '") + key + "'");
  return j.at(key).get<int>();
}

}  // namespace

void ModelSpec::validate() const {
  if (input_side < 2) throw HarnessError("model spec: input_side must be >= 2");
  if (num_classes < 2) throw HarnessError("model spec: num_classes must be >= 2");
  if (hidden_width < 0) throw HarnessError("model spec: hidden_width must be >= 0");
}

Json ModelSpec::to_json() const {
  return Json{{"input_side", input_side},
              {"num_classes", num_classes},
              {"hidden_width", hidden_width}};
}

ModelSpec ModelSpec::from_json(const Json& j) {
  ModelSpec spec;
  spec.input_side = require_int(j, "input_side");
  spec.num_classes = require_int(j, "num_classes");
  spec.hidden_width = require_int(j, "hidden_width");
  spec.validate();
  return spec;
}

ModelLayout ModelLayout::for_spec(const ModelSpec& spec) {
  const auto D = static_cast<std::size_t>(spec.input_dim());
  const auto C = static_cast<std::size_t>(spec.num_classes);
  const auto H = static_cast<std::size_t>(spec.hidden_width);
  ModelLayout layout;
  auto push = [&](const char* name, std::size_t rows, std::size_t cols) {
    layout.segments.push_back({name, rows, cols, layout.total});
    layout.total += rows * cols;
  };
  if (H == 0) {
    push("w", C, D);
    push("b", C, 1);
  } else {
    push("w1", H, D);
    push("b1", H, 1);
    push("w2", C, H);
    push("b2", C, 1);
  }
  return layout;
}

Json ModelLayout::to_json() const {
  Json segs = Json::array();
  for (const auto& s : segments)
    segs.push_back(Json{{"name", s.name}, {"rows", s.rows}, {"cols", s.cols}, {"offset", s.offset}});
  return Json{{"segments", segs}, {"total", total}};
}

DataShard merge_shards(const std::vector<DataShard>& shards, const std::string& id) {
  DataShard out;
  out.client_id = id;
  for (const auto& s : shards) {
    out.train.insert(out.train.end(), s.train.begin(), s.train.end());
    out.heldout.insert(out.heldout.end(), s.heldout.begin(), s.heldout.end());
  }
  return out;
}

void TrainingConfig::validate() const {
  if (!executable_algorithms().count(algorithm))
    throw HarnessError("training config: no executable engine for algorithm '" + algorithm + "'");
  if (rounds < 1) throw HarnessError("training config: rounds must be >= 1");
  if (local_epochs < 1) throw HarnessError("training config: local_epochs must be >= 1");
  if (batch_size < 1) throw HarnessError("training config: batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw HarnessError("training config: learning_rate must be > 0");
  if (!(sampling_fraction > 0.0) || sampling_fraction > 1.0)
    throw HarnessError("training config: sampling_fraction must be in (0, 1]");
  if (mu < 0.0) throw HarnessError("training config: mu must be >= 0");
  if (lambda < 0.0) throw HarnessError("training config: lambda must be >= 0");
  model.validate();
}

Json TrainingConfig::to_json() const {
  return Json{{"algorithm", algorithm},
              {"rounds", rounds},
              {"local_epochs", local_epochs},
              {"batch_size", batch_size},
              {"learning_rate", learning_rate},
              {"sampling_fraction", sampling_fraction},
              {"mu", mu},
              {"lambda", lambda},
              {"model", model.to_json()},
              {"seed", seed}};
}

TrainingConfig TrainingConfig::from_json(const Json& j) {
  TrainingConfig cfg;
  if (!j.is_object()) throw HarnessError("training config: not an object");
  if (!j.contains("algorithm") || !j.at("algorithm").is_string())
    throw HarnessError("training config: missing or non-string field 'algorithm'");
  cfg.algorithm = j.at("algorithm").get<std::string>();
  cfg.rounds = require_int(j, "rounds");
  cfg.local_epochs = require_int(j, "local_epochs");
  cfg.batch_size = require_int(j, "batch_size");
  cfg.learning_rate = require_number(j, "learning_rate");
  cfg.sampling_fraction = require_number(j, "sampling_fraction");
  cfg.mu = require_number(j, "mu");
  cfg.lambda = require_number(j, "lambda");
  if (!j.contains("model")) throw HarnessError("training config: missing field 'model'");
  cfg.model = ModelSpec::from_json(j.at("model"));
  if (!j.contains("seed") || !j.at("seed").is_number_unsigned())
    throw HarnessError("training config: missing or non-unsigned field 'seed'");
  cfg.seed = j.at("seed").get<std::uint64_t>();
  cfg.validate();
  return cfg;
}

Json RoundLog::to_json() const {
  Json cl = Json::array();
  for (const auto& c : clients)
    cl.push_back(Json{{"client_id", c.client_id},
                      {"samples", c.samples},
                      {"weight", c.weight},
                      {"loss", c.loss},
                      {"accuracy", c.accuracy}});
  return Json{{"round", round},
              {"clients", cl},
              {"global_loss", global_loss},
              {"global_accuracy", global_accuracy}};
}

Json TrainingResult::summary_json() const {
  Json rs = Json::array();
  for (const auto& r : rounds) rs.push_back(r.to_json());
  Json j{{"rounds", rs},
         {"parameters", layout.total},
         {"start_signal_logged", start_signal_logged},
         {"warnings", warnings}};
  if (!rounds.empty()) {
    j["final_global_loss"] = rounds.back().global_loss;
    j["final_global_accuracy"] = rounds.back().global_accuracy;
  }
  return j;
}

ParamVector init_params(const ModelSpec& spec, RngStream& rng) {
  auto layout = ModelLayout::for_spec(spec);
  ParamVector theta(layout.total, 0.0);
  for (const auto& seg : layout.segments) {
    if (seg.name[0] != 'w') continue;  // biases stay zero
    for (std::size_t i = 0; i < seg.size(); ++i)
      theta[seg.offset + i] = 0.01 * rng.gaussian();
  }
  return theta;
}

namespace {

// Forward pass; writes logits (and the hidden activation when present).
void forward(const ModelSpec& spec, const ParamVector& theta, const std::vector<float>& x,
             std::vector<double>& logits, std::vector<double>* hidden) {
  const auto D = static_cast<std::size_t>(spec.input_dim());
  const auto C = static_cast<std::size_t>(spec.num_classes);
  const auto H = static_cast<std::size_t>(spec.hidden_width);
  if (x.size() != D) throw HarnessError("model: feature length mismatch");
  logits.assign(C, 0.0);
  if (H == 0) {
    const double* W = theta.data();
    const double* b = theta.data() + C * D;
    for (std::size_t c = 0; c < C; ++c) {
      double z = b[c];
      const double* row = W + c * D;
      for (std::size_t d = 0; d < D; ++d) z += row[d] * x[d];
      logits[c] = z;
    }
    return;
  }
  const double* W1 = theta.data();
  const double* b1 = theta.data() + H * D;
  const double* W2 = b1 + H;
  const double* b2 = W2 + C * H;
  std::vector<double>& h = *hidden;
  h.assign(H, 0.0);
  for (std::size_t k = 0; k < H; ++k) {
    double a = b1[k];
    const double* row = W1 + k * D;
    for (std::size_t d = 0; d < D; ++d) a += row[d] * x[d];
    h[k] = std::tanh(a);
  }
  for (std::size_t c = 0; c < C; ++c) {
    double z = b2[c];
    const double* row = W2 + c * H;
    for (std::size_t k = 0; k < H; ++k) z += row[k] * h[k];
    logits[c] = z;
  }
}

// Softmax probabilities in place; returns log-sum-exp for the loss.
double softmax_inplace(std::vector<double>& z) {
  double m = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double& v : z) {
    v = std::exp(v - m);
    sum += v;
  }
  for (double& v : z) v /= sum;
  return m + std::log(sum);
}

}  // namespace

double model_loss(const ModelSpec& spec, const ParamVector& theta,
                  const std::vector<Example>& data, double* accuracy) {
  if (data.empty()) {
    if (accuracy) *accuracy = 0.0;
    return 0.0;
  }
  std::vector<double> z, h;
  double loss = 0.0;
  std::size_t correct = 0;
  for (const auto& ex : data) {
    forward(spec, theta, ex.features, z, &h);
    std::size_t best = static_cast<std::size_t>(
        std::max_element(z.begin(), z.end()) - z.begin());
    if (static_cast<int>(best) == ex.label) ++correct;
    double zy = z[static_cast<std::size_t>(ex.label)];
    double lse = softmax_inplace(z);
    loss += lse - zy;
  }
  if (accuracy) *accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  return loss / static_cast<double>(data.size());
}

ParamVector model_gradient(const ModelSpec& spec, const ParamVector& theta,
                           const std::vector<const Example*>& batch) {
  const auto D = static_cast<std::size_t>(spec.input_dim());
  const auto C = static_cast<std::size_t>(spec.num_classes);
  const auto H = static_cast<std::size_t>(spec.hidden_width);
  ParamVector grad(theta.size(), 0.0);
  if (batch.empty()) return grad;
  std::vector<double> z, h, dz(C), da;
  for (const Example* ex : batch) {
    if (ex->label < 0 || ex->label >= spec.num_classes)
      throw HarnessError("model: label out of range");
    forward(spec, theta, ex->features, z, &h);
    softmax_inplace(z);
    for (std::size_t c = 0; c < C; ++c)
      dz[c] = z[c] - (static_cast<int>(c) == ex->label ? 1.0 : 0.0);
    if (H == 0) {
      double* gW = grad.data();
      double* gb = grad.data() + C * D;
      for (std::size_t c = 0; c < C; ++c) {
        double* row = gW + c * D;
        for (std::size_t d = 0; d < D; ++d) row[d] += dz[c] * ex->features[d];
        gb[c] += dz[c];
      }
    } else {
      const double* W2 = theta.data() + H * D + H;
      double* gW1 = grad.data();
      double* gb1 = grad.data() + H * D;
      double* gW2 = gb1 + H;
      double* gb2 = gW2 + C * H;
      for (std::size_t c = 0; c < C; ++c) {
        double* row = gW2 + c * H;
        for (std::size_t k = 0; k < H; ++k) row[k] += dz[c] * h[k];
        gb2[c] += dz[c];
      }
      da.assign(H, 0.0);
      for (std::size_t k = 0; k < H; ++k) {
        double dh = 0.0;
        for (std::size_t c = 0; c < C; ++c) dh += W2[c * H + k] * dz[c];
        da[k] = dh * (1.0 - h[k] * h[k]);
      }
      for (std::size_t k = 0; k < H; ++k) {
        double* row = gW1 + k * D;
        for (std::size_t d = 0; d < D; ++d) row[d] += da[k] * ex->features[d];
        gb1[k] += da[k];
      }
    }
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (double& g : grad) g *= inv;
  return grad;
}

ParamVector model_gradient(const ModelSpec& spec, const ParamVector& theta,
                           const std::vector<Example>& batch) {
  std::vector<const Example*> ptrs;
  ptrs.reserve(batch.size());
  for (const auto& ex : batch) ptrs.push_back(&ex);
  return model_gradient(spec, theta, ptrs);
}

LocalOutcome local_sgd(const ModelSpec& spec, ParamVector theta,
                       const std::vector<Example>& data, int epochs, int batch_size,
                       double eta, RngStream& rng, const LocalOptions& opt) {
  const std::size_t n = data.size();
  if (n == 0) return {std::move(theta), 0};
  if (opt.prox_mu != 0.0 && opt.prox_center == nullptr)
    throw HarnessError("local update: prox_mu set without a center");
  const std::size_t B = static_cast<std::size_t>(std::max(1, batch_size));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<const Example*> batch;
  std::size_t steps = 0;
  for (int e = 0; e < epochs; ++e) {
    rng.shuffle(order);
    for (std::size_t s = 0; s < n; s += B) {
      batch.clear();
      for (std::size_t i = s; i < std::min(n, s + B); ++i) batch.push_back(&data[order[i]]);
      ParamVector grad = model_gradient(spec, theta, batch);
      if (opt.prox_mu != 0.0)
        for (std::size_t i = 0; i < grad.size(); ++i)
          grad[i] += opt.prox_mu * (theta[i] - (*opt.prox_center)[i]);
      if (opt.correction)
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += (*opt.correction)[i];
      for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= eta * grad[i];
      ++steps;
    }
  }
  return {std::move(theta), steps};
}

ParamVector aggregate_weighted(const std::vector<ParamVector>& params,
                               const std::vector<double>& weights) {
  if (params.empty()) throw HarnessError("aggregate: no parameter vectors");
  if (params.size() != weights.size()) throw HarnessError("aggregate: weight count mismatch");
  const std::size_t len = params.front().size();
  ParamVector out(len, 0.0);
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k].size() != len) throw HarnessError("aggregate: parameter length mismatch");
    for (std::size_t i = 0; i < len; ++i) out[i] += weights[k] * params[k][i];
  }
  if (!all_finite(out)) throw HarnessError("aggregate: non-finite result");
  return out;
}

ParamVector aggregate_fedavg(const std::vector<ParamVector>& params,
                             const std::vector<std::size_t>& counts) {
  if (params.size() != counts.size()) throw HarnessError("aggregate: count list mismatch");
  std::size_t total = 0;
  for (std::size_t n : counts) {
    if (n == 0) throw HarnessError("aggregate: zero client sample count");
    total += n;
  }
  if (total == 0) throw HarnessError("aggregate: zero total sample count");
  std::vector<double> weights(counts.size());
  for (std::size_t k = 0; k < counts.size(); ++k)
    weights[k] = static_cast<double>(counts[k]) / static_cast<double>(total);
  return aggregate_weighted(params, weights);
}

ParamVector aggregate_fednova(const ParamVector& theta_init,
                              const std::vector<ParamVector>& deltas,
                              const std::vector<std::size_t>& tau,
                              const std::vector<std::size_t>& counts) {
  if (deltas.empty()) throw HarnessError("aggregate: no client updates");
  if (deltas.size() != tau.size() || deltas.size() != counts.size())
    throw HarnessError("aggregate: list length mismatch");
  std::size_t total = 0;
  for (std::size_t n : counts) {
    if (n == 0) throw HarnessError("aggregate: zero client sample count");
    total += n;
  }
  const std::size_t len = theta_init.size();
  ParamVector accum(len, 0.0);
  double tau_eff = 0.0;
  for (std::size_t k = 0; k < deltas.size(); ++k) {
    if (deltas[k].size() != len) throw HarnessError("aggregate: parameter length mismatch");
    if (tau[k] < 1) throw HarnessError("aggregate: local step count must be >= 1");
    const double p = static_cast<double>(counts[k]) / static_cast<double>(total);
    const double inv_tau = 1.0 / static_cast<double>(tau[k]);
    tau_eff += p * static_cast<double>(tau[k]);
    for (std::size_t i = 0; i < len; ++i) accum[i] += p * deltas[k][i] * inv_tau;
  }
  ParamVector out(len);
  for (std::size_t i = 0; i < len; ++i) out[i] = theta_init[i] + tau_eff * accum[i];
  if (!all_finite(out)) throw HarnessError("aggregate: non-finite result");
  return out;
}

TrainingResult run_federated_training(const TrainingConfig& config,
                                      const std::vector<DataShard>& shards, TraceLog* trace) {
  config.validate();
  auto emit = [&](const char* type, Json data) {
    if (trace) trace->record(type, std::move(data));
  };
  emit("training_config_valid", config.to_json());

  TrainingResult result;
  std::vector<const DataShard*> active;
  for (const auto& sh : shards) {
    if (sh.train.empty()) {
      result.warnings.push_back("client " + sh.client_id + " skipped: empty shard");
      emit("training_client_skipped", Json{{"client_id", sh.client_id}, {"reason", "empty shard"}});
      continue;
    }
    for (const auto& ex : sh.train)
      if (ex.label < 0 || ex.label >= config.model.num_classes)
        throw HarnessError("training: label out of range in shard " + sh.client_id);
    active.push_back(&sh);
  }
  if (active.empty()) {
    emit("training_abort", Json{{"reason", "all client shards empty"}});
    throw HarnessError("training: all client shards empty");
  }
  std::sort(active.begin(), active.end(),
            [](const DataShard* a, const DataShard* b) { return a->client_id < b->client_id; });
  for (std::size_t i = 1; i < active.size(); ++i)
    if (active[i]->client_id == active[i - 1]->client_id)
      throw HarnessError("training: duplicate client id " + active[i]->client_id);

  result.layout = ModelLayout::for_spec(config.model);
  const std::size_t len = result.layout.total;
  RngStream init_rng(RngStream::derive(config.seed, "model_init"));
  ParamVector theta = init_params(config.model, init_rng);

  Json client_ids = Json::array();
  for (const auto* sh : active) client_ids.push_back(sh->client_id);
  emit("training_initialized",
       Json{{"parameters", len}, {"clients", client_ids}, {"model", config.model.to_json()}});
  emit("training_start", Json{{"algorithm", config.algorithm},
                              {"rounds", config.rounds},
                              {"clients", client_ids}});
  result.start_signal_logged = true;

  std::vector<Example> global_eval;
  for (const auto* sh : active)
    global_eval.insert(global_eval.end(), sh->heldout.begin(), sh->heldout.end());
  if (global_eval.empty()) {
    result.warnings.push_back("no heldout examples; global metrics use training data");
    for (const auto* sh : active)
      global_eval.insert(global_eval.end(), sh->train.begin(), sh->train.end());
  }

  std::map<std::string, ParamVector> c_client;  // scaffold control variates
  ParamVector c_server(len, 0.0);
  std::map<std::string, ParamVector> personalized;  // ditto

  for (int r = 1; r <= config.rounds; ++r) {
    std::vector<std::size_t> pick(active.size());
    std::iota(pick.begin(), pick.end(), std::size_t{0});
    if (config.sampling_fraction < 1.0) {
      auto m = static_cast<std::size_t>(
          std::llround(config.sampling_fraction * static_cast<double>(active.size())));
      m = std::clamp<std::size_t>(m, 1, active.size());
      RngStream sel(RngStream::derive(config.seed, "round/" + std::to_string(r) + "/select"));
      pick = sel.sample_indices(active.size(), m);
      std::sort(pick.begin(), pick.end());
    }

    const ParamVector theta_init = theta;
    std::vector<ParamVector> locals;
    std::vector<std::size_t> counts, taus;
    RoundLog log;
    log.round = r;

    for (std::size_t idx : pick) {
      const DataShard& sh = *active[idx];
      const std::string label = "round/" + std::to_string(r) + "/client/" + sh.client_id;
      RngStream rng(RngStream::derive(config.seed, label));
      LocalOutcome out;
      if (config.algorithm == "fedprox") {
        LocalOptions opt;
        opt.prox_mu = config.mu;
        opt.prox_center = &theta_init;
        out = local_sgd(config.model, theta_init, sh.train, config.local_epochs,
                        config.batch_size, config.learning_rate, rng, opt);
      } else if (config.algorithm == "scaffold") {
        auto [it, inserted] = c_client.try_emplace(sh.client_id, ParamVector(len, 0.0));
        ParamVector correction(len);
        for (std::size_t i = 0; i < len; ++i) correction[i] = c_server[i] - it->second[i];
        LocalOptions opt;
        opt.correction = &correction;
        out = local_sgd(config.model, theta_init, sh.train, config.local_epochs,
                        config.batch_size, config.learning_rate, rng, opt);
        const double scale =
            1.0 / (static_cast<double>(out.steps) * config.learning_rate);
        ParamVector next(len);
        for (std::size_t i = 0; i < len; ++i)
          next[i] = it->second[i] - c_server[i] + scale * (theta_init[i] - out.theta[i]);
        it->second = std::move(next);
      } else if (config.algorithm == "ditto") {
        out = local_sgd(config.model, theta_init, sh.train, config.local_epochs,
                        config.batch_size, config.learning_rate, rng);
        auto [it, inserted] = personalized.try_emplace(sh.client_id, theta_init);
        RngStream prng(
            RngStream::derive(config.seed, "round/" + std::to_string(r) + "/personal/" + sh.client_id));
        LocalOptions opt;
        opt.prox_mu = config.lambda;
        opt.prox_center = &theta_init;
        it->second = local_sgd(config.model, std::move(it->second), sh.train,
                               config.local_epochs, config.batch_size, config.learning_rate,
                               prng, opt)
                         .theta;
      } else {  // fedavg, fednova share the plain local step
        out = local_sgd(config.model, theta_init, sh.train, config.local_epochs,
                        config.batch_size, config.learning_rate, rng);
      }

      ClientRoundStats stats;
      stats.client_id = sh.client_id;
      stats.samples = sh.train.size();
      stats.loss = model_loss(config.model, out.theta, sh.train, &stats.accuracy);
      if (!std::isfinite(stats.loss) || !all_finite(out.theta))
        throw HarnessError("training: non-finite local update (round " + std::to_string(r) +
                           ", client " + sh.client_id + ")");
      log.clients.push_back(stats);
      locals.push_back(std::move(out.theta));
      counts.push_back(sh.train.size());
      taus.push_back(out.steps);
    }

    if (config.algorithm == "fednova") {
      std::vector<ParamVector> deltas(locals.size());
      for (std::size_t k = 0; k < locals.size(); ++k) {
        deltas[k].resize(len);
        for (std::size_t i = 0; i < len; ++i) deltas[k][i] = locals[k][i] - theta_init[i];
      }
      theta = aggregate_fednova(theta_init, deltas, taus, counts);
    } else {
      theta = aggregate_fedavg(locals, counts);
    }
    if (config.algorithm == "scaffold") {
      c_server.assign(len, 0.0);
      for (const auto* sh : active) {
        auto it = c_client.find(sh->client_id);
        if (it == c_client.end()) continue;  // never sampled: still zero
        for (std::size_t i = 0; i < len; ++i) c_server[i] += it->second[i];
      }
      const double inv = 1.0 / static_cast<double>(active.size());
      for (double& v : c_server) v *= inv;
    }

    std::size_t total = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
    for (auto& c : log.clients)
      c.weight = static_cast<double>(c.samples) / static_cast<double>(total);
    log.global_loss = model_loss(config.model, theta, global_eval, &log.global_accuracy);
    emit("training_round", log.to_json());
    result.rounds.push_back(std::move(log));
  }

  result.theta = std::move(theta);
  result.personalized = std::move(personalized);
  result.control_variates = std::move(c_client);
  result.server_variate = std::move(c_server);
  emit("training_complete",
       Json{{"rounds", config.rounds},
            {"final_global_accuracy", result.rounds.back().global_accuracy}});
  return result;
}

TrainingResult run_centralized_training(const TrainingConfig& config, const DataShard& shard,
                                        TraceLog* trace) {
  TrainingConfig cfg = config;
  cfg.algorithm = "fedavg";
  cfg.sampling_fraction = 1.0;
  return run_federated_training(cfg, {shard}, trace);
}

std::vector<DataShard> load_client_shards(const std::filesystem::path& workspace_root,
                                          const std::vector<std::string>& client_ids,
                                          const std::vector<std::string>& coarse_labels,
                                          const ModelSpec& spec,
                                          std::vector<std::string>* warnings) {
  auto warn = [&](const std::string& msg) {
    if (warnings) warnings->push_back(msg);
  };
  std::vector<DataShard> shards;
  for (const auto& cid : client_ids) {
    DataShard shard;
    shard.client_id = cid;
    const fs::path croot = workspace_root / "clients" / cid;
    if (!fs::is_directory(croot)) {
      warn("client " + cid + ": no workspace directory");
      shards.push_back(std::move(shard));
      continue;
    }
    for (const auto& ds : sorted_dir_entries(croot)) {
      if (!fs::is_directory(ds)) continue;
      for (const auto& coarse_dir : sorted_dir_entries(ds)) {
        if (!fs::is_directory(coarse_dir)) continue;
        const std::string coarse = coarse_dir.filename().string();
        auto it = std::find(coarse_labels.begin(), coarse_labels.end(), coarse);
        if (it == coarse_labels.end()) continue;
        const int label = static_cast<int>(it - coarse_labels.begin());
        for (const auto& file : sorted_dir_entries(coarse_dir)) {
          if (!fs::is_regular_file(file)) continue;
          if (lowercase(file.extension().string()) != ".pgm") continue;
          auto img = decode_image_file(file);
          if (!img) {
            warn("client " + cid + ": undecodable image " + file.filename().string());
            continue;
          }
          Example ex;
          ex.label = label;
          try {
            Image small = resize_to(*img, spec.input_side, spec.input_side);
            ex.features.reserve(small.pixels.size());
            for (std::uint8_t px : small.pixels)
              ex.features.push_back(static_cast<float>(px) / 255.0f);
          } catch (const HarnessError& e) {
            warn("client " + cid + ": cannot resize " + file.filename().string() + ": " +
                 e.what());
            continue;
          }
          const std::string stem = file.stem().string();
          if (fnv1a64(stem) % 5 == 0)
            shard.heldout.push_back(std::move(ex));
          else
            shard.train.push_back(std::move(ex));
        }
      }
    }
    shards.push_back(std::move(shard));
  }
  return shards;
}

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const std::string& s, std::size_t& pos) {
  if (pos + 4 > s.size()) throw HarnessError("checkpoint: truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(s[pos++])) << (8 * i);
  return v;
}

std::uint64_t get_u64(const std::string& s, std::size_t& pos) {
  if (pos + 8 > s.size()) throw HarnessError("checkpoint: truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(s[pos++])) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelLayout& layout,
                     const ParamVector& theta) {
  if (theta.size() != layout.total) throw HarnessError("checkpoint: layout/parameter mismatch");
  std::string out;
  out += "FHM1";
  put_u32(out, static_cast<std::uint32_t>(layout.segments.size()));
  for (const auto& seg : layout.segments) {
    if (seg.name.size() > 255) throw HarnessError("checkpoint: segment name too long");
    out.push_back(static_cast<char>(seg.name.size()));
    out += seg.name;
    put_u32(out, static_cast<std::uint32_t>(seg.rows));
    put_u32(out, static_cast<std::uint32_t>(seg.cols));
  }
  put_u64(out, theta.size());
  for (double v : theta) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    put_u64(out, bits);
  }
  write_file_text(path, out);
}

std::pair<ModelLayout, ParamVector> load_checkpoint(const std::filesystem::path& path) {
  const std::string s = read_file_text(path);
  if (s.size() < 4 || s.compare(0, 4, "FHM1") != 0)
    throw HarnessError("checkpoint: bad magic");
  std::size_t pos = 4;
  ModelLayout layout;
  const std::uint32_t nseg = get_u32(s, pos);
  if (nseg > 64) throw HarnessError("checkpoint: segment count out of range");
  for (std::uint32_t i = 0; i < nseg; ++i) {
    if (pos >= s.size()) throw HarnessError("checkpoint: truncated");
    const auto name_len = static_cast<std::size_t>(static_cast<std::uint8_t>(s[pos++]));
    if (pos + name_len > s.size()) throw HarnessError("checkpoint: truncated");
    LayoutSegment seg;
    seg.name = s.substr(pos, name_len);
    pos += name_len;
    seg.rows = get_u32(s, pos);
    seg.cols = get_u32(s, pos);
    seg.offset = layout.total;
    layout.total += seg.size();
    layout.segments.push_back(std::move(seg));
  }
  const std::uint64_t count = get_u64(s, pos);
  if (count != layout.total) throw HarnessError("checkpoint: layout/parameter mismatch");
  ParamVector theta(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint64_t bits = get_u64(s, pos);
    double v;
    std::memcpy(&v, &bits, sizeof v);
    theta[i] = v;
  }
  if (pos != s.size()) throw HarnessError("checkpoint: trailing bytes");
  return {std::move(layout), std::move(theta)};
}

}  // namespace fedharness
