#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "fedharness/common.hpp"
#include "fedharness/rng.hpp"
#include "fedharness/trace.hpp"

namespace fedharness {

struct ModelSpec {
  int input_side = 16;  // inputs are resized to side x side and flattened
  int num_classes = 2;
  int hidden_width = 0;  // 0 = plain multinomial logistic regression

  int input_dim() const { return input_side * input_side; }
  void validate() const;
  Json to_json() const;
  static ModelSpec from_json(const Json& j);
};

struct LayoutSegment {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t offset = 0;

  std::size_t size() const { return rows * cols; }
};

// Maps segments of the flat parameter vector onto layers.
struct ModelLayout {
  std::vector<LayoutSegment> segments;
  std::size_t total = 0;

  static ModelLayout for_spec(const ModelSpec& spec);
  Json to_json() const;
};

using ParamVector = std::vector<double>;

struct Example {
  std::vector<float> features;  // pixels scaled to [0, 1]
  int label = 0;
};

struct DataShard {
  std::string client_id;
  std::vector<Example> train;
  std::vector<Example> heldout;
};

DataShard merge_shards(const std::vector<DataShard>& shards, const std::string& id);

struct TrainingConfig {
  std::string algorithm = "fedavg";
  int rounds = 20;
  int local_epochs = 1;
  int batch_size = 8;
  double learning_rate = 0.1;
  double sampling_fraction = 1.0;
  double mu = 0.01;     // fedprox proximal strength
  double lambda = 1.0;  // ditto personalization strength
  ModelSpec model;
  std::uint64_t seed = 1;

  void validate() const;
  Json to_json() const;
  // Strict: every field must be present.
  static TrainingConfig from_json(const Json& j);
};

struct ClientRoundStats {
  std::string client_id;
  std::size_t samples = 0;
  double weight = 0.0;
  double loss = 0.0;
  double accuracy = 0.0;
};

struct RoundLog {
  int round = 0;
  std::vector<ClientRoundStats> clients;
  double global_loss = 0.0;
  double global_accuracy = 0.0;

  Json to_json() const;
};

struct TrainingResult {
  std::vector<RoundLog> rounds;
  ParamVector theta;
  ModelLayout layout;
  std::map<std::string, ParamVector> personalized;       // ditto
  std::map<std::string, ParamVector> control_variates;   // scaffold, per client
  ParamVector server_variate;                            // scaffold
  std::vector<std::string> warnings;
  bool start_signal_logged = false;

  Json summary_json() const;
};

ParamVector init_params(const ModelSpec& spec, RngStream& rng);

double model_loss(const ModelSpec& spec, const ParamVector& theta,
                  const std::vector<Example>& data, double* accuracy = nullptr);

// Mean gradient of the cross-entropy loss over the batch.
ParamVector model_gradient(const ModelSpec& spec, const ParamVector& theta,
                           const std::vector<const Example*>& batch);
ParamVector model_gradient(const ModelSpec& spec, const ParamVector& theta,
                           const std::vector<Example>& batch);

struct LocalOptions {
  // When nonzero, every minibatch gradient gains prox_mu * (theta - *prox_center).
  double prox_mu = 0.0;
  const ParamVector* prox_center = nullptr;
  // When set, added verbatim to every minibatch gradient (variance correction).
  const ParamVector* correction = nullptr;
};

struct LocalOutcome {
  ParamVector theta;
  std::size_t steps = 0;  // minibatch steps taken
};

LocalOutcome local_sgd(const ModelSpec& spec, ParamVector theta,
                       const std::vector<Example>& data, int epochs, int batch_size,
                       double eta, RngStream& rng, const LocalOptions& opt = {});

ParamVector aggregate_weighted(const std::vector<ParamVector>& params,
                               const std::vector<double>& weights);
ParamVector aggregate_fedavg(const std::vector<ParamVector>& params,
                             const std::vector<std::size_t>& counts);
// Normalized averaging: theta_init + tau_eff * sum_k p_k * delta_k / tau_k.
ParamVector aggregate_fednova(const ParamVector& theta_init,
                              const std::vector<ParamVector>& deltas,
                              const std::vector<std::size_t>& tau,
                              const std::vector<std::size_t>& counts);

// R rounds of sample / local update / aggregate / evaluate. Empty shards are
// skipped with a warning; the start signal is recorded before round 1.
TrainingResult run_federated_training(const TrainingConfig& config,
                                      const std::vector<DataShard>& shards,
                                      TraceLog* trace = nullptr);

// The same loop over a single merged shard, for baselines.
TrainingResult run_centralized_training(const TrainingConfig& config, const DataShard& shard,
                                        TraceLog* trace = nullptr);

// Reads harmonized client folders: <root>/clients/<id>/<dataset>/<coarse>/<name>.pgm.
// Labels index into coarse_labels; a stem hash assigns ~1/5 of files to heldout.
std::vector<DataShard> load_client_shards(const std::filesystem::path& workspace_root,
                                          const std::vector<std::string>& client_ids,
                                          const std::vector<std::string>& coarse_labels,
                                          const ModelSpec& spec,
                                          std::vector<std::string>* warnings = nullptr);

void save_checkpoint(const std::filesystem::path& path, const ModelLayout& layout,
                     const ParamVector& theta);
std::pair<ModelLayout, ParamVector> load_checkpoint(const std::filesystem::path& path);

}  // namespace fedharness
