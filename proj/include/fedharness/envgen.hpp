#pragma once

#include <map>
#include <string>
#include <vector>

#include "fedharness/common.hpp"
#include "fedharness/manifest.hpp"
#include "fedharness/modality.hpp"
#include "fedharness/protocol.hpp"

namespace fedharness {

struct IntRange {
  int lo = 0;
  int hi = 0;
};

struct EnvironmentConfig {
  std::uint64_t seed = 0;
  Modality modality = Modality::Dermatoscopy;
  int num_clients = 3;
  IntRange datasets_per_client{1, 2};
  IntRange classes_per_dataset{2, 4};
  IntRange samples_per_class{6, 10};
  double eligible_fraction = 0.75;
  double perturbation_fraction = 0.3;
  double flat_layout_probability = 0.25;

  void validate() const;
  Json to_json() const;
  static EnvironmentConfig from_json(const Json& j);
};

struct DataCardDataset {
  std::string dataset_name;
  std::string modality;
  std::string task_kind;
  std::vector<std::string> label_set;
  std::map<std::string, int> sample_counts;
  std::string description;

  Json to_json() const;
  static DataCardDataset from_json(const Json& j);
};

struct DataCard {
  std::string client_id;
  std::vector<DataCardDataset> datasets;

  Json to_json() const;
  static DataCard from_json(const Json& j);
};

// Builds the whole multi-client workspace under root (which must not hold
// any prior content): per-client dataset trees with injected corruptions,
// datacards, the task file, the server registry copy, and the ground-truth
// manifest. Pure function of config.
GroundTruthManifest generate_environment(const EnvironmentConfig& config, const fs::path& root);

}  // namespace fedharness
