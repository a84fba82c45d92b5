#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fedharness/common.hpp"

namespace fedharness {

struct AlgorithmDescriptor {
  std::string id;      // lowercase handle, e.g. "fedavg"
  std::string name;    // display name, e.g. "FedAvg"
  std::string family;  // classical | personalized | regularization | distillation |
                       // domain_generalization | optimization_scheduling
  std::string description;
  std::vector<std::string> tags;
  bool executable = false;

  Json to_json() const;
};

// Ships the named algorithm suite; the format holds more entries unchanged
// if a larger catalogue is dropped in.
const std::vector<AlgorithmDescriptor>& algorithm_registry();
const AlgorithmDescriptor* find_algorithm(const std::string& id);

Json registry_to_json();

// Keyword scan of a free-text preference line onto suitability tags. Empty
// result means no stated constraints.
std::vector<std::string> extract_preference_tags(const std::string& preferences);

// The documented suitability rule: algorithms carrying every requested tag,
// in registry order. With no tags the executable classical trio applies.
std::vector<std::string> suitable_algorithm_ids(const std::string& preferences);

struct AlgorithmChoice {
  std::string id;
  std::string rationale;
};

// Picks the first executable suitable algorithm (falls back to the first
// suitable descriptor, then to fedavg when the tag filter comes up empty).
AlgorithmChoice select_algorithm(const std::string& preferences);

}  // namespace fedharness
