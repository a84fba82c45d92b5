#include "fedharness/registry.hpp"

#include <algorithm>

namespace fedharness {

namespace {

std::vector<AlgorithmDescriptor> build_registry() {
  std::vector<AlgorithmDescriptor> r;
  r.push_back({"fedavg", "FedAvg", "classical",
               "Weighted parameter averaging: theta = sum_k (n_k / n) theta_k over the "
               "participating clients. The baseline aggregation rule.",
               {"baseline", "convergence_stability"},
               true});
  r.push_back({"fedprox", "FedProx", "classical",
               "Local objective augmented with a proximal term mu/2 * ||theta - theta_init||^2 "
               "whose gradient is mu (theta - theta_init); tolerates heterogeneous and partial "
               "local work.",
               {"non_iid_robustness", "heterogeneity"},
               true});
  r.push_back({"scaffold", "SCAFFOLD", "classical",
               "Variance-reduced local steps y <- y - eta (g - c_i + c) with control variates; "
               "after K local steps c_i is replaced by c_i - c + (theta_init - y) / (K eta) and "
               "the server keeps c as the mean of client variates.",
               {"non_iid_robustness", "convergence_stability"},
               true});
  r.push_back({"per_fedavg", "Per-FedAvg", "personalized",
               "Meta-learning formulation of FedAvg: the global model is optimized so one or a "
               "few local gradient steps personalize it per client.",
               {"personalization"},
               false});
  r.push_back({"pfedme", "pFedMe", "personalized",
               "Bi-level personalization with Moreau envelopes; per-client models stay close to "
               "a shared reference while fitting local data.",
               {"personalization", "non_iid_robustness"},
               false});
  r.push_back({"fedrep", "FedRep", "personalized",
               "Shared representation learned federatively with per-client heads trained "
               "locally.",
               {"personalization", "heterogeneity"},
               false});
  r.push_back({"ditto", "Ditto", "regularization",
               "Trains a personalized model v per client on F_k(v) + lambda/2 * "
               "||v - theta_global||^2 beside the global model; lambda trades fidelity to the "
               "federation against local fit.",
               {"personalization", "non_iid_robustness"},
               true});
  r.push_back({"feddf", "FedDF", "distillation",
               "Ensemble distillation on the server: client models teach a student global model "
               "on unlabeled transfer data.",
               {"heterogeneity"},
               false});
  r.push_back({"fedsr", "FedSR", "domain_generalization",
               "Simple representation regularization (L2 norm and conditional mutual "
               "information) for federated domain generalization.",
               {"non_iid_robustness"},
               false});
  r.push_back({"feddg", "FedDG", "domain_generalization",
               "Episodic meta-learning with amplitude-spectrum sharing so the federation "
               "generalizes to unseen domains.",
               {"non_iid_robustness"},
               false});
  r.push_back({"fedirm", "FedIRM", "regularization",
               "Inter-client relation matching that aligns class-relation graphs between "
               "labeled and unlabeled sites.",
               {"heterogeneity"},
               false});
  r.push_back({"fednova", "FedNova", "optimization_scheduling",
               "Normalized averaging: per-client normalized directions d_k = Delta_k / tau_k "
               "are combined as theta = theta_init + tau_eff * sum_k p_k d_k with tau_eff = "
               "sum_k p_k tau_k, removing objective inconsistency under unequal local work.",
               {"heterogeneity", "convergence_stability"},
               true});
  r.push_back({"pfedsim", "pFedSim", "personalized",
               "Similarity-aware personalization: client models are aggregated with weights "
               "from pairwise model similarity.",
               {"personalization"},
               false});
  return r;
}

}  // namespace

Json AlgorithmDescriptor::to_json() const {
  return Json{{"id", id},
              {"name", name},
              {"family", family},
              {"description", description},
              {"tags", tags},
              {"executable", executable}};
}

const std::vector<AlgorithmDescriptor>& algorithm_registry() {
  static const std::vector<AlgorithmDescriptor> registry = build_registry();
  return registry;
}

const AlgorithmDescriptor* find_algorithm(const std::string& id) {
  for (const auto& a : algorithm_registry())
    if (a.id == id) return &a;
  return nullptr;
}

Json registry_to_json() {
  Json entries = Json::array();
  for (const auto& a : algorithm_registry()) entries.push_back(a.to_json());
  return Json{{"schema_version", 1}, {"algorithms", entries}};
}

std::vector<std::string> extract_preference_tags(const std::string& preferences) {
  std::string text = lowercase(preferences);
  auto has = [&](const char* needle) { return text.find(needle) != std::string::npos; };
  std::vector<std::string> tags;
  if (has("baseline")) tags.push_back("baseline");
  if (has("personaliz")) tags.push_back("personalization");
  if (has("non-iid") || has("non iid")) tags.push_back("non_iid_robustness");
  if (has("heterogen")) tags.push_back("heterogeneity");
  if (has("stable") || has("convergen")) tags.push_back("convergence_stability");
  return tags;
}

std::vector<std::string> suitable_algorithm_ids(const std::string& preferences) {
  auto requested = extract_preference_tags(preferences);
  std::vector<std::string> out;
  if (requested.empty()) {
    for (const auto& a : algorithm_registry())
      if (a.executable && a.family == "classical") out.push_back(a.id);
    return out;
  }
  for (const auto& a : algorithm_registry()) {
    bool all = std::all_of(requested.begin(), requested.end(), [&](const std::string& t) {
      return std::find(a.tags.begin(), a.tags.end(), t) != a.tags.end();
    });
    if (all) out.push_back(a.id);
  }
  return out;
}

AlgorithmChoice select_algorithm(const std::string& preferences) {
  auto tags = extract_preference_tags(preferences);
  auto ids = suitable_algorithm_ids(preferences);
  std::string tag_text = tags.empty() ? "no stated constraints" : "tags:";
  for (const auto& t : tags) tag_text += " " + t;

  if (ids.empty())
    return {"fedavg", "no registry entry carries every requested tag (" + tag_text +
                          "); defaulting to fedavg"};
  for (const auto& id : ids) {
    const auto* a = find_algorithm(id);
    if (a && a->executable)
      return {id, a->name + " matches the request (" + tag_text + ") and has an executable engine"};
  }
  const auto* a = find_algorithm(ids.front());
  return {ids.front(), a->name + " matches the request (" + tag_text +
                           ") but only a descriptor ships; training will not run"};
}

}  // namespace fedharness
