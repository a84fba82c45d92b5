#include "fedharness/prompts.hpp"

#include "fedharness/common.hpp"
#include "fedharness/toolkit.hpp"

namespace fedharness {

namespace {

std::string role_mission(Role kind) {
  switch (kind) {
    case Role::S1: return "the server coordinator who turns the user task into client queries";
    case Role::S2: return "the server selector who weighs dataset offers and picks the cohort";
    case Role::S3: return "the server methodologist who chooses the federated algorithm";
    case Role::S4: return "the server launcher who validates the configuration and starts training";
    case Role::C1: return "a client liaison who describes the local data holdings";
    case Role::C2: return "a client data engineer who cleans and standardizes the local datasets";
    case Role::C3: return "a client curator who maps local class names onto the shared schema";
    case Role::User: return "the requesting user";
  }
  return "";
}

std::string tool_lines(Role kind) {
  std::string out;
  for (const auto& spec : tool_specs()) {
    if (!tool_assigned_to(spec, kind)) continue;
    out += "- " + spec.name + ": " + spec.description + "\n";
  }
  if (out.empty()) out = "- none (this role works through messages only)\n";
  return out;
}

}  // namespace

std::string render_template(const std::string& tmpl,
                            const std::map<std::string, std::string>& vars) {
  std::string out;
  out.reserve(tmpl.size());
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] == '{') {
      auto end = tmpl.find('}', i);
      if (end != std::string::npos) {
        auto it = vars.find(tmpl.substr(i + 1, end - i - 1));
        if (it != vars.end()) {
          out += it->second;
          i = end + 1;
          continue;
        }
      }
    }
    out += tmpl[i++];
  }
  return out;
}

std::string guidance_text(Role kind, Phase phase, GuidanceMode mode) {
  if (mode == GuidanceMode::GoalOriented) {
    switch (phase) {
      case Phase::ClientSelection:
        return kind == Role::S1   ? "Find out which clients can serve this task.\n"
               : kind == Role::C1 ? "Tell the server whether your data fits the task.\n"
                                  : "Pick the clients whose data fits the task.\n";
      case Phase::DataPreprocessing:
        return "Leave the dataset clean, consistent, and ready for training.\n";
      case Phase::LabelHarmonization:
        return "Reorganize the data under the shared class schema.\n";
      case Phase::FederatedTraining:
        return kind == Role::S3 ? "Choose the algorithm that best fits the stated preferences.\n"
                                : "Launch training with a configuration that will be accepted.\n";
    }
    return "";
  }
  switch (phase) {
    case Phase::ClientSelection:
      if (kind == Role::S1)
        return "Step 1: read the user query delivered above. Step 2: send each client "
               "liaison one query message carrying modality, task kind, and target classes. "
               "Step 3: finish with the list of clients you queried.\n";
      if (kind == Role::C1)
        return "Step 1: read your datacard with the read_datacard tool. Step 2: compare each "
               "dataset's modality and task kind against the query. Step 3: send S2 a "
               "dataset_offer message with your client id, a match flag, and the matching "
               "datasets. Step 4: finish with the match flag.\n";
      return "Step 1: read the offers delivered above. Step 2: include exactly the clients "
             "whose offer matches the task, with one justification line each. Step 3: message "
             "the user the selected ids, then finish with selection and justifications.\n";
    case Phase::DataPreprocessing:
      return "Work dataset by dataset. Step 1: list the dataset; if class-prefixed files sit "
             "at the top level, restructure_by_class first. Step 2: list subfolders and mark "
             "every non-image file for removal. Step 3: run detect_duplicates and keep only "
             "the first file of each group. Step 4: run detect_outliers and mark everything "
             "it flags. Step 5: remove the marked files in one remove_files call. Step 6: run "
             "normalize_images so format, resolution, and intensity match the canonical "
             "profile. Finish with a per-dataset summary.\n";
    case Phase::LabelHarmonization:
      return "Step 1: enumerate_labels for each dataset. Step 2: map every local class name "
             "onto the target schema; a class already named like a target maps to itself; "
             "leave a class unmapped only if no target fits. Step 3: apply_label_mapping "
             "with the mapping. Finish with the full mapping table.\n";
    case Phase::FederatedTraining:
      if (kind == Role::S3)
        return "Step 1: query_algorithm_registry with the stated preferences as the filter. "
               "Step 2: from the suggestions, prefer an algorithm with an executable engine. "
               "Step 3: message S4 the chosen algorithm id with a one-line rationale, then "
               "finish with the same.\n";
      return "Step 1: read the algorithm message delivered above. Step 2: build a complete "
             "training configuration: that algorithm, the default optimizer settings, a model "
             "sized to the target schema. Step 3: call launch_training with the configuration "
             "and the selected clients. Finish with the launch receipt.\n";
  }
  return "";
}

std::string prompt_template(Role kind, Phase phase, GuidanceMode mode) {
  std::string t;
  t += "# Agent prompt, template v" + std::to_string(kPromptTemplateVersion) + "\n";
  t += "You are {role}, " + role_mission(kind) + ".\n";
  t += "Phase: " + phase_name(phase) + ".\n";
  t += "Task: {objective}\n";
  t += "Modality {modality}; task kind {task_kind}; target classes [{target_schema}].\n";
  t += "Stated preferences: {fl_preferences}\n";
  t += "Workspace paths are workspace-relative; you only see your own scope.\n";
  t += "Tools:\n" + tool_lines(kind);
  t += "Budget: {tool_budget} tool calls this phase.\n";
  t +=
      "Each turn emit exactly one fenced block and nothing else:\n"
      "```tool\n{\"tool\": \"<name>\", \"args\": {}}\n```\n"
      "```message\n{\"to\": \"<role>\", \"kind\": \"<kind>\", \"payload\": {}}\n```\n"
      "```final\n{}\n```\n"
      "Tool results and incoming messages arrive as feedback turns.\n";
  t += "## Guidance\n" + guidance_text(kind, phase, mode);
  return t;
}

}  // namespace fedharness
