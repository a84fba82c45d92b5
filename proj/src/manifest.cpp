#include "fedharness/manifest.hpp"

namespace fedharness {

Json DuplicateEntry::to_json() const {
  return Json{{"path", path},
              {"class", cls},
              {"source_stem", source_stem},
              {"stem", stem},
              {"hash", hash}};
}

DuplicateEntry DuplicateEntry::from_json(const Json& j) {
  return {j.at("path").get<std::string>(), j.at("class").get<std::string>(),
          j.at("source_stem").get<std::string>(), j.at("stem").get<std::string>(),
          j.at("hash").get<std::string>()};
}

Json OffModalityEntry::to_json() const {
  return Json{{"path", path}, {"class", cls}, {"stem", stem}, {"modality", modality}};
}

OffModalityEntry OffModalityEntry::from_json(const Json& j) {
  return {j.at("path").get<std::string>(), j.at("class").get<std::string>(),
          j.at("stem").get<std::string>(), j.at("modality").get<std::string>()};
}

Json MislabelEntry::to_json() const {
  return Json{{"path", path},
              {"stem", stem},
              {"claimed_class", claimed_class},
              {"true_class", true_class}};
}

MislabelEntry MislabelEntry::from_json(const Json& j) {
  return {j.at("path").get<std::string>(), j.at("stem").get<std::string>(),
          j.at("claimed_class").get<std::string>(), j.at("true_class").get<std::string>()};
}

Json PerturbationEntry::to_json() const {
  return Json{{"path", path},
              {"class", cls},
              {"stem", stem},
              {"kind", kind},
              {"original_format", original_format},
              {"current_format", current_format},
              {"original_width", original_width},
              {"original_height", original_height},
              {"current_width", current_width},
              {"current_height", current_height},
              {"intensity_shift", intensity_shift}};
}

PerturbationEntry PerturbationEntry::from_json(const Json& j) {
  PerturbationEntry e;
  e.path = j.at("path").get<std::string>();
  e.cls = j.at("class").get<std::string>();
  e.stem = j.at("stem").get<std::string>();
  e.kind = j.at("kind").get<std::string>();
  e.original_format = j.at("original_format").get<std::string>();
  e.current_format = j.at("current_format").get<std::string>();
  e.original_width = j.at("original_width").get<int>();
  e.original_height = j.at("original_height").get<int>();
  e.current_width = j.at("current_width").get<int>();
  e.current_height = j.at("current_height").get<int>();
  e.intensity_shift = j.at("intensity_shift").get<double>();
  return e;
}

std::size_t DatasetRecord::expected_total() const {
  std::size_t n = 0;
  for (const auto& [cls, stems] : expected) n += stems.size();
  return n;
}

Json DatasetRecord::to_json() const {
  Json exp = Json::object();
  for (const auto& [cls, stems] : expected) exp[cls] = stems;
  Json dup = Json::array();
  for (const auto& d : duplicates) dup.push_back(d.to_json());
  Json off = Json::array();
  for (const auto& o : off_modality) off.push_back(o.to_json());
  Json mis = Json::array();
  for (const auto& m : mislabeled) mis.push_back(m.to_json());
  Json per = Json::array();
  for (const auto& p : perturbations) per.push_back(p.to_json());
  return Json{{"name", name},
              {"modality", modality},
              {"task_kind", task_kind},
              {"flat_layout", flat_layout},
              {"classes", classes},
              {"expected", exp},
              {"duplicates", dup},
              {"off_modality", off},
              {"mislabeled", mis},
              {"junk", junk},
              {"perturbations", per}};
}

DatasetRecord DatasetRecord::from_json(const Json& j) {
  DatasetRecord d;
  d.name = j.at("name").get<std::string>();
  d.modality = j.at("modality").get<std::string>();
  d.task_kind = j.at("task_kind").get<std::string>();
  d.flat_layout = j.at("flat_layout").get<bool>();
  d.classes = j.at("classes").get<std::vector<std::string>>();
  for (const auto& [cls, stems] : j.at("expected").items())
    d.expected[cls] = stems.get<std::vector<std::string>>();
  for (const auto& e : j.at("duplicates")) d.duplicates.push_back(DuplicateEntry::from_json(e));
  for (const auto& e : j.at("off_modality"))
    d.off_modality.push_back(OffModalityEntry::from_json(e));
  for (const auto& e : j.at("mislabeled")) d.mislabeled.push_back(MislabelEntry::from_json(e));
  d.junk = j.at("junk").get<std::vector<std::string>>();
  for (const auto& e : j.at("perturbations"))
    d.perturbations.push_back(PerturbationEntry::from_json(e));
  return d;
}

Json ClientRecord::to_json() const {
  Json ds = Json::array();
  for (const auto& d : datasets) ds.push_back(d.to_json());
  return Json{{"client_id", client_id},
              {"modality", modality},
              {"eligible", eligible},
              {"datasets", ds}};
}

ClientRecord ClientRecord::from_json(const Json& j) {
  ClientRecord c;
  c.client_id = j.at("client_id").get<std::string>();
  c.modality = j.at("modality").get<std::string>();
  c.eligible = j.at("eligible").get<bool>();
  for (const auto& d : j.at("datasets")) c.datasets.push_back(DatasetRecord::from_json(d));
  return c;
}

const ClientRecord* GroundTruthManifest::find_client(const std::string& client_id) const {
  for (const auto& c : clients)
    if (c.client_id == client_id) return &c;
  return nullptr;
}

Json GroundTruthManifest::to_json() const {
  Json map = Json::object();
  for (const auto& [fine, coarse] : canonical_label_map) map[fine] = coarse;
  Json cl = Json::array();
  for (const auto& c : clients) cl.push_back(c.to_json());
  return Json{{"schema_version", schema_version},
              {"config", config},
              {"task", task},
              {"eligible_clients", eligible_clients},
              {"canonical_profile", canonical_profile.to_json()},
              {"canonical_label_map", map},
              {"suitable_algorithms", suitable_algorithms},
              {"clients", cl}};
}

GroundTruthManifest GroundTruthManifest::from_json(const Json& j) {
  GroundTruthManifest m;
  m.schema_version = j.at("schema_version").get<int>();
  if (m.schema_version != 1) throw HarnessError("unsupported manifest schema version");
  m.config = j.at("config");
  m.task = j.at("task");
  m.eligible_clients = j.at("eligible_clients").get<std::vector<std::string>>();
  m.canonical_profile = CanonicalProfile::from_json(j.at("canonical_profile"));
  for (const auto& [fine, coarse] : j.at("canonical_label_map").items())
    m.canonical_label_map[fine] = coarse.get<std::string>();
  m.suitable_algorithms = j.at("suitable_algorithms").get<std::vector<std::string>>();
  for (const auto& c : j.at("clients")) m.clients.push_back(ClientRecord::from_json(c));
  return m;
}

void GroundTruthManifest::save(const fs::path& path) const { save_json_file(path, to_json()); }

GroundTruthManifest GroundTruthManifest::load(const fs::path& path) {
  return from_json(load_json_file(path));
}

}  // namespace fedharness
