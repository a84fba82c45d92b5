#pragma once

#include <map>
#include <string>
#include <vector>

#include "fedharness/common.hpp"
#include "fedharness/modality.hpp"

namespace fedharness {

// Ledger entries name files by workspace-relative path at generation time
// plus the (class, stem) identity that survives restructuring, renaming on
// normalization, and harmonization moves.

struct DuplicateEntry {
  std::string path;         // the injected copy
  std::string cls;          // class the pair lives in
  std::string source_stem;  // stem of the kept original
  std::string stem;         // stem of the copy
  std::string hash;         // shared content hash, hex

  Json to_json() const;
  static DuplicateEntry from_json(const Json& j);
};

struct OffModalityEntry {
  std::string path;
  std::string cls;
  std::string stem;
  std::string modality;  // the foreign band the content was drawn from

  Json to_json() const;
  static OffModalityEntry from_json(const Json& j);
};

struct MislabelEntry {
  std::string path;  // current location, inside the wrong class
  std::string stem;
  std::string claimed_class;
  std::string true_class;

  Json to_json() const;
  static MislabelEntry from_json(const Json& j);
};

struct PerturbationEntry {
  std::string path;  // current location (extension follows current format)
  std::string cls;
  std::string stem;
  std::string kind;  // format | resolution | intensity
  std::string original_format = "pgm";
  std::string current_format = "pgm";
  int original_width = 0;
  int original_height = 0;
  int current_width = 0;
  int current_height = 0;
  double intensity_shift = 0.0;

  Json to_json() const;
  static PerturbationEntry from_json(const Json& j);
};

struct DatasetRecord {
  std::string name;
  std::string modality;
  std::string task_kind;
  bool flat_layout = false;
  std::vector<std::string> classes;
  // Clean surviving identities per class: these files, and only these, are
  // expected after preprocessing.
  std::map<std::string, std::vector<std::string>> expected;
  std::vector<DuplicateEntry> duplicates;
  std::vector<OffModalityEntry> off_modality;
  std::vector<MislabelEntry> mislabeled;
  std::vector<std::string> junk;
  std::vector<PerturbationEntry> perturbations;

  std::size_t expected_total() const;
  Json to_json() const;
  static DatasetRecord from_json(const Json& j);
};

struct ClientRecord {
  std::string client_id;
  std::string modality;
  bool eligible = false;
  std::vector<DatasetRecord> datasets;

  Json to_json() const;
  static ClientRecord from_json(const Json& j);
};

struct GroundTruthManifest {
  int schema_version = 1;
  Json config;  // generation config echo
  Json task;    // task spec echo
  std::vector<std::string> eligible_clients;
  CanonicalProfile canonical_profile;
  std::map<std::string, std::string> canonical_label_map;
  std::vector<std::string> suitable_algorithms;
  std::vector<ClientRecord> clients;

  const ClientRecord* find_client(const std::string& client_id) const;

  Json to_json() const;
  static GroundTruthManifest from_json(const Json& j);
  void save(const fs::path& path) const;
  static GroundTruthManifest load(const fs::path& path);
};

}  // namespace fedharness
