#include "fedharness/toolkit.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <map>
#include <set>

#include "fedharness/envgen.hpp"
#include "fedharness/fedcore.hpp"
#include "fedharness/image.hpp"
#include "fedharness/modality.hpp"
#include "fedharness/registry.hpp"

namespace fedharness {

namespace {

constexpr std::size_t kListPageSize = 500;
constexpr int kDefaultReadBytes = 4096;
constexpr int kMaxReadBytes = 65536;

std::string role_kind_name(Role r) {
  switch (r) {
    case Role::User: return "user";
    case Role::S1: return "S1";
    case Role::S2: return "S2";
    case Role::S3: return "S3";
    case Role::S4: return "S4";
    case Role::C1: return "C1";
    case Role::C2: return "C2";
    case Role::C3: return "C3";
  }
  return "user";
}

const std::vector<ToolSpec>& specs_table() {
  static const std::vector<ToolSpec> specs = {
      {"list_dir",
       {"C1", "C2", "C3"},
       {{"path", "string", true}, {"page", "int", false}},
       "List a directory: entries with kinds and sizes, paginated past 500"},
      {"read_datacard",
       {"C1"},
       {{"client", "string", true}},
       "Read a client's datacard"},
      {"read_text_file",
       {"C1", "C2", "C3"},
       {{"path", "string", true}, {"max_bytes", "int", false}},
       "Read a text file, truncated to max_bytes; refuses binary content"},
      {"stat_dataset",
       {"C2", "C3"},
       {{"dataset", "string", true}},
       "Per-class file counts plus extension and resolution histograms"},
      {"hash_files",
       {"C2"},
       {{"dataset", "string", true}},
       "Content hash for every file under a dataset"},
      {"detect_duplicates",
       {"C2"},
       {{"dataset", "string", true}},
       "Groups of byte-identical files"},
      {"detect_outliers",
       {"C2"},
       {{"dataset", "string", true}},
       "Off-modality files by intensity band; suspect labels by pattern centroid distance"},
      {"remove_files",
       {"C2"},
       {{"paths", "string_array", true}},
       "Delete the listed files; refuses if any is missing or not a file"},
      {"move_file",
       {"C2", "C3"},
       {{"src", "string", true}, {"dst", "string", true}},
       "Move one file; destination must not exist"},
      {"make_dir",
       {"C2", "C3"},
       {{"path", "string", true}},
       "Create a directory (and parents); no-op when it exists"},
      {"restructure_by_class",
       {"C2"},
       {{"dataset", "string", true}, {"plan", "string_map", false}},
       "Move flat class__name files into per-class folders"},
      {"normalize_images",
       {"C2"},
       {{"dataset", "string", true},
        {"format", "string", false},
        {"width", "int", false},
        {"height", "int", false},
        {"mean", "number", false},
        {"std", "number", false}},
       "Rewrite images onto the target profile; conforming files are untouched"},
      {"enumerate_labels",
       {"C3"},
       {{"dataset", "string", true}},
       "Distinct class names present in a dataset"},
      {"apply_label_mapping",
       {"C3"},
       {{"dataset", "string", true}, {"mapping", "string_map", true}},
       "Regroup files from fine-label folders into mapped coarse folders"},
      {"query_algorithm_registry",
       {"S3"},
       {{"filter", "string", false}},
       "Registry entries matching a text filter, with a suggested shortlist"},
      {"launch_training",
       {"S4"},
       {{"config", "object", true}, {"clients", "string_array", true}},
       "Validate the config, build shards over the trainer channel, run training"},
  };
  return specs;
}

std::string validate_args(const ToolSpec& spec, const Json& args) {
  if (!args.is_object()) return "arguments must be an object";
  for (const auto& [key, value] : args.items()) {
    const ToolArgSpec* arg = nullptr;
    for (const auto& a : spec.args)
      if (a.name == key) arg = &a;
    if (!arg) return "unexpected argument '" + key + "'";
    bool ok = true;
    if (arg->type == "string") ok = value.is_string();
    else if (arg->type == "int") ok = value.is_number_integer();
    else if (arg->type == "number") ok = value.is_number();
    else if (arg->type == "bool") ok = value.is_boolean();
    else if (arg->type == "object") ok = value.is_object();
    else if (arg->type == "string_array") {
      ok = value.is_array();
      if (ok)
        for (const auto& v : value) ok = ok && v.is_string();
    } else if (arg->type == "string_map") {
      ok = value.is_object();
      if (ok)
        for (const auto& [k, v] : value.items()) ok = ok && v.is_string();
    }
    if (!ok) return "argument '" + key + "' must be a " + arg->type;
  }
  for (const auto& a : spec.args)
    if (a.required && !args.contains(a.name)) return "missing argument '" + a.name + "'";
  return {};
}

// Mean-centered 4x4 block means; invariant to the class-preserving
// perturbations (intensity shift, integer rescale, container change).
std::vector<double> pattern_signature(const Image& img) {
  Image sig = box_downscale(img, img.width / 4);
  std::vector<double> v(16);
  double mean = 0.0;
  for (int i = 0; i < 16; ++i) {
    v[static_cast<std::size_t>(i)] = sig.pixels[static_cast<std::size_t>(i)];
    mean += v[static_cast<std::size_t>(i)];
  }
  mean /= 16.0;
  for (auto& x : v) x -= mean;
  return v;
}

bool signature_eligible(const Image& img) {
  return img.width == img.height && img.width >= 4 && img.width % 4 == 0;
}

double sq_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

// Class claimed by a file: its folder inside the dataset, else a flat
// "class__name" prefix, else empty.
std::string claimed_class(const fs::path& dataset, const fs::path& file) {
  if (file.parent_path() != dataset) {
    fs::path rel = file.lexically_relative(dataset);
    return rel.begin()->string();
  }
  const std::string name = file.filename().string();
  auto pos = name.find("__");
  if (pos != std::string::npos && pos > 0) return name.substr(0, pos);
  return {};
}

}  // namespace

Json ToolResult::to_json() const {
  Json j{{"ok", ok}, {"summary", summary}, {"data", data}};
  if (!ok) j["error_kind"] = error_kind;
  return j;
}

ToolResult ToolResult::failure(const std::string& kind, const std::string& text) {
  ToolResult r;
  r.ok = false;
  r.error_kind = kind;
  r.summary = text;
  return r;
}

const std::vector<ToolSpec>& tool_specs() { return specs_table(); }

const ToolSpec* find_tool(const std::string& name) {
  for (const auto& s : specs_table())
    if (s.name == name) return &s;
  return nullptr;
}

bool tool_assigned_to(const ToolSpec& spec, Role role) {
  const std::string kind = role_kind_name(role);
  return std::find(spec.roles.begin(), spec.roles.end(), kind) != spec.roles.end();
}

Json tool_manifest_json() {
  Json tools = Json::array();
  for (const auto& s : specs_table()) {
    Json args = Json::array();
    for (const auto& a : s.args)
      args.push_back(Json{{"name", a.name}, {"type", a.type}, {"required", a.required}});
    tools.push_back(Json{{"name", s.name},
                         {"roles", s.roles},
                         {"arguments", args},
                         {"description", s.description}});
  }
  return Json{{"schema_version", 1}, {"tools", tools}};
}

Json ChangeRecord::to_json() const {
  return Json{{"seq", seq}, {"tool", tool}, {"role", role}, {"op", op}};
}

ChangeRecord ChangeRecord::from_json(const Json& j) {
  ChangeRecord r;
  r.seq = j.at("seq").get<std::uint64_t>();
  r.tool = j.at("tool").get<std::string>();
  r.role = j.at("role").get<std::string>();
  r.op = j.at("op");
  return r;
}

void ChangeLog::open(const fs::path& path) {
  path_ = path;
  std::string text;
  for (const auto& r : records_) text += r.to_json().dump() + "\n";
  write_file_text(path_, text);
}

void ChangeLog::append(const std::string& tool, const std::string& role, Json op) {
  std::lock_guard<std::mutex> lock(mu_);
  ChangeRecord rec;
  rec.seq = records_.size() + 1;
  rec.tool = tool;
  rec.role = role;
  rec.op = std::move(op);
  records_.push_back(rec);
  if (!path_.empty()) {
    std::ofstream out(path_, std::ios::app | std::ios::binary);
    out << records_.back().to_json().dump() << "\n";
  }
}

std::vector<ChangeRecord> ChangeLog::load(const fs::path& path) {
  std::vector<ChangeRecord> out;
  const std::string text = read_file_text(path);
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string::npos) nl = text.size();
    const std::string line = text.substr(pos, nl - pos);
    pos = nl + 1;
    if (line.empty()) continue;
    out.push_back(ChangeRecord::from_json(Json::parse(line)));
  }
  return out;
}

namespace {

void apply_train_op(const fs::path& root, const Json& op, TraceLog* trace) {
  TrainingConfig cfg = TrainingConfig::from_json(op.at("config"));
  const auto clients = op.at("clients").get<std::vector<std::string>>();
  const auto labels = op.at("labels").get<std::vector<std::string>>();
  std::vector<std::string> warnings;
  auto shards = load_client_shards(root, clients, labels, cfg.model, &warnings);
  auto result = run_federated_training(cfg, shards, trace);
  Json log{{"run_id", op.at("run_id")},
           {"config", cfg.to_json()},
           {"clients", clients},
           {"labels", labels},
           {"loader_warnings", warnings},
           {"result", result.summary_json()}};
  fs::create_directories(root / "server");
  save_json_file(root / "server" / "training_log.json", log);
  save_checkpoint(root / "server" / "model_final.bin", result.layout, result.theta);
}

}  // namespace

void apply_change_op(const fs::path& root, const Json& op) {
  const std::string kind = op.at("op").get<std::string>();
  if (kind == "remove") {
    const fs::path path = root / op.at("path").get<std::string>();
    if (!fs::is_regular_file(path)) throw HarnessError("replay: missing file " + path.string());
    fs::remove(path);
  } else if (kind == "move") {
    const fs::path from = root / op.at("from").get<std::string>();
    const fs::path to = root / op.at("to").get<std::string>();
    if (!fs::is_regular_file(from)) throw HarnessError("replay: missing file " + from.string());
    if (fs::exists(to)) throw HarnessError("replay: destination exists " + to.string());
    fs::create_directories(to.parent_path());
    fs::rename(from, to);
  } else if (kind == "mkdir") {
    fs::create_directories(root / op.at("path").get<std::string>());
  } else if (kind == "rmdir") {
    const fs::path path = root / op.at("path").get<std::string>();
    if (!fs::is_directory(path)) throw HarnessError("replay: missing directory " + path.string());
    if (!fs::is_empty(path)) throw HarnessError("replay: directory not empty " + path.string());
    fs::remove(path);
  } else if (kind == "normalize") {
    const fs::path from = root / op.at("from").get<std::string>();
    const fs::path to = root / op.at("to").get<std::string>();
    auto img = decode_image_file(from);
    if (!img) throw HarnessError("replay: undecodable image " + from.string());
    auto fmt = format_from_name(op.at("format").get<std::string>());
    if (!fmt) throw HarnessError("replay: unknown format in record");
    Image result = resize_to(*img, op.at("width").get<int>(), op.at("height").get<int>());
    result = remap_intensity(result, op.at("mean").get<double>(), op.at("std").get<double>());
    write_image_file(to, result, *fmt);
    if (from != to) fs::remove(from);
  } else if (kind == "train") {
    apply_train_op(root, op, nullptr);
  } else {
    throw HarnessError("replay: unknown op '" + kind + "'");
  }
}

void replay_change_log(const fs::path& root, const std::vector<ChangeRecord>& records) {
  for (const auto& r : records) apply_change_op(root, r.op);
}

// The root must be absolute: confinement checks prefix-compare resolved
// paths, and a relative root would re-prefix on every check.
Toolkit::Toolkit(fs::path workspace_root, TraceLog* trace, ChangeLog* changes)
    : root_(fs::absolute(workspace_root).lexically_normal()),
      trace_(trace),
      changes_(changes) {}

ToolResult Toolkit::invoke(const ToolCall& call) {
  if (trace_)
    trace_->record("tool_call", Json{{"role", call.caller.str()},
                                     {"tool", call.tool_name},
                                     {"arguments", call.arguments}});
  ToolResult result;
  const ToolSpec* spec = find_tool(call.tool_name);
  if (!spec) {
    result = ToolResult::failure("unknown_tool", "no tool named '" + call.tool_name + "'");
  } else if (!tool_assigned_to(*spec, call.caller.kind)) {
    result = ToolResult::failure(
        "role_not_assigned", call.caller.str() + " is not assigned tool " + call.tool_name);
  } else {
    const std::string schema_error = validate_args(*spec, call.arguments);
    if (!schema_error.empty()) {
      result = ToolResult::failure("schema_violation", schema_error);
    } else {
      try {
        result = dispatch(call, WorkspaceView::for_role(call.caller, root_));
      } catch (const std::exception& e) {
        result = ToolResult::failure("execution_error", e.what());
      }
    }
  }
  if (trace_)
    trace_->record("tool_result", Json{{"role", call.caller.str()},
                                       {"tool", call.tool_name},
                                       {"ok", result.ok},
                                       {"error_kind", result.error_kind},
                                       {"summary", result.summary}});
  return result;
}

ToolResult Toolkit::dispatch(const ToolCall& call, const WorkspaceView& view) {
  const Json& args = call.arguments;
  const std::string& tool = call.tool_name;
  auto rel_str = [&](const fs::path& abs) {
    return abs.lexically_relative(root_).generic_string();
  };
  auto resolve_checked = [&](const std::string& rel, AccessMode mode,
                             fs::path& abs) -> std::string {
    abs = resolve_in_workspace(root_, rel);
    if (!check_access(view, abs, mode, trace_)) return "access denied: " + rel;
    return {};
  };
  // Apply first, append on success: the log must never hold an op whose
  // application failed, or replay would diverge.
  auto record = [&](Json op) {
    apply_change_op(root_, op);
    if (changes_) changes_->append(tool, call.caller.str(), op);
  };

  ToolResult r;
  r.ok = true;

  if (tool == "list_dir") {
    fs::path dir;
    if (auto err = resolve_checked(args.at("path").get<std::string>(), AccessMode::Read, dir);
        !err.empty())
      return ToolResult::failure("access_denied", err);
    if (!fs::is_directory(dir))
      return ToolResult::failure("missing_path", "not a directory: " + args.at("path").get<std::string>());
    const int page = args.value("page", 0);
    if (page < 0) return ToolResult::failure("schema_violation", "page must be >= 0");
    auto entries = sorted_dir_entries(dir);
    const std::size_t total = entries.size();
    const std::size_t pages = std::max<std::size_t>(1, (total + kListPageSize - 1) / kListPageSize);
    Json listed = Json::array();
    const std::size_t begin = static_cast<std::size_t>(page) * kListPageSize;
    for (std::size_t i = begin; i < std::min(total, begin + kListPageSize); ++i) {
      const bool is_dir = fs::is_directory(entries[i]);
      Json entry{{"name", entries[i].filename().string()}, {"kind", is_dir ? "dir" : "file"}};
      if (!is_dir) entry["size"] = static_cast<std::uint64_t>(fs::file_size(entries[i]));
      listed.push_back(std::move(entry));
    }
    r.data = Json{{"entries", listed}, {"page", page}, {"pages", pages}, {"total", total}};
    r.summary = std::to_string(total) + " entries (page " + std::to_string(page) + "/" +
                std::to_string(pages - 1) + ")";
    return r;
  }

  if (tool == "read_datacard") {
    const std::string client = args.at("client").get<std::string>();
    fs::path path;
    if (auto err = resolve_checked("clients/" + client + "/datacard.json", AccessMode::Read, path);
        !err.empty())
      return ToolResult::failure("access_denied", err);
    if (!fs::is_regular_file(path))
      return ToolResult::failure("missing_path", "no datacard for client " + client);
    r.data = load_json_file(path);
    r.summary = "datacard for " + client;
    return r;
  }

  if (tool == "read_text_file") {
    fs::path path;
    if (auto err = resolve_checked(args.at("path").get<std::string>(), AccessMode::Read, path);
        !err.empty())
      return ToolResult::failure("access_denied", err);
    if (!fs::is_regular_file(path))
      return ToolResult::failure("missing_path", "no file: " + args.at("path").get<std::string>());
    int max_bytes = args.value("max_bytes", kDefaultReadBytes);
    max_bytes = std::clamp(max_bytes, 1, kMaxReadBytes);
    const std::string bytes = read_file_text(path);
    if (contains_image_magic(bytes))
      return ToolResult::failure("not_text", "file holds image data");
    for (unsigned char c : bytes)
      if (c < 0x09 || (c > 0x0d && c < 0x20))
        return ToolResult::failure("not_text", "file holds binary data");
    const bool truncated = bytes.size() > static_cast<std::size_t>(max_bytes);
    r.data = Json{{"text", truncated ? bytes.substr(0, static_cast<std::size_t>(max_bytes)) : bytes},
                  {"truncated", truncated},
                  {"size", bytes.size()}};
    r.summary = "read " + std::to_string(std::min<std::size_t>(bytes.size(),
                                                               static_cast<std::size_t>(max_bytes))) +
                " bytes";
    return r;
  }

  if (tool == "stat_dataset") {
    fs::path dataset;
    if (auto err = resolve_checked(args.at("dataset").get<std::string>(), AccessMode::Read, dataset);
        !err.empty())
      return ToolResult::failure("access_denied", err);
    if (!fs::is_directory(dataset))
      return ToolResult::failure("missing_path", "not a directory: " + args.at("dataset").get<std::string>());
    std::map<std::string, int> classes;
    std::map<std::string, int> extensions;
    std::map<std::string, int> resolutions;
    int unreadable = 0;
    auto files = sorted_recursive_files(dataset);
    for (const auto& f : files) {
      extensions[lowercase(f.extension().string())]++;
      std::string cls = claimed_class(dataset, f);
      classes[cls.empty() ? "(unclassified)" : cls]++;
      if (is_image_extension(lowercase(f.extension().string()))) {
        auto img = decode_image_file(f);
        if (img)
          resolutions[std::to_string(img->width) + "x" + std::to_string(img->height)]++;
        else
          ++unreadable;
      }
    }
    r.data = Json{{"files", files.size()},
                  {"classes", classes},
                  {"extensions", extensions},
                  {"resolutions", resolutions},
                  {"unreadable_images", unreadable}};
    r.summary = std::to_string(files.size()) + " files across " +
                std::to_string(classes.size()) + " classes";
    return r;
  }

  if (tool == "hash_files") {
    fs::path dataset;
    if (auto err = resolve_checked(args.at("dataset").get<std::string>(), AccessMode::Read, dataset);
        !err.empty())
      return ToolResult::failure("access_denied", err);
    if (!fs::is_directory(dataset))
      return ToolResult::failure("missing_path", "not a directory: " + args.at("dataset").get<std::string>());
    Json hashes = Json::object();
    auto files = sorted_recursive_files(dataset);
    for (const auto& f : files) hashes[rel_str(f)] = hex64(hash_file(f));
    r.data = Json{{"hashes", hashes}, {"count", files.size()}};
    r.summary = "hashed " + std::to_string(files.size()) + " files";
    return r;
  }

  if (tool == "detect_duplicates") {
    fs::path dataset;
    if (auto err = resolve_checked(args.at("dataset").get<std::string>(), AccessMode::Read, dataset);
        !err.empty())
      return ToolResult::failure("access_denied", err);
    if (!fs::is_directory(dataset))
      return ToolResult::failure("missing_path", "not a directory: " + args.at("dataset").get<std::string>());
    std::map<std::uint64_t, std::vector<std::string>> by_hash;
    for (const auto& f : sorted_recursive_files(dataset))
      by_hash[hash_file(f)].push_back(rel_str(f));
    std::vector<std::vector<std::string>> groups;
    for (auto& [h, paths] : by_hash)
      if (paths.size() >= 2) groups.push_back(paths);  // paths already sorted
    std::sort(groups.begin(), groups.end());
    r.data = Json{{"groups", groups}, {"count", groups.size()}};
    r.summary = std::to_string(groups.size()) + " duplicate groups";
    return r;
  }

  if (tool == "detect_outliers") {
    fs::path dataset;
    if (auto err = resolve_checked(args.at("dataset").get<std::string>(), AccessMode::Read, dataset);
        !err.empty())
      return ToolResult::failure("access_denied", err);
    if (!fs::is_directory(dataset))
      return ToolResult::failure("missing_path", "not a directory: " + args.at("dataset").get<std::string>());
    struct Entry {
      std::string rel;
      std::string claimed;
      Modality band;
      std::vector<double> sig;
      bool has_sig = false;
    };
    std::vector<Entry> items;
    for (const auto& f : sorted_recursive_files(dataset)) {
      auto img = decode_image_file(f);
      if (!img) continue;
      Entry e;
      e.rel = rel_str(f);
      e.claimed = claimed_class(dataset, f);
      e.band = nearest_modality(image_mean_std(*img).first);
      if (signature_eligible(*img)) {
        e.sig = pattern_signature(*img);
        e.has_sig = true;
      }
      items.push_back(std::move(e));
    }
    std::map<Modality, int> band_votes;
    for (const auto& e : items) band_votes[e.band]++;
    Modality majority = Modality::Dermatoscopy;
    int best = -1;
    for (const auto& [band, votes] : band_votes)
      if (votes > best) {
        majority = band;
        best = votes;
      }
    std::vector<std::string> off_modality;
    for (const auto& e : items)
      if (e.band != majority) off_modality.push_back(e.rel);

    // centroids over in-band files grouped by the class they claim
    std::map<std::string, std::vector<double>> centroid;
    std::map<std::string, int> members;
    for (const auto& e : items) {
      if (e.band != majority || !e.has_sig || e.claimed.empty()) continue;
      auto& c = centroid[e.claimed];
      if (c.empty()) c.assign(16, 0.0);
      for (std::size_t i = 0; i < 16; ++i) c[i] += e.sig[i];
      members[e.claimed]++;
    }
    for (auto& [cls, c] : centroid)
      for (auto& v : c) v /= members[cls];
    std::vector<std::string> suspects;
    for (const auto& e : items) {
      if (centroid.size() < 2) break;
      if (e.band != majority || !e.has_sig || e.claimed.empty()) continue;
      const double own = sq_distance(e.sig, centroid[e.claimed]);
      double other = std::numeric_limits<double>::max();
      for (const auto& [cls, c] : centroid)
        if (cls != e.claimed) other = std::min(other, sq_distance(e.sig, c));
      // flagged iff strictly closer to a different class centroid
      if (other < own) suspects.push_back(e.rel);
    }
    r.data = Json{{"off_modality", off_modality}, {"suspect_labels", suspects}};
    r.summary = std::to_string(off_modality.size()) + " off-modality, " +
                std::to_string(suspects.size()) + " suspect labels";
    return r;
  }

  if (tool == "remove_files") {
    const auto rels = args.at("paths").get<std::vector<std::string>>();
    if (rels.empty()) return ToolResult::failure("schema_violation", "paths is empty");
    std::vector<fs::path> targets;
    std::set<fs::path> seen;
    for (const auto& rel : rels) {
      fs::path abs;
      if (auto err = resolve_checked(rel, AccessMode::Write, abs); !err.empty())
        return ToolResult::failure("access_denied", err);
      if (!seen.insert(abs).second)
        return ToolResult::failure("schema_violation", "duplicate path: " + rel);
      if (!fs::exists(abs)) return ToolResult::failure("missing_path", "no file: " + rel);
      if (!fs::is_regular_file(abs))
        return ToolResult::failure("execution_error", "not a file: " + rel);
      targets.push_back(abs);
    }
    Json removed = Json::array();
    for (const auto& abs : targets) {
      record(Json{{"op", "remove"}, {"path", rel_str(abs)}});
      removed.push_back(rel_str(abs));
    }
    r.data = Json{{"removed", removed}, {"count", targets.size()}};
    r.summary = "removed " + std::to_string(targets.size()) + " files";
    return r;
  }

  if (tool == "move_file") {
    fs::path src, dst;
    if (auto err = resolve_checked(args.at("src").get<std::string>(), AccessMode::Write, src);
        !err.empty())
      return ToolResult::failure("access_denied", err);
    if (auto err = resolve_checked(args.at("dst").get<std::string>(), AccessMode::Write, dst);
        !err.empty())
      return ToolResult::failure("access_denied", err);
    if (!fs::is_regular_file(src))
      return ToolResult::failure("missing_path", "no file: " + args.at("src").get<std::string>());
    if (fs::exists(dst))
      return ToolResult::failure("execution_error",
                                 "destination exists: " + args.at("dst").get<std::string>());
    record(Json{{"op", "move"}, {"from", rel_str(src)}, {"to", rel_str(dst)}});
    r.data = Json{{"from", rel_str(src)}, {"to", rel_str(dst)}};
    r.summary = "moved 1 file";
    return r;
  }

  if (tool == "make_dir") {
    fs::path dir;
    if (auto err = resolve_checked(args.at("path").get<std::string>(), AccessMode::Write, dir);
        !err.empty())
      return ToolResult::failure("access_denied", err);
    if (fs::exists(dir) && !fs::is_directory(dir))
      return ToolResult::failure("execution_error", "exists and is not a directory");
    const bool created = !fs::exists(dir);
    if (created) record(Json{{"op", "mkdir"}, {"path", rel_str(dir)}});
    r.data = Json{{"path", rel_str(dir)}, {"created", created}};
    r.summary = created ? "created directory" : "directory already present";
    return r;
  }

  if (tool == "restructure_by_class") {
    fs::path dataset;
    if (auto err = resolve_checked(args.at("dataset").get<std::string>(), AccessMode::Write, dataset);
        !err.empty())
      return ToolResult::failure("access_denied", err);
    if (!fs::is_directory(dataset))
      return ToolResult::failure("missing_path", "not a directory: " + args.at("dataset").get<std::string>());
    std::map<std::string, std::string> plan;
    if (args.contains("plan"))
      plan = args.at("plan").get<std::map<std::string, std::string>>();
    int moved = 0, skipped = 0;
    for (const auto& f : sorted_dir_entries(dataset)) {
      if (!fs::is_regular_file(f)) continue;
      const std::string name = f.filename().string();
      const auto pos = name.find("__");
      if (pos == std::string::npos || pos == 0) continue;
      const std::string cls = name.substr(0, pos);
      const std::string rest = name.substr(pos + 2);
      std::string folder = cls;
      if (!plan.empty()) {
        auto it = plan.find(cls);
        if (it == plan.end()) {
          ++skipped;
          continue;
        }
        folder = it->second;
      }
      const fs::path to = dataset / folder / rest;
      if (fs::exists(to)) {
        ++skipped;
        continue;
      }
      record(Json{{"op", "move"}, {"from", rel_str(f)}, {"to", rel_str(to)}});
      ++moved;
    }
    r.data = Json{{"moved", moved}, {"skipped", skipped}};
    r.summary = "moved " + std::to_string(moved) + " flat files into class folders";
    return r;
  }

  if (tool == "normalize_images") {
    fs::path dataset;
    if (auto err = resolve_checked(args.at("dataset").get<std::string>(), AccessMode::Write, dataset);
        !err.empty())
      return ToolResult::failure("access_denied", err);
    if (!fs::is_directory(dataset))
      return ToolResult::failure("missing_path", "not a directory: " + args.at("dataset").get<std::string>());
    CanonicalProfile profile;
    bool have_default = false;
    if (call.caller.is_client()) {
      const fs::path card_path = root_ / "clients" / call.caller.client_id / "datacard.json";
      if (fs::is_regular_file(card_path)) {
        try {
          auto card = DataCard::from_json(load_json_file(card_path));
          if (!card.datasets.empty()) {
            if (auto m = modality_from_name(card.datasets.front().modality)) {
              profile = canonical_profile(*m);
              have_default = true;
            }
          }
        } catch (const std::exception&) {
        }
      }
    }
    if (args.contains("format")) profile.format = args.at("format").get<std::string>();
    if (args.contains("width")) profile.width = args.at("width").get<int>();
    if (args.contains("height")) profile.height = args.at("height").get<int>();
    if (args.contains("mean")) profile.mean = args.at("mean").get<double>();
    if (args.contains("std")) profile.stddev = args.at("std").get<double>();
    if (!have_default &&
        !(args.contains("format") && args.contains("width") && args.contains("height") &&
          args.contains("mean") && args.contains("std")))
      return ToolResult::failure("schema_violation",
                                 "no datacard default; pass format, width, height, mean, std");
    auto fmt = format_from_name(profile.format);
    if (!fmt) return ToolResult::failure("schema_violation", "unknown format '" + profile.format + "'");

    int rewritten = 0, skipped = 0, unreadable = 0;
    Json files = Json::array();
    for (const auto& f : sorted_recursive_files(dataset)) {
      if (!is_image_extension(lowercase(f.extension().string()))) continue;
      const auto bytes = read_file_bytes(f);
      auto sniffed = sniff_format(bytes);
      auto img = decode_image(bytes);
      if (!sniffed || !img) {
        ++unreadable;
        continue;
      }
      const bool ext_ok = lowercase(f.extension().string()) == format_extension(*fmt);
      if (ext_ok && image_conforms(*img, *sniffed, profile)) {
        ++skipped;
        continue;
      }
      const fs::path to = f.parent_path() / (f.stem().string() + format_extension(*fmt));
      if (to != f && fs::exists(to)) {
        ++skipped;
        continue;
      }
      try {
        record(Json{{"op", "normalize"},
                    {"from", rel_str(f)},
                    {"to", rel_str(to)},
                    {"format", profile.format},
                    {"width", profile.width},
                    {"height", profile.height},
                    {"mean", profile.mean},
                    {"std", profile.stddev}});
      } catch (const HarnessError&) {
        ++unreadable;  // non-integer resize factor or encode failure
        continue;
      }
      files.push_back(rel_str(to));
      ++rewritten;
    }
    r.data = Json{{"rewritten", rewritten},
                  {"skipped", skipped},
                  {"unreadable", unreadable},
                  {"files", files},
                  {"profile", profile.to_json()}};
    r.summary = "rewrote " + std::to_string(rewritten) + " images, " +
                std::to_string(skipped) + " already conforming";
    return r;
  }

  if (tool == "enumerate_labels") {
    fs::path dataset;
    if (auto err = resolve_checked(args.at("dataset").get<std::string>(), AccessMode::Read, dataset);
        !err.empty())
      return ToolResult::failure("access_denied", err);
    if (!fs::is_directory(dataset))
      return ToolResult::failure("missing_path", "not a directory: " + args.at("dataset").get<std::string>());
    std::set<std::string> labels;
    for (const auto& e : sorted_dir_entries(dataset)) {
      if (fs::is_directory(e)) {
        labels.insert(e.filename().string());
      } else {
        const std::string name = e.filename().string();
        const auto pos = name.find("__");
        if (pos != std::string::npos && pos > 0) labels.insert(name.substr(0, pos));
      }
    }
    r.data = Json{{"labels", std::vector<std::string>(labels.begin(), labels.end())}};
    r.summary = std::to_string(labels.size()) + " labels";
    return r;
  }

  if (tool == "apply_label_mapping") {
    fs::path dataset;
    if (auto err = resolve_checked(args.at("dataset").get<std::string>(), AccessMode::Write, dataset);
        !err.empty())
      return ToolResult::failure("access_denied", err);
    if (!fs::is_directory(dataset))
      return ToolResult::failure("missing_path", "not a directory: " + args.at("dataset").get<std::string>());
    const auto mapping = args.at("mapping").get<std::map<std::string, std::string>>();
    if (mapping.empty()) return ToolResult::failure("schema_violation", "mapping is empty");
    int moved = 0, removed_dirs = 0;
    std::vector<std::string> unmapped;
    // flat files first: fine__name at the dataset root
    for (const auto& f : sorted_dir_entries(dataset)) {
      if (!fs::is_regular_file(f)) continue;
      const std::string name = f.filename().string();
      const auto pos = name.find("__");
      if (pos == std::string::npos || pos == 0) continue;
      auto it = mapping.find(name.substr(0, pos));
      if (it == mapping.end()) continue;
      const fs::path to = dataset / it->second / name;
      if (fs::exists(to)) continue;
      record(Json{{"op", "move"}, {"from", rel_str(f)}, {"to", rel_str(to)}});
      ++moved;
    }
    for (const auto& dir : sorted_dir_entries(dataset)) {
      if (!fs::is_directory(dir)) continue;
      const std::string fine = dir.filename().string();
      auto it = mapping.find(fine);
      if (it == mapping.end()) {
        bool is_target = false;
        for (const auto& [k, v] : mapping) is_target = is_target || v == fine;
        if (!is_target) unmapped.push_back(fine);
        continue;
      }
      for (const auto& f : sorted_dir_entries(dir)) {
        if (!fs::is_regular_file(f)) continue;
        const fs::path to = dataset / it->second / (fine + "__" + f.filename().string());
        if (fs::exists(to)) continue;
        record(Json{{"op", "move"}, {"from", rel_str(f)}, {"to", rel_str(to)}});
        ++moved;
      }
      if (fs::is_empty(dir)) {
        record(Json{{"op", "rmdir"}, {"path", rel_str(dir)}});
        ++removed_dirs;
      }
    }
    r.data = Json{{"moved", moved}, {"removed_dirs", removed_dirs}, {"unmapped", unmapped}};
    r.summary = "regrouped " + std::to_string(moved) + " files under " +
                std::to_string(mapping.size()) + " mapping entries";
    return r;
  }

  if (tool == "query_algorithm_registry") {
    const std::string filter = args.value("filter", std::string{});
    const std::string needle = lowercase(filter);
    const auto tags = extract_preference_tags(filter);
    Json matches = Json::array();
    for (const auto& a : algorithm_registry()) {
      bool hit = needle.empty();
      if (!hit) {
        std::string haystack = lowercase(a.id + " " + a.name + " " + a.family + " " + a.description);
        for (const auto& t : a.tags) haystack += " " + t;
        hit = haystack.find(needle) != std::string::npos;
      }
      if (!hit && !tags.empty()) {
        hit = std::all_of(tags.begin(), tags.end(), [&](const std::string& t) {
          return std::find(a.tags.begin(), a.tags.end(), t) != a.tags.end();
        });
      }
      if (hit) matches.push_back(a.to_json());
    }
    r.data = Json{{"algorithms", matches},
                  {"suggested", suitable_algorithm_ids(filter)},
                  {"count", matches.size()}};
    r.summary = std::to_string(matches.size()) + " registry entries match";
    return r;
  }

  if (tool == "launch_training") {
    Json flags{{"config_valid", false},
               {"initialized", false},
               {"start_signal_logged", false},
               {"run_id", ""}};
    TrainingConfig cfg;
    try {
      cfg = TrainingConfig::from_json(args.at("config"));
    } catch (const HarnessError& e) {
      ToolResult bad = ToolResult::failure("config_invalid", e.what());
      bad.data = flags;
      return bad;
    }
    const auto clients = args.at("clients").get<std::vector<std::string>>();
    if (clients.empty()) {
      ToolResult bad = ToolResult::failure("config_invalid", "clients list is empty");
      bad.data = flags;
      return bad;
    }
    TaskSpec task;
    try {
      task = TaskSpec::from_json(load_json_file(root_ / "task.json"));
    } catch (const std::exception& e) {
      ToolResult bad = ToolResult::failure("execution_error",
                                           std::string("cannot read task file: ") + e.what());
      bad.data = flags;
      return bad;
    }
    std::vector<std::string> labels = task.target_schema;
    std::sort(labels.begin(), labels.end());
    labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
    if (static_cast<int>(labels.size()) != cfg.model.num_classes) {
      ToolResult bad = ToolResult::failure(
          "config_invalid", "model declares " + std::to_string(cfg.model.num_classes) +
                                " classes but the task schema has " +
                                std::to_string(labels.size()));
      bad.data = flags;
      return bad;
    }
    flags["config_valid"] = true;
    const std::string run_id = hex64(fnv1a64(cfg.to_json().dump() + Json(clients).dump()));
    flags["run_id"] = run_id;

    std::vector<std::string> loader_warnings;
    auto shards = load_client_shards(root_, clients, labels, cfg.model, &loader_warnings);
    const bool any_data = std::any_of(shards.begin(), shards.end(),
                                      [](const DataShard& s) { return !s.train.empty(); });
    flags["initialized"] = any_data;
    if (!any_data) {
      ToolResult bad = ToolResult::failure("execution_error", "all client shards are empty");
      bad.data = flags;
      return bad;
    }

    Json op{{"op", "train"},
            {"run_id", run_id},
            {"config", cfg.to_json()},
            {"clients", clients},
            {"labels", labels}};
    try {
      apply_train_op(root_, op, trace_);
      if (changes_) changes_->append(tool, call.caller.str(), op);
    } catch (const std::exception& e) {
      ToolResult bad = ToolResult::failure("execution_error", e.what());
      bad.data = flags;
      return bad;
    }
    flags["start_signal_logged"] = true;
    const Json log = load_json_file(root_ / "server" / "training_log.json");
    const auto& summary = log.at("result");
    flags["rounds"] = cfg.rounds;
    if (summary.contains("final_global_accuracy"))
      flags["final_global_accuracy"] = summary.at("final_global_accuracy");
    r.data = flags;
    r.summary = "training finished: " + std::to_string(cfg.rounds) + " rounds of " + cfg.algorithm;
    return r;
  }

  return ToolResult::failure("unknown_tool", "no tool named '" + tool + "'");
}

}  // namespace fedharness
