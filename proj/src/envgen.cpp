#include "fedharness/envgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "fedharness/image.hpp"
#include "fedharness/registry.hpp"
#include "fedharness/rng.hpp"

namespace fedharness {

namespace {

std::string two_digits(int n) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%02d", n);
  return buf;
}

std::string image_stem(int n) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "img_%03d", n);
  return buf;
}

const std::vector<std::string>& junk_extensions() {
  static const std::vector<std::string> exts = {".txt", ".csv", ".pdf", ".xls",
                                                ".log", ".xml", ".ini"};
  return exts;
}

const std::vector<std::string>& junk_name_pool() {
  static const std::vector<std::string> names = {"notes",    "readme",   "backup",
                                                 "index",    "report",   "metadata",
                                                 "scan_log", "archive",  "inventory",
                                                 "changelog"};
  return names;
}

const std::vector<std::string>& junk_word_pool() {
  static const std::vector<std::string> words = {
      "acquisition", "archive",  "backlog", "calibration", "cohort",   "console",
      "export",      "intake",   "ledger",  "migration",   "protocol", "queue",
      "review",      "scanner",  "session", "transfer"};
  return words;
}

std::string junk_text(RngStream& rng) {
  const auto& words = junk_word_pool();
  int lines = rng.int_in(2, 5);
  std::string out;
  for (int l = 0; l < lines; ++l) {
    int n = rng.int_in(3, 6);
    for (int w = 0; w < n; ++w) {
      if (w) out += ' ';
      out += words[rng.below(words.size())];
    }
    out += '\n';
  }
  return out;
}

const std::vector<std::string>& preference_pool() {
  static const std::vector<std::string> prefs = {
      "",
      "baseline aggregation is fine",
      "personalization desired across sites",
      "non-IID robustness expected",
      "heterogeneous clients anticipated",
      "prefer stable convergence"};
  return prefs;
}

struct PendingFile {
  enum class Tag { Clean, DupCopy, OffModality, Mislabel, Junk };

  std::string claimed_class;  // folder or flat prefix; empty for root junk
  std::string stem;
  std::string ext = ".pgm";
  std::vector<std::uint8_t> bytes;
  Tag tag = Tag::Clean;
  std::string true_class;    // mislabel only
  std::string source_stem;   // duplicate copy only
  // perturbation record, meaningful when kind is non-empty
  std::string perturb_kind;
  std::string current_format = "pgm";
  int current_width = kCanvasSize;
  int current_height = kCanvasSize;
  double intensity_shift = 0.0;
};

std::string relative_file_path(const std::string& client_id, const std::string& dataset,
                               bool flat, const PendingFile& f) {
  std::string base = "clients/" + client_id + "/" + dataset + "/";
  if (flat) {
    if (f.claimed_class.empty()) return base + f.stem + f.ext;
    return base + f.claimed_class + "__" + f.stem + f.ext;
  }
  if (f.claimed_class.empty()) return base + f.stem + f.ext;
  return base + f.claimed_class + "/" + f.stem + f.ext;
}

DatasetRecord generate_dataset(const EnvironmentConfig& cfg, Modality ds_modality,
                               TaskKind ds_task_kind, const std::string& client_id,
                               const std::string& ds_name, const fs::path& root,
                               DataCardDataset& card) {
  RngStream rng(RngStream::derive(cfg.seed, "dataset/" + client_id + "/" + ds_name));
  const auto& info = modality_info(ds_modality);

  int want_classes = rng.int_in(cfg.classes_per_dataset.lo, cfg.classes_per_dataset.hi);
  int k = std::min<int>(want_classes, static_cast<int>(info.vocab.size()));
  auto picked = rng.sample_indices(info.vocab.size(), static_cast<std::size_t>(k));
  std::sort(picked.begin(), picked.end());

  std::vector<std::string> classes;
  for (auto idx : picked) classes.push_back(info.vocab[idx].fine);

  bool flat = rng.chance(cfg.flat_layout_probability);

  std::vector<PendingFile> files;
  std::map<std::string, int> clean_counts;
  int counter = 0;
  for (auto idx : picked) {
    const std::string& cls = info.vocab[idx].fine;
    int n = rng.int_in(cfg.samples_per_class.lo, cfg.samples_per_class.hi);
    clean_counts[cls] = n;
    for (int i = 0; i < n; ++i) {
      PendingFile f;
      f.claimed_class = cls;
      f.stem = image_stem(++counter);
      auto img = render_class_image(rng, ds_modality, static_cast<int>(idx));
      f.bytes = encode_image(img, ImageFormat::Pgm);
      files.push_back(std::move(f));
    }
  }

  // Pool of clean files still untouched by any corruption, as indices.
  std::vector<std::size_t> pool(files.size());
  for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
  rng.shuffle(pool);
  auto take = [&pool]() {
    std::size_t i = pool.back();
    pool.pop_back();
    return i;
  };

  DatasetRecord rec;
  rec.name = ds_name;
  rec.modality = info.name;
  rec.task_kind = task_kind_name(ds_task_kind);
  rec.flat_layout = flat;
  rec.classes = classes;

  // Duplicates: exact byte copies beside their source.
  int n_dup = rng.int_in(2, 5);
  for (int d = 0; d < n_dup; ++d) {
    std::size_t src = take();
    PendingFile copy = files[src];
    copy.tag = PendingFile::Tag::DupCopy;
    copy.source_stem = files[src].stem;
    copy.stem = files[src].stem + "_copy1";
    files.push_back(std::move(copy));
  }

  // Off-modality injections: fresh renders from a foreign band.
  int n_off = rng.int_in(2, 5);
  for (int o = 0; o < n_off; ++o) {
    std::size_t foreign_idx = rng.below(kModalityCount - 1);
    if (foreign_idx >= static_cast<std::size_t>(ds_modality)) ++foreign_idx;
    Modality foreign = static_cast<Modality>(foreign_idx);
    PendingFile f;
    f.tag = PendingFile::Tag::OffModality;
    f.claimed_class = classes[rng.below(classes.size())];
    f.stem = image_stem(++counter);
    auto img = render_class_image(rng, foreign, static_cast<int>(rng.below(16)));
    f.bytes = encode_image(img, ImageFormat::Pgm);
    files.push_back(std::move(f));
  }

  // Mislabels: move a clean file into a different existing class, keeping
  // at least two residents per donor class so centroids stay anchored.
  std::map<std::string, int> residents = clean_counts;
  int n_mis = rng.int_in(2, 5);
  {
    std::vector<std::size_t> accepted;
    std::vector<std::size_t> rest;
    for (std::size_t i = 0; i < pool.size() && static_cast<int>(accepted.size()) < n_mis; ++i) {
      std::size_t idx = pool[pool.size() - 1 - i];
      const std::string& cls = files[idx].claimed_class;
      if (residents[cls] <= 2) {
        rest.push_back(idx);
        continue;
      }
      residents[cls] -= 1;
      accepted.push_back(idx);
    }
    // Rebuild the pool without the accepted entries.
    std::vector<std::size_t> new_pool;
    std::size_t scanned = accepted.size() + rest.size();
    for (std::size_t i = 0; i + scanned < pool.size(); ++i) new_pool.push_back(pool[i]);
    for (auto idx : rest) new_pool.push_back(idx);
    pool = std::move(new_pool);

    for (auto idx : accepted) {
      PendingFile& f = files[idx];
      std::string target = f.claimed_class;
      while (target == f.claimed_class) target = classes[rng.below(classes.size())];
      f.true_class = f.claimed_class;
      f.claimed_class = target;
      f.tag = PendingFile::Tag::Mislabel;
    }
  }

  // Junk files, non-image extensions only.
  int n_junk = rng.int_in(2, 8);
  const auto& names = junk_name_pool();
  const auto& exts = junk_extensions();
  for (int jf = 0; jf < n_junk; ++jf) {
    PendingFile f;
    f.tag = PendingFile::Tag::Junk;
    f.claimed_class = flat ? "" : classes[rng.below(classes.size())];
    f.stem = names[rng.below(names.size())] + "_" + two_digits(jf + 1);
    f.ext = exts[rng.below(exts.size())];
    std::string text = junk_text(rng);
    f.bytes.assign(text.begin(), text.end());
    files.push_back(std::move(f));
  }

  // Format, resolution, and intensity perturbations over untouched files.
  int n_perturb = static_cast<int>(std::lround(cfg.perturbation_fraction *
                                               static_cast<double>(pool.size())));
  for (int p = 0; p < n_perturb; ++p) {
    PendingFile& f = files[take()];
    auto img = decode_image(f.bytes);
    int which = static_cast<int>(rng.below(3));
    if (which == 0) {
      ImageFormat variants[] = {ImageFormat::Sgb, ImageFormat::Sgt, ImageFormat::Sgj};
      ImageFormat target = variants[rng.below(3)];
      f.bytes = encode_image(*img, target);
      f.ext = format_extension(target);
      f.perturb_kind = "format";
      f.current_format = format_name(target);
    } else if (which == 1) {
      int factor = rng.chance(0.5) ? 2 : 4;
      auto small = box_downscale(*img, factor);
      f.bytes = encode_image(small, ImageFormat::Pgm);
      f.perturb_kind = "resolution";
      f.current_width = small.width;
      f.current_height = small.height;
    } else {
      double shift = info.mean <= 130.0 ? 12.0 : -12.0;
      Image shifted = *img;
      for (auto& px : shifted.pixels)
        px = static_cast<std::uint8_t>(
            std::clamp(std::lround(static_cast<double>(px) + shift), 0l, 255l));
      f.bytes = encode_image(shifted, ImageFormat::Pgm);
      f.perturb_kind = "intensity";
      f.intensity_shift = shift;
    }
  }

  // Materialize and fill the ledger.
  for (const auto& f : files) {
    std::string rel = relative_file_path(client_id, ds_name, flat, f);
    fs::path abs = root / fs::path(rel);
    fs::create_directories(abs.parent_path());
    write_file_bytes(abs, f.bytes.data(), f.bytes.size());

    switch (f.tag) {
      case PendingFile::Tag::Clean:
        rec.expected[f.claimed_class].push_back(f.stem);
        if (!f.perturb_kind.empty()) {
          PerturbationEntry e;
          e.path = rel;
          e.cls = f.claimed_class;
          e.stem = f.stem;
          e.kind = f.perturb_kind;
          e.current_format = f.current_format;
          e.original_width = kCanvasSize;
          e.original_height = kCanvasSize;
          e.current_width = f.current_width;
          e.current_height = f.current_height;
          e.intensity_shift = f.intensity_shift;
          rec.perturbations.push_back(std::move(e));
        }
        break;
      case PendingFile::Tag::DupCopy: {
        DuplicateEntry e;
        e.path = rel;
        e.cls = f.claimed_class;
        e.source_stem = f.source_stem;
        e.stem = f.stem;
        e.hash = hex64(fnv1a64(f.bytes.data(), f.bytes.size()));
        rec.duplicates.push_back(std::move(e));
        break;
      }
      case PendingFile::Tag::OffModality: {
        OffModalityEntry e;
        e.path = rel;
        e.cls = f.claimed_class;
        e.stem = f.stem;
        // Recover the foreign band from content for the record.
        auto img = decode_image(f.bytes);
        e.modality = modality_name(nearest_modality(image_mean_std(*img).first));
        rec.off_modality.push_back(std::move(e));
        break;
      }
      case PendingFile::Tag::Mislabel: {
        MislabelEntry e;
        e.path = rel;
        e.stem = f.stem;
        e.claimed_class = f.claimed_class;
        e.true_class = f.true_class;
        rec.mislabeled.push_back(std::move(e));
        break;
      }
      case PendingFile::Tag::Junk:
        rec.junk.push_back(rel);
        break;
    }
  }
  for (auto& [cls, stems] : rec.expected) std::sort(stems.begin(), stems.end());

  card.dataset_name = ds_name;
  card.modality = info.name;
  card.task_kind = task_kind_name(ds_task_kind);
  card.label_set = classes;
  card.sample_counts = clean_counts;
  int total = 0;
  for (const auto& [cls, n] : clean_counts) total += n;
  switch (rng.below(3)) {
    case 0:
      card.description = "Grayscale " + info.name + " archive holding " +
                         std::to_string(total) + " images across " +
                         std::to_string(classes.size()) + " label folders.";
      break;
    case 1:
      card.description = "Site-collected " + info.name + " " + card.task_kind +
                         " set; " + std::to_string(total) + " samples, labels " +
                         "as subfolder names.";
      break;
    default:
      card.description = "Local " + info.name + " collection for " + card.task_kind +
                         " with " + std::to_string(classes.size()) + " classes and " +
                         std::to_string(total) + " images.";
      break;
  }
  return rec;
}

}  // namespace

void EnvironmentConfig::validate() const {
  if (num_clients < 2) throw HarnessError("num_clients must be at least 2");
  auto check_range = [](const IntRange& r, int min_lo, const char* what) {
    if (r.lo > r.hi) throw HarnessError(std::string(what) + " range inverted");
    if (r.lo < min_lo)
      throw HarnessError(std::string(what) + " range below supported minimum");
  };
  check_range(datasets_per_client, 1, "datasets_per_client");
  check_range(classes_per_dataset, 2, "classes_per_dataset");
  check_range(samples_per_class, 4, "samples_per_class");
  if (eligible_fraction <= 0.0 || eligible_fraction > 1.0)
    throw HarnessError("eligible_fraction must be in (0,1]");
  if (perturbation_fraction < 0.0 || perturbation_fraction > 1.0)
    throw HarnessError("perturbation_fraction must be in [0,1]");
  if (flat_layout_probability < 0.0 || flat_layout_probability > 1.0)
    throw HarnessError("flat_layout_probability must be in [0,1]");
}

Json EnvironmentConfig::to_json() const {
  return Json{{"seed", seed},
              {"modality", modality_name(modality)},
              {"num_clients", num_clients},
              {"datasets_per_client", {datasets_per_client.lo, datasets_per_client.hi}},
              {"classes_per_dataset", {classes_per_dataset.lo, classes_per_dataset.hi}},
              {"samples_per_class", {samples_per_class.lo, samples_per_class.hi}},
              {"eligible_fraction", eligible_fraction},
              {"perturbation_fraction", perturbation_fraction},
              {"flat_layout_probability", flat_layout_probability}};
}

EnvironmentConfig EnvironmentConfig::from_json(const Json& j) {
  EnvironmentConfig c;
  c.seed = j.at("seed").get<std::uint64_t>();
  auto m = modality_from_name(j.at("modality").get<std::string>());
  if (!m) throw HarnessError("unknown modality in environment config");
  c.modality = *m;
  c.num_clients = j.at("num_clients").get<int>();
  auto range = [&j](const char* key, IntRange fallback) {
    if (!j.contains(key)) return fallback;
    const auto& a = j.at(key);
    return IntRange{a.at(0).get<int>(), a.at(1).get<int>()};
  };
  c.datasets_per_client = range("datasets_per_client", c.datasets_per_client);
  c.classes_per_dataset = range("classes_per_dataset", c.classes_per_dataset);
  c.samples_per_class = range("samples_per_class", c.samples_per_class);
  c.eligible_fraction = j.value("eligible_fraction", c.eligible_fraction);
  c.perturbation_fraction = j.value("perturbation_fraction", c.perturbation_fraction);
  c.flat_layout_probability = j.value("flat_layout_probability", c.flat_layout_probability);
  return c;
}

Json DataCardDataset::to_json() const {
  Json counts = Json::object();
  for (const auto& [cls, n] : sample_counts) counts[cls] = n;
  return Json{{"dataset_name", dataset_name},
              {"modality", modality},
              {"task_kind", task_kind},
              {"label_set", label_set},
              {"sample_counts", counts},
              {"description", description}};
}

DataCardDataset DataCardDataset::from_json(const Json& j) {
  DataCardDataset d;
  d.dataset_name = j.at("dataset_name").get<std::string>();
  d.modality = j.at("modality").get<std::string>();
  d.task_kind = j.at("task_kind").get<std::string>();
  d.label_set = j.at("label_set").get<std::vector<std::string>>();
  for (const auto& [cls, n] : j.at("sample_counts").items())
    d.sample_counts[cls] = n.get<int>();
  d.description = j.at("description").get<std::string>();
  return d;
}

Json DataCard::to_json() const {
  Json ds = Json::array();
  for (const auto& d : datasets) ds.push_back(d.to_json());
  return Json{{"client_id", client_id}, {"datasets", ds}};
}

DataCard DataCard::from_json(const Json& j) {
  DataCard c;
  c.client_id = j.at("client_id").get<std::string>();
  for (const auto& d : j.at("datasets")) c.datasets.push_back(DataCardDataset::from_json(d));
  return c;
}

GroundTruthManifest generate_environment(const EnvironmentConfig& config, const fs::path& root) {
  config.validate();
  if (fs::exists(root) && !fs::is_empty(root))
    throw HarnessError("destination not empty: " + root.string());
  fs::create_directories(root / "clients");
  fs::create_directories(root / "server");

  // Eligibility split.
  RngStream rng_el(RngStream::derive(config.seed, "eligibility"));
  int n = config.num_clients;
  int n_eligible = std::max(1, static_cast<int>(std::lround(config.eligible_fraction * n)));
  if (config.eligible_fraction < 1.0) n_eligible = std::min(n_eligible, n - 1);
  auto eligible_idx = rng_el.sample_indices(static_cast<std::size_t>(n),
                                            static_cast<std::size_t>(n_eligible));
  std::vector<bool> eligible(n, false);
  for (auto i : eligible_idx) eligible[i] = true;

  // Task spec.
  RngStream rng_task(RngStream::derive(config.seed, "task"));
  const auto& env_info = modality_info(config.modality);
  TaskSpec task;
  task.modality = config.modality;
  task.task_kind = TaskKind::Classification;
  task.target_schema = env_info.coarse_schema;
  std::string schema_text;
  for (std::size_t i = 0; i < task.target_schema.size(); ++i) {
    if (i) schema_text += "/";
    schema_text += task.target_schema[i];
  }
  task.objective = "Train a federated " + schema_text + " classifier over " + env_info.name +
                   " imaging sites.";
  task.guidance_mode = GuidanceMode::FineGrained;
  const auto& prefs = preference_pool();
  task.fl_preferences = prefs[rng_task.below(prefs.size())];
  task.validate();

  GroundTruthManifest manifest;
  manifest.config = config.to_json();
  manifest.task = task.to_json();
  manifest.canonical_profile = canonical_profile(config.modality);
  for (const auto& fc : env_info.vocab) manifest.canonical_label_map[fc.fine] = fc.coarse;
  manifest.suitable_algorithms = suitable_algorithm_ids(task.fl_preferences);

  for (int ci = 0; ci < n; ++ci) {
    std::string cid = "c" + std::to_string(ci + 1);
    RngStream rng_c(RngStream::derive(config.seed, "client/" + cid));

    Modality client_modality = config.modality;
    TaskKind client_kind = TaskKind::Classification;
    if (!eligible[ci]) {
      // Ineligible sites either hold a foreign modality or the right
      // modality collected for a different task kind.
      if (rng_c.chance(0.7)) {
        std::size_t foreign = rng_c.below(kModalityCount - 1);
        if (foreign >= static_cast<std::size_t>(config.modality)) ++foreign;
        client_modality = static_cast<Modality>(foreign);
        if (rng_c.chance(0.5)) {
          TaskKind kinds[] = {TaskKind::Segmentation, TaskKind::Detection, TaskKind::Regression};
          client_kind = kinds[rng_c.below(3)];
        }
      } else {
        TaskKind kinds[] = {TaskKind::Segmentation, TaskKind::Detection, TaskKind::Regression};
        client_kind = kinds[rng_c.below(3)];
      }
    }

    ClientRecord client;
    client.client_id = cid;
    client.modality = modality_name(client_modality);
    client.eligible = eligible[ci];
    if (eligible[ci]) manifest.eligible_clients.push_back(cid);

    DataCard card;
    card.client_id = cid;
    int n_ds = rng_c.int_in(config.datasets_per_client.lo, config.datasets_per_client.hi);
    for (int di = 0; di < n_ds; ++di) {
      std::string ds_name = modality_prefix(client_modality) + two_digits(di + 1);
      DataCardDataset card_ds;
      client.datasets.push_back(generate_dataset(config, client_modality, client_kind, cid,
                                                 ds_name, root, card_ds));
      card.datasets.push_back(std::move(card_ds));
    }
    save_json_file(root / "clients" / cid / "datacard.json", card.to_json());
    manifest.clients.push_back(std::move(client));
  }

  save_json_file(root / "task.json", task.to_json());
  save_json_file(root / "server" / "registry.json", registry_to_json());
  manifest.save(root / "manifest.json");
  return manifest;
}

}  // namespace fedharness
