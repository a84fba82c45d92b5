#include "doctest.h"

#include <algorithm>
#include <set>

#include "fedharness/envgen.hpp"
#include "fedharness/image.hpp"

using namespace fedharness;

namespace {

fs::path fresh_dir(const std::string& tag) {
  fs::path dir = fs::temp_directory_path() / ("fh_envgen_" + tag);
  fs::remove_all(dir);
  return dir;
}

EnvironmentConfig small_config(std::uint64_t seed, Modality m = Modality::Dermatoscopy) {
  EnvironmentConfig cfg;
  cfg.seed = seed;
  cfg.modality = m;
  cfg.num_clients = 4;
  cfg.datasets_per_client = {1, 2};
  cfg.classes_per_dataset = {2, 3};
  cfg.samples_per_class = {5, 8};
  cfg.eligible_fraction = 0.75;
  return cfg;
}

}  // namespace

TEST_CASE("identical configs produce byte-identical workspaces") {
  auto a = fresh_dir("det_a");
  auto b = fresh_dir("det_b");
  auto cfg = small_config(7);
  generate_environment(cfg, a);
  generate_environment(cfg, b);
  CHECK(hash_tree(a) == hash_tree(b));
  CHECK(read_file_text(a / "manifest.json") == read_file_text(b / "manifest.json"));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("different seeds move the ledger") {
  auto a = fresh_dir("seed7");
  auto b = fresh_dir("seed8");
  generate_environment(small_config(7), a);
  generate_environment(small_config(8), b);
  CHECK(read_file_text(a / "manifest.json") != read_file_text(b / "manifest.json"));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("corruption counts stay in the documented ranges") {
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    auto dir = fresh_dir("counts_" + std::to_string(seed));
    auto manifest = generate_environment(small_config(seed), dir);
    for (const auto& client : manifest.clients) {
      for (const auto& ds : client.datasets) {
        CHECK(ds.duplicates.size() >= 2);
        CHECK(ds.duplicates.size() <= 5);
        CHECK(ds.off_modality.size() >= 2);
        CHECK(ds.off_modality.size() <= 5);
        CHECK(ds.mislabeled.size() >= 2);
        CHECK(ds.mislabeled.size() <= 5);
        CHECK(ds.junk.size() >= 2);
        CHECK(ds.junk.size() <= 8);
      }
    }
    fs::remove_all(dir);
  }
}

TEST_CASE("every ledgered path exists and the tree splits into expected plus ledgered") {
  auto dir = fresh_dir("ledger");
  auto manifest = generate_environment(small_config(21), dir);

  for (const auto& client : manifest.clients) {
    for (const auto& ds : client.datasets) {
      std::set<std::string> ledgered;
      for (const auto& d : ds.duplicates) ledgered.insert(d.path);
      for (const auto& o : ds.off_modality) ledgered.insert(o.path);
      for (const auto& m : ds.mislabeled) ledgered.insert(m.path);
      for (const auto& jp : ds.junk) ledgered.insert(jp);
      std::set<std::string> perturbed;
      for (const auto& p : ds.perturbations) perturbed.insert(p.path);

      // All ledgered paths exist on disk.
      for (const auto& rel : ledgered) CHECK(fs::is_regular_file(dir / rel));
      for (const auto& rel : perturbed) CHECK(fs::is_regular_file(dir / rel));

      // Expected identities resolve to real files at their generated spot.
      fs::path ds_root = dir / "clients" / client.client_id / ds.name;
      std::size_t on_disk = sorted_recursive_files(ds_root).size();

      std::size_t accounted = 0;
      for (const auto& [cls, stems] : ds.expected) {
        for (const auto& stem : stems) {
          bool found = false;
          for (const auto& f : sorted_recursive_files(ds_root)) {
            if (f.stem() == stem || f.stem() == cls + "__" + stem) found = true;
          }
          CHECK(found);
          ++accounted;
        }
      }
      // Disk content = expected clean files + ledgered corruptions, disjoint.
      CHECK(on_disk == accounted + ledgered.size());
    }
  }
  fs::remove_all(dir);
}

TEST_CASE("junk uses documented extensions and removing it leaves images only") {
  auto dir = fresh_dir("junk");
  auto manifest = generate_environment(small_config(31), dir);
  std::set<std::string> allowed = {".txt", ".csv", ".pdf", ".xls", ".log", ".xml", ".ini"};

  for (const auto& client : manifest.clients) {
    for (const auto& ds : client.datasets) {
      for (const auto& rel : ds.junk) {
        fs::path p = dir / rel;
        CHECK(allowed.count(p.extension().string()) == 1);
        fs::remove(p);
      }
      fs::path ds_root = dir / "clients" / client.client_id / ds.name;
      for (const auto& f : sorted_recursive_files(ds_root)) {
        CHECK(is_image_extension(f.extension().string()));
        CHECK(decode_image_file(f).has_value());
      }
    }
  }
  fs::remove_all(dir);
}

TEST_CASE("format perturbations re-encode losslessly and ledger dimensions match") {
  auto dir = fresh_dir("perturb");
  auto manifest = generate_environment(small_config(41), dir);
  int format_entries = 0, resolution_entries = 0, intensity_entries = 0;

  for (const auto& client : manifest.clients) {
    for (const auto& ds : client.datasets) {
      for (const auto& p : ds.perturbations) {
        auto bytes = read_file_bytes(dir / p.path);
        auto fmt = sniff_format(bytes);
        REQUIRE(fmt.has_value());
        CHECK(format_name(*fmt) == p.current_format);
        auto img = decode_image(bytes);
        REQUIRE(img.has_value());
        CHECK(img->width == p.current_width);
        CHECK(img->height == p.current_height);
        // Container re-encode reproduces the stored bytes exactly.
        CHECK(encode_image(*img, *fmt) == bytes);

        if (p.kind == "format") {
          ++format_entries;
          CHECK(p.current_format != "pgm");
          CHECK(p.current_width == p.original_width);
        } else if (p.kind == "resolution") {
          ++resolution_entries;
          CHECK((p.current_width == 32 || p.current_width == 16));
          CHECK(p.current_format == "pgm");
        } else if (p.kind == "intensity") {
          ++intensity_entries;
          CHECK(p.intensity_shift != 0.0);
          auto [mean, sd] = image_mean_std(*img);
          auto m = modality_from_name(ds.modality);
          REQUIRE(m.has_value());
          // Shifted but still nearest to its own band.
          CHECK(nearest_modality(mean) == *m);
          CHECK(std::abs(mean - modality_info(*m).mean) > 4.0);
        }
      }
    }
  }
  CHECK(format_entries + resolution_entries + intensity_entries > 0);
  fs::remove_all(dir);
}

TEST_CASE("zero perturbation fraction leaves every file canonical") {
  auto dir = fresh_dir("noperturb");
  auto cfg = small_config(51);
  cfg.perturbation_fraction = 0.0;
  auto manifest = generate_environment(cfg, dir);
  for (const auto& client : manifest.clients)
    for (const auto& ds : client.datasets) CHECK(ds.perturbations.empty());
  fs::remove_all(dir);
}

TEST_CASE("eligibility split matches datacards") {
  auto dir = fresh_dir("elig");
  auto cfg = small_config(61);
  auto manifest = generate_environment(cfg, dir);

  CHECK_FALSE(manifest.eligible_clients.empty());
  CHECK(manifest.eligible_clients.size() < static_cast<std::size_t>(cfg.num_clients));

  for (const auto& client : manifest.clients) {
    auto card = DataCard::from_json(
        load_json_file(dir / "clients" / client.client_id / "datacard.json"));
    CHECK(card.client_id == client.client_id);
    REQUIRE_FALSE(card.datasets.empty());
    bool listed = std::find(manifest.eligible_clients.begin(), manifest.eligible_clients.end(),
                            client.client_id) != manifest.eligible_clients.end();
    CHECK(listed == client.eligible);
    for (const auto& ds : card.datasets) {
      if (client.eligible) {
        CHECK(ds.modality == modality_name(cfg.modality));
        CHECK(ds.task_kind == "classification");
      } else {
        bool foreign = ds.modality != modality_name(cfg.modality);
        bool wrong_kind = ds.task_kind != "classification";
        CHECK((foreign || wrong_kind));
      }
    }
  }
  fs::remove_all(dir);
}

TEST_CASE("datacard label sets match generated class folders") {
  auto dir = fresh_dir("labels");
  auto manifest = generate_environment(small_config(71), dir);
  for (const auto& client : manifest.clients) {
    auto card = DataCard::from_json(
        load_json_file(dir / "clients" / client.client_id / "datacard.json"));
    REQUIRE(card.datasets.size() == client.datasets.size());
    for (std::size_t i = 0; i < card.datasets.size(); ++i) {
      CHECK(card.datasets[i].label_set == client.datasets[i].classes);
      if (!client.datasets[i].flat_layout) {
        std::set<std::string> folders;
        fs::path ds_root = dir / "clients" / client.client_id / client.datasets[i].name;
        for (const auto& e : sorted_dir_entries(ds_root))
          if (fs::is_directory(e)) folders.insert(e.filename().string());
        std::set<std::string> declared(card.datasets[i].label_set.begin(),
                                       card.datasets[i].label_set.end());
        CHECK(folders == declared);
      }
    }
  }
  fs::remove_all(dir);
}

TEST_CASE("mislabels keep truthful content in a wrong folder") {
  auto dir = fresh_dir("mislabel");
  auto manifest = generate_environment(small_config(81), dir);
  for (const auto& client : manifest.clients) {
    for (const auto& ds : client.datasets) {
      for (const auto& m : ds.mislabeled) {
        CHECK(m.claimed_class != m.true_class);
        CHECK(fs::is_regular_file(dir / m.path));
        // The stem is expected nowhere: mislabeled files are slated for removal.
        for (const auto& [cls, stems] : ds.expected)
          CHECK(std::find(stems.begin(), stems.end(), m.stem) == stems.end());
      }
    }
  }
  fs::remove_all(dir);
}

TEST_CASE("flat datasets carry class prefixes instead of folders") {
  bool saw_flat = false;
  for (std::uint64_t seed = 91; seed < 96 && !saw_flat; ++seed) {
    auto dir = fresh_dir("flat" + std::to_string(seed));
    auto cfg = small_config(seed);
    cfg.flat_layout_probability = 0.9;
    auto manifest = generate_environment(cfg, dir);
    for (const auto& client : manifest.clients) {
      for (const auto& ds : client.datasets) {
        if (!ds.flat_layout) continue;
        saw_flat = true;
        fs::path ds_root = dir / "clients" / client.client_id / ds.name;
        for (const auto& e : sorted_dir_entries(ds_root)) CHECK_FALSE(fs::is_directory(e));
        bool junk_present = !ds.junk.empty();
        for (const auto& f : sorted_recursive_files(ds_root)) {
          bool has_prefix = f.filename().string().find("__") != std::string::npos;
          bool is_junk = !is_image_extension(f.extension().string());
          CHECK((has_prefix || is_junk));
        }
        CHECK(junk_present);
      }
    }
    fs::remove_all(dir);
  }
  CHECK(saw_flat);
}

TEST_CASE("manifest roundtrips through json") {
  auto dir = fresh_dir("roundtrip");
  auto manifest = generate_environment(small_config(101), dir);
  auto loaded = GroundTruthManifest::load(dir / "manifest.json");
  CHECK(loaded.to_json() == manifest.to_json());
  CHECK(loaded.eligible_clients == manifest.eligible_clients);
  CHECK(loaded.canonical_label_map == manifest.canonical_label_map);
  fs::remove_all(dir);
}

TEST_CASE("canonical label map is total over eligible clients and lands in the schema") {
  auto dir = fresh_dir("canonmap");
  auto manifest = generate_environment(small_config(111, Modality::Xray), dir);
  auto task = TaskSpec::from_json(manifest.task);
  std::set<std::string> schema(task.target_schema.begin(), task.target_schema.end());
  for (const auto& client : manifest.clients) {
    if (!client.eligible) continue;
    for (const auto& ds : client.datasets) {
      for (const auto& cls : ds.classes) {
        REQUIRE(manifest.canonical_label_map.count(cls) == 1);
        CHECK(schema.count(manifest.canonical_label_map.at(cls)) == 1);
      }
    }
  }
  CHECK(manifest.suitable_algorithms.size() >= 1);
  fs::remove_all(dir);
}

TEST_CASE("generation refuses bad configs and dirty destinations") {
  auto dir = fresh_dir("errors");
  fs::create_directories(dir);
  write_file_text(dir / "leftover.txt", "x");
  CHECK_THROWS_AS(generate_environment(small_config(1), dir), HarnessError);
  fs::remove_all(dir);

  auto bad = small_config(1);
  bad.num_clients = 1;
  CHECK_THROWS_AS(bad.validate(), HarnessError);

  bad = small_config(1);
  bad.samples_per_class = {8, 5};
  CHECK_THROWS_AS(bad.validate(), HarnessError);

  bad = small_config(1);
  bad.classes_per_dataset = {1, 3};
  CHECK_THROWS_AS(bad.validate(), HarnessError);

  bad = small_config(1);
  bad.eligible_fraction = 0.0;
  CHECK_THROWS_AS(bad.validate(), HarnessError);
}

TEST_CASE("config roundtrips through json") {
  auto cfg = small_config(7, Modality::Mri);
  cfg.perturbation_fraction = 0.4;
  auto back = EnvironmentConfig::from_json(cfg.to_json());
  CHECK(back.seed == cfg.seed);
  CHECK(back.modality == cfg.modality);
  CHECK(back.num_clients == cfg.num_clients);
  CHECK(back.datasets_per_client.lo == cfg.datasets_per_client.lo);
  CHECK(back.samples_per_class.hi == cfg.samples_per_class.hi);
  CHECK(back.perturbation_fraction == doctest::Approx(0.4));
}
