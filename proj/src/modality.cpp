#include "fedharness/modality.hpp"

#include <algorithm>
#include <cmath>

namespace fedharness {

namespace {

std::vector<ModalityInfo> build_table() {
  std::vector<ModalityInfo> t;
  t.push_back({Modality::Dermatoscopy,
               "dermatoscopy",
               30.0,
               kBackgroundStd,
               {{"melanoma", "malignant"},
                {"basal_cell_carcinoma", "malignant"},
                {"squamous_cell_carcinoma", "malignant"},
                {"actinic_keratosis", "malignant"},
                {"nevus", "benign"},
                {"seborrheic_keratosis", "benign"},
                {"dermatofibroma", "benign"},
                {"vascular_lesion", "benign"}},
               {"benign", "malignant"}});
  t.push_back({Modality::Ultrasound,
               "ultrasound",
               70.0,
               kBackgroundStd,
               {{"invasive_carcinoma", "malignant"},
                {"ductal_carcinoma", "malignant"},
                {"suspicious_calcification", "malignant"},
                {"simple_cyst", "benign"},
                {"fibroadenoma", "benign"},
                {"normal_parenchyma", "benign"}},
               {"benign", "malignant"}});
  t.push_back({Modality::Fundus,
               "fundus",
               110.0,
               kBackgroundStd,
               {{"proliferative_dr", "referable"},
                {"severe_npdr", "referable"},
                {"moderate_npdr", "referable"},
                {"macular_edema", "referable"},
                {"mild_npdr", "non_referable"},
                {"no_retinopathy", "non_referable"}},
               {"non_referable", "referable"}});
  t.push_back({Modality::Histopathology,
               "histopathology",
               150.0,
               kBackgroundStd,
               {{"adenocarcinoma", "tumor"},
                {"tumor_epithelium", "tumor"},
                {"necrotic_debris", "tumor"},
                {"stroma", "non_tumor"},
                {"lymphocytes", "non_tumor"},
                {"normal_glands", "non_tumor"},
                {"mucosa", "non_tumor"}},
               {"non_tumor", "tumor"}});
  t.push_back({Modality::Mri,
               "mri",
               190.0,
               kBackgroundStd,
               {{"glioma", "tumor"},
                {"meningioma", "tumor"},
                {"pituitary_adenoma", "tumor"},
                {"metastasis", "tumor"},
                {"healthy_axial", "no_tumor"},
                {"healthy_coronal", "no_tumor"}},
               {"no_tumor", "tumor"}});
  t.push_back({Modality::Xray,
               "xray",
               230.0,
               kBackgroundStd,
               {{"pneumonia", "abnormal"},
                {"pleural_effusion", "abnormal"},
                {"cardiomegaly", "abnormal"},
                {"pulmonary_nodule", "abnormal"},
                {"rib_fracture", "abnormal"},
                {"normal_pa_view", "normal"},
                {"normal_lateral_view", "normal"}},
               {"abnormal", "normal"}});
  return t;
}

}  // namespace

const std::vector<ModalityInfo>& modality_table() {
  static const std::vector<ModalityInfo> table = build_table();
  return table;
}

const ModalityInfo& modality_info(Modality m) {
  return modality_table()[static_cast<std::size_t>(m)];
}

std::optional<Modality> modality_from_name(const std::string& name) {
  for (const auto& info : modality_table())
    if (info.name == name) return info.id;
  return std::nullopt;
}

std::string modality_name(Modality m) { return modality_info(m).name; }

std::string modality_prefix(Modality m) {
  switch (m) {
    case Modality::Dermatoscopy: return "derm";
    case Modality::Ultrasound: return "us";
    case Modality::Fundus: return "fundus";
    case Modality::Histopathology: return "histo";
    case Modality::Mri: return "mri";
    case Modality::Xray: return "xray";
  }
  return "img";
}

std::optional<int> fine_class_pattern(Modality m, const std::string& fine) {
  const auto& vocab = modality_info(m).vocab;
  for (std::size_t i = 0; i < vocab.size(); ++i)
    if (vocab[i].fine == fine) return static_cast<int>(i);
  return std::nullopt;
}

std::optional<std::string> coarse_class_of(Modality m, const std::string& fine) {
  const auto& vocab = modality_info(m).vocab;
  for (const auto& fc : vocab)
    if (fc.fine == fine) return fc.coarse;
  return std::nullopt;
}

double canonical_image_std() {
  constexpr double f = 1.0 / (kPatternGrid * kPatternGrid);
  static const double value =
      std::sqrt(kBackgroundStd * kBackgroundStd + f * (1.0 - f) * kPatternDelta * kPatternDelta);
  return value;
}

double pattern_delta_for(Modality m) {
  return modality_info(m).mean <= 130.0 ? kPatternDelta : -kPatternDelta;
}

Modality nearest_modality(double observed_mean) {
  const auto& table = modality_table();
  std::size_t best = 0;
  double best_d = std::abs(observed_mean - table[0].mean);
  for (std::size_t i = 1; i < table.size(); ++i) {
    double d = std::abs(observed_mean - table[i].mean);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return table[best].id;
}

Image render_class_image(RngStream& rng, Modality m, int pattern_id, int size) {
  const auto& info = modality_info(m);
  Image img{size, size, {}};
  img.pixels.resize(static_cast<std::size_t>(size) * size);
  for (auto& px : img.pixels) {
    double v = info.mean + info.stddev * rng.gaussian();
    px = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0l, 255l));
  }
  int cells = kPatternGrid * kPatternGrid;
  int cell = ((pattern_id % cells) + cells) % cells;
  int cell_w = size / kPatternGrid;
  int cx = (cell % kPatternGrid) * cell_w;
  int cy = (cell / kPatternGrid) * cell_w;
  double delta = pattern_delta_for(m);
  for (int y = cy; y < cy + cell_w; ++y) {
    for (int x = cx; x < cx + cell_w; ++x) {
      double v = img.at(x, y) + delta;
      img.at(x, y) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0l, 255l));
    }
  }
  return img;
}

Json CanonicalProfile::to_json() const {
  return Json{{"format", format},       {"width", width},
              {"height", height},       {"mean", mean},
              {"stddev", stddev},       {"mean_tolerance", mean_tolerance},
              {"std_tolerance", std_tolerance}};
}

CanonicalProfile CanonicalProfile::from_json(const Json& j) {
  CanonicalProfile p;
  p.format = j.at("format").get<std::string>();
  p.width = j.at("width").get<int>();
  p.height = j.at("height").get<int>();
  p.mean = j.at("mean").get<double>();
  p.stddev = j.at("stddev").get<double>();
  p.mean_tolerance = j.at("mean_tolerance").get<double>();
  p.std_tolerance = j.at("std_tolerance").get<double>();
  return p;
}

CanonicalProfile canonical_profile(Modality m) {
  CanonicalProfile p;
  p.mean = modality_info(m).mean;
  p.stddev = canonical_image_std();
  return p;
}

bool image_conforms(const Image& img, ImageFormat fmt, const CanonicalProfile& profile) {
  if (format_name(fmt) != profile.format) return false;
  if (img.width != profile.width || img.height != profile.height) return false;
  auto [mean, std_dev] = image_mean_std(img);
  if (std::abs(mean - profile.mean) > profile.mean_tolerance) return false;
  if (std::abs(std_dev - profile.stddev) > profile.std_tolerance) return false;
  return true;
}

}  // namespace fedharness
