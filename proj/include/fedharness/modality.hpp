#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fedharness/image.hpp"
#include "fedharness/rng.hpp"

namespace fedharness {

// The six imaging environments. Each draws pixel intensities from its own
// band so that off-band content is detectable from statistics alone.
enum class Modality { Dermatoscopy, Ultrasound, Fundus, Histopathology, Mri, Xray };

constexpr int kModalityCount = 6;

struct FineClass {
  std::string fine;    // e.g. "melanoma"
  std::string coarse;  // e.g. "malignant"
};

struct ModalityInfo {
  Modality id;
  std::string name;            // lowercase identifier used on disk
  double mean;                 // background intensity band center
  double stddev;               // background noise std
  std::vector<FineClass> vocab;
  std::vector<std::string> coarse_schema;  // ordered coarse class names
};

const std::vector<ModalityInfo>& modality_table();
const ModalityInfo& modality_info(Modality m);
std::optional<Modality> modality_from_name(const std::string& name);
std::string modality_name(Modality m);
// Short dataset-name prefix, e.g. "derm" for dermatoscopy.
std::string modality_prefix(Modality m);

// Index of a fine class inside its modality vocabulary; doubles as the
// spatial pattern id. Fine class names are unique across modalities.
std::optional<int> fine_class_pattern(Modality m, const std::string& fine);
std::optional<std::string> coarse_class_of(Modality m, const std::string& fine);

// Geometry of generated images. One vocabulary slot maps to one cell of a
// 4x4 grid; the cell is offset by kPatternDelta (sign flips for bright
// bands so values stay inside [0,255]).
constexpr int kCanvasSize = 64;
constexpr int kPatternGrid = 4;
constexpr double kBackgroundStd = 5.0;
constexpr double kPatternDelta = 28.0;

// Every modality band shares this per-image std (background noise plus the
// pattern cell). Conformance checks and the normalization target use it.
double canonical_image_std();

// Half-width of the acceptance band around each modality mean; bands of
// distinct modalities must stay disjoint by construction.
constexpr double kBandHalfWidth = 15.0;

double pattern_delta_for(Modality m);

// Nearest band center; the off-modality test classifies a file to the
// modality whose mean is closest to the observed image mean.
Modality nearest_modality(double observed_mean);

// Renders one sample: background noise at the modality band plus the class
// pattern cell.
Image render_class_image(RngStream& rng, Modality m, int pattern_id, int size = kCanvasSize);

// Canonical post-preprocessing profile for a modality environment.
struct CanonicalProfile {
  std::string format = "pgm";
  int width = kCanvasSize;
  int height = kCanvasSize;
  double mean = 0.0;
  double stddev = 0.0;
  double mean_tolerance = 4.0;
  double std_tolerance = 4.0;

  Json to_json() const;
  static CanonicalProfile from_json(const Json& j);
};

CanonicalProfile canonical_profile(Modality m);

// True when the file already matches the profile (container, resolution,
// intensity within tolerance).
bool image_conforms(const Image& img, ImageFormat fmt, const CanonicalProfile& profile);

}  // namespace fedharness
