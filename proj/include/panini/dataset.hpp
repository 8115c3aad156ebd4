#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "panini/tensor.hpp"

namespace panini {

// Parameters of one procedural face, all derived from the per-image seed.
// Echoed into the manifest so a row documents what was drawn; the seed alone
// is sufficient to regenerate the image bit-exactly.
struct FaceParams {
  uint64_t seed = 0;
  int res = 64;
  double face_cx = 0, face_cy = 0, face_ax = 0, face_ay = 0;
  double skin_r = 0, skin_g = 0, skin_b = 0;
  double eye_dx = 0, eye_y = 0, eye_r = 0;
  double mouth_y = 0, mouth_w = 0, mouth_curve = 0;
  double tex_freq_x = 0, tex_freq_y = 0, tex_amp = 0, tex_phase = 0;
};

// Renders one synthetic face, RGB in [0,255], shape {3,res,res}.
// Deterministic in (seed, res).
FeatureMap generate_face(uint64_t seed, int res, FaceParams* params_out = nullptr);

// Writes n faces as PNG plus manifest.csv (index, per-image seed, resolution,
// headline draw parameters). Per-image seeds derive from `seed` and the index
// so any single image can be regenerated from its manifest row.
void synth_dataset(const std::string& dir, int n, uint64_t seed, int res);

struct ManifestEntry {
  int index = 0;
  uint64_t seed = 0;
  int res = 64;
  std::string file;
};

std::vector<ManifestEntry> read_manifest(const std::string& dir);

// Sorted list of image files (png/jpg) directly inside `dir`.
std::vector<std::string> list_images(const std::string& dir);

}  // namespace panini
