#pragma once

#include <string>
#include <vector>

#include "panini/config.hpp"
#include "panini/panini_model.hpp"
#include "panini/tensor.hpp"

// Experiment runners. Every runner writes, under its output directory:
//   - a CSV with the per-item measurements,
//   - summary.txt embedding the full config (with all seeds),
//   - config_echo.cfg, the same config in machine-readable form, so the run
//     can be repeated byte-for-byte,
//   - timing.txt, a wall-clock sidecar excluded from the byte-for-byte
//     reproducibility contract.
// Image grids are PNG. All floats go through report::format_g9.

namespace panini::experiments {

// Fixed degradation ladder used by evaluation, mild to severe.
struct TierSpec {
  double sigma;
  int rate;
  double noise;
  int quality;
};
const std::vector<TierSpec>& eval_tiers();

// Round every pixel to the 8-bit grid (still stored as floats in [0,255]).
// Metrics and grid tiles use this so artifacts are byte-stable.
FeatureMap quantize_image(const FeatureMap& img);

struct EvalRow {
  int index = 0;
  int tier = 0;
  double psnr_restored = 0;
  bool capped = false;
  double psnr_baseline = 0;  // bilinear upsample of the degraded input
  double theta = 0;          // mask mean at the last fused level
};

struct EvalReport {
  std::vector<EvalRow> rows;
  std::vector<double> tier_mean_psnr, tier_std_psnr, tier_mean_baseline, tier_mean_theta;
  double mean_psnr = 0, mean_baseline = 0;
  std::string csv_path, summary_path;
};

// Degrades each pool image at every tier (sr mode: single downsample tier),
// restores, and scores PSNR against the ground truth.
EvalReport run_eval(PaniniModel& model, const std::vector<FeatureMap>& hq,
                    const Config& cfg, const std::string& out_dir);

struct AblationBResult {
  std::vector<int> rates;
  std::vector<double> thetas;        // one per rate, last fused level
  int trend_hits = 0;                // adjacent comparisons with nondecreasing theta
  std::string csv_path, grid_path, summary_path;
};

// Fixes (sigma, noise, quality) from config, varies the down-rate, and emits
// the three-row grid: full output, prior-only output, image-only output.
// trained_hint=false adds a warning (run proceeds regardless).
AblationBResult run_ablation_b(PaniniModel& model, const FeatureMap& hq_base,
                               const std::vector<int>& rates, const Config& cfg,
                               const std::string& out_dir, bool trained_hint = true);

struct AblationAArm {
  std::string name;
  int64_t head_params = 0;  // fusion-head parameters summed over fused levels
  double val_l1_start = 0, val_l1_end = 0;
  double mean_psnr = 0;
};

struct AblationAResult {
  AblationAArm dafi, cat_conv;
  std::string csv_path, summary_path;
};

// Trains two sr-mode models at equal budget and seeds, differing only in the
// fusion operator (mask interpolation vs concat+conv), then compares PSNR and
// fusion-head parameter counts. Unequal per-arm budgets -> invalid-argument.
AblationAResult run_ablation_a(const Config& cfg, const std::vector<FeatureMap>& hq_train,
                               const std::vector<FeatureMap>& hq_val,
                               const std::string& out_dir);

struct EditSweepResult {
  std::vector<double> biases;
  std::vector<FeatureMap> outputs;  // quantized, one per bias
  std::string grid_path, csv_path, summary_path;
};

// Restores one input once per bias value (mask weights shifted at the given
// fused levels) and assembles a labeled one-row grid. Bias 0 takes the
// unedited path, so that column is bit-identical to plain restoration.
EditSweepResult run_edit_sweep(PaniniModel& model, const FeatureMap& lq_img,
                               const std::vector<double>& biases,
                               const std::vector<int>& levels, const Config& cfg,
                               const std::string& out_dir);

}  // namespace panini::experiments
