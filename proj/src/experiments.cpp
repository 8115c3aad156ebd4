#include "panini/experiments.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>

#include "panini/image_io.hpp"
#include "panini/metrics.hpp"
#include "panini/report.hpp"

namespace panini::experiments {

using report::format_g9;

namespace {

class WallClock {
 public:
  explicit WallClock(std::string out_dir) : out_dir_(std::move(out_dir)) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir_, ec);
    t0_ = std::chrono::steady_clock::now();
  }
  // timing sidecar: deliberately not part of the byte-stable artifact set
  ~WallClock() {
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
    try {
      report::write_text_file(out_dir_ + "/timing.txt",
                              "runtime_seconds = " + format_g9(s) + "\n");
    } catch (...) {
    }
  }

 private:
  std::string out_dir_;
  std::chrono::steady_clock::time_point t0_;
};

void write_config_echo(const Config& cfg, const std::string& out_dir) {
  report::write_text_file(out_dir + "/config_echo.cfg", cfg.serialize());
}

void embed_config(report::Summary& s, const Config& cfg) {
  s.section("config");
  std::istringstream ss(cfg.serialize());
  std::string line;
  while (std::getline(ss, line)) s.line(line);
}

std::string fmt_bias(double b) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%+.2f", b);
  return buf;
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0;
  double a = 0;
  for (double x : v) a += x;
  return a / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0;
  const double m = mean_of(v);
  double a = 0;
  for (double x : v) a += (x - m) * (x - m);
  return std::sqrt(a / static_cast<double>(v.size()));
}

}  // namespace

const std::vector<TierSpec>& eval_tiers() {
  static const std::vector<TierSpec> tiers = {
      {1.0, 2, 5.0, 40},   // mild
      {2.0, 3, 10.0, 30},  //
      {3.5, 5, 18.0, 15},  //
      {5.0, 8, 25.0, 7},   // severe
  };
  return tiers;
}

FeatureMap quantize_image(const FeatureMap& img) {
  FeatureMap out(img.shape());
  for (int64_t i = 0; i < img.numel(); ++i)
    out[i] = static_cast<float>(quantize_u8(img[i]));
  return out;
}

EvalReport run_eval(PaniniModel& model, const std::vector<FeatureMap>& hq, const Config& cfg,
                    const std::string& out_dir) {
  require(!hq.empty(), "run_eval: empty image pool");
  WallClock clock(out_dir);
  const Mode mode = model.config().mode;
  const int in_res = model.config().input_res;
  const uint64_t seed = cfg.get_u64("seed", 0);
  const int n_tiers = mode == Mode::restoration ? static_cast<int>(eval_tiers().size()) : 1;

  EvalReport rep;
  report::Csv csv({"index", "tier", "sigma", "rate", "noise", "quality", "psnr_restored",
                   "capped", "psnr_baseline", "theta"});
  std::vector<std::vector<double>> psnrs(static_cast<size_t>(n_tiers)),
      bases(static_cast<size_t>(n_tiers)), thetas(static_cast<size_t>(n_tiers));

  for (size_t i = 0; i < hq.size(); ++i) {
    const FeatureMap gt = quantize_image(hq[i]);
    for (int t = 0; t < n_tiers; ++t) {
      DegradationParams p;
      if (mode == Mode::restoration) {
        const TierSpec& ts = eval_tiers()[static_cast<size_t>(t)];
        p = {ts.sigma, ts.rate, ts.noise, ts.quality,
             derive_seed(seed, i * 16 + static_cast<size_t>(t))};
      } else {
        p = {0.0, hq[i].dim(1) / in_res, 0.0, 100, 0};  // reporting only
      }
      const FeatureMap lq = make_lq(hq[i], mode, in_res, p);
      RoutingStats stats;
      FeatureMap y = model.restore(lq, &stats);
      const FeatureMap y_img = quantize_image(to_image_range(y).reshaped(y.shape()));
      const FeatureMap base =
          quantize_image(resize_bilinear(lq, gt.dim(1), gt.dim(2)));
      const PsnrResult pr = psnr(y_img, gt);
      const PsnrResult pb = psnr(base, gt);

      EvalRow row;
      row.index = static_cast<int>(i);
      row.tier = t;
      row.psnr_restored = pr.db;
      row.capped = pr.capped;
      row.psnr_baseline = pb.db;
      row.theta = stats.last_fused_theta;
      rep.rows.push_back(row);
      psnrs[static_cast<size_t>(t)].push_back(pr.db);
      bases[static_cast<size_t>(t)].push_back(pb.db);
      thetas[static_cast<size_t>(t)].push_back(stats.last_fused_theta);

      csv.row({std::to_string(i), std::to_string(t), format_g9(p.blur_sigma),
               format_g9(p.down_rate), format_g9(p.noise_std),
               std::to_string(p.jpeg_quality), format_g9(pr.db), pr.capped ? "1" : "0",
               format_g9(pb.db), format_g9(stats.last_fused_theta)});
    }
  }

  report::Summary sum("panini eval report");
  embed_config(sum, cfg);
  sum.section("tiers");
  sum.line("tier,sigma,rate,noise,quality");
  if (mode == Mode::restoration) {
    for (int t = 0; t < n_tiers; ++t) {
      const TierSpec& ts = eval_tiers()[static_cast<size_t>(t)];
      sum.line(std::to_string(t) + "," + format_g9(ts.sigma) + "," + std::to_string(ts.rate) +
               "," + format_g9(ts.noise) + "," + std::to_string(ts.quality));
    }
  } else {
    sum.line("0,0,-,0,100 (sr: bilinear downsample only)");
  }
  sum.section("per-tier");
  sum.line("tier,n,psnr_mean,psnr_std,baseline_mean,theta_mean");
  std::vector<double> all_psnr, all_base;
  for (int t = 0; t < n_tiers; ++t) {
    const auto& pv = psnrs[static_cast<size_t>(t)];
    rep.tier_mean_psnr.push_back(mean_of(pv));
    rep.tier_std_psnr.push_back(std_of(pv));
    rep.tier_mean_baseline.push_back(mean_of(bases[static_cast<size_t>(t)]));
    rep.tier_mean_theta.push_back(mean_of(thetas[static_cast<size_t>(t)]));
    all_psnr.insert(all_psnr.end(), pv.begin(), pv.end());
    all_base.insert(all_base.end(), bases[static_cast<size_t>(t)].begin(),
                    bases[static_cast<size_t>(t)].end());
    sum.line(std::to_string(t) + "," + std::to_string(pv.size()) + "," +
             format_g9(rep.tier_mean_psnr.back()) + "," + format_g9(rep.tier_std_psnr.back()) +
             "," + format_g9(rep.tier_mean_baseline.back()) + "," +
             format_g9(rep.tier_mean_theta.back()));
  }
  rep.mean_psnr = mean_of(all_psnr);
  rep.mean_baseline = mean_of(all_base);
  sum.section("overall");
  sum.kv("images", std::to_string(hq.size()));
  sum.kv("psnr_mean", rep.mean_psnr);
  sum.kv("baseline_mean", rep.mean_baseline);
  sum.blank();
  sum.line("runtime: see timing.txt (sidecar, outside the byte-stable artifact set)");

  rep.csv_path = out_dir + "/eval.csv";
  rep.summary_path = out_dir + "/summary.txt";
  csv.save(rep.csv_path);
  sum.save(rep.summary_path);
  write_config_echo(cfg, out_dir);
  return rep;
}

AblationBResult run_ablation_b(PaniniModel& model, const FeatureMap& hq_base,
                               const std::vector<int>& rates, const Config& cfg,
                               const std::string& out_dir, bool trained_hint) {
  require(model.config().mode == Mode::restoration,
          "run_ablation_b: needs a restoration-mode model");
  require(rates.size() >= 2, "run_ablation_b: need at least two rates");
  for (size_t i = 1; i < rates.size(); ++i)
    require(rates[i] > rates[i - 1], "run_ablation_b: rates must be strictly increasing");
  WallClock clock(out_dir);

  const double sigma = cfg.get_double("abl_b_sigma", 1.0);
  const double noise = cfg.get_double("abl_b_noise", 5.0);
  const int quality = static_cast<int>(cfg.get_int("abl_b_quality", 40));
  const uint64_t seed = cfg.get_u64("seed", 0);
  const int in_res = model.config().input_res;

  if (!trained_hint)
    std::cerr << "warning: ablation-b running on an untrained model; theta trend is not "
                 "meaningful\n";

  AblationBResult res;
  res.rates = rates;
  report::Csv csv({"rate", "theta"});
  std::vector<std::vector<FeatureMap>> tiles(3);
  std::vector<std::string> col_labels;

  for (size_t i = 0; i < rates.size(); ++i) {
    DegradationParams p{sigma, rates[i], noise, quality, derive_seed(seed, 100 + i)};
    const FeatureMap lq = make_lq(hq_base, Mode::restoration, in_res, p);
    RoutingStats stats;
    FeatureMap y = model.restore(lq, &stats);
    FeatureMap y_gpb = model.restore_dissected(lq, DissectMode::gpb_only);
    FeatureMap y_ife = model.restore_dissected(lq, DissectMode::ife_only);
    res.thetas.push_back(stats.last_fused_theta);
    csv.row({std::to_string(rates[i]), format_g9(stats.last_fused_theta)});
    tiles[0].push_back(quantize_image(to_image_range(y).reshaped(y.shape())));
    tiles[1].push_back(quantize_image(to_image_range(y_gpb).reshaped(y_gpb.shape())));
    tiles[2].push_back(quantize_image(to_image_range(y_ife).reshaped(y_ife.shape())));
    col_labels.push_back("R=" + std::to_string(rates[i]));
  }
  for (size_t i = 1; i < res.thetas.size(); ++i)
    if (res.thetas[i] + 1e-12 >= res.thetas[i - 1]) ++res.trend_hits;

  FeatureMap grid = report::assemble_grid(tiles, 2, {"Y", "Y GPB", "Y IFE"}, col_labels);
  res.grid_path = out_dir + "/ablation_b_grid.png";
  write_png(res.grid_path, grid);

  report::Summary sum("panini ablation-b report");
  embed_config(sum, cfg);
  sum.section("fixed degradation");
  sum.kv("sigma", sigma);
  sum.kv("noise", noise);
  sum.kv("quality", std::to_string(quality));
  sum.section("theta by rate");
  sum.line("rate,theta");
  for (size_t i = 0; i < rates.size(); ++i)
    sum.line(std::to_string(rates[i]) + "," + format_g9(res.thetas[i]));
  sum.section("trend");
  sum.kv("nondecreasing_adjacent",
         std::to_string(res.trend_hits) + " of " + std::to_string(rates.size() - 1));
  if (!trained_hint) sum.line("warning: model checkpoint was untrained");
  sum.blank();
  sum.line("runtime: see timing.txt (sidecar, outside the byte-stable artifact set)");

  res.csv_path = out_dir + "/ablation_b.csv";
  res.summary_path = out_dir + "/summary.txt";
  csv.save(res.csv_path);
  sum.save(res.summary_path);
  write_config_echo(cfg, out_dir);
  return res;
}

namespace {

double sr_mean_psnr(PaniniModel& model, const std::vector<FeatureMap>& val) {
  double acc = 0;
  for (const auto& img : val) {
    const FeatureMap gt = quantize_image(img);
    const FeatureMap lq =
        make_lq(img, Mode::sr, model.config().input_res, DegradationParams{});
    FeatureMap y = model.restore(lq);
    acc += psnr(quantize_image(to_image_range(y).reshaped(y.shape())), gt).db;
  }
  return acc / static_cast<double>(val.size());
}

int64_t fusion_head_params(const PaniniConfig& pc) {
  int64_t total = 0;
  for (int level = 1; level <= pc.gen.n_fused; ++level) {
    const int c = pc.gen.block_channels(level);
    total += pc.use_cat_conv ? dafi::cat_conv_head_param_count(c)
                             : dafi::dafi_head_param_count(c, pc.dafi_hidden, pc.embed_dim);
  }
  return total;
}

AblationAArm run_ablation_a_arm(const Config& base_cfg, bool use_cat_conv,
                                const std::vector<FeatureMap>& hq_train,
                                const std::vector<FeatureMap>& hq_val, int steps,
                                const std::string& out_dir) {
  Config cfg = base_cfg;
  cfg.set("mode", "sr");
  cfg.set("use_cat_conv", use_cat_conv ? "true" : "false");
  cfg.set("train_steps", std::to_string(steps));
  PaniniConfig pc = PaniniConfig::from_config(cfg);

  const uint64_t seed = cfg.get_u64("seed", 0);
  Rng rng(derive_seed(seed, 0xAB1A));
  PaniniModel model(pc);
  model.init(rng);
  if (cfg.has("gpm_checkpoint")) {
    Checkpoint g = Checkpoint::load(cfg.get_str("gpm_checkpoint", ""));
    if (g.kind != "gpm")
      throw IncompatibleCheckpoint("ablation-a: gpm_checkpoint has kind '" + g.kind + "'");
    std::vector<nn::ParamRef<float>> refs;
    model.generator().collect_params("gen", refs);
    load_params(g, refs);
  }
  gpm::Discriminator disc(pc.gen.output_resolution());
  disc.init(rng);

  AblationAArm arm;
  arm.name = use_cat_conv ? "cat_conv" : "dafi";
  arm.head_params = fusion_head_params(pc);
  FineTuneResult ft = fine_tune(model, disc, hq_train, hq_val, cfg,
                                out_dir + "/train_" + arm.name + ".csv");
  arm.val_l1_start = ft.val_l1_start;
  arm.val_l1_end = ft.val_l1_end;
  arm.mean_psnr = hq_val.empty() ? 0.0 : sr_mean_psnr(model, hq_val);
  return arm;
}

}  // namespace

AblationAResult run_ablation_a(const Config& cfg, const std::vector<FeatureMap>& hq_train,
                               const std::vector<FeatureMap>& hq_val,
                               const std::string& out_dir) {
  require(!hq_train.empty(), "run_ablation_a: empty training pool");
  const int default_steps = static_cast<int>(cfg.get_int("abl_a_steps", 40));
  const int steps_dafi = static_cast<int>(cfg.get_int("abl_a_steps_dafi", default_steps));
  const int steps_cat = static_cast<int>(cfg.get_int("abl_a_steps_catconv", default_steps));
  if (steps_dafi != steps_cat)
    throw InvalidArgument("run_ablation_a: arm budgets differ (" + std::to_string(steps_dafi) +
                          " vs " + std::to_string(steps_cat) + ")");
  WallClock clock(out_dir);

  AblationAResult res;
  res.dafi = run_ablation_a_arm(cfg, false, hq_train, hq_val, steps_dafi, out_dir);
  res.cat_conv = run_ablation_a_arm(cfg, true, hq_train, hq_val, steps_cat, out_dir);

  report::Csv csv({"arm", "steps", "head_params", "val_l1_start", "val_l1_end", "mean_psnr"});
  for (const AblationAArm* a : {&res.dafi, &res.cat_conv})
    csv.row({a->name, std::to_string(steps_dafi), std::to_string(a->head_params),
             format_g9(a->val_l1_start), format_g9(a->val_l1_end), format_g9(a->mean_psnr)});

  report::Summary sum("panini ablation-a report");
  embed_config(sum, cfg);
  sum.section("arms");
  sum.kv("budget_steps", std::to_string(steps_dafi));
  sum.kv("dafi_head_params", std::to_string(res.dafi.head_params));
  sum.kv("cat_conv_head_params", std::to_string(res.cat_conv.head_params));
  sum.kv("dafi_mean_psnr", res.dafi.mean_psnr);
  sum.kv("cat_conv_mean_psnr", res.cat_conv.mean_psnr);
  sum.section("reference head sizes at channel width 512");
  sum.kv("dafi_512", std::to_string(dafi::dafi_head_param_count(512, 256, 256)));
  sum.kv("cat_conv_512", std::to_string(dafi::cat_conv_head_param_count(512)));
  sum.blank();
  sum.line("runtime: see timing.txt (sidecar, outside the byte-stable artifact set)");

  res.csv_path = out_dir + "/ablation_a.csv";
  res.summary_path = out_dir + "/summary.txt";
  csv.save(res.csv_path);
  sum.save(res.summary_path);
  write_config_echo(cfg, out_dir);
  return res;
}

EditSweepResult run_edit_sweep(PaniniModel& model, const FeatureMap& lq_img,
                               const std::vector<double>& biases,
                               const std::vector<int>& levels, const Config& cfg,
                               const std::string& out_dir) {
  require(!biases.empty(), "run_edit_sweep: empty bias list");
  WallClock clock(out_dir);

  EditSweepResult res;
  res.biases = biases;
  report::Csv csv({"column", "bias"});
  std::vector<std::vector<FeatureMap>> tiles(1);
  std::vector<std::string> col_labels;
  for (size_t i = 0; i < biases.size(); ++i) {
    FeatureMap y = model.restore_edited(lq_img, biases[i], levels);
    res.outputs.push_back(quantize_image(to_image_range(y).reshaped(y.shape())));
    tiles[0].push_back(res.outputs.back());
    col_labels.push_back("B=" + fmt_bias(biases[i]));
    csv.row({std::to_string(i), format_g9(biases[i])});
  }
  FeatureMap grid = report::assemble_grid(tiles, 2, {}, col_labels);
  res.grid_path = out_dir + "/edit_grid.png";
  write_png(res.grid_path, grid);

  report::Summary sum("panini edit-sweep report");
  embed_config(sum, cfg);
  sum.section("sweep");
  sum.line("column,bias");
  for (size_t i = 0; i < biases.size(); ++i)
    sum.line(std::to_string(i) + "," + format_g9(biases[i]));
  std::string lv = "all fused levels";
  if (!levels.empty()) {
    lv.clear();
    for (size_t i = 0; i < levels.size(); ++i)
      lv += (i ? "," : "") + std::to_string(levels[i]);
  }
  sum.kv("levels", lv);
  sum.blank();
  sum.line("runtime: see timing.txt (sidecar, outside the byte-stable artifact set)");

  res.csv_path = out_dir + "/edit_sweep.csv";
  res.summary_path = out_dir + "/summary.txt";
  csv.save(res.csv_path);
  sum.save(res.summary_path);
  write_config_echo(cfg, out_dir);
  return res;
}

}  // namespace panini::experiments
