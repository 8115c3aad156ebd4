// Command-line surface for the face-restoration toolkit. Subcommands cover
// dataset synthesis, the two pretraining stages, fine-tuning, single-image
// inference (plain, dissected, mask-edited), evaluation, the two ablation
// runners, and the standalone degradation pipeline.
//
// Exit codes: 0 ok, 2 invalid-argument, 3 io-error, 4 incompatible-checkpoint,
// 5 training-diverged, 1 anything else. Failures print
// "error-class: <class>" plus a message on stderr.

#include <CLI11.hpp>

#include <cctype>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "panini/checkpoint.hpp"
#include "panini/config.hpp"
#include "panini/dataset.hpp"
#include "panini/degrade.hpp"
#include "panini/drep.hpp"
#include "panini/experiments.hpp"
#include "panini/gpm.hpp"
#include "panini/image_io.hpp"
#include "panini/panini_model.hpp"
#include "panini/report.hpp"

namespace {

using namespace panini;

std::vector<FeatureMap> load_pool(const std::string& dir, int want_res) {
  std::vector<FeatureMap> pool;
  for (const auto& path : list_images(dir)) {
    FeatureMap img = read_png(path);
    if (want_res > 0 && (img.dim(1) != want_res || img.dim(2) != want_res))
      img = resize_bilinear(img, want_res, want_res);
    pool.push_back(std::move(img));
  }
  if (pool.empty()) throw IoError("no images found in " + dir);
  return pool;
}

Config base_config(const std::string& config_path, uint64_t seed, bool seed_given) {
  Config cfg;
  if (!config_path.empty()) cfg = Config::load(config_path);
  if (seed_given) cfg.set("seed", std::to_string(seed));
  cfg.apply_env_seed_override();
  return cfg;
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::istringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(std::stoi(tok));
  return out;
}

std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  std::istringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(std::stod(tok));
  return out;
}

PaniniModel load_model(const std::string& path, bool* trained = nullptr) {
  Checkpoint ckpt = Checkpoint::load(path);
  if (trained) *trained = ckpt.extra.value("train_steps", 0) > 0;
  return PaniniModel::from_checkpoint(ckpt);
}

FeatureMap read_image_any(const std::string& path) {
  std::filesystem::path p(path);
  std::string ext = p.extension().string();
  for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (ext == ".jpg" || ext == ".jpeg") {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                               std::istreambuf_iterator<char>());
    return jpeg_decode(bytes);
  }
  return read_png(path);
}

void split_pool(const std::vector<FeatureMap>& pool, int val_n,
                std::vector<FeatureMap>& train, std::vector<FeatureMap>& val) {
  const int n = static_cast<int>(pool.size());
  const int v = std::min(val_n, n > 1 ? n / 2 : 0);
  train.assign(pool.begin(), pool.end() - v);
  val.assign(pool.end() - v, pool.end());
}

int run(int argc, char** argv) {
  CLI::App app{"panini: degradation-aware face restoration toolkit"};
  app.require_subcommand(1);

  std::string config_path, data_dir, out_path, out_dir, in_path, model_path;
  std::string gpm_path, dre_path, mode_str = "restoration", dissect_str = "full";
  std::string rates_str = "1,2,3,5,8", biases_str = "-0.3,0,0.3", levels_str;
  uint64_t seed = 0;
  bool seed_given = false;
  int n_images = 64, res = 64, steps = -1, val_n = 8;
  double sigma = 1.0, noise = 5.0, bias = 0.0;
  int rate = 2, quality = 40;

  auto add_seed = [&](CLI::App* c) {
    c->add_option("--seed", seed, "master seed")->each([&](const std::string&) {
      seed_given = true;
    });
  };
  auto add_config = [&](CLI::App* c) {
    c->add_option("--config", config_path, "key=value config file");
  };

  auto* c_synth = app.add_subcommand("synth-data", "generate a synthetic face dataset");
  c_synth->add_option("--out", out_dir, "output directory")->required();
  c_synth->add_option("--n", n_images, "image count");
  c_synth->add_option("--res", res, "image resolution");
  add_seed(c_synth);

  auto* c_dre = app.add_subcommand("pretrain-dre", "contrastive degradation-encoder pretraining");
  c_dre->add_option("--data", data_dir, "clean image folder")->required();
  c_dre->add_option("--out", out_path, "output checkpoint")->required();
  c_dre->add_option("--steps", steps, "training steps");
  add_config(c_dre);
  add_seed(c_dre);

  auto* c_gpm = app.add_subcommand("pretrain-gpm", "adversarial prior-generator pretraining");
  c_gpm->add_option("--data", data_dir, "clean image folder")->required();
  c_gpm->add_option("--out", out_path, "output checkpoint")->required();
  c_gpm->add_option("--steps", steps, "training steps");
  add_config(c_gpm);
  add_seed(c_gpm);

  auto* c_train = app.add_subcommand("train", "fine-tune the full restoration model");
  c_train->add_option("--data", data_dir, "clean image folder")->required();
  c_train->add_option("--out", out_path, "output checkpoint")->required();
  c_train->add_option("--gpm", gpm_path, "pretrained generator checkpoint");
  c_train->add_option("--dre", dre_path, "pretrained degradation-encoder checkpoint");
  c_train->add_option("--mode", mode_str, "restoration|sr");
  c_train->add_option("--steps", steps, "training steps");
  c_train->add_option("--val-n", val_n, "held-out validation images");
  add_config(c_train);
  add_seed(c_train);

  auto* c_restore = app.add_subcommand("restore", "restore one image");
  c_restore->add_option("--model", model_path, "model checkpoint")->required();
  c_restore->add_option("--in", in_path, "input image (png/jpeg)")->required();
  c_restore->add_option("--out", out_path, "output png")->required();

  auto* c_dissect = app.add_subcommand("dissect", "emit full / prior-only / image-only outputs");
  c_dissect->add_option("--model", model_path, "model checkpoint")->required();
  c_dissect->add_option("--in", in_path, "input image")->required();
  c_dissect->add_option("--out-dir", out_dir, "output directory")->required();

  auto* c_edit = app.add_subcommand("edit", "mask-bias edit sweep on one image");
  c_edit->add_option("--model", model_path, "model checkpoint")->required();
  c_edit->add_option("--in", in_path, "input image")->required();
  c_edit->add_option("--out-dir", out_dir, "output directory")->required();
  c_edit->add_option("--biases", biases_str, "comma-separated bias list");
  c_edit->add_option("--levels", levels_str, "fused levels to edit (default all)");
  add_config(c_edit);
  add_seed(c_edit);

  auto* c_eval = app.add_subcommand("eval", "evaluate a model over the degradation ladder");
  c_eval->add_option("--model", model_path, "model checkpoint")->required();
  c_eval->add_option("--data", data_dir, "ground-truth image folder")->required();
  c_eval->add_option("--out-dir", out_dir, "output directory")->required();
  add_config(c_eval);
  add_seed(c_eval);

  auto* c_abl_a = app.add_subcommand("ablation-a", "mask fusion vs concat+conv at equal budget");
  c_abl_a->add_option("--data", data_dir, "clean image folder")->required();
  c_abl_a->add_option("--out-dir", out_dir, "output directory")->required();
  c_abl_a->add_option("--gpm", gpm_path, "pretrained generator checkpoint");
  c_abl_a->add_option("--val-n", val_n, "held-out validation images");
  add_config(c_abl_a);
  add_seed(c_abl_a);

  auto* c_abl_b = app.add_subcommand("ablation-b", "prior-usage ratio across down-rates");
  c_abl_b->add_option("--model", model_path, "model checkpoint")->required();
  c_abl_b->add_option("--image", in_path, "base image (default: first of --data)");
  c_abl_b->add_option("--data", data_dir, "image folder supplying the base image");
  c_abl_b->add_option("--rates", rates_str, "comma-separated increasing down-rates");
  c_abl_b->add_option("--out-dir", out_dir, "output directory")->required();
  add_config(c_abl_b);
  add_seed(c_abl_b);

  auto* c_degrade = app.add_subcommand("degrade", "apply the degradation pipeline to one image");
  c_degrade->add_option("--in", in_path, "input image")->required();
  c_degrade->add_option("--out", out_path, "output png")->required();
  c_degrade->add_option("--sigma", sigma, "gaussian blur sigma");
  c_degrade->add_option("--rate", rate, "down/up resample rate");
  c_degrade->add_option("--noise", noise, "gaussian noise std (8-bit units)");
  c_degrade->add_option("--quality", quality, "jpeg quality");
  add_seed(c_degrade);

  CLI11_PARSE(app, argc, argv);

  if (app.got_subcommand(c_synth)) {
    synth_dataset(out_dir, n_images, seed, res);
    std::cout << "wrote " << n_images << " images to " << out_dir << "\n";
    return 0;
  }

  if (app.got_subcommand(c_dre)) {
    Config cfg = base_config(config_path, seed, seed_given);
    if (steps >= 0) cfg.set("udrl_steps", std::to_string(steps));
    cfg.set("data_dir", data_dir);
    const int dre_res = static_cast<int>(cfg.get_int("dre_res", 64));
    const int embed = static_cast<int>(cfg.get_int("embed_dim", 256));
    const int queue_cap = static_cast<int>(cfg.get_int("udrl_queue", 1024));
    auto pool = load_pool(data_dir, 0);

    Rng rng(derive_seed(cfg.get_u64("seed", 0), 0xD4E));
    drep::EncoderPair pair({dre_res, embed}, cfg.get_double("udrl_momentum", 0.999), rng);
    drep::NegativeQueue queue(queue_cap, embed);
    queue.prefill_random(derive_seed(cfg.get_u64("seed", 0), 0x0F1));
    drep::pretrain_dre(pool, cfg, pair, queue,
                       out_path + ".loss.csv");

    Checkpoint ckpt;
    ckpt.kind = "dre";
    ckpt.config = {{"dre_res", std::to_string(dre_res)},
                   {"embed_dim", std::to_string(embed)},
                   {"queue_capacity", std::to_string(queue_cap)}};
    std::vector<nn::ParamRef<float>> refs;
    pair.query.collect_params("dre", refs);
    pair.key.collect_params("key", refs);
    store_params(ckpt, refs);
    ckpt.tensors["queue.storage"] = queue.raw_storage();
    ckpt.extra["queue_cursor"] = queue.write_cursor();
    ckpt.extra["queue_size"] = queue.size();
    ckpt.save(out_path);
    std::cout << "saved " << out_path << "\n";
    return 0;
  }

  if (app.got_subcommand(c_gpm)) {
    Config cfg = base_config(config_path, seed, seed_given);
    if (steps >= 0) cfg.set("gpm_steps", std::to_string(steps));
    cfg.set("data_dir", data_dir);
    PaniniConfig pc = PaniniConfig::from_config(cfg);
    auto pool = load_pool(data_dir, pc.gen.output_resolution());

    Rng rng(derive_seed(cfg.get_u64("seed", 0), 0x69F0));
    gpm::Generator gen(pc.gen);
    gen.init(rng);
    gpm::Discriminator disc(pc.gen.output_resolution());
    disc.init(rng);
    gpm::GpmTrainResult tr = gpm::pretrain_gpm(pool, cfg, gen, disc, out_path + ".loss.csv");

    Checkpoint ckpt;
    ckpt.kind = "gpm";
    ckpt.config = pc.gen.to_map();
    std::vector<nn::ParamRef<float>> refs;
    gen.collect_params("gen", refs);
    disc.collect_params("disc", refs);
    store_params(ckpt, refs);
    ckpt.extra["steps"] = static_cast<int64_t>(tr.curve.size());
    ckpt.save(out_path);
    std::cout << "saved " << out_path << "\n";
    return 0;
  }

  if (app.got_subcommand(c_train)) {
    Config cfg = base_config(config_path, seed, seed_given);
    if (steps >= 0) cfg.set("train_steps", std::to_string(steps));
    if (!cfg.has("mode")) cfg.set("mode", mode_str);
    cfg.set("data_dir", data_dir);
    PaniniConfig pc = PaniniConfig::from_config(cfg);
    auto pool = load_pool(data_dir, pc.gen.output_resolution());
    std::vector<FeatureMap> train_pool, val_pool;
    split_pool(pool, val_n, train_pool, val_pool);

    Rng rng(derive_seed(cfg.get_u64("seed", 0), 0x7A11));
    PaniniModel model(pc);
    model.init(rng);
    gpm::Discriminator disc(pc.gen.output_resolution());
    disc.init(rng);

    if (!gpm_path.empty()) {
      Checkpoint g = Checkpoint::load(gpm_path);
      if (g.kind != "gpm")
        throw IncompatibleCheckpoint("--gpm: expected a generator checkpoint, got kind '" +
                                     g.kind + "'");
      std::vector<nn::ParamRef<float>> refs;
      model.generator().collect_params("gen", refs);
      disc.collect_params("disc", refs);
      load_params(g, refs);
    }
    if (!dre_path.empty()) {
      if (pc.mode != Mode::restoration)
        throw InvalidArgument("--dre only applies to restoration mode");
      Checkpoint d = Checkpoint::load(dre_path);
      if (d.kind != "dre")
        throw IncompatibleCheckpoint("--dre: expected an encoder checkpoint, got kind '" +
                                     d.kind + "'");
      std::vector<nn::ParamRef<float>> refs;
      model.dre().collect_params("dre", refs);
      load_params(d, refs);
    }

    FineTuneResult ft =
        fine_tune(model, disc, train_pool, val_pool, cfg, out_path + ".loss.csv");

    Checkpoint ckpt = model.to_checkpoint();
    std::vector<nn::ParamRef<float>> drefs;
    disc.collect_params("disc", drefs);
    store_params(ckpt, drefs);
    ckpt.extra["train_steps"] = static_cast<int64_t>(cfg.get_int("train_steps", 1000));
    ckpt.save(out_path);
    std::cout << "saved " << out_path << "\n"
              << "val_l1_start = " << ft.val_l1_start << "\n"
              << "val_l1_end = " << ft.val_l1_end << "\n";
    return 0;
  }

  if (app.got_subcommand(c_restore)) {
    PaniniModel model = load_model(model_path);
    FeatureMap x = read_image_any(in_path);
    const int r = model.config().input_res;
    if (x.dim(1) != r || x.dim(2) != r) x = resize_bilinear(x, r, r);
    RoutingStats stats;
    FeatureMap y = model.restore(x, &stats);
    write_png(out_path, experiments::quantize_image(to_image_range(y).reshaped(y.shape())));
    std::cout << "wrote " << out_path << " (last fused theta = " << stats.last_fused_theta
              << ")\n";
    return 0;
  }

  if (app.got_subcommand(c_dissect)) {
    PaniniModel model = load_model(model_path);
    FeatureMap x = read_image_any(in_path);
    const int r = model.config().input_res;
    if (x.dim(1) != r || x.dim(2) != r) x = resize_bilinear(x, r, r);
    RoutingStats stats;
    FeatureMap y = model.restore(x, &stats);
    FeatureMap yg = model.restore_dissected(x, DissectMode::gpb_only);
    FeatureMap yi = model.restore_dissected(x, DissectMode::ife_only);
    std::filesystem::create_directories(out_dir);
    write_png(out_dir + "/y.png", experiments::quantize_image(to_image_range(y).reshaped(y.shape())));
    write_png(out_dir + "/y_gpb.png",
              experiments::quantize_image(to_image_range(yg).reshaped(yg.shape())));
    write_png(out_dir + "/y_ife.png",
              experiments::quantize_image(to_image_range(yi).reshaped(yi.shape())));
    report::Summary sum("panini dissection");
    sum.kv("input", in_path);
    for (size_t l = 0; l < stats.theta.size(); ++l)
      sum.kv("theta_level_" + std::to_string(l + 1), stats.theta[l]);
    sum.save(out_dir + "/summary.txt");
    std::cout << "wrote dissection to " << out_dir << "\n";
    return 0;
  }

  if (app.got_subcommand(c_edit)) {
    Config cfg = base_config(config_path, seed, seed_given);
    cfg.set("edit_input", in_path);
    cfg.set("edit_biases", biases_str);
    if (!levels_str.empty()) cfg.set("edit_levels", levels_str);
    PaniniModel model = load_model(model_path);
    FeatureMap x = read_image_any(in_path);
    const int r = model.config().input_res;
    if (x.dim(1) != r || x.dim(2) != r) x = resize_bilinear(x, r, r);
    std::vector<int> levels = levels_str.empty() ? std::vector<int>{} : parse_int_list(levels_str);
    experiments::run_edit_sweep(model, x, parse_double_list(biases_str), levels, cfg, out_dir);
    std::cout << "wrote edit sweep to " << out_dir << "\n";
    return 0;
  }

  if (app.got_subcommand(c_eval)) {
    Config cfg = base_config(config_path, seed, seed_given);
    cfg.set("data_dir", data_dir);
    cfg.set("model_checkpoint", model_path);
    PaniniModel model = load_model(model_path);
    auto pool = load_pool(data_dir, model.config().gen.output_resolution());
    experiments::run_eval(model, pool, cfg, out_dir);
    std::cout << "wrote eval report to " << out_dir << "\n";
    return 0;
  }

  if (app.got_subcommand(c_abl_a)) {
    Config cfg = base_config(config_path, seed, seed_given);
    cfg.set("data_dir", data_dir);
    if (!gpm_path.empty()) cfg.set("gpm_checkpoint", gpm_path);
    Config probe = cfg;
    probe.set("mode", "sr");
    PaniniConfig pc = PaniniConfig::from_config(probe);
    auto pool = load_pool(data_dir, pc.gen.output_resolution());
    std::vector<FeatureMap> train_pool, val_pool;
    split_pool(pool, val_n, train_pool, val_pool);
    experiments::run_ablation_a(cfg, train_pool, val_pool, out_dir);
    std::cout << "wrote ablation-a report to " << out_dir << "\n";
    return 0;
  }

  if (app.got_subcommand(c_abl_b)) {
    Config cfg = base_config(config_path, seed, seed_given);
    cfg.set("model_checkpoint", model_path);
    cfg.set("rates", rates_str);
    bool trained = false;
    PaniniModel model = load_model(model_path, &trained);
    FeatureMap base_img;
    if (!in_path.empty()) {
      cfg.set("base_image", in_path);
      base_img = read_image_any(in_path);
    } else {
      if (data_dir.empty())
        throw InvalidArgument("ablation-b: pass --image or --data");
      cfg.set("data_dir", data_dir);
      base_img = load_pool(data_dir, 0).front();
    }
    const int out_res = model.config().gen.output_resolution();
    if (base_img.dim(1) != out_res || base_img.dim(2) != out_res)
      base_img = resize_bilinear(base_img, out_res, out_res);
    experiments::run_ablation_b(model, base_img, parse_int_list(rates_str), cfg, out_dir,
                                trained);
    std::cout << "wrote ablation-b report to " << out_dir << "\n";
    return 0;
  }

  if (app.got_subcommand(c_degrade)) {
    FeatureMap x = read_image_any(in_path);
    DegradationParams p{sigma, rate, noise, quality, seed};
    p.validate();
    write_png(out_path, experiments::quantize_image(apply_degradation(x, p)));
    std::cout << "wrote " << out_path << "\n";
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const panini::Error& e) {
    std::cerr << "error-class: " << e.error_class() << "\n" << e.what() << "\n";
    const std::string c = e.error_class();
    if (c == "invalid-argument") return 2;
    if (c == "io-error") return 3;
    if (c == "incompatible-checkpoint") return 4;
    if (c == "training-diverged") return 5;
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error-class: internal\n" << e.what() << "\n";
    return 1;
  }
}
