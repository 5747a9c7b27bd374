// pcadv: dataset creation, two-stage GAN training, attack evaluation,
// defenses, metrics, transfer tables and the lambda1 sweep.
#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "pcadv/dataio.hpp"
#include "pcadv/defense.hpp"
#include "pcadv/metrics.hpp"
#include "pcadv/models.hpp"
#include "pcadv/training.hpp"

namespace fs = std::filesystem;
using namespace pcadv;

namespace {

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::vector<double> split_doubles(const std::string& s) {
  std::vector<double> out;
  for (const auto& item : split_csv(s)) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw InvalidInput("not a number: " + item);
    }
  }
  return out;
}

std::vector<int> split_ints(const std::string& s) {
  std::vector<int> out;
  for (const auto& item : split_csv(s)) {
    try {
      out.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw InvalidInput("not an integer: " + item);
    }
  }
  return out;
}

AttackMode parse_mode(const std::string& s) {
  if (s == "untargeted") return AttackMode::kUntargeted;
  if (s == "targeted") return AttackMode::kTargeted;
  throw InvalidInput("mode must be targeted or untargeted: " + s);
}

// Geometric taper from 96 down to 32 across the tree depths; the root width
// is pinned by noise_dim + label_embed_dim.
std::vector<int> default_feature_dims(int depth, int root_width) {
  std::vector<int> dims = {root_width};
  for (int l = 0; l < depth; ++l) {
    double f =
        depth == 1 ? 96.0 : 96.0 * std::pow(32.0 / 96.0, static_cast<double>(l) / (depth - 1));
    dims.push_back(std::max(8, static_cast<int>(std::lround(f))));
  }
  return dims;
}

GeneratorConfig make_generator_config(int n_classes, const std::vector<int>& branching,
                                      int noise_dim, int embed_dim) {
  GeneratorConfig cfg;
  cfg.noise_dim = noise_dim;
  cfg.label_embed_dim = embed_dim;
  cfg.n_classes = n_classes;
  cfg.branching = branching;
  cfg.feature_dims =
      default_feature_dims(static_cast<int>(branching.size()), noise_dim + embed_dim);
  cfg.validate();
  return cfg;
}

std::vector<int> branching_for_points(int n) {
  std::vector<int> branching;
  int rest = n;
  while (rest % 2 == 0 && rest > 1) {
    branching.push_back(2);
    rest /= 2;
  }
  if (rest != 1)
    throw InvalidInput(
        "dataset point count must be a power of two for the default generator; "
        "pass --branching explicitly");
  return branching;
}

// Training keys accepted from `--config` files; explicit flags win.
const std::vector<std::string> kTrainKeys = {
    "steps",      "batch_size",    "critic_steps",   "lr_gen",
    "lr_critic",  "beta1",         "beta2",          "lambda1",
    "lambda2",    "lambda3",       "lambda_gp",      "checkpoint_interval",
    "outlier_k",  "uniform_seeds", "uniform_radius", "sn_power_iters",
    "aux_weight", "mode",          "target_label",   "mask_successful"};

void apply_train_config(TrainConfig& cfg, const std::string& path) {
  dataio::KeyValues kv = dataio::parse_config_file(path);
  dataio::reject_unknown_keys(kv, kTrainKeys);
  auto get = [&](const char* key) { return kv.find(key); };
  auto geti = [&](const char* key, int& slot) {
    if (const std::string* v = get(key)) slot = std::stoi(*v);
  };
  auto getd = [&](const char* key, double& slot) {
    if (const std::string* v = get(key)) slot = std::stod(*v);
  };
  geti("steps", cfg.steps);
  geti("batch_size", cfg.batch_size);
  geti("critic_steps", cfg.critic_steps);
  getd("lr_gen", cfg.lr_gen);
  getd("lr_critic", cfg.lr_critic);
  getd("beta1", cfg.beta1);
  getd("beta2", cfg.beta2);
  getd("lambda1", cfg.weights.lambda1);
  getd("lambda2", cfg.weights.lambda2);
  getd("lambda3", cfg.weights.lambda3);
  getd("lambda_gp", cfg.weights.lambda_gp);
  geti("checkpoint_interval", cfg.checkpoint_interval);
  geti("outlier_k", cfg.outlier_k);
  geti("uniform_seeds", cfg.uniform_seeds);
  getd("uniform_radius", cfg.uniform_radius);
  geti("sn_power_iters", cfg.sn_power_iters);
  getd("aux_weight", cfg.aux_weight);
  if (const std::string* v = get("mode")) cfg.attack_mode = parse_mode(*v);
  geti("target_label", cfg.target_label);
  if (const std::string* v = get("mask_successful")) {
    if (*v != "0" && *v != "1") throw InvalidInput("mask_successful must be 0 or 1");
    cfg.mask_successful = *v == "1";
  }
}

struct GlobalArgs {
  std::uint64_t seed = 1;
  std::string config;
  std::string out = ".";
};

void ensure_out(const std::string& out) { fs::create_directories(out); }

std::string join(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

// Writes the generated samples of an attack run as a dataset (clouds plus
// manifest) so they can be scored with `eval`.
void dump_generated(const GeneratorState& gen, int n_samples, AttackMode mode, int target_label,
                    std::uint64_t seed, const std::string& dir) {
  ensure_out(dir);
  dataio::DatasetManifest m;
  m.n_classes = gen.cfg.n_classes;
  m.points_per_cloud = gen.cfg.points();
  for (int i = 0; i < n_samples; ++i) {
    Rng rng = Rng(seed).derive(0xa77ac4ULL).derive(static_cast<std::uint64_t>(i));
    std::vector<double> z(gen.cfg.noise_dim);
    for (double& v : z) v = rng.normal();
    int label;
    if (mode == AttackMode::kTargeted) {
      int pick = static_cast<int>(rng.uniform_int(gen.cfg.n_classes - 1));
      label = pick >= target_label ? pick + 1 : pick;
    } else {
      label = static_cast<int>(rng.uniform_int(gen.cfg.n_classes));
    }
    PointCloud cloud = generator_sample(gen, z, label);
    std::string name = "gen_" + std::to_string(i) + ".pcad";
    dataio::write_cloud(join(dir, name), cloud);
    m.entries.push_back({name, label, "class" + std::to_string(label)});
  }
  dataio::write_manifest(join(dir, "manifest.csv"), m);
}

CloudSet class_subset(const dataio::Dataset& d, int label) {
  CloudSet s;
  for (std::size_t i = 0; i < d.clouds.size(); ++i)
    if (d.labels[i] == label) {
      s.clouds.push_back(d.clouds[i]);
      s.labels.push_back(label);
    }
  return s;
}

int cmd_gen_data(const GlobalArgs& g, const std::string& shapes, int n_points, int count,
                 double scale_jitter, double rot_jitter, double noise_sigma) {
  std::vector<std::string> families = split_csv(shapes);
  if (families.empty()) throw InvalidInput("gen-data: need at least one shape family");
  ensure_out(g.out);
  dataio::DatasetManifest m;
  m.n_classes = static_cast<int>(families.size());
  m.points_per_cloud = n_points;
  for (std::size_t c = 0; c < families.size(); ++c) {
    dataio::ShapeFamily fam = dataio::shape_from_name(families[c]);
    for (int i = 0; i < count; ++i) {
      dataio::ShapeSpec spec;
      spec.family = fam;
      spec.scale_jitter = scale_jitter;
      spec.rotation_jitter = rot_jitter;
      spec.noise_sigma = noise_sigma;
      spec.rng_seed = Rng(g.seed).derive(c * 1000003ULL + i).next_u64();
      PointCloud cloud = dataio::sample_shape(spec, n_points);
      std::string name = families[c] + "_" + std::to_string(i) + ".pcad";
      dataio::write_cloud(join(g.out, name), cloud);
      m.entries.push_back({name, static_cast<int>(c), families[c]});
    }
  }
  dataio::write_manifest(join(g.out, "manifest.csv"), m);
  std::printf("wrote %zu clouds (%d classes) to %s\n", m.entries.size(), m.n_classes,
              g.out.c_str());
  return 0;
}

int cmd_train_victim(const GlobalArgs& g, const std::string& data, const std::string& arch,
                     int steps, int batch, double lr, double val_fraction, int knn_k) {
  dataio::Dataset dataset = dataio::load_dataset(data);
  VictimConfig vc;
  vc.arch = victim_arch_from_name(arch);
  vc.n_classes = dataset.n_classes;
  vc.knn_k = knn_k;
  VictimState victim = init_victim(vc, Rng(g.seed).derive(0x7631ULL).next_u64());
  VictimTrainConfig cfg;
  cfg.steps = steps;
  cfg.batch_size = batch;
  cfg.lr = lr;
  cfg.val_fraction = val_fraction;
  cfg.rng_seed = g.seed;
  if (!g.config.empty()) {
    dataio::KeyValues kv = dataio::parse_config_file(g.config);
    const std::vector<std::string> keys = {"steps", "batch_size", "lr", "val_fraction"};
    dataio::reject_unknown_keys(kv, keys);
    if (const std::string* v = kv.find("steps")) cfg.steps = std::stoi(*v);
    if (const std::string* v = kv.find("batch_size")) cfg.batch_size = std::stoi(*v);
    if (const std::string* v = kv.find("lr")) cfg.lr = std::stod(*v);
    if (const std::string* v = kv.find("val_fraction")) cfg.val_fraction = std::stod(*v);
  }
  VictimReport rep = train_victim(dataset, victim, cfg);
  ensure_out(g.out);
  save_victim(join(g.out, "victim.ckpt"), victim);
  std::ostringstream txt;
  txt << "arch=" << arch << "\ntrain_accuracy=" << rep.train_accuracy
      << "\nval_accuracy=" << rep.val_accuracy << "\n";
  dataio::write_text_file(join(g.out, "victim_report.txt"), txt.str());
  std::printf("victim %s: train acc %.4f, val acc %.4f\n", arch.c_str(), rep.train_accuracy,
              rep.val_accuracy);
  return 0;
}

TrainConfig build_train_config(const GlobalArgs& g, TrainStage stage, int steps, int batch,
                               double lambda1, const std::string& mode, int target_label) {
  TrainConfig cfg;
  cfg.stage = stage;
  cfg.steps = steps;
  cfg.batch_size = batch;
  cfg.rng_seed = g.seed;
  cfg.weights.lambda1 = lambda1;
  cfg.attack_mode = parse_mode(mode);
  cfg.target_label = target_label;
  if (!g.config.empty()) apply_train_config(cfg, g.config);
  return cfg;
}

int cmd_train_gan(const GlobalArgs& g, const std::string& data, int steps, int batch,
                  const std::string& branching_arg, int noise_dim, int embed_dim) {
  dataio::Dataset dataset = dataio::load_dataset(data);
  std::vector<int> branching = branching_arg.empty() ? branching_for_points(dataset.points_per_cloud)
                                                     : split_ints(branching_arg);
  GeneratorConfig gc = make_generator_config(dataset.n_classes, branching, noise_dim, embed_dim);
  if (gc.points() != dataset.points_per_cloud)
    throw InvalidInput("train-gan: branching does not produce the dataset point count");
  DiscriminatorConfig dc;
  dc.n_classes = dataset.n_classes;
  GeneratorState gen = init_generator(gc, Rng(g.seed).derive(0x9e3ULL).next_u64());
  DiscriminatorState disc = init_discriminator(dc, Rng(g.seed).derive(0xd15cULL).next_u64());

  TrainConfig cfg = build_train_config(g, TrainStage::kGan, steps, batch, 0.0, "untargeted", -1);
  ensure_out(g.out);
  cfg.checkpoint_dir = join(g.out, "checkpoints");
  TrainLog log = train_gan_stage(dataset, gen, disc, cfg);
  save_generator(join(g.out, "gen.ckpt"), gen);
  save_discriminator(join(g.out, "disc.ckpt"), disc);
  write_train_log(join(g.out, "train_log.csv"), log.generator);
  write_critic_log(join(g.out, "critic_log.csv"), log.critic);
  if (!log.generator.empty())
    std::printf("gan stage done: %d steps, final l_dis %.4f\n", cfg.steps,
                log.generator.back().l_dis);
  return 0;
}

int cmd_train_adv(const GlobalArgs& g, const std::string& data, const std::string& gen_ckpt,
                  const std::string& disc_ckpt, const std::string& victim_ckpt, int steps,
                  int batch, double lambda1, const std::string& mode, int target_label) {
  dataio::Dataset dataset = dataio::load_dataset(data);
  GeneratorState gen = load_generator(gen_ckpt);
  DiscriminatorState disc = load_discriminator(disc_ckpt);
  VictimState victim = load_victim(victim_ckpt);
  TrainConfig cfg =
      build_train_config(g, TrainStage::kAdversarial, steps, batch, lambda1, mode, target_label);
  ensure_out(g.out);
  cfg.checkpoint_dir = join(g.out, "checkpoints");
  TrainLog log = train_adversarial_stage(dataset, gen, disc, victim, cfg);
  save_generator(join(g.out, "gen_adv.ckpt"), gen);
  save_discriminator(join(g.out, "disc_adv.ckpt"), disc);
  write_train_log(join(g.out, "train_log.csv"), log.generator);
  write_critic_log(join(g.out, "critic_log.csv"), log.critic);
  if (!log.generator.empty()) {
    double asr_tail = 0.0;
    int tail = std::min<int>(100, static_cast<int>(log.generator.size()));
    for (int i = 0; i < tail; ++i)
      asr_tail += log.generator[log.generator.size() - 1 - i].asr;
    std::printf("adversarial stage done: %d steps, mean asr over final %d steps %.4f\n",
                cfg.steps, tail, asr_tail / tail);
  }
  return 0;
}

DefenseConfig make_defense(const std::string& method, double srs_drop, int sor_k,
                           double sor_alpha) {
  DefenseConfig d;
  if (method == "none")
    d.method = DefenseConfig::Method::kNone;
  else if (method == "srs")
    d.method = DefenseConfig::Method::kSrs;
  else if (method == "sor")
    d.method = DefenseConfig::Method::kSor;
  else
    throw InvalidInput("defense must be none, srs or sor: " + method);
  d.srs_drop_ratio = srs_drop;
  d.sor_k = sor_k;
  d.sor_alpha = sor_alpha;
  d.validate();
  return d;
}

int cmd_attack(const GlobalArgs& g, const std::string& gen_ckpt, const std::string& victim_ckpt,
               const std::string& aux_ckpt, int n_samples, const std::string& mode,
               int target_label, const std::string& defense, double srs_drop, int sor_k,
               double sor_alpha, const std::string& dump_dir) {
  GeneratorState gen = load_generator(gen_ckpt);
  VictimState victim = load_victim(victim_ckpt);
  DiscriminatorState aux = load_discriminator(aux_ckpt);
  DefenseConfig def = make_defense(defense, srs_drop, sor_k, sor_alpha);
  AttackReport rep = attack_success_rate(
      gen, victim, aux, n_samples, parse_mode(mode), target_label,
      def.method == DefenseConfig::Method::kNone ? nullptr : &def, g.seed,
      victim_arch_name(victim.cfg.arch));
  std::vector<std::string> names;
  for (int c = 0; c < gen.cfg.n_classes; ++c) names.push_back("class" + std::to_string(c));
  std::string csv = attack_report_csv(rep, names);
  ensure_out(g.out);
  dataio::write_text_file(join(g.out, "attack_report.csv"), csv);
  std::fputs(csv.c_str(), stdout);
  if (!dump_dir.empty())
    dump_generated(gen, n_samples, parse_mode(mode), target_label, g.seed, dump_dir);
  return 0;
}

int cmd_defend(const GlobalArgs& g, const std::string& in_manifest, const std::string& method,
               double srs_drop, int sor_k, double sor_alpha) {
  DefenseConfig def = make_defense(method, srs_drop, sor_k, sor_alpha);
  if (def.method == DefenseConfig::Method::kNone)
    throw InvalidInput("defend: method must be srs or sor");
  dataio::Dataset dataset = dataio::load_dataset(in_manifest);
  ensure_out(g.out);
  dataio::DatasetManifest m;
  m.n_classes = dataset.n_classes;
  for (std::size_t i = 0; i < dataset.clouds.size(); ++i) {
    PointCloud defended =
        apply_defense(dataset.clouds[i], def, Rng(g.seed).derive(0xdefULL ^ i).next_u64());
    std::string name = "defended_" + std::to_string(i) + ".pcad";
    dataio::write_cloud(join(g.out, name), defended);
    m.entries.push_back({name, dataset.labels[i], dataset.class_names[dataset.labels[i]]});
    m.points_per_cloud = defended.n();
  }
  // SOR survivors can differ in count per cloud; the index lists what exists.
  dataio::write_manifest(join(g.out, "index.csv"), m);
  std::printf("defended %zu clouds with %s into %s\n", dataset.clouds.size(), def.tag(),
              g.out.c_str());
  return 0;
}

int cmd_eval(const GlobalArgs& g, const std::string& gen_manifest, const std::string& ref_manifest,
             int grid) {
  dataio::Dataset gen_data = dataio::load_dataset(gen_manifest);
  dataio::Dataset ref_data = dataio::load_dataset(ref_manifest);
  if (gen_data.n_classes != ref_data.n_classes)
    throw InvalidInput("eval: class counts differ between sets");
  std::vector<MetricReport> per_class;
  std::ostringstream per_class_csv;
  per_class_csv << "scope,mmd_cd,mmd_emd,cov_cd_x100,cov_emd_x100,jsd_x100\n";
  for (int c = 0; c < gen_data.n_classes; ++c) {
    CloudSet gs = class_subset(gen_data, c);
    CloudSet rs = class_subset(ref_data, c);
    if (gs.clouds.empty() || rs.clouds.empty())
      throw InvalidInput("eval: class " + std::to_string(c) + " is empty in one set");
    MetricReport r = metric_report(gs, rs, grid);
    per_class.push_back(r);
    char row[256];
    std::snprintf(row, sizeof(row), "%s,%.8g,%.8g,%.6f,%.6f,%.6f\n",
                  ref_data.class_names[c].c_str(), r.mmd_cd, r.mmd_emd, 100.0 * r.cov_cd,
                  100.0 * r.cov_emd, 100.0 * r.jsd);
    per_class_csv << row;
  }
  MetricReport macro;
  for (const auto& r : per_class) {
    macro.mmd_cd += r.mmd_cd / per_class.size();
    macro.mmd_emd += r.mmd_emd / per_class.size();
    macro.cov_cd += r.cov_cd / per_class.size();
    macro.cov_emd += r.cov_emd / per_class.size();
    macro.jsd += r.jsd / per_class.size();
  }
  ensure_out(g.out);
  std::string csv = metric_report_csv(macro);
  dataio::write_text_file(join(g.out, "metric_report.csv"), csv);
  dataio::write_text_file(join(g.out, "metric_report_per_class.csv"), per_class_csv.str());
  std::fputs(csv.c_str(), stdout);
  return 0;
}

int cmd_transfer(const GlobalArgs& g, const std::string& gen_ckpt, const std::string& aux_ckpt,
                 const std::string& victims_arg, int original, int n_samples,
                 const std::string& mode, int target_label) {
  GeneratorState gen = load_generator(gen_ckpt);
  DiscriminatorState aux = load_discriminator(aux_ckpt);
  std::vector<std::string> paths = split_csv(victims_arg);
  if (paths.empty()) throw InvalidInput("transfer: need at least one victim checkpoint");
  std::vector<VictimState> victims;
  victims.reserve(paths.size());
  for (const auto& p : paths) victims.push_back(load_victim(p));
  std::vector<std::pair<std::string, const VictimState*>> list;
  for (std::size_t i = 0; i < victims.size(); ++i)
    list.emplace_back(victim_arch_name(victims[i].cfg.arch) + std::string("#") + std::to_string(i),
                      &victims[i]);
  auto entries =
      transfer_eval(gen, aux, list, original, n_samples, parse_mode(mode), target_label, g.seed);
  std::string csv = transfer_table_csv(entries);
  ensure_out(g.out);
  dataio::write_text_file(join(g.out, "transfer.csv"), csv);
  std::fputs(csv.c_str(), stdout);
  return 0;
}

int cmd_sweep(const GlobalArgs& g, const std::string& data, const std::string& gen_ckpt,
              const std::string& disc_ckpt, const std::string& victim_ckpt,
              const std::string& values_arg, int steps, int batch, const std::string& mode,
              int target_label, int eval_samples, int gen_per_class, int grid) {
  dataio::Dataset dataset = dataio::load_dataset(data);
  VictimState victim = load_victim(victim_ckpt);
  std::vector<double> values = split_doubles(values_arg);
  SweepConfig cfg;
  cfg.train =
      build_train_config(g, TrainStage::kAdversarial, steps, batch, 0.0, mode, target_label);
  cfg.eval_samples = eval_samples;
  cfg.gen_per_class = gen_per_class;
  cfg.grid_resolution = grid;
  std::vector<SweepRow> rows = lambda1_sweep(values, dataset, gen_ckpt, disc_ckpt, victim, cfg);
  std::string csv = sweep_table_csv(rows);
  ensure_out(g.out);
  dataio::write_text_file(join(g.out, "sweep.csv"), csv);
  std::fputs(csv.c_str(), stdout);
  return 0;
}

int cmd_export(const GlobalArgs& g, const std::string& input) {
  ensure_out(g.out);
  if (input.size() > 5 && input.substr(input.size() - 5) == ".pcad") {
    PointCloud cloud = dataio::read_cloud(input);
    std::string name = fs::path(input).stem().string() + ".xyz";
    dataio::export_xyz(join(g.out, name), cloud);
    std::printf("exported 1 cloud to %s\n", g.out.c_str());
    return 0;
  }
  dataio::DatasetManifest m = dataio::load_manifest(input);
  const fs::path base = fs::path(input).parent_path();
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    PointCloud cloud = dataio::read_cloud((base / m.entries[i].path).string());
    std::string name = fs::path(m.entries[i].path).stem().string() + ".xyz";
    dataio::export_xyz(join(g.out, name), cloud);
  }
  std::printf("exported %zu clouds to %s\n", m.entries.size(), g.out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"unrestricted 3D adversarial point cloud toolkit"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalArgs g;
  int threads = 0;
  app.add_option("--seed", g.seed, "global RNG seed");
  app.add_option("--config", g.config, "key = value config file");
  app.add_option("--out", g.out, "output directory");
  app.add_option("--threads", threads, "worker threads (0 = library default, 1 = single-threaded)");

  // gen-data
  auto* gen_data = app.add_subcommand("gen-data", "sample a synthetic shape dataset");
  std::string shapes = "sphere,cube";
  int n_points = 64, count = 50;
  double scale_jitter = 0.1, rot_jitter = 0.3, noise_sigma = 0.01;
  gen_data->add_option("--shapes", shapes, "comma-separated shape families");
  gen_data->add_option("--n-points", n_points, "points per cloud");
  gen_data->add_option("--count", count, "clouds per class");
  gen_data->add_option("--scale-jitter", scale_jitter, "uniform scale jitter");
  gen_data->add_option("--rot-jitter", rot_jitter, "rotation jitter (radians)");
  gen_data->add_option("--noise", noise_sigma, "per-point Gaussian noise sigma");

  // train-victim
  auto* tv = app.add_subcommand("train-victim", "train a victim classifier");
  std::string tv_data, tv_arch = "pointnet_lite";
  int tv_steps = 400, tv_batch = 32, tv_knn = 8;
  double tv_lr = 1e-3, tv_val = 0.2;
  tv->add_option("--data", tv_data, "dataset manifest")->required();
  tv->add_option("--arch", tv_arch, "pointnet_lite or edgeconv_lite");
  tv->add_option("--steps", tv_steps, "optimizer steps");
  tv->add_option("--batch", tv_batch, "batch size");
  tv->add_option("--lr", tv_lr, "learning rate");
  tv->add_option("--val-fraction", tv_val, "validation fraction");
  tv->add_option("--knn-k", tv_knn, "edgeconv neighbor count");

  // train-gan
  auto* tg = app.add_subcommand("train-gan", "stage-1 GAN training");
  std::string tg_data, tg_branching;
  int tg_steps = 500, tg_batch = 8, tg_noise = 32, tg_embed = 8;
  tg->add_option("--data", tg_data, "dataset manifest")->required();
  tg->add_option("--steps", tg_steps, "generator steps");
  tg->add_option("--batch", tg_batch, "batch size");
  tg->add_option("--branching", tg_branching, "comma-separated tree branching factors");
  tg->add_option("--noise-dim", tg_noise, "noise dimension");
  tg->add_option("--embed-dim", tg_embed, "label embedding dimension");

  // train-adv
  auto* ta = app.add_subcommand("train-adv", "stage-2 adversarial training");
  std::string ta_data, ta_gen, ta_disc, ta_victim, ta_mode = "untargeted";
  int ta_steps = 500, ta_batch = 8, ta_target = -1;
  double ta_lambda1 = 0.01;
  ta->add_option("--data", ta_data, "dataset manifest")->required();
  ta->add_option("--gen", ta_gen, "stage-1 generator checkpoint")->required();
  ta->add_option("--disc", ta_disc, "stage-1 discriminator checkpoint")->required();
  ta->add_option("--victim", ta_victim, "victim checkpoint")->required();
  ta->add_option("--steps", ta_steps, "generator steps");
  ta->add_option("--batch", ta_batch, "batch size");
  ta->add_option("--lambda1", ta_lambda1, "objective loss weight");
  ta->add_option("--mode", ta_mode, "targeted or untargeted");
  ta->add_option("--target", ta_target, "target label for targeted mode");

  // attack
  auto* at = app.add_subcommand("attack", "evaluate attack success rate");
  std::string at_gen, at_victim, at_aux, at_mode = "untargeted", at_defense = "none", at_dump;
  int at_samples = 200, at_target = -1, at_sor_k = 2;
  double at_srs_drop = 0.2, at_sor_alpha = 1.1;
  at->add_option("--gen", at_gen, "generator checkpoint")->required();
  at->add_option("--victim", at_victim, "victim checkpoint")->required();
  at->add_option("--aux", at_aux, "discriminator checkpoint (auxiliary classifier)")->required();
  at->add_option("--n-samples", at_samples, "samples to draw");
  at->add_option("--mode", at_mode, "targeted or untargeted");
  at->add_option("--target", at_target, "target label for targeted mode");
  at->add_option("--defense", at_defense, "none, srs or sor");
  at->add_option("--srs-drop", at_srs_drop, "srs drop ratio");
  at->add_option("--sor-k", at_sor_k, "sor neighbor count");
  at->add_option("--sor-alpha", at_sor_alpha, "sor threshold multiplier");
  at->add_option("--dump-clouds", at_dump, "also write the generated clouds + manifest here");

  // defend
  auto* df = app.add_subcommand("defend", "apply SRS/SOR to a cloud set");
  std::string df_in, df_method = "srs";
  int df_sor_k = 2;
  double df_srs_drop = 0.2, df_sor_alpha = 1.1;
  df->add_option("--in", df_in, "input manifest")->required();
  df->add_option("--method", df_method, "srs or sor");
  df->add_option("--srs-drop", df_srs_drop, "srs drop ratio");
  df->add_option("--sor-k", df_sor_k, "sor neighbor count");
  df->add_option("--sor-alpha", df_sor_alpha, "sor threshold multiplier");

  // eval
  auto* ev = app.add_subcommand("eval", "metric report between two cloud sets");
  std::string ev_gen, ev_ref;
  int ev_grid = 28;
  ev->add_option("--gen", ev_gen, "generated set manifest")->required();
  ev->add_option("--ref", ev_ref, "reference set manifest")->required();
  ev->add_option("--grid", ev_grid, "JSD voxel grid resolution");

  // transfer
  auto* tr = app.add_subcommand("transfer", "transfer-attack table across victims");
  std::string tr_gen, tr_aux, tr_victims, tr_mode = "untargeted";
  int tr_original = 0, tr_samples = 200, tr_target = -1;
  tr->add_option("--gen", tr_gen, "generator checkpoint")->required();
  tr->add_option("--aux", tr_aux, "discriminator checkpoint")->required();
  tr->add_option("--victims", tr_victims, "comma-separated victim checkpoints")->required();
  tr->add_option("--original", tr_original, "index of the original victim");
  tr->add_option("--n-samples", tr_samples, "samples to draw");
  tr->add_option("--mode", tr_mode, "targeted or untargeted");
  tr->add_option("--target", tr_target, "target label for targeted mode");

  // sweep
  auto* sw = app.add_subcommand("sweep", "stage-2 runs over a list of lambda1 values");
  std::string sw_data, sw_gen, sw_disc, sw_victim, sw_values = "0.001,0.01,0.1",
                                                   sw_mode = "untargeted";
  int sw_steps = 500, sw_batch = 8, sw_target = -1, sw_eval = 100, sw_gpc = 20, sw_grid = 28;
  sw->add_option("--data", sw_data, "dataset manifest")->required();
  sw->add_option("--gen", sw_gen, "stage-1 generator checkpoint")->required();
  sw->add_option("--disc", sw_disc, "stage-1 discriminator checkpoint")->required();
  sw->add_option("--victim", sw_victim, "victim checkpoint")->required();
  sw->add_option("--lambda1", sw_values, "comma-separated lambda1 values");
  sw->add_option("--steps", sw_steps, "stage-2 steps per value");
  sw->add_option("--batch", sw_batch, "batch size");
  sw->add_option("--mode", sw_mode, "targeted or untargeted");
  sw->add_option("--target", sw_target, "target label");
  sw->add_option("--eval-samples", sw_eval, "attack evaluation draws per value");
  sw->add_option("--gen-per-class", sw_gpc, "generated clouds per class for metrics");
  sw->add_option("--grid", sw_grid, "JSD grid resolution");

  // export
  auto* ex = app.add_subcommand("export", "write clouds as x y z text");
  std::string ex_in;
  ex->add_option("--in", ex_in, "manifest or .pcad file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    set_num_threads(threads);
    if (*gen_data)
      return cmd_gen_data(g, shapes, n_points, count, scale_jitter, rot_jitter, noise_sigma);
    if (*tv) return cmd_train_victim(g, tv_data, tv_arch, tv_steps, tv_batch, tv_lr, tv_val, tv_knn);
    if (*tg) return cmd_train_gan(g, tg_data, tg_steps, tg_batch, tg_branching, tg_noise, tg_embed);
    if (*ta)
      return cmd_train_adv(g, ta_data, ta_gen, ta_disc, ta_victim, ta_steps, ta_batch, ta_lambda1,
                           ta_mode, ta_target);
    if (*at)
      return cmd_attack(g, at_gen, at_victim, at_aux, at_samples, at_mode, at_target, at_defense,
                        at_srs_drop, at_sor_k, at_sor_alpha, at_dump);
    if (*df) return cmd_defend(g, df_in, df_method, df_srs_drop, df_sor_k, df_sor_alpha);
    if (*ev) return cmd_eval(g, ev_gen, ev_ref, ev_grid);
    if (*tr)
      return cmd_transfer(g, tr_gen, tr_aux, tr_victims, tr_original, tr_samples, tr_mode,
                          tr_target);
    if (*sw)
      return cmd_sweep(g, sw_data, sw_gen, sw_disc, sw_victim, sw_values, sw_steps, sw_batch,
                       sw_mode, sw_target, sw_eval, sw_gpc, sw_grid);
    if (*ex) return cmd_export(g, ex_in);
    std::fprintf(stderr, "no subcommand given\n");
    return 1;
  } catch (const InvalidInput& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "runtime failure: %s\n", e.what());
    return 2;
  }
}
