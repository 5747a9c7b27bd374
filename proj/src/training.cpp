#include "pcadv/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <sstream>

#include "pcadv/defense.hpp"

namespace pcadv {

void TrainConfig::validate() const {
  if (steps < 0) throw InvalidConfig("train: steps must be non-negative");
  if (batch_size < 1) throw InvalidConfig("train: batch size must be positive");
  if (critic_steps < 1) throw InvalidConfig("train: critic steps must be positive");
  if (!(lr_gen > 0.0) || !(lr_critic > 0.0))
    throw InvalidConfig("train: learning rates must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw InvalidConfig("train: moment coefficients must be in [0,1)");
  if (checkpoint_interval < 1) throw InvalidConfig("train: checkpoint interval must be positive");
  if (outlier_k < 1) throw InvalidConfig("train: outlier k must be positive");
  if (sn_power_iters < 1) throw InvalidConfig("train: power iterations must be positive");
  weights.validate();
}

std::string train_log_csv(std::span<const TrainLogRecord> records) {
  std::ostringstream out;
  out << "step,l_dis,l_obj,l_out,l_ul,critic_loss,gp,asr,aux_acc\n";
  out.precision(17);
  for (const auto& r : records)
    out << r.step << "," << r.l_dis << "," << r.l_obj << "," << r.l_out << "," << r.l_ul << ","
        << r.critic_loss << "," << r.gp << "," << r.asr << "," << r.aux_acc << "\n";
  return out.str();
}

std::string critic_log_csv(std::span<const CriticLogRecord> records) {
  std::ostringstream out;
  out << "step,sub_step,loss,gp\n";
  out.precision(17);
  for (const auto& r : records)
    out << r.step << "," << r.sub_step << "," << r.loss << "," << r.gp << "\n";
  return out.str();
}

void write_train_log(const std::string& path, std::span<const TrainLogRecord> records) {
  dataio::write_text_file(path, train_log_csv(records));
}

void write_critic_log(const std::string& path, std::span<const CriticLogRecord> records) {
  dataio::write_text_file(path, critic_log_csv(records));
}

// --------------------------------------------------------------------------
// Adam

AdamState adam_init(const ParamStore& params) {
  AdamState s;
  for (const auto& t : params.tensors) {
    if (!t.trainable) continue;
    s.m.emplace_back(t.data.size(), 0.0);
    s.v.emplace_back(t.data.size(), 0.0);
  }
  return s;
}

void optimizer_step(ParamStore& params, const std::vector<std::vector<double>>& grads,
                    AdamState& adam, double lr, double beta1, double beta2, double eps) {
  std::size_t slot = 0;
  for (auto& t : params.tensors) {
    if (!t.trainable) continue;
    if (slot >= grads.size() || grads[slot].size() != t.data.size())
      throw InvalidInput("optimizer_step: gradient shape mismatch at " + t.name);
    ++slot;
  }
  if (slot != grads.size()) throw InvalidInput("optimizer_step: gradient count mismatch");

  adam.t += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(adam.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(adam.t));
  slot = 0;
  for (auto& t : params.tensors) {
    if (!t.trainable) continue;
    auto& m = adam.m[slot];
    auto& v = adam.v[slot];
    const auto& g = grads[slot];
    for (std::size_t i = 0; i < t.data.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      t.data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
    ++slot;
  }
}

std::vector<std::vector<double>> trainable_grads(const ad::Tape& t, int loss,
                                                 const BoundParams& bound) {
  std::vector<int> ids;
  for (std::size_t i = 0; i < bound.store->tensors.size(); ++i)
    if (bound.store->tensors[i].trainable) ids.push_back(bound.node_ids[i]);
  return t.gradients(loss, ids);
}

// --------------------------------------------------------------------------
// Victim training

VictimReport train_victim(const dataio::Dataset& dataset, VictimState& victim,
                          const VictimTrainConfig& cfg) {
  if (dataset.n_classes < 2) throw InvalidInput("train_victim: dataset needs >= 2 classes");
  if (dataset.n_classes != victim.cfg.n_classes)
    throw InvalidConfig("train_victim: victim class count does not match the dataset");
  if (cfg.steps < 0 || cfg.batch_size < 1) throw InvalidConfig("train_victim: bad step/batch");
  if (!(cfg.val_fraction >= 0.0 && cfg.val_fraction < 1.0))
    throw InvalidConfig("train_victim: val fraction must be in [0,1)");

  // Stratified split, deterministic per seed.
  Rng split_rng = Rng(cfg.rng_seed).derive(0x5b117ULL);
  std::vector<int> train_idx, val_idx;
  for (int c = 0; c < dataset.n_classes; ++c) {
    std::vector<int> members;
    for (std::size_t i = 0; i < dataset.labels.size(); ++i)
      if (dataset.labels[i] == c) members.push_back(static_cast<int>(i));
    for (std::size_t i = members.size(); i > 1; --i)
      std::swap(members[i - 1], members[split_rng.uniform_int(i)]);
    const int n_val = static_cast<int>(std::floor(cfg.val_fraction * members.size()));
    for (std::size_t i = 0; i < members.size(); ++i)
      (static_cast<int>(i) < n_val ? val_idx : train_idx).push_back(members[i]);
  }
  if (train_idx.empty()) throw InvalidInput("train_victim: empty training split");

  Rng batch_rng = Rng(cfg.rng_seed).derive(0xba7c4ULL);
  AdamState adam = adam_init(victim.params);
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<int> batch(cfg.batch_size);
    for (int& b : batch) b = train_idx[batch_rng.uniform_int(train_idx.size())];
    ad::Tape t;
    BoundParams bound = bind_params(t, victim.params, true);
    std::vector<int> rows;
    std::vector<int> labels;
    for (int b : batch) {
      int cn = t.constant(dataset.clouds[b].n(), 3, dataset.clouds[b].pts);
      rows.push_back(victim_forward(t, victim, bound, cn));
      labels.push_back(dataset.labels[b]);
    }
    int loss = t.mean(t.softmax_ce_rows(t.vstack(rows), labels));
    if (!std::isfinite(t.scalar(loss)))
      throw RuntimeFailure("train_victim: non-finite loss at step " + std::to_string(step));
    optimizer_step(victim.params, trainable_grads(t, loss, bound), adam, cfg.lr, cfg.beta1,
                   cfg.beta2);
  }

  auto accuracy = [&](const std::vector<int>& idx) {
    if (idx.empty()) return 0.0;
    int correct = 0;
    for (int i : idx)
      if (argmax_label(victim_logits(victim, dataset.clouds[i])) == dataset.labels[i]) ++correct;
    return static_cast<double>(correct) / static_cast<double>(idx.size());
  };
  VictimReport rep;
  rep.train_accuracy = accuracy(train_idx);
  rep.val_accuracy = accuracy(val_idx);
  return rep;
}

// --------------------------------------------------------------------------
// GAN stages

namespace {

void check_finite(double v, const char* component, int step) {
  if (!std::isfinite(v))
    throw RuntimeFailure(std::string("training aborted: non-finite ") + component + " at step " +
                         std::to_string(step));
}

UniformLossParams calibrate_uniform(const dataio::Dataset& dataset, const TrainConfig& cfg) {
  const int n = dataset.points_per_cloud;
  int n_seeds = cfg.uniform_seeds > 0 ? cfg.uniform_seeds : std::max(4, n / 16);
  n_seeds = std::min(n_seeds, n);
  // Mean observed cluster size over the first batch of real clouds.
  const int count = std::min<int>(cfg.batch_size, static_cast<int>(dataset.clouds.size()));
  double total = 0.0;
  int clusters = 0;
  for (int i = 0; i < count; ++i) {
    PointCloud norm = dataio::normalize(dataset.clouds[i]);
    for (int seed : farthest_point_sample(norm, n_seeds, 0)) {
      std::array<double, 3> c = {norm.at(seed, 0), norm.at(seed, 1), norm.at(seed, 2)};
      total += static_cast<double>(ball_query(norm, c, cfg.uniform_radius).size());
      clusters += 1;
    }
  }
  const double n_hat = std::max(1.0, clusters > 0 ? total / clusters : 1.0);
  return UniformLossParams::make(n_seeds, cfg.uniform_radius, n_hat);
}

void assert_spectral_window(const DiscriminatorState& disc, int step) {
  for (double s : normalized_sigma_estimates(disc)) {
    if (s < 0.95 || s > 1.05)
      throw RuntimeFailure("spectral norm estimate " + std::to_string(s) +
                           " outside [0.95, 1.05] at step " + std::to_string(step));
  }
}

TrainLog run_stage(const dataio::Dataset& dataset, GeneratorState& gen,
                   DiscriminatorState& disc, const VictimState* victim, const TrainConfig& cfg) {
  cfg.validate();
  if (dataset.clouds.empty()) throw InvalidInput("train: dataset is empty");
  if (dataset.n_classes != gen.cfg.n_classes || dataset.n_classes != disc.cfg.n_classes)
    throw InvalidConfig("train: class counts of dataset, generator and discriminator differ");
  if (dataset.points_per_cloud != gen.cfg.points())
    throw InvalidConfig("train: generator point count does not match the dataset");
  if (cfg.stage == TrainStage::kAdversarial) {
    if (victim == nullptr) throw InvalidConfig("train: adversarial stage needs a victim");
    if (victim->cfg.n_classes != dataset.n_classes)
      throw InvalidConfig("train: victim class count does not match the dataset");
  }

  AttackConfig attack;
  attack.mode = cfg.attack_mode;
  attack.target_label = cfg.target_label;
  attack.weights = cfg.weights;
  attack.mask_successful = cfg.mask_successful;
  attack.validate(dataset.n_classes);

  UniformLossParams uniform_params =
      cfg.weights.lambda3 > 0.0 ? calibrate_uniform(dataset, cfg) : UniformLossParams{};

  Rng data_rng = Rng(cfg.rng_seed).derive(0xda7aULL);
  Rng noise_rng = Rng(cfg.rng_seed).derive(0x7a03ULL);
  Rng label_rng = Rng(cfg.rng_seed).derive(0x1abe1ULL);
  Rng eps_rng = Rng(cfg.rng_seed).derive(0xe5ULL);

  AdamState gen_adam = adam_init(gen.params);
  AdamState disc_adam = adam_init(disc.params);

  const int b = cfg.batch_size;
  const int zdim = gen.cfg.noise_dim;
  const int m = gen.cfg.n_classes;

  auto draw_label = [&](Rng& rng) {
    if (attack.mode == AttackMode::kTargeted) {
      int pick = static_cast<int>(rng.uniform_int(m - 1));
      return pick >= attack.target_label ? pick + 1 : pick;
    }
    return static_cast<int>(rng.uniform_int(m));
  };

  TrainLog log;
  log.generator.reserve(cfg.steps);

  for (int step = 1; step <= cfg.steps; ++step) {
    double last_critic_loss = 0.0, last_gp = 0.0;

    for (int cs = 0; cs < cfg.critic_steps; ++cs) {
      std::vector<int> real_idx(b);
      for (int& i : real_idx) i = static_cast<int>(data_rng.uniform_int(dataset.clouds.size()));
      std::vector<PointCloud> fakes(b);
      std::vector<int> fake_labels(b);
      for (int i = 0; i < b; ++i) {
        std::vector<double> z(zdim);
        for (double& v : z) v = noise_rng.normal();
        fake_labels[i] = draw_label(label_rng);
        fakes[i] = generator_sample(gen, z, fake_labels[i]);
      }
      std::vector<double> eps(b);
      for (double& e : eps) e = eps_rng.uniform();

      update_power_vectors(disc, cfg.sn_power_iters);
      ad::Tape t;
      BoundParams disc_bound = bind_params(t, disc.params, true);

      std::vector<int> real_nodes(b), fake_nodes(b);
      std::vector<int> d_real(b), d_fake(b);
      std::vector<int> logits_real_rows(b), logits_fake_rows(b);
      std::vector<int> real_labels(b);
      for (int i = 0; i < b; ++i) {
        const PointCloud& rc = dataset.clouds[real_idx[i]];
        real_labels[i] = dataset.labels[real_idx[i]];
        real_nodes[i] = t.constant(rc.n(), 3, rc.pts);
        fake_nodes[i] = t.constant(fakes[i].n(), 3, fakes[i].pts);
        DiscOut ro = discriminator_forward(t, disc, disc_bound, real_nodes[i]);
        DiscOut fo = discriminator_forward(t, disc, disc_bound, fake_nodes[i]);
        d_real[i] = ro.critic;
        d_fake[i] = fo.critic;
        logits_real_rows[i] = ro.logits;
        logits_fake_rows[i] = fo.logits;
      }

      CriticFn critic_fn = [&](ad::Tape& tt, int node) {
        if (&tt == &t) return discriminator_forward(tt, disc, disc_bound, node).critic;
        BoundParams scratch = bind_params(tt, disc.params, false);
        return discriminator_forward(tt, disc, scratch, node).critic;
      };
      int gp = gradient_penalty(t, critic_fn, real_nodes, fake_nodes, eps);
      int loss = critic_loss(t, d_real, d_fake, t.vstack(logits_real_rows),
                             t.vstack(logits_fake_rows), real_labels, fake_labels, cfg.weights,
                             gp, cfg.aux_weight);
      last_gp = t.scalar(gp);
      last_critic_loss = t.scalar(loss);
      check_finite(last_gp, "gradient penalty", step);
      check_finite(last_critic_loss, "critic loss", step);
      log.critic.push_back({step, cs, last_critic_loss, last_gp});
      optimizer_step(disc.params, trainable_grads(t, loss, disc_bound), disc_adam, cfg.lr_critic,
                     cfg.beta1, cfg.beta2);
    }

    // Generator update.
    std::vector<std::vector<double>> zs(b, std::vector<double>(zdim));
    std::vector<int> labels(b);
    for (int i = 0; i < b; ++i) {
      for (double& v : zs[i]) v = noise_rng.normal();
      labels[i] = draw_label(label_rng);
    }
    ad::Tape t;
    BoundParams gen_bound = bind_params(t, gen.params, true);
    BoundParams disc_bound = bind_params(t, disc.params, false);
    BoundParams victim_bound;
    if (cfg.stage == TrainStage::kAdversarial) victim_bound = bind_params(t, victim->params, false);

    std::vector<int> clouds(b);
    for (int i = 0; i < b; ++i) {
      int zn = t.constant(1, zdim, zs[i]);
      clouds[i] = generator_forward(t, gen, gen_bound, zn, labels[i]);
    }
    GeneratorLossResult glr = generator_loss(
        t, clouds, labels, disc, disc_bound, victim,
        cfg.stage == TrainStage::kAdversarial ? &victim_bound : nullptr, attack, uniform_params,
        cfg.outlier_k, cfg.stage);
    check_finite(glr.l_dis, "discriminative loss", step);
    check_finite(glr.l_obj, "objective loss", step);
    check_finite(glr.l_out, "outlier loss", step);
    check_finite(glr.l_ul, "uniform loss", step);
    check_finite(glr.total, "generator loss", step);
    optimizer_step(gen.params, trainable_grads(t, glr.node, gen_bound), gen_adam, cfg.lr_gen,
                   cfg.beta1, cfg.beta2);

    TrainLogRecord rec;
    rec.step = step;
    rec.l_dis = glr.l_dis;
    rec.l_obj = glr.l_obj;
    rec.l_out = glr.l_out;
    rec.l_ul = glr.l_ul;
    rec.critic_loss = last_critic_loss;
    rec.gp = last_gp;
    int aux_correct = 0;
    for (int i = 0; i < b; ++i) aux_correct += glr.aux_preds[i] == labels[i] ? 1 : 0;
    rec.aux_acc = static_cast<double>(aux_correct) / b;
    if (cfg.stage == TrainStage::kAdversarial) {
      std::vector<int> preds = glr.victim_preds;
      if (preds.empty()) {
        for (int i = 0; i < b; ++i) {
          PointCloud c;
          c.pts = t.value(clouds[i]);
          preds.push_back(argmax_label(victim_logits(*victim, c)));
        }
      }
      int wins = 0;
      for (int i = 0; i < b; ++i) {
        bool success = attack.mode == AttackMode::kTargeted ? preds[i] == attack.target_label
                                                            : preds[i] != labels[i];
        wins += success ? 1 : 0;
      }
      rec.asr = static_cast<double>(wins) / b;
    }
    log.generator.push_back(rec);

    if (!cfg.checkpoint_dir.empty() && step % cfg.checkpoint_interval == 0) {
      assert_spectral_window(disc, step);
      namespace fs = std::filesystem;
      fs::create_directories(cfg.checkpoint_dir);
      save_generator((fs::path(cfg.checkpoint_dir) / ("gen_step" + std::to_string(step) + ".ckpt"))
                         .string(),
                     gen);
      save_discriminator(
          (fs::path(cfg.checkpoint_dir) / ("disc_step" + std::to_string(step) + ".ckpt")).string(),
          disc);
    }
  }
  return log;
}

}  // namespace

TrainLog train_gan_stage(const dataio::Dataset& dataset, GeneratorState& gen,
                         DiscriminatorState& disc, const TrainConfig& cfg) {
  if (cfg.stage != TrainStage::kGan) throw InvalidConfig("train_gan_stage: stage must be gan");
  return run_stage(dataset, gen, disc, nullptr, cfg);
}

TrainLog train_adversarial_stage(const dataio::Dataset& dataset, GeneratorState& gen,
                                 DiscriminatorState& disc, const VictimState& victim,
                                 const TrainConfig& cfg) {
  if (cfg.stage != TrainStage::kAdversarial)
    throw InvalidConfig("train_adversarial_stage: stage must be adversarial");
  return run_stage(dataset, gen, disc, &victim, cfg);
}

// --------------------------------------------------------------------------
// lambda1 sweep

namespace {

MetricReport macro_average(std::span<const MetricReport> reports) {
  MetricReport avg;
  for (const auto& r : reports) {
    avg.mmd_cd += r.mmd_cd;
    avg.mmd_emd += r.mmd_emd;
    avg.cov_cd += r.cov_cd;
    avg.cov_emd += r.cov_emd;
    avg.jsd += r.jsd;
  }
  const double n = static_cast<double>(reports.size());
  avg.mmd_cd /= n;
  avg.mmd_emd /= n;
  avg.cov_cd /= n;
  avg.cov_emd /= n;
  avg.jsd /= n;
  return avg;
}

}  // namespace

std::vector<SweepRow> lambda1_sweep(std::span<const double> values,
                                    const dataio::Dataset& dataset,
                                    const std::string& gen_ckpt_path,
                                    const std::string& disc_ckpt_path, const VictimState& victim,
                                    const SweepConfig& cfg) {
  if (values.empty()) throw InvalidInput("lambda1_sweep: need at least one value");
  std::vector<SweepRow> rows;
  for (double v : values) {
    GeneratorState gen = load_generator(gen_ckpt_path);
    DiscriminatorState disc = load_discriminator(disc_ckpt_path);
    TrainConfig tc = cfg.train;
    tc.stage = TrainStage::kAdversarial;
    tc.weights.lambda1 = v;
    train_adversarial_stage(dataset, gen, disc, victim, tc);

    SweepRow row;
    row.lambda1 = v;
    AttackReport rep = attack_success_rate(gen, victim, disc, cfg.eval_samples, tc.attack_mode,
                                           tc.target_label, nullptr, tc.rng_seed);
    row.asr = rep.asr();

    Rng metric_rng = Rng(tc.rng_seed).derive(0x3e7a1ULL);
    std::vector<MetricReport> per_class;
    for (int c = 0; c < dataset.n_classes; ++c) {
      CloudSet ref;
      for (std::size_t i = 0; i < dataset.clouds.size(); ++i)
        if (dataset.labels[i] == c) ref.clouds.push_back(dataset.clouds[i]);
      if (ref.clouds.empty()) continue;
      CloudSet gen_set;
      for (int s = 0; s < cfg.gen_per_class; ++s) {
        std::vector<double> z(gen.cfg.noise_dim);
        for (double& x : z) x = metric_rng.normal();
        gen_set.clouds.push_back(generator_sample(gen, z, c));
      }
      per_class.push_back(metric_report(gen_set, ref, cfg.grid_resolution));
    }
    row.metrics = macro_average(per_class);
    rows.push_back(row);
  }
  return rows;
}

std::string sweep_table_csv(std::span<const SweepRow> rows) {
  std::ostringstream out;
  out << "lambda1,asr,mmd_cd,mmd_emd,cov_cd_x100,cov_emd_x100,jsd_x100\n";
  for (const auto& r : rows) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%.6g,%.6f,%.8g,%.8g,%.6f,%.6f,%.6f\n", r.lambda1, r.asr,
                  r.metrics.mmd_cd, r.metrics.mmd_emd, 100.0 * r.metrics.cov_cd,
                  100.0 * r.metrics.cov_emd, 100.0 * r.metrics.jsd);
    out << buf;
  }
  return out.str();
}

}  // namespace pcadv
