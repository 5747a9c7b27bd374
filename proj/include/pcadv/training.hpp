#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pcadv/dataio.hpp"
#include "pcadv/losses.hpp"
#include "pcadv/metrics.hpp"
#include "pcadv/models.hpp"

namespace pcadv {

struct TrainConfig {
  TrainStage stage = TrainStage::kGan;
  int steps = 500;
  int batch_size = 8;
  int critic_steps = 5;
  double lr_gen = 1e-3;
  double lr_critic = 1e-3;
  double beta1 = 0.5;
  double beta2 = 0.9;
  LossWeights weights;
  std::uint64_t rng_seed = 1;
  int checkpoint_interval = 100;
  int outlier_k = 4;
  int uniform_seeds = 0;      // 0 -> max(4, N/16)
  double uniform_radius = 0.25;
  int sn_power_iters = 3;
  double aux_weight = 1.0;
  AttackMode attack_mode = AttackMode::kUntargeted;
  int target_label = -1;
  bool mask_successful = true;
  std::string checkpoint_dir;  // empty -> no interval checkpoints

  void validate() const;
};

struct TrainLogRecord {
  int step = 0;
  double l_dis = 0.0;
  double l_obj = 0.0;
  double l_out = 0.0;
  double l_ul = 0.0;
  double critic_loss = 0.0; // last critic update of the step
  double gp = 0.0;
  double asr = 0.0;
  double aux_acc = 0.0;
};

struct CriticLogRecord {
  int step = 0;
  int sub_step = 0;
  double loss = 0.0;
  double gp = 0.0;
};

struct TrainLog {
  std::vector<TrainLogRecord> generator; // one per generator step
  std::vector<CriticLogRecord> critic;   // one per critic update
};

std::string train_log_csv(std::span<const TrainLogRecord> records);
std::string critic_log_csv(std::span<const CriticLogRecord> records);
void write_train_log(const std::string& path, std::span<const TrainLogRecord> records);
void write_critic_log(const std::string& path, std::span<const CriticLogRecord> records);

// --- optimizer ---

struct AdamState {
  std::vector<std::vector<double>> m, v; // one slot per trainable tensor
  long t = 0;
};

AdamState adam_init(const ParamStore& params);

// Bias-corrected adaptive-moment update over the trainable tensors; grads
// must be parallel to them.
void optimizer_step(ParamStore& params, const std::vector<std::vector<double>>& grads,
                    AdamState& adam, double lr, double beta1, double beta2, double eps = 1e-8);

// Gradients of a scalar node for every trainable tensor of a binding, in
// store order.
std::vector<std::vector<double>> trainable_grads(const ad::Tape& t, int loss,
                                                 const BoundParams& bound);

// --- victim training ---

struct VictimTrainConfig {
  int steps = 400;
  int batch_size = 32;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double val_fraction = 0.2;
  std::uint64_t rng_seed = 1;
};

struct VictimReport {
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;
};

VictimReport train_victim(const dataio::Dataset& dataset, VictimState& victim,
                          const VictimTrainConfig& cfg);

// --- GAN stages ---

// Stage 1: critic updates (Wasserstein + auxiliary classifier + gradient
// penalty) alternating with generator updates without the objective term.
TrainLog train_gan_stage(const dataio::Dataset& dataset, GeneratorState& gen,
                         DiscriminatorState& disc, const TrainConfig& cfg);

// Stage 2: same loop plus the failure-masked objective loss against the
// frozen victim. Victim parameters are never updated.
TrainLog train_adversarial_stage(const dataio::Dataset& dataset, GeneratorState& gen,
                                 DiscriminatorState& disc, const VictimState& victim,
                                 const TrainConfig& cfg);

// --- lambda1 sweep ---

struct SweepRow {
  double lambda1 = 0.0;
  double asr = 0.0;
  MetricReport metrics;
};

struct SweepConfig {
  TrainConfig train;        // stage forced to adversarial per run
  int eval_samples = 50;    // attack-success evaluation draws
  int gen_per_class = 20;   // generated clouds per class for the metric report
  int grid_resolution = 28;
};

// Runs stage 2 from the same stage-1 checkpoints for every value, then scores
// attack success and generation quality. Rows come back in input order.
std::vector<SweepRow> lambda1_sweep(std::span<const double> values,
                                    const dataio::Dataset& dataset,
                                    const std::string& gen_ckpt_path,
                                    const std::string& disc_ckpt_path, const VictimState& victim,
                                    const SweepConfig& cfg);

std::string sweep_table_csv(std::span<const SweepRow> rows);

}  // namespace pcadv
