#pragma once

#include <functional>
#include <span>
#include <vector>

#include "pcadv/models.hpp"
#include "pcadv/tape.hpp"

namespace pcadv {

struct LossWeights {
  double lambda1 = 0.01; // objective
  double lambda2 = 1.0;  // outlier
  double lambda3 = 1.0;  // uniform
  double lambda_gp = 10.0;

  void validate() const;
};

enum class AttackMode { kTargeted, kUntargeted };

struct AttackConfig {
  AttackMode mode = AttackMode::kUntargeted;
  int target_label = -1;
  LossWeights weights;
  bool mask_successful = true;

  void validate(int n_classes) const;
};

struct UniformLossParams {
  int n_seeds = 4;
  double radius = 0.25;
  double expected_count = 4.0;
  double expected_nn_dist = 0.1;

  // expected_nn_dist from the hexagonal-packing expectation
  // sqrt(2 pi r^2 / (sqrt(3) n_hat)).
  static UniformLossParams make(int n_seeds, double radius, double expected_count);
  void validate() const;
};

enum class TrainStage { kGan, kAdversarial };

// Attack-driving cross entropy over the samples the victim still classifies
// correctly; the direction label is the configured target or the per-sample
// second-largest class. Empty active set gives an exact zero.
struct ObjectiveResult {
  int node;                 // scalar
  std::vector<char> active; // per-sample mask, 1 = loss contributes
};
ObjectiveResult objective_loss(ad::Tape& t, int victim_logits, std::span<const int> true_labels,
                               const AttackConfig& cfg);

// Mean distance from each point to its k-th nearest neighbor. Neighbor
// indices are frozen at the evaluation point.
int outlier_loss(ad::Tape& t, int cloud_node, int k);

// Per-cluster (count imbalance) x (nearest-neighbor clutter); clusters are
// balls of the given radius around farthest-point-sampled seeds. Only the
// clutter factor carries gradients. Expects a normalized cloud.
int uniform_loss(ad::Tape& t, int cloud_node, const UniformLossParams& params, int seed_index);

// Zero-mean, unit-max-radius copy of a cloud node, differentiable a.e.
int normalized_cloud_node(ad::Tape& t, int cloud_node);

// Builds critic output (1x1 node) for a cloud node. Implementations invoked
// on several tapes (the caller's and scratch tapes) must reuse one parameter
// binding per tape so gradients accumulate correctly.
using CriticFn = std::function<int(ad::Tape&, int)>;

// Mean over the batch of (|grad_x D(x_hat)| - 1)^2 on interpolates
// x_hat = eps*real + (1-eps)*fake. The input gradient is evaluated exactly by
// backprop on a scratch tape; its norm re-enters the tape as a five-point
// finite difference of D along the frozen normalized direction. Freezing the
// direction keeps first derivatives of the penalty exact (the norm's own
// derivative is the directional derivative of the gradient), so no
// second-order machinery is needed.
int gradient_penalty(ad::Tape& t, const CriticFn& critic, std::span<const int> real_nodes,
                     std::span<const int> fake_nodes, std::span<const double> epsilons,
                     double fd_step = 1e-3);

// mean D(fake) - mean D(real) + lambda_gp * gp + aux_weight * (CE_real + CE_fake).
// Pass gp_node = -1 to omit the penalty term.
int critic_loss(ad::Tape& t, std::span<const int> d_real, std::span<const int> d_fake,
                int logits_real, int logits_fake, std::span<const int> labels_real,
                std::span<const int> labels_fake, const LossWeights& weights, int gp_node,
                double aux_weight = 1.0);

struct GeneratorLossResult {
  int node = -1;       // total, scalar
  double total = 0.0;
  double l_dis = 0.0;  // unweighted component values
  double l_obj = 0.0;
  double l_out = 0.0;
  double l_ul = 0.0;
  std::vector<char> obj_active;
  std::vector<int> aux_preds;    // auxiliary-classifier argmax per sample
  std::vector<int> victim_preds; // empty unless the objective term was built
};

// Full generator objective on an already-generated batch of cloud nodes:
// L_dis (negated critic mean plus auxiliary-classifier cross entropy) plus
// the weighted outlier/uniform terms, plus the weighted objective term in the
// adversarial stage. Clouds are normalized on-tape before the uniform term.
GeneratorLossResult generator_loss(ad::Tape& t, std::span<const int> cloud_nodes,
                                   std::span<const int> labels, const DiscriminatorState& disc,
                                   const BoundParams& disc_params, const VictimState* victim,
                                   const BoundParams* victim_params, const AttackConfig& cfg,
                                   const UniformLossParams& uniform_params, int outlier_k,
                                   TrainStage stage);

}  // namespace pcadv
