#include "pcadv/losses.hpp"

#include <cmath>
#include <string>

namespace pcadv {

void LossWeights::validate() const {
  for (double v : {lambda1, lambda2, lambda3, lambda_gp})
    if (!(v >= 0.0) || !std::isfinite(v))
      throw InvalidConfig("loss weights must be finite and non-negative");
}

void AttackConfig::validate(int n_classes) const {
  weights.validate();
  if (mode == AttackMode::kTargeted && (target_label < 0 || target_label >= n_classes))
    throw InvalidConfig("targeted attack needs a target label in [0, n_classes)");
}

UniformLossParams UniformLossParams::make(int n_seeds, double radius, double expected_count) {
  UniformLossParams p;
  p.n_seeds = n_seeds;
  p.radius = radius;
  p.expected_count = expected_count;
  p.expected_nn_dist =
      std::sqrt(2.0 * 3.14159265358979323846 * radius * radius / (std::sqrt(3.0) * expected_count));
  p.validate();
  return p;
}

void UniformLossParams::validate() const {
  if (n_seeds < 1) throw InvalidConfig("uniform loss: n_seeds must be positive");
  if (!(radius > 0.0)) throw InvalidConfig("uniform loss: radius must be positive");
  if (!(expected_count > 0.0)) throw InvalidConfig("uniform loss: expected count must be positive");
  if (!(expected_nn_dist > 0.0))
    throw InvalidConfig("uniform loss: expected neighbor distance must be positive");
}

ObjectiveResult objective_loss(ad::Tape& t, int victim_logits, std::span<const int> true_labels,
                               const AttackConfig& cfg) {
  const int b = t.rows(victim_logits);
  const int m = t.cols(victim_logits);
  if (static_cast<int>(true_labels.size()) != b)
    throw InvalidInput("objective_loss: one true label per sample");
  cfg.validate(m);
  const auto& logits = t.value(victim_logits);
  for (double v : logits)
    if (!std::isfinite(v)) throw InvalidInput("objective_loss: non-finite logits");

  ObjectiveResult out;
  out.active.assign(b, 0);
  std::vector<int> active_rows;
  std::vector<int> attack_labels;
  for (int i = 0; i < b; ++i) {
    const int y = true_labels[i];
    if (y < 0 || y >= m) throw InvalidInput("objective_loss: true label out of range");
    if (cfg.mode == AttackMode::kTargeted && cfg.target_label == y)
      throw InvalidConfig("objective_loss: target label equals the true label");
    const double* row = &logits[static_cast<std::size_t>(i) * m];
    int pred = 0;
    for (int j = 1; j < m; ++j)
      if (row[j] > row[pred]) pred = j;
    const bool active = cfg.mask_successful ? pred == y : true;
    if (!active) continue;
    out.active[i] = 1;
    active_rows.push_back(i);
    if (cfg.mode == AttackMode::kTargeted) {
      attack_labels.push_back(cfg.target_label);
    } else {
      int second = -1;
      for (int j = 0; j < m; ++j) {
        if (j == y) continue;
        if (second < 0 || row[j] > row[second]) second = j;
      }
      if (second < 0) throw InvalidConfig("objective_loss: untargeted attack needs >= 2 classes");
      attack_labels.push_back(second);
    }
  }
  if (active_rows.empty()) {
    out.node = t.constant_scalar(0.0);
    return out;
  }
  int rows = t.gather_rows(victim_logits, active_rows);
  out.node = t.mean(t.softmax_ce_rows(rows, attack_labels));
  return out;
}

int outlier_loss(ad::Tape& t, int cloud_node, int k) {
  const int n = t.rows(cloud_node);
  if (t.cols(cloud_node) != 3) throw InvalidInput("outlier_loss: cloud node must be N x 3");
  if (k < 1 || k >= n) throw InvalidInput("outlier_loss: need 1 <= k < N");
  PointCloud cloud;
  cloud.pts = t.value(cloud_node);
  NeighborIndex ni = knn(cloud, k);
  std::vector<int> kth(n);
  for (int i = 0; i < n; ++i) kth[i] = ni.idx(i, k - 1);
  int gathered = t.gather_rows(cloud_node, kth);
  return t.mean(t.row_norm(t.sub(cloud_node, gathered)));
}

int normalized_cloud_node(ad::Tape& t, int cloud_node) {
  const int n = t.rows(cloud_node);
  std::vector<double> ones(n, 1.0 / n);
  int mean_row = t.matmul(t.constant(1, n, ones), cloud_node);
  int centered = t.sub_rowvec(cloud_node, mean_row);
  int max_norm = t.col_max(t.row_norm(centered));
  return t.scale_by(centered, t.spow(t.clamp_min(max_norm, 1e-12), -1.0));
}

int uniform_loss(ad::Tape& t, int cloud_node, const UniformLossParams& params, int seed_index) {
  params.validate();
  const int n = t.rows(cloud_node);
  if (t.cols(cloud_node) != 3) throw InvalidInput("uniform_loss: cloud node must be N x 3");
  if (params.n_seeds > n) throw InvalidInput("uniform_loss: more seeds than points");
  PointCloud cloud;
  cloud.pts = t.value(cloud_node);
  cloud.validate("uniform_loss cloud");

  std::vector<int> seeds = farthest_point_sample(cloud, params.n_seeds, seed_index);
  int total = -1;
  for (int seed : seeds) {
    std::array<double, 3> center = {cloud.at(seed, 0), cloud.at(seed, 1), cloud.at(seed, 2)};
    std::vector<int> members = ball_query(cloud, center, params.radius);
    const double count = static_cast<double>(members.size());
    const double imbalance =
        (count - params.expected_count) * (count - params.expected_count) / params.expected_count;
    if (members.size() < 2 || imbalance == 0.0) continue;

    // Nearest other member within the cluster, frozen at the current point.
    std::vector<int> nearest(members.size());
    for (std::size_t a = 0; a < members.size(); ++a) {
      int best = -1;
      double best_d = 0.0;
      for (std::size_t c = 0; c < members.size(); ++c) {
        if (c == a) continue;
        double d2 = 0.0;
        for (int d = 0; d < 3; ++d) {
          double diff = cloud.at(members[a], d) - cloud.at(members[c], d);
          d2 += diff * diff;
        }
        if (best < 0 || d2 < best_d) {
          best = members[c];
          best_d = d2;
        }
      }
      nearest[a] = best;
    }
    int pts = t.gather_rows(cloud_node, members);
    int nn = t.gather_rows(cloud_node, nearest);
    int dist = t.row_norm(t.sub(pts, nn));
    int clutter =
        t.scale(t.sum(t.spow(t.addc(dist, -params.expected_nn_dist), 2.0)), 1.0 / params.expected_nn_dist);
    int term = t.scale(clutter, imbalance);
    total = total < 0 ? term : t.add(total, term);
  }
  return total < 0 ? t.constant_scalar(0.0) : total;
}

int gradient_penalty(ad::Tape& t, const CriticFn& critic, std::span<const int> real_nodes,
                     std::span<const int> fake_nodes, std::span<const double> epsilons,
                     double fd_step) {
  if (real_nodes.size() != fake_nodes.size() || real_nodes.size() != epsilons.size())
    throw InvalidInput("gradient_penalty: batch size mismatch");
  if (real_nodes.empty()) throw InvalidInput("gradient_penalty: empty batch");
  if (!(fd_step > 0.0)) throw InvalidInput("gradient_penalty: fd_step must be positive");

  std::vector<int> penalties;
  for (std::size_t i = 0; i < real_nodes.size(); ++i) {
    const int r = real_nodes[i], f = fake_nodes[i];
    if (t.rows(r) != t.rows(f) || t.cols(r) != t.cols(f))
      throw InvalidInput("gradient_penalty: real/fake shape mismatch");
    const double eps = epsilons[i];
    if (!(eps >= 0.0 && eps <= 1.0)) throw InvalidInput("gradient_penalty: epsilon outside [0,1]");

    int xhat = t.add(t.scale(r, eps), t.scale(f, 1.0 - eps));

    // Exact input gradient of D at x_hat via a scratch backward pass.
    ad::Tape scratch;
    int sx = scratch.leaf(t.rows(xhat), t.cols(xhat), t.value(xhat), true);
    int sc = critic(scratch, sx);
    std::vector<int> wrt = {sx};
    std::vector<double> v = scratch.gradients(sc, wrt)[0];

    double norm2 = 0.0;
    for (double g : v) norm2 += g * g;
    double norm = std::sqrt(norm2);
    std::vector<double> shift1(v.size(), 0.0), shift2(v.size(), 0.0);
    if (norm > 1e-12)
      for (std::size_t j = 0; j < v.size(); ++j) {
        shift1[j] = fd_step * v[j] / norm;
        shift2[j] = 2.0 * shift1[j];
      }

    // Five-point stencil for the directional derivative along the frozen
    // direction: O(h^4) truncation, so h stays large enough that the 1/h
    // noise amplification is negligible.
    int s1 = t.constant(t.rows(xhat), t.cols(xhat), shift1);
    int s2 = t.constant(t.rows(xhat), t.cols(xhat), shift2);
    int d1 = t.sub(critic(t, t.add(xhat, s1)), critic(t, t.sub(xhat, s1)));
    int d2 = t.sub(critic(t, t.add(xhat, s2)), critic(t, t.sub(xhat, s2)));
    int slope = t.scale(t.sub(t.scale(d1, 8.0), d2), 1.0 / (12.0 * fd_step));
    penalties.push_back(t.spow(t.addc(slope, -1.0), 2.0));
  }
  return t.mean_of(penalties);
}

int critic_loss(ad::Tape& t, std::span<const int> d_real, std::span<const int> d_fake,
                int logits_real, int logits_fake, std::span<const int> labels_real,
                std::span<const int> labels_fake, const LossWeights& weights, int gp_node,
                double aux_weight) {
  weights.validate();
  if (d_real.empty() || d_real.size() != d_fake.size())
    throw InvalidInput("critic_loss: batch size mismatch");
  int wass = t.sub(t.mean_of(d_fake), t.mean_of(d_real));
  int ce_real = t.mean(t.softmax_ce_rows(logits_real, labels_real));
  int ce_fake = t.mean(t.softmax_ce_rows(logits_fake, labels_fake));
  int loss = t.add(wass, t.scale(t.add(ce_real, ce_fake), aux_weight));
  if (gp_node >= 0) loss = t.add(loss, t.scale(gp_node, weights.lambda_gp));
  return loss;
}

GeneratorLossResult generator_loss(ad::Tape& t, std::span<const int> cloud_nodes,
                                   std::span<const int> labels, const DiscriminatorState& disc,
                                   const BoundParams& disc_params, const VictimState* victim,
                                   const BoundParams* victim_params, const AttackConfig& cfg,
                                   const UniformLossParams& uniform_params, int outlier_k,
                                   TrainStage stage) {
  if (cloud_nodes.empty() || cloud_nodes.size() != labels.size())
    throw InvalidInput("generator_loss: need one label per generated cloud");
  cfg.validate(disc.cfg.n_classes);
  if (stage == TrainStage::kAdversarial && (victim == nullptr || victim_params == nullptr))
    throw InvalidConfig("generator_loss: adversarial stage needs a victim model");

  const LossWeights& w = cfg.weights;
  const int b = static_cast<int>(cloud_nodes.size());

  std::vector<int> critic_vals;
  std::vector<int> aux_rows;
  GeneratorLossResult res;
  for (int i = 0; i < b; ++i) {
    DiscOut out = discriminator_forward(t, disc, disc_params, cloud_nodes[i]);
    critic_vals.push_back(out.critic);
    aux_rows.push_back(out.logits);
    res.aux_preds.push_back(argmax_label(t.value(out.logits)));
  }
  int aux_logits = t.vstack(aux_rows);
  int ce_aux = t.mean(t.softmax_ce_rows(aux_logits, labels));
  int l_dis = t.add(t.scale(t.mean_of(critic_vals), -1.0), ce_aux);

  res.l_dis = t.scalar(l_dis);
  int total = l_dis;

  if (stage == TrainStage::kAdversarial && w.lambda1 > 0.0) {
    std::vector<int> victim_rows;
    for (int i = 0; i < b; ++i) {
      int row = victim_forward(t, *victim, *victim_params, cloud_nodes[i]);
      victim_rows.push_back(row);
      res.victim_preds.push_back(argmax_label(t.value(row)));
    }
    ObjectiveResult obj = objective_loss(t, t.vstack(victim_rows), labels, cfg);
    res.l_obj = t.scalar(obj.node);
    res.obj_active = std::move(obj.active);
    total = t.add(total, t.scale(obj.node, w.lambda1));
  } else {
    res.obj_active.assign(b, 0);
  }

  if (w.lambda2 > 0.0) {
    std::vector<int> outs;
    for (int i = 0; i < b; ++i) outs.push_back(outlier_loss(t, cloud_nodes[i], outlier_k));
    int l_out = t.mean_of(outs);
    res.l_out = t.scalar(l_out);
    total = t.add(total, t.scale(l_out, w.lambda2));
  }

  if (w.lambda3 > 0.0) {
    std::vector<int> uls;
    for (int i = 0; i < b; ++i)
      uls.push_back(uniform_loss(t, normalized_cloud_node(t, cloud_nodes[i]), uniform_params, 0));
    int l_ul = t.mean_of(uls);
    res.l_ul = t.scalar(l_ul);
    total = t.add(total, t.scale(l_ul, w.lambda3));
  }

  res.node = total;
  res.total = t.scalar(total);
  return res;
}

}  // namespace pcadv
