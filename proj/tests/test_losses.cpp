#include <doctest.h>

#include <cmath>
#include <functional>

#include "pcadv/losses.hpp"
#include "pcadv/models.hpp"
#include "pcadv/rng.hpp"

using namespace pcadv;
using ad::Tape;

namespace {

PointCloud random_cloud(Rng& rng, int n, double scale = 1.0) {
  PointCloud c(n);
  for (double& v : c.pts) v = scale * rng.uniform(-1.0, 1.0);
  return c;
}

// Relative to the gradient's largest entry, with an absolute floor at the
// noise level of a 1e-5 central difference in doubles.
void check_grad(double analytic, double fd, double scale_hint, double rel = 1e-4) {
  double tol = rel * std::max({std::abs(analytic), std::abs(fd), scale_hint, 1e-6});
  CHECK(std::abs(analytic - fd) <= tol + 2e-8);
}

// Central differences over every coordinate of x against the analytic grads.
void fd_sweep(const std::function<double(std::span<const double>)>& eval, std::vector<double> x,
              std::span<const double> analytic, double step = 1e-5) {
  double scale_hint = 0.0;
  for (double g : analytic) scale_hint = std::max(scale_hint, std::abs(g));
  for (std::size_t i = 0; i < x.size(); ++i) {
    double keep = x[i];
    x[i] = keep + step;
    double up = eval(x);
    x[i] = keep - step;
    double down = eval(x);
    x[i] = keep;
    check_grad(analytic[i], (up - down) / (2.0 * step), scale_hint);
  }
}

CriticFn linear_critic(std::vector<double> w, int rows) {
  return [w, rows](Tape& t, int node) {
    int wn = t.constant(rows, 3, w);
    return t.sum(t.mul(wn, node));
  };
}

CriticFn constant_critic(double c) {
  return [c](Tape& t, int node) {
    (void)node;
    return t.constant_scalar(c);
  };
}

}  // namespace

TEST_CASE("objective_loss spec examples") {
  AttackConfig cfg; // untargeted, masking on

  // all samples already misclassified -> loss 0, empty mask
  {
    Tape t;
    std::vector<double> logits = {0.0, 2.0, 1.0, 0.0}; // preds 1, 0
    int nl = t.leaf(2, 2, logits, true);
    std::vector<int> labels = {0, 1};
    ObjectiveResult r = objective_loss(t, nl, labels, cfg);
    CHECK(t.scalar(r.node) == 0.0);
    CHECK(r.active == std::vector<char>{0, 0});
  }

  // one active sample, logits (2, 0), true 0 -> CE toward class 1 = ln(1+e^2)
  {
    Tape t;
    std::vector<double> logits = {2.0, 0.0};
    int nl = t.leaf(1, 2, logits, true);
    std::vector<int> labels = {0};
    ObjectiveResult r = objective_loss(t, nl, labels, cfg);
    CHECK(t.scalar(r.node) == doctest::Approx(std::log(1.0 + std::exp(2.0))).epsilon(1e-9));
    CHECK(r.active == std::vector<char>{1});
  }

  // mean over the single active sample
  {
    Tape t;
    std::vector<double> logits = {2.0, 0.0, 0.0, 3.0}; // second already misclassified
    int nl = t.leaf(2, 2, logits, true);
    std::vector<int> labels = {0, 0};
    ObjectiveResult r = objective_loss(t, nl, labels, cfg);
    CHECK(t.scalar(r.node) == doctest::Approx(std::log(1.0 + std::exp(2.0))).epsilon(1e-9));
    CHECK(r.active == std::vector<char>{1, 0});
  }
}

TEST_CASE("objective_loss targeted mode and validation") {
  AttackConfig cfg;
  cfg.mode = AttackMode::kTargeted;
  cfg.target_label = 2;
  Tape t;
  std::vector<double> logits = {5.0, 1.0, 0.0};
  int nl = t.leaf(1, 3, logits, true);
  std::vector<int> labels = {0};
  ObjectiveResult r = objective_loss(t, nl, labels, cfg);
  double lse = std::log(std::exp(5.0) + std::exp(1.0) + std::exp(0.0));
  CHECK(t.scalar(r.node) == doctest::Approx(lse - 0.0).epsilon(1e-9));

  std::vector<int> bad = {2};
  Tape t2;
  int nl2 = t2.leaf(1, 3, logits, true);
  CHECK_THROWS_AS(objective_loss(t2, nl2, bad, cfg), InvalidConfig);

  AttackConfig no_target;
  no_target.mode = AttackMode::kTargeted;
  no_target.target_label = -1;
  Tape t3;
  int nl3 = t3.leaf(1, 3, logits, true);
  CHECK_THROWS_AS(objective_loss(t3, nl3, labels, no_target), InvalidConfig);
}

TEST_CASE("objective_loss is softmax-shift invariant and matches finite differences") {
  Rng rng(5);
  AttackConfig cfg;
  for (int trial = 0; trial < 5; ++trial) {
    const int b = 3, m = 4;
    std::vector<double> logits(b * m);
    for (double& v : logits) v = rng.uniform(-2.0, 2.0);
    std::vector<int> labels(b);
    for (int& l : labels) l = static_cast<int>(rng.uniform_int(m));

    auto eval = [&](std::span<const double> xs) {
      Tape t;
      int nl = t.leaf(b, m, xs, true);
      return t.scalar(objective_loss(t, nl, labels, cfg).node);
    };
    Tape t;
    int nl = t.leaf(b, m, logits, true);
    ObjectiveResult r = objective_loss(t, nl, labels, cfg);
    std::vector<int> wrt = {nl};
    fd_sweep(eval, logits, t.gradients(r.node, wrt)[0]);

    std::vector<double> shifted = logits;
    for (int i = 0; i < b; ++i)
      for (int j = 0; j < m; ++j) shifted[i * m + j] += 3.7 * (i + 1);
    CHECK(eval(shifted) == doctest::Approx(eval(logits)).epsilon(1e-9));
  }
}

TEST_CASE("outlier_loss spec examples") {
  Tape t;
  PointCloud line{{0, 0, 0}, {0, 0, 1}, {0, 0, 3}};
  int cn = t.leaf(3, 3, line.pts, true);
  CHECK(t.scalar(outlier_loss(t, cn, 1)) == doctest::Approx(4.0 / 3.0).epsilon(1e-12));

  // unit square, k = 2: both nearest distances are 1 for every corner
  PointCloud square{{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0}};
  int sq = t.leaf(4, 3, square.pts, true);
  CHECK(t.scalar(outlier_loss(t, sq, 2)) == doctest::Approx(1.0).epsilon(1e-12));

  CHECK_THROWS_AS(outlier_loss(t, cn, 3), InvalidInput);

  // homogeneity of degree 1
  Rng rng(7);
  PointCloud c = random_cloud(rng, 10);
  PointCloud scaled = c;
  for (double& v : scaled.pts) v *= 2.5;
  Tape t2;
  int a = t2.leaf(10, 3, c.pts, false);
  int b = t2.leaf(10, 3, scaled.pts, false);
  CHECK(t2.scalar(outlier_loss(t2, b, 3)) ==
        doctest::Approx(2.5 * t2.scalar(outlier_loss(t2, a, 3))).epsilon(1e-12));
}

TEST_CASE("outlier_loss gradients match finite differences") {
  Rng rng(9);
  for (int trial = 0; trial < 5; ++trial) {
    PointCloud c = random_cloud(rng, 9);
    auto eval = [&](std::span<const double> xs) {
      Tape t;
      int cn = t.leaf(9, 3, xs, true);
      return t.scalar(outlier_loss(t, cn, 3));
    };
    Tape t;
    int cn = t.leaf(9, 3, c.pts, true);
    int loss = outlier_loss(t, cn, 3);
    std::vector<int> wrt = {cn};
    fd_sweep(eval, c.pts, t.gradients(loss, wrt)[0]);
  }
}

TEST_CASE("uniform_loss zero cases and hand example") {
  // radius small enough that every cluster is its seed alone -> counts 1,
  // n_hat 1 -> imbalance 0 -> loss 0
  PointCloud spread{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {1, 1, 0}};
  UniformLossParams p1 = UniformLossParams::make(2, 0.1, 1.0);
  Tape t;
  int cn = t.leaf(4, 3, spread.pts, false);
  CHECK(t.scalar(uniform_loss(t, cn, p1, 0)) == 0.0);

  // all within-cluster nearest distances equal d_hat -> clutter 0 -> loss 0
  PointCloud pair{{0, 0, 0}, {0.1, 0, 0}};
  UniformLossParams p2 = UniformLossParams::make(1, 1.0, 1.0);
  p2.expected_nn_dist = 0.1;
  Tape t2;
  int cn2 = t2.leaf(2, 3, pair.pts, false);
  CHECK(t2.scalar(uniform_loss(t2, cn2, p2, 0)) == doctest::Approx(0.0).epsilon(1e-15));

  // one 3-point cluster, n_hat = 2, d_hat = 0.1:
  // imbalance = (3-2)^2/2 = 0.5
  // nn dists: 0.12, 0.12, 0.2 -> clutter = (0.02^2+0.02^2+0.1^2)/0.1 = 0.108
  PointCloud tri{{0, 0, 0}, {0.12, 0, 0}, {0, 0.2, 0}};
  UniformLossParams p3 = UniformLossParams::make(1, 1.0, 2.0);
  p3.expected_nn_dist = 0.1;
  Tape t3;
  int cn3 = t3.leaf(3, 3, tri.pts, false);
  CHECK(t3.scalar(uniform_loss(t3, cn3, p3, 0)) == doctest::Approx(0.054).epsilon(1e-12));

  CHECK_THROWS_AS(uniform_loss(t3, cn3, UniformLossParams::make(4, 0.25, 2.0), 0), InvalidInput);
}

TEST_CASE("uniform_loss gradients match finite differences") {
  Rng rng(11);
  UniformLossParams p = UniformLossParams::make(3, 0.6, 3.0);
  for (int trial = 0; trial < 5; ++trial) {
    PointCloud c = random_cloud(rng, 12);
    auto eval = [&](std::span<const double> xs) {
      Tape t;
      int cn = t.leaf(12, 3, xs, true);
      return t.scalar(uniform_loss(t, cn, p, 0));
    };
    Tape t;
    int cn = t.leaf(12, 3, c.pts, true);
    int loss = uniform_loss(t, cn, p, 0);
    std::vector<int> wrt = {cn};
    fd_sweep(eval, c.pts, t.gradients(loss, wrt)[0]);
  }
}

TEST_CASE("gradient_penalty anchors") {
  Rng rng(13);
  const int n = 6;
  std::vector<double> w(n * 3);
  double norm2 = 0.0;
  for (double& v : w) {
    v = rng.normal();
    norm2 += v * v;
  }
  for (double& v : w) v /= std::sqrt(norm2);

  PointCloud real = random_cloud(rng, n);
  PointCloud fake = random_cloud(rng, n);
  std::vector<double> eps = {0.3, 0.8};

  Tape t;
  std::vector<int> rn = {t.leaf(n, 3, real.pts, true), t.leaf(n, 3, fake.pts, true)};
  std::vector<int> fn = {t.leaf(n, 3, fake.pts, true), t.leaf(n, 3, real.pts, true)};

  int unit = gradient_penalty(t, linear_critic(w, n), rn, fn, eps);
  CHECK(std::abs(t.scalar(unit)) <= 1e-9);

  int constant = gradient_penalty(t, constant_critic(4.2), rn, fn, eps);
  CHECK(t.scalar(constant) == doctest::Approx(1.0).epsilon(1e-12));

  std::vector<double> w2 = w;
  for (double& v : w2) v *= 2.0;
  int twice = gradient_penalty(t, linear_critic(w2, n), rn, fn, eps);
  CHECK(t.scalar(twice) == doctest::Approx(1.0).epsilon(1e-9));

  std::vector<double> bad_eps = {0.3, 1.5};
  CHECK_THROWS_AS(gradient_penalty(t, constant_critic(0.0), rn, fn, bad_eps), InvalidInput);
  std::vector<int> mismatched = {rn[0]};
  CHECK_THROWS_AS(gradient_penalty(t, constant_critic(0.0), mismatched, fn, eps), InvalidInput);
}

TEST_CASE("gradient_penalty input gradients match finite differences") {
  Rng rng(17);
  DiscriminatorConfig dc;
  dc.width = 12;
  dc.n_res_blocks = 1;
  dc.head_width = 8;
  DiscriminatorState disc = init_discriminator(dc, 19);
  const int n = 8;
  CriticFn critic = [&](Tape& tt, int node) {
    BoundParams bp = bind_params(tt, disc.params, false);
    return discriminator_forward(tt, disc, bp, node).critic;
  };

  PointCloud real = random_cloud(rng, n);
  PointCloud fake = random_cloud(rng, n);
  std::vector<double> eps = {0.4};

  auto eval_fake = [&](std::span<const double> xs) {
    Tape t;
    std::vector<int> rn = {t.leaf(n, 3, real.pts, false)};
    std::vector<int> fn = {t.leaf(n, 3, xs, true)};
    return t.scalar(gradient_penalty(t, critic, rn, fn, eps));
  };
  Tape t;
  std::vector<int> rn = {t.leaf(n, 3, real.pts, true)};
  std::vector<int> fn = {t.leaf(n, 3, fake.pts, true)};
  int gp = gradient_penalty(t, critic, rn, fn, eps);
  std::vector<int> wrt = {fn[0], rn[0]};
  auto grads = t.gradients(gp, wrt);
  fd_sweep(eval_fake, fake.pts, grads[0]);

  auto eval_real = [&](std::span<const double> xs) {
    Tape tt;
    std::vector<int> rn2 = {tt.leaf(n, 3, xs, true)};
    std::vector<int> fn2 = {tt.leaf(n, 3, fake.pts, false)};
    return tt.scalar(gradient_penalty(tt, critic, rn2, fn2, eps));
  };
  fd_sweep(eval_real, real.pts, grads[1]);
}

TEST_CASE("gradient_penalty parameter gradients match finite differences") {
  Rng rng(23);
  DiscriminatorConfig dc;
  dc.width = 10;
  dc.n_res_blocks = 1;
  dc.head_width = 6;
  DiscriminatorState disc = init_discriminator(dc, 29);
  const int n = 6;
  PointCloud real = random_cloud(rng, n);
  PointCloud fake = random_cloud(rng, n);
  std::vector<double> eps = {0.25};

  auto penalty_value = [&](const DiscriminatorState& state) {
    Tape t;
    CriticFn critic = [&](Tape& tt, int node) {
      BoundParams bp = bind_params(tt, state.params, false);
      return discriminator_forward(tt, state, bp, node).critic;
    };
    std::vector<int> rn = {t.leaf(n, 3, real.pts, false)};
    std::vector<int> fn = {t.leaf(n, 3, fake.pts, false)};
    return t.scalar(gradient_penalty(t, critic, rn, fn, eps));
  };

  Tape t;
  BoundParams bound = bind_params(t, disc.params, true);
  CriticFn critic = [&](Tape& tt, int node) {
    if (&tt == &t) return discriminator_forward(tt, disc, bound, node).critic;
    BoundParams bp = bind_params(tt, disc.params, false);
    return discriminator_forward(tt, disc, bp, node).critic;
  };
  std::vector<int> rn = {t.leaf(n, 3, real.pts, false)};
  std::vector<int> fn = {t.leaf(n, 3, fake.pts, false)};
  int gp = gradient_penalty(t, critic, rn, fn, eps);

  // spot-check a few coordinates of two weight tensors
  for (const char* name : {"lift_w", "crit1_w"}) {
    std::size_t tensor_index = 0;
    for (std::size_t i = 0; i < disc.params.tensors.size(); ++i)
      if (disc.params.tensors[i].name == name) tensor_index = i;
    std::vector<int> wrt = {bound.node_ids[tensor_index]};
    std::vector<double> grad = t.gradients(gp, wrt)[0];
    double scale_hint = 0.0;
    for (double g : grad) scale_hint = std::max(scale_hint, std::abs(g));
    for (std::size_t k = 0; k < 5; ++k) {
      std::size_t idx = rng.uniform_int(grad.size());
      DiscriminatorState copy = disc;
      const double step = 1e-5;
      copy.params.tensors[tensor_index].data[idx] += step;
      double up = penalty_value(copy);
      copy.params.tensors[tensor_index].data[idx] -= 2.0 * step;
      double down = penalty_value(copy);
      check_grad(grad[idx], (up - down) / (2.0 * step), scale_hint);
    }
  }
}

TEST_CASE("critic_loss examples") {
  Rng rng(31);
  // D == 0 and a confident classifier with lambda_gp excluded -> near zero
  {
    Tape t;
    std::vector<double> zero = {0.0};
    std::vector<int> d_real = {t.leaf(1, 1, zero, false), t.leaf(1, 1, zero, false)};
    std::vector<int> d_fake = {t.leaf(1, 1, zero, false), t.leaf(1, 1, zero, false)};
    std::vector<double> confident = {30.0, 0.0, 0.0, 30.0};
    int lr = t.leaf(2, 2, confident, false);
    int lf = t.leaf(2, 2, confident, false);
    std::vector<int> labels = {0, 1};
    LossWeights w;
    int loss = critic_loss(t, d_real, d_fake, lr, lf, labels, labels, w, -1);
    CHECK(t.scalar(loss) == doctest::Approx(0.0).epsilon(1e-9));
  }

  // identical real/fake batches cancel the Wasserstein terms exactly
  {
    Tape t;
    std::vector<double> v1 = {1.7}, v2 = {-0.4};
    std::vector<int> d_real = {t.leaf(1, 1, v1, false), t.leaf(1, 1, v2, false)};
    std::vector<int> d_fake = {t.leaf(1, 1, v1, false), t.leaf(1, 1, v2, false)};
    std::vector<double> logits = {0.3, -0.2, 0.1, 0.9};
    int lr = t.leaf(2, 2, logits, false);
    int lf = t.leaf(2, 2, logits, false);
    std::vector<int> labels = {0, 1};
    LossWeights w;
    int loss = critic_loss(t, d_real, d_fake, lr, lf, labels, labels, w, -1, 0.0);
    CHECK(t.scalar(loss) == 0.0);
  }

  // hand-built 2-sample batch, term-by-term oracle
  {
    Tape t;
    std::vector<double> dr1 = {0.5}, dr2 = {1.5}, df1 = {-0.25}, df2 = {0.75};
    std::vector<int> d_real = {t.leaf(1, 1, dr1, false), t.leaf(1, 1, dr2, false)};
    std::vector<int> d_fake = {t.leaf(1, 1, df1, false), t.leaf(1, 1, df2, false)};
    std::vector<double> lreal = {1.0, -1.0, 0.5, 0.25};
    std::vector<double> lfake = {0.0, 0.0, 2.0, -2.0};
    int lr = t.leaf(2, 2, lreal, false);
    int lf = t.leaf(2, 2, lfake, false);
    std::vector<int> labels_r = {0, 1};
    std::vector<int> labels_f = {1, 0};
    LossWeights w;
    w.lambda_gp = 10.0;
    std::vector<double> gp_val = {0.3};
    int gp = t.leaf(1, 1, gp_val, false);
    int loss = critic_loss(t, d_real, d_fake, lr, lf, labels_r, labels_f, w, gp, 1.0);

    auto ce = [](double a, double b, int label) {
      double mx = std::max(a, b);
      double lse = mx + std::log(std::exp(a - mx) + std::exp(b - mx));
      return lse - (label == 0 ? a : b);
    };
    double wass = (df1[0] + df2[0]) / 2.0 - (dr1[0] + dr2[0]) / 2.0;
    double ce_real = (ce(1.0, -1.0, 0) + ce(0.5, 0.25, 1)) / 2.0;
    double ce_fake = (ce(0.0, 0.0, 1) + ce(2.0, -2.0, 0)) / 2.0;
    double expect = wass + ce_real + ce_fake + 10.0 * 0.3;
    CHECK(t.scalar(loss) == doctest::Approx(expect).epsilon(1e-12));
  }
  (void)rng;
}

namespace {

struct GenLossFixture {
  GeneratorState gen;
  DiscriminatorState disc;
  VictimState victim;
  UniformLossParams uniform_params = UniformLossParams::make(2, 0.6, 4.0);
  std::vector<std::vector<double>> zs;
  std::vector<int> labels;

  GenLossFixture() : gen(make_gen()), disc(make_disc()), victim(make_victim()) {
    Rng rng(71);
    for (int i = 0; i < 2; ++i) {
      zs.emplace_back(gen.cfg.noise_dim);
      for (double& v : zs.back()) v = rng.normal();
      labels.push_back(i % gen.cfg.n_classes);
    }
  }

  static GeneratorState make_gen() {
    GeneratorConfig cfg;
    cfg.noise_dim = 5;
    cfg.label_embed_dim = 3;
    cfg.n_classes = 2;
    cfg.branching = {2, 2, 2};
    cfg.feature_dims = {8, 10, 8, 6};
    return init_generator(cfg, 51);
  }
  static DiscriminatorState make_disc() {
    DiscriminatorConfig cfg;
    cfg.width = 10;
    cfg.n_res_blocks = 1;
    cfg.head_width = 6;
    return init_discriminator(cfg, 52);
  }
  static VictimState make_victim() {
    VictimConfig cfg;
    cfg.arch = VictimArch::kPointNetLite;
    return init_victim(cfg, 53);
  }

  GeneratorLossResult build(Tape& t, const AttackConfig& cfg, TrainStage stage,
                            const GeneratorState& gen_state) const {
    BoundParams gb = bind_params(t, gen_state.params, true);
    BoundParams db = bind_params(t, disc.params, false);
    BoundParams vb = bind_params(t, victim.params, false);
    std::vector<int> clouds;
    for (std::size_t i = 0; i < zs.size(); ++i) {
      int zn = t.constant(1, gen_state.cfg.noise_dim, zs[i]);
      clouds.push_back(generator_forward(t, gen_state, gb, zn, labels[i]));
    }
    return generator_loss(t, clouds, labels, disc, db, &victim, &vb, cfg, uniform_params, 3,
                          stage);
  }
};

}  // namespace

TEST_CASE("generator_loss weight zeroing and stage decomposition") {
  GenLossFixture fx;
  AttackConfig zero;
  zero.weights.lambda1 = 0.0;
  zero.weights.lambda2 = 0.0;
  zero.weights.lambda3 = 0.0;
  Tape t;
  GeneratorLossResult r = fx.build(t, zero, TrainStage::kGan, fx.gen);
  CHECK(r.total == r.l_dis);

  AttackConfig cfg;
  cfg.weights.lambda1 = 0.01;
  cfg.weights.lambda2 = 0.7;
  cfg.weights.lambda3 = 1.3;
  Tape t2;
  GeneratorLossResult gan = fx.build(t2, cfg, TrainStage::kGan, fx.gen);
  Tape t3;
  GeneratorLossResult adv = fx.build(t3, cfg, TrainStage::kAdversarial, fx.gen);
  CHECK(adv.total - gan.total == doctest::Approx(0.01 * adv.l_obj).epsilon(1e-9));
  CHECK(gan.l_obj == 0.0);

  // component breakdown sums to the total
  CHECK(adv.l_dis + 0.01 * adv.l_obj + 0.7 * adv.l_out + 1.3 * adv.l_ul ==
        doctest::Approx(adv.total).epsilon(1e-9));

  // adversarial stage requires a victim
  Tape t4;
  BoundParams gb = bind_params(t4, fx.gen.params, true);
  BoundParams db = bind_params(t4, fx.disc.params, false);
  std::vector<int> clouds;
  int zn = t4.constant(1, fx.gen.cfg.noise_dim, fx.zs[0]);
  clouds.push_back(generator_forward(t4, fx.gen, gb, zn, 0));
  std::vector<int> labels = {0};
  CHECK_THROWS_AS(generator_loss(t4, clouds, labels, fx.disc, db, nullptr, nullptr, cfg,
                                 fx.uniform_params, 3, TrainStage::kAdversarial),
                  InvalidConfig);
}

TEST_CASE("generator_loss parameter gradients match finite differences") {
  GenLossFixture fx;
  AttackConfig cfg;
  cfg.weights.lambda1 = 0.05;
  cfg.weights.lambda2 = 0.5;
  cfg.weights.lambda3 = 0.8;

  Tape t;
  GeneratorLossResult r = fx.build(t, cfg, TrainStage::kAdversarial, fx.gen);

  Rng rng(91);
  for (const char* name : {"embed", "loop1", "anc2_0", "proj_w", "up0_b0"}) {
    std::size_t tensor_index = 0;
    for (std::size_t i = 0; i < fx.gen.params.tensors.size(); ++i)
      if (fx.gen.params.tensors[i].name == name) tensor_index = i;
    // node id of the bound tensor: binding order matches store order and the
    // generator binding was created first on this tape
    std::vector<int> wrt = {static_cast<int>(tensor_index)};
    // recover the leaf id robustly by rebuilding the binding bookkeeping
    Tape t2;
    BoundParams gb = bind_params(t2, fx.gen.params, true);
    BoundParams db = bind_params(t2, fx.disc.params, false);
    BoundParams vb = bind_params(t2, fx.victim.params, false);
    std::vector<int> clouds;
    for (std::size_t i = 0; i < fx.zs.size(); ++i) {
      int zn = t2.constant(1, fx.gen.cfg.noise_dim, fx.zs[i]);
      clouds.push_back(generator_forward(t2, fx.gen, gb, zn, fx.labels[i]));
    }
    GeneratorLossResult r2 = generator_loss(t2, clouds, fx.labels, fx.disc, db, &fx.victim, &vb,
                                            cfg, fx.uniform_params, 3, TrainStage::kAdversarial);
    std::vector<int> ids = {gb.node_ids[tensor_index]};
    std::vector<double> grad = t2.gradients(r2.node, ids)[0];
    double scale_hint = 0.0;
    for (double g : grad) scale_hint = std::max(scale_hint, std::abs(g));

    for (int k = 0; k < 4; ++k) {
      std::size_t idx = rng.uniform_int(grad.size());
      GeneratorState copy = fx.gen;
      const double step = 1e-5;
      copy.params.tensors[tensor_index].data[idx] += step;
      Tape tu;
      double up = fx.build(tu, cfg, TrainStage::kAdversarial, copy).total;
      copy.params.tensors[tensor_index].data[idx] -= 2.0 * step;
      Tape td;
      double down = fx.build(td, cfg, TrainStage::kAdversarial, copy).total;
      check_grad(grad[idx], (up - down) / (2.0 * step), scale_hint);
    }
  }
  (void)r;
}

TEST_CASE("every generator tensor receives gradient somewhere") {
  GenLossFixture fx;
  AttackConfig cfg;
  cfg.weights.lambda1 = 0.05;
  Tape t;
  BoundParams gb = bind_params(t, fx.gen.params, true);
  BoundParams db = bind_params(t, fx.disc.params, false);
  BoundParams vb = bind_params(t, fx.victim.params, false);
  std::vector<int> clouds;
  int zn = t.constant(1, fx.gen.cfg.noise_dim, fx.zs[0]);
  clouds.push_back(generator_forward(t, fx.gen, gb, zn, 0));
  std::vector<int> labels = {0};
  GeneratorLossResult r = generator_loss(t, clouds, labels, fx.disc, db, &fx.victim, &vb, cfg,
                                         fx.uniform_params, 3, TrainStage::kAdversarial);
  auto grads = t.gradients(r.node, gb.node_ids);
  for (std::size_t i = 0; i < grads.size(); ++i) {
    double max_abs = 0.0;
    for (double g : grads[i]) max_abs = std::max(max_abs, std::abs(g));
    INFO("tensor ", fx.gen.params.tensors[i].name);
    CHECK(max_abs > 0.0);
  }
}
