#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "pcadv/rng.hpp"
#include "pcadv/tape.hpp"

using namespace pcadv;
using ad::Tape;

namespace {

// Central-difference check of d(out)/d(leaf) for every coordinate of one leaf.
// build() must construct the same graph from the given leaf values.
void fd_check(std::function<double(std::span<const double>)> eval, std::vector<double> x,
              std::span<const double> analytic, double step = 1e-6, double tol = 1e-6) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    double keep = x[i];
    x[i] = keep + step;
    double up = eval(x);
    x[i] = keep - step;
    double down = eval(x);
    x[i] = keep;
    double fd = (up - down) / (2.0 * step);
    CHECK(analytic[i] == doctest::Approx(fd).epsilon(tol).scale(1.0));
  }
}

std::vector<double> randvec(Rng& rng, int n, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

}  // namespace

TEST_CASE("matmul forward all transpose combinations") {
  Tape t;
  std::vector<double> a = {1, 2, 3, 4, 5, 6};        // 2x3
  std::vector<double> b = {7, 8, 9, 10, 11, 12};     // 3x2
  int na = t.leaf(2, 3, a, false);
  int nb = t.leaf(3, 2, b, false);
  CHECK(t.value(t.matmul(na, nb)) == std::vector<double>{58, 64, 139, 154});
  int nbt = t.leaf(2, 3, b, false); // reinterpret as 2x3 for A * B^T
  CHECK(t.value(t.matmul(na, nbt, false, true)) ==
        std::vector<double>{1 * 7 + 2 * 8 + 3 * 9, 1 * 10 + 2 * 11 + 3 * 12,
                            4 * 7 + 5 * 8 + 6 * 9, 4 * 10 + 5 * 11 + 6 * 12});
  int nat = t.leaf(3, 2, a, false); // A^T * B with A stored 3x2
  CHECK(t.value(t.matmul(nat, nb, true, false)) ==
        std::vector<double>{1 * 7 + 3 * 9 + 5 * 11, 1 * 8 + 3 * 10 + 5 * 12,
                            2 * 7 + 4 * 9 + 6 * 11, 2 * 8 + 4 * 10 + 6 * 12});
}

TEST_CASE("gradients of a composite matmul expression match finite differences") {
  Rng rng(7);
  for (bool ta : {false, true})
    for (bool tb : {false, true}) {
      std::vector<double> a = randvec(rng, 6), b = randvec(rng, 6);
      auto eval_a = [&](std::span<const double> xs) {
        Tape t;
        int na = t.leaf(ta ? 3 : 2, ta ? 2 : 3, xs, true);
        int nb = t.leaf(tb ? 2 : 3, tb ? 3 : 2, b, false);
        return t.scalar(t.sum(t.spow(t.matmul(na, nb, ta, tb), 2.0)));
      };
      Tape t;
      int na = t.leaf(ta ? 3 : 2, ta ? 2 : 3, a, true);
      int nb = t.leaf(tb ? 2 : 3, tb ? 3 : 2, b, true);
      int out = t.sum(t.spow(t.matmul(na, nb, ta, tb), 2.0));
      std::vector<int> wrt = {na, nb};
      auto grads = t.gradients(out, wrt);
      fd_check(eval_a, a, grads[0]);
      auto eval_b = [&](std::span<const double> xs) {
        Tape tt;
        int xa = tt.leaf(ta ? 3 : 2, ta ? 2 : 3, a, false);
        int xb = tt.leaf(tb ? 2 : 3, tb ? 3 : 2, xs, true);
        return tt.scalar(tt.sum(tt.spow(tt.matmul(xa, xb, ta, tb), 2.0)));
      };
      fd_check(eval_b, b, grads[1]);
    }
}

TEST_CASE("elementwise and reduction gradients") {
  Rng rng(13);
  std::vector<double> a = randvec(rng, 12, 0.2, 2.0);
  std::vector<double> b = randvec(rng, 12, 0.2, 2.0);
  auto build = [&](Tape& t, int na, int nb) {
    int h = t.mul(t.leaky_relu(t.sub(na, nb), 0.1), t.addc(na, 0.5));
    h = t.add(h, t.spow(nb, 1.5));
    return t.mean(t.mul(h, h));
  };
  Tape t;
  int na = t.leaf(3, 4, a, true);
  int nb = t.leaf(3, 4, b, true);
  int out = build(t, na, nb);
  std::vector<int> wrt = {na, nb};
  auto grads = t.gradients(out, wrt);
  fd_check(
      [&](std::span<const double> xs) {
        Tape tt;
        int xa = tt.leaf(3, 4, xs, true);
        int xb = tt.leaf(3, 4, b, false);
        return tt.scalar(build(tt, xa, xb));
      },
      a, grads[0]);
  fd_check(
      [&](std::span<const double> xs) {
        Tape tt;
        int xa = tt.leaf(3, 4, a, false);
        int xb = tt.leaf(3, 4, xs, true);
        return tt.scalar(build(tt, xa, xb));
      },
      b, grads[1]);
}

TEST_CASE("structural op gradients: gather, concat, vstack, maxes, rowvec") {
  Rng rng(19);
  std::vector<double> a = randvec(rng, 15);
  std::vector<double> bias = randvec(rng, 5);
  std::vector<int> idx = {2, 0, 1, 2, 2, 1};
  auto build2 = [&](Tape& t, int na) {
    int g = t.gather_rows(na, idx);             // 6x5
    int v = t.vstack(std::vector<int>{g, t.scale(g, 0.7)}); // 12x5
    int m1 = t.rowgroup_max(v, 3);              // 4x5
    int m2 = t.col_max(m1);                     // 1x5
    int nb = t.leaf(1, 5, bias, false);
    int s = t.add_rowvec(t.sub_rowvec(m1, m2), nb);
    int cc = t.concat_cols(s, t.row_norm(s));   // 4x6
    return t.sum(t.spow(cc, 2.0));
  };
  Tape t;
  int na = t.leaf(3, 5, a, true);
  int out = build2(t, na);
  std::vector<int> wrt = {na};
  auto grads = t.gradients(out, wrt);
  fd_check(
      [&](std::span<const double> xs) {
        Tape tt;
        int xa = tt.leaf(3, 5, xs, true);
        return tt.scalar(build2(tt, xa));
      },
      a, grads[0]);
}

TEST_CASE("softmax cross entropy values and gradients") {
  Tape t;
  std::vector<double> logits = {2.0, 0.0};
  int nl = t.leaf(1, 2, logits, true);
  std::vector<int> labels = {1};
  int ce = t.softmax_ce_rows(nl, labels);
  // CE toward class 1 = ln(1 + e^2)
  CHECK(t.value(ce)[0] == doctest::Approx(std::log(1.0 + std::exp(2.0))));

  Rng rng(29);
  std::vector<double> raw = randvec(rng, 8, -2.0, 2.0);
  std::vector<int> lab = {1, 0};
  auto eval = [&](std::span<const double> xs) {
    Tape tt;
    int xl = tt.leaf(2, 4, xs, true);
    return tt.scalar(tt.mean(tt.softmax_ce_rows(xl, lab)));
  };
  Tape t2;
  int xl = t2.leaf(2, 4, raw, true);
  int out = t2.mean(t2.softmax_ce_rows(xl, lab));
  std::vector<int> wrt = {xl};
  fd_check(eval, raw, t2.gradients(out, wrt)[0]);

  // shift invariance
  std::vector<double> shifted = raw;
  for (int j = 0; j < 4; ++j) shifted[j] += 11.5;
  for (int j = 4; j < 8; ++j) shifted[j] -= 3.25;
  CHECK(eval(shifted) == doctest::Approx(eval(raw)).epsilon(1e-9));
}

TEST_CASE("scale_by and clamp_min gradients") {
  Rng rng(37);
  std::vector<double> a = randvec(rng, 6, 0.5, 1.5);
  std::vector<double> s = {0.7};
  auto build = [&](Tape& t, int na, int ns) {
    return t.sum(t.scale_by(t.clamp_min(na, 0.8), t.spow(ns, -1.0)));
  };
  Tape t;
  int na = t.leaf(2, 3, a, true);
  int ns = t.leaf(1, 1, s, true);
  int out = build(t, na, ns);
  std::vector<int> wrt = {na, ns};
  auto grads = t.gradients(out, wrt);
  fd_check(
      [&](std::span<const double> xs) {
        Tape tt;
        int xa = tt.leaf(2, 3, xs, true);
        int xs2 = tt.leaf(1, 1, s, false);
        return tt.scalar(build(tt, xa, xs2));
      },
      a, grads[0]);
  fd_check(
      [&](std::span<const double> xs) {
        Tape tt;
        int xa = tt.leaf(2, 3, a, false);
        int xs2 = tt.leaf(1, 1, xs, true);
        return tt.scalar(build(tt, xa, xs2));
      },
      s, grads[1]);
}

TEST_CASE("gradients of unreachable nodes are zero") {
  Tape t;
  std::vector<double> a = {1.0, 2.0};
  int na = t.leaf(1, 2, a, true);
  int nb = t.leaf(1, 2, a, true);
  int out = t.sum(na);
  std::vector<int> wrt = {nb};
  auto g = t.gradients(out, wrt);
  CHECK(g[0] == std::vector<double>{0.0, 0.0});
}

TEST_CASE("tape rejects shape mismatches") {
  Tape t;
  std::vector<double> a = {1, 2, 3, 4};
  int n22 = t.leaf(2, 2, a, false);
  int n14 = t.leaf(1, 4, a, false);
  CHECK_THROWS_AS(t.add(n22, n14), InvalidInput);
  CHECK_THROWS_AS(t.matmul(n22, n14), InvalidInput);
  CHECK_THROWS_AS(t.rowgroup_max(n22, 3), InvalidInput);
}
