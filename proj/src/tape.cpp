#include "pcadv/tape.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace pcadv::ad {

namespace {

// C (+)= A' * B' with optional transposes; fixed inner-loop order so the
// OpenMP split over output rows is bit-deterministic.
void matmul_raw(std::span<const double> a, int ar, int ac, bool ta, std::span<const double> b,
                [[maybe_unused]] int br, int bc, bool tb, double* c, int cr, int cc,
                bool accumulate) {
  auto A = [&](int i, int k) { return ta ? a[static_cast<std::size_t>(k) * ac + i] : a[static_cast<std::size_t>(i) * ac + k]; };
  auto B = [&](int k, int j) { return tb ? b[static_cast<std::size_t>(j) * bc + k] : b[static_cast<std::size_t>(k) * bc + j]; };
  const int inner = ta ? ar : ac;
  const bool heavy = static_cast<long long>(cr) * cc * inner >= 16384;
#pragma omp parallel for schedule(static) if (heavy)
  for (int i = 0; i < cr; ++i) {
    for (int j = 0; j < cc; ++j) {
      double acc = 0.0;
      for (int k = 0; k < inner; ++k) acc += A(i, k) * B(k, j);
      double* out = &c[static_cast<std::size_t>(i) * cc + j];
      if (accumulate)
        *out += acc;
      else
        *out = acc;
    }
  }
}

void check(bool ok, const char* msg) {
  if (!ok) throw InvalidInput(msg);
}

}  // namespace

double Tape::scalar(int id) const {
  check(nodes_[id].rows == 1 && nodes_[id].cols == 1, "tape: node is not a scalar");
  return nodes_[id].value[0];
}

int Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

int Tape::leaf(int rows, int cols, std::span<const double> data, bool needs_grad) {
  check(rows >= 1 && cols >= 1, "tape: leaf shape must be positive");
  check(static_cast<std::size_t>(rows) * cols == data.size(), "tape: leaf data size mismatch");
  Node n;
  n.op = Op::kLeaf;
  n.rows = rows;
  n.cols = cols;
  n.needs_grad = needs_grad;
  n.value.assign(data.begin(), data.end());
  return push(std::move(n));
}

namespace {
Tape::Node elementwise_header(Tape::Op op, const Tape::Node& a, const Tape::Node& b, int ia,
                              int ib) {
  check(a.rows == b.rows && a.cols == b.cols, "tape: elementwise shape mismatch");
  Tape::Node n;
  n.op = op;
  n.rows = a.rows;
  n.cols = a.cols;
  n.parents = {ia, ib};
  n.needs_grad = a.needs_grad || b.needs_grad;
  n.value.resize(a.value.size());
  return n;
}
}  // namespace

int Tape::add(int a, int b) {
  Node n = elementwise_header(Op::kAdd, nodes_[a], nodes_[b], a, b);
  for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] = nodes_[a].value[i] + nodes_[b].value[i];
  return push(std::move(n));
}

int Tape::sub(int a, int b) {
  Node n = elementwise_header(Op::kSub, nodes_[a], nodes_[b], a, b);
  for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] = nodes_[a].value[i] - nodes_[b].value[i];
  return push(std::move(n));
}

int Tape::mul(int a, int b) {
  Node n = elementwise_header(Op::kMul, nodes_[a], nodes_[b], a, b);
  for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] = nodes_[a].value[i] * nodes_[b].value[i];
  return push(std::move(n));
}

int Tape::addc(int a, double c) {
  Node n;
  n.op = Op::kAddC;
  n.rows = nodes_[a].rows;
  n.cols = nodes_[a].cols;
  n.c0 = c;
  n.parents = {a};
  n.needs_grad = nodes_[a].needs_grad;
  n.value.resize(nodes_[a].value.size());
  for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] = nodes_[a].value[i] + c;
  return push(std::move(n));
}

int Tape::scale(int a, double c) {
  Node n;
  n.op = Op::kScale;
  n.rows = nodes_[a].rows;
  n.cols = nodes_[a].cols;
  n.c0 = c;
  n.parents = {a};
  n.needs_grad = nodes_[a].needs_grad;
  n.value.resize(nodes_[a].value.size());
  for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] = nodes_[a].value[i] * c;
  return push(std::move(n));
}

int Tape::matmul(int a, int b, bool trans_a, bool trans_b) {
  const Node& A = nodes_[a];
  const Node& B = nodes_[b];
  const int m = trans_a ? A.cols : A.rows;
  const int ka = trans_a ? A.rows : A.cols;
  const int kb = trans_b ? B.cols : B.rows;
  const int p = trans_b ? B.rows : B.cols;
  check(ka == kb, "tape: matmul inner dimensions mismatch");
  Node n;
  n.op = Op::kMatmul;
  n.rows = m;
  n.cols = p;
  n.i0 = trans_a ? 1 : 0;
  n.i1 = trans_b ? 1 : 0;
  n.parents = {a, b};
  n.needs_grad = A.needs_grad || B.needs_grad;
  n.value.resize(static_cast<std::size_t>(m) * p);
  matmul_raw(A.value, A.rows, A.cols, trans_a, B.value, B.rows, B.cols, trans_b, n.value.data(), m,
             p, false);
  return push(std::move(n));
}

int Tape::add_rowvec(int a, int b) {
  const Node& A = nodes_[a];
  const Node& B = nodes_[b];
  check(B.rows == 1 && B.cols == A.cols, "tape: add_rowvec needs a 1 x C vector");
  Node n;
  n.op = Op::kAddRowVec;
  n.rows = A.rows;
  n.cols = A.cols;
  n.parents = {a, b};
  n.needs_grad = A.needs_grad || B.needs_grad;
  n.value.resize(A.value.size());
  for (int i = 0; i < A.rows; ++i)
    for (int j = 0; j < A.cols; ++j)
      n.value[static_cast<std::size_t>(i) * A.cols + j] =
          A.value[static_cast<std::size_t>(i) * A.cols + j] + B.value[j];
  return push(std::move(n));
}

int Tape::sub_rowvec(int a, int b) {
  const Node& A = nodes_[a];
  const Node& B = nodes_[b];
  check(B.rows == 1 && B.cols == A.cols, "tape: sub_rowvec needs a 1 x C vector");
  Node n;
  n.op = Op::kSubRowVec;
  n.rows = A.rows;
  n.cols = A.cols;
  n.parents = {a, b};
  n.needs_grad = A.needs_grad || B.needs_grad;
  n.value.resize(A.value.size());
  for (int i = 0; i < A.rows; ++i)
    for (int j = 0; j < A.cols; ++j)
      n.value[static_cast<std::size_t>(i) * A.cols + j] =
          A.value[static_cast<std::size_t>(i) * A.cols + j] - B.value[j];
  return push(std::move(n));
}

int Tape::leaky_relu(int a, double slope) {
  Node n;
  n.op = Op::kLeakyRelu;
  n.rows = nodes_[a].rows;
  n.cols = nodes_[a].cols;
  n.c0 = slope;
  n.parents = {a};
  n.needs_grad = nodes_[a].needs_grad;
  n.value.resize(nodes_[a].value.size());
  for (std::size_t i = 0; i < n.value.size(); ++i) {
    double x = nodes_[a].value[i];
    n.value[i] = x > 0.0 ? x : slope * x;
  }
  return push(std::move(n));
}

namespace {
inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
inline double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}
}  // namespace

int Tape::soft_leaky(int a, double slope) {
  Node n;
  n.op = Op::kSoftLeaky;
  n.rows = nodes_[a].rows;
  n.cols = nodes_[a].cols;
  n.c0 = slope;
  n.parents = {a};
  n.needs_grad = nodes_[a].needs_grad;
  n.value.resize(nodes_[a].value.size());
  for (std::size_t i = 0; i < n.value.size(); ++i) {
    double x = nodes_[a].value[i];
    n.value[i] = slope * x + (1.0 - slope) * softplus(x);
  }
  return push(std::move(n));
}

int Tape::col_max(int a) {
  const Node& A = nodes_[a];
  Node n;
  n.op = Op::kColMax;
  n.rows = 1;
  n.cols = A.cols;
  n.parents = {a};
  n.needs_grad = A.needs_grad;
  n.value.resize(A.cols);
  n.idx.resize(A.cols);
  for (int j = 0; j < A.cols; ++j) {
    int arg = 0;
    double best = A.value[j];
    for (int i = 1; i < A.rows; ++i) {
      double v = A.value[static_cast<std::size_t>(i) * A.cols + j];
      if (v > best) {
        best = v;
        arg = i;
      }
    }
    n.value[j] = best;
    n.idx[j] = arg;
  }
  return push(std::move(n));
}

int Tape::rowgroup_max(int a, int group) {
  const Node& A = nodes_[a];
  check(group >= 1 && A.rows % group == 0, "tape: rowgroup_max group must divide rows");
  const int out_rows = A.rows / group;
  Node n;
  n.op = Op::kRowGroupMax;
  n.rows = out_rows;
  n.cols = A.cols;
  n.i0 = group;
  n.parents = {a};
  n.needs_grad = A.needs_grad;
  n.value.resize(static_cast<std::size_t>(out_rows) * A.cols);
  n.idx.resize(n.value.size());
  for (int g = 0; g < out_rows; ++g) {
    for (int j = 0; j < A.cols; ++j) {
      int arg = g * group;
      double best = A.value[static_cast<std::size_t>(arg) * A.cols + j];
      for (int i = 1; i < group; ++i) {
        double v = A.value[static_cast<std::size_t>(g * group + i) * A.cols + j];
        if (v > best) {
          best = v;
          arg = g * group + i;
        }
      }
      n.value[static_cast<std::size_t>(g) * A.cols + j] = best;
      n.idx[static_cast<std::size_t>(g) * A.cols + j] = arg;
    }
  }
  return push(std::move(n));
}

int Tape::gather_rows(int a, std::span<const int> rows) {
  const Node& A = nodes_[a];
  Node n;
  n.op = Op::kGatherRows;
  n.rows = static_cast<int>(rows.size());
  n.cols = A.cols;
  n.parents = {a};
  n.needs_grad = A.needs_grad;
  n.idx.assign(rows.begin(), rows.end());
  n.value.resize(static_cast<std::size_t>(n.rows) * n.cols);
  for (int r = 0; r < n.rows; ++r) {
    check(rows[r] >= 0 && rows[r] < A.rows, "tape: gather_rows index out of range");
    std::memcpy(&n.value[static_cast<std::size_t>(r) * n.cols],
                &A.value[static_cast<std::size_t>(rows[r]) * n.cols], sizeof(double) * n.cols);
  }
  return push(std::move(n));
}

int Tape::concat_cols(int a, int b) {
  const Node& A = nodes_[a];
  const Node& B = nodes_[b];
  check(A.rows == B.rows, "tape: concat_cols row mismatch");
  Node n;
  n.op = Op::kConcatCols;
  n.rows = A.rows;
  n.cols = A.cols + B.cols;
  n.parents = {a, b};
  n.needs_grad = A.needs_grad || B.needs_grad;
  n.value.resize(static_cast<std::size_t>(n.rows) * n.cols);
  for (int i = 0; i < n.rows; ++i) {
    std::memcpy(&n.value[static_cast<std::size_t>(i) * n.cols],
                &A.value[static_cast<std::size_t>(i) * A.cols], sizeof(double) * A.cols);
    std::memcpy(&n.value[static_cast<std::size_t>(i) * n.cols + A.cols],
                &B.value[static_cast<std::size_t>(i) * B.cols], sizeof(double) * B.cols);
  }
  return push(std::move(n));
}

int Tape::vstack(std::span<const int> parts) {
  check(!parts.empty(), "tape: vstack needs at least one part");
  const int cols = nodes_[parts[0]].cols;
  int rows = 0;
  bool ng = false;
  for (int p : parts) {
    check(nodes_[p].cols == cols, "tape: vstack column mismatch");
    rows += nodes_[p].rows;
    ng = ng || nodes_[p].needs_grad;
  }
  Node n;
  n.op = Op::kVStack;
  n.rows = rows;
  n.cols = cols;
  n.parents.assign(parts.begin(), parts.end());
  n.needs_grad = ng;
  n.value.reserve(static_cast<std::size_t>(rows) * cols);
  for (int p : parts) n.value.insert(n.value.end(), nodes_[p].value.begin(), nodes_[p].value.end());
  return push(std::move(n));
}

int Tape::sum(int a) {
  Node n;
  n.op = Op::kSum;
  n.rows = 1;
  n.cols = 1;
  n.parents = {a};
  n.needs_grad = nodes_[a].needs_grad;
  double acc = 0.0;
  for (double v : nodes_[a].value) acc += v;
  n.value = {acc};
  return push(std::move(n));
}

int Tape::mean(int a) {
  Node n;
  n.op = Op::kMean;
  n.rows = 1;
  n.cols = 1;
  n.parents = {a};
  n.needs_grad = nodes_[a].needs_grad;
  double acc = 0.0;
  for (double v : nodes_[a].value) acc += v;
  n.value = {acc / static_cast<double>(nodes_[a].value.size())};
  return push(std::move(n));
}

int Tape::spow(int a, double p) {
  Node n;
  n.op = Op::kSpow;
  n.rows = nodes_[a].rows;
  n.cols = nodes_[a].cols;
  n.c0 = p;
  n.parents = {a};
  n.needs_grad = nodes_[a].needs_grad;
  n.value.resize(nodes_[a].value.size());
  for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] = std::pow(nodes_[a].value[i], p);
  return push(std::move(n));
}

int Tape::clamp_min(int a, double c) {
  Node n;
  n.op = Op::kClampMin;
  n.rows = nodes_[a].rows;
  n.cols = nodes_[a].cols;
  n.c0 = c;
  n.parents = {a};
  n.needs_grad = nodes_[a].needs_grad;
  n.value.resize(nodes_[a].value.size());
  for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] = std::max(nodes_[a].value[i], c);
  return push(std::move(n));
}

int Tape::scale_by(int a, int s) {
  const Node& S = nodes_[s];
  check(S.rows == 1 && S.cols == 1, "tape: scale_by needs a scalar node");
  Node n;
  n.op = Op::kScaleBy;
  n.rows = nodes_[a].rows;
  n.cols = nodes_[a].cols;
  n.parents = {a, s};
  n.needs_grad = nodes_[a].needs_grad || S.needs_grad;
  n.value.resize(nodes_[a].value.size());
  const double sv = S.value[0];
  for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] = nodes_[a].value[i] * sv;
  return push(std::move(n));
}

int Tape::row_norm(int a) {
  const Node& A = nodes_[a];
  Node n;
  n.op = Op::kRowNorm;
  n.rows = A.rows;
  n.cols = 1;
  n.parents = {a};
  n.needs_grad = A.needs_grad;
  n.value.resize(A.rows);
  for (int i = 0; i < A.rows; ++i) {
    double acc = 0.0;
    for (int j = 0; j < A.cols; ++j) {
      double v = A.value[static_cast<std::size_t>(i) * A.cols + j];
      acc += v * v;
    }
    n.value[i] = std::sqrt(acc);
  }
  return push(std::move(n));
}

int Tape::softmax_ce_rows(int logits, std::span<const int> labels) {
  const Node& A = nodes_[logits];
  check(static_cast<int>(labels.size()) == A.rows, "tape: one label per logits row");
  Node n;
  n.op = Op::kSoftmaxCERows;
  n.rows = A.rows;
  n.cols = 1;
  n.parents = {logits};
  n.needs_grad = A.needs_grad;
  n.idx.assign(labels.begin(), labels.end());
  n.value.resize(A.rows);
  for (int i = 0; i < A.rows; ++i) {
    check(labels[i] >= 0 && labels[i] < A.cols, "tape: label out of range");
    const double* row = &A.value[static_cast<std::size_t>(i) * A.cols];
    double mx = row[0];
    for (int j = 1; j < A.cols; ++j) mx = std::max(mx, row[j]);
    double lse = 0.0;
    for (int j = 0; j < A.cols; ++j) lse += std::exp(row[j] - mx);
    n.value[i] = mx + std::log(lse) - row[labels[i]];
  }
  return push(std::move(n));
}

int Tape::mean_of(std::span<const int> scalars) {
  check(!scalars.empty(), "tape: mean_of needs at least one node");
  return mean(vstack(scalars));
}

std::vector<std::vector<double>> Tape::gradients(int out, std::span<const int> wrt) const {
  check(out >= 0 && out < size(), "tape: bad output node");
  check(nodes_[out].rows == 1 && nodes_[out].cols == 1, "tape: gradients need a scalar output");
  std::vector<std::vector<double>> grad(nodes_.size());
  grad[out].assign(1, 1.0);

  for (int id = out; id >= 0; --id) {
    const Node& n = nodes_[id];
    if (grad[id].empty() || !n.needs_grad) continue;
    const std::vector<double>& g = grad[id];
    auto gbuf = [&](int p) -> std::vector<double>& {
      if (grad[p].empty()) grad[p].assign(nodes_[p].value.size(), 0.0);
      return grad[p];
    };
    auto wants = [&](int p) { return nodes_[p].needs_grad; };

    switch (n.op) {
      case Op::kLeaf:
        break;
      case Op::kAdd: {
        for (int p : {n.parents[0], n.parents[1]})
          if (wants(p)) {
            auto& gp = gbuf(p);
            for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i];
          }
        break;
      }
      case Op::kSub: {
        if (wants(n.parents[0])) {
          auto& gp = gbuf(n.parents[0]);
          for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i];
        }
        if (wants(n.parents[1])) {
          auto& gp = gbuf(n.parents[1]);
          for (std::size_t i = 0; i < g.size(); ++i) gp[i] -= g[i];
        }
        break;
      }
      case Op::kMul: {
        const auto& av = nodes_[n.parents[0]].value;
        const auto& bv = nodes_[n.parents[1]].value;
        if (wants(n.parents[0])) {
          auto& gp = gbuf(n.parents[0]);
          for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i] * bv[i];
        }
        if (wants(n.parents[1])) {
          auto& gp = gbuf(n.parents[1]);
          for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i] * av[i];
        }
        break;
      }
      case Op::kAddC: {
        if (wants(n.parents[0])) {
          auto& gp = gbuf(n.parents[0]);
          for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i];
        }
        break;
      }
      case Op::kScale: {
        if (wants(n.parents[0])) {
          auto& gp = gbuf(n.parents[0]);
          for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i] * n.c0;
        }
        break;
      }
      case Op::kMatmul: {
        const Node& A = nodes_[n.parents[0]];
        const Node& B = nodes_[n.parents[1]];
        const bool ta = n.i0 != 0, tb = n.i1 != 0;
        // C = A'B'; propagate through the four transpose cases.
        if (wants(n.parents[0])) {
          auto& ga = gbuf(n.parents[0]);
          if (!ta && !tb)
            matmul_raw(g, n.rows, n.cols, false, B.value, B.rows, B.cols, !tb, ga.data(), A.rows,
                       A.cols, true);
          else if (!ta && tb)
            matmul_raw(g, n.rows, n.cols, false, B.value, B.rows, B.cols, false, ga.data(), A.rows,
                       A.cols, true);
          else if (ta && !tb)
            matmul_raw(B.value, B.rows, B.cols, false, g, n.rows, n.cols, true, ga.data(), A.rows,
                       A.cols, true);
          else
            matmul_raw(B.value, B.rows, B.cols, true, g, n.rows, n.cols, true, ga.data(), A.rows,
                       A.cols, true);
        }
        if (wants(n.parents[1])) {
          auto& gb = gbuf(n.parents[1]);
          if (!ta && !tb)
            matmul_raw(A.value, A.rows, A.cols, true, g, n.rows, n.cols, false, gb.data(), B.rows,
                       B.cols, true);
          else if (!ta && tb)
            matmul_raw(g, n.rows, n.cols, true, A.value, A.rows, A.cols, false, gb.data(), B.rows,
                       B.cols, true);
          else if (ta && !tb)
            matmul_raw(A.value, A.rows, A.cols, false, g, n.rows, n.cols, false, gb.data(), B.rows,
                       B.cols, true);
          else
            matmul_raw(g, n.rows, n.cols, true, A.value, A.rows, A.cols, true, gb.data(), B.rows,
                       B.cols, true);
        }
        break;
      }
      case Op::kAddRowVec:
      case Op::kSubRowVec: {
        const double sgn = n.op == Op::kAddRowVec ? 1.0 : -1.0;
        if (wants(n.parents[0])) {
          auto& gp = gbuf(n.parents[0]);
          for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i];
        }
        if (wants(n.parents[1])) {
          auto& gp = gbuf(n.parents[1]);
          for (int i = 0; i < n.rows; ++i)
            for (int j = 0; j < n.cols; ++j) gp[j] += sgn * g[static_cast<std::size_t>(i) * n.cols + j];
        }
        break;
      }
      case Op::kLeakyRelu: {
        if (wants(n.parents[0])) {
          const auto& xv = nodes_[n.parents[0]].value;
          auto& gp = gbuf(n.parents[0]);
          for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i] * (xv[i] > 0.0 ? 1.0 : n.c0);
        }
        break;
      }
      case Op::kSoftLeaky: {
        if (wants(n.parents[0])) {
          const auto& xv = nodes_[n.parents[0]].value;
          auto& gp = gbuf(n.parents[0]);
          for (std::size_t i = 0; i < g.size(); ++i)
            gp[i] += g[i] * (n.c0 + (1.0 - n.c0) * sigmoid(xv[i]));
        }
        break;
      }
      case Op::kColMax: {
        if (wants(n.parents[0])) {
          auto& gp = gbuf(n.parents[0]);
          for (int j = 0; j < n.cols; ++j)
            gp[static_cast<std::size_t>(n.idx[j]) * n.cols + j] += g[j];
        }
        break;
      }
      case Op::kRowGroupMax: {
        if (wants(n.parents[0])) {
          auto& gp = gbuf(n.parents[0]);
          for (std::size_t e = 0; e < g.size(); ++e) {
            int col = static_cast<int>(e % n.cols);
            gp[static_cast<std::size_t>(n.idx[e]) * n.cols + col] += g[e];
          }
        }
        break;
      }
      case Op::kGatherRows: {
        if (wants(n.parents[0])) {
          auto& gp = gbuf(n.parents[0]);
          for (int r = 0; r < n.rows; ++r)
            for (int j = 0; j < n.cols; ++j)
              gp[static_cast<std::size_t>(n.idx[r]) * n.cols + j] +=
                  g[static_cast<std::size_t>(r) * n.cols + j];
        }
        break;
      }
      case Op::kConcatCols: {
        const Node& A = nodes_[n.parents[0]];
        const Node& B = nodes_[n.parents[1]];
        if (wants(n.parents[0])) {
          auto& gp = gbuf(n.parents[0]);
          for (int i = 0; i < n.rows; ++i)
            for (int j = 0; j < A.cols; ++j)
              gp[static_cast<std::size_t>(i) * A.cols + j] += g[static_cast<std::size_t>(i) * n.cols + j];
        }
        if (wants(n.parents[1])) {
          auto& gp = gbuf(n.parents[1]);
          for (int i = 0; i < n.rows; ++i)
            for (int j = 0; j < B.cols; ++j)
              gp[static_cast<std::size_t>(i) * B.cols + j] +=
                  g[static_cast<std::size_t>(i) * n.cols + A.cols + j];
        }
        break;
      }
      case Op::kVStack: {
        std::size_t offset = 0;
        for (int p : n.parents) {
          const std::size_t len = nodes_[p].value.size();
          if (wants(p)) {
            auto& gp = gbuf(p);
            for (std::size_t i = 0; i < len; ++i) gp[i] += g[offset + i];
          }
          offset += len;
        }
        break;
      }
      case Op::kSum: {
        if (wants(n.parents[0])) {
          auto& gp = gbuf(n.parents[0]);
          for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[0];
        }
        break;
      }
      case Op::kMean: {
        if (wants(n.parents[0])) {
          auto& gp = gbuf(n.parents[0]);
          const double s = g[0] / static_cast<double>(gp.size());
          for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += s;
        }
        break;
      }
      case Op::kSpow: {
        if (wants(n.parents[0])) {
          const auto& xv = nodes_[n.parents[0]].value;
          auto& gp = gbuf(n.parents[0]);
          for (std::size_t i = 0; i < g.size(); ++i)
            gp[i] += g[i] * n.c0 * std::pow(xv[i], n.c0 - 1.0);
        }
        break;
      }
      case Op::kClampMin: {
        if (wants(n.parents[0])) {
          const auto& xv = nodes_[n.parents[0]].value;
          auto& gp = gbuf(n.parents[0]);
          for (std::size_t i = 0; i < g.size(); ++i)
            if (xv[i] > n.c0) gp[i] += g[i];
        }
        break;
      }
      case Op::kScaleBy: {
        const auto& av = nodes_[n.parents[0]].value;
        const double sv = nodes_[n.parents[1]].value[0];
        if (wants(n.parents[0])) {
          auto& gp = gbuf(n.parents[0]);
          for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i] * sv;
        }
        if (wants(n.parents[1])) {
          auto& gp = gbuf(n.parents[1]);
          double acc = 0.0;
          for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * av[i];
          gp[0] += acc;
        }
        break;
      }
      case Op::kRowNorm: {
        if (wants(n.parents[0])) {
          const Node& A = nodes_[n.parents[0]];
          auto& gp = gbuf(n.parents[0]);
          for (int i = 0; i < A.rows; ++i) {
            const double r = n.value[i];
            if (r <= 0.0) continue;
            const double s = g[i] / r;
            for (int j = 0; j < A.cols; ++j)
              gp[static_cast<std::size_t>(i) * A.cols + j] +=
                  s * A.value[static_cast<std::size_t>(i) * A.cols + j];
          }
        }
        break;
      }
      case Op::kSoftmaxCERows: {
        if (wants(n.parents[0])) {
          const Node& A = nodes_[n.parents[0]];
          auto& gp = gbuf(n.parents[0]);
          for (int i = 0; i < A.rows; ++i) {
            const double* row = &A.value[static_cast<std::size_t>(i) * A.cols];
            double mx = row[0];
            for (int j = 1; j < A.cols; ++j) mx = std::max(mx, row[j]);
            double lse = 0.0;
            for (int j = 0; j < A.cols; ++j) lse += std::exp(row[j] - mx);
            for (int j = 0; j < A.cols; ++j) {
              double soft = std::exp(row[j] - mx) / lse;
              double delta = j == n.idx[i] ? 1.0 : 0.0;
              gp[static_cast<std::size_t>(i) * A.cols + j] += g[i] * (soft - delta);
            }
          }
        }
        break;
      }
    }
  }

  std::vector<std::vector<double>> result;
  result.reserve(wrt.size());
  for (int id : wrt) {
    if (grad[id].empty())
      result.emplace_back(nodes_[id].value.size(), 0.0);
    else
      result.push_back(std::move(grad[id]));
  }
  return result;
}

}  // namespace pcadv::ad
