#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pcadv/common.hpp"

namespace pcadv::ad {

// Reverse-mode tape over row-major matrices (scalars are 1x1). Values are
// computed eagerly at node construction; backward() accumulates raw gradient
// buffers in one reverse sweep. Discrete choices (argmax, gather indices,
// neighbor sets) are frozen at construction, so every node value is smooth in
// its parents almost everywhere.
//
// The heavy kernels (matmul) run under OpenMP with one thread per output row
// and a fixed inner-loop order; results are bit-identical for any thread
// count. Reductions stay serial.
class Tape {
 public:
  enum class Op : std::uint8_t {
    kLeaf,
    kAdd,
    kSub,
    kMul,
    kAddC,      // x + c0
    kScale,     // c0 * x
    kMatmul,    // flags in i0 (transpose a), i1 (transpose b)
    kAddRowVec, // a (R x C) + b (1 x C)
    kSubRowVec,
    kLeakyRelu, // slope c0
    kSoftLeaky, // c0*x + (1-c0)*softplus(x): smooth leaky-ReLU-like
    kColMax,    // max over rows -> 1 x C
    kRowGroupMax, // groups of i0 consecutive rows -> (R/i0) x C
    kGatherRows,
    kConcatCols,
    kVStack,
    kSum,
    kMean,
    kSpow,      // x^c0 elementwise
    kClampMin,  // max(x, c0)
    kScaleBy,   // a * s, s scalar node
    kRowNorm,   // N x D -> N x 1 Euclidean row norms
    kSoftmaxCERows, // B x M logits + labels -> B x 1 cross entropies
  };

  struct Node {
    Op op;
    int rows = 0, cols = 0;
    int i0 = 0, i1 = 0;
    double c0 = 0.0;
    bool needs_grad = false;
    std::vector<int> parents;
    std::vector<int> idx;     // gather rows / argmax cache / labels
    std::vector<double> value;
  };

  int size() const { return static_cast<int>(nodes_.size()); }
  const Node& node(int id) const { return nodes_[id]; }
  const std::vector<double>& value(int id) const { return nodes_[id].value; }
  double scalar(int id) const;
  int rows(int id) const { return nodes_[id].rows; }
  int cols(int id) const { return nodes_[id].cols; }

  int leaf(int rows, int cols, std::span<const double> data, bool needs_grad);
  int constant(int rows, int cols, std::span<const double> data) {
    return leaf(rows, cols, data, false);
  }
  int constant_scalar(double v) { return leaf(1, 1, std::span<const double>(&v, 1), false); }

  int add(int a, int b);
  int sub(int a, int b);
  int mul(int a, int b);
  int addc(int a, double c);
  int scale(int a, double c);
  int matmul(int a, int b, bool trans_a = false, bool trans_b = false);
  int add_rowvec(int a, int b);
  int sub_rowvec(int a, int b);
  int leaky_relu(int a, double slope);
  int soft_leaky(int a, double slope);
  int col_max(int a);
  int rowgroup_max(int a, int group);
  int gather_rows(int a, std::span<const int> rows);
  int concat_cols(int a, int b);
  int vstack(std::span<const int> parts);
  int sum(int a);
  int mean(int a);
  int spow(int a, double p);
  int clamp_min(int a, double c);
  int scale_by(int a, int s);
  int row_norm(int a);
  int softmax_ce_rows(int logits, std::span<const int> labels);

  // Composites.
  int dot(int a, int b) { return sum(mul(a, b)); }
  int affine(int x, int w, int b) { return add_rowvec(matmul(x, w, false, true), b); }
  int mean_of(std::span<const int> scalars);

  // Gradients of scalar node `out` with respect to the listed nodes. Nodes
  // not reachable from `out` get zero gradients of their own shape.
  std::vector<std::vector<double>> gradients(int out, std::span<const int> wrt) const;

 private:
  int push(Node n);
  std::vector<Node> nodes_;
};

}  // namespace pcadv::ad
