#pragma once

#include <array>
#include <cstddef>
#include <initializer_list>
#include <vector>

#include "pcadv/common.hpp"

namespace pcadv {

// N x 3 point set, row-major, model-space length units.
struct PointCloud {
  std::vector<double> pts;

  PointCloud() = default;
  explicit PointCloud(int n) : pts(static_cast<std::size_t>(n) * 3, 0.0) {}
  PointCloud(std::initializer_list<std::array<double, 3>> points) {
    pts.reserve(points.size() * 3);
    for (const auto& p : points) {
      pts.push_back(p[0]);
      pts.push_back(p[1]);
      pts.push_back(p[2]);
    }
  }

  int n() const { return static_cast<int>(pts.size() / 3); }
  double& at(int i, int d) { return pts[static_cast<std::size_t>(i) * 3 + d]; }
  double at(int i, int d) const { return pts[static_cast<std::size_t>(i) * 3 + d]; }

  // Throws InvalidInput on empty cloud or non-finite coordinates.
  void validate(const char* what = "point cloud") const;
};

struct LabeledCloud {
  PointCloud cloud;
  int label = 0;
};

// Row i: indices/distances of the k nearest neighbors of point i (self
// excluded), distances ascending, ties broken by lower index.
struct NeighborIndex {
  int n = 0;
  int k = 0;
  std::vector<int> indices;      // n*k
  std::vector<double> distances; // n*k, unsquared
  int idx(int i, int j) const { return indices[static_cast<std::size_t>(i) * k + j]; }
  double dist(int i, int j) const { return distances[static_cast<std::size_t>(i) * k + j]; }
};

// Squared Euclidean distances, entry (i,j) = |a_i - b_j|^2.
std::vector<double> pairwise_sq_dist(const PointCloud& a, const PointCloud& b);

NeighborIndex knn(const PointCloud& cloud, int k);

// (1/Na) sum_i min_j |a_i-b_j|^2 + (1/Nb) sum_j min_i |b_j-a_i|^2.
double chamfer(const PointCloud& a, const PointCloud& b);

// (1/N) min over bijections of sum_i |a_i - b_pi(i)|, exact assignment.
double emd(const PointCloud& a, const PointCloud& b);

// Greedy max-min selection of m indices starting from seed_index.
std::vector<int> farthest_point_sample(const PointCloud& cloud, int m, int seed_index);

// All indices with |p_i - center| <= radius, ascending.
std::vector<int> ball_query(const PointCloud& cloud, const std::array<double, 3>& center,
                            double radius);

// Exact solver for the square assignment problem (Jonker-Volgenant style
// shortest augmenting paths, O(n^3)). cost is n*n row-major; returns the
// column assigned to each row. Used by emd and exposed for tests.
std::vector<int> solve_assignment(const std::vector<double>& cost, int n);

namespace ref {
// Straightforward single-thread implementations kept as the reference for
// the OpenMP kernels; tests assert bit equality and the bench target times
// both.
std::vector<double> pairwise_sq_dist_serial(const PointCloud& a, const PointCloud& b);
NeighborIndex knn_serial(const PointCloud& cloud, int k);
double chamfer_serial(const PointCloud& a, const PointCloud& b);
}  // namespace ref

}  // namespace pcadv
