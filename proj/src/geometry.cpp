#include "pcadv/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace pcadv {

namespace {
int g_threads = 0;

inline double sq_dist(const PointCloud& a, int i, const PointCloud& b, int j) {
  double dx = a.at(i, 0) - b.at(j, 0);
  double dy = a.at(i, 1) - b.at(j, 1);
  double dz = a.at(i, 2) - b.at(j, 2);
  return dx * dx + dy * dy + dz * dz;
}
}  // namespace

void set_num_threads(int n) {
  g_threads = n;
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#endif
}

int num_threads() { return g_threads; }

void PointCloud::validate(const char* what) const {
  if (pts.empty()) throw InvalidInput(std::string(what) + ": empty cloud");
  if (pts.size() % 3 != 0) throw InvalidInput(std::string(what) + ": shape is not N x 3");
  for (double v : pts)
    if (!std::isfinite(v)) throw InvalidInput(std::string(what) + ": non-finite coordinate");
}

std::vector<double> pairwise_sq_dist(const PointCloud& a, const PointCloud& b) {
  a.validate("pairwise_sq_dist a");
  b.validate("pairwise_sq_dist b");
  const int na = a.n(), nb = b.n();
  std::vector<double> d(static_cast<std::size_t>(na) * nb);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < na; ++i)
    for (int j = 0; j < nb; ++j) d[static_cast<std::size_t>(i) * nb + j] = sq_dist(a, i, b, j);
  return d;
}

namespace {
// Shared by the parallel and serial knn: per-row selection with fixed order.
void knn_row(const PointCloud& cloud, int i, int k, std::vector<int>& order, int* idx_out,
             double* dist_out) {
  const int n = cloud.n();
  order.resize(n - 1);
  int m = 0;
  for (int j = 0; j < n; ++j)
    if (j != i) order[m++] = j;
  std::stable_sort(order.begin(), order.end(), [&](int x, int y) {
    double dx = sq_dist(cloud, i, cloud, x), dy = sq_dist(cloud, i, cloud, y);
    if (dx != dy) return dx < dy;
    return x < y;
  });
  for (int j = 0; j < k; ++j) {
    idx_out[j] = order[j];
    dist_out[j] = std::sqrt(sq_dist(cloud, i, cloud, order[j]));
  }
}
}  // namespace

NeighborIndex knn(const PointCloud& cloud, int k) {
  cloud.validate("knn");
  const int n = cloud.n();
  if (k < 1 || k > n - 1) throw InvalidInput("knn: need 1 <= k <= N-1");
  NeighborIndex out;
  out.n = n;
  out.k = k;
  out.indices.resize(static_cast<std::size_t>(n) * k);
  out.distances.resize(static_cast<std::size_t>(n) * k);
#pragma omp parallel
  {
    std::vector<int> order;
#pragma omp for schedule(static)
    for (int i = 0; i < n; ++i)
      knn_row(cloud, i, k, order, &out.indices[static_cast<std::size_t>(i) * k],
              &out.distances[static_cast<std::size_t>(i) * k]);
  }
  return out;
}

double chamfer(const PointCloud& a, const PointCloud& b) {
  a.validate("chamfer a");
  b.validate("chamfer b");
  const int na = a.n(), nb = b.n();
  std::vector<double> mins_a(na), mins_b(nb);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < na; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (int j = 0; j < nb; ++j) best = std::min(best, sq_dist(a, i, b, j));
    mins_a[i] = best;
  }
#pragma omp parallel for schedule(static)
  for (int j = 0; j < nb; ++j) {
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < na; ++i) best = std::min(best, sq_dist(a, i, b, j));
    mins_b[j] = best;
  }
  double sa = 0.0, sb = 0.0;
  for (int i = 0; i < na; ++i) sa += mins_a[i];
  for (int j = 0; j < nb; ++j) sb += mins_b[j];
  return sa / na + sb / nb;
}

std::vector<int> solve_assignment(const std::vector<double>& cost, int n) {
  if (n < 1 || cost.size() != static_cast<std::size_t>(n) * n)
    throw InvalidInput("solve_assignment: cost must be n*n with n >= 1");
  const double inf = std::numeric_limits<double>::infinity();
  // 1-based potentials; p[j] = row matched to column j.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      int i0 = p[j0], j1 = 0;
      double delta = inf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        double cur = cost[static_cast<std::size_t>(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> rowsol(n, -1);
  for (int j = 1; j <= n; ++j)
    if (p[j]) rowsol[p[j] - 1] = j - 1;
  return rowsol;
}

double emd(const PointCloud& a, const PointCloud& b) {
  a.validate("emd a");
  b.validate("emd b");
  const int n = a.n();
  if (n != b.n()) throw InvalidInput("emd: point counts differ");
  std::vector<double> cost(static_cast<std::size_t>(n) * n);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      cost[static_cast<std::size_t>(i) * n + j] = std::sqrt(sq_dist(a, i, b, j));
  std::vector<int> sol = solve_assignment(cost, n);
  double total = 0.0;
  for (int i = 0; i < n; ++i) total += cost[static_cast<std::size_t>(i) * n + sol[i]];
  return total / n;
}

std::vector<int> farthest_point_sample(const PointCloud& cloud, int m, int seed_index) {
  cloud.validate("farthest_point_sample");
  const int n = cloud.n();
  if (m < 1 || m > n) throw InvalidInput("farthest_point_sample: need 1 <= m <= N");
  if (seed_index < 0 || seed_index >= n)
    throw InvalidInput("farthest_point_sample: seed_index out of range");
  std::vector<int> chosen;
  chosen.reserve(m);
  chosen.push_back(seed_index);
  std::vector<double> min_d(n, std::numeric_limits<double>::infinity());
  for (int it = 1; it < m; ++it) {
    int last = chosen.back();
    for (int j = 0; j < n; ++j) min_d[j] = std::min(min_d[j], sq_dist(cloud, j, cloud, last));
    int best = -1;
    double best_d = -1.0;
    for (int j = 0; j < n; ++j) {
      if (min_d[j] > best_d) {
        best_d = min_d[j];
        best = j;
      }
    }
    chosen.push_back(best);
  }
  return chosen;
}

std::vector<int> ball_query(const PointCloud& cloud, const std::array<double, 3>& center,
                            double radius) {
  cloud.validate("ball_query");
  if (!(radius > 0.0)) throw InvalidInput("ball_query: radius must be positive");
  const double r2 = radius * radius;
  std::vector<int> out;
  for (int i = 0; i < cloud.n(); ++i) {
    double dx = cloud.at(i, 0) - center[0];
    double dy = cloud.at(i, 1) - center[1];
    double dz = cloud.at(i, 2) - center[2];
    if (dx * dx + dy * dy + dz * dz <= r2) out.push_back(i);
  }
  return out;
}

namespace ref {

std::vector<double> pairwise_sq_dist_serial(const PointCloud& a, const PointCloud& b) {
  a.validate("pairwise_sq_dist a");
  b.validate("pairwise_sq_dist b");
  const int na = a.n(), nb = b.n();
  std::vector<double> d(static_cast<std::size_t>(na) * nb);
  for (int i = 0; i < na; ++i)
    for (int j = 0; j < nb; ++j) d[static_cast<std::size_t>(i) * nb + j] = sq_dist(a, i, b, j);
  return d;
}

NeighborIndex knn_serial(const PointCloud& cloud, int k) {
  cloud.validate("knn");
  const int n = cloud.n();
  if (k < 1 || k > n - 1) throw InvalidInput("knn: need 1 <= k <= N-1");
  NeighborIndex out;
  out.n = n;
  out.k = k;
  out.indices.resize(static_cast<std::size_t>(n) * k);
  out.distances.resize(static_cast<std::size_t>(n) * k);
  std::vector<int> order;
  for (int i = 0; i < n; ++i)
    knn_row(cloud, i, k, order, &out.indices[static_cast<std::size_t>(i) * k],
            &out.distances[static_cast<std::size_t>(i) * k]);
  return out;
}

double chamfer_serial(const PointCloud& a, const PointCloud& b) {
  a.validate("chamfer a");
  b.validate("chamfer b");
  const int na = a.n(), nb = b.n();
  double sa = 0.0, sb = 0.0;
  for (int i = 0; i < na; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (int j = 0; j < nb; ++j) best = std::min(best, sq_dist(a, i, b, j));
    sa += best;
  }
  for (int j = 0; j < nb; ++j) {
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < na; ++i) best = std::min(best, sq_dist(a, i, b, j));
    sb += best;
  }
  return sa / na + sb / nb;
}

}  // namespace ref

}  // namespace pcadv
