// Timings for the OpenMP kernels against their serial references.
#include <chrono>
#include <cstdio>
#include <cstring>
#include <vector>

#include "pcadv/geometry.hpp"
#include "pcadv/rng.hpp"
#include "pcadv/tape.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

using namespace pcadv;

namespace {

double now_ms() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double, std::milli>(clock::now().time_since_epoch()).count();
}

template <typename F>
double time_ms(F&& fn, int reps) {
  fn(); // warm up
  double t0 = now_ms();
  for (int r = 0; r < reps; ++r) fn();
  return (now_ms() - t0) / reps;
}

PointCloud random_cloud(Rng& rng, int n) {
  PointCloud c(n);
  for (double& v : c.pts) v = rng.uniform(-1.0, 1.0);
  return c;
}

void report(const char* name, double serial_ms, double parallel_ms) {
  std::printf("%-24s serial %9.3f ms   omp %9.3f ms   speedup %5.2fx\n", name, serial_ms,
              parallel_ms, serial_ms / parallel_ms);
}

}  // namespace

int main(int argc, char** argv) {
  int n = 2048;
  int reps = 5;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--n") == 0 && i + 1 < argc) n = std::atoi(argv[++i]);
    if (std::strcmp(argv[i], "--reps") == 0 && i + 1 < argc) reps = std::atoi(argv[++i]);
  }
#ifdef _OPENMP
  std::printf("OpenMP max threads: %d\n", omp_get_max_threads());
#else
  std::printf("built without OpenMP\n");
#endif
  Rng rng(1234);
  PointCloud a = random_cloud(rng, n);
  PointCloud b = random_cloud(rng, n);

  report("pairwise_sq_dist",
         time_ms([&] { ref::pairwise_sq_dist_serial(a, b); }, reps),
         time_ms([&] { pairwise_sq_dist(a, b); }, reps));
  report("chamfer", time_ms([&] { ref::chamfer_serial(a, b); }, reps),
         time_ms([&] { chamfer(a, b); }, reps));
  report("knn (k=8)", time_ms([&] { ref::knn_serial(a, 8); }, reps),
         time_ms([&] { knn(a, 8); }, reps));

  // Dense matmul through the tape, sized like a hefty per-point layer.
  const int rows = n, inner = 64, cols = 64;
  std::vector<double> ma(static_cast<std::size_t>(rows) * inner);
  std::vector<double> mb(static_cast<std::size_t>(inner) * cols);
  for (double& v : ma) v = rng.uniform(-1.0, 1.0);
  for (double& v : mb) v = rng.uniform(-1.0, 1.0);
  auto run_matmul = [&] {
    ad::Tape t;
    int x = t.leaf(rows, inner, ma, false);
    int w = t.leaf(inner, cols, mb, false);
    t.matmul(x, w);
  };
#ifdef _OPENMP
  int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  double serial = time_ms(run_matmul, reps);
  omp_set_num_threads(saved);
  double parallel = time_ms(run_matmul, reps);
  report("tape matmul", serial, parallel);
#else
  report("tape matmul", time_ms(run_matmul, reps), time_ms(run_matmul, reps));
#endif
  return 0;
}
