#include <doctest.h>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "pcadv/dataio.hpp"
#include "pcadv/models.hpp"
#include "pcadv/rng.hpp"

using namespace pcadv;

namespace {

PointCloud random_cloud(Rng& rng, int n, double scale = 1.0) {
  PointCloud c(n);
  for (double& v : c.pts) v = scale * rng.uniform(-1.0, 1.0);
  return c;
}

PointCloud shuffled(const PointCloud& c, Rng& rng) {
  std::vector<int> perm(c.n());
  for (int i = 0; i < c.n(); ++i) perm[i] = i;
  for (int i = c.n(); i > 1; --i) std::swap(perm[i - 1], perm[rng.uniform_int(i)]);
  PointCloud out(c.n());
  for (int i = 0; i < c.n(); ++i)
    for (int d = 0; d < 3; ++d) out.at(i, d) = c.at(perm[i], d);
  return out;
}

GeneratorConfig small_gen_config() {
  GeneratorConfig cfg;
  cfg.noise_dim = 6;
  cfg.label_embed_dim = 2;
  cfg.n_classes = 3;
  cfg.branching = {2, 3};
  cfg.feature_dims = {8, 10, 7};
  return cfg;
}

double exact_top_singular_value(const std::vector<double>& w, int rows, int cols) {
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = w[static_cast<std::size_t>(i) * cols + j];
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  return svd.singularValues()(0);
}

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("generator output shape and determinism") {
  GeneratorConfig cfg; // defaults: branching 2^6 -> 64 points
  CHECK(cfg.points() == 64);
  GeneratorState g = init_generator(cfg, 42);
  Rng rng(1);
  std::vector<double> z(cfg.noise_dim);
  for (double& v : z) v = rng.normal();
  PointCloud a = generator_sample(g, z, 0);
  CHECK(a.n() == 64);
  PointCloud b = generator_sample(g, z, 0);
  CHECK(a.pts == b.pts);

  PointCloud other = generator_sample(g, z, 1);
  CHECK(a.pts != other.pts);
  // embedding rows differ at init, hence root features differ
  const NamedTensor& embed = g.params.get("embed");
  bool rows_differ = false;
  for (int j = 0; j < embed.cols; ++j)
    if (embed.data[j] != embed.data[embed.cols + j]) rows_differ = true;
  CHECK(rows_differ);
}

TEST_CASE("generator point count is the branching product on random configs") {
  Rng rng(77);
  for (int trial = 0; trial < 8; ++trial) {
    GeneratorConfig cfg;
    cfg.noise_dim = 4;
    cfg.label_embed_dim = 3;
    cfg.n_classes = 2;
    int depth = 1 + static_cast<int>(rng.uniform_int(3));
    cfg.branching.clear();
    cfg.feature_dims = {7};
    int expect = 1;
    for (int l = 0; l < depth; ++l) {
      int b = 2 + static_cast<int>(rng.uniform_int(2));
      cfg.branching.push_back(b);
      cfg.feature_dims.push_back(4 + static_cast<int>(rng.uniform_int(5)));
      expect *= b;
    }
    GeneratorState g = init_generator(cfg, 7 + trial);
    std::vector<double> z(cfg.noise_dim, 0.25);
    PointCloud out = generator_sample(g, z, 1);
    CHECK(out.n() == expect);
  }
}

TEST_CASE("generator validates inputs") {
  GeneratorState g = init_generator(small_gen_config(), 3);
  std::vector<double> z(6, 0.1);
  CHECK_THROWS_AS(generator_sample(g, z, 3), InvalidInput);
  CHECK_THROWS_AS(generator_sample(g, std::vector<double>(5, 0.1), 0), InvalidInput);

  GeneratorConfig bad = small_gen_config();
  bad.feature_dims[0] = 9; // != noise + embed
  CHECK_THROWS_AS(init_generator(bad, 1), InvalidConfig);
}

TEST_CASE("init determinism and shape bookkeeping") {
  GeneratorState a = init_generator(small_gen_config(), 11);
  GeneratorState b = init_generator(small_gen_config(), 11);
  GeneratorState c = init_generator(small_gen_config(), 12);
  bool all_equal = true, any_diff = false;
  for (std::size_t i = 0; i < a.params.tensors.size(); ++i) {
    if (a.params.tensors[i].data != b.params.tensors[i].data) all_equal = false;
    if (a.params.tensors[i].data != c.params.tensors[i].data) any_diff = true;
  }
  CHECK(all_equal);
  CHECK(any_diff);
  CHECK(a.params.get("embed").rows == 3);
  CHECK(a.params.get("embed").cols == 2);
  CHECK(a.params.get("up0_b1").rows == 8);
  CHECK(a.params.get("loop1").rows == 7);
  CHECK(a.params.get("anc1_0").cols == 8);
  CHECK(a.params.get("proj_w").rows == 3);
}

TEST_CASE("discriminator is exactly permutation invariant") {
  DiscriminatorConfig cfg;
  DiscriminatorState d = init_discriminator(cfg, 5);
  Rng rng(9);
  PointCloud c = random_cloud(rng, 32);
  double crit0;
  std::vector<double> logits0;
  discriminator_eval(d, c, &crit0, &logits0);
  CHECK(static_cast<int>(logits0.size()) == cfg.n_classes);
  for (int trial = 0; trial < 5; ++trial) {
    PointCloud p = shuffled(c, rng);
    double crit;
    std::vector<double> logits;
    discriminator_eval(d, p, &crit, &logits);
    CHECK(crit == crit0);
    CHECK(logits == logits0);
  }
}

TEST_CASE("zero-initialized heads give critic 0 and uniform class logits") {
  DiscriminatorState d = init_discriminator(DiscriminatorConfig{}, 6);
  for (const char* name : {"crit2", "aux2"}) {
    NamedTensor& w = d.params.get(std::string(name) + "_w");
    std::fill(w.data.begin(), w.data.end(), 0.0);
    NamedTensor& b = d.params.get(std::string(name) + "_b");
    std::fill(b.data.begin(), b.data.end(), 0.0);
  }
  Rng rng(10);
  PointCloud c = random_cloud(rng, 16);
  double crit;
  std::vector<double> logits;
  discriminator_eval(d, c, &crit, &logits);
  CHECK(crit == 0.0);
  for (double v : logits) CHECK(v == 0.0);
}

TEST_CASE("victims are permutation invariant with width M") {
  Rng rng(21);
  PointCloud c = random_cloud(rng, 24);
  for (VictimArch arch : {VictimArch::kPointNetLite, VictimArch::kEdgeConvLite}) {
    VictimConfig vc;
    vc.arch = arch;
    vc.n_classes = 4;
    VictimState v = init_victim(vc, 31);
    std::vector<double> base = victim_logits(v, c);
    CHECK(static_cast<int>(base.size()) == 4);
    for (int trial = 0; trial < 5; ++trial) {
      std::vector<double> out = victim_logits(v, shuffled(c, rng));
      for (std::size_t i = 0; i < base.size(); ++i)
        CHECK(out[i] == doctest::Approx(base[i]).epsilon(1e-9));
    }
  }
}

TEST_CASE("pointnet logits ignore duplicated points") {
  Rng rng(33);
  VictimConfig vc;
  vc.arch = VictimArch::kPointNetLite;
  VictimState v = init_victim(vc, 8);
  PointCloud c = random_cloud(rng, 12);
  std::vector<double> base = victim_logits(v, c);
  PointCloud dup = c;
  for (int d = 0; d < 3; ++d) dup.pts.push_back(c.at(5, d));
  std::vector<double> out = victim_logits(v, dup);
  CHECK(out == base);
}

TEST_CASE("edgeconv requires more points than neighbors") {
  VictimConfig vc;
  vc.arch = VictimArch::kEdgeConvLite;
  vc.knn_k = 8;
  VictimState v = init_victim(vc, 9);
  Rng rng(3);
  CHECK_THROWS_AS(victim_logits(v, random_cloud(rng, 8)), InvalidInput);
  CHECK_NOTHROW(victim_logits(v, random_cloud(rng, 9)));
}

TEST_CASE("spectral_normalize on a known spectrum") {
  std::vector<double> w = {3.0, 0.0, 0.0, 1.0};
  std::vector<double> u = {1.0, 0.0}, v = {0.6, 0.8};
  SpectralResult r = spectral_normalize(w, 2, 2, u, v, 30);
  CHECK(r.sigma_hat == doctest::Approx(3.0).epsilon(1e-9));
  std::vector<double> u2 = u, v2 = v;
  SpectralResult again = spectral_normalize(r.normalized, 2, 2, u2, v2, 30);
  CHECK(again.sigma_hat == doctest::Approx(1.0).epsilon(1e-9));
  for (std::size_t i = 0; i < w.size(); ++i)
    CHECK(again.normalized[i] == doctest::Approx(r.normalized[i]).epsilon(1e-6));
}

TEST_CASE("spectral_normalize matches the SVD oracle within 1 percent") {
  Rng rng(44);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> w(16 * 16);
    for (double& x : w) x = rng.uniform(-1.0, 1.0);
    std::vector<double> u(16), v(16);
    for (double& x : u) x = rng.normal();
    for (double& x : v) x = rng.normal();
    SpectralResult r = spectral_normalize(w, 16, 16, u, v, 50);
    double exact = exact_top_singular_value(w, 16, 16);
    CHECK(std::abs(r.sigma_hat - exact) <= 0.01 * exact);
  }
}

TEST_CASE("spectral_normalize handles the zero matrix") {
  std::vector<double> w(6, 0.0);
  std::vector<double> u = {1.0, 0.0}, v = {0.5, 0.5, std::sqrt(0.5)};
  SpectralResult r = spectral_normalize(w, 2, 3, u, v, 5);
  CHECK(r.normalized == w);
}

TEST_CASE("power vector updates keep normalized sigma near 1") {
  DiscriminatorState d = init_discriminator(DiscriminatorConfig{}, 77);
  update_power_vectors(d, 10);
  for (double s : normalized_sigma_estimates(d)) CHECK(s == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("checkpoint round trip preserves values and config") {
  GeneratorState g = init_generator(small_gen_config(), 55);
  std::string path = temp_path("pcadv_test_gen.ckpt");
  save_generator(path, g);
  GeneratorState g2 = load_generator(path);
  CHECK(g2.cfg.branching == g.cfg.branching);
  CHECK(g2.cfg.feature_dims == g.cfg.feature_dims);
  CHECK(g2.cfg.noise_dim == g.cfg.noise_dim);
  for (std::size_t i = 0; i < g.params.tensors.size(); ++i) {
    const auto& a = g.params.tensors[i];
    const auto& b = g2.params.get(a.name);
    CHECK(a.data.size() == b.data.size());
    for (std::size_t j = 0; j < a.data.size(); ++j)
      CHECK(static_cast<double>(static_cast<float>(a.data[j])) == b.data[j]);
  }
  CHECK(std::filesystem::exists(path + ".idx.txt"));

  // byte determinism: saving the loaded state reproduces the file
  std::string path2 = temp_path("pcadv_test_gen2.ckpt");
  save_generator(path2, g2);
  CHECK(dataio::read_text_file(path) == dataio::read_text_file(path2));
}

TEST_CASE("checkpoint loader reports distinct parse errors") {
  std::string path = temp_path("pcadv_bad.ckpt");
  dataio::write_text_file(path, "NOTACKPT___garbage");
  CHECK_THROWS_AS(load_checkpoint(path), dataio::MagicError);

  GeneratorState g = init_generator(small_gen_config(), 5);
  std::string good = temp_path("pcadv_good.ckpt");
  save_generator(good, g);
  std::string bytes = dataio::read_text_file(good);
  dataio::write_text_file(path, bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(load_checkpoint(path), dataio::TruncationError);

  std::string vbytes = bytes;
  vbytes[9] = 9; // bump version field
  dataio::write_text_file(path, vbytes);
  CHECK_THROWS_AS(load_checkpoint(path), dataio::VersionError);
}

TEST_CASE("victim checkpoint round trip keeps the architecture tag") {
  VictimConfig vc;
  vc.arch = VictimArch::kEdgeConvLite;
  vc.n_classes = 5;
  vc.knn_k = 6;
  VictimState v = init_victim(vc, 66);
  std::string path = temp_path("pcadv_test_victim.ckpt");
  save_victim(path, v);
  VictimState v2 = load_victim(path);
  CHECK(v2.cfg.arch == VictimArch::kEdgeConvLite);
  CHECK(v2.cfg.n_classes == 5);
  CHECK(v2.cfg.knn_k == 6);
}
