#include "pcadv/models.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "pcadv/dataio.hpp"

namespace pcadv {

// --------------------------------------------------------------------------
// ParamStore

NamedTensor& ParamStore::add(const std::string& name, int rows, int cols, bool trainable) {
  if (find(name)) throw InvalidInput("ParamStore: duplicate tensor " + name);
  NamedTensor t;
  t.name = name;
  t.rows = rows;
  t.cols = cols;
  t.trainable = trainable;
  t.data.assign(static_cast<std::size_t>(rows) * cols, 0.0);
  tensors.push_back(std::move(t));
  return tensors.back();
}

NamedTensor& ParamStore::get(const std::string& name) {
  for (auto& t : tensors)
    if (t.name == name) return t;
  throw InvalidInput("ParamStore: missing tensor " + name);
}

const NamedTensor& ParamStore::get(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t;
  throw InvalidInput("ParamStore: missing tensor " + name);
}

const NamedTensor* ParamStore::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

std::size_t ParamStore::total_values() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.data.size();
  return n;
}

int BoundParams::id(const std::string& name) const {
  for (std::size_t i = 0; i < store->tensors.size(); ++i)
    if (store->tensors[i].name == name) return node_ids[i];
  throw InvalidInput("BoundParams: missing tensor " + name);
}

BoundParams bind_params(ad::Tape& t, const ParamStore& ps, bool with_grads) {
  BoundParams b;
  b.store = &ps;
  b.node_ids.reserve(ps.tensors.size());
  for (const auto& tensor : ps.tensors)
    b.node_ids.push_back(
        t.leaf(tensor.rows, tensor.cols, tensor.data, with_grads && tensor.trainable));
  return b;
}

// --------------------------------------------------------------------------
// Generator

int GeneratorConfig::points() const {
  int n = 1;
  for (int b : branching) n *= b;
  return n;
}

void GeneratorConfig::validate() const {
  if (noise_dim < 1 || n_classes < 1 || label_embed_dim < 1)
    throw InvalidConfig("generator: dimensions must be positive");
  if (branching.empty()) throw InvalidConfig("generator: branching must be non-empty");
  for (int b : branching)
    if (b < 1) throw InvalidConfig("generator: branching factors must be positive");
  if (feature_dims.size() != branching.size() + 1)
    throw InvalidConfig("generator: need one feature width per depth plus the root");
  for (int f : feature_dims)
    if (f < 1) throw InvalidConfig("generator: feature widths must be positive");
  if (feature_dims[0] != noise_dim + label_embed_dim)
    throw InvalidConfig("generator: root width must equal noise_dim + label_embed_dim");
  if (!(leaky_slope > 0.0 && leaky_slope < 1.0))
    throw InvalidConfig("generator: leaky slope must be in (0,1)");
}

namespace {

void fill_fan_in_uniform(NamedTensor& t, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(t.cols));
  for (double& v : t.data) v = rng.uniform(-bound, bound);
}

void fill_normal(NamedTensor& t, Rng& rng, double sigma) {
  for (double& v : t.data) v = sigma * rng.normal();
}

void fill_unit_gaussian_direction(NamedTensor& t, Rng& rng) {
  double norm2 = 0.0;
  for (double& v : t.data) {
    v = rng.normal();
    norm2 += v * v;
  }
  double inv = 1.0 / std::max(std::sqrt(norm2), 1e-300);
  for (double& v : t.data) v *= inv;
}

std::string up_name(int l, int c) { return "up" + std::to_string(l) + "_b" + std::to_string(c); }
std::string loop_name(int l) { return "loop" + std::to_string(l); }
std::string anc_name(int l, int d) {
  return "anc" + std::to_string(l) + "_" + std::to_string(d);
}
std::string bias_name(int l) { return "bias" + std::to_string(l); }

}  // namespace

GeneratorState init_generator(const GeneratorConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  GeneratorState g;
  g.cfg = cfg;
  Rng rng = Rng(seed).derive(0x67656eULL);
  auto& P = g.params;
  fill_normal(P.add("embed", cfg.n_classes, cfg.label_embed_dim), rng, 0.1);
  for (int l = 0; l < cfg.depth(); ++l) {
    const int fl = cfg.feature_dims[l], fn = cfg.feature_dims[l + 1];
    for (int c = 0; c < cfg.branching[l]; ++c)
      fill_fan_in_uniform(P.add(up_name(l, c), fl, fl), rng);
    fill_fan_in_uniform(P.add(loop_name(l), fn, fl), rng);
    for (int d = 0; d <= l; ++d)
      fill_fan_in_uniform(P.add(anc_name(l, d), fn, cfg.feature_dims[d]), rng);
    P.add(bias_name(l), 1, fn); // zeros
  }
  fill_fan_in_uniform(P.add("proj_w", 3, cfg.feature_dims.back()), rng);
  P.add("proj_b", 1, 3);
  return g;
}

int generator_forward(ad::Tape& t, const GeneratorState& g, const BoundParams& p, int z_node,
                      int label) {
  const GeneratorConfig& cfg = g.cfg;
  if (label < 0 || label >= cfg.n_classes) throw InvalidInput("generator: label out of range");
  if (t.rows(z_node) != 1 || t.cols(z_node) != cfg.noise_dim)
    throw InvalidInput("generator: z must be 1 x noise_dim");

  const int one_label[1] = {label};
  int emb = t.gather_rows(p.id("embed"), one_label);
  int root = t.concat_cols(z_node, emb);

  // feats[d]: node features at depth d; anc_at[d][r] = index at depth d of
  // the depth-d ancestor of node r at the current depth.
  std::vector<int> feats = {root};
  std::vector<std::vector<int>> anc_at = {{0}};

  for (int l = 0; l < cfg.depth(); ++l) {
    const int b = cfg.branching[l];
    const int n_l = t.rows(feats[l]);

    // Upsampling: per-branch square maps, children grouped block-by-branch.
    std::vector<int> blocks(b);
    for (int c = 0; c < b; ++c) blocks[c] = t.matmul(feats[l], p.id(up_name(l, c)), false, true);
    int child_pre = t.vstack(blocks);

    // GraphConv: per-depth loop map on the upsampled feature plus per-depth
    // maps of every ancestor on the root path.
    int acc = t.matmul(child_pre, p.id(loop_name(l)), false, true);

    const int n_children = n_l * b;
    std::vector<std::vector<int>> child_anc(l + 2);
    for (int d = 0; d <= l; ++d) {
      child_anc[d].resize(n_children);
      for (int c = 0; c < b; ++c)
        for (int j = 0; j < n_l; ++j) child_anc[d][c * n_l + j] = anc_at[d][j];
    }
    child_anc[l + 1].resize(n_children);
    std::iota(child_anc[l + 1].begin(), child_anc[l + 1].end(), 0);

    for (int d = 0; d <= l; ++d) {
      int mapped = t.matmul(feats[d], p.id(anc_name(l, d)), false, true);
      acc = t.add(acc, t.gather_rows(mapped, child_anc[d]));
    }
    acc = t.add_rowvec(acc, p.id(bias_name(l)));
    feats.push_back(t.leaky_relu(acc, cfg.leaky_slope));
    anc_at = std::move(child_anc);
  }

  return t.affine(feats.back(), p.id("proj_w"), p.id("proj_b"));
}

PointCloud generator_sample(const GeneratorState& g, std::span<const double> z, int label) {
  if (static_cast<int>(z.size()) != g.cfg.noise_dim)
    throw InvalidInput("generator: z size mismatch");
  ad::Tape t;
  BoundParams p = bind_params(t, g.params, false);
  int zn = t.constant(1, g.cfg.noise_dim, z);
  int out = generator_forward(t, g, p, zn, label);
  PointCloud cloud;
  cloud.pts = t.value(out);
  return cloud;
}

// --------------------------------------------------------------------------
// Discriminator

std::vector<std::string> DiscriminatorState::sn_layer_names() const {
  std::vector<std::string> names = {"lift"};
  for (int i = 0; i < cfg.n_res_blocks; ++i) {
    names.push_back("res" + std::to_string(i) + "_1");
    names.push_back("res" + std::to_string(i) + "_2");
  }
  names.insert(names.end(), {"crit1", "crit2", "aux1", "aux2"});
  return names;
}

namespace {

void add_sn_linear(ParamStore& P, Rng& rng, const std::string& name, int out, int in) {
  fill_fan_in_uniform(P.add(name + "_w", out, in), rng);
  P.add(name + "_b", 1, out);
  fill_unit_gaussian_direction(P.add(name + "_u", 1, out, false), rng);
  fill_unit_gaussian_direction(P.add(name + "_v", 1, in, false), rng);
}

// x -> x * (W / sigma_hat)^T + b with sigma_hat = u W v read from the stored
// power vectors (constants on the tape; gradients flow through W twice).
int sn_affine(ad::Tape& t, const BoundParams& p, const ParamStore& ps, const std::string& name,
              int x) {
  int w = p.id(name + "_w");
  int u = t.constant(1, ps.get(name + "_u").cols, ps.get(name + "_u").data);
  int v = t.constant(1, ps.get(name + "_v").cols, ps.get(name + "_v").data);
  int wv = t.matmul(v, w, false, true);          // 1 x out
  int sigma = t.dot(u, wv);                      // scalar
  int inv = t.spow(t.clamp_min(sigma, 1e-12), -1.0);
  int wn = t.scale_by(w, inv);
  return t.add_rowvec(t.matmul(x, wn, false, true), p.id(name + "_b"));
}

}  // namespace

DiscriminatorState init_discriminator(const DiscriminatorConfig& cfg, std::uint64_t seed) {
  if (cfg.n_classes < 1 || cfg.width < 1 || cfg.n_res_blocks < 1 || cfg.head_width < 1)
    throw InvalidConfig("discriminator: dimensions must be positive");
  DiscriminatorState d;
  d.cfg = cfg;
  Rng rng = Rng(seed).derive(0x646973ULL);
  auto& P = d.params;
  add_sn_linear(P, rng, "lift", cfg.width, 3);
  for (int i = 0; i < cfg.n_res_blocks; ++i) {
    add_sn_linear(P, rng, "res" + std::to_string(i) + "_1", cfg.width, cfg.width);
    add_sn_linear(P, rng, "res" + std::to_string(i) + "_2", cfg.width, cfg.width);
  }
  add_sn_linear(P, rng, "crit1", cfg.head_width, cfg.width);
  add_sn_linear(P, rng, "crit2", 1, cfg.head_width);
  add_sn_linear(P, rng, "aux1", cfg.head_width, cfg.width);
  add_sn_linear(P, rng, "aux2", cfg.n_classes, cfg.head_width);
  // Align the power vectors so sigma_hat starts positive.
  update_power_vectors(d, 5);
  return d;
}

DiscOut discriminator_forward(ad::Tape& t, const DiscriminatorState& d, const BoundParams& p,
                              int cloud_node) {
  const auto& cfg = d.cfg;
  if (t.cols(cloud_node) != 3) throw InvalidInput("discriminator: cloud node must be N x 3");
  // Smooth activation: the gradient penalty probes D at a small step, so a
  // kink-free critic keeps the penalty differentiable at that scale.
  int h = t.soft_leaky(sn_affine(t, p, d.params, "lift", cloud_node), cfg.leaky_slope);
  for (int i = 0; i < cfg.n_res_blocks; ++i) {
    const std::string base = "res" + std::to_string(i);
    int inner = t.soft_leaky(sn_affine(t, p, d.params, base + "_1", h), cfg.leaky_slope);
    h = t.add(h, sn_affine(t, p, d.params, base + "_2", inner));
  }
  int pooled = t.col_max(h);
  int c1 = t.soft_leaky(sn_affine(t, p, d.params, "crit1", pooled), cfg.leaky_slope);
  int critic = sn_affine(t, p, d.params, "crit2", c1);
  int a1 = t.soft_leaky(sn_affine(t, p, d.params, "aux1", pooled), cfg.leaky_slope);
  int logits = sn_affine(t, p, d.params, "aux2", a1);
  return {critic, logits};
}

DiscOut discriminator_eval(const DiscriminatorState& d, const PointCloud& cloud,
                           double* critic_out, std::vector<double>* logits_out) {
  cloud.validate("discriminator input");
  ad::Tape t;
  BoundParams p = bind_params(t, d.params, false);
  int cn = t.constant(cloud.n(), 3, cloud.pts);
  DiscOut out = discriminator_forward(t, d, p, cn);
  if (critic_out) *critic_out = t.scalar(out.critic);
  if (logits_out) *logits_out = t.value(out.logits);
  return out;
}

// --------------------------------------------------------------------------
// Victims

const char* victim_arch_name(VictimArch a) {
  return a == VictimArch::kPointNetLite ? "pointnet_lite" : "edgeconv_lite";
}

VictimArch victim_arch_from_name(const std::string& name) {
  if (name == "pointnet_lite") return VictimArch::kPointNetLite;
  if (name == "edgeconv_lite") return VictimArch::kEdgeConvLite;
  throw InvalidInput("unknown victim architecture: " + name);
}

VictimState init_victim(const VictimConfig& cfg, std::uint64_t seed) {
  if (cfg.n_classes < 1) throw InvalidConfig("victim: n_classes must be positive");
  if (cfg.arch == VictimArch::kEdgeConvLite && cfg.knn_k < 1)
    throw InvalidConfig("victim: knn_k must be positive");
  VictimState v;
  v.cfg = cfg;
  Rng rng = Rng(seed).derive(0x766963ULL);
  auto& P = v.params;
  auto linear = [&](const std::string& name, int out, int in) {
    fill_fan_in_uniform(P.add(name + "_w", out, in), rng);
    P.add(name + "_b", 1, out);
  };
  if (cfg.arch == VictimArch::kPointNetLite) {
    linear("p1", 32, 3);
    linear("p2", 64, 32);
    linear("p3", 96, 64);
    linear("h1", 48, 96);
    linear("h2", cfg.n_classes, 48);
  } else {
    linear("e1", 24, 6);
    linear("e2", 48, 48);
    linear("h1", 32, 48);
    linear("h2", cfg.n_classes, 32);
  }
  return v;
}

namespace {

// Edge features [x_i ; x_j - x_i] over a fixed neighbor index, max over the
// k neighbors of each point.
int edge_block(ad::Tape& t, const BoundParams& p, const std::string& name, int feats,
               const std::vector<int>& self_idx, const std::vector<int>& nbr_idx, int k,
               double slope) {
  int xi = t.gather_rows(feats, self_idx);
  int xj = t.gather_rows(feats, nbr_idx);
  int e = t.concat_cols(xi, t.sub(xj, xi));
  int h = t.leaky_relu(t.affine(e, p.id(name + "_w"), p.id(name + "_b")), slope);
  return t.rowgroup_max(h, k);
}

}  // namespace

int victim_forward(ad::Tape& t, const VictimState& v, const BoundParams& p, int cloud_node) {
  const auto& cfg = v.cfg;
  if (t.cols(cloud_node) != 3) throw InvalidInput("victim: cloud node must be N x 3");
  const int n = t.rows(cloud_node);
  const double slope = 0.2;
  int pooled;
  if (cfg.arch == VictimArch::kPointNetLite) {
    int h = t.leaky_relu(t.affine(cloud_node, p.id("p1_w"), p.id("p1_b")), slope);
    h = t.leaky_relu(t.affine(h, p.id("p2_w"), p.id("p2_b")), slope);
    h = t.leaky_relu(t.affine(h, p.id("p3_w"), p.id("p3_b")), slope);
    pooled = t.col_max(h);
  } else {
    if (n <= cfg.knn_k) throw InvalidInput("victim: edgeconv_lite needs N > k");
    PointCloud cloud;
    cloud.pts = t.value(cloud_node);
    NeighborIndex ni = knn(cloud, cfg.knn_k);
    std::vector<int> self_idx(static_cast<std::size_t>(n) * cfg.knn_k);
    std::vector<int> nbr_idx(self_idx.size());
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < cfg.knn_k; ++j) {
        self_idx[static_cast<std::size_t>(i) * cfg.knn_k + j] = i;
        nbr_idx[static_cast<std::size_t>(i) * cfg.knn_k + j] = ni.idx(i, j);
      }
    int h = edge_block(t, p, "e1", cloud_node, self_idx, nbr_idx, cfg.knn_k, slope);
    h = edge_block(t, p, "e2", h, self_idx, nbr_idx, cfg.knn_k, slope);
    pooled = t.col_max(h);
  }
  int h1 = t.leaky_relu(t.affine(pooled, p.id("h1_w"), p.id("h1_b")), slope);
  return t.affine(h1, p.id("h2_w"), p.id("h2_b"));
}

std::vector<double> victim_logits(const VictimState& v, const PointCloud& cloud) {
  cloud.validate("victim input");
  ad::Tape t;
  BoundParams p = bind_params(t, v.params, false);
  int cn = t.constant(cloud.n(), 3, cloud.pts);
  return t.value(victim_forward(t, v, p, cn));
}

int argmax_label(std::span<const double> logits) {
  int best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[best]) best = static_cast<int>(i);
  return best;
}

// --------------------------------------------------------------------------
// Spectral normalization

namespace {

void matvec(std::span<const double> w, int rows, int cols, std::span<const double> x, double* out,
            bool transpose) {
  if (!transpose) {
    for (int i = 0; i < rows; ++i) {
      double acc = 0.0;
      for (int j = 0; j < cols; ++j) acc += w[static_cast<std::size_t>(i) * cols + j] * x[j];
      out[i] = acc;
    }
  } else {
    for (int j = 0; j < cols; ++j) out[j] = 0.0;
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) out[j] += w[static_cast<std::size_t>(i) * cols + j] * x[i];
  }
}

bool normalize_inplace(std::vector<double>& x) {
  double n2 = 0.0;
  for (double v : x) n2 += v * v;
  double n = std::sqrt(n2);
  if (n < 1e-300) return false;
  for (double& v : x) v /= n;
  return true;
}

}  // namespace

SpectralResult spectral_normalize(std::span<const double> w, int rows, int cols,
                                  std::vector<double>& u, std::vector<double>& v, int n_iter) {
  if (static_cast<int>(u.size()) != rows || static_cast<int>(v.size()) != cols)
    throw InvalidInput("spectral_normalize: power vector size mismatch");
  if (n_iter < 1) throw InvalidInput("spectral_normalize: n_iter must be positive");
  std::vector<double> tmp_v(cols), tmp_u(rows);
  for (int it = 0; it < n_iter; ++it) {
    matvec(w, rows, cols, u, tmp_v.data(), true);
    std::vector<double> cand_v = tmp_v;
    if (normalize_inplace(cand_v)) v = cand_v;
    matvec(w, rows, cols, v, tmp_u.data(), false);
    std::vector<double> cand_u = tmp_u;
    if (normalize_inplace(cand_u)) u = cand_u;
  }
  matvec(w, rows, cols, v, tmp_u.data(), false);
  double sigma = 0.0;
  for (int i = 0; i < rows; ++i) sigma += u[i] * tmp_u[i];
  double denom = std::max(sigma, 1e-12);
  SpectralResult r;
  r.sigma_hat = sigma;
  r.normalized.resize(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) r.normalized[i] = w[i] / denom;
  return r;
}

void update_power_vectors(DiscriminatorState& d, int n_iter) {
  for (const auto& name : d.sn_layer_names()) {
    NamedTensor& w = d.params.get(name + "_w");
    NamedTensor& u = d.params.get(name + "_u");
    NamedTensor& v = d.params.get(name + "_v");
    spectral_normalize(w.data, w.rows, w.cols, u.data, v.data, n_iter);
  }
}

std::vector<double> normalized_sigma_estimates(const DiscriminatorState& d, int n_iter) {
  std::vector<double> out;
  Rng rng(0x5349474d41ULL);
  for (const auto& name : d.sn_layer_names()) {
    const NamedTensor& w = d.params.get(name + "_w");
    const NamedTensor& u = d.params.get(name + "_u");
    const NamedTensor& v = d.params.get(name + "_v");
    // Normalize with the stored vectors, then estimate afresh.
    std::vector<double> su = u.data, sv = v.data;
    SpectralResult norm = spectral_normalize(w.data, w.rows, w.cols, su, sv, 1);
    std::vector<double> fu(w.rows), fv(w.cols);
    for (double& x : fu) x = rng.normal();
    for (double& x : fv) x = rng.normal();
    normalize_inplace(fu);
    normalize_inplace(fv);
    SpectralResult est = spectral_normalize(norm.normalized, w.rows, w.cols, fu, fv, n_iter);
    out.push_back(est.sigma_hat);
  }
  return out;
}

// --------------------------------------------------------------------------
// Checkpoints

namespace {

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u16(std::string& buf, std::uint16_t v) {
  for (int i = 0; i < 2; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_f32(std::string& buf, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(buf, bits);
}

constexpr char kCkptMagic[] = "PCAD-CKPT";
constexpr std::uint32_t kCkptVersion = 1;

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;
  explicit Reader(const std::string& b) : buf(b) {}
  void need(std::size_t n, const char* what) {
    if (pos + n > buf.size())
      throw dataio::TruncationError(std::string("checkpoint truncated reading ") + what);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = 0;
    for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 2;
    return v;
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return static_cast<std::uint8_t>(buf[pos++]);
  }
  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
  float f32(const char* what) {
    std::uint32_t bits = u32(what);
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
  }
};

}  // namespace

void save_checkpoint(const std::string& path, const ParamStore& params) {
  std::string buf;
  buf.append(kCkptMagic, sizeof(kCkptMagic) - 1);
  put_u32(buf, kCkptVersion);
  put_u32(buf, static_cast<std::uint32_t>(params.tensors.size()));
  for (const auto& t : params.tensors) {
    put_u16(buf, static_cast<std::uint16_t>(t.name.size()));
    buf.append(t.name);
    if (t.rows == 1) {
      buf.push_back(1);
      put_u32(buf, static_cast<std::uint32_t>(t.cols));
    } else {
      buf.push_back(2);
      put_u32(buf, static_cast<std::uint32_t>(t.rows));
      put_u32(buf, static_cast<std::uint32_t>(t.cols));
    }
    for (double v : t.data) put_f32(buf, static_cast<float>(v));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw RuntimeFailure("cannot open checkpoint for writing: " + path);
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw RuntimeFailure("checkpoint write failed: " + path);

  std::ofstream idx(path + ".idx.txt", std::ios::trunc);
  if (!idx) throw RuntimeFailure("cannot open checkpoint index for writing: " + path);
  for (const auto& t : params.tensors) idx << t.name << " " << t.rows << "x" << t.cols << "\n";
}

ParamStore load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InvalidInput("cannot open checkpoint: " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r(buf);
  std::string magic = r.bytes(sizeof(kCkptMagic) - 1, "magic");
  if (magic != kCkptMagic) throw dataio::MagicError("checkpoint magic mismatch: " + path);
  std::uint32_t version = r.u32("version");
  if (version != kCkptVersion)
    throw dataio::VersionError("unsupported checkpoint version " + std::to_string(version));
  std::uint32_t count = r.u32("tensor count");
  ParamStore ps;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint16_t name_len = r.u16("name length");
    std::string name = r.bytes(name_len, "name");
    std::uint8_t rank = r.u8("rank");
    int rows = 1, cols = 1;
    if (rank == 1) {
      cols = static_cast<int>(r.u32("dim"));
    } else if (rank == 2) {
      rows = static_cast<int>(r.u32("dim0"));
      cols = static_cast<int>(r.u32("dim1"));
    } else {
      throw dataio::FormatError("unsupported tensor rank " + std::to_string(rank));
    }
    NamedTensor t;
    t.name = name;
    t.rows = rows;
    t.cols = cols;
    t.data.resize(static_cast<std::size_t>(rows) * cols);
    for (double& v : t.data) v = static_cast<double>(r.f32("tensor data"));
    ps.tensors.push_back(std::move(t));
  }
  return ps;
}

namespace {

void add_meta(ParamStore& ps, const std::string& name, std::span<const double> values) {
  auto& t = ps.add(name, 1, static_cast<int>(values.size()), false);
  std::copy(values.begin(), values.end(), t.data.begin());
}

double meta_scalar(const ParamStore& ps, const std::string& name) {
  return ps.get(name).data.at(0);
}

// Copy loaded values into a freshly initialized layout so shapes and
// trainability flags are validated by construction.
void fill_from(ParamStore& dst, const ParamStore& src) {
  for (auto& t : dst.tensors) {
    const NamedTensor& s = src.get(t.name);
    if (s.rows * s.cols != t.rows * t.cols)
      throw dataio::FormatError("checkpoint tensor " + t.name + " has unexpected shape");
    t.data = s.data;
  }
}

}  // namespace

void save_generator(const std::string& path, const GeneratorState& g) {
  ParamStore out = g.params;
  add_meta(out, "meta/noise_dim", std::vector<double>{static_cast<double>(g.cfg.noise_dim)});
  add_meta(out, "meta/n_classes", std::vector<double>{static_cast<double>(g.cfg.n_classes)});
  add_meta(out, "meta/label_embed_dim",
           std::vector<double>{static_cast<double>(g.cfg.label_embed_dim)});
  add_meta(out, "meta/leaky_slope", std::vector<double>{g.cfg.leaky_slope});
  std::vector<double> br(g.cfg.branching.begin(), g.cfg.branching.end());
  add_meta(out, "meta/branching", br);
  std::vector<double> fd(g.cfg.feature_dims.begin(), g.cfg.feature_dims.end());
  add_meta(out, "meta/feature_dims", fd);
  save_checkpoint(path, out);
}

GeneratorState load_generator(const std::string& path) {
  ParamStore raw = load_checkpoint(path);
  GeneratorConfig cfg;
  cfg.noise_dim = static_cast<int>(meta_scalar(raw, "meta/noise_dim"));
  cfg.n_classes = static_cast<int>(meta_scalar(raw, "meta/n_classes"));
  cfg.label_embed_dim = static_cast<int>(meta_scalar(raw, "meta/label_embed_dim"));
  cfg.leaky_slope = meta_scalar(raw, "meta/leaky_slope");
  cfg.branching.clear();
  for (double v : raw.get("meta/branching").data) cfg.branching.push_back(static_cast<int>(v));
  cfg.feature_dims.clear();
  for (double v : raw.get("meta/feature_dims").data)
    cfg.feature_dims.push_back(static_cast<int>(v));
  GeneratorState g = init_generator(cfg, 0);
  fill_from(g.params, raw);
  return g;
}

void save_discriminator(const std::string& path, const DiscriminatorState& d) {
  ParamStore out = d.params;
  add_meta(out, "meta/n_classes", std::vector<double>{static_cast<double>(d.cfg.n_classes)});
  add_meta(out, "meta/width", std::vector<double>{static_cast<double>(d.cfg.width)});
  add_meta(out, "meta/n_res_blocks",
           std::vector<double>{static_cast<double>(d.cfg.n_res_blocks)});
  add_meta(out, "meta/head_width", std::vector<double>{static_cast<double>(d.cfg.head_width)});
  add_meta(out, "meta/leaky_slope", std::vector<double>{d.cfg.leaky_slope});
  save_checkpoint(path, out);
}

DiscriminatorState load_discriminator(const std::string& path) {
  ParamStore raw = load_checkpoint(path);
  DiscriminatorConfig cfg;
  cfg.n_classes = static_cast<int>(meta_scalar(raw, "meta/n_classes"));
  cfg.width = static_cast<int>(meta_scalar(raw, "meta/width"));
  cfg.n_res_blocks = static_cast<int>(meta_scalar(raw, "meta/n_res_blocks"));
  cfg.head_width = static_cast<int>(meta_scalar(raw, "meta/head_width"));
  cfg.leaky_slope = meta_scalar(raw, "meta/leaky_slope");
  DiscriminatorState d = init_discriminator(cfg, 0);
  fill_from(d.params, raw);
  return d;
}

void save_victim(const std::string& path, const VictimState& v) {
  ParamStore out = v.params;
  add_meta(out, "meta/arch",
           std::vector<double>{v.cfg.arch == VictimArch::kPointNetLite ? 0.0 : 1.0});
  add_meta(out, "meta/n_classes", std::vector<double>{static_cast<double>(v.cfg.n_classes)});
  add_meta(out, "meta/knn_k", std::vector<double>{static_cast<double>(v.cfg.knn_k)});
  save_checkpoint(path, out);
}

VictimState load_victim(const std::string& path) {
  ParamStore raw = load_checkpoint(path);
  VictimConfig cfg;
  cfg.arch = meta_scalar(raw, "meta/arch") == 0.0 ? VictimArch::kPointNetLite
                                                  : VictimArch::kEdgeConvLite;
  cfg.n_classes = static_cast<int>(meta_scalar(raw, "meta/n_classes"));
  cfg.knn_k = static_cast<int>(meta_scalar(raw, "meta/knn_k"));
  VictimState v = init_victim(cfg, 0);
  fill_from(v.params, raw);
  return v;
}

}  // namespace pcadv
