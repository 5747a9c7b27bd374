#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pcadv/geometry.hpp"
#include "pcadv/rng.hpp"
#include "pcadv/tape.hpp"

namespace pcadv {

struct NamedTensor {
  std::string name;
  int rows = 0, cols = 0;
  bool trainable = true;
  std::vector<double> data;
};

// Ordered name -> tensor map. Order is fixed at init and drives optimizer
// slots and checkpoint layout, so runs are reproducible.
struct ParamStore {
  std::vector<NamedTensor> tensors;

  NamedTensor& add(const std::string& name, int rows, int cols, bool trainable = true);
  NamedTensor& get(const std::string& name);
  const NamedTensor& get(const std::string& name) const;
  const NamedTensor* find(const std::string& name) const;
  std::size_t total_values() const;
};

// One tape leaf per tensor of a ParamStore. Binding once and reusing it for
// every forward pass on the tape makes all passes accumulate into the same
// parameter gradients.
struct BoundParams {
  const ParamStore* store = nullptr;
  std::vector<int> node_ids; // parallel to store->tensors

  int id(const std::string& name) const;
};

// with_grads marks trainable tensors as gradient targets; u/v power vectors
// and frozen networks are bound without gradients.
BoundParams bind_params(ad::Tape& t, const ParamStore& ps, bool with_grads);

struct GeneratorConfig {
  int noise_dim = 32;
  int n_classes = 2;
  int label_embed_dim = 8;
  std::vector<int> branching = {2, 2, 2, 2, 2, 2};
  // One width per tree depth, root first; root width must equal
  // noise_dim + label_embed_dim. Final projection maps feature_dims.back() to 3.
  std::vector<int> feature_dims = {40, 96, 64, 64, 48, 32, 32};
  double leaky_slope = 0.2;

  int points() const;
  int depth() const { return static_cast<int>(branching.size()); }
  void validate() const;
};

struct GeneratorState {
  GeneratorConfig cfg;
  ParamStore params;
};

struct DiscriminatorConfig {
  int n_classes = 2;
  int width = 48;
  int n_res_blocks = 2;
  int head_width = 32;
  double leaky_slope = 0.2;
};

struct DiscriminatorState {
  DiscriminatorConfig cfg;
  ParamStore params; // weights/biases plus non-trainable u/v power vectors

  std::vector<std::string> sn_layer_names() const;
};

enum class VictimArch { kPointNetLite, kEdgeConvLite };

const char* victim_arch_name(VictimArch a);
VictimArch victim_arch_from_name(const std::string& name);

struct VictimConfig {
  VictimArch arch = VictimArch::kPointNetLite;
  int n_classes = 2;
  int knn_k = 8; // edgeconv only
};

struct VictimState {
  VictimConfig cfg;
  ParamStore params;
};

// --- forward passes (tape-building; values are read off the returned nodes) ---

// Noise + label -> N x 3 coordinate node. z_node must be 1 x noise_dim.
int generator_forward(ad::Tape& t, const GeneratorState& g, const BoundParams& p, int z_node,
                      int label);

// Run on a scratch tape and return the coordinates.
PointCloud generator_sample(const GeneratorState& g, std::span<const double> z, int label);

struct DiscOut {
  int critic;  // 1 x 1
  int logits;  // 1 x n_classes
};
DiscOut discriminator_forward(ad::Tape& t, const DiscriminatorState& d, const BoundParams& p,
                              int cloud_node);
DiscOut discriminator_eval(const DiscriminatorState& d, const PointCloud& cloud,
                           double* critic_out, std::vector<double>* logits_out);

int victim_forward(ad::Tape& t, const VictimState& v, const BoundParams& p, int cloud_node);
std::vector<double> victim_logits(const VictimState& v, const PointCloud& cloud);

int argmax_label(std::span<const double> logits);

// --- spectral normalization ---

struct SpectralResult {
  std::vector<double> normalized; // W / sigma_hat
  double sigma_hat = 0.0;
};

// n_iter power-iteration steps on (u, v) in place, then W / sigma_hat with
// sigma_hat = u^T W v (clamped to 1e-12 for the zero matrix).
SpectralResult spectral_normalize(std::span<const double> w, int rows, int cols,
                                  std::vector<double>& u, std::vector<double>& v, int n_iter);

// Persistent power iterations on every spectrally normalized layer of the
// discriminator; the trainer calls this before each critic update.
void update_power_vectors(DiscriminatorState& d, int n_iter = 1);

// Fresh power-iteration estimates (independent start vectors, n_iter steps)
// of the top singular value of each normalized map. Used for checkpoint-time
// assertions that the estimates stay near 1.
std::vector<double> normalized_sigma_estimates(const DiscriminatorState& d, int n_iter = 30);

// --- init + checkpoints ---

GeneratorState init_generator(const GeneratorConfig& cfg, std::uint64_t seed);
DiscriminatorState init_discriminator(const DiscriminatorConfig& cfg, std::uint64_t seed);
VictimState init_victim(const VictimConfig& cfg, std::uint64_t seed);

// Binary checkpoint: magic "PCAD-CKPT", version u32, tensor count u32, then
// per tensor name (u16 length + bytes), rank u8, dims u32, float32 LE data.
// A plain-text ".idx.txt" sidecar lists name -> shape.
void save_checkpoint(const std::string& path, const ParamStore& params);
ParamStore load_checkpoint(const std::string& path);

void save_generator(const std::string& path, const GeneratorState& g);
GeneratorState load_generator(const std::string& path);
void save_discriminator(const std::string& path, const DiscriminatorState& d);
DiscriminatorState load_discriminator(const std::string& path);
void save_victim(const std::string& path, const VictimState& v);
VictimState load_victim(const std::string& path);

}  // namespace pcadv
