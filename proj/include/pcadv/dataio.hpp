#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pcadv/geometry.hpp"
#include "pcadv/rng.hpp"

namespace pcadv::dataio {

class ParseError : public InvalidInput {
 public:
  explicit ParseError(const std::string& msg) : InvalidInput(msg) {}
};
class MagicError : public ParseError {
 public:
  explicit MagicError(const std::string& msg) : ParseError(msg) {}
};
class VersionError : public ParseError {
 public:
  explicit VersionError(const std::string& msg) : ParseError(msg) {}
};
class TruncationError : public ParseError {
 public:
  explicit TruncationError(const std::string& msg) : ParseError(msg) {}
};
class FormatError : public ParseError {
 public:
  explicit FormatError(const std::string& msg) : ParseError(msg) {}
};

// --- synthetic shapes ---

enum class ShapeFamily { kSphere, kCube, kCylinder, kTorus };

ShapeFamily shape_from_name(const std::string& name);
const char* shape_name(ShapeFamily f);

struct ShapeSpec {
  ShapeFamily family = ShapeFamily::kSphere;
  double scale_jitter = 0.0;   // multiplicative, uniform in [1-j, 1+j]
  double rotation_jitter = 0.0; // radians, random axis
  double noise_sigma = 0.0;    // isotropic Gaussian per point
  std::uint64_t rng_seed = 0;
};

// Uniform surface sample of the base shape (sphere radius 1, cube side 1,
// cylinder radius 0.5 height 1, torus radii 0.75/0.25), then jitter.
PointCloud sample_shape(const ShapeSpec& spec, int n_points);

// --- triangle meshes ---

struct TriMesh {
  std::vector<std::array<double, 3>> vertices;
  std::vector<std::array<int, 3>> triangles;
};

TriMesh load_off(const std::string& path);

// Area-weighted triangle pick, barycentric-uniform point per pick.
PointCloud sample_mesh_surface(const TriMesh& mesh, int n_points, std::uint64_t seed);

// --- normalization ---

// Zero centroid, max point norm exactly 1.
PointCloud normalize(const PointCloud& cloud);

// --- cloud files: magic "PCAD", version u32, count u32, dim u32 (=3),
// count*3 float32 LE row-major ---

void write_cloud(const std::string& path, const PointCloud& cloud);
PointCloud read_cloud(const std::string& path);
// Reads just the header, returning the point count.
int read_cloud_count(const std::string& path);

// --- datasets ---

struct ManifestEntry {
  std::string path; // relative to the manifest file
  int label = 0;
  std::string class_name;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  int n_classes = 0;
  int points_per_cloud = 0;
};

void write_manifest(const std::string& path, const DatasetManifest& m);
// Validates dense labels and (by reading cloud headers) a uniform point count.
DatasetManifest load_manifest(const std::string& path);

struct Dataset {
  std::vector<PointCloud> clouds;
  std::vector<int> labels;
  std::vector<std::string> class_names;
  int n_classes = 0;
  int points_per_cloud = 0;
};

Dataset load_dataset(const std::string& manifest_path);

// --- config files: `key = value` lines, '#' comments ---

struct KeyValues {
  std::vector<std::pair<std::string, std::string>> items;
  const std::string* find(const std::string& key) const;
};

KeyValues parse_config_text(const std::string& text);
KeyValues parse_config_file(const std::string& path);
// Throws InvalidInput when a key is not in `allowed`.
void reject_unknown_keys(const KeyValues& kv, std::span<const std::string> allowed);

// --- misc ---

// One "x y z" line per point.
void export_xyz(const std::string& path, const PointCloud& cloud);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

}  // namespace pcadv::dataio
