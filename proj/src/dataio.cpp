#include "pcadv/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace pcadv::dataio {

namespace fs = std::filesystem;

ShapeFamily shape_from_name(const std::string& name) {
  if (name == "sphere") return ShapeFamily::kSphere;
  if (name == "cube") return ShapeFamily::kCube;
  if (name == "cylinder") return ShapeFamily::kCylinder;
  if (name == "torus") return ShapeFamily::kTorus;
  throw InvalidInput("unknown shape family: " + name);
}

const char* shape_name(ShapeFamily f) {
  switch (f) {
    case ShapeFamily::kSphere: return "sphere";
    case ShapeFamily::kCube: return "cube";
    case ShapeFamily::kCylinder: return "cylinder";
    case ShapeFamily::kTorus: return "torus";
  }
  return "?";
}

namespace {

constexpr double kPi = 3.14159265358979323846;

std::array<double, 3> unit_direction(Rng& rng) {
  for (;;) {
    double x = rng.normal(), y = rng.normal(), z = rng.normal();
    double n = std::sqrt(x * x + y * y + z * z);
    if (n > 1e-12) return {x / n, y / n, z / n};
  }
}

std::array<double, 3> base_surface_point(ShapeFamily family, Rng& rng) {
  switch (family) {
    case ShapeFamily::kSphere:
      return unit_direction(rng);
    case ShapeFamily::kCube: {
      int face = static_cast<int>(rng.uniform_int(6));
      double u = rng.uniform(-0.5, 0.5), v = rng.uniform(-0.5, 0.5);
      double s = face % 2 == 0 ? 0.5 : -0.5;
      if (face / 2 == 0) return {s, u, v};
      if (face / 2 == 1) return {u, s, v};
      return {u, v, s};
    }
    case ShapeFamily::kCylinder: {
      // radius 0.5, height 1; side area pi, each cap pi/4.
      double pick = rng.uniform() * 1.5;
      if (pick < 1.0) {
        double a = rng.uniform(0.0, 2.0 * kPi);
        return {0.5 * std::cos(a), 0.5 * std::sin(a), rng.uniform(-0.5, 0.5)};
      }
      double z = pick < 1.25 ? 0.5 : -0.5;
      double r = 0.5 * std::sqrt(rng.uniform());
      double a = rng.uniform(0.0, 2.0 * kPi);
      return {r * std::cos(a), r * std::sin(a), z};
    }
    case ShapeFamily::kTorus: {
      const double R = 0.75, r = 0.25;
      for (;;) {
        double theta = rng.uniform(0.0, 2.0 * kPi);
        // acceptance proportional to the surface element R + r cos(theta)
        if (rng.uniform() * (R + r) <= R + r * std::cos(theta)) {
          double phi = rng.uniform(0.0, 2.0 * kPi);
          double w = R + r * std::cos(theta);
          return {w * std::cos(phi), w * std::sin(phi), r * std::sin(theta)};
        }
      }
    }
  }
  throw InvalidInput("unknown shape family");
}

}  // namespace

PointCloud sample_shape(const ShapeSpec& spec, int n_points) {
  if (n_points < 8) throw InvalidInput("sample_shape: need n_points >= 8");
  if (spec.scale_jitter < 0.0 || spec.rotation_jitter < 0.0 || spec.noise_sigma < 0.0)
    throw InvalidInput("sample_shape: jitters must be non-negative");
  Rng rng(spec.rng_seed);

  double scale = 1.0;
  if (spec.scale_jitter > 0.0)
    scale = std::max(1e-6, 1.0 + rng.uniform(-spec.scale_jitter, spec.scale_jitter));
  double rot[3][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  if (spec.rotation_jitter > 0.0) {
    std::array<double, 3> axis = unit_direction(rng);
    double angle = rng.uniform(-spec.rotation_jitter, spec.rotation_jitter);
    double c = std::cos(angle), s = std::sin(angle), t = 1.0 - c;
    double x = axis[0], y = axis[1], z = axis[2];
    double m[3][3] = {{t * x * x + c, t * x * y - s * z, t * x * z + s * y},
                      {t * x * y + s * z, t * y * y + c, t * y * z - s * x},
                      {t * x * z - s * y, t * y * z + s * x, t * z * z + c}};
    std::memcpy(rot, m, sizeof(m));
  }

  PointCloud cloud(n_points);
  for (int i = 0; i < n_points; ++i) {
    std::array<double, 3> p = base_surface_point(spec.family, rng);
    double q[3];
    for (int d = 0; d < 3; ++d)
      q[d] = scale * (rot[d][0] * p[0] + rot[d][1] * p[1] + rot[d][2] * p[2]);
    for (int d = 0; d < 3; ++d)
      cloud.at(i, d) = q[d] + (spec.noise_sigma > 0.0 ? spec.noise_sigma * rng.normal() : 0.0);
  }
  return cloud;
}

TriMesh load_off(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw InvalidInput("cannot open OFF file: " + path);
  std::string token;
  if (!(f >> token) || token != "OFF") throw MagicError("not an OFF file: " + path);
  std::size_t nv = 0, nf = 0, ne = 0;
  if (!(f >> nv >> nf >> ne)) throw TruncationError("OFF header truncated: " + path);
  TriMesh mesh;
  mesh.vertices.resize(nv);
  for (std::size_t i = 0; i < nv; ++i)
    if (!(f >> mesh.vertices[i][0] >> mesh.vertices[i][1] >> mesh.vertices[i][2]))
      throw TruncationError("OFF vertices truncated: " + path);
  for (std::size_t i = 0; i < nf; ++i) {
    int k;
    if (!(f >> k)) throw TruncationError("OFF faces truncated: " + path);
    std::vector<int> face(k);
    for (int j = 0; j < k; ++j) {
      if (!(f >> face[j])) throw TruncationError("OFF faces truncated: " + path);
      if (face[j] < 0 || face[j] >= static_cast<int>(nv))
        throw FormatError("OFF face index out of range: " + path);
    }
    if (k < 3) throw FormatError("OFF face with fewer than 3 vertices: " + path);
    for (int j = 1; j + 1 < k; ++j) // fan triangulation
      mesh.triangles.push_back({face[0], face[j], face[j + 1]});
  }
  return mesh;
}

namespace {
double triangle_area(const TriMesh& mesh, const std::array<int, 3>& tri) {
  const auto& a = mesh.vertices[tri[0]];
  const auto& b = mesh.vertices[tri[1]];
  const auto& c = mesh.vertices[tri[2]];
  double u[3] = {b[0] - a[0], b[1] - a[1], b[2] - a[2]};
  double v[3] = {c[0] - a[0], c[1] - a[1], c[2] - a[2]};
  double cx = u[1] * v[2] - u[2] * v[1];
  double cy = u[2] * v[0] - u[0] * v[2];
  double cz = u[0] * v[1] - u[1] * v[0];
  return 0.5 * std::sqrt(cx * cx + cy * cy + cz * cz);
}
}  // namespace

PointCloud sample_mesh_surface(const TriMesh& mesh, int n_points, std::uint64_t seed) {
  if (n_points < 1) throw InvalidInput("sample_mesh_surface: need n_points >= 1");
  if (mesh.triangles.empty()) throw InvalidInput("sample_mesh_surface: mesh has no triangles");
  std::vector<double> cumulative(mesh.triangles.size());
  double total = 0.0;
  for (std::size_t i = 0; i < mesh.triangles.size(); ++i) {
    total += triangle_area(mesh, mesh.triangles[i]);
    cumulative[i] = total;
  }
  if (total <= 0.0) throw InvalidInput("sample_mesh_surface: mesh has zero total area");
  Rng rng(seed);
  PointCloud cloud(n_points);
  for (int i = 0; i < n_points; ++i) {
    double pick = rng.uniform() * total;
    std::size_t t =
        std::lower_bound(cumulative.begin(), cumulative.end(), pick) - cumulative.begin();
    if (t >= mesh.triangles.size()) t = mesh.triangles.size() - 1;
    const auto& tri = mesh.triangles[t];
    double u = rng.uniform(), v = rng.uniform();
    if (u + v > 1.0) {
      u = 1.0 - u;
      v = 1.0 - v;
    }
    const auto& a = mesh.vertices[tri[0]];
    const auto& b = mesh.vertices[tri[1]];
    const auto& c = mesh.vertices[tri[2]];
    for (int d = 0; d < 3; ++d)
      cloud.at(i, d) = a[d] + u * (b[d] - a[d]) + v * (c[d] - a[d]);
  }
  return cloud;
}

PointCloud normalize(const PointCloud& cloud) {
  cloud.validate("normalize");
  const int n = cloud.n();
  double mean[3] = {0, 0, 0};
  for (int i = 0; i < n; ++i)
    for (int d = 0; d < 3; ++d) mean[d] += cloud.at(i, d);
  for (int d = 0; d < 3; ++d) mean[d] /= n;
  PointCloud out(n);
  double max_norm = 0.0;
  for (int i = 0; i < n; ++i) {
    double norm2 = 0.0;
    for (int d = 0; d < 3; ++d) {
      out.at(i, d) = cloud.at(i, d) - mean[d];
      norm2 += out.at(i, d) * out.at(i, d);
    }
    max_norm = std::max(max_norm, std::sqrt(norm2));
  }
  if (max_norm < 1e-12) throw InvalidInput("normalize: all points identical");
  for (double& v : out.pts) v /= max_norm;
  return out;
}

// --------------------------------------------------------------------------
// Cloud files

namespace {
constexpr char kCloudMagic[4] = {'P', 'C', 'A', 'D'};
constexpr std::uint32_t kCloudVersion = 1;

void append_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t parse_u32(const std::string& buf, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
  return v;
}
}  // namespace

void write_cloud(const std::string& path, const PointCloud& cloud) {
  cloud.validate("write_cloud");
  std::string buf;
  buf.append(kCloudMagic, 4);
  append_u32(buf, kCloudVersion);
  append_u32(buf, static_cast<std::uint32_t>(cloud.n()));
  append_u32(buf, 3);
  for (double v : cloud.pts) {
    float f = static_cast<float>(v);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    append_u32(buf, bits);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw RuntimeFailure("cannot open cloud file for writing: " + path);
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw RuntimeFailure("cloud write failed: " + path);
}

namespace {
std::string read_binary(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InvalidInput("cannot open file: " + path);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

void check_cloud_header(const std::string& buf, const std::string& path, std::uint32_t* count) {
  if (buf.size() < 16) throw TruncationError("cloud file truncated: " + path);
  if (std::memcmp(buf.data(), kCloudMagic, 4) != 0)
    throw MagicError("cloud magic mismatch: " + path);
  std::uint32_t version = parse_u32(buf, 4);
  if (version != kCloudVersion)
    throw VersionError("unsupported cloud version " + std::to_string(version) + ": " + path);
  *count = parse_u32(buf, 8);
  std::uint32_t dim = parse_u32(buf, 12);
  if (dim != 3) throw FormatError("cloud dimension must be 3: " + path);
  if (*count < 1) throw FormatError("cloud file has no points: " + path);
}
}  // namespace

PointCloud read_cloud(const std::string& path) {
  std::string buf = read_binary(path);
  std::uint32_t count = 0;
  check_cloud_header(buf, path, &count);
  std::size_t expected = 16 + static_cast<std::size_t>(count) * 3 * 4;
  if (buf.size() < expected) throw TruncationError("cloud payload truncated: " + path);
  if (buf.size() > expected) throw FormatError("cloud file has trailing bytes: " + path);
  PointCloud cloud(static_cast<int>(count));
  for (std::size_t i = 0; i < static_cast<std::size_t>(count) * 3; ++i) {
    std::uint32_t bits = parse_u32(buf, 16 + i * 4);
    float f;
    std::memcpy(&f, &bits, 4);
    cloud.pts[i] = static_cast<double>(f);
  }
  return cloud;
}

int read_cloud_count(const std::string& path) {
  std::string buf = read_binary(path);
  std::uint32_t count = 0;
  check_cloud_header(buf, path, &count);
  return static_cast<int>(count);
}

// --------------------------------------------------------------------------
// Manifests

void write_manifest(const std::string& path, const DatasetManifest& m) {
  std::ostringstream out;
  out << "path,label,class_name\n";
  for (const auto& e : m.entries) out << e.path << "," << e.label << "," << e.class_name << "\n";
  write_text_file(path, out.str());
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw InvalidInput("cannot open manifest: " + path);
  std::string line;
  if (!std::getline(f, line)) throw TruncationError("manifest is empty: " + path);
  if (line != "path,label,class_name")
    throw FormatError("manifest header mismatch: " + path);
  DatasetManifest m;
  const fs::path base = fs::path(path).parent_path();
  int max_label = -1;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::size_t c1 = line.find(',');
    std::size_t c2 = line.find(',', c1 == std::string::npos ? c1 : c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos)
      throw FormatError("manifest row needs 3 fields: " + line);
    ManifestEntry e;
    e.path = line.substr(0, c1);
    try {
      e.label = std::stoi(line.substr(c1 + 1, c2 - c1 - 1));
    } catch (const std::exception&) {
      throw FormatError("manifest label is not an integer: " + line);
    }
    e.class_name = line.substr(c2 + 1);
    if (e.label < 0) throw FormatError("manifest label must be non-negative: " + line);
    max_label = std::max(max_label, e.label);
    m.entries.push_back(std::move(e));
  }
  if (m.entries.empty()) throw FormatError("manifest has no entries: " + path);
  m.n_classes = max_label + 1;
  std::vector<char> seen(m.n_classes, 0);
  for (const auto& e : m.entries) seen[e.label] = 1;
  for (int c = 0; c < m.n_classes; ++c)
    if (!seen[c]) throw FormatError("manifest labels are not dense: missing class " +
                                    std::to_string(c));
  m.points_per_cloud = read_cloud_count((base / m.entries[0].path).string());
  for (const auto& e : m.entries) {
    int n = read_cloud_count((base / e.path).string());
    if (n != m.points_per_cloud)
      throw FormatError("manifest clouds have mixed point counts: " + e.path);
  }
  return m;
}

Dataset load_dataset(const std::string& manifest_path) {
  DatasetManifest m = load_manifest(manifest_path);
  const fs::path base = fs::path(manifest_path).parent_path();
  Dataset d;
  d.n_classes = m.n_classes;
  d.points_per_cloud = m.points_per_cloud;
  d.class_names.assign(m.n_classes, "");
  for (const auto& e : m.entries) {
    d.clouds.push_back(read_cloud((base / e.path).string()));
    d.labels.push_back(e.label);
    if (d.class_names[e.label].empty()) d.class_names[e.label] = e.class_name;
  }
  return d;
}

// --------------------------------------------------------------------------
// Config

namespace {
std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}
}  // namespace

const std::string* KeyValues::find(const std::string& key) const {
  for (const auto& [k, v] : items)
    if (k == key) return &v;
  return nullptr;
}

KeyValues parse_config_text(const std::string& text) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string s = trim(line);
    if (s.empty() || s[0] == '#') continue;
    std::size_t eq = s.find('=');
    if (eq == std::string::npos)
      throw FormatError("config line " + std::to_string(line_no) + " is not key = value");
    std::string key = trim(s.substr(0, eq));
    std::string value = trim(s.substr(eq + 1));
    if (key.empty()) throw FormatError("config line " + std::to_string(line_no) + " has no key");
    kv.items.emplace_back(key, value);
  }
  return kv;
}

KeyValues parse_config_file(const std::string& path) {
  return parse_config_text(read_text_file(path));
}

void reject_unknown_keys(const KeyValues& kv, std::span<const std::string> allowed) {
  for (const auto& [k, v] : kv.items) {
    bool ok = false;
    for (const auto& a : allowed)
      if (a == k) {
        ok = true;
        break;
      }
    if (!ok) throw InvalidInput("unknown config key: " + k);
  }
}

// --------------------------------------------------------------------------
// Misc

void export_xyz(const std::string& path, const PointCloud& cloud) {
  cloud.validate("export_xyz");
  std::ostringstream out;
  out.precision(17);
  for (int i = 0; i < cloud.n(); ++i)
    out << cloud.at(i, 0) << " " << cloud.at(i, 1) << " " << cloud.at(i, 2) << "\n";
  write_text_file(path, out.str());
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw RuntimeFailure("cannot open file for writing: " + path);
  f << content;
  if (!f) throw RuntimeFailure("write failed: " + path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw InvalidInput("cannot open file: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace pcadv::dataio
