#include "pcadv/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "pcadv/dataio.hpp"

namespace pcadv {

void CloudSet::validate(bool require_uniform_n) const {
  if (clouds.empty()) throw InvalidInput("cloud set is empty");
  for (const auto& c : clouds) c.validate("cloud set member");
  if (!labels.empty() && labels.size() != clouds.size())
    throw InvalidInput("cloud set labels do not match clouds");
  if (require_uniform_n) {
    const int n = clouds[0].n();
    for (const auto& c : clouds)
      if (c.n() != n) throw InvalidInput("cloud set has mixed point counts");
  }
}

namespace {

double set_distance(const PointCloud& a, const PointCloud& b, SetDistance dist) {
  return dist == SetDistance::kChamfer ? chamfer(a, b) : emd(a, b);
}

// |gen| x |ref| matrix of pairwise set distances, parallel over pairs.
std::vector<double> cross_distances(const CloudSet& gen, const CloudSet& ref, SetDistance dist) {
  const int ng = static_cast<int>(gen.clouds.size());
  const int nr = static_cast<int>(ref.clouds.size());
  std::vector<double> d(static_cast<std::size_t>(ng) * nr);
#pragma omp parallel for schedule(dynamic)
  for (int e = 0; e < ng * nr; ++e)
    d[e] = set_distance(gen.clouds[e / nr], ref.clouds[e % nr], dist);
  return d;
}

void validate_pair(const CloudSet& gen, const CloudSet& ref, SetDistance dist) {
  gen.validate(dist == SetDistance::kEmd);
  ref.validate(dist == SetDistance::kEmd);
  if (dist == SetDistance::kEmd && gen.clouds[0].n() != ref.clouds[0].n())
    throw InvalidInput("emd metrics need a uniform point count across both sets");
}

}  // namespace

double mmd(const CloudSet& gen, const CloudSet& ref, SetDistance dist) {
  validate_pair(gen, ref, dist);
  const int ng = static_cast<int>(gen.clouds.size());
  const int nr = static_cast<int>(ref.clouds.size());
  std::vector<double> d = cross_distances(gen, ref, dist);
  double acc = 0.0;
  for (int j = 0; j < nr; ++j) {
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < ng; ++i) best = std::min(best, d[static_cast<std::size_t>(i) * nr + j]);
    acc += best;
  }
  return acc / nr;
}

double coverage(const CloudSet& gen, const CloudSet& ref, SetDistance dist) {
  validate_pair(gen, ref, dist);
  const int ng = static_cast<int>(gen.clouds.size());
  const int nr = static_cast<int>(ref.clouds.size());
  std::vector<double> d = cross_distances(gen, ref, dist);
  std::vector<char> covered(nr, 0);
  for (int i = 0; i < ng; ++i) {
    int best = 0;
    for (int j = 1; j < nr; ++j)
      if (d[static_cast<std::size_t>(i) * nr + j] < d[static_cast<std::size_t>(i) * nr + best])
        best = j;
    covered[best] = 1;
  }
  int count = 0;
  for (char c : covered) count += c;
  return static_cast<double>(count) / nr;
}

namespace {

std::vector<double> voxel_distribution(const CloudSet& s, int res) {
  std::vector<double> hist(static_cast<std::size_t>(res) * res * res, 0.0);
  double total = 0.0;
  for (const auto& c : s.clouds) {
    for (int i = 0; i < c.n(); ++i) {
      int bin[3];
      for (int d = 0; d < 3; ++d) {
        double x = c.at(i, d);
        if (x < -0.5 - 1e-9 || x > 0.5 + 1e-9)
          throw InvalidInput("jsd: point outside the unit cube");
        int b = static_cast<int>(std::floor((x + 0.5) * res));
        bin[d] = std::min(std::max(b, 0), res - 1);
      }
      hist[(static_cast<std::size_t>(bin[0]) * res + bin[1]) * res + bin[2]] += 1.0;
      total += 1.0;
    }
  }
  for (double& h : hist) h /= total;
  return hist;
}

}  // namespace

double jsd(const CloudSet& gen, const CloudSet& ref, int grid_resolution) {
  gen.validate(false);
  ref.validate(false);
  if (grid_resolution < 1) throw InvalidInput("jsd: grid resolution must be positive");
  std::vector<double> p = voxel_distribution(gen, grid_resolution);
  std::vector<double> q = voxel_distribution(ref, grid_resolution);
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0.0) acc += 0.5 * p[i] * std::log(p[i] / m);
    if (q[i] > 0.0) acc += 0.5 * q[i] * std::log(q[i] / m);
  }
  return acc;
}

namespace {
CloudSet normalized_to_cube(const CloudSet& s) {
  CloudSet out;
  out.clouds.reserve(s.clouds.size());
  for (const auto& c : s.clouds) {
    PointCloud n = dataio::normalize(c);
    for (double& v : n.pts) v *= 0.5;
    out.clouds.push_back(std::move(n));
  }
  return out;
}
}  // namespace

MetricReport metric_report(const CloudSet& gen, const CloudSet& ref, int grid_resolution) {
  MetricReport r;
  r.mmd_cd = mmd(gen, ref, SetDistance::kChamfer);
  r.mmd_emd = mmd(gen, ref, SetDistance::kEmd);
  r.cov_cd = coverage(gen, ref, SetDistance::kChamfer);
  r.cov_emd = coverage(gen, ref, SetDistance::kEmd);
  r.jsd = jsd(normalized_to_cube(gen), normalized_to_cube(ref), grid_resolution);
  return r;
}

namespace {

std::string format_e(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.16e", v);
  return buf;
}

// The x100 scaling happens in the decimal text (exponent shift), so the
// serialized value parses back to the exact stored double.
std::string shift_exponent(const std::string& s, int by) {
  std::size_t e = s.find('e');
  if (e == std::string::npos) throw dataio::FormatError("expected scientific notation: " + s);
  int exp = 0;
  try {
    exp = std::stoi(s.substr(e + 1));
  } catch (const std::exception&) {
    throw dataio::FormatError("malformed exponent: " + s);
  }
  char buf[16];
  std::snprintf(buf, sizeof(buf), "e%+03d", exp + by);
  return s.substr(0, e) + buf;
}

double parse_cell(const std::string& cell) {
  try {
    std::size_t used = 0;
    double v = std::stod(cell, &used);
    if (used != cell.size()) throw dataio::FormatError("trailing characters in cell: " + cell);
    return v;
  } catch (const dataio::FormatError&) {
    throw;
  } catch (const std::exception&) {
    throw dataio::FormatError("metric report cell is not a number: " + cell);
  }
}

}  // namespace

std::string metric_report_csv(const MetricReport& r) {
  std::ostringstream out;
  out << "mmd_cd,mmd_emd,cov_cd_x100,cov_emd_x100,jsd_x100\n";
  out << format_e(r.mmd_cd) << "," << format_e(r.mmd_emd) << ","
      << shift_exponent(format_e(r.cov_cd), 2) << "," << shift_exponent(format_e(r.cov_emd), 2)
      << "," << shift_exponent(format_e(r.jsd), 2) << "\n";
  return out.str();
}

MetricReport parse_metric_report_csv(const std::string& text) {
  std::istringstream in(text);
  std::string header, row;
  if (!std::getline(in, header) || header != "mmd_cd,mmd_emd,cov_cd_x100,cov_emd_x100,jsd_x100")
    throw dataio::FormatError("metric report header mismatch");
  if (!std::getline(in, row)) throw dataio::TruncationError("metric report has no value row");
  std::istringstream rs(row);
  std::string cells[5];
  for (int i = 0; i < 5; ++i)
    if (!std::getline(rs, cells[i], ','))
      throw dataio::TruncationError("metric report row too short");
  MetricReport r;
  r.mmd_cd = parse_cell(cells[0]);
  r.mmd_emd = parse_cell(cells[1]);
  r.cov_cd = parse_cell(shift_exponent(cells[2], -2));
  r.cov_emd = parse_cell(shift_exponent(cells[3], -2));
  r.jsd = parse_cell(shift_exponent(cells[4], -2));
  return r;
}

}  // namespace pcadv
