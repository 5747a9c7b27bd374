#pragma once

#include <string>
#include <vector>

#include "pcadv/geometry.hpp"

namespace pcadv {

// A set of clouds compared as a whole; labels are optional and only used by
// callers that split per class.
struct CloudSet {
  std::vector<PointCloud> clouds;
  std::vector<int> labels;

  void validate(bool require_uniform_n) const;
};

enum class SetDistance { kChamfer, kEmd };

// (1/|ref|) sum over ref of the distance to its nearest gen cloud.
double mmd(const CloudSet& gen, const CloudSet& ref, SetDistance dist);

// Fraction of ref clouds that are the nearest ref cloud of at least one gen
// cloud; nearest ties broken by lower ref index.
double coverage(const CloudSet& gen, const CloudSet& ref, SetDistance dist);

// Jensen-Shannon divergence (natural log) between pooled voxel-occupancy
// histograms over the cube [-0.5, 0.5]^3. Points must lie in the cube; the
// upper boundary maps to the last voxel.
double jsd(const CloudSet& gen, const CloudSet& ref, int grid_resolution);

struct MetricReport {
  double mmd_cd = 0.0;
  double mmd_emd = 0.0;
  double cov_cd = 0.0;  // stored unscaled in [0,1]
  double cov_emd = 0.0;
  double jsd = 0.0;     // stored unscaled in [0, ln 2]
};

// All five metrics. JSD is computed on per-cloud normalized copies scaled
// into the unit cube; MMD/COV run on the clouds as given.
MetricReport metric_report(const CloudSet& gen, const CloudSet& ref, int grid_resolution = 28);

// One header row and one value row; COV and JSD written x100 as the column
// names indicate.
std::string metric_report_csv(const MetricReport& r);
MetricReport parse_metric_report_csv(const std::string& text);

}  // namespace pcadv
