#include "pcadv/defense.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "pcadv/rng.hpp"

namespace pcadv {

void DefenseConfig::validate() const {
  switch (method) {
    case Method::kNone:
      break;
    case Method::kSrs:
      if (!(srs_drop_ratio > 0.0 && srs_drop_ratio < 1.0))
        throw InvalidConfig("srs drop ratio must be in (0,1)");
      break;
    case Method::kSor:
      if (sor_k < 1) throw InvalidConfig("sor k must be positive");
      if (!(sor_alpha > 0.0)) throw InvalidConfig("sor alpha must be positive");
      break;
  }
}

const char* DefenseConfig::tag() const {
  switch (method) {
    case Method::kNone: return "none";
    case Method::kSrs: return "srs";
    case Method::kSor: return "sor";
  }
  return "?";
}

PointCloud srs(const PointCloud& cloud, double drop_ratio, std::uint64_t seed) {
  cloud.validate("srs");
  if (!(drop_ratio > 0.0 && drop_ratio < 1.0))
    throw InvalidInput("srs: drop ratio must be in (0,1)");
  const int n = cloud.n();
  const int keep = n - static_cast<int>(std::floor(drop_ratio * n));
  if (keep < 1) throw InvalidInput("srs: nothing would survive");
  Rng rng(seed);
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (int i = 0; i < keep; ++i) {
    int j = i + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(n - i)));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());
  PointCloud out(keep);
  for (int i = 0; i < keep; ++i)
    for (int d = 0; d < 3; ++d) out.at(i, d) = cloud.at(idx[i], d);
  return out;
}

PointCloud sor(const PointCloud& cloud, int k, double alpha) {
  cloud.validate("sor");
  if (!(alpha > 0.0)) throw InvalidInput("sor: alpha must be positive");
  NeighborIndex ni = knn(cloud, k); // validates k < N
  const int n = cloud.n();
  std::vector<double> mean_dist(n);
  for (int i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int j = 0; j < k; ++j) acc += ni.dist(i, j);
    mean_dist[i] = acc / k;
  }
  double mu = 0.0;
  for (double d : mean_dist) mu += d;
  mu /= n;
  double var = 0.0;
  for (double d : mean_dist) var += (d - mu) * (d - mu);
  double sigma = std::sqrt(var / n);
  const double threshold = mu + alpha * sigma;
  PointCloud out;
  for (int i = 0; i < n; ++i) {
    if (mean_dist[i] > threshold) continue;
    for (int d = 0; d < 3; ++d) out.pts.push_back(cloud.at(i, d));
  }
  return out;
}

PointCloud apply_defense(const PointCloud& cloud, const DefenseConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  switch (cfg.method) {
    case DefenseConfig::Method::kNone: return cloud;
    case DefenseConfig::Method::kSrs: return srs(cloud, cfg.srs_drop_ratio, seed);
    case DefenseConfig::Method::kSor: return sor(cloud, cfg.sor_k, cfg.sor_alpha);
  }
  return cloud;
}

AdversarialCheck is_unrestricted_adversarial(const PointCloud& cloud, int true_label,
                                             const VictimState& victim,
                                             const DiscriminatorState& aux, AttackMode mode,
                                             int target_label) {
  if (mode == AttackMode::kTargeted &&
      (target_label < 0 || target_label >= victim.cfg.n_classes))
    throw InvalidConfig("is_unrestricted_adversarial: targeted mode needs a target label");
  AdversarialCheck c;
  std::vector<double> vlogits = victim_logits(victim, cloud);
  c.victim_pred = argmax_label(vlogits);
  std::vector<double> alogits;
  discriminator_eval(aux, cloud, nullptr, &alogits);
  c.aux_pred = argmax_label(alogits);
  c.success = mode == AttackMode::kTargeted ? c.victim_pred == target_label
                                            : c.victim_pred != true_label;
  c.valid = c.aux_pred == true_label;
  c.adversarial = c.success && c.valid;
  return c;
}

namespace {

// (z, label) pair for sample index i from a stream derived from (seed, i).
void draw_sample(std::uint64_t seed, int index, int noise_dim, int n_classes, AttackMode mode,
                 int target_label, std::vector<double>* z, int* label) {
  Rng rng = Rng(seed).derive(0xa77ac4ULL).derive(static_cast<std::uint64_t>(index));
  z->resize(noise_dim);
  for (double& v : *z) v = rng.normal();
  if (mode == AttackMode::kTargeted) {
    // true label drawn from the classes other than the target
    int pick = static_cast<int>(rng.uniform_int(n_classes - 1));
    *label = pick >= target_label ? pick + 1 : pick;
  } else {
    *label = static_cast<int>(rng.uniform_int(n_classes));
  }
}

}  // namespace

AttackReport attack_success_rate(const GeneratorState& gen, const VictimState& victim,
                                 const DiscriminatorState& aux, int n_samples, AttackMode mode,
                                 int target_label, const DefenseConfig* defense,
                                 std::uint64_t seed, const std::string& victim_tag) {
  if (n_samples < 1) throw InvalidInput("attack_success_rate: need n_samples >= 1");
  const int m = gen.cfg.n_classes;
  if (mode == AttackMode::kTargeted && (target_label < 0 || target_label >= m))
    throw InvalidConfig("attack_success_rate: targeted mode needs a target label");
  if (mode == AttackMode::kTargeted && m < 2)
    throw InvalidConfig("attack_success_rate: targeted mode needs >= 2 classes");
  if (defense) defense->validate();

  AttackReport rep;
  rep.total = n_samples;
  rep.victim_tag = victim_tag;
  if (defense) rep.defense_tag = defense->tag();
  rep.per_class_total.assign(m, 0);
  rep.per_class_success.assign(m, 0);
  rep.per_class_valid_success.assign(m, 0);

  std::vector<double> z;
  for (int i = 0; i < n_samples; ++i) {
    int label = 0;
    draw_sample(seed, i, gen.cfg.noise_dim, m, mode, target_label, &z, &label);
    PointCloud cloud = generator_sample(gen, z, label);
    PointCloud defended =
        defense ? apply_defense(cloud, *defense, Rng(seed).derive(0xdef3ULL ^ i).next_u64())
                : cloud;

    std::vector<double> vlogits = victim_logits(victim, defended);
    int victim_pred = argmax_label(vlogits);
    bool success =
        mode == AttackMode::kTargeted ? victim_pred == target_label : victim_pred != label;

    // validity on the undefended cloud
    std::vector<double> alogits;
    discriminator_eval(aux, cloud, nullptr, &alogits);
    bool valid = argmax_label(alogits) == label;

    rep.per_class_total[label]++;
    if (success) {
      rep.successes++;
      rep.per_class_success[label]++;
      if (valid) {
        rep.valid_successes++;
        rep.per_class_valid_success[label]++;
      }
    }
  }
  return rep;
}

std::string attack_report_csv(const AttackReport& r, std::span<const std::string> class_names) {
  std::ostringstream out;
  out << "scope,total,asr_pct,validity_filtered_asr_pct,defense,victim\n";
  auto pct = [](int num, int den) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", den > 0 ? 100.0 * num / den : 0.0);
    return std::string(buf);
  };
  for (std::size_t c = 0; c < r.per_class_total.size(); ++c) {
    std::string name = c < class_names.size() && !class_names[c].empty()
                           ? class_names[c]
                           : "class" + std::to_string(c);
    out << name << "," << r.per_class_total[c] << ","
        << pct(r.per_class_success[c], r.per_class_total[c]) << ","
        << pct(r.per_class_valid_success[c], r.per_class_total[c]) << "," << r.defense_tag << ","
        << r.victim_tag << "\n";
  }
  out << "all," << r.total << "," << pct(r.successes, r.total) << ","
      << pct(r.valid_successes, r.total) << "," << r.defense_tag << "," << r.victim_tag << "\n";
  return out.str();
}

std::vector<TransferEntry> transfer_eval(
    const GeneratorState& gen, const DiscriminatorState& aux,
    std::span<const std::pair<std::string, const VictimState*>> victims, int original_index,
    int n_samples, AttackMode mode, int target_label, std::uint64_t seed) {
  if (victims.empty()) throw InvalidInput("transfer_eval: need at least one victim");
  if (original_index < 0 || original_index >= static_cast<int>(victims.size()))
    throw InvalidInput("transfer_eval: original index out of range");
  std::vector<TransferEntry> out;
  for (std::size_t i = 0; i < victims.size(); ++i) {
    TransferEntry e;
    e.victim_tag = victims[i].first;
    e.is_original = static_cast<int>(i) == original_index;
    // same seed for every victim -> identical sample set, paired evaluation
    e.report = attack_success_rate(gen, *victims[i].second, aux, n_samples, mode, target_label,
                                   nullptr, seed, victims[i].first);
    out.push_back(std::move(e));
  }
  return out;
}

std::string transfer_table_csv(std::span<const TransferEntry> entries) {
  std::ostringstream out;
  out << "victim,is_original,asr_pct,validity_filtered_asr_pct\n";
  for (const auto& e : entries) {
    char a[32], va[32];
    std::snprintf(a, sizeof(a), "%.2f", 100.0 * e.report.asr());
    std::snprintf(va, sizeof(va), "%.2f", 100.0 * e.report.validity_filtered_asr());
    out << e.victim_tag << "," << (e.is_original ? 1 : 0) << "," << a << "," << va << "\n";
  }
  return out.str();
}

}  // namespace pcadv
