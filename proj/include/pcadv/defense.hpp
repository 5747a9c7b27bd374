#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pcadv/geometry.hpp"
#include "pcadv/losses.hpp"
#include "pcadv/models.hpp"

namespace pcadv {

struct DefenseConfig {
  enum class Method { kNone, kSrs, kSor };
  Method method = Method::kNone;
  double srs_drop_ratio = 0.2;
  int sor_k = 2;
  double sor_alpha = 1.1;

  void validate() const;
  const char* tag() const;
};

// Simple random sampling: keeps exactly N - floor(drop_ratio * N) points,
// uniformly without replacement, survivors in input order.
PointCloud srs(const PointCloud& cloud, double drop_ratio, std::uint64_t seed);

// Statistical outlier removal: drops points whose mean distance to their k
// nearest neighbors exceeds mean + alpha * stddev; survivors keep order.
PointCloud sor(const PointCloud& cloud, int k, double alpha);

PointCloud apply_defense(const PointCloud& cloud, const DefenseConfig& cfg, std::uint64_t seed);

struct AdversarialCheck {
  bool success = false;     // victim fooled (mode-dependent)
  bool valid = false;       // auxiliary classifier agrees with the true label
  bool adversarial = false; // success && valid
  int victim_pred = -1;
  int aux_pred = -1;
};

AdversarialCheck is_unrestricted_adversarial(const PointCloud& cloud, int true_label,
                                             const VictimState& victim,
                                             const DiscriminatorState& aux, AttackMode mode,
                                             int target_label = -1);

struct AttackReport {
  int total = 0;
  int successes = 0;
  int valid_successes = 0;
  std::vector<int> per_class_total;
  std::vector<int> per_class_success;
  std::vector<int> per_class_valid_success;
  std::string defense_tag = "none";
  std::string victim_tag;

  double asr() const { return total > 0 ? static_cast<double>(successes) / total : 0.0; }
  double validity_filtered_asr() const {
    return total > 0 ? static_cast<double>(valid_successes) / total : 0.0;
  }
};

// Draws (z, label) pairs from per-sample streams derived from (seed, index),
// generates clouds, optionally defends the victim's input (validity is judged
// on the undefended cloud), and aggregates success statistics.
AttackReport attack_success_rate(const GeneratorState& gen, const VictimState& victim,
                                 const DiscriminatorState& aux, int n_samples, AttackMode mode,
                                 int target_label, const DefenseConfig* defense,
                                 std::uint64_t seed, const std::string& victim_tag = "victim");

// Percentages with two decimals, one row per class plus an "all" row.
std::string attack_report_csv(const AttackReport& r, std::span<const std::string> class_names);

struct TransferEntry {
  std::string victim_tag;
  bool is_original = false;
  AttackReport report;
};

// One generated sample set (fixed seed) scored against every victim.
std::vector<TransferEntry> transfer_eval(const GeneratorState& gen, const DiscriminatorState& aux,
                                         std::span<const std::pair<std::string, const VictimState*>> victims,
                                         int original_index, int n_samples, AttackMode mode,
                                         int target_label, std::uint64_t seed);

std::string transfer_table_csv(std::span<const TransferEntry> entries);

}  // namespace pcadv
