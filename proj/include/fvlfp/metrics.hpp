#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

// Accuracy and group-fairness metrics for a binary task and a binary
// sensitive attribute (groups 0 and 1).
namespace fvlfp::metrics {

struct Cell {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::size_t positives() const noexcept { return tp + fn; }
  std::size_t negatives() const noexcept { return tn + fp; }
  std::size_t total() const noexcept { return tp + fp + tn + fn; }
  friend bool operator==(const Cell&, const Cell&) = default;
};

struct GroupConfusion {
  std::array<Cell, 2> group;

  Cell pooled() const noexcept;
  std::size_t total() const noexcept { return group[0].total() + group[1].total(); }
  friend bool operator==(const GroupConfusion&, const GroupConfusion&) = default;
};

GroupConfusion confusion_by_group(std::span<const int> preds, std::span<const int> labels,
                                  std::span<const int> groups);

double balanced_accuracy(const GroupConfusion& c);
double demographic_parity(const GroupConfusion& c);
double equalized_odds(const GroupConfusion& c);
double accuracy_gap(const GroupConfusion& c);

struct GlobalEod {
  double value = 0.0;
  // Clients without a positive sample in some group; left out of both means.
  std::vector<std::size_t> excluded;
};
GlobalEod eod_global(std::span<const GroupConfusion> clients);

struct MetricRecord {
  double a_b = 0.0;
  double phi_a = 0.0;
  double phi_demo = 0.0;
  double phi_eq = 0.0;
  std::optional<double> f_global;
};

MetricRecord evaluate(const GroupConfusion& c);

}  // namespace fvlfp::metrics
