#include "fvlfp/metrics.hpp"

#include <cmath>
#include <string>

#include "fvlfp/error.hpp"

namespace fvlfp::metrics {

namespace {

double ratio(std::size_t num, std::size_t den) { return static_cast<double>(num) / static_cast<double>(den); }

void require_cells(const GroupConfusion& c, const char* what) {
  for (int g = 0; g < 2; ++g) {
    if (c.group[g].positives() == 0 || c.group[g].negatives() == 0) {
      throw DataError(std::string(what) + ": group " + std::to_string(g) + " has an empty " +
                      (c.group[g].positives() == 0 ? "positive" : "negative") + " class cell");
    }
  }
}

double tpr(const Cell& c) { return ratio(c.tp, c.positives()); }
double fpr(const Cell& c) { return ratio(c.fp, c.negatives()); }
double tnr(const Cell& c) { return ratio(c.tn, c.negatives()); }

}  // namespace

Cell GroupConfusion::pooled() const noexcept {
  Cell c;
  for (const auto& g : group) {
    c.tp += g.tp;
    c.fp += g.fp;
    c.tn += g.tn;
    c.fn += g.fn;
  }
  return c;
}

GroupConfusion confusion_by_group(std::span<const int> preds, std::span<const int> labels,
                                  std::span<const int> groups) {
  if (preds.size() != labels.size() || preds.size() != groups.size()) {
    throw DimensionError("confusion_by_group: lengths " + std::to_string(preds.size()) + ", " +
                         std::to_string(labels.size()) + ", " + std::to_string(groups.size()) + " differ");
  }
  GroupConfusion c;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const int p = preds[i], y = labels[i], g = groups[i];
    if ((p != 0 && p != 1) || (y != 0 && y != 1)) throw DataError("confusion_by_group: labels must be 0 or 1");
    if (g != 0 && g != 1) throw DataError("confusion_by_group: group ids must be 0 or 1");
    Cell& cell = c.group[g];
    if (y == 1) {
      ++(p == 1 ? cell.tp : cell.fn);
    } else {
      ++(p == 1 ? cell.fp : cell.tn);
    }
  }
  return c;
}

double balanced_accuracy(const GroupConfusion& c) {
  const Cell p = c.pooled();
  if (p.positives() == 0 || p.negatives() == 0) throw DataError("balanced_accuracy: a class has no samples");
  return 0.5 * (tpr(p) + tnr(p));
}

double demographic_parity(const GroupConfusion& c) {
  for (int g = 0; g < 2; ++g)
    if (c.group[g].total() == 0) throw DataError("demographic_parity: group " + std::to_string(g) + " is empty");
  const auto rate = [](const Cell& x) { return ratio(x.tp + x.fp, x.total()); };
  return std::abs(rate(c.group[0]) - rate(c.group[1]));
}

double equalized_odds(const GroupConfusion& c) {
  require_cells(c, "equalized_odds");
  return 0.5 * (std::abs(tpr(c.group[0]) - tpr(c.group[1])) + std::abs(fpr(c.group[0]) - fpr(c.group[1])));
}

double accuracy_gap(const GroupConfusion& c) {
  require_cells(c, "accuracy_gap");
  return std::abs(tpr(c.group[0]) - tpr(c.group[1])) + std::abs(tnr(c.group[0]) - tnr(c.group[1]));
}

GlobalEod eod_global(std::span<const GroupConfusion> clients) {
  GlobalEod out;
  double s0 = 0.0, s1 = 0.0;
  std::size_t used = 0;
  for (std::size_t i = 0; i < clients.size(); ++i) {
    const auto& c = clients[i];
    if (c.group[0].positives() == 0 || c.group[1].positives() == 0) {
      out.excluded.push_back(i);
      continue;
    }
    s0 += tpr(c.group[0]);
    s1 += tpr(c.group[1]);
    ++used;
  }
  if (used == 0) throw DataError("eod_global: no client has positives in both groups");
  out.value = std::abs(s0 / static_cast<double>(used) - s1 / static_cast<double>(used));
  return out;
}

MetricRecord evaluate(const GroupConfusion& c) {
  MetricRecord r;
  r.a_b = balanced_accuracy(c);
  r.phi_a = accuracy_gap(c);
  r.phi_demo = demographic_parity(c);
  r.phi_eq = equalized_odds(c);
  return r;
}

}  // namespace fvlfp::metrics
