#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <vector>

// Brute-force metric definitions straight from raw rows, with no shared code
// with the library.
namespace oracle {

struct Rows {
  std::vector<int> pred, label, group;
};

inline double rate(const Rows& r, int pred_value, int label_value, int group_value) {
  std::size_t hit = 0, den = 0;
  for (std::size_t i = 0; i < r.label.size(); ++i) {
    if (r.label[i] != label_value || (group_value >= 0 && r.group[i] != group_value)) continue;
    ++den;
    if (r.pred[i] == pred_value) ++hit;
  }
  return den == 0 ? std::nan("") : static_cast<double>(hit) / static_cast<double>(den);
}

inline double positive_rate(const Rows& r, int g) {
  std::size_t hit = 0, den = 0;
  for (std::size_t i = 0; i < r.group.size(); ++i) {
    if (r.group[i] != g) continue;
    ++den;
    hit += r.pred[i] == 1;
  }
  return den == 0 ? std::nan("") : static_cast<double>(hit) / static_cast<double>(den);
}

// Recall of class 1 and class 0 pooled over groups.
inline double balanced_accuracy(const Rows& r) { return 0.5 * (rate(r, 1, 1, -1) + rate(r, 0, 0, -1)); }

inline double demographic_parity(const Rows& r) { return std::abs(positive_rate(r, 0) - positive_rate(r, 1)); }

inline double equalized_odds(const Rows& r) {
  return 0.5 * (std::abs(rate(r, 1, 1, 0) - rate(r, 1, 1, 1)) + std::abs(rate(r, 1, 0, 0) - rate(r, 1, 0, 1)));
}

inline double accuracy_gap(const Rows& r) {
  return std::abs(rate(r, 1, 1, 0) - rate(r, 1, 1, 1)) + std::abs(rate(r, 0, 0, 0) - rate(r, 0, 0, 1));
}

// Equal-weight mean over clients that have positives in both groups.
inline std::optional<double> f_global(const std::vector<Rows>& clients) {
  double s0 = 0.0, s1 = 0.0;
  std::size_t n = 0;
  for (const auto& c : clients) {
    const double t0 = rate(c, 1, 1, 0), t1 = rate(c, 1, 1, 1);
    if (std::isnan(t0) || std::isnan(t1)) continue;
    s0 += t0;
    s1 += t1;
    ++n;
  }
  if (n == 0) return std::nullopt;
  return std::abs(s0 / static_cast<double>(n) - s1 / static_cast<double>(n));
}

}  // namespace oracle
