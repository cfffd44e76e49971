#ifndef UPOOL_TEST_SUPPORT_HPP
#define UPOOL_TEST_SUPPORT_HPP

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "upool/pooling.hpp"
#include "upool/study_data.hpp"

namespace upool::test {

// StudySet carrying arbitrary effects and variances (counts are placeholders).
inline StudySet make_set(const std::vector<double> &effects, const std::vector<double> &variances,
                         EffectScale scale = EffectScale::LogOdds) {
  StudySet set;
  set.scale = scale;
  for (std::size_t i = 0; i < effects.size(); ++i) {
    set.studies.push_back(Study{static_cast<int>(i + 1), "s" + std::to_string(i + 1), 1, 2});
    set.summaries.push_back(EffectSummary{effects[i], variances[i], scale});
  }
  return set;
}

inline DeltaGrid custom_grid(std::vector<double> values, std::vector<double> log_prior,
                             double keep_mass = 0.992) {
  DeltaGrid g;
  g.values = std::move(values);
  g.log_prior = std::move(log_prior);
  g.keep_mass = keep_mass;
  return g;
}

// Every partition of an L-set as a first-occurrence labelling, by brute force.
inline std::vector<std::vector<int>> all_labelings(int L) {
  std::set<std::vector<int>> seen;
  std::vector<int> cur(static_cast<std::size_t>(L), 0);
  for (;;) {
    // canonicalise by first occurrence
    std::map<int, int> relabel;
    std::vector<int> canon;
    for (int x : cur) {
      auto it = relabel.find(x);
      if (it == relabel.end()) it = relabel.emplace(x, static_cast<int>(relabel.size())).first;
      canon.push_back(it->second);
    }
    seen.insert(canon);
    int i = 0;
    while (i < L && ++cur[static_cast<std::size_t>(i)] == L) cur[static_cast<std::size_t>(i++)] = 0;
    if (i == L) break;
  }
  return {seen.begin(), seen.end()};
}

// Direct evaluation of the unnormalised joint weight with plain loops.
inline double oracle_log_weight(const std::vector<int> &labels, double d2, const std::vector<double> &y,
                         const std::vector<double> &v, double log_prior_d2, double log_prior_g) {
  const std::size_t L = y.size();
  int blocks = 0;
  for (int l : labels) blocks = std::max(blocks, l + 1);
  double out = log_prior_g + log_prior_d2 - 0.5 * blocks;
  for (std::size_t i = 0; i < L; ++i) out += 0.5 * std::log(1.0 - d2 / (d2 + v[i]));
  for (int k = 0; k < blocks; ++k) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < L; ++i)
      if (labels[i] == k) {
        const double lam = d2 / (d2 + v[i]);
        num += lam * y[i];
        den += lam;
      }
    const double m = num / den;
    for (std::size_t i = 0; i < L; ++i)
      if (labels[i] == k) {
        const double lam = d2 / (d2 + v[i]);
        out -= 0.5 * (lam / d2) * (y[i] - m) * (y[i] - m);
      }
  }
  return out;
}

}  // namespace upool::test

#endif
