#ifndef UPOOL_TEST_RJ_ORACLE_HPP
#define UPOOL_TEST_RJ_ORACLE_HPP

#include <cmath>
#include <map>
#include <utility>
#include <vector>

#include "upool/partitions.hpp"
#include "upool/rjmcmc.hpp"

namespace upool::test {

inline double log_choose(double n, double k) {
  return std::lgamma(n + 1) - std::lgamma(k + 1) - std::lgamma(n - k + 1);
}

inline double log_beta_fn(double a, double b) { return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b); }

// Composite Simpson on [a, b] with n (even) panels.
template <class F>
inline double simpson(F f, double a, double b, int n) {
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int k = 1; k < n; ++k) s += (k % 2 ? 4.0 : 2.0) * f(a + k * h);
  return s * h / 3.0;
}

// Exact p(g | y) with theta and alpha integrated out and log q integrated numerically.
inline std::map<std::uint64_t, double> partition_oracle(const std::vector<std::pair<long, long>> &rows,
                                                 const RjConfig &c) {
  const int L = static_cast<int>(rows.size());
  std::map<std::uint64_t, double> out;
  double total = 0.0;
  for (PartitionEnumerator e(L); !e.done(); e.next()) {
    const Partition &g = e.current();
    auto integrand_q = [&](double lq) {
      const double q = std::exp(lq);
      double prod = 1.0;
      for (const auto &block : g.blocks()) {
        auto integrand_a = [&](double a) {
          if (a <= 0.0 || a >= 1.0) return 0.0;
          double lp = 0.0;
          for (int i : block) {
            const double y = static_cast<double>(rows[static_cast<std::size_t>(i)].first);
            const double n = static_cast<double>(rows[static_cast<std::size_t>(i)].second);
            lp += log_choose(n, y) + log_beta_fn(y + q * a, n - y + q * (1 - a)) -
                  log_beta_fn(q * a, q * (1 - a));
          }
          return std::exp(lp);
        };
        prod *= simpson(integrand_a, 0.0, 1.0, 4000);
      }
      return prod / std::log(c.q_max / c.q_min);
    };
    const double m = simpson(integrand_q, std::log(c.q_min), std::log(c.q_max), 120) *
                     std::exp(prior_log_mass(PartitionPrior::SizeBiased, g));
    out[e.index()] = m;
    total += m;
  }
  for (auto &[k, v] : out) v /= total;
  return out;
}

}  // namespace upool::test

#endif
