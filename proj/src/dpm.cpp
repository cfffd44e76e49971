#include "upool/dpm.hpp"

#include <algorithm>
#include <boost/math/tools/toms748_solve.hpp>
#include <cmath>
#include <limits>
#include <numbers>

#include "upool/errors.hpp"
#include "upool/parallel.hpp"
#include "upool/random.hpp"

namespace upool {

namespace {

double profiled_eta(double tau2, std::span<const double> y, std::span<const double> v) {
  double sw = 0.0, swy = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double w = 1.0 / (tau2 + v[i]);
    sw += w;
    swy += w * y[i];
  }
  return swy / sw;
}

// d/d tau2 of the profile log likelihood; the eta term drops out at eta_hat.
double profile_score(double tau2, std::span<const double> y, std::span<const double> v) {
  const double eta = profiled_eta(tau2, y, v);
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double w = 1.0 / (tau2 + v[i]);
    const double r = y[i] - eta;
    s += w * w * r * r - w;
  }
  return 0.5 * s;
}

double log_normal_pdf(double x, double mean, double var) {
  const double r = x - mean;
  return -0.5 * (std::log(2.0 * std::numbers::pi * var) + r * r / var);
}

struct ClusterStats {
  int n = 0;
  double prec = 0.0;   // sum 1/v
  double wsum = 0.0;   // sum y/v
};

// Posterior of a cluster mean given its members: (mean, variance).
std::pair<double, double> cluster_posterior(const ClusterStats &c, const BaseMeasure &base) {
  if (base.tau2 <= 0.0) return {base.eta, 0.0};
  const double p = 1.0 / base.tau2 + c.prec;
  return {(base.eta / base.tau2 + c.wsum) / p, 1.0 / p};
}

std::vector<ClusterStats> tally(const std::vector<int> &labels, std::span<const double> y,
                                std::span<const double> v, int skip) {
  int k = 0;
  for (int l : labels) k = std::max(k, l + 1);
  std::vector<ClusterStats> stats(static_cast<std::size_t>(k));
  for (std::size_t j = 0; j < labels.size(); ++j) {
    if (static_cast<int>(j) == skip) continue;
    auto &c = stats[static_cast<std::size_t>(labels[j])];
    ++c.n;
    c.prec += 1.0 / v[j];
    c.wsum += y[j] / v[j];
  }
  return stats;
}

std::vector<double> normalised_seating(const std::vector<ClusterStats> &stats, double yi, double vi,
                                       double M, const BaseMeasure &base) {
  std::vector<double> lw;
  lw.reserve(stats.size() + 1);
  for (const auto &c : stats) {
    if (c.n == 0) {
      lw.push_back(-std::numeric_limits<double>::infinity());
      continue;
    }
    const auto [m, s2] = cluster_posterior(c, base);
    lw.push_back(std::log(static_cast<double>(c.n)) + log_normal_pdf(yi, m, s2 + vi));
  }
  lw.push_back(std::log(M) + log_normal_pdf(yi, base.eta, base.tau2 + vi));
  const double mx = *std::max_element(lw.begin(), lw.end());
  double total = 0.0;
  for (double &x : lw) {
    x = std::exp(x - mx);
    total += x;
  }
  double check = 0.0;
  for (double &x : lw) {
    x /= total;
    check += x;
  }
  if (!(std::abs(check - 1.0) < 1e-12))
    fail(ErrorKind::Numeric, "seating probabilities do not sum to one");
  return lw;
}

}  // namespace

std::vector<double> DpmConfig::default_m_values(int L) {
  const double l = static_cast<double>(L);
  return {0.01, 1.0 / l, 1.0, l, l * l, 10.0 * l * l};
}

void DpmConfig::validate() const {
  if (iterations <= 0 || burn_in < 0 || burn_in >= iterations)
    fail(ErrorKind::Validation, "DPM needs iterations > burn_in >= 0");
  for (double m : m_values)
    if (!(m > 0.0) || !std::isfinite(m)) fail(ErrorKind::Validation, "M values must be positive");
}

double random_effects_log_likelihood(double tau2, std::span<const double> effects,
                                     std::span<const double> variances) {
  const double eta = profiled_eta(tau2, effects, variances);
  double ll = 0.0;
  for (std::size_t i = 0; i < effects.size(); ++i)
    ll += log_normal_pdf(effects[i], eta, tau2 + variances[i]);
  return ll;
}

BaseMeasure mle_base_measure(std::span<const double> y, std::span<const double> v) {
  if (y.size() < 2) fail(ErrorKind::Domain, "the base-measure MLE needs at least two studies");
  double ybar = 0.0, vmax = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    ybar += y[i];
    vmax = std::max(vmax, v[i]);
  }
  ybar /= static_cast<double>(y.size());
  double ss = 0.0;
  for (double x : y) ss += (x - ybar) * (x - ybar);
  // the maximiser cannot exceed the unweighted spread by much; 10x is a safe cap
  double upper = 10.0 * (ss + vmax) + 1.0;

  // Local maxima are sign changes of the score from + to -; refine each and
  // keep the best, with tau2 = 0 as the boundary candidate.
  const int n = 400;
  std::vector<double> grid{0.0};
  const double lo = 1e-10 * (vmax + 1e-300);
  for (int k = 0; k < n; ++k)
    grid.push_back(lo * std::pow(upper / lo, static_cast<double>(k) / (n - 1)));

  double best_tau2 = 0.0;
  double best_ll = random_effects_log_likelihood(0.0, y, v);
  double prev = profile_score(grid[0], y, v);
  for (std::size_t k = 1; k < grid.size(); ++k) {
    const double cur = profile_score(grid[k], y, v);
    if (prev > 0.0 && cur <= 0.0) {
      std::uintmax_t iters = 200;
      auto tol = boost::math::tools::eps_tolerance<double>(45);
      const auto [a, b] = boost::math::tools::toms748_solve(
          [&](double t) { return profile_score(t, y, v); }, grid[k - 1], grid[k], prev, cur, tol,
          iters);
      const double root = 0.5 * (a + b);
      const double ll = random_effects_log_likelihood(root, y, v);
      if (ll > best_ll) {
        best_ll = ll;
        best_tau2 = root;
      }
    }
    prev = cur;
  }
  if (prev > 0.0) fail(ErrorKind::Numeric, "random-effects likelihood has no interior maximum");
  return {profiled_eta(best_tau2, y, v), best_tau2};
}

BaseMeasure mle_base_measure(const StudySet &studies) {
  const auto y = studies.effects();
  const auto v = studies.variances();
  return mle_base_measure(y, v);
}

std::vector<double> crp_reassignment_probabilities(const DpmState &state, int i,
                                                   std::span<const double> effects,
                                                   std::span<const double> variances, double M,
                                                   const BaseMeasure &base) {
  const auto stats = tally(state.labels, effects, variances, i);
  return normalised_seating(stats, effects[static_cast<std::size_t>(i)],
                            variances[static_cast<std::size_t>(i)], M, base);
}

DpmChain dpm_gibbs(const StudySet &studies, double M, const BaseMeasure &base,
                   const DpmConfig &config, std::uint64_t stream) {
  config.validate();
  if (!(M > 0.0)) fail(ErrorKind::Validation, "M must be positive");
  const auto y = studies.effects();
  const auto v = studies.variances();
  const int L = static_cast<int>(y.size());
  Rng rng = substream(config.seed, stream);

  DpmChain chain;
  chain.M = M;
  chain.base = base;
  chain.scale = studies.scale;
  const int kept = config.iterations - config.burn_in;
  chain.mu.resize(kept, L);
  chain.labels.reserve(static_cast<std::size_t>(kept));

  std::vector<int> labels(static_cast<std::size_t>(L), 0);
  std::vector<ClusterStats> stats = tally(labels, y, v, -1);

  for (int it = 0; it < config.iterations; ++it) {
    for (int i = 0; i < L; ++i) {
      const auto ui = static_cast<std::size_t>(i);
      auto &own = stats[static_cast<std::size_t>(labels[ui])];
      --own.n;
      own.prec -= 1.0 / v[ui];
      own.wsum -= y[ui] / v[ui];
      if (own.n == 0) {
        // drop the emptied cluster and close the label gap
        const int gone = labels[ui];
        stats.erase(stats.begin() + gone);
        for (int &l : labels)
          if (l > gone) --l;
        labels[ui] = -1;
      }
      const auto probs = normalised_seating(stats, y[ui], v[ui], M, base);
      const double u = uniform01(rng);
      std::size_t pick = 0;
      double acc = probs[0];
      while (u > acc && pick + 1 < probs.size()) acc += probs[++pick];
      if (pick == stats.size()) stats.emplace_back();
      auto &c = stats[pick];
      ++c.n;
      c.prec += 1.0 / v[ui];
      c.wsum += y[ui] / v[ui];
      labels[ui] = static_cast<int>(pick);
    }
    // canonical first-occurrence order keeps stored labellings comparable
    {
      std::vector<int> remap(stats.size(), -1);
      int next = 0;
      for (int &l : labels) {
        if (remap[static_cast<std::size_t>(l)] < 0) remap[static_cast<std::size_t>(l)] = next++;
        l = remap[static_cast<std::size_t>(l)];
      }
      std::vector<ClusterStats> reordered(stats.size());
      for (std::size_t c = 0; c < stats.size(); ++c)
        reordered[static_cast<std::size_t>(remap[c])] = stats[c];
      stats.swap(reordered);
    }
    std::vector<double> theta(stats.size());
    for (std::size_t c = 0; c < stats.size(); ++c) {
      const auto [m, s2] = cluster_posterior(stats[c], base);
      theta[c] = m + std::sqrt(s2) * std_normal(rng);
    }
    if (it >= config.burn_in) {
      const int row = it - config.burn_in;
      for (int i = 0; i < L; ++i)
        chain.mu(row, i) = theta[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
      chain.labels.push_back(labels);
    }
  }
  return chain;
}

DpmSummary dpm_summaries(const DpmChain &chain, const StudySet &studies, double level) {
  if (chain.labels.empty() || chain.mu.rows() == 0)
    fail(ErrorKind::Domain, "DPM chain has no kept iterations");
  const auto L = static_cast<int>(chain.mu.cols());
  DpmSummary out;
  out.M = chain.M;
  const auto ids = studies.ids();
  for (int i = 0; i < L; ++i) {
    std::vector<double> col(static_cast<std::size_t>(chain.mu.rows()));
    for (Eigen::Index r = 0; r < chain.mu.rows(); ++r)
      col[static_cast<std::size_t>(r)] =
          chain.scale == EffectScale::LogOdds ? expit(chain.mu(r, i)) : chain.mu(r, i);
    StudySummary s = summarize_sample(std::move(col), level);
    s.id = ids[static_cast<std::size_t>(i)];
    out.studies.push_back(s);
  }
  CoClusteringCounter counter(L);
  double clusters = 0.0;
  std::size_t single = 0;
  for (const auto &labels : chain.labels) {
    counter.add(labels);
    const int k = *std::max_element(labels.begin(), labels.end()) + 1;
    clusters += k;
    single += k == 1;
  }
  out.similarity = counter.finish(ids, SimilaritySource::DpmChain);
  out.mean_clusters = clusters / static_cast<double>(chain.labels.size());
  out.single_cluster_fraction =
      static_cast<double>(single) / static_cast<double>(chain.labels.size());
  return out;
}

std::vector<DpmSummary> run_dpm(const StudySet &studies, const DpmConfig &config, int threads) {
  config.validate();
  const auto ms = config.m_values.empty()
                      ? DpmConfig::default_m_values(static_cast<int>(studies.size()))
                      : config.m_values;
  const BaseMeasure base = mle_base_measure(studies);
  std::vector<DpmSummary> out(ms.size());
  parallel_tasks(ms.size(), threads, [&](std::size_t k) {
    out[k] = dpm_summaries(dpm_gibbs(studies, ms[k], base, config, k), studies);
  });
  return out;
}

}  // namespace upool
