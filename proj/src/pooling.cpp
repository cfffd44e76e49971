#include "upool/pooling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "upool/errors.hpp"
#include "upool/parallel.hpp"
#include "upool/random.hpp"

namespace upool {

namespace {

constexpr std::uint64_t kChunk = 2048;   // partitions per sweep task
constexpr int kDrawBlock = 1000;         // draws per sampling substream
constexpr double kBinWidth = 0.02;       // histogram resolution in log-weight
constexpr std::size_t kBins = 4000;      // covers log-weights down to -80

double log_sum_exp(std::span<const double> xs) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : xs) mx = std::max(mx, x);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - mx);
  return mx + std::log(s);
}

void check_inputs(double delta2, std::span<const double> variances) {
  if (!(delta2 > 0.0) || !std::isfinite(delta2))
    fail(ErrorKind::Domain, "delta2 must be positive and finite");
  for (double v : variances)
    if (!(v > 0.0) || !std::isfinite(v))
      fail(ErrorKind::Domain, "study variances must be positive and finite");
}

// Per-(subset, grid point) block term -1/2 - Q_block/2, plus per-grid-point
// constants, so that a partition's log weight is a sum of table rows.
struct SweepTables {
  int L = 0;
  std::size_t D = 0;
  std::vector<double> block;  // (mask * D + d)
  std::vector<double> base;   // log prior(delta2) + 1/2 sum log(1 - lambda)
  std::vector<double> log_prior_by_blocks;

  SweepTables(std::span<const double> y, std::span<const double> v, const DeltaGrid &grid,
              PartitionPrior pprior)
      : L(static_cast<int>(y.size())), D(grid.size()) {
    const std::size_t masks = std::size_t{1} << L;
    block.assign(masks * D, 0.0);
    base.assign(D, 0.0);
    std::vector<double> lam(static_cast<std::size_t>(L));
    for (std::size_t d = 0; d < D; ++d) {
      const double d2 = grid.values[d];
      double b = grid.log_prior[d];
      for (int i = 0; i < L; ++i) {
        const auto ui = static_cast<std::size_t>(i);
        lam[ui] = d2 / (d2 + v[ui]);
        b += 0.5 * (std::log(v[ui]) - std::log(d2 + v[ui]));
      }
      base[d] = b;
      for (std::size_t mask = 1; mask < masks; ++mask) {
        double s = 0.0, sy = 0.0;
        for (int i = 0; i < L; ++i)
          if (mask >> i & 1u) {
            s += lam[static_cast<std::size_t>(i)];
            sy += lam[static_cast<std::size_t>(i)] * y[static_cast<std::size_t>(i)];
          }
        const double m = sy / s;
        double q = 0.0;
        for (int i = 0; i < L; ++i)
          if (mask >> i & 1u) {
            const double r = y[static_cast<std::size_t>(i)] - m;
            q += lam[static_cast<std::size_t>(i)] / d2 * r * r;
          }
        block[mask * D + d] = -0.5 - 0.5 * q;
      }
    }
    log_prior_by_blocks.assign(static_cast<std::size_t>(L) + 1, 0.0);
    for (int k = 1; k <= L; ++k)
      log_prior_by_blocks[static_cast<std::size_t>(k)] = prior_log_mass(pprior, k, L);
  }

  void evaluate(const Partition &g, std::span<double> out) const {
    std::uint32_t masks[32] = {};
    const auto &labels = g.labels();
    for (std::size_t i = 0; i < labels.size(); ++i) masks[labels[i]] |= (1u << i);
    const double lp = log_prior_by_blocks[static_cast<std::size_t>(g.num_blocks())];
    for (std::size_t d = 0; d < D; ++d) out[d] = base[d] + lp;
    for (int k = 0; k < g.num_blocks(); ++k) {
      const double *row = &block[static_cast<std::size_t>(masks[k]) * D];
      for (std::size_t d = 0; d < D; ++d) out[d] += row[d];
    }
  }
};

std::size_t bin_of(double log_w) {
  const double x = -log_w / kBinWidth;
  if (!(x > 0.0)) return 0;
  if (x >= static_cast<double>(kBins - 1)) return kBins - 1;
  return static_cast<std::size_t>(x);
}

struct SweepChunk {
  std::vector<double> delta2;
  std::vector<double> hist;
  std::vector<RetainedCell> sure;
  std::vector<RetainedCell> boundary;
};

bool heavier(const RetainedCell &a, const RetainedCell &b) {
  if (a.weight != b.weight) return a.weight > b.weight;
  if (a.partition != b.partition) return a.partition < b.partition;
  return a.grid < b.grid;
}

// Cholesky with a tiny diagonal jitter fallback.
Eigen::MatrixXd stable_cholesky(const Eigen::MatrixXd &cov) {
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  const double scale = std::max(1.0, cov.diagonal().cwiseAbs().maxCoeff());
  Eigen::MatrixXd jittered = cov;
  jittered.diagonal().array() += 1e-12 * scale;
  Eigen::LLT<Eigen::MatrixXd> retry(jittered);
  if (retry.info() != Eigen::Success)
    fail(ErrorKind::Numeric, "conditional covariance is not positive semidefinite");
  return retry.matrixL();
}

}  // namespace

VariancePrior VariancePrior::inv_gamma(double alpha, double beta) {
  if (!(alpha > 0.0) || !(beta > 0.0))
    fail(ErrorKind::Domain, "InvGamma prior needs alpha > 0 and beta > 0");
  VariancePrior p;
  p.kind = Kind::InvGamma;
  p.alpha = alpha;
  p.beta = beta;
  return p;
}

double VariancePrior::log_density(double delta2) const {
  if (kind == Kind::InvBeta) return -std::log1p(delta2) - 0.5 * std::log(delta2);
  return -(alpha + 1.0) * std::log(delta2) - beta / delta2;
}

void GridSpec::validate() const {
  if (!(delta2_min > 0.0) || !(delta2_max > delta2_min))
    fail(ErrorKind::Validation, "grid needs 0 < delta2_min < delta2_max");
  if (points < 2) fail(ErrorKind::Validation, "grid needs at least 2 points");
  if (!(keep_mass > 0.0) || keep_mass > 1.0)
    fail(ErrorKind::Validation, "keep_mass must lie in (0, 1]");
}

std::vector<double> GridSpec::values() const {
  validate();
  std::vector<double> out(static_cast<std::size_t>(points));
  const double a = std::log(delta2_min), b = std::log(delta2_max);
  for (int k = 0; k < points; ++k)
    out[static_cast<std::size_t>(k)] = std::exp(a + (b - a) * k / (points - 1));
  return out;
}

DeltaGrid DeltaGrid::make(const GridSpec &spec, const VariancePrior &prior) {
  DeltaGrid g;
  g.values = spec.values();
  g.keep_mass = spec.keep_mass;
  for (double d2 : g.values)
    g.log_prior.push_back(prior.log_density(d2) + (spec.log_jacobian ? std::log(d2) : 0.0));
  return g;
}

std::vector<double> lambda_weights(double delta2, std::span<const double> variances) {
  check_inputs(delta2, variances);
  std::vector<double> lam;
  lam.reserve(variances.size());
  for (double v : variances) lam.push_back(delta2 / (delta2 + v));
  return lam;
}

double subset_mean(std::span<const int> block, std::span<const double> lambda,
                   std::span<const double> effects) {
  double s = 0.0, sy = 0.0;
  for (int t : block) {
    s += lambda[static_cast<std::size_t>(t)];
    sy += lambda[static_cast<std::size_t>(t)] * effects[static_cast<std::size_t>(t)];
  }
  return sy / s;
}

ConditionalMoments conditional_moments(const Partition &g, double delta2,
                                       std::span<const double> effects,
                                       std::span<const double> variances) {
  const auto lam = lambda_weights(delta2, variances);
  const int L = g.size();
  ConditionalMoments m;
  m.mean = Eigen::VectorXd::Zero(L);
  m.covariance = Eigen::MatrixXd::Zero(L, L);
  for (const auto &block : g.blocks()) {
    const double target = subset_mean(block, lam, effects);
    double s = 0.0;
    for (int t : block) s += lam[static_cast<std::size_t>(t)];
    for (int i : block) {
      const double li = lam[static_cast<std::size_t>(i)];
      m.mean(i) = li * effects[static_cast<std::size_t>(i)] + (1.0 - li) * target;
      for (int t : block) {
        const double lt = lam[static_cast<std::size_t>(t)];
        double c = (1.0 - li) * (1.0 - lt) * delta2 / s;
        if (i == t) c += delta2 * (1.0 - li);
        m.covariance(i, t) = c;
      }
    }
  }
  return m;
}

double q_statistic(const Partition &g, double delta2, std::span<const double> effects,
                   std::span<const double> variances) {
  const auto lam = lambda_weights(delta2, variances);
  double q = 0.0;
  for (const auto &block : g.blocks()) {
    const double target = subset_mean(block, lam, effects);
    for (int i : block) {
      const double r = effects[static_cast<std::size_t>(i)] - target;
      q += lam[static_cast<std::size_t>(i)] / delta2 * r * r;
    }
  }
  return q;
}

double log_joint_weight(const Partition &g, double delta2, std::span<const double> effects,
                        std::span<const double> variances, double log_delta2_prior,
                        PartitionPrior pprior) {
  check_inputs(delta2, variances);
  double shrink = 0.0;
  for (double v : variances) shrink += std::log(v) - std::log(delta2 + v);
  return prior_log_mass(pprior, g) + log_delta2_prior - 0.5 * g.num_blocks() + 0.5 * shrink -
         0.5 * q_statistic(g, delta2, effects, variances);
}

std::vector<PartitionProbability> JointPosterior::top_partitions(std::size_t k) const {
  std::vector<std::uint64_t> order(partition_marginal.size());
  std::iota(order.begin(), order.end(), 0);
  k = std::min(k, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::uint64_t a, std::uint64_t b) {
                      if (partition_marginal[a] != partition_marginal[b])
                        return partition_marginal[a] > partition_marginal[b];
                      return a < b;
                    });
  std::vector<PartitionProbability> out;
  for (std::size_t i = 0; i < k; ++i)
    out.push_back({unrank_partition(L, order[i]), order[i], partition_marginal[order[i]]});
  return out;
}

JointPosterior compute_joint_posterior(const StudySet &studies, const GridSpec &grid,
                                       const VariancePrior &vprior, PartitionPrior pprior,
                                       int threads) {
  return compute_joint_posterior(studies, DeltaGrid::make(grid, vprior), pprior, threads);
}

JointPosterior compute_joint_posterior(const StudySet &studies, const DeltaGrid &grid,
                                       PartitionPrior pprior, int threads) {
  const int L = static_cast<int>(studies.size());
  if (L > kMaxPoolingL)
    fail(ErrorKind::ResourceLimit, "the exhaustive partition sweep supports at most " +
                                       std::to_string(kMaxPoolingL) + " studies");
  if (grid.values.empty() || grid.values.size() != grid.log_prior.size())
    fail(ErrorKind::Validation, "delta2 grid is empty or inconsistent");
  if (!(grid.keep_mass > 0.0) || grid.keep_mass > 1.0)
    fail(ErrorKind::Validation, "keep_mass must lie in (0, 1]");

  JointPosterior jp;
  jp.L = L;
  jp.ids = studies.ids();
  jp.effects = studies.effects();
  jp.variances = studies.variances();
  jp.scale = studies.scale;
  jp.pprior = pprior;
  jp.grid = grid;
  for (double d2 : grid.values) check_inputs(d2, jp.variances);

  const SweepTables tables(jp.effects, jp.variances, grid, pprior);
  const std::size_t D = grid.size();
  const std::uint64_t G = bell_number(L);
  const std::size_t chunks = static_cast<std::size_t>((G + kChunk - 1) / kChunk);

  // Pass 1: per-partition log marginal mass.
  std::vector<double> part_log(G);
  std::vector<double> pool_all_log(D);
  parallel_tasks(chunks, threads, [&](std::size_t c) {
    const std::uint64_t begin = c * kChunk, end = std::min<std::uint64_t>(G, begin + kChunk);
    PartitionEnumerator it(L, begin);
    std::vector<double> lw(D);
    for (std::uint64_t r = begin; r < end; ++r, it.next()) {
      tables.evaluate(it.current(), lw);
      part_log[r] = log_sum_exp(lw);
      if (r == 0) pool_all_log = lw;
    }
  });
  const double log_z = log_sum_exp(part_log);
  if (!std::isfinite(log_z)) fail(ErrorKind::Numeric, "joint posterior normaliser is not finite");
  jp.log_normalizer = log_z;
  jp.partition_marginal.resize(G);
  for (std::uint64_t r = 0; r < G; ++r) jp.partition_marginal[r] = std::exp(part_log[r] - log_z);
  {
    const double lz0 = log_sum_exp(pool_all_log);
    for (double x : pool_all_log) jp.pool_all_delta2.push_back(std::exp(x - lz0));
  }

  // Pass 2: delta2 marginal and a histogram of cell mass by log weight.
  const bool keep_all = grid.keep_mass >= 1.0;
  std::vector<SweepChunk> parts(chunks);
  parallel_tasks(chunks, threads, [&](std::size_t c) {
    const std::uint64_t begin = c * kChunk, end = std::min<std::uint64_t>(G, begin + kChunk);
    PartitionEnumerator it(L, begin);
    std::vector<double> lw(D);
    SweepChunk &out = parts[c];
    out.delta2.assign(D, 0.0);
    out.hist.assign(kBins, 0.0);
    for (std::uint64_t r = begin; r < end; ++r, it.next()) {
      tables.evaluate(it.current(), lw);
      for (std::size_t d = 0; d < D; ++d) {
        const double lwn = lw[d] - log_z;
        const double w = std::exp(lwn);
        out.delta2[d] += w;
        out.hist[bin_of(lwn)] += w;
      }
    }
  });
  jp.delta2_marginal.assign(D, 0.0);
  std::vector<double> hist(kBins, 0.0);
  for (const auto &p : parts) {
    for (std::size_t d = 0; d < D; ++d) jp.delta2_marginal[d] += p.delta2[d];
    for (std::size_t b = 0; b < kBins; ++b) hist[b] += p.hist[b];
  }

  std::size_t cut = kBins - 1;
  double above = 0.0;
  if (!keep_all) {
    for (std::size_t b = 0; b < kBins; ++b) {
      if (above + hist[b] >= grid.keep_mass) {
        cut = b;
        break;
      }
      above += hist[b];
    }
  }

  // Pass 3: collect cells above the cut bin and candidates inside it.
  parallel_tasks(chunks, threads, [&](std::size_t c) {
    const std::uint64_t begin = c * kChunk, end = std::min<std::uint64_t>(G, begin + kChunk);
    PartitionEnumerator it(L, begin);
    std::vector<double> lw(D);
    SweepChunk &out = parts[c];
    out.delta2.clear();
    out.hist.clear();
    for (std::uint64_t r = begin; r < end; ++r, it.next()) {
      tables.evaluate(it.current(), lw);
      for (std::size_t d = 0; d < D; ++d) {
        const double lwn = lw[d] - log_z;
        const std::size_t b = bin_of(lwn);
        if (keep_all || b < cut)
          out.sure.push_back({r, static_cast<std::uint32_t>(d), std::exp(lwn)});
        else if (b == cut)
          out.boundary.push_back({r, static_cast<std::uint32_t>(d), std::exp(lwn)});
      }
    }
  });
  std::vector<RetainedCell> boundary;
  for (auto &p : parts) {
    jp.cells.insert(jp.cells.end(), p.sure.begin(), p.sure.end());
    boundary.insert(boundary.end(), p.boundary.begin(), p.boundary.end());
    std::vector<RetainedCell>().swap(p.sure);
    std::vector<RetainedCell>().swap(p.boundary);
  }
  std::sort(jp.cells.begin(), jp.cells.end(), heavier);
  std::sort(boundary.begin(), boundary.end(), heavier);
  double kept = 0.0;
  for (const auto &cell : jp.cells) kept += cell.weight;
  std::size_t take = 0;
  while (take < boundary.size() && kept < grid.keep_mass) kept += boundary[take++].weight;
  jp.cells.insert(jp.cells.end(), boundary.begin(),
                  boundary.begin() + static_cast<std::ptrdiff_t>(take));
  jp.retained_mass = kept;

  double dropped = 0.0;
  for (std::size_t i = take; i < boundary.size(); ++i) dropped += boundary[i].weight;
  for (std::size_t b = cut + 1; b < kBins && !keep_all; ++b) dropped += hist[b];
  jp.dropped_mass = dropped;

  // Co-clustering over the retained cells.
  std::vector<double> retained_by_partition(G, 0.0);
  for (const auto &cell : jp.cells) retained_by_partition[cell.partition] += cell.weight;
  jp.similarity = Eigen::MatrixXd::Zero(L, L);
  {
    PartitionEnumerator it(L);
    for (std::uint64_t r = 0; r < G; ++r, it.next()) {
      const double w = retained_by_partition[r];
      if (w == 0.0) continue;
      const auto &labels = it.current().labels();
      for (int i = 0; i < L; ++i)
        for (int j = i + 1; j < L; ++j)
          if (labels[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(j)])
            jp.similarity(i, j) += w;
    }
  }
  jp.similarity /= jp.retained_mass;
  for (int i = 0; i < L; ++i) {
    jp.similarity(i, i) = 1.0;
    for (int j = i + 1; j < L; ++j) jp.similarity(j, i) = jp.similarity(i, j);
  }
  return jp;
}

PosteriorDraws sample_mu(const JointPosterior &jp, int B, std::uint64_t seed, int threads) {
  if (B <= 0) fail(ErrorKind::Domain, "number of draws must be positive");
  if (jp.cells.empty()) fail(ErrorKind::Domain, "joint posterior has no retained cells");
  const int L = jp.L;
  std::vector<double> cumulative(jp.cells.size());
  double acc = 0.0;
  for (std::size_t c = 0; c < jp.cells.size(); ++c) {
    acc += jp.cells[c].weight;
    cumulative[c] = acc;
  }

  PosteriorDraws out;
  out.B = B;
  out.seed = seed;
  out.draws.resize(B, L);
  const std::size_t blocks = static_cast<std::size_t>((B + kDrawBlock - 1) / kDrawBlock);
  parallel_tasks(blocks, threads, [&](std::size_t blk) {
    Rng rng = substream(seed, blk);
    const int begin = static_cast<int>(blk) * kDrawBlock;
    const int end = std::min(B, begin + kDrawBlock);
    for (int b = begin; b < end; ++b) {
      const double u = uniform01(rng) * acc;
      auto pos = std::upper_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin();
      const auto &cell = jp.cells[std::min<std::size_t>(static_cast<std::size_t>(pos),
                                                        jp.cells.size() - 1)];
      const Partition g = unrank_partition(L, cell.partition);
      const double d2 = jp.grid.values[cell.grid];
      const auto lam = lambda_weights(d2, jp.variances);
      for (const auto &block : g.blocks()) {
        const int n = static_cast<int>(block.size());
        const double target = subset_mean(block, lam, jp.effects);
        double s = 0.0;
        for (int t : block) s += lam[static_cast<std::size_t>(t)];
        Eigen::VectorXd mean(n);
        Eigen::MatrixXd cov(n, n);
        for (int a = 0; a < n; ++a) {
          const double la = lam[static_cast<std::size_t>(block[static_cast<std::size_t>(a)])];
          mean(a) = la * jp.effects[static_cast<std::size_t>(block[static_cast<std::size_t>(a)])] +
                    (1.0 - la) * target;
          for (int c = 0; c < n; ++c) {
            const double lc = lam[static_cast<std::size_t>(block[static_cast<std::size_t>(c)])];
            cov(a, c) = (1.0 - la) * (1.0 - lc) * d2 / s + (a == c ? d2 * (1.0 - la) : 0.0);
          }
        }
        const Eigen::MatrixXd chol = stable_cholesky(cov);
        Eigen::VectorXd z(n);
        for (int a = 0; a < n; ++a) z(a) = std_normal(rng);
        const Eigen::VectorXd x = mean + chol * z;
        for (int a = 0; a < n; ++a) out.draws(b, block[static_cast<std::size_t>(a)]) = x(a);
      }
    }
  });
  if (jp.scale == EffectScale::LogOdds)
    out.probability = out.draws.unaryExpr([](double x) { return expit(x); });
  else
    out.probability = out.draws;
  return out;
}

StudySummary summarize_sample(std::vector<double> values, double level) {
  if (!(level > 0.0 && level < 1.0)) fail(ErrorKind::Domain, "level must lie in (0, 1)");
  if (values.empty()) fail(ErrorKind::Domain, "cannot summarise an empty sample");
  StudySummary s;
  double sum = 0.0;
  for (double x : values) sum += x;
  s.mean = sum / static_cast<double>(values.size());
  std::sort(values.begin(), values.end());
  auto quantile = [&](double p) {
    const double h = (static_cast<double>(values.size()) - 1.0) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
  };
  const double alpha = 1.0 - level;
  s.lower = quantile(alpha / 2.0);
  s.upper = quantile(1.0 - alpha / 2.0);
  return s;
}

std::vector<StudySummary> summarize(const PosteriorDraws &draws, std::span<const int> ids,
                                    double level) {
  std::vector<StudySummary> out;
  for (Eigen::Index i = 0; i < draws.probability.cols(); ++i) {
    std::vector<double> col(draws.probability.col(i).data(),
                            draws.probability.col(i).data() + draws.probability.rows());
    StudySummary s = summarize_sample(std::move(col), level);
    s.id = ids.empty() ? static_cast<int>(i + 1) : ids[static_cast<std::size_t>(i)];
    out.push_back(s);
  }
  return out;
}

OverallEffect overall_effect_interval(const JointPosterior &jp, double level, int draws,
                                      std::uint64_t seed, OverallEffectMode mode) {
  if (draws <= 0) fail(ErrorKind::Domain, "number of draws must be positive");
  const std::size_t D = jp.grid.size();
  std::vector<double> mean(D), var(D), cumulative(D);
  double acc = 0.0;
  for (std::size_t d = 0; d < D; ++d) {
    const double d2 = jp.grid.values[d];
    const auto lam = lambda_weights(d2, jp.variances);
    double s = 0.0, sy = 0.0;
    for (std::size_t i = 0; i < lam.size(); ++i) {
      s += lam[i];
      sy += lam[i] * jp.effects[i];
    }
    mean[d] = sy / s;
    var[d] = d2 / s + (mode == OverallEffectMode::NewStudy ? d2 : 0.0);
    acc += jp.pool_all_delta2[d];
    cumulative[d] = acc;
  }
  Rng rng = substream(seed, 0);
  std::vector<double> sample(static_cast<std::size_t>(draws));
  for (auto &x : sample) {
    const double u = uniform01(rng) * acc;
    auto d = static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), u) -
                                      cumulative.begin());
    d = std::min(d, D - 1);
    const double nu = mean[d] + std::sqrt(var[d]) * std_normal(rng);
    x = jp.scale == EffectScale::LogOdds ? expit(nu) : nu;
  }
  const StudySummary s = summarize_sample(std::move(sample), level);
  return {s.mean, s.lower, s.upper};
}

StudySummary gold_standard_posterior(const PosteriorDraws &draws, const JointPosterior &jp,
                                     int id, double level) {
  std::size_t idx = jp.ids.size();
  for (std::size_t i = 0; i < jp.ids.size(); ++i)
    if (jp.ids[i] == id) idx = i;
  if (idx == jp.ids.size()) fail(ErrorKind::NotFound, "no study with id " + std::to_string(id));
  const auto col = draws.probability.col(static_cast<Eigen::Index>(idx));
  StudySummary s = summarize_sample(std::vector<double>(col.data(), col.data() + col.size()), level);
  s.id = id;
  return s;
}

}  // namespace upool
