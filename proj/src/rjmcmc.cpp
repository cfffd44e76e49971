#include "upool/rjmcmc.hpp"

#include <algorithm>
#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <limits>
#include <unordered_map>

#include "upool/errors.hpp"

namespace upool {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr int kAdaptWindow = 200;

double lgam(double x) { return boost::math::lgamma(x); }

double log_beta_density(double x, double a, double b) {
  if (!(x > 0.0 && x < 1.0)) return kNegInf;
  return (a - 1.0) * std::log(x) + (b - 1.0) * std::log1p(-x) - (lgam(a) + lgam(b) - lgam(a + b));
}

double log_binomial(long y, long n, double theta) {
  if (!(theta > 0.0 && theta < 1.0)) return kNegInf;
  const double yd = static_cast<double>(y), nd = static_cast<double>(n);
  return lgam(nd + 1.0) - lgam(yd + 1.0) - lgam(nd - yd + 1.0) + yd * std::log(theta) +
         (nd - yd) * std::log1p(-theta);
}

double clamp_open(double x) {
  constexpr double tiny = 1e-300;
  return std::clamp(x, tiny, std::nextafter(1.0, 0.0));
}

// Beta terms of the members of block k given alpha_k and q.
double block_log_density(const RjState &s, int k, double alpha, double q) {
  double out = 0.0;
  for (int i = 0; i < s.g.size(); ++i)
    if (s.g.block_of(i) == k)
      out += log_beta_density(s.theta[static_cast<std::size_t>(i)], q * alpha, q * (1.0 - alpha));
  return out;
}

double log_q_prior(double q, const RjConfig &c) {
  if (!(q >= c.q_min && q <= c.q_max)) return kNegInf;
  return -std::log(q) - std::log(std::log(c.q_max / c.q_min));
}

// Relabels into restricted-growth form and carries alpha (indexed by raw label) along.
RjState canonical(const RjState &base, const std::vector<int> &raw, const std::vector<double> &alpha) {
  RjState out;
  out.g = Partition::from_labels(raw);
  out.alpha.assign(static_cast<std::size_t>(out.g.num_blocks()), 0.0);
  for (std::size_t i = 0; i < raw.size(); ++i)
    out.alpha[static_cast<std::size_t>(out.g.block_of(static_cast<int>(i)))] =
        alpha[static_cast<std::size_t>(raw[i])];
  out.q = base.q;
  out.theta = base.theta;
  return out;
}

int splittable_blocks(const Partition &g) {
  int n = 0;
  for (int s : g.block_sizes()) n += s >= 2;
  return n;
}

struct WRange {
  double lo, hi;
};

// alpha_1 = alpha + (n2/N) w, alpha_2 = alpha - (n1/N) w; both must stay in (0,1).
WRange w_range(double alpha, int n1, int n2) {
  const double N = n1 + n2;
  return {-std::min(alpha * N / n2, (1.0 - alpha) * N / n1),
          std::min((1.0 - alpha) * N / n2, alpha * N / n1)};
}

// log q(merge back) - log q(split) for a split of a block of `size` members
// in a d-block state into d + 1 blocks.
double split_log_ratio(const Partition &before, int size, double u, WRange r, const RjConfig &c) {
  const int d = before.num_blocks(), L = before.size();
  const double forward = std::log(birth_probability(d, L, c)) -
                         std::log(static_cast<double>(splittable_blocks(before))) -
                         (size - 1) * std::log(2.0) + std::log(6.0 * u * (1.0 - u)) -
                         std::log(r.hi - r.lo);
  const double pairs = 0.5 * static_cast<double>(d + 1) * static_cast<double>(d);
  const double reverse = std::log(1.0 - birth_probability(d + 1, L, c)) - std::log(pairs);
  return reverse - forward;
}

}  // namespace

void RjConfig::validate() const {
  if (iterations <= 0 || burn_in < 0 || burn_in >= iterations)
    fail(ErrorKind::Validation, "RJMCMC needs iterations > burn_in >= 0");
  if (!(q_min > 0.0 && q_min < q_max)) fail(ErrorKind::Validation, "q range must satisfy 0 < a < b");
  if (!(birth_prob > 0.0 && birth_prob < 1.0))
    fail(ErrorKind::Validation, "birth probability must lie in (0, 1)");
  if (!(alpha_step > 0.0) || !(q_step > 0.0))
    fail(ErrorKind::Validation, "random-walk steps must be positive");
}

double birth_probability(int d, int L, const RjConfig &config) {
  if (L <= 1) return 0.0;
  if (d <= 1) return 1.0;
  if (d >= L) return 0.0;
  return config.birth_prob;
}

RjState initial_state(const StudySet &studies, const RjConfig &config) {
  const int L = static_cast<int>(studies.size());
  RjState s;
  s.g = Partition::pool_all(L);
  double ev = 0.0, tr = 0.0;
  for (const auto &st : studies.studies) {
    ev += static_cast<double>(st.events);
    tr += static_cast<double>(st.trials);
  }
  s.alpha = {std::clamp((ev + 0.5) / (tr + 1.0), 0.01, 0.99)};
  s.q = std::sqrt(config.q_min * config.q_max);
  for (const auto &st : studies.studies)
    s.theta.push_back((static_cast<double>(st.events) + 0.5) / (static_cast<double>(st.trials) + 1.0));
  return s;
}

void check_state(const RjState &s, const RjConfig &config) {
  if (!is_restricted_growth(s.g.labels())) fail(ErrorKind::Numeric, "RJ state partition is not canonical");
  if (static_cast<int>(s.alpha.size()) != s.g.num_blocks())
    fail(ErrorKind::Numeric, "RJ state has one alpha per block");
  for (double a : s.alpha)
    if (!(a > 0.0 && a < 1.0)) fail(ErrorKind::Numeric, "RJ alpha left (0,1)");
  if (!(s.q >= config.q_min && s.q <= config.q_max)) fail(ErrorKind::Numeric, "RJ q left its support");
  for (double t : s.theta)
    if (!(t > 0.0 && t < 1.0)) fail(ErrorKind::Numeric, "RJ theta left (0,1)");
}

double rj_log_joint(const RjState &s, const StudySet &studies, const RjConfig &config) {
  double out = prior_log_mass(PartitionPrior::SizeBiased, s.g) + log_q_prior(s.q, config);
  for (double a : s.alpha)
    if (!(a > 0.0 && a < 1.0)) return kNegInf;
  for (int i = 0; i < s.g.size(); ++i) {
    const auto ui = static_cast<std::size_t>(i);
    const double a = s.alpha[static_cast<std::size_t>(s.g.block_of(i))];
    out += log_beta_density(s.theta[ui], s.q * a, s.q * (1.0 - a));
    out += log_binomial(studies.studies[ui].events, studies.studies[ui].trials, s.theta[ui]);
  }
  return out;
}

void gibbs_theta(RjState &s, const StudySet &studies, Rng &rng) {
  for (int i = 0; i < s.g.size(); ++i) {
    const auto ui = static_cast<std::size_t>(i);
    const double a = s.alpha[static_cast<std::size_t>(s.g.block_of(i))];
    const double y = static_cast<double>(studies.studies[ui].events);
    const double n = static_cast<double>(studies.studies[ui].trials);
    s.theta[ui] = clamp_open(beta_draw(rng, s.q * a + y, s.q * (1.0 - a) + n - y));
  }
}

bool mh_alpha(RjState &s, int k, double step, const StudySet &, Rng &rng) {
  const double a = s.alpha[static_cast<std::size_t>(k)];
  const double proposed = expit(logit(a) + step * std_normal(rng));
  if (!(proposed > 0.0 && proposed < 1.0)) return false;
  // random walk on logit(alpha): Jacobian alpha (1 - alpha) on each side
  const double log_ratio = block_log_density(s, k, proposed, s.q) - block_log_density(s, k, a, s.q) +
                           std::log(proposed * (1.0 - proposed)) - std::log(a * (1.0 - a));
  if (std::log(uniform01(rng)) < log_ratio) {
    s.alpha[static_cast<std::size_t>(k)] = proposed;
    return true;
  }
  return false;
}

bool mh_q(RjState &s, double step, const StudySet &, const RjConfig &config, Rng &rng) {
  const double proposed = s.q * std::exp(step * std_normal(rng));
  if (!(proposed >= config.q_min && proposed <= config.q_max)) return false;
  double log_ratio = log_q_prior(proposed, config) - log_q_prior(s.q, config) +
                     std::log(proposed) - std::log(s.q);
  for (int k = 0; k < s.g.num_blocks(); ++k) {
    const double a = s.alpha[static_cast<std::size_t>(k)];
    log_ratio += block_log_density(s, k, a, proposed) - block_log_density(s, k, a, s.q);
  }
  if (std::log(uniform01(rng)) < log_ratio) {
    s.q = proposed;
    return true;
  }
  return false;
}

SplitProposal propose_split(const RjState &s, int k, const std::vector<int> &second_side, double u,
                            const RjConfig &config) {
  const auto blocks = s.g.blocks();
  const auto &members = blocks[static_cast<std::size_t>(k)];
  const int n2 = static_cast<int>(second_side.size());
  const int n1 = static_cast<int>(members.size()) - n2;
  if (n1 < 1 || n2 < 1) fail(ErrorKind::Domain, "a split needs two nonempty sides");
  for (int m : second_side)
    if (m == members.front() || s.g.block_of(m) != k)
      fail(ErrorKind::Domain, "second side must be drawn from the block, excluding its smallest member");

  const double a = s.alpha[static_cast<std::size_t>(k)];
  const WRange r = w_range(a, n1, n2);
  const double w = r.lo + (r.hi - r.lo) * u;
  const double N = n1 + n2;
  std::vector<double> alpha = s.alpha;
  alpha[static_cast<std::size_t>(k)] = a + (n2 / N) * w;
  alpha.push_back(a - (n1 / N) * w);
  std::vector<int> raw(s.g.labels().begin(), s.g.labels().end());
  for (int m : second_side) raw[static_cast<std::size_t>(m)] = s.g.num_blocks();

  SplitProposal out;
  out.state = canonical(s, raw, alpha);
  out.log_proposal_ratio = split_log_ratio(s.g, n1 + n2, u, r, config);
  return out;
}

SplitProposal propose_merge(const RjState &s, int a, int b, const RjConfig &config) {
  if (a > b) std::swap(a, b);
  if (a == b || b >= s.g.num_blocks()) fail(ErrorKind::Domain, "merge needs two distinct blocks");
  const auto sizes = s.g.block_sizes();
  const int n1 = sizes[static_cast<std::size_t>(a)], n2 = sizes[static_cast<std::size_t>(b)];
  const double a1 = s.alpha[static_cast<std::size_t>(a)], a2 = s.alpha[static_cast<std::size_t>(b)];
  const double N = n1 + n2;
  const double merged = (n1 * a1 + n2 * a2) / N;

  std::vector<int> raw(s.g.labels().begin(), s.g.labels().end());
  for (int &l : raw)
    if (l == b) l = a;
  std::vector<double> alpha = s.alpha;
  alpha[static_cast<std::size_t>(a)] = merged;

  SplitProposal out;
  out.state = canonical(s, raw, alpha);
  // block a holds the smaller first member, so it is side one of the reverse split
  const WRange r = w_range(merged, n1, n2);
  const double u = (a1 - a2 - r.lo) / (r.hi - r.lo);
  if (!(u > 0.0 && u < 1.0)) {
    out.log_proposal_ratio = kNegInf;
    return out;
  }
  out.log_proposal_ratio = -split_log_ratio(out.state.g, n1 + n2, u, r, config);
  return out;
}

MoveResult split_merge_move(RjState &s, const StudySet &studies, const RjConfig &config, Rng &rng) {
  const int L = s.g.size(), d = s.g.num_blocks();
  if (L <= 1) return {};
  const bool split = uniform01(rng) < birth_probability(d, L, config);
  SplitProposal prop;
  MoveResult result;
  if (split) {
    result.kind = MoveKind::Split;
    const auto blocks = s.g.blocks();
    std::vector<int> candidates;
    for (int k = 0; k < d; ++k)
      if (blocks[static_cast<std::size_t>(k)].size() >= 2) candidates.push_back(k);
    const int k = candidates[static_cast<std::size_t>(uniform01(rng) * static_cast<double>(candidates.size()))];
    std::vector<int> second;
    const auto &members = blocks[static_cast<std::size_t>(k)];
    for (std::size_t m = 1; m < members.size(); ++m)
      if (uniform01(rng) < 0.5) second.push_back(members[m]);
    const double u = beta_draw(rng, 2.0, 2.0);
    if (second.empty() || !(u > 0.0 && u < 1.0)) return result;
    prop = propose_split(s, k, second, u, config);
  } else {
    result.kind = MoveKind::Merge;
    const auto pairs = static_cast<std::size_t>(d) * static_cast<std::size_t>(d - 1) / 2;
    auto pick = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(pairs));
    int a = 0, b = 1;
    for (std::size_t p = 0; p < pick; ++p)
      if (++b == d) b = ++a + 1;
    prop = propose_merge(s, a, b, config);
  }
  const double log_accept =
      rj_log_joint(prop.state, studies, config) - rj_log_joint(s, studies, config) + prop.log_proposal_ratio;
  if (std::log(uniform01(rng)) < log_accept) {
    s = std::move(prop.state);
    result.accepted = true;
  }
  return result;
}

RjSummary run_rj_chain(const StudySet &studies, const RjConfig &config, double level) {
  config.validate();
  const int L = static_cast<int>(studies.size());
  if (L > kMaxEnumerateL) fail(ErrorKind::ResourceLimit, "too many studies for the RJ sampler");
  Rng rng = substream(config.seed, 0);
  RjState s = initial_state(studies, config);
  double alpha_step = config.alpha_step, q_step = config.q_step;

  const int kept = config.iterations - config.burn_in;
  Eigen::MatrixXd theta(kept, L);
  std::unordered_map<std::uint64_t, std::uint64_t> visits;
  CoClusteringCounter counter(L);
  std::vector<int> labels(static_cast<std::size_t>(L));
  std::uint64_t a_try = 0, a_acc = 0, q_try = 0, q_acc = 0, s_try = 0, s_acc = 0, m_try = 0, m_acc = 0;
  std::uint64_t wa_try = 0, wa_acc = 0, wq_acc = 0;
  double q_sum = 0.0;
  RjSummary out;

  for (int it = 0; it < config.iterations; ++it) {
    gibbs_theta(s, studies, rng);
    for (int k = 0; k < s.g.num_blocks(); ++k) {
      const bool ok = mh_alpha(s, k, alpha_step, studies, rng);
      ++wa_try;
      wa_acc += ok;
      if (it >= config.burn_in) {
        ++a_try;
        a_acc += ok;
      }
    }
    const bool qok = mh_q(s, q_step, studies, config, rng);
    wq_acc += qok;
    const MoveResult mv = split_merge_move(s, studies, config, rng);

    if (config.adapt && it < config.burn_in && (it + 1) % kAdaptWindow == 0) {
      const double ra = static_cast<double>(wa_acc) / static_cast<double>(std::max<std::uint64_t>(wa_try, 1));
      const double rq = static_cast<double>(wq_acc) / kAdaptWindow;
      if (ra < 0.25) alpha_step *= 0.8;
      if (ra > 0.45) alpha_step *= 1.25;
      if (rq < 0.25) q_step *= 0.8;
      if (rq > 0.45) q_step *= 1.25;
      wa_try = wa_acc = wq_acc = 0;
    }
    if (it < config.burn_in) continue;

    ++q_try;
    q_acc += qok;
    if (mv.kind == MoveKind::Split) {
      ++s_try;
      s_acc += mv.accepted;
    } else if (mv.kind == MoveKind::Merge) {
      ++m_try;
      m_acc += mv.accepted;
    }
    const int row = it - config.burn_in;
    for (int i = 0; i < L; ++i) {
      theta(row, i) = s.theta[static_cast<std::size_t>(i)];
      labels[static_cast<std::size_t>(i)] = s.g.block_of(i);
    }
    counter.add(labels);
    ++visits[rank_partition(s.g)];
    q_sum += s.q;
    if (config.keep_chain) {
      out.q_chain.push_back(s.q);
      out.blocks_chain.push_back(s.g.num_blocks());
    }
  }
  check_state(s, config);

  const auto ids = studies.ids();
  for (int i = 0; i < L; ++i) {
    std::vector<double> col(theta.col(i).data(), theta.col(i).data() + kept);
    StudySummary st = summarize_sample(std::move(col), level);
    st.id = ids[static_cast<std::size_t>(i)];
    out.studies.push_back(st);
  }
  out.similarity = counter.finish(ids, SimilaritySource::RjChain);
  for (const auto &[rank, count] : visits)
    out.partition_frequencies.push_back(
        {unrank_partition(L, rank), rank, static_cast<double>(count) / static_cast<double>(kept)});
  std::sort(out.partition_frequencies.begin(), out.partition_frequencies.end(),
            [](const PartitionProbability &x, const PartitionProbability &y) {
              return x.probability != y.probability ? x.probability > y.probability : x.rank < y.rank;
            });
  auto rate = [](std::uint64_t acc, std::uint64_t tries) {
    return tries == 0 ? 0.0 : static_cast<double>(acc) / static_cast<double>(tries);
  };
  out.alpha_acceptance = rate(a_acc, a_try);
  out.q_acceptance = rate(q_acc, q_try);
  out.split_acceptance = rate(s_acc, s_try);
  out.merge_acceptance = rate(m_acc, m_try);
  out.alpha_step = alpha_step;
  out.q_step = q_step;
  out.mean_q = q_sum / kept;
  out.kept = kept;
  if (config.keep_chain) out.theta_chain = std::move(theta);
  return out;
}

}  // namespace upool
