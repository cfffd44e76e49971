#ifndef UPOOL_RJMCMC_HPP
#define UPOOL_RJMCMC_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "upool/diagnostics.hpp"
#include "upool/partitions.hpp"
#include "upool/pooling.hpp"
#include "upool/random.hpp"
#include "upool/study_data.hpp"

namespace upool {

// Binomial-beta partition model:
//   y_i ~ Bin(n_i, theta_i),  theta_i ~ Beta(q a_k, q (1 - a_k)) for i in S_k(g),
//   a_k ~ U(0,1),  log q ~ U(log q_min, log q_max),  g ~ size-biased prior.
struct RjState {
  Partition g;
  std::vector<double> alpha;  // one per block, in canonical block order
  double q = 0.0;
  std::vector<double> theta;
};

struct RjConfig {
  int iterations = 200000;
  int burn_in = 50000;
  double q_min = 100.0;
  double q_max = 1000.0;
  double birth_prob = 0.5;  // away from d(g) = 1 and d(g) = L
  double alpha_step = 0.5;  // random-walk scale on logit(alpha)
  double q_step = 0.3;      // random-walk scale on log(q)
  bool adapt = true;        // tune both steps during burn-in, then freeze
  bool keep_chain = false;  // retain per-iteration draws for export
  std::uint64_t seed = 1;

  void validate() const;
};

RjState initial_state(const StudySet &studies, const RjConfig &config);
void check_state(const RjState &state, const RjConfig &config);

double rj_log_joint(const RjState &state, const StudySet &studies, const RjConfig &config);

void gibbs_theta(RjState &state, const StudySet &studies, Rng &rng);
// Returns whether the proposal was accepted.
bool mh_alpha(RjState &state, int k, double step, const StudySet &studies, Rng &rng);
bool mh_q(RjState &state, double step, const StudySet &studies, const RjConfig &config, Rng &rng);

// Probability of attempting a split from a state with d blocks out of L.
double birth_probability(int d, int L, const RjConfig &config);

// Deterministic halves of the split/merge pair. `second_side` lists the
// members of block k moved to the new block (must exclude the block's smallest
// member); u in (0,1) fixes the split of alpha. The merge fuses blocks a < b.
struct SplitProposal {
  RjState state;
  double log_proposal_ratio = 0.0;  // log q(reverse) - log q(forward) + log |J|
};
SplitProposal propose_split(const RjState &state, int k, const std::vector<int> &second_side,
                            double u, const RjConfig &config);
SplitProposal propose_merge(const RjState &state, int a, int b, const RjConfig &config);

enum class MoveKind { None, Split, Merge };
struct MoveResult {
  MoveKind kind = MoveKind::None;
  bool accepted = false;
};
MoveResult split_merge_move(RjState &state, const StudySet &studies, const RjConfig &config,
                            Rng &rng);

struct RjSummary {
  std::vector<StudySummary> studies;  // theta on the probability scale
  SimilarityMatrix similarity;
  std::vector<PartitionProbability> partition_frequencies;  // decreasing
  double alpha_acceptance = 0.0;
  double q_acceptance = 0.0;
  double split_acceptance = 0.0;
  double merge_acceptance = 0.0;
  double alpha_step = 0.0;  // frozen values
  double q_step = 0.0;
  double mean_q = 0.0;
  int kept = 0;
  // Populated when config.keep_chain is set.
  Eigen::MatrixXd theta_chain;
  std::vector<double> q_chain;
  std::vector<int> blocks_chain;
};

RjSummary run_rj_chain(const StudySet &studies, const RjConfig &config, double level = 0.95);

}  // namespace upool

#endif
