#ifndef UPOOL_DPM_HPP
#define UPOOL_DPM_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <vector>

#include "upool/diagnostics.hpp"
#include "upool/pooling.hpp"
#include "upool/study_data.hpp"

namespace upool {

// H0 = N(eta, tau2).
struct BaseMeasure {
  double eta = 0.0;
  double tau2 = 0.0;
};

struct DpmConfig {
  std::vector<double> m_values;  // empty: default_m_values(L)
  int iterations = 20000;
  int burn_in = 5000;
  std::uint64_t seed = 1;

  static std::vector<double> default_m_values(int L);
  void validate() const;
};

// Profile MLE of the one-component random-effects model y_i ~ N(eta, tau2 + v_i).
BaseMeasure mle_base_measure(std::span<const double> effects, std::span<const double> variances);
BaseMeasure mle_base_measure(const StudySet &studies);
double random_effects_log_likelihood(double tau2, std::span<const double> effects,
                                     std::span<const double> variances);

struct DpmState {
  std::vector<int> labels;          // contiguous from 0
  std::vector<double> cluster_mean;
  std::vector<double> mu;           // mu_i = cluster_mean[labels[i]]
};

// Probabilities of seating study i at each existing cluster (study i removed
// from the state) followed by a new cluster. Normalised.
std::vector<double> crp_reassignment_probabilities(const DpmState &state, int i,
                                                   std::span<const double> effects,
                                                   std::span<const double> variances, double M,
                                                   const BaseMeasure &base);

struct DpmChain {
  double M = 0.0;
  BaseMeasure base;
  Eigen::MatrixXd mu;                   // kept iterations x L, analysis scale
  std::vector<std::vector<int>> labels;  // kept iterations
  EffectScale scale = EffectScale::LogOdds;
};

// Collapsed normal-normal Gibbs sampler. `stream` selects the RNG substream of config.seed.
DpmChain dpm_gibbs(const StudySet &studies, double M, const BaseMeasure &base,
                   const DpmConfig &config, std::uint64_t stream = 0);

struct DpmSummary {
  double M = 0.0;
  std::vector<StudySummary> studies;  // probability scale when the chain is on log-odds
  SimilarityMatrix similarity;
  double mean_clusters = 0.0;
  double single_cluster_fraction = 0.0;
};

DpmSummary dpm_summaries(const DpmChain &chain, const StudySet &studies, double level = 0.95);

// One chain per M value in config (independent substreams), summarised.
std::vector<DpmSummary> run_dpm(const StudySet &studies, const DpmConfig &config, int threads = 0);

}  // namespace upool

#endif
