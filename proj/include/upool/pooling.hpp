#ifndef UPOOL_POOLING_HPP
#define UPOOL_POOLING_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <vector>

#include "upool/partitions.hpp"
#include "upool/study_data.hpp"

namespace upool {

// Prior on the common within-block variance delta^2.
struct VariancePrior {
  enum class Kind { InvBeta, InvGamma };
  Kind kind = Kind::InvBeta;
  double alpha = 11.01;
  double beta = 0.001;

  static VariancePrior inv_beta() { return {}; }
  static VariancePrior inv_gamma(double alpha = 11.01, double beta = 0.001);

  // Unnormalised log density.
  double log_density(double delta2) const;
};

// Log-uniform grid over delta^2.
struct GridSpec {
  double delta2_min = 1e-4;
  double delta2_max = 1e2;
  int points = 101;
  double keep_mass = 0.992;
  // When set, each point's prior mass is density * delta^2 (the log-spacing
  // Jacobian); otherwise the density itself is used.
  bool log_jacobian = false;

  void validate() const;
  std::vector<double> values() const;
};

// Grid values with the log prior mass assigned to each point.
struct DeltaGrid {
  std::vector<double> values;
  std::vector<double> log_prior;
  double keep_mass = 0.992;

  static DeltaGrid make(const GridSpec &spec, const VariancePrior &prior);
  std::size_t size() const { return values.size(); }
};

struct ConditionalMoments {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
};

// lambda_i = delta2 / (delta2 + v_i).
std::vector<double> lambda_weights(double delta2, std::span<const double> variances);

double subset_mean(std::span<const int> block, std::span<const double> lambda,
                   std::span<const double> effects);

ConditionalMoments conditional_moments(const Partition &g, double delta2,
                                       std::span<const double> effects,
                                       std::span<const double> variances);

// Lambda-weighted within-block sum of squares.
double q_statistic(const Partition &g, double delta2, std::span<const double> effects,
                   std::span<const double> variances);

// Unnormalised log f(g, delta2 | y) given the log prior mass of the delta2 point.
double log_joint_weight(const Partition &g, double delta2, std::span<const double> effects,
                        std::span<const double> variances, double log_delta2_prior,
                        PartitionPrior pprior);

struct RetainedCell {
  std::uint64_t partition = 0;  // lexicographic restricted-growth rank
  std::uint32_t grid = 0;
  double weight = 0.0;  // normalised over the full grid
};

struct PartitionProbability {
  Partition partition;
  std::uint64_t rank = 0;
  double probability = 0.0;
};

struct JointPosterior {
  int L = 0;
  std::vector<int> ids;
  std::vector<double> effects;
  std::vector<double> variances;
  EffectScale scale = EffectScale::LogOdds;
  PartitionPrior pprior = PartitionPrior::Uniform;
  DeltaGrid grid;

  double log_normalizer = 0.0;
  // Cells kept after truncation, sorted by decreasing weight.
  std::vector<RetainedCell> cells;
  double retained_mass = 0.0;
  double dropped_mass = 0.0;
  // Marginals over the full (untruncated) grid.
  std::vector<double> delta2_marginal;
  std::vector<double> partition_marginal;  // indexed by partition rank
  // f(delta2 | y, g0) for the single-block partition g0.
  std::vector<double> pool_all_delta2;
  // Co-clustering probabilities over the retained cells.
  Eigen::MatrixXd similarity;

  double pool_all_probability() const { return partition_marginal.front(); }
  std::vector<PartitionProbability> top_partitions(std::size_t k) const;
};

JointPosterior compute_joint_posterior(const StudySet &studies, const DeltaGrid &grid,
                                       PartitionPrior pprior = PartitionPrior::Uniform,
                                       int threads = 0);
JointPosterior compute_joint_posterior(const StudySet &studies, const GridSpec &grid,
                                       const VariancePrior &vprior,
                                       PartitionPrior pprior = PartitionPrior::Uniform,
                                       int threads = 0);

constexpr int kMaxPoolingL = 12;

struct PosteriorDraws {
  Eigen::MatrixXd draws;        // B x L on the analysis scale
  Eigen::MatrixXd probability;  // B x L on the probability scale
  std::uint64_t seed = 0;
  int B = 0;
};

PosteriorDraws sample_mu(const JointPosterior &jp, int B, std::uint64_t seed, int threads = 0);

struct StudySummary {
  int id = 0;
  double mean = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

std::vector<StudySummary> summarize(const PosteriorDraws &draws, std::span<const int> ids,
                                    double level = 0.95);
// Equal-tail summary of one sample (linear-interpolation quantiles).
StudySummary summarize_sample(std::vector<double> values, double level);

enum class OverallEffectMode {
  // nu | y, g0, delta2 ~ N(mu_hat(g0), delta2 / sum lambda)
  Mean,
  // effect of a new study from the single-block model: adds delta2 to the variance
  NewStudy,
};

struct OverallEffect {
  double mean = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

OverallEffect overall_effect_interval(const JointPosterior &jp, double level = 0.95,
                                      int draws = 100000, std::uint64_t seed = 1,
                                      OverallEffectMode mode = OverallEffectMode::Mean);

StudySummary gold_standard_posterior(const PosteriorDraws &draws, const JointPosterior &jp,
                                     int id, double level = 0.95);

}  // namespace upool

#endif
