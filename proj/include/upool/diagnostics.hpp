#ifndef UPOOL_DIAGNOSTICS_HPP
#define UPOOL_DIAGNOSTICS_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "upool/pooling.hpp"

namespace upool {

enum class SimilaritySource { GridPosterior, RjChain, DpmChain };

struct SimilarityMatrix {
  Eigen::MatrixXd values;  // symmetric, unit diagonal, entries in [0,1]
  std::vector<int> ids;
  SimilaritySource source = SimilaritySource::GridPosterior;
};

std::string_view source_name(SimilaritySource source);

SimilarityMatrix similarity_from_grid(const JointPosterior &jp);

// Accumulates co-clustering frequencies one labelling at a time.
class CoClusteringCounter {
 public:
  explicit CoClusteringCounter(int L);
  void add(const std::vector<int> &labels);
  std::uint64_t count() const { return count_; }
  SimilarityMatrix finish(std::vector<int> ids, SimilaritySource source) const;

 private:
  int L_;
  std::uint64_t count_ = 0;
  std::vector<std::uint64_t> together_;  // upper triangle, row-major L x L
};

// Posterior mass of partitions satisfying the predicate (full grid, no truncation).
double partition_class_probability(const JointPosterior &jp,
                                   const std::function<bool(const Partition &)> &predicate);

enum class PpcDelta2 {
  // delta2 from f(delta2 | y, g0), i.e. the posterior under the pool-all model
  PoolAll,
  // delta2 from its model-averaged marginal f(delta2 | y); not calibrated
  // under the pool-all model, kept for comparison
  Marginal,
};

struct PpcResult {
  double p_value = 0.0;
  std::uint64_t exceedances = 0;
  std::uint64_t replicates = 0;
  // observed discrepancy over replicates
  double observed_mean = 0.0;
  double observed_median = 0.0;

  // "< 1/replicates" when nothing exceeded the observed discrepancy.
  bool is_upper_bound() const { return exceedances == 0; }
  std::string display() const;
};

// Replicates y_rep_i ~ N(nu, delta2 + v_i) under the pool-all model with the
// plug-in variances held fixed; T(y, nu, delta2) = sum (y_i - nu)^2 / (v_i + delta2).
PpcResult posterior_predictive_pvalue(const JointPosterior &jp, std::uint64_t replicates,
                                      std::uint64_t seed, int threads = 0,
                                      PpcDelta2 mode = PpcDelta2::PoolAll);

enum class RenderFormat { Csv, Svg };
RenderFormat parse_render_format(std::string_view text);

// Category bins used by the heatmap: [0,.2), [.2,.4), [.4,.6), [.6,.8), [.8,1].
int similarity_bin(double p);

void render_similarity(std::ostream &out, const SimilarityMatrix &sm, RenderFormat format);
SimilarityMatrix read_similarity_csv(std::istream &in);

}  // namespace upool

#endif
