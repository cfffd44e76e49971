#ifndef UPOOL_COVARIATES_HPP
#define UPOOL_COVARIATES_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "upool/pooling.hpp"
#include "upool/study_data.hpp"

namespace upool {

// Regression offset: ybar_i ~ N(mu_i + x_i' beta, v_i). Rows follow StudySet order.
struct CovariateDesign {
  Eigen::MatrixXd X;  // L x p
  std::vector<std::string> names;

  // p >= 1, L > p, full column rank; SingularDesign otherwise.
  void validate(int L) const;
};

// beta | mu, y ~ MVN(mean, precision^-1) with V = diag(1/v),
// precision = X'VX and mean = precision^-1 X'V (y - mu).
struct BetaConditional {
  Eigen::VectorXd mean;
  Eigen::MatrixXd precision;
};

BetaConditional beta_conditional(std::span<const double> mu, std::span<const double> effects,
                                 std::span<const double> variances, const CovariateDesign &design);
BetaConditional beta_conditional(std::span<const double> mu, const StudySet &studies,
                                 const CovariateDesign &design);

struct CovariateDraws {
  Eigen::MatrixXd mu;    // B x L, analysis scale
  Eigen::MatrixXd beta;  // B x p
  std::uint64_t seed = 0;
};

// mu from the partition posterior as in sample_mu (same seed gives the same mu),
// then beta from its conditional given each mu draw.
CovariateDraws sample_mu_beta(const JointPosterior &jp, const StudySet &studies,
                              const CovariateDesign &design, int B, std::uint64_t seed,
                              int threads = 0);

// CSV `study_id,<name1>,...`; rows are matched to the studies by id.
CovariateDesign load_covariates(std::istream &in, const StudySet &studies);

}  // namespace upool

#endif
