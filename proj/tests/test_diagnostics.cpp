#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <string>

#include "doctest.h"
#include "support.hpp"
#include "upool/diagnostics.hpp"
#include "upool/errors.hpp"

using namespace upool;
using upool::test::all_labelings;
using upool::test::custom_grid;
using upool::test::make_set;
using upool::test::oracle_log_weight;

namespace {

void check_similarity_invariants(const SimilarityMatrix &sm) {
  const auto L = sm.values.rows();
  for (Eigen::Index i = 0; i < L; ++i) {
    CHECK(sm.values(i, i) == 1.0);
    for (Eigen::Index j = 0; j < L; ++j) {
      CHECK(sm.values(i, j) == sm.values(j, i));
      CHECK(sm.values(i, j) >= 0.0);
      CHECK(sm.values(i, j) <= 1.0);
    }
  }
}

}  // namespace

TEST_CASE("similarity on the grid posterior") {
  const auto jp = compute_joint_posterior(bundled_dataset("he2020_five"), GridSpec{}, VariancePrior{});
  check_similarity_invariants(similarity_from_grid(jp));
}

TEST_CASE("L = 2: the off-diagonal similarity is the pool-all probability") {
  const auto jp = compute_joint_posterior(make_set({0.1, 0.9}, {0.2, 0.3}),
                                          custom_grid({0.01, 0.1, 1.0}, {0.0, 0.0, 0.0}, 1.0));
  const auto sm = similarity_from_grid(jp);
  CHECK(sm.values(0, 1) == doctest::Approx(jp.pool_all_probability()).epsilon(1e-13));
}

TEST_CASE("L = 4: similarity matches a direct sum over all 15 partitions") {
  const std::vector<double> y{-0.6, 0.2, 0.25, 1.4}, v{0.1, 0.25, 0.4, 0.2};
  const std::vector<double> d2s{0.02, 0.2, 0.9, 3.0};
  const std::vector<double> lp{0.0, -0.5, -1.0, -2.0};
  const auto jp = compute_joint_posterior(make_set(y, v), custom_grid(d2s, lp, 1.0));
  const auto parts = all_labelings(4);
  REQUIRE(parts.size() == 15);
  std::vector<double> lw;
  for (const auto &labels : parts)
    for (std::size_t d = 0; d < d2s.size(); ++d)
      lw.push_back(oracle_log_weight(labels, d2s[d], y, v, lp[d], std::log(1.0 / 15)));
  const double mx = *std::max_element(lw.begin(), lw.end());
  double z = 0.0;
  for (double x : lw) z += std::exp(x - mx);
  Eigen::MatrixXd expected = Eigen::MatrixXd::Zero(4, 4);
  std::size_t k = 0;
  for (const auto &labels : parts)
    for (std::size_t d = 0; d < d2s.size(); ++d, ++k) {
      const double w = std::exp(lw[k] - mx) / z;
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j)
          if (labels[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(j)]) expected(i, j) += w;
    }
  const auto sm = similarity_from_grid(jp);
  CHECK((sm.values - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("children_six: within-cluster pairs dominate cross pairs") {
  const auto jp = compute_joint_posterior(bundled_dataset("children_six"), GridSpec{}, VariancePrior{});
  const auto sm = similarity_from_grid(jp);
  // positions 0,1,2 are ids 1,2,5 and 3,4,5 are ids 6,7,11
  double min_within = 1.0, max_cross = 0.0;
  for (int i = 0; i < 6; ++i)
    for (int j = i + 1; j < 6; ++j) {
      if ((i < 3) == (j < 3))
        min_within = std::min(min_within, sm.values(i, j));
      else
        max_cross = std::max(max_cross, sm.values(i, j));
    }
  CHECK(min_within > max_cross);
}

TEST_CASE("partition class probabilities") {
  const auto jp = compute_joint_posterior(bundled_dataset("he2020_five"), GridSpec{}, VariancePrior{});
  CHECK(partition_class_probability(jp, [](const Partition &) { return true; }) ==
        doctest::Approx(1.0).epsilon(1e-12));
  double total = 0.0;
  for (int d = 1; d <= 5; ++d)
    total += partition_class_probability(jp, [d](const Partition &g) { return g.num_blocks() == d; });
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  const double dominant =
      partition_class_probability(jp, [](const Partition &g) { return dominant_block_predicate(g, 4); });
  const double pool = jp.pool_all_probability();
  const double four_one = partition_class_probability(jp, [](const Partition &g) {
    return g.num_blocks() == 2 && dominant_block_predicate(g, 4);
  });
  CHECK(dominant == doctest::Approx(pool + four_one).epsilon(1e-12));
}

TEST_CASE("co-clustering counter") {
  CoClusteringCounter counter(3);
  counter.add({0, 0, 1});
  counter.add({0, 1, 1});
  counter.add({0, 0, 0});
  counter.add({0, 1, 2});
  const auto sm = counter.finish({4, 5, 6}, SimilaritySource::DpmChain);
  check_similarity_invariants(sm);
  CHECK(sm.values(0, 1) == 0.5);
  CHECK(sm.values(1, 2) == 0.5);
  CHECK(sm.values(0, 2) == 0.25);
  CHECK_THROWS_AS(CoClusteringCounter(2).finish({1, 2}, SimilaritySource::RjChain), Error);
}

TEST_CASE("posterior predictive p-value basics") {
  const auto jp = compute_joint_posterior(bundled_dataset("screening_seven"), GridSpec{}, VariancePrior{});
  const auto a = posterior_predictive_pvalue(jp, 4000, 7, 1);
  const auto b = posterior_predictive_pvalue(jp, 4000, 7, 3);
  CHECK(a.exceedances == b.exceedances);
  CHECK(a.replicates == 4000);
  CHECK(a.p_value == static_cast<double>(a.exceedances) / 4000.0);
  CHECK(a.observed_median > 0.0);
  CHECK_THROWS_AS(posterior_predictive_pvalue(jp, 999, 7), Error);

  PpcResult zero;
  zero.replicates = 20000;
  CHECK(zero.is_upper_bound());
  CHECK(zero.display() == "< 5e-05");
}

TEST_CASE("p-value is invariant to study reordering") {
  const auto set = bundled_dataset("children_six");
  auto rev = set;
  std::reverse(rev.studies.begin(), rev.studies.end());
  std::reverse(rev.summaries.begin(), rev.summaries.end());
  const auto grid = DeltaGrid::make(GridSpec{}, VariancePrior{});
  for (auto mode : {PpcDelta2::Marginal, PpcDelta2::PoolAll}) {
    const auto a = posterior_predictive_pvalue(compute_joint_posterior(set, grid), 5000, 3, 0, mode);
    const auto b = posterior_predictive_pvalue(compute_joint_posterior(rev, grid), 5000, 3, 0, mode);
    CHECK(a.exceedances == b.exceedances);
  }
}

TEST_CASE("p-values are roughly uniform for data simulated from the pool-all model") {
  // The grid masses must discretise the prior for the pool-all model to be a
  // proper Bayesian model, hence the log-spacing Jacobian.
  GridSpec spec;
  spec.log_jacobian = true;
  const auto grid = DeltaGrid::make(spec, VariancePrior{});
  std::mt19937_64 gen(2024);
  std::uniform_real_distribution<double> var(0.05, 0.3);
  std::normal_distribution<double> z(0.0, 1.0);
  for (double delta2 : {0.01, 0.1, 0.5, 2.0}) {
    double sum = 0.0;
    const int sims = 50;
    for (int s = 0; s < sims; ++s) {
      std::vector<double> y(5), v(5);
      for (int i = 0; i < 5; ++i) {
        v[static_cast<std::size_t>(i)] = var(gen);
        y[static_cast<std::size_t>(i)] = -0.5 + std::sqrt(delta2 + v[static_cast<std::size_t>(i)]) * z(gen);
      }
      const auto jp = compute_joint_posterior(make_set(y, v), grid);
      sum += posterior_predictive_pvalue(jp, 1000, static_cast<std::uint64_t>(s)).p_value;
    }
    const double mean = sum / sims;
    CHECK(mean > 0.3);
    CHECK(mean < 0.7);
  }
}

TEST_CASE("similarity rendering") {
  CHECK(similarity_bin(0.0) == 0);
  CHECK(similarity_bin(0.2) == 1);
  CHECK(similarity_bin(0.79) == 3);
  CHECK(similarity_bin(0.8) == 4);
  CHECK(similarity_bin(1.0) == 4);
  CHECK(parse_render_format("svg") == RenderFormat::Svg);
  CHECK_THROWS_AS(parse_render_format("png"), Error);

  const auto jp = compute_joint_posterior(bundled_dataset("children_six"), GridSpec{}, VariancePrior{});
  const auto sm = similarity_from_grid(jp);
  std::stringstream csv;
  render_similarity(csv, sm, RenderFormat::Csv);
  const auto back = read_similarity_csv(csv);
  CHECK(back.ids == sm.ids);
  CHECK(back.values == sm.values);

  std::ostringstream svg;
  render_similarity(svg, sm, RenderFormat::Svg);
  const std::string text = svg.str();
  std::size_t rects = 0;
  for (std::size_t p = text.find("<rect"); p != std::string::npos; p = text.find("<rect", p + 1)) ++rects;
  CHECK(rects == 36 + 5);
  CHECK(text.find(">11</text>") != std::string::npos);

  SimilarityMatrix one{Eigen::MatrixXd::Ones(1, 1), {7}, SimilaritySource::RjChain};
  std::ostringstream unit;
  render_similarity(unit, one, RenderFormat::Svg);
  rects = 0;
  const std::string u = unit.str();
  for (std::size_t p = u.find("<rect"); p != std::string::npos; p = u.find("<rect", p + 1)) ++rects;
  CHECK(rects == 1 + 5);
  CHECK(u.find("data-bin=\"4\"") != std::string::npos);
}
