#ifndef UPOOL_REPORT_HPP
#define UPOOL_REPORT_HPP

#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "upool/covariates.hpp"
#include "upool/diagnostics.hpp"
#include "upool/dpm.hpp"
#include "upool/pooling.hpp"
#include "upool/rjmcmc.hpp"

namespace upool::report {

// Insertion-ordered so identical inputs serialise to identical bytes.
using Json = nlohmann::ordered_json;

constexpr int kSchemaVersion = 1;

std::string_view tool_version();

Json header(std::string_view command);
Json studies(const StudySet &set);
Json summaries(const std::vector<StudySummary> &rows);
Json similarity(const SimilarityMatrix &sm);
Json joint_posterior(const JointPosterior &jp, std::size_t top);
Json ppc(const PpcResult &r);
Json dpm(const DpmSummary &s);
Json rjmcmc(const RjSummary &s, std::size_t top);
Json covariates(const CovariateDesign &design, const CovariateDraws &draws, double level);

// `study_id,label,mean,lower,upper`, with optional leading key columns.
std::string summary_csv(const StudySet &set, const std::vector<StudySummary> &rows);
std::string dpm_summary_csv(const StudySet &set, const std::vector<DpmSummary> &fits);
// iteration,q,blocks,theta_<id>...
std::string rj_chain_csv(const StudySet &set, const RjSummary &s);

// Fixed-precision text for doubles that must not vary with the platform's
// shortest-round-trip printer.
std::string number(double x);

}  // namespace upool::report

#endif
