#include "upool/report.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

namespace upool::report {

namespace {

std::string csv_field(const std::string &s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

Json matrix(const Eigen::MatrixXd &m) {
  Json rows = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Json partition_rows(const std::vector<PartitionProbability> &rows, const std::vector<int> &ids,
                    std::size_t top) {
  Json out = Json::array();
  for (std::size_t k = 0; k < rows.size() && k < top; ++k)
    out.push_back({{"partition", rows[k].partition.to_string(ids)},
                   {"blocks", rows[k].partition.num_blocks()},
                   {"probability", rows[k].probability}});
  return out;
}

}  // namespace

std::string_view tool_version() { return UPOOL_VERSION; }

std::string number(double x) {
  if (!std::isfinite(x)) return std::isnan(x) ? "nan" : (x > 0 ? "inf" : "-inf");
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

Json header(std::string_view command) {
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["tool"] = {{"name", "upool"}, {"version", tool_version()}};
  j["command"] = command;
  return j;
}

Json studies(const StudySet &set) {
  Json out = Json::array();
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto &s = set.studies[i];
    out.push_back({{"id", s.id},
                   {"label", s.label},
                   {"events", s.events},
                   {"trials", s.trials},
                   {"effect", set.summaries[i].effect},
                   {"variance", set.summaries[i].variance}});
  }
  return out;
}

Json summaries(const std::vector<StudySummary> &rows) {
  Json out = Json::array();
  for (const auto &r : rows)
    out.push_back({{"id", r.id}, {"mean", r.mean}, {"lower", r.lower}, {"upper", r.upper}});
  return out;
}

Json similarity(const SimilarityMatrix &sm) {
  return {{"source", source_name(sm.source)}, {"ids", sm.ids}, {"values", matrix(sm.values)}};
}

Json joint_posterior(const JointPosterior &jp, std::size_t top) {
  Json j;
  j["log_normalizer"] = jp.log_normalizer;
  j["retained_cells"] = jp.cells.size();
  j["retained_mass"] = jp.retained_mass;
  j["dropped_mass"] = jp.dropped_mass;
  j["pool_all_probability"] = jp.pool_all_probability();
  j["top_partitions"] = partition_rows(jp.top_partitions(top), jp.ids, top);
  Json grid = Json::array();
  for (std::size_t k = 0; k < jp.grid.size(); ++k)
    grid.push_back({{"delta2", jp.grid.values[k]}, {"probability", jp.delta2_marginal[k]}});
  j["delta2_marginal"] = std::move(grid);
  return j;
}

Json ppc(const PpcResult &r) {
  return {{"p_value", r.p_value},
          {"display", r.display()},
          {"upper_bound", r.is_upper_bound()},
          {"exceedances", r.exceedances},
          {"replicates", r.replicates},
          {"observed_mean", r.observed_mean},
          {"observed_median", r.observed_median}};
}

Json dpm(const DpmSummary &s) {
  return {{"M", s.M},
          {"mean_clusters", s.mean_clusters},
          {"single_cluster_fraction", s.single_cluster_fraction},
          {"summaries", summaries(s.studies)},
          {"similarity", similarity(s.similarity)}};
}

Json rjmcmc(const RjSummary &s, std::size_t top) {
  return {{"kept", s.kept},
          {"mean_q", s.mean_q},
          {"acceptance",
           {{"alpha", s.alpha_acceptance},
            {"q", s.q_acceptance},
            {"split", s.split_acceptance},
            {"merge", s.merge_acceptance}}},
          {"tuned_steps", {{"alpha", s.alpha_step}, {"q", s.q_step}}},
          {"summaries", summaries(s.studies)},
          {"top_partitions", partition_rows(s.partition_frequencies, s.similarity.ids, top)},
          {"similarity", similarity(s.similarity)}};
}

Json covariates(const CovariateDesign &design, const CovariateDraws &draws, double level) {
  Json out = Json::array();
  for (Eigen::Index k = 0; k < draws.beta.cols(); ++k) {
    std::vector<double> col(draws.beta.col(k).data(), draws.beta.col(k).data() + draws.beta.rows());
    const auto s = summarize_sample(std::move(col), level);
    out.push_back({{"name", design.names[static_cast<std::size_t>(k)]},
                   {"mean", s.mean},
                   {"lower", s.lower},
                   {"upper", s.upper}});
  }
  return out;
}

std::string summary_csv(const StudySet &set, const std::vector<StudySummary> &rows) {
  std::ostringstream out;
  out << "study_id,label,mean,lower,upper\n";
  for (const auto &r : rows)
    out << r.id << ',' << csv_field(set.studies[set.index_of(r.id)].label) << ',' << number(r.mean)
        << ',' << number(r.lower) << ',' << number(r.upper) << '\n';
  return out.str();
}

std::string dpm_summary_csv(const StudySet &set, const std::vector<DpmSummary> &fits) {
  std::ostringstream out;
  out << "M,study_id,label,mean,lower,upper\n";
  for (const auto &f : fits)
    for (const auto &r : f.studies)
      out << number(f.M) << ',' << r.id << ',' << csv_field(set.studies[set.index_of(r.id)].label)
          << ',' << number(r.mean) << ',' << number(r.lower) << ',' << number(r.upper) << '\n';
  return out.str();
}

std::string rj_chain_csv(const StudySet &set, const RjSummary &s) {
  std::ostringstream out;
  out << "iteration,q,blocks";
  for (int id : set.ids()) out << ",theta_" << id;
  out << '\n';
  for (Eigen::Index r = 0; r < s.theta_chain.rows(); ++r) {
    const auto ur = static_cast<std::size_t>(r);
    out << r << ',' << number(s.q_chain[ur]) << ',' << s.blocks_chain[ur];
    for (Eigen::Index c = 0; c < s.theta_chain.cols(); ++c) out << ',' << number(s.theta_chain(r, c));
    out << '\n';
  }
  return out.str();
}

}  // namespace upool::report
