#include "upool/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>

#include "upool/errors.hpp"
#include "upool/parallel.hpp"
#include "upool/random.hpp"

namespace upool {

namespace {

constexpr std::uint64_t kReplicateBlock = 1000;

const char *const kBinColours[] = {"#f7fbff", "#c6dbef", "#6baed6", "#2171b5", "#08306b"};
const char *const kBinLabels[] = {"[0, 0.2)", "[0.2, 0.4)", "[0.4, 0.6)", "[0.6, 0.8)",
                                  "[0.8, 1]"};

std::size_t draw_index(Rng &rng, const std::vector<double> &cumulative) {
  const double u = uniform01(rng) * cumulative.back();
  const auto pos = std::upper_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin();
  return std::min(static_cast<std::size_t>(pos), cumulative.size() - 1);
}

std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace

std::string_view source_name(SimilaritySource source) {
  switch (source) {
    case SimilaritySource::GridPosterior: return "grid_posterior";
    case SimilaritySource::RjChain: return "rj_chain";
    case SimilaritySource::DpmChain: return "dpm_chain";
  }
  return "unknown";
}

SimilarityMatrix similarity_from_grid(const JointPosterior &jp) {
  return {jp.similarity, jp.ids, SimilaritySource::GridPosterior};
}

CoClusteringCounter::CoClusteringCounter(int L)
    : L_(L), together_(static_cast<std::size_t>(L) * static_cast<std::size_t>(L), 0) {}

void CoClusteringCounter::add(const std::vector<int> &labels) {
  for (int i = 0; i < L_; ++i)
    for (int j = i + 1; j < L_; ++j)
      if (labels[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(j)])
        ++together_[static_cast<std::size_t>(i * L_ + j)];
  ++count_;
}

SimilarityMatrix CoClusteringCounter::finish(std::vector<int> ids, SimilaritySource source) const {
  if (count_ == 0) fail(ErrorKind::Domain, "no states to summarise");
  SimilarityMatrix sm;
  sm.values = Eigen::MatrixXd::Identity(L_, L_);
  for (int i = 0; i < L_; ++i)
    for (int j = i + 1; j < L_; ++j) {
      const double p = static_cast<double>(together_[static_cast<std::size_t>(i * L_ + j)]) /
                       static_cast<double>(count_);
      sm.values(i, j) = sm.values(j, i) = p;
    }
  sm.ids = std::move(ids);
  sm.source = source;
  return sm;
}

double partition_class_probability(const JointPosterior &jp,
                                   const std::function<bool(const Partition &)> &predicate) {
  double total = 0.0;
  PartitionEnumerator it(jp.L);
  for (std::size_t r = 0; r < jp.partition_marginal.size(); ++r, it.next())
    if (predicate(it.current())) total += jp.partition_marginal[r];
  return total;
}

std::string PpcResult::display() const {
  char buf[64];
  if (is_upper_bound())
    std::snprintf(buf, sizeof buf, "< %.3g", 1.0 / static_cast<double>(replicates));
  else
    std::snprintf(buf, sizeof buf, "%.4g", p_value);
  return buf;
}

PpcResult posterior_predictive_pvalue(const JointPosterior &jp, std::uint64_t replicates,
                                      std::uint64_t seed, int threads, PpcDelta2 mode) {
  if (replicates < 1000) fail(ErrorKind::Domain, "at least 1000 replicates are required");
  const std::vector<double> &weights =
      mode == PpcDelta2::Marginal ? jp.delta2_marginal : jp.pool_all_delta2;
  const std::size_t D = jp.grid.size();
  const std::size_t L = jp.effects.size();

  std::vector<double> cumulative(D), centre(D), spread(D);
  double acc = 0.0;
  for (std::size_t d = 0; d < D; ++d) {
    const double d2 = jp.grid.values[d];
    const auto lam = lambda_weights(d2, jp.variances);
    double s = 0.0, sy = 0.0;
    for (std::size_t i = 0; i < L; ++i) {
      s += lam[i];
      sy += lam[i] * jp.effects[i];
    }
    centre[d] = sy / s;
    spread[d] = std::sqrt(d2 / s);
    acc += weights[d];
    cumulative[d] = acc;
  }

  const std::size_t blocks = static_cast<std::size_t>((replicates + kReplicateBlock - 1) / kReplicateBlock);
  std::vector<std::uint64_t> hits(blocks, 0);
  std::vector<double> observed(replicates);
  parallel_tasks(blocks, threads, [&](std::size_t blk) {
    Rng rng = substream(seed, blk);
    const std::uint64_t begin = blk * kReplicateBlock;
    const std::uint64_t end = std::min(replicates, begin + kReplicateBlock);
    for (std::uint64_t r = begin; r < end; ++r) {
      const std::size_t d = draw_index(rng, cumulative);
      const double d2 = jp.grid.values[d];
      const double nu = centre[d] + spread[d] * std_normal(rng);
      double t_obs = 0.0;
      for (std::size_t i = 0; i < L; ++i) {
        const double e = jp.effects[i] - nu;
        t_obs += e * e / (jp.variances[i] + d2);
      }
      // each standardised replicate residual is a standard normal
      double t_rep = 0.0;
      for (std::size_t i = 0; i < L; ++i) {
        const double z = std_normal(rng);
        t_rep += z * z;
      }
      observed[r] = t_obs;
      if (t_rep >= t_obs) ++hits[blk];
    }
  });

  PpcResult out;
  out.replicates = replicates;
  for (auto h : hits) out.exceedances += h;
  out.p_value = static_cast<double>(out.exceedances) / static_cast<double>(replicates);
  double sum = 0.0;
  for (double t : observed) sum += t;
  out.observed_mean = sum / static_cast<double>(replicates);
  const auto mid = observed.begin() + static_cast<std::ptrdiff_t>(replicates / 2);
  std::nth_element(observed.begin(), mid, observed.end());
  out.observed_median = *mid;
  return out;
}

RenderFormat parse_render_format(std::string_view text) {
  if (text == "csv") return RenderFormat::Csv;
  if (text == "svg") return RenderFormat::Svg;
  fail(ErrorKind::Domain, "unsupported similarity format '" + std::string(text) + "'");
}

int similarity_bin(double p) { return std::clamp(static_cast<int>(std::floor(p * 5.0)), 0, 4); }

void render_similarity(std::ostream &out, const SimilarityMatrix &sm, RenderFormat format) {
  const auto L = static_cast<int>(sm.values.rows());
  auto id = [&](int i) {
    return sm.ids.empty() ? i + 1 : sm.ids[static_cast<std::size_t>(i)];
  };
  if (format == RenderFormat::Csv) {
    out << "study_id";
    for (int j = 0; j < L; ++j) out << ',' << id(j);
    out << '\n';
    for (int i = 0; i < L; ++i) {
      out << id(i);
      for (int j = 0; j < L; ++j) out << ',' << format_double(sm.values(i, j));
      out << '\n';
    }
    return;
  }

  const int cell = 28, margin = 40, legend_w = 130;
  const int side = L * cell;
  const int width = margin + side + 20 + legend_w;
  const int height = std::max(margin + side + 10, margin + 5 * 20 + 30);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  out << "<title>co-clustering probabilities (" << source_name(sm.source) << ")</title>\n";
  for (int i = 0; i < L; ++i) {
    const int pos = margin + i * cell + cell / 2;
    out << "<text x=\"" << pos << "\" y=\"" << margin - 8 << "\" text-anchor=\"middle\">" << id(i)
        << "</text>\n";
    out << "<text x=\"" << margin - 8 << "\" y=\"" << pos + 4 << "\" text-anchor=\"end\">" << id(i)
        << "</text>\n";
  }
  for (int i = 0; i < L; ++i)
    for (int j = 0; j < L; ++j) {
      const double p = sm.values(i, j);
      out << "<rect x=\"" << margin + j * cell << "\" y=\"" << margin + i * cell << "\" width=\""
          << cell << "\" height=\"" << cell << "\" fill=\"" << kBinColours[similarity_bin(p)]
          << "\" stroke=\"#999\" stroke-width=\"0.5\" data-p=\"" << format_double(p)
          << "\" data-bin=\"" << similarity_bin(p) << "\"/>\n";
    }
  const int lx = margin + side + 20;
  for (int b = 0; b < 5; ++b) {
    const int ly = margin + b * 20;
    out << "<rect x=\"" << lx << "\" y=\"" << ly << "\" width=\"14\" height=\"14\" fill=\""
        << kBinColours[b] << "\" stroke=\"#999\" stroke-width=\"0.5\"/>\n";
    out << "<text x=\"" << lx + 20 << "\" y=\"" << ly + 11 << "\">" << kBinLabels[b] << "</text>\n";
  }
  out << "</svg>\n";
}

SimilarityMatrix read_similarity_csv(std::istream &in) {
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::Parse, "empty similarity CSV");
  SimilarityMatrix sm;
  {
    std::stringstream ss(line);
    std::string cellv;
    std::getline(ss, cellv, ',');
    while (std::getline(ss, cellv, ',')) sm.ids.push_back(std::stoi(cellv));
  }
  const auto L = static_cast<Eigen::Index>(sm.ids.size());
  sm.values.resize(L, L);
  for (Eigen::Index i = 0; i < L; ++i) {
    if (!std::getline(in, line)) fail(ErrorKind::Parse, "similarity CSV is truncated");
    std::stringstream ss(line);
    std::string cellv;
    std::getline(ss, cellv, ',');
    for (Eigen::Index j = 0; j < L; ++j) {
      if (!std::getline(ss, cellv, ',')) fail(ErrorKind::Parse, "similarity CSV row is short");
      sm.values(i, j) = std::stod(cellv);
    }
  }
  return sm;
}

}  // namespace upool
