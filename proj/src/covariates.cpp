#include "upool/covariates.hpp"

#include <charconv>
#include <istream>
#include <map>

#include "upool/errors.hpp"
#include "upool/parallel.hpp"
#include "upool/random.hpp"

namespace upool {

namespace {

constexpr int kBetaBlock = 1000;
// beta substreams sit above every stream sample_mu can use
constexpr std::uint64_t kBetaStreamBase = std::uint64_t{1} << 40;

std::string trim(const std::string &s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t") - b + 1);
}

std::vector<std::string> split(const std::string &line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma - start)));
    if (comma == std::string::npos) return out;
    start = comma + 1;
  }
}

template <class T>
T parse_number(const std::string &field, std::size_t line_no, const std::string &what) {
  T v{};
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (field.empty() || ec != std::errc() || ptr != field.data() + field.size())
    fail(ErrorKind::Parse, "line " + std::to_string(line_no) + ": cannot parse " + what + " '" +
                               field + "'");
  return v;
}

}  // namespace

void CovariateDesign::validate(int L) const {
  const auto p = X.cols();
  if (p < 1) fail(ErrorKind::SingularDesign, "design needs at least one column");
  if (X.rows() != L) fail(ErrorKind::Validation, "design has one row per study");
  if (L <= p) fail(ErrorKind::SingularDesign, "design needs more studies than columns");
  if (!X.allFinite()) fail(ErrorKind::Validation, "design entries must be finite");
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  if (qr.rank() < p) fail(ErrorKind::SingularDesign, "design matrix is rank deficient");
}

BetaConditional beta_conditional(std::span<const double> mu, std::span<const double> effects,
                                 std::span<const double> variances, const CovariateDesign &design) {
  const int L = static_cast<int>(effects.size());
  design.validate(L);
  if (mu.size() != effects.size()) fail(ErrorKind::Validation, "mu has one entry per study");
  Eigen::VectorXd w(L), z(L);
  for (int i = 0; i < L; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    w(i) = 1.0 / variances[ui];
    z(i) = effects[ui] - mu[ui];
  }
  BetaConditional out;
  out.precision = design.X.transpose() * w.asDiagonal() * design.X;
  Eigen::LLT<Eigen::MatrixXd> llt(out.precision);
  if (llt.info() != Eigen::Success) fail(ErrorKind::SingularDesign, "X'VX is not positive definite");
  out.mean = llt.solve(design.X.transpose() * w.cwiseProduct(z));
  return out;
}

BetaConditional beta_conditional(std::span<const double> mu, const StudySet &studies,
                                 const CovariateDesign &design) {
  const auto y = studies.effects();
  const auto v = studies.variances();
  return beta_conditional(mu, y, v, design);
}

CovariateDraws sample_mu_beta(const JointPosterior &jp, const StudySet &studies,
                              const CovariateDesign &design, int B, std::uint64_t seed, int threads) {
  if (studies.ids() != jp.ids) fail(ErrorKind::Validation, "posterior was computed on other studies");
  design.validate(jp.L);
  const PosteriorDraws mu = sample_mu(jp, B, seed, threads);
  const auto p = design.X.cols();

  // A does not depend on mu, so one factorisation serves every draw.
  Eigen::VectorXd w(jp.L);
  for (int i = 0; i < jp.L; ++i) w(i) = 1.0 / jp.variances[static_cast<std::size_t>(i)];
  const Eigen::MatrixXd XtV = design.X.transpose() * w.asDiagonal();
  Eigen::LLT<Eigen::MatrixXd> llt(XtV * design.X);
  if (llt.info() != Eigen::Success) fail(ErrorKind::SingularDesign, "X'VX is not positive definite");
  const Eigen::MatrixXd U = llt.matrixU();
  const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(jp.effects.data(), jp.L);

  CovariateDraws out;
  out.seed = seed;
  out.mu = mu.draws;
  out.beta.resize(B, p);
  const auto blocks = static_cast<std::size_t>((B + kBetaBlock - 1) / kBetaBlock);
  parallel_tasks(blocks, threads, [&](std::size_t blk) {
    Rng rng = substream(seed, kBetaStreamBase + blk);
    const int begin = static_cast<int>(blk) * kBetaBlock;
    const int end = std::min(B, begin + kBetaBlock);
    Eigen::VectorXd z(p);
    for (int b = begin; b < end; ++b) {
      const Eigen::VectorXd mean = llt.solve(XtV * (y - out.mu.row(b).transpose()));
      for (Eigen::Index k = 0; k < p; ++k) z(k) = std_normal(rng);
      // U'U = A, so U^-1 z has covariance A^-1
      out.beta.row(b) = (mean + U.triangularView<Eigen::Upper>().solve(z)).transpose();
    }
  });
  return out;
}

CovariateDesign load_covariates(std::istream &in, const StudySet &studies) {
  std::string line;
  std::size_t line_no = 0;
  CovariateDesign design;
  std::map<int, std::vector<double>> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    auto fields = split(line);
    if (design.names.empty()) {
      if (fields.size() < 2 || fields[0] != "study_id")
        fail(ErrorKind::Parse, "line " + std::to_string(line_no) +
                                   ": expected header study_id,<name>,...");
      design.names.assign(fields.begin() + 1, fields.end());
      continue;
    }
    if (fields.size() != design.names.size() + 1)
      fail(ErrorKind::Parse, "line " + std::to_string(line_no) + ": expected " +
                                 std::to_string(design.names.size() + 1) + " fields, got " +
                                 std::to_string(fields.size()));
    const int id = parse_number<int>(fields[0], line_no, "study_id");
    std::vector<double> row;
    for (std::size_t k = 1; k < fields.size(); ++k)
      row.push_back(parse_number<double>(fields[k], line_no, design.names[k - 1]));
    if (!rows.emplace(id, std::move(row)).second)
      fail(ErrorKind::Validation, "duplicate covariate row for study " + std::to_string(id));
  }
  if (design.names.empty()) fail(ErrorKind::Parse, "empty input: missing header");

  const int L = static_cast<int>(studies.size());
  design.X.resize(L, static_cast<Eigen::Index>(design.names.size()));
  for (int i = 0; i < L; ++i) {
    const int id = studies.studies[static_cast<std::size_t>(i)].id;
    auto it = rows.find(id);
    if (it == rows.end()) fail(ErrorKind::Validation, "no covariate row for study " + std::to_string(id));
    for (std::size_t k = 0; k < it->second.size(); ++k) design.X(i, static_cast<Eigen::Index>(k)) = it->second[k];
    rows.erase(it);
  }
  if (!rows.empty())
    fail(ErrorKind::Validation, "covariate row for unknown study " + std::to_string(rows.begin()->first));
  design.validate(L);
  return design;
}

}  // namespace upool
