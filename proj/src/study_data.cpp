#include "upool/study_data.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

#include "upool/errors.hpp"

namespace upool {

namespace {

struct Count {
  long events;
  long trials;
};

const std::vector<Count> kHe2020 = {{4, 13}, {13, 23}, {18, 83}, {40, 60}, {130, 166}};
const std::vector<Count> kChildren = {{94, 728}, {27, 171}, {61, 115}, {10, 36},
                                      {4, 31},   {8, 16},   {8, 14},   {2, 13},
                                      {2, 10},   {1, 9},    {5, 9}};
const std::vector<int> kChildrenSix = {1, 2, 5, 6, 7, 11};
const std::vector<Count> kScreening = {{1, 2},   {2, 4},   {4, 12}, {5, 30},
                                       {12, 44}, {29, 73}, {41, 138}};

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> split_csv(const std::string &line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

long parse_long(const std::string &field, std::size_t line_no, const char *what) {
  const std::string t = trim(field);
  long v = 0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size())
    fail(ErrorKind::Parse, "line " + std::to_string(line_no) + ": cannot parse " + what +
                               " '" + t + "' as an integer");
  return v;
}

std::string quote_if_needed(const std::string &s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

StudySet from_counts(const std::vector<Count> &counts, const std::vector<int> &ids,
                     const std::string &prefix, EffectScale scale, ContinuityPolicy correction) {
  std::vector<Study> studies;
  for (int id : ids) {
    const Count &c = counts.at(static_cast<std::size_t>(id - 1));
    studies.push_back(Study{id, prefix + " study " + std::to_string(id), c.events, c.trials});
  }
  return make_study_set(std::move(studies), scale, correction);
}

std::vector<int> iota_ids(std::size_t n) {
  std::vector<int> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = static_cast<int>(i + 1);
  return ids;
}

}  // namespace

std::vector<double> StudySet::effects() const {
  std::vector<double> out;
  out.reserve(summaries.size());
  for (const auto &s : summaries) out.push_back(s.effect);
  return out;
}

std::vector<double> StudySet::variances() const {
  std::vector<double> out;
  out.reserve(summaries.size());
  for (const auto &s : summaries) out.push_back(s.variance);
  return out;
}

std::vector<int> StudySet::ids() const {
  std::vector<int> out;
  for (const auto &s : studies) out.push_back(s.id);
  return out;
}

std::size_t StudySet::index_of(int id) const {
  for (std::size_t i = 0; i < studies.size(); ++i)
    if (studies[i].id == id) return i;
  fail(ErrorKind::NotFound, "no study with id " + std::to_string(id));
}

EffectSummary effect_summary(const Study &study, EffectScale scale,
                             ContinuityPolicy correction) {
  if (study.trials < 1 || study.events < 0 || study.events > study.trials)
    fail(ErrorKind::Validation, "study " + std::to_string(study.id) +
                                    ": need 0 <= events <= trials and trials >= 1");
  double y = static_cast<double>(study.events);
  double n = static_cast<double>(study.trials);
  if (scale == EffectScale::Proportion) {
    const double p = y / n;
    return {p, p * (1.0 - p) / n, scale};
  }
  if (study.events == 0 || study.events == study.trials) {
    if (correction == ContinuityPolicy::Reject)
      fail(ErrorKind::BoundaryCount,
           "study " + std::to_string(study.id) +
               ": log-odds undefined for boundary count; use the Haldane correction");
    y += 0.5;
    n += 1.0;
  }
  const double p = y / n;
  return {std::log(p / (1.0 - p)), 1.0 / (n * p * (1.0 - p)), scale};
}

StudySet make_study_set(std::vector<Study> studies, EffectScale scale,
                        ContinuityPolicy correction) {
  if (studies.empty()) fail(ErrorKind::Validation, "a study set needs at least one study");
  std::set<int> seen;
  StudySet set;
  set.scale = scale;
  for (const auto &s : studies) {
    if (!seen.insert(s.id).second)
      fail(ErrorKind::Validation, "duplicate study id " + std::to_string(s.id));
    set.summaries.push_back(effect_summary(s, scale, correction));
  }
  set.studies = std::move(studies);
  return set;
}

StudySet load_studies(std::istream &in, EffectScale scale, ContinuityPolicy correction) {
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  std::vector<Study> studies;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    auto fields = split_csv(line);
    if (!header_seen) {
      if (fields.size() != 4 || trim(fields[0]) != "study_id" || trim(fields[1]) != "label" ||
          trim(fields[2]) != "events" || trim(fields[3]) != "trials")
        fail(ErrorKind::Parse, "line " + std::to_string(line_no) +
                                   ": expected header study_id,label,events,trials");
      header_seen = true;
      continue;
    }
    if (fields.size() != 4)
      fail(ErrorKind::Parse, "line " + std::to_string(line_no) + ": expected 4 fields, got " +
                                 std::to_string(fields.size()));
    Study s;
    s.id = static_cast<int>(parse_long(fields[0], line_no, "study_id"));
    s.label = trim(fields[1]);
    s.events = parse_long(fields[2], line_no, "events");
    s.trials = parse_long(fields[3], line_no, "trials");
    if (s.events < 0 || s.trials < 1 || s.events > s.trials)
      fail(ErrorKind::Validation, "line " + std::to_string(line_no) +
                                      ": need 0 <= events <= trials and trials >= 1");
    studies.push_back(std::move(s));
  }
  if (!header_seen) fail(ErrorKind::Parse, "empty input: missing header");
  return make_study_set(std::move(studies), scale, correction);
}

void write_studies(std::ostream &out, const StudySet &set) {
  out << "study_id,label,events,trials\n";
  for (const auto &s : set.studies)
    out << s.id << ',' << quote_if_needed(s.label) << ',' << s.events << ',' << s.trials << '\n';
}

const std::vector<DatasetInfo> &bundled_datasets() {
  static const std::vector<DatasetInfo> kInfo = {
      {"he2020_five", "five early studies of the asymptomatic rate (He, Yi and Zhu 2020)",
       "He, Yi & Zhu (2020); trial sizes from the primary studies"},
      {"children_eleven", "eleven studies of children (He et al. 2020 meta-analysis)",
       "He et al. (2020)"},
      {"children_six", "subset {1,2,5,6,7,11} of children_eleven",
       "He et al. (2020)"},
      {"screening_seven", "seven screening studies (Buitrago-Garcia et al. 2020)",
       "Buitrago-Garcia et al. (2020)"},
  };
  return kInfo;
}

StudySet bundled_dataset(std::string_view name, EffectScale scale,
                         ContinuityPolicy correction) {
  if (name == "he2020_five")
    return from_counts(kHe2020, iota_ids(kHe2020.size()), "he2020", scale, correction);
  if (name == "children_eleven")
    return from_counts(kChildren, iota_ids(kChildren.size()), "children", scale, correction);
  if (name == "children_six")
    return from_counts(kChildren, kChildrenSix, "children", scale, correction);
  if (name == "screening_seven")
    return from_counts(kScreening, iota_ids(kScreening.size()), "screening", scale, correction);
  std::string names;
  for (const auto &d : bundled_datasets()) names += (names.empty() ? "" : ", ") + d.name;
  fail(ErrorKind::NotFound, "unknown dataset '" + std::string(name) + "'; valid: " + names);
}

std::string_view scale_name(EffectScale scale) {
  return scale == EffectScale::LogOdds ? "logit" : "proportion";
}

EffectScale parse_scale(std::string_view text) {
  if (text == "logit" || text == "logodds" || text == "log-odds") return EffectScale::LogOdds;
  if (text == "proportion" || text == "prop") return EffectScale::Proportion;
  fail(ErrorKind::Validation, "unknown scale '" + std::string(text) + "' (logit|proportion)");
}

}  // namespace upool
