#ifndef UPOOL_STUDY_DATA_HPP
#define UPOOL_STUDY_DATA_HPP

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace upool {

struct Study {
  int id = 0;
  std::string label;
  long events = 0;
  long trials = 1;
};

enum class EffectScale { Proportion, LogOdds };

// Boundary handling for log-odds effects when events is 0 or trials.
enum class ContinuityPolicy { Reject, Haldane };

struct EffectSummary {
  double effect = 0.0;
  double variance = 0.0;  // plug-in sigma_i^2 / n_i
  EffectScale scale = EffectScale::Proportion;
};

struct StudySet {
  std::vector<Study> studies;
  EffectScale scale = EffectScale::LogOdds;
  std::vector<EffectSummary> summaries;

  std::size_t size() const { return studies.size(); }
  std::vector<double> effects() const;
  std::vector<double> variances() const;
  std::vector<int> ids() const;
  // Position of the study with the given id; throws NotFound.
  std::size_t index_of(int id) const;
};

EffectSummary effect_summary(const Study &study, EffectScale scale,
                             ContinuityPolicy correction = ContinuityPolicy::Reject);

StudySet make_study_set(std::vector<Study> studies, EffectScale scale,
                        ContinuityPolicy correction = ContinuityPolicy::Reject);

// CSV with header `study_id,label,events,trials`.
StudySet load_studies(std::istream &in, EffectScale scale,
                      ContinuityPolicy correction = ContinuityPolicy::Reject);
void write_studies(std::ostream &out, const StudySet &set);

struct DatasetInfo {
  std::string name;
  std::string description;
  std::string citation;
};

const std::vector<DatasetInfo> &bundled_datasets();
StudySet bundled_dataset(std::string_view name,
                         EffectScale scale = EffectScale::LogOdds,
                         ContinuityPolicy correction = ContinuityPolicy::Reject);

std::string_view scale_name(EffectScale scale);
EffectScale parse_scale(std::string_view text);

}  // namespace upool

#endif
