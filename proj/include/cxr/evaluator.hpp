// evaluator.hpp
//
// Ranking and threshold metrics, operating-point selection and the
// detection lead-time analysis against RT-PCR confirmation dates.
#ifndef CXR_EVALUATOR_HPP
#define CXR_EVALUATOR_HPP

#include "cxr/data.hpp"

#include "json.hpp"

#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cxr {

class MetricError : public std::runtime_error {
 public:
  MetricError(std::string code, const std::string& what)
      : std::runtime_error(what), code_(std::move(code)) {}
  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

/// P(score+ > score-) + 1/2 P(tie), computed exactly from tie-averaged ranks.
/// Throws MetricError("undefined_auc") unless both classes are present.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::size_t total() const { return tp + fp + tn + fn; }
};

struct EvalReport {
  std::optional<double> auc;
  double sensitivity = 0.0;  // TP / (TP + FN), 0 when there are no positives
  double specificity = 0.0;  // TN / (TN + FP), 0 when there are no negatives
  double threshold = 0.5;
  Confusion confusion;
  std::size_t n = 0;
};

/// A score counts as positive when score >= threshold.
EvalReport sens_spec(std::span<const double> scores, std::span<const int> labels,
                     double threshold);

/// sens_spec plus AUC (left empty when only one class is present).
EvalReport evaluate(std::span<const double> scores, std::span<const int> labels, double threshold);

/// Threshold maximising sensitivity + specificity - 1 over the midpoints of
/// the sorted unique scores; the lowest threshold wins ties. With a single
/// unique score that score is returned.
double youden_threshold(std::span<const double> scores, std::span<const int> labels);

struct Capture {
  Date date;
  bool positive = false;
};

struct CaseTimeline {
  std::string case_id;
  std::optional<Date> symptom_onset_date;
  std::optional<Date> rtpcr_confirm_date;
  std::vector<Capture> captures;  // kept sorted by date

  void sort_captures();
};

/// Days from the earliest positive capture to RT-PCR confirmation. Negative
/// values mean the model flagged the case after confirmation.
std::optional<int> lead_time(const CaseTimeline& timeline);

struct LeadRow {
  std::string case_id;
  std::optional<Date> symptom_onset_date;
  std::optional<Date> rtpcr_confirm_date;
  std::optional<Date> detected_date;
  std::optional<int> lead_days;
};

struct CohortLeadReport {
  std::size_t cases = 0;
  std::size_t defined = 0;
  std::size_t at_least_2_days = 0;
  std::size_t at_least_5_days = 0;
  std::vector<LeadRow> rows;  // sorted by case id
};

CohortLeadReport cohort_lead_report(std::vector<CaseTimeline> cases);

std::string lead_report_csv(const CohortLeadReport& report);
nlohmann::json to_json(const CohortLeadReport& report);
nlohmann::json to_json(const EvalReport& report);

/// One row of a Table-3-style grid.
struct GridRow {
  std::string split;
  std::string stage;
  std::string arm;  // e.g. "with_mask", "without_mask", "fixed", "youden"
  EvalReport report;
};

std::string grid_csv(const std::vector<GridRow>& rows);
nlohmann::json to_json(const std::vector<GridRow>& rows);

}  // namespace cxr

#endif  // CXR_EVALUATOR_HPP
