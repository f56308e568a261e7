#include "cxr/evaluator.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

namespace cxr {
namespace {

void check_lengths(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size())
    throw std::invalid_argument("scores and labels differ in length");
  for (int l : labels)
    if (l != 0 && l != 1) throw std::invalid_argument("labels must be 0 or 1");
}

std::string fmt(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  check_lengths(scores, labels);
  const auto positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  const std::size_t negatives = labels.size() - positives;
  if (positives == 0 || negatives == 0)
    throw MetricError("undefined_auc", "AUC is undefined unless both classes are present");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Twice the rank sum keeps tie-averaged ranks integral.
  long double twice_rank_sum = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const auto twice_avg_rank = static_cast<long double>(i + 1 + j);  // ranks i+1..j
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] == 1) twice_rank_sum += twice_avg_rank;
    i = j;
  }
  const long double p = static_cast<long double>(positives);
  const long double twice_u = twice_rank_sum - p * (p + 1);
  const double u = static_cast<double>(twice_u / 2);
  return u / (static_cast<double>(positives) * static_cast<double>(negatives));
}

EvalReport sens_spec(std::span<const double> scores, std::span<const int> labels,
                     double threshold) {
  check_lengths(scores, labels);
  if (scores.empty()) throw std::invalid_argument("sens_spec: empty input");
  EvalReport r;
  r.threshold = threshold;
  r.n = scores.size();
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    if (labels[i] == 1) (pred ? r.confusion.tp : r.confusion.fn)++;
    else (pred ? r.confusion.fp : r.confusion.tn)++;
  }
  const auto& c = r.confusion;
  r.sensitivity = c.tp + c.fn ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn) : 0.0;
  r.specificity = c.tn + c.fp ? static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp) : 0.0;
  return r;
}

EvalReport evaluate(std::span<const double> scores, std::span<const int> labels, double threshold) {
  EvalReport r = sens_spec(scores, labels, threshold);
  const auto positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  if (positives > 0 && positives < labels.size()) r.auc = roc_auc(scores, labels);
  return r;
}

double youden_threshold(std::span<const double> scores, std::span<const int> labels) {
  check_lengths(scores, labels);
  const auto positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  if (positives == 0 || positives == labels.size())
    throw MetricError("undefined_threshold", "Youden threshold needs both classes");
  std::vector<double> unique(scores.begin(), scores.end());
  std::sort(unique.begin(), unique.end());
  unique.erase(std::unique(unique.begin(), unique.end()), unique.end());
  if (unique.size() == 1) return unique.front();
  double best_t = 0.0;
  double best_j = -2.0;
  for (std::size_t i = 0; i + 1 < unique.size(); ++i) {
    const double t = 0.5 * (unique[i] + unique[i + 1]);
    const auto r = sens_spec(scores, labels, t);
    const double j = r.sensitivity + r.specificity - 1.0;
    if (j > best_j) {  // strict: earlier (lower) thresholds win ties
      best_j = j;
      best_t = t;
    }
  }
  return best_t;
}

void CaseTimeline::sort_captures() {
  std::stable_sort(captures.begin(), captures.end(),
                   [](const Capture& a, const Capture& b) { return a.date < b.date; });
}

std::optional<int> lead_time(const CaseTimeline& timeline) {
  if (!timeline.rtpcr_confirm_date) return std::nullopt;
  std::optional<Date> first;
  for (const auto& c : timeline.captures)
    if (c.positive && (!first || c.date < *first)) first = c.date;
  if (!first) return std::nullopt;
  const auto days = std::chrono::sys_days(*timeline.rtpcr_confirm_date) - std::chrono::sys_days(*first);
  return static_cast<int>(days.count());
}

CohortLeadReport cohort_lead_report(std::vector<CaseTimeline> cases) {
  CohortLeadReport report;
  report.cases = cases.size();
  std::sort(cases.begin(), cases.end(),
            [](const CaseTimeline& a, const CaseTimeline& b) { return a.case_id < b.case_id; });
  for (auto& c : cases) {
    c.sort_captures();
    LeadRow row;
    row.case_id = c.case_id;
    row.symptom_onset_date = c.symptom_onset_date;
    row.rtpcr_confirm_date = c.rtpcr_confirm_date;
    for (const auto& cap : c.captures)
      if (cap.positive) {
        row.detected_date = cap.date;
        break;
      }
    row.lead_days = lead_time(c);
    if (row.lead_days) {
      ++report.defined;
      if (*row.lead_days >= 2) ++report.at_least_2_days;
      if (*row.lead_days >= 5) ++report.at_least_5_days;
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

std::string lead_report_csv(const CohortLeadReport& report) {
  std::ostringstream out;
  out << "case_id,symptom_onset_date,rtpcr_confirm_date,detected_date,lead_days\n";
  auto d = [](const std::optional<Date>& v) { return v ? format_date(*v) : std::string{}; };
  for (const auto& r : report.rows)
    out << r.case_id << ',' << d(r.symptom_onset_date) << ',' << d(r.rtpcr_confirm_date) << ','
        << d(r.detected_date) << ',' << (r.lead_days ? std::to_string(*r.lead_days) : "") << '\n';
  return out.str();
}

nlohmann::json to_json(const CohortLeadReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  auto d = [](const std::optional<Date>& v) -> nlohmann::json {
    return v ? nlohmann::json(format_date(*v)) : nlohmann::json(nullptr);
  };
  for (const auto& r : report.rows)
    rows.push_back({{"case_id", r.case_id},
                    {"symptom_onset_date", d(r.symptom_onset_date)},
                    {"rtpcr_confirm_date", d(r.rtpcr_confirm_date)},
                    {"detected_date", d(r.detected_date)},
                    {"lead_days", r.lead_days ? nlohmann::json(*r.lead_days) : nlohmann::json(nullptr)}});
  return {{"cases", report.cases},
          {"defined", report.defined},
          {"lead_at_least_2_days", report.at_least_2_days},
          {"lead_at_least_5_days", report.at_least_5_days},
          {"rows", rows}};
}

nlohmann::json to_json(const EvalReport& r) {
  return {{"auc", r.auc ? nlohmann::json(*r.auc) : nlohmann::json(nullptr)},
          {"sensitivity", r.sensitivity},
          {"specificity", r.specificity},
          {"threshold", r.threshold},
          {"tp", r.confusion.tp},
          {"fp", r.confusion.fp},
          {"tn", r.confusion.tn},
          {"fn", r.confusion.fn},
          {"n", r.n}};
}

std::string grid_csv(const std::vector<GridRow>& rows) {
  std::ostringstream out;
  out << "split,stage,arm,auc,sensitivity,specificity,threshold,tp,fp,tn,fn,n\n";
  for (const auto& row : rows) {
    const auto& r = row.report;
    out << row.split << ',' << row.stage << ',' << row.arm << ','
        << (r.auc ? fmt(*r.auc) : std::string{}) << ',' << fmt(r.sensitivity) << ','
        << fmt(r.specificity) << ',' << fmt(r.threshold) << ',' << r.confusion.tp << ','
        << r.confusion.fp << ',' << r.confusion.tn << ',' << r.confusion.fn << ',' << r.n << '\n';
  }
  return out.str();
}

nlohmann::json to_json(const std::vector<GridRow>& rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& row : rows) {
    auto j = to_json(row.report);
    j["split"] = row.split;
    j["stage"] = row.stage;
    j["arm"] = row.arm;
    out.push_back(std::move(j));
  }
  return out;
}

}  // namespace cxr
