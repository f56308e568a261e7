#include "doctest.h"
#include "oracles.hpp"

#include "cxr/evaluator.hpp"
#include "cxr/rng.hpp"

#include <cmath>

using namespace cxr;

namespace {

struct Instance {
  std::vector<double> scores;
  std::vector<int> labels;
};

// Small instance with both classes and deliberate duplicate scores.
Instance random_instance(Rng& rng) {
  Instance in;
  const std::size_t n = 2 + rng.below(29);
  for (std::size_t i = 0; i < n; ++i) {
    in.scores.push_back(static_cast<double>(rng.below(8)) / 8.0);
    in.labels.push_back(static_cast<int>(rng.below(2)));
  }
  in.labels[0] = 0;
  in.labels[1] = 1;
  return in;
}

Date ymd(int y, unsigned m, unsigned d) {
  return Date{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
}

}  // namespace

TEST_SUITE("evaluator") {
  TEST_CASE("roc_auc on the four-point fixture") {
    const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
    const std::vector<int> y{0, 0, 1, 1};
    CHECK(roc_auc(s, y) == doctest::Approx(0.75).epsilon(1e-12));
  }

  TEST_CASE("roc_auc degenerate cases") {
    const std::vector<int> y{0, 1, 0, 1};
    CHECK(roc_auc(std::vector<double>{0.1, 0.9, 0.2, 0.8}, y) == 1.0);
    CHECK(roc_auc(std::vector<double>{0.3, 0.3, 0.3, 0.3}, y) == 0.5);
    try {
      roc_auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1});
      FAIL("expected undefined_auc");
    } catch (const MetricError& e) {
      CHECK(e.code() == "undefined_auc");
    }
    CHECK_THROWS(roc_auc(std::vector<double>{0.1}, std::vector<int>{0, 1}));
  }

  TEST_CASE("roc_auc equals the pairwise oracle exactly") {
    Rng rng(101);
    for (int trial = 0; trial < 1000; ++trial) {
      const auto in = random_instance(rng);
      CHECK(roc_auc(in.scores, in.labels) == oracle::pairwise_auc(in.scores, in.labels));
    }
  }

  TEST_CASE("roc_auc is invariant under increasing transforms and complements under negation") {
    Rng rng(202);
    for (int trial = 0; trial < 100; ++trial) {
      auto in = random_instance(rng);
      for (auto& s : in.scores) s += rng.uniform() * 1e-3;  // break ties
      std::vector<double> warped, negated;
      for (double s : in.scores) {
        warped.push_back(std::exp(3.0 * s) - 7.0);
        negated.push_back(-s);
      }
      const double a = roc_auc(in.scores, in.labels);
      CHECK(roc_auc(warped, in.labels) == a);
      CHECK(a + roc_auc(negated, in.labels) == doctest::Approx(1.0).epsilon(1e-12));
    }
  }

  TEST_CASE("sens_spec degenerate thresholds and counts") {
    const std::vector<double> s{0.1, 0.4, 0.35, 0.8, 0.6};
    const std::vector<int> y{0, 0, 1, 1, 0};
    const auto low = sens_spec(s, y, 0.0);
    CHECK(low.sensitivity == 1.0);
    CHECK(low.specificity == 0.0);
    const auto high = sens_spec(s, y, 0.81);
    CHECK(high.sensitivity == 0.0);
    CHECK(high.specificity == 1.0);
    const auto mid = sens_spec(s, y, 0.4);  // >= convention: 0.4 counts as positive
    CHECK(mid.confusion.fp == 2);
    CHECK(mid.confusion.tp == 1);
    CHECK(mid.confusion.total() == s.size());
    CHECK(mid.n == s.size());
  }

  TEST_CASE("42 of 47 detected positives gives sensitivity 0.8936") {
    std::vector<double> s;
    std::vector<int> y;
    for (int i = 0; i < 47; ++i) {
      s.push_back(i < 42 ? 0.9 : 0.1);
      y.push_back(1);
    }
    const auto r = sens_spec(s, y, 0.5);
    CHECK(r.sensitivity == doctest::Approx(0.8936).epsilon(1e-4));
    CHECK(r.confusion.tp == 42);
    CHECK(r.confusion.fn == 5);
    CHECK(r.specificity == 0.0);  // no negatives
  }

  TEST_CASE("youden threshold matches an exhaustive scan") {
    Rng rng(303);
    for (int trial = 0; trial < 200; ++trial) {
      Instance in;
      for (int i = 0; i < 6; ++i) {
        in.scores.push_back(static_cast<double>(rng.below(10)) / 10.0);
        in.labels.push_back(static_cast<int>(rng.below(2)));
      }
      in.labels[0] = 0;
      in.labels[1] = 1;
      std::vector<double> uniq = in.scores;
      std::sort(uniq.begin(), uniq.end());
      uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
      double best_t = uniq.front(), best_j = -2.0;
      if (uniq.size() > 1) {
        for (std::size_t k = 0; k + 1 < uniq.size(); ++k) {
          const double t = 0.5 * (uniq[k] + uniq[k + 1]);
          long tp = 0, fn = 0, tn = 0, fp = 0;
          for (std::size_t i = 0; i < 6; ++i) {
            const bool pred = in.scores[i] >= t;
            if (in.labels[i] == 1) (pred ? tp : fn)++;
            else (pred ? fp : tn)++;
          }
          const double j = double(tp) / double(tp + fn) + double(tn) / double(tn + fp) - 1.0;
          if (j > best_j + 1e-12) {
            best_j = j;
            best_t = t;
          }
        }
      }
      CHECK(youden_threshold(in.scores, in.labels) == doctest::Approx(best_t).epsilon(1e-12));
    }
  }

  TEST_CASE("youden threshold fixtures") {
    CHECK(youden_threshold(std::vector<double>{0.1, 0.2, 0.7, 0.9}, std::vector<int>{0, 0, 1, 1}) ==
          doctest::Approx(0.45));
    CHECK(youden_threshold(std::vector<double>{0.3, 0.3, 0.3}, std::vector<int>{0, 1, 1}) == 0.3);
    CHECK_THROWS_AS(youden_threshold(std::vector<double>{0.1, 0.2}, std::vector<int>{0, 0}),
                    MetricError);
  }

  TEST_CASE("lead_time fixtures") {
    CaseTimeline c;
    c.case_id = "case-a";
    c.rtpcr_confirm_date = ymd(2020, 1, 31);
    c.captures = {{ymd(2020, 1, 20), true}, {ymd(2020, 1, 14), true}, {ymd(2020, 1, 10), false}};
    c.sort_captures();
    CHECK(lead_time(c) == 17);

    CaseTimeline same = c;
    same.captures = {{ymd(2020, 1, 31), true}};
    CHECK(lead_time(same) == 0);

    CaseTimeline none = c;
    none.captures = {{ymd(2020, 1, 14), false}};
    CHECK_FALSE(lead_time(none).has_value());

    CaseTimeline no_confirm = c;
    no_confirm.rtpcr_confirm_date.reset();
    CHECK_FALSE(lead_time(no_confirm).has_value());

    CaseTimeline late = c;
    late.captures = {{ymd(2020, 2, 3), true}};
    CHECK(lead_time(late) == -3);
  }

  TEST_CASE("cohort lead report counts") {
    CHECK(cohort_lead_report({}).at_least_2_days == 0);
    CHECK(cohort_lead_report({}).at_least_5_days == 0);

    CaseTimeline six{"c6", std::nullopt, ymd(2020, 3, 7), {{ymd(2020, 3, 1), true}}};
    const auto single = cohort_lead_report({six});
    CHECK(single.at_least_2_days == 1);
    CHECK(single.at_least_5_days == 1);

    CaseTimeline one{"b", std::nullopt, ymd(2020, 3, 2), {{ymd(2020, 3, 1), true}}};
    CaseTimeline three{"a", std::nullopt, ymd(2020, 3, 4), {{ymd(2020, 3, 1), true}}};
    CaseTimeline undefined{"c", std::nullopt, std::nullopt, {{ymd(2020, 3, 1), true}}};
    const auto r = cohort_lead_report({one, three, undefined});
    CHECK(r.at_least_2_days == 1);
    CHECK(r.at_least_5_days == 0);
    CHECK(r.defined == 2);
    REQUIRE(r.rows.size() == 3);
    CHECK(r.rows[0].case_id == "a");
    CHECK(r.rows[2].case_id == "c");
    const auto csv = lead_report_csv(r);
    CHECK(csv.find("a,") != std::string::npos);
    CHECK(to_json(r)["lead_at_least_2_days"] == 1);
  }

  TEST_CASE("grid csv layout") {
    GridRow row{"test", "stage2", "with_mask", evaluate(std::vector<double>{0.2, 0.8},
                                                        std::vector<int>{0, 1}, 0.5)};
    const auto csv = grid_csv({row});
    CHECK(csv.rfind("split,stage,arm,auc,sensitivity,specificity,threshold,tp,fp,tn,fn,n\n", 0) == 0);
    CHECK(csv.find("test,stage2,with_mask,1") != std::string::npos);
  }
}
