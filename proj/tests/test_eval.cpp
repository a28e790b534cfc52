#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <string>
#include <vector>

#include "proptk/eval.hpp"
#include "proptk/util.hpp"

using namespace proptk;

namespace {

std::vector<SentenceLabelRow> rows_from(const std::vector<int>& labels) {
  std::vector<SentenceLabelRow> rows;
  for (std::size_t i = 0; i < labels.size(); ++i)
    rows.push_back({"a", static_cast<int>(i),
                    labels[i] ? SentenceLabel::propaganda : SentenceLabel::non_propaganda});
  return rows;
}

FragmentAnnotation frag(const char* id, Technique t, std::size_t b, std::size_t e) {
  return {id, t, {b, e}};
}

}  // namespace

TEST_CASE("slc_prf against a brute-force confusion oracle") {
  SplitMix64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    std::size_t n = 1 + rng.next_below(100);
    std::vector<int> gold(n), pred(n);
    for (std::size_t i = 0; i < n; ++i) {
      gold[i] = rng.next_double() < 0.3;
      pred[i] = rng.next_double() < 0.5;
    }
    SlcReport report = slc_prf(rows_from(pred), rows_from(gold));

    long tp = 0, fp = 0, fn = 0, tn = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (pred[i] && gold[i]) ++tp;
      if (pred[i] && !gold[i]) ++fp;
      if (!pred[i] && gold[i]) ++fn;
      if (!pred[i] && !gold[i]) ++tn;
    }
    CHECK(report.tp == tp);
    CHECK(report.fp == fp);
    CHECK(report.fn == fn);
    CHECK(report.tn == tn);
    CHECK(report.tp + report.fp + report.fn + report.tn == static_cast<long>(n));
    double p = tp + fp ? double(tp) / double(tp + fp) : 0.0;
    double r = tp + fn ? double(tp) / double(tp + fn) : 0.0;
    CHECK(report.precision == doctest::Approx(p));
    CHECK(report.recall == doctest::Approx(r));
    CHECK(report.f1 == doctest::Approx(p + r > 0 ? 2 * p * r / (p + r) : 0.0));
  }
}

TEST_CASE("slc_prf degenerate and perfect predictors") {
  // 30% positive gold, all-propaganda predictor
  std::vector<int> gold(10, 0);
  gold[0] = gold[1] = gold[2] = 1;
  SlcReport all_prop = slc_prf(rows_from(std::vector<int>(10, 1)), rows_from(gold));
  CHECK(all_prop.recall == doctest::Approx(1.0));
  CHECK(all_prop.precision == doctest::Approx(0.3));

  SlcReport perfect = slc_prf(rows_from(gold), rows_from(gold));
  CHECK(perfect.precision == doctest::Approx(1.0));
  CHECK(perfect.recall == doctest::Approx(1.0));
  CHECK(perfect.f1 == doctest::Approx(1.0));
}

TEST_CASE("slc_prf rejects missing and duplicate keys") {
  auto gold = rows_from({1, 0});
  auto pred = rows_from({1, 0});
  pred[1].sentence_index = 7;  // missing key for gold sentence 1
  CHECK_THROWS_AS(slc_prf(pred, gold), input_error);

  auto dup = rows_from({1, 0});
  dup[1].sentence_index = 0;
  CHECK_THROWS_AS(slc_prf(dup, gold), input_error);

  CHECK_THROWS_AS(slc_prf(rows_from({1}), gold), input_error);
}

TEST_CASE("span_overlap_score") {
  auto pred = frag("1", Technique::doubt, 0, 10);
  auto gold = frag("1", Technique::doubt, 5, 15);
  CHECK(span_overlap_score(pred, gold, 10) == doctest::Approx(0.5));

  auto other_technique = frag("1", Technique::slogans, 5, 15);
  CHECK(span_overlap_score(pred, other_technique, 10) == 0.0);
  auto other_article = frag("2", Technique::doubt, 5, 15);
  CHECK(span_overlap_score(pred, other_article, 10) == 0.0);

  auto same = frag("1", Technique::doubt, 0, 10);
  CHECK(span_overlap_score(pred, same, pred.span.length()) == doctest::Approx(1.0));
}

TEST_CASE("flc_prf fixtures") {
  SUBCASE("identical sets score 1 everywhere present") {
    std::vector<FragmentAnnotation> spans = {frag("1", Technique::doubt, 0, 10),
                                             frag("1", Technique::slogans, 12, 20)};
    FlcReport r = flc_prf(spans, spans);
    CHECK(r.overall.precision == doctest::Approx(1.0));
    CHECK(r.overall.recall == doctest::Approx(1.0));
    CHECK(r.overall.f1 == doctest::Approx(1.0));
    CHECK(r.per_technique[static_cast<int>(Technique::doubt)].f1 == doctest::Approx(1.0));
    CHECK(r.per_technique[static_cast<int>(Technique::slogans)].f1 == doctest::Approx(1.0));
  }
  SUBCASE("disjoint spans score zero") {
    FlcReport r = flc_prf({frag("1", Technique::doubt, 0, 5)},
                          {frag("1", Technique::doubt, 10, 15)});
    CHECK(r.overall.precision == 0.0);
    CHECK(r.overall.recall == 0.0);
    CHECK(r.overall.f1 == 0.0);
  }
  SUBCASE("half overlap of one of two gold spans") {
    std::vector<FragmentAnnotation> gold = {frag("1", Technique::doubt, 0, 10),
                                            frag("1", Technique::doubt, 20, 30)};
    std::vector<FragmentAnnotation> pred = {frag("1", Technique::doubt, 5, 15)};
    FlcReport r = flc_prf(pred, gold);
    CHECK(r.overall.precision == doctest::Approx(0.5));
    CHECK(r.overall.recall == doctest::Approx(0.25));
  }
  SUBCASE("empty set conventions") {
    FlcReport no_pred = flc_prf({}, {frag("1", Technique::doubt, 0, 5)});
    CHECK(no_pred.overall.precision == 0.0);
    CHECK(no_pred.overall.recall == 0.0);
    FlcReport no_gold = flc_prf({frag("1", Technique::doubt, 0, 5)}, {});
    CHECK(no_gold.overall.precision == 0.0);
    CHECK(no_gold.overall.recall == 0.0);
  }
}

TEST_CASE("flc_prf swap symmetry") {
  SplitMix64 rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    auto random_spans = [&](const char* id) {
      std::vector<FragmentAnnotation> spans;
      std::size_t n = rng.next_below(6);
      for (std::size_t i = 0; i < n; ++i) {
        std::size_t b = rng.next_below(50);
        spans.push_back({id, static_cast<Technique>(rng.next_below(4)),
                         {b, b + 1 + rng.next_below(10)}});
      }
      return spans;
    };
    auto s = random_spans("1");
    auto t = random_spans("1");
    FlcReport forward = flc_prf(s, t);
    FlcReport swapped = flc_prf(t, s);
    CHECK(forward.overall.precision == doctest::Approx(swapped.overall.recall));
    CHECK(forward.overall.recall == doctest::Approx(swapped.overall.precision));
    for (int i = 0; i < technique_count; ++i) {
      CHECK(forward.per_technique[i].precision ==
            doctest::Approx(swapped.per_technique[i].recall));
      CHECK(forward.per_technique[i].recall ==
            doctest::Approx(swapped.per_technique[i].precision));
    }
  }
}

TEST_CASE("flc_prf recall grows with intersection") {
  std::vector<FragmentAnnotation> gold = {frag("1", Technique::doubt, 10, 20)};
  double prev = -1.0;
  for (std::size_t shift = 0; shift <= 10; ++shift) {
    std::vector<FragmentAnnotation> pred = {frag("1", Technique::doubt, shift, shift + 10)};
    FlcReport r = flc_prf(pred, gold);
    CHECK(r.overall.recall >= prev);
    prev = r.overall.recall;
  }
  CHECK(prev == doctest::Approx(1.0));
}

TEST_CASE("flc_prf double-sum additivity over overlapping gold") {
  // one prediction over two overlapping gold spans of the same technique:
  // contributions add and may push the precision sum past 1
  std::vector<FragmentAnnotation> gold = {frag("1", Technique::doubt, 0, 6),
                                          frag("1", Technique::doubt, 4, 10)};
  std::vector<FragmentAnnotation> pred = {frag("1", Technique::doubt, 0, 10)};
  FlcReport r = flc_prf(pred, gold);
  CHECK(r.overall.precision == doctest::Approx(1.2));

  // a prediction overlapping exactly one gold span contributes at most 1
  FlcReport single = flc_prf({frag("1", Technique::doubt, 0, 10)},
                             {frag("1", Technique::doubt, 0, 6)});
  CHECK(single.overall.precision <= 1.0);
}

TEST_CASE("format_report renders three decimals and fixed order") {
  SlcReport slc = slc_report_from_counts(3, 2, 1, 4);
  std::string tsv = format_report(slc, ReportStyle::tsv);
  auto lines = split(tsv, '\n');
  CHECK(lines[0].substr(0, 10) == "precision\t");
  CHECK(lines[1].substr(0, 7) == "recall\t");
  CHECK(lines[2].substr(0, 3) == "f1\t");
  CHECK(lines[0] == "precision\t0.600");
  CHECK(lines[1] == "recall\t0.750");

  FlcReport zero;
  std::string flc_tsv = format_report(zero, ReportStyle::tsv);
  auto flc_lines = split(flc_tsv, '\n');
  REQUIRE(flc_lines.size() == 21);  // header + 18 techniques + OVERALL + trailing empty
  CHECK(flc_lines[0] == "technique\tprecision\trecall\tf1");
  CHECK(flc_lines[1] == "Loaded Language\t0.000\t0.000\t0.000");
  CHECK(flc_lines[19] == "OVERALL\t0.000\t0.000\t0.000");

  FlcReport crafted;
  crafted.overall = {0.365, 0.073, f1_score(0.365, 0.073)};
  std::string text = format_report(crafted, ReportStyle::text);
  CHECK(text.find("0.365") != std::string::npos);
  CHECK(text.find("0.073") != std::string::npos);
  CHECK(text.find("0.122") != std::string::npos);
}
