#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "proptk/corpus.hpp"
#include "proptk/technique.hpp"
#include "proptk/util.hpp"

namespace proptk {

struct PRF {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

inline double f1_score(double precision, double recall) {
  return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

struct SlcReport {
  long tp = 0, fp = 0, fn = 0, tn = 0;  // propaganda is the positive class
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

inline SlcReport slc_report_from_counts(long tp, long fp, long fn, long tn) {
  SlcReport r;
  r.tp = tp;
  r.fp = fp;
  r.fn = fn;
  r.tn = tn;
  r.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  r.recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  r.f1 = f1_score(r.precision, r.recall);
  return r;
}

// Binary P/R/F of the propaganda class. Prediction keys must match the gold
// keys exactly; anything missing, duplicated, or extra is an error.
inline SlcReport slc_prf(const std::vector<SentenceLabelRow>& predictions,
                         const std::vector<SentenceLabelRow>& gold) {
  std::map<std::pair<std::string, int>, SentenceLabel> pred_by_key;
  for (const auto& p : predictions) {
    auto [it, inserted] = pred_by_key.insert({{p.article_id, p.sentence_index}, p.label});
    if (!inserted)
      throw input_error("duplicate prediction for sentence " + p.article_id + ":" +
                        std::to_string(p.sentence_index));
  }
  std::map<std::pair<std::string, int>, SentenceLabel> gold_by_key;
  for (const auto& g : gold) {
    auto [it, inserted] = gold_by_key.insert({{g.article_id, g.sentence_index}, g.label});
    if (!inserted)
      throw input_error("duplicate gold row for sentence " + g.article_id + ":" +
                        std::to_string(g.sentence_index));
  }
  if (pred_by_key.size() != gold_by_key.size())
    throw input_error("prediction/gold sentence sets differ in size (" +
                      std::to_string(pred_by_key.size()) + " vs " +
                      std::to_string(gold_by_key.size()) + ")");
  long tp = 0, fp = 0, fn = 0, tn = 0;
  for (const auto& [key, gold_label] : gold_by_key) {
    auto it = pred_by_key.find(key);
    if (it == pred_by_key.end())
      throw input_error("missing prediction for sentence " + key.first + ":" +
                        std::to_string(key.second));
    bool pred_prop = it->second == SentenceLabel::propaganda;
    bool gold_prop = gold_label == SentenceLabel::propaganda;
    if (pred_prop && gold_prop)
      ++tp;
    else if (pred_prop && !gold_prop)
      ++fp;
    else if (!pred_prop && gold_prop)
      ++fn;
    else
      ++tn;
  }
  return slc_report_from_counts(tp, fp, fn, tn);
}

// -------------------------------------------------------------- span metric

// Character-intersection credit, gated on matching article and technique.
inline double span_overlap_score(const FragmentAnnotation& pred, const FragmentAnnotation& gold,
                                 std::size_t normalizer) {
  if (normalizer == 0) throw internal_error("span_overlap_score: zero normalizer");
  if (pred.article_id != gold.article_id || pred.technique != gold.technique) return 0.0;
  return static_cast<double>(overlap_length(pred.span, gold.span)) /
         static_cast<double>(normalizer);
}

struct FlcReport {
  PRF overall;
  std::array<PRF, technique_count> per_technique{};
  std::array<std::size_t, technique_count> pred_counts{};
  std::array<std::size_t, technique_count> gold_counts{};
};

// Double-sum partial-match metric: every predicted span collects credit from
// every gold span it intersects (same technique), normalized by predicted
// length for precision and gold length for recall. Empty prediction set gives
// precision 0; empty gold set gives recall 0.
inline FlcReport flc_prf(const std::vector<FragmentAnnotation>& pred,
                         const std::vector<FragmentAnnotation>& gold) {
  FlcReport report;
  std::array<double, technique_count> p_sum{};
  std::array<double, technique_count> r_sum{};
  double p_total = 0.0;
  double r_total = 0.0;

  for (const auto& s : pred) {
    ++report.pred_counts[static_cast<int>(s.technique)];
    double credit = 0.0;
    for (const auto& t : gold) credit += span_overlap_score(s, t, s.span.length());
    p_total += credit;
    p_sum[static_cast<int>(s.technique)] += credit;
  }
  for (const auto& t : gold) {
    ++report.gold_counts[static_cast<int>(t.technique)];
    double credit = 0.0;
    for (const auto& s : pred) credit += span_overlap_score(s, t, t.span.length());
    r_total += credit;
    r_sum[static_cast<int>(t.technique)] += credit;
  }

  report.overall.precision = pred.empty() ? 0.0 : p_total / static_cast<double>(pred.size());
  report.overall.recall = gold.empty() ? 0.0 : r_total / static_cast<double>(gold.size());
  report.overall.f1 = f1_score(report.overall.precision, report.overall.recall);
  for (int i = 0; i < technique_count; ++i) {
    PRF& row = report.per_technique[i];
    row.precision =
        report.pred_counts[i] ? p_sum[i] / static_cast<double>(report.pred_counts[i]) : 0.0;
    row.recall =
        report.gold_counts[i] ? r_sum[i] / static_cast<double>(report.gold_counts[i]) : 0.0;
    row.f1 = f1_score(row.precision, row.recall);
  }
  return report;
}

// -------------------------------------------------------------- formatting

enum class ReportStyle { tsv, text };

inline std::string format_report(const SlcReport& report, ReportStyle style) {
  std::string out;
  if (style == ReportStyle::tsv) {
    out += "precision\t" + format_fixed(report.precision, 3) + "\n";
    out += "recall\t" + format_fixed(report.recall, 3) + "\n";
    out += "f1\t" + format_fixed(report.f1, 3) + "\n";
    out += "tp\t" + std::to_string(report.tp) + "\n";
    out += "fp\t" + std::to_string(report.fp) + "\n";
    out += "fn\t" + std::to_string(report.fn) + "\n";
    out += "tn\t" + std::to_string(report.tn) + "\n";
  } else {
    out += "propaganda class   P " + format_fixed(report.precision, 3) + "   R " +
           format_fixed(report.recall, 3) + "   F " + format_fixed(report.f1, 3) + "\n";
    out += "counts             TP " + std::to_string(report.tp) + "  FP " +
           std::to_string(report.fp) + "  FN " + std::to_string(report.fn) + "  TN " +
           std::to_string(report.tn) + "\n";
  }
  return out;
}

inline std::string format_report(const FlcReport& report, ReportStyle style) {
  std::string out;
  auto row = [&](std::string_view name, const PRF& prf) {
    if (style == ReportStyle::tsv) {
      out += std::string(name) + "\t" + format_fixed(prf.precision, 3) + "\t" +
             format_fixed(prf.recall, 3) + "\t" + format_fixed(prf.f1, 3) + "\n";
    } else {
      std::string padded(name);
      padded.resize(44, ' ');
      out += padded + " P " + format_fixed(prf.precision, 3) + "  R " +
             format_fixed(prf.recall, 3) + "  F " + format_fixed(prf.f1, 3) + "\n";
    }
  };
  if (style == ReportStyle::tsv) out += "technique\tprecision\trecall\tf1\n";
  for (int i = 0; i < technique_count; ++i)
    row(to_string(static_cast<Technique>(i)), report.per_technique[i]);
  row("OVERALL", report.overall);
  return out;
}

}  // namespace proptk
