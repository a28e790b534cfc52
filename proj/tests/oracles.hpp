// Test-only reference implementations, kept independent of the library's
// dynamic-programming and analytic-gradient code paths.
#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "proptk/corpus.hpp"
#include "proptk/crf.hpp"

namespace oracles {

// Mixed relative error with a floor at 1 for near-zero magnitudes.
inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

// Per-byte propaganda check: a sentence is positive iff any of its bytes is
// covered by any annotation.
inline std::vector<bool> brute_sentence_flags(const proptk::Article& article,
                                              const std::vector<proptk::FragmentAnnotation>& anns) {
  std::vector<bool> covered(article.text.size(), false);
  for (const auto& ann : anns)
    for (std::size_t b = ann.span.begin; b < ann.span.end; ++b) covered[b] = true;
  std::vector<bool> flags;
  for (const auto& range : article.sentences) {
    bool hit = false;
    for (std::size_t b = range.begin; b < range.end; ++b)
      if (covered[b]) hit = true;
    flags.push_back(hit);
  }
  return flags;
}

// Potential sum written out longhand, reading weights straight off the model.
inline double brute_sequence_score(const proptk::CrfModel& model,
                                   const std::vector<proptk::FeatureVector>& feats,
                                   const std::vector<int>& tags) {
  const int v = model.tags.size();
  double score = model.trans(model.tags.start(), tags.front());
  for (std::size_t i = 0; i < tags.size(); ++i) {
    if (i > 0) score += model.trans(tags[i - 1], tags[i]);
    for (const auto& [id, value] : feats[i].sparse) {
      auto it = model.emission.find(id);
      if (it != model.emission.end()) score += it->second[tags[i]] * value;
    }
    for (const auto& block : feats[i].dense) {
      const auto& w = model.dense_emission.at(block.source);
      for (std::size_t d = 0; d < block.values.size(); ++d)
        score += w[d * v + tags[i]] * block.values[d];
    }
  }
  score += model.trans(tags.back(), model.tags.stop());
  return score;
}

// True when `a` beats `b` under the decode tie rule: higher score, or equal
// score and a lower tag index at the latest differing position.
inline bool beats(const std::vector<int>& a, double score_a, const std::vector<int>& b,
                  double score_b) {
  if (score_a != score_b) return score_a > score_b;
  for (std::size_t i = a.size(); i-- > 0;)
    if (a[i] != b[i]) return a[i] < b[i];
  return false;
}

struct BruteInference {
  double log_z = proptk::neg_inf;
  std::vector<int> best_tags;
  double best_score = proptk::neg_inf;
  std::size_t valid_count = 0;
};

// Exhaustive enumeration of all tag sequences; invalid ones score -inf and
// drop out. Intended for n <= 5 over small tag sets.
inline BruteInference brute_inference(const proptk::CrfModel& model,
                                      const std::vector<proptk::FeatureVector>& feats) {
  const int v = model.tags.size();
  const std::size_t n = feats.size();
  BruteInference out;
  std::vector<int> tags(n, 0);
  std::vector<double> scores;
  while (true) {
    double s = brute_sequence_score(model, feats, tags);
    if (s != proptk::neg_inf) {
      scores.push_back(s);
      ++out.valid_count;
      if (out.best_tags.empty() || beats(tags, s, out.best_tags, out.best_score)) {
        out.best_tags = tags;
        out.best_score = s;
      }
    }
    std::size_t k = 0;
    while (k < n && ++tags[k] == v) tags[k++] = 0;
    if (k == n) break;
  }
  double m = proptk::neg_inf;
  for (double s : scores) m = std::max(m, s);
  if (m != proptk::neg_inf) {
    double sum = 0.0;
    for (double s : scores) sum += std::exp(s - m);
    out.log_z = m + std::log(sum);
  }
  return out;
}

}  // namespace oracles
