#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "proptk/corpus.hpp"
#include "proptk/eval.hpp"
#include "proptk/features.hpp"
#include "proptk/util.hpp"

namespace proptk {

inline constexpr double neg_inf = -std::numeric_limits<double>::infinity();

// Ordered BIO tag inventory over a label list: O at index 0, then B-l, I-l
// per label, plus virtual START/STOP boundary states. Hard BIO constraints
// live here as forbidden transitions.
class TagSet {
public:
  static constexpr int outside_tag = 0;

  explicit TagSet(std::vector<std::string> labels) : labels_(std::move(labels)) {
    if (labels_.empty()) throw input_error("tag set needs at least one label");
    for (std::size_t i = 0; i < labels_.size(); ++i)
      for (std::size_t j = i + 1; j < labels_.size(); ++j)
        if (labels_[i] == labels_[j])
          throw input_error("duplicate tag label: '" + labels_[i] + "'");
    build_adjacency();
  }

  // The full shared-task inventory: 18 techniques, 37 tags.
  static TagSet techniques() {
    std::vector<std::string> labels;
    labels.reserve(technique_count);
    for (auto name : technique_names()) labels.emplace_back(name);
    return TagSet(std::move(labels));
  }

  int label_count() const { return static_cast<int>(labels_.size()); }
  int size() const { return 1 + 2 * label_count(); }  // number of real tags
  int start() const { return size(); }
  int stop() const { return size() + 1; }

  int begin_tag(int label) const { return 1 + 2 * label; }
  int inside_tag(int label) const { return 2 + 2 * label; }
  bool is_begin(int tag) const { return tag >= 1 && tag < size() && (tag - 1) % 2 == 0; }
  bool is_inside(int tag) const { return tag >= 1 && tag < size() && (tag - 1) % 2 == 1; }
  int label_of(int tag) const { return tag == outside_tag ? -1 : (tag - 1) / 2; }
  const std::vector<std::string>& labels() const { return labels_; }

  std::string tag_name(int tag) const {
    if (tag == outside_tag) return "O";
    if (tag == start()) return "<start>";
    if (tag == stop()) return "<stop>";
    return (is_begin(tag) ? "B-" : "I-") + labels_[label_of(tag)];
  }

  std::optional<int> tag_index(std::string_view name) const {
    if (name == "O") return outside_tag;
    if (name.size() < 3 || name[1] != '-') return std::nullopt;
    bool begin = name[0] == 'B';
    if (!begin && name[0] != 'I') return std::nullopt;
    std::string_view label = name.substr(2);
    for (int i = 0; i < label_count(); ++i)
      if (labels_[i] == label) return begin ? begin_tag(i) : inside_tag(i);
    return std::nullopt;
  }

  // Forbidden: START->I-t, O->I-t, B-t->I-u and I-t->I-u for t != u,
  // anything->START, STOP->anything, START->STOP.
  bool transition_allowed(int from, int to) const {
    if (from == stop() || to == start()) return false;
    if (to == stop()) return from != start();
    if (from == start()) return !is_inside(to);
    if (is_inside(to)) return (is_begin(from) || is_inside(from)) && label_of(from) == label_of(to);
    return true;
  }

  // Real-tag predecessors/successors only; START/STOP handled at the ends.
  const std::vector<std::vector<int>>& predecessors() const { return preds_; }
  const std::vector<std::vector<int>>& successors() const { return succs_; }

private:
  void build_adjacency() {
    const int v = size();
    preds_.assign(v, {});
    succs_.assign(v, {});
    for (int from = 0; from < v; ++from)
      for (int to = 0; to < v; ++to)
        if (transition_allowed(from, to)) {
          preds_[to].push_back(from);
          succs_[from].push_back(to);
        }
  }

  std::vector<std::string> labels_;
  std::vector<std::vector<int>> preds_;
  std::vector<std::vector<int>> succs_;
};

struct CrfTrainConfig {
  double learning_rate = 0.1;
  double l2 = 1e-4;
  int max_epochs = 150;
  int batch_size = 32;
  int patience = 10;
  std::uint64_t seed = 1;
};

// Linear-chain CRF: sparse+dense emission weights and a dense transition
// matrix over tags plus START/STOP, with forbidden entries pinned at -inf.
struct CrfModel {
  TagSet tags;
  std::map<std::string, std::vector<double>> emission;        // feat -> V weights
  std::map<std::string, std::vector<double>> dense_emission;  // source -> dim x V, row per dim
  std::vector<std::pair<std::string, int>> dense_sources;
  std::vector<double> transitions;                            // (V+2)^2 row-major
  TokenFeatureConfig feature_config;
  CrfTrainConfig config;

  int width() const { return tags.size() + 2; }
  double trans(int from, int to) const { return transitions[from * width() + to]; }
  double& trans(int from, int to) { return transitions[from * width() + to]; }
};

inline CrfModel make_crf_model(TagSet tags,
                               std::vector<std::pair<std::string, int>> dense_sources = {}) {
  CrfModel model{std::move(tags), {}, {}, std::move(dense_sources), {}, {}, {}};
  const int w = model.width();
  model.transitions.assign(static_cast<std::size_t>(w) * w, neg_inf);
  for (int from = 0; from < w; ++from)
    for (int to = 0; to < w; ++to)
      if (model.tags.transition_allowed(from, to)) model.trans(from, to) = 0.0;
  for (const auto& [src, dim] : model.dense_sources)
    model.dense_emission[src] =
        std::vector<double>(static_cast<std::size_t>(dim) * model.tags.size(), 0.0);
  return model;
}

// --------------------------------------------------------------- inference

namespace detail {

// n x V emission score matrix for one sequence.
inline std::vector<double> emission_scores(const CrfModel& model,
                                           std::span<const FeatureVector> feats) {
  const int v = model.tags.size();
  std::vector<double> scores(feats.size() * static_cast<std::size_t>(v), 0.0);
  for (std::size_t i = 0; i < feats.size(); ++i) {
    check_dense_blocks(model.dense_sources, feats[i]);
    double* row = scores.data() + i * static_cast<std::size_t>(v);
    for (const auto& [id, value] : feats[i].sparse) {
      auto it = model.emission.find(id);
      if (it == model.emission.end()) continue;
      const double* w = it->second.data();
      for (int y = 0; y < v; ++y) row[y] += w[y] * value;
    }
    for (const auto& block : feats[i].dense) {
      const auto& w = model.dense_emission.at(block.source);
      for (std::size_t d = 0; d < block.values.size(); ++d) {
        double x = block.values[d];
        if (x == 0.0) continue;
        const double* wd = w.data() + d * static_cast<std::size_t>(v);
        for (int y = 0; y < v; ++y) row[y] += wd[y] * x;
      }
    }
  }
  return scores;
}

// log(sum(exp)) over alpha[p] + trans(p, to) for p in a predecessor list.
inline double lse_over_predecessors(const std::vector<int>& preds, const double* alpha,
                                    const CrfModel& model, int to) {
  double best = neg_inf;
  for (int p : preds) {
    double x = alpha[p] + model.trans(p, to);
    if (x > best) best = x;
  }
  if (best == neg_inf) return neg_inf;
  double sum = 0.0;
  for (int p : preds) {
    double x = alpha[p] + model.trans(p, to);
    if (x != neg_inf) sum += std::exp(x - best);
  }
  return best + std::log(sum);
}

struct ForwardBackward {
  std::vector<double> alpha;  // n x V
  std::vector<double> beta;   // n x V
  double log_z = neg_inf;
};

inline ForwardBackward forward_backward(const CrfModel& model, const std::vector<double>& em,
                                        std::size_t n) {
  const int v = model.tags.size();
  ForwardBackward fb;
  fb.alpha.assign(n * static_cast<std::size_t>(v), neg_inf);
  fb.beta.assign(n * static_cast<std::size_t>(v), neg_inf);

  for (int y = 0; y < v; ++y)
    fb.alpha[y] = model.trans(model.tags.start(), y) + em[y];
  for (std::size_t i = 1; i < n; ++i) {
    const double* prev = fb.alpha.data() + (i - 1) * v;
    double* cur = fb.alpha.data() + i * v;
    const double* erow = em.data() + i * v;
    for (int y = 0; y < v; ++y) {
      double s = lse_over_predecessors(model.tags.predecessors()[y], prev, model, y);
      cur[y] = s == neg_inf ? neg_inf : s + erow[y];
    }
  }
  {
    const double* last = fb.alpha.data() + (n - 1) * v;
    double best = neg_inf;
    for (int y = 0; y < v; ++y)
      best = std::max(best, last[y] + model.trans(y, model.tags.stop()));
    double sum = 0.0;
    for (int y = 0; y < v; ++y) {
      double x = last[y] + model.trans(y, model.tags.stop());
      if (x != neg_inf) sum += std::exp(x - best);
    }
    fb.log_z = best == neg_inf ? neg_inf : best + std::log(sum);
  }

  for (int y = 0; y < v; ++y)
    fb.beta[(n - 1) * v + y] = model.trans(y, model.tags.stop());
  for (std::size_t i = n - 1; i-- > 0;) {
    const double* next_beta = fb.beta.data() + (i + 1) * v;
    const double* next_em = em.data() + (i + 1) * v;
    double* cur = fb.beta.data() + i * v;
    for (int p = 0; p < v; ++p) {
      const auto& succs = model.tags.successors()[p];
      double best = neg_inf;
      for (int y : succs) {
        double x = model.trans(p, y) + next_em[y] + next_beta[y];
        if (x > best) best = x;
      }
      if (best == neg_inf) {
        cur[p] = neg_inf;
        continue;
      }
      double sum = 0.0;
      for (int y : succs) {
        double x = model.trans(p, y) + next_em[y] + next_beta[y];
        if (x != neg_inf) sum += std::exp(x - best);
      }
      cur[p] = best + std::log(sum);
    }
  }
  return fb;
}

}  // namespace detail

// Potential sum including START/STOP transitions. BIO-invalid sequences score
// -inf via the forbidden transition entries.
inline double sequence_score(const CrfModel& model, std::span<const FeatureVector> feats,
                             const std::vector<int>& tags) {
  if (feats.size() != tags.size())
    throw internal_error("sequence_score: token/tag length mismatch");
  if (feats.empty()) throw internal_error("sequence_score: empty sequence");
  const int v = model.tags.size();
  for (int t : tags)
    if (t < 0 || t >= v) throw internal_error("sequence_score: tag index out of range");
  std::vector<double> em = detail::emission_scores(model, feats);
  double score = model.trans(model.tags.start(), tags[0]);
  for (std::size_t i = 0; i < tags.size(); ++i) {
    score += em[i * v + tags[i]];
    if (i > 0) score += model.trans(tags[i - 1], tags[i]);
  }
  score += model.trans(tags.back(), model.tags.stop());
  return score;
}

// Forward recursion in log space over BIO-valid sequences.
inline double log_partition(const CrfModel& model, std::span<const FeatureVector> feats) {
  if (feats.empty()) throw internal_error("log_partition: empty sequence");
  std::vector<double> em = detail::emission_scores(model, feats);
  return detail::forward_backward(model, em, feats.size()).log_z;
}

// Per-position tag posteriors; rows sum to 1.
inline std::vector<std::vector<double>> crf_node_marginals(const CrfModel& model,
                                                           std::span<const FeatureVector> feats) {
  if (feats.empty()) throw internal_error("crf_node_marginals: empty sequence");
  const int v = model.tags.size();
  std::vector<double> em = detail::emission_scores(model, feats);
  auto fb = detail::forward_backward(model, em, feats.size());
  std::vector<std::vector<double>> marginals(feats.size(), std::vector<double>(v, 0.0));
  for (std::size_t i = 0; i < feats.size(); ++i)
    for (int y = 0; y < v; ++y) {
      double x = fb.alpha[i * v + y] + fb.beta[i * v + y] - fb.log_z;
      marginals[i][y] = x == neg_inf ? 0.0 : std::exp(x);
    }
  return marginals;
}

struct ViterbiResult {
  std::vector<int> tags;
  double score = neg_inf;
};

// Argmax over BIO-valid sequences; ties resolved toward the lowest tag index
// at the latest differing position (scanning candidates in ascending index
// with strict improvement gives exactly that).
inline ViterbiResult viterbi(const CrfModel& model, std::span<const FeatureVector> feats) {
  if (feats.empty()) throw internal_error("viterbi: empty sequence");
  const std::size_t n = feats.size();
  const int v = model.tags.size();
  std::vector<double> em = detail::emission_scores(model, feats);
  std::vector<double> delta(n * static_cast<std::size_t>(v), neg_inf);
  std::vector<int> backptr(n * static_cast<std::size_t>(v), -1);

  for (int y = 0; y < v; ++y)
    delta[y] = model.trans(model.tags.start(), y) + em[y];
  for (std::size_t i = 1; i < n; ++i) {
    const double* prev = delta.data() + (i - 1) * v;
    for (int y = 0; y < v; ++y) {
      double best = neg_inf;
      int best_p = -1;
      for (int p : model.tags.predecessors()[y]) {
        double x = prev[p] + model.trans(p, y);
        if (x > best) {
          best = x;
          best_p = p;
        }
      }
      if (best_p >= 0) {
        delta[i * v + y] = best + em[i * v + y];
        backptr[i * v + y] = best_p;
      }
    }
  }

  ViterbiResult result;
  int last = -1;
  for (int y = 0; y < v; ++y) {
    double x = delta[(n - 1) * v + y] + model.trans(y, model.tags.stop());
    if (x > result.score) {
      result.score = x;
      last = y;
    }
  }
  if (last < 0) throw internal_error("viterbi: no admissible sequence");
  result.tags.assign(n, 0);
  result.tags[n - 1] = last;
  for (std::size_t i = n - 1; i > 0; --i)
    result.tags[i - 1] = backptr[i * v + result.tags[i]];
  return result;
}

inline bool is_valid_bio(const TagSet& tags, const std::vector<int>& sequence) {
  if (sequence.empty()) return false;
  if (!tags.transition_allowed(tags.start(), sequence.front())) return false;
  for (std::size_t i = 1; i < sequence.size(); ++i)
    if (!tags.transition_allowed(sequence[i - 1], sequence[i])) return false;
  return tags.transition_allowed(sequence.back(), tags.stop());
}

// Conversions between corpus BIO tags and tag indices; label order must be
// the technique frequency order used by TagSet::techniques().
inline int bio_to_index(const TagSet& tags, const BioTag& tag) {
  if (tag.kind == BioTag::Kind::outside) return TagSet::outside_tag;
  int label = frequency_rank(tag.technique);
  if (label >= tags.label_count()) throw internal_error("technique outside tag set");
  return tag.kind == BioTag::Kind::begin ? tags.begin_tag(label) : tags.inside_tag(label);
}

inline BioTag index_to_bio(const TagSet& tags, int index) {
  if (index == TagSet::outside_tag) return BioTag::o();
  Technique t = static_cast<Technique>(tags.label_of(index));
  return tags.is_begin(index) ? BioTag::b(t) : BioTag::i(t);
}

// ---------------------------------------------------------------- training

struct CrfTrainSequence {
  std::vector<FeatureVector> features;
  std::vector<int> gold;  // tag indices
};

struct CrfGradient {
  std::map<std::string, std::vector<double>> emission;
  std::map<std::string, std::vector<double>> dense_emission;
  std::vector<double> transitions;  // same layout as the model; forbidden stay 0
};

struct CrfLoss {
  double loss = 0.0;      // data NLL + L2
  double data_nll = 0.0;  // sum of (log Z - gold score)
  CrfGradient gradient;
};

// loss = sum over the batch of (log_partition - sequence_score(gold)) plus
// (l2/2) * ||theta||^2 over emissions, dense emissions, and allowed
// transitions. The gradient covers exactly the model's parameters: expected
// feature counts from forward-backward marginals minus empirical counts.
inline CrfLoss crf_nll_and_gradient(const CrfModel& model,
                                    std::span<const CrfTrainSequence> batch, double l2) {
  const int v = model.tags.size();
  const int w = model.width();
  CrfLoss out;
  for (const auto& [id, weights] : model.emission) {
    auto& g = out.gradient.emission[id];
    g.resize(weights.size());
    for (std::size_t y = 0; y < weights.size(); ++y) g[y] = l2 * weights[y];
  }
  for (const auto& [src, weights] : model.dense_emission) {
    auto& g = out.gradient.dense_emission[src];
    g.resize(weights.size());
    for (std::size_t k = 0; k < weights.size(); ++k) g[k] = l2 * weights[k];
  }
  out.gradient.transitions.assign(model.transitions.size(), 0.0);
  double sq = 0.0;
  for (const auto& [id, weights] : model.emission)
    for (double x : weights) sq += x * x;
  for (const auto& [src, weights] : model.dense_emission)
    for (double x : weights) sq += x * x;
  for (int from = 0; from < w; ++from)
    for (int to = 0; to < w; ++to)
      if (model.tags.transition_allowed(from, to)) {
        double x = model.trans(from, to);
        sq += x * x;
        out.gradient.transitions[from * w + to] = l2 * x;
      }
  out.loss = 0.5 * l2 * sq;

  for (const auto& seq : batch) {
    const std::size_t n = seq.features.size();
    if (n == 0) throw internal_error("crf_nll_and_gradient: empty sequence");
    if (seq.gold.size() != n) throw internal_error("crf_nll_and_gradient: gold length mismatch");
    if (!is_valid_bio(model.tags, seq.gold))
      throw input_error("gold tags violate BIO validity");

    std::vector<double> em = detail::emission_scores(model, seq.features);
    auto fb = detail::forward_backward(model, em, n);

    double gold_score = model.trans(model.tags.start(), seq.gold[0]);
    for (std::size_t i = 0; i < n; ++i) {
      gold_score += em[i * v + seq.gold[i]];
      if (i > 0) gold_score += model.trans(seq.gold[i - 1], seq.gold[i]);
    }
    gold_score += model.trans(seq.gold.back(), model.tags.stop());
    double nll = fb.log_z - gold_score;
    out.data_nll += nll;
    out.loss += nll;
    if (!std::isfinite(out.loss)) return out;  // caller reports divergence

    // emission gradient: (marginal - empirical) per position/tag
    std::vector<double> coeffs(v);
    for (std::size_t i = 0; i < n; ++i) {
      for (int y = 0; y < v; ++y) {
        double lx = fb.alpha[i * v + y] + fb.beta[i * v + y] - fb.log_z;
        coeffs[y] = lx == neg_inf ? 0.0 : std::exp(lx);
      }
      coeffs[seq.gold[i]] -= 1.0;
      for (const auto& [id, value] : seq.features[i].sparse) {
        auto it = out.gradient.emission.find(id);
        if (it == out.gradient.emission.end()) continue;
        double* g = it->second.data();
        for (int y = 0; y < v; ++y) g[y] += coeffs[y] * value;
      }
      for (const auto& block : seq.features[i].dense) {
        auto& g = out.gradient.dense_emission.at(block.source);
        for (std::size_t d = 0; d < block.values.size(); ++d) {
          double x = block.values[d];
          if (x == 0.0) continue;
          double* gd = g.data() + d * static_cast<std::size_t>(v);
          for (int y = 0; y < v; ++y) gd[y] += coeffs[y] * x;
        }
      }
    }

    // transition gradient: edge posteriors minus gold edges
    const int start = model.tags.start();
    const int stop = model.tags.stop();
    for (int y = 0; y < v; ++y) {
      double lx = model.trans(start, y) + em[y] + fb.beta[y] - fb.log_z;
      if (lx != neg_inf) out.gradient.transitions[start * w + y] += std::exp(lx);
      double ls = fb.alpha[(n - 1) * v + y] + model.trans(y, stop) - fb.log_z;
      if (ls != neg_inf) out.gradient.transitions[y * w + stop] += std::exp(ls);
    }
    for (std::size_t i = 1; i < n; ++i)
      for (int y = 0; y < v; ++y) {
        double tail = em[i * v + y] + fb.beta[i * v + y];
        if (tail == neg_inf) continue;
        for (int p : model.tags.predecessors()[y]) {
          double lx = fb.alpha[(i - 1) * v + p] + model.trans(p, y) + tail - fb.log_z;
          if (lx != neg_inf) out.gradient.transitions[p * w + y] += std::exp(lx);
        }
      }
    out.gradient.transitions[start * w + seq.gold[0]] -= 1.0;
    for (std::size_t i = 1; i < n; ++i)
      out.gradient.transitions[seq.gold[i - 1] * w + seq.gold[i]] -= 1.0;
    out.gradient.transitions[seq.gold.back() * w + stop] -= 1.0;
  }
  return out;
}

struct EpochStats {
  double train_nll = 0.0;
  double dev_f = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  int selected_epoch = 0;  // 1-based
  std::string stopping_reason;
};

inline std::string format_train_report(const TrainReport& report) {
  std::string out = "epoch\ttrain_nll\tdev_f\n";
  for (std::size_t i = 0; i < report.epochs.size(); ++i)
    out += std::to_string(i + 1) + "\t" + format_fixed(report.epochs[i].train_nll, 4) + "\t" +
           format_fixed(report.epochs[i].dev_f, 4) + "\n";
  double selected_f = report.selected_epoch >= 1 &&
                              report.selected_epoch <= static_cast<int>(report.epochs.size())
                          ? report.epochs[report.selected_epoch - 1].dev_f
                          : 0.0;
  out += "selected\t" + std::to_string(report.selected_epoch) + "\t" +
         format_fixed(selected_f, 4) + "\n";
  out += "stopping\t" + report.stopping_reason + "\n";
  return out;
}

struct CrfTrainResult {
  CrfModel model;
  TrainReport report;
};

// Mini-batch gradient descent on the regularized NLL with early stopping on
// dev span-F; returns the best-dev-F snapshot. Without a dev set it runs to
// max_epochs and keeps the final model.
inline CrfTrainResult train_crf(const std::vector<TokenSequence>& train,
                                const std::vector<TokenSequence>& dev,
                                const TokenFeatureConfig& feature_config,
                                const FeatureResources& resources,
                                const CrfTrainConfig& config) {
  if (config.batch_size < 1) throw input_error("batch size must be >= 1");
  if (config.max_epochs < 0) throw input_error("epoch count must be >= 0");
  TagSet tags = TagSet::techniques();

  auto featurize = [&](const TokenSequence& seq) {
    CrfTrainSequence out;
    out.features.reserve(seq.tokens.size());
    for (std::size_t i = 0; i < seq.tokens.size(); ++i)
      out.features.push_back(assemble_token_features(seq.tokens, i, feature_config, resources));
    out.gold.reserve(seq.tags.size());
    for (const auto& t : seq.tags) out.gold.push_back(bio_to_index(tags, t));
    return out;
  };

  std::vector<CrfTrainSequence> train_data;
  for (const auto& seq : train)
    if (!seq.tokens.empty()) train_data.push_back(featurize(seq));
  if (train_data.empty()) throw input_error("no non-empty training sequences");

  std::vector<CrfTrainSequence> dev_data;
  std::vector<const TokenSequence*> dev_seqs;
  std::vector<FragmentAnnotation> dev_gold;
  for (const auto& seq : dev) {
    if (seq.tokens.empty()) continue;
    dev_data.push_back(featurize(seq));
    dev_seqs.push_back(&seq);
    for (auto& span : decode_spans(seq)) dev_gold.push_back(std::move(span));
  }

  CrfModel model = make_crf_model(std::move(tags),
                                  declared_dense_sources(feature_config, resources));
  model.feature_config = feature_config;
  model.config = config;
  for (const auto& seq : train_data)
    for (const auto& fv : seq.features)
      for (const auto& [id, value] : fv.sparse)
        model.emission.emplace(id, std::vector<double>(model.tags.size(), 0.0));

  auto dev_span_f = [&]() {
    if (dev_data.empty()) return 0.0;
    std::vector<FragmentAnnotation> predicted;
    for (std::size_t i = 0; i < dev_data.size(); ++i) {
      auto vit = viterbi(model, dev_data[i].features);
      TokenSequence tagged = *dev_seqs[i];
      tagged.tags.clear();
      for (int t : vit.tags) tagged.tags.push_back(index_to_bio(model.tags, t));
      for (auto& span : decode_spans(tagged)) predicted.push_back(std::move(span));
    }
    return flc_prf(predicted, dev_gold).overall.f1;
  };

  TrainReport report;
  CrfModel best = model;
  int best_epoch = 0;
  double best_f = -1.0;
  int wait = 0;
  SplitMix64 rng(config.seed);
  std::vector<std::size_t> order(train_data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    shuffle(order, rng);
    double epoch_nll = 0.0;
    for (std::size_t pos = 0; pos < order.size();
         pos += static_cast<std::size_t>(config.batch_size)) {
      std::size_t stop = std::min(order.size(),
                                  pos + static_cast<std::size_t>(config.batch_size));
      std::vector<CrfTrainSequence> batch;
      batch.reserve(stop - pos);
      for (std::size_t k = pos; k < stop; ++k) batch.push_back(train_data[order[k]]);

      double batch_l2 = config.l2 * static_cast<double>(batch.size());
      CrfLoss step = crf_nll_and_gradient(model, batch, batch_l2);
      if (!std::isfinite(step.loss))
        throw input_error("training diverged at epoch " + std::to_string(epoch) +
                          "; completed " + std::to_string(report.epochs.size()) +
                          " finite epochs");
      epoch_nll += step.data_nll;

      double scale = config.learning_rate / static_cast<double>(batch.size());
      for (auto& [id, weights] : model.emission) {
        const auto& g = step.gradient.emission.at(id);
        for (std::size_t y = 0; y < weights.size(); ++y) weights[y] -= scale * g[y];
      }
      for (auto& [src, weights] : model.dense_emission) {
        const auto& g = step.gradient.dense_emission.at(src);
        for (std::size_t k = 0; k < weights.size(); ++k) weights[k] -= scale * g[k];
      }
      for (std::size_t k = 0; k < model.transitions.size(); ++k)
        if (model.transitions[k] != neg_inf)
          model.transitions[k] -= scale * step.gradient.transitions[k];
    }

    bool finite = true;
    for (const auto& [id, w] : model.emission)
      for (double x : w) finite = finite && std::isfinite(x);
    for (const auto& [src, w] : model.dense_emission)
      for (double x : w) finite = finite && std::isfinite(x);
    for (double x : model.transitions) finite = finite && (x == neg_inf || std::isfinite(x));
    if (!finite)
      throw input_error("training diverged at epoch " + std::to_string(epoch) +
                        "; weights are not finite");

    double dev_f = dev_span_f();
    report.epochs.push_back({epoch_nll, dev_f});

    if (dev_data.empty()) continue;
    if (dev_f > best_f) {
      best_f = dev_f;
      best = model;
      best_epoch = epoch;
      wait = 0;
    } else {
      ++wait;
      if (wait > config.patience) {
        report.stopping_reason = "early stopping (no dev improvement in " +
                                 std::to_string(wait) + " epochs)";
        break;
      }
    }
  }

  if (dev_data.empty()) {
    report.selected_epoch = static_cast<int>(report.epochs.size());
    report.stopping_reason = "max epochs (no dev set)";
    return {std::move(model), std::move(report)};
  }
  if (report.stopping_reason.empty()) report.stopping_reason = "max epochs";
  report.selected_epoch = best_epoch;
  return {std::move(best), std::move(report)};
}

// ------------------------------------------------------------- prediction

// Featurize -> Viterbi -> decode, per sentence; offsets stay absolute.
inline std::vector<FragmentAnnotation> predict_fragments(const CrfModel& model,
                                                         const Article& article,
                                                         const TokenizerFn& tokenizer,
                                                         const FeatureResources& resources) {
  auto declared = declared_dense_sources(model.feature_config, resources);
  if (declared != model.dense_sources) {
    std::string msg = "feature resources do not match the model's dense layout:";
    for (const auto& [src, dim] : model.dense_sources)
      msg += " model " + src + "=" + std::to_string(dim);
    for (const auto& [src, dim] : declared)
      msg += " provided " + src + "=" + std::to_string(dim);
    throw input_error(msg);
  }
  std::vector<FragmentAnnotation> fragments;
  for (int si = 0; si < static_cast<int>(article.sentences.size()); ++si) {
    ByteRange range = article.sentences[si];
    TokenSequence seq;
    seq.article_id = article.id;
    seq.sentence_index = si;
    seq.tokens = tokenizer(
        std::string_view(article.text).substr(range.begin, range.length()), range.begin);
    if (seq.tokens.empty()) continue;
    std::vector<FeatureVector> feats;
    feats.reserve(seq.tokens.size());
    for (std::size_t i = 0; i < seq.tokens.size(); ++i)
      feats.push_back(assemble_token_features(seq.tokens, i, model.feature_config, resources));
    auto vit = viterbi(model, feats);
    for (int t : vit.tags) seq.tags.push_back(index_to_bio(model.tags, t));
    for (auto& span : decode_spans(seq)) fragments.push_back(std::move(span));
  }
  return fragments;
}

// ------------------------------------------------------------ serialization

namespace detail {

inline std::string token_features_to_string(const TokenFeatureConfig& c) {
  std::string out;
  auto add = [&](bool on, std::string_view name) {
    if (!on) return;
    if (!out.empty()) out += ',';
    out += name;
  };
  add(c.surface, "surface");
  add(c.lowercase, "lowercase");
  add(c.shape, "shape");
  add(c.concepts, "concepts");
  add(c.word_vectors, "wordvec");
  add(c.window, "window");
  return out.empty() ? "none" : out;
}

inline TokenFeatureConfig token_features_from_string(std::string_view s) {
  TokenFeatureConfig c;
  if (s == "none") return c;
  for (std::string_view name : split(s, ',')) {
    name = trim(name);
    if (name == "surface")
      c.surface = true;
    else if (name == "lowercase")
      c.lowercase = true;
    else if (name == "shape")
      c.shape = true;
    else if (name == "concepts")
      c.concepts = true;
    else if (name == "wordvec")
      c.word_vectors = true;
    else if (name == "window")
      c.window = true;
    else if (!name.empty())
      throw input_error("unknown token feature: '" + std::string(name) + "'");
  }
  return c;
}

inline std::string weight_row(const std::vector<double>& w, std::size_t offset,
                              std::size_t count) {
  std::string row;
  for (std::size_t k = 0; k < count; ++k) {
    if (k) row += ' ';
    double x = w[offset + k];
    row += x == neg_inf ? "-inf" : format_double(x);
  }
  return row;
}

inline std::vector<double> parse_weight_row(std::string_view row, std::size_t expected,
                                            const std::string& what) {
  std::vector<double> out;
  for (std::string_view part : split(row, ' ')) {
    if (part.empty()) continue;
    if (part == "-inf") {
      out.push_back(neg_inf);
      continue;
    }
    auto v = parse_double(part);
    if (!v) throw input_error("crf model: bad number in " + what);
    out.push_back(*v);
  }
  if (out.size() != expected)
    throw input_error("crf model: " + what + " has " + std::to_string(out.size()) +
                      " values, expected " + std::to_string(expected));
  return out;
}

}  // namespace detail

inline std::string save_crf_model(const CrfModel& model) {
  const int v = model.tags.size();
  const int w = model.width();
  std::string out = "crf-model v1\n";
  out += "config lr=" + format_double(model.config.learning_rate) +
         " l2=" + format_double(model.config.l2) +
         " epochs=" + std::to_string(model.config.max_epochs) +
         " batch=" + std::to_string(model.config.batch_size) +
         " patience=" + std::to_string(model.config.patience) +
         " seed=" + std::to_string(model.config.seed) + "\n";
  out += "token-features " + detail::token_features_to_string(model.feature_config) + "\n";
  out += "labels " + std::to_string(model.tags.label_count()) + "\n";
  for (const auto& label : model.tags.labels()) out += label + "\n";
  out += "dense-sources " + std::to_string(model.dense_sources.size()) + "\n";
  for (const auto& [src, dim] : model.dense_sources)
    out += src + " " + std::to_string(dim) + "\n";
  out += "transitions " + std::to_string(w) + "\n";
  for (int from = 0; from < w; ++from)
    out += detail::weight_row(model.transitions, static_cast<std::size_t>(from) * w, w) + "\n";
  out += "weights " + std::to_string(model.emission.size()) + "\n";
  for (const auto& [id, weights] : model.emission)
    out += id + "\t" + detail::weight_row(weights, 0, weights.size()) + "\n";
  for (const auto& [src, dim] : model.dense_sources) {
    out += "dense " + src + "\n";
    const auto& weights = model.dense_emission.at(src);
    for (int d = 0; d < dim; ++d)
      out += detail::weight_row(weights, static_cast<std::size_t>(d) * v, v) + "\n";
  }
  return out;
}

inline CrfModel load_crf_model(std::string_view text) {
  auto lines = split(text, '\n');
  std::size_t ln = 0;
  auto next_line = [&]() -> std::string_view {
    if (ln >= lines.size()) throw input_error("crf model: truncated file");
    return lines[ln++];
  };
  if (next_line() != "crf-model v1") throw input_error("crf model: bad header");

  CrfTrainConfig config;
  {
    std::string_view line = next_line();
    if (line.substr(0, 7) != "config ") throw input_error("crf model: missing config line");
    for (std::string_view kv : split(line.substr(7), ' ')) {
      auto eq = kv.find('=');
      if (eq == std::string_view::npos) throw input_error("crf model: bad config entry");
      std::string_view key = kv.substr(0, eq);
      std::string_view val = kv.substr(eq + 1);
      if (key == "lr")
        config.learning_rate = parse_double(val).value_or(config.learning_rate);
      else if (key == "l2")
        config.l2 = parse_double(val).value_or(config.l2);
      else if (key == "epochs")
        config.max_epochs = static_cast<int>(parse_int(val).value_or(config.max_epochs));
      else if (key == "batch")
        config.batch_size = static_cast<int>(parse_int(val).value_or(config.batch_size));
      else if (key == "patience")
        config.patience = static_cast<int>(parse_int(val).value_or(config.patience));
      else if (key == "seed")
        config.seed = static_cast<std::uint64_t>(parse_int(val).value_or(config.seed));
    }
  }
  TokenFeatureConfig feature_config;
  {
    std::string_view line = next_line();
    constexpr std::string_view prefix = "token-features ";
    if (line.substr(0, prefix.size()) != prefix)
      throw input_error("crf model: missing token-features line");
    feature_config = detail::token_features_from_string(line.substr(prefix.size()));
  }
  std::vector<std::string> labels;
  {
    std::string_view line = next_line();
    if (line.substr(0, 7) != "labels ") throw input_error("crf model: missing labels header");
    auto k = parse_int(line.substr(7));
    if (!k || *k < 1) throw input_error("crf model: bad label count");
    for (long long i = 0; i < *k; ++i) labels.emplace_back(next_line());
  }
  std::vector<std::pair<std::string, int>> dense_sources;
  {
    std::string_view line = next_line();
    constexpr std::string_view prefix = "dense-sources ";
    if (line.substr(0, prefix.size()) != prefix)
      throw input_error("crf model: missing dense-sources header");
    auto k = parse_int(line.substr(prefix.size()));
    if (!k || *k < 0) throw input_error("crf model: bad dense-source count");
    for (long long i = 0; i < *k; ++i) {
      std::string_view row = next_line();
      auto sp = row.rfind(' ');
      if (sp == std::string_view::npos) throw input_error("crf model: bad dense-source row");
      auto dim = parse_int(row.substr(sp + 1));
      if (!dim || *dim < 1) throw input_error("crf model: bad dense-source dim");
      dense_sources.emplace_back(std::string(row.substr(0, sp)), static_cast<int>(*dim));
    }
  }

  CrfModel model = make_crf_model(TagSet(std::move(labels)), std::move(dense_sources));
  model.config = config;
  model.feature_config = feature_config;
  const int v = model.tags.size();
  const int w = model.width();
  {
    std::string_view line = next_line();
    if (line != "transitions " + std::to_string(w))
      throw input_error("crf model: transition header mismatch");
    for (int from = 0; from < w; ++from) {
      auto row = detail::parse_weight_row(next_line(), static_cast<std::size_t>(w),
                                          "transition row " + std::to_string(from));
      for (int to = 0; to < w; ++to)
        model.trans(from, to) =
            model.tags.transition_allowed(from, to) ? row[to] : neg_inf;
    }
  }
  {
    std::string_view line = next_line();
    if (line.substr(0, 8) != "weights ") throw input_error("crf model: missing weights header");
    auto n = parse_int(line.substr(8));
    if (!n || *n < 0) throw input_error("crf model: bad weight count");
    for (long long i = 0; i < *n; ++i) {
      std::string_view row = next_line();
      auto tab = row.find('\t');
      if (tab == std::string_view::npos) throw input_error("crf model: bad weight row");
      model.emission[std::string(row.substr(0, tab))] = detail::parse_weight_row(
          row.substr(tab + 1), static_cast<std::size_t>(v), "emission row");
    }
  }
  for (const auto& [src, dim] : model.dense_sources) {
    std::string_view head = next_line();
    if (head != "dense " + src)
      throw input_error("crf model: expected dense block for " + src);
    auto& weights = model.dense_emission.at(src);
    for (int d = 0; d < dim; ++d) {
      auto row = detail::parse_weight_row(next_line(), static_cast<std::size_t>(v),
                                          "dense row of " + src);
      std::copy(row.begin(), row.end(), weights.begin() + static_cast<std::size_t>(d) * v);
    }
  }
  return model;
}

}  // namespace proptk
