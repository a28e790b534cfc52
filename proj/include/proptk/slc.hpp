#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "proptk/corpus.hpp"
#include "proptk/eval.hpp"
#include "proptk/features.hpp"
#include "proptk/util.hpp"

namespace proptk {

// Final operating point and the stricter preset used in feature-ablation
// experiment runs.
inline constexpr double default_tau = 0.70;
inline constexpr double experiment_tau = 0.80;

struct SlcTrainConfig {
  double learning_rate = 0.1;
  double l2 = 1e-4;
  int epochs = 3;
  int batch_size = 16;
  std::uint64_t seed = 1;
};

// Regularized logistic regression scoring the non-propaganda probability,
// decided by the asymmetric threshold rule.
struct SlcModel {
  std::map<std::string, double> weights;
  std::map<std::string, std::vector<double>> dense_weights;
  std::vector<std::pair<std::string, int>> dense_sources;
  double bias = 0.0;
  double tau = default_tau;
  SentenceFeatureConfig features;
  SlcTrainConfig config;
};

struct SlcPrediction {
  std::string article_id;
  int sentence_index = 0;
  double p_non_propaganda = 0.5;
  SentenceLabel label = SentenceLabel::propaganda;
};

using LabeledFeatures = std::pair<FeatureVector, SentenceLabel>;

namespace detail {

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + exp(-z)) without overflow
inline double log1p_exp_neg(double z) {
  if (z >= 0.0) return std::log1p(std::exp(-z));
  return -z + std::log1p(std::exp(z));
}

}  // namespace detail

inline double decision_score(const SlcModel& model, const FeatureVector& fv) {
  detail::check_dense_blocks(model.dense_sources, fv);
  double z = model.bias;
  for (const auto& [id, v] : fv.sparse) {
    auto it = model.weights.find(id);
    if (it != model.weights.end()) z += it->second * v;
  }
  for (const auto& block : fv.dense) {
    const auto& w = model.dense_weights.at(block.source);
    for (std::size_t d = 0; d < block.values.size(); ++d) z += w[d] * block.values[d];
  }
  return z;
}

// Score oriented as the non-propaganda probability.
inline double predict_proba(const SlcModel& model, const FeatureVector& fv) {
  return detail::sigmoid(decision_score(model, fv));
}

// Non-propaganda only when its probability strictly exceeds tau; otherwise
// propaganda, even when non-propaganda holds the majority of the mass.
inline SentenceLabel apply_threshold(double p_non_propaganda, double tau) {
  return p_non_propaganda > tau ? SentenceLabel::non_propaganda : SentenceLabel::propaganda;
}

// ---------------------------------------------------------------- training

struct SlcGradient {
  std::map<std::string, double> weights;
  std::map<std::string, std::vector<double>> dense_weights;
  double bias = 0.0;
};

// loss = sum of per-example NLL + (l2/2) * ||weights||^2 (bias unregularized);
// the gradient covers exactly the model's parameters.
inline std::pair<double, SlcGradient> lr_nll_and_gradient(
    const SlcModel& model, std::span<const LabeledFeatures> batch, double l2) {
  SlcGradient grad;
  for (const auto& [id, w] : model.weights) grad.weights[id] = l2 * w;
  for (const auto& [src, w] : model.dense_weights)
    grad.dense_weights[src] = std::vector<double>(w.size(), 0.0);

  double loss = 0.0;
  for (const auto& [fv, label] : batch) {
    double z = decision_score(model, fv);
    double y = label == SentenceLabel::non_propaganda ? 1.0 : 0.0;
    loss += detail::log1p_exp_neg(z) + (1.0 - y) * z;
    double coeff = detail::sigmoid(z) - y;
    grad.bias += coeff;
    for (const auto& [id, v] : fv.sparse) {
      auto it = grad.weights.find(id);
      if (it != grad.weights.end()) it->second += coeff * v;
    }
    for (const auto& block : fv.dense) {
      auto& g = grad.dense_weights.at(block.source);
      for (std::size_t d = 0; d < block.values.size(); ++d) g[d] += coeff * block.values[d];
    }
  }
  double sq = 0.0;
  for (const auto& [id, w] : model.weights) sq += w * w;
  for (const auto& [src, w] : model.dense_weights)
    for (double v : w) sq += v * v;
  for (auto& [src, g] : grad.dense_weights) {
    const auto& w = model.dense_weights.at(src);
    for (std::size_t d = 0; d < g.size(); ++d) g[d] += l2 * w[d];
  }
  loss += 0.5 * l2 * sq;
  return {loss, std::move(grad)};
}

// Mini-batch gradient descent on the regularized NLL; deterministic given
// data order, seed, and config. Zero epochs returns the untouched zero model.
inline SlcModel train_logreg(const std::vector<LabeledFeatures>& examples,
                             const SlcTrainConfig& config) {
  if (examples.empty()) throw input_error("no training examples");
  bool has_prop = false, has_nonprop = false;
  for (const auto& [fv, label] : examples)
    (label == SentenceLabel::propaganda ? has_prop : has_nonprop) = true;
  if (!has_prop || !has_nonprop)
    throw input_error("training data contains a single class; need both labels");
  if (config.batch_size < 1) throw input_error("batch size must be >= 1");
  if (config.epochs < 0) throw input_error("epoch count must be >= 0");

  SlcModel model;
  model.config = config;
  for (const auto& [fv, label] : examples)
    for (const auto& [id, v] : fv.sparse) model.weights.emplace(id, 0.0);
  if (!examples.empty()) {
    for (const auto& block : examples.front().first.dense) {
      model.dense_sources.emplace_back(block.source, static_cast<int>(block.values.size()));
      model.dense_weights.emplace(block.source,
                                  std::vector<double>(block.values.size(), 0.0));
    }
    for (const auto& [fv, label] : examples)
      detail::check_dense_blocks(model.dense_sources, fv);
  }

  SplitMix64 rng(config.seed);
  std::vector<std::size_t> order(examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    shuffle(order, rng);
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(config.batch_size)) {
      std::size_t stop = std::min(order.size(),
                                  start + static_cast<std::size_t>(config.batch_size));
      std::vector<LabeledFeatures> batch;
      batch.reserve(stop - start);
      for (std::size_t k = start; k < stop; ++k) batch.push_back(examples[order[k]]);

      double batch_l2 = config.l2 * static_cast<double>(batch.size());
      auto [loss, grad] = lr_nll_and_gradient(model, batch, batch_l2);
      if (!std::isfinite(loss))
        throw input_error("training diverged at epoch " + std::to_string(epoch) +
                          "; last finite epoch " + std::to_string(epoch - 1));
      double scale = config.learning_rate / static_cast<double>(batch.size());
      model.bias -= scale * grad.bias;
      for (auto& [id, w] : model.weights) w -= scale * grad.weights[id];
      for (auto& [src, w] : model.dense_weights) {
        const auto& g = grad.dense_weights.at(src);
        for (std::size_t d = 0; d < w.size(); ++d) w[d] -= scale * g[d];
      }
    }
  }
  bool finite = std::isfinite(model.bias);
  for (const auto& [id, w] : model.weights) finite = finite && std::isfinite(w);
  for (const auto& [src, w] : model.dense_weights)
    for (double v : w) finite = finite && std::isfinite(v);
  if (!finite)
    throw input_error("training diverged at epoch " + std::to_string(config.epochs) +
                      "; weights are not finite");
  return model;
}

// ---------------------------------------------------------------- sweeping

struct SweepRow {
  double tau = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  double best_tau = 0.5;
};

// P/R/F of the propaganda class at each grid point. Best-F tau, ties broken
// toward 0.5 (then toward the smaller tau).
inline SweepResult sweep_threshold(const std::vector<std::pair<double, SentenceLabel>>& scored,
                                   const std::vector<double>& grid) {
  if (scored.empty()) throw input_error("empty dev set for threshold sweep");
  if (grid.empty()) throw input_error("empty threshold grid");
  for (double tau : grid)
    if (!(tau > 0.0 && tau < 1.0))
      throw input_error("grid threshold outside (0,1): " + format_double(tau));

  SweepResult result;
  bool first = true;
  double best_f = 0.0;
  for (double tau : grid) {
    long tp = 0, fp = 0, fn = 0, tn = 0;
    for (const auto& [p_non, gold] : scored) {
      bool pred_prop = apply_threshold(p_non, tau) == SentenceLabel::propaganda;
      bool gold_prop = gold == SentenceLabel::propaganda;
      if (pred_prop && gold_prop)
        ++tp;
      else if (pred_prop)
        ++fp;
      else if (gold_prop)
        ++fn;
      else
        ++tn;
    }
    SlcReport report = slc_report_from_counts(tp, fp, fn, tn);
    result.rows.push_back({tau, report.precision, report.recall, report.f1});
    bool better = first || report.f1 > best_f ||
                  (report.f1 == best_f &&
                   (std::abs(tau - 0.5) < std::abs(result.best_tau - 0.5) ||
                    (std::abs(tau - 0.5) == std::abs(result.best_tau - 0.5) &&
                     tau < result.best_tau)));
    if (better) {
      best_f = report.f1;
      result.best_tau = tau;
      first = false;
    }
  }
  return result;
}

inline SweepResult sweep_threshold(const SlcModel& model,
                                   const std::vector<LabeledFeatures>& dev,
                                   const std::vector<double>& grid) {
  std::vector<std::pair<double, SentenceLabel>> scored;
  scored.reserve(dev.size());
  for (const auto& [fv, label] : dev) scored.emplace_back(predict_proba(model, fv), label);
  return sweep_threshold(scored, grid);
}

// ---------------------------------------------------------------- analysis

struct TechniqueAccuracy {
  Technique technique = Technique::loaded_language;
  std::size_t count = 0;
  double accuracy = 0.0;  // fraction of covering sentences predicted propaganda
};

inline std::vector<TechniqueAccuracy> analyze_by_technique(
    const std::vector<SlcPrediction>& predictions, const std::vector<SentenceExample>& gold,
    std::size_t min_count) {
  std::map<std::pair<std::string, int>, SentenceLabel> pred_by_key;
  for (const auto& p : predictions) pred_by_key[{p.article_id, p.sentence_index}] = p.label;

  std::array<std::size_t, technique_count> totals{};
  std::array<std::size_t, technique_count> hits{};
  for (const auto& ex : gold) {
    if (ex.covering_techniques.empty()) continue;
    auto it = pred_by_key.find({ex.article_id, ex.sentence_index});
    if (it == pred_by_key.end())
      throw input_error("missing prediction for sentence " + ex.article_id + ":" +
                        std::to_string(ex.sentence_index));
    bool predicted_prop = it->second == SentenceLabel::propaganda;
    for (Technique t : ex.covering_techniques) {
      ++totals[static_cast<int>(t)];
      if (predicted_prop) ++hits[static_cast<int>(t)];
    }
  }
  std::vector<TechniqueAccuracy> rows;
  for (int i = 0; i < technique_count; ++i) {
    if (totals[i] < min_count) continue;
    rows.push_back({static_cast<Technique>(i), totals[i],
                    static_cast<double>(hits[i]) / static_cast<double>(totals[i])});
  }
  return rows;
}

// ------------------------------------------------------------ serialization

namespace detail {

inline std::string sentence_features_to_string(const SentenceFeatureConfig& c) {
  std::string out;
  auto add = [&](bool on, std::string_view name) {
    if (!on) return;
    if (!out.empty()) out += ',';
    out += name;
  };
  add(c.lexicon, "lexicon");
  add(c.punctuation, "punctuation");
  add(c.external_logits, "logits");
  add(c.tagged_span_flag, "tagged-span");
  add(c.context, "context");
  return out.empty() ? "none" : out;
}

inline SentenceFeatureConfig sentence_features_from_string(std::string_view s) {
  SentenceFeatureConfig c;
  if (s == "none") return c;
  for (std::string_view name : split(s, ',')) {
    name = trim(name);
    if (name == "lexicon")
      c.lexicon = true;
    else if (name == "punctuation")
      c.punctuation = true;
    else if (name == "logits")
      c.external_logits = true;
    else if (name == "tagged-span")
      c.tagged_span_flag = true;
    else if (name == "context")
      c.context = true;
    else if (!name.empty())
      throw input_error("unknown sentence feature: '" + std::string(name) + "'");
  }
  return c;
}

}  // namespace detail

inline std::string save_slc_model(const SlcModel& model) {
  std::string out = "slc-model v1 tau=" + format_double(model.tau) + "\n";
  out += "config lr=" + format_double(model.config.learning_rate) +
         " l2=" + format_double(model.config.l2) +
         " epochs=" + std::to_string(model.config.epochs) +
         " batch=" + std::to_string(model.config.batch_size) +
         " seed=" + std::to_string(model.config.seed) + "\n";
  out += "features " + detail::sentence_features_to_string(model.features) + "\n";
  out += "bias " + format_double(model.bias) + "\n";
  out += "weights " + std::to_string(model.weights.size()) + "\n";
  for (const auto& [id, w] : model.weights) out += id + "\t" + format_double(w) + "\n";
  out += "dense-sources " + std::to_string(model.dense_sources.size()) + "\n";
  for (const auto& [src, dim] : model.dense_sources)
    out += src + " " + std::to_string(dim) + "\n";
  for (const auto& [src, dim] : model.dense_sources) {
    out += "dense " + src + "\n";
    const auto& w = model.dense_weights.at(src);
    std::string row;
    for (std::size_t d = 0; d < w.size(); ++d) {
      if (d) row += ' ';
      row += format_double(w[d]);
    }
    out += row + "\n";
  }
  return out;
}

inline SlcModel load_slc_model(std::string_view text) {
  auto lines = split(text, '\n');
  std::size_t ln = 0;
  auto next_line = [&]() -> std::string_view {
    if (ln >= lines.size()) throw input_error("slc model: truncated file");
    return lines[ln++];
  };
  auto fail = [&](const std::string& what) -> input_error {
    return input_error("slc model: " + what + " at line " + std::to_string(ln));
  };

  SlcModel model;
  {
    std::string_view header = next_line();
    constexpr std::string_view prefix = "slc-model v1 tau=";
    if (header.substr(0, prefix.size()) != prefix) throw fail("bad header");
    auto tau = parse_double(header.substr(prefix.size()));
    if (!tau || !(*tau > 0.0 && *tau < 1.0)) throw fail("bad tau");
    model.tau = *tau;
  }
  {
    std::string_view line = next_line();
    if (line.substr(0, 7) != "config ") throw fail("missing config line");
    for (std::string_view kv : split(line.substr(7), ' ')) {
      auto eq = kv.find('=');
      if (eq == std::string_view::npos) throw fail("bad config entry");
      std::string_view key = kv.substr(0, eq);
      std::string_view val = kv.substr(eq + 1);
      if (key == "lr")
        model.config.learning_rate = parse_double(val).value_or(model.config.learning_rate);
      else if (key == "l2")
        model.config.l2 = parse_double(val).value_or(model.config.l2);
      else if (key == "epochs")
        model.config.epochs = static_cast<int>(parse_int(val).value_or(model.config.epochs));
      else if (key == "batch")
        model.config.batch_size =
            static_cast<int>(parse_int(val).value_or(model.config.batch_size));
      else if (key == "seed")
        model.config.seed =
            static_cast<std::uint64_t>(parse_int(val).value_or(model.config.seed));
    }
  }
  {
    std::string_view line = next_line();
    if (line.substr(0, 9) != "features ") throw fail("missing features line");
    model.features = detail::sentence_features_from_string(line.substr(9));
  }
  {
    std::string_view line = next_line();
    if (line.substr(0, 5) != "bias ") throw fail("missing bias line");
    auto bias = parse_double(line.substr(5));
    if (!bias) throw fail("bad bias");
    model.bias = *bias;
  }
  {
    std::string_view line = next_line();
    if (line.substr(0, 8) != "weights ") throw fail("missing weights header");
    auto n = parse_int(line.substr(8));
    if (!n || *n < 0) throw fail("bad weight count");
    for (long long i = 0; i < *n; ++i) {
      std::string_view row = next_line();
      auto tab = row.find('\t');
      if (tab == std::string_view::npos) throw fail("bad weight row");
      auto w = parse_double(row.substr(tab + 1));
      if (!w) throw fail("bad weight value");
      model.weights[std::string(row.substr(0, tab))] = *w;
    }
  }
  {
    std::string_view line = next_line();
    constexpr std::string_view prefix = "dense-sources ";
    if (line.substr(0, prefix.size()) != prefix) throw fail("missing dense-sources header");
    auto k = parse_int(line.substr(prefix.size()));
    if (!k || *k < 0) throw fail("bad dense-source count");
    for (long long i = 0; i < *k; ++i) {
      std::string_view row = next_line();
      auto sp = row.rfind(' ');
      if (sp == std::string_view::npos) throw fail("bad dense-source row");
      auto dim = parse_int(row.substr(sp + 1));
      if (!dim || *dim < 1) throw fail("bad dense-source dim");
      model.dense_sources.emplace_back(std::string(row.substr(0, sp)),
                                       static_cast<int>(*dim));
    }
    for (const auto& [src, dim] : model.dense_sources) {
      std::string_view head = next_line();
      if (head != "dense " + src) throw fail("expected dense block for " + src);
      std::string_view row = next_line();
      std::vector<double> w;
      for (std::string_view part : split(row, ' ')) {
        if (part.empty()) continue;
        auto v = parse_double(part);
        if (!v) throw fail("bad dense weight");
        w.push_back(*v);
      }
      if (static_cast<int>(w.size()) != dim) throw fail("dense block length mismatch");
      model.dense_weights[src] = std::move(w);
    }
  }
  return model;
}

}  // namespace proptk
