#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "proptk/corpus.hpp"
#include "proptk/tokenize.hpp"

namespace proptk {

inline constexpr int concept_slot_count = 30;

struct DenseBlock {
  std::string source;
  std::vector<double> values;

  friend bool operator==(const DenseBlock&, const DenseBlock&) = default;
};

// Sparse ids map to real values; dense blocks keep their declared order so
// downstream weight layouts stay stable.
struct FeatureVector {
  std::map<std::string, double> sparse;
  std::vector<DenseBlock> dense;

  friend bool operator==(const FeatureVector&, const FeatureVector&) = default;
};

// ------------------------------------------------------------- resources

// Open replacement for proprietary category lexicons: word -> categories.
struct CategoryLexicon {
  std::vector<std::string> categories;  // ordered by first appearance
  std::unordered_map<std::string, std::vector<int>> word_categories;
};

// File format: word TAB cat1,cat2,...
inline CategoryLexicon load_category_lexicon(std::string_view text) {
  CategoryLexicon lex;
  std::map<std::string, int, std::less<>> cat_index;
  std::size_t line_no = 0;
  for (std::string_view line : split(text, '\n')) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty() || line.front() == '#') continue;
    auto fields = split(line, '\t');
    if (fields.size() != 2)
      throw input_error("lexicon: expected 2 tab-separated fields at line " +
                        std::to_string(line_no));
    std::string word = to_lower_ascii(trim(fields[0]));
    if (word.empty()) throw input_error("lexicon: empty word at line " + std::to_string(line_no));
    std::vector<int>& cats = lex.word_categories[word];
    for (std::string_view cat : split(fields[1], ',')) {
      cat = trim(cat);
      if (cat.empty()) continue;
      auto it = cat_index.find(cat);
      if (it == cat_index.end()) {
        it = cat_index.emplace(std::string(cat), static_cast<int>(lex.categories.size())).first;
        lex.categories.emplace_back(cat);
      }
      if (std::find(cats.begin(), cats.end(), it->second) == cats.end())
        cats.push_back(it->second);
    }
  }
  return lex;
}

// Word -> subset of a fixed 30-slot concept inventory.
struct ConceptDictionary {
  std::vector<std::string> concepts;  // exactly 30, declared by the file header
  std::unordered_map<std::string, std::uint32_t> word_bits;
};

// File format: header "#concepts: c1,...,c30", then word TAB concept1,concept2,...
inline ConceptDictionary load_concept_dictionary(std::string_view text) {
  ConceptDictionary dict;
  std::size_t line_no = 0;
  bool header_seen = false;
  for (std::string_view line : split(text, '\n')) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    if (!header_seen) {
      constexpr std::string_view prefix = "#concepts:";
      if (line.substr(0, prefix.size()) != prefix)
        throw input_error("concept dictionary: missing '#concepts:' header at line " +
                          std::to_string(line_no));
      for (std::string_view c : split(line.substr(prefix.size()), ',')) {
        c = trim(c);
        if (c.empty())
          throw input_error("concept dictionary: empty concept name in header");
        dict.concepts.emplace_back(c);
      }
      if (static_cast<int>(dict.concepts.size()) != concept_slot_count)
        throw input_error("concept dictionary: header declares " +
                          std::to_string(dict.concepts.size()) + " concepts, need exactly " +
                          std::to_string(concept_slot_count));
      header_seen = true;
      continue;
    }
    auto fields = split(line, '\t');
    if (fields.size() != 2)
      throw input_error("concept dictionary: expected 2 tab-separated fields at line " +
                        std::to_string(line_no));
    std::string word = to_lower_ascii(trim(fields[0]));
    std::uint32_t bits = 0;
    for (std::string_view c : split(fields[1], ',')) {
      c = trim(c);
      if (c.empty()) continue;
      auto it = std::find(dict.concepts.begin(), dict.concepts.end(), c);
      if (it == dict.concepts.end())
        throw input_error("concept dictionary: unknown concept '" + std::string(c) +
                          "' at line " + std::to_string(line_no));
      bits |= 1u << (it - dict.concepts.begin());
    }
    dict.word_bits[word] |= bits;
  }
  if (!header_seen) throw input_error("concept dictionary: empty file");
  return dict;
}

// Externally produced per-sentence class probabilities.
struct ExternalLogits {
  std::map<std::pair<std::string, int>, std::pair<double, double>> by_sentence;  // (p_prop, p_nonprop)
};

// TSV: article_id TAB sentence_index TAB p_prop TAB p_nonprop.
inline ExternalLogits load_external_logits(std::string_view text) {
  ExternalLogits logits;
  std::size_t line_no = 0;
  for (std::string_view line : split(text, '\n')) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    auto fields = split(line, '\t');
    if (fields.size() != 4)
      throw input_error("logits: expected 4 tab-separated fields at line " +
                        std::to_string(line_no));
    auto idx = parse_int(fields[1]);
    auto p_prop = parse_double(fields[2]);
    auto p_nonprop = parse_double(fields[3]);
    if (!idx || *idx < 0 || !p_prop || !p_nonprop || !std::isfinite(*p_prop) ||
        !std::isfinite(*p_nonprop))
      throw input_error("logits: malformed row at line " + std::to_string(line_no));
    if (*p_prop < 0.0 || *p_prop > 1.0 || *p_nonprop < 0.0 || *p_nonprop > 1.0)
      throw input_error("logits: probability outside [0,1] at line " + std::to_string(line_no));
    if (std::abs(*p_prop + *p_nonprop - 1.0) > 1e-6)
      throw input_error("logits: probabilities do not sum to 1 at line " +
                        std::to_string(line_no));
    logits.by_sentence[{std::string(fields[0]), static_cast<int>(*idx)}] = {*p_prop, *p_nonprop};
  }
  return logits;
}

// Pretrained word vectors, loaded as-is; out-of-vocabulary words map to zero.
struct WordVectorTable {
  int dim = 0;
  std::unordered_map<std::string, std::vector<double>> vectors;

  std::vector<double> lookup(std::string_view word) const {
    auto it = vectors.find(std::string(word));
    if (it == vectors.end()) it = vectors.find(to_lower_ascii(word));
    if (it == vectors.end()) return std::vector<double>(dim, 0.0);
    return it->second;
  }
};

// One "word v1 v2 ... vd" per line, whitespace separated.
inline WordVectorTable load_word_vectors(std::string_view text) {
  WordVectorTable table;
  std::size_t line_no = 0;
  for (std::string_view line : split(text, '\n')) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (trim(line).empty()) continue;
    std::vector<std::string_view> parts;
    std::size_t i = 0;
    while (i < line.size()) {
      while (i < line.size() && is_ascii_space(static_cast<unsigned char>(line[i]))) ++i;
      std::size_t b = i;
      while (i < line.size() && !is_ascii_space(static_cast<unsigned char>(line[i]))) ++i;
      if (i > b) parts.push_back(line.substr(b, i - b));
    }
    if (parts.size() < 2)
      throw input_error("word vectors: need a word and at least one value at line " +
                        std::to_string(line_no));
    std::vector<double> values;
    values.reserve(parts.size() - 1);
    for (std::size_t k = 1; k < parts.size(); ++k) {
      auto v = parse_double(parts[k]);
      if (!v || !std::isfinite(*v))
        throw input_error("word vectors: bad number at line " + std::to_string(line_no));
      values.push_back(*v);
    }
    if (table.dim == 0)
      table.dim = static_cast<int>(values.size());
    else if (static_cast<int>(values.size()) != table.dim)
      throw input_error("word vectors: ragged row at line " + std::to_string(line_no) +
                        " (expected " + std::to_string(table.dim) + " values, got " +
                        std::to_string(values.size()) + ")");
    table.vectors[std::string(parts[0])] = std::move(values);
  }
  return table;
}

// ------------------------------------------------------------ feature ops

inline FeatureVector lexicon_features(std::span<const Token> tokens,
                                      const CategoryLexicon& lex) {
  FeatureVector fv;
  if (tokens.empty()) return fv;
  std::vector<int> counts(lex.categories.size(), 0);
  for (const Token& tok : tokens) {
    auto it = lex.word_categories.find(to_lower_ascii(tok.surface));
    if (it == lex.word_categories.end()) continue;
    for (int cat : it->second) ++counts[cat];
  }
  for (std::size_t c = 0; c < counts.size(); ++c)
    if (counts[c] > 0)
      fv.sparse["lex:" + lex.categories[c]] =
          static_cast<double>(counts[c]) / static_cast<double>(tokens.size());
  return fv;
}

inline FeatureVector punctuation_features(std::string_view sentence_text) {
  FeatureVector fv;
  bool quote = sentence_text.find('"') != std::string_view::npos ||
               sentence_text.find("\xE2\x80\x9C") != std::string_view::npos ||
               sentence_text.find("\xE2\x80\x9D") != std::string_view::npos;
  if (quote) fv.sparse["punct:quote"] = 1.0;
  if (sentence_text.find('?') != std::string_view::npos) fv.sparse["punct:question"] = 1.0;
  return fv;
}

inline std::vector<double> concept_onehot(std::string_view token_surface,
                                          const ConceptDictionary& dict) {
  std::vector<double> out(concept_slot_count, 0.0);
  auto it = dict.word_bits.find(to_lower_ascii(token_surface));
  if (it != dict.word_bits.end())
    for (int i = 0; i < concept_slot_count; ++i)
      if (it->second & (1u << i)) out[i] = 1.0;
  return out;
}

// X for uppercase, x for lowercase, d for digits; everything else kept as-is.
inline std::string shape_of(std::string_view surface) {
  std::string shape;
  shape.reserve(surface.size());
  for (char raw : surface) {
    unsigned char c = static_cast<unsigned char>(raw);
    if (c >= 'A' && c <= 'Z')
      shape += 'X';
    else if (c >= 'a' && c <= 'z')
      shape += 'x';
    else if (c >= '0' && c <= '9')
      shape += 'd';
    else
      shape += raw;
  }
  return shape;
}

namespace detail {

inline void check_dense_blocks(const std::vector<std::pair<std::string, int>>& declared,
                               const FeatureVector& fv) {
  if (fv.dense.size() != declared.size())
    throw input_error("feature vector has " + std::to_string(fv.dense.size()) +
                      " dense blocks, model declares " + std::to_string(declared.size()));
  for (std::size_t i = 0; i < declared.size(); ++i) {
    if (fv.dense[i].source != declared[i].first)
      throw input_error("dense block '" + fv.dense[i].source + "' does not match declared '" +
                        declared[i].first + "'");
    if (static_cast<int>(fv.dense[i].values.size()) != declared[i].second)
      throw input_error("dense block '" + fv.dense[i].source + "' has dim " +
                        std::to_string(fv.dense[i].values.size()) + ", model declares " +
                        std::to_string(declared[i].second));
  }
}

}  // namespace detail

// --------------------------------------------------------------- assembly

struct SentenceFeatureConfig {
  bool lexicon = false;
  bool punctuation = false;
  bool external_logits = false;
  bool tagged_span_flag = false;
  bool context = false;

  friend bool operator==(const SentenceFeatureConfig&, const SentenceFeatureConfig&) = default;
};

struct TokenFeatureConfig {
  bool surface = false;
  bool lowercase = false;
  bool shape = false;
  bool concepts = false;
  bool word_vectors = false;
  bool window = false;  // +-1 surface with boundary sentinels

  friend bool operator==(const TokenFeatureConfig&, const TokenFeatureConfig&) = default;
};

using SentenceKey = std::pair<std::string, int>;

// Immutable after load; shared freely across extraction calls.
struct FeatureResources {
  const CategoryLexicon* lexicon = nullptr;
  const ConceptDictionary* concepts = nullptr;
  const WordVectorTable* word_vectors = nullptr;
  const ExternalLogits* logits = nullptr;
  const std::set<SentenceKey>* tagged_sentences = nullptr;
};

// Sentences that overlap at least one fragment; feeds the tagged-span flag.
inline std::set<SentenceKey> sentences_with_fragments(
    const std::vector<Article>& articles, const std::vector<FragmentAnnotation>& fragments) {
  std::set<SentenceKey> keys;
  for (const auto& article : articles)
    for (int i = 0; i < static_cast<int>(article.sentences.size()); ++i)
      for (const auto& frag : fragments)
        if (frag.article_id == article.id && overlaps(frag.span, article.sentences[i])) {
          keys.insert({article.id, i});
          break;
        }
  return keys;
}

inline FeatureVector assemble_sentence_features(const SentenceExample& example,
                                                const SentenceFeatureConfig& config,
                                                const FeatureResources& resources) {
  FeatureVector fv;
  std::vector<Token> tokens;
  if (config.lexicon || config.context) tokens = tokenize(example.text);

  if (config.lexicon) {
    if (!resources.lexicon) throw input_error("feature config needs a category lexicon");
    for (auto& [id, v] : lexicon_features(tokens, *resources.lexicon).sparse)
      fv.sparse[id] = v;
  }
  if (config.punctuation)
    for (auto& [id, v] : punctuation_features(example.text).sparse) fv.sparse[id] = v;

  if (config.external_logits) {
    if (!resources.logits) throw input_error("feature config needs an external logits file");
    auto it = resources.logits->by_sentence.find({example.article_id, example.sentence_index});
    if (it == resources.logits->by_sentence.end())
      throw input_error("no logits for sentence " + example.article_id + ":" +
                        std::to_string(example.sentence_index));
    fv.sparse["logit:prop"] = it->second.first;
    fv.sparse["logit:nonprop"] = it->second.second;
  }
  if (config.tagged_span_flag) {
    if (!resources.tagged_sentences)
      throw input_error("feature config needs tagged-span predictions");
    if (resources.tagged_sentences->count({example.article_id, example.sentence_index}))
      fv.sparse["flc:has_fragment"] = 1.0;
  }
  if (config.context) {
    if (!resources.lexicon) throw input_error("feature config needs a category lexicon");
    // Neighbors pooled into one pseudo-sentence; ids prefixed so they can
    // never collide with the target sentence's features.
    std::vector<Token> ctx_tokens;
    std::string ctx_text;
    for (const auto& s : example.context_before) {
      for (auto& t : tokenize(s)) ctx_tokens.push_back(std::move(t));
      ctx_text += s;
      ctx_text += '\n';
    }
    for (const auto& s : example.context_after) {
      for (auto& t : tokenize(s)) ctx_tokens.push_back(std::move(t));
      ctx_text += s;
      ctx_text += '\n';
    }
    for (auto& [id, v] : lexicon_features(ctx_tokens, *resources.lexicon).sparse)
      fv.sparse["ctx:" + id] = v;
    for (auto& [id, v] : punctuation_features(ctx_text).sparse) fv.sparse["ctx:" + id] = v;
  }
  return fv;
}

// Dense layout implied by a token config: word vectors first, then concepts.
inline std::vector<std::pair<std::string, int>> declared_dense_sources(
    const TokenFeatureConfig& config, const FeatureResources& resources) {
  std::vector<std::pair<std::string, int>> sources;
  if (config.word_vectors) {
    if (!resources.word_vectors) throw input_error("feature config needs word vectors");
    sources.emplace_back("wordvec", resources.word_vectors->dim);
  }
  if (config.concepts) {
    if (!resources.concepts) throw input_error("feature config needs a concept dictionary");
    sources.emplace_back("concepts", concept_slot_count);
  }
  return sources;
}

inline FeatureVector assemble_token_features(std::span<const Token> tokens, std::size_t i,
                                             const TokenFeatureConfig& config,
                                             const FeatureResources& resources) {
  if (i >= tokens.size()) throw internal_error("token position out of range");
  FeatureVector fv;
  const Token& tok = tokens[i];
  if (config.surface) fv.sparse["w:" + tok.surface] = 1.0;
  if (config.lowercase) fv.sparse["lw:" + to_lower_ascii(tok.surface)] = 1.0;
  if (config.shape) fv.sparse["shape:" + shape_of(tok.surface)] = 1.0;
  if (config.window) {
    fv.sparse["prev:" + (i > 0 ? tokens[i - 1].surface : std::string("<s>"))] = 1.0;
    fv.sparse["next:" + (i + 1 < tokens.size() ? tokens[i + 1].surface : std::string("</s>"))] =
        1.0;
  }
  if (config.word_vectors) {
    if (!resources.word_vectors) throw input_error("feature config needs word vectors");
    fv.dense.push_back({"wordvec", resources.word_vectors->lookup(tok.surface)});
  }
  if (config.concepts) {
    if (!resources.concepts) throw input_error("feature config needs a concept dictionary");
    fv.dense.push_back({"concepts", concept_onehot(tok.surface, *resources.concepts)});
  }
  return fv;
}

}  // namespace proptk
