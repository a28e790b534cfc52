#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "proptk/technique.hpp"
#include "proptk/util.hpp"

namespace proptk {

// Half-open byte range [begin, end) into an article's UTF-8 text.
struct ByteRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t length() const { return end - begin; }
  bool empty() const { return end <= begin; }
  bool contains(std::size_t pos) const { return pos >= begin && pos < end; }

  friend bool operator==(const ByteRange&, const ByteRange&) = default;
  friend auto operator<=>(const ByteRange&, const ByteRange&) = default;
};

inline std::size_t overlap_length(ByteRange a, ByteRange b) {
  std::size_t lo = std::max(a.begin, b.begin);
  std::size_t hi = std::min(a.end, b.end);
  return hi > lo ? hi - lo : 0;
}

inline bool overlaps(ByteRange a, ByteRange b) { return overlap_length(a, b) > 0; }

inline ByteRange intersect(ByteRange a, ByteRange b) {
  std::size_t lo = std::max(a.begin, b.begin);
  std::size_t hi = std::min(a.end, b.end);
  if (hi <= lo) return {0, 0};
  return {lo, hi};
}

struct Article {
  std::string id;
  std::string text;
  std::vector<ByteRange> sentences;  // sorted, non-overlapping, one per non-empty line
};

struct FragmentAnnotation {
  std::string article_id;
  Technique technique = Technique::loaded_language;
  ByteRange span;

  friend bool operator==(const FragmentAnnotation&, const FragmentAnnotation&) = default;
  friend auto operator<=>(const FragmentAnnotation&, const FragmentAnnotation&) = default;
};

enum class SentenceLabel { propaganda, non_propaganda };

inline std::string_view to_string(SentenceLabel l) {
  return l == SentenceLabel::propaganda ? "propaganda" : "non-propaganda";
}

inline std::optional<SentenceLabel> parse_sentence_label(std::string_view s) {
  if (s == "propaganda") return SentenceLabel::propaganda;
  if (s == "non-propaganda") return SentenceLabel::non_propaganda;
  return std::nullopt;
}

struct SentenceExample {
  std::string article_id;
  int sentence_index = 0;
  std::string text;
  std::vector<std::string> context_before;  // up to 2, in document order
  std::vector<std::string> context_after;   // up to 2, in document order
  SentenceLabel label = SentenceLabel::non_propaganda;
  std::set<Technique> covering_techniques;
};

struct Token {
  std::string surface;
  ByteRange range;  // absolute article offsets

  friend bool operator==(const Token&, const Token&) = default;
};

struct BioTag {
  enum class Kind { outside, begin, inside };
  Kind kind = Kind::outside;
  Technique technique = Technique::loaded_language;  // meaningful for begin/inside only

  static BioTag o() { return {}; }
  static BioTag b(Technique t) { return {Kind::begin, t}; }
  static BioTag i(Technique t) { return {Kind::inside, t}; }

  friend bool operator==(const BioTag&, const BioTag&) = default;
};

struct TokenSequence {
  std::string article_id;
  int sentence_index = 0;
  std::vector<Token> tokens;
  std::vector<BioTag> tags;  // same length as tokens
};

using TokenizerFn = std::function<std::vector<Token>(std::string_view, std::size_t)>;

// ------------------------------------------------------------------ parsing

// One sentence per newline-terminated line; empty lines yield no sentence.
// Offsets index the original raw text, newlines included.
inline Article parse_article(std::string_view raw_text, std::string id) {
  if (auto bad = find_invalid_utf8(raw_text))
    throw input_error("article " + id + ": invalid UTF-8 at byte " + std::to_string(*bad));
  Article a;
  a.id = std::move(id);
  a.text.assign(raw_text);
  std::size_t pos = 0;
  while (pos <= raw_text.size()) {
    std::size_t nl = raw_text.find('\n', pos);
    std::size_t end = nl == std::string_view::npos ? raw_text.size() : nl;
    if (end > pos) a.sentences.push_back({pos, end});
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
  return a;
}

// TSV: article_id TAB technique TAB begin TAB end, no header.
inline std::vector<FragmentAnnotation> parse_fragment_labels(std::string_view tsv_text) {
  std::vector<FragmentAnnotation> anns;
  std::size_t line_no = 0;
  for (std::string_view line : split(tsv_text, '\n')) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    auto fields = split(line, '\t');
    if (fields.size() != 4)
      throw input_error("expected 4 tab-separated fields at line " + std::to_string(line_no));
    auto tech = parse_technique(fields[1]);
    if (!tech)
      throw input_error("unknown technique at line " + std::to_string(line_no) + ": '" +
                        std::string(fields[1]) + "'");
    auto begin = parse_int(fields[2]);
    auto end = parse_int(fields[3]);
    if (!begin || !end || *begin < 0 || *end < 0)
      throw input_error("non-integer offsets at line " + std::to_string(line_no));
    if (*begin >= *end)
      throw input_error("begin >= end at line " + std::to_string(line_no));
    anns.push_back({std::string(fields[0]), *tech,
                    {static_cast<std::size_t>(*begin), static_cast<std::size_t>(*end)}});
  }
  return anns;
}

inline std::string format_fragment_labels(const std::vector<FragmentAnnotation>& anns) {
  std::string out;
  for (const auto& a : anns) {
    out += a.article_id;
    out += '\t';
    out += to_string(a.technique);
    out += '\t';
    out += std::to_string(a.span.begin);
    out += '\t';
    out += std::to_string(a.span.end);
    out += '\n';
  }
  return out;
}

// Sentence-label TSV: article_id TAB sentence_index TAB label.
struct SentenceLabelRow {
  std::string article_id;
  int sentence_index = 0;
  SentenceLabel label = SentenceLabel::non_propaganda;

  friend bool operator==(const SentenceLabelRow&, const SentenceLabelRow&) = default;
};

inline std::vector<SentenceLabelRow> parse_sentence_labels(std::string_view tsv_text) {
  std::vector<SentenceLabelRow> rows;
  std::size_t line_no = 0;
  for (std::string_view line : split(tsv_text, '\n')) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    auto fields = split(line, '\t');
    if (fields.size() != 3)
      throw input_error("expected 3 tab-separated fields at line " + std::to_string(line_no));
    auto idx = parse_int(fields[1]);
    if (!idx || *idx < 0)
      throw input_error("bad sentence index at line " + std::to_string(line_no));
    auto label = parse_sentence_label(fields[2]);
    if (!label)
      throw input_error("bad label at line " + std::to_string(line_no) + ": '" +
                        std::string(fields[2]) + "'");
    rows.push_back({std::string(fields[0]), static_cast<int>(*idx), *label});
  }
  return rows;
}

inline std::string format_sentence_labels(const std::vector<SentenceLabelRow>& rows) {
  std::string out;
  for (const auto& r : rows) {
    out += r.article_id;
    out += '\t';
    out += std::to_string(r.sentence_index);
    out += '\t';
    out += to_string(r.label);
    out += '\n';
  }
  return out;
}

// ------------------------------------------------------------- supervision

inline void check_annotation_bounds(const Article& article, const FragmentAnnotation& ann) {
  if (ann.article_id != article.id)
    throw input_error("annotation for article " + ann.article_id +
                      " applied to article " + article.id);
  if (ann.span.begin >= ann.span.end || ann.span.end > article.text.size())
    throw input_error("annotation out of article bounds: " + article.id + " [" +
                      std::to_string(ann.span.begin) + "," + std::to_string(ann.span.end) +
                      ") with text length " + std::to_string(article.text.size()));
  if (!is_char_boundary(article.text, ann.span.begin) ||
      !is_char_boundary(article.text, ann.span.end))
    throw input_error("annotation splits a UTF-8 character: " + article.id + " [" +
                      std::to_string(ann.span.begin) + "," + std::to_string(ann.span.end) + ")");
}

// A sentence is propaganda iff at least one annotation overlaps it by >= 1 byte.
inline std::vector<SentenceExample> derive_sentence_labels(
    const Article& article, const std::vector<FragmentAnnotation>& anns) {
  for (const auto& ann : anns) check_annotation_bounds(article, ann);

  std::vector<SentenceExample> examples;
  examples.reserve(article.sentences.size());
  const int n = static_cast<int>(article.sentences.size());
  for (int i = 0; i < n; ++i) {
    ByteRange range = article.sentences[i];
    SentenceExample ex;
    ex.article_id = article.id;
    ex.sentence_index = i;
    ex.text = article.text.substr(range.begin, range.length());
    for (int j = std::max(0, i - 2); j < i; ++j)
      ex.context_before.push_back(
          article.text.substr(article.sentences[j].begin, article.sentences[j].length()));
    for (int j = i + 1; j < std::min(n, i + 3); ++j)
      ex.context_after.push_back(
          article.text.substr(article.sentences[j].begin, article.sentences[j].length()));
    for (const auto& ann : anns)
      if (overlaps(ann.span, range)) ex.covering_techniques.insert(ann.technique);
    ex.label = ex.covering_techniques.empty() ? SentenceLabel::non_propaganda
                                              : SentenceLabel::propaganda;
    examples.push_back(std::move(ex));
  }
  return examples;
}

// Overlap resolution for tagging: longest span wins, ties broken by earlier
// begin, then by technique frequency rank. Losers are dropped whole. Applied
// over original (unclipped) spans; winners are then clipped per sentence.
inline std::vector<FragmentAnnotation> resolve_overlaps(std::vector<FragmentAnnotation> anns) {
  std::stable_sort(anns.begin(), anns.end(), [](const auto& a, const auto& b) {
    if (a.span.length() != b.span.length()) return a.span.length() > b.span.length();
    if (a.span.begin != b.span.begin) return a.span.begin < b.span.begin;
    return frequency_rank(a.technique) < frequency_rank(b.technique);
  });
  std::vector<FragmentAnnotation> kept;
  for (const auto& ann : anns) {
    bool clashes = false;
    for (const auto& k : kept)
      if (overlaps(ann.span, k.span)) {
        clashes = true;
        break;
      }
    if (!clashes) kept.push_back(ann);
  }
  std::sort(kept.begin(), kept.end(),
            [](const auto& a, const auto& b) { return a.span.begin < b.span.begin; });
  return kept;
}

inline std::vector<TokenSequence> encode_bio(const Article& article,
                                             const std::vector<FragmentAnnotation>& anns,
                                             const TokenizerFn& tokenizer) {
  for (const auto& ann : anns) check_annotation_bounds(article, ann);
  std::vector<FragmentAnnotation> resolved = resolve_overlaps(anns);

  std::vector<TokenSequence> sequences;
  sequences.reserve(article.sentences.size());
  for (int si = 0; si < static_cast<int>(article.sentences.size()); ++si) {
    ByteRange srange = article.sentences[si];
    TokenSequence seq;
    seq.article_id = article.id;
    seq.sentence_index = si;
    seq.tokens =
        tokenizer(std::string_view(article.text).substr(srange.begin, srange.length()),
                  srange.begin);
    seq.tags.assign(seq.tokens.size(), BioTag::o());

    // Claim tokens in span-begin order; a token contested between two
    // surviving spans goes to the earlier one.
    std::vector<int> claimed(seq.tokens.size(), -1);
    for (int ai = 0; ai < static_cast<int>(resolved.size()); ++ai) {
      ByteRange clip = intersect(resolved[ai].span, srange);
      if (clip.empty()) continue;
      for (std::size_t ti = 0; ti < seq.tokens.size(); ++ti)
        if (claimed[ti] < 0 && overlaps(seq.tokens[ti].range, clip)) claimed[ti] = ai;
    }
    // Each run of consecutively claimed tokens becomes B I I...; splitting
    // at gaps keeps the output BIO-valid even under pathological overlaps.
    for (std::size_t ti = 0; ti < seq.tokens.size(); ++ti) {
      if (claimed[ti] < 0) continue;
      Technique t = resolved[claimed[ti]].technique;
      bool continues = ti > 0 && claimed[ti - 1] == claimed[ti];
      seq.tags[ti] = continues ? BioTag::i(t) : BioTag::b(t);
    }
    sequences.push_back(std::move(seq));
  }
  return sequences;
}

// Each maximal B-t (I-t)* run becomes one annotation. Stray I-t (after O or a
// different technique) is repaired as B-t and counted.
inline std::vector<FragmentAnnotation> decode_spans(const TokenSequence& seq,
                                                    std::size_t* repairs = nullptr) {
  if (seq.tags.size() != seq.tokens.size())
    throw internal_error("token/tag length mismatch in sequence " + seq.article_id + ":" +
                         std::to_string(seq.sentence_index));
  std::vector<FragmentAnnotation> spans;
  bool open = false;
  Technique open_tech = Technique::loaded_language;
  ByteRange open_range;
  auto close = [&] {
    if (open) spans.push_back({seq.article_id, open_tech, open_range});
    open = false;
  };
  for (std::size_t i = 0; i < seq.tokens.size(); ++i) {
    const BioTag& tag = seq.tags[i];
    switch (tag.kind) {
      case BioTag::Kind::outside:
        close();
        break;
      case BioTag::Kind::begin:
        close();
        open = true;
        open_tech = tag.technique;
        open_range = seq.tokens[i].range;
        break;
      case BioTag::Kind::inside:
        if (open && open_tech == tag.technique) {
          open_range.end = seq.tokens[i].range.end;
        } else {
          if (repairs) ++*repairs;
          close();
          open = true;
          open_tech = tag.technique;
          open_range = seq.tokens[i].range;
        }
        break;
    }
  }
  close();
  return spans;
}

// ------------------------------------------------------------------ splits

// Deterministic shuffle keyed by seed, split by whole articles. Sides keep
// the input order.
inline std::pair<std::vector<Article>, std::vector<Article>> split_train_dev(
    const std::vector<Article>& articles, double dev_fraction, std::uint64_t seed) {
  if (articles.size() < 2)
    throw input_error("need at least 2 articles to split, got " +
                      std::to_string(articles.size()));
  if (!(dev_fraction > 0.0 && dev_fraction < 1.0))
    throw input_error("dev fraction must be in (0,1), got " + format_double(dev_fraction));

  const std::size_t n = articles.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  SplitMix64 rng(seed);
  shuffle(order, rng);

  std::size_t dev_count = static_cast<std::size_t>(
      std::llround(static_cast<double>(n) * dev_fraction));
  dev_count = std::clamp<std::size_t>(dev_count, 1, n - 1);

  std::vector<std::size_t> dev_idx(order.begin(), order.begin() + dev_count);
  std::vector<std::size_t> train_idx(order.begin() + dev_count, order.end());
  std::sort(dev_idx.begin(), dev_idx.end());
  std::sort(train_idx.begin(), train_idx.end());

  std::pair<std::vector<Article>, std::vector<Article>> out;
  for (std::size_t i : train_idx) out.first.push_back(articles[i]);
  for (std::size_t i : dev_idx) out.second.push_back(articles[i]);
  return out;
}

// ------------------------------------------------------------------- stats

struct CorpusStats {
  std::array<std::size_t, technique_count> counts{};
  std::size_t total = 0;
};

inline CorpusStats corpus_stats(const std::vector<FragmentAnnotation>& anns) {
  CorpusStats stats;
  for (const auto& ann : anns) ++stats.counts[static_cast<int>(ann.technique)];
  stats.total = anns.size();
  return stats;
}

inline std::string format_corpus_stats(const CorpusStats& stats) {
  std::string out;
  for (int i = 0; i < technique_count; ++i) {
    out += to_string(static_cast<Technique>(i));
    out += '\t';
    out += std::to_string(stats.counts[i]);
    out += '\n';
  }
  out += "TOTAL\t";
  out += std::to_string(stats.total);
  out += '\n';
  return out;
}

// -------------------------------------------------------------- duplicates

// Whitespace-collapsed, ASCII-case-folded text as the duplicate key.
inline std::string normalized_text(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char raw : text) {
    unsigned char c = static_cast<unsigned char>(raw);
    if (is_ascii_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out += ' ';
      pending_space = false;
    }
    out += (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : raw;
  }
  return out;
}

// Groups of size >= 2 with identical normalized text; ids sorted within each
// group, groups ordered by their first id.
inline std::vector<std::vector<std::string>> detect_duplicates(
    const std::vector<Article>& articles) {
  std::map<std::string, std::vector<std::string>> by_text;
  for (const auto& a : articles) by_text[normalized_text(a.text)].push_back(a.id);
  std::vector<std::vector<std::string>> groups;
  for (auto& [text, ids] : by_text) {
    if (ids.size() < 2) continue;
    std::sort(ids.begin(), ids.end());
    groups.push_back(std::move(ids));
  }
  std::sort(groups.begin(), groups.end(),
            [](const auto& a, const auto& b) { return a.front() < b.front(); });
  return groups;
}

// --------------------------------------------------------------- directory

// Loads every <id>.txt in a directory, sorted by id.
inline std::vector<Article> load_articles_dir(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw input_error("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".txt")
      files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  std::vector<Article> articles;
  articles.reserve(files.size());
  for (const auto& f : files)
    articles.push_back(parse_article(read_file(f), f.stem().string()));
  return articles;
}

}  // namespace proptk
