#pragma once

#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "proptk/corpus.hpp"
#include "proptk/crf.hpp"
#include "proptk/eval.hpp"
#include "proptk/features.hpp"
#include "proptk/slc.hpp"
#include "proptk/tokenize.hpp"
#include "proptk/util.hpp"

namespace proptk {
namespace cli_detail {

namespace fs = std::filesystem;

// Snapshot of a run: config, input digests, version. Written next to every
// output so the run can be re-executed. No timestamps; reruns with identical
// inputs must be byte-identical.
class RunMetadata {
public:
  explicit RunMetadata(std::string command) : command_(std::move(command)) {}

  void config(std::string_view key, std::string_view value) {
    config_.emplace_back(key, value);
  }
  void config(std::string_view key, double value) { config(key, format_double(value)); }
  void config(std::string_view key, long long value) { config(key, std::to_string(value)); }

  void input_file(const fs::path& path) {
    inputs_.emplace_back(path.string(), to_hex(fnv1a64(read_file(path))));
  }

  void input_dir(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw input_error("not a directory: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir))
      if (entry.is_regular_file()) files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    std::uint64_t h = fnv1a64(dir.string());
    for (const auto& f : files) {
      h ^= fnv1a64(f.filename().string());
      h = h * 0x100000001b3ull ^ fnv1a64(read_file(f));
    }
    inputs_.emplace_back(dir.string(), to_hex(h));
  }

  void output(const fs::path& path) {
    output_dirs_.insert(path.has_parent_path() ? path.parent_path() : fs::path("."));
  }

  void write() const {
    std::string body = "tool\tproptk " + std::string(toolkit_version) + "\n";
    body += "command\t" + command_ + "\n";
    for (const auto& [k, v] : config_) body += "config\t" + k + "\t" + v + "\n";
    for (const auto& [p, d] : inputs_) body += "input\t" + p + "\t" + d + "\n";
    for (const auto& dir : output_dirs_) write_file(dir / "run-metadata.tsv", body);
  }

private:
  std::string command_;
  std::vector<std::pair<std::string, std::string>> config_;
  std::vector<std::pair<std::string, std::string>> inputs_;
  std::set<fs::path> output_dirs_;
};

// key=value per line; values apply only where no flag was given.
inline void apply_config_file(CLI::App* sub, const std::string& path) {
  if (path.empty()) return;
  const std::string text = read_file(path);
  std::size_t line_no = 0;
  for (std::string_view line : split(text, '\n')) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw input_error("config file " + path + ": missing '=' at line " +
                        std::to_string(line_no));
    std::string key(trim(line.substr(0, eq)));
    std::string value(trim(line.substr(eq + 1)));
    CLI::Option* op = sub->get_option_no_throw("--" + key);
    if (op == nullptr)
      throw input_error("config file " + path + ": unknown option '" + key + "' at line " +
                        std::to_string(line_no));
    if (op->count() > 0) continue;  // command-line flags take precedence
    op->add_result(value);
    op->run_callback();
  }
}

inline void require_option(const std::string& value, const char* flag) {
  if (value.empty()) throw input_error(std::string("missing required option ") + flag);
}

inline std::set<std::string> load_manifest(const fs::path& path) {
  std::set<std::string> ids;
  const std::string text = read_file(path);
  for (std::string_view line : split(text, '\n')) {
    line = trim(line);
    if (!line.empty()) ids.insert(std::string(line));
  }
  if (ids.empty()) throw input_error("empty manifest: " + path.string());
  return ids;
}

inline std::vector<Article> load_articles(const fs::path& dir,
                                          const std::string& manifest_path) {
  std::vector<Article> articles = load_articles_dir(dir);
  if (manifest_path.empty()) return articles;
  std::set<std::string> wanted = load_manifest(manifest_path);
  std::vector<Article> selected;
  for (auto& a : articles)
    if (wanted.erase(a.id)) selected.push_back(std::move(a));
  if (!wanted.empty())
    throw input_error("manifest id not found in " + dir.string() + ": " + *wanted.begin());
  return selected;
}

inline std::map<std::string, std::vector<FragmentAnnotation>> group_by_article(
    const std::vector<FragmentAnnotation>& anns) {
  std::map<std::string, std::vector<FragmentAnnotation>> by_id;
  for (const auto& ann : anns) by_id[ann.article_id].push_back(ann);
  return by_id;
}

// Owns whatever resources a feature config needs, loaded from files.
struct LoadedResources {
  std::optional<CategoryLexicon> lexicon;
  std::optional<ConceptDictionary> concepts;
  std::optional<WordVectorTable> vectors;
  std::optional<ExternalLogits> logits;
  std::optional<std::set<SentenceKey>> tagged;

  FeatureResources view() const {
    FeatureResources r;
    if (lexicon) r.lexicon = &*lexicon;
    if (concepts) r.concepts = &*concepts;
    if (vectors) r.word_vectors = &*vectors;
    if (logits) r.logits = &*logits;
    if (tagged) r.tagged_sentences = &*tagged;
    return r;
  }
};

struct ResourcePaths {
  std::string lexicon;
  std::string concepts;
  std::string vectors;
  std::string logits;
  std::string flc_pred;
};

inline LoadedResources load_sentence_resources(const SentenceFeatureConfig& config,
                                               const ResourcePaths& paths,
                                               const std::vector<Article>& articles,
                                               RunMetadata& meta) {
  LoadedResources res;
  if (config.lexicon || config.context) {
    if (paths.lexicon.empty()) throw input_error("feature set needs --lexicon");
    res.lexicon = load_category_lexicon(read_file(paths.lexicon));
    meta.input_file(paths.lexicon);
  }
  if (config.external_logits) {
    if (paths.logits.empty()) throw input_error("feature set needs --logits");
    res.logits = load_external_logits(read_file(paths.logits));
    meta.input_file(paths.logits);
  }
  if (config.tagged_span_flag) {
    if (paths.flc_pred.empty()) throw input_error("feature set needs --flc-pred");
    auto fragments = parse_fragment_labels(read_file(paths.flc_pred));
    res.tagged = sentences_with_fragments(articles, fragments);
    meta.input_file(paths.flc_pred);
  }
  return res;
}

inline LoadedResources load_token_resources(const TokenFeatureConfig& config,
                                            const ResourcePaths& paths, RunMetadata& meta) {
  LoadedResources res;
  if (config.concepts) {
    if (paths.concepts.empty()) throw input_error("feature set needs --concepts");
    res.concepts = load_concept_dictionary(read_file(paths.concepts));
    meta.input_file(paths.concepts);
  }
  if (config.word_vectors) {
    if (paths.vectors.empty()) throw input_error("feature set needs --vectors");
    res.vectors = load_word_vectors(read_file(paths.vectors));
    meta.input_file(paths.vectors);
  }
  return res;
}

// Derived sentence examples for a set of articles, with any annotations.
inline std::vector<SentenceExample> derive_all_sentences(
    const std::vector<Article>& articles,
    const std::map<std::string, std::vector<FragmentAnnotation>>& anns_by_id) {
  static const std::vector<FragmentAnnotation> none;
  std::vector<SentenceExample> out;
  for (const auto& article : articles) {
    auto it = anns_by_id.find(article.id);
    const auto& anns = it == anns_by_id.end() ? none : it->second;
    for (auto& ex : derive_sentence_labels(article, anns)) out.push_back(std::move(ex));
  }
  return out;
}

inline void emit(const std::string& content, const std::string& out_path, RunMetadata& meta) {
  if (out_path.empty()) {
    std::cout << content;
  } else {
    write_file(out_path, content);
    meta.output(out_path);
  }
}

inline std::vector<double> parse_grid(const std::string& grid_arg) {
  std::vector<double> grid;
  for (std::string_view part : split(std::string_view(grid_arg), ',')) {
    part = trim(part);
    if (part.empty()) continue;
    auto v = parse_double(part);
    if (!v) throw input_error("bad grid value: '" + std::string(part) + "'");
    grid.push_back(*v);
  }
  if (grid.empty()) throw input_error("empty threshold grid");
  return grid;
}

inline ReportStyle parse_style(const std::string& style) {
  if (style == "tsv") return ReportStyle::tsv;
  if (style == "text") return ReportStyle::text;
  throw input_error("unknown report style: '" + style + "' (want tsv or text)");
}

}  // namespace cli_detail

// Command-line surface; returns the process exit code.
// 0 = success, 1 = input error, 2 = internal error.
inline int run(int argc, const char* const* argv) {
  using cli_detail::RunMetadata;
  using cli_detail::require_option;
  namespace fs = std::filesystem;

  CLI::App app{"proptk: fine-grained propaganda detection toolkit"};
  app.set_version_flag("--version", "proptk " + std::string(toolkit_version));
  app.require_subcommand(1);

  std::string config_path;
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_path,
                    "key=value file applied where no flag was given");
  };

  // ---- stats ----
  auto* stats_cmd = app.add_subcommand("stats", "Per-technique fragment counts");
  std::string stats_labels, stats_out;
  stats_cmd->add_option("--labels", stats_labels, "fragment label TSV");
  stats_cmd->add_option("--out", stats_out, "output path (default stdout)");
  add_config(stats_cmd);

  // ---- split ----
  auto* split_cmd = app.add_subcommand("split", "Deterministic train/dev article split");
  std::string split_articles, split_out_dir;
  double split_fraction = 0.2;
  std::uint64_t split_seed = 1;
  bool split_drop_dupes = false;
  split_cmd->add_option("--articles-dir", split_articles, "directory of <id>.txt files");
  split_cmd->add_option("--dev-fraction", split_fraction, "dev share in (0,1)")
      ->capture_default_str();
  split_cmd->add_option("--seed", split_seed, "shuffle seed")->capture_default_str();
  split_cmd->add_option("--out-dir", split_out_dir, "directory for manifest files");
  split_cmd->add_flag("--drop-duplicates", split_drop_dupes,
                      "keep only the first article of each duplicate group");
  add_config(split_cmd);

  // ---- dupes ----
  auto* dupes_cmd = app.add_subcommand("dupes", "Report duplicate articles");
  std::string dupes_articles, dupes_out;
  dupes_cmd->add_option("--articles-dir", dupes_articles, "directory of <id>.txt files");
  dupes_cmd->add_option("--out", dupes_out, "output path (default stdout)");
  add_config(dupes_cmd);

  cli_detail::ResourcePaths res_paths;

  // ---- train-slc ----
  auto* train_slc_cmd = app.add_subcommand("train-slc", "Train the sentence-level classifier");
  std::string tslc_articles, tslc_labels, tslc_manifest, tslc_features = "lexicon,punctuation";
  std::string tslc_model_out;
  double tslc_tau = 0.70;
  bool tslc_tau_prior = false;
  SlcTrainConfig tslc_config;
  train_slc_cmd->add_option("--articles-dir", tslc_articles, "directory of <id>.txt files");
  train_slc_cmd->add_option("--labels", tslc_labels, "fragment label TSV");
  train_slc_cmd->add_option("--manifest", tslc_manifest, "restrict to these article ids");
  train_slc_cmd->add_option("--features", tslc_features,
                            "comma list: lexicon,punctuation,logits,tagged-span,context")
      ->capture_default_str();
  train_slc_cmd->add_option("--lexicon", res_paths.lexicon, "category lexicon TSV");
  train_slc_cmd->add_option("--logits", res_paths.logits, "external logits TSV");
  train_slc_cmd->add_option("--flc-pred", res_paths.flc_pred, "fragment prediction TSV");
  train_slc_cmd->add_option("--tau", tslc_tau, "non-propaganda decision threshold")
      ->capture_default_str();
  train_slc_cmd->add_flag("--tau-from-prior", tslc_tau_prior,
                          "set tau to the training non-propaganda class ratio");
  train_slc_cmd->add_option("--lr", tslc_config.learning_rate, "learning rate")
      ->capture_default_str();
  train_slc_cmd->add_option("--l2", tslc_config.l2, "L2 strength")->capture_default_str();
  train_slc_cmd->add_option("--epochs", tslc_config.epochs, "training epochs")
      ->capture_default_str();
  train_slc_cmd->add_option("--batch", tslc_config.batch_size, "mini-batch size")
      ->capture_default_str();
  train_slc_cmd->add_option("--seed", tslc_config.seed, "shuffle seed")->capture_default_str();
  train_slc_cmd->add_option("--model-out", tslc_model_out, "model file to write");
  add_config(train_slc_cmd);

  // ---- predict-slc ----
  auto* predict_slc_cmd = app.add_subcommand("predict-slc", "Label sentences with a model");
  std::string pslc_articles, pslc_model, pslc_manifest, pslc_out;
  predict_slc_cmd->add_option("--articles-dir", pslc_articles, "directory of <id>.txt files");
  predict_slc_cmd->add_option("--model", pslc_model, "slc model file");
  predict_slc_cmd->add_option("--manifest", pslc_manifest, "restrict to these article ids");
  predict_slc_cmd->add_option("--lexicon", res_paths.lexicon, "category lexicon TSV");
  predict_slc_cmd->add_option("--logits", res_paths.logits, "external logits TSV");
  predict_slc_cmd->add_option("--flc-pred", res_paths.flc_pred, "fragment prediction TSV");
  predict_slc_cmd->add_option("--out", pslc_out, "sentence label TSV to write");
  add_config(predict_slc_cmd);

  // ---- sweep-slc ----
  auto* sweep_cmd = app.add_subcommand("sweep-slc", "Threshold sweep on a labeled set");
  std::string sw_articles, sw_labels, sw_model, sw_manifest, sw_out;
  std::string sw_grid = "0.5,0.55,0.6,0.65,0.7,0.75,0.8,0.85,0.9";
  sweep_cmd->add_option("--articles-dir", sw_articles, "directory of <id>.txt files");
  sweep_cmd->add_option("--labels", sw_labels, "fragment label TSV");
  sweep_cmd->add_option("--model", sw_model, "slc model file");
  sweep_cmd->add_option("--manifest", sw_manifest, "restrict to these article ids");
  sweep_cmd->add_option("--grid", sw_grid, "comma list of thresholds")->capture_default_str();
  sweep_cmd->add_option("--lexicon", res_paths.lexicon, "category lexicon TSV");
  sweep_cmd->add_option("--logits", res_paths.logits, "external logits TSV");
  sweep_cmd->add_option("--flc-pred", res_paths.flc_pred, "fragment prediction TSV");
  sweep_cmd->add_option("--out", sw_out, "output path (default stdout)");
  add_config(sweep_cmd);

  // ---- analyze-slc ----
  auto* analyze_cmd = app.add_subcommand("analyze-slc", "Per-technique sentence accuracy");
  std::string an_articles, an_labels, an_pred, an_out;
  std::size_t an_min_count = 21;
  analyze_cmd->add_option("--articles-dir", an_articles, "directory of <id>.txt files");
  analyze_cmd->add_option("--labels", an_labels, "fragment label TSV");
  analyze_cmd->add_option("--pred", an_pred, "sentence label TSV");
  analyze_cmd->add_option("--min-count", an_min_count, "minimum covering-sentence count")
      ->capture_default_str();
  analyze_cmd->add_option("--out", an_out, "output path (default stdout)");
  add_config(analyze_cmd);

  // ---- train-flc ----
  auto* train_flc_cmd = app.add_subcommand("train-flc", "Train the fragment tagger");
  std::string tflc_articles, tflc_labels, tflc_train_manifest, tflc_dev_manifest;
  std::string tflc_features = "surface,lowercase,shape,window";
  std::string tflc_model_out, tflc_report_out;
  double tflc_dev_fraction = 0.2;
  CrfTrainConfig tflc_config;
  train_flc_cmd->add_option("--articles-dir", tflc_articles, "directory of <id>.txt files");
  train_flc_cmd->add_option("--labels", tflc_labels, "fragment label TSV");
  train_flc_cmd->add_option("--train-manifest", tflc_train_manifest, "training article ids");
  train_flc_cmd->add_option("--dev-manifest", tflc_dev_manifest, "dev article ids");
  train_flc_cmd->add_option("--dev-fraction", tflc_dev_fraction,
                            "dev share when no manifests are given")
      ->capture_default_str();
  train_flc_cmd->add_option("--token-features", tflc_features,
                            "comma list: surface,lowercase,shape,concepts,wordvec,window")
      ->capture_default_str();
  train_flc_cmd->add_option("--concepts", res_paths.concepts, "concept dictionary TSV");
  train_flc_cmd->add_option("--vectors", res_paths.vectors, "word vector text file");
  train_flc_cmd->add_option("--lr", tflc_config.learning_rate, "learning rate")
      ->capture_default_str();
  train_flc_cmd->add_option("--l2", tflc_config.l2, "L2 strength")->capture_default_str();
  train_flc_cmd->add_option("--epochs", tflc_config.max_epochs, "maximum epochs")
      ->capture_default_str();
  train_flc_cmd->add_option("--batch", tflc_config.batch_size, "mini-batch size")
      ->capture_default_str();
  train_flc_cmd->add_option("--patience", tflc_config.patience, "early stopping patience")
      ->capture_default_str();
  train_flc_cmd->add_option("--seed", tflc_config.seed, "shuffle/split seed")
      ->capture_default_str();
  train_flc_cmd->add_option("--model-out", tflc_model_out, "model file to write");
  train_flc_cmd->add_option("--report-out", tflc_report_out, "training report TSV");
  add_config(train_flc_cmd);

  // ---- predict-flc ----
  auto* predict_flc_cmd = app.add_subcommand("predict-flc", "Tag fragments with a model");
  std::string pflc_articles, pflc_model, pflc_manifest, pflc_out;
  predict_flc_cmd->add_option("--articles-dir", pflc_articles, "directory of <id>.txt files");
  predict_flc_cmd->add_option("--model", pflc_model, "crf model file");
  predict_flc_cmd->add_option("--manifest", pflc_manifest, "restrict to these article ids");
  predict_flc_cmd->add_option("--concepts", res_paths.concepts, "concept dictionary TSV");
  predict_flc_cmd->add_option("--vectors", res_paths.vectors, "word vector text file");
  predict_flc_cmd->add_option("--out", pflc_out, "fragment TSV to write");
  add_config(predict_flc_cmd);

  // ---- eval-slc ----
  auto* eval_slc_cmd = app.add_subcommand("eval-slc", "Score sentence predictions");
  std::string eslc_pred, eslc_gold, eslc_gold_fragments, eslc_articles, eslc_out;
  std::string eslc_style = "text";
  eval_slc_cmd->add_option("--pred", eslc_pred, "predicted sentence label TSV");
  eval_slc_cmd->add_option("--gold", eslc_gold, "gold sentence label TSV");
  eval_slc_cmd->add_option("--gold-fragments", eslc_gold_fragments,
                           "derive gold labels from this fragment TSV");
  eval_slc_cmd->add_option("--articles-dir", eslc_articles,
                           "articles for --gold-fragments derivation");
  eval_slc_cmd->add_option("--style", eslc_style, "tsv or text")->capture_default_str();
  eval_slc_cmd->add_option("--out", eslc_out, "output path (default stdout)");
  add_config(eval_slc_cmd);

  // ---- eval-flc ----
  auto* eval_flc_cmd = app.add_subcommand("eval-flc", "Score fragment predictions");
  std::string eflc_pred, eflc_gold, eflc_out;
  std::string eflc_style = "text";
  eval_flc_cmd->add_option("--pred", eflc_pred, "predicted fragment TSV");
  eval_flc_cmd->add_option("--gold", eflc_gold, "gold fragment TSV");
  eval_flc_cmd->add_option("--style", eflc_style, "tsv or text")->capture_default_str();
  eval_flc_cmd->add_option("--out", eflc_out, "output path (default stdout)");
  add_config(eval_flc_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    for (auto* sub : app.get_subcommands()) cli_detail::apply_config_file(sub, config_path);

    if (stats_cmd->parsed()) {
      require_option(stats_labels, "--labels");
      RunMetadata meta("stats");
      meta.config("labels", stats_labels);
      meta.input_file(stats_labels);
      auto stats = corpus_stats(parse_fragment_labels(read_file(stats_labels)));
      cli_detail::emit(format_corpus_stats(stats), stats_out, meta);
      meta.write();
      return 0;
    }

    if (split_cmd->parsed()) {
      require_option(split_articles, "--articles-dir");
      require_option(split_out_dir, "--out-dir");
      RunMetadata meta("split");
      meta.config("articles-dir", split_articles);
      meta.config("dev-fraction", split_fraction);
      meta.config("seed", static_cast<long long>(split_seed));
      meta.config("drop-duplicates", split_drop_dupes ? "true" : "false");
      meta.input_dir(split_articles);
      std::vector<Article> articles = load_articles_dir(split_articles);
      if (split_drop_dupes) {
        std::set<std::string> drop;
        for (const auto& group : detect_duplicates(articles))
          for (std::size_t i = 1; i < group.size(); ++i) drop.insert(group[i]);
        std::erase_if(articles, [&](const Article& a) { return drop.count(a.id) > 0; });
        if (!drop.empty())
          std::cerr << "dropped " << drop.size() << " duplicate articles\n";
      }
      auto [train, dev] = split_train_dev(articles, split_fraction, split_seed);
      std::string train_manifest, dev_manifest;
      for (const auto& a : train) train_manifest += a.id + "\n";
      for (const auto& a : dev) dev_manifest += a.id + "\n";
      fs::path out_dir(split_out_dir);
      write_file(out_dir / "train-manifest.txt", train_manifest);
      write_file(out_dir / "dev-manifest.txt", dev_manifest);
      meta.output(out_dir / "train-manifest.txt");
      meta.write();
      std::cout << "train " << train.size() << " articles, dev " << dev.size()
                << " articles -> " << split_out_dir << "\n";
      return 0;
    }

    if (dupes_cmd->parsed()) {
      require_option(dupes_articles, "--articles-dir");
      RunMetadata meta("dupes");
      meta.config("articles-dir", dupes_articles);
      meta.input_dir(dupes_articles);
      std::string out;
      for (const auto& group : detect_duplicates(load_articles_dir(dupes_articles))) {
        for (std::size_t i = 0; i < group.size(); ++i) {
          if (i) out += '\t';
          out += group[i];
        }
        out += '\n';
      }
      cli_detail::emit(out, dupes_out, meta);
      meta.write();
      return 0;
    }

    if (train_slc_cmd->parsed()) {
      require_option(tslc_articles, "--articles-dir");
      require_option(tslc_labels, "--labels");
      require_option(tslc_model_out, "--model-out");
      RunMetadata meta("train-slc");
      SentenceFeatureConfig features = detail::sentence_features_from_string(tslc_features);
      meta.config("articles-dir", tslc_articles);
      meta.config("labels", tslc_labels);
      if (!tslc_manifest.empty()) meta.config("manifest", tslc_manifest);
      meta.config("features", detail::sentence_features_to_string(features));
      meta.config("tau", tslc_tau);
      meta.config("tau-from-prior", tslc_tau_prior ? "true" : "false");
      meta.config("lr", tslc_config.learning_rate);
      meta.config("l2", tslc_config.l2);
      meta.config("epochs", static_cast<long long>(tslc_config.epochs));
      meta.config("batch", static_cast<long long>(tslc_config.batch_size));
      meta.config("seed", static_cast<long long>(tslc_config.seed));
      meta.input_dir(tslc_articles);
      meta.input_file(tslc_labels);
      if (!tslc_manifest.empty()) meta.input_file(tslc_manifest);

      auto articles = cli_detail::load_articles(tslc_articles, tslc_manifest);
      auto anns_by_id =
          cli_detail::group_by_article(parse_fragment_labels(read_file(tslc_labels)));
      auto resources =
          cli_detail::load_sentence_resources(features, res_paths, articles, meta);
      auto examples = cli_detail::derive_all_sentences(articles, anns_by_id);
      std::vector<LabeledFeatures> data;
      data.reserve(examples.size());
      for (const auto& ex : examples)
        data.emplace_back(assemble_sentence_features(ex, features, resources.view()),
                          ex.label);
      SlcModel model = train_logreg(data, tslc_config);
      model.features = features;
      if (tslc_tau_prior) {
        std::size_t nonprop = 0;
        for (const auto& ex : examples)
          if (ex.label == SentenceLabel::non_propaganda) ++nonprop;
        model.tau = static_cast<double>(nonprop) / static_cast<double>(examples.size());
        std::cerr << "tau from class prior: " << format_double(model.tau) << "\n";
      } else {
        model.tau = tslc_tau;
      }
      if (!(model.tau > 0.0 && model.tau < 1.0))
        throw input_error("tau must lie in (0,1), got " + format_double(model.tau));
      write_file(tslc_model_out, save_slc_model(model));
      meta.output(tslc_model_out);
      meta.write();
      std::cout << "trained on " << data.size() << " sentences -> " << tslc_model_out << "\n";
      return 0;
    }

    if (predict_slc_cmd->parsed()) {
      require_option(pslc_articles, "--articles-dir");
      require_option(pslc_model, "--model");
      require_option(pslc_out, "--out");
      RunMetadata meta("predict-slc");
      meta.config("articles-dir", pslc_articles);
      meta.config("model", pslc_model);
      if (!pslc_manifest.empty()) meta.config("manifest", pslc_manifest);
      meta.input_dir(pslc_articles);
      meta.input_file(pslc_model);
      if (!pslc_manifest.empty()) meta.input_file(pslc_manifest);

      SlcModel model = load_slc_model(read_file(pslc_model));
      auto articles = cli_detail::load_articles(pslc_articles, pslc_manifest);
      auto resources =
          cli_detail::load_sentence_resources(model.features, res_paths, articles, meta);
      auto examples = cli_detail::derive_all_sentences(articles, {});
      std::vector<SentenceLabelRow> rows;
      rows.reserve(examples.size());
      for (const auto& ex : examples) {
        double p = predict_proba(
            model, assemble_sentence_features(ex, model.features, resources.view()));
        rows.push_back({ex.article_id, ex.sentence_index, apply_threshold(p, model.tau)});
      }
      write_file(pslc_out, format_sentence_labels(rows));
      meta.output(pslc_out);
      meta.write();
      return 0;
    }

    if (sweep_cmd->parsed()) {
      require_option(sw_articles, "--articles-dir");
      require_option(sw_labels, "--labels");
      require_option(sw_model, "--model");
      RunMetadata meta("sweep-slc");
      meta.config("articles-dir", sw_articles);
      meta.config("labels", sw_labels);
      meta.config("model", sw_model);
      meta.config("grid", sw_grid);
      if (!sw_manifest.empty()) meta.config("manifest", sw_manifest);
      meta.input_dir(sw_articles);
      meta.input_file(sw_labels);
      meta.input_file(sw_model);

      SlcModel model = load_slc_model(read_file(sw_model));
      auto articles = cli_detail::load_articles(sw_articles, sw_manifest);
      auto anns_by_id =
          cli_detail::group_by_article(parse_fragment_labels(read_file(sw_labels)));
      auto resources =
          cli_detail::load_sentence_resources(model.features, res_paths, articles, meta);
      std::vector<LabeledFeatures> data;
      for (const auto& ex : cli_detail::derive_all_sentences(articles, anns_by_id))
        data.emplace_back(assemble_sentence_features(ex, model.features, resources.view()),
                          ex.label);
      SweepResult result = sweep_threshold(model, data, cli_detail::parse_grid(sw_grid));
      std::string out = "tau\tprecision\trecall\tf1\n";
      for (const auto& row : result.rows)
        out += format_fixed(row.tau, 3) + "\t" + format_fixed(row.precision, 3) + "\t" +
               format_fixed(row.recall, 3) + "\t" + format_fixed(row.f1, 3) + "\n";
      out += "BEST\t" + format_fixed(result.best_tau, 3) + "\n";
      cli_detail::emit(out, sw_out, meta);
      meta.write();
      return 0;
    }

    if (analyze_cmd->parsed()) {
      require_option(an_articles, "--articles-dir");
      require_option(an_labels, "--labels");
      require_option(an_pred, "--pred");
      RunMetadata meta("analyze-slc");
      meta.config("articles-dir", an_articles);
      meta.config("labels", an_labels);
      meta.config("pred", an_pred);
      meta.config("min-count", static_cast<long long>(an_min_count));
      meta.input_dir(an_articles);
      meta.input_file(an_labels);
      meta.input_file(an_pred);

      auto articles = cli_detail::load_articles(an_articles, "");
      auto anns_by_id =
          cli_detail::group_by_article(parse_fragment_labels(read_file(an_labels)));
      auto gold = cli_detail::derive_all_sentences(articles, anns_by_id);
      std::vector<SlcPrediction> preds;
      for (const auto& row : parse_sentence_labels(read_file(an_pred)))
        preds.push_back({row.article_id, row.sentence_index,
                         row.label == SentenceLabel::non_propaganda ? 1.0 : 0.0, row.label});
      std::string out = "technique\tcount\taccuracy\n";
      for (const auto& row : analyze_by_technique(preds, gold, an_min_count))
        out += std::string(to_string(row.technique)) + "\t" + std::to_string(row.count) +
               "\t" + format_fixed(row.accuracy, 3) + "\n";
      cli_detail::emit(out, an_out, meta);
      meta.write();
      return 0;
    }

    if (train_flc_cmd->parsed()) {
      require_option(tflc_articles, "--articles-dir");
      require_option(tflc_labels, "--labels");
      require_option(tflc_model_out, "--model-out");
      RunMetadata meta("train-flc");
      TokenFeatureConfig features = detail::token_features_from_string(tflc_features);
      meta.config("articles-dir", tflc_articles);
      meta.config("labels", tflc_labels);
      meta.config("token-features", detail::token_features_to_string(features));
      meta.config("dev-fraction", tflc_dev_fraction);
      meta.config("lr", tflc_config.learning_rate);
      meta.config("l2", tflc_config.l2);
      meta.config("epochs", static_cast<long long>(tflc_config.max_epochs));
      meta.config("batch", static_cast<long long>(tflc_config.batch_size));
      meta.config("patience", static_cast<long long>(tflc_config.patience));
      meta.config("seed", static_cast<long long>(tflc_config.seed));
      meta.input_dir(tflc_articles);
      meta.input_file(tflc_labels);

      auto resources = cli_detail::load_token_resources(features, res_paths, meta);
      auto anns_by_id =
          cli_detail::group_by_article(parse_fragment_labels(read_file(tflc_labels)));

      std::vector<Article> train_articles, dev_articles;
      if (!tflc_train_manifest.empty() || !tflc_dev_manifest.empty()) {
        if (tflc_train_manifest.empty() || tflc_dev_manifest.empty())
          throw input_error("need both --train-manifest and --dev-manifest");
        meta.config("train-manifest", tflc_train_manifest);
        meta.config("dev-manifest", tflc_dev_manifest);
        meta.input_file(tflc_train_manifest);
        meta.input_file(tflc_dev_manifest);
        train_articles = cli_detail::load_articles(tflc_articles, tflc_train_manifest);
        dev_articles = cli_detail::load_articles(tflc_articles, tflc_dev_manifest);
      } else {
        auto all_articles = cli_detail::load_articles(tflc_articles, "");
        std::tie(train_articles, dev_articles) =
            split_train_dev(all_articles, tflc_dev_fraction, tflc_config.seed);
      }

      auto encode_all = [&](const std::vector<Article>& articles) {
        static const std::vector<FragmentAnnotation> none;
        std::vector<TokenSequence> seqs;
        for (const auto& article : articles) {
          auto it = anns_by_id.find(article.id);
          const auto& anns = it == anns_by_id.end() ? none : it->second;
          for (auto& seq : encode_bio(article, anns, tokenize)) seqs.push_back(std::move(seq));
        }
        return seqs;
      };
      auto train_seqs = encode_all(train_articles);
      auto dev_seqs = encode_all(dev_articles);

      CrfTrainResult result =
          train_crf(train_seqs, dev_seqs, features, resources.view(), tflc_config);
      write_file(tflc_model_out, save_crf_model(result.model));
      meta.output(tflc_model_out);
      if (!tflc_report_out.empty()) {
        write_file(tflc_report_out, format_train_report(result.report));
        meta.output(tflc_report_out);
      }
      meta.write();
      double best_f = result.report.selected_epoch >= 1
                          ? result.report.epochs[result.report.selected_epoch - 1].dev_f
                          : 0.0;
      std::cout << "trained " << result.report.epochs.size() << " epochs, selected epoch "
                << result.report.selected_epoch << " (dev span-F "
                << format_fixed(best_f, 4) << ", " << result.report.stopping_reason
                << ") -> " << tflc_model_out << "\n";
      return 0;
    }

    if (predict_flc_cmd->parsed()) {
      require_option(pflc_articles, "--articles-dir");
      require_option(pflc_model, "--model");
      require_option(pflc_out, "--out");
      RunMetadata meta("predict-flc");
      meta.config("articles-dir", pflc_articles);
      meta.config("model", pflc_model);
      if (!pflc_manifest.empty()) meta.config("manifest", pflc_manifest);
      meta.input_dir(pflc_articles);
      meta.input_file(pflc_model);
      if (!pflc_manifest.empty()) meta.input_file(pflc_manifest);

      CrfModel model = load_crf_model(read_file(pflc_model));
      auto resources = cli_detail::load_token_resources(model.feature_config, res_paths, meta);
      auto articles = cli_detail::load_articles(pflc_articles, pflc_manifest);
      std::vector<FragmentAnnotation> fragments;
      for (const auto& article : articles)
        for (auto& frag : predict_fragments(model, article, tokenize, resources.view()))
          fragments.push_back(std::move(frag));
      write_file(pflc_out, format_fragment_labels(fragments));
      meta.output(pflc_out);
      meta.write();
      return 0;
    }

    if (eval_slc_cmd->parsed()) {
      require_option(eslc_pred, "--pred");
      RunMetadata meta("eval-slc");
      meta.config("pred", eslc_pred);
      meta.input_file(eslc_pred);
      auto pred = parse_sentence_labels(read_file(eslc_pred));
      std::vector<SentenceLabelRow> gold;
      if (!eslc_gold.empty()) {
        meta.config("gold", eslc_gold);
        meta.input_file(eslc_gold);
        gold = parse_sentence_labels(read_file(eslc_gold));
      } else if (!eslc_gold_fragments.empty()) {
        if (eslc_articles.empty())
          throw input_error("--gold-fragments needs --articles-dir");
        meta.config("gold-fragments", eslc_gold_fragments);
        meta.input_file(eslc_gold_fragments);
        meta.input_dir(eslc_articles);
        auto articles = cli_detail::load_articles(eslc_articles, "");
        auto anns_by_id = cli_detail::group_by_article(
            parse_fragment_labels(read_file(eslc_gold_fragments)));
        for (const auto& ex : cli_detail::derive_all_sentences(articles, anns_by_id))
          gold.push_back({ex.article_id, ex.sentence_index, ex.label});
      } else {
        throw input_error("need --gold or --gold-fragments");
      }
      SlcReport report = slc_prf(pred, gold);
      cli_detail::emit(format_report(report, cli_detail::parse_style(eslc_style)), eslc_out,
                       meta);
      meta.write();
      return 0;
    }

    if (eval_flc_cmd->parsed()) {
      require_option(eflc_pred, "--pred");
      require_option(eflc_gold, "--gold");
      RunMetadata meta("eval-flc");
      meta.config("pred", eflc_pred);
      meta.config("gold", eflc_gold);
      meta.input_file(eflc_pred);
      meta.input_file(eflc_gold);
      FlcReport report = flc_prf(parse_fragment_labels(read_file(eflc_pred)),
                                 parse_fragment_labels(read_file(eflc_gold)));
      cli_detail::emit(format_report(report, cli_detail::parse_style(eflc_style)), eflc_out,
                       meta);
      meta.write();
      return 0;
    }

    throw internal_error("no subcommand dispatched");
  } catch (const input_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
}

inline int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.push_back("proptk");
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace proptk
