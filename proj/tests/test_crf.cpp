#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "proptk/crf.hpp"
#include "proptk/tokenize.hpp"
#include "synth.hpp"

using namespace proptk;

namespace {

TagSet reduced_tags() { return TagSet({"x", "y"}); }

std::vector<std::string> feature_ids(int n) {
  std::vector<std::string> ids;
  for (int i = 0; i < n; ++i) ids.push_back("f" + std::to_string(i));
  return ids;
}

CrfModel random_model(const TagSet& tags, SplitMix64& rng, int n_feats, int dense_dim) {
  std::vector<std::pair<std::string, int>> dense;
  if (dense_dim > 0) dense.emplace_back("vec", dense_dim);
  CrfModel model = make_crf_model(tags, std::move(dense));
  for (const auto& id : feature_ids(n_feats)) {
    auto& w = model.emission[id];
    w.resize(tags.size());
    for (auto& x : w) x = rng.next_uniform(-2.0, 2.0);
  }
  for (auto& [src, w] : model.dense_emission)
    for (auto& x : w) x = rng.next_uniform(-2.0, 2.0);
  const int width = model.width();
  for (int from = 0; from < width; ++from)
    for (int to = 0; to < width; ++to)
      if (model.tags.transition_allowed(from, to))
        model.trans(from, to) = rng.next_uniform(-2.0, 2.0);
  return model;
}

std::vector<FeatureVector> random_features(const CrfModel& model, SplitMix64& rng,
                                           std::size_t n, int n_feats) {
  std::vector<FeatureVector> feats(n);
  for (auto& fv : feats) {
    for (const auto& id : feature_ids(n_feats))
      if (rng.next_double() < 0.5) fv.sparse[id] = rng.next_uniform(-1.0, 1.0);
    for (const auto& [src, dim] : model.dense_sources) {
      DenseBlock block{src, {}};
      for (int d = 0; d < dim; ++d) block.values.push_back(rng.next_uniform(-1.0, 1.0));
      fv.dense.push_back(std::move(block));
    }
  }
  return feats;
}

std::vector<int> random_valid_tags(const TagSet& tags, std::size_t n, SplitMix64& rng) {
  std::vector<int> out;
  int prev = tags.start();
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<int> options;
    for (int y = 0; y < tags.size(); ++y)
      if (tags.transition_allowed(prev, y)) options.push_back(y);
    int y = options[rng.next_below(options.size())];
    out.push_back(y);
    prev = y;
  }
  return out;
}

}  // namespace

TEST_CASE("TagSet layout and transition constraints") {
  TagSet full = TagSet::techniques();
  CHECK(full.size() == 37);
  CHECK(full.label_count() == 18);

  TagSet small = reduced_tags();
  CHECK(small.size() == 5);

  // index <-> name bijection
  for (int t = 0; t < full.size(); ++t) {
    auto idx = full.tag_index(full.tag_name(t));
    REQUIRE(idx.has_value());
    CHECK(*idx == t);
  }
  CHECK(full.tag_name(0) == "O");
  CHECK(full.tag_name(1) == "B-Loaded Language");
  CHECK(!full.tag_index("I-Sarcasm").has_value());

  int bx = small.begin_tag(0), ix = small.inside_tag(0);
  int by = small.begin_tag(1), iy = small.inside_tag(1);
  CHECK(small.transition_allowed(small.start(), TagSet::outside_tag));
  CHECK(small.transition_allowed(small.start(), bx));
  CHECK(!small.transition_allowed(small.start(), ix));
  CHECK(!small.transition_allowed(TagSet::outside_tag, ix));
  CHECK(small.transition_allowed(bx, ix));
  CHECK(small.transition_allowed(ix, ix));
  CHECK(!small.transition_allowed(bx, iy));
  CHECK(!small.transition_allowed(ix, iy));
  CHECK(small.transition_allowed(bx, by));
  CHECK(small.transition_allowed(iy, TagSet::outside_tag));
  CHECK(small.transition_allowed(ix, small.stop()));
  CHECK(!small.transition_allowed(small.start(), small.stop()));

  CHECK_THROWS_AS(TagSet({}), input_error);
  CHECK_THROWS_AS(TagSet({"x", "x"}), input_error);
}

TEST_CASE("sequence_score basics") {
  TagSet tags = reduced_tags();
  SplitMix64 rng(2);

  SUBCASE("zero model scores 0 for any valid sequence") {
    CrfModel zero = make_crf_model(tags);
    for (int trial = 0; trial < 20; ++trial) {
      std::size_t n = 1 + rng.next_below(5);
      std::vector<FeatureVector> feats(n);
      auto seq = random_valid_tags(tags, n, rng);
      CHECK(sequence_score(zero, feats, seq) == 0.0);
    }
  }
  SUBCASE("single token decomposition") {
    CrfModel model = random_model(tags, rng, 2, 0);
    FeatureVector fv;
    fv.sparse["f0"] = 2.0;
    std::vector<FeatureVector> feats = {fv};
    int y = tags.begin_tag(1);
    double expected = model.trans(tags.start(), y) + model.emission.at("f0")[y] * 2.0 +
                      model.trans(y, tags.stop());
    CHECK(sequence_score(model, feats, {y}) == doctest::Approx(expected));
  }
  SUBCASE("BIO-invalid tags score -inf") {
    CrfModel model = random_model(tags, rng, 2, 0);
    auto feats = random_features(model, rng, 3, 2);
    CHECK(sequence_score(model, feats,
                         {TagSet::outside_tag, tags.inside_tag(0), TagSet::outside_tag}) ==
          neg_inf);
    CHECK(sequence_score(model, feats,
                         {tags.begin_tag(0), tags.inside_tag(1), TagSet::outside_tag}) ==
          neg_inf);
  }
  SUBCASE("matches an independent potential sum on random instances") {
    for (int trial = 0; trial < 50; ++trial) {
      CrfModel model = random_model(tags, rng, 3, trial % 2 ? 2 : 0);
      std::size_t n = 1 + rng.next_below(4);
      auto feats = random_features(model, rng, n, 3);
      auto seq = random_valid_tags(tags, n, rng);
      CHECK(sequence_score(model, feats, seq) ==
            doctest::Approx(oracles::brute_sequence_score(model, feats, seq)).epsilon(1e-12));
    }
  }
}

TEST_CASE("log_partition against exhaustive enumeration") {
  TagSet tags = reduced_tags();
  SplitMix64 rng(7);

  SUBCASE("zero model counts valid BIO paths") {
    CrfModel zero = make_crf_model(tags);
    for (std::size_t n = 1; n <= 4; ++n) {
      std::vector<FeatureVector> feats(n);
      auto brute = oracles::brute_inference(zero, feats);
      CHECK(log_partition(zero, feats) ==
            doctest::Approx(std::log(static_cast<double>(brute.valid_count))).epsilon(1e-12));
    }
  }
  SUBCASE("random instances within 1e-8 relative") {
    for (int trial = 0; trial < 100; ++trial) {
      CrfModel model = random_model(tags, rng, 3, trial % 3 ? 0 : 2);
      std::size_t n = 1 + rng.next_below(5);
      auto feats = random_features(model, rng, n, 3);
      double fast = log_partition(model, feats);
      double brute = oracles::brute_inference(model, feats).log_z;
      CHECK(std::abs(fast - brute) <= 1e-8 * std::max(1.0, std::abs(brute)));
    }
  }
  SUBCASE("constant emission shift adds n*c") {
    CrfModel model = random_model(tags, rng, 3, 0);
    std::size_t n = 4;
    auto feats = random_features(model, rng, n, 3);
    double before = log_partition(model, feats);
    const double c = 0.73;
    auto& w = model.emission["always-on"];
    w.assign(tags.size(), c);
    for (auto& fv : feats) fv.sparse["always-on"] = 1.0;
    double after = log_partition(model, feats);
    CHECK(after == doctest::Approx(before + static_cast<double>(n) * c).epsilon(1e-10));
  }
}

TEST_CASE("viterbi against exhaustive argmax") {
  TagSet tags = reduced_tags();
  SplitMix64 rng(13);

  SUBCASE("zero model returns all-O by the tie rule") {
    CrfModel zero = make_crf_model(tags);
    std::vector<FeatureVector> feats(4);
    auto result = viterbi(zero, feats);
    CHECK(result.tags == std::vector<int>(4, TagSet::outside_tag));
    CHECK(result.score == 0.0);
  }
  SUBCASE("random instances match brute force") {
    for (int trial = 0; trial < 100; ++trial) {
      CrfModel model = random_model(tags, rng, 3, trial % 3 ? 0 : 2);
      std::size_t n = 1 + rng.next_below(5);
      auto feats = random_features(model, rng, n, 3);
      auto fast = viterbi(model, feats);
      auto brute = oracles::brute_inference(model, feats);
      CHECK(fast.tags == brute.best_tags);
      CHECK(std::abs(fast.score - brute.best_score) <=
            1e-9 * std::max(1.0, std::abs(brute.best_score)));
      // returned score is the score of the returned tags
      CHECK(fast.score ==
            doctest::Approx(sequence_score(model, feats, fast.tags)).epsilon(1e-12));
    }
  }
  SUBCASE("decoded sequences are always BIO-valid") {
    TagSet full = TagSet::techniques();
    for (int trial = 0; trial < 50; ++trial) {
      CrfModel model = random_model(full, rng, 4, 0);
      std::size_t n = 1 + rng.next_below(8);
      auto feats = random_features(model, rng, n, 4);
      CHECK(is_valid_bio(full, viterbi(model, feats).tags));
    }
  }
}

TEST_CASE("forward-backward marginals are a distribution at every position") {
  TagSet tags = reduced_tags();
  SplitMix64 rng(19);
  for (int trial = 0; trial < 50; ++trial) {
    CrfModel model = random_model(tags, rng, 3, 0);
    std::size_t n = 1 + rng.next_below(6);
    auto feats = random_features(model, rng, n, 3);
    auto marginals = crf_node_marginals(model, feats);
    REQUIRE(marginals.size() == n);
    for (const auto& row : marginals) {
      double sum = 0.0;
      for (double m : row) {
        CHECK(m >= 0.0);
        sum += m;
      }
      CHECK(std::abs(sum - 1.0) < 1e-10);
    }
  }
}

TEST_CASE("CRF nll basics") {
  TagSet tags = reduced_tags();
  SplitMix64 rng(23);
  CrfModel model = random_model(tags, rng, 3, 0);

  SUBCASE("loss is non-negative without regularization") {
    for (int trial = 0; trial < 30; ++trial) {
      CrfTrainSequence seq;
      std::size_t n = 1 + rng.next_below(4);
      seq.features = random_features(model, rng, n, 3);
      seq.gold = random_valid_tags(tags, n, rng);
      std::vector<CrfTrainSequence> batch = {seq};
      CHECK(crf_nll_and_gradient(model, batch, 0.0).loss >= -1e-12);
    }
  }
  SUBCASE("batch loss is the sum of per-sequence losses") {
    std::vector<CrfTrainSequence> batch;
    double sum = 0.0;
    for (int k = 0; k < 5; ++k) {
      CrfTrainSequence seq;
      std::size_t n = 1 + rng.next_below(4);
      seq.features = random_features(model, rng, n, 3);
      seq.gold = random_valid_tags(tags, n, rng);
      std::vector<CrfTrainSequence> single = {seq};
      sum += crf_nll_and_gradient(model, single, 0.0).loss;
      batch.push_back(std::move(seq));
    }
    CHECK(crf_nll_and_gradient(model, batch, 0.0).loss == doctest::Approx(sum).epsilon(1e-12));
  }
  SUBCASE("invalid gold tags are rejected") {
    CrfTrainSequence seq;
    seq.features = random_features(model, rng, 2, 3);
    seq.gold = {TagSet::outside_tag, tags.inside_tag(0)};
    std::vector<CrfTrainSequence> batch = {seq};
    CHECK_THROWS_AS(crf_nll_and_gradient(model, batch, 0.0), input_error);
  }
}

TEST_CASE("CRF gradient matches central finite differences") {
  TagSet tags = reduced_tags();
  SplitMix64 rng(31);
  const double h = 1e-5;
  for (int trial = 0; trial < 25; ++trial) {
    int n_feats = 2 + static_cast<int>(rng.next_below(3));
    int dense_dim = trial % 4 == 0 ? 2 : 0;
    CrfModel model = random_model(tags, rng, n_feats, dense_dim);

    std::vector<CrfTrainSequence> batch;
    int n_seqs = 1 + static_cast<int>(rng.next_below(3));
    for (int s = 0; s < n_seqs; ++s) {
      CrfTrainSequence seq;
      std::size_t n = 1 + rng.next_below(4);
      seq.features = random_features(model, rng, n, n_feats);
      seq.gold = random_valid_tags(tags, n, rng);
      batch.push_back(std::move(seq));
    }
    double l2 = trial % 2 ? 0.0 : 0.05;
    CrfLoss analytic = crf_nll_and_gradient(model, batch, l2);
    REQUIRE(std::isfinite(analytic.loss));

    auto loss_at = [&] { return crf_nll_and_gradient(model, batch, l2).loss; };
    auto check_coord = [&](double& coord, double grad) {
      double orig = coord;
      coord = orig + h;
      double up = loss_at();
      coord = orig - h;
      double down = loss_at();
      coord = orig;
      CHECK(oracles::rel_err(grad, (up - down) / (2.0 * h)) < 1e-4);
    };

    for (auto& [id, w] : model.emission)
      for (std::size_t y = 0; y < w.size(); ++y)
        check_coord(w[y], analytic.gradient.emission.at(id)[y]);
    for (auto& [src, w] : model.dense_emission)
      for (std::size_t k = 0; k < w.size(); ++k)
        check_coord(w[k], analytic.gradient.dense_emission.at(src)[k]);
    const int width = model.width();
    for (int from = 0; from < width; ++from)
      for (int to = 0; to < width; ++to)
        if (model.tags.transition_allowed(from, to))
          check_coord(model.trans(from, to), analytic.gradient.transitions[from * width + to]);
  }
}

TEST_CASE("train_crf learns the planted corpus") {
  synth::Corpus corpus = synth::make_planted_corpus(40, 7);
  std::vector<TokenSequence> train_seqs, dev_seqs;
  for (std::size_t i = 0; i < corpus.articles.size(); ++i) {
    std::vector<FragmentAnnotation> anns;
    for (const auto& ann : corpus.annotations)
      if (ann.article_id == corpus.articles[i].id) anns.push_back(ann);
    auto seqs = encode_bio(corpus.articles[i], anns, tokenize);
    auto& dst = i < 32 ? train_seqs : dev_seqs;
    for (auto& s : seqs) dst.push_back(std::move(s));
  }

  TokenFeatureConfig features;
  features.surface = true;
  features.lowercase = true;
  features.shape = true;
  features.window = true;

  CrfTrainConfig config;
  config.max_epochs = 50;
  config.learning_rate = 0.1;
  config.batch_size = 32;
  config.patience = 10;
  config.seed = 3;

  CrfTrainResult result = train_crf(train_seqs, dev_seqs, features, {}, config);
  REQUIRE(result.report.selected_epoch >= 1);
  double best_f = result.report.epochs[result.report.selected_epoch - 1].dev_f;
  CHECK(best_f >= 0.8);

  // selected epoch is the dev-F argmax among completed epochs
  for (const auto& epoch : result.report.epochs) CHECK(epoch.dev_f <= best_f);

  // training NLL decreases over the first epochs on this fixture
  SUBCASE("training NLL decreases at a small rate") {
    CrfTrainConfig slow = config;
    slow.learning_rate = 0.01;
    slow.max_epochs = 5;
    slow.patience = 100;
    CrfTrainResult r = train_crf(train_seqs, dev_seqs, features, {}, slow);
    REQUIRE(r.report.epochs.size() == 5);
    for (std::size_t e = 1; e < r.report.epochs.size(); ++e)
      CHECK(r.report.epochs[e].train_nll < r.report.epochs[e - 1].train_nll);
  }

  SUBCASE("trained model tags a planted trigger") {
    Article probe = parse_article("the council said vile things on tuesday.\n", "probe");
    auto frags = predict_fragments(result.model, probe, tokenize, {});
    REQUIRE(!frags.empty());
    bool found = false;
    for (const auto& f : frags)
      if (f.technique == Technique::loaded_language &&
          probe.text.substr(f.span.begin, f.span.length()).find("vile") != std::string::npos)
        found = true;
    CHECK(found);
    for (const auto& f : frags) {
      CHECK(f.span.begin >= probe.sentences[0].begin);
      CHECK(f.span.end <= probe.sentences[0].end);
    }
  }

  SUBCASE("save/load reproduces Viterbi outputs exactly") {
    std::string saved = save_crf_model(result.model);
    CrfModel loaded = load_crf_model(saved);
    CHECK(save_crf_model(loaded) == saved);
    for (const auto& seq : dev_seqs) {
      if (seq.tokens.empty()) continue;
      std::vector<FeatureVector> feats;
      for (std::size_t i = 0; i < seq.tokens.size(); ++i)
        feats.push_back(assemble_token_features(seq.tokens, i, features, {}));
      CHECK(viterbi(loaded, feats).tags == viterbi(result.model, feats).tags);
    }
  }
}

TEST_CASE("train_crf early stopping and edge cases") {
  synth::Corpus corpus = synth::make_planted_corpus(6, 11);
  std::vector<TokenSequence> seqs;
  for (const auto& article : corpus.articles) {
    std::vector<FragmentAnnotation> anns;
    for (const auto& ann : corpus.annotations)
      if (ann.article_id == article.id) anns.push_back(ann);
    for (auto& s : encode_bio(article, anns, tokenize)) seqs.push_back(std::move(s));
  }
  TokenFeatureConfig features;
  features.lowercase = true;

  SUBCASE("patience 0 stops after the first non-improving epoch") {
    CrfTrainConfig config;
    config.learning_rate = 0.0;  // dev F frozen, so epoch 2 cannot improve
    config.max_epochs = 30;
    config.patience = 0;
    CrfTrainResult result = train_crf(seqs, seqs, features, {}, config);
    CHECK(result.report.epochs.size() == 2);
    CHECK(result.report.selected_epoch == 1);
    CHECK(result.report.stopping_reason.find("early stopping") != std::string::npos);
  }
  SUBCASE("no dev set runs to max epochs") {
    CrfTrainConfig config;
    config.max_epochs = 3;
    CrfTrainResult result = train_crf(seqs, {}, features, {}, config);
    CHECK(result.report.epochs.size() == 3);
    CHECK(result.report.selected_epoch == 3);
    CHECK(result.report.stopping_reason.find("no dev set") != std::string::npos);
  }
  SUBCASE("divergent training aborts with an error") {
    CrfTrainConfig config;
    config.learning_rate = 1e160;
    config.l2 = 1.0;
    config.max_epochs = 5;
    CHECK_THROWS_AS(train_crf(seqs, seqs, features, {}, config), input_error);
  }
  SUBCASE("empty training set is rejected") {
    CHECK_THROWS_AS(train_crf({}, seqs, features, {}, {}), input_error);
  }
}

TEST_CASE("model serialization round-trips dense blocks and forbidden transitions") {
  SplitMix64 rng(61);
  CrfModel model = random_model(reduced_tags(), rng, 4, 3);
  model.feature_config.lowercase = true;
  model.feature_config.word_vectors = true;
  model.config.seed = 42;
  model.config.patience = 7;

  std::string saved = save_crf_model(model);
  CrfModel loaded = load_crf_model(saved);
  CHECK(save_crf_model(loaded) == saved);
  CHECK(loaded.tags.labels() == model.tags.labels());
  CHECK(loaded.dense_sources == model.dense_sources);
  CHECK(loaded.feature_config == model.feature_config);
  CHECK(loaded.config.patience == 7);
  CHECK(loaded.trans(loaded.tags.start(), loaded.tags.inside_tag(0)) == neg_inf);

  for (int trial = 0; trial < 20; ++trial) {
    auto feats = random_features(model, rng, 1 + rng.next_below(5), 4);
    CHECK(viterbi(loaded, feats).tags == viterbi(model, feats).tags);
    CHECK(log_partition(loaded, feats) == log_partition(model, feats));
  }

  CHECK_THROWS_AS(load_crf_model("not a model"), input_error);
  CHECK_THROWS_AS(load_crf_model("crf-model v1\nconfig lr=1\n"), input_error);
}

TEST_CASE("predict_fragments with an untrained model is all O") {
  CrfModel zero = make_crf_model(TagSet::techniques());
  Article a = parse_article("nothing to see here.\nmove along now.\n", "z");
  CHECK(predict_fragments(zero, a, tokenize, {}).empty());
}

TEST_CASE("predict_fragments rejects mismatched dense dimensions") {
  TokenFeatureConfig features;
  features.word_vectors = true;
  WordVectorTable trained_with = load_word_vectors("a 1 2 3\n");
  FeatureResources res;
  res.word_vectors = &trained_with;
  CrfModel model = make_crf_model(TagSet::techniques(),
                                  declared_dense_sources(features, res));
  model.feature_config = features;

  WordVectorTable wrong = load_word_vectors("a 1 2\n");
  FeatureResources wrong_res;
  wrong_res.word_vectors = &wrong;
  Article a = parse_article("a b c\n", "m");
  CHECK_THROWS_AS(predict_fragments(model, a, tokenize, wrong_res), input_error);
  CHECK(predict_fragments(model, a, tokenize, res).empty());
}
