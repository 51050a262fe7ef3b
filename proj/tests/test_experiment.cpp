// SPDX-License-Identifier: Apache-2.0
//
// Miniature-study plumbing: corpus splits and decoupled targets, tokenizer
// coverage of an unseen domain, special-row re-initialization against a
// hand-computed average, protocol knobs, and one minimal end-to-end run.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "peftlab/experiment.hpp"
#include "peftlab/top_format.hpp"

using namespace peftlab;

namespace {

// Small enough to pretrain in seconds; used only by the smoke test.
MiniProtocol tiny_protocol() {
    MiniProtocol p;
    p.pool_draws        = 4000;
    p.pretrain_rows     = 120;
    p.pretrain_dev_rows = 30;
    p.train_rows        = 48;
    p.dev_rows          = 16;
    p.test_rows         = 16;
    p.spis              = 2;
    p.bpe_vocab         = 400;
    return p;
}

std::set<std::string> utterances(const std::vector<DatasetRow> & rows) {
    std::set<std::string> out;
    for (const DatasetRow & r : rows) out.insert(r.utterance);
    return out;
}

bool disjoint(const std::set<std::string> & a, const std::set<std::string> & b) {
    for (const std::string & s : a) {
        if (b.count(s)) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("protocol validation rejects impossible settings") {
    MiniProtocol p;
    CHECK_NOTHROW(p.validate());
    p.pool_draws = 100;
    CHECK_THROWS_AS(p.validate(), ExperimentError);
    p            = MiniProtocol{};
    p.spis       = 0;
    CHECK_THROWS_AS(p.validate(), ExperimentError);
    p           = MiniProtocol{};
    p.test_rows = 0;
    CHECK_THROWS_AS(p.validate(), ExperimentError);
}

TEST_CASE("mini corpus cuts disjoint splits with decoupled targets") {
    MiniProtocol p;
    MiniCorpus   c = build_mini_corpus(p, 7);

    CHECK((int) c.pretrain_train.size() == p.pretrain_rows);
    CHECK((int) c.pretrain_dev.size() == p.pretrain_dev_rows);
    CHECK((int) c.train.size() == p.train_rows);
    CHECK((int) c.dev.size() == p.dev_rows);
    CHECK((int) c.test.size() == p.test_rows);

    auto tr = utterances(c.train), dv = utterances(c.dev), te = utterances(c.test);
    CHECK(tr.size() == c.train.size());  // dedup really held within the split
    CHECK(disjoint(tr, dv));
    CHECK(disjoint(tr, te));
    CHECK(disjoint(dv, te));
    CHECK(disjoint(utterances(c.pretrain_train), utterances(c.pretrain_dev)));

    // decoupled form is a fixpoint: decoupling again changes nothing
    for (const auto & rows : { c.pretrain_train, c.train, c.test }) {
        for (size_t i = 0; i < rows.size(); i += 37) {
            SemTree t = parse_tree(rows[i].target);
            CHECK(serialize_tree(decouple(t)) == rows[i].target);
        }
    }
    for (const DatasetRow & r : c.train) CHECK(r.domain == "food");
    for (const DatasetRow & r : c.pretrain_train) CHECK(r.domain == "assistant");

    // the SPIS sample is drawn from train and hits the floor where possible
    auto pool = utterances(c.train);
    for (const DatasetRow & r : c.low_train) CHECK(pool.count(r.utterance) == 1);
    for (const std::string & label : c.food_labels) {
        int in_low = 0, in_train = 0;
        for (const DatasetRow & r : c.low_train) {
            auto labs = collect_labels(parse_tree(r.target));
            in_low += std::count(labs.begin(), labs.end(), label) > 0;
        }
        for (const DatasetRow & r : c.train) {
            auto labs = collect_labels(parse_tree(r.target));
            in_train += std::count(labs.begin(), labs.end(), label) > 0;
        }
        CHECK(in_low >= std::min(p.spis, in_train));
    }

    // 8 intents + 10 slots, sorted
    REQUIRE(c.food_labels.size() == 18);
    CHECK(std::is_sorted(c.food_labels.begin(), c.food_labels.end()));
    CHECK(c.food_labels.front().rfind("IN:", 0) == 0);
    CHECK(c.food_labels.back().rfind("SL:", 0) == 0);

    // reproducible from the seed, different under another seed
    MiniCorpus again = build_mini_corpus(p, 7);
    CHECK(again.train[0].utterance == c.train[0].utterance);
    CHECK(again.low_train.size() == c.low_train.size());
    MiniCorpus other = build_mini_corpus(p, 8);
    bool       same  = true;
    for (size_t i = 0; i < 20; ++i) same = same && other.train[i].utterance == c.train[i].utterance;
    CHECK_FALSE(same);
}

TEST_CASE("mini tokenizer covers the unseen domain without unknowns") {
    MiniProtocol p;
    MiniCorpus   c   = build_mini_corpus(p, 7);
    Tokenizer    tok = build_mini_tokenizer(c, p.bpe_vocab);

    CHECK(tok.vocab.size() == p.bpe_vocab + 18);
    REQUIRE(tok.vocab.special_labels.size() == 18);

    int64_t plain_total = 0, special_total = 0;
    for (const DatasetRow & r : c.train) {
        for (bool sp : { false, true }) {
            for (int32_t id : tok.encode(r.utterance, sp)) CHECK(id != Vocabulary::unk_id);
            auto tgt = tok.encode(r.target, sp);
            for (int32_t id : tgt) CHECK(id != Vocabulary::unk_id);
            (sp ? special_total : plain_total) += (int64_t) tgt.size();
        }
    }
    // unseen labels are clunky as subwords and one token as specials
    CHECK(special_total < plain_total);

    // every label occurrence costs exactly one special id
    for (size_t i = 0; i < c.train.size(); i += 11) {
        auto    tgt   = tok.encode(c.train[i].target, true);
        int64_t nspec = 0;
        for (int32_t id : tgt) nspec += tok.vocab.is_special(id);
        CHECK(nspec == semantic_node_count(parse_tree(c.train[i].target)));
    }
}

TEST_CASE("special rows restart from the averaged subword init") {
    MiniProtocol p   = tiny_protocol();
    MiniCorpus   c   = build_mini_corpus(p, 3);
    Tokenizer    tok = build_mini_tokenizer(c, p.bpe_vocab);
    ModelConfig  cfg = mini_model_config(tok);

    auto store  = init_model_params<float>(cfg, 5);
    auto before = store;
    overwrite_special_rows(store, tok);

    const Tensor<float> & emb = store.tensor("embed.tokens");
    const Tensor<float> & old = before.tensor("embed.tokens");
    for (int32_t r = 0; r < tok.vocab.base_size; ++r) {  // base rows untouched
        for (int64_t col = 0; col < emb.cols(); col += 13) CHECK(emb.at(r, col) == old.at(r, col));
    }
    for (size_t i = 0; i < tok.vocab.special_labels.size(); ++i) {
        auto   ids = tok.encode(tok.vocab.special_labels[i], false);
        double want0 = 0;
        for (int32_t id : ids) want0 += old.at(id, 0);
        want0 /= (double) ids.size();
        CHECK(emb.at(tok.vocab.base_size + (int32_t) i, 0) == doctest::Approx(want0).epsilon(1e-6));
    }
}

TEST_CASE("model config and catalog line up with the study design") {
    MiniProtocol p;
    MiniCorpus   c   = build_mini_corpus(p, 7);
    Tokenizer    tok = build_mini_tokenizer(c, p.bpe_vocab);
    ModelConfig  cfg = mini_model_config(tok);
    CHECK(cfg.encoder_layers == 3);
    CHECK(cfg.decoder_layers == 3);
    CHECK(cfg.vocab_size == tok.vocab.size());
    CHECK(cfg.precision == "f32");

    auto catalog = mini_strategy_catalog();
    REQUIRE(catalog.size() == 5);
    std::vector<std::string> names;
    for (auto & [n, st] : catalog) {
        names.push_back(n);
        CHECK_NOTHROW(st.validate(cfg));
    }
    CHECK(names == std::vector<std::string>{ "full", "top2", "bitfit", "prefix", "prefix+st" });
    CHECK(catalog[1].second.top_layers == 2);             // strict subset of 3 decoder layers
    CHECK(catalog[3].second.prefix.length == 20);
    CHECK_FALSE(catalog[3].second.special_tokens);
    CHECK(catalog[4].second.special_tokens);
    CHECK(catalog[4].second.prefix.length == catalog[3].second.prefix.length);

    // stored budgets shrink from full to the parameter-efficient end
    auto b = [&](const TuningStrategy & st) { return compute_budget(cfg, st, 18).stored; };
    CHECK(b(catalog[0].second) > b(catalog[1].second));
    CHECK(b(catalog[1].second) > b(catalog[3].second));
    CHECK(b(catalog[3].second) > b(catalog[2].second));
}

TEST_CASE("tune configs keep per-family rates and low-data growth") {
    auto catalog = mini_strategy_catalog();
    auto full    = mini_tune_config(catalog[0].second, false, 9);
    auto bitfit  = mini_tune_config(catalog[2].second, false, 9);
    auto prefix  = mini_tune_config(catalog[3].second, false, 9);
    CHECK(full.seed == 9);
    CHECK(full.lr < bitfit.lr);  // tiny trainable sets want hotter rates
    CHECK(full.lr < prefix.lr);
    CHECK(full.duplication_target == 0);

    auto low = mini_tune_config(catalog[3].second, true, 9);
    CHECK(low.duplication_target == 2000);
    CHECK(low.lr == prefix.lr);
    CHECK_NOTHROW(low.validate());
    CHECK_NOTHROW(mini_pretrain_config(1).validate());
}

TEST_CASE("a minimal end-to-end run produces coherent numbers") {
    MiniProtocol p   = tiny_protocol();
    MiniCorpus   c   = build_mini_corpus(p, 3);
    Tokenizer    tok = build_mini_tokenizer(c, p.bpe_vocab);
    ModelConfig  cfg = mini_model_config(tok);

    TrainConfig pre = mini_pretrain_config(1);
    pre.max_epochs  = 2;
    double em       = -1;
    auto   base     = pretrain_base<float>(cfg, tok, c, pre, &em);
    CHECK(em >= 0);  // evaluated, even if the 2-epoch model is weak
    CHECK(base.tensor("embed.tokens").rows() == tok.vocab.size());

    TuningStrategy st = mini_strategy_catalog()[4].second;  // prefix + specials
    TrainConfig    tc = mini_tune_config(st, false, 2);
    tc.max_epochs     = 2;
    MiniRunResult r   = run_mini_strategy(base, cfg, tok, st, tc, c.train, c.dev, c.test);
    CHECK(r.epochs == 2);
    CHECK(r.val_em >= 0);
    CHECK(r.val_em <= 1);
    CHECK(r.test_em >= 0);
    CHECK(r.test_em <= 1);
    CHECK(r.budget == compute_budget(cfg, st, 18).train_time);
}
