// SPDX-License-Identifier: Apache-2.0
// Miniature study: corpus assembly, tokenizer, model dims, and protocols.

#include "peftlab/experiment.hpp"

#include "peftlab/rng.hpp"
#include "peftlab/top_format.hpp"

namespace peftlab {

void MiniProtocol::validate() const {
    if (pretrain_rows < 1 || pretrain_dev_rows < 1 || train_rows < 1 || dev_rows < 1 || test_rows < 1) {
        throw ExperimentError("split sizes must be positive");
    }
    if (pool_draws < pretrain_rows + pretrain_dev_rows || pool_draws < train_rows + dev_rows + test_rows) {
        throw ExperimentError("pool draws cannot cover the requested splits");
    }
    if (spis < 1) throw ExperimentError("spis floor must be positive");
    if (bpe_vocab < 8) throw ExperimentError("vocabulary target too small");
}

namespace {

// Deduped, shuffled, decoupled rows for one domain.
std::vector<DatasetRow> domain_pool(const Grammar & g, int draws, uint64_t seed) {
    std::vector<DatasetRow> rows = dedupe_by_utterance(generate(g, draws, seed));
    Rng                     rng(seed ^ 0x9e3779b97f4a7c15ull);  // decouple split order from draw order
    rng.shuffle(rows);
    for (DatasetRow & r : rows) r.target = serialize_tree(decouple(parse_tree(r.target)));
    return rows;
}

std::vector<DatasetRow> take(const std::vector<DatasetRow> & pool, size_t & cursor, int n, const char * what) {
    if (cursor + (size_t) n > pool.size()) {
        throw ExperimentError(std::string("domain pool too small for the ") + what + " split: have " +
                              std::to_string(pool.size() - cursor) + ", need " + std::to_string(n));
    }
    std::vector<DatasetRow> out(pool.begin() + (int64_t) cursor, pool.begin() + (int64_t) cursor + n);
    cursor += (size_t) n;
    return out;
}

}  // namespace

MiniCorpus build_mini_corpus(const MiniProtocol & p, uint64_t seed) {
    p.validate();
    MiniCorpus c;

    const Grammar assistant = default_pretrain_grammar();
    const Grammar food      = default_food_grammar();

    auto   apool  = domain_pool(assistant, p.pool_draws, seed);
    size_t cursor = 0;
    c.pretrain_train = take(apool, cursor, p.pretrain_rows, "pretrain");
    c.pretrain_dev   = take(apool, cursor, p.pretrain_dev_rows, "pretrain dev");

    auto fpool = domain_pool(food, p.pool_draws, seed + 1);
    cursor     = 0;
    c.train = take(fpool, cursor, p.train_rows, "train");
    c.dev   = take(fpool, cursor, p.dev_rows, "dev");
    c.test  = take(fpool, cursor, p.test_rows, "test");

    SpisSpec spec;
    spec.spis   = p.spis;
    spec.seed   = seed + 2;
    c.low_train = spis_sample(c.train, spec).rows;

    for (const auto & [label, alts] : food.intents) c.food_labels.push_back(label);
    for (const auto & [label, alts] : food.slots) c.food_labels.push_back(label);
    // map order is already sorted within each kind; IN: sorts before SL:
    return c;
}

Tokenizer build_mini_tokenizer(const MiniCorpus & corpus, int32_t target_size) {
    std::vector<std::string> text;

    // One doubled word per printable character seeds the base vocabulary in
    // both positions ("AA" yields "A" and "A</w>") without adding merges —
    // the stand-in for byte-level coverage. Labels of an unseen domain stay
    // encodable instead of collapsing to <unk>.
    std::string charset;
    for (char ch = '!'; ch <= '~'; ++ch) {
        if (!charset.empty()) charset += ' ';
        charset += ch;
        charset += ch;
    }
    text.push_back(charset);

    for (const DatasetRow & r : corpus.pretrain_train) {
        text.push_back(r.utterance);
        text.push_back(r.target);
    }
    for (const DatasetRow & r : corpus.pretrain_dev) {
        text.push_back(r.utterance);
        text.push_back(r.target);
    }

    Tokenizer tok = train_bpe(text, target_size);
    add_special_labels(tok, corpus.food_labels);
    return tok;
}

ModelConfig mini_model_config(const Tokenizer & tok) {
    ModelConfig cfg;
    cfg.encoder_layers = 3;  // partial tuning then trains a strict subset
    cfg.decoder_layers = 3;
    cfg.heads          = 4;
    cfg.hid_dim        = 64;
    cfg.ffn_dim        = 256;
    cfg.vocab_size     = tok.vocab.size();
    cfg.max_positions  = 96;
    cfg.precision      = "f32";
    cfg.validate();
    return cfg;
}

std::vector<std::pair<std::string, TuningStrategy>> mini_strategy_catalog() {
    TuningStrategy full;

    TuningStrategy top2;
    top2.kind       = TuningKind::partial;
    top2.top_layers = 2;

    TuningStrategy bitfit;
    bitfit.kind = TuningKind::bitfit;

    TuningStrategy prefix;
    prefix.kind           = TuningKind::prefix;
    prefix.prefix.length  = 20;
    prefix.prefix.mid_dim = 128;

    TuningStrategy st_prefix  = prefix;
    st_prefix.special_tokens  = true;

    return {
        { "full", full }, { "top2", top2 }, { "bitfit", bitfit }, { "prefix", prefix }, { "prefix+st", st_prefix },
    };
}

TrainConfig mini_pretrain_config(uint64_t seed) {
    TrainConfig t;
    t.lr                 = 3e-4;
    t.batch_size         = 16;
    t.grad_accumulation  = 1;
    t.max_epochs         = 30;
    t.patience           = 4;
    t.beam_size          = 4;
    t.max_target_length  = 88;  // longest decoupled target is ~71 tokens
    t.seed               = seed;
    t.eval_frequency     = 1;
    t.duplication_target = 0;  // the pretraining set is already large
    return t;
}

TrainConfig mini_tune_config(const TuningStrategy & st, bool low_data, uint64_t seed) {
    TrainConfig t = mini_pretrain_config(seed);
    switch (st.kind) {
        case TuningKind::full: t.lr = 1e-4; break;
        case TuningKind::partial: t.lr = 3e-4; break;
        case TuningKind::bitfit: t.lr = 1e-3; break;
        case TuningKind::prefix: t.lr = st.special_tokens ? 2e-3 : 2e-3; break;
    }
    if (low_data) {
        t.duplication_target = 2000;  // grow the covering sample to one epoch's worth
        t.max_epochs         = 20;
    }
    return t;
}

}  // namespace peftlab
