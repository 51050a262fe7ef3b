// SPDX-License-Identifier: Apache-2.0
//
// The miniature study: a desk-scale version of the full experiment.
//
// A small encoder-decoder is pretrained from scratch on a synthetic
// assistant domain, then adapted to an unseen food domain under each tuning
// strategy — full fine-tuning, top-2 decoder layers, bitfit, and prefix
// tuning with and without special label tokens — on both the full food
// split and a 10-SPIS covering sample. The food labels never occur in the
// pretraining corpus, so special-token rows start from averaged subword
// inits exactly like labels added to a real pretrained model.

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "peftlab/datagen.hpp"
#include "peftlab/tokenizer.hpp"
#include "peftlab/training.hpp"

namespace peftlab {

struct ExperimentError : std::runtime_error {
    explicit ExperimentError(const std::string & msg) : std::runtime_error(msg) {}
};

// Corpus sizes and shared protocol knobs for the miniature study.
struct MiniProtocol {
    int     pool_draws        = 40000;  // raw draws before dedup, per domain
    int     pretrain_rows     = 3000;
    int     pretrain_dev_rows = 300;
    int     train_rows        = 2000;
    int     dev_rows          = 300;
    int     test_rows         = 300;
    int     spis              = 10;
    int32_t bpe_vocab         = 640;

    void validate() const;
};

struct MiniCorpus {
    std::vector<DatasetRow>  pretrain_train, pretrain_dev;  // assistant domain
    std::vector<DatasetRow>  train, dev, test;              // food domain
    std::vector<DatasetRow>  low_train;                     // SPIS covering sample of train
    std::vector<std::string> food_labels;                   // IN:/SL: names, sorted
};

// Generates both domains, dedupes by utterance, shuffles, and cuts disjoint
// splits. All targets are stored in decoupled form.
MiniCorpus build_mini_corpus(const MiniProtocol & p, uint64_t seed);

// BPE over the assistant corpus only, so food vocabulary is learned purely
// through shared words. A charset seed line puts every printable character
// in the base vocabulary (final and non-final position) the way byte-level
// BPE would, without contributing merges. Food labels become special ids.
Tokenizer build_mini_tokenizer(const MiniCorpus & corpus, int32_t target_size);

// Toy dimensions: 3+3 layers so partial tuning trains a strict subset of
// the decoder, single-precision for speed.
ModelConfig mini_model_config(const Tokenizer & tok);

// The five strategies of the study, with miniature prefix dimensions.
std::vector<std::pair<std::string, TuningStrategy>> mini_strategy_catalog();

// Per-phase protocols. Rates were calibrated once on validation EM and then
// frozen; each strategy family keeps its own rate the way a per-method
// search would.
TrainConfig mini_pretrain_config(uint64_t seed);
TrainConfig mini_tune_config(const TuningStrategy & st, bool low_data, uint64_t seed);

struct MiniRunResult {
    double  val_em        = 0;
    double  test_em       = 0;
    int64_t budget        = 0;  // trainable parameters during the run
    int     epochs        = 0;
    bool    stopped_early = false;
};

// Overwrites the special embedding rows with the mean of the base-subword
// rows each label breaks into; called after pretraining so the inits come
// from trained embeddings.
template <typename Real>
void overwrite_special_rows(ParamStore<Real> & store, const Tokenizer & tok) {
    const std::vector<std::string> & labels = tok.vocab.special_labels;
    if (labels.empty()) return;
    Tensor<Real> & emb = store.tensor("embed.tokens");
    if (emb.rows() != tok.vocab.size()) {
        throw ExperimentError("embedding rows " + std::to_string(emb.rows()) + " != vocabulary size " +
                              std::to_string(tok.vocab.size()));
    }
    for (size_t i = 0; i < labels.size(); ++i) {
        std::vector<Real> row = averaged_init(labels[i], emb, tok);
        Real * dst = emb.row_ptr(tok.vocab.base_size + (int32_t) i);
        for (size_t c = 0; c < row.size(); ++c) dst[c] = row[c];
    }
}

// Full fine-tuning on the assistant corpus from random init, then special
// rows re-initialized from the trained embeddings. The returned store is
// the shared starting point for every strategy run.
template <typename Real>
ParamStore<Real> pretrain_base(const ModelConfig & cfg, const Tokenizer & tok, const MiniCorpus & corpus,
                               const TrainConfig & tcfg, double * pretrain_em = nullptr) {
    ParamStore<Real> store = init_model_params<Real>(cfg, tcfg.seed);
    TuningStrategy   full;
    StrategyPlan plan = apply_strategy(store, cfg, full, (int) tok.vocab.special_labels.size(), tcfg.seed);
    auto train = encode_dataset(corpus.pretrain_train, tok, false, cfg.max_positions);
    auto dev   = encode_dataset(corpus.pretrain_dev, tok, false, cfg.max_positions);
    auto out   = train_model(store, cfg, plan, tcfg, train, dev, tok);
    if (pretrain_em != nullptr) *pretrain_em = out.best_val_em;
    overwrite_special_rows(out.best_params, tok);
    return out.best_params;
}

// One adaptation run: copy the base, apply the strategy, train on the given
// rows (duplicated up to the config's duplication target), report the best
// validation EM and the test EM of the selected parameters.
template <typename Real>
MiniRunResult run_mini_strategy(const ParamStore<Real> & base, const ModelConfig & cfg, const Tokenizer & tok,
                                const TuningStrategy & st, const TrainConfig & tcfg,
                                const std::vector<DatasetRow> & train_rows, const std::vector<DatasetRow> & dev_rows,
                                const std::vector<DatasetRow> & test_rows,
                                const std::function<void(const EpochRecord &)> & on_epoch = {}) {
    ParamStore<Real> store = base;
    StrategyPlan plan = apply_strategy(store, cfg, st, (int) tok.vocab.special_labels.size(), tcfg.seed);

    const bool sp    = st.special_tokens;
    auto       train = encode_dataset(train_rows, tok, sp, cfg.max_positions);
    auto       dev   = encode_dataset(dev_rows, tok, sp, cfg.max_positions);
    auto       test  = encode_dataset(test_rows, tok, sp, cfg.max_positions);
    auto       grown = duplicate_low_data(train, tcfg.duplication_target);

    MiniRunResult r;
    r.budget = plan.budget.train_time;

    // Nothing trainable (a zero-length plain prefix) makes the run a pure
    // evaluation of the base; training epochs could not change any output.
    if (plan.budget.train_time == 0) {
        InferenceModel<Real> model(store, cfg, materialize_prefix(store, cfg, plan));
        DecodeFn             decode = [&](const std::vector<int32_t> & src) {
            auto es = model.encode(src);
            return model.beam_decode(es, tcfg.beam_size, tcfg.max_target_length).ids;
        };
        r.val_em  = evaluate_em(dev, decode, tok).em();
        r.test_em = evaluate_em(test, decode, tok).em();
        return r;
    }

    auto out = train_model(store, cfg, plan, tcfg, grown, dev, tok, on_epoch);

    r.val_em        = out.best_val_em;
    r.epochs        = (int) out.epochs.size();
    r.stopped_early = out.stopped_early;

    InferenceModel<Real> model(out.best_params, cfg, materialize_prefix(out.best_params, cfg, plan));
    DecodeFn             decode = [&](const std::vector<int32_t> & src) {
        auto es = model.encode(src);
        return model.beam_decode(es, tcfg.beam_size, tcfg.max_target_length).ids;
    };
    r.test_em = evaluate_em(test, decode, tok).em();
    return r;
}

}  // namespace peftlab
