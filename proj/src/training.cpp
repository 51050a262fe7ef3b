// SPDX-License-Identifier: Apache-2.0
//
// Non-templated training pieces: run configuration, early stopping, dataset
// encoding and exact-match evaluation.

#include "peftlab/training.hpp"

#include <cmath>

namespace peftlab {

void TrainConfig::validate() const {
    if (!(lr > 0) || !std::isfinite(lr)) throw TrainingError("learning rate must be positive and finite");
    if (batch_size < 1) throw TrainingError("batch size must be positive");
    if (grad_accumulation < 1) throw TrainingError("gradient accumulation must be positive");
    if (max_epochs < 1) throw TrainingError("max epochs must be positive");
    if (patience < 1) throw TrainingError("patience must be positive");
    if (beam_size < 1) throw TrainingError("beam size must be positive");
    if (max_target_length < 1) throw TrainingError("max target length must be positive");
    if (eval_frequency < 1) throw TrainingError("eval frequency must be positive");
    if (duplication_target < 0) throw TrainingError("duplication target must be non-negative");
}

TrainConfig TrainConfig::from_kv(const KvConfig & kv) {
    TrainConfig c;
    c.lr                 = kv.get_double("train.lr", c.lr);
    c.batch_size         = (int) kv.get_int("train.batch_size", c.batch_size);
    c.grad_accumulation  = (int) kv.get_int("train.grad_accumulation", c.grad_accumulation);
    c.max_epochs         = (int) kv.get_int("train.max_epochs", c.max_epochs);
    c.patience           = (int) kv.get_int("train.patience", c.patience);
    c.beam_size          = (int) kv.get_int("train.beam_size", c.beam_size);
    c.max_target_length  = (int) kv.get_int("train.max_target_length", c.max_target_length);
    c.seed               = (uint64_t) kv.get_int("train.seed", (int64_t) c.seed);
    c.eval_frequency     = (int) kv.get_int("train.eval_frequency", c.eval_frequency);
    c.duplication_target = (int) kv.get_int("train.duplication_target", c.duplication_target);
    return c;
}

void TrainConfig::to_kv(KvConfig & kv) const {
    kv.set("train.lr", std::to_string(lr));
    kv.set("train.batch_size", std::to_string(batch_size));
    kv.set("train.grad_accumulation", std::to_string(grad_accumulation));
    kv.set("train.max_epochs", std::to_string(max_epochs));
    kv.set("train.patience", std::to_string(patience));
    kv.set("train.beam_size", std::to_string(beam_size));
    kv.set("train.max_target_length", std::to_string(max_target_length));
    kv.set("train.seed", std::to_string(seed));
    kv.set("train.eval_frequency", std::to_string(eval_frequency));
    kv.set("train.duplication_target", std::to_string(duplication_target));
}

EarlyStopper::EarlyStopper(int patience) : patience_(patience), best_(0) {
    if (patience < 1) throw TrainingError("patience must be positive");
}

bool EarlyStopper::observe(double metric) {
    if (!seen_ || metric > best_) {
        best_  = metric;
        since_ = 0;
        seen_  = true;
        return true;
    }
    since_++;
    return false;
}

std::vector<EncodedExample> encode_dataset(const std::vector<DatasetRow> & rows, const Tokenizer & tok,
                                           bool use_special, int64_t max_positions) {
    std::vector<EncodedExample> out;
    out.reserve(rows.size());
    for (size_t i = 0; i < rows.size(); ++i) {
        EncodedExample ex;
        ex.src         = tok.encode(rows[i].utterance, use_special);
        ex.tgt         = tok.encode(rows[i].target, use_special);
        ex.target_text = rows[i].target;
        if (ex.tgt.empty()) throw TrainingError("row " + std::to_string(i + 1) + ": target tokenizes to nothing");
        if ((int64_t) ex.src.size() + 1 > max_positions || (int64_t) ex.tgt.size() + 1 > max_positions) {
            throw TrainingError("row " + std::to_string(i + 1) + ": sequence exceeds " +
                                std::to_string(max_positions) + " positions");
        }
        out.push_back(std::move(ex));
    }
    return out;
}

EvalResult evaluate_em(const std::vector<EncodedExample> & examples, const DecodeFn & decode, const Tokenizer & tok) {
    EvalResult r;
    for (const EncodedExample & ex : examples) {
        r.total++;
        SemNode ref = parse_tree(ex.target_text);
        try {
            std::vector<int32_t> ids = decode(ex.src);
            SemNode              hyp = parse_tree(tok.decode(ids));
            if (unordered_exact_match(ref, hyp)) r.matches++;
        } catch (const FormatError &) {
            // an unparseable hypothesis is simply not a match
        }
    }
    return r;
}

}  // namespace peftlab
