// SPDX-License-Identifier: Apache-2.0
//
// Training loop for one run: teacher-forced per-example tapes, gradient
// accumulation to a fixed effective batch, Adam updates restricted to the
// strategy's trainable set, periodic beam-decoded exact-match evaluation,
// patience-based early stopping, and a bitwise audit that frozen parameters
// never moved.

#pragma once

#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "peftlab/adam.hpp"
#include "peftlab/inference.hpp"
#include "peftlab/kv_config.hpp"
#include "peftlab/model.hpp"
#include "peftlab/param_store.hpp"
#include "peftlab/rng.hpp"
#include "peftlab/tokenizer.hpp"
#include "peftlab/top_format.hpp"
#include "peftlab/tuning.hpp"

namespace peftlab {

struct TrainingError : std::runtime_error {
    explicit TrainingError(const std::string & msg) : std::runtime_error(msg) {}
};

struct TrainConfig {
    double   lr                 = 1e-3;
    int      batch_size         = 8;
    int      grad_accumulation  = 3;
    int      max_epochs         = 50;
    int      patience           = 4;
    int      beam_size          = 6;
    int      max_target_length  = 200;
    uint64_t seed               = 1;
    int      eval_frequency     = 1;    // epochs between evaluations
    int      duplication_target = 20000;  // low-data sets grow to about this

    void validate() const;
    static TrainConfig from_kv(const KvConfig & kv);
    void               to_kv(KvConfig & kv) const;
};

// Halts training once the validation metric has not strictly improved for
// `patience` consecutive observations. A metric that only degrades from the
// first epoch stops after patience + 1 epochs total.
class EarlyStopper {
  public:
    explicit EarlyStopper(int patience);

    bool   observe(double metric);  // true when the metric strictly improved
    bool   should_stop() const { return since_ >= patience_; }
    double best() const { return best_; }
    int    since() const { return since_; }

  private:
    int    patience_;
    int    since_ = 0;
    double best_;
    bool   seen_ = false;
};

struct EncodedExample {
    std::vector<int32_t> src, tgt;
    std::string          target_text;
};

std::vector<EncodedExample> encode_dataset(const std::vector<DatasetRow> & rows, const Tokenizer & tok,
                                           bool use_special, int64_t max_positions);

// Whole-set duplication for low-data regimes: the set is repeated in full
// until its size first reaches the target.
template <typename T>
std::vector<T> duplicate_low_data(const std::vector<T> & rows, int64_t target) {
    if (rows.empty() || (int64_t) rows.size() >= target) return rows;
    const int64_t  copies = (target + (int64_t) rows.size() - 1) / (int64_t) rows.size();
    std::vector<T> out;
    out.reserve((size_t)(copies * (int64_t) rows.size()));
    for (int64_t c = 0; c < copies; ++c) out.insert(out.end(), rows.begin(), rows.end());
    return out;
}

struct EvalResult {
    int matches = 0;
    int total   = 0;
    double em() const { return total > 0 ? (double) matches / (double) total : 0.0; }
};

using DecodeFn = std::function<std::vector<int32_t>(const std::vector<int32_t> &)>;

// Unordered exact match: decoded ids are detokenized and parsed; a
// hypothesis that fails to parse never matches.
EvalResult evaluate_em(const std::vector<EncodedExample> & examples, const DecodeFn & decode, const Tokenizer & tok);

// Frozen parameters (and masked-out rows of row-masked parameters) must be
// bit-identical between the two stores.
template <typename Real>
void audit_frozen(const ParamStore<Real> & now, const ParamStore<Real> & initial) {
    for (const std::string & name : initial.names()) {
        const Tensor<Real> & a = initial.tensor(name);
        const Tensor<Real> & b = now.tensor(name);
        if (a.shape != b.shape) throw TrainingError("frozen audit: shape changed for " + name);
        if (initial.trainable(name)) continue;
        if (initial.has_row_mask(name)) {
            const std::vector<uint8_t> & mask = initial.row_mask(name);
            const int64_t                cols = a.cols();
            for (int64_t r = 0; r < a.rows(); ++r) {
                if (mask[(size_t) r]) continue;
                if (std::memcmp(a.row_ptr(r), b.row_ptr(r), sizeof(Real) * (size_t) cols) != 0) {
                    throw TrainingError("frozen audit: masked row " + std::to_string(r) + " of " + name + " moved");
                }
            }
        } else {
            if (std::memcmp(a.values.data(), b.values.data(), sizeof(Real) * a.values.size()) != 0) {
                throw TrainingError("frozen audit: frozen parameter " + name + " moved");
            }
        }
    }
}

struct EpochRecord {
    int    epoch      = 0;   // 1-based
    double train_loss = 0;
    double val_em     = -1;  // -1 when not evaluated this epoch
    bool   evaluated  = false;
};

template <typename Real>
struct TrainOutcome {
    std::vector<EpochRecord> epochs;
    double                   best_val_em   = -1;
    int                      best_epoch    = -1;
    bool                     stopped_early = false;
    ParamStore<Real>         best_params;
};

namespace detail {

template <typename Real>
void accumulate_gradients(GradientMap<Real> & acc, GradientMap<Real> && g) {
    if (acc.empty()) {
        acc = std::move(g);
        return;
    }
    if (acc.size() != g.size()) throw TrainingError("gradient key mismatch across accumulation");
    auto ia = acc.begin();
    auto ig = g.begin();
    for (; ia != acc.end(); ++ia, ++ig) {
        if (ia->first != ig->first) throw TrainingError("gradient key mismatch across accumulation");
        for (size_t i = 0; i < ia->second.values.size(); ++i) ia->second.values[i] += ig->second.values[i];
    }
}

template <typename Real>
void scale_gradients(GradientMap<Real> & g, Real s) {
    for (auto & [name, t] : g) {
        for (Real & v : t.values) v *= s;
    }
}

}  // namespace detail

// Runs the full loop and returns per-epoch records plus a snapshot of the
// parameters at the best validation exact match. The store is left in its
// final (last-epoch) state; callers wanting the best model read the
// snapshot. With an empty validation set the loop runs max_epochs and the
// snapshot is the final state.
template <typename Real>
TrainOutcome<Real> train_model(ParamStore<Real> & store, const ModelConfig & mcfg, const StrategyPlan & plan,
                               const TrainConfig & tcfg, const std::vector<EncodedExample> & train,
                               const std::vector<EncodedExample> & val, const Tokenizer & tok,
                               const std::function<void(const EpochRecord &)> & on_epoch = {}) {
    tcfg.validate();
    if (train.empty()) throw TrainingError("empty training set");

    const ParamStore<Real> initial = store;  // freeze-audit reference

    AdamConfig acfg;
    acfg.lr = tcfg.lr;
    AdamState<Real> adam(acfg);

    Rng          rng(tcfg.seed);
    EarlyStopper stopper(tcfg.patience);

    TrainOutcome<Real> out;
    const int          step_examples = tcfg.batch_size * tcfg.grad_accumulation;

    std::vector<size_t> order(train.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 1; epoch <= tcfg.max_epochs; ++epoch) {
        rng.shuffle(order);

        double epoch_loss = 0;
        size_t cursor     = 0;
        while (cursor < order.size()) {
            const size_t      take = std::min((size_t) step_examples, order.size() - cursor);
            GradientMap<Real> acc;
            for (size_t j = 0; j < take; ++j) {
                const EncodedExample & ex = train[order[cursor + j]];
                Tape<Real>             tape;
                PrefixNodeMap          inj = build_prefix_nodes(tape, store, mcfg, plan);
                auto                   h   = build_forward(tape, store, mcfg, inj, ex.src, ex.tgt);
                const double           loss = (double) tape.val(h.loss).item();
                if (!std::isfinite(loss)) {
                    throw TrainingError("non-finite loss at epoch " + std::to_string(epoch));
                }
                epoch_loss += loss;
                try {
                    tape.backward(h.loss);
                    detail::accumulate_gradients(acc, collect_gradients(tape, store));
                } catch (const TensorError & e) {
                    // divergence surfaces as non-finite gradients
                    throw TrainingError("aborted at epoch " + std::to_string(epoch) + ": " + e.what());
                } catch (const StoreError & e) {
                    throw TrainingError("aborted at epoch " + std::to_string(epoch) + ": " + e.what());
                }
            }
            detail::scale_gradients(acc, (Real)(1.0 / (double) take));
            adam.step(store, acc);
            cursor += take;
        }

        EpochRecord rec;
        rec.epoch      = epoch;
        rec.train_loss = epoch_loss / (double) order.size();

        if (!val.empty() && epoch % tcfg.eval_frequency == 0) {
            InferenceModel<Real> model(store, mcfg, materialize_prefix(store, mcfg, plan));
            DecodeFn             decode = [&](const std::vector<int32_t> & src) {
                auto es = model.encode(src);
                return model.beam_decode(es, tcfg.beam_size, tcfg.max_target_length).ids;
            };
            EvalResult ev  = evaluate_em(val, decode, tok);
            rec.val_em     = ev.em();
            rec.evaluated  = true;

            if (stopper.observe(rec.val_em)) {
                out.best_val_em = rec.val_em;
                out.best_epoch  = epoch;
                out.best_params = store;
            }
        }

        audit_frozen(store, initial);
        out.epochs.push_back(rec);
        if (on_epoch) on_epoch(rec);

        if (rec.evaluated && stopper.should_stop()) {
            out.stopped_early = true;
            break;
        }
    }

    if (out.best_epoch < 0) {
        out.best_params = store;
        out.best_epoch  = out.epochs.empty() ? 0 : out.epochs.back().epoch;
    }
    return out;
}

}  // namespace peftlab
