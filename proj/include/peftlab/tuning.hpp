// SPDX-License-Identifier: Apache-2.0
//
// Tuning strategies: which parameters train, which stay frozen, and what
// the result costs to store.
//
//   full     every parameter trains
//   partial  the top-k decoder layers train, everything else frozen
//   bitfit   only biases train: q/k/v projections, layer norms, feed-forward
//   prefix   backbone frozen; per-site key/value blocks are produced by a
//            small trainable bank (shared trunk, per-site heads) and
//            injected into attention
//
// Any strategy may additionally train the embedding rows of special label
// tokens through a row mask on the tied embedding table. Budgets are
// computed twice — a closed form over the model dimensions and a count over
// the materialized tensors — and the two must agree.

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "peftlab/kv_config.hpp"
#include "peftlab/model.hpp"
#include "peftlab/param_store.hpp"
#include "peftlab/rng.hpp"
#include "peftlab/tape.hpp"

namespace peftlab {

struct TuningError : std::runtime_error {
    explicit TuningError(const std::string & msg) : std::runtime_error(msg) {}
};

enum class TuningKind : uint8_t { full, partial, prefix, bitfit };
enum class PrefixLocation : uint8_t { prefix, suffix, prefix_and_suffix };
enum class LayerScope : uint8_t { all, top2_decoder };

std::string to_string(TuningKind k);
std::string to_string(PrefixLocation l);
std::string to_string(LayerScope s);
TuningKind     tuning_kind_from_string(const std::string & s);
PrefixLocation prefix_location_from_string(const std::string & s);
LayerScope     layer_scope_from_string(const std::string & s);

// An odd total puts the extra position in front: 5 -> (3, 2).
std::pair<int, int> split_prefix(int n);

struct PrefixSettings {
    int            length   = 30;
    PrefixLocation location = PrefixLocation::prefix;
    LayerScope     scope    = LayerScope::all;
    int            mid_dim  = 512;  // hidden width of the bank trunk
    int            base_dim = 512;  // width of the bank's free embedding
};

struct TuningStrategy {
    TuningKind     kind       = TuningKind::full;
    int            top_layers = 2;  // partial only
    PrefixSettings prefix;          // prefix only
    bool           special_tokens = false;  // train special-label embedding rows

    void validate(const ModelConfig & cfg) const;
    std::string display_name() const;

    static TuningStrategy from_kv(const KvConfig & kv);
    void                  to_kv(KvConfig & kv) const;
};

struct BudgetReport {
    int64_t total      = 0;  // full model size (bank excluded)
    int64_t formula    = 0;  // closed-form space cost
    int64_t stored     = 0;  // parameters persisted after training
    int64_t train_time = 0;  // trainable parameters while training
    double  percent    = 0;  // stored / total, in percent, half-up to 2 dp

    std::string describe() const;
};

std::string format_percent(double percent);  // 2 decimals, half-up

// Closed-form budget over model dimensions only; special_rows counts the
// trailing embedding rows reserved for special label tokens.
BudgetReport compute_budget(const ModelConfig & cfg, const TuningStrategy & st, int special_rows);

// Bias inventory for bitfit (no attention output biases).
std::vector<std::string> bitfit_bias_names(const ModelConfig & cfg);

struct StrategyPlan {
    TuningStrategy           strategy;
    std::vector<Site>        sites;              // prefix injection sites
    std::vector<std::string> trainable;          // fully trainable parameters
    int                      special_row_begin = -1;
    int                      special_rows      = 0;
    BudgetReport             budget;
};

namespace detail {

inline std::string bank_name(const std::string & leaf) { return "prefix_bank." + leaf; }

inline std::vector<std::string> bank_head_leaves() { return { "wk", "bk", "wv", "bv" }; }

}  // namespace detail

namespace detail {

// Bank tensors in creation order: trunk first, then the per-site heads.
inline std::vector<std::pair<std::string, std::vector<int64_t>>> bank_layout(const ModelConfig & cfg,
                                                                             const TuningStrategy & st,
                                                                             const std::vector<Site> & sites) {
    std::vector<std::pair<std::string, std::vector<int64_t>>> out;
    const int64_t H = cfg.hid_dim;
    out.push_back({ bank_name("base"), { (int64_t) st.prefix.length, (int64_t) st.prefix.base_dim } });
    out.push_back({ bank_name("w1"), { (int64_t) st.prefix.base_dim, (int64_t) st.prefix.mid_dim } });
    out.push_back({ bank_name("b1"), { (int64_t) st.prefix.mid_dim } });
    for (const Site & s : sites) {
        out.push_back({ bank_name(s.name() + ".wk"), { (int64_t) st.prefix.mid_dim, H } });
        out.push_back({ bank_name(s.name() + ".bk"), { H } });
        out.push_back({ bank_name(s.name() + ".wv"), { (int64_t) st.prefix.mid_dim, H } });
        out.push_back({ bank_name(s.name() + ".bv"), { H } });
    }
    return out;
}

inline bool is_bank_bias(const std::string & name) {
    const size_t dot = name.rfind('.');
    return dot != std::string::npos && dot + 1 < name.size() && name[dot + 1] == 'b';
}

template <typename Real>
StrategyPlan plan_strategy(ParamStore<Real> & store, const ModelConfig & cfg, const TuningStrategy & st,
                           int special_rows, uint64_t seed, bool create_bank) {
    st.validate(cfg);
    if (special_rows < 0 || special_rows >= cfg.vocab_size) {
        throw TuningError("special row count " + std::to_string(special_rows) + " out of range");
    }
    if (st.special_tokens && special_rows == 0) {
        throw TuningError("special-token training requested but the vocabulary has no special rows");
    }

    StrategyPlan plan;
    plan.strategy = st;
    store.freeze_all();

    switch (st.kind) {
        case TuningKind::full: {
            plan.trainable = store.names();
            break;
        }
        case TuningKind::partial: {
            for (int l = cfg.decoder_layers - st.top_layers; l < cfg.decoder_layers; ++l) {
                const std::string base = "dec.l" + std::to_string(l) + ".";
                for (const std::string & n : store.names()) {
                    if (n.rfind(base, 0) == 0) plan.trainable.push_back(n);
                }
            }
            break;
        }
        case TuningKind::bitfit: {
            plan.trainable = bitfit_bias_names(cfg);
            break;
        }
        case TuningKind::prefix: {
            if (create_bank && store.has(bank_name("base"))) {
                throw TuningError("prefix bank already present in the store");
            }
            if (st.prefix.length == 0) break;  // degenerate: nothing to inject or train
            plan.sites = st.prefix.scope == LayerScope::all ? all_sites(cfg) : top_decoder_sites(cfg, 2);

            Rng rng(seed);
            for (const auto & [name, shape] : bank_layout(cfg, st, plan.sites)) {
                if (create_bank) {
                    Tensor<Real> t(shape);
                    if (!is_bank_bias(name)) {
                        for (Real & v : t.values) v = (Real)(0.02 * rng.next_normal());
                    }
                    store.add(name, std::move(t), true);
                } else {
                    if (!store.has(name)) throw TuningError("prefix bank parameter missing: " + name);
                    if (store.tensor(name).shape != shape) {
                        throw TuningError("prefix bank shape mismatch for " + name);
                    }
                }
                plan.trainable.push_back(name);
            }
            break;
        }
    }

    for (const std::string & n : plan.trainable) store.set_trainable(n, true);

    if (st.special_tokens && st.kind != TuningKind::full) {
        plan.special_row_begin = cfg.vocab_size - special_rows;
        plan.special_rows      = special_rows;
        std::vector<uint8_t> mask((size_t) cfg.vocab_size, 0);
        for (int r = plan.special_row_begin; r < cfg.vocab_size; ++r) mask[(size_t) r] = 1;
        store.set_row_mask("embed.tokens", std::move(mask));
    }

    plan.budget = compute_budget(cfg, st, special_rows);

    // dual route: the formula must match what the store actually trains
    int64_t counted = store.trainable_params();
    if (counted != plan.budget.train_time) {
        throw TuningError("budget mismatch: store trains " + std::to_string(counted) + " but the closed form says " +
                          std::to_string(plan.budget.train_time));
    }
    return plan;
}

}  // namespace detail

// Marks trainability in the store per the strategy, creates the prefix bank
// when needed, and cross-checks the materialized budget against the closed
// form. The store must hold a freshly initialized or loaded backbone.
template <typename Real>
StrategyPlan apply_strategy(ParamStore<Real> & store, const ModelConfig & cfg, const TuningStrategy & st,
                            int special_rows, uint64_t seed) {
    return detail::plan_strategy(store, cfg, st, special_rows, seed, /*create_bank=*/true);
}

// Rebuilds the plan over a store loaded from a checkpoint that was saved
// after apply_strategy: nothing is created or re-initialized, and a strategy
// that calls for a prefix bank requires the bank tensors to be present with
// the expected shapes.
template <typename Real>
StrategyPlan restore_strategy(ParamStore<Real> & store, const ModelConfig & cfg, const TuningStrategy & st,
                              int special_rows) {
    return detail::plan_strategy(store, cfg, st, special_rows, /*seed=*/0, /*create_bank=*/false);
}

// ---- prefix materialization ----
//
// bank rows = tanh(base . w1 + b1); per site, keys = rows . wk + bk and
// values = rows . wv + bv. At encoder self-attention the materialized rows
// split by location (prefix / suffix / both); decoder-side sites always
// take the whole block as prefix.

namespace detail {

inline void site_row_split(const TuningStrategy & st, const Site & site, int & pre, int & suf) {
    const int n = st.prefix.length;
    pre = n, suf = 0;
    if (site.kind == SiteKind::encoder_self) {
        switch (st.prefix.location) {
            case PrefixLocation::prefix: pre = n; suf = 0; break;
            case PrefixLocation::suffix: pre = 0; suf = n; break;
            case PrefixLocation::prefix_and_suffix: {
                auto [a, b] = split_prefix(n);
                pre = a, suf = b;
                break;
            }
        }
    }
}

}  // namespace detail

template <typename Real>
PrefixNodeMap build_prefix_nodes(Tape<Real> & tape, const ParamStore<Real> & store, const ModelConfig & cfg,
                                 const StrategyPlan & plan) {
    (void) cfg;
    PrefixNodeMap out;
    if (plan.strategy.kind != TuningKind::prefix) return out;
    if (plan.strategy.prefix.length == 0) return out;  // degenerate: no bank
    using detail::bank_name;

    NodeId base = store.bind(tape, bank_name("base"));
    NodeId rows = tape.tanh_fn(tape.add_row(tape.matmul(base, store.bind(tape, bank_name("w1"))),
                                            store.bind(tape, bank_name("b1"))));
    for (const Site & s : plan.sites) {
        NodeId k = tape.add_row(tape.matmul(rows, store.bind(tape, bank_name(s.name() + ".wk"))),
                                store.bind(tape, bank_name(s.name() + ".bk")));
        NodeId v = tape.add_row(tape.matmul(rows, store.bind(tape, bank_name(s.name() + ".wv"))),
                                store.bind(tape, bank_name(s.name() + ".bv")));
        int pre = 0, suf = 0;
        detail::site_row_split(plan.strategy, s, pre, suf);
        SiteNodes n;
        if (pre > 0) {
            n.pk = pre == plan.strategy.prefix.length ? k : tape.slice_rows(k, 0, pre);
            n.pv = pre == plan.strategy.prefix.length ? v : tape.slice_rows(v, 0, pre);
        }
        if (suf > 0) {
            n.sk = suf == plan.strategy.prefix.length ? k : tape.slice_rows(k, pre, suf);
            n.sv = suf == plan.strategy.prefix.length ? v : tape.slice_rows(v, pre, suf);
        }
        out[s] = n;
    }
    return out;
}

template <typename Real>
PrefixTensorMap<Real> materialize_prefix(const ParamStore<Real> & store, const ModelConfig & cfg,
                                         const StrategyPlan & plan) {
    (void) cfg;
    PrefixTensorMap<Real> out;
    if (plan.strategy.kind != TuningKind::prefix) return out;
    if (plan.strategy.prefix.length == 0) return out;  // degenerate: no bank
    using detail::bank_name;

    const Tensor<Real> & base = store.tensor(bank_name("base"));
    const Tensor<Real> & w1   = store.tensor(bank_name("w1"));
    const Tensor<Real> & b1   = store.tensor(bank_name("b1"));
    const int64_t        P    = base.rows();
    const int64_t        M    = w1.cols();

    Tensor<Real> rows({ P, M });
    for (int64_t r = 0; r < P; ++r) {
        for (int64_t c = 0; c < M; ++c) {
            Real acc = 0;
            for (int64_t i = 0; i < base.cols(); ++i) acc += base.at(r, i) * w1.at(i, c);
            rows.values[(size_t)(r * M + c)] = std::tanh(acc + b1.values[(size_t) c]);
        }
    }

    auto head = [&](const Site & s, const char * wleaf, const char * bleaf) {
        const Tensor<Real> & w = store.tensor(bank_name(s.name() + "." + wleaf));
        const Tensor<Real> & b = store.tensor(bank_name(s.name() + "." + bleaf));
        Tensor<Real>         kv({ P, w.cols() });
        for (int64_t r = 0; r < P; ++r) {
            for (int64_t c = 0; c < w.cols(); ++c) {
                Real acc = 0;
                for (int64_t i = 0; i < M; ++i) acc += rows.at(r, i) * w.at(i, c);
                kv.values[(size_t)(r * w.cols() + c)] = acc + b.values[(size_t) c];
            }
        }
        return kv;
    };
    auto take_rows = [](const Tensor<Real> & t, int64_t lo, int64_t hi) {
        Tensor<Real> out2({ hi - lo, t.cols() });
        for (int64_t r = lo; r < hi; ++r) {
            for (int64_t c = 0; c < t.cols(); ++c) out2.values[(size_t)((r - lo) * t.cols() + c)] = t.at(r, c);
        }
        return out2;
    };

    for (const Site & s : plan.sites) {
        Tensor<Real> k = head(s, "wk", "bk");
        Tensor<Real> v = head(s, "wv", "bv");
        int          pre = 0, suf = 0;
        detail::site_row_split(plan.strategy, s, pre, suf);
        SiteTensors<Real> st;
        if (pre > 0) {
            st.pk = take_rows(k, 0, pre);
            st.pv = take_rows(v, 0, pre);
        }
        if (suf > 0) {
            st.sk = take_rows(k, pre, pre + suf);
            st.sv = take_rows(v, pre, pre + suf);
        }
        out[s] = st;
    }
    return out;
}

// The materialized key/value blocks a checkpoint keeps for decoding; must
// equal the closed-form space cost (minus any special embedding rows).
template <typename Real>
int64_t materialized_prefix_params(const PrefixTensorMap<Real> & blocks) {
    int64_t n = 0;
    for (const auto & [site, st] : blocks) {
        n += st.pk.numel() + st.pv.numel() + st.sk.numel() + st.sv.numel();
    }
    return n;
}

}  // namespace peftlab
