// SPDX-License-Identifier: Apache-2.0
//
// Non-templated tuning-strategy pieces: enum names, validation, budget
// arithmetic and the bitfit bias inventory.

#include "peftlab/tuning.hpp"

#include <cmath>
#include <cstdio>

namespace peftlab {

std::string to_string(TuningKind k) {
    switch (k) {
        case TuningKind::full: return "full";
        case TuningKind::partial: return "partial";
        case TuningKind::prefix: return "prefix";
        case TuningKind::bitfit: return "bitfit";
    }
    return "?";
}

std::string to_string(PrefixLocation l) {
    switch (l) {
        case PrefixLocation::prefix: return "prefix";
        case PrefixLocation::suffix: return "suffix";
        case PrefixLocation::prefix_and_suffix: return "prefix_and_suffix";
    }
    return "?";
}

std::string to_string(LayerScope s) {
    switch (s) {
        case LayerScope::all: return "all";
        case LayerScope::top2_decoder: return "top2_decoder";
    }
    return "?";
}

TuningKind tuning_kind_from_string(const std::string & s) {
    if (s == "full") return TuningKind::full;
    if (s == "partial") return TuningKind::partial;
    if (s == "prefix") return TuningKind::prefix;
    if (s == "bitfit") return TuningKind::bitfit;
    throw TuningError("unknown tuning kind '" + s + "'");
}

PrefixLocation prefix_location_from_string(const std::string & s) {
    if (s == "prefix") return PrefixLocation::prefix;
    if (s == "suffix") return PrefixLocation::suffix;
    if (s == "prefix_and_suffix") return PrefixLocation::prefix_and_suffix;
    throw TuningError("unknown prefix location '" + s + "'");
}

LayerScope layer_scope_from_string(const std::string & s) {
    if (s == "all") return LayerScope::all;
    if (s == "top2_decoder") return LayerScope::top2_decoder;
    throw TuningError("unknown layer scope '" + s + "'");
}

std::pair<int, int> split_prefix(int n) {
    if (n < 0) throw TuningError("negative prefix length");
    return { (n + 1) / 2, n / 2 };
}

void TuningStrategy::validate(const ModelConfig & cfg) const {
    switch (kind) {
        case TuningKind::full:
        case TuningKind::bitfit: break;
        case TuningKind::partial:
            if (top_layers < 1 || top_layers > cfg.decoder_layers) {
                throw TuningError("partial tuning of " + std::to_string(top_layers) +
                                  " layers out of range for a " + std::to_string(cfg.decoder_layers) +
                                  "-layer decoder");
            }
            break;
        case TuningKind::prefix:
            // length 0 is the degenerate sweep point: nothing is injected
            if (prefix.length < 0) throw TuningError("negative prefix length");
            if (prefix.mid_dim < 1 || prefix.base_dim < 1) {
                throw TuningError("prefix bank dimensions must be positive");
            }
            if (prefix.scope == LayerScope::top2_decoder && cfg.decoder_layers < 2) {
                throw TuningError("top-2 decoder scope needs at least 2 decoder layers");
            }
            break;
    }
}

std::string TuningStrategy::display_name() const {
    std::string base;
    switch (kind) {
        case TuningKind::full: return "full";
        case TuningKind::partial: base = "top" + std::to_string(top_layers); break;
        case TuningKind::bitfit: base = "bitfit"; break;
        case TuningKind::prefix: {
            base = "prefix" + std::to_string(prefix.length);
            if (prefix.location == PrefixLocation::suffix) base += "-suf";
            if (prefix.location == PrefixLocation::prefix_and_suffix) base += "-presuf";
            if (prefix.scope == LayerScope::top2_decoder) base += "-top2dec";
            break;
        }
    }
    if (special_tokens) base += "+st";
    return base;
}

TuningStrategy TuningStrategy::from_kv(const KvConfig & kv) {
    TuningStrategy st;
    st.kind            = tuning_kind_from_string(kv.get_string("tuning.kind", "full"));
    st.top_layers      = (int) kv.get_int("tuning.top_layers", st.top_layers);
    st.prefix.length   = (int) kv.get_int("tuning.prefix.length", st.prefix.length);
    st.prefix.location = prefix_location_from_string(kv.get_string("tuning.prefix.location", "prefix"));
    st.prefix.scope    = layer_scope_from_string(kv.get_string("tuning.prefix.scope", "all"));
    st.prefix.mid_dim  = (int) kv.get_int("tuning.prefix.mid_dim", st.prefix.mid_dim);
    st.prefix.base_dim = (int) kv.get_int("tuning.prefix.base_dim", st.prefix.base_dim);
    st.special_tokens  = kv.get_bool("tuning.special_tokens", false);
    return st;
}

void TuningStrategy::to_kv(KvConfig & kv) const {
    kv.set("tuning.kind", to_string(kind));
    kv.set("tuning.top_layers", std::to_string(top_layers));
    kv.set("tuning.prefix.length", std::to_string(prefix.length));
    kv.set("tuning.prefix.location", to_string(prefix.location));
    kv.set("tuning.prefix.scope", to_string(prefix.scope));
    kv.set("tuning.prefix.mid_dim", std::to_string(prefix.mid_dim));
    kv.set("tuning.prefix.base_dim", std::to_string(prefix.base_dim));
    kv.set("tuning.special_tokens", special_tokens ? "true" : "false");
}

std::string format_percent(double percent) {
    double rounded = std::floor(percent * 100.0 + 0.5) / 100.0;
    char   buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", rounded);
    return buf;
}

std::string BudgetReport::describe() const {
    return "stores " + std::to_string(stored) + " of " + std::to_string(total) + " parameters (" +
           format_percent(percent) + "%), " + std::to_string(train_time) + " trainable during training";
}

std::vector<std::string> bitfit_bias_names(const ModelConfig & cfg) {
    std::vector<std::string> out;
    out.push_back("enc.emb_ln.bias");
    out.push_back("dec.emb_ln.bias");
    auto attn_biases = [&](const std::string & base) {
        out.push_back(base + ".bq");
        out.push_back(base + ".bk");
        out.push_back(base + ".bv");  // output projection bias stays frozen
    };
    for (int i = 0; i < cfg.encoder_layers; ++i) {
        const std::string l = "enc.l" + std::to_string(i);
        attn_biases(l + ".self");
        out.push_back(l + ".self_ln.bias");
        out.push_back(l + ".ffn.b1");
        out.push_back(l + ".ffn.b2");
        out.push_back(l + ".ffn_ln.bias");
    }
    for (int i = 0; i < cfg.decoder_layers; ++i) {
        const std::string l = "dec.l" + std::to_string(i);
        attn_biases(l + ".self");
        out.push_back(l + ".self_ln.bias");
        attn_biases(l + ".cross");
        out.push_back(l + ".cross_ln.bias");
        out.push_back(l + ".ffn.b1");
        out.push_back(l + ".ffn.b2");
        out.push_back(l + ".ffn_ln.bias");
    }
    return out;
}

BudgetReport compute_budget(const ModelConfig & cfg, const TuningStrategy & st, int special_rows) {
    st.validate(cfg);
    const int64_t H = cfg.hid_dim, F = cfg.ffn_dim;
    const int64_t attn = 4 * H * H + 4 * H;
    const int64_t ln   = 2 * H;
    const int64_t ffn  = (int64_t) H * F + F + (int64_t) F * H + H;

    BudgetReport b;
    b.total = total_param_count(cfg);

    const int64_t special = st.special_tokens ? (int64_t) special_rows * H : 0;

    switch (st.kind) {
        case TuningKind::full: {
            b.formula = b.stored = b.train_time = b.total;
            break;
        }
        case TuningKind::partial: {
            const int64_t dec_layer = (attn + ln) + (attn + ln) + (ffn + ln);
            b.formula               = (int64_t) st.top_layers * dec_layer + special;
            b.stored = b.train_time = b.formula;
            break;
        }
        case TuningKind::bitfit: {
            const int64_t enc_biases = 3 * H + H + (F + H) + H;   // qkv, self ln, ffn, ffn ln
            const int64_t dec_biases = enc_biases + 3 * H + H;    // plus cross qkv and cross ln
            b.formula = 2 * H + cfg.encoder_layers * enc_biases + cfg.decoder_layers * dec_biases + special;
            b.stored = b.train_time = b.formula;
            break;
        }
        case TuningKind::prefix: {
            const int64_t n_sites =
                st.prefix.scope == LayerScope::all ? 3 * (int64_t) cfg.encoder_layers : 4;
            // materialized key/value rows: length x layers x width x {K,V} x sites-per-layer
            b.formula = (int64_t) st.prefix.length * H * 2 * n_sites + special;
            b.stored  = b.formula;
            if (st.prefix.length == 0) {  // no bank exists at length 0
                b.train_time = special;
                break;
            }
            // at train time the bank itself holds the free parameters
            const int64_t trunk = (int64_t) st.prefix.length * st.prefix.base_dim +
                                  (int64_t) st.prefix.base_dim * st.prefix.mid_dim + st.prefix.mid_dim;
            const int64_t heads = n_sites * 2 * ((int64_t) st.prefix.mid_dim * H + H);
            b.train_time        = trunk + heads + special;
            break;
        }
    }

    b.percent = 100.0 * (double) b.stored / (double) b.total;
    return b;
}

}  // namespace peftlab
