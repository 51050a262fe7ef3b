// SPDX-License-Identifier: Apache-2.0
//
// Encoder-decoder transformer for sequence-to-sequence parsing.
//
// Shape: token embeddings tied between input and output projection, learned
// absolute positions per side, one layer norm after the embedding, pre-norm
// residual blocks, GELU feed-forward. Attention sites are named so that
// injected prefix (and, at encoder self-attention, suffix) key/value blocks
// can be attached per site: encoder self, decoder self (causal), and cross.
//
// Two forward implementations share the store and the attention semantics:
// a tape forward for training (gradients, instrumentation) and an
// incremental key/value-cached forward for decoding. Tests pin their parity.

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "peftlab/kv_config.hpp"
#include "peftlab/param_store.hpp"
#include "peftlab/rng.hpp"
#include "peftlab/tape.hpp"
#include "peftlab/tensor.hpp"
#include "peftlab/tokenizer.hpp"

namespace peftlab {

struct ModelError : std::runtime_error {
    explicit ModelError(const std::string & msg) : std::runtime_error(msg) {}
};

struct ModelConfig {
    int encoder_layers = 2;
    int decoder_layers = 2;
    int heads          = 4;
    int hid_dim        = 64;
    int ffn_dim        = 256;
    int vocab_size     = 0;  // set from the tokenizer
    int max_positions  = 256;
    std::string precision = "f32";  // f32 | f64

    void validate() const {
        if (encoder_layers < 1 || decoder_layers < 1 || heads < 1 || hid_dim < 1 || ffn_dim < 1) {
            throw ModelError("model dimensions must be positive");
        }
        if (encoder_layers != decoder_layers) {
            throw ModelError("encoder/decoder layer counts must match (budget accounting assumes one depth)");
        }
        if (hid_dim % heads != 0) {
            throw ModelError("hid_dim " + std::to_string(hid_dim) + " not divisible by " + std::to_string(heads) +
                             " heads");
        }
        if (vocab_size < Vocabulary::reserved_count + 1) {
            throw ModelError("vocab_size must cover the reserved ids");
        }
        if (max_positions < 2) throw ModelError("max_positions too small");
        if (precision != "f32" && precision != "f64") {
            throw ModelError("precision must be f32 or f64, got '" + precision + "'");
        }
    }

    static ModelConfig from_kv(const KvConfig & kv) {
        ModelConfig c;
        c.encoder_layers = (int) kv.get_int("model.encoder_layers", c.encoder_layers);
        c.decoder_layers = (int) kv.get_int("model.decoder_layers", c.decoder_layers);
        c.heads          = (int) kv.get_int("model.heads", c.heads);
        c.hid_dim        = (int) kv.get_int("model.hid_dim", c.hid_dim);
        c.ffn_dim        = (int) kv.get_int("model.ffn_dim", c.ffn_dim);
        c.vocab_size     = (int) kv.get_int("model.vocab_size", c.vocab_size);
        c.max_positions  = (int) kv.get_int("model.max_positions", c.max_positions);
        c.precision      = kv.get_string("model.precision", c.precision);
        return c;
    }

    void to_kv(KvConfig & kv) const {
        kv.set("model.encoder_layers", std::to_string(encoder_layers));
        kv.set("model.decoder_layers", std::to_string(decoder_layers));
        kv.set("model.heads", std::to_string(heads));
        kv.set("model.hid_dim", std::to_string(hid_dim));
        kv.set("model.ffn_dim", std::to_string(ffn_dim));
        kv.set("model.vocab_size", std::to_string(vocab_size));
        kv.set("model.max_positions", std::to_string(max_positions));
        kv.set("model.precision", precision);
    }
};

// ---- attention sites ----

enum class SiteKind : uint8_t { encoder_self, decoder_self, cross };

struct Site {
    SiteKind kind;
    int      layer;

    bool operator<(const Site & o) const {
        return kind != o.kind ? kind < o.kind : layer < o.layer;
    }
    bool operator==(const Site & o) const { return kind == o.kind && layer == o.layer; }

    std::string name() const {
        const char * k = kind == SiteKind::encoder_self ? "enc_self"
                       : kind == SiteKind::decoder_self ? "dec_self"
                                                        : "cross";
        return std::string(k) + "." + std::to_string(layer);
    }
};

inline std::vector<Site> all_sites(const ModelConfig & cfg) {
    std::vector<Site> out;
    for (int l = 0; l < cfg.encoder_layers; ++l) out.push_back({ SiteKind::encoder_self, l });
    for (int l = 0; l < cfg.decoder_layers; ++l) out.push_back({ SiteKind::decoder_self, l });
    for (int l = 0; l < cfg.decoder_layers; ++l) out.push_back({ SiteKind::cross, l });
    return out;
}

// The decoder-self and cross sites of the top k decoder layers.
inline std::vector<Site> top_decoder_sites(const ModelConfig & cfg, int k) {
    if (k < 1 || k > cfg.decoder_layers) {
        throw ModelError("top decoder scope of " + std::to_string(k) + " layers out of range");
    }
    std::vector<Site> out;
    for (int l = cfg.decoder_layers - k; l < cfg.decoder_layers; ++l) out.push_back({ SiteKind::decoder_self, l });
    for (int l = cfg.decoder_layers - k; l < cfg.decoder_layers; ++l) out.push_back({ SiteKind::cross, l });
    return out;
}

// Prefix/suffix key-value blocks for one site, as tape nodes (training) or
// plain tensors (decoding). Absent blocks are -1 / zero-row tensors.
struct SiteNodes {
    NodeId pk = -1, pv = -1, sk = -1, sv = -1;
};
using PrefixNodeMap = std::map<Site, SiteNodes>;

template <typename Real>
struct SiteTensors {
    Tensor<Real> pk{ std::vector<int64_t>{ 0, 0 } };
    Tensor<Real> pv{ std::vector<int64_t>{ 0, 0 } };
    Tensor<Real> sk{ std::vector<int64_t>{ 0, 0 } };
    Tensor<Real> sv{ std::vector<int64_t>{ 0, 0 } };
};
template <typename Real>
using PrefixTensorMap = std::map<Site, SiteTensors<Real>>;

// ---- parameters ----

namespace names {

inline std::string layer(const char * side, int i, const char * sub, const char * leaf) {
    return std::string(side) + ".l" + std::to_string(i) + "." + sub + "." + leaf;
}

}  // namespace names

// Creates every model parameter with the standard init: N(0, 0.02) weights
// and embeddings, zero biases, unit layer-norm gains. Everything starts
// frozen; a tuning strategy decides what trains.
template <typename Real>
ParamStore<Real> init_model_params(const ModelConfig & cfg, uint64_t seed) {
    cfg.validate();
    ParamStore<Real> store;
    Rng              rng(seed);
    const int64_t    H = cfg.hid_dim;
    const int64_t    F = cfg.ffn_dim;

    auto normal = [&](std::vector<int64_t> shape) {
        Tensor<Real> t(std::move(shape));
        for (Real & v : t.values) v = (Real)(0.02 * rng.next_normal());
        return t;
    };
    auto zeros = [&](std::vector<int64_t> shape) { return Tensor<Real>(std::move(shape)); };
    auto ones  = [&](std::vector<int64_t> shape) {
        Tensor<Real> t(std::move(shape));
        t.fill(Real(1));
        return t;
    };

    store.add("embed.tokens", normal({ cfg.vocab_size, H }));
    store.add("enc.pos", normal({ cfg.max_positions, H }));
    store.add("dec.pos", normal({ cfg.max_positions, H }));
    store.add("enc.emb_ln.gain", ones({ H }));
    store.add("enc.emb_ln.bias", zeros({ H }));
    store.add("dec.emb_ln.gain", ones({ H }));
    store.add("dec.emb_ln.bias", zeros({ H }));

    auto add_attn = [&](const std::string & base) {
        store.add(base + ".wq", normal({ H, H }));
        store.add(base + ".bq", zeros({ H }));
        store.add(base + ".wk", normal({ H, H }));
        store.add(base + ".bk", zeros({ H }));
        store.add(base + ".wv", normal({ H, H }));
        store.add(base + ".bv", zeros({ H }));
        store.add(base + ".wo", normal({ H, H }));
        store.add(base + ".bo", zeros({ H }));
    };
    auto add_ln = [&](const std::string & base) {
        store.add(base + ".gain", ones({ H }));
        store.add(base + ".bias", zeros({ H }));
    };
    auto add_ffn = [&](const std::string & base) {
        store.add(base + ".w1", normal({ H, F }));
        store.add(base + ".b1", zeros({ F }));
        store.add(base + ".w2", normal({ F, H }));
        store.add(base + ".b2", zeros({ H }));
    };

    for (int i = 0; i < cfg.encoder_layers; ++i) {
        std::string l = "enc.l" + std::to_string(i);
        add_attn(l + ".self");
        add_ln(l + ".self_ln");
        add_ffn(l + ".ffn");
        add_ln(l + ".ffn_ln");
    }
    for (int i = 0; i < cfg.decoder_layers; ++i) {
        std::string l = "dec.l" + std::to_string(i);
        add_attn(l + ".self");
        add_ln(l + ".self_ln");
        add_attn(l + ".cross");
        add_ln(l + ".cross_ln");
        add_ffn(l + ".ffn");
        add_ln(l + ".ffn_ln");
    }
    return store;
}

// Closed-form parameter count for the architecture above; lets budget tables
// quote full-scale models without materializing them.
inline int64_t total_param_count(const ModelConfig & cfg) {
    const int64_t H = cfg.hid_dim, F = cfg.ffn_dim, V = cfg.vocab_size, P = cfg.max_positions;
    const int64_t attn      = 4 * H * H + 4 * H;
    const int64_t ln        = 2 * H;
    const int64_t ffn       = H * F + F + F * H + H;
    const int64_t enc_layer = attn + ln + ffn + ln;
    const int64_t dec_layer = enc_layer + attn + ln;
    return V * H + 2 * P * H + 2 * ln + cfg.encoder_layers * enc_layer + cfg.decoder_layers * dec_layer;
}

// ---- training forward (tape) ----

template <typename Real>
struct ForwardHandles {
    NodeId  loss        = -1;
    NodeId  logits      = -1;
    NodeId  encoder_out = -1;  // last encoder node; everything at or below it is encoder-side
    int64_t target_tokens = 0;
};

namespace detail {

inline std::vector<int32_t> iota_ids(int64_t n) {
    std::vector<int32_t> ids((size_t) n);
    for (int64_t i = 0; i < n; ++i) ids[(size_t) i] = (int32_t) i;
    return ids;
}

template <typename Real>
NodeId attend(Tape<Real> & tape, const ParamStore<Real> & store, const std::string & base, NodeId q_src,
              NodeId kv_src, const SiteNodes * inj, int heads, bool causal) {
    NodeId q = tape.add_row(tape.matmul(q_src, store.bind(tape, base + ".wq")), store.bind(tape, base + ".bq"));
    NodeId k = tape.add_row(tape.matmul(kv_src, store.bind(tape, base + ".wk")), store.bind(tape, base + ".bk"));
    NodeId v = tape.add_row(tape.matmul(kv_src, store.bind(tape, base + ".wv")), store.bind(tape, base + ".bv"));

    AttentionSpec spec;
    spec.heads  = heads;
    spec.causal = causal;
    if (inj) {
        std::vector<NodeId> kparts, vparts;
        if (inj->pk >= 0) {
            if (tape.val(inj->pk).rows() != tape.val(inj->pv).rows()) {
                throw ModelError("prefix key/value row mismatch at " + base);
            }
            spec.prefix_len = (int) tape.val(inj->pk).rows();
            kparts.push_back(inj->pk);
            vparts.push_back(inj->pv);
        }
        kparts.push_back(k);
        vparts.push_back(v);
        if (inj->sk >= 0) {
            if (causal) throw ModelError("suffix block at causal site " + base);
            spec.suffix_len = (int) tape.val(inj->sk).rows();
            kparts.push_back(inj->sk);
            vparts.push_back(inj->sv);
        }
        if (spec.prefix_len > 0 || spec.suffix_len > 0) {
            k = tape.concat_rows(kparts);
            v = tape.concat_rows(vparts);
        }
    }
    NodeId mixed = tape.attention(q, k, v, spec);
    return tape.add_row(tape.matmul(mixed, store.bind(tape, base + ".wo")), store.bind(tape, base + ".bo"));
}

template <typename Real>
NodeId ffn_block(Tape<Real> & tape, const ParamStore<Real> & store, const std::string & base, NodeId x) {
    NodeId h = tape.add_row(tape.matmul(x, store.bind(tape, base + ".w1")), store.bind(tape, base + ".b1"));
    return tape.add_row(tape.matmul(tape.gelu(h), store.bind(tape, base + ".w2")), store.bind(tape, base + ".b2"));
}

template <typename Real>
NodeId pre_ln(Tape<Real> & tape, const ParamStore<Real> & store, const std::string & base, NodeId x) {
    return tape.layer_norm(x, store.bind(tape, base + ".gain"), store.bind(tape, base + ".bias"));
}

}  // namespace detail

// Teacher-forced loss for one example. Encoder consumes src + </s>; decoder
// consumes <s> + tgt and predicts tgt + </s>. The per-example loss is the
// mean over target positions.
template <typename Real>
ForwardHandles<Real> build_forward(Tape<Real> & tape, const ParamStore<Real> & store, const ModelConfig & cfg,
                                   const PrefixNodeMap & inj, const std::vector<int32_t> & src,
                                   const std::vector<int32_t> & tgt) {
    using namespace detail;
    for (int32_t id : src) {
        if (id < 0 || id >= cfg.vocab_size) throw ModelError("source id " + std::to_string(id) + " out of range");
    }
    for (int32_t id : tgt) {
        if (id < 0 || id >= cfg.vocab_size) throw ModelError("target id " + std::to_string(id) + " out of range");
    }
    if ((int64_t) src.size() + 1 > cfg.max_positions || (int64_t) tgt.size() + 1 > cfg.max_positions) {
        throw ModelError("sequence exceeds max_positions=" + std::to_string(cfg.max_positions));
    }
    if (tgt.empty()) throw ModelError("empty target");
    for (const auto & [site, nodes] : inj) {
        if (site.kind != SiteKind::encoder_self && nodes.sk >= 0) {
            throw ModelError("suffix block restricted to encoder self-attention, got one at " + site.name());
        }
        if ((nodes.pk >= 0) != (nodes.pv >= 0) || (nodes.sk >= 0) != (nodes.sv >= 0)) {
            throw ModelError("prefix key/value blocks must come in pairs at " + site.name());
        }
    }

    auto site_nodes = [&](SiteKind kind, int layer) -> const SiteNodes * {
        auto it = inj.find(Site{ kind, layer });
        return it == inj.end() ? nullptr : &it->second;
    };

    NodeId embed = store.bind(tape, "embed.tokens");

    // encoder
    std::vector<int32_t> enc_ids = src;
    enc_ids.push_back(Vocabulary::eos_id);
    NodeId ex = tape.add(tape.embed_rows(embed, enc_ids),
                         tape.embed_rows(store.bind(tape, "enc.pos"), iota_ids((int64_t) enc_ids.size())));
    ex = tape.layer_norm(ex, store.bind(tape, "enc.emb_ln.gain"), store.bind(tape, "enc.emb_ln.bias"));
    for (int l = 0; l < cfg.encoder_layers; ++l) {
        std::string base = "enc.l" + std::to_string(l);
        NodeId      en   = pre_ln(tape, store, base + ".self_ln", ex);
        NodeId      a    = attend(tape, store, base + ".self", en, en, site_nodes(SiteKind::encoder_self, l),
                                  cfg.heads, /*causal=*/false);
        ex               = tape.add(ex, a);
        ex               = tape.add(ex, ffn_block(tape, store, base + ".ffn", pre_ln(tape, store, base + ".ffn_ln", ex)));
    }
    NodeId encoder_out = ex;

    // decoder
    std::vector<int32_t> dec_in = { Vocabulary::bos_id };
    dec_in.insert(dec_in.end(), tgt.begin(), tgt.end());
    std::vector<int32_t> dec_out = tgt;
    dec_out.push_back(Vocabulary::eos_id);

    NodeId dx = tape.add(tape.embed_rows(embed, dec_in),
                         tape.embed_rows(store.bind(tape, "dec.pos"), iota_ids((int64_t) dec_in.size())));
    dx = tape.layer_norm(dx, store.bind(tape, "dec.emb_ln.gain"), store.bind(tape, "dec.emb_ln.bias"));
    for (int l = 0; l < cfg.decoder_layers; ++l) {
        std::string base = "dec.l" + std::to_string(l);
        NodeId      dn   = pre_ln(tape, store, base + ".self_ln", dx);
        NodeId      a    = attend(tape, store, base + ".self", dn, dn, site_nodes(SiteKind::decoder_self, l),
                                  cfg.heads, /*causal=*/true);
        dx               = tape.add(dx, a);
        NodeId c = attend(tape, store, base + ".cross", pre_ln(tape, store, base + ".cross_ln", dx), encoder_out,
                          site_nodes(SiteKind::cross, l), cfg.heads, /*causal=*/false);
        dx       = tape.add(dx, c);
        dx       = tape.add(dx, ffn_block(tape, store, base + ".ffn", pre_ln(tape, store, base + ".ffn_ln", dx)));
    }

    ForwardHandles<Real> h;
    h.logits        = tape.matmul_nt(dx, embed);  // tied output projection
    h.loss          = tape.cross_entropy(h.logits, dec_out, Vocabulary::pad_id);
    h.encoder_out   = encoder_out;
    h.target_tokens = (int64_t) dec_out.size();
    return h;
}

// Single-head attention over externally supplied queries/keys/values with
// optional always-visible prefix and suffix key-value blocks; the standalone
// form of the injection the model applies at each site.
template <typename Real>
NodeId attend_with_prefix(Tape<Real> & tape, NodeId q, NodeId k, NodeId v, NodeId pk, NodeId pv, NodeId sk,
                          NodeId sv, bool causal, int heads = 1) {
    AttentionSpec spec;
    spec.heads  = heads;
    spec.causal = causal;
    std::vector<NodeId> kparts, vparts;
    if (pk >= 0) {
        spec.prefix_len = (int) tape.val(pk).rows();
        kparts.push_back(pk);
        vparts.push_back(pv);
    }
    kparts.push_back(k);
    vparts.push_back(v);
    if (sk >= 0) {
        spec.suffix_len = (int) tape.val(sk).rows();
        kparts.push_back(sk);
        vparts.push_back(sv);
    }
    NodeId kk = kparts.size() > 1 ? tape.concat_rows(kparts) : k;
    NodeId vv = vparts.size() > 1 ? tape.concat_rows(vparts) : v;
    return tape.attention(q, kk, vv, spec);
}

}  // namespace peftlab
