// SPDX-License-Identifier: Apache-2.0
//
// Encoder-decoder model tests: parameter accounting, finite-difference
// gradients through the full forward (with and without injected prefix
// blocks), parity between the tape forward and the cached decoder, and
// beam search behaviour.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "peftlab/inference.hpp"
#include "peftlab/model.hpp"
#include "peftlab/rng.hpp"
#include "support/fd_check.hpp"

using namespace peftlab;
using f64 = double;
using f32 = float;

namespace {

ModelConfig tiny_config(int vocab = 12) {
    ModelConfig cfg;
    cfg.encoder_layers = 2;
    cfg.decoder_layers = 2;
    cfg.heads          = 2;
    cfg.hid_dim        = 8;
    cfg.ffn_dim        = 16;
    cfg.vocab_size     = vocab;
    cfg.max_positions  = 16;
    cfg.precision      = "f64";
    return cfg;
}

// Injectable prefix/suffix blocks stored as extra parameters so gradients
// can be finite-difference checked end to end.
template <typename Real>
void add_injection_params(ParamStore<Real> & store, const ModelConfig & cfg, int plen, int slen, uint64_t seed) {
    Rng rng(seed);
    auto normal = [&](int64_t rows) {
        Tensor<Real> t({ rows, cfg.hid_dim });
        for (Real & v : t.values) v = (Real)(0.1 * rng.next_normal());
        return t;
    };
    for (const Site & s : all_sites(cfg)) {
        store.add("inj." + s.name() + ".pk", normal(plen));
        store.add("inj." + s.name() + ".pv", normal(plen));
        if (s.kind == SiteKind::encoder_self && slen > 0) {
            store.add("inj." + s.name() + ".sk", normal(slen));
            store.add("inj." + s.name() + ".sv", normal(slen));
        }
    }
}

template <typename Real>
PrefixNodeMap bind_injection(Tape<Real> & tape, const ParamStore<Real> & store, const ModelConfig & cfg,
                             bool with_suffix) {
    PrefixNodeMap inj;
    for (const Site & s : all_sites(cfg)) {
        SiteNodes n;
        n.pk = store.bind(tape, "inj." + s.name() + ".pk");
        n.pv = store.bind(tape, "inj." + s.name() + ".pv");
        if (with_suffix && s.kind == SiteKind::encoder_self) {
            n.sk = store.bind(tape, "inj." + s.name() + ".sk");
            n.sv = store.bind(tape, "inj." + s.name() + ".sv");
        }
        inj[s] = n;
    }
    return inj;
}

template <typename Real>
PrefixTensorMap<Real> injection_tensors(const ParamStore<Real> & store, const ModelConfig & cfg, bool with_suffix) {
    PrefixTensorMap<Real> out;
    for (const Site & s : all_sites(cfg)) {
        SiteTensors<Real> st;
        st.pk = store.tensor("inj." + s.name() + ".pk");
        st.pv = store.tensor("inj." + s.name() + ".pv");
        if (with_suffix && s.kind == SiteKind::encoder_self) {
            st.sk = store.tensor("inj." + s.name() + ".sk");
            st.sv = store.tensor("inj." + s.name() + ".sv");
        }
        out[s] = st;
    }
    return out;
}

}  // namespace

TEST_CASE("model config validates and round-trips through key-value form") {
    ModelConfig cfg = tiny_config();
    CHECK_NOTHROW(cfg.validate());

    ModelConfig bad = cfg;
    bad.hid_dim     = 9;  // not divisible by 2 heads
    CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("not divisible"), ModelError);

    bad                = cfg;
    bad.decoder_layers = 3;
    CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("must match"), ModelError);

    bad           = cfg;
    bad.precision = "f16";
    CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("precision"), ModelError);

    bad            = cfg;
    bad.vocab_size = 3;
    CHECK_THROWS_AS(bad.validate(), ModelError);

    KvConfig kv;
    cfg.to_kv(kv);
    ModelConfig back = ModelConfig::from_kv(kv);
    CHECK(back.encoder_layers == cfg.encoder_layers);
    CHECK(back.heads == cfg.heads);
    CHECK(back.hid_dim == cfg.hid_dim);
    CHECK(back.ffn_dim == cfg.ffn_dim);
    CHECK(back.vocab_size == cfg.vocab_size);
    CHECK(back.max_positions == cfg.max_positions);
    CHECK(back.precision == cfg.precision);
}

TEST_CASE("parameter count formula matches the materialized store") {
    ModelConfig cfg = tiny_config(37);
    auto        store = init_model_params<f64>(cfg, 7);
    CHECK(store.total_params() == total_param_count(cfg));

    ModelConfig big = cfg;
    big.heads       = 4;
    big.hid_dim     = 24;
    big.ffn_dim     = 60;
    big.vocab_size  = 101;
    big.max_positions = 33;
    auto store2 = init_model_params<f32>(big, 11);
    CHECK(store2.total_params() == total_param_count(big));
}

TEST_CASE("parameter count reproduces the 406M reference configuration") {
    // 12+12 layers, 1024 wide, 4096 ffn, 50265 vocab, 1026 positions
    ModelConfig cfg;
    cfg.encoder_layers = 12;
    cfg.decoder_layers = 12;
    cfg.heads          = 16;
    cfg.hid_dim        = 1024;
    cfg.ffn_dim        = 4096;
    cfg.vocab_size     = 50265;
    cfg.max_positions  = 1026;
    CHECK(total_param_count(cfg) == 406291456);
}

TEST_CASE("site enumeration covers encoder-self, decoder-self and cross") {
    ModelConfig cfg    = tiny_config();
    cfg.encoder_layers = 4;
    cfg.decoder_layers = 4;
    auto sites         = all_sites(cfg);
    CHECK(sites.size() == 12);

    auto top2 = top_decoder_sites(cfg, 2);
    REQUIRE(top2.size() == 4);
    CHECK(top2[0] == Site{ SiteKind::decoder_self, 2 });
    CHECK(top2[1] == Site{ SiteKind::decoder_self, 3 });
    CHECK(top2[2] == Site{ SiteKind::cross, 2 });
    CHECK(top2[3] == Site{ SiteKind::cross, 3 });
    CHECK_THROWS_AS(top_decoder_sites(cfg, 5), ModelError);
    CHECK_THROWS_AS(top_decoder_sites(cfg, 0), ModelError);

    CHECK(Site{ SiteKind::encoder_self, 1 }.name() == "enc_self.1");
    CHECK(Site{ SiteKind::cross, 0 }.name() == "cross.0");
}

namespace {

template <typename Real>
void unfreeze_all(ParamStore<Real> & store) {
    for (const std::string & n : store.names()) store.set_trainable(n, true);
}

}  // namespace

TEST_CASE("teacher-forced loss gradients agree with finite differences") {
    ModelConfig cfg = tiny_config();
    auto        store = init_model_params<f64>(cfg, 21);
    unfreeze_all(store);

    const std::vector<int32_t> src{ 4, 5, 6, 7, 5 };
    const std::vector<int32_t> tgt{ 8, 9, 10, 4 };

    auto loss_fn = [&]() {
        Tape<f64> tape;
        auto      h = build_forward(tape, store, cfg, {}, src, tgt);
        return (double) tape.val(h.loss).item();
    };

    Tape<f64> tape;
    auto      h = build_forward(tape, store, cfg, {}, src, tgt);
    tape.backward(h.loss);
    GradientMap<f64> grads = collect_gradients(tape, store);

    auto report = testing::fd_check(store, store.names(), grads, loss_fn, 1e-5, 13);
    INFO(report.describe());
    CHECK(report.max_rel_err < 1e-4);
    CHECK(report.coords_checked > 200);
}

TEST_CASE("injected prefix and suffix blocks receive correct gradients") {
    ModelConfig cfg = tiny_config();
    auto        store = init_model_params<f64>(cfg, 22);
    add_injection_params(store, cfg, /*plen=*/3, /*slen=*/2, 23);
    unfreeze_all(store);

    const std::vector<int32_t> src{ 4, 6, 8 };
    const std::vector<int32_t> tgt{ 9, 5 };

    auto loss_fn = [&]() {
        Tape<f64> tape;
        auto      inj = bind_injection(tape, store, cfg, true);
        auto      h   = build_forward(tape, store, cfg, inj, src, tgt);
        return (double) tape.val(h.loss).item();
    };

    Tape<f64> tape;
    auto      inj = bind_injection(tape, store, cfg, true);
    auto      h   = build_forward(tape, store, cfg, inj, src, tgt);
    tape.backward(h.loss);
    GradientMap<f64> grads = collect_gradients(tape, store);

    // focus the dense sweep on the injected blocks themselves
    std::vector<std::string> inj_names;
    for (const std::string & n : store.names()) {
        if (n.rfind("inj.", 0) == 0) inj_names.push_back(n);
    }
    REQUIRE(inj_names.size() == 6 * 2 + 2 * 2);
    auto report = testing::fd_check(store, inj_names, grads, loss_fn, 1e-5, 1);
    INFO(report.describe());
    CHECK(report.max_rel_err < 1e-4);

    auto backbone = testing::fd_check(store, store.names(), grads, loss_fn, 1e-5, 37);
    INFO(backbone.describe());
    CHECK(backbone.max_rel_err < 1e-4);
}

TEST_CASE("suffix blocks are rejected away from encoder self-attention") {
    ModelConfig cfg = tiny_config();
    auto        store = init_model_params<f64>(cfg, 30);
    add_injection_params(store, cfg, 2, 2, 31);

    Tape<f64>   tape;
    NodeId      pk = store.bind(tape, "inj.enc_self.0.pk");
    NodeId      pv = store.bind(tape, "inj.enc_self.0.pv");
    NodeId      sk = store.bind(tape, "inj.enc_self.0.sk");
    NodeId      sv = store.bind(tape, "inj.enc_self.0.sv");

    PrefixNodeMap bad;
    bad[Site{ SiteKind::cross, 0 }] = SiteNodes{ pk, pv, sk, sv };
    CHECK_THROWS_WITH_AS(build_forward(tape, store, cfg, bad, { 4, 5 }, { 6 }),
                         doctest::Contains("restricted to encoder self-attention"), ModelError);

    PrefixNodeMap unpaired;
    unpaired[Site{ SiteKind::cross, 0 }] = SiteNodes{ pk, -1, -1, -1 };
    CHECK_THROWS_WITH_AS(build_forward(tape, store, cfg, unpaired, { 4, 5 }, { 6 }),
                         doctest::Contains("pairs"), ModelError);
}

TEST_CASE("forward rejects out-of-range ids and over-long sequences") {
    ModelConfig cfg = tiny_config();
    auto        store = init_model_params<f64>(cfg, 33);
    Tape<f64>   tape;
    CHECK_THROWS_WITH_AS(build_forward(tape, store, cfg, {}, { 4, 99 }, { 5 }), doctest::Contains("out of range"),
                         ModelError);
    CHECK_THROWS_WITH_AS(build_forward(tape, store, cfg, {}, { 4 }, std::vector<int32_t>{}),
                         doctest::Contains("empty target"), ModelError);
    std::vector<int32_t> longseq(cfg.max_positions, 4);
    CHECK_THROWS_WITH_AS(build_forward(tape, store, cfg, {}, longseq, { 5 }), doctest::Contains("max_positions"),
                         ModelError);
}

TEST_CASE("cached decoder reproduces the tape loss exactly") {
    ModelConfig cfg = tiny_config();
    auto        store = init_model_params<f64>(cfg, 40);
    add_injection_params(store, cfg, 3, 2, 41);

    const std::vector<int32_t> src{ 4, 5, 6, 7 };
    const std::vector<int32_t> tgt{ 8, 9, 10, 11, 4 };

    SUBCASE("without injection") {
        Tape<f64> tape;
        auto      h = build_forward(tape, store, cfg, {}, src, tgt);

        InferenceModel<f64> model(store, cfg);
        auto                es = model.encode(src);
        double              nll = model.sequence_nll(es, tgt);
        CHECK(nll == doctest::Approx((double) tape.val(h.loss).item()).epsilon(1e-12));
    }

    SUBCASE("with prefix and suffix injection") {
        Tape<f64> tape;
        auto      inj = bind_injection(tape, store, cfg, true);
        auto      h   = build_forward(tape, store, cfg, inj, src, tgt);

        InferenceModel<f64> model(store, cfg, injection_tensors(store, cfg, true));
        auto                es = model.encode(src);
        double              nll = model.sequence_nll(es, tgt);
        CHECK(nll == doctest::Approx((double) tape.val(h.loss).item()).epsilon(1e-12));

        // injection must actually change the loss relative to the bare model
        Tape<f64> bare;
        auto      hb = build_forward(bare, store, cfg, {}, src, tgt);
        CHECK(std::abs((double) bare.val(hb.loss).item() - nll) > 1e-9);
    }
}

TEST_CASE("float32 decoder stays within loose tolerance of float64 tape") {
    ModelConfig cfg = tiny_config();
    cfg.precision   = "f32";
    auto store32    = init_model_params<f32>(cfg, 50);

    // mirror the same parameters into a float64 store
    ParamStore<f64> store64;
    for (const std::string & n : store32.names()) {
        const Tensor<f32> & t = store32.tensor(n);
        Tensor<f64>         d(t.shape);
        for (size_t i = 0; i < t.values.size(); ++i) d.values[i] = (double) t.values[i];
        store64.add(n, std::move(d));
    }

    const std::vector<int32_t> src{ 4, 5, 6 };
    const std::vector<int32_t> tgt{ 7, 8, 9 };

    ModelConfig cfg64 = cfg;
    cfg64.precision   = "f64";
    Tape<f64> tape;
    auto      h = build_forward(tape, store64, cfg64, {}, src, tgt);

    InferenceModel<f32> model(store32, cfg);
    auto                es = model.encode(src);
    CHECK(model.sequence_nll(es, tgt) == doctest::Approx((double) tape.val(h.loss).item()).epsilon(1e-4));
}

TEST_CASE("beam search: greedy equivalence, determinism and score consistency") {
    ModelConfig cfg = tiny_config(20);
    auto        store = init_model_params<f64>(cfg, 60);
    InferenceModel<f64> model(store, cfg);

    const std::vector<int32_t> src{ 4, 9, 13, 17 };
    auto                       es = model.encode(src);

    auto greedy = model.greedy_decode(es, 8);
    auto beam1  = model.beam_decode(es, 1, 8);
    CHECK(greedy.ids == beam1.ids);
    CHECK(greedy.score == beam1.score);

    auto beam4   = model.beam_decode(es, 4, 8);
    auto beam4b  = model.beam_decode(es, 4, 8);
    CHECK(beam4.ids == beam4b.ids);
    CHECK(beam4.score == beam4b.score);
    CHECK(beam4.normalized == beam4b.normalized);

    for (int32_t id : beam4.ids) {
        CHECK(id >= Vocabulary::unk_id);  // never pad/bos/eos
        CHECK(id < cfg.vocab_size);
    }

    // a finished hypothesis's normalized score is the negated teacher-forced
    // mean nll of its own ids — ties the two decoding paths together
    if (beam4.finished && !beam4.ids.empty()) {
        double nll = model.sequence_nll(es, beam4.ids);
        CHECK(beam4.normalized == doctest::Approx(-nll).epsilon(1e-10));
    }
    if (greedy.finished && !greedy.ids.empty()) {
        double nll = model.sequence_nll(es, greedy.ids);
        CHECK(greedy.normalized == doctest::Approx(-nll).epsilon(1e-10));
    }
}

TEST_CASE("beam search respects the length cap and rejects bad arguments") {
    ModelConfig cfg = tiny_config(20);
    auto        store = init_model_params<f64>(cfg, 61);
    InferenceModel<f64> model(store, cfg);
    auto                es = model.encode({ 5, 6 });

    auto h = model.beam_decode(es, 3, 4);
    CHECK(h.ids.size() <= 4);
    CHECK_THROWS_AS(model.beam_decode(es, 0, 4), ModelError);
    CHECK_THROWS_AS(model.beam_decode(es, 2, 0), ModelError);
}

TEST_CASE("decoder-self prefixes are visible from every decode position") {
    ModelConfig cfg = tiny_config();
    auto        store = init_model_params<f64>(cfg, 70);
    add_injection_params(store, cfg, 2, 0, 71);

    // restrict injection to decoder-self sites only
    PrefixTensorMap<f64> dec_only;
    for (const Site & s : all_sites(cfg)) {
        if (s.kind != SiteKind::decoder_self) continue;
        SiteTensors<f64> st;
        st.pk       = store.tensor("inj." + s.name() + ".pk");
        st.pv       = store.tensor("inj." + s.name() + ".pv");
        dec_only[s] = st;
    }

    const std::vector<int32_t> src{ 4, 5 };
    const std::vector<int32_t> tgt{ 6, 7, 8 };

    InferenceModel<f64> with(store, cfg, dec_only);
    InferenceModel<f64> without(store, cfg);
    double              a = with.sequence_nll(with.encode(src), tgt);
    double              b = without.sequence_nll(without.encode(src), tgt);
    CHECK(std::abs(a - b) > 1e-12);

    // and the tape agrees with the cached path on the injected variant
    Tape<f64>     tape;
    PrefixNodeMap inj;
    for (const auto & [site, st] : dec_only) {
        SiteNodes n;
        n.pk      = store.bind(tape, "inj." + site.name() + ".pk");
        n.pv      = store.bind(tape, "inj." + site.name() + ".pv");
        inj[site] = n;
    }
    auto h = build_forward(tape, store, cfg, inj, src, tgt);
    CHECK(a == doctest::Approx((double) tape.val(h.loss).item()).epsilon(1e-12));
}
