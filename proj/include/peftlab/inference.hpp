// SPDX-License-Identifier: Apache-2.0
//
// Incremental decoding for the encoder-decoder model: encode once, then
// step the decoder one token at a time against per-layer key/value caches.
// Prefix key/value blocks (from a tuning strategy) preload the decoder-self
// caches and prepend to the cross-attention keys; encoder-self blocks are
// applied during the single encoder pass. Beam search is length-normalized
// with deterministic tie-breaking: equal scores prefer the smaller token id,
// then the earlier beam.

#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "peftlab/model.hpp"
#include "peftlab/param_store.hpp"
#include "peftlab/tensor.hpp"
#include "peftlab/tokenizer.hpp"

namespace peftlab {

template <typename Real>
class InferenceModel {
  public:
    using Mat    = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using RowVec = Eigen::Matrix<Real, 1, Eigen::Dynamic, Eigen::RowMajor>;

    InferenceModel(const ParamStore<Real> & store, const ModelConfig & cfg, PrefixTensorMap<Real> prefix = {})
        : store_(store), cfg_(cfg), prefix_(std::move(prefix)) {
        cfg_.validate();
        for (const auto & [site, blocks] : prefix_) {
            if (blocks.pk.rows() != blocks.pv.rows() || blocks.sk.rows() != blocks.sv.rows()) {
                throw ModelError("prefix key/value row mismatch at " + site.name());
            }
            if (site.kind != SiteKind::encoder_self && blocks.sk.rows() > 0) {
                throw ModelError("suffix block at causal or cross site " + site.name());
            }
        }
    }

    struct EncodedSource {
        Mat              enc_out;  // [src+1, H]
        std::vector<Mat> cross_k;  // per decoder layer, prefix rows first
        std::vector<Mat> cross_v;
    };

    EncodedSource encode(const std::vector<int32_t> & src) const {
        std::vector<int32_t> ids = src;
        ids.push_back(Vocabulary::eos_id);
        check_ids(ids, "source");
        if ((int64_t) ids.size() > cfg_.max_positions) {
            throw ModelError("source exceeds max_positions=" + std::to_string(cfg_.max_positions));
        }

        Mat x = gather(mat("embed.tokens"), ids) + head_rows(mat("enc.pos"), (int64_t) ids.size());
        layer_norm_inplace(x, "enc.emb_ln");
        for (int l = 0; l < cfg_.encoder_layers; ++l) {
            const std::string base = "enc.l" + std::to_string(l);
            Mat               n1   = layer_normed(x, base + ".self_ln");
            x += self_attend(base + ".self", n1, site(SiteKind::encoder_self, l));
            Mat n2 = layer_normed(x, base + ".ffn_ln");
            x += ffn(base + ".ffn", n2);
        }

        EncodedSource es;
        es.enc_out = std::move(x);
        es.cross_k.resize((size_t) cfg_.decoder_layers);
        es.cross_v.resize((size_t) cfg_.decoder_layers);
        for (int l = 0; l < cfg_.decoder_layers; ++l) {
            const std::string   base = "dec.l" + std::to_string(l) + ".cross";
            Mat                 k    = project(es.enc_out, base, 'k');
            Mat                 v    = project(es.enc_out, base, 'v');
            const SiteTensors<Real> * inj = site(SiteKind::cross, l);
            es.cross_k[(size_t) l] = inj ? stack(tmat(inj->pk), k) : std::move(k);
            es.cross_v[(size_t) l] = inj ? stack(tmat(inj->pv), v) : std::move(v);
        }
        return es;
    }

    // Per-beam decoder state: self-attention caches, preloaded with any
    // decoder-self prefix rows.
    struct DecoderState {
        std::vector<Mat> self_k, self_v;  // per layer
        int              steps = 0;      // real rows appended so far
    };

    DecoderState initial_state() const {
        DecoderState st;
        st.self_k.resize((size_t) cfg_.decoder_layers);
        st.self_v.resize((size_t) cfg_.decoder_layers);
        for (int l = 0; l < cfg_.decoder_layers; ++l) {
            const SiteTensors<Real> * inj = site(SiteKind::decoder_self, l);
            if (inj && inj->pk.rows() > 0) {
                st.self_k[(size_t) l] = tmat(inj->pk);
                st.self_v[(size_t) l] = tmat(inj->pv);
            } else {
                st.self_k[(size_t) l] = Mat(0, cfg_.hid_dim);
                st.self_v[(size_t) l] = Mat(0, cfg_.hid_dim);
            }
        }
        return st;
    }

    // Advances one step: consumes the token at `position` (0 = <s>) and
    // returns the next-token logits. Appends this position's keys/values to
    // the state's caches.
    RowVec step(DecoderState & st, const EncodedSource & es, int32_t token, int position) const {
        if (position >= cfg_.max_positions) {
            throw ModelError("decode position exceeds max_positions=" + std::to_string(cfg_.max_positions));
        }
        RowVec x = mat("embed.tokens").row(token) + mat("dec.pos").row(position);
        layer_norm_row_inplace(x, "dec.emb_ln");
        for (int l = 0; l < cfg_.decoder_layers; ++l) {
            const std::string base = "dec.l" + std::to_string(l);
            RowVec            n1   = layer_normed_row(x, base + ".self_ln");
            RowVec q = n1 * mat(base + ".self.wq") + vecr(base + ".self.bq");
            RowVec k = n1 * mat(base + ".self.wk") + vecr(base + ".self.bk");
            RowVec v = n1 * mat(base + ".self.wv") + vecr(base + ".self.bv");
            Mat &  ck = st.self_k[(size_t) l];
            Mat &  cv = st.self_v[(size_t) l];
            ck.conservativeResize(ck.rows() + 1, Eigen::NoChange);
            cv.conservativeResize(cv.rows() + 1, Eigen::NoChange);
            ck.row(ck.rows() - 1) = k;
            cv.row(cv.rows() - 1) = v;
            x += attend_row(q, ck, cv) * mat(base + ".self.wo") + vecr(base + ".self.bo");

            RowVec n2 = layer_normed_row(x, base + ".cross_ln");
            RowVec q2 = n2 * mat(base + ".cross.wq") + vecr(base + ".cross.bq");
            x += attend_row(q2, es.cross_k[(size_t) l], es.cross_v[(size_t) l]) * mat(base + ".cross.wo") +
                 vecr(base + ".cross.bo");

            RowVec n3 = layer_normed_row(x, base + ".ffn_ln");
            x += ffn_row(base + ".ffn", n3);
        }
        st.steps++;
        return x * mat("embed.tokens").transpose();
    }

    // Teacher-forced mean negative log-likelihood of tgt + </s>; mirrors the
    // training loss so the two forward implementations can be cross-checked.
    double sequence_nll(const EncodedSource & es, const std::vector<int32_t> & tgt) const {
        if (tgt.empty()) throw ModelError("empty target");
        check_ids(tgt, "target");
        std::vector<int32_t> dec_in = { Vocabulary::bos_id };
        dec_in.insert(dec_in.end(), tgt.begin(), tgt.end());
        std::vector<int32_t> dec_out = tgt;
        dec_out.push_back(Vocabulary::eos_id);

        DecoderState st    = initial_state();
        double       total = 0;
        for (size_t t = 0; t < dec_in.size(); ++t) {
            RowVec logits = step(st, es, dec_in[t], (int) t);
            softmax_row(logits);
            total += -std::log(std::max((double) logits[dec_out[t]], 1e-300));
        }
        return total / (double) dec_in.size();
    }

    struct Hypothesis {
        std::vector<int32_t> ids;             // generated tokens, no <s> / </s>
        double               score      = 0;  // total log-probability incl. </s> when finished
        double               normalized = 0;  // score / generated steps
        bool                 finished   = false;
    };

    // Length-normalized beam search. <pad> and <s> are never proposed.
    // Candidate order (and so every tie) is fixed by (score desc, token id
    // asc, parent beam asc). Search halts once beam_size hypotheses have
    // finished; unfinished beams at max_len compete by the same normalized
    // score.
    Hypothesis beam_decode(const EncodedSource & es, int beam_size, int max_len) const {
        if (beam_size < 1) throw ModelError("beam size must be positive");
        if (max_len < 1) throw ModelError("max decode length must be positive");

        struct Beam {
            std::vector<int32_t> ids;
            double               logp = 0;
            DecoderState         st;
        };
        std::vector<Beam> live;
        live.push_back(Beam{ {}, 0.0, initial_state() });

        Hypothesis best;
        bool       have_best      = false;
        int        finished_count = 0;
        auto offer = [&](Hypothesis h) {
            finished_count++;
            if (!have_best || h.normalized > best.normalized) {
                best      = std::move(h);
                have_best = true;
            }
        };

        for (int t = 0; t < max_len && !live.empty() && finished_count < beam_size; ++t) {
            struct Cand {
                double  logp;
                int32_t token;
                int     parent;
            };
            std::vector<Cand> cands;
            cands.reserve(live.size() * (size_t)(2 * beam_size));
            for (size_t b = 0; b < live.size(); ++b) {
                Beam &  beam = live[b];
                int32_t last = beam.ids.empty() ? Vocabulary::bos_id : beam.ids.back();
                RowVec  logits = step(beam.st, es, last, t);
                std::vector<double> lp = log_softmax(logits);
                lp[(size_t) Vocabulary::pad_id] = -std::numeric_limits<double>::infinity();
                lp[(size_t) Vocabulary::bos_id] = -std::numeric_limits<double>::infinity();
                // 2x width so </s> picks cannot starve the continuing beams
                for (int32_t tok : top_tokens(lp, 2 * beam_size)) {
                    cands.push_back(Cand{ beam.logp + lp[(size_t) tok], tok, (int) b });
                }
            }
            std::sort(cands.begin(), cands.end(), [](const Cand & a, const Cand & b) {
                if (a.logp != b.logp) return a.logp > b.logp;
                if (a.token != b.token) return a.token < b.token;
                return a.parent < b.parent;
            });

            std::vector<Beam> next;
            for (size_t rank = 0; rank < cands.size(); ++rank) {
                const Cand & c = cands[rank];
                if (c.token == Vocabulary::eos_id) {
                    // a </s> only finishes a hypothesis from within the top
                    // beam_size ranks; with beam 1 this is exactly greedy
                    if ((int) rank < beam_size) {
                        Hypothesis h;
                        h.ids        = live[(size_t) c.parent].ids;
                        h.score      = c.logp;
                        h.normalized = c.logp / (double) (t + 1);
                        h.finished   = true;
                        offer(std::move(h));
                    }
                } else if ((int) next.size() < beam_size) {
                    Beam nb;
                    nb.ids = live[(size_t) c.parent].ids;
                    nb.ids.push_back(c.token);
                    nb.logp = c.logp;
                    nb.st   = live[(size_t) c.parent].st;
                    next.push_back(std::move(nb));
                }
            }
            live = std::move(next);
        }

        for (const Beam & b : live) {
            if (b.ids.empty()) continue;
            Hypothesis h;
            h.ids        = b.ids;
            h.score      = b.logp;
            h.normalized = b.logp / (double) b.ids.size();
            h.finished   = false;
            offer(std::move(h));
        }
        if (!have_best) {
            // every candidate path emitted </s> immediately and was beaten;
            // fall back to the empty finished hypothesis
            best.finished = true;
        }
        return best;
    }

    Hypothesis greedy_decode(const EncodedSource & es, int max_len) const { return beam_decode(es, 1, max_len); }

    const ModelConfig & config() const { return cfg_; }

  private:
    const ParamStore<Real> &   store_;
    ModelConfig                 cfg_;
    PrefixTensorMap<Real>       prefix_;

    const SiteTensors<Real> * site(SiteKind kind, int layer) const {
        auto it = prefix_.find(Site{ kind, layer });
        if (it == prefix_.end()) return nullptr;
        const SiteTensors<Real> & s = it->second;
        if (s.pk.rows() == 0 && s.sk.rows() == 0) return nullptr;
        return &s;
    }

    void check_ids(const std::vector<int32_t> & ids, const char * what) const {
        for (int32_t id : ids) {
            if (id < 0 || id >= cfg_.vocab_size) {
                throw ModelError(std::string(what) + " id " + std::to_string(id) + " out of range");
            }
        }
    }

    Eigen::Map<const Mat> mat(const std::string & name) const {
        const Tensor<Real> & t = store_.tensor(name);
        return Eigen::Map<const Mat>(t.values.data(), t.rows(), t.cols());
    }
    Eigen::Map<const RowVec> vecr(const std::string & name) const {
        const Tensor<Real> & t = store_.tensor(name);
        return Eigen::Map<const RowVec>(t.values.data(), t.numel());
    }
    static Eigen::Map<const Mat> tmat(const Tensor<Real> & t) {
        return Eigen::Map<const Mat>(t.values.data(), t.rows(), t.cols());
    }

    static Mat gather(Eigen::Map<const Mat> table, const std::vector<int32_t> & ids) {
        Mat out((int64_t) ids.size(), table.cols());
        for (size_t i = 0; i < ids.size(); ++i) out.row((int64_t) i) = table.row(ids[i]);
        return out;
    }
    static Mat head_rows(Eigen::Map<const Mat> table, int64_t n) { return table.topRows(n); }

    static Mat stack(Eigen::Map<const Mat> top, const Mat & bottom) {
        Mat out(top.rows() + bottom.rows(), bottom.cols());
        out.topRows(top.rows())       = top;
        out.bottomRows(bottom.rows()) = bottom;
        return out;
    }

    template <typename Rows>
    void layer_norm_rows(Rows && x, const std::string & base) const {
        auto          gain = vecr(base + ".gain");
        auto          bias = vecr(base + ".bias");
        const int64_t H    = x.cols();
        for (int64_t r = 0; r < x.rows(); ++r) {
            Real mean = x.row(r).sum() / (Real) H;
            Real var  = 0;
            for (int64_t j = 0; j < H; ++j) {
                Real d = x(r, j) - mean;
                var += d * d;
            }
            var /= (Real) H;
            const Real inv = Real(1) / std::sqrt(var + Real(1e-5));
            for (int64_t j = 0; j < H; ++j) x(r, j) = (x(r, j) - mean) * inv * gain[j] + bias[j];
        }
    }
    void layer_norm_inplace(Mat & x, const std::string & base) const { layer_norm_rows(x, base); }
    void layer_norm_row_inplace(RowVec & x, const std::string & base) const { layer_norm_rows(x, base); }
    Mat  layer_normed(const Mat & x, const std::string & base) const {
        Mat out = x;
        layer_norm_rows(out, base);
        return out;
    }
    RowVec layer_normed_row(const RowVec & x, const std::string & base) const {
        RowVec out = x;
        layer_norm_rows(out, base);
        return out;
    }

    static void gelu_inplace(Mat & x) {
        for (int64_t r = 0; r < x.rows(); ++r) {
            for (int64_t c = 0; c < x.cols(); ++c) {
                Real v  = x(r, c);
                x(r, c) = Real(0.5) * v * (Real(1) + (Real) std::erf((double) v * M_SQRT1_2));
            }
        }
    }
    static void gelu_row_inplace(RowVec & x) {
        for (int64_t c = 0; c < x.cols(); ++c) {
            Real v = x[c];
            x[c]   = Real(0.5) * v * (Real(1) + (Real) std::erf((double) v * M_SQRT1_2));
        }
    }

    Mat ffn(const std::string & base, const Mat & x) const {
        Mat h = (x * mat(base + ".w1")).rowwise() + vecr(base + ".b1").row(0);
        gelu_inplace(h);
        return (h * mat(base + ".w2")).rowwise() + vecr(base + ".b2").row(0);
    }
    RowVec ffn_row(const std::string & base, const RowVec & x) const {
        RowVec h = x * mat(base + ".w1") + vecr(base + ".b1");
        gelu_row_inplace(h);
        return h * mat(base + ".w2") + vecr(base + ".b2");
    }

    Mat project(const Mat & x, const std::string & base, char which) const {
        const std::string w = base + (which == 'k' ? ".wk" : ".wv");
        const std::string b = base + (which == 'k' ? ".bk" : ".bv");
        return (x * mat(w)).rowwise() + vecr(b).row(0);
    }

    static void softmax_row(RowVec & row) {
        Real mx = row.maxCoeff();
        Real denom = 0;
        for (int64_t j = 0; j < row.cols(); ++j) {
            row[j] = std::exp(row[j] - mx);
            denom += row[j];
        }
        row /= denom;
    }

    static std::vector<double> log_softmax(const RowVec & row) {
        double mx = (double) row.maxCoeff();
        double denom = 0;
        for (int64_t j = 0; j < row.cols(); ++j) denom += std::exp((double) row[j] - mx);
        double lse = mx + std::log(denom);
        std::vector<double> out((size_t) row.cols());
        for (int64_t j = 0; j < row.cols(); ++j) out[(size_t) j] = (double) row[j] - lse;
        return out;
    }

    static std::vector<int32_t> top_tokens(const std::vector<double> & lp, int k) {
        std::vector<int32_t> idx(lp.size());
        for (size_t i = 0; i < lp.size(); ++i) idx[i] = (int32_t) i;
        int kk = std::min<int>(k, (int) lp.size());
        std::partial_sort(idx.begin(), idx.begin() + kk, idx.end(), [&](int32_t a, int32_t b) {
            if (lp[(size_t) a] != lp[(size_t) b]) return lp[(size_t) a] > lp[(size_t) b];
            return a < b;
        });
        idx.resize((size_t) kk);
        return idx;
    }

    // Full self-attention over a whole sequence (encoder); optional prefix
    // and suffix key/value blocks are always visible.
    Mat self_attend(const std::string & base, const Mat & xn, const SiteTensors<Real> * inj) const {
        Mat q = (xn * mat(base + ".wq")).rowwise() + vecr(base + ".bq").row(0);
        Mat k = (xn * mat(base + ".wk")).rowwise() + vecr(base + ".bk").row(0);
        Mat v = (xn * mat(base + ".wv")).rowwise() + vecr(base + ".bv").row(0);
        if (inj) {
            if (inj->pk.rows() > 0) {
                k = stack(tmat(inj->pk), k);
                v = stack(tmat(inj->pv), v);
            }
            if (inj->sk.rows() > 0) {
                Mat k2(k.rows() + inj->sk.rows(), k.cols());
                k2.topRows(k.rows()) = k;
                k2.bottomRows(inj->sk.rows()) = tmat(inj->sk);
                k = std::move(k2);
                Mat v2(v.rows() + inj->sv.rows(), v.cols());
                v2.topRows(v.rows()) = v;
                v2.bottomRows(inj->sv.rows()) = tmat(inj->sv);
                v = std::move(v2);
            }
        }
        Mat mixed(q.rows(), q.cols());
        const int64_t dh  = cfg_.hid_dim / cfg_.heads;
        const Real    scl = Real(1) / (Real) std::sqrt((double) dh);
        for (int h = 0; h < cfg_.heads; ++h) {
            Mat s = (q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose()) * scl;
            for (int64_t r = 0; r < s.rows(); ++r) {
                RowVec row = s.row(r);
                softmax_row(row);
                s.row(r) = row;
            }
            mixed.middleCols(h * dh, dh).noalias() = s * v.middleCols(h * dh, dh);
        }
        return (mixed * mat(base + ".wo")).rowwise() + vecr(base + ".bo").row(0);
    }

    // One query row against cached keys/values.
    RowVec attend_row(const RowVec & q, const Mat & k, const Mat & v) const {
        RowVec        out(q.cols());
        const int64_t dh  = cfg_.hid_dim / cfg_.heads;
        const Real    scl = Real(1) / (Real) std::sqrt((double) dh);
        for (int h = 0; h < cfg_.heads; ++h) {
            RowVec s = (q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose()) * scl;
            softmax_row(s);
            out.middleCols(h * dh, dh).noalias() = s * v.middleCols(h * dh, dh);
        }
        return out;
    }
};

}  // namespace peftlab
