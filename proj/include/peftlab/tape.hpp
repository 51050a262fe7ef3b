// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode automatic differentiation on a linear tape.
//
// The op set is exactly what an encoder-decoder transformer with prefix
// injection needs; this is not a general-purpose autodiff library. Multi-head
// attention (with optional prefix/suffix key-value blocks and causal masking)
// is a single fused node with a hand-derived backward pass, which keeps tapes
// short and avoids materializing per-head intermediates.
//
// Gradient buffers are allocated lazily during backward(), so frozen
// parameters and subgraphs that feed only frozen parameters never receive a
// gradient buffer at all. Masked positions in attention receive exactly zero
// probability, and therefore exactly zero gradient.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "peftlab/tensor.hpp"

namespace peftlab {

template <typename Real>
using EigenRowMajor = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Real>
Eigen::Map<EigenRowMajor<Real>> emap(Tensor<Real> & t) {
    return Eigen::Map<EigenRowMajor<Real>>(t.values.data(), t.rows(), t.cols());
}

template <typename Real>
Eigen::Map<const EigenRowMajor<Real>> emap(const Tensor<Real> & t) {
    return Eigen::Map<const EigenRowMajor<Real>>(t.values.data(), t.rows(), t.cols());
}

enum class Op : uint8_t {
    constant,
    param,
    add,
    add_row,
    mul,
    scale,
    matmul,
    matmul_nt,
    tanh_fn,
    gelu,
    relu,
    softmax_rows,
    layer_norm,
    embed_rows,
    concat_rows,
    slice_rows,
    transpose,
    cross_entropy,
    sum_all,
    attention,
};

inline const char * op_name(Op op) {
    switch (op) {
        case Op::constant:      return "constant";
        case Op::param:         return "param";
        case Op::add:           return "add";
        case Op::add_row:       return "add_row";
        case Op::mul:           return "mul";
        case Op::scale:         return "scale";
        case Op::matmul:        return "matmul";
        case Op::matmul_nt:     return "matmul_nt";
        case Op::tanh_fn:       return "tanh";
        case Op::gelu:          return "gelu";
        case Op::relu:          return "relu";
        case Op::softmax_rows:  return "softmax_rows";
        case Op::layer_norm:    return "layer_norm";
        case Op::embed_rows:    return "embed_rows";
        case Op::concat_rows:   return "concat_rows";
        case Op::slice_rows:    return "slice_rows";
        case Op::transpose:     return "transpose";
        case Op::cross_entropy: return "cross_entropy";
        case Op::sum_all:       return "sum_all";
        case Op::attention:     return "attention";
    }
    return "?";
}

using NodeId = int32_t;

// Geometry of one fused attention node.
struct AttentionSpec {
    int  heads      = 1;
    int  prefix_len = 0;  // leading key/value rows always visible
    int  suffix_len = 0;  // trailing key/value rows always visible (non-causal only)
    bool causal     = false;
};

template <typename Real>
class Tape {
  public:
    struct Node {
        Op                   op;
        std::array<NodeId, 3> in{ -1, -1, -1 };
        int32_t              list_begin = 0;  // concat_rows inputs
        int32_t              list_len   = 0;
        int32_t              aux        = -1;  // index into per-kind side storage
        int64_t              i0         = 0;   // op-specific integers (slice begin, ignore id, ...)
        int64_t              i1         = 0;
        Real                 r0         = Real(0);  // op-specific scalar (scale factor, eps)
        AttentionSpec        attn;
        Tensor<Real>         value;
        const Tensor<Real> * ext_value = nullptr;  // set for param nodes; avoids copying weights
        std::unique_ptr<Tensor<Real>> grad;
        bool                 requires_grad = false;
        std::string          name;  // param nodes only
    };

    const Tensor<Real> & val(NodeId id) const {
        const Node & n = nodes_[(size_t) id];
        return n.ext_value ? *n.ext_value : n.value;
    }

    const Tensor<Real> * grad_ptr(NodeId id) const { return nodes_[(size_t) id].grad.get(); }

    bool needs_grad(NodeId id) const { return nodes_[(size_t) id].requires_grad; }

    size_t size() const { return nodes_.size(); }

    int64_t backward_op_count() const { return backward_ops_; }
    int64_t nodes_with_grad() const {
        int64_t n = 0;
        for (const Node & node : nodes_) {
            if (node.grad) n++;
        }
        return n;
    }

    void reserve(size_t n) { nodes_.reserve(n); }

    // ---- leaf builders ----

    NodeId constant(Tensor<Real> t) {
        Node n;
        n.op    = Op::constant;
        n.value = std::move(t);
        return push(std::move(n));
    }

    // References external storage (typically a parameter store entry). The
    // tensor must outlive the tape. Calls with the same name return the same
    // node so gradients from every use site accumulate in one buffer.
    NodeId param(const std::string & name, const Tensor<Real> * t, bool requires_grad) {
        auto it = param_memo_.find(name);
        if (it != param_memo_.end()) return it->second;
        Node n;
        n.op            = Op::param;
        n.ext_value     = t;
        n.requires_grad = requires_grad;
        n.name          = name;
        NodeId id       = push(std::move(n));
        param_memo_.emplace(name, id);
        return id;
    }

    const std::vector<std::pair<std::string, NodeId>> param_nodes() const {
        std::vector<std::pair<std::string, NodeId>> out(param_memo_.begin(), param_memo_.end());
        return out;
    }

    NodeId param_node(const std::string & name) const {
        auto it = param_memo_.find(name);
        return it == param_memo_.end() ? -1 : it->second;
    }

    // ---- elementwise / linear ops ----

    NodeId add(NodeId a, NodeId b) {
        require_same_shape("add", a, b);
        Tensor<Real> out = val(a);
        const auto & vb  = val(b);
        for (size_t i = 0; i < out.values.size(); ++i) out.values[i] += vb.values[i];
        return push_unary_like(Op::add, std::move(out), a, b);
    }

    NodeId add_row(NodeId m, NodeId row) {
        const auto & vm = val(m);
        const auto & vr = val(row);
        if (vr.numel() != vm.cols()) {
            fail_shapes("add_row", vm.shape, vr.shape);
        }
        Tensor<Real> out = vm;
        for (int64_t r = 0; r < out.rows(); ++r) {
            Real * dst = out.row_ptr(r);
            for (int64_t c = 0; c < out.cols(); ++c) dst[c] += vr.values[(size_t) c];
        }
        return push_unary_like(Op::add_row, std::move(out), m, row);
    }

    NodeId mul(NodeId a, NodeId b) {
        require_same_shape("mul", a, b);
        Tensor<Real> out = val(a);
        const auto & vb  = val(b);
        for (size_t i = 0; i < out.values.size(); ++i) out.values[i] *= vb.values[i];
        return push_unary_like(Op::mul, std::move(out), a, b);
    }

    NodeId scale(NodeId a, Real s) {
        Tensor<Real> out = val(a);
        for (Real & v : out.values) v *= s;
        NodeId id             = push_unary_like(Op::scale, std::move(out), a);
        nodes_.back().r0      = s;
        return id;
    }

    NodeId matmul(NodeId a, NodeId b) {
        const auto & va = val(a);
        const auto & vb = val(b);
        if (va.rank() != 2 || vb.rank() != 2 || va.cols() != vb.rows()) {
            fail_shapes("matmul", va.shape, vb.shape);
        }
        Tensor<Real> out({ va.rows(), vb.cols() });
        emap(out).noalias() = emap(va) * emap(vb);
        return push_unary_like(Op::matmul, std::move(out), a, b);
    }

    // a · b^T where b is stored row-major [n, k]; used for tied unembedding.
    NodeId matmul_nt(NodeId a, NodeId b) {
        const auto & va = val(a);
        const auto & vb = val(b);
        if (va.rank() != 2 || vb.rank() != 2 || va.cols() != vb.cols()) {
            fail_shapes("matmul_nt", va.shape, vb.shape);
        }
        Tensor<Real> out({ va.rows(), vb.rows() });
        emap(out).noalias() = emap(va) * emap(vb).transpose();
        return push_unary_like(Op::matmul_nt, std::move(out), a, b);
    }

    NodeId tanh_fn(NodeId a) {
        Tensor<Real> out = val(a);
        for (Real & v : out.values) v = std::tanh(v);
        return push_unary_like(Op::tanh_fn, std::move(out), a);
    }

    NodeId gelu(NodeId a) {
        Tensor<Real> out = val(a);
        for (Real & v : out.values) {
            v = Real(0.5) * v * (Real(1) + (Real) std::erf((double) v * M_SQRT1_2));
        }
        return push_unary_like(Op::gelu, std::move(out), a);
    }

    NodeId relu(NodeId a) {
        Tensor<Real> out = val(a);
        for (Real & v : out.values) v = v > Real(0) ? v : Real(0);
        return push_unary_like(Op::relu, std::move(out), a);
    }

    // Row-wise softmax. When visible is non-null it must have one byte per
    // entry; zero bytes are excluded from the softmax and get probability
    // exactly 0. Each row must keep at least one visible entry.
    NodeId softmax_rows(NodeId a, const std::vector<uint8_t> * visible = nullptr) {
        const auto & va = val(a);
        if (va.rank() != 2) fail_shapes("softmax_rows", va.shape, {});
        if (visible && (int64_t) visible->size() != va.numel()) {
            throw TensorError("softmax_rows: mask size does not match tensor " + shape_str(va.shape));
        }
        Tensor<Real> out = va;
        for (int64_t r = 0; r < out.rows(); ++r) {
            softmax_row_masked(out.row_ptr(r), out.cols(),
                               visible ? visible->data() + r * out.cols() : nullptr);
        }
        NodeId id = push_unary_like(Op::softmax_rows, std::move(out), a);
        if (visible) {
            nodes_.back().aux = (int32_t) masks_.size();
            masks_.push_back(*visible);
        }
        return id;
    }

    NodeId layer_norm(NodeId x, NodeId gain, NodeId bias, Real eps = Real(1e-5)) {
        const auto & vx = val(x);
        const auto & vg = val(gain);
        const auto & vb = val(bias);
        if (vx.rank() != 2 || vg.numel() != vx.cols() || vb.numel() != vx.cols()) {
            fail_shapes("layer_norm", vx.shape, vg.shape);
        }
        Tensor<Real> out       = vx;
        const int64_t C        = vx.cols();
        for (int64_t r = 0; r < vx.rows(); ++r) {
            Real * row  = out.row_ptr(r);
            Real   mean = 0, var = 0;
            for (int64_t c = 0; c < C; ++c) mean += row[c];
            mean /= (Real) C;
            for (int64_t c = 0; c < C; ++c) {
                Real d = row[c] - mean;
                var += d * d;
            }
            var /= (Real) C;
            Real inv = Real(1) / std::sqrt(var + eps);
            for (int64_t c = 0; c < C; ++c) {
                row[c] = (row[c] - mean) * inv * vg.values[(size_t) c] + vb.values[(size_t) c];
            }
        }
        Node n;
        n.op    = Op::layer_norm;
        n.in    = { x, gain, bias };
        n.r0    = eps;
        n.value = std::move(out);
        n.requires_grad = needs_grad(x) || needs_grad(gain) || needs_grad(bias);
        return push(std::move(n));
    }

    // Gathers table rows by id: out[i, :] = table[ids[i], :].
    NodeId embed_rows(NodeId table, const std::vector<int32_t> & ids) {
        const auto & vt = val(table);
        if (vt.rank() != 2) fail_shapes("embed_rows", vt.shape, {});
        Tensor<Real> out({ (int64_t) ids.size(), vt.cols() });
        for (size_t i = 0; i < ids.size(); ++i) {
            if (ids[i] < 0 || (int64_t) ids[i] >= vt.rows()) {
                throw TensorError("embed_rows: id " + std::to_string(ids[i]) + " out of range for table " +
                                  shape_str(vt.shape));
            }
            std::copy(vt.row_ptr(ids[i]), vt.row_ptr(ids[i]) + vt.cols(), out.row_ptr((int64_t) i));
        }
        NodeId id         = push_unary_like(Op::embed_rows, std::move(out), table);
        nodes_.back().aux = (int32_t) ids_.size();
        ids_.push_back(ids);
        return id;
    }

    // Vertical concatenation. Inputs with zero rows are legal and contribute
    // nothing; a single non-empty input returns that node unchanged, so a
    // zero-length prefix is bitwise identical to no concatenation at all.
    NodeId concat_rows(const std::vector<NodeId> & parts) {
        std::vector<NodeId> used;
        for (NodeId p : parts) {
            if (val(p).rows() > 0) used.push_back(p);
        }
        if (used.empty()) throw TensorError("concat_rows: all inputs empty");
        if (used.size() == 1) return used[0];
        int64_t rows = 0;
        int64_t cols = val(used[0]).cols();
        for (NodeId p : used) {
            if (val(p).rank() != 2 || val(p).cols() != cols) {
                fail_shapes("concat_rows", val(used[0]).shape, val(p).shape);
            }
            rows += val(p).rows();
        }
        Tensor<Real> out({ rows, cols });
        int64_t      at = 0;
        for (NodeId p : used) {
            const auto & vp = val(p);
            std::copy(vp.values.begin(), vp.values.end(), out.row_ptr(at));
            at += vp.rows();
        }
        Node n;
        n.op         = Op::concat_rows;
        n.list_begin = (int32_t) list_pool_.size();
        n.list_len   = (int32_t) used.size();
        for (NodeId p : used) {
            list_pool_.push_back(p);
            n.requires_grad = n.requires_grad || needs_grad(p);
        }
        n.value = std::move(out);
        return push(std::move(n));
    }

    NodeId slice_rows(NodeId a, int64_t begin, int64_t len) {
        const auto & va = val(a);
        if (va.rank() != 2 || begin < 0 || len < 0 || begin + len > va.rows()) {
            throw TensorError("slice_rows: range [" + std::to_string(begin) + "," + std::to_string(begin + len) +
                              ") out of bounds for " + shape_str(va.shape));
        }
        Tensor<Real> out({ len, va.cols() });
        std::copy(va.row_ptr(begin), va.row_ptr(begin) + len * va.cols(), out.values.begin());
        NodeId id        = push_unary_like(Op::slice_rows, std::move(out), a);
        nodes_.back().i0 = begin;
        nodes_.back().i1 = len;
        return id;
    }

    NodeId transpose(NodeId a) {
        const auto & va = val(a);
        if (va.rank() != 2) fail_shapes("transpose", va.shape, {});
        Tensor<Real> out({ va.cols(), va.rows() });
        emap(out) = emap(va).transpose();
        return push_unary_like(Op::transpose, std::move(out), a);
    }

    // Mean token-level cross entropy over rows whose target is not ignore_id.
    // Uses log-sum-exp; softmax probabilities are saved for backward.
    NodeId cross_entropy(NodeId logits, const std::vector<int32_t> & targets, int32_t ignore_id) {
        const auto & vl = val(logits);
        if (vl.rank() != 2 || (int64_t) targets.size() != vl.rows()) {
            throw TensorError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                              shape_str(vl.shape));
        }
        Tensor<Real> probs = vl;
        double       total = 0;
        int64_t      used  = 0;
        for (int64_t r = 0; r < vl.rows(); ++r) {
            Real * row = probs.row_ptr(r);
            softmax_row_masked(row, vl.cols(), nullptr);
            if (targets[(size_t) r] == ignore_id) continue;
            int32_t t = targets[(size_t) r];
            if (t < 0 || (int64_t) t >= vl.cols()) {
                throw TensorError("cross_entropy: target id " + std::to_string(t) + " out of range");
            }
            total += -std::log(std::max((double) row[t], 1e-300));
            used++;
        }
        if (used == 0) throw TensorError("cross_entropy: no non-ignored targets");
        Node n;
        n.op    = Op::cross_entropy;
        n.in    = { logits, -1, -1 };
        n.i0    = ignore_id;
        n.value = Tensor<Real>::scalar((Real)(total / (double) used));
        n.aux   = (int32_t) ids_.size();
        ids_.push_back(targets);
        n.requires_grad = needs_grad(logits);
        NodeId id       = push(std::move(n));
        nodes_.back().i1 = (int64_t) saved_.size();
        saved_.push_back(std::move(probs));
        return id;
    }

    NodeId sum_all(NodeId a) {
        const auto & va = val(a);
        Real         s  = 0;
        for (Real v : va.values) s += v;
        Node n;
        n.op            = Op::sum_all;
        n.in            = { a, -1, -1 };
        n.value         = Tensor<Real>::scalar(s);
        n.requires_grad = needs_grad(a);
        return push(std::move(n));
    }

    // Fused multi-head attention.
    //   q: [Tq, H], k/v: [prefix + Treal + suffix, H], H divisible by heads.
    // Causal masking applies to the real block only: query i sees real keys
    // 0..i (requires Tq == Treal). Prefix and suffix rows are always visible.
    // Suffix rows at a causal site are rejected: a position would attend to
    // content aligned to its right.
    NodeId attention(NodeId q, NodeId k, NodeId v, const AttentionSpec & spec) {
        const auto & vq = val(q);
        const auto & vk = val(k);
        const auto & vv = val(v);
        const int64_t H = vq.cols();
        if (vq.rank() != 2 || vk.rank() != 2 || vk.cols() != H || !vv.same_shape(vk)) {
            fail_shapes("attention", vq.shape, vk.shape);
        }
        if (spec.heads <= 0 || H % spec.heads != 0) {
            throw TensorError("attention: width " + std::to_string(H) + " not divisible by " +
                              std::to_string(spec.heads) + " heads");
        }
        const int64_t Tq    = vq.rows();
        const int64_t Tkv   = vk.rows();
        const int64_t Treal = Tkv - spec.prefix_len - spec.suffix_len;
        if (Treal < 0) throw TensorError("attention: prefix+suffix exceed key rows");
        if (spec.causal && spec.suffix_len > 0) {
            throw TensorError("attention: suffix block at a causal site");
        }
        if (spec.causal && Tq != Treal) {
            throw TensorError("attention: causal site needs square real block, got Tq=" + std::to_string(Tq) +
                              " Treal=" + std::to_string(Treal));
        }

        const int64_t dh    = H / spec.heads;
        const Real    scl   = Real(1) / (Real) std::sqrt((double) dh);
        Tensor<Real>  out({ Tq, H });
        Tensor<Real>  probs({ (int64_t) spec.heads * Tq, Tkv });

        auto mq = emap(vq);
        auto mk = emap(vk);
        auto mv = emap(vv);
        auto mo = emap(out);
        auto mp = emap(probs);

        for (int h = 0; h < spec.heads; ++h) {
            auto Qh = mq.middleCols(h * dh, dh);
            auto Kh = mk.middleCols(h * dh, dh);
            auto Vh = mv.middleCols(h * dh, dh);
            auto Ph = mp.middleRows(h * Tq, Tq);
            Ph.noalias() = Qh * Kh.transpose();
            for (int64_t i = 0; i < Tq; ++i) {
                Real * row = probs.row_ptr(h * Tq + i);
                for (int64_t j = 0; j < Tkv; ++j) row[j] *= scl;
                if (spec.causal) {
                    // hide real keys strictly to the right of position i
                    for (int64_t j = spec.prefix_len + i + 1; j < Tkv; ++j) row[j] = Real(0);
                    softmax_row_visible_range(row, Tkv, spec.prefix_len + i + 1);
                } else {
                    softmax_row_visible_range(row, Tkv, Tkv);
                }
            }
            mo.middleCols(h * dh, dh).noalias() = Ph * Vh;
        }

        Node n;
        n.op            = Op::attention;
        n.in            = { q, k, v };
        n.attn          = spec;
        n.r0            = scl;
        n.value         = std::move(out);
        n.requires_grad = needs_grad(q) || needs_grad(k) || needs_grad(v);
        NodeId id       = push(std::move(n));
        nodes_.back().i1 = (int64_t) saved_.size();
        saved_.push_back(std::move(probs));
        return id;
    }

    // ---- backward ----

    void backward(NodeId loss) {
        const Node & ln = nodes_[(size_t) loss];
        if (val(loss).numel() != 1) {
            throw TensorError("backward: loss is not scalar, shape " + shape_str(val(loss).shape));
        }
        if (!std::isfinite((double) val(loss).item())) {
            throw TensorError("backward: non-finite loss");
        }
        if (!ln.requires_grad) return;
        ensure_grad(loss).fill(Real(1));
        for (NodeId id = loss; id >= 0; --id) {
            Node & n = nodes_[(size_t) id];
            if (!n.grad || n.op == Op::constant || n.op == Op::param) continue;
            backward_ops_++;
            backward_node(n);
        }
    }

    // Moves the gradient of a parameter node out of the tape, or returns a
    // zero tensor if the parameter was never reached by backward.
    Tensor<Real> take_param_grad(NodeId id) {
        Node & n = nodes_[(size_t) id];
        if (n.grad) return std::move(*n.grad);
        return Tensor<Real>::zeros(val(id).shape);
    }

  private:
    std::vector<Node>                     nodes_;
    std::vector<NodeId>                   list_pool_;
    std::vector<std::vector<int32_t>>     ids_;
    std::vector<Tensor<Real>>             saved_;
    std::vector<std::vector<uint8_t>>     masks_;
    std::unordered_map<std::string, NodeId> param_memo_;
    int64_t                               backward_ops_ = 0;

    NodeId push(Node && n) {
        nodes_.push_back(std::move(n));
        return (NodeId)(nodes_.size() - 1);
    }

    NodeId push_unary_like(Op op, Tensor<Real> && out, NodeId a, NodeId b = -1) {
        Node n;
        n.op            = op;
        n.in            = { a, b, -1 };
        n.value         = std::move(out);
        n.requires_grad = needs_grad(a) || (b >= 0 && needs_grad(b));
        return push(std::move(n));
    }

    void require_same_shape(const char * op, NodeId a, NodeId b) {
        if (!val(a).same_shape(val(b))) fail_shapes(op, val(a).shape, val(b).shape);
    }

    [[noreturn]] void fail_shapes(const char * op, const std::vector<int64_t> & a, const std::vector<int64_t> & b) {
        throw TensorError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
    }

    Tensor<Real> & ensure_grad(NodeId id) {
        Node & n = nodes_[(size_t) id];
        if (!n.grad) n.grad = std::make_unique<Tensor<Real>>(Tensor<Real>::zeros(val(id).shape));
        return *n.grad;
    }

    // Adds to a parent's gradient only if that parent requires grad.
    template <typename Fn>
    void accumulate(NodeId parent, Fn && fn) {
        if (parent < 0 || !needs_grad(parent)) return;
        fn(ensure_grad(parent));
    }

    // In-place masked softmax over row[0..n). With a byte mask, zero entries
    // are excluded; without one, all entries participate.
    static void softmax_row_masked(Real * row, int64_t n, const uint8_t * visible) {
        Real mx        = 0;
        bool any       = false;
        for (int64_t j = 0; j < n; ++j) {
            if (visible && !visible[j]) continue;
            if (!any || row[j] > mx) mx = row[j];
            any = true;
        }
        if (!any) throw TensorError("softmax: fully masked row");
        Real denom = 0;
        for (int64_t j = 0; j < n; ++j) {
            if (visible && !visible[j]) {
                row[j] = Real(0);
                continue;
            }
            row[j] = std::exp(row[j] - mx);
            denom += row[j];
        }
        for (int64_t j = 0; j < n; ++j) row[j] /= denom;
    }

    // Softmax over entries [0, limit) plus nothing beyond; entries >= limit
    // are already zeroed by the caller and stay exactly zero.
    static void softmax_row_visible_range(Real * row, int64_t n, int64_t limit) {
        if (limit > n) limit = n;
        Real mx = row[0];
        for (int64_t j = 1; j < limit; ++j) mx = std::max(mx, row[j]);
        Real denom = 0;
        for (int64_t j = 0; j < limit; ++j) {
            row[j] = std::exp(row[j] - mx);
            denom += row[j];
        }
        for (int64_t j = 0; j < limit; ++j) row[j] /= denom;
        for (int64_t j = limit; j < n; ++j) row[j] = Real(0);
    }

    void backward_node(Node & n) {
        const Tensor<Real> & g = *n.grad;
        switch (n.op) {
            case Op::add: {
                accumulate(n.in[0], [&](Tensor<Real> & d) {
                    for (size_t i = 0; i < d.values.size(); ++i) d.values[i] += g.values[i];
                });
                accumulate(n.in[1], [&](Tensor<Real> & d) {
                    for (size_t i = 0; i < d.values.size(); ++i) d.values[i] += g.values[i];
                });
                break;
            }
            case Op::add_row: {
                accumulate(n.in[0], [&](Tensor<Real> & d) {
                    for (size_t i = 0; i < d.values.size(); ++i) d.values[i] += g.values[i];
                });
                accumulate(n.in[1], [&](Tensor<Real> & d) {
                    for (int64_t r = 0; r < g.rows(); ++r) {
                        const Real * src = g.row_ptr(r);
                        for (int64_t c = 0; c < g.cols(); ++c) d.values[(size_t) c] += src[c];
                    }
                });
                break;
            }
            case Op::mul: {
                accumulate(n.in[0], [&](Tensor<Real> & d) {
                    const auto & vb = val(n.in[1]);
                    for (size_t i = 0; i < d.values.size(); ++i) d.values[i] += g.values[i] * vb.values[i];
                });
                accumulate(n.in[1], [&](Tensor<Real> & d) {
                    const auto & va = val(n.in[0]);
                    for (size_t i = 0; i < d.values.size(); ++i) d.values[i] += g.values[i] * va.values[i];
                });
                break;
            }
            case Op::scale: {
                accumulate(n.in[0], [&](Tensor<Real> & d) {
                    for (size_t i = 0; i < d.values.size(); ++i) d.values[i] += n.r0 * g.values[i];
                });
                break;
            }
            case Op::matmul: {
                accumulate(n.in[0], [&](Tensor<Real> & d) {
                    emap(d).noalias() += emap(g) * emap(val(n.in[1])).transpose();
                });
                accumulate(n.in[1], [&](Tensor<Real> & d) {
                    emap(d).noalias() += emap(val(n.in[0])).transpose() * emap(g);
                });
                break;
            }
            case Op::matmul_nt: {
                accumulate(n.in[0], [&](Tensor<Real> & d) {
                    emap(d).noalias() += emap(g) * emap(val(n.in[1]));
                });
                accumulate(n.in[1], [&](Tensor<Real> & d) {
                    emap(d).noalias() += emap(g).transpose() * emap(val(n.in[0]));
                });
                break;
            }
            case Op::tanh_fn: {
                accumulate(n.in[0], [&](Tensor<Real> & d) {
                    const auto & y = n.value;
                    for (size_t i = 0; i < d.values.size(); ++i) {
                        d.values[i] += g.values[i] * (Real(1) - y.values[i] * y.values[i]);
                    }
                });
                break;
            }
            case Op::gelu: {
                accumulate(n.in[0], [&](Tensor<Real> & d) {
                    const auto & x = val(n.in[0]);
                    for (size_t i = 0; i < d.values.size(); ++i) {
                        double xv  = (double) x.values[i];
                        double cdf = 0.5 * (1.0 + std::erf(xv * M_SQRT1_2));
                        double pdf = std::exp(-0.5 * xv * xv) / std::sqrt(2.0 * M_PI);
                        d.values[i] += g.values[i] * (Real)(cdf + xv * pdf);
                    }
                });
                break;
            }
            case Op::relu: {
                accumulate(n.in[0], [&](Tensor<Real> & d) {
                    const auto & x = val(n.in[0]);
                    for (size_t i = 0; i < d.values.size(); ++i) {
                        if (x.values[i] > Real(0)) d.values[i] += g.values[i];
                    }
                });
                break;
            }
            case Op::softmax_rows: {
                accumulate(n.in[0], [&](Tensor<Real> & d) {
                    const auto & y = n.value;
                    for (int64_t r = 0; r < y.rows(); ++r) {
                        const Real * yr = y.row_ptr(r);
                        const Real * gr = g.row_ptr(r);
                        Real         dot = 0;
                        for (int64_t c = 0; c < y.cols(); ++c) dot += yr[c] * gr[c];
                        Real * dr = d.row_ptr(r);
                        for (int64_t c = 0; c < y.cols(); ++c) dr[c] += yr[c] * (gr[c] - dot);
                    }
                });
                break;
            }
            case Op::layer_norm: backward_layer_norm(n, g); break;
            case Op::embed_rows: {
                accumulate(n.in[0], [&](Tensor<Real> & d) {
                    const auto & ids = ids_[(size_t) n.aux];
                    for (size_t i = 0; i < ids.size(); ++i) {
                        Real *       dst = d.row_ptr(ids[i]);
                        const Real * src = g.row_ptr((int64_t) i);
                        for (int64_t c = 0; c < g.cols(); ++c) dst[c] += src[c];
                    }
                });
                break;
            }
            case Op::concat_rows: {
                int64_t at = 0;
                for (int32_t i = 0; i < n.list_len; ++i) {
                    NodeId       p     = list_pool_[(size_t)(n.list_begin + i)];
                    const int64_t rows = val(p).rows();
                    accumulate(p, [&](Tensor<Real> & d) {
                        const Real * src = g.row_ptr(at);
                        for (int64_t k = 0; k < rows * g.cols(); ++k) d.values[(size_t) k] += src[k];
                    });
                    at += rows;
                }
                break;
            }
            case Op::slice_rows: {
                accumulate(n.in[0], [&](Tensor<Real> & d) {
                    Real * dst = d.row_ptr(n.i0);
                    for (int64_t k = 0; k < n.i1 * g.cols(); ++k) dst[k] += g.values[(size_t) k];
                });
                break;
            }
            case Op::transpose: {
                accumulate(n.in[0], [&](Tensor<Real> & d) { emap(d) += emap(g).transpose(); });
                break;
            }
            case Op::cross_entropy: {
                accumulate(n.in[0], [&](Tensor<Real> & d) {
                    const auto & probs   = saved_[(size_t) n.i1];
                    const auto & targets = ids_[(size_t) n.aux];
                    int64_t      used    = 0;
                    for (int32_t t : targets) {
                        if (t != (int32_t) n.i0) used++;
                    }
                    const Real gs = g.item() / (Real) used;
                    for (int64_t r = 0; r < probs.rows(); ++r) {
                        if (targets[(size_t) r] == (int32_t) n.i0) continue;
                        const Real * pr = probs.row_ptr(r);
                        Real *       dr = d.row_ptr(r);
                        for (int64_t c = 0; c < probs.cols(); ++c) dr[c] += gs * pr[c];
                        dr[targets[(size_t) r]] -= gs;
                    }
                });
                break;
            }
            case Op::sum_all: {
                accumulate(n.in[0], [&](Tensor<Real> & d) {
                    for (Real & v : d.values) v += g.item();
                });
                break;
            }
            case Op::attention: backward_attention(n, g); break;
            case Op::constant:
            case Op::param: break;
        }
    }

    void backward_layer_norm(Node & n, const Tensor<Real> & g) {
        const auto &  x    = val(n.in[0]);
        const auto &  gain = val(n.in[1]);
        const int64_t C    = x.cols();
        const bool    need_x = needs_grad(n.in[0]);
        const bool    need_g = needs_grad(n.in[1]);
        const bool    need_b = needs_grad(n.in[2]);
        for (int64_t r = 0; r < x.rows(); ++r) {
            const Real * xr = x.row_ptr(r);
            const Real * gr = g.row_ptr(r);
            Real         mean = 0, var = 0;
            for (int64_t c = 0; c < C; ++c) mean += xr[c];
            mean /= (Real) C;
            for (int64_t c = 0; c < C; ++c) {
                Real d = xr[c] - mean;
                var += d * d;
            }
            var /= (Real) C;
            const Real inv = Real(1) / std::sqrt(var + n.r0);
            if (need_g) {
                Tensor<Real> & dg = ensure_grad(n.in[1]);
                for (int64_t c = 0; c < C; ++c) dg.values[(size_t) c] += gr[c] * (xr[c] - mean) * inv;
            }
            if (need_b) {
                Tensor<Real> & db = ensure_grad(n.in[2]);
                for (int64_t c = 0; c < C; ++c) db.values[(size_t) c] += gr[c];
            }
            if (need_x) {
                Tensor<Real> & dx = ensure_grad(n.in[0]);
                // dxhat = g * gain; dx = inv * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
                Real m1 = 0, m2 = 0;
                for (int64_t c = 0; c < C; ++c) {
                    Real xh = (xr[c] - mean) * inv;
                    Real dh = gr[c] * gain.values[(size_t) c];
                    m1 += dh;
                    m2 += dh * xh;
                }
                m1 /= (Real) C;
                m2 /= (Real) C;
                Real * dst = dx.row_ptr(r);
                for (int64_t c = 0; c < C; ++c) {
                    Real xh = (xr[c] - mean) * inv;
                    Real dh = gr[c] * gain.values[(size_t) c];
                    dst[c] += inv * (dh - m1 - xh * m2);
                }
            }
        }
    }

    void backward_attention(Node & n, const Tensor<Real> & g) {
        const auto &  vq    = val(n.in[0]);
        const auto &  vk    = val(n.in[1]);
        const auto &  vv    = val(n.in[2]);
        const auto &  probs = saved_[(size_t) n.i1];
        const int     heads = n.attn.heads;
        const int64_t Tq    = vq.rows();
        const int64_t Tkv   = vk.rows();
        const int64_t dh    = vq.cols() / heads;
        const bool need_q = needs_grad(n.in[0]);
        const bool need_k = needs_grad(n.in[1]);
        const bool need_v = needs_grad(n.in[2]);
        if (!need_q && !need_k && !need_v) return;

        auto mg = emap(g);
        auto mq = emap(vq);
        auto mk = emap(vk);
        auto mv = emap(vv);
        auto mp = emap(probs);

        EigenRowMajor<Real> dS(Tq, Tkv);
        for (int h = 0; h < heads; ++h) {
            auto gO = mg.middleCols(h * dh, dh);
            auto Ph = mp.middleRows(h * Tq, Tq);
            auto Kh = mk.middleCols(h * dh, dh);
            auto Vh = mv.middleCols(h * dh, dh);
            auto Qh = mq.middleCols(h * dh, dh);
            if (need_v) {
                Tensor<Real> & dv = ensure_grad(n.in[2]);
                emap(dv).middleCols(h * dh, dh).noalias() += Ph.transpose() * gO;
            }
            if (need_q || need_k) {
                // dS = (dP - rowsum(dP .* P)) .* P, with dP = gO . Vh^T;
                // masked entries have P == 0 and receive exactly zero.
                dS.noalias() = gO * Vh.transpose();
                for (int64_t i = 0; i < Tq; ++i) {
                    Real dot = dS.row(i).cwiseProduct(Ph.row(i)).sum();
                    dS.row(i) = (dS.row(i).array() - dot).matrix().cwiseProduct(Ph.row(i));
                }
                if (need_q) {
                    Tensor<Real> & dq = ensure_grad(n.in[0]);
                    emap(dq).middleCols(h * dh, dh).noalias() += n.r0 * (dS * Kh);
                }
                if (need_k) {
                    Tensor<Real> & dk = ensure_grad(n.in[1]);
                    emap(dk).middleCols(h * dh, dh).noalias() += n.r0 * (dS.transpose() * Qh);
                }
            }
        }
    }
};

}  // namespace peftlab
