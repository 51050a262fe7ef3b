// SPDX-License-Identifier: Apache-2.0
//
// Named parameter storage with per-parameter and per-row trainability masks,
// plus a little-endian binary checkpoint format.

#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "peftlab/tape.hpp"
#include "peftlab/tensor.hpp"

namespace peftlab {

struct StoreError : std::runtime_error {
    explicit StoreError(const std::string & msg) : std::runtime_error(msg) {}
};

// Ordered by name so that every iteration order (optimizer updates, gradient
// collection, checkpoint layout) is deterministic.
template <typename Real>
class ParamStore {
  public:
    struct Entry {
        Tensor<Real>         tensor;
        bool                 trainable = false;
        std::vector<uint8_t> row_mask;  // empty, or one byte per row: 1 = trainable row
    };

    void add(const std::string & name, Tensor<Real> t, bool trainable = false) {
        if (entries_.count(name)) throw StoreError("duplicate parameter: " + name);
        Entry e;
        e.tensor    = std::move(t);
        e.trainable = trainable;
        entries_.emplace(name, std::move(e));
    }

    bool has(const std::string & name) const { return entries_.count(name) != 0; }

    Tensor<Real> & tensor(const std::string & name) { return entry(name).tensor; }
    const Tensor<Real> & tensor(const std::string & name) const { return entry(name).tensor; }

    bool trainable(const std::string & name) const { return entry(name).trainable; }

    void set_trainable(const std::string & name, bool v) { entry(name).trainable = v; }

    void freeze_all() {
        for (auto & [name, e] : entries_) {
            e.trainable = false;
            e.row_mask.clear();
        }
    }

    // Marks a 2-D parameter partially trainable: rows with mask 1 receive
    // gradients, every other row is frozen.
    void set_row_mask(const std::string & name, std::vector<uint8_t> mask) {
        Entry & e = entry(name);
        if (e.tensor.rank() != 2) throw StoreError("row mask on non-matrix parameter " + name);
        if ((int64_t) mask.size() != e.tensor.rows()) {
            throw StoreError("row mask size " + std::to_string(mask.size()) + " != rows for " + name);
        }
        e.row_mask = std::move(mask);
    }

    const std::vector<uint8_t> & row_mask(const std::string & name) const { return entry(name).row_mask; }
    bool has_row_mask(const std::string & name) const { return !entry(name).row_mask.empty(); }

    // A parameter participates in backward if fully trainable or row-masked.
    bool requires_grad(const std::string & name) const {
        const Entry & e = entry(name);
        return e.trainable || !e.row_mask.empty();
    }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        out.reserve(entries_.size());
        for (const auto & [name, e] : entries_) out.push_back(name);
        return out;
    }

    std::vector<std::string> grad_param_names() const {
        std::vector<std::string> out;
        for (const auto & [name, e] : entries_) {
            if (e.trainable || !e.row_mask.empty()) out.push_back(name);
        }
        return out;
    }

    int64_t total_params() const {
        int64_t n = 0;
        for (const auto & [name, e] : entries_) n += e.tensor.numel();
        return n;
    }

    // Trainable scalar count; a row-masked matrix contributes rows*cols only
    // for rows whose mask byte is set.
    int64_t trainable_params() const {
        int64_t n = 0;
        for (const auto & [name, e] : entries_) {
            if (!e.row_mask.empty()) {
                int64_t rows = 0;
                for (uint8_t m : e.row_mask) rows += m ? 1 : 0;
                n += rows * e.tensor.cols();
            } else if (e.trainable) {
                n += e.tensor.numel();
            }
        }
        return n;
    }

    const std::map<std::string, Entry> & entries() const { return entries_; }

    // Binds a parameter into a tape; repeated binds return the same node.
    NodeId bind(Tape<Real> & tape, const std::string & name) const {
        const Entry & e = entry(name);
        return tape.param(name, &e.tensor, e.trainable || !e.row_mask.empty());
    }

    bool values_equal(const ParamStore & other) const {
        if (entries_.size() != other.entries_.size()) return false;
        auto it = other.entries_.begin();
        for (const auto & [name, e] : entries_) {
            if (it->first != name) return false;
            if (e.tensor.shape != it->second.tensor.shape) return false;
            if (std::memcmp(e.tensor.values.data(), it->second.tensor.values.data(),
                            e.tensor.values.size() * sizeof(Real)) != 0) {
                return false;
            }
            ++it;
        }
        return true;
    }

  private:
    std::map<std::string, Entry> entries_;

    Entry & entry(const std::string & name) {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw StoreError("unknown parameter: " + name);
        return it->second;
    }

    const Entry & entry(const std::string & name) const {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw StoreError("unknown parameter: " + name);
        return it->second;
    }
};

// name -> gradient tensor, shape-aligned with the store entry.
template <typename Real>
using GradientMap = std::map<std::string, Tensor<Real>>;

// Collects parameter gradients after backward(). Only parameters that
// require grad appear; frozen parameters are verified to have no gradient
// buffer. Rows excluded by a row mask are forced to exactly zero, and the
// result is checked for non-finite values.
template <typename Real>
GradientMap<Real> collect_gradients(Tape<Real> & tape, const ParamStore<Real> & store) {
    GradientMap<Real> grads;
    for (const auto & [name, id] : tape.param_nodes()) {
        if (!store.has(name)) continue;
        if (!store.requires_grad(name)) {
            if (tape.grad_ptr(id) != nullptr) {
                throw StoreError("frozen parameter received a gradient buffer: " + name);
            }
            continue;
        }
        Tensor<Real> g = tape.take_param_grad(id);
        if (store.has_row_mask(name)) {
            const auto & mask = store.row_mask(name);
            for (int64_t r = 0; r < g.rows(); ++r) {
                if (!mask[(size_t) r]) {
                    std::fill(g.row_ptr(r), g.row_ptr(r) + g.cols(), Real(0));
                }
            }
        }
        if (!g.all_finite()) throw StoreError("non-finite gradient for " + name);
        grads.emplace(name, std::move(g));
    }
    return grads;
}

// ---- checkpoint format ----
//
//   magic "PLCK" | u32 version=1 | u64 entry count
//   per entry: u32 name length | name bytes | u8 dtype (4=f32, 8=f64)
//              u32 rank | u64 dims... | little-endian values
//
// Masks and optimizer state are not part of a checkpoint; they belong to the
// run configuration that produced it.

namespace detail {

inline void write_bytes(std::ofstream & os, const void * p, size_t n) {
    os.write((const char *) p, (std::streamsize) n);
}

inline void read_bytes(std::ifstream & is, void * p, size_t n) {
    is.read((char *) p, (std::streamsize) n);
    if (!is) throw StoreError("checkpoint truncated");
}

}  // namespace detail

template <typename Real>
void save_checkpoint(const ParamStore<Real> & store, const std::string & path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw StoreError("cannot write checkpoint: " + path);
    os.write("PLCK", 4);
    uint32_t version = 1;
    uint64_t count   = store.entries().size();
    detail::write_bytes(os, &version, 4);
    detail::write_bytes(os, &count, 8);
    for (const auto & [name, e] : store.entries()) {
        uint32_t len = (uint32_t) name.size();
        detail::write_bytes(os, &len, 4);
        detail::write_bytes(os, name.data(), len);
        uint8_t dtype = (uint8_t) sizeof(Real);
        detail::write_bytes(os, &dtype, 1);
        uint32_t rank = (uint32_t) e.tensor.shape.size();
        detail::write_bytes(os, &rank, 4);
        for (int64_t d : e.tensor.shape) {
            uint64_t ud = (uint64_t) d;
            detail::write_bytes(os, &ud, 8);
        }
        detail::write_bytes(os, e.tensor.values.data(), e.tensor.values.size() * sizeof(Real));
    }
    if (!os) throw StoreError("failed writing checkpoint: " + path);
}

inline int checkpoint_dtype(const std::string & path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw StoreError("cannot read checkpoint: " + path);
    char magic[4];
    detail::read_bytes(is, magic, 4);
    if (std::memcmp(magic, "PLCK", 4) != 0) throw StoreError("bad checkpoint magic in " + path);
    uint32_t version;
    uint64_t count;
    detail::read_bytes(is, &version, 4);
    detail::read_bytes(is, &count, 8);
    if (version != 1) throw StoreError("unsupported checkpoint version " + std::to_string(version));
    if (count == 0) throw StoreError("empty checkpoint: " + path);
    uint32_t len;
    detail::read_bytes(is, &len, 4);
    std::string name(len, '\0');
    detail::read_bytes(is, name.data(), len);
    uint8_t dtype;
    detail::read_bytes(is, &dtype, 1);
    return (int) dtype;
}

template <typename Real>
ParamStore<Real> load_checkpoint(const std::string & path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw StoreError("cannot read checkpoint: " + path);
    char magic[4];
    detail::read_bytes(is, magic, 4);
    if (std::memcmp(magic, "PLCK", 4) != 0) throw StoreError("bad checkpoint magic in " + path);
    uint32_t version;
    uint64_t count;
    detail::read_bytes(is, &version, 4);
    detail::read_bytes(is, &count, 8);
    if (version != 1) throw StoreError("unsupported checkpoint version " + std::to_string(version));
    ParamStore<Real> store;
    for (uint64_t i = 0; i < count; ++i) {
        uint32_t len;
        detail::read_bytes(is, &len, 4);
        std::string name(len, '\0');
        detail::read_bytes(is, name.data(), len);
        uint8_t dtype;
        detail::read_bytes(is, &dtype, 1);
        if (dtype != sizeof(Real)) {
            throw StoreError("checkpoint dtype is " + std::to_string((int) dtype * 8) + "-bit, expected " +
                             std::to_string(sizeof(Real) * 8) + "-bit: " + path);
        }
        uint32_t rank;
        detail::read_bytes(is, &rank, 4);
        std::vector<int64_t> shape(rank);
        for (uint32_t d = 0; d < rank; ++d) {
            uint64_t ud;
            detail::read_bytes(is, &ud, 8);
            shape[d] = (int64_t) ud;
        }
        Tensor<Real> t(shape);
        detail::read_bytes(is, t.values.data(), t.values.size() * sizeof(Real));
        store.add(name, std::move(t));
    }
    return store;
}

}  // namespace peftlab
