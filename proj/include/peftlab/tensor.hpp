// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensors parameterized over element type.

#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace peftlab {

struct TensorError : std::runtime_error {
    explicit TensorError(const std::string & msg) : std::runtime_error(msg) {}
};

inline int64_t shape_numel(const std::vector<int64_t> & shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
        if (d < 0) {
            throw TensorError("negative dimension in shape");
        }
        n *= d;
    }
    return n;
}

inline std::string shape_str(const std::vector<int64_t> & shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "," : "") << shape[i];
    }
    os << "]";
    return os.str();
}

// Row-major dense tensor. Invariant: values.size() == product(shape).
// Rank 0 (empty shape) holds exactly one value and acts as a scalar.
template <typename Real>
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<Real>    values;

    Tensor() : values(1, Real(0)) {}

    explicit Tensor(std::vector<int64_t> s) : shape(std::move(s)), values((size_t) shape_numel(shape), Real(0)) {}

    Tensor(std::vector<int64_t> s, std::vector<Real> v) : shape(std::move(s)), values(std::move(v)) {
        if ((int64_t) values.size() != shape_numel(shape)) {
            throw TensorError("value count does not match shape " + shape_str(shape));
        }
    }

    static Tensor zeros(std::vector<int64_t> s) { return Tensor(std::move(s)); }

    static Tensor scalar(Real v) {
        Tensor t;
        t.values[0] = v;
        return t;
    }

    int64_t numel() const { return (int64_t) values.size(); }
    int     rank() const { return (int) shape.size(); }
    bool    is_scalar() const { return shape.empty(); }

    // Rank-2 accessors; rank-1 tensors are treated as a single row.
    int64_t rows() const {
        if (rank() == 2) return shape[0];
        if (rank() <= 1) return 1;
        throw TensorError("rows() on rank-" + std::to_string(rank()) + " tensor");
    }

    int64_t cols() const {
        if (rank() == 2) return shape[1];
        if (rank() == 1) return shape[0];
        if (rank() == 0) return 1;
        throw TensorError("cols() on rank-" + std::to_string(rank()) + " tensor");
    }

    Real & at(int64_t r, int64_t c) { return values[(size_t)(r * cols() + c)]; }
    Real   at(int64_t r, int64_t c) const { return values[(size_t)(r * cols() + c)]; }

    Real *       row_ptr(int64_t r) { return values.data() + r * cols(); }
    const Real * row_ptr(int64_t r) const { return values.data() + r * cols(); }

    Real & item() {
        if (numel() != 1) {
            throw TensorError("item() on tensor with " + std::to_string(numel()) + " values");
        }
        return values[0];
    }

    Real item() const {
        if (numel() != 1) {
            throw TensorError("item() on tensor with " + std::to_string(numel()) + " values");
        }
        return values[0];
    }

    bool same_shape(const Tensor & other) const { return shape == other.shape; }

    bool all_finite() const {
        for (Real v : values) {
            if (!std::isfinite((double) v)) return false;
        }
        return true;
    }

    void fill(Real v) { std::fill(values.begin(), values.end(), v); }
};

template <typename Real>
void check_finite(const Tensor<Real> & t, const char * where) {
    if (!t.all_finite()) {
        throw TensorError(std::string("non-finite value in ") + where);
    }
}

}  // namespace peftlab
