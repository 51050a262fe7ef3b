// SPDX-License-Identifier: Apache-2.0
//
// Brute-force order-insensitive tree match: strips intent-level terminals,
// then tries every permutation of child lists. Deliberately independent of
// the library's canonicalization so the two can cross-check each other.

#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include "peftlab/top_format.hpp"

namespace peftlab::testing {

inline SemTree oracle_strip(const SemTree & t) {
    SemNode out{ t.kind, t.text, {} };
    for (const SemNode & c : t.children) {
        if (c.is_terminal()) {
            if (t.is_slot()) out.children.push_back(c);
        } else {
            out.children.push_back(oracle_strip(c));
        }
    }
    return out;
}

inline bool oracle_eq_stripped(const SemTree & a, const SemTree & b) {
    if (a.kind != b.kind || a.text != b.text) return false;
    if (a.children.size() != b.children.size()) return false;
    const size_t n = a.children.size();
    if (n == 0) return true;
    std::vector<size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    // sorted so next_permutation walks every arrangement exactly once
    do {
        bool all = true;
        for (size_t i = 0; i < n; ++i) {
            if (!oracle_eq_stripped(a.children[i], b.children[perm[i]])) {
                all = false;
                break;
            }
        }
        if (all) return true;
    } while (std::next_permutation(perm.begin(), perm.end()));
    return false;
}

inline bool oracle_unordered_match(const SemTree & a, const SemTree & b) {
    return oracle_eq_stripped(oracle_strip(a), oracle_strip(b));
}

}  // namespace peftlab::testing
