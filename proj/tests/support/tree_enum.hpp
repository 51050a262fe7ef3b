// SPDX-License-Identifier: Apache-2.0
//
// Exhaustive enumeration of small intent/slot trees for cross-checking the
// order-insensitive matcher against the brute-force oracle.

#pragma once

#include <string>
#include <vector>

#include "peftlab/top_format.hpp"

namespace peftlab::testing {

struct TreeEnumSpec {
    std::vector<std::string> names        = { "A", "B", "C" };  // label alphabet (used for IN: and SL:)
    int                      max_semantic = 4;                  // total intent+slot nodes
    int                      max_depth    = 3;                  // semantic nesting depth
    int                      max_children = 4;                  // semantic children per node
    bool                     optional_terminal = true;          // each semantic node may carry one terminal "w"
};

namespace detail {

// All trees rooted at `kind` using exactly `nodes` semantic nodes and depth
// (in semantic levels) at most `depth`.
inline void enum_kind(const TreeEnumSpec & spec, SemNode::Kind kind, int nodes, int depth,
                      std::vector<SemTree> & out);

// All ordered combinations of `count` semantic children of kind `kind`
// spending exactly `nodes` semantic nodes in total.
inline void enum_child_sets(const TreeEnumSpec & spec, SemNode::Kind kind, int count, int nodes, int depth,
                            std::vector<std::vector<SemTree>> & out) {
    if (count == 0) {
        if (nodes == 0) out.push_back({});
        return;
    }
    for (int first = 1; first <= nodes - (count - 1); ++first) {
        std::vector<SemTree> heads;
        enum_kind(spec, kind, first, depth, heads);
        std::vector<std::vector<SemTree>> tails;
        enum_child_sets(spec, kind, count - 1, nodes - first, depth, tails);
        for (const SemTree & h : heads) {
            for (const std::vector<SemTree> & t : tails) {
                std::vector<SemTree> combo;
                combo.push_back(h);
                combo.insert(combo.end(), t.begin(), t.end());
                out.push_back(std::move(combo));
            }
        }
    }
}

inline void enum_kind(const TreeEnumSpec & spec, SemNode::Kind kind, int nodes, int depth,
                      std::vector<SemTree> & out) {
    if (nodes < 1 || depth < 1) return;
    SemNode::Kind child_kind = kind == SemNode::Kind::intent ? SemNode::Kind::slot : SemNode::Kind::intent;
    for (const std::string & name : spec.names) {
        std::string label = (kind == SemNode::Kind::intent ? "IN:" : "SL:") + name;
        for (int kids = 0; kids <= spec.max_children && kids <= nodes - 1; ++kids) {
            std::vector<std::vector<SemTree>> sets;
            enum_child_sets(spec, child_kind, kids, nodes - 1, depth - 1, sets);
            for (const std::vector<SemTree> & children : sets) {
                SemNode plain{ kind, label, children };
                out.push_back(plain);
                if (spec.optional_terminal) {
                    SemNode with_term{ kind, label, {} };
                    with_term.children.push_back(SemNode::terminal("w"));
                    with_term.children.insert(with_term.children.end(), children.begin(), children.end());
                    out.push_back(std::move(with_term));
                }
            }
        }
    }
}

}  // namespace detail

inline std::vector<SemTree> enumerate_trees(const TreeEnumSpec & spec) {
    std::vector<SemTree> out;
    for (int nodes = 1; nodes <= spec.max_semantic; ++nodes) {
        detail::enum_kind(spec, SemNode::Kind::intent, nodes, spec.max_depth, out);
    }
    return out;
}

}  // namespace peftlab::testing
