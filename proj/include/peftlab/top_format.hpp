// SPDX-License-Identifier: Apache-2.0
//
// Hierarchical intent/slot trees in bracketed text form, their
// semantics-only (decoupled) variant, and order-insensitive exact match.
//
// Grammar of the text form, whitespace-tokenized:
//   tree     := "[IN:LABEL" item* "]"
//   item     := "[IN:LABEL" item* "]" | "[SL:LABEL" item* "]" | word
// Labels match (IN|SL):[A-Z0-9_]+. Consecutive words coalesce into one
// Terminal node ("Harvard Square" is a single terminal). Serialization is the
// inverse, with a space before every closing bracket.

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace peftlab {

struct FormatError : std::runtime_error {
    explicit FormatError(const std::string & msg) : std::runtime_error(msg) {}
};

struct SemNode {
    enum class Kind { intent, slot, terminal };

    Kind                 kind;
    std::string          text;  // label without brackets (IN:X / SL:Y), or terminal words
    std::vector<SemNode> children;

    bool is_intent() const { return kind == Kind::intent; }
    bool is_slot() const { return kind == Kind::slot; }
    bool is_terminal() const { return kind == Kind::terminal; }

    static SemNode intent(std::string label, std::vector<SemNode> children = {});
    static SemNode slot(std::string label, std::vector<SemNode> children = {});
    static SemNode terminal(std::string words);
};

using SemTree = SemNode;

// True for IN:FOO / SL:FOO with a non-empty [A-Z0-9_]+ name.
bool is_valid_label(const std::string & label);

SemTree     parse_tree(const std::string & text);
std::string serialize_tree(const SemTree & tree);

// Drops every terminal whose parent is an intent; slot order and terminal
// content under slots are preserved.
SemTree decouple(const SemTree & tree);

// Canonical form: decoupling plus a recursive stable ordering of siblings,
// so two trees that differ only in sibling order (and intent-level wording)
// compare equal by serialization.
SemTree canonicalize(const SemTree & tree);

// Exact match up to sibling order and intent-level terminal content.
bool unordered_exact_match(const SemTree & a, const SemTree & b);

// Number of semantic (intent/slot) nodes.
int64_t semantic_node_count(const SemTree & tree);

// Depth in semantic nodes: a bare intent is 1, intent > slot is 2, ...
int64_t semantic_depth(const SemTree & tree);

std::vector<std::string> collect_labels(const SemTree & tree);  // unique, sorted

struct LengthStats {
    int64_t count  = 0;
    int64_t min    = 0;
    int64_t max    = 0;
    double  mean   = 0.0;
    int64_t median = 0;  // lower middle for even counts
};

LengthStats length_stats(const std::vector<int64_t> & lengths);

// ---- TSV datasets: domain <TAB> utterance <TAB> target ----

struct DatasetRow {
    std::string domain;
    std::string utterance;
    std::string target;
};

std::vector<DatasetRow> read_dataset_tsv(const std::string & path);
void                    write_dataset_tsv(const std::string & path, const std::vector<DatasetRow> & rows);

}  // namespace peftlab
