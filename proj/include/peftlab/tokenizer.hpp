// SPDX-License-Identifier: Apache-2.0
//
// Byte-pair tokenizer with explicit word-end markers, plus an optional layer
// of special whole-label tokens for intent/slot names.
//
// A word "cats" starts as symbols  c a t s</w>  and merges grow from pair
// frequencies; "</w>" marks a word-final piece, so decoding is just surface
// concatenation with a space after each word-final piece. Special tokens map
// a whole label (brackets stripped, e.g. "IN:CREATE_REMINDER") to one id when
// it appears word-finally; the opening "[" stays a normal subword. Adding
// specials never renumbers existing ids, so a checkpoint's embedding rows
// stay aligned.

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "peftlab/tensor.hpp"

namespace peftlab {

struct TokenizerError : std::runtime_error {
    explicit TokenizerError(const std::string & msg) : std::runtime_error(msg) {}
};

struct Vocabulary {
    static constexpr int32_t pad_id = 0;
    static constexpr int32_t bos_id = 1;
    static constexpr int32_t eos_id = 2;
    static constexpr int32_t unk_id = 3;
    static constexpr int32_t reserved_count = 4;

    std::vector<std::string> surfaces;        // id -> surface; [0,4) reserved
    int32_t                  base_size = 0;   // reserved + subwords; specials start here
    std::vector<std::string> special_labels;  // bracket-stripped, id = base_size + index

    std::unordered_map<std::string, int32_t> surface_ids;  // subword surfaces
    std::unordered_map<std::string, int32_t> special_ids;

    int32_t size() const { return (int32_t) surfaces.size(); }
    bool    is_reserved(int32_t id) const { return id >= 0 && id < reserved_count; }
    bool    is_special(int32_t id) const { return id >= base_size && id < size(); }
    bool    is_base_subword(int32_t id) const { return id >= reserved_count && id < base_size; }

    const char * region(int32_t id) const {
        if (is_reserved(id)) return "reserved";
        if (is_special(id)) return "special";
        return "base";
    }

    int32_t subword_id(const std::string & surface) const {
        auto it = surface_ids.find(surface);
        return it == surface_ids.end() ? unk_id : it->second;
    }
};

struct MergeRules {
    std::vector<std::pair<std::string, std::string>> merges;  // in application priority order
};

struct Tokenizer {
    Vocabulary vocab;
    MergeRules rules;

    // Whitespace-splits, BPE-encodes each word; with use_special, a label
    // that matches the end of a word becomes a single special id (longest
    // label wins) and the remaining head characters are encoded as
    // non-final subwords.
    std::vector<int32_t> encode(const std::string & text, bool use_special) const;

    // Inverse modulo whitespace normalization; pad/bos/eos vanish, unk
    // renders as "<unk>".
    std::string decode(const std::vector<int32_t> & ids) const;
};

// Learns merges by greedy pair frequency (ties broken by lexicographically
// smaller pair). Stops when the vocabulary reaches target_size or the best
// pair occurs fewer than 2 times.
Tokenizer train_bpe(const std::vector<std::string> & corpus, int32_t target_size);

// Registers labels as special tokens, in the given order, ids starting at
// base_size. Labels may arrive with surrounding brackets; they are stored
// stripped. Base ids are untouched.
void add_special_labels(Tokenizer & tok, const std::vector<std::string> & labels);

// ---- vocab / merges files ----
//
//   vocab:  id <TAB> surface <TAB> region      (region: reserved|base|special)
//   merges: left <TAB> right                   (one rule per line, in order)

void      save_tokenizer(const Tokenizer & tok, const std::string & vocab_path, const std::string & merges_path);
Tokenizer load_tokenizer(const std::string & vocab_path, const std::string & merges_path);

// Mean of the base-subword embedding rows a label breaks into; used to
// initialize a special token's embedding row.
template <typename Real>
std::vector<Real> averaged_init(const std::string & label, const Tensor<Real> & embeddings, const Tokenizer & tok) {
    std::vector<int32_t> ids = tok.encode(label, /*use_special=*/false);
    if (ids.empty()) throw TokenizerError("label tokenizes to zero tokens: '" + label + "'");
    std::vector<Real> row((size_t) embeddings.cols(), Real(0));
    for (int32_t id : ids) {
        if ((int64_t) id >= embeddings.rows()) {
            throw TokenizerError("label subword id out of embedding range for '" + label + "'");
        }
        const Real * src = embeddings.row_ptr(id);
        for (size_t c = 0; c < row.size(); ++c) row[c] += src[c];
    }
    for (Real & v : row) v /= (Real) ids.size();
    return row;
}

// Appends one averaged-init row per special label to an embedding matrix
// that currently covers exactly the base vocabulary.
template <typename Real>
void append_special_rows(Tensor<Real> & embeddings, const Tokenizer & tok) {
    if (embeddings.rows() != tok.vocab.base_size) {
        throw TokenizerError("embedding rows " + std::to_string(embeddings.rows()) +
                             " != base vocabulary size " + std::to_string(tok.vocab.base_size));
    }
    const int64_t cols = embeddings.cols();
    for (const std::string & label : tok.vocab.special_labels) {
        std::vector<Real> row = averaged_init(label, embeddings, tok);
        embeddings.values.insert(embeddings.values.end(), row.begin(), row.end());
        embeddings.shape[0] += 1;
        (void) cols;
    }
}

}  // namespace peftlab
