// SPDX-License-Identifier: Apache-2.0
//
// Grammar-driven synthetic corpus generator for task-oriented parsing, plus
// the nSPIS few-shot sampler (at least n examples covering each intent and
// slot label).
//
// Grammar files are line-oriented plain text; '#' starts a comment:
//
//   domain food                  # dataset domain column (default "synthetic")
//   max_depth 4                  # bound on semantic_depth of generated trees
//   root = IN:A *2 | IN:B        # weighted mix of top-level intents
//   intent IN:A = "carrier words" SL:X "more" SL:Y *3 | SL:X
//   slot SL:X = "terminal phrase" *2 | IN:B
//
// Alternatives are '|'-separated; a trailing integer weight *N defaults to 1.
// Intent alternatives interleave quoted carrier phrases with slot references;
// slot alternatives are either one quoted terminal phrase or one nested
// intent label. Generation picks alternatives weight-proportionally among
// those whose minimal completion still fits the remaining depth budget, so
// every tree satisfies semantic_depth(tree) <= max_depth while the deepest
// trees reach the bound exactly.

#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "peftlab/top_format.hpp"

namespace peftlab {

struct GrammarError : std::runtime_error {
    explicit GrammarError(const std::string & msg) : std::runtime_error(msg) {}
};

// One element of an intent alternative: literal words or a slot reference.
struct GrammarItem {
    enum class Kind { carrier, slot_ref };

    Kind        kind;
    std::string text;  // carrier phrase or SL: label
};

struct IntentAlt {
    std::vector<GrammarItem> items;
    int64_t                  weight = 1;
};

// A slot produces either one terminal phrase or one nested intent.
struct SlotAlt {
    bool        intent_ref = false;
    std::string text;  // terminal phrase or IN: label
    int64_t     weight = 1;
};

struct Grammar {
    std::string domain    = "synthetic";
    int64_t     max_depth = 4;

    std::vector<std::pair<std::string, int64_t>> root;  // weighted intent labels
    std::map<std::string, std::vector<IntentAlt>> intents;
    std::map<std::string, std::vector<SlotAlt>>   slots;

    // Throws GrammarError on undefined or unreachable labels, labels with no
    // finite derivation, root intents that cannot fit the depth budget, or a
    // budget no derivation reaches.
    void validate() const;
};

Grammar parse_grammar(const std::string & text);

// Minimal achievable semantic depth of the subtree rooted at each label
// (intents and slots share the map; labels are prefixed and cannot collide).
std::map<std::string, int64_t> min_subtree_depths(const Grammar & g);

// Samples `count` examples; utterance is the terminal yield of the tree in
// order, target its serialized form. Deterministic under seed.
std::vector<DatasetRow> generate(const Grammar & g, int64_t count, uint64_t seed);

// Keeps the first row for each distinct utterance.
std::vector<DatasetRow> dedupe_by_utterance(const std::vector<DatasetRow> & rows);

struct SpisSpec {
    int64_t  spis = 10;
    uint64_t seed = 0;
};

struct SpisResult {
    std::vector<DatasetRow>  rows;      // in original corpus order
    std::vector<std::string> warnings;  // labels short of the requested floor
};

// Greedy deficit-driven covering sample: repeatedly picks the example that
// covers the most labels still below the floor, until every label present in
// the corpus has spis covering examples or is exhausted (warning). Ties break
// by a seeded shuffle, so the result is deterministic under spec.seed.
SpisResult spis_sample(const std::vector<DatasetRow> & corpus, const SpisSpec & spec);

// Built-in grammars. The food domain is the default experiment corpus; the
// assistant domain has a disjoint label set but a superset lexicon, which
// makes it suitable for pretraining the backbone a food model starts from.
const char * default_food_grammar_text();
const char * default_pretrain_grammar_text();
Grammar      default_food_grammar();
Grammar      default_pretrain_grammar();

}  // namespace peftlab
