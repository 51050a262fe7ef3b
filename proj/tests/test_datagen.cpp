// SPDX-License-Identifier: Apache-2.0
//
// Grammar parsing and validation, depth-budgeted generation against an
// analytic depth-distribution oracle, SPIS covering samples against recount
// oracles, and the built-in food/assistant grammars.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "peftlab/datagen.hpp"

using namespace peftlab;

namespace {

const char * kToyGrammar =
    "domain toy\n"
    "max_depth 2\n"
    "root = IN:X\n"
    "intent IN:X = SL:Y\n"
    "slot SL:Y = \"alpha\" | \"beta\" *2\n";

// Exact depth distribution under the documented selection rule: alternatives
// are weight-proportional among those whose minimal completion fits the
// remaining budget. Computed by enumeration, independently of the sampler.
struct DepthOracle {
    using Dist = std::map<int64_t, double>;

    const Grammar &                g;
    std::map<std::string, int64_t> md;
    std::map<std::string, Dist>    memo;

    static constexpr int64_t kInf = 1'000'000;

    explicit DepthOracle(const Grammar & gr) : g(gr) {
        for (const auto & [label, alts] : g.intents) md[label] = kInf;
        for (const auto & [label, alts] : g.slots) md[label] = kInf;
        bool changed = true;
        while (changed) {
            changed = false;
            for (const auto & [label, alts] : g.slots) {
                int64_t best = kInf;
                for (const SlotAlt & alt : alts) {
                    int64_t cand = alt.intent_ref ? (md[alt.text] >= kInf ? kInf : 1 + md[alt.text]) : 1;
                    best         = std::min(best, cand);
                }
                if (best < md[label]) { md[label] = best; changed = true; }
            }
            for (const auto & [label, alts] : g.intents) {
                int64_t best = kInf;
                for (const IntentAlt & alt : alts) {
                    int64_t need = 1;
                    for (const GrammarItem & item : alt.items) {
                        if (item.kind != GrammarItem::Kind::slot_ref) continue;
                        need = md[item.text] >= kInf ? kInf : std::max(need, 1 + md[item.text]);
                        if (need >= kInf) break;
                    }
                    best = std::min(best, need);
                }
                if (best < md[label]) { md[label] = best; changed = true; }
            }
        }
    }

    int64_t alt_min(const IntentAlt & alt) const {
        int64_t need = 1;
        for (const GrammarItem & item : alt.items) {
            if (item.kind == GrammarItem::Kind::slot_ref) need = std::max(need, 1 + md.at(item.text));
        }
        return need;
    }

    static double cdf(const Dist & d, int64_t x) {
        double s = 0;
        for (const auto & [k, v] : d) {
            if (k <= x) s += v;
        }
        return s;
    }

    Dist intent(const std::string & label, int64_t budget) {
        std::string key = "I" + label + "@" + std::to_string(budget);
        if (auto it = memo.find(key); it != memo.end()) return it->second;
        double                         total = 0;
        std::vector<const IntentAlt *> feasible;
        for (const IntentAlt & alt : g.intents.at(label)) {
            if (alt_min(alt) <= budget) {
                feasible.push_back(&alt);
                total += (double) alt.weight;
            }
        }
        Dist out;
        for (const IntentAlt * alt : feasible) {
            double            p = (double) alt->weight / total;
            std::vector<Dist> kids;
            for (const GrammarItem & item : alt->items) {
                if (item.kind == GrammarItem::Kind::slot_ref) kids.push_back(slot(item.text, budget - 1));
            }
            if (kids.empty()) {
                out[1] += p;
                continue;
            }
            for (int64_t m = 1; m < budget; ++m) {  // depth = 1 + max(child depths)
                double at = 1, below = 1;
                for (const Dist & k : kids) {
                    at *= cdf(k, m);
                    below *= cdf(k, m - 1);
                }
                if (at - below > 0) out[1 + m] += p * (at - below);
            }
        }
        memo[key] = out;
        return out;
    }

    Dist slot(const std::string & label, int64_t budget) {
        std::string key = "S" + label + "@" + std::to_string(budget);
        if (auto it = memo.find(key); it != memo.end()) return it->second;
        double                       total = 0;
        std::vector<const SlotAlt *> feasible;
        for (const SlotAlt & alt : g.slots.at(label)) {
            if (!alt.intent_ref || 1 + md.at(alt.text) <= budget) {
                feasible.push_back(&alt);
                total += (double) alt.weight;
            }
        }
        Dist out;
        for (const SlotAlt * alt : feasible) {
            double p = (double) alt->weight / total;
            if (!alt->intent_ref) {
                out[1] += p;
                continue;
            }
            for (const auto & [d, q] : intent(alt->text, budget - 1)) out[1 + d] += p * q;
        }
        memo[key] = out;
        return out;
    }

    double expected_root_depth() {
        double total = 0;
        for (const auto & [label, w] : g.root) total += (double) w;
        double expectation = 0, mass = 0;
        for (const auto & [label, w] : g.root) {
            for (const auto & [depth, p] : intent(label, g.max_depth)) {
                expectation += ((double) w / total) * p * (double) depth;
                mass += ((double) w / total) * p;
            }
        }
        REQUIRE(mass == doctest::Approx(1.0).epsilon(1e-9));
        return expectation;
    }
};

std::set<std::string> grammar_words(const Grammar & g) {
    std::set<std::string> words;
    auto                  split_into = [&](const std::string & phrase) {
        std::string word;
        for (char c : phrase) {
            if (c == ' ') {
                if (!word.empty()) words.insert(word);
                word.clear();
            } else {
                word += c;
            }
        }
        if (!word.empty()) words.insert(word);
    };
    for (const auto & [label, alts] : g.intents) {
        for (const IntentAlt & alt : alts) {
            for (const GrammarItem & item : alt.items) {
                if (item.kind == GrammarItem::Kind::carrier) split_into(item.text);
            }
        }
    }
    for (const auto & [label, alts] : g.slots) {
        for (const SlotAlt & alt : alts) {
            if (!alt.intent_ref) split_into(alt.text);
        }
    }
    return words;
}

std::set<std::string> grammar_labels(const Grammar & g) {
    std::set<std::string> labels;
    for (const auto & [label, alts] : g.intents) labels.insert(label);
    for (const auto & [label, alts] : g.slots) labels.insert(label);
    return labels;
}

std::string tree_yield(const SemNode & node) {
    if (node.is_terminal()) return node.text;
    std::string out;
    for (const SemNode & child : node.children) {
        std::string part = tree_yield(child);
        if (part.empty()) continue;
        if (!out.empty()) out += ' ';
        out += part;
    }
    return out;
}

DatasetRow row(const std::string & target) { return DatasetRow{ "t", "u", target }; }

}  // namespace

TEST_CASE("grammar text parses into the declared structure") {
    Grammar g = parse_grammar(
        "# a comment\n"
        "domain lab\n"
        "max_depth 3\n"
        "root = IN:A *3 | IN:B\n"
        "intent IN:A = \"go\" SL:X *2 | SL:X \"now\"   # trailing comment\n"
        "intent IN:B = \"stop\"\n"
        "\n"
        "slot SL:X = \"red light\" | IN:B *4\n");

    CHECK(g.domain == "lab");
    CHECK(g.max_depth == 3);
    REQUIRE(g.root.size() == 2);
    CHECK(g.root[0].first == "IN:A");
    CHECK(g.root[0].second == 3);
    CHECK(g.root[1].second == 1);

    const auto & a = g.intents.at("IN:A");
    REQUIRE(a.size() == 2);
    CHECK(a[0].weight == 2);
    REQUIRE(a[0].items.size() == 2);
    CHECK(a[0].items[0].kind == GrammarItem::Kind::carrier);
    CHECK(a[0].items[0].text == "go");
    CHECK(a[0].items[1].kind == GrammarItem::Kind::slot_ref);
    CHECK(a[0].items[1].text == "SL:X");
    CHECK(a[1].weight == 1);

    const auto & x = g.slots.at("SL:X");
    REQUIRE(x.size() == 2);
    CHECK_FALSE(x[0].intent_ref);
    CHECK(x[0].text == "red light");
    CHECK(x[1].intent_ref);
    CHECK(x[1].text == "IN:B");
    CHECK(x[1].weight == 4);
}

TEST_CASE("malformed grammars are rejected with line context") {
    auto bad = [](const std::string & text, const char * needle) {
        CHECK_THROWS_WITH_AS(parse_grammar(text), doctest::Contains(needle), GrammarError);
    };
    std::string defs =
        "intent IN:X = SL:Y\n"
        "slot SL:Y = \"w\"\n";
    std::string ok_tail = "root = IN:X\n" + defs;

    bad("max_depth 2\nfoo bar\n" + ok_tail, "unknown directive");
    bad("max_depth 2\n" + defs, "no root line");
    bad("max_depth 2\nroot = IN:X\nroot = IN:X\n" + defs, "duplicate root");
    bad("max_depth 2\nroot = IN:X\nintent IN:X = SL:Y\nintent IN:X = SL:Y\nslot SL:Y = \"w\"\n",
        "duplicate definition");
    bad("max_depth 2\nroot = IN:X\nintent IN:X = SL:Y |\nslot SL:Y = \"w\"\n", "empty alternative");
    bad("max_depth 2\nroot = IN:X\nintent IN:X = \"a\nslot SL:Y = \"w\"\n", "unterminated quote");
    bad("max_depth 2\nroot = IN:X\nintent IN:X = SL:Y *0\nslot SL:Y = \"w\"\n", "weight must be positive");
    bad("max_depth 2\nroot = IN:X\nintent IN:X = *2\nslot SL:Y = \"w\"\n", "only a weight");
    bad("max_depth 2\nroot = IN:X\nintent IN:X = \"a\" *2 SL:Y\nslot SL:Y = \"w\"\n",
        "weight must end the alternative");
    bad("max_depth 2\nroot = IN:X\nintent IN:X = IN:X\nslot SL:Y = \"w\"\n", "quoted carriers and SL: refs");
    bad("max_depth 2\nroot = IN:X\nintent IN:X = SL:Y\nslot SL:Y = \"a\" \"b\"\n",
        "one phrase or one IN: label");
    bad("max_depth 2\nroot = IN:X\nintent foo = SL:Y\nslot SL:Y = \"w\"\n", "expected a IN: label");
    bad("max_depth 2\nroot = IN:X\nintent IN:X = SL:NOPE\nslot SL:Y = \"w\"\n", "undefined SL:NOPE");
    bad("max_depth 2\nroot = IN:NOPE\n" + defs, "undefined IN:NOPE");
    bad("max_depth 2\nroot = IN:X\nintent IN:X = \"[a]\"\nslot SL:Y = \"w\"\n", "reserved character");
    bad("max_depth 1\n" + ok_tail, "max_depth must be in");
    bad("max_depth two\n" + ok_tail, "takes an integer");

    // structural rejections
    bad("max_depth 2\nroot = IN:X\nintent IN:X = SL:Y\nintent IN:B = SL:Y\nslot SL:Y = \"w\"\n",
        "unreachable intent IN:B");
    bad("max_depth 2\nroot = IN:X\nintent IN:X = SL:Y\nslot SL:Y = \"w\"\nslot SL:Z = \"v\"\n",
        "unreachable slot SL:Z");
    bad("max_depth 2\nroot = IN:X\nintent IN:X = SL:Y\nslot SL:Y = IN:X\n", "no finite derivation");
    bad("max_depth 4\n" + ok_tail, "no derivation reaches max_depth 4");
    bad("max_depth 2\nroot = IN:X\nintent IN:X = SL:Y\nslot SL:Y = IN:Z\nintent IN:Z = SL:W\nslot SL:W = \"w\"\n",
        "cannot fit max_depth 2");
}

TEST_CASE("generate refuses an inconsistent grammar") {
    Grammar g = parse_grammar(kToyGrammar);
    g.intents["IN:ORPHAN"] = { IntentAlt{ { { GrammarItem::Kind::slot_ref, "SL:Y" } }, 1 } };
    CHECK_THROWS_WITH_AS(generate(g, 5, 0), doctest::Contains("unreachable intent"), GrammarError);
    CHECK_THROWS_AS(generate(parse_grammar(kToyGrammar), -1, 0), GrammarError);
}

TEST_CASE("minimal grammar forces the single intent-slot shape") {
    Grammar g    = parse_grammar(kToyGrammar);
    auto    rows = generate(g, 50, 9);
    REQUIRE(rows.size() == 50);
    int betas = 0;
    for (const DatasetRow & r : rows) {
        CHECK(r.domain == "toy");
        SemTree t = parse_tree(r.target);
        CHECK(t.is_intent());
        CHECK(t.text == "IN:X");
        REQUIRE(t.children.size() == 1);
        const SemNode & s = t.children[0];
        CHECK(s.is_slot());
        CHECK(s.text == "SL:Y");
        REQUIRE(s.children.size() == 1);
        CHECK(s.children[0].is_terminal());
        CHECK(r.utterance == s.children[0].text);
        CHECK(semantic_depth(t) == 2);
        betas += s.children[0].text == "beta" ? 1 : 0;
    }
    // 2:1 weights: both terminals occur, beta more often
    CHECK(betas > 25);
    CHECK(betas < 50);
}

TEST_CASE("generation is deterministic under the seed") {
    Grammar g  = default_food_grammar();
    auto    r1 = generate(g, 200, 33);
    auto    r2 = generate(g, 200, 33);
    REQUIRE(r1.size() == r2.size());
    for (size_t i = 0; i < r1.size(); ++i) {
        CHECK(r1[i].utterance == r2[i].utterance);
        CHECK(r1[i].target == r2[i].target);
    }
    auto r3 = generate(g, 200, 34);
    bool differs = false;
    for (size_t i = 0; i < r1.size(); ++i) differs |= r3[i].target != r1[i].target;
    CHECK(differs);
}

TEST_CASE("generated examples round-trip and respect the grammar") {
    Grammar g      = default_food_grammar();
    auto    labels = grammar_labels(g);
    auto    rows   = generate(g, 500, 5);

    int64_t deepest = 0;
    for (const DatasetRow & r : rows) {
        SemTree t = parse_tree(r.target);
        CHECK(serialize_tree(t) == r.target);
        CHECK_NOTHROW(decouple(t));
        CHECK(r.utterance == tree_yield(t));
        CHECK_FALSE(r.utterance.empty());
        for (const std::string & label : collect_labels(t)) CHECK(labels.count(label) == 1);
        int64_t d = semantic_depth(t);
        CHECK(d <= g.max_depth);
        deepest = std::max(deepest, d);
    }
    CHECK(deepest == g.max_depth);  // the bound is attained, not just respected
}

TEST_CASE("measured mean depth matches the analytic expectation") {
    Grammar     g = default_food_grammar();
    DepthOracle oracle(g);
    double      expected = oracle.expected_root_depth();

    auto   rows = generate(g, 10000, 17);
    double mean = 0;
    for (const DatasetRow & r : rows) mean += (double) semantic_depth(parse_tree(r.target));
    mean /= (double) rows.size();

    CHECK(std::abs(mean - expected) <= 0.5);
    CHECK(std::abs(mean - expected) <= 0.05);  // ~6 sigma of the sample mean
    CHECK(expected > 1.5);                     // sanity: the mix is not degenerate
    CHECK(expected < 3.5);
}

TEST_CASE("default grammars have the documented inventory sizes") {
    Grammar food = default_food_grammar();
    CHECK(food.domain == "food");
    CHECK(food.max_depth == 4);
    CHECK(food.intents.size() == 8);
    CHECK(food.slots.size() == 10);

    auto md = min_subtree_depths(food);
    CHECK(md.at("SL:TOPPING") == 1);
    CHECK(md.at("IN:GET_MENU") == 1);
    CHECK(md.at("IN:CUSTOM_DISH") == 1);
    CHECK(md.at("SL:DISH") == 1);
    CHECK(md.at("IN:ORDER_FOOD") == 2);

    // enough distinct utterances for a disjoint train/dev/test split
    auto distinct = dedupe_by_utterance(generate(food, 20000, 1));
    CHECK((int64_t) distinct.size() >= 2600);
}

TEST_CASE("dedupe keeps the first row per utterance") {
    std::vector<DatasetRow> rows = {
        { "d", "a", "[IN:X ]" }, { "d", "b", "[IN:Y ]" }, { "d", "a", "[IN:Z ]" }
    };
    auto out = dedupe_by_utterance(rows);
    REQUIRE(out.size() == 2);
    CHECK(out[0].target == "[IN:X ]");
    CHECK(out[1].target == "[IN:Y ]");
}

TEST_CASE("spis sampling hits the floor where the corpus permits") {
    // SL:RARE exists in only 3 rows; the floor falls back to availability
    std::vector<DatasetRow> corpus;
    for (int i = 0; i < 3; ++i) corpus.push_back(row("[IN:A [SL:RARE x ] ]"));
    for (int i = 0; i < 15; ++i) corpus.push_back(row("[IN:A [SL:COMMON y ] ]"));

    SpisResult res = spis_sample(corpus, SpisSpec{ 10, 4 });

    int64_t rare = 0, common = 0, intents = 0;
    for (const DatasetRow & r : res.rows) {
        auto labels = collect_labels(parse_tree(r.target));
        rare += std::count(labels.begin(), labels.end(), "SL:RARE");
        common += std::count(labels.begin(), labels.end(), "SL:COMMON");
        intents += std::count(labels.begin(), labels.end(), "IN:A");
    }
    CHECK(rare == 3);  // all available
    CHECK(common >= 10);
    CHECK(intents >= 10);
    REQUIRE(res.warnings.size() == 1);
    CHECK(res.warnings[0].find("SL:RARE") != std::string::npos);
    CHECK(res.warnings[0].find("only 3") != std::string::npos);
}

TEST_CASE("spis of one on disjoint single-label rows takes one each") {
    std::vector<DatasetRow> corpus = {
        row("[IN:A [SL:X a ] ]"), row("[IN:A [SL:X b ] ]"),
        row("[IN:B [SL:Y c ] ]"), row("[IN:B [SL:Y d ] ]"),
        row("[IN:C [SL:Z e ] ]"),
    };
    SpisResult res = spis_sample(corpus, SpisSpec{ 1, 0 });
    CHECK(res.rows.size() == 3);  // one per intent/slot pair
    CHECK(res.warnings.empty());
}

TEST_CASE("ten-spis on the mini-domain satisfies the recount oracle") {
    Grammar g      = default_food_grammar();
    auto    corpus = generate(g, 2000, 11);

    SpisResult res = spis_sample(corpus, SpisSpec{ 10, 3 });
    REQUIRE(!res.rows.empty());
    CHECK(res.warnings.empty());

    // recount: every label present in the corpus reaches the floor
    std::map<std::string, int64_t> available, sampled;
    for (const DatasetRow & r : corpus) {
        for (const std::string & label : collect_labels(parse_tree(r.target))) available[label]++;
    }
    for (const DatasetRow & r : res.rows) {
        for (const std::string & label : collect_labels(parse_tree(r.target))) sampled[label]++;
    }
    for (const auto & [label, avail] : available) {
        CHECK(sampled[label] >= std::min<int64_t>(10, avail));
    }

    // far smaller than the corpus, deterministic, and in corpus order
    CHECK(res.rows.size() < 200);
    SpisResult again = spis_sample(corpus, SpisSpec{ 10, 3 });
    REQUIRE(again.rows.size() == res.rows.size());
    for (size_t i = 0; i < res.rows.size(); ++i) {
        CHECK(again.rows[i].utterance == res.rows[i].utterance);
        CHECK(again.rows[i].target == res.rows[i].target);
    }
    size_t cursor = 0;
    for (const DatasetRow & r : res.rows) {
        while (cursor < corpus.size() &&
               (corpus[cursor].utterance != r.utterance || corpus[cursor].target != r.target)) {
            ++cursor;
        }
        REQUIRE(cursor < corpus.size());  // subsequence of the original order
        ++cursor;
    }

    CHECK_THROWS_WITH_AS(spis_sample({}, SpisSpec{ 10, 0 }), doctest::Contains("empty corpus"), GrammarError);
    CHECK_THROWS_AS(spis_sample(corpus, SpisSpec{ 0, 0 }), GrammarError);
}

TEST_CASE("pretrain grammar is label-disjoint and lexicon-covering") {
    Grammar food = default_food_grammar();
    Grammar pre  = default_pretrain_grammar();
    CHECK(pre.domain == "assistant");

    auto food_labels = grammar_labels(food);
    auto pre_labels  = grammar_labels(pre);
    for (const std::string & label : food_labels) CHECK(pre_labels.count(label) == 0);

    // every word a food model will see occurs in the pretraining lexicon
    auto food_words = grammar_words(food);
    auto pre_words  = grammar_words(pre);
    for (const std::string & word : food_words) {
        INFO("missing from pretrain lexicon: " << word);
        CHECK(pre_words.count(word) == 1);
    }

    // the pretrain domain also nests to the full depth
    auto    rows    = generate(pre, 1000, 23);
    int64_t deepest = 0;
    for (const DatasetRow & r : rows) deepest = std::max(deepest, semantic_depth(parse_tree(r.target)));
    CHECK(deepest == 4);
}
