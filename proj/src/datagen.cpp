// SPDX-License-Identifier: Apache-2.0
//
// Grammar parsing, depth-budgeted sampling, and the SPIS covering sampler.

#include "peftlab/datagen.hpp"

#include <algorithm>
#include <set>

#include "peftlab/rng.hpp"

namespace peftlab {

namespace {

constexpr int64_t kInfDepth = 1'000'000;

[[noreturn]] void fail(size_t line_no, const std::string & msg) {
    throw GrammarError("grammar line " + std::to_string(line_no) + ": " + msg);
}

struct Token {
    enum class Kind { word, phrase, pipe };

    Kind        kind;
    std::string text;
};

std::string trim(const std::string & s) {
    size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

void check_phrase(size_t line_no, const std::string & p) {
    if (trim(p).empty() || trim(p) != p) fail(line_no, "phrase must be non-empty without edge spaces");
    for (char c : p) {
        if (c == '[' || c == ']' || c == '|' || c == '"' || c == '\t') {
            fail(line_no, "phrase contains reserved character: " + p);
        }
    }
}

std::vector<Token> lex_rhs(size_t line_no, const std::string & rhs) {
    std::vector<Token> out;
    size_t             i = 0;
    while (i < rhs.size()) {
        char c = rhs[i];
        if (c == ' ' || c == '\t') {
            ++i;
        } else if (c == '|') {
            out.push_back({ Token::Kind::pipe, "|" });
            ++i;
        } else if (c == '"') {
            size_t close = rhs.find('"', i + 1);
            if (close == std::string::npos) fail(line_no, "unterminated quote");
            std::string phrase = rhs.substr(i + 1, close - i - 1);
            check_phrase(line_no, phrase);
            out.push_back({ Token::Kind::phrase, phrase });
            i = close + 1;
        } else {
            size_t j = i;
            while (j < rhs.size() && rhs[j] != ' ' && rhs[j] != '\t' && rhs[j] != '|' && rhs[j] != '"') ++j;
            out.push_back({ Token::Kind::word, rhs.substr(i, j - i) });
            i = j;
        }
    }
    return out;
}

// Splits on pipes; every group must be non-empty.
std::vector<std::vector<Token>> alternative_groups(size_t line_no, const std::vector<Token> & tokens) {
    std::vector<std::vector<Token>> groups(1);
    for (const Token & t : tokens) {
        if (t.kind == Token::Kind::pipe) {
            groups.emplace_back();
        } else {
            groups.back().push_back(t);
        }
    }
    for (const auto & g : groups) {
        if (g.empty()) fail(line_no, "empty alternative");
    }
    return groups;
}

// Pops a trailing "*N" weight token; weight defaults to 1.
int64_t take_weight(size_t line_no, std::vector<Token> & group) {
    if (group.empty() || group.back().kind != Token::Kind::word || group.back().text[0] != '*') return 1;
    const std::string & w = group.back().text;
    int64_t             value = 0;
    if (w.size() < 2) fail(line_no, "malformed weight: " + w);
    for (size_t i = 1; i < w.size(); ++i) {
        if (w[i] < '0' || w[i] > '9') fail(line_no, "malformed weight: " + w);
        value = value * 10 + (w[i] - '0');
    }
    if (value < 1) fail(line_no, "weight must be positive: " + w);
    group.pop_back();
    if (group.empty()) fail(line_no, "alternative has only a weight");
    return value;
}

void check_label(size_t line_no, const std::string & label, const char * kind_prefix) {
    if (!is_valid_label(label) || label.rfind(kind_prefix, 0) != 0) {
        fail(line_no, std::string("expected a ") + kind_prefix + " label, got: " + label);
    }
}

bool has_weight_mid(const std::vector<Token> & group) {
    for (size_t i = 0; i + 1 < group.size(); ++i) {
        if (group[i].kind == Token::Kind::word && group[i].text[0] == '*') return true;
    }
    return false;
}

}  // namespace

Grammar parse_grammar(const std::string & text) {
    Grammar g;
    bool    saw_root = false;

    size_t pos = 0, line_no = 0;
    while (pos <= text.size()) {
        size_t      nl   = text.find('\n', pos);
        std::string line = text.substr(pos, nl == std::string::npos ? std::string::npos : nl - pos);
        pos              = nl == std::string::npos ? text.size() + 1 : nl + 1;
        ++line_no;

        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;

        size_t      sp      = line.find_first_of(" \t");
        std::string keyword = line.substr(0, sp);
        std::string rest    = sp == std::string::npos ? "" : trim(line.substr(sp + 1));

        if (keyword == "domain") {
            if (rest.empty() || rest.find_first_of(" \t") != std::string::npos) {
                fail(line_no, "domain takes one word");
            }
            g.domain = rest;
        } else if (keyword == "max_depth") {
            try {
                size_t used = 0;
                g.max_depth = std::stoll(rest, &used);
                if (used != rest.size()) fail(line_no, "max_depth takes an integer");
            } catch (const GrammarError &) {
                throw;
            } catch (const std::exception &) { fail(line_no, "max_depth takes an integer"); }
        } else if (keyword == "root") {
            if (saw_root) fail(line_no, "duplicate root");
            saw_root = true;
            if (rest.empty() || rest[0] != '=') fail(line_no, "root syntax: root = IN:A | IN:B");
            auto groups = alternative_groups(line_no, lex_rhs(line_no, rest.substr(1)));
            for (auto & group : groups) {
                int64_t w = take_weight(line_no, group);
                if (group.size() != 1 || group[0].kind != Token::Kind::word) {
                    fail(line_no, "each root alternative is one intent label");
                }
                check_label(line_no, group[0].text, "IN:");
                g.root.emplace_back(group[0].text, w);
            }
        } else if (keyword == "intent" || keyword == "slot") {
            size_t eq = rest.find('=');
            if (eq == std::string::npos) fail(line_no, keyword + " syntax: " + keyword + " LABEL = ...");
            std::string label = trim(rest.substr(0, eq));
            check_label(line_no, label, keyword == "intent" ? "IN:" : "SL:");
            auto groups = alternative_groups(line_no, lex_rhs(line_no, rest.substr(eq + 1)));

            if (keyword == "intent") {
                if (g.intents.count(label)) fail(line_no, "duplicate definition of " + label);
                std::vector<IntentAlt> alts;
                for (auto & group : groups) {
                    if (has_weight_mid(group)) fail(line_no, "weight must end the alternative");
                    IntentAlt alt;
                    alt.weight = take_weight(line_no, group);
                    for (const Token & t : group) {
                        if (t.kind == Token::Kind::phrase) {
                            alt.items.push_back({ GrammarItem::Kind::carrier, t.text });
                        } else if (t.text.rfind("SL:", 0) == 0) {
                            check_label(line_no, t.text, "SL:");
                            alt.items.push_back({ GrammarItem::Kind::slot_ref, t.text });
                        } else {
                            fail(line_no, "intent alternatives hold quoted carriers and SL: refs, got: " + t.text);
                        }
                    }
                    alts.push_back(std::move(alt));
                }
                g.intents.emplace(label, std::move(alts));
            } else {
                if (g.slots.count(label)) fail(line_no, "duplicate definition of " + label);
                std::vector<SlotAlt> alts;
                for (auto & group : groups) {
                    if (has_weight_mid(group)) fail(line_no, "weight must end the alternative");
                    SlotAlt alt;
                    alt.weight = take_weight(line_no, group);
                    if (group.size() != 1) {
                        fail(line_no, "slot alternatives are one phrase or one IN: label");
                    }
                    if (group[0].kind == Token::Kind::phrase) {
                        alt.text = group[0].text;
                    } else {
                        check_label(line_no, group[0].text, "IN:");
                        alt.intent_ref = true;
                        alt.text       = group[0].text;
                    }
                    alts.push_back(std::move(alt));
                }
                g.slots.emplace(label, std::move(alts));
            }
        } else {
            fail(line_no, "unknown directive: " + keyword);
        }
    }

    if (!saw_root) throw GrammarError("grammar has no root line");
    g.validate();
    return g;
}

std::map<std::string, int64_t> min_subtree_depths(const Grammar & g) {
    std::map<std::string, int64_t> md;
    for (const auto & [label, alts] : g.intents) md[label] = kInfDepth;
    for (const auto & [label, alts] : g.slots) md[label] = kInfDepth;

    bool changed = true;
    while (changed) {
        changed = false;
        for (const auto & [label, alts] : g.slots) {
            int64_t best = kInfDepth;
            for (const SlotAlt & alt : alts) {
                int64_t cand = alt.intent_ref
                                   ? (md.count(alt.text) && md[alt.text] < kInfDepth ? 1 + md[alt.text] : kInfDepth)
                                   : 1;
                best = std::min(best, cand);
            }
            if (best < md[label]) { md[label] = best; changed = true; }
        }
        for (const auto & [label, alts] : g.intents) {
            int64_t best = kInfDepth;
            for (const IntentAlt & alt : alts) {
                int64_t need = 1;
                for (const GrammarItem & item : alt.items) {
                    if (item.kind != GrammarItem::Kind::slot_ref) continue;
                    int64_t child = md.count(item.text) ? md[item.text] : kInfDepth;
                    need = child >= kInfDepth ? kInfDepth : std::max(need, 1 + child);
                    if (need >= kInfDepth) break;
                }
                best = std::min(best, need);
            }
            if (best < md[label]) { md[label] = best; changed = true; }
        }
    }
    return md;
}

namespace {

int64_t alt_min_depth(const IntentAlt & alt, const std::map<std::string, int64_t> & md) {
    int64_t need = 1;
    for (const GrammarItem & item : alt.items) {
        if (item.kind != GrammarItem::Kind::slot_ref) continue;
        int64_t child = md.at(item.text);
        if (child >= kInfDepth) return kInfDepth;
        need = std::max(need, 1 + child);
    }
    return need;
}

// Deepest semantic depth achievable within `budget`, memoized per (label, budget).
struct ReachDp {
    const Grammar &                        g;
    const std::map<std::string, int64_t> & md;
    std::map<std::pair<std::string, int64_t>, int64_t> memo;

    int64_t intent(const std::string & label, int64_t budget) {
        auto key = std::make_pair("I" + label, budget);
        auto it  = memo.find(key);
        if (it != memo.end()) return it->second;
        int64_t best = 0;
        for (const IntentAlt & alt : g.intents.at(label)) {
            if (alt_min_depth(alt, md) > budget) continue;
            int64_t deepest = 1;
            for (const GrammarItem & item : alt.items) {
                if (item.kind != GrammarItem::Kind::slot_ref) continue;
                deepest = std::max(deepest, 1 + slot(item.text, budget - 1));
            }
            best = std::max(best, deepest);
        }
        memo[key] = best;
        return best;
    }

    int64_t slot(const std::string & label, int64_t budget) {
        auto key = std::make_pair("S" + label, budget);
        auto it  = memo.find(key);
        if (it != memo.end()) return it->second;
        int64_t best = 0;
        for (const SlotAlt & alt : g.slots.at(label)) {
            if (!alt.intent_ref) {
                best = std::max<int64_t>(best, 1);
            } else if (1 + md.at(alt.text) <= budget) {
                best = std::max(best, 1 + intent(alt.text, budget - 1));
            }
        }
        memo[key] = best;
        return best;
    }
};

}  // namespace

void Grammar::validate() const {
    if (max_depth < 2 || max_depth > 16) throw GrammarError("max_depth must be in [2, 16]");
    if (domain.empty() || domain.find_first_of(" \t") != std::string::npos) {
        throw GrammarError("domain must be one non-empty word");
    }
    if (root.empty()) throw GrammarError("grammar has no root intents");
    if (intents.empty() || slots.empty()) throw GrammarError("grammar needs at least one intent and one slot");

    auto check_ref = [&](const std::string & owner, const std::string & label, bool want_intent) {
        bool ok = want_intent ? intents.count(label) > 0 : slots.count(label) > 0;
        if (!ok) throw GrammarError(owner + " references undefined " + label);
    };
    for (const auto & [label, weight] : root) {
        check_ref("root", label, true);
        if (weight < 1) throw GrammarError("root weight must be positive for " + label);
    }
    for (const auto & [label, alts] : intents) {
        if (!is_valid_label(label) || label.rfind("IN:", 0) != 0) throw GrammarError("bad intent label " + label);
        if (alts.empty()) throw GrammarError(label + " has no alternatives");
        for (const IntentAlt & alt : alts) {
            if (alt.weight < 1) throw GrammarError(label + " has a non-positive weight");
            if (alt.items.empty()) throw GrammarError(label + " has an empty alternative");
            for (const GrammarItem & item : alt.items) {
                if (item.kind == GrammarItem::Kind::slot_ref) check_ref(label, item.text, false);
            }
        }
    }
    for (const auto & [label, alts] : slots) {
        if (!is_valid_label(label) || label.rfind("SL:", 0) != 0) throw GrammarError("bad slot label " + label);
        if (alts.empty()) throw GrammarError(label + " has no alternatives");
        for (const SlotAlt & alt : alts) {
            if (alt.weight < 1) throw GrammarError(label + " has a non-positive weight");
            if (alt.intent_ref) check_ref(label, alt.text, true);
            else if (alt.text.empty()) throw GrammarError(label + " has an empty terminal");
        }
    }

    // reachability from the root mix
    std::set<std::string> seen;
    std::vector<std::string> queue;
    for (const auto & [label, weight] : root) {
        if (seen.insert(label).second) queue.push_back(label);
    }
    while (!queue.empty()) {
        std::string label = queue.back();
        queue.pop_back();
        if (label.rfind("IN:", 0) == 0) {
            for (const IntentAlt & alt : intents.at(label)) {
                for (const GrammarItem & item : alt.items) {
                    if (item.kind == GrammarItem::Kind::slot_ref && seen.insert(item.text).second) {
                        queue.push_back(item.text);
                    }
                }
            }
        } else {
            for (const SlotAlt & alt : slots.at(label)) {
                if (alt.intent_ref && seen.insert(alt.text).second) queue.push_back(alt.text);
            }
        }
    }
    for (const auto & [label, alts] : intents) {
        if (!seen.count(label)) throw GrammarError("unreachable intent " + label);
    }
    for (const auto & [label, alts] : slots) {
        if (!seen.count(label)) throw GrammarError("unreachable slot " + label);
    }

    auto md = min_subtree_depths(*this);
    for (const auto & [label, depth] : md) {
        if (depth >= kInfDepth) throw GrammarError("no finite derivation for " + label);
    }
    ReachDp dp{ *this, md, {} };
    int64_t deepest = 0;
    for (const auto & [label, weight] : root) {
        if (md.at(label) > max_depth) {
            throw GrammarError("root intent " + label + " cannot fit max_depth " + std::to_string(max_depth));
        }
        deepest = std::max(deepest, dp.intent(label, max_depth));
    }
    if (deepest != max_depth) {
        throw GrammarError("no derivation reaches max_depth " + std::to_string(max_depth));
    }
}

namespace {

struct Sampler {
    const Grammar &                        g;
    const std::map<std::string, int64_t> & md;
    Rng &                                  rng;

    SemNode intent(const std::string & label, int64_t budget) {
        const auto &         alts = g.intents.at(label);
        std::vector<size_t>  feasible;
        std::vector<int64_t> weights;
        for (size_t i = 0; i < alts.size(); ++i) {
            if (alt_min_depth(alts[i], md) <= budget) {
                feasible.push_back(i);
                weights.push_back(alts[i].weight);
            }
        }
        const IntentAlt &    alt = alts[feasible[rng.next_weighted(weights)]];
        std::vector<SemNode> children;
        for (const GrammarItem & item : alt.items) {
            if (item.kind == GrammarItem::Kind::carrier) {
                children.push_back(SemNode::terminal(item.text));
            } else {
                children.push_back(slot(item.text, budget - 1));
            }
        }
        return SemNode::intent(label, std::move(children));
    }

    SemNode slot(const std::string & label, int64_t budget) {
        const auto &         alts = g.slots.at(label);
        std::vector<size_t>  feasible;
        std::vector<int64_t> weights;
        for (size_t i = 0; i < alts.size(); ++i) {
            if (!alts[i].intent_ref || 1 + md.at(alts[i].text) <= budget) {
                feasible.push_back(i);
                weights.push_back(alts[i].weight);
            }
        }
        const SlotAlt & alt = alts[feasible[rng.next_weighted(weights)]];
        if (!alt.intent_ref) {
            return SemNode::slot(label, { SemNode::terminal(alt.text) });
        }
        return SemNode::slot(label, { intent(alt.text, budget - 1) });
    }
};

void collect_yield(const SemNode & node, std::string & out) {
    if (node.is_terminal()) {
        if (!out.empty()) out += ' ';
        out += node.text;
        return;
    }
    for (const SemNode & child : node.children) collect_yield(child, out);
}

}  // namespace

std::vector<DatasetRow> generate(const Grammar & g, int64_t count, uint64_t seed) {
    if (count < 0) throw GrammarError("generate: negative count");
    g.validate();
    auto md = min_subtree_depths(g);

    std::vector<int64_t> root_weights;
    for (const auto & [label, weight] : g.root) root_weights.push_back(weight);

    Rng                     rng(seed);
    Sampler                 sampler{ g, md, rng };
    std::vector<DatasetRow> rows;
    rows.reserve((size_t) count);
    for (int64_t i = 0; i < count; ++i) {
        const std::string & label = g.root[rng.next_weighted(root_weights)].first;
        SemNode             tree  = sampler.intent(label, g.max_depth);
        std::string         utterance;
        collect_yield(tree, utterance);
        rows.push_back(DatasetRow{ g.domain, std::move(utterance), serialize_tree(tree) });
    }
    return rows;
}

std::vector<DatasetRow> dedupe_by_utterance(const std::vector<DatasetRow> & rows) {
    std::set<std::string>   seen;
    std::vector<DatasetRow> out;
    for (const DatasetRow & row : rows) {
        if (seen.insert(row.utterance).second) out.push_back(row);
    }
    return out;
}

SpisResult spis_sample(const std::vector<DatasetRow> & corpus, const SpisSpec & spec) {
    if (corpus.empty()) throw GrammarError("spis_sample: empty corpus");
    if (spec.spis < 1) throw GrammarError("spis_sample: spis must be positive");

    const size_t                          n = corpus.size();
    std::vector<std::vector<std::string>> row_labels(n);
    std::map<std::string, int64_t>        available;  // rows containing each label
    for (size_t i = 0; i < n; ++i) {
        row_labels[i] = collect_labels(parse_tree(corpus[i].target));
        for (const std::string & label : row_labels[i]) available[label]++;
    }

    std::map<std::string, int64_t> need;
    for (const auto & [label, count] : available) need[label] = spec.spis;

    // seeded shuffle fixes the scan order used to break gain ties
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(spec.seed);
    rng.shuffle(order);

    std::vector<char> picked(n, 0);
    while (true) {
        int64_t best_gain = 0;
        size_t  best_idx  = n;
        for (size_t idx : order) {
            if (picked[idx]) continue;
            int64_t gain = 0;
            for (const std::string & label : row_labels[idx]) {
                if (need[label] > 0) ++gain;
            }
            if (gain > best_gain) {
                best_gain = gain;
                best_idx  = idx;
            }
        }
        if (best_gain == 0) break;
        picked[best_idx] = 1;
        for (const std::string & label : row_labels[best_idx]) {
            if (need[label] > 0) --need[label];
        }
    }

    SpisResult result;
    for (size_t i = 0; i < n; ++i) {
        if (picked[i]) result.rows.push_back(corpus[i]);
    }
    for (const auto & [label, missing] : need) {
        if (missing > 0) {
            result.warnings.push_back(label + " appears in only " + std::to_string(available[label]) +
                                      " examples; requested " + std::to_string(spec.spis) +
                                      ", included all of them");
        }
    }
    return result;
}

const char * default_food_grammar_text() {
    return R"(# Mini food-ordering domain: 8 intents, 10 slots, nesting to semantic depth 4.
domain food
max_depth 4

root = IN:ORDER_FOOD *4 | IN:ORDER_DRINK *2 | IN:GET_MENU | IN:GET_HOURS | IN:CANCEL_ORDER | IN:UPDATE_ORDER

intent IN:ORDER_FOOD = "i want" SL:QUANTITY SL:DISH *2 | "order" SL:DISH *2 | "get" SL:DISH "for" SL:RECIPIENT | SL:QUANTITY SL:DISH "please" | "order" SL:DISH "and" SL:DRINK *2 | "get" SL:QUANTITY SL:DISH "with" SL:TOPPING | SL:RECIPIENT "wants" SL:QUANTITY SL:DISH | "order" SL:DISH "with" SL:TOPPING "for" SL:RECIPIENT
intent IN:ORDER_DRINK = "i want" SL:DRINK | SL:DRINK "please" | "get" SL:SIZE SL:DRINK *2 | "order" SL:QUANTITY SL:DRINK
intent IN:GET_MENU = "show me the menu" | "what do you serve" | "menu for" SL:PLACE *2 | "what do you serve at" SL:PLACE | "menu for" SL:PLACE "at" SL:TIME *2
intent IN:GET_HOURS = "when are you open" | "opening hours" | "hours for" SL:PLACE *2 | "opening hours for" SL:PLACE "on" SL:TIME *2
intent IN:CANCEL_ORDER = "cancel" SL:ORDER_REF *2 | "drop my order" | "cancel" SL:ORDER_REF "for" SL:RECIPIENT *2 | "drop" SL:ORDER_REF "at" SL:TIME
intent IN:UPDATE_ORDER = "change" SL:ORDER_REF "to" SL:DISH *2 | "move" SL:ORDER_REF "to" SL:TIME
intent IN:CUSTOM_DISH = "the special with" SL:TOPPING *2 | SL:FLAVOR "style plate" | "the plain one"
intent IN:CUSTOM_DRINK = SL:FLAVOR "mix" *2 | "the house blend"

slot SL:DISH = "pizza" | "margherita pizza" | "pasta" | "lasagna" | "soup" | "caesar salad" | "burger" | "fries" | "garlic bread" | "pancakes" | "veggie wrap" | "cheese omelet" | "mushroom risotto" | "chicken wrap" | "tomato soup" | IN:CUSTOM_DISH *4
slot SL:DRINK = "cola" | "lemonade" | "iced tea" | "espresso" | "orange juice" | "hot chocolate" | "green tea" | "milkshake" | "sparkling water" | "black coffee" | IN:CUSTOM_DRINK *2
slot SL:TOPPING = "mushrooms" | "olives" | "pepperoni" | "onions" | "extra cheese" | "basil" | "bacon" | "chili flakes" | "spinach" | "corn"
slot SL:SIZE = "small" | "medium" | "large" *2 | "jumbo"
slot SL:QUANTITY = "one" *2 | "two" | "three" | "four" | "five" | "six" | "seven" | "eight"
slot SL:RECIPIENT = "me" *2 | "my friend" | "the office" | "the kids" | "my neighbor" | "my boss" | "my sister" | "the team"
slot SL:FLAVOR = "spicy" | "mild" | "garlic" | "lemon" | "smoky" | "sweet" | "herby" | "tangy"
slot SL:ORDER_REF = "my last order" *2 | "order nine" | "the pizza order" | "the big order" | "the drink order" | "the salad order" | "the soup order" | "the burger order" | "order five" | "the morning order"
slot SL:TIME = "noon" | "six pm" | "tonight" | "tomorrow morning" | "friday evening" | "next week" | "monday noon" | "saturday night" | "nine am" | "sunday" | "midnight" | "the weekend"
slot SL:PLACE = "downtown" | "the main branch" | "the station diner" | "the food court" | "the mall stand" | "the harbor cafe" | "the airport diner" | "the library cafe" | "the station bakery" | "the city center stand"
)";
}

const char * default_pretrain_grammar_text() {
    return R"(# Personal-assistant pretraining domain: labels disjoint from the food
# domain, lexicon a superset of it (note and message texts sweep the food
# vocabulary so a tokenizer trained here covers both domains).
domain assistant
max_depth 4

root = IN:CREATE_REMINDER *3 | IN:GET_WEATHER *2 | IN:PLAY_MUSIC *3 | IN:SEND_MESSAGE *3 | IN:GET_DIRECTIONS *2 | IN:CREATE_NOTE *3 | IN:SET_ALARM | IN:GET_EVENT *2

intent IN:CREATE_REMINDER = "remind me to" SL:TODO *2 | "remind me to" SL:TODO "at" SL:DATETIME *3 | "set a reminder for" SL:DATETIME | "remind" SL:CONTACT "to" SL:TODO *2
intent IN:GET_WEATHER = "how is the weather" | "weather for" SL:DATETIME *2 | "forecast for" SL:WEATHER_PLACE *2 | "will it rain" SL:DATETIME | "weather in" SL:WEATHER_PLACE "on" SL:DATETIME *3
intent IN:PLAY_MUSIC = "play" SL:SONG *2 | "play" SL:SONG "by" SL:ARTIST *3 | "play something by" SL:ARTIST | "queue" SL:SONG "for" SL:DATETIME *2
intent IN:SEND_MESSAGE = "text" SL:CONTACT *2 | "tell" SL:CONTACT "that" SL:MESSAGE_TEXT *3 | "message" SL:CONTACT "about" SL:MESSAGE_TEXT *2 | "send" SL:CONTACT "a note saying" SL:MESSAGE_TEXT "by" SL:DATETIME *3
intent IN:GET_DIRECTIONS = "directions to" SL:DESTINATION *2 | "how do i get to" SL:DESTINATION | "navigate to" SL:DESTINATION "before" SL:DATETIME *2
intent IN:CREATE_NOTE = "note down" SL:NOTE_TEXT *2 | "make a note" SL:NOTE_TEXT | "write" SL:NOTE_TEXT *2
intent IN:SET_ALARM = "wake me at" SL:DATETIME | "set an alarm for" SL:DATETIME | "wake" SL:CONTACT "at" SL:DATETIME *2
intent IN:GET_EVENT = "what is on" SL:DATETIME | "any plans for" SL:DATETIME | "events at" SL:DESTINATION "on" SL:DATETIME *3
intent IN:FIND_PLACE = "the nearest" SL:PLACE_TYPE *2 | "a" SL:PLACE_TYPE "nearby"

slot SL:TODO = "order food for the office" | "get lemonade and pasta" | "move the order to friday" | "buy bread cheese and tea" | "call the dentist" | "water the plants" | "pack the lunch box" | "check the mail" | "pay the rent" | "clean the kitchen" | "book a table" | "stretch for ten minutes" | "charge the phone" | "print the tickets" | "feed the cat" | "take out the trash"
slot SL:DATETIME = "noon" | "six pm" | "tonight" | "tomorrow morning" | "friday evening" | "next week" | "midnight" | "nine am" | "sunday" | "monday afternoon" | "the weekend" | "half past eight" | "april first" | "new years eve"
slot SL:WEATHER_PLACE = "downtown" | "the coast" | "the mountains" | "the valley" | "the harbor" | "the city center" | "the north side" | "the old town"
slot SL:SONG = "blue skies" | "morning light" | "the long road" | "silver rain" | "midnight train" | "golden hour" | "quiet storm" | "river song" | "city lights" | "paper moon" | "summer wind" | "the last dance"
slot SL:ARTIST = "the river band" | "miles" | "the station quartet" | "the blue notes" | "ella" | "the garage trio" | "sunny and the rays" | "the night owls" | "coltrane" | "the paper kites"
slot SL:CONTACT = "my friend" | "my boss" | "my neighbor" | "the office" | "the kids" | "my sister" | "my brother" | "the team" | "grandma" | "the landlord" | "my roommate" | "the coach"
slot SL:MESSAGE_TEXT = "when are you open" | "show me the menu" | "what do you serve" | "opening hours for the main branch" | "the downtown station diner is open" | "drop my order for nine pm" | "my neighbor wants pizza" | "the kids want soup at noon" | "my boss wants espresso friday evening" | "see you next week tomorrow morning" | "my sister and the team at the mall stand" | "monday noon or saturday night" | "change the drink order and the salad order" | "running late tonight" | "the meeting moved to noon" | "bring the charger please"
slot SL:DESTINATION = "downtown" | "the main branch" | "the station diner" | "the food court" | "the airport" | "the harbor" | "the stadium" | "the library" | IN:FIND_PLACE *3
slot SL:NOTE_TEXT = "order pizza and cola for the office" | "get margherita pizza with extra cheese" | "i want pasta and garlic bread tonight" | "cancel my last order please" | "change the big order to lasagna soup" | "move the food court order to noon" | "caesar salad burger and fries for my friend" | "iced tea espresso and orange juice" | "hot chocolate green tea or milkshake" | "mushrooms olives pepperoni onions basil bacon" | "chili flakes spicy mild smoky sweet lemon" | "small medium large one two three four five six" | "veggie wrap cheese omelet pancakes and lemonade" | "the house blend special mix plain style plate" | "mushroom risotto chicken wrap and tomato soup" | "sparkling water black coffee seven eight jumbo" | "spinach corn herby tangy seasoning" | "buy stamps and envelopes" | "the plumber comes on monday" | "rotate the tires next month"
slot SL:PLACE_TYPE = "cafe" | "station" | "diner" | "bakery" | "pharmacy" | "gym" | "bank" | "bookstore"
)";
}

Grammar default_food_grammar() { return parse_grammar(default_food_grammar_text()); }

Grammar default_pretrain_grammar() { return parse_grammar(default_pretrain_grammar_text()); }

}  // namespace peftlab
