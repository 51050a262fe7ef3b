// SPDX-License-Identifier: Apache-2.0

#include "peftlab/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

namespace peftlab {

namespace {

const std::string kMarker = "</w>";

const char * kReservedSurfaces[4] = { "<pad>", "<s>", "</s>", "<unk>" };

std::vector<std::string> split_words(const std::string & text) {
    std::vector<std::string> out;
    std::istringstream       is(text);
    std::string              w;
    while (is >> w) out.push_back(w);
    return out;
}

// "cats" -> {"c","a","t","s</w>"}; with word_final=false the last character
// carries no marker (the word continues, e.g. into a special token).
std::vector<std::string> to_symbols(const std::string & word, bool word_final) {
    std::vector<std::string> syms;
    for (size_t i = 0; i < word.size(); ++i) {
        std::string s(1, word[i]);
        if (word_final && i + 1 == word.size()) s += kMarker;
        syms.push_back(std::move(s));
    }
    return syms;
}

using PairKey = std::pair<std::string, std::string>;

// Applies merge rules to a symbol sequence: repeatedly rewrite every
// occurrence of the applicable rule with the highest priority.
void apply_merges(std::vector<std::string> & syms, const std::map<PairKey, int32_t> & ranks) {
    while (syms.size() >= 2) {
        int32_t best      = -1;
        for (size_t i = 0; i + 1 < syms.size(); ++i) {
            auto it = ranks.find({ syms[i], syms[i + 1] });
            if (it != ranks.end() && (best < 0 || it->second < best)) best = it->second;
        }
        if (best < 0) return;
        std::vector<std::string> next;
        next.reserve(syms.size());
        for (size_t i = 0; i < syms.size();) {
            if (i + 1 < syms.size()) {
                auto it = ranks.find({ syms[i], syms[i + 1] });
                if (it != ranks.end() && it->second == best) {
                    next.push_back(syms[i] + syms[i + 1]);
                    i += 2;
                    continue;
                }
            }
            next.push_back(syms[i]);
            i += 1;
        }
        syms = std::move(next);
    }
}

}  // namespace

Tokenizer train_bpe(const std::vector<std::string> & corpus, int32_t target_size) {
    // word frequencies, ordered for determinism
    std::map<std::string, int64_t> word_freq;
    for (const std::string & line : corpus) {
        for (const std::string & w : split_words(line)) word_freq[w]++;
    }
    if (word_freq.empty()) throw TokenizerError("empty training corpus");

    std::vector<std::vector<std::string>> seqs;
    std::vector<int64_t>                  freqs;
    std::map<std::string, int64_t>        symbol_set;  // initial symbols
    for (const auto & [word, freq] : word_freq) {
        seqs.push_back(to_symbols(word, /*word_final=*/true));
        freqs.push_back(freq);
        for (const std::string & s : seqs.back()) symbol_set[s]++;
    }

    Tokenizer tok;
    for (const char * r : kReservedSurfaces) tok.vocab.surfaces.push_back(r);
    for (const auto & [sym, cnt] : symbol_set) tok.vocab.surfaces.push_back(sym);  // sorted by map order
    if ((int32_t) tok.vocab.surfaces.size() > target_size) {
        throw TokenizerError("target size " + std::to_string(target_size) + " smaller than the " +
                             std::to_string(tok.vocab.surfaces.size()) + " initial symbols");
    }

    while ((int32_t) tok.vocab.surfaces.size() < target_size) {
        std::map<PairKey, int64_t> pair_freq;
        for (size_t w = 0; w < seqs.size(); ++w) {
            const auto & syms = seqs[w];
            for (size_t i = 0; i + 1 < syms.size(); ++i) {
                pair_freq[{ syms[i], syms[i + 1] }] += freqs[w];
            }
        }
        // max frequency; std::map order makes the tie-break the
        // lexicographically smallest pair
        const PairKey * best      = nullptr;
        int64_t         best_freq = 0;
        for (const auto & [pair, freq] : pair_freq) {
            if (freq > best_freq) {
                best_freq = freq;
                best      = &pair;
            }
        }
        if (!best || best_freq < 2) break;

        const std::string merged = best->first + best->second;
        for (auto & syms : seqs) {
            for (size_t i = 0; i + 1 < syms.size();) {
                if (syms[i] == best->first && syms[i + 1] == best->second) {
                    syms[i] = merged;
                    syms.erase(syms.begin() + (int64_t) i + 1);
                } else {
                    i++;
                }
            }
        }
        tok.rules.merges.push_back(*best);
        tok.vocab.surfaces.push_back(merged);
    }

    tok.vocab.base_size = (int32_t) tok.vocab.surfaces.size();
    for (int32_t id = Vocabulary::reserved_count; id < tok.vocab.base_size; ++id) {
        tok.vocab.surface_ids.emplace(tok.vocab.surfaces[(size_t) id], id);
    }
    return tok;
}

void add_special_labels(Tokenizer & tok, const std::vector<std::string> & labels) {
    if (!tok.vocab.special_labels.empty()) {
        throw TokenizerError("special labels already registered");
    }
    for (const std::string & raw : labels) {
        std::string label = raw;
        label.erase(std::remove(label.begin(), label.end(), '['), label.end());
        label.erase(std::remove(label.begin(), label.end(), ']'), label.end());
        if (label.empty()) throw TokenizerError("empty special label: '" + raw + "'");
        if (tok.vocab.special_ids.count(label)) {
            throw TokenizerError("duplicate special label: '" + label + "'");
        }
        int32_t id = tok.vocab.size();
        tok.vocab.surfaces.push_back(label);
        tok.vocab.special_labels.push_back(label);
        tok.vocab.special_ids.emplace(label, id);
    }
}

namespace {

// Rank lookup rebuilt only when the rule list changes size (rules are
// append-only in practice: train once, then encode many times).
const std::map<PairKey, int32_t> & rank_cache(const MergeRules & rules) {
    thread_local const MergeRules *    last = nullptr;
    thread_local size_t                last_size = 0;
    thread_local std::map<PairKey, int32_t> ranks;
    if (last != &rules || last_size != rules.merges.size()) {
        ranks.clear();
        for (size_t i = 0; i < rules.merges.size(); ++i) ranks.emplace(rules.merges[i], (int32_t) i);
        last      = &rules;
        last_size = rules.merges.size();
    }
    return ranks;
}

}  // namespace

std::vector<int32_t> Tokenizer::encode(const std::string & text, bool use_special) const {
    const std::map<PairKey, int32_t> & ranks = rank_cache(rules);

    std::vector<int32_t> out;
    for (const std::string & word : split_words(text)) {
        std::string head    = word;
        int32_t     tail_id = -1;
        if (use_special && !vocab.special_labels.empty()) {
            // longest label matching the end of the word
            for (const auto & [label, id] : vocab.special_ids) {
                if (word.size() >= label.size() &&
                    word.compare(word.size() - label.size(), label.size(), label) == 0) {
                    if (tail_id < 0 || label.size() > vocab.surfaces[(size_t) tail_id].size()) {
                        tail_id = id;
                    }
                }
            }
            if (tail_id >= 0) head = word.substr(0, word.size() - vocab.surfaces[(size_t) tail_id].size());
        }
        if (!head.empty()) {
            std::vector<std::string> syms = to_symbols(head, /*word_final=*/tail_id < 0);
            apply_merges(syms, ranks);
            for (const std::string & s : syms) out.push_back(vocab.subword_id(s));
        }
        if (tail_id >= 0) out.push_back(tail_id);
    }
    return out;
}

std::string Tokenizer::decode(const std::vector<int32_t> & ids) const {
    std::string out;
    for (int32_t id : ids) {
        if (id < 0 || id >= vocab.size()) {
            throw TokenizerError("token id " + std::to_string(id) + " out of range");
        }
        if (id == Vocabulary::pad_id || id == Vocabulary::bos_id || id == Vocabulary::eos_id) continue;
        if (id == Vocabulary::unk_id) {
            out += "<unk> ";
            continue;
        }
        const std::string & s = vocab.surfaces[(size_t) id];
        if (vocab.is_special(id)) {
            out += s;
            out += ' ';
        } else if (s.size() >= kMarker.size() && s.compare(s.size() - kMarker.size(), kMarker.size(), kMarker) == 0) {
            out += s.substr(0, s.size() - kMarker.size());
            out += ' ';
        } else {
            out += s;
        }
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    return out;
}

void save_tokenizer(const Tokenizer & tok, const std::string & vocab_path, const std::string & merges_path) {
    std::ofstream vs(vocab_path);
    if (!vs) throw TokenizerError("cannot write vocabulary: " + vocab_path);
    for (int32_t id = 0; id < tok.vocab.size(); ++id) {
        vs << id << '\t' << tok.vocab.surfaces[(size_t) id] << '\t' << tok.vocab.region(id) << '\n';
    }
    std::ofstream ms(merges_path);
    if (!ms) throw TokenizerError("cannot write merges: " + merges_path);
    for (const auto & [left, right] : tok.rules.merges) {
        ms << left << '\t' << right << '\n';
    }
}

Tokenizer load_tokenizer(const std::string & vocab_path, const std::string & merges_path) {
    std::ifstream vs(vocab_path);
    if (!vs) throw TokenizerError("cannot open vocabulary: " + vocab_path);
    Tokenizer   tok;
    std::string line;
    int32_t     expect = 0;
    bool        seen_special = false;
    while (std::getline(vs, line)) {
        if (line.empty()) continue;
        size_t t1 = line.find('\t');
        size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
        if (t2 == std::string::npos) throw TokenizerError(vocab_path + ": expected 'id<TAB>surface<TAB>region'");
        int32_t     id      = (int32_t) std::stol(line.substr(0, t1));
        std::string surface = line.substr(t1 + 1, t2 - t1 - 1);
        std::string region  = line.substr(t2 + 1);
        if (id != expect++) throw TokenizerError(vocab_path + ": ids must be contiguous from 0");
        tok.vocab.surfaces.push_back(surface);
        if (region == "special") {
            seen_special = true;
            tok.vocab.special_labels.push_back(surface);
            tok.vocab.special_ids.emplace(surface, id);
        } else if (region == "base") {
            if (seen_special) throw TokenizerError(vocab_path + ": base id after special region");
            tok.vocab.base_size = id + 1;
        } else if (region == "reserved") {
            if (id >= Vocabulary::reserved_count) throw TokenizerError(vocab_path + ": unexpected reserved id");
            tok.vocab.base_size = std::max(tok.vocab.base_size, id + 1);
        } else {
            throw TokenizerError(vocab_path + ": unknown region '" + region + "'");
        }
    }
    if (tok.vocab.size() < Vocabulary::reserved_count) {
        throw TokenizerError(vocab_path + ": missing reserved entries");
    }
    for (int32_t id = Vocabulary::reserved_count; id < tok.vocab.base_size; ++id) {
        tok.vocab.surface_ids.emplace(tok.vocab.surfaces[(size_t) id], id);
    }

    std::ifstream ms(merges_path);
    if (!ms) throw TokenizerError("cannot open merges: " + merges_path);
    while (std::getline(ms, line)) {
        if (line.empty()) continue;
        size_t t1 = line.find('\t');
        if (t1 == std::string::npos) throw TokenizerError(merges_path + ": expected 'left<TAB>right'");
        tok.rules.merges.emplace_back(line.substr(0, t1), line.substr(t1 + 1));
    }
    return tok;
}

}  // namespace peftlab
