// SPDX-License-Identifier: Apache-2.0

#include "peftlab/top_format.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace peftlab {

SemNode SemNode::intent(std::string label, std::vector<SemNode> children) {
    if (!is_valid_label(label) || label.compare(0, 3, "IN:") != 0) {
        throw FormatError("invalid intent label: '" + label + "'");
    }
    return SemNode{ Kind::intent, std::move(label), std::move(children) };
}

SemNode SemNode::slot(std::string label, std::vector<SemNode> children) {
    if (!is_valid_label(label) || label.compare(0, 3, "SL:") != 0) {
        throw FormatError("invalid slot label: '" + label + "'");
    }
    return SemNode{ Kind::slot, std::move(label), std::move(children) };
}

SemNode SemNode::terminal(std::string words) {
    if (words.empty() || words.find('[') != std::string::npos || words.find(']') != std::string::npos) {
        throw FormatError("invalid terminal text: '" + words + "'");
    }
    return SemNode{ Kind::terminal, std::move(words), {} };
}

bool is_valid_label(const std::string & label) {
    size_t body;
    if (label.compare(0, 3, "IN:") == 0 || label.compare(0, 3, "SL:") == 0) {
        body = 3;
    } else {
        return false;
    }
    if (body == label.size()) return false;
    for (size_t i = body; i < label.size(); ++i) {
        char c = label[i];
        if (!(c == '_' || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9'))) return false;
    }
    return true;
}

namespace {

std::vector<std::string> whitespace_tokens(const std::string & text) {
    std::vector<std::string> out;
    std::istringstream       is(text);
    std::string              tok;
    while (is >> tok) out.push_back(tok);
    return out;
}

struct TreeParser {
    const std::vector<std::string> & toks;
    size_t                           at = 0;

    [[noreturn]] void fail(const std::string & msg) const {
        throw FormatError(msg + " at token " + std::to_string(at) +
                          (at < toks.size() ? " ('" + toks[at] + "')" : " (end of input)"));
    }

    const std::string & peek() const {
        if (at >= toks.size()) throw FormatError("unexpected end of input at token " + std::to_string(at));
        return toks[at];
    }

    SemNode parse_bracketed() {
        const std::string & open = peek();
        if (open.size() < 2 || open[0] != '[') fail("expected '[IN:' or '[SL:'");
        std::string label = open.substr(1);
        if (!is_valid_label(label)) fail("malformed label");
        at++;

        SemNode node = label.compare(0, 3, "IN:") == 0 ? SemNode::intent(label) : SemNode::slot(label);

        std::string pending_words;
        auto flush = [&]() {
            if (!pending_words.empty()) {
                node.children.push_back(SemNode::terminal(pending_words));
                pending_words.clear();
            }
        };

        while (true) {
            if (at >= toks.size()) fail("unclosed '" + open + "'");
            const std::string & tok = toks[at];
            if (tok == "]") {
                at++;
                flush();
                return node;
            }
            if (tok[0] == '[') {
                flush();
                node.children.push_back(parse_bracketed());
                continue;
            }
            if (tok.find(']') != std::string::npos || tok.find('[') != std::string::npos) {
                fail("bracket character inside word");
            }
            if (!pending_words.empty()) pending_words += ' ';
            pending_words += tok;
            at++;
        }
    }
};

void serialize_into(const SemNode & node, std::string & out) {
    if (node.is_terminal()) {
        out += node.text;
        return;
    }
    out += '[';
    out += node.text;
    for (const SemNode & child : node.children) {
        out += ' ';
        serialize_into(child, out);
    }
    out += " ]";
}

}  // namespace

SemTree parse_tree(const std::string & text) {
    std::vector<std::string> toks = whitespace_tokens(text);
    if (toks.empty()) throw FormatError("empty input");
    TreeParser p{ toks };
    if (p.peek().compare(0, 4, "[IN:") != 0) p.fail("a tree must start with an intent");
    SemNode root = p.parse_bracketed();
    if (p.at != toks.size()) p.fail("trailing content after root close");
    return root;
}

std::string serialize_tree(const SemTree & tree) {
    if (tree.is_terminal()) throw FormatError("cannot serialize a bare terminal as a tree");
    std::string out;
    serialize_into(tree, out);
    return out;
}

SemTree decouple(const SemTree & tree) {
    SemNode out{ tree.kind, tree.text, {} };
    for (const SemNode & child : tree.children) {
        if (child.is_terminal()) {
            // terminals survive only under slots
            if (tree.is_slot()) out.children.push_back(child);
        } else {
            out.children.push_back(decouple(child));
        }
    }
    return out;
}

namespace {

// Orders siblings by (kind, content) where content is the canonical
// serialization of the subtree, making the ordering total and recursive.
std::string canonical_key(const SemNode & node) {
    std::string prefix = node.is_intent() ? "0|" : node.is_slot() ? "1|" : "2|";
    if (node.is_terminal()) return prefix + node.text;
    std::string body = node.text;
    for (const SemNode & child : node.children) {
        body += '\x01';
        body += canonical_key(child);
    }
    return prefix + body;
}

SemNode sort_recursive(const SemNode & node) {
    SemNode out{ node.kind, node.text, {} };
    out.children.reserve(node.children.size());
    for (const SemNode & child : node.children) out.children.push_back(sort_recursive(child));
    std::stable_sort(out.children.begin(), out.children.end(),
                     [](const SemNode & a, const SemNode & b) { return canonical_key(a) < canonical_key(b); });
    return out;
}

}  // namespace

SemTree canonicalize(const SemTree & tree) {
    return sort_recursive(decouple(tree));
}

bool unordered_exact_match(const SemTree & a, const SemTree & b) {
    return canonical_key(canonicalize(a)) == canonical_key(canonicalize(b));
}

int64_t semantic_node_count(const SemTree & tree) {
    if (tree.is_terminal()) return 0;
    int64_t n = 1;
    for (const SemNode & child : tree.children) n += semantic_node_count(child);
    return n;
}

int64_t semantic_depth(const SemTree & tree) {
    if (tree.is_terminal()) return 0;
    int64_t deepest = 0;
    for (const SemNode & child : tree.children) deepest = std::max(deepest, semantic_depth(child));
    return 1 + deepest;
}

static void collect_labels_into(const SemTree & tree, std::vector<std::string> & out) {
    if (tree.is_terminal()) return;
    out.push_back(tree.text);
    for (const SemNode & child : tree.children) collect_labels_into(child, out);
}

std::vector<std::string> collect_labels(const SemTree & tree) {
    std::vector<std::string> out;
    collect_labels_into(tree, out);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

LengthStats length_stats(const std::vector<int64_t> & lengths) {
    if (lengths.empty()) throw FormatError("length_stats over an empty corpus");
    LengthStats s;
    s.count = (int64_t) lengths.size();
    std::vector<int64_t> sorted = lengths;
    std::sort(sorted.begin(), sorted.end());
    s.min = sorted.front();
    s.max = sorted.back();
    double total = 0;
    for (int64_t v : sorted) total += (double) v;
    s.mean   = total / (double) s.count;
    s.median = sorted[(size_t)((s.count - 1) / 2)];  // lower middle when even
    return s;
}

std::vector<DatasetRow> read_dataset_tsv(const std::string & path) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open dataset: " + path);
    std::vector<DatasetRow> rows;
    std::string             line;
    int64_t                 lineno = 0;
    while (std::getline(is, line)) {
        lineno++;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        size_t t1 = line.find('\t');
        size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
        if (t2 == std::string::npos || line.find('\t', t2 + 1) != std::string::npos) {
            throw FormatError(path + ":" + std::to_string(lineno) + ": expected 3 tab-separated fields");
        }
        rows.push_back(DatasetRow{ line.substr(0, t1), line.substr(t1 + 1, t2 - t1 - 1), line.substr(t2 + 1) });
    }
    return rows;
}

void write_dataset_tsv(const std::string & path, const std::vector<DatasetRow> & rows) {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot write dataset: " + path);
    for (const DatasetRow & row : rows) {
        for (const std::string * f : { &row.domain, &row.utterance, &row.target }) {
            if (f->find('\t') != std::string::npos || f->find('\n') != std::string::npos) {
                throw FormatError("field contains tab or newline: '" + *f + "'");
            }
        }
        os << row.domain << '\t' << row.utterance << '\t' << row.target << '\n';
    }
    if (!os) throw FormatError("failed writing dataset: " + path);
}

}  // namespace peftlab
