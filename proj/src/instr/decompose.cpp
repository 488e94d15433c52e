#include "mcie/instr/decompose.hpp"

#include <algorithm>
#include <cctype>
#include <cstring>
#include <sstream>

namespace mcie::instr {

namespace {

std::string lower(const std::string& s) {
    std::string out = s;
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

bool all_digits(const std::string& s) {
    return !s.empty() && std::all_of(s.begin(), s.end(),
                                     [](unsigned char c) { return std::isdigit(c) != 0; });
}

bool contains(const std::vector<std::string>& v, const std::string& s) {
    return std::find(v.begin(), v.end(), s) != v.end();
}

struct Token {
    std::string word;   // original casing, punctuation stripped
    bool comma = false;
    bool semi = false;
};

std::vector<Token> tokenize(const std::string& raw) {
    std::vector<Token> tokens;
    std::istringstream is(raw);
    std::string piece;
    while (is >> piece) {
        Token t;
        while (!piece.empty()) {
            const char back = piece.back();
            if (back == ',') t.comma = true;
            else if (back == ';') t.semi = true;
            else if (back == '.' || back == '!') {}
            else break;
            piece.pop_back();
        }
        if (piece.empty()) {
            if (t.semi && !tokens.empty()) tokens.back().semi = true;
            else if (t.comma && !tokens.empty()) tokens.back().comma = true;
            continue;
        }
        t.word = piece;
        tokens.push_back(std::move(t));
    }
    return tokens;
}

std::string singularize(const std::string& word) {
    const std::string w = lower(word);
    const auto ends = [&](const char* suffix) {
        const std::size_t n = std::strlen(suffix);
        return w.size() > n && w.compare(w.size() - n, n, suffix) == 0;
    };
    if (ends("ies")) return word.substr(0, word.size() - 3) + "y";
    if (ends("sses") || ends("xes") || ends("zes") || ends("ches") || ends("shes")) {
        return word.substr(0, word.size() - 2);
    }
    if (w.size() > 1 && w.back() == 's' && w[w.size() - 2] != 's') {
        return word.substr(0, word.size() - 1);
    }
    return word;
}

std::string article_for(const std::string& word) {
    if (word.empty()) return "a";
    const char c = static_cast<char>(std::tolower(static_cast<unsigned char>(word[0])));
    return (c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u') ? "an" : "a";
}

std::string join(const std::vector<std::string>& words) {
    std::string out;
    for (const std::string& w : words) {
        if (!out.empty()) out += ' ';
        out += w;
    }
    return out;
}

std::vector<std::vector<Token>> split_clauses(const std::vector<Token>& tokens,
                                              const Lexicon& lex) {
    std::vector<std::vector<Token>> clauses;
    std::vector<Token> cur;
    const auto flush = [&] {
        while (!cur.empty() && contains(lex.connectors, lower(cur.front().word))) {
            cur.erase(cur.begin());
        }
        if (!cur.empty()) clauses.push_back(std::move(cur));
        cur.clear();
    };
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const Token& t = tokens[i];
        const std::string lw = lower(t.word);
        const bool next_is_verb = i + 1 < tokens.size() && lex.is_verb(lower(tokens[i + 1].word));
        if (!cur.empty() && contains(lex.connectors, lw) && next_is_verb) {
            flush();
            continue;
        }
        cur.push_back(t);
        if (t.semi) {
            flush();
            continue;
        }
        if (t.comma) {
            bool boundary = next_is_verb;
            if (!boundary && i + 2 < tokens.size() &&
                contains(lex.connectors, lower(tokens[i + 1].word)) &&
                lex.is_verb(lower(tokens[i + 2].word))) {
                boundary = true;
            }
            if (boundary) flush();
        }
    }
    flush();
    return clauses;
}

}  // namespace

BBox default_box(int slot) {
    if (slot < 0 || slot >= kMaxSubs) {
        throw contract_error("default box slot " + std::to_string(slot) + " outside the thirds grid");
    }
    const int col = slot % 3, row = slot / 3;
    return {col / 3.0, row / 3.0, (col + 1) / 3.0, (row + 1) / 3.0};
}

ComplexInstruction decompose_rules(const std::string& raw, const Lexicon& lex,
                                   const std::vector<RegionHint>* regions, int max_subs) {
    if (raw.empty()) throw data_error("empty instruction");
    const std::vector<Token> tokens = tokenize(raw);
    const auto clauses = split_clauses(tokens, lex);
    if (clauses.empty()) throw data_error("no clauses in instruction: \"" + raw + "\"");

    ComplexInstruction ci;
    ci.raw_text = raw;
    int slot = 0;

    for (const auto& clause : clauses) {
        std::vector<std::string> words;
        words.reserve(clause.size());
        for (const Token& t : clause) words.push_back(t.word);
        const std::string clause_text = join(words);

        const auto verb_it = lex.verbs.find(lower(words[0]));
        if (verb_it == lex.verbs.end()) {
            throw data_error("cannot classify clause (no known leading verb): \"" + clause_text + "\"");
        }
        const OpType op = verb_it->second;

        int quantity = 1;
        std::size_t qpos = 0;
        for (std::size_t i = 1; i < words.size(); ++i) {
            const std::string lw = lower(words[i]);
            if (all_digits(lw)) {
                const long n = std::stol(lw);
                if (n > 9) {
                    throw data_error("unsupported quantity " + std::to_string(n) + " in \"" +
                                     clause_text + "\"");
                }
                if (n >= 2) {
                    quantity = static_cast<int>(n);
                    qpos = i;
                }
                break;
            }
            if (auto it = lex.number_words.find(lw); it != lex.number_words.end()) {
                quantity = it->second;
                qpos = i;
                break;
            }
            if (contains(lex.too_many_words, lw)) {
                throw data_error("unsupported quantity \"" + words[i] + "\" in \"" + clause_text + "\"");
            }
        }

        if (quantity > 1) {
            std::size_t end = qpos + 1;
            while (end < words.size() && !contains(lex.phrase_stops, lower(words[end]))) ++end;
            if (end == qpos + 1) {
                throw data_error("quantity without a noun in \"" + clause_text + "\"");
            }
            std::vector<std::string> rewritten(words.begin(),
                                               words.begin() + static_cast<std::ptrdiff_t>(qpos));
            std::vector<std::string> phrase(words.begin() + static_cast<std::ptrdiff_t>(qpos) + 1,
                                            words.begin() + static_cast<std::ptrdiff_t>(end));
            phrase.back() = singularize(phrase.back());
            rewritten.push_back(article_for(phrase.front()));
            rewritten.insert(rewritten.end(), phrase.begin(), phrase.end());
            rewritten.insert(rewritten.end(), words.begin() + static_cast<std::ptrdiff_t>(end),
                             words.end());
            const std::string text = join(rewritten);
            for (int k = 0; k < quantity; ++k) {
                if (slot >= kMaxSubs) throw data_error("instruction needs more than 9 default boxes");
                SubInstruction s;
                s.text = text;
                s.op = op;
                s.bbox = default_box(slot++);
                s.index = static_cast<int>(ci.subs.size());
                ci.subs.push_back(std::move(s));
            }
            continue;
        }

        SubInstruction s;
        s.text = clause_text;
        s.op = op;
        const RegionHint* best = nullptr;
        if (regions) {
            const std::string cl = lower(clause_text);
            for (const RegionHint& r : *regions) {
                if (cl.find(lower(r.name)) == std::string::npos) continue;
                if (!best || r.name.size() > best->name.size()) best = &r;
            }
        }
        if (best) {
            s.bbox = best->box;
        } else {
            if (slot >= kMaxSubs) throw data_error("instruction needs more than 9 default boxes");
            s.bbox = default_box(slot++);
        }
        s.index = static_cast<int>(ci.subs.size());
        ci.subs.push_back(std::move(s));
    }

    if (static_cast<int>(ci.subs.size()) > max_subs) {
        throw data_error("decomposition has " + std::to_string(ci.subs.size()) +
                         " sub-instructions, cap is " + std::to_string(max_subs));
    }
    return ci;
}

}  // namespace mcie::instr
