#pragma once

#include <map>
#include <string>
#include <vector>

#include "mcie/instr/types.hpp"

namespace mcie::instr {

// Verb, quantity, and clause-splitting vocabulary. The built-in defaults
// mirror data/lexicon.json; load() lets deployments extend the vocabulary
// without code changes.
struct Lexicon {
    std::map<std::string, OpType> verbs;
    std::map<std::string, int> number_words;    // expandable quantities, 2..9
    std::vector<std::string> too_many_words;    // known words above the cap
    std::vector<std::string> connectors;        // clause joiners besides ';'
    std::vector<std::string> phrase_stops;      // prepositions ending a noun phrase

    bool is_verb(const std::string& word) const { return verbs.count(word) != 0; }

    static Lexicon defaults();
    static Lexicon load(const std::string& path);
};

}  // namespace mcie::instr
