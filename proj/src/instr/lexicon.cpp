#include "mcie/instr/lexicon.hpp"

#include <fstream>

#include <json.hpp>

namespace mcie::instr {

Lexicon Lexicon::defaults() {
    Lexicon lex;
    for (const char* v : {"add", "put", "insert"}) lex.verbs[v] = OpType::Add;
    for (const char* v : {"remove", "delete", "erase"}) lex.verbs[v] = OpType::Remove;
    for (const char* v : {"change", "replace", "make", "turn"}) lex.verbs[v] = OpType::Change;
    lex.number_words = {{"two", 2}, {"three", 3}, {"four", 4}, {"five", 5},
                        {"six", 6}, {"seven", 7}, {"eight", 8}, {"nine", 9}};
    lex.too_many_words = {"ten", "eleven", "twelve", "dozen", "twenty", "hundred"};
    lex.connectors = {"and", "then"};
    lex.phrase_stops = {"on", "in", "at", "near", "beside", "next", "to", "with", "under",
                        "over", "above", "below", "by", "behind", "into", "around"};
    return lex;
}

Lexicon Lexicon::load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw data_error("cannot open lexicon: " + path);
    nlohmann::json j;
    try {
        is >> j;
        Lexicon lex;
        for (const auto& [op, words] : j.at("verbs").items()) {
            const OpType type = parse_op(op);
            for (const auto& w : words) lex.verbs[w.get<std::string>()] = type;
        }
        for (const auto& [word, n] : j.at("number_words").items()) {
            lex.number_words[word] = n.get<int>();
        }
        for (const auto& w : j.at("too_many_words")) lex.too_many_words.push_back(w.get<std::string>());
        for (const auto& w : j.at("connectors")) lex.connectors.push_back(w.get<std::string>());
        for (const auto& w : j.at("phrase_stops")) lex.phrase_stops.push_back(w.get<std::string>());
        return lex;
    } catch (const nlohmann::json::exception& e) {
        throw data_error("bad lexicon file " + path + ": " + e.what());
    }
}

}  // namespace mcie::instr
