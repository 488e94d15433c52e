#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mcie/instr/lexicon.hpp"
#include "mcie/instr/types.hpp"

namespace mcie::instr {

// Named scene region usable for grounding a clause's bbox.
struct RegionHint {
    std::string name;
    BBox box;
};

// Slot s of the row-major thirds grid, s in [0, 9).
BBox default_box(int slot);

// Rule-based decomposition: clause split on semicolons, connectors before
// verbs, and commas before verbs; op classification by leading verb;
// quantity words/digits 2..9 expand into that many singular-rewritten
// duplicates on disjoint default boxes. Non-expanded clauses take the box
// of the longest matching region hint, falling back to default-grid slots.
ComplexInstruction decompose_rules(const std::string& raw, const Lexicon& lex,
                                   const std::vector<RegionHint>* regions = nullptr,
                                   int max_subs = kMaxSubs);

}  // namespace mcie::instr
