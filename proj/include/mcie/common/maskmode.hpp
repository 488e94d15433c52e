#pragma once

#include <string>

#include "mcie/common/error.hpp"

namespace mcie {

// How a spatial mask constrains attention.
//  Literal:  logits are multiplied by the decayed mask along the query axis
//            before the softmax.
//  Additive: masked query rows get -1e9 added to every logit; the timestep
//            decay is applied to the softmax weights and rows renormalized.
enum class MaskMode { Literal, Additive };

inline const char* mask_mode_name(MaskMode m) {
    return m == MaskMode::Literal ? "literal" : "additive";
}

inline MaskMode parse_mask_mode(const std::string& s) {
    if (s == "literal") return MaskMode::Literal;
    if (s == "additive") return MaskMode::Additive;
    throw usage_error("unknown mask mode '" + s + "' (expected literal|additive)");
}

}  // namespace mcie
