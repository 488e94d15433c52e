#include "mcie/instr/types.hpp"

namespace mcie::instr {

const char* op_name(OpType op) {
    switch (op) {
        case OpType::Add: return "ADD";
        case OpType::Remove: return "REMOVE";
        case OpType::Change: return "CHANGE";
    }
    throw contract_error("bad OpType value");
}

OpType parse_op(const std::string& name) {
    if (name == "ADD") return OpType::Add;
    if (name == "REMOVE") return OpType::Remove;
    if (name == "CHANGE") return OpType::Change;
    throw data_error("unknown op name: " + name);
}

void BBox::validate() const {
    if (!(x0 >= 0.0 && x0 < x1 && x1 <= 1.0 && y0 >= 0.0 && y0 < y1 && y1 <= 1.0)) {
        throw data_error("bad bbox [" + std::to_string(x0) + ", " + std::to_string(y0) + ", " +
                         std::to_string(x1) + ", " + std::to_string(y1) + "]");
    }
}

int Mask::popcount() const {
    int n = 0;
    for (std::uint8_t v : grid) n += v;
    return n;
}

nlohmann::json to_json(const ComplexInstruction& ci) {
    nlohmann::json subs = nlohmann::json::array();
    for (const SubInstruction& s : ci.subs) {
        subs.push_back({{"text", s.text},
                        {"op", op_name(s.op)},
                        {"bbox", {s.bbox.x0, s.bbox.y0, s.bbox.x1, s.bbox.y1}}});
    }
    return {{"raw_text", ci.raw_text}, {"subs", subs}};
}

ComplexInstruction instruction_from_json(const nlohmann::json& j, int max_subs) {
    ComplexInstruction ci;
    try {
        ci.raw_text = j.at("raw_text").get<std::string>();
        const auto& subs = j.at("subs");
        if (!subs.is_array() || subs.empty()) throw data_error("subs must be a non-empty array");
        if (static_cast<int>(subs.size()) > max_subs) {
            throw data_error("too many sub-instructions: " + std::to_string(subs.size()) +
                             " > " + std::to_string(max_subs));
        }
        int index = 0;
        for (const auto& js : subs) {
            SubInstruction s;
            s.text = js.at("text").get<std::string>();
            if (s.text.empty()) throw data_error("empty sub-instruction text");
            s.op = parse_op(js.at("op").get<std::string>());
            const auto& b = js.at("bbox");
            if (!b.is_array() || b.size() != 4) throw data_error("bbox must be [x0,y0,x1,y1]");
            s.bbox = {b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
            s.bbox.validate();
            s.index = index++;
            ci.subs.push_back(std::move(s));
        }
    } catch (const nlohmann::json::exception& e) {
        throw data_error(std::string("bad decomposition JSON: ") + e.what());
    }
    return ci;
}

}  // namespace mcie::instr
