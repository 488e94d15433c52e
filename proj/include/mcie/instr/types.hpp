#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "mcie/common/error.hpp"

namespace mcie::instr {

enum class OpType { Add, Remove, Change };

const char* op_name(OpType op);
OpType parse_op(const std::string& name);

// Normalized corner coordinates, 0 <= x0 < x1 <= 1 and likewise for y.
struct BBox {
    double x0 = 0, y0 = 0, x1 = 0, y1 = 0;

    void validate() const;
    double area() const { return (x1 - x0) * (y1 - y0); }
    double cx() const { return 0.5 * (x0 + x1); }
    double cy() const { return 0.5 * (y0 + y1); }
    bool contains(double x, double y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
    bool overlaps(const BBox& o) const {
        return x0 < o.x1 && o.x0 < x1 && y0 < o.y1 && o.y0 < y1;
    }
    bool operator==(const BBox& o) const = default;
};

struct SubInstruction {
    std::string text;
    OpType op = OpType::Add;
    BBox bbox;
    int index = 0;
};

struct ComplexInstruction {
    std::string raw_text;
    std::vector<SubInstruction> subs;
};

// The thirds grid holds at most 9 non-overlapping default boxes, which also
// bounds a single quantity expansion.
constexpr int kMaxSubs = 9;

// Binary occupancy grid; 1 exactly on cells whose centers lie inside the
// source box (after snap for sub-cell boxes).
struct Mask {
    int h = 0, w = 0;
    std::vector<std::uint8_t> grid;

    Mask() = default;
    Mask(int h, int w) : h(h), w(w), grid(static_cast<std::size_t>(h) * w, 0) {}
    std::uint8_t at(int r, int c) const { return grid[static_cast<std::size_t>(r) * w + c]; }
    void set(int r, int c, std::uint8_t v) { grid[static_cast<std::size_t>(r) * w + c] = v; }
    int popcount() const;
    bool operator==(const Mask& o) const = default;
};

nlohmann::json to_json(const ComplexInstruction& ci);
// Validates op names, bbox ordering, non-empty texts, and the sub cap.
ComplexInstruction instruction_from_json(const nlohmann::json& j, int max_subs = kMaxSubs);

}  // namespace mcie::instr
