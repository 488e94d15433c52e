#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mcie/common/error.hpp"
#include "mcie/common/rng.hpp"
#include "mcie/instr/types.hpp"
#include "mcie/io/image.hpp"

namespace mcie::pipe {

struct PaletteColor {
    std::string name;
    double r = 0, g = 0, b = 0;
};

// Eight colors whose 8-bit components are all 0, 128, or 255, so PPM
// round trips reproduce them exactly.
const std::vector<PaletteColor>& palette();
const PaletteColor& palette_color(const std::string& name);
bool is_palette_color(const std::string& name);

constexpr int kMaxObjects = 6;

// id survives color changes; it is the lineage handle edit ops target.
struct SceneObject {
    std::string shape;  // square | circle | triangle
    std::string color;  // palette name
    instr::BBox bbox;   // cell-aligned, normalized
    int id = 0;
};

struct Scene {
    int h = 16, w = 16;
    std::string background;  // palette name no object uses at construction
    std::vector<SceneObject> objects;
    int next_id = 0;

    const SceneObject* find(int id) const;
};

// True when the cell center (x, y) is covered by the object's shape.
// Circles are the inscribed ellipse, triangles are apex-up with the box
// bottom as base; both stay inside the bbox.
bool shape_covers(const SceneObject& obj, double x, double y);

io::Image render_scene(const Scene& scene);

// A single edit step. shape/color describe the referenced object as the
// instruction text names it (its pre-edit state); new_color applies to
// Change only. object_id is the lineage target, or the id assigned to
// the object an Add creates.
struct EditOp {
    instr::OpType op = instr::OpType::Add;
    std::string shape;
    std::string color;
    std::string new_color;
    instr::BBox bbox;
    int object_id = -1;
};

Scene apply_edit(const Scene& scene, const EditOp& edit);
std::string edit_text(const EditOp& edit);
instr::SubInstruction to_sub(const EditOp& edit, int index);

// 2..4 non-overlapping objects with distinct (shape, color) pairs on a
// 16x16 canvas; background drawn from the colors left unused.
Scene sample_scene(Rng& rng);

// Samples one op feasible on the scene. Targets never repeat an id in
// exclude_ids, and Add boxes avoid every box in avoid extra to the live
// objects. reserved_slots counts adds already pending against the object
// cap when the caller batches edits against one fixed scene. Returns
// false only when nothing feasible remains.
bool sample_edit(const Scene& scene, const std::vector<int>& exclude_ids,
                 const std::vector<instr::BBox>& avoid, Rng& rng, EditOp* out,
                 int reserved_slots = 0);

}  // namespace mcie::pipe
