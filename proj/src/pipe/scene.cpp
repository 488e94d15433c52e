#include "mcie/pipe/scene.hpp"

#include <algorithm>

namespace mcie::pipe {

namespace {

constexpr double k128 = 128.0 / 255.0;

const std::vector<std::string>& shape_names() {
    static const std::vector<std::string> names = {"square", "circle", "triangle"};
    return names;
}

bool vowel_initial(const std::string& word) {
    if (word.empty()) return false;
    char c = word[0];
    return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u';
}

}  // namespace

const std::vector<PaletteColor>& palette() {
    static const std::vector<PaletteColor> colors = {
        {"red", 1.0, 0.0, 0.0},     {"green", 0.0, 1.0, 0.0},
        {"blue", 0.0, 0.0, 1.0},    {"yellow", 1.0, 1.0, 0.0},
        {"cyan", 0.0, 1.0, 1.0},    {"magenta", 1.0, 0.0, 1.0},
        {"orange", 1.0, k128, 0.0}, {"gray", k128, k128, k128},
    };
    return colors;
}

const PaletteColor& palette_color(const std::string& name) {
    for (const PaletteColor& c : palette()) {
        if (c.name == name) return c;
    }
    throw data_error("unknown palette color: " + name);
}

bool is_palette_color(const std::string& name) {
    for (const PaletteColor& c : palette()) {
        if (c.name == name) return true;
    }
    return false;
}

const SceneObject* Scene::find(int id) const {
    for (const SceneObject& o : objects) {
        if (o.id == id) return &o;
    }
    return nullptr;
}

bool shape_covers(const SceneObject& obj, double x, double y) {
    const instr::BBox& b = obj.bbox;
    if (!b.contains(x, y)) return false;
    if (obj.shape == "square") return true;
    if (obj.shape == "circle") {
        double rx = 0.5 * (b.x1 - b.x0);
        double ry = 0.5 * (b.y1 - b.y0);
        double dx = (x - b.cx()) / rx;
        double dy = (y - b.cy()) / ry;
        return dx * dx + dy * dy <= 1.0;
    }
    if (obj.shape == "triangle") {
        // Apex (cx, y0), base corners (x0, y1) and (x1, y1). A point is
        // inside when it sits on the base side of both slanted edges.
        double ax = b.cx(), ay = b.y0;
        double left = (x - ax) * (b.y1 - ay) - (y - ay) * (b.x0 - ax);
        double right = (x - ax) * (b.y1 - ay) - (y - ay) * (b.x1 - ax);
        return left >= 0.0 && right <= 0.0;
    }
    throw data_error("unknown shape: " + obj.shape);
}

io::Image render_scene(const Scene& scene) {
    if (scene.h <= 0 || scene.w <= 0) throw contract_error("scene resolution must be positive");
    if (static_cast<int>(scene.objects.size()) > kMaxObjects) {
        throw data_error("scene holds more than " + std::to_string(kMaxObjects) + " objects");
    }
    const PaletteColor& bg = palette_color(scene.background);
    io::Image img(scene.h, scene.w, 3);
    for (int r = 0; r < scene.h; ++r) {
        for (int col = 0; col < scene.w; ++col) {
            double x = (col + 0.5) / scene.w;
            double y = (r + 0.5) / scene.h;
            const PaletteColor* paint = &bg;
            for (const SceneObject& obj : scene.objects) {
                if (shape_covers(obj, x, y)) paint = &palette_color(obj.color);
            }
            img.at(r, col, 0) = paint->r;
            img.at(r, col, 1) = paint->g;
            img.at(r, col, 2) = paint->b;
        }
    }
    return img;
}

Scene apply_edit(const Scene& scene, const EditOp& edit) {
    Scene out = scene;
    switch (edit.op) {
        case instr::OpType::Add: {
            if (static_cast<int>(out.objects.size()) >= kMaxObjects) {
                throw data_error("add exceeds the object cap");
            }
            edit.bbox.validate();
            int id = edit.object_id >= 0 ? edit.object_id : out.next_id;
            out.objects.push_back({edit.shape, edit.color, edit.bbox, id});
            out.next_id = std::max(out.next_id, id + 1);
            return out;
        }
        case instr::OpType::Remove: {
            auto it = std::find_if(out.objects.begin(), out.objects.end(),
                                   [&](const SceneObject& o) { return o.id == edit.object_id; });
            if (it == out.objects.end()) throw data_error("remove targets a missing object");
            out.objects.erase(it);
            return out;
        }
        case instr::OpType::Change: {
            for (SceneObject& o : out.objects) {
                if (o.id == edit.object_id) {
                    palette_color(edit.new_color);
                    o.color = edit.new_color;
                    return out;
                }
            }
            throw data_error("change targets a missing object");
        }
    }
    throw contract_error("unhandled edit op");
}

std::string edit_text(const EditOp& edit) {
    switch (edit.op) {
        case instr::OpType::Add:
            return std::string("add ") + (vowel_initial(edit.color) ? "an " : "a ") + edit.color +
                   " " + edit.shape;
        case instr::OpType::Remove:
            return "remove the " + edit.color + " " + edit.shape;
        case instr::OpType::Change:
            return "change the " + edit.color + " " + edit.shape + " to " + edit.new_color;
    }
    throw contract_error("unhandled edit op");
}

instr::SubInstruction to_sub(const EditOp& edit, int index) {
    instr::SubInstruction s;
    s.text = edit_text(edit);
    s.op = edit.op;
    s.bbox = edit.bbox;
    s.index = index;
    return s;
}

namespace {

instr::BBox cell_box(int row0, int col0, int h_cells, int w_cells, int h, int w) {
    return {static_cast<double>(col0) / w, static_cast<double>(row0) / h,
            static_cast<double>(col0 + w_cells) / w, static_cast<double>(row0 + h_cells) / h};
}

bool overlaps_any(const instr::BBox& box, const std::vector<instr::BBox>& boxes) {
    for (const instr::BBox& b : boxes) {
        if (box.overlaps(b)) return true;
    }
    return false;
}

std::vector<instr::BBox> object_boxes(const Scene& scene) {
    std::vector<instr::BBox> boxes;
    boxes.reserve(scene.objects.size());
    for (const SceneObject& o : scene.objects) boxes.push_back(o.bbox);
    return boxes;
}

bool pair_used(const Scene& scene, const std::string& shape, const std::string& color) {
    for (const SceneObject& o : scene.objects) {
        if (o.shape == shape && o.color == color) return true;
    }
    return false;
}

constexpr int kPlaceRetries = 100;

// Cell-aligned box of 4..6 cells per side that avoids every box listed.
bool place_box(const Scene& scene, const std::vector<instr::BBox>& avoid, Rng& rng,
               instr::BBox* out) {
    for (int attempt = 0; attempt < kPlaceRetries; ++attempt) {
        int wc = 4 + static_cast<int>(rng.uniform_int(3));
        int hc = 4 + static_cast<int>(rng.uniform_int(3));
        int col0 = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(scene.w - wc + 1)));
        int row0 = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(scene.h - hc + 1)));
        instr::BBox box = cell_box(row0, col0, hc, wc, scene.h, scene.w);
        if (!overlaps_any(box, avoid)) {
            *out = box;
            return true;
        }
    }
    return false;
}

}  // namespace

Scene sample_scene(Rng& rng) {
    Scene scene;
    int n_objects = 2 + static_cast<int>(rng.uniform_int(3));
    for (int i = 0; i < n_objects; ++i) {
        instr::BBox box;
        if (!place_box(scene, object_boxes(scene), rng, &box)) break;
        std::string shape, color;
        bool fresh = false;
        for (int attempt = 0; attempt < kPlaceRetries && !fresh; ++attempt) {
            shape = shape_names()[rng.uniform_int(shape_names().size())];
            color = palette()[rng.uniform_int(palette().size())].name;
            fresh = !pair_used(scene, shape, color);
        }
        if (!fresh) break;
        scene.objects.push_back({shape, color, box, scene.next_id++});
    }
    std::vector<std::string> unused;
    for (const PaletteColor& c : palette()) {
        if (!pair_used(scene, "square", c.name) && !pair_used(scene, "circle", c.name) &&
            !pair_used(scene, "triangle", c.name)) {
            unused.push_back(c.name);
        }
    }
    if (unused.empty()) throw contract_error("no palette color left for the background");
    scene.background = unused[rng.uniform_int(unused.size())];
    return scene;
}

bool sample_edit(const Scene& scene, const std::vector<int>& exclude_ids,
                 const std::vector<instr::BBox>& avoid, Rng& rng, EditOp* out,
                 int reserved_slots) {
    std::vector<const SceneObject*> targets;
    for (const SceneObject& o : scene.objects) {
        bool excluded = std::find(exclude_ids.begin(), exclude_ids.end(), o.id) != exclude_ids.end();
        if (!excluded) targets.push_back(&o);
    }
    bool can_add = static_cast<int>(scene.objects.size()) + reserved_slots < kMaxObjects;
    for (int attempt = 0; attempt < kPlaceRetries; ++attempt) {
        int n_ops = (can_add ? 1 : 0) + (targets.empty() ? 0 : 2);
        if (n_ops == 0) return false;
        std::uint64_t pick = rng.uniform_int(static_cast<std::uint64_t>(n_ops));
        bool add = can_add && pick == 0;
        if (add) {
            std::vector<instr::BBox> blocked = object_boxes(scene);
            blocked.insert(blocked.end(), avoid.begin(), avoid.end());
            instr::BBox box;
            if (!place_box(scene, blocked, rng, &box)) {
                can_add = false;
                continue;
            }
            std::string shape, color;
            bool fresh = false;
            for (int inner = 0; inner < kPlaceRetries && !fresh; ++inner) {
                shape = shape_names()[rng.uniform_int(shape_names().size())];
                color = palette()[rng.uniform_int(palette().size())].name;
                fresh = color != scene.background && !pair_used(scene, shape, color);
            }
            if (!fresh) {
                can_add = false;
                continue;
            }
            *out = {instr::OpType::Add, shape, color, "", box, scene.next_id};
            return true;
        }
        const SceneObject& target = *targets[rng.uniform_int(targets.size())];
        if (overlaps_any(target.bbox, avoid)) continue;
        bool remove = rng.uniform_int(2) == 0;
        if (remove) {
            *out = {instr::OpType::Remove, target.shape, target.color, "", target.bbox, target.id};
            return true;
        }
        std::vector<std::string> choices;
        for (const PaletteColor& c : palette()) {
            if (c.name != target.color && c.name != scene.background) choices.push_back(c.name);
        }
        *out = {instr::OpType::Change, target.shape, target.color,
                choices[rng.uniform_int(choices.size())], target.bbox, target.id};
        return true;
    }
    return false;
}

}  // namespace mcie::pipe
