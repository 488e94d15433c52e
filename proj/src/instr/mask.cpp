#include "mcie/instr/mask.hpp"

#include <cmath>
#include <limits>

namespace mcie::instr {

Mask rasterize(const BBox& box, int h, int w) {
    if (h < 1 || w < 1) throw contract_error("rasterize: resolution must be at least 1x1");
    box.validate();
    Mask m(h, w);
    bool any = false;
    for (int r = 0; r < h; ++r) {
        const double cy = (r + 0.5) / h;
        for (int c = 0; c < w; ++c) {
            const double cx = (c + 0.5) / w;
            if (box.contains(cx, cy)) {
                m.set(r, c, 1);
                any = true;
            }
        }
    }
    if (!any) {
        int best_r = 0, best_c = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (int r = 0; r < h; ++r) {
            for (int c = 0; c < w; ++c) {
                const double dx = (c + 0.5) / w - box.cx();
                const double dy = (r + 0.5) / h - box.cy();
                const double d = dx * dx + dy * dy;
                if (d < best_d) {
                    best_d = d;
                    best_r = r;
                    best_c = c;
                }
            }
        }
        m.set(best_r, best_c, 1);
    }
    return m;
}

Mask union_mask(const std::vector<Mask>& masks) {
    if (masks.empty()) throw contract_error("union_mask: no masks");
    Mask out(masks[0].h, masks[0].w);
    for (const Mask& m : masks) {
        if (m.h != out.h || m.w != out.w) {
            throw data_error("union_mask: resolution mismatch " + std::to_string(out.h) + "x" +
                             std::to_string(out.w) + " vs " + std::to_string(m.h) + "x" +
                             std::to_string(m.w));
        }
        for (std::size_t i = 0; i < out.grid.size(); ++i) out.grid[i] |= m.grid[i];
    }
    return out;
}

std::vector<double> mask_to_rowvec(const Mask& m) {
    std::vector<double> v(m.grid.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = m.grid[i] ? 1.0 : 0.0;
    return v;
}

}  // namespace mcie::instr
