#pragma once

#include <vector>

#include "mcie/instr/types.hpp"

namespace mcie::instr {

// Cell (r,c) is set iff its center ((c+0.5)/W, (r+0.5)/H) lies inside the
// box; a box covering no center snaps to the cell nearest its own center.
Mask rasterize(const BBox& box, int h, int w);

// Cellwise logical OR; resolutions must agree.
Mask union_mask(const std::vector<Mask>& masks);

// Row-major doubles in {0,1}, the layout masked attention ops consume.
std::vector<double> mask_to_rowvec(const Mask& m);

}  // namespace mcie::instr
