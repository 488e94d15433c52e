#pragma once

#include <string>

#include "mcie/num/nn.hpp"

namespace mcie::num {

// Binary parameter manifest, version "mcie-ckpt-1". Layout:
//   "mcie-ckpt-1\n"
//   u32 meta_len, meta bytes (UTF-8, caller-defined)
//   u32 tensor_count
//   per tensor: u32 name_len, name bytes, u32 ndim, i32 dims[ndim],
//               f64 values (little-endian, row-major)
// Round-trips bit-exactly.
void save_checkpoint(const std::string& path, const ParamRegistry& params,
                     const std::string& meta = "");

// Loads values into an already-built registry; every stored tensor must
// match a registered parameter's name and shape, and every registered
// parameter must be present. Returns the meta string.
std::string load_checkpoint(const std::string& path, ParamRegistry& params);

// Reads just the meta string without touching parameters.
std::string read_checkpoint_meta(const std::string& path);

}  // namespace mcie::num
