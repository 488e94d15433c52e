#pragma once

#include <functional>

#include "mcie/num/nn.hpp"

namespace mcie::num {

// Compares analytic gradients against central finite differences for every
// value of every registered parameter. loss_fn must rebuild the graph on
// each call and return a scalar. Relative error uses the denominator
// max(|analytic|, |numeric|, 1e-8). probe_stride > 1 checks every k-th
// value (probing all of a large model is slow); the first and last value
// of each parameter are always probed.
double finite_diff_check(ParamRegistry& params, const std::function<Tensor()>& loss_fn,
                         double epsilon = 1e-5, int probe_stride = 1);

}  // namespace mcie::num
