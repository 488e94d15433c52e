#include "mcie/num/gradcheck.hpp"

#include <cmath>

namespace mcie::num {

double finite_diff_check(ParamRegistry& params, const std::function<Tensor()>& loss_fn,
                         double epsilon, int probe_stride) {
    if (epsilon <= 0.0) throw contract_error("finite_diff_check: epsilon must be positive");
    if (probe_stride < 1) probe_stride = 1;

    params.zero_grad();
    {
        Tensor loss = loss_fn();
        backward(loss);
    }

    double max_rel = 0.0;
    for (const auto& [name, p] : params.entries()) {
        Tensor t = p;
        auto& val = t.mutable_value();
        const std::vector<double>* grad = t.has_grad() ? &t.grad() : nullptr;
        auto probe = [&](std::size_t idx) {
            const double saved = val[idx];
            double up, down;
            {
                NoGradGuard ng;
                val[idx] = saved + epsilon;
                up = loss_fn().scalar_value();
                val[idx] = saved - epsilon;
                down = loss_fn().scalar_value();
                val[idx] = saved;
            }
            if (!std::isfinite(up) || !std::isfinite(down)) {
                throw numeric_error("finite_diff_check: loss not finite at probe of " + name);
            }
            const double numeric = (up - down) / (2.0 * epsilon);
            const double analytic = grad ? (*grad)[idx] : 0.0;
            const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
            max_rel = std::max(max_rel, std::fabs(analytic - numeric) / denom);
        };
        std::size_t last_probed = 0;
        for (std::size_t j = 0; j < val.size(); j += static_cast<std::size_t>(probe_stride)) {
            probe(j);
            last_probed = j;
        }
        if (!val.empty() && last_probed != val.size() - 1) probe(val.size() - 1);
    }
    return max_rel;
}

}  // namespace mcie::num
