#include "mcie/num/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

namespace mcie::num {

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

Tensor make_out(const char* name, std::vector<int> shape, std::vector<double> value,
                const std::vector<NodePtr>& parents, std::function<void(Node&)> bp) {
    detail::check_finite(name, value);
    auto out = std::make_shared<Node>();
    out->shape = std::move(shape);
    out->value = std::move(value);
    if (grad_enabled()) {
        bool any = false;
        for (const auto& p : parents) any = any || p->requires_grad;
        if (any) {
            out->requires_grad = true;
            for (const auto& p : parents) {
                if (p->requires_grad) out->parents.push_back(p);
            }
            out->backprop = std::move(bp);
        }
    }
    return Tensor::wrap(out);
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw contract_error(std::string(op) + ": shape mismatch " + a.shape_str() +
                             " vs " + b.shape_str());
    }
}

void require_2d(const char* op, const Tensor& a) {
    if (a.ndim() != 2) {
        throw contract_error(std::string(op) + ": needs a 2-d tensor, got " + a.shape_str());
    }
}

void axpy(double s, const std::vector<double>& x, std::vector<double>& y) {
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += s * x[i];
}

}  // namespace

namespace detail {

void mm_nn_acc(const double* a, const double* b, double* out, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<std::size_t>(i) * k;
        double* orow = out + static_cast<std::size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
}

void mm_nt_acc(const double* a, const double* b, double* out, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<std::size_t>(i) * k;
        double* orow = out + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* brow = b + static_cast<std::size_t>(j) * k;
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
            orow[j] += acc;
        }
    }
}

void mm_tn_acc(const double* a, const double* b, double* out, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<std::size_t>(i) * k;
        const double* brow = b + static_cast<std::size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double av = arow[p];
            double* orow = out + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
}

}  // namespace detail

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape("add", a, b);
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] + b.value()[i];
    NodePtr pa = a.node(), pb = b.node();
    return make_out("add", a.shape(), std::move(v), {pa, pb}, [pa, pb](Node& self) {
        if (pa->requires_grad) axpy(1.0, self.grad, pa->grad);
        if (pb->requires_grad) axpy(1.0, self.grad, pb->grad);
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape("sub", a, b);
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] - b.value()[i];
    NodePtr pa = a.node(), pb = b.node();
    return make_out("sub", a.shape(), std::move(v), {pa, pb}, [pa, pb](Node& self) {
        if (pa->requires_grad) axpy(1.0, self.grad, pa->grad);
        if (pb->requires_grad) axpy(-1.0, self.grad, pb->grad);
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape("mul", a, b);
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] * b.value()[i];
    NodePtr pa = a.node(), pb = b.node();
    return make_out("mul", a.shape(), std::move(v), {pa, pb}, [pa, pb](Node& self) {
        if (pa->requires_grad) {
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                pa->grad[i] += self.grad[i] * pb->value[i];
        }
        if (pb->requires_grad) {
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                pb->grad[i] += self.grad[i] * pa->value[i];
        }
    });
}

Tensor square(const Tensor& a) {
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] * a.value()[i];
    NodePtr pa = a.node();
    return make_out("square", a.shape(), std::move(v), {pa}, [pa](Node& self) {
        if (!pa->requires_grad) return;
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            pa->grad[i] += 2.0 * self.grad[i] * pa->value[i];
    });
}

Tensor exp_elem(const Tensor& a) {
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::exp(a.value()[i]);
    NodePtr pa = a.node();
    return make_out("exp", a.shape(), std::move(v), {pa}, [pa](Node& self) {
        if (!pa->requires_grad) return;
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            pa->grad[i] += self.grad[i] * self.value[i];
    });
}

Tensor relu(const Tensor& a) {
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] > 0.0 ? a.value()[i] : 0.0;
    NodePtr pa = a.node();
    return make_out("relu", a.shape(), std::move(v), {pa}, [pa](Node& self) {
        if (!pa->requires_grad) return;
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            if (pa->value[i] > 0.0) pa->grad[i] += self.grad[i];
    });
}

Tensor gelu(const Tensor& a) {
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double x = a.value()[i];
        v[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
    }
    NodePtr pa = a.node();
    return make_out("gelu", a.shape(), std::move(v), {pa}, [pa](Node& self) {
        if (!pa->requires_grad) return;
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double x = pa->value[i];
            const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
            pa->grad[i] += self.grad[i] * (cdf + x * pdf);
        }
    });
}

Tensor scale(const Tensor& a, double s) {
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] * s;
    NodePtr pa = a.node();
    return make_out("scale", a.shape(), std::move(v), {pa}, [pa, s](Node& self) {
        if (pa->requires_grad) axpy(s, self.grad, pa->grad);
    });
}

Tensor add_scalar(const Tensor& a, double s) {
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] + s;
    NodePtr pa = a.node();
    return make_out("add_scalar", a.shape(), std::move(v), {pa}, [pa](Node& self) {
        if (pa->requires_grad) axpy(1.0, self.grad, pa->grad);
    });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_2d("matmul", a);
    require_2d("matmul", b);
    if (a.cols() != b.rows()) {
        throw contract_error("matmul: inner dims differ, " + a.shape_str() + " vs " + b.shape_str());
    }
    const int m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<double> v(static_cast<std::size_t>(m) * n, 0.0);
    detail::mm_nn_acc(a.value().data(), b.value().data(), v.data(), m, k, n);
    NodePtr pa = a.node(), pb = b.node();
    return make_out("matmul", {m, n}, std::move(v), {pa, pb}, [pa, pb, m, k, n](Node& self) {
        if (pa->requires_grad)
            detail::mm_nt_acc(self.grad.data(), pb->value.data(), pa->grad.data(), m, n, k);
        if (pb->requires_grad)
            detail::mm_tn_acc(pa->value.data(), self.grad.data(), pb->grad.data(), m, k, n);
    });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require_2d("matmul_nt", a);
    require_2d("matmul_nt", b);
    if (a.cols() != b.cols()) {
        throw contract_error("matmul_nt: inner dims differ, " + a.shape_str() + " vs " + b.shape_str());
    }
    const int m = a.rows(), k = a.cols(), n = b.rows();
    std::vector<double> v(static_cast<std::size_t>(m) * n, 0.0);
    detail::mm_nt_acc(a.value().data(), b.value().data(), v.data(), m, k, n);
    NodePtr pa = a.node(), pb = b.node();
    return make_out("matmul_nt", {m, n}, std::move(v), {pa, pb}, [pa, pb, m, k, n](Node& self) {
        if (pa->requires_grad)
            detail::mm_nn_acc(self.grad.data(), pb->value.data(), pa->grad.data(), m, n, k);
        if (pb->requires_grad)
            detail::mm_tn_acc(self.grad.data(), pa->value.data(), pb->grad.data(), m, n, k);
    });
}

Tensor transpose(const Tensor& a) {
    require_2d("transpose", a);
    const int m = a.rows(), n = a.cols();
    std::vector<double> v(a.size());
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            v[static_cast<std::size_t>(j) * m + i] = a.value()[static_cast<std::size_t>(i) * n + j];
    NodePtr pa = a.node();
    return make_out("transpose", {n, m}, std::move(v), {pa}, [pa, m, n](Node& self) {
        if (!pa->requires_grad) return;
        for (int j = 0; j < n; ++j)
            for (int i = 0; i < m; ++i)
                pa->grad[static_cast<std::size_t>(i) * n + j] +=
                    self.grad[static_cast<std::size_t>(j) * m + i];
    });
}

Tensor softmax_rows(const Tensor& a) {
    require_2d("softmax_rows", a);
    const int m = a.rows(), n = a.cols();
    std::vector<double> v(a.size());
    for (int i = 0; i < m; ++i) {
        const double* row = a.value().data() + static_cast<std::size_t>(i) * n;
        double* out = v.data() + static_cast<std::size_t>(i) * n;
        double mx = row[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int j = 0; j < n; ++j) {
            out[j] = std::exp(row[j] - mx);
            sum += out[j];
        }
        const double inv = 1.0 / sum;
        for (int j = 0; j < n; ++j) out[j] *= inv;
    }
    NodePtr pa = a.node();
    return make_out("softmax_rows", a.shape(), std::move(v), {pa}, [pa, m, n](Node& self) {
        if (!pa->requires_grad) return;
        for (int i = 0; i < m; ++i) {
            const double* p = self.value.data() + static_cast<std::size_t>(i) * n;
            const double* g = self.grad.data() + static_cast<std::size_t>(i) * n;
            double dot = 0.0;
            for (int j = 0; j < n; ++j) dot += p[j] * g[j];
            double* dst = pa->grad.data() + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) dst[j] += p[j] * (g[j] - dot);
        }
    });
}

Tensor normalize_rows(const Tensor& a) {
    require_2d("normalize_rows", a);
    const int m = a.rows(), n = a.cols();
    std::vector<double> v(a.size());
    std::vector<double> inv_sums(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
        const double* row = a.value().data() + static_cast<std::size_t>(i) * n;
        double sum = 0.0;
        for (int j = 0; j < n; ++j) sum += row[j];
        if (std::abs(sum) < 1e-300)
            throw numeric_error("normalize_rows: row " + std::to_string(i) + " sums to zero");
        const double inv = 1.0 / sum;
        inv_sums[static_cast<std::size_t>(i)] = inv;
        double* out = v.data() + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) out[j] = row[j] * inv;
    }
    NodePtr pa = a.node();
    return make_out("normalize_rows", a.shape(), std::move(v), {pa},
                    [pa, inv_sums, m, n](Node& self) {
        if (!pa->requires_grad) return;
        for (int i = 0; i < m; ++i) {
            const double* y = self.value.data() + static_cast<std::size_t>(i) * n;
            const double* g = self.grad.data() + static_cast<std::size_t>(i) * n;
            double dot = 0.0;
            for (int j = 0; j < n; ++j) dot += y[j] * g[j];
            const double inv = inv_sums[static_cast<std::size_t>(i)];
            double* dst = pa->grad.data() + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) dst[j] += (g[j] - dot) * inv;
        }
    });
}

Tensor sum_all(const Tensor& a) {
    double s = 0.0;
    for (double x : a.value()) s += x;
    NodePtr pa = a.node();
    return make_out("sum_all", {1}, {s}, {pa}, [pa](Node& self) {
        if (!pa->requires_grad) return;
        const double g = self.grad[0];
        for (double& x : pa->grad) x += g;
    });
}

Tensor mean_all(const Tensor& a) {
    double s = 0.0;
    for (double x : a.value()) s += x;
    const double inv = 1.0 / static_cast<double>(a.size());
    NodePtr pa = a.node();
    return make_out("mean_all", {1}, {s * inv}, {pa}, [pa, inv](Node& self) {
        if (!pa->requires_grad) return;
        const double g = self.grad[0] * inv;
        for (double& x : pa->grad) x += g;
    });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw contract_error("concat_rows: no parts");
    const int n = parts[0].cols();
    int total = 0;
    std::vector<NodePtr> nodes;
    nodes.reserve(parts.size());
    for (const Tensor& p : parts) {
        require_2d("concat_rows", p);
        if (p.cols() != n) {
            throw contract_error("concat_rows: column mismatch " + parts[0].shape_str() +
                                 " vs " + p.shape_str());
        }
        total += p.rows();
        nodes.push_back(p.node());
    }
    std::vector<double> v;
    v.reserve(static_cast<std::size_t>(total) * n);
    for (const Tensor& p : parts) v.insert(v.end(), p.value().begin(), p.value().end());
    return make_out("concat_rows", {total, n}, std::move(v), nodes, [nodes](Node& self) {
        std::size_t off = 0;
        for (const NodePtr& p : nodes) {
            if (p->requires_grad) {
                for (std::size_t i = 0; i < p->value.size(); ++i)
                    p->grad[i] += self.grad[off + i];
            }
            off += p->value.size();
        }
    });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
    require_2d("concat_cols", a);
    require_2d("concat_cols", b);
    if (a.rows() != b.rows()) {
        throw contract_error("concat_cols: row mismatch " + a.shape_str() + " vs " + b.shape_str());
    }
    const int m = a.rows(), ca = a.cols(), cb = b.cols();
    std::vector<double> v(static_cast<std::size_t>(m) * (ca + cb));
    for (int i = 0; i < m; ++i) {
        std::memcpy(v.data() + static_cast<std::size_t>(i) * (ca + cb),
                    a.value().data() + static_cast<std::size_t>(i) * ca, sizeof(double) * ca);
        std::memcpy(v.data() + static_cast<std::size_t>(i) * (ca + cb) + ca,
                    b.value().data() + static_cast<std::size_t>(i) * cb, sizeof(double) * cb);
    }
    NodePtr pa = a.node(), pb = b.node();
    return make_out("concat_cols", {m, ca + cb}, std::move(v), {pa, pb},
                    [pa, pb, m, ca, cb](Node& self) {
        for (int i = 0; i < m; ++i) {
            const double* g = self.grad.data() + static_cast<std::size_t>(i) * (ca + cb);
            if (pa->requires_grad) {
                double* dst = pa->grad.data() + static_cast<std::size_t>(i) * ca;
                for (int j = 0; j < ca; ++j) dst[j] += g[j];
            }
            if (pb->requires_grad) {
                double* dst = pb->grad.data() + static_cast<std::size_t>(i) * cb;
                for (int j = 0; j < cb; ++j) dst[j] += g[ca + j];
            }
        }
    });
}

Tensor slice_rows(const Tensor& a, int begin, int count) {
    require_2d("slice_rows", a);
    if (begin < 0 || count <= 0 || begin + count > a.rows()) {
        throw contract_error("slice_rows: range [" + std::to_string(begin) + ", " +
                             std::to_string(begin + count) + ") outside " + a.shape_str());
    }
    const int n = a.cols();
    std::vector<double> v(a.value().begin() + static_cast<std::size_t>(begin) * n,
                          a.value().begin() + static_cast<std::size_t>(begin + count) * n);
    NodePtr pa = a.node();
    return make_out("slice_rows", {count, n}, std::move(v), {pa}, [pa, begin, n](Node& self) {
        if (!pa->requires_grad) return;
        double* dst = pa->grad.data() + static_cast<std::size_t>(begin) * n;
        for (std::size_t i = 0; i < self.grad.size(); ++i) dst[i] += self.grad[i];
    });
}

Tensor reshape(const Tensor& a, std::vector<int> shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d > 0 ? d : 0);
    if (n != a.size()) {
        throw contract_error("reshape: cannot view " + a.shape_str() + " as " +
                             Tensor::shape_str(shape));
    }
    NodePtr pa = a.node();
    std::vector<double> v = a.value();
    return make_out("reshape", std::move(shape), std::move(v), {pa}, [pa](Node& self) {
        if (pa->requires_grad) axpy(1.0, self.grad, pa->grad);
    });
}

Tensor add_rowvec(const Tensor& a, const Tensor& b) {
    require_2d("add_rowvec", a);
    if (b.ndim() != 1 || b.dim(0) != a.cols()) {
        throw contract_error("add_rowvec: bias shape " + b.shape_str() + " does not match " +
                             a.shape_str());
    }
    const int m = a.rows(), n = a.cols();
    std::vector<double> v(a.size());
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            v[static_cast<std::size_t>(i) * n + j] =
                a.value()[static_cast<std::size_t>(i) * n + j] + b.value()[static_cast<std::size_t>(j)];
    NodePtr pa = a.node(), pb = b.node();
    return make_out("add_rowvec", a.shape(), std::move(v), {pa, pb}, [pa, pb, m, n](Node& self) {
        if (pa->requires_grad) axpy(1.0, self.grad, pa->grad);
        if (pb->requires_grad) {
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    pb->grad[static_cast<std::size_t>(j)] +=
                        self.grad[static_cast<std::size_t>(i) * n + j];
        }
    });
}

Tensor scale_rows(const Tensor& a, const std::vector<double>& v) {
    require_2d("scale_rows", a);
    if (static_cast<int>(v.size()) != a.rows()) {
        throw contract_error("scale_rows: have " + std::to_string(v.size()) + " factors for " +
                             a.shape_str());
    }
    const int m = a.rows(), n = a.cols();
    std::vector<double> out(a.size());
    for (int i = 0; i < m; ++i) {
        const double s = v[static_cast<std::size_t>(i)];
        for (int j = 0; j < n; ++j)
            out[static_cast<std::size_t>(i) * n + j] =
                a.value()[static_cast<std::size_t>(i) * n + j] * s;
    }
    NodePtr pa = a.node();
    return make_out("scale_rows", a.shape(), std::move(out), {pa}, [pa, v, m, n](Node& self) {
        if (!pa->requires_grad) return;
        for (int i = 0; i < m; ++i) {
            const double s = v[static_cast<std::size_t>(i)];
            for (int j = 0; j < n; ++j)
                pa->grad[static_cast<std::size_t>(i) * n + j] +=
                    self.grad[static_cast<std::size_t>(i) * n + j] * s;
        }
    });
}

Tensor zero_rows_where(const Tensor& a, const std::vector<double>& keep) {
    require_2d("zero_rows_where", a);
    if (static_cast<int>(keep.size()) != a.rows()) {
        throw contract_error("zero_rows_where: have " + std::to_string(keep.size()) +
                             " flags for " + a.shape_str());
    }
    const int m = a.rows(), n = a.cols();
    std::vector<double> out(a.size(), 0.0);
    for (int i = 0; i < m; ++i) {
        if (keep[static_cast<std::size_t>(i)] == 0.0) continue;
        std::memcpy(out.data() + static_cast<std::size_t>(i) * n,
                    a.value().data() + static_cast<std::size_t>(i) * n, sizeof(double) * n);
    }
    NodePtr pa = a.node();
    return make_out("zero_rows_where", a.shape(), std::move(out), {pa}, [pa, keep, m, n](Node& self) {
        if (!pa->requires_grad) return;
        for (int i = 0; i < m; ++i) {
            if (keep[static_cast<std::size_t>(i)] == 0.0) continue;
            for (int j = 0; j < n; ++j)
                pa->grad[static_cast<std::size_t>(i) * n + j] +=
                    self.grad[static_cast<std::size_t>(i) * n + j];
        }
    });
}

Tensor masked_average_rows(const std::vector<Tensor>& parts,
                           const std::vector<std::vector<double>>& masks) {
    if (parts.empty() || parts.size() != masks.size()) {
        throw contract_error("masked_average_rows: " + std::to_string(parts.size()) +
                             " parts vs " + std::to_string(masks.size()) + " masks");
    }
    require_2d("masked_average_rows", parts[0]);
    const int m = parts[0].rows(), n = parts[0].cols();
    std::vector<NodePtr> nodes;
    nodes.reserve(parts.size());
    for (std::size_t i = 0; i < parts.size(); ++i) {
        require_same_shape("masked_average_rows", parts[0], parts[i]);
        if (static_cast<int>(masks[i].size()) != m) {
            throw contract_error("masked_average_rows: mask " + std::to_string(i) +
                                 " has " + std::to_string(masks[i].size()) + " rows, parts have " +
                                 std::to_string(m));
        }
        nodes.push_back(parts[i].node());
    }
    std::vector<double> count(static_cast<std::size_t>(m), 0.0);
    for (const auto& mask : masks)
        for (int r = 0; r < m; ++r) count[static_cast<std::size_t>(r)] += mask[static_cast<std::size_t>(r)];
    std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
    for (std::size_t i = 0; i < parts.size(); ++i) {
        const auto& val = parts[i].value();
        for (int r = 0; r < m; ++r) {
            if (masks[i][static_cast<std::size_t>(r)] == 0.0) continue;
            for (int j = 0; j < n; ++j)
                out[static_cast<std::size_t>(r) * n + j] += val[static_cast<std::size_t>(r) * n + j];
        }
    }
    for (int r = 0; r < m; ++r) {
        const double c = count[static_cast<std::size_t>(r)];
        if (c == 0.0) continue;
        const double inv = 1.0 / c;
        for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(r) * n + j] *= inv;
    }
    auto masks_copy = masks;
    return make_out("masked_average_rows", {m, n}, std::move(out), nodes,
                    [nodes, masks_copy = std::move(masks_copy), count = std::move(count), m, n](Node& self) {
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            if (!nodes[i]->requires_grad) continue;
            for (int r = 0; r < m; ++r) {
                if (masks_copy[i][static_cast<std::size_t>(r)] == 0.0) continue;
                const double w = 1.0 / count[static_cast<std::size_t>(r)];
                for (int j = 0; j < n; ++j)
                    nodes[i]->grad[static_cast<std::size_t>(r) * n + j] +=
                        self.grad[static_cast<std::size_t>(r) * n + j] * w;
            }
        }
    });
}

Tensor gather_rows(const Tensor& table, const std::vector<int>& indices) {
    require_2d("gather_rows", table);
    const int v_rows = table.rows(), n = table.cols();
    std::vector<double> out(indices.size() * static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const int idx = indices[i];
        if (idx < 0 || idx >= v_rows) {
            throw contract_error("gather_rows: index " + std::to_string(idx) + " outside " +
                                 table.shape_str());
        }
        std::memcpy(out.data() + i * n, table.value().data() + static_cast<std::size_t>(idx) * n,
                    sizeof(double) * n);
    }
    NodePtr pt = table.node();
    return make_out("gather_rows", {static_cast<int>(indices.size()), n}, std::move(out), {pt},
                    [pt, indices, n](Node& self) {
        if (!pt->requires_grad) return;
        for (std::size_t i = 0; i < indices.size(); ++i) {
            double* dst = pt->grad.data() + static_cast<std::size_t>(indices[i]) * n;
            const double* g = self.grad.data() + i * n;
            for (int j = 0; j < n; ++j) dst[j] += g[j];
        }
    });
}

Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta, double eps) {
    require_2d("layer_norm", a);
    const int m = a.rows(), n = a.cols();
    if (gamma.ndim() != 1 || gamma.dim(0) != n || beta.ndim() != 1 || beta.dim(0) != n) {
        throw contract_error("layer_norm: gain " + gamma.shape_str() + " / shift " +
                             beta.shape_str() + " do not match " + a.shape_str());
    }
    std::vector<double> out(a.size());
    auto xhat = std::make_shared<std::vector<double>>(a.size());
    auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
        const double* row = a.value().data() + static_cast<std::size_t>(i) * n;
        double mean = 0.0;
        for (int j = 0; j < n; ++j) mean += row[j];
        mean /= n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) {
            const double d = row[j] - mean;
            var += d * d;
        }
        var /= n;
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[static_cast<std::size_t>(i)] = is;
        for (int j = 0; j < n; ++j) {
            const double xh = (row[j] - mean) * is;
            (*xhat)[static_cast<std::size_t>(i) * n + j] = xh;
            out[static_cast<std::size_t>(i) * n + j] = gamma.value()[static_cast<std::size_t>(j)] * xh +
                                                       beta.value()[static_cast<std::size_t>(j)];
        }
    }
    NodePtr pa = a.node(), pg = gamma.node(), pb = beta.node();
    return make_out("layer_norm", a.shape(), std::move(out), {pa, pg, pb},
                    [pa, pg, pb, xhat, inv_std, m, n](Node& self) {
        for (int i = 0; i < m; ++i) {
            const double* g = self.grad.data() + static_cast<std::size_t>(i) * n;
            const double* xh = xhat->data() + static_cast<std::size_t>(i) * n;
            if (pg->requires_grad)
                for (int j = 0; j < n; ++j) pg->grad[static_cast<std::size_t>(j)] += g[j] * xh[j];
            if (pb->requires_grad)
                for (int j = 0; j < n; ++j) pb->grad[static_cast<std::size_t>(j)] += g[j];
            if (pa->requires_grad) {
                double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                for (int j = 0; j < n; ++j) {
                    const double dxh = g[j] * pg->value[static_cast<std::size_t>(j)];
                    mean_dxhat += dxh;
                    mean_dxhat_xhat += dxh * xh[j];
                }
                mean_dxhat /= n;
                mean_dxhat_xhat /= n;
                const double is = (*inv_std)[static_cast<std::size_t>(i)];
                double* dst = pa->grad.data() + static_cast<std::size_t>(i) * n;
                for (int j = 0; j < n; ++j) {
                    const double dxh = g[j] * pg->value[static_cast<std::size_t>(j)];
                    dst[j] += is * (dxh - mean_dxhat - xh[j] * mean_dxhat_xhat);
                }
            }
        }
    });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    return add_rowvec(matmul_nt(x, w), b);
}

}  // namespace mcie::num
