#include "mcie/num/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

namespace mcie::num {

namespace {

thread_local int g_no_grad_depth = 0;

std::size_t shape_numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw contract_error("tensor dims must be positive, got " + Tensor::shape_str(shape));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

}  // namespace

namespace detail {

#ifdef MCIE_FINITE_CHECKS
void check_finite(const char* op, const std::vector<double>& v) {
    for (double x : v) {
        if (!std::isfinite(x)) {
            throw numeric_error(std::string(op) + " produced a non-finite value");
        }
    }
}
#endif

}  // namespace detail

Tensor Tensor::zeros(std::vector<int> shape) {
    auto n = std::make_shared<detail::Node>();
    n->value.assign(shape_numel(shape), 0.0);
    n->shape = std::move(shape);
    return Tensor(std::move(n));
}

Tensor Tensor::constant(std::vector<int> shape, double v) {
    auto n = std::make_shared<detail::Node>();
    n->value.assign(shape_numel(shape), v);
    n->shape = std::move(shape);
    return Tensor(std::move(n));
}

Tensor Tensor::from_vector(std::vector<int> shape, std::vector<double> data) {
    if (shape_numel(shape) != data.size()) {
        throw contract_error("data size " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
    }
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v) { return from_vector({1}, {v}); }

Tensor Tensor::randn(std::vector<int> shape, Rng& rng, double stddev) {
    auto n = std::make_shared<detail::Node>();
    n->value.resize(shape_numel(shape));
    n->shape = std::move(shape);
    for (double& x : n->value) x = rng.normal() * stddev;
    return Tensor(std::move(n));
}

int Tensor::rows() const {
    if (ndim() != 2) throw contract_error("rows() needs a 2-d tensor, got " + shape_str());
    return node_->shape[0];
}

int Tensor::cols() const {
    if (ndim() != 2) throw contract_error("cols() needs a 2-d tensor, got " + shape_str());
    return node_->shape[1];
}

double Tensor::scalar_value() const {
    if (size() != 1) throw contract_error("scalar_value() needs a single element, got " + shape_str());
    return node_->value[0];
}

std::vector<double>& Tensor::mutable_value() {
    if (node_->backprop) throw contract_error("mutable_value() is leaf-only");
    return node_->value;
}

Tensor& Tensor::set_requires_grad(bool v) {
    if (v && node_->backprop) throw contract_error("set_requires_grad applies to leaves only");
    node_->requires_grad = v;
    return *this;
}

const std::vector<double>& Tensor::grad() const {
    if (!has_grad()) throw contract_error("grad() before backward()");
    return node_->grad;
}

Tensor Tensor::detach() const {
    auto n = std::make_shared<detail::Node>();
    n->shape = node_->shape;
    n->value = node_->value;
    return Tensor(std::move(n));
}

std::string Tensor::shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::string Tensor::shape_str() const { return shape_str(node_->shape); }

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1) {
        throw contract_error("backward() needs a scalar loss");
    }
    detail::Node* root = loss.node().get();

    // Iterative DFS post-order so deep graphs cannot overflow the stack.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> visited;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            detail::Node* p = node->parents[next++].get();
            if (visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (detail::Node* n : order) {
        if (n != root) n->ensure_grad();
    }
    root->grad.assign(1, 1.0);

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* n = *it;
        if (n->backprop) n->backprop(*n);
    }
    // Graph nodes release their tape once consumed; leaves keep grads.
    for (detail::Node* n : order) {
        if (n->backprop) {
            n->backprop = nullptr;
            n->parents.clear();
            n->grad.clear();
            n->grad.shrink_to_fit();
        }
    }
}

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }

bool grad_enabled() { return g_no_grad_depth == 0; }

}  // namespace mcie::num
