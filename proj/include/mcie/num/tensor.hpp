#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mcie/common/error.hpp"
#include "mcie/common/rng.hpp"

namespace mcie::num {

namespace detail {

struct Node {
    std::vector<int> shape;
    std::vector<double> value;
    std::vector<double> grad;  // allocated lazily on first backward touch
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this node's grad and accumulates into the parents' grads.
    std::function<void(Node&)> backprop;

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

#ifdef MCIE_FINITE_CHECKS
void check_finite(const char* op, const std::vector<double>& v);
#else
inline void check_finite(const char*, const std::vector<double>&) {}
#endif

}  // namespace detail

// Dense row-major tensor of 64-bit floats with optional reverse-mode
// gradient tracking. Handles share storage; values are immutable after
// construction except through mutable_value() on leaves (parameter
// updates and checkpoint loads) and the grad buffer.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape);
    static Tensor constant(std::vector<int> shape, double v);
    static Tensor from_vector(std::vector<int> shape, std::vector<double> data);
    static Tensor scalar(double v);
    static Tensor randn(std::vector<int> shape, Rng& rng, double stddev = 1.0);

    bool defined() const { return node_ != nullptr; }

    const std::vector<int>& shape() const { return node_->shape; }
    int ndim() const { return static_cast<int>(node_->shape.size()); }
    int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
    std::size_t size() const { return node_->value.size(); }
    // 2-D accessors.
    int rows() const;
    int cols() const;

    const std::vector<double>& value() const { return node_->value; }
    double scalar_value() const;
    double at(int i) const { return node_->value[static_cast<std::size_t>(i)]; }
    double at(int r, int c) const { return node_->value[static_cast<std::size_t>(r) * cols() + c]; }

    // Leaf-only mutation (optimizer steps, checkpoint load, gradcheck probes).
    std::vector<double>& mutable_value();

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool v);

    bool has_grad() const { return defined() && !node_->grad.empty(); }
    const std::vector<double>& grad() const;
    void zero_grad() { if (node_) node_->grad.assign(node_->value.size(), 0.0); }

    // Value copy with no graph history.
    Tensor detach() const;

    std::string shape_str() const;
    static std::string shape_str(const std::vector<int>& shape);

    const std::shared_ptr<detail::Node>& node() const { return node_; }
    static Tensor wrap(std::shared_ptr<detail::Node> n) { return Tensor(std::move(n)); }

private:
    explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
    std::shared_ptr<detail::Node> node_;
};

// Accumulates d(loss)/d(leaf) into every reachable tracked tensor's grad.
// loss must be a single-element tensor. One call per constructed graph;
// parameter grads accumulate across calls until zeroed.
void backward(const Tensor& loss);

// While alive, newly created ops record no graph (inference mode).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

bool grad_enabled();

}  // namespace mcie::num
