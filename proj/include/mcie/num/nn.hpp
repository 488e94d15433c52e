#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mcie/num/ops.hpp"
#include "mcie/num/tensor.hpp"

namespace mcie::num {

// Named parameter store. Modules register tensors at construction; the
// optimizer and checkpoint code walk entries in insertion order.
class ParamRegistry {
public:
    Tensor add(const std::string& name, Tensor t);
    const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
    const Tensor& find(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    std::size_t count() const { return entries_.size(); }
    std::size_t total_values() const;
    void zero_grad();

private:
    std::vector<std::pair<std::string, Tensor>> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

struct LinearLayer {
    Tensor w, b;
    LinearLayer() = default;
    LinearLayer(ParamRegistry& reg, const std::string& name, int in, int out, Rng& rng,
                bool with_bias = true);
    Tensor operator()(const Tensor& x) const {
        return b.defined() ? linear(x, w, b) : matmul_nt(x, w);
    }
};

struct LayerNormLayer {
    Tensor gamma, beta;
    LayerNormLayer() = default;
    LayerNormLayer(ParamRegistry& reg, const std::string& name, int dim);
    Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta); }
};

struct MlpLayer {
    LinearLayer fc1, fc2;
    MlpLayer() = default;
    MlpLayer(ParamRegistry& reg, const std::string& name, int dim, int hidden, Rng& rng);
    Tensor operator()(const Tensor& x) const { return fc2(gelu(fc1(x))); }
};

// Single-head scaled dot-product attention: rows of q attend to rows of kv.
Tensor attend(const Tensor& q, const Tensor& k, const Tensor& v);

// Pre-norm self-attention + MLP with residuals.
struct TransformerBlock {
    LayerNormLayer ln1, ln2;
    LinearLayer wq, wk, wv, wo;
    MlpLayer mlp;
    int dim = 0;
    TransformerBlock() = default;
    TransformerBlock(ParamRegistry& reg, const std::string& name, int dim, Rng& rng);
    Tensor operator()(const Tensor& x) const;
};

// Pre-norm cross-attention + MLP with residuals; x attends to ctx.
struct CrossBlock {
    LayerNormLayer ln1, ln2;
    LinearLayer wq, wk, wv, wo;
    MlpLayer mlp;
    int dim = 0;
    CrossBlock() = default;
    CrossBlock(ParamRegistry& reg, const std::string& name, int dim, Rng& rng);
    Tensor operator()(const Tensor& x, const Tensor& ctx) const;
};

// Learnable queries refined by a stack of cross blocks reading a context.
struct QueryPooler {
    Tensor queries;
    std::vector<CrossBlock> blocks;
    QueryPooler() = default;
    QueryPooler(ParamRegistry& reg, const std::string& name, int n_queries, int dim,
                int n_blocks, Rng& rng);
    Tensor operator()(const Tensor& ctx) const;
};

// Scales all grads so the global L2 norm is at most max_norm.
// Returns the pre-clip norm.
double clip_grad_norm(ParamRegistry& reg, double max_norm);

class Adam {
public:
    Adam(ParamRegistry& reg, double lr, double beta1 = 0.9, double beta2 = 0.999,
         double eps = 1e-8);
    void step();
    void zero_grad() { reg_->zero_grad(); }
    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }

private:
    struct Slot {
        std::vector<double> m, v;
    };
    ParamRegistry* reg_;
    std::vector<Slot> slots_;
    double lr_, b1_, b2_, eps_;
    long step_count_ = 0;
};

}  // namespace mcie::num
