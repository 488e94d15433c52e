#include "mcie/num/nn.hpp"

#include <cmath>

namespace mcie::num {

Tensor ParamRegistry::add(const std::string& name, Tensor t) {
    if (index_.count(name)) throw contract_error("duplicate parameter name: " + name);
    t.set_requires_grad(true);
    index_[name] = entries_.size();
    entries_.emplace_back(name, t);
    return t;
}

const Tensor& ParamRegistry::find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw contract_error("unknown parameter: " + name);
    return entries_[it->second].second;
}

std::size_t ParamRegistry::total_values() const {
    std::size_t n = 0;
    for (const auto& [name, t] : entries_) n += t.size();
    return n;
}

void ParamRegistry::zero_grad() {
    for (auto& [name, t] : entries_) t.zero_grad();
}

LinearLayer::LinearLayer(ParamRegistry& reg, const std::string& name, int in, int out, Rng& rng,
                         bool with_bias) {
    w = reg.add(name + ".w", Tensor::randn({out, in}, rng, 1.0 / std::sqrt(static_cast<double>(in))));
    // Softmax shift-invariance makes a key-projection bias a provable no-op,
    // so attention layers register none.
    if (with_bias) b = reg.add(name + ".b", Tensor::zeros({out}));
}

LayerNormLayer::LayerNormLayer(ParamRegistry& reg, const std::string& name, int dim) {
    gamma = reg.add(name + ".g", Tensor::constant({dim}, 1.0));
    beta = reg.add(name + ".b", Tensor::zeros({dim}));
}

MlpLayer::MlpLayer(ParamRegistry& reg, const std::string& name, int dim, int hidden, Rng& rng)
    : fc1(reg, name + ".fc1", dim, hidden, rng), fc2(reg, name + ".fc2", hidden, dim, rng) {}

Tensor attend(const Tensor& q, const Tensor& k, const Tensor& v) {
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.cols()));
    Tensor probs = softmax_rows(scale(matmul_nt(q, k), inv_sqrt_d));
    return matmul(probs, v);
}

TransformerBlock::TransformerBlock(ParamRegistry& reg, const std::string& name, int dim, Rng& rng)
    : ln1(reg, name + ".ln1", dim),
      ln2(reg, name + ".ln2", dim),
      wq(reg, name + ".wq", dim, dim, rng),
      wk(reg, name + ".wk", dim, dim, rng, false),
      wv(reg, name + ".wv", dim, dim, rng),
      wo(reg, name + ".wo", dim, dim, rng),
      mlp(reg, name + ".mlp", dim, 4 * dim, rng),
      dim(dim) {}

Tensor TransformerBlock::operator()(const Tensor& x) const {
    Tensor h = ln1(x);
    Tensor a = wo(attend(wq(h), wk(h), wv(h)));
    Tensor y = add(x, a);
    return add(y, mlp(ln2(y)));
}

CrossBlock::CrossBlock(ParamRegistry& reg, const std::string& name, int dim, Rng& rng)
    : ln1(reg, name + ".ln1", dim),
      ln2(reg, name + ".ln2", dim),
      wq(reg, name + ".wq", dim, dim, rng),
      wk(reg, name + ".wk", dim, dim, rng, false),
      wv(reg, name + ".wv", dim, dim, rng),
      wo(reg, name + ".wo", dim, dim, rng),
      mlp(reg, name + ".mlp", dim, 4 * dim, rng),
      dim(dim) {}

Tensor CrossBlock::operator()(const Tensor& x, const Tensor& ctx) const {
    Tensor a = wo(attend(wq(ln1(x)), wk(ctx), wv(ctx)));
    Tensor y = add(x, a);
    return add(y, mlp(ln2(y)));
}

QueryPooler::QueryPooler(ParamRegistry& reg, const std::string& name, int n_queries, int dim,
                         int n_blocks, Rng& rng) {
    queries = reg.add(name + ".queries", Tensor::randn({n_queries, dim}, rng, 0.02));
    blocks.reserve(static_cast<std::size_t>(n_blocks));
    for (int i = 0; i < n_blocks; ++i) {
        blocks.emplace_back(reg, name + ".block" + std::to_string(i), dim, rng);
    }
}

Tensor QueryPooler::operator()(const Tensor& ctx) const {
    Tensor x = queries;
    for (const CrossBlock& blk : blocks) x = blk(x, ctx);
    return x;
}

double clip_grad_norm(ParamRegistry& reg, double max_norm) {
    double sq = 0.0;
    for (const auto& [name, t] : reg.entries()) {
        if (!t.has_grad()) continue;
        for (double g : t.grad()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const double s = max_norm / norm;
        for (const auto& [name, t] : reg.entries()) {
            if (!t.has_grad()) continue;
            for (double& g : t.node()->grad) g *= s;
        }
    }
    return norm;
}

Adam::Adam(ParamRegistry& reg, double lr, double beta1, double beta2, double eps)
    : reg_(&reg), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
    slots_.resize(reg.entries().size());
    for (std::size_t i = 0; i < slots_.size(); ++i) {
        const std::size_t n = reg.entries()[i].second.size();
        slots_[i].m.assign(n, 0.0);
        slots_[i].v.assign(n, 0.0);
    }
}

void Adam::step() {
    ++step_count_;
    const double bc1 = 1.0 - std::pow(b1_, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(b2_, static_cast<double>(step_count_));
    for (std::size_t i = 0; i < slots_.size(); ++i) {
        Tensor t = reg_->entries()[i].second;
        if (!t.has_grad()) continue;
        const auto& g = t.grad();
        auto& val = t.mutable_value();
        auto& m = slots_[i].m;
        auto& v = slots_[i].v;
        for (std::size_t j = 0; j < val.size(); ++j) {
            m[j] = b1_ * m[j] + (1.0 - b1_) * g[j];
            v[j] = b2_ * v[j] + (1.0 - b2_) * g[j] * g[j];
            const double mh = m[j] / bc1;
            const double vh = v[j] / bc2;
            val[j] -= lr_ * mh / (std::sqrt(vh) + eps_);
        }
    }
}

}  // namespace mcie::num
