#include "mcie/bcca/bcca.hpp"

#include <cmath>
#include <cstddef>

namespace mcie::bcca {

using num::Tensor;

SourceEncoder::SourceEncoder(num::ParamRegistry& reg, const std::string& name,
                             const BccaConfig& cfg, int visual_width, Rng& rng)
    : fc1_(reg, name + ".fc1", visual_width, cfg.d, rng),
      fc2_(reg, name + ".fc2", cfg.d, cfg.d, rng),
      pooler_(reg, name + ".pool", cfg.n_queries, cfg.d, cfg.n_blocks, rng),
      visual_width_(visual_width) {}

Tensor SourceEncoder::features_from_tokens(const Tensor& visual_tokens) const {
    if (visual_tokens.cols() != visual_width_)
        throw contract_error("source tokens width " + std::to_string(visual_tokens.cols()) +
                             " does not match configured visual width " +
                             std::to_string(visual_width_));
    return pooler_(fc2_(num::gelu(fc1_(visual_tokens))));
}

BccaProjections::BccaProjections(num::ParamRegistry& reg, const std::string& name, int d,
                                 Rng& rng)
    : wq(reg, name + ".wq", d, d, rng),
      wk(reg, name + ".wk", d, d, rng, false),
      wv(reg, name + ".wv", d, d, rng) {}

Tensor background_attention(const BccaProjections& proj, const Tensor& z, const Tensor& f,
                            const std::vector<double>& union01, MaskMode mode) {
    const int n = z.rows();
    if (static_cast<int>(union01.size()) != n)
        throw contract_error("union mask length " + std::to_string(union01.size()) +
                             " does not match " + std::to_string(n) + " grid rows");
    std::vector<double> complement(union01.size());
    for (std::size_t i = 0; i < union01.size(); ++i)
        complement[i] = union01[i] == 0.0 ? 1.0 : 0.0;

    Tensor logits = num::scale(num::matmul_nt(proj.wq(z), proj.wk(f)),
                               1.0 / std::sqrt(static_cast<double>(z.cols())));
    if (mode == MaskMode::Literal) logits = num::scale_rows(logits, complement);
    Tensor out = num::matmul(num::softmax_rows(logits), proj.wv(f));
    return num::zero_rows_where(out, complement);
}

Bcca::Bcca(num::ParamRegistry& reg, const std::string& name, const BccaConfig& cfg,
           const enc::VisualEncoder* visual, Rng& rng)
    : cfg_(cfg),
      src_enc_(reg, name + ".src", cfg, visual ? visual->width() : cfg.d, rng),
      proj_(reg, name + ".attn", cfg.d, rng),
      visual_(visual) {
    if (!visual_) throw contract_error("background pathway needs a visual encoder");
}

Tensor Bcca::background_features(const io::Image& src) const {
    return src_enc_.features_from_tokens(visual_->encode(src));
}

Tensor Bcca::features_from_tokens(const Tensor& visual_tokens) const {
    return src_enc_.features_from_tokens(visual_tokens);
}

Tensor Bcca::forward(const Tensor& z, const Tensor& f, const instr::Mask& m_union) const {
    if (z.rows() != m_union.h * m_union.w)
        throw contract_error("grid features have " + std::to_string(z.rows()) +
                             " rows but union mask is " + std::to_string(m_union.h) + "x" +
                             std::to_string(m_union.w));
    if (z.cols() != cfg_.d)
        throw contract_error("grid features width " + std::to_string(z.cols()) +
                             " does not match model width " + std::to_string(cfg_.d));
    if (f.rows() != cfg_.n_queries || f.cols() != cfg_.d)
        throw contract_error("source summary is " + f.shape_str() + ", want [" +
                             std::to_string(cfg_.n_queries) + ", " + std::to_string(cfg_.d) +
                             "]");
    return background_attention(proj_, z, f, instr::mask_to_rowvec(m_union), cfg_.mask_mode);
}

}  // namespace mcie::bcca
