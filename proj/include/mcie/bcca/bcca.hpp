#pragma once

#include <string>
#include <vector>

#include "mcie/common/maskmode.hpp"
#include "mcie/enc/encoders.hpp"
#include "mcie/instr/mask.hpp"
#include "mcie/instr/types.hpp"
#include "mcie/io/image.hpp"
#include "mcie/num/nn.hpp"

namespace mcie::bcca {

struct BccaConfig {
    int d = 32;          // model width
    int n_blocks = 4;    // cross blocks pooling the source features
    int n_queries = 16;  // learnable queries summarizing the source
    MaskMode mask_mode = MaskMode::Literal;
};

// Pools the source image into a fixed 16-row summary: per-patch MLP to the
// model width, then learnable-query cross attention.
class SourceEncoder {
public:
    SourceEncoder() = default;
    SourceEncoder(num::ParamRegistry& reg, const std::string& name, const BccaConfig& cfg,
                  int visual_width, Rng& rng);
    // visual_tokens: [n_patches, visual_width].
    num::Tensor features_from_tokens(const num::Tensor& visual_tokens) const;

private:
    num::LinearLayer fc1_, fc2_;
    num::QueryPooler pooler_;
    int visual_width_ = 0;
};

// Query/key/value maps for the background pathway; key bias omitted for the
// same softmax-shift reason as the instruction pathway.
struct BccaProjections {
    num::LinearLayer wq, wk, wv;
    BccaProjections() = default;
    BccaProjections(num::ParamRegistry& reg, const std::string& name, int d, Rng& rng);
};

// Cross attention of grid rows over the source summary f, restricted to the
// complement of the edited-region union. Rows inside the union are exact
// zero. Literal mode scales logits by the complement mask; additive mode
// leaves logits alone and gates outputs only.
num::Tensor background_attention(const BccaProjections& proj, const num::Tensor& z,
                                 const num::Tensor& f, const std::vector<double>& union01,
                                 MaskMode mode);

// Background-consistent cross-attention: the source-image pathway only the
// unedited cells read.
class Bcca {
public:
    Bcca(num::ParamRegistry& reg, const std::string& name, const BccaConfig& cfg,
         const enc::VisualEncoder* visual, Rng& rng);

    const BccaConfig& config() const { return cfg_; }
    const SourceEncoder& source_encoder() const { return src_enc_; }
    const BccaProjections& projections() const { return proj_; }

    // f = pooled source summary, [n_queries, d].
    num::Tensor background_features(const io::Image& src) const;
    num::Tensor features_from_tokens(const num::Tensor& visual_tokens) const;

    // z: [h*w, d] grid features; m_union: edited-region union at (h, w).
    num::Tensor forward(const num::Tensor& z, const num::Tensor& f,
                        const instr::Mask& m_union) const;

private:
    BccaConfig cfg_;
    SourceEncoder src_enc_;
    BccaProjections proj_;
    const enc::VisualEncoder* visual_;
};

}  // namespace mcie::bcca
