#pragma once

#include <string>
#include <vector>

#include "mcie/common/maskmode.hpp"
#include "mcie/enc/encoders.hpp"
#include "mcie/instr/mask.hpp"
#include "mcie/instr/types.hpp"
#include "mcie/num/nn.hpp"

namespace mcie::saca {

struct SacaConfig {
    int d = 32;          // model width
    int n_freq = 8;      // frequency bands per box coordinate
    int n_queries = 2;   // learnable queries pooling each box
    int n_blocks = 2;    // cross blocks in the box pooler
    MaskMode mask_mode = MaskMode::Literal;
};

// Lifts a box to a [1, 4*2K] feature row: coordinates in order
// (x0, y0, x1, y1), K bands per coordinate at f_k = 2^(k-1), each band
// contributing sin(2*pi*c*f_k) then cos(2*pi*c*f_k). Pure trigonometry;
// callers are responsible for box validity.
num::Tensor fourier_encode(const instr::BBox& box, int n_freq);

// M' = M * exp(-t / t_total) over the h*w cells, row-major.
std::vector<double> timestep_mask(const instr::Mask& m, double t, double t_total);

// Learnable-query pooling over the lifted box features: [n_queries, d].
class BoxEncoder {
public:
    BoxEncoder() = default;
    BoxEncoder(num::ParamRegistry& reg, const std::string& name, const SacaConfig& cfg,
               Rng& rng);
    num::Tensor spatial_tokens(const instr::BBox& box) const;

private:
    num::LinearLayer lift_;
    num::QueryPooler pooler_;
    int n_freq_ = 8;
};

// Query/key/value maps for one masked cross-attention site. Key bias is
// omitted: a per-key constant shifts every logit in a row equally and the
// softmax cancels it.
struct SacaProjections {
    num::LinearLayer wq, wk, wv;
    SacaProjections() = default;
    SacaProjections(num::ParamRegistry& reg, const std::string& name, int d, Rng& rng);
};

// Softmax weights of the grid rows over one condition's tokens, after mask
// handling but before any output gating. Exposed for inspection dumps.
num::Tensor attention_rows(const SacaProjections& proj, const num::Tensor& z,
                           const num::Tensor& condition, const std::vector<double>& mask01,
                           double t, double t_total, MaskMode mode);

// Per-instruction masked cross-attention. z is [n, d]; conditions[i] is the
// token block C_i; masks01[i] the {0,1} query mask of length n. Each covered
// row averages its instructions' attention outputs; uncovered rows are exact
// zero.
num::Tensor masked_instruction_attention(const SacaProjections& proj, const num::Tensor& z,
                                         const std::vector<num::Tensor>& conditions,
                                         const std::vector<std::vector<double>>& masks01,
                                         double t, double t_total, MaskMode mode);

// Spatial-aware cross-attention: text spans plus pooled box tokens form one
// condition per sub-instruction; grid cells attend only within their masks.
class Saca {
public:
    Saca(num::ParamRegistry& reg, const std::string& name, const SacaConfig& cfg, Rng& rng);

    const SacaConfig& config() const { return cfg_; }
    const BoxEncoder& box_encoder() const { return box_enc_; }
    const SacaProjections& projections() const { return proj_; }

    // C_i: the sub's text token rows stacked with its pooled box tokens.
    num::Tensor build_condition(const enc::EncodedInstructionSet& texts, std::size_t i,
                                const instr::BBox& box) const;
    std::vector<num::Tensor> build_conditions(const instr::ComplexInstruction& ins,
                                              const enc::EncodedInstructionSet& texts) const;

    // z: [h*w, d] grid features at diffusion time t of t_total.
    num::Tensor forward(const num::Tensor& z, const instr::ComplexInstruction& ins,
                        const enc::EncodedInstructionSet& texts, int h, int w, double t,
                        double t_total) const;

private:
    SacaConfig cfg_;
    BoxEncoder box_enc_;
    SacaProjections proj_;
};

}  // namespace mcie::saca
