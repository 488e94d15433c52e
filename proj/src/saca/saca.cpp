#include "mcie/saca/saca.hpp"

#include <cmath>
#include <cstddef>
#include <utility>

namespace mcie::saca {

using num::Tensor;

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

void check_time(double t, double t_total) {
    if (!(t_total > 0.0))
        throw contract_error("attention time: t_total must be positive, got " +
                             std::to_string(t_total));
    if (!(t >= 0.0 && t <= t_total))
        throw contract_error("attention time: t=" + std::to_string(t) + " outside [0, " +
                             std::to_string(t_total) + "]");
}

// Core of attention_rows with the query projection precomputed, so the
// multi-instruction path projects z once.
Tensor attention_rows_from_q(const Tensor& q, const Tensor& k, const std::vector<double>& mask01,
                             double t, double t_total, MaskMode mode) {
    check_time(t, t_total);
    const int n = q.rows();
    if (static_cast<int>(mask01.size()) != n)
        throw contract_error("attention mask length " + std::to_string(mask01.size()) +
                             " does not match " + std::to_string(n) + " query rows");
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.cols()));
    Tensor logits = num::scale(num::matmul_nt(q, k), inv_sqrt_d);
    const double decay = std::exp(-t / t_total);
    if (mode == MaskMode::Literal) {
        std::vector<double> decayed(mask01);
        for (double& x : decayed) x *= decay;
        return num::softmax_rows(num::scale_rows(logits, decayed));
    }
    const int nk = k.rows();
    std::vector<double> shift(static_cast<std::size_t>(n) * nk, 0.0);
    for (int r = 0; r < n; ++r) {
        if (mask01[static_cast<std::size_t>(r)] != 0.0) continue;
        for (int j = 0; j < nk; ++j) shift[static_cast<std::size_t>(r) * nk + j] = -1e9;
    }
    Tensor probs = num::softmax_rows(num::add(logits, Tensor::from_vector({n, nk}, shift)));
    return num::normalize_rows(num::scale(probs, decay));
}

}  // namespace

Tensor fourier_encode(const instr::BBox& box, int n_freq) {
    if (n_freq < 1)
        throw contract_error("fourier_encode: n_freq must be >= 1, got " +
                             std::to_string(n_freq));
    const double coords[4] = {box.x0, box.y0, box.x1, box.y1};
    std::vector<double> v(static_cast<std::size_t>(4) * 2 * n_freq);
    std::size_t idx = 0;
    for (double c : coords) {
        for (int k = 0; k < n_freq; ++k) {
            const double phase = kTwoPi * c * std::ldexp(1.0, k);
            v[idx++] = std::sin(phase);
            v[idx++] = std::cos(phase);
        }
    }
    return Tensor::from_vector({1, 8 * n_freq}, std::move(v));
}

std::vector<double> timestep_mask(const instr::Mask& m, double t, double t_total) {
    check_time(t, t_total);
    const double decay = std::exp(-t / t_total);
    std::vector<double> out(m.grid.size(), 0.0);
    for (std::size_t i = 0; i < m.grid.size(); ++i)
        if (m.grid[i]) out[i] = decay;
    return out;
}

BoxEncoder::BoxEncoder(num::ParamRegistry& reg, const std::string& name, const SacaConfig& cfg,
                       Rng& rng)
    : lift_(reg, name + ".lift", 8 * cfg.n_freq, cfg.d, rng),
      pooler_(reg, name + ".pool", cfg.n_queries, cfg.d, cfg.n_blocks, rng),
      n_freq_(cfg.n_freq) {}

Tensor BoxEncoder::spatial_tokens(const instr::BBox& box) const {
    return pooler_(lift_(fourier_encode(box, n_freq_)));
}

SacaProjections::SacaProjections(num::ParamRegistry& reg, const std::string& name, int d,
                                 Rng& rng)
    : wq(reg, name + ".wq", d, d, rng),
      wk(reg, name + ".wk", d, d, rng, false),
      wv(reg, name + ".wv", d, d, rng) {}

Tensor attention_rows(const SacaProjections& proj, const Tensor& z, const Tensor& condition,
                      const std::vector<double>& mask01, double t, double t_total,
                      MaskMode mode) {
    return attention_rows_from_q(proj.wq(z), proj.wk(condition), mask01, t, t_total, mode);
}

Tensor masked_instruction_attention(const SacaProjections& proj, const Tensor& z,
                                    const std::vector<Tensor>& conditions,
                                    const std::vector<std::vector<double>>& masks01,
                                    double t, double t_total, MaskMode mode) {
    if (conditions.empty())
        throw contract_error("masked attention needs at least one instruction");
    if (conditions.size() != masks01.size())
        throw contract_error("masked attention: " + std::to_string(conditions.size()) +
                             " conditions vs " + std::to_string(masks01.size()) + " masks");
    Tensor q = proj.wq(z);
    std::vector<Tensor> parts;
    parts.reserve(conditions.size());
    for (std::size_t i = 0; i < conditions.size(); ++i) {
        Tensor probs =
            attention_rows_from_q(q, proj.wk(conditions[i]), masks01[i], t, t_total, mode);
        parts.push_back(num::matmul(probs, proj.wv(conditions[i])));
    }
    return num::masked_average_rows(parts, masks01);
}

Saca::Saca(num::ParamRegistry& reg, const std::string& name, const SacaConfig& cfg, Rng& rng)
    : cfg_(cfg),
      box_enc_(reg, name + ".box", cfg, rng),
      proj_(reg, name + ".attn", cfg.d, rng) {}

Tensor Saca::build_condition(const enc::EncodedInstructionSet& texts, std::size_t i,
                             const instr::BBox& box) const {
    if (i >= texts.spans.size())
        throw contract_error("condition index " + std::to_string(i) + " out of range for " +
                             std::to_string(texts.spans.size()) + " spans");
    const auto [start, len] = texts.spans[i];
    Tensor text_rows = num::slice_rows(texts.tokens, start, len);
    return num::concat_rows({text_rows, box_enc_.spatial_tokens(box)});
}

std::vector<Tensor> Saca::build_conditions(const instr::ComplexInstruction& ins,
                                           const enc::EncodedInstructionSet& texts) const {
    if (ins.subs.size() != texts.spans.size())
        throw contract_error("instruction has " + std::to_string(ins.subs.size()) +
                             " subs but encoding has " + std::to_string(texts.spans.size()) +
                             " spans");
    std::vector<Tensor> out;
    out.reserve(ins.subs.size());
    for (std::size_t i = 0; i < ins.subs.size(); ++i)
        out.push_back(build_condition(texts, i, ins.subs[i].bbox));
    return out;
}

Tensor Saca::forward(const Tensor& z, const instr::ComplexInstruction& ins,
                     const enc::EncodedInstructionSet& texts, int h, int w, double t,
                     double t_total) const {
    if (z.rows() != h * w)
        throw contract_error("grid features have " + std::to_string(z.rows()) + " rows, want " +
                             std::to_string(h) + "*" + std::to_string(w));
    if (z.cols() != cfg_.d)
        throw contract_error("grid features width " + std::to_string(z.cols()) +
                             " does not match model width " + std::to_string(cfg_.d));
    std::vector<Tensor> conditions = build_conditions(ins, texts);
    std::vector<std::vector<double>> masks01;
    masks01.reserve(ins.subs.size());
    for (const auto& sub : ins.subs)
        masks01.push_back(instr::mask_to_rowvec(instr::rasterize(sub.bbox, h, w)));
    return masked_instruction_attention(proj_, z, conditions, masks01, t, t_total,
                                        cfg_.mask_mode);
}

}  // namespace mcie::saca
