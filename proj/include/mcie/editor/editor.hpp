#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mcie/bcca/bcca.hpp"
#include "mcie/common/maskmode.hpp"
#include "mcie/enc/encoders.hpp"
#include "mcie/instr/types.hpp"
#include "mcie/io/image.hpp"
#include "mcie/num/nn.hpp"
#include "mcie/saca/saca.hpp"

namespace mcie::editor {

// DDPM noising schedule with a linear beta ramp. Index helpers are 1-based
// in t; betas strictly increase and alpha-bars strictly decrease.
struct DiffusionSchedule {
    int t_total = 1000;
    int sampler_steps = 20;
    std::vector<double> betas, alphas, alpha_bars;

    static DiffusionSchedule make(int t_total = 1000, double beta_start = 1e-4,
                                  double beta_end = 2e-2, int sampler_steps = 20);

    double beta(int t) const;
    double alpha_bar(int t) const;
    // sigma(t) = sqrt((1 - alpha_bar) / alpha_bar), strictly increasing.
    double sigma(int t) const;
    // Continuous inverse of sigma via log-linear interpolation between the
    // integer grid points; clamps outside [sigma(1), sigma(t_total)].
    double sigma_to_t(double s) const;
};

// Pixel space doubles as latent space at this scale: encode flattens the
// image to one row per cell, decode reshapes and clamps to [0, 1].
struct LatentCodec {
    int channels = 3;
    num::Tensor encode(const io::Image& img) const;
    io::Image decode(const num::Tensor& latent, int h, int w) const;
};

// Classic transformer timestep embedding; accepts fractional t.
num::Tensor sinusoidal_embedding(double t, int d);

// z' = lambda*fg + (1-lambda)*bg, computed literally; the degenerate
// weights reproduce the surviving input bit-for-bit.
num::Tensor fuse(const num::Tensor& fg, const num::Tensor& bg, double lambda_fuse);

struct EditorConfig {
    int d = 32;
    int n_layers = 2;
    int channels = 3;
    int grid_h = 16, grid_w = 16;
    double lambda_fuse = 0.5;
    MaskMode mask_mode = MaskMode::Literal;
    int box_freqs = 8;    // fourier bands per box coordinate
    int box_queries = 2;  // instruction-pathway pooler
    int box_blocks = 2;
    int src_queries = 16;  // background-pathway pooler
    int src_blocks = 4;
    // Compute both pathways even when lambda is degenerate; the default
    // skips the dead branch entirely.
    bool force_full_fusion = false;
};

// Per-sample conditioning, shared by every denoiser block and, during
// sampling, every step.
struct Conditioning {
    std::vector<num::Tensor> conditions;       // C_i per sub-instruction
    std::vector<std::vector<double>> masks01;  // rasterized sub masks
    instr::Mask m_union;
    std::vector<double> union01;
    num::Tensor source_summary;  // pooled source features f
};

// Denoiser block: self-attention, fused masked cross-attention, MLP, each
// residual around a pre-norm.
struct EditorBlock {
    num::LayerNormLayer ln_self, ln_cross, ln_mlp;
    num::LinearLayer wq, wk, wv, wo;
    saca::SacaProjections saca_proj;
    bcca::BccaProjections bcca_proj;
    num::MlpLayer mlp;

    EditorBlock() = default;
    EditorBlock(num::ParamRegistry& reg, const std::string& name, int d, Rng& rng);

    num::Tensor apply(const num::Tensor& x, const Conditioning& c, double t, double t_total,
                      const EditorConfig& cfg) const;
};

// The denoiser: predicts the injected noise from the noisy target latent,
// the source latent (channel concat), the decomposed instruction, and t.
class EditorModel {
public:
    EditorModel(const EditorConfig& cfg, std::uint64_t seed);

    const EditorConfig& config() const { return cfg_; }
    void set_lambda(double lambda_fuse);
    void set_force_full_fusion(bool on) { cfg_.force_full_fusion = on; }
    num::ParamRegistry& params() { return reg_; }
    const num::ParamRegistry& params() const { return reg_; }
    const enc::ToyTextEncoder& text_encoder() const { return text_enc_; }
    const std::vector<EditorBlock>& blocks() const { return blocks_; }
    const saca::BoxEncoder& box_encoder() const { return box_enc_; }
    const LatentCodec& codec() const { return codec_; }

    Conditioning condition(const io::Image& src, const instr::ComplexInstruction& ins) const;

    // Inspection dump: the first block's per-sub cross-attention, evaluated
    // with the clean source latent standing in for the current state. One
    // map per sub-instruction, one row-max per grid cell.
    std::vector<std::vector<double>> attention_heatmaps(const io::Image& src,
                                                        const instr::ComplexInstruction& ins,
                                                        double t, double t_total) const;

    // z_t, src_latent: [grid_h*grid_w, channels]; t may be fractional.
    num::Tensor predict_noise(const num::Tensor& z_t, const num::Tensor& src_latent,
                              const Conditioning& c, double t, double t_total) const;

private:
    EditorConfig cfg_;
    num::ParamRegistry reg_;
    enc::ToyTextEncoder text_enc_;
    enc::ToyVisualEncoder vis_enc_;
    LatentCodec codec_;
    num::LinearLayer input_proj_;
    saca::BoxEncoder box_enc_;
    bcca::SourceEncoder src_enc_;
    std::vector<EditorBlock> blocks_;
    num::LayerNormLayer final_ln_;
    num::LinearLayer head_;
};

struct TrainSample {
    io::Image src, tgt;
    instr::ComplexInstruction ins;
};

struct TrainOptions {
    double lr = 1e-3;
    int batch_size = 4;
    int log_every = 100;
    bool verbose = false;
};

// One noise-prediction update over the batch. Returns the batch loss;
// a non-finite loss aborts with the offending step index.
double training_step(EditorModel& model, num::Adam& opt, const DiffusionSchedule& sched,
                     const std::vector<const TrainSample*>& batch, Rng& rng, long step_index);

// steps optimizer updates with batches drawn from corpus; per-step losses
// are appended to *losses when given.
void train_phase(EditorModel& model, const DiffusionSchedule& sched,
                 const std::vector<TrainSample>& corpus, int steps, const TrainOptions& opt,
                 Rng& rng, std::vector<double>* losses);

struct TwoPhaseResult {
    std::string phase1_path, phase2_path;
    std::vector<double> losses1, losses2;
};

// Phase 1 trains on the single-edit corpus, phase 2 fine-tunes on the
// multi-edit corpus; each phase gets a fresh optimizer and the rng
// Rng(derive_seed(seed, phase)), and writes <out_dir>/<tag>-phase<k>.ckpt
// with a phase-tagged meta line.
TwoPhaseResult train_two_phase(EditorModel& model, const DiffusionSchedule& sched,
                               const std::vector<TrainSample>& corpus_simple,
                               const std::vector<TrainSample>& corpus_complex, int steps1,
                               int steps2, const TrainOptions& opt, std::uint64_t seed,
                               const std::string& out_dir, const std::string& tag);

// One sampler step's precomputed noise levels. sigma_up and sigma_down
// split the ancestral move so sigma_up^2 + sigma_down^2 = sigma_next^2.
struct SamplerStep {
    double sigma, sigma_next, sigma_up, sigma_down, t;
};

// Log-spaced sigma ladder from sigma(t_total) down to sigma(1), then 0.
std::vector<SamplerStep> sampler_schedule(const DiffusionSchedule& sched, int n_steps);

io::Image euler_ancestral_sample(const EditorModel& model, const DiffusionSchedule& sched,
                                 const io::Image& src, const instr::ComplexInstruction& ins,
                                 int n_steps, std::uint64_t seed);

}  // namespace mcie::editor
