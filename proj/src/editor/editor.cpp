#include "mcie/editor/editor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "mcie/instr/mask.hpp"
#include "mcie/num/checkpoint.hpp"

namespace mcie::editor {

using num::Tensor;

DiffusionSchedule DiffusionSchedule::make(int t_total, double beta_start, double beta_end,
                                          int sampler_steps) {
    if (t_total < 2)
        throw contract_error("schedule needs at least 2 steps, got " + std::to_string(t_total));
    if (sampler_steps < 1) throw contract_error("sampler needs at least 1 step");
    if (!(0.0 < beta_start && beta_start < beta_end && beta_end < 1.0))
        throw contract_error("beta ramp must satisfy 0 < start < end < 1");
    DiffusionSchedule s;
    s.t_total = t_total;
    s.sampler_steps = sampler_steps;
    s.betas.resize(t_total);
    s.alphas.resize(t_total);
    s.alpha_bars.resize(t_total);
    double prod = 1.0;
    for (int i = 0; i < t_total; ++i) {
        s.betas[i] = beta_start + (beta_end - beta_start) * i / (t_total - 1);
        s.alphas[i] = 1.0 - s.betas[i];
        prod *= s.alphas[i];
        s.alpha_bars[i] = prod;
        if (i > 0 && !(s.betas[i] > s.betas[i - 1]))
            throw contract_error("betas must strictly increase");
        if (i > 0 && !(s.alpha_bars[i] < s.alpha_bars[i - 1]))
            throw contract_error("alpha-bars must strictly decrease");
    }
    return s;
}

namespace {
int checked_t(const DiffusionSchedule& s, int t) {
    if (t < 1 || t > s.t_total)
        throw contract_error("timestep " + std::to_string(t) + " outside [1, " +
                             std::to_string(s.t_total) + "]");
    return t;
}
}  // namespace

double DiffusionSchedule::beta(int t) const { return betas[checked_t(*this, t) - 1]; }
double DiffusionSchedule::alpha_bar(int t) const { return alpha_bars[checked_t(*this, t) - 1]; }

double DiffusionSchedule::sigma(int t) const {
    const double ab = alpha_bar(t);
    return std::sqrt((1.0 - ab) / ab);
}

double DiffusionSchedule::sigma_to_t(double s) const {
    if (!(s > 0.0)) throw contract_error("sigma must be positive");
    if (s <= sigma(1)) return 1.0;
    if (s >= sigma(t_total)) return static_cast<double>(t_total);
    int lo = 1, hi = t_total;
    while (hi - lo > 1) {
        int mid = (lo + hi) / 2;
        if (sigma(mid) < s)
            lo = mid;
        else
            hi = mid;
    }
    const double ls = std::log(s), llo = std::log(sigma(lo)), lhi = std::log(sigma(hi));
    return lo + (ls - llo) / (lhi - llo);
}

Tensor LatentCodec::encode(const io::Image& img) const {
    if (img.c != channels)
        throw contract_error("codec expects " + std::to_string(channels) + " channels, image has " +
                             std::to_string(img.c));
    return io::image_to_tokens(img);
}

io::Image LatentCodec::decode(const Tensor& latent, int h, int w) const {
    if (latent.cols() != channels)
        throw contract_error("latent has " + std::to_string(latent.cols()) +
                             " channels, codec expects " + std::to_string(channels));
    std::vector<double> clamped(latent.value());
    for (double& v : clamped) v = std::clamp(v, 0.0, 1.0);
    return io::tokens_to_image(Tensor::from_vector({latent.rows(), latent.cols()}, clamped), h,
                               w);
}

Tensor sinusoidal_embedding(double t, int d) {
    if (d < 2) throw contract_error("embedding width must be >= 2");
    std::vector<double> v(static_cast<std::size_t>(d));
    for (int i = 0; i < d; ++i) {
        const double rate = std::pow(10000.0, -static_cast<double>(i - i % 2) / d);
        v[static_cast<std::size_t>(i)] = (i % 2 == 0) ? std::sin(t * rate) : std::cos(t * rate);
    }
    return Tensor::from_vector({d}, std::move(v));
}

Tensor fuse(const Tensor& fg, const Tensor& bg, double lambda_fuse) {
    if (!(lambda_fuse >= 0.0 && lambda_fuse <= 1.0))
        throw contract_error("fusion weight " + std::to_string(lambda_fuse) +
                             " outside [0, 1]");
    return num::add(num::scale(fg, lambda_fuse), num::scale(bg, 1.0 - lambda_fuse));
}

EditorBlock::EditorBlock(num::ParamRegistry& reg, const std::string& name, int d, Rng& rng)
    : ln_self(reg, name + ".ln_self", d),
      ln_cross(reg, name + ".ln_cross", d),
      ln_mlp(reg, name + ".ln_mlp", d),
      wq(reg, name + ".wq", d, d, rng),
      wk(reg, name + ".wk", d, d, rng, false),
      wv(reg, name + ".wv", d, d, rng),
      wo(reg, name + ".wo", d, d, rng),
      saca_proj(reg, name + ".saca", d, rng),
      bcca_proj(reg, name + ".bcca", d, rng),
      mlp(reg, name + ".mlp", d, 4 * d, rng) {}

Tensor EditorBlock::apply(const Tensor& x, const Conditioning& c, double t, double t_total,
                          const EditorConfig& cfg) const {
    Tensor xs = ln_self(x);
    Tensor h = num::add(x, wo(num::attend(wq(xs), wk(xs), wv(xs))));

    Tensor xc = ln_cross(h);
    const double lambda_fuse = cfg.lambda_fuse;
    const bool want_fg = cfg.force_full_fusion || lambda_fuse > 0.0;
    const bool want_bg = cfg.force_full_fusion || lambda_fuse < 1.0;
    Tensor fused;
    if (want_fg && want_bg) {
        Tensor fg = saca::masked_instruction_attention(saca_proj, xc, c.conditions, c.masks01,
                                                       t, t_total, cfg.mask_mode);
        Tensor bg = bcca::background_attention(bcca_proj, xc, c.source_summary, c.union01,
                                               cfg.mask_mode);
        fused = fuse(fg, bg, lambda_fuse);
    } else if (want_fg) {
        fused = saca::masked_instruction_attention(saca_proj, xc, c.conditions, c.masks01, t,
                                                   t_total, cfg.mask_mode);
    } else {
        fused = bcca::background_attention(bcca_proj, xc, c.source_summary, c.union01,
                                           cfg.mask_mode);
    }
    h = num::add(h, fused);

    return num::add(h, mlp(ln_mlp(h)));
}

EditorModel::EditorModel(const EditorConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    if (!(cfg_.lambda_fuse >= 0.0 && cfg_.lambda_fuse <= 1.0))
        throw contract_error("fusion weight outside [0, 1]");
    if (cfg_.d < 2 || cfg_.n_layers < 1 || cfg_.channels < 1 || cfg_.grid_h < 1 ||
        cfg_.grid_w < 1)
        throw contract_error("editor dimensions must be positive");

    Rng rng(seed);
    text_enc_ = enc::ToyTextEncoder(cfg_.d);
    vis_enc_ = enc::ToyVisualEncoder(cfg_.d, cfg_.channels);
    codec_.channels = cfg_.channels;

    input_proj_ = num::LinearLayer(reg_, "input_proj", 2 * cfg_.channels, cfg_.d, rng);

    saca::SacaConfig scfg;
    scfg.d = cfg_.d;
    scfg.n_freq = cfg_.box_freqs;
    scfg.n_queries = cfg_.box_queries;
    scfg.n_blocks = cfg_.box_blocks;
    box_enc_ = saca::BoxEncoder(reg_, "box", scfg, rng);

    bcca::BccaConfig bcfg;
    bcfg.d = cfg_.d;
    bcfg.n_queries = cfg_.src_queries;
    bcfg.n_blocks = cfg_.src_blocks;
    src_enc_ = bcca::SourceEncoder(reg_, "src", bcfg, vis_enc_.width(), rng);

    for (int i = 0; i < cfg_.n_layers; ++i)
        blocks_.emplace_back(reg_, "block" + std::to_string(i), cfg_.d, rng);

    final_ln_ = num::LayerNormLayer(reg_, "final_ln", cfg_.d);
    head_ = num::LinearLayer(reg_, "head", cfg_.d, cfg_.channels, rng);
}

void EditorModel::set_lambda(double lambda_fuse) {
    if (!(lambda_fuse >= 0.0 && lambda_fuse <= 1.0))
        throw contract_error("fusion weight " + std::to_string(lambda_fuse) +
                             " outside [0, 1]");
    cfg_.lambda_fuse = lambda_fuse;
}

Conditioning EditorModel::condition(const io::Image& src,
                                    const instr::ComplexInstruction& ins) const {
    if (src.h != cfg_.grid_h || src.w != cfg_.grid_w)
        throw contract_error("source image is " + std::to_string(src.h) + "x" +
                             std::to_string(src.w) + ", model grid is " +
                             std::to_string(cfg_.grid_h) + "x" + std::to_string(cfg_.grid_w));
    if (ins.subs.empty()) throw contract_error("instruction has no sub-instructions");

    Conditioning c;
    std::vector<std::string> texts;
    for (const auto& sub : ins.subs) texts.push_back(sub.text);
    auto encoded = enc::encode_instruction_set(text_enc_, texts);

    std::vector<instr::Mask> masks;
    for (std::size_t i = 0; i < ins.subs.size(); ++i) {
        const auto [start, len] = encoded.spans[i];
        Tensor text_rows = num::slice_rows(encoded.tokens, start, len);
        c.conditions.push_back(num::concat_rows(
            {text_rows, box_enc_.spatial_tokens(ins.subs[i].bbox)}));
        masks.push_back(instr::rasterize(ins.subs[i].bbox, cfg_.grid_h, cfg_.grid_w));
        c.masks01.push_back(instr::mask_to_rowvec(masks.back()));
    }
    c.m_union = instr::union_mask(masks);
    c.union01 = instr::mask_to_rowvec(c.m_union);
    c.source_summary = src_enc_.features_from_tokens(vis_enc_.encode(src));
    return c;
}

std::vector<std::vector<double>> EditorModel::attention_heatmaps(
    const io::Image& src, const instr::ComplexInstruction& ins, double t, double t_total) const {
    num::NoGradGuard guard;
    Conditioning c = condition(src, ins);
    Tensor z = codec_.encode(src);
    Tensor x = input_proj_(num::concat_cols(z, z));
    x = num::add_rowvec(x, sinusoidal_embedding(t, cfg_.d));

    const EditorBlock& block = blocks_.front();
    Tensor xs = block.ln_self(x);
    Tensor h = num::add(x, block.wo(num::attend(block.wq(xs), block.wk(xs), block.wv(xs))));
    Tensor xc = block.ln_cross(h);

    std::vector<std::vector<double>> maps;
    maps.reserve(c.conditions.size());
    for (std::size_t i = 0; i < c.conditions.size(); ++i) {
        Tensor rows = saca::attention_rows(block.saca_proj, xc, c.conditions[i], c.masks01[i],
                                           t, t_total, cfg_.mask_mode);
        std::vector<double> map(static_cast<std::size_t>(rows.rows()), 0.0);
        for (int r = 0; r < rows.rows(); ++r) {
            double peak = 0.0;
            for (int col = 0; col < rows.cols(); ++col) peak = std::max(peak, rows.at(r, col));
            map[static_cast<std::size_t>(r)] = peak;
        }
        maps.push_back(std::move(map));
    }
    return maps;
}

Tensor EditorModel::predict_noise(const Tensor& z_t, const Tensor& src_latent,
                                  const Conditioning& c, double t, double t_total) const {
    const int n = cfg_.grid_h * cfg_.grid_w;
    if (z_t.rows() != n || z_t.cols() != cfg_.channels)
        throw contract_error("noisy latent is " + z_t.shape_str() + ", want [" +
                             std::to_string(n) + ", " + std::to_string(cfg_.channels) + "]");
    if (src_latent.rows() != n || src_latent.cols() != cfg_.channels)
        throw contract_error("source latent is " + src_latent.shape_str() + ", want [" +
                             std::to_string(n) + ", " + std::to_string(cfg_.channels) + "]");

    Tensor x = input_proj_(num::concat_cols(z_t, src_latent));
    x = num::add_rowvec(x, sinusoidal_embedding(t, cfg_.d));
    for (const auto& block : blocks_) x = block.apply(x, c, t, t_total, cfg_);
    return head_(final_ln_(x));
}

double training_step(EditorModel& model, num::Adam& opt, const DiffusionSchedule& sched,
                     const std::vector<const TrainSample*>& batch, Rng& rng, long step_index) {
    if (batch.empty()) throw contract_error("training batch is empty");
    const auto& cfg = model.config();
    const LatentCodec& codec = model.codec();

    Tensor total;
    for (const TrainSample* sample : batch) {
        const int t = 1 + rng.uniform_int(sched.t_total);
        Tensor eps = Tensor::randn({cfg.grid_h * cfg.grid_w, cfg.channels}, rng);
        Tensor src_lat = codec.encode(sample->src);
        Tensor tgt_lat = codec.encode(sample->tgt);
        const double ab = sched.alpha_bar(t);
        Tensor z_t = num::add(num::scale(tgt_lat, std::sqrt(ab)),
                              num::scale(eps, std::sqrt(1.0 - ab)));
        Conditioning c = model.condition(sample->src, sample->ins);
        Tensor eps_hat = model.predict_noise(z_t, src_lat, c, t, sched.t_total);
        Tensor sample_loss = num::mean_all(num::square(num::sub(eps_hat, eps)));
        total = total.defined() ? num::add(total, sample_loss) : sample_loss;
    }
    Tensor loss = num::scale(total, 1.0 / static_cast<double>(batch.size()));
    const double loss_value = loss.scalar_value();
    if (!std::isfinite(loss_value))
        throw numeric_error("non-finite training loss at step " + std::to_string(step_index));

    opt.zero_grad();
    num::backward(loss);
    num::clip_grad_norm(model.params(), 1.0);
    opt.step();
    return loss_value;
}

void train_phase(EditorModel& model, const DiffusionSchedule& sched,
                 const std::vector<TrainSample>& corpus, int steps, const TrainOptions& opt,
                 Rng& rng, std::vector<double>* losses) {
    if (steps < 0) throw contract_error("negative step count");
    if (steps == 0) return;
    if (corpus.empty()) throw data_error("training corpus is empty");

    num::Adam adam(model.params(), opt.lr);
    double window_sum = 0.0;
    int window_n = 0;
    for (int step = 1; step <= steps; ++step) {
        std::vector<const TrainSample*> batch;
        for (int b = 0; b < opt.batch_size; ++b)
            batch.push_back(&corpus[rng.uniform_int(static_cast<int>(corpus.size()))]);
        const double loss = training_step(model, adam, sched, batch, rng, step);
        if (losses) losses->push_back(loss);
        window_sum += loss;
        ++window_n;
        if (opt.verbose && (step % opt.log_every == 0 || step == steps)) {
            std::fprintf(stderr, "step %d/%d loss %.6f\n", step, steps, window_sum / window_n);
            window_sum = 0.0;
            window_n = 0;
        }
    }
}

TwoPhaseResult train_two_phase(EditorModel& model, const DiffusionSchedule& sched,
                               const std::vector<TrainSample>& corpus_simple,
                               const std::vector<TrainSample>& corpus_complex, int steps1,
                               int steps2, const TrainOptions& opt, std::uint64_t seed,
                               const std::string& out_dir, const std::string& tag) {
    if (corpus_simple.empty() || corpus_complex.empty())
        throw data_error("two-phase training needs both corpora non-empty");
    std::filesystem::create_directories(out_dir);

    TwoPhaseResult result;
    auto run_phase = [&](int phase, const std::vector<TrainSample>& corpus, int steps,
                         std::vector<double>* losses) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(phase)));
        train_phase(model, sched, corpus, steps, opt, rng, losses);
        const std::string path =
            out_dir + "/" + tag + "-phase" + std::to_string(phase) + ".ckpt";
        const std::string meta = "phase=" + std::to_string(phase) +
                                 " steps=" + std::to_string(steps) +
                                 " lambda=" + std::to_string(model.config().lambda_fuse) +
                                 " mask=" + mask_mode_name(model.config().mask_mode);
        num::save_checkpoint(path, model.params(), meta);
        return path;
    };
    result.phase1_path = run_phase(1, corpus_simple, steps1, &result.losses1);
    result.phase2_path = run_phase(2, corpus_complex, steps2, &result.losses2);
    return result;
}

std::vector<SamplerStep> sampler_schedule(const DiffusionSchedule& sched, int n_steps) {
    if (n_steps < 1) throw contract_error("sampler needs at least 1 step");
    const double sig_max = sched.sigma(sched.t_total);
    const double sig_min = sched.sigma(1);
    std::vector<double> sigmas(static_cast<std::size_t>(n_steps) + 1, 0.0);
    sigmas[0] = sig_max;
    for (int i = 1; i + 1 < n_steps; ++i) {
        const double frac = static_cast<double>(i) / (n_steps - 1);
        sigmas[static_cast<std::size_t>(i)] =
            std::exp(std::log(sig_max) + (std::log(sig_min) - std::log(sig_max)) * frac);
    }
    if (n_steps > 1) sigmas[static_cast<std::size_t>(n_steps) - 1] = sig_min;

    std::vector<SamplerStep> steps;
    for (int i = 0; i < n_steps; ++i) {
        SamplerStep st;
        st.sigma = sigmas[static_cast<std::size_t>(i)];
        st.sigma_next = sigmas[static_cast<std::size_t>(i) + 1];
        if (st.sigma_next > 0.0) {
            const double up2 = st.sigma_next * st.sigma_next *
                               (st.sigma * st.sigma - st.sigma_next * st.sigma_next) /
                               (st.sigma * st.sigma);
            const double down2 = st.sigma_next * st.sigma_next - up2;
            st.sigma_up = std::sqrt(up2);
            st.sigma_down = std::sqrt(down2);
            const double lhs = st.sigma_up * st.sigma_up + st.sigma_down * st.sigma_down;
            const double rhs = st.sigma_next * st.sigma_next;
            if (std::abs(lhs - rhs) > 1e-12 * std::max(1.0, rhs))
                throw numeric_error("ancestral noise split identity violated at step " +
                                    std::to_string(i));
        } else {
            st.sigma_up = 0.0;
            st.sigma_down = 0.0;
        }
        st.t = sched.sigma_to_t(st.sigma);
        steps.push_back(st);
    }
    return steps;
}

io::Image euler_ancestral_sample(const EditorModel& model, const DiffusionSchedule& sched,
                                 const io::Image& src, const instr::ComplexInstruction& ins,
                                 int n_steps, std::uint64_t seed) {
    num::NoGradGuard guard;
    const auto& cfg = model.config();
    const int n = cfg.grid_h * cfg.grid_w;

    Rng rng(seed);
    Tensor src_lat = model.codec().encode(src);
    Conditioning c = model.condition(src, ins);
    const auto steps = sampler_schedule(sched, n_steps);

    Tensor x = num::scale(Tensor::randn({n, cfg.channels}, rng), steps.front().sigma);
    for (const auto& st : steps) {
        Tensor z_in = num::scale(x, 1.0 / std::sqrt(1.0 + st.sigma * st.sigma));
        Tensor eps_hat = model.predict_noise(z_in, src_lat, c, st.t, sched.t_total);
        x = num::add(x, num::scale(eps_hat, st.sigma_down - st.sigma));
        if (st.sigma_up > 0.0)
            x = num::add(x, num::scale(Tensor::randn({n, cfg.channels}, rng), st.sigma_up));
    }
    return model.codec().decode(x, cfg.grid_h, cfg.grid_w);
}

}  // namespace mcie::editor
