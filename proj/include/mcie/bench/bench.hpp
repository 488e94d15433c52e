#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "mcie/editor/editor.hpp"
#include "mcie/enc/encoders.hpp"
#include "mcie/instr/types.hpp"
#include "mcie/io/image.hpp"

namespace mcie::bench {

struct PixelMetrics {
    double l1 = 0, l2 = 0;
};

// l1 = mean |a-b|, l2 = sqrt(mean (a-b)^2) over all cells and channels.
PixelMetrics pixel_metrics(const io::Image& edited, const io::Image& reference);

// Cosine similarity of the two images under one embedder, in [-1, 1].
double embed_similarity(const io::Image& a, const io::Image& b, const enc::Embedder& embedder);

struct JudgeVerdict {
    int ic_raw = 1;  // instruction compliance, 1..10
    int bc_raw = 1;  // background consistency, 1..5
    std::string rationale;
};

class Judge {
public:
    virtual ~Judge() = default;
    virtual JudgeVerdict verdict(const io::Image& src, const io::Image& edited,
                                 const instr::ComplexInstruction& ins,
                                 const instr::Mask& union_mask) const = 0;
};

// Ground-truth scorer for synthetic scenes. A sub-edit is satisfied when,
// inside its box, the edited image sits strictly closer (mean L1) to the
// expected target render than to the source; ic_raw = round(1 + 9 * the
// satisfied fraction). bc_raw = round(1 + 4 * (1 - min(1, 10 * L1 outside
// the union))) against the source.
class ProceduralJudge : public Judge {
public:
    explicit ProceduralJudge(io::Image target);
    JudgeVerdict verdict(const io::Image& src, const io::Image& edited,
                         const instr::ComplexInstruction& ins,
                         const instr::Mask& union_mask) const override;

private:
    io::Image target_;
};

// Runs the judge and enforces the verdict ranges.
JudgeVerdict judge_ic_bc(const io::Image& src, const io::Image& edited,
                         const instr::ComplexInstruction& ins, const instr::Mask& union_mask,
                         const Judge& judge);

struct NormalizedScores {
    double ic = 0, bc = 0;
};

// Min-max over the raw scales: ic = (ic_raw-1)/9, bc = (bc_raw-1)/4.
NormalizedScores normalize(const JudgeVerdict& verdict);

// One evaluated sample's metric row; clip_i and dino_i are the two
// embedder-similarity slots.
struct MetricRecord {
    double l1 = 0, l2 = 0;
    double clip_i = 0, dino_i = 0;
    double ic = 0, bc = 0;
};

struct MethodReport {
    std::string method;
    int n = 0;
    MetricRecord means;
};

// Arithmetic means; validates every record's ranges.
MethodReport aggregate_report(const std::vector<MetricRecord>& records,
                              const std::string& method);

// {method, n, metrics: {clip_i, dino_i, l1, l2, ic, bc}}
nlohmann::json report_to_json(const MethodReport& report);
MethodReport report_from_json(const nlohmann::json& j);

// Aligned comparison table; per column the best value is marked '*' and,
// with three or more methods, the runner-up '+'. l1/l2 rank low-is-best.
std::string render_table(const std::vector<MethodReport>& reports);

struct BenchSample {
    io::Image src, target;
    instr::ComplexInstruction ins;
};

// Synthetic ground-truth benchmark, 1..4 sub-edits per sample.
std::vector<BenchSample> make_benchmark(int n, std::uint64_t seed);

struct EvalOptions {
    int sampler_steps = 8;
    std::uint64_t seed = 0;
    std::string method = "mcie";
    const Judge* judge = nullptr;  // null scores with the per-sample procedural judge
};

MetricRecord evaluate_sample(const editor::EditorModel& model,
                             const editor::DiffusionSchedule& sched, const BenchSample& sample,
                             int sampler_steps, std::uint64_t sample_seed,
                             const Judge* judge = nullptr);

// Edits every benchmark sample with the model and aggregates the rows;
// per-sample seeds derive from opts.seed, so reports are reproducible.
MethodReport evaluate_model(const editor::EditorModel& model,
                            const editor::DiffusionSchedule& sched,
                            const std::vector<BenchSample>& samples, const EvalOptions& opts);

}  // namespace mcie::bench
