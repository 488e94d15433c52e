#include "mcie/bench/bench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "mcie/instr/mask.hpp"
#include "mcie/pipe/datapipe.hpp"

namespace mcie::bench {

namespace {

void require_same_shape(const io::Image& a, const io::Image& b, const char* what) {
    if (a.h != b.h || a.w != b.w || a.c != b.c) {
        throw data_error(std::string(what) + ": image shapes differ");
    }
}

// Mean absolute difference restricted to cells where keep(cell) is true.
template <typename Keep>
double masked_l1(const io::Image& a, const io::Image& b, Keep keep) {
    double sum = 0.0;
    long n = 0;
    for (int r = 0; r < a.h; ++r) {
        for (int c = 0; c < a.w; ++c) {
            if (!keep(r, c)) continue;
            for (int ch = 0; ch < a.c; ++ch) {
                sum += std::abs(a.at(r, c, ch) - b.at(r, c, ch));
                ++n;
            }
        }
    }
    return n ? sum / static_cast<double>(n) : 0.0;
}

}  // namespace

PixelMetrics pixel_metrics(const io::Image& edited, const io::Image& reference) {
    require_same_shape(edited, reference, "pixel_metrics");
    double abs_sum = 0.0, sq_sum = 0.0;
    const std::size_t n = edited.data.size();
    for (std::size_t i = 0; i < n; ++i) {
        double d = edited.data[i] - reference.data[i];
        abs_sum += std::abs(d);
        sq_sum += d * d;
    }
    if (n == 0) throw data_error("pixel_metrics: empty images");
    return {abs_sum / static_cast<double>(n), std::sqrt(sq_sum / static_cast<double>(n))};
}

double embed_similarity(const io::Image& a, const io::Image& b, const enc::Embedder& embedder) {
    require_same_shape(a, b, "embed_similarity");
    num::NoGradGuard guard;
    num::Tensor ea = embedder.embed(a);
    num::Tensor eb = embedder.embed(b);
    if (ea.size() != eb.size()) throw contract_error("embedder output sizes differ");
    double dot = 0.0;
    for (std::size_t i = 0; i < ea.size(); ++i) dot += ea.value()[i] * eb.value()[i];
    return std::clamp(dot, -1.0, 1.0);
}

ProceduralJudge::ProceduralJudge(io::Image target) : target_(std::move(target)) {}

JudgeVerdict ProceduralJudge::verdict(const io::Image& src, const io::Image& edited,
                                      const instr::ComplexInstruction& ins,
                                      const instr::Mask& union_mask) const {
    require_same_shape(src, edited, "procedural judge");
    require_same_shape(src, target_, "procedural judge");
    if (ins.subs.empty()) throw data_error("procedural judge needs at least one sub-edit");
    if (union_mask.h != src.h || union_mask.w != src.w) {
        throw data_error("union mask resolution differs from the images");
    }

    int satisfied = 0;
    for (const instr::SubInstruction& sub : ins.subs) {
        instr::Mask cells = instr::rasterize(sub.bbox, src.h, src.w);
        auto inside = [&](int r, int c) { return cells.at(r, c) != 0; };
        double to_target = masked_l1(edited, target_, inside);
        double to_source = masked_l1(edited, src, inside);
        if (to_target < to_source) ++satisfied;
    }
    double frac = static_cast<double>(satisfied) / static_cast<double>(ins.subs.size());

    double outside_l1 = masked_l1(edited, src,
                                  [&](int r, int c) { return union_mask.at(r, c) == 0; });

    JudgeVerdict v;
    v.ic_raw = static_cast<int>(std::lround(1.0 + 9.0 * frac));
    v.bc_raw = static_cast<int>(std::lround(1.0 + 4.0 * (1.0 - std::min(1.0, 10.0 * outside_l1))));
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%d of %zu sub-edits satisfied; outside-union L1 %.6f",
                  satisfied, ins.subs.size(), outside_l1);
    v.rationale = buf;
    return v;
}

JudgeVerdict judge_ic_bc(const io::Image& src, const io::Image& edited,
                         const instr::ComplexInstruction& ins, const instr::Mask& union_mask,
                         const Judge& judge) {
    JudgeVerdict v = judge.verdict(src, edited, ins, union_mask);
    if (v.ic_raw < 1 || v.ic_raw > 10 || v.bc_raw < 1 || v.bc_raw > 5) {
        throw data_error("judge verdict out of range: ic " + std::to_string(v.ic_raw) + ", bc " +
                         std::to_string(v.bc_raw));
    }
    return v;
}

NormalizedScores normalize(const JudgeVerdict& verdict) {
    if (verdict.ic_raw < 1 || verdict.ic_raw > 10 || verdict.bc_raw < 1 || verdict.bc_raw > 5) {
        throw data_error("cannot normalize an out-of-range verdict");
    }
    return {(verdict.ic_raw - 1) / 9.0, (verdict.bc_raw - 1) / 4.0};
}

namespace {

void validate_record(const MetricRecord& r) {
    bool ok = r.l1 >= 0.0 && r.l2 >= 0.0 && r.clip_i >= -1.0 && r.clip_i <= 1.0 &&
              r.dino_i >= -1.0 && r.dino_i <= 1.0 && r.ic >= 0.0 && r.ic <= 1.0 && r.bc >= 0.0 &&
              r.bc <= 1.0;
    if (!ok) throw data_error("metric record violates its ranges");
}

}  // namespace

MethodReport aggregate_report(const std::vector<MetricRecord>& records,
                              const std::string& method) {
    if (records.empty()) throw data_error("cannot aggregate an empty record set");
    MethodReport report;
    report.method = method;
    report.n = static_cast<int>(records.size());
    for (const MetricRecord& r : records) {
        validate_record(r);
        report.means.l1 += r.l1;
        report.means.l2 += r.l2;
        report.means.clip_i += r.clip_i;
        report.means.dino_i += r.dino_i;
        report.means.ic += r.ic;
        report.means.bc += r.bc;
    }
    double inv = 1.0 / report.n;
    report.means.l1 *= inv;
    report.means.l2 *= inv;
    report.means.clip_i *= inv;
    report.means.dino_i *= inv;
    report.means.ic *= inv;
    report.means.bc *= inv;
    return report;
}

nlohmann::json report_to_json(const MethodReport& report) {
    return {{"method", report.method},
            {"n", report.n},
            {"metrics",
             {{"clip_i", report.means.clip_i},
              {"dino_i", report.means.dino_i},
              {"l1", report.means.l1},
              {"l2", report.means.l2},
              {"ic", report.means.ic},
              {"bc", report.means.bc}}}};
}

MethodReport report_from_json(const nlohmann::json& j) {
    try {
        MethodReport report;
        report.method = j.at("method").get<std::string>();
        report.n = j.at("n").get<int>();
        const nlohmann::json& m = j.at("metrics");
        report.means.clip_i = m.at("clip_i").get<double>();
        report.means.dino_i = m.at("dino_i").get<double>();
        report.means.l1 = m.at("l1").get<double>();
        report.means.l2 = m.at("l2").get<double>();
        report.means.ic = m.at("ic").get<double>();
        report.means.bc = m.at("bc").get<double>();
        if (report.n < 1) throw data_error("report sample count must be positive");
        return report;
    } catch (const nlohmann::json::exception& ex) {
        throw data_error(std::string("malformed report: ") + ex.what());
    }
}

namespace {

struct Column {
    const char* name;
    bool high_is_best;
    double MetricRecord::* field;
};

constexpr Column kColumns[] = {
    {"clip_i", true, &MetricRecord::clip_i}, {"dino_i", true, &MetricRecord::dino_i},
    {"l1", false, &MetricRecord::l1},        {"l2", false, &MetricRecord::l2},
    {"ic", true, &MetricRecord::ic},         {"bc", true, &MetricRecord::bc},
};

std::string format_value(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

}  // namespace

std::string render_table(const std::vector<MethodReport>& reports) {
    if (reports.empty()) throw data_error("cannot render an empty report set");

    // Per column: the best value and, past two methods, the runner-up.
    std::vector<double> best(6), second(6);
    for (std::size_t col = 0; col < 6; ++col) {
        std::vector<double> values;
        for (const MethodReport& r : reports) values.push_back(r.means.*kColumns[col].field);
        std::sort(values.begin(), values.end());
        if (kColumns[col].high_is_best) std::reverse(values.begin(), values.end());
        best[col] = values[0];
        auto distinct = std::find_if(values.begin(), values.end(),
                                     [&](double v) { return v != values[0]; });
        second[col] = distinct != values.end() ? *distinct : values[0];
    }

    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> header = {"method", "n"};
    for (const Column& col : kColumns) header.push_back(col.name);
    rows.push_back(header);
    for (const MethodReport& r : reports) {
        std::vector<std::string> row = {r.method, std::to_string(r.n)};
        for (std::size_t col = 0; col < 6; ++col) {
            double v = r.means.*kColumns[col].field;
            std::string cell = format_value(v);
            if (reports.size() >= 2 && v == best[col]) cell += "*";
            else if (reports.size() >= 3 && v == second[col] && second[col] != best[col])
                cell += "+";
            row.push_back(cell);
        }
        rows.push_back(row);
    }

    std::vector<std::size_t> widths(rows[0].size(), 0);
    for (const auto& row : rows)
        for (std::size_t i = 0; i < row.size(); ++i) widths[i] = std::max(widths[i], row[i].size());
    std::string out;
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            std::string cell = row[i];
            cell.resize(widths[i], ' ');
            out += cell;
            out += i + 1 < row.size() ? "  " : "";
        }
        while (!out.empty() && out.back() == ' ') out.pop_back();
        out += "\n";
    }
    return out;
}

std::vector<BenchSample> make_benchmark(int n, std::uint64_t seed) {
    std::vector<BenchSample> samples;
    samples.reserve(static_cast<std::size_t>(n));
    for (pipe::CorpusSample& cs : pipe::generate_synthetic_corpus(n, 4, seed)) {
        samples.push_back({pipe::render_scene(cs.src), pipe::render_scene(cs.tgt),
                           std::move(cs.ins)});
    }
    return samples;
}

namespace {

const enc::ToyEmbedder& clip_slot() {
    static const enc::ToyEmbedder embedder;
    return embedder;
}

const enc::ToyEmbedder& dino_slot() {
    static const enc::ToyEmbedder embedder(32, 3, 0xd140);
    return embedder;
}

}  // namespace

MetricRecord evaluate_sample(const editor::EditorModel& model,
                             const editor::DiffusionSchedule& sched, const BenchSample& sample,
                             int sampler_steps, std::uint64_t sample_seed, const Judge* judge) {
    io::Image edited =
        editor::euler_ancestral_sample(model, sched, sample.src, sample.ins, sampler_steps,
                                       sample_seed);
    std::vector<instr::Mask> masks;
    masks.reserve(sample.ins.subs.size());
    for (const instr::SubInstruction& sub : sample.ins.subs) {
        masks.push_back(instr::rasterize(sub.bbox, sample.src.h, sample.src.w));
    }
    instr::Mask uni = instr::union_mask(masks);

    ProceduralJudge fallback(sample.target);
    const Judge& scorer = judge ? *judge : static_cast<const Judge&>(fallback);
    NormalizedScores scores = normalize(judge_ic_bc(sample.src, edited, sample.ins, uni, scorer));
    PixelMetrics pm = pixel_metrics(edited, sample.target);

    MetricRecord record;
    record.l1 = pm.l1;
    record.l2 = pm.l2;
    record.clip_i = embed_similarity(edited, sample.target, clip_slot());
    record.dino_i = embed_similarity(edited, sample.target, dino_slot());
    record.ic = scores.ic;
    record.bc = scores.bc;
    return record;
}

MethodReport evaluate_model(const editor::EditorModel& model,
                            const editor::DiffusionSchedule& sched,
                            const std::vector<BenchSample>& samples, const EvalOptions& opts) {
    if (samples.empty()) throw data_error("benchmark is empty");
    std::vector<MetricRecord> records;
    records.reserve(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        records.push_back(evaluate_sample(model, sched, samples[i], opts.sampler_steps,
                                          derive_seed(opts.seed, i), opts.judge));
    }
    return aggregate_report(records, opts.method);
}

}  // namespace mcie::bench
